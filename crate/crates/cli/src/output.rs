use std::fs;
use std::path::{Path, PathBuf};

use cascade_core::CascadeError;
use serde::de::DeserializeOwned;
use serde::Serialize;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_RESOURCE: u8 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError { code: EXIT_CONFIG, message: message.into() }
    }
}

impl From<CascadeError> for CliError {
    fn from(e: CascadeError) -> Self {
        let code = match e {
            CascadeError::ResourceLimit(_) => EXIT_RESOURCE,
            _ => EXIT_CONFIG,
        };
        CliError { code, message: e.to_string() }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn read_file(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

/// Replaces flag values with the contents of `--config` when one is given.
pub fn resolve<T: DeserializeOwned>(args: T, config: &Option<PathBuf>) -> CliResult<T> {
    match config {
        None => Ok(args),
        Some(path) => serde_json::from_str(&read_file(path)?)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display()))),
    }
}

pub fn require<T: Clone>(value: &Option<T>, flag: &str) -> CliResult<T> {
    value.clone().ok_or_else(|| CliError::config(format!("missing --{flag}")))
}

pub fn write_file(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::config(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

pub fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

/// JSON document to `out`, or stdout.
pub fn emit_json<T: Serialize>(value: &T, out: &Option<PathBuf>) -> CliResult<()> {
    let text = pretty(value);
    match out {
        Some(path) => write_file(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// CSV to `out` with the resolved config beside it in `<out>.config.json`;
/// without `out`, CSV goes to stdout and the config to stderr.
pub fn emit_csv<C: Serialize>(csv: &str, config: &C, out: &Option<PathBuf>) -> CliResult<()> {
    match out {
        Some(path) => {
            write_file(path, csv)?;
            let mut side = path.clone().into_os_string();
            side.push(".config.json");
            write_file(Path::new(&side), &pretty(config))
        }
        None => {
            print!("{csv}");
            eprint!("{}", pretty(config));
            Ok(())
        }
    }
}
