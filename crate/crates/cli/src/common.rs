use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use camx::cam::CamMethod;
use camx::{Error, Network};

/// Process exit codes.
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_IDENTITY: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    /// Flags that name something the model or corpus does not have.
    Usage(String),
    /// Files that fail to load or validate.
    Validation(String),
    /// Decomposition residual above tolerance.
    Identity(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Identity(_) => EXIT_IDENTITY,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Validation(m) => write!(f, "validation failed: {m}"),
            CliError::Identity(m) => write!(f, "identity check failed: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::UnknownLayerName(_)
            | Error::LayerOutOfRange { .. }
            | Error::NotSpatial { .. }
            | Error::ChannelOutOfRange { .. }
            | Error::ClassOutOfRange { .. }
            | Error::UnknownMethod(_)
            | Error::IncompatibleMethod { .. } => CliError::Usage(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Validation(format!("csv: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Validation(format!("json: {e}"))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// `auto` (top-1), a class index, or a class label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ClassArg {
    Auto,
    Named(String),
}

impl FromStr for ClassArg {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(if s == "auto" {
            ClassArg::Auto
        } else {
            ClassArg::Named(s.to_string())
        })
    }
}

impl ClassArg {
    pub fn resolve(&self, net: &Network, top: usize) -> CliResult<usize> {
        match self {
            ClassArg::Auto => Ok(top),
            ClassArg::Named(s) => resolve_class(net, s),
        }
    }
}

pub fn resolve_class(net: &Network, key: &str) -> CliResult<usize> {
    if let Some(i) = net.labels().and_then(|ls| ls.iter().position(|l| l == key)) {
        return Ok(i);
    }
    let c: usize = key
        .parse()
        .map_err(|_| CliError::Usage(format!("unknown class {key:?}")))?;
    net.check_class(c)?;
    Ok(c)
}

/// Target layer from `--layer`, defaulting to the last rectified spatial layer.
pub fn resolve_layer(net: &Network, key: Option<&str>) -> CliResult<usize> {
    let l = match key {
        Some(k) => net.resolve_layer(k)?,
        None => net
            .last_spatial_layer()
            .ok_or_else(|| CliError::Usage("model has no rectified spatial layer; pass --layer".into()))?,
    };
    net.check_spatial(l)?;
    Ok(l)
}

pub fn class_name(net: &Network, c: usize) -> String {
    net.labels()
        .and_then(|ls| ls.get(c))
        .map_or_else(|| c.to_string(), |l| format!("{c} ({l})"))
}

pub fn parse_method(s: &str) -> Result<CamMethod, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "ppm" | "pgm" | "pnm"))
}

/// Image files directly inside `dir`, sorted by file name.
pub fn list_corpus(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::Validation(format!("{}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image(p))
        .collect();
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    if files.is_empty() {
        return Err(CliError::Validation(format!(
            "empty corpus: no images in {}",
            dir.display()
        )));
    }
    Ok(files)
}

pub fn file_name(path: &Path) -> String {
    path.file_name()
        .map_or_else(String::new, |n| n.to_string_lossy().into_owned())
}

/// Runs `f` on a pool capped by `CAMX_THREADS` when it is set.
pub fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> CliResult<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("CAMX_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Usage(format!("CAMX_THREADS must be a positive integer, got {v:?}")))?;
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Validation(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

pub fn write_csv<T: serde::Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.6}"))
}
