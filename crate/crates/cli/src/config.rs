//! Optional TOML run configuration. Keys mirror the long flags (with `_` for
//! `-`); a flag given on the command line wins over the file.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::Failure;

/// `lambda = "cv"` and `lambda = 0.05` are both accepted.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum Setting {
    Number(f64),
    Text(String),
}

impl Setting {
    fn into_string(self) -> String {
        match self {
            Setting::Number(v) => v.to_string(),
            Setting::Text(s) => s,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Raw {
    input: Option<PathBuf>,
    out: Option<PathBuf>,
    lambda: Option<Setting>,
    variance: Option<String>,
    level: Option<f64>,
    seed: Option<u64>,
    threads: Option<usize>,
    folds: Option<usize>,
    nodewise_lambda: Option<Setting>,
    scenario: Option<PathBuf>,
    reps: Option<usize>,
    n: Option<usize>,
    replicates: Option<PathBuf>,
}

/// Values read from `--config`, with relative paths resolved against the
/// directory of the file.
#[derive(Debug, Default)]
pub struct FileConfig {
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub lambda: Option<String>,
    pub variance: Option<String>,
    pub level: Option<f64>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub folds: Option<usize>,
    pub nodewise_lambda: Option<String>,
    pub scenario: Option<PathBuf>,
    pub reps: Option<usize>,
    pub n: Option<usize>,
    pub replicates: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::io(format!("cannot read config {}: {e}", path.display())))?;
        let raw: Raw = toml::from_str(&text)
            .map_err(|e| Failure::usage(format!("invalid config {}: {}", path.display(), e.message())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: Option<PathBuf>| p.map(|p| if p.is_absolute() { p } else { base.join(p) });
        Ok(Self {
            input: resolve(raw.input),
            out: resolve(raw.out),
            lambda: raw.lambda.map(Setting::into_string),
            variance: raw.variance,
            level: raw.level,
            seed: raw.seed,
            threads: raw.threads,
            folds: raw.folds,
            nodewise_lambda: raw.nodewise_lambda.map(Setting::into_string),
            scenario: resolve(raw.scenario),
            reps: raw.reps,
            n: raw.n,
            replicates: resolve(raw.replicates),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_and_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "input = \"data.csv\"\nlambda = 0.25\nnodewise_lambda = \"cv\"\nlevel = 0.9\n").unwrap();
        let cfg = FileConfig::load(&path).unwrap();
        assert_eq!(cfg.input.unwrap(), dir.path().join("data.csv"));
        assert_eq!(cfg.lambda.as_deref(), Some("0.25"));
        assert_eq!(cfg.nodewise_lambda.as_deref(), Some("cv"));
        assert_eq!(cfg.level, Some(0.9));
    }

    #[test]
    fn unknown_key_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "lamda = 0.1\n").unwrap();
        assert_eq!(FileConfig::load(&path).unwrap_err().code, crate::EXIT_USAGE);
    }
}
