//! Content-addressed output files.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nextaction::eval::{EvalReport, PredictionStream};
use nextaction::util::sha256_hex;

/// Writes `bytes` unless an identical file is already there. A different
/// file under the same name is an error rather than a silent overwrite.
pub fn write_once(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Ok(existing) = std::fs::read(path) {
        if existing == bytes {
            return Ok(());
        }
        bail!("{} exists with different contents", path.display());
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// `<out_dir>/<prefix>-<first 12 hex digits of sha256(content)>`.
pub fn stem(out_dir: &Path, prefix: &str, content: &[u8]) -> PathBuf {
    out_dir.join(format!("{prefix}-{}", &sha256_hex(content)[..12]))
}

pub fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Report as `.json` and `.csv`, plus the prediction stream as `.pred`.
/// Returns the shared stem.
pub fn write_report(
    out_dir: &Path,
    prefix: &str,
    report: &EvalReport,
    predictions: Option<&PredictionStream>,
) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let json = report.to_json();
    let stem = stem(out_dir, prefix, json.as_bytes());
    write_once(&with_suffix(&stem, ".json"), json.as_bytes())?;
    write_once(&with_suffix(&stem, ".csv"), report.to_csv().as_bytes())?;
    if let Some(p) = predictions {
        write_once(&with_suffix(&stem, ".pred"), p.to_text().as_bytes())?;
    }
    Ok(stem)
}
