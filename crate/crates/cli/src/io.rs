//! Reading inputs and writing reports.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::Value;

use crate::args::InputSource;

/// A named input vector.
#[derive(Debug, Clone)]
pub struct Input {
    pub name: String,
    pub x: Vec<f64>,
}

pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v: Vec<f64> = serde_json::from_str(&text).with_context(|| format!("{} is not a JSON number array", path.display()))?;
    if v.iter().any(|x| !x.is_finite()) {
        bail!("{} has non-finite entries", path.display());
    }
    Ok(v)
}

fn json_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json") && p.file_name().is_some_and(|n| n != "labels.json"))
        .collect();
    files.sort();
    Ok(files)
}

pub fn load_inputs(src: &InputSource) -> Result<Vec<Input>> {
    let mut out = Vec::new();
    if let Some(p) = &src.x0 {
        out.push(Input { name: display_name(p), x: read_vector(p)? });
    } else if let Some(dir) = &src.inputs {
        for p in json_files(dir)? {
            out.push(Input { name: display_name(&p), x: read_vector(&p)? });
        }
        if out.is_empty() {
            bail!("no JSON inputs in {}", dir.display());
        }
    } else {
        bail!("either --x0 or --inputs is required");
    }
    if let Some(n) = src.limit {
        out.truncate(n);
    }
    Ok(out)
}

fn display_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| p.display().to_string())
}

/// Pretty JSON with a trailing newline.
pub fn to_report_string<T: Serialize>(report: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

/// Writes to `out`, or to stdout when absent.
pub fn emit<T: Serialize>(report: &T, out: Option<&Path>) -> Result<()> {
    let s = to_report_string(report)?;
    match out {
        Some(p) => write_text(p, &s),
        None => {
            print!("{s}");
            Ok(())
        }
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Removes every object key ending in `_time_s`, recursively.
pub fn strip_timing(v: &mut Value) {
    match v {
        Value::Object(map) => {
            map.retain(|k, _| !k.ends_with("_time_s"));
            map.values_mut().for_each(strip_timing);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}
