//! Run-directory outputs: metrics CSV, JSON report, adversary checkpoint and the resolved
//! config. Every file is written to a temporary sibling and renamed into place.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use crate::config::ExperimentConfig;
pub use crate::harness::IterationRecord as MetricsRow;
use crate::nn::PolicyHandle;

pub const METRICS_FILE: &str = "metrics.csv";
pub const REPORT_FILE: &str = "report.json";
pub const ADVERSARY_FILE: &str = "adversary.ckpt";
pub const VICTIM_FILE: &str = "victim.ckpt";
pub const CONFIG_FILE: &str = "config.toml";

pub const METRICS_HEADER: &str =
    "iteration,samples,mean_ext_return,mean_int_return,asr_eval,tau,lagrange_multiplier,entropy_proxy,wall_seconds";

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{path}: {msg}")]
pub struct IoError {
    pub path: String,
    pub msg: String,
}

impl IoError {
    fn at(path: &Path, e: impl std::fmt::Display) -> Self {
        Self { path: path.display().to_string(), msg: e.to_string() }
    }
}

/// Writes `bytes` to a temporary file next to `path`, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let name = path.file_name().ok_or_else(|| IoError::at(path, "not a file path"))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, bytes).map_err(|e| IoError::at(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        IoError::at(path, e)
    })
}

/// Formats `x` with 9 significant digits, `%g`-style: plain notation for exponents in
/// `[-5, 9)`, scientific otherwise, trailing zeros dropped.
pub fn sig9(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa.to_string()), exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// `x` rounded to 9 significant digits.
pub fn round9(x: f64) -> f64 {
    if x.is_finite() {
        sig9(x).parse().expect("sig9 output parses")
    } else {
        x
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(sig9).unwrap_or_default()
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::with_capacity(64 * (rows.len() + 1));
    s.push_str(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.iteration,
            r.samples,
            sig9(r.mean_ext_return),
            sig9(r.mean_int_return),
            opt(r.asr_eval),
            sig9(r.tau),
            sig9(r.lagrange_multiplier),
            sig9(r.entropy_proxy),
            opt(r.wall_seconds),
        );
    }
    s
}

fn round_floats(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            *v = serde_json::Number::from_f64(round9(n.as_f64().expect("f64"))).map_or(Value::Null, Value::Number);
        }
        Value::Array(items) => items.iter_mut().for_each(round_floats),
        Value::Object(map) => map.values_mut().for_each(round_floats),
        _ => {}
    }
}

/// Pretty JSON with every float rounded to 9 significant digits; non-finite values
/// become `null`.
pub fn to_json(value: &impl Serialize) -> String {
    let mut v = serde_json::to_value(value).expect("report serialises");
    round_floats(&mut v);
    let mut s = serde_json::to_string_pretty(&v).expect("json value serialises");
    s.push('\n');
    s
}

/// What a run directory receives.
pub struct RunOutputs<'a, R: Serialize> {
    pub report: &'a R,
    pub metrics: &'a [MetricsRow],
    pub config: &'a ExperimentConfig,
    /// Checkpoint file name and the policy to store in it.
    pub policy: Option<(&'a str, &'a PolicyHandle)>,
}

/// Writes metrics, report, checkpoint and resolved config into `dir`, creating it if
/// needed. Returns the written paths in that order.
pub fn write_outputs<R: Serialize>(dir: &Path, out: &RunOutputs<'_, R>) -> Result<Vec<PathBuf>, IoError> {
    std::fs::create_dir_all(dir).map_err(|e| IoError::at(dir, e))?;
    let mut paths = Vec::new();
    let mut put = |name: &str, bytes: &[u8]| -> Result<(), IoError> {
        let p = dir.join(name);
        write_atomic(&p, bytes)?;
        paths.push(p);
        Ok(())
    };
    put(METRICS_FILE, metrics_csv(out.metrics).as_bytes())?;
    put(REPORT_FILE, to_json(out.report).as_bytes())?;
    if let Some((name, policy)) = out.policy {
        put(name, policy.to_checkpoint_string().as_bytes())?;
    }
    put(CONFIG_FILE, out.config.to_toml().as_bytes())?;
    Ok(paths)
}
