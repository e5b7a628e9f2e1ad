//! Plain-text policy checkpoints.
//!
//! ```text
//! imap-policy-checkpoint
//! format_version 1
//! head_kind gaussian
//! input_dim 2
//! output_dim 2
//! hidden 64 64
//! segment trunk.0.weight 64 2
//! <one row of space-separated values per matrix row>
//! ...
//! ```
//!
//! Values use Rust's shortest round-trip formatting, so a save/load cycle is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use super::{Architecture, HeadKind, NnError, PolicyHandle};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "imap-policy-checkpoint";

impl PolicyHandle {
    pub fn to_checkpoint_string(&self) -> String {
        let a = self.arch();
        let mut s = String::new();
        let head = match a.head {
            HeadKind::Gaussian => "gaussian",
            HeadKind::Categorical => "categorical",
        };
        let _ = writeln!(s, "{MAGIC}\nformat_version {CHECKPOINT_FORMAT_VERSION}\nhead_kind {head}");
        let _ = writeln!(s, "input_dim {}\noutput_dim {}\nhidden {} {}", a.input_dim, a.output_dim, a.hidden[0], a.hidden[1]);
        let mut off = 0;
        for (name, rows, cols) in a.segments() {
            let _ = writeln!(s, "segment {name} {rows} {cols}");
            for r in 0..rows {
                let row: Vec<String> = self.params()[off + r * cols..off + (r + 1) * cols].iter().map(|v| format!("{v:e}")).collect();
                s.push_str(&row.join(" "));
                s.push('\n');
            }
            off += rows * cols;
        }
        s
    }

    pub fn from_checkpoint_str(text: &str) -> Result<Self, NnError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut next = |what: &str| -> Result<(usize, &str), NnError> {
            lines.next().ok_or_else(|| NnError::Checkpoint { line: text.lines().count() + 1, msg: format!("missing {what}") })
        };
        let (ln, magic) = next("header")?;
        if magic != MAGIC {
            return Err(NnError::Checkpoint { line: ln, msg: format!("expected `{MAGIC}`") });
        }
        let version: u32 = keyed(next("format_version")?, "format_version")?;
        if version != CHECKPOINT_FORMAT_VERSION {
            return Err(NnError::Checkpoint { line: 2, msg: format!("unsupported format version {version}") });
        }
        let (ln, head_line) = next("head_kind")?;
        let head = match head_line.strip_prefix("head_kind ") {
            Some("gaussian") => HeadKind::Gaussian,
            Some("categorical") => HeadKind::Categorical,
            _ => return Err(NnError::Checkpoint { line: ln, msg: "expected `head_kind gaussian|categorical`".into() }),
        };
        let input_dim: usize = keyed(next("input_dim")?, "input_dim")?;
        let output_dim: usize = keyed(next("output_dim")?, "output_dim")?;
        let (ln, hidden_line) = next("hidden")?;
        let hidden: Vec<usize> = hidden_line
            .strip_prefix("hidden ")
            .map(|r| r.split_whitespace().map(str::parse).collect::<Result<_, _>>())
            .and_then(Result::ok)
            .filter(|h: &Vec<usize>| h.len() == 2)
            .ok_or_else(|| NnError::Checkpoint { line: ln, msg: "expected `hidden <h1> <h2>`".into() })?;
        let arch = Architecture { input_dim, hidden: [hidden[0], hidden[1]], output_dim, head };
        let mut params = Vec::with_capacity(arch.num_params());
        for (name, rows, cols) in arch.segments() {
            let (ln, seg) = next("segment header")?;
            let expected = format!("segment {name} {rows} {cols}");
            if seg != expected {
                return Err(NnError::Checkpoint { line: ln, msg: format!("expected `{expected}`, found `{seg}`") });
            }
            for _ in 0..rows {
                let (ln, row) = next("segment row")?;
                let vals: Vec<f64> = row
                    .split_whitespace()
                    .map(|t| t.parse::<f64>().ok().filter(|v| v.is_finite()))
                    .collect::<Option<_>>()
                    .ok_or_else(|| NnError::Checkpoint { line: ln, msg: "non-numeric or non-finite value".into() })?;
                if vals.len() != cols {
                    return Err(NnError::Checkpoint { line: ln, msg: format!("expected {cols} values, found {}", vals.len()) });
                }
                params.extend(vals);
            }
        }
        if let Some((ln, extra)) = lines.find(|(_, l)| !l.is_empty()) {
            return Err(NnError::Checkpoint { line: ln, msg: format!("trailing content `{extra}`") });
        }
        PolicyHandle::from_params(arch, params)
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        crate::io::write_atomic(path, self.to_checkpoint_string().as_bytes())
            .map_err(|e| NnError::Io { path: e.path, msg: e.msg })
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| NnError::Io { path: path.display().to_string(), msg: e.to_string() })?;
        Self::from_checkpoint_str(&text)
    }
}

fn keyed<T: std::str::FromStr>((ln, line): (usize, &str), key: &str) -> Result<T, NnError> {
    line.strip_prefix(key)
        .and_then(|r| r.strip_prefix(' '))
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| NnError::Checkpoint { line: ln, msg: format!("expected `{key} <value>`") })
}
