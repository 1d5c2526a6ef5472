//! Versioned JSON file format for tabular CMDPs.
//!
//! ```json
//! {
//!   "format": "crmopo-cmdp", "version": 1,
//!   "n_states": 2, "n_actions": 2, "m": 2, "p": 1,
//!   "gamma": 0.9, "r_max": 1.0,
//!   "rho": [1.0, 0.0], "limits": [0.5],
//!   "transition": [[[1.0, 0.0], [0.0, 1.0]], [[0.0, 1.0], [1.0, 0.0]]],
//!   "rewards": [[[1.0, 1.0], [0.0, 0.0]], ...]
//! }
//! ```
//!
//! `transition[s][a][s']` and `rewards[i][s][a]`; see `docs/cmdp-format.md`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cmdp::{validate_cmdp, CmdpParts, TabularCmdp};
use crate::error::{Error, Result};

pub const FORMAT_NAME: &str = "crmopo-cmdp";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CmdpFile {
    format: String,
    version: u32,
    n_states: usize,
    n_actions: usize,
    m: usize,
    p: usize,
    gamma: f64,
    r_max: f64,
    rho: Vec<f64>,
    limits: Vec<f64>,
    transition: Vec<Vec<Vec<f64>>>,
    rewards: Vec<Vec<Vec<f64>>>,
}

/// Byte offset of a 1-based (line, column) position in `text`.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

fn check_shape(name: &str, nested: &[Vec<Vec<f64>>], dims: [usize; 3]) -> Result<Vec<f64>> {
    if nested.len() != dims[0] {
        return Err(Error::Schema(format!(
            "field {name} has {} entries, expected {}",
            nested.len(),
            dims[0]
        )));
    }
    let mut flat = Vec::with_capacity(dims.iter().product());
    for (i, outer) in nested.iter().enumerate() {
        if outer.len() != dims[1] {
            return Err(Error::Schema(format!(
                "field {name}[{i}] has {} entries, expected {}",
                outer.len(),
                dims[1]
            )));
        }
        for (j, inner) in outer.iter().enumerate() {
            if inner.len() != dims[2] {
                return Err(Error::Schema(format!(
                    "field {name}[{i}][{j}] has {} entries, expected {}",
                    inner.len(),
                    dims[2]
                )));
            }
            flat.extend_from_slice(inner);
        }
    }
    Ok(flat)
}

/// Parses and validates a CMDP document.
pub fn parse_cmdp(text: &str) -> Result<TabularCmdp> {
    let file: CmdpFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        offset: if e.is_eof() {
            text.len()
        } else {
            byte_offset(text, e.line(), e.column())
        },
        message: e.to_string(),
    })?;
    if file.format != FORMAT_NAME {
        return Err(Error::Schema(format!(
            "field format is {:?}, expected {FORMAT_NAME:?}",
            file.format
        )));
    }
    if file.version != FORMAT_VERSION {
        return Err(Error::Schema(format!(
            "unsupported version {} (this build reads version {FORMAT_VERSION})",
            file.version
        )));
    }
    let (ns, na) = (file.n_states, file.n_actions);
    let transition = check_shape("transition", &file.transition, [ns, na, ns])?;
    let rewards = check_shape("rewards", &file.rewards, [file.m + file.p, ns, na])?;
    let parts = CmdpParts {
        n_states: ns,
        n_actions: na,
        n_objectives: file.m,
        n_constraints: file.p,
        gamma: file.gamma,
        r_max: file.r_max,
        rho: file.rho,
        limits: file.limits,
        transition,
        rewards,
    };
    let report = validate_cmdp(&parts);
    if !report.is_valid() {
        return Err(Error::InvalidModel(report.to_string()));
    }
    TabularCmdp::new(parts)
}

/// Reads a CMDP file from disk.
pub fn load_cmdp(path: impl AsRef<Path>) -> Result<TabularCmdp> {
    parse_cmdp(&fs::read_to_string(path)?)
}

/// Serializes a model; floats are written in shortest round-trip form.
pub fn to_json(model: &TabularCmdp) -> String {
    let parts = model.parts();
    let (ns, na) = (parts.n_states, parts.n_actions);
    let transition = parts
        .transition
        .chunks(na * ns)
        .map(|by_state| by_state.chunks(ns).map(<[f64]>::to_vec).collect())
        .collect();
    let rewards = parts
        .rewards
        .chunks(ns * na)
        .map(|by_channel| by_channel.chunks(na).map(<[f64]>::to_vec).collect())
        .collect();
    let file = CmdpFile {
        format: FORMAT_NAME.to_string(),
        version: FORMAT_VERSION,
        n_states: ns,
        n_actions: na,
        m: parts.n_objectives,
        p: parts.n_constraints,
        gamma: parts.gamma,
        r_max: parts.r_max,
        rho: parts.rho.clone(),
        limits: parts.limits.clone(),
        transition,
        rewards,
    };
    serde_json::to_string_pretty(&file).expect("CMDP serialization cannot fail")
}

pub fn save_cmdp(model: &TabularCmdp, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_json(model) + "\n")?;
    Ok(())
}
