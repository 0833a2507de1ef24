//! Portable plain-text weights file for linear-threshold decoders.
//!
//! ```text
//! # comment lines start with '#'
//! <d> <L>
//! <d rows of L floats: W in latent-major (d × L) order>
//! <L floats: b>
//! ```
//!
//! Tokens are whitespace separated, so line breaks inside the matrix are not
//! significant. The decoder computes `z·W + b`, i.e. the file stores the
//! transpose of the in-memory `L × d` weight matrix.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::builtin::LinearThreshold;
use crate::error::{Error, Result};

pub fn parse_weights(text: &str, counts: bool) -> Result<LinearThreshold> {
    let mut tokens = text.lines().map(|l| l.split('#').next().unwrap_or("")).flat_map(str::split_whitespace);
    let mut next_dim = |what: &str| -> Result<usize> {
        tokens
            .next()
            .ok_or_else(|| Error::Config(format!("weights file: missing {what}")))?
            .parse::<usize>()
            .map_err(|e| Error::Config(format!("weights file: bad {what}: {e}")))
    };
    let d = next_dim("latent dimension")?;
    let l = next_dim("fingerprint length")?;
    if d == 0 || l == 0 {
        return Err(Error::Config("weights file: dimensions must be positive".into()));
    }
    let values = tokens
        .map(|t| t.parse::<f64>().map_err(|e| Error::Config(format!("weights file: bad value {t:?}: {e}"))))
        .collect::<Result<Vec<f64>>>()?;
    if values.len() != d * l + l {
        return Err(Error::Config(format!(
            "weights file: expected {} values for d={d}, L={l}, found {}",
            d * l + l,
            values.len()
        )));
    }
    // values[i * l + j] = W_file[i][j] = weights[j][i]
    let weights = DMatrix::from_fn(l, d, |j, i| values[i * l + j]);
    let bias = DVector::from_column_slice(&values[d * l..]);
    LinearThreshold::new(weights, bias, counts)
}

pub fn load_weights(path: &Path, counts: bool) -> Result<LinearThreshold> {
    let text = std::fs::read_to_string(path)?;
    parse_weights(&text, counts)
}

/// Serializes with shortest round-trip float formatting.
pub fn format_weights(dec: &LinearThreshold) -> String {
    let d = dec.latent_dim();
    let l = dec.fingerprint_len();
    let mut out = format!("{d} {l}\n");
    for i in 0..d {
        let row: Vec<String> = (0..l).map(|j| format!("{:?}", dec.weights[(j, i)])).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    let bias: Vec<String> = dec.bias.iter().map(|b| format!("{b:?}")).collect();
    let _ = writeln!(out, "{}", bias.join(" "));
    out
}
