//! Decimal text encoding of floats and matrices for artifacts.

use copert_core::Matrix;
use serde::{Deserialize, Serialize};

/// 17 significant digits: enough to round-trip every `f64`.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn parse_f64(s: &str) -> Result<f64, String> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| format!("'{s}' is not a number: {e}"))
}

/// A matrix as its shape plus rows of decimal strings.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixText {
    pub shape: [usize; 2],
    pub rows: Vec<Vec<String>>,
}

impl MatrixText {
    pub fn encode(m: &Matrix) -> Self {
        Self {
            shape: [m.rows(), m.cols()],
            rows: (0..m.rows())
                .map(|i| m.row(i).iter().map(|v| fmt17(*v)).collect())
                .collect(),
        }
    }

    pub fn decode(&self) -> Result<Matrix, String> {
        let [r, c] = self.shape;
        if self.rows.len() != r || self.rows.iter().any(|row| row.len() != c) {
            return Err(format!("matrix rows do not match shape {r}x{c}"));
        }
        let mut data = Vec::with_capacity(r * c);
        for row in &self.rows {
            for s in row {
                data.push(parse_f64(s)?);
            }
        }
        Matrix::from_vec(r, c, data).map_err(|e| e.to_string())
    }
}

pub fn encode_vec(v: &[f64]) -> Vec<String> {
    v.iter().map(|x| fmt17(*x)).collect()
}

pub fn decode_vec(v: &[String]) -> Result<Vec<f64>, String> {
    v.iter().map(|s| parse_f64(s)).collect()
}
