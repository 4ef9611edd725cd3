use crate::numerics::Tensor;

use super::EncoderError;

/// cos/sin of `m * theta^(-2k/d)` for every position `m` and pair `k`.
pub(crate) struct RopeTable {
    half: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl RopeTable {
    pub fn new(positions: impl IntoIterator<Item = usize>, head_dim: usize, theta: f64) -> Self {
        let half = head_dim / 2;
        let inv_freq: Vec<f64> = (0..half).map(|k| theta.powf(-(2.0 * k as f64) / head_dim as f64)).collect();
        let mut cos = Vec::new();
        let mut sin = Vec::new();
        for m in positions {
            for f in &inv_freq {
                let angle = m as f64 * f;
                cos.push(angle.cos());
                sin.push(angle.sin());
            }
        }
        Self { half, cos, sin }
    }

    /// Rotates the pairs `(2k, 2k+1)` of `x` for table row `pos`; `inverse`
    /// applies the transpose rotation.
    #[inline]
    pub fn rotate(&self, x: &mut [f64], pos: usize, inverse: bool) {
        let base = pos * self.half;
        for k in 0..self.half {
            let (c, s) = (self.cos[base + k], self.sin[base + k]);
            let s = if inverse { -s } else { s };
            let (a, b) = (x[2 * k], x[2 * k + 1]);
            x[2 * k] = a * c - b * s;
            x[2 * k + 1] = a * s + b * c;
        }
    }
}

/// Applies rotary position embedding to per-head vectors `x: [n, head_dim]`,
/// row `i` sitting at `positions[i]`.
pub fn rope_apply(x: &Tensor, positions: &[usize], theta: f64) -> Result<Tensor, EncoderError> {
    if x.rank() != 2 || x.shape()[0] != positions.len() {
        return Err(EncoderError::InvalidInput(format!(
            "rope_apply: x {:?} with {} positions",
            x.shape(),
            positions.len()
        )));
    }
    let d = x.shape()[1];
    if !d.is_multiple_of(2) {
        return Err(EncoderError::InvalidConfig(format!("head_dim {d} must be even for rotary embeddings")));
    }
    let table = RopeTable::new(positions.iter().copied(), d, theta);
    let mut out = x.clone();
    for i in 0..positions.len() {
        table.rotate(out.row_mut(i), i, false);
    }
    Ok(out)
}
