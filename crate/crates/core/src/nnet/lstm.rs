//! LSTM cell parameters and the single-step reference cell.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gate block order inside the stacked weight matrices.
pub const GATES: [&str; 4] = ["i", "f", "g", "o"];

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Owned parameters of one LSTM layer.
///
/// `w` is the four gate input matrices (each hidden × input) stacked in
/// i, f, g, o order, row-major; `u` likewise for the recurrent matrices and
/// `b` for the biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayerParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w: Vec<f64>,
    pub u: Vec<f64>,
    pub b: Vec<f64>,
}

impl LstmLayerParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        LstmLayerParams {
            input_dim,
            hidden_dim,
            w: vec![0.0; 4 * hidden_dim * input_dim],
            u: vec![0.0; 4 * hidden_dim * hidden_dim],
            b: vec![0.0; 4 * hidden_dim],
        }
    }

    pub fn view(&self) -> LayerRef<'_> {
        LayerRef {
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            w: &self.w,
            u: &self.u,
            b: &self.b,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.view().validate()
    }
}

/// Borrowed view of one layer's parameters.
#[derive(Debug, Clone, Copy)]
pub struct LayerRef<'a> {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w: &'a [f64],
    pub u: &'a [f64],
    pub b: &'a [f64],
}

impl LayerRef<'_> {
    pub fn validate(&self) -> Result<()> {
        let h = self.hidden_dim;
        if self.w.len() != 4 * h * self.input_dim || self.u.len() != 4 * h * h || self.b.len() != 4 * h {
            return Err(Error::Dimension(format!(
                "layer {}→{}: w {} u {} b {}",
                self.input_dim,
                h,
                self.w.len(),
                self.u.len(),
                self.b.len()
            )));
        }
        if self.w.iter().chain(self.u).chain(self.b).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite layer parameter".into()));
        }
        Ok(())
    }
}

/// One step of the standard LSTM cell. Returns `(h, c)`.
pub fn lstm_step(layer: LayerRef<'_>, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let (n_in, n_h) = (layer.input_dim, layer.hidden_dim);
    if x.len() != n_in || h_prev.len() != n_h || c_prev.len() != n_h {
        return Err(Error::Dimension(format!(
            "lstm_step expects x {n_in}, h {n_h}, c {n_h}; got {}, {}, {}",
            x.len(),
            h_prev.len(),
            c_prev.len()
        )));
    }
    if layer.w.len() != 4 * n_h * n_in || layer.u.len() != 4 * n_h * n_h || layer.b.len() != 4 * n_h {
        return Err(Error::Dimension("layer parameter shapes inconsistent".into()));
    }
    let pre = |row: usize| {
        let wx: f64 = layer.w[row * n_in..(row + 1) * n_in]
            .iter()
            .zip(x)
            .map(|(w, v)| w * v)
            .sum();
        let uh: f64 = layer.u[row * n_h..(row + 1) * n_h]
            .iter()
            .zip(h_prev)
            .map(|(u, v)| u * v)
            .sum();
        wx + uh + layer.b[row]
    };
    let mut h = vec![0.0; n_h];
    let mut c = vec![0.0; n_h];
    for j in 0..n_h {
        let i = sigmoid(pre(j));
        let f = sigmoid(pre(n_h + j));
        let g = pre(2 * n_h + j).tanh();
        let o = sigmoid(pre(3 * n_h + j));
        c[j] = f * c_prev[j] + i * g;
        h[j] = o * c[j].tanh();
    }
    Ok((h, c))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_everything_gives_zero_state() {
        let layer = LstmLayerParams::zeros(3, 2);
        let (h, c) = lstm_step(layer.view(), &[0.0; 3], &[0.0; 2], &[0.0; 2]).unwrap();
        assert_eq!(h, vec![0.0, 0.0]);
        assert_eq!(c, vec![0.0, 0.0]);
    }

    #[test]
    fn scalar_cell_hand_evaluation() {
        // w = [wi, wf, wg, wo], u likewise, b likewise.
        let layer = LstmLayerParams {
            input_dim: 1,
            hidden_dim: 1,
            w: vec![0.5, -0.3, 0.8, 0.1],
            u: vec![0.2, 0.4, -0.6, 0.7],
            b: vec![0.1, 1.0, -0.2, 0.0],
        };
        let (x, h0, c0) = (0.7, -0.4, 0.25);
        let s = |z: f64| 1.0 / (1.0 + (-z).exp());
        let i = s(0.5 * x + 0.2 * h0 + 0.1);
        let f = s(-0.3 * x + 0.4 * h0 + 1.0);
        let g = (0.8 * x - 0.6 * h0 - 0.2).tanh();
        let o = s(0.1 * x + 0.7 * h0 + 0.0);
        let c = f * c0 + i * g;
        let h = o * c.tanh();
        let (hh, cc) = lstm_step(layer.view(), &[x], &[h0], &[c0]).unwrap();
        assert!((hh[0] - h).abs() < 1e-12);
        assert!((cc[0] - c).abs() < 1e-12);
    }

    #[test]
    fn saturated_gates_hold_memory() {
        let mut layer = LstmLayerParams::zeros(1, 1);
        layer.b = vec![-10.0, 10.0, 0.0, 0.0];
        let (_, c) = lstm_step(layer.view(), &[0.3], &[0.0], &[0.8]).unwrap();
        assert!((c[0] - 0.8).abs() < 1e-4);
    }

    #[test]
    fn dimension_mismatch() {
        let layer = LstmLayerParams::zeros(2, 2);
        assert!(matches!(
            lstm_step(layer.view(), &[0.0], &[0.0; 2], &[0.0; 2]),
            Err(Error::Dimension(_))
        ));
    }
}
