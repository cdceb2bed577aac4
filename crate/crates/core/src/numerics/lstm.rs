//! Canonical four-gate LSTM cell recorded on a [`Graph`].

use rand::Rng;

use super::graph::{Graph, ParamId, ParamStore, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Weights of one LSTM cell.
///
/// `weight` is `[4H, input + H]` acting on `[x ; h_prev]`, `bias` is `[4H]`.
/// Gate blocks are stacked in the order input, forget, candidate, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmParams {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl LstmParams {
    /// Registers a cell in `store` with fan-in scaled uniform weights and forget bias `forget_bias`.
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        forget_bias: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = input_dim + hidden_dim;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight: Vec<f64> = (0..4 * hidden_dim * fan_in)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        let mut bias = vec![0.0; 4 * hidden_dim];
        bias[hidden_dim..2 * hidden_dim].fill(forget_bias);
        let weight = store.add(
            format!("{prefix}.weight"),
            Tensor::matrix(4 * hidden_dim, fan_in, weight).expect("consistent shape"),
        );
        let bias = store.add(format!("{prefix}.bias"), Tensor::vector(bias));
        Self {
            weight,
            bias,
            input_dim,
            hidden_dim,
        }
    }

    pub fn validate(&self, store: &ParamStore) -> Result<()> {
        let expected = [4 * self.hidden_dim, self.input_dim + self.hidden_dim];
        let w = store.get(self.weight).shape();
        if w != expected {
            return Err(Error::shape("lstm weight", w, &expected));
        }
        let b = store.get(self.bias).shape();
        if b != [4 * self.hidden_dim] {
            return Err(Error::shape("lstm bias", b, &[4 * self.hidden_dim]));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub hidden: Var,
    pub cell: Var,
}

impl LstmState {
    pub fn zeros(g: &mut Graph<'_>, dim: usize) -> Self {
        let hidden = g.input(Tensor::zeros(&[dim]));
        let cell = g.input(Tensor::zeros(&[dim]));
        Self { hidden, cell }
    }

    pub fn dim(&self, g: &Graph<'_>) -> usize {
        g.value(self.hidden).len()
    }
}

pub fn lstm_cell(g: &mut Graph<'_>, x: Var, prev: &LstmState, p: &LstmParams) -> Result<LstmState> {
    let h = p.hidden_dim;
    let x_len = g.value(x).len();
    if x_len != p.input_dim {
        return Err(Error::shape("lstm input", &[x_len], &[p.input_dim]));
    }
    let (hd, cd) = (g.value(prev.hidden).len(), g.value(prev.cell).len());
    if hd != h || cd != h {
        return Err(Error::shape("lstm state", &[hd, cd], &[h, h]));
    }

    let xh = g.concat(&[x, prev.hidden])?;
    let w = g.param(p.weight);
    let b = g.param(p.bias);
    let wx = g.matmul(w, xh)?;
    let z = g.add(wx, b)?;

    let zi = g.slice(z, 0, h)?;
    let zf = g.slice(z, h, h)?;
    let zg = g.slice(z, 2 * h, h)?;
    let zo = g.slice(z, 3 * h, h)?;
    let i = g.sigmoid(zi);
    let f = g.sigmoid(zf);
    let cand = g.tanh(zg);
    let o = g.sigmoid(zo);

    let keep = g.mul(f, prev.cell)?;
    let write = g.mul(i, cand)?;
    let cell = g.add(keep, write)?;
    let squashed = g.tanh(cell);
    let hidden = g.mul(o, squashed)?;
    Ok(LstmState { hidden, cell })
}
