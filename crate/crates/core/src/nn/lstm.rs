use candle_core::Tensor;

use super::ops::sigmoid;
use super::{Init, Linear, ParamGroup};
use crate::Result;

/// Single-direction LSTM with per-frame masking.
///
/// Padded frames leave the state untouched, so a reverse pass over a
/// right-padded batch starts from a zero state at each sequence's last
/// valid frame.
#[derive(Clone)]
pub struct Lstm {
    input: Linear,
    recurrent: Linear,
    hidden: usize,
}

impl Lstm {
    pub fn new(g: &mut ParamGroup, prefix: &str, in_dim: usize, hidden: usize) -> Result<Self> {
        let w_ih = g.get(&format!("{prefix}.w_ih"), &[4 * hidden, in_dim], Init::Xavier)?;
        let w_hh = g.get(&format!("{prefix}.w_hh"), &[4 * hidden, hidden], Init::Xavier)?;
        // Gate order i, f, g, o; forget bias starts at one.
        let mut b = vec![0.0; 4 * hidden];
        b[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
        let bias = g.get_from(&format!("{prefix}.bias"), &[4 * hidden], b)?;
        Ok(Self {
            input: Linear::from_tensors(w_ih, Some(bias)),
            recurrent: Linear::from_tensors(w_hh, None),
            hidden,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// `x` is `[B, T, in]`, `mask` is `[B, T]` of ones/zeros. Returns `[B, T, H]`.
    pub fn forward(&self, x: &Tensor, mask: &Tensor, reverse: bool) -> Result<Tensor> {
        let (b, t, _) = x.dims3()?;
        let h_dim = self.hidden;
        let xw = self.input.forward(x)?;
        let mut h = Tensor::zeros((b, h_dim), x.dtype(), x.device())?;
        let mut c = h.clone();
        let mut outs: Vec<Option<Tensor>> = vec![None; t];
        let order: Box<dyn Iterator<Item = usize>> = if reverse {
            Box::new((0..t).rev())
        } else {
            Box::new(0..t)
        };
        for step in order {
            let gates = (xw.narrow(1, step, 1)?.squeeze(1)? + self.recurrent.forward(&h)?)?;
            let i = sigmoid(&gates.narrow(1, 0, h_dim)?)?;
            let f = sigmoid(&gates.narrow(1, h_dim, h_dim)?)?;
            let g = gates.narrow(1, 2 * h_dim, h_dim)?.tanh()?;
            let o = sigmoid(&gates.narrow(1, 3 * h_dim, h_dim)?)?;
            let c_new = ((f * &c)? + (i * g)?)?;
            let h_new = (o * c_new.tanh()?)?;
            let m = mask.narrow(1, step, 1)?;
            c = (&c + (c_new - &c)?.broadcast_mul(&m)?)?;
            h = (&h + (h_new - &h)?.broadcast_mul(&m)?)?;
            outs[step] = Some(h.clone());
        }
        let outs: Vec<Tensor> = outs.into_iter().map(|o| o.expect("every step visited")).collect();
        Ok(Tensor::stack(&outs, 1)?)
    }
}

#[derive(Clone)]
pub struct BiLstm {
    fwd: Lstm,
    bwd: Lstm,
}

impl BiLstm {
    pub fn new(g: &mut ParamGroup, prefix: &str, in_dim: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            fwd: Lstm::new(g, &format!("{prefix}.fwd"), in_dim, hidden)?,
            bwd: Lstm::new(g, &format!("{prefix}.bwd"), in_dim, hidden)?,
        })
    }

    pub fn out_dim(&self) -> usize {
        2 * self.fwd.hidden()
    }

    pub fn forward(&self, x: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let f = self.fwd.forward(x, mask, false)?;
        let b = self.bwd.forward(x, mask, true)?;
        Ok(Tensor::cat(&[f, b], 2)?)
    }
}
