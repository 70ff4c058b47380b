use candle_core::{DType, Device, Tensor, D};

use crate::Result;

pub const NEG_INF: f64 = -1e9;

pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    let s = e.sum_keepdim(D::Minus1)?;
    Ok(e.broadcast_div(&s)?)
}

pub fn log_softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let shifted = x.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((((x * 0.5)?.tanh()? + 1.0)? * 0.5)?)
}

/// Convex combination of layers: `h` is `[.., L, T, D]`, `logits` is `[L]`.
/// The output drops the layer axis.
pub fn weighted_layer_sum(h: &Tensor, logits: &Tensor) -> Result<Tensor> {
    let rank = h.rank();
    if rank < 3 {
        return Err(crate::Error::Shape(format!(
            "layered features need rank >= 3, got {rank}"
        )));
    }
    let layer_axis = rank - 3;
    let layers = h.dim(layer_axis)?;
    if logits.dim(0)? != layers {
        return Err(crate::Error::Shape(format!(
            "{} layer weights for {layers} layers",
            logits.dim(0)?
        )));
    }
    let w = softmax_last(&logits.unsqueeze(0)?)?.squeeze(0)?;
    let mut shape = vec![1usize; rank];
    shape[layer_axis] = layers;
    let w = w.reshape(shape)?;
    Ok(h.broadcast_mul(&w)?.sum(layer_axis)?)
}

pub fn scalar_to_f64(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

pub fn tensor_from_f32(data: &[f32], shape: &[usize], dtype: DType) -> Result<Tensor> {
    Ok(Tensor::from_slice(data, shape, &Device::Cpu)?.to_dtype(dtype)?)
}

pub fn to_f32_vec(t: &Tensor) -> Result<Vec<f32>> {
    Ok(t.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?)
}
