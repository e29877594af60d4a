use super::{Tape, Var};
use crate::error::{config_err, shape_err, Result};

/// Projection parameters of one multi-head attention layer, as bound on a
/// tape. Weights are `[d_model, d_model]` (input-major), biases `[d_model]`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionWeights {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

/// `x[B, T, D] · w + b`, applied to every position.
pub fn linear(tape: &mut Tape, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let d_in = *shape.last().ok_or_else(|| shape_err!("linear on a scalar"))?;
    let rows = shape.iter().product::<usize>() / d_in.max(1);
    let flat = if shape.len() == 2 { x } else { tape.reshape(x, [rows, d_in])? };
    let mut y = tape.matmul(flat, w)?;
    if let Some(b) = b {
        y = tape.add_bias(y, b)?;
    }
    if shape.len() == 2 {
        return Ok(y);
    }
    let mut out_shape = shape;
    *out_shape.last_mut().unwrap() = tape.shape(y)[1];
    tape.reshape(y, out_shape)
}

/// `[B, T, H·dh] → [B·H, T, dh]`
fn split_heads(tape: &mut Tape, x: Var, heads: usize) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    let (b, t, d) = (s[0], s[1], s[2]);
    let x = tape.reshape(x, [b, t, heads, d / heads])?;
    let x = tape.permute(x, &[0, 2, 1, 3])?;
    tape.reshape(x, [b * heads, t, d / heads])
}

/// `[B·H, T, dh] → [B, T, H·dh]`
fn merge_heads(tape: &mut Tape, x: Var, batch: usize, heads: usize) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    let (t, dh) = (s[1], s[2]);
    let x = tape.reshape(x, [batch, heads, t, dh])?;
    let x = tape.permute(x, &[0, 2, 1, 3])?;
    tape.reshape(x, [batch, t, heads * dh])
}

/// Multi-head scaled dot-product attention.
///
/// `q` is `[B, Tq, D]`, `k` and `v` are `[B, Tk, D]`. Each head attends with
/// `softmax(Q Kᵀ / sqrt(D / heads)) V`; heads are concatenated and passed
/// through the output projection.
pub fn attention(tape: &mut Tape, q: Var, k: Var, v: Var, w: &AttentionWeights, heads: usize) -> Result<Var> {
    let (sq, sk, sv) = (tape.shape(q).to_vec(), tape.shape(k).to_vec(), tape.shape(v).to_vec());
    if sq.len() != 3 || sk.len() != 3 || sv != sk || sq[0] != sk[0] || sq[2] != sk[2] {
        return Err(shape_err!("attention over q {:?}, k {:?}, v {:?}", sq, sk, sv));
    }
    let d = sq[2];
    if heads == 0 || d % heads != 0 {
        return Err(config_err!("model dimension {} is not divisible into {} heads", d, heads));
    }
    let batch = sq[0];
    let qp = linear(tape, q, w.wq, Some(w.bq))?;
    let kp = linear(tape, k, w.wk, Some(w.bk))?;
    let vp = linear(tape, v, w.wv, Some(w.bv))?;
    let qh = split_heads(tape, qp, heads)?;
    let kh = split_heads(tape, kp, heads)?;
    let vh = split_heads(tape, vp, heads)?;
    let scores = tape.bmm(qh, kh, true)?;
    let scores = tape.scale(scores, 1.0 / ((d / heads) as f64).sqrt());
    let weights = tape.softmax(scores)?;
    let ctx = tape.bmm(weights, vh, false)?;
    let merged = merge_heads(tape, ctx, batch, heads)?;
    linear(tape, merged, w.wo, Some(w.bo))
}
