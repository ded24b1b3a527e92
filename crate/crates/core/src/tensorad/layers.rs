//! Composite layers built from tape primitives.

use super::{mismatch, Tape, TensorError, Var};
use crate::Scalar;

/// `x W + b` for `x` of shape `[..., d_in]`, `W` of `[d_in, d_out]`.
pub fn linear<T: Scalar>(tape: &mut Tape<T>, x: Var, w: Var, b: Option<Var>) -> Result<Var, TensorError> {
    let shape = tape.shape(x).to_vec();
    let d_in = *shape.last().ok_or_else(|| mismatch("linear", "scalar input"))?;
    let rows = shape.iter().product::<usize>() / d_in.max(1);
    let flat = tape.reshape(x, &[rows, d_in])?;
    let mut y = tape.matmul(flat, w)?;
    if let Some(b) = b {
        y = tape.add_bias(y, b)?;
    }
    let d_out = tape.shape(y)[1];
    let mut out_shape = shape;
    *out_shape.last_mut().unwrap() = d_out;
    tape.reshape(y, &out_shape)
}

/// Single-head attention over `tokens` of shape `[n_tok, d]` or
/// `[batch, n_tok, d]`, with scale `1 / sqrt(d_k)`.
pub fn scaled_dot_attention<T: Scalar>(
    tape: &mut Tape<T>,
    tokens: Var,
    wq: Var,
    wk: Var,
    wv: Var,
) -> Result<Var, TensorError> {
    let shape = tape.shape(tokens).to_vec();
    let batched = match shape.len() {
        2 => tape.reshape(tokens, &[1, shape[0], shape[1]])?,
        3 => tokens,
        _ => return Err(mismatch("scaled_dot_attention", format!("tokens {shape:?}"))),
    };
    let q = linear(tape, batched, wq, None)?;
    let k = linear(tape, batched, wk, None)?;
    let v = linear(tape, batched, wv, None)?;
    let d_k = *tape.shape(k).last().unwrap();
    let kt = tape.transpose_last2(k)?;
    let scores = tape.batch_matmul(q, kt)?;
    let scaled = tape.scale(scores, T::one() / T::of_usize(d_k).sqrt())?;
    let weights = tape.softmax(scaled)?;
    let out = tape.batch_matmul(weights, v)?;
    if shape.len() == 2 {
        let d_v = *tape.shape(out).last().unwrap();
        tape.reshape(out, &[shape[0], d_v])
    } else {
        Ok(out)
    }
}

/// Two-layer feed-forward block with ReLU between the layers.
pub fn ffn<T: Scalar>(tape: &mut Tape<T>, x: Var, w1: Var, b1: Var, w2: Var, b2: Var) -> Result<Var, TensorError> {
    let h = linear(tape, x, w1, Some(b1))?;
    let h = tape.relu(h)?;
    linear(tape, h, w2, Some(b2))
}

#[cfg(test)]
mod tests {
    use super::super::{check_gradients, Rng, Tensor};
    use super::*;

    #[test]
    fn single_token_returns_value_projection() {
        let mut rng = Rng::new(1);
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::randn(&[1, 4], 1.0, &mut rng));
        let wq = tape.constant(Tensor::randn(&[4, 4], 1.0, &mut rng));
        let wk = tape.constant(Tensor::randn(&[4, 4], 1.0, &mut rng));
        let wv = tape.constant(Tensor::randn(&[4, 4], 1.0, &mut rng));
        let a = scaled_dot_attention(&mut tape, x, wq, wk, wv).unwrap();
        let v = tape.matmul(x, wv).unwrap();
        let (a, v) = (tape.value(a).data(), tape.value(v).data());
        assert!(a.iter().zip(v).all(|(p, q)| (p - q).abs() < 1e-12));
    }

    #[test]
    fn identical_tokens_share_one_output() {
        let mut rng = Rng::new(2);
        let row = Tensor::<f64>::randn(&[1, 5], 1.0, &mut rng);
        let mut tape = Tape::new();
        let r = tape.constant(row);
        let x = tape.concat(&[r, r, r], 0).unwrap();
        let ws: Vec<Var> = (0..3)
            .map(|_| tape.constant(Tensor::randn(&[5, 5], 1.0, &mut rng)))
            .collect();
        let a = scaled_dot_attention(&mut tape, x, ws[0], ws[1], ws[2]).unwrap();
        let v = tape.matmul(r, ws[2]).unwrap();
        let v = tape.value(v).data().to_vec();
        for out_row in tape.value(a).data().chunks(5) {
            assert!(out_row.iter().zip(&v).all(|(p, q)| (p - q).abs() < 1e-12));
        }
    }

    #[test]
    fn ffn_closed_forms() {
        let d = 3;
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(&[2, d], vec![0.5, 2.0, 0.0, 1.0, 3.0, 4.0]).unwrap());
        let w1 = tape.constant(Tensor::zeros(&[d, 4 * d]));
        let b1 = tape.constant(Tensor::zeros(&[4 * d]));
        let w2 = tape.constant(Tensor::zeros(&[4 * d, d]));
        let b2 = tape.constant(Tensor::new(&[d], vec![1.0, -2.0, 0.5]).unwrap());
        let y = ffn(&mut tape, x, w1, b1, w2, b2).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, -2.0, 0.5, 1.0, -2.0, 0.5]);

        // identity padded into the hidden width
        let eye1 = Tensor::from_fn(&[d, 4 * d], |i| if i / (4 * d) == i % (4 * d) { 1.0 } else { 0.0 });
        let eye2 = Tensor::from_fn(&[4 * d, d], |i| if i / d == i % d { 1.0 } else { 0.0 });
        let w1 = tape.constant(eye1);
        let w2 = tape.constant(eye2);
        let b2 = tape.constant(Tensor::zeros(&[d]));
        let y = ffn(&mut tape, x, w1, b1, w2, b2).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }

    #[test]
    fn attention_and_ffn_pass_gradient_check() {
        let mut rng = Rng::new(9);
        let d = 4;
        let ins = vec![
            Tensor::<f64>::randn(&[2, 3, d], 1.0, &mut rng),
            Tensor::randn(&[d, d], 0.7, &mut rng),
            Tensor::randn(&[d, d], 0.7, &mut rng),
            Tensor::randn(&[d, d], 0.7, &mut rng),
            Tensor::randn(&[d, 2 * d], 0.7, &mut rng),
            Tensor::randn(&[2 * d], 0.7, &mut rng),
            Tensor::randn(&[2 * d, d], 0.7, &mut rng),
            Tensor::randn(&[d], 0.7, &mut rng),
        ];
        let r = check_gradients(&ins, 1e-5, |tape, v| {
            let a = scaled_dot_attention(tape, v[0], v[1], v[2], v[3])?;
            let f = ffn(tape, a, v[4], v[5], v[6], v[7])?;
            let sq = tape.mul(f, f)?;
            tape.sum(sq)
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-4, "{r:?}");
    }
}
