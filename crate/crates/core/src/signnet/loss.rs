use num_traits::{FromPrimitive, Num};
use serde::{Deserialize, Serialize};

use super::labels::{aux_labels, AttributeVector, AuxLabels, FurRule, ATTRIBUTE_COUNT};
use super::model::Outputs;
use super::{Predictions, SignNetError};
use crate::tensorad::{Tape, Tensor, Var};
use crate::Scalar;

/// Multi-task loss weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights<T> {
    pub w_color: T,
    pub w_fur: T,
    /// Per-attribute weight, in label order.
    pub alpha: [T; ATTRIBUTE_COUNT],
}

impl<T: Scalar> Default for LossWeights<T> {
    fn default() -> Self {
        Self {
            w_color: T::one(),
            w_fur: T::of(0.6),
            alpha: [T::one(); ATTRIBUTE_COUNT],
        }
    }
}

impl<T: Scalar> LossWeights<T> {
    pub fn with_alpha(alpha: [T; ATTRIBUTE_COUNT]) -> Self {
        Self {
            alpha,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SignNetError> {
        let all = [self.w_color, self.w_fur].into_iter().chain(self.alpha);
        for v in all {
            if !(v >= T::zero()) || !v.is_finite() {
                return Err(SignNetError::Config(format!("loss weight {v} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

/// Median-frequency weights: `median / count_j`, where `median` is the
/// median of the eight positive counts (mean of the middle two).
pub fn attr_weights<N>(counts: &[u64; ATTRIBUTE_COUNT]) -> Result<[N; ATTRIBUTE_COUNT], SignNetError>
where
    N: Num + FromPrimitive + Copy,
{
    if let Some(j) = counts.iter().position(|&c| c == 0) {
        return Err(SignNetError::ZeroCount(j));
    }
    let conv = |v: u64| N::from_u64(v).expect("count representable");
    let mut sorted = *counts;
    sorted.sort_unstable();
    let median = (conv(sorted[3]) + conv(sorted[4])) / conv(2);
    Ok(counts.map(|c| median / conv(c)))
}

/// Positive count per attribute.
pub fn positive_counts<'a>(labels: impl IntoIterator<Item = &'a AttributeVector>) -> [u64; ATTRIBUTE_COUNT] {
    let mut counts = [0u64; ATTRIBUTE_COUNT];
    for t in labels {
        for (c, &b) in counts.iter_mut().zip(t.bits()) {
            *c += b as u64;
        }
    }
    counts
}

/// Sigmoid cross-entropy of logit `z` against target `y`, stable for any `z`.
pub fn bce_logit<T: Scalar>(z: T, y: bool) -> T {
    let y = if y { T::one() } else { T::zero() };
    z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p()
}

/// Per-sample loss computed from values alone.
pub fn total_loss<T: Scalar>(pred: &Predictions<T>, t: &AttributeVector, aux: &AuxLabels, w: &LossWeights<T>) -> Result<T, SignNetError> {
    let color = pred
        .color_logits
        .iter()
        .zip(aux.color)
        .map(|(&z, y)| bce_logit(z, y))
        .sum::<T>()
        / T::of(4.0);
    let fur = bce_logit(pred.fur_logit, aux.fur);
    let attr = pred
        .attr_logits
        .iter()
        .zip(t.bits())
        .zip(&w.alpha)
        .map(|((&z, &y), &a)| a * bce_logit(z, y))
        .sum::<T>();
    let total = w.w_color * color + w.w_fur * fur + attr;
    if !total.is_finite() {
        return Err(SignNetError::NonFinite);
    }
    Ok(total)
}

/// Target tensors for a batch.
#[derive(Debug, Clone)]
pub struct Targets<T> {
    /// `[N, 8]`
    pub attr: Tensor<T>,
    /// `[N, 4]`
    pub color: Tensor<T>,
    /// `[N, 1]`
    pub fur: Tensor<T>,
}

fn bit<T: Scalar>(b: bool) -> T {
    if b {
        T::one()
    } else {
        T::zero()
    }
}

impl<T: Scalar> Targets<T> {
    pub fn new(labels: &[AttributeVector], rule: FurRule) -> Self {
        let n = labels.len();
        let aux: Vec<AuxLabels> = labels.iter().map(|t| aux_labels(t, rule)).collect();
        Self {
            attr: Tensor::from_fn(&[n, ATTRIBUTE_COUNT], |i| {
                bit(labels[i / ATTRIBUTE_COUNT].bits()[i % ATTRIBUTE_COUNT])
            }),
            color: Tensor::from_fn(&[n, 4], |i| bit(aux[i / 4].color[i % 4])),
            fur: Tensor::from_fn(&[n, 1], |i| bit(aux[i].fur)),
        }
    }
}

/// Batch-mean loss on the tape.
pub fn loss_on_tape<T: Scalar>(tape: &mut Tape<T>, out: &Outputs, targets: &Targets<T>, w: &LossWeights<T>) -> Result<Var, SignNetError> {
    let n = targets.attr.shape()[0];
    if tape.shape(out.attr) != targets.attr.shape() {
        return Err(SignNetError::Input(format!(
            "logits {:?} vs targets {:?}",
            tape.shape(out.attr),
            targets.attr.shape()
        )));
    }
    let inv_n = T::one() / T::of_usize(n);

    let color = tape.bce_with_logits(out.color, &targets.color)?;
    let color = tape.sum(color)?;
    let color = tape.scale(color, w.w_color * inv_n / T::of(4.0))?;

    let fur = tape.bce_with_logits(out.fur, &targets.fur)?;
    let fur = tape.sum(fur)?;
    let fur = tape.scale(fur, w.w_fur * inv_n)?;

    let attr = tape.bce_with_logits(out.attr, &targets.attr)?;
    let alpha = Tensor::from_fn(&[n, ATTRIBUTE_COUNT], |i| w.alpha[i % ATTRIBUTE_COUNT]);
    let attr = tape.mul_const(attr, &alpha)?;
    let attr = tape.sum(attr)?;
    let attr = tape.scale(attr, inv_n)?;

    let partial = tape.add(color, fur)?;
    Ok(tape.add(partial, attr)?)
}
