use super::{Tape, Tensor, TensorError, Var};
use crate::Scalar;

/// Largest discrepancy found by [`check_gradients`].
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Largest `|a - n|_2 / max(|a|_2, |n|_2, 1e-12)` over input tensors.
    pub max_tensor_rel_err: f64,
    pub checked: usize,
    /// Elements whose difference quotient changes between steps `h` and
    /// `h / 2`, i.e. a relu or max-pool switch lies within reach of the probe.
    pub nonsmooth: usize,
    /// `(input, element, analytic, numeric)` at the largest error.
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares the tape gradient of `f` at `inputs` with central differences of
/// step `h`, over every input element.
pub fn check_gradients<T, F>(inputs: &[Tensor<T>], h: f64, f: F) -> Result<GradCheckReport, TensorError>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |vals: &[Tensor<T>]| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.value(out)
            .item()
            .map(Scalar::as_f64)
            .ok_or_else(|| TensorError::NotScalar(tape.shape(out).to_vec()))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_tensor_rel_err: 0.0,
        checked: 0,
        nonsmooth: 0,
        worst: None,
    };
    let mut probe = inputs.to_vec();
    let quotient = |probe: &mut [Tensor<T>], k: usize, i: usize, step: f64| -> Result<f64, TensorError> {
        let orig = probe[k].data()[i];
        probe[k].data_mut()[i] = orig + T::of(step);
        let plus = eval(probe)?;
        probe[k].data_mut()[i] = orig - T::of(step);
        let minus = eval(probe)?;
        probe[k].data_mut()[i] = orig;
        Ok((plus - minus) / (2.0 * step))
    };
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v);
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for i in 0..inputs[k].numel() {
            let numeric = quotient(&mut probe, k, i, h)?;
            let a = analytic.data()[i].as_f64();
            let err = rel_error(a, numeric);
            if err > 1e-5 {
                let half = quotient(&mut probe, k, i, h / 2.0)?;
                if (half - numeric).abs() > 1e-6 * numeric.abs().max(1.0) {
                    report.nonsmooth += 1;
                }
            }
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = err;
                report.worst = Some((k, i, a, numeric));
            }
            report.checked += 1;
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
        }
        let tensor_err = diff2.sqrt() / a2.sqrt().max(n2.sqrt()).max(1e-12);
        report.max_tensor_rel_err = report.max_tensor_rel_err.max(tensor_err);
    }
    Ok(report)
}
