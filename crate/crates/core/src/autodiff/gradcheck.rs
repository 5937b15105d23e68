//! Finite-difference verification of reverse-mode gradients.

use crate::error::Result;
use crate::tensor::Tensor;

use super::{Tape, Var};

/// Step used for central differences.
pub const STEP: f64 = 1e-4;

/// Denominator floor for relative error, so entries whose true gradient is
/// zero are compared on an absolute scale instead of blowing up.
const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// `(input index, flat element index)` of the worst relative error.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    /// Elements whose difference stencil switched a ReLU or max-pool branch.
    /// The function is not differentiable across such a switch, so these are
    /// excluded from the error statistics.
    pub skipped_nonsmooth: usize,
    pub tol: f64,
    pub passed: bool,
}

/// Compares reverse-mode gradients of `f` against central differences with
/// step [`STEP`], for every element of every input.
///
/// `f` may return a tensor of any shape; it is reduced to a scalar with fixed
/// pseudo-random weights so every output element contributes. Elements whose
/// stencil crosses a ReLU or max-pool switch are counted in
/// [`GradCheckReport::skipped_nonsmooth`] instead of being compared.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    grad_check_with(f, inputs, tol, |_, _| true)
}

/// [`grad_check`] restricted to the elements for which
/// `select(input index, flat element index)` holds.
pub fn grad_check_with<F, S>(f: F, inputs: &[Tensor<f64>], tol: f64, select: S) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
    S: Fn(usize, usize) -> bool,
{
    let eval = |values: &[Tensor<f64>], with_grad: bool| -> Result<(f64, u64, Vec<Vec<f64>>)> {
        let mut tape = Tape::new();
        let vars = values
            .iter()
            .map(|t| tape.variable(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = f(&mut tape, &vars)?;
        let weights = probe_weights(tape.value(out).numel());
        let w = tape.constant(Tensor::new(tape.shape(out).to_vec(), weights)?)?;
        let weighted = tape.mul(out, w)?;
        let loss = tape.sum(weighted)?;
        let value = tape.data(loss)[0];
        let signature = tape.branch_signature();
        let mut grads = Vec::new();
        if with_grad {
            tape.backward(loss)?;
            for (&v, t) in vars.iter().zip(values) {
                grads.push(tape.grad(v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec));
            }
        }
        Ok((value, signature, grads))
    };

    let (_, base_signature, analytic) = eval(inputs, true)?;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
        checked: 0,
        skipped_nonsmooth: 0,
        tol,
        passed: true,
    };
    let mut probe = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in (0..input.numel()).filter(|&j| select(i, j)) {
            let orig = input.data()[j];
            probe[i].data_mut()[j] = orig + STEP;
            let (plus, sig_plus, _) = eval(&probe, false)?;
            probe[i].data_mut()[j] = orig - STEP;
            let (minus, sig_minus, _) = eval(&probe, false)?;
            probe[i].data_mut()[j] = orig;
            if sig_plus != base_signature || sig_minus != base_signature {
                report.skipped_nonsmooth += 1;
                continue;
            }

            let numeric = (plus - minus) / (2.0 * STEP);
            let a = analytic[i][j];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((i, j));
            }
        }
    }
    report.passed = report.max_rel_error <= tol;
    Ok(report)
}

/// Deterministic weights in `[0.5, 1.5)`, kept away from zero so no output
/// element is silently ignored.
fn probe_weights(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 + ((i as f64 + 1.0) * 0.618_033_988_749_895).fract())
        .collect()
}
