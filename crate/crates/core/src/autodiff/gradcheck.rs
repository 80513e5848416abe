use alloc::vec::Vec;

use super::{Tape, Var};
use crate::error::AdError;
use crate::tensor::Tensor;

/// A probe where the function could not be evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeFailure {
    pub param: usize,
    pub coord: usize,
    pub error: AdError,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Worst `|a - n| / max(|a|, |n|, 1e-8)` over all coordinates.
    pub max_rel_error: f64,
    /// Location `(param, coord)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
    pub failures: Vec<ProbeFailure>,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.failures.is_empty() && self.max_rel_error < tolerance
    }
}

fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<f64, AdError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, AdError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let root = f(&mut tape, &vars)?;
    tape.value(root).item()
}

/// Compares reverse-mode gradients of `f` at `params` against central
/// differences with step `h`.
pub fn grad_check<F>(f: F, params: &[Tensor], h: f64) -> Result<GradCheckReport, AdError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, AdError>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let root = f(&mut tape, &vars)?;
    let grads = tape.backward(root)?;
    let analytic: Vec<Tensor> = vars.iter().map(|v| grads.wrt(*v)).collect();

    let mut numeric = Vec::with_capacity(params.len());
    let mut failures = Vec::new();
    let mut max_rel_error: f64 = 0.0;
    let mut worst = None;
    let mut probe = params.to_vec();
    for (pi, param) in params.iter().enumerate() {
        let mut fd = Tensor::zeros(param.shape());
        for ci in 0..param.len() {
            let base = param.data()[ci];
            probe[pi].data_mut()[ci] = base + h;
            let plus = evaluate(&f, &probe);
            probe[pi].data_mut()[ci] = base - h;
            let minus = evaluate(&f, &probe);
            probe[pi].data_mut()[ci] = base;
            match (plus, minus) {
                (Ok(p), Ok(m)) if p.is_finite() && m.is_finite() => {
                    let n = (p - m) / (2.0 * h);
                    fd.data_mut()[ci] = n;
                    let a = analytic[pi].data()[ci];
                    let denom = libm::fabs(a).max(libm::fabs(n)).max(1e-8);
                    let rel = libm::fabs(a - n) / denom;
                    if rel > max_rel_error {
                        max_rel_error = rel;
                        worst = Some((pi, ci));
                    }
                }
                (Err(error), _) | (_, Err(error)) => failures.push(ProbeFailure {
                    param: pi,
                    coord: ci,
                    error,
                }),
                _ => failures.push(ProbeFailure {
                    param: pi,
                    coord: ci,
                    error: AdError::NonFinite { op: "grad_check" },
                }),
            }
        }
        numeric.push(fd);
    }

    Ok(GradCheckReport {
        max_rel_error,
        worst,
        analytic,
        numeric,
        failures,
    })
}
