//! Central finite-difference gradient checking.

use super::tensor::{backward, no_grad, Tensor};
use crate::error::Result;

const FD_STEP: f64 = 1e-5;

/// Compares analytic gradients of `f` with central finite differences over
/// every component of `params` and returns the worst relative error.
///
/// The error for one component is `|a - n| / max(|a|, |n|, 1)`; the floor
/// keeps difference-quotient noise from inflating the ratio when a gradient
/// is legitimately near zero. `f` must be deterministic in the parameter
/// values.
pub fn fd_check(params: &[Tensor], f: impl Fn() -> Result<Tensor>) -> Result<f64> {
    fd_check_impl(params, f, false)
}

/// Same check with one analytic gradient deliberately corrupted; exists so
/// the checker itself can be shown to catch a wrong backward pass.
pub fn fd_check_corrupted(params: &[Tensor], f: impl Fn() -> Result<Tensor>) -> Result<f64> {
    fd_check_impl(params, f, true)
}

fn fd_check_impl(
    params: &[Tensor],
    f: impl Fn() -> Result<Tensor>,
    corrupt: bool,
) -> Result<f64> {
    for p in params {
        p.zero_grad();
    }
    let loss = f()?;
    backward(&loss)?;
    let mut analytic: Vec<Vec<f64>> = params.iter().map(|p| p.grad()).collect();
    if corrupt {
        if let Some(first) = analytic.iter_mut().find(|g| !g.is_empty()) {
            first[0] += 1.0;
        }
    }

    let mut max_rel: f64 = 0.0;
    for (pi, p) in params.iter().enumerate() {
        let base = p.to_vec();
        for ci in 0..base.len() {
            let mut bumped = base.clone();
            bumped[ci] = base[ci] + FD_STEP;
            p.set_data(&bumped);
            let fp = no_grad(&f)?.item();
            bumped[ci] = base[ci] - FD_STEP;
            p.set_data(&bumped);
            let fm = no_grad(&f)?.item();
            p.set_data(&base);
            let numeric = (fp - fm) / (2.0 * FD_STEP);
            let a = analytic[pi][ci];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            max_rel = max_rel.max(rel);
        }
    }
    Ok(max_rel)
}
