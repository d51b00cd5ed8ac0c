use crate::error::{Error, Result};
use crate::grid::{axpy, dot_unchecked, norm2};

#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iters: usize,
    /// Final residual norm `‖b − M x‖₂` (recursively updated).
    pub residual: f64,
    /// Residual norm before the first and after every iteration.
    pub history: Vec<f64>,
}

/// Conjugate gradients for a symmetric positive definite operator.
///
/// `apply(x, out)` must write `M x` into `out`. Stops when
/// `‖b − M x‖₂ ≤ tol·‖b‖₂` or after `max_iters` iterations.
pub fn cg_solve(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x0: &[f64],
    tol: f64,
    max_iters: usize,
) -> Result<CgOutcome> {
    if b.len() != x0.len() {
        return Err(Error::LengthMismatch {
            expected: b.len(),
            actual: x0.len(),
        });
    }
    let n = b.len();
    let mut x = x0.to_vec();
    let mut ap = vec![0.0; n];
    apply(&x, &mut ap);
    let mut r: Vec<f64> = b.iter().zip(&ap).map(|(bi, ai)| bi - ai).collect();
    let target = tol * norm2(b);
    let mut rr = dot_unchecked(&r, &r);
    if !rr.is_finite() {
        return Err(Error::NonFinite {
            context: "conjugate gradient",
            iteration: 0,
        });
    }
    let mut history = vec![rr.sqrt()];
    let mut p = r.clone();
    let mut iters = 0;
    while iters < max_iters && rr.sqrt() > target && rr > 0.0 {
        apply(&p, &mut ap);
        let pap = dot_unchecked(&p, &ap);
        iters += 1;
        if !pap.is_finite() {
            return Err(Error::NonFinite {
                context: "conjugate gradient",
                iteration: iters,
            });
        }
        if pap <= 0.0 {
            return Err(Error::invalid(format!(
                "operator is not positive definite (pᵀMp = {pap:e} at CG iteration {iters})"
            )));
        }
        let alpha = rr / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rr_new = dot_unchecked(&r, &r);
        if !rr_new.is_finite() {
            return Err(Error::NonFinite {
                context: "conjugate gradient",
                iteration: iters,
            });
        }
        let beta = rr_new / rr;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rr = rr_new;
        history.push(rr.sqrt());
    }
    Ok(CgOutcome {
        x,
        iters,
        residual: rr.sqrt(),
        history,
    })
}
