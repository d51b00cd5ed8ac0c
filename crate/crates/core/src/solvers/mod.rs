//! Proximal machinery and the ADMM family for TV-regularised least squares
//!
//! `min_x ½‖y − A x‖² + λ Σ_a ‖D_a x‖₁`.
//!
//! [`standard_admm`] splits on the full stacked gradient. The direction-split
//! variant ([`specialized_admm3d`], [`specialized_admm2d`]) duplicates the image
//! into `h` (penalised along one group of axes) and `v` (the other group),
//! joined by `h = v`, and runs a single inner ADMM pass per subproblem per
//! outer iteration.

mod admm;
mod cg;
mod consistency;

pub use admm::{
    specialized_admm2d, specialized_admm3d, specialized_admm_with, standard_admm,
    standard_admm_with, AdmmTrace, SplitAxes,
};
pub use cg::{cg_solve, CgOutcome};
pub use consistency::{AdmmConsistency, AdmmVariant, Consistency, IdentityConsistency};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Sinogram, Volume};
use crate::operators::{Axis, Gradient, LinearMap, Projector};

/// Penalties and budgets shared by the ADMM variants.
///
/// In the split variant `rho1` couples `h` and `v`, `rho2` penalises the `h`
/// gradient split and `rho3` the `v` gradient split. [`standard_admm`] uses
/// `rho2` as its single penalty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmmParams {
    pub rho1: f64,
    pub rho2: f64,
    pub rho3: f64,
    pub lambda: f64,
    pub outer_iters: usize,
    #[serde(default = "default_cg_iters")]
    pub cg_iters: usize,
    #[serde(default = "default_cg_tol")]
    pub cg_tol: f64,
}

fn default_cg_iters() -> usize {
    30
}

fn default_cg_tol() -> f64 {
    1e-6
}

impl AdmmParams {
    pub fn new(rho1: f64, rho2: f64, rho3: f64, lambda: f64, outer_iters: usize) -> Self {
        AdmmParams {
            rho1,
            rho2,
            rho3,
            lambda,
            outer_iters,
            cg_iters: default_cg_iters(),
            cg_tol: default_cg_tol(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |x: f64| x.is_finite() && x > 0.0;
        if !(pos(self.rho1) && pos(self.rho2) && pos(self.rho3)) {
            return Err(Error::invalid("ADMM penalties must be positive"));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::invalid("ADMM lambda must be nonnegative"));
        }
        if self.outer_iters == 0 || self.cg_iters == 0 {
            return Err(Error::invalid("ADMM needs at least one outer and one CG iteration"));
        }
        if !(self.cg_tol >= 0.0) {
            return Err(Error::invalid("CG tolerance must be nonnegative"));
        }
        Ok(())
    }
}

/// `S_κ(a) = (a − κ)₊ − (−a − κ)₊`, elementwise.
pub fn soft_threshold(a: &[f64], kappa: f64) -> Result<Vec<f64>> {
    if !(kappa >= 0.0) {
        return Err(Error::invalid(format!("threshold must be nonnegative, got {kappa}")));
    }
    Ok(a.iter().map(|&x| shrink(x, kappa)).collect())
}

#[inline]
pub(crate) fn shrink(x: f64, kappa: f64) -> f64 {
    (x - kappa).max(0.0) - (-x - kappa).max(0.0)
}

/// `½‖y − A x‖² + λ Σ_{a ∈ axes} ‖D_a x‖₁` on flat buffers.
pub fn objective_with<M: LinearMap + ?Sized>(
    forward: &M,
    y: &[f64],
    x: &Volume,
    lambda: f64,
    axes: &[Axis],
) -> f64 {
    let mut ax = vec![0.0; forward.output_len()];
    forward.apply(x.data(), &mut ax);
    let fid: f64 = ax.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 2.0;
    fid + lambda * Gradient::new(x.dims(), axes).l1(x.data())
}

/// The 3D anisotropic-TV objective `½‖y − A x‖² + λ(‖D_xy x‖₁ + ‖D_z x‖₁)`.
pub fn tv_objective(proj: &Projector, y: &Sinogram, x: &Volume, lambda: f64) -> f64 {
    objective_with(proj, y.data(), x, lambda, &[Axis::X, Axis::Y, Axis::Z])
}
