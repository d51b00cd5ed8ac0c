use std::io::Write;
use std::path::Path;

use super::{cg_solve, objective_with, shrink, AdmmParams};
use crate::error::{Error, Result};
use crate::grid::{axpy, norm2, Sinogram, Volume};
use crate::operators::{Axis, Gradient, IdentityMap, LinearMap, NormalOp, NormalWeights, Projector};

/// Which gradient directions each half of the split penalises.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitAxes {
    pub h: Vec<Axis>,
    pub v: Vec<Axis>,
}

impl SplitAxes {
    /// `h` carries `D_xy`, `v` carries `D_z` (3D reconstruction).
    pub fn xy_z() -> Self {
        SplitAxes {
            h: vec![Axis::X, Axis::Y],
            v: vec![Axis::Z],
        }
    }

    /// `h` carries `D_x`, `v` carries `D_y` (single-slice training variant).
    pub fn x_y() -> Self {
        SplitAxes {
            h: vec![Axis::X],
            v: vec![Axis::Y],
        }
    }

    /// Only `D_z` is penalised; the `rho2` path is disabled.
    pub fn z_only() -> Self {
        SplitAxes {
            h: vec![],
            v: vec![Axis::Z],
        }
    }

    pub fn all_axes(&self) -> Vec<Axis> {
        self.h.iter().chain(&self.v).copied().collect()
    }
}

/// Per-outer-iteration diagnostics.
#[derive(Clone, Debug, Default)]
pub struct AdmmTrace {
    pub objective: Vec<f64>,
    /// `‖D x − z‖` (standard) or `‖D_h h − z_h‖ + ‖D_v v − z_v‖` (split).
    pub primal_residual: Vec<f64>,
    /// `‖h − v‖` for the split variant, empty for the standard one.
    pub coupling_residual: Vec<f64>,
    pub cg_iters: Vec<usize>,
}

impl AdmmTrace {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "iter,objective,primal_residual,coupling_residual,cg_iters")?;
        for k in 0..self.objective.len() {
            let coupling = self.coupling_residual.get(k).copied().unwrap_or(0.0);
            writeln!(
                f,
                "{},{:e},{:e},{:e},{}",
                k + 1,
                self.objective[k],
                self.primal_residual[k],
                coupling,
                self.cg_iters[k]
            )?;
        }
        Ok(())
    }
}

fn check_inputs<M: LinearMap + ?Sized>(forward: &M, y: &[f64], x_init: &Volume) -> Result<()> {
    if forward.output_len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: forward.output_len(),
            actual: y.len(),
        });
    }
    if forward.input_len() != x_init.len() {
        return Err(Error::LengthMismatch {
            expected: forward.input_len(),
            actual: x_init.len(),
        });
    }
    if !x_init.is_finite() {
        return Err(Error::NonFinite {
            context: "ADMM initial point",
            iteration: 0,
        });
    }
    Ok(())
}

fn ensure_finite(x: &[f64], context: &'static str, iteration: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { context, iteration })
    }
}

/// Standard ADMM on `½‖y − A x‖² + λ‖D x‖₁` with `D` stacking `axes`:
///
/// ```text
/// x ← (AᵀA + ρDᵀD)⁻¹ [Aᵀy + ρDᵀ(z − u)]
/// z ← S_{λ/ρ}(D x + u)
/// u ← u + D x − z
/// ```
///
/// `ρ` is `p.rho2`. `z` and `u` start at zero.
pub fn standard_admm_with<M: LinearMap + ?Sized>(
    forward: &M,
    y: &[f64],
    p: &AdmmParams,
    x_init: &Volume,
    axes: &[Axis],
    mut trace: Option<&mut AdmmTrace>,
) -> Result<Volume> {
    p.validate()?;
    check_inputs(forward, y, x_init)?;
    let dims = x_init.dims();
    let n = x_init.len();
    let rho = p.rho2;
    let grad = Gradient::new(dims, axes);
    let mut op = NormalOp::new(
        forward,
        dims,
        NormalWeights {
            data: 1.0,
            identity: 0.0,
            gradient: rho,
            axes: axes.to_vec(),
        },
    )?;
    let mut aty = vec![0.0; n];
    forward.apply_adjoint(y, &mut aty);

    let mut x = x_init.data().to_vec();
    let mut z = vec![0.0; grad.len()];
    let mut u = vec![0.0; grad.len()];
    let mut dx = vec![0.0; grad.len()];
    let mut b = vec![0.0; n];
    let mut diff = vec![0.0; grad.len()];
    for k in 0..p.outer_iters {
        b.copy_from_slice(&aty);
        for ((d, zi), ui) in diff.iter_mut().zip(&z).zip(&u) {
            *d = rho * (zi - ui);
        }
        grad.adjoint_add(&diff, &mut b);
        let sol = cg_solve(|v, o| op.apply(v, o), &b, &x, p.cg_tol, p.cg_iters)?;
        x = sol.x;
        ensure_finite(&x, "standard ADMM", k + 1)?;

        grad.apply(&x, &mut dx);
        let kappa = p.lambda / rho;
        let mut primal = 0.0;
        for ((zi, ui), di) in z.iter_mut().zip(u.iter_mut()).zip(&dx) {
            *zi = shrink(di + *ui, kappa);
            let r = di - *zi;
            *ui += r;
            primal += r * r;
        }
        if let Some(t) = trace.as_deref_mut() {
            let xv = x_init.with_data(x.clone())?;
            t.objective.push(objective_with(forward, y, &xv, p.lambda, axes));
            t.primal_residual.push(primal.sqrt());
            t.cg_iters.push(sol.iters);
        }
    }
    x_init.with_data(x)
}

/// [`standard_admm_with`] for the projector with all three axes stacked.
pub fn standard_admm(
    y: &Sinogram,
    proj: &Projector,
    p: &AdmmParams,
    x_init: &Volume,
) -> Result<Volume> {
    proj.geometry().check_sinogram(y)?;
    proj.geometry().check_volume(x_init)?;
    standard_admm_with(proj, y.data(), p, x_init, &[Axis::X, Axis::Y, Axis::Z], None)
}

/// Direction-split ADMM. Each outer iteration performs one pass of
///
/// ```text
/// h   ← (AᵀA + ρ₁I + ρ₂D_hᵀD_h)⁻¹ [Aᵀy − ρ₁(w − v) + ρ₂D_hᵀ(z_h − s_h)]
/// z_h ← S_{λ/ρ₂}(D_h h + s_h),      s_h ← s_h + D_h h − z_h
/// v   ← (I + ρ₃D_vᵀD_v)⁻¹ [h + w + ρ₃D_vᵀ(z_v − s_v)]
/// z_v ← S_{λ/(ρ₁ρ₃)}(D_v v + s_v),  s_v ← s_v + D_v v − z_v
/// w   ← w + h − v
/// ```
///
/// and returns `h`. `h` and `v` start at `x_init`; `w`, `z`, `s` at zero.
/// Both linear systems are solved by warm-started CG. An empty axis group
/// (e.g. `D_z` on a single slice) turns its terms into no-ops.
pub fn specialized_admm_with<M: LinearMap + ?Sized>(
    forward: &M,
    y: &[f64],
    p: &AdmmParams,
    x_init: &Volume,
    split: &SplitAxes,
    mut trace: Option<&mut AdmmTrace>,
) -> Result<Volume> {
    p.validate()?;
    check_inputs(forward, y, x_init)?;
    let dims = x_init.dims();
    let n = x_init.len();
    let (rho1, rho2, rho3) = (p.rho1, p.rho2, p.rho3);
    let gh = Gradient::new(dims, &split.h);
    let gv = Gradient::new(dims, &split.v);
    let mut op_h = NormalOp::new(
        forward,
        dims,
        NormalWeights {
            data: 1.0,
            identity: rho1,
            gradient: rho2,
            axes: split.h.clone(),
        },
    )?;
    let ident = IdentityMap { len: n };
    let mut op_v = NormalOp::new(
        &ident,
        dims,
        NormalWeights {
            data: 0.0,
            identity: 1.0,
            gradient: rho3,
            axes: split.v.clone(),
        },
    )?;
    let mut aty = vec![0.0; n];
    forward.apply_adjoint(y, &mut aty);

    let mut h = x_init.data().to_vec();
    let mut v = h.clone();
    let mut w = vec![0.0; n];
    let (mut zh, mut sh, mut dh, mut tmp_h) = (
        vec![0.0; gh.len()],
        vec![0.0; gh.len()],
        vec![0.0; gh.len()],
        vec![0.0; gh.len()],
    );
    let (mut zv, mut sv, mut dv, mut tmp_v) = (
        vec![0.0; gv.len()],
        vec![0.0; gv.len()],
        vec![0.0; gv.len()],
        vec![0.0; gv.len()],
    );
    let mut b = vec![0.0; n];
    let kappa_h = p.lambda / rho2;
    let kappa_v = p.lambda / (rho1 * rho3);

    for k in 0..p.outer_iters {
        // h-subproblem
        for ((bi, ai), (wi, vi)) in b.iter_mut().zip(&aty).zip(w.iter().zip(&v)) {
            *bi = ai - rho1 * (wi - vi);
        }
        for ((t, zi), si) in tmp_h.iter_mut().zip(&zh).zip(&sh) {
            *t = rho2 * (zi - si);
        }
        gh.adjoint_add(&tmp_h, &mut b);
        let sol_h = cg_solve(|x, o| op_h.apply(x, o), &b, &h, p.cg_tol, p.cg_iters)?;
        h = sol_h.x;
        ensure_finite(&h, "specialized ADMM (h)", k + 1)?;
        gh.apply(&h, &mut dh);
        let mut primal = 0.0;
        for ((zi, si), di) in zh.iter_mut().zip(sh.iter_mut()).zip(&dh) {
            *zi = shrink(di + *si, kappa_h);
            let r = di - *zi;
            *si += r;
            primal += r * r;
        }

        // v-subproblem
        for ((bi, hi), wi) in b.iter_mut().zip(&h).zip(&w) {
            *bi = hi + wi;
        }
        for ((t, zi), si) in tmp_v.iter_mut().zip(&zv).zip(&sv) {
            *t = rho3 * (zi - si);
        }
        gv.adjoint_add(&tmp_v, &mut b);
        let sol_v = cg_solve(|x, o| op_v.apply(x, o), &b, &v, p.cg_tol, p.cg_iters)?;
        v = sol_v.x;
        ensure_finite(&v, "specialized ADMM (v)", k + 1)?;
        gv.apply(&v, &mut dv);
        for ((zi, si), di) in zv.iter_mut().zip(sv.iter_mut()).zip(&dv) {
            *zi = shrink(di + *si, kappa_v);
            let r = di - *zi;
            *si += r;
            primal += r * r;
        }

        // scaled dual of h = v
        axpy(1.0, &h, &mut w);
        axpy(-1.0, &v, &mut w);
        ensure_finite(&w, "specialized ADMM (w)", k + 1)?;

        if let Some(t) = trace.as_deref_mut() {
            let hv = x_init.with_data(h.clone())?;
            t.objective
                .push(objective_with(forward, y, &hv, p.lambda, &split.all_axes()));
            t.primal_residual.push(primal.sqrt());
            let coupling: Vec<f64> = h.iter().zip(&v).map(|(a, b)| a - b).collect();
            t.coupling_residual.push(norm2(&coupling));
            t.cg_iters.push(sol_h.iters + sol_v.iters);
        }
    }
    x_init.with_data(h)
}

/// Split ADMM with `h` on `D_xy` and `v` on `D_z`. Single-slice volumes are
/// accepted; the `D_z` terms then vanish.
pub fn specialized_admm3d(
    y: &Sinogram,
    proj: &Projector,
    p: &AdmmParams,
    x_init: &Volume,
) -> Result<Volume> {
    proj.geometry().check_sinogram(y)?;
    proj.geometry().check_volume(x_init)?;
    specialized_admm_with(proj, y.data(), p, x_init, &SplitAxes::xy_z(), None)
}

/// Single-slice split ADMM with `h` on `D_x` and `v` on `D_y`.
pub fn specialized_admm2d(
    y: &Sinogram,
    proj: &Projector,
    p: &AdmmParams,
    x_init: &Volume,
) -> Result<Volume> {
    if x_init.nz() != 1 {
        return Err(Error::DimMismatch {
            what: "2D ADMM expects a single slice",
            expected: vec![1, x_init.ny(), x_init.nx()],
            actual: x_init.dims().to_vec(),
        });
    }
    proj.geometry().check_sinogram(y)?;
    proj.geometry().check_volume(x_init)?;
    specialized_admm_with(proj, y.data(), p, x_init, &SplitAxes::x_y(), None)
}
