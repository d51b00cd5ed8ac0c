//! Matrix-free linear operators: the parallel-beam projector `A`, directional
//! finite differences `D_a`, and the regularised normal operator used by the
//! ADMM linear solves. Every operator ships with its exact transpose.

mod diff;
mod radon;

pub use diff::{diff_adjoint, diff_forward, Axis, GradField, Gradient};
pub use radon::{radon_adjoint, radon_forward, Geometry, Projector};

use crate::error::{Error, Result};
use crate::grid::Volume;

/// A linear map on flat buffers together with its transpose.
pub trait LinearMap {
    fn input_len(&self) -> usize;
    fn output_len(&self) -> usize;
    /// `out = M x`, overwriting `out`.
    fn apply(&self, x: &[f64], out: &mut [f64]);
    /// `out = Mᵀ y`, overwriting `out`.
    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]);
}

/// Identity measurement model (`A = I`), the denoising special case.
#[derive(Clone, Copy, Debug)]
pub struct IdentityMap {
    pub len: usize,
}

impl LinearMap for IdentityMap {
    fn input_len(&self) -> usize {
        self.len
    }
    fn output_len(&self) -> usize {
        self.len
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
    }
    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        out.copy_from_slice(y);
    }
}

/// Weights of `data·AᵀA + identity·I + gradient·Σ_a D_aᵀD_a`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalWeights {
    pub data: f64,
    pub identity: f64,
    pub gradient: f64,
    pub axes: Vec<Axis>,
}

/// Matrix-free normal operator `data·AᵀA + identity·I + gradient·DᵀD`.
pub struct NormalOp<'a, M: LinearMap + ?Sized> {
    forward: &'a M,
    grad: Gradient,
    weights: NormalWeights,
    meas: Vec<f64>,
    field: Vec<f64>,
    tmp: Vec<f64>,
}

impl<'a, M: LinearMap + ?Sized> NormalOp<'a, M> {
    pub fn new(forward: &'a M, dims: [usize; 3], weights: NormalWeights) -> Result<Self> {
        if weights.data < 0.0 || weights.identity < 0.0 || weights.gradient < 0.0 {
            return Err(Error::invalid("normal operator weights must be nonnegative"));
        }
        let n: usize = dims.iter().product();
        if forward.input_len() != n {
            return Err(Error::LengthMismatch {
                expected: forward.input_len(),
                actual: n,
            });
        }
        let grad = Gradient::new(dims, &weights.axes);
        Ok(NormalOp {
            meas: vec![0.0; forward.output_len()],
            field: vec![0.0; grad.len()],
            tmp: vec![0.0; n],
            forward,
            grad,
            weights,
        })
    }

    pub fn apply(&mut self, x: &[f64], out: &mut [f64]) {
        let w = &self.weights;
        for (o, xi) in out.iter_mut().zip(x) {
            *o = w.identity * xi;
        }
        if w.data != 0.0 {
            self.forward.apply(x, &mut self.meas);
            self.forward.apply_adjoint(&self.meas, &mut self.tmp);
            crate::grid::axpy(w.data, &self.tmp, out);
        }
        if w.gradient != 0.0 && !self.grad.is_empty() {
            self.grad.apply(x, &mut self.field);
            self.tmp.iter_mut().for_each(|t| *t = 0.0);
            self.grad.adjoint_add(&self.field, &mut self.tmp);
            crate::grid::axpy(w.gradient, &self.tmp, out);
        }
    }
}

/// `(data·AᵀA + identity·I + gradient·Σ_a D_aᵀD_a) v` for the projector of `g`.
pub fn normal_apply(v: &Volume, g: &Geometry, weights: &NormalWeights) -> Result<Volume> {
    g.check_volume(v)?;
    let proj = Projector::new(g)?;
    let mut op = NormalOp::new(&proj, v.dims(), weights.clone())?;
    let mut out = vec![0.0; v.len()];
    op.apply(v.data(), &mut out);
    v.with_data(out)
}
