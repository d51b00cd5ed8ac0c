//! Independent oracles used by the integration and acceptance tests. Nothing
//! here calls into the solvers under test; only the operators are shared.
#![allow(dead_code)]

use cddm::grid::Volume;
use cddm::operators::{Axis, Gradient, LinearMap};

/// Gaussian elimination with partial pivoting on a dense row-major `n×n` system.
pub fn dense_solve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs()))
            .unwrap();
        if piv != col {
            for k in 0..n {
                m.swap(col * n + k, piv * n + k);
            }
            x.swap(col, piv);
        }
        let d = m[col * n + col];
        for row in col + 1..n {
            let f = m[row * n + col] / d;
            if f != 0.0 {
                for k in col..n {
                    m[row * n + k] -= f * m[col * n + k];
                }
                x[row] -= f * x[col];
            }
        }
    }
    for row in (0..n).rev() {
        let mut s = x[row];
        for k in row + 1..n {
            s -= m[row * n + k] * x[k];
        }
        x[row] = s / m[row * n + row];
    }
    x
}

/// Dense matrix of a linear map, row-major `output_len × input_len`.
pub fn dense_matrix<M: LinearMap + ?Sized>(op: &M) -> Vec<f64> {
    let (n, m) = (op.input_len(), op.output_len());
    let mut a = vec![0.0; m * n];
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; m];
    for j in 0..n {
        e[j] = 1.0;
        op.apply(&e, &mut col);
        e[j] = 0.0;
        for i in 0..m {
            a[i * n + j] = col[i];
        }
    }
    a
}

/// Largest eigenvalue of `AᵀA` by power iteration.
pub fn lipschitz<M: LinearMap + ?Sized>(op: &M, iters: usize) -> f64 {
    let n = op.input_len();
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + (i % 7) as f64 * 0.1).collect();
    let mut ax = vec![0.0; op.output_len()];
    let mut atax = vec![0.0; n];
    let mut lam = 0.0;
    for _ in 0..iters {
        let nrm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        x.iter_mut().for_each(|v| *v /= nrm);
        op.apply(&x, &mut ax);
        op.apply_adjoint(&ax, &mut atax);
        lam = x.iter().zip(&atax).map(|(a, b)| a * b).sum();
        std::mem::swap(&mut x, &mut atax);
    }
    lam
}

pub fn objective<M: LinearMap + ?Sized>(
    op: &M,
    y: &[f64],
    x: &[f64],
    dims: [usize; 3],
    lambda: f64,
    axes: &[Axis],
) -> f64 {
    let mut ax = vec![0.0; op.output_len()];
    op.apply(x, &mut ax);
    let fid: f64 = ax.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 2.0;
    fid + lambda * Gradient::new(dims, axes).l1(x)
}

/// `argmin_x ½‖x − q‖² + γ‖D x‖₁` through accelerated projected gradient
/// on the dual `min_{‖u‖∞ ≤ γ} ½‖q − Dᵀu‖²`; `u` is warm-started in place.
pub fn tv_prox(q: &[f64], grad: &Gradient, gamma: f64, u: &mut [f64], iters: usize) -> Vec<f64> {
    let step = 1.0 / (4.0 * grad.axes().len() as f64);
    let mut u_prev = u.to_vec();
    let mut yk = u.to_vec();
    let mut t = 1.0f64;
    let mut x = vec![0.0; q.len()];
    let mut dx = vec![0.0; grad.len()];
    for _ in 0..iters {
        // x = q − Dᵀ yk, gradient wrt u is −D x
        x.copy_from_slice(q);
        let neg: Vec<f64> = yk.iter().map(|v| -v).collect();
        grad.adjoint_add(&neg, &mut x);
        grad.apply(&x, &mut dx);
        u_prev.copy_from_slice(u);
        for i in 0..u.len() {
            u[i] = (yk[i] + step * dx[i]).clamp(-gamma, gamma);
        }
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        for i in 0..u.len() {
            yk[i] = u[i] + (t - 1.0) / t_next * (u[i] - u_prev[i]);
        }
        t = t_next;
    }
    x.copy_from_slice(q);
    let neg: Vec<f64> = u.iter().map(|v| -v).collect();
    grad.adjoint_add(&neg, &mut x);
    x
}

/// FISTA on `½‖y − A x‖² + λ‖D x‖₁` with an inner dual solver for the prox.
pub fn prox_grad_oracle<M: LinearMap + ?Sized>(
    op: &M,
    y: &[f64],
    dims: [usize; 3],
    lambda: f64,
    axes: &[Axis],
    x0: &[f64],
    iters: usize,
    inner: usize,
) -> Vec<f64> {
    let grad = Gradient::new(dims, axes);
    let l = lipschitz(op, 200) * 1.01;
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut x_prev = x.clone();
    let mut z = x.clone();
    let mut t = 1.0f64;
    let mut u = vec![0.0; grad.len()];
    let mut az = vec![0.0; op.output_len()];
    let mut g = vec![0.0; n];
    let mut best = (f64::INFINITY, x.clone());
    for _ in 0..iters {
        op.apply(&z, &mut az);
        for (a, b) in az.iter_mut().zip(y) {
            *a -= b;
        }
        op.apply_adjoint(&az, &mut g);
        let q: Vec<f64> = z.iter().zip(&g).map(|(zi, gi)| zi - gi / l).collect();
        x_prev.copy_from_slice(&x);
        x = tv_prox(&q, &grad, lambda / l, &mut u, inner);
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        for i in 0..n {
            z[i] = x[i] + (t - 1.0) / t_next * (x[i] - x_prev[i]);
        }
        t = t_next;
        let f = objective(op, y, &x, dims, lambda, axes);
        if f < best.0 {
            best = (f, x.clone());
        }
    }
    best.1
}

/// Piecewise-constant test object: a bright box with an off-centre insert.
pub fn blocky_volume(dims: [usize; 3]) -> Volume {
    let [nz, ny, nx] = dims;
    let mut v = Volume::zeros(dims, [1.0; 3]);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let mut val = 0.0;
                if (ny / 4..3 * ny / 4).contains(&y) && (nx / 4..3 * nx / 4).contains(&x) {
                    val = 0.6;
                }
                if (ny / 3..ny / 2).contains(&y) && (nx / 2..2 * nx / 3 + 1).contains(&x) && z >= nz / 4 {
                    val = 1.0;
                }
                v.set(z, y, x, val);
            }
        }
    }
    v
}
