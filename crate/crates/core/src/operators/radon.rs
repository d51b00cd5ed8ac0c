use std::f64::consts::PI;

use super::LinearMap;
use crate::error::{Error, Result};
use crate::grid::{Sinogram, Volume};

/// Parallel-beam acquisition geometry, applied independently to every z slice.
#[derive(Clone, Debug, PartialEq)]
pub struct Geometry {
    pub angles: Vec<f64>,
    pub n_det: usize,
    pub det_spacing: f64,
    /// Image dims `(nz, ny, nx)`.
    pub dims: [usize; 3],
    /// Voxel spacing `(sz, sy, sx)` in mm.
    pub spacing: [f64; 3],
}

impl Geometry {
    /// `n_views` angles equispaced over `[0, π)`.
    pub fn parallel(
        dims: [usize; 3],
        spacing: [f64; 3],
        n_views: usize,
        n_det: usize,
        det_spacing: f64,
    ) -> Result<Self> {
        if n_views == 0 {
            return Err(Error::invalid("n_views must be at least 1"));
        }
        let angles = (0..n_views).map(|i| i as f64 * PI / n_views as f64).collect();
        Geometry::with_angles(dims, spacing, angles, n_det, det_spacing)
    }

    pub fn with_angles(
        dims: [usize; 3],
        spacing: [f64; 3],
        angles: Vec<f64>,
        n_det: usize,
        det_spacing: f64,
    ) -> Result<Self> {
        if angles.is_empty() || n_det == 0 || dims.contains(&0) {
            return Err(Error::invalid("geometry needs views, detectors and a nonempty image"));
        }
        if !(det_spacing > 0.0) || spacing.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::invalid("spacings must be positive"));
        }
        // Reuse the sinogram's angle validation.
        Sinogram::zeros(1, angles.clone(), 1)?;
        Ok(Geometry {
            angles,
            n_det,
            det_spacing,
            dims,
            spacing,
        })
    }

    /// 8 equispaced views, one detector per column at the in-plane pitch.
    pub fn sparse_default(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        Geometry::parallel(dims, spacing, 8, dims[2], spacing[2])
    }

    pub fn n_views(&self) -> usize {
        self.angles.len()
    }

    pub fn sinogram_dims(&self) -> [usize; 3] {
        [self.dims[0], self.angles.len(), self.n_det]
    }

    /// Same acquisition applied to a volume with `nz` slices.
    pub fn with_nz(&self, nz: usize) -> Geometry {
        let mut g = self.clone();
        g.dims[0] = nz;
        g
    }

    pub(crate) fn check_volume(&self, v: &Volume) -> Result<()> {
        if v.dims() != self.dims {
            return Err(Error::DimMismatch {
                what: "volume vs geometry",
                expected: self.dims.to_vec(),
                actual: v.dims().to_vec(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_sinogram(&self, s: &Sinogram) -> Result<()> {
        if s.dims() != self.sinogram_dims() {
            return Err(Error::DimMismatch {
                what: "sinogram vs geometry",
                expected: self.sinogram_dims().to_vec(),
                actual: s.dims().to_vec(),
            });
        }
        Ok(())
    }
}

/// Precomputed slice system matrix in CSR form (rows = `view * n_det + bin`).
///
/// Weights follow the distance-driven model: pixel boundaries and detector
/// bin boundaries are mapped onto the detector axis, and each weight is the
/// overlap length scaled by the path length through the pixel row (or
/// column) crossed by the ray. Every bin value is the bin-averaged line
/// integral of the piecewise-constant image, so the total mass of a pixel
/// in each view equals its area divided by the bin width.
/// The adjoint walks the same table transposed.
#[derive(Clone, Debug)]
pub struct Projector {
    geom: Geometry,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    weights: Vec<f64>,
}

impl Projector {
    pub fn new(g: &Geometry) -> Result<Self> {
        let [_, ny, nx] = g.dims;
        let [_, sy, sx] = g.spacing;
        let d = g.det_spacing;
        let n_det = g.n_det;
        let det0 = -((n_det as f64 - 1.0) / 2.0) * d;
        let px = |i: usize| (i as f64 - (nx as f64 - 1.0) / 2.0) * sx;
        let py = |j: usize| (j as f64 - (ny as f64 - 1.0) / 2.0) * sy;

        let n_rays = g.angles.len() * n_det;
        let mut rays: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n_rays];
        for (v, &theta) in g.angles.iter().enumerate() {
            let (s, c) = theta.sin_cos();
            let base = v * n_det;
            let mut push = |lo: f64, hi: f64, scale: f64, pixel: usize| {
                // bins k with [det0 + (k-1/2)d, det0 + (k+1/2)d] overlapping [lo, hi]
                let k0 = ((lo - det0) / d + 0.5).floor().max(0.0) as usize;
                let k1 = ((hi - det0) / d + 0.5).floor();
                if k1 < 0.0 {
                    return;
                }
                let k1 = (k1 as usize).min(n_det - 1);
                for k in k0..=k1 {
                    let b_lo = det0 + (k as f64 - 0.5) * d;
                    let b_hi = b_lo + d;
                    let overlap = hi.min(b_hi) - lo.max(b_lo);
                    if overlap > 0.0 {
                        rays[base + k].push((pixel as u32, overlap * scale));
                    }
                }
            };
            if c.abs() >= s.abs() {
                // Rays run mostly along y: map x-boundaries of each pixel row.
                let scale = sy / (c.abs() * d);
                for j in 0..ny {
                    let ys = py(j) * s;
                    for i in 0..nx {
                        let e1 = (px(i) - sx / 2.0) * c + ys;
                        let e2 = (px(i) + sx / 2.0) * c + ys;
                        push(e1.min(e2), e1.max(e2), scale, j * nx + i);
                    }
                }
            } else {
                let scale = sx / (s.abs() * d);
                for i in 0..nx {
                    let xc = px(i) * c;
                    for j in 0..ny {
                        let e1 = (py(j) - sy / 2.0) * s + xc;
                        let e2 = (py(j) + sy / 2.0) * s + xc;
                        push(e1.min(e2), e1.max(e2), scale, j * nx + i);
                    }
                }
            }
        }

        let mut row_ptr = Vec::with_capacity(n_rays + 1);
        let mut cols = Vec::new();
        let mut weights = Vec::new();
        row_ptr.push(0);
        for mut ray in rays {
            ray.sort_by_key(|&(p, _)| p);
            for (p, w) in ray {
                cols.push(p);
                weights.push(w);
            }
            row_ptr.push(cols.len());
        }
        Ok(Projector {
            geom: g.clone(),
            row_ptr,
            cols,
            weights,
        })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    fn slice_len(&self) -> usize {
        self.geom.dims[1] * self.geom.dims[2]
    }

    fn rays_per_slice(&self) -> usize {
        self.row_ptr.len() - 1
    }

    fn forward_slice(&self, img: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
            *o = self.cols[a..b]
                .iter()
                .zip(&self.weights[a..b])
                .map(|(&p, &w)| w * img[p as usize])
                .sum();
        }
    }

    fn adjoint_slice(&self, sino: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (r, &y) in sino.iter().enumerate() {
            if y == 0.0 {
                continue;
            }
            let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
            for (&p, &w) in self.cols[a..b].iter().zip(&self.weights[a..b]) {
                out[p as usize] += w * y;
            }
        }
    }

    pub fn forward(&self, v: &Volume) -> Result<Sinogram> {
        self.geom.check_volume(v)?;
        let mut data = vec![0.0; self.output_len()];
        self.apply(v.data(), &mut data);
        Sinogram::from_vec(self.geom.dims[0], self.geom.angles.clone(), self.geom.n_det, data)
    }

    pub fn adjoint(&self, s: &Sinogram) -> Result<Volume> {
        self.geom.check_sinogram(s)?;
        let mut data = vec![0.0; self.input_len()];
        self.apply_adjoint(s.data(), &mut data);
        Volume::from_vec(self.geom.dims, self.geom.spacing, data)
    }
}

impl LinearMap for Projector {
    fn input_len(&self) -> usize {
        self.geom.dims[0] * self.slice_len()
    }

    fn output_len(&self) -> usize {
        self.geom.dims[0] * self.rays_per_slice()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let (n, m) = (self.slice_len(), self.rays_per_slice());
        for (img, sino) in x.chunks_exact(n).zip(out.chunks_exact_mut(m)) {
            self.forward_slice(img, sino);
        }
    }

    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        let (n, m) = (self.slice_len(), self.rays_per_slice());
        for (sino, img) in y.chunks_exact(m).zip(out.chunks_exact_mut(n)) {
            self.adjoint_slice(sino, img);
        }
    }
}

/// `A v` for geometry `g`.
pub fn radon_forward(v: &Volume, g: &Geometry) -> Result<Sinogram> {
    Projector::new(g)?.forward(v)
}

/// `Aᵀ s` for geometry `g`, the exact transpose of [`radon_forward`].
pub fn radon_adjoint(s: &Sinogram, g: &Geometry) -> Result<Volume> {
    Projector::new(g)?.adjoint(s)
}
