//! Dense scalar grids shared by every other module.
//!
//! Volumes are stored z-major (`slice, row, column`) so that slice-wise
//! operators read contiguous memory.

mod io;
mod rng;

pub use io::{load_raw, save_raw, RawHeader};
pub use rng::{randn, Rng};

use crate::error::{Error, Result};

/// 3D scalar attenuation grid with dims `(nz, ny, nx)` and voxel spacing in mm.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    data: Vec<f64>,
    dims: [usize; 3],
    spacing: [f64; 3],
}

impl Volume {
    pub fn zeros(dims: [usize; 3], spacing: [f64; 3]) -> Self {
        Volume {
            data: vec![0.0; dims.iter().product()],
            dims,
            spacing,
        }
    }

    pub fn from_vec(dims: [usize; 3], spacing: [f64; 3], data: Vec<f64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if data.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: data.len(),
            });
        }
        Ok(Volume {
            data,
            dims,
            spacing,
        })
    }

    /// A volume with the same dims and spacing as `self` but new contents.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Volume::from_vec(self.dims, self.spacing, data)
    }

    pub fn zeros_like(&self) -> Self {
        Volume::zeros(self.dims, self.spacing)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn nz(&self) -> usize {
        self.dims[0]
    }

    pub fn ny(&self) -> usize {
        self.dims[1]
    }

    pub fn nx(&self) -> usize {
        self.dims[2]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[2] + x
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(z, y, x)]
    }

    #[inline]
    pub fn set(&mut self, z: usize, y: usize, x: usize, value: f64) {
        let i = self.index(z, y, x);
        self.data[i] = value;
    }

    pub fn slice(&self, z: usize) -> &[f64] {
        let n = self.dims[1] * self.dims[2];
        &self.data[z * n..(z + 1) * n]
    }

    pub fn slice_mut(&mut self, z: usize) -> &mut [f64] {
        let n = self.dims[1] * self.dims[2];
        &mut self.data[z * n..(z + 1) * n]
    }

    /// Copy of slice `z` as a single-slice volume.
    pub fn extract_slice(&self, z: usize) -> Volume {
        Volume {
            data: self.slice(z).to_vec(),
            dims: [1, self.dims[1], self.dims[2]],
            spacing: self.spacing,
        }
    }

    /// Stack single-slice volumes along z. All slices must share in-plane dims.
    pub fn stack(slices: &[Volume]) -> Result<Volume> {
        let first = slices
            .first()
            .ok_or_else(|| Error::invalid("cannot stack zero slices"))?;
        let mut data = Vec::with_capacity(first.len() * slices.len());
        let mut nz = 0;
        for s in slices {
            if s.dims[1..] != first.dims[1..] {
                return Err(Error::DimMismatch {
                    what: "stacked slice",
                    expected: first.dims.to_vec(),
                    actual: s.dims.to_vec(),
                });
            }
            nz += s.dims[0];
            data.extend_from_slice(&s.data);
        }
        Volume::from_vec([nz, first.dims[1], first.dims[2]], first.spacing, data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Volume {
        Volume {
            data: self.data.iter().map(|&v| f(v)).collect(),
            dims: self.dims,
            spacing: self.spacing,
        }
    }

    pub fn ensure_same_dims(&self, other: &Volume, what: &'static str) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::DimMismatch {
                what,
                expected: self.dims.to_vec(),
                actual: other.dims.to_vec(),
            });
        }
        Ok(())
    }
}

/// Per-slice projection data with dims `(nz, n_views, n_det)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram {
    data: Vec<f64>,
    dims: [usize; 3],
    angles: Vec<f64>,
}

impl Sinogram {
    pub fn zeros(nz: usize, angles: Vec<f64>, n_det: usize) -> Result<Self> {
        validate_angles(&angles)?;
        let dims = [nz, angles.len(), n_det];
        Ok(Sinogram {
            data: vec![0.0; dims.iter().product()],
            dims,
            angles,
        })
    }

    pub fn from_vec(nz: usize, angles: Vec<f64>, n_det: usize, data: Vec<f64>) -> Result<Self> {
        validate_angles(&angles)?;
        let dims = [nz, angles.len(), n_det];
        let n: usize = dims.iter().product();
        if data.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: data.len(),
            });
        }
        Ok(Sinogram { data, dims, angles })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn slice(&self, z: usize) -> &[f64] {
        let n = self.dims[1] * self.dims[2];
        &self.data[z * n..(z + 1) * n]
    }

    pub fn extract_slice(&self, z: usize) -> Sinogram {
        Sinogram {
            data: self.slice(z).to_vec(),
            dims: [1, self.dims[1], self.dims[2]],
            angles: self.angles.clone(),
        }
    }
}

fn validate_angles(angles: &[f64]) -> Result<()> {
    if angles.is_empty() {
        return Err(Error::invalid("sinogram needs at least one view"));
    }
    let in_range = angles
        .iter()
        .all(|a| a.is_finite() && *a >= 0.0 && *a < std::f64::consts::PI);
    let increasing = angles.windows(2).all(|w| w[0] < w[1]);
    if !in_range || !increasing {
        return Err(Error::invalid(
            "view angles must be strictly increasing within [0, pi)",
        ));
    }
    Ok(())
}

/// Inner product accumulated in 64-bit, sequential order.
pub fn dot(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(dot_unchecked(a, b))
}

#[inline]
pub(crate) fn dot_unchecked(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot_unchecked(a, a).sqrt()
}

/// `10 log₁₀(peak² / MSE)`; `+∞` when the inputs are identical.
pub fn psnr(x: &[f64], reference: &[f64], peak: f64) -> Result<f64> {
    if x.len() != reference.len() || x.is_empty() {
        return Err(Error::LengthMismatch {
            expected: reference.len(),
            actual: x.len(),
        });
    }
    let mse = x
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    })
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
