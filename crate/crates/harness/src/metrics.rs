//! PSNR and SSIM, per volume and per orthogonal plane.

use cddm::Volume;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Psnr {
    pub db: f64,
    /// Inputs were identical; `db` is `+∞`.
    pub identical: bool,
}

fn check_dims(x: &Volume, reference: &Volume) -> Result<()> {
    if x.dims() != reference.dims() {
        return Err(HarnessError::Core(cddm::Error::DimMismatch {
            what: "metric inputs",
            expected: reference.dims().to_vec(),
            actual: x.dims().to_vec(),
        }));
    }
    Ok(())
}

fn psnr_slice(x: &[f64], reference: &[f64], peak: f64) -> Result<Psnr> {
    if !(peak > 0.0) {
        return Err(HarnessError::Config(format!("PSNR peak must be positive, got {peak}")));
    }
    let db = cddm::grid::psnr(x, reference, peak)?;
    Ok(Psnr {
        db,
        identical: db.is_infinite(),
    })
}

/// `10 log₁₀(peak² / MSE)` over the whole volume.
pub fn psnr(x: &Volume, reference: &Volume, peak: f64) -> Result<Psnr> {
    check_dims(x, reference)?;
    psnr_slice(x.data(), reference.data(), peak)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            range: 1.0,
        }
    }
}

impl SsimParams {
    /// Same parameters with the window cut to the largest odd size that fits
    /// an `h × w` image.
    pub fn fitted(&self, h: usize, w: usize) -> SsimParams {
        let mut window = self.window.min(h).min(w);
        if window % 2 == 0 {
            window -= 1;
        }
        SsimParams { window, ..*self }
    }

    fn kernel(&self) -> Vec<f64> {
        let r = (self.window / 2) as f64;
        let g: Vec<f64> = (0..self.window)
            .map(|i| (-(i as f64 - r).powi(2) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let s: f64 = g.iter().sum();
        g.into_iter().map(|v| v / s).collect()
    }
}

/// Separable valid-mode filtering of an `h × w` image.
fn filter(img: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let m = k.len();
    let (oh, ow) = (h + 1 - m, w + 1 - m);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..m).map(|j| k[j] * img[y * w + x + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..m).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean of the local SSIM map (Gaussian window, valid positions only).
pub fn ssim(x: &[f64], reference: &[f64], h: usize, w: usize, p: &SsimParams) -> Result<f64> {
    if x.len() != h * w || reference.len() != h * w {
        return Err(HarnessError::Core(cddm::Error::LengthMismatch {
            expected: h * w,
            actual: x.len(),
        }));
    }
    if p.window == 0 || p.window % 2 == 0 || h < p.window || w < p.window {
        return Err(HarnessError::Config(format!(
            "image {h}x{w} is smaller than the {}-wide SSIM window",
            p.window
        )));
    }
    let k = p.kernel();
    let c1 = (p.k1 * p.range).powi(2);
    let c2 = (p.k2 * p.range).powi(2);
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).collect::<Vec<_>>();
    let mx = filter(x, h, w, &k);
    let my = filter(reference, h, w, &k);
    let mxx = filter(&prod(x, x), h, w, &k);
    let myy = filter(&prod(reference, reference), h, w, &k);
    let mxy = filter(&prod(x, reference), h, w, &k);
    let n = mx.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ux, uy) = (mx[i], my[i]);
        let vx = mxx[i] - ux * ux;
        let vy = myy[i] - uy * uy;
        let cxy = mxy[i] - ux * uy;
        total += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2))
            / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    Ok(total / n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    Axial,
    Coronal,
    Sagittal,
}

impl Plane {
    pub const ALL: [Plane; 3] = [Plane::Axial, Plane::Coronal, Plane::Sagittal];

    pub fn name(self) -> &'static str {
        match self {
            Plane::Axial => "axial",
            Plane::Coronal => "coronal",
            Plane::Sagittal => "sagittal",
        }
    }
}

/// Slice `i` of `plane` as a row-major image with its `(h, w)`:
/// axial `(y, x)` at fixed `z`, coronal `(z, x)` at fixed `y`, sagittal
/// `(z, y)` at fixed `x`.
pub fn plane_slice(v: &Volume, plane: Plane, i: usize) -> (Vec<f64>, usize, usize) {
    let [nz, ny, nx] = v.dims();
    match plane {
        Plane::Axial => (v.slice(i).to_vec(), ny, nx),
        Plane::Coronal => {
            let data = (0..nz).flat_map(|z| (0..nx).map(move |x| (z, x))).map(|(z, x)| v.get(z, i, x));
            (data.collect(), nz, nx)
        }
        Plane::Sagittal => {
            let data = (0..nz).flat_map(|z| (0..ny).map(move |y| (z, y))).map(|(z, y)| v.get(z, y, i));
            (data.collect(), nz, ny)
        }
    }
}

pub fn plane_count(v: &Volume, plane: Plane) -> usize {
    let [nz, ny, nx] = v.dims();
    match plane {
        Plane::Axial => nz,
        Plane::Coronal => ny,
        Plane::Sagittal => nx,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneScore {
    pub plane: Plane,
    /// Mean over slices that differ from the reference; `+∞` if none do.
    pub psnr: f64,
    pub ssim: f64,
    pub identical_slices: usize,
}

/// Per-slice PSNR (peak `ssim.range`) and SSIM averaged over each plane.
pub fn plane_metrics(x: &Volume, reference: &Volume, p: &SsimParams) -> Result<Vec<PlaneScore>> {
    check_dims(x, reference)?;
    let mut out = Vec::with_capacity(3);
    for plane in Plane::ALL {
        let n = plane_count(x, plane);
        let (mut psnr_sum, mut ssim_sum, mut identical) = (0.0, 0.0, 0);
        for i in 0..n {
            let (a, h, w) = plane_slice(x, plane, i);
            let (b, _, _) = plane_slice(reference, plane, i);
            let ps = psnr_slice(&a, &b, p.range)?;
            if ps.identical {
                identical += 1;
            } else {
                psnr_sum += ps.db;
            }
            ssim_sum += ssim(&a, &b, h, w, &p.fitted(h, w))?;
        }
        out.push(PlaneScore {
            plane,
            psnr: if identical == n {
                f64::INFINITY
            } else {
                psnr_sum / (n - identical) as f64
            },
            ssim: ssim_sum / n as f64,
            identical_slices: identical,
        });
    }
    Ok(out)
}
