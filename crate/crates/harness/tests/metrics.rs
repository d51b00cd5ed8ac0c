use cddm::{Rng, Volume};
use cddm_harness::metrics::{plane_metrics, psnr, ssim, Plane, SsimParams};
use proptest::prelude::*;

/// Window-by-window SSIM with an explicitly built 2D Gaussian.
fn ssim_direct(x: &[f64], r: &[f64], h: usize, w: usize, p: &SsimParams) -> f64 {
    let m = p.window;
    let c = (m / 2) as f64;
    let mut g = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            let d2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
            g[i * m + j] = (-d2 / (2.0 * p.sigma * p.sigma)).exp();
        }
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    let c1 = (p.k1 * p.range).powi(2);
    let c2 = (p.k2 * p.range).powi(2);
    let mut total = 0.0;
    let mut count = 0;
    for y in 0..=h - m {
        for xx in 0..=w - m {
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..m {
                for j in 0..m {
                    let k = (y + i) * w + xx + j;
                    mx += g[i * m + j] * x[k];
                    my += g[i * m + j] * r[k];
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for i in 0..m {
                for j in 0..m {
                    let k = (y + i) * w + xx + j;
                    vx += g[i * m + j] * (x[k] - mx).powi(2);
                    vy += g[i * m + j] * (r[k] - my).powi(2);
                    cxy += g[i * m + j] * (x[k] - mx) * (r[k] - my);
                }
            }
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}

#[test]
fn ssim_identity_is_exactly_one() {
    let x = Rng::new(1).randn(32 * 24);
    assert_eq!(ssim(&x, &x, 32, 24, &SsimParams::default()).unwrap(), 1.0);
}

#[test]
fn ssim_constant_offset_matches_direct_oracle() {
    let p = SsimParams::default();
    let a = vec![0.2; 16 * 16];
    let b = vec![0.7; 16 * 16];
    let fast = ssim(&a, &b, 16, 16, &p).unwrap();
    let slow = ssim_direct(&a, &b, 16, 16, &p);
    assert!((fast - slow).abs() < 1e-9, "{fast} vs {slow}");
    // Constant images: only the luminance term survives.
    let c1 = (0.01f64).powi(2);
    let lum = (2.0 * 0.2 * 0.7 + c1) / (0.04 + 0.49 + c1);
    assert!((slow - lum).abs() < 1e-9);
}

#[test]
fn ssim_random_images_match_direct_oracle() {
    let p = SsimParams::default();
    let mut rng = Rng::new(2);
    for (h, w) in [(11, 11), (16, 20), (32, 32)] {
        let a: Vec<f64> = (0..h * w).map(|_| rng.uniform()).collect();
        let b: Vec<f64> = a.iter().map(|v| v + 0.1 * rng.normal()).collect();
        let fast = ssim(&a, &b, h, w, &p).unwrap();
        let slow = ssim_direct(&a, &b, h, w, &p);
        assert!((fast - slow).abs() < 1e-9, "{h}x{w}: {fast} vs {slow}");
        let fitted = p.fitted(8, w);
        let fast = ssim(&a[..8 * w], &b[..8 * w], 8, w, &fitted).unwrap();
        let slow = ssim_direct(&a[..8 * w], &b[..8 * w], 8, w, &fitted);
        assert!((fast - slow).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn ssim_symmetric_and_bounded(seed in any::<u64>(), noise in 0.0f64..1.0) {
        let mut rng = Rng::new(seed);
        let a: Vec<f64> = (0..256).map(|_| rng.uniform()).collect();
        let b: Vec<f64> = a.iter().map(|v| v + noise * rng.normal()).collect();
        let p = SsimParams::default();
        let ab = ssim(&a, &b, 16, 16, &p).unwrap();
        let ba = ssim(&b, &a, 16, 16, &p).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&ab));
    }
}

fn random_volume(dims: [usize; 3], seed: u64) -> Volume {
    let mut rng = Rng::new(seed);
    let n = dims.iter().product();
    Volume::from_vec(dims, [1.0; 3], (0..n).map(|_| rng.uniform()).collect()).unwrap()
}

#[test]
fn identical_volumes_score_perfectly_on_every_plane() {
    let v = random_volume([12, 12, 12], 3);
    let m = plane_metrics(&v, &v, &SsimParams::default()).unwrap();
    assert_eq!(m.len(), 3);
    for s in &m {
        assert_eq!(s.ssim, 1.0);
        assert!(s.psnr.is_infinite());
        assert_eq!(s.identical_slices, 12);
    }
}

#[test]
fn single_slice_error_hits_axial_mean_hardest() {
    let r = random_volume([8, 16, 16], 4);
    let mut x = r.clone();
    for v in x.slice_mut(3) {
        *v += 0.1;
    }
    let m = plane_metrics(&x, &r, &SsimParams::default()).unwrap();
    let get = |p: Plane| m.iter().find(|s| s.plane == p).unwrap().psnr;
    assert!(get(Plane::Axial) < get(Plane::Coronal));
    assert!(get(Plane::Axial) < get(Plane::Sagittal));
    assert!((get(Plane::Axial) - 20.0).abs() < 1e-9);
}

#[test]
fn transposing_both_inputs_leaves_metrics_unchanged() {
    let r = random_volume([12, 14, 16], 5);
    let x = r.map(|v| v * 0.9 + 0.05);
    // Swap y and x in both volumes: axial stays axial, coronal and sagittal swap.
    let swap = |v: &Volume| {
        let [nz, ny, nx] = v.dims();
        let mut out = Volume::zeros([nz, nx, ny], [1.0; 3]);
        for z in 0..nz {
            for y in 0..ny {
                for xx in 0..nx {
                    out.set(z, xx, y, v.get(z, y, xx));
                }
            }
        }
        out
    };
    let p = SsimParams::default();
    let a = plane_metrics(&x, &r, &p).unwrap();
    let b = plane_metrics(&swap(&x), &swap(&r), &p).unwrap();
    assert!((a[0].psnr - b[0].psnr).abs() < 1e-9);
    assert!((a[0].ssim - b[0].ssim).abs() < 1e-9);
    assert!((a[1].psnr - b[2].psnr).abs() < 1e-9);
    assert!((a[2].ssim - b[1].ssim).abs() < 1e-9);
}

#[test]
fn whole_volume_psnr_flags_identity() {
    let v = random_volume([2, 4, 4], 6);
    assert!(psnr(&v, &v, 1.0).unwrap().identical);
    assert!(!psnr(&v.map(|x| x + 1e-3), &v, 1.0).unwrap().identical);
}
