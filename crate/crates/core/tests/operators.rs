use cddm::grid::{dot, norm2, Rng, Volume};
use cddm::operators::{radon_forward, Geometry, LinearMap, Projector};
use proptest::prelude::*;

fn disk(n: usize, r: f64, sub: usize) -> Volume {
    let mut v = Volume::zeros([1, n, n], [1.0; 3]);
    let c = (n as f64 - 1.0) / 2.0;
    for j in 0..n {
        for i in 0..n {
            let mut inside = 0;
            for a in 0..sub {
                for b in 0..sub {
                    let x = i as f64 - c - 0.5 + (a as f64 + 0.5) / sub as f64;
                    let y = j as f64 - c - 0.5 + (b as f64 + 0.5) / sub as f64;
                    if x * x + y * y <= r * r {
                        inside += 1;
                    }
                }
            }
            v.set(0, j, i, inside as f64 / (sub * sub) as f64);
        }
    }
    v
}

#[test]
fn disk_profile_matches_analytic_chord() {
    let r = 20.0;
    let g = Geometry::parallel([1, 64, 64], [1.0; 3], 16, 64, 1.0).unwrap();
    let s = radon_forward(&disk(64, r, 8), &g).unwrap();
    let mut err = 0.0;
    let mut norm = 0.0;
    for v in 0..16 {
        for k in 0..64 {
            let off = k as f64 - 31.5;
            let want = 2.0 * (r * r - off * off).max(0.0).sqrt();
            let got = s.data()[v * 64 + k];
            err += (got - want).powi(2);
            norm += want * want;
        }
    }
    let rel = (err / norm).sqrt();
    // measured 0.0085 for this configuration
    assert!(rel < 0.05, "relative L2 error {rel}");
}

#[test]
fn dot_test_across_geometries() {
    let mut rng = Rng::new(123);
    for n in [32, 64] {
        for views in [4, 8, 16] {
            let g = Geometry::parallel([1, n, n], [1.0; 3], views, n, 1.0).unwrap();
            let p = Projector::new(&g).unwrap();
            for _ in 0..20 {
                let x = rng.randn(p.input_len());
                let y = rng.randn(p.output_len());
                let mut ax = vec![0.0; p.output_len()];
                let mut aty = vec![0.0; p.input_len()];
                p.apply(&x, &mut ax);
                p.apply_adjoint(&y, &mut aty);
                let gap = (dot(&ax, &y).unwrap() - dot(&x, &aty).unwrap()).abs();
                assert!(gap / (norm2(&ax) * norm2(&y)) < 1e-10);
            }
        }
    }
}

#[test]
fn slice_permutation_commutes_with_projection() {
    let g = Geometry::parallel([4, 12, 12], [1.0; 3], 6, 12, 1.0).unwrap();
    let v = Volume::from_vec(g.dims, g.spacing, Rng::new(5).randn(4 * 144)).unwrap();
    let perm = [2, 0, 3, 1];
    let slices: Vec<_> = perm.iter().map(|&z| v.extract_slice(z)).collect();
    let pv = Volume::stack(&slices).unwrap();
    let s = radon_forward(&v, &g).unwrap();
    let ps = radon_forward(&pv, &g).unwrap();
    for (k, &z) in perm.iter().enumerate() {
        assert_eq!(ps.slice(k), s.slice(z));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn projection_is_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let g = Geometry::parallel([2, 10, 10], [1.0; 3], 5, 14, 1.0).unwrap();
        let p = Projector::new(&g).unwrap();
        let mut rng = Rng::new(seed);
        let x = rng.randn(200);
        let y = rng.randn(200);
        let combo: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let mut ax = vec![0.0; p.output_len()];
        let mut ay = vec![0.0; p.output_len()];
        let mut ac = vec![0.0; p.output_len()];
        p.apply(&x, &mut ax);
        p.apply(&y, &mut ay);
        p.apply(&combo, &mut ac);
        let diff: Vec<f64> = ac.iter().zip(ax.iter().zip(&ay)).map(|(c, (u, v))| c - (a * u + b * v)).collect();
        prop_assert!(norm2(&diff) <= 1e-12 * norm2(&ac).max(1e-300) + 1e-14);
    }
}
