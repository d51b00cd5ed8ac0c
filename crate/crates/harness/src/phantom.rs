//! Seeded synthetic volumes in `[0, 1]`.
//!
//! Coordinates are normalised to `[−1, 1]` in-plane. The slices sample a slab
//! of half-thickness `0.25` in `z` whose centre is jittered per seed.

use cddm::{Rng, Volume};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhantomKind {
    Shepp3d,
    Blobs,
    Shells,
}

impl PhantomKind {
    pub fn name(self) -> &'static str {
        match self {
            PhantomKind::Shepp3d => "shepp3d",
            PhantomKind::Blobs => "blobs",
            PhantomKind::Shells => "shells",
        }
    }
}

impl std::str::FromStr for PhantomKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "shepp3d" => Ok(PhantomKind::Shepp3d),
            "blobs" => Ok(PhantomKind::Blobs),
            "shells" => Ok(PhantomKind::Shells),
            other => Err(format!("unknown phantom kind {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub dims: [usize; 3],
    pub seed: u64,
}

#[derive(Clone, Copy, Debug)]
struct Ellipsoid {
    value: f64,
    axes: [f64; 3],
    center: [f64; 3],
    /// In-plane rotation, radians.
    phi: f64,
}

impl Ellipsoid {
    fn contains(&self, p: [f64; 3]) -> bool {
        let (s, c) = self.phi.sin_cos();
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        let w = p[2] - self.center[2];
        (u / self.axes[0]).powi(2) + (v / self.axes[1]).powi(2) + (w / self.axes[2]).powi(2) <= 1.0
    }
}

/// Additive 3D Shepp–Logan table: value, semi-axes (x, y, z), centre, angle (degrees).
const SHEPP: [(f64, [f64; 3], [f64; 3], f64); 10] = [
    (1.0, [0.69, 0.92, 0.81], [0.0, 0.0, 0.0], 0.0),
    (-0.8, [0.6624, 0.874, 0.78], [0.0, -0.0184, 0.0], 0.0),
    (-0.2, [0.11, 0.31, 0.22], [0.22, 0.0, 0.0], -18.0),
    (-0.2, [0.16, 0.41, 0.28], [-0.22, 0.0, 0.0], 18.0),
    (0.1, [0.21, 0.25, 0.41], [0.0, 0.35, -0.15], 0.0),
    (0.1, [0.046, 0.046, 0.05], [0.0, 0.1, 0.25], 0.0),
    (0.1, [0.046, 0.046, 0.05], [0.0, -0.1, 0.25], 0.0),
    (0.1, [0.046, 0.023, 0.05], [-0.08, -0.605, 0.0], 0.0),
    (0.1, [0.023, 0.023, 0.02], [0.0, -0.606, 0.0], 0.0),
    (0.1, [0.023, 0.046, 0.02], [0.06, -0.605, 0.0], 0.0),
];

fn jitter(rng: &mut Rng, x: f64, rel: f64) -> f64 {
    x * (1.0 + rng.uniform_range(-rel, rel))
}

fn shepp(rng: &mut Rng) -> (Vec<Ellipsoid>, bool) {
    // The skull pair scales together; inner features move independently.
    let skull = rng.uniform_range(0.92, 1.05);
    let shapes = SHEPP
        .iter()
        .enumerate()
        .map(|(i, &(value, axes, center, deg))| {
            if i < 2 {
                return Ellipsoid {
                    value,
                    axes: axes.map(|a| a * skull),
                    center,
                    phi: 0.0,
                };
            }
            Ellipsoid {
                value: jitter(rng, value, 0.3),
                axes: axes.map(|a| jitter(rng, a, 0.2)),
                center: center.map(|c| c + rng.uniform_range(-0.06, 0.06)),
                phi: (deg + rng.uniform_range(-10.0, 10.0)).to_radians(),
            }
        })
        .collect();
    (shapes, true)
}

fn blobs(rng: &mut Rng) -> (Vec<Ellipsoid>, bool) {
    let body = Ellipsoid {
        value: rng.uniform_range(0.15, 0.35),
        axes: [rng.uniform_range(0.7, 0.9), rng.uniform_range(0.6, 0.9), 2.0],
        center: [0.0; 3],
        phi: rng.uniform_range(-0.3, 0.3),
    };
    let mut shapes = vec![body];
    for _ in 0..4 + rng.below(5) {
        let r = rng.uniform_range(0.08, 0.3);
        shapes.push(Ellipsoid {
            value: rng.uniform_range(0.4, 1.0),
            axes: [r * rng.uniform_range(0.6, 1.4), r * rng.uniform_range(0.6, 1.4), r * 2.0],
            center: [
                rng.uniform_range(-0.45, 0.45),
                rng.uniform_range(-0.45, 0.45),
                rng.uniform_range(-0.2, 0.2),
            ],
            phi: rng.uniform_range(0.0, std::f64::consts::PI),
        });
    }
    (shapes, false)
}

fn shells(rng: &mut Rng) -> (Vec<Ellipsoid>, bool) {
    let mut shapes = Vec::new();
    let mut r = rng.uniform_range(0.8, 0.92);
    let aspect = rng.uniform_range(0.75, 1.0);
    let center = [rng.uniform_range(-0.05, 0.05), rng.uniform_range(-0.05, 0.05), 0.0];
    let phi = rng.uniform_range(0.0, std::f64::consts::PI);
    for _ in 0..2 + rng.below(3) {
        if r < 0.15 {
            break;
        }
        let shell = rng.uniform_range(0.5, 1.0);
        let fill = rng.uniform_range(0.05, 0.35);
        let thick = rng.uniform_range(0.06, 0.14);
        for (value, rr) in [(shell, r), (fill, r - thick)] {
            shapes.push(Ellipsoid {
                value,
                axes: [rr, rr * aspect, rr * 1.5],
                center,
                phi,
            });
        }
        r -= thick + rng.uniform_range(0.08, 0.2);
    }
    (shapes, false)
}

/// Deterministic for a fixed spec. Shepp–Logan values add up; blob and shell
/// values paint over earlier shapes.
pub fn make_phantom(spec: &PhantomSpec) -> Volume {
    let mut rng = Rng::with_stream(spec.seed, spec.kind as u64);
    let (shapes, additive) = match spec.kind {
        PhantomKind::Shepp3d => shepp(&mut rng),
        PhantomKind::Blobs => blobs(&mut rng),
        PhantomKind::Shells => shells(&mut rng),
    };
    let z_center = rng.uniform_range(-0.1, 0.1);
    let [nz, ny, nx] = spec.dims;
    let mut v = Volume::zeros(spec.dims, [1.0; 3]);
    let coord = |i: usize, n: usize| (i as f64 + 0.5) / n as f64 * 2.0 - 1.0;
    for z in 0..nz {
        let pz = z_center + ((z as f64 + 0.5) / nz as f64 - 0.5) * 0.5;
        for y in 0..ny {
            for x in 0..nx {
                // Image rows run top to bottom.
                let p = [coord(x, nx), -coord(y, ny), pz];
                let mut value = 0.0;
                for e in &shapes {
                    if e.contains(p) {
                        value = if additive { value + e.value } else { e.value };
                    }
                }
                v.set(z, y, x, value.clamp(0.0, 1.0));
            }
        }
    }
    v
}
