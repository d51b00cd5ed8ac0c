//! The cascaded reconstruction loop.
//!
//! A low-quality estimate is noised to strength `t₀` and walked back to
//! `t = 0` on the grid `K, K − τ, …, τ`. Each step predicts `x̃₀`, pulls it
//! towards the measurements, re-noises it with the same predicted noise and
//! takes a deterministic DDIM hop.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::denoiser::{EpsNet, Label};
use crate::diffusion::{ddim_step, mix, predict_x0, step_grid, Schedule};
use crate::error::{Error, Result};
use crate::grid::{psnr, Rng, Sinogram, Volume};
use crate::operators::{Axis, Projector};
use crate::solvers::{
    objective_with, specialized_admm3d, AdmmConsistency, AdmmParams, Consistency, SplitAxes,
};

/// Slice-wise noise prediction over a volume.
pub trait NoisePredictor: Sync {
    fn predict(&self, x: &Volume, t: usize, label: Label) -> Result<Vec<f64>>;
}

impl NoisePredictor for EpsNet {
    fn predict(&self, x: &Volume, t: usize, label: Label) -> Result<Vec<f64>> {
        EpsNet::predict(self, x, t, label)
    }
}

/// `standard` (θ_p) serves label `c₁`; `corrected` (θ_p′) serves `c₂`.
#[derive(Clone, Copy)]
pub struct Nets<'a> {
    pub standard: &'a dyn NoisePredictor,
    pub corrected: &'a dyn NoisePredictor,
}

/// Axes penalised by the data-consistency solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Directions {
    #[serde(rename = "xyz")]
    Xyz,
    #[serde(rename = "z-only")]
    ZOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConsistencyKind {
    Specialized,
    Standard,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Initializer {
    Admm,
    /// Mean-pool the ADMM estimate in-plane by `factor`, run `steps`
    /// deterministic DDIM hops from strength `t0` at that scale, and upsample
    /// bilinearly.
    CoarseDiffusion { factor: usize, t0: f64, steps: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CddmConfig {
    pub t0: f64,
    pub infer_steps: usize,
    pub dm_enabled: bool,
    /// Profile of the initial reconstruction.
    pub low_quality: AdmmParams,
    /// Profile of the per-step consistency solve.
    pub consistency: AdmmParams,
    pub directions: Directions,
    pub kind: ConsistencyKind,
    pub initializer: Initializer,
}

impl Default for CddmConfig {
    fn default() -> Self {
        CddmConfig {
            t0: 0.5,
            infer_steps: 50,
            dm_enabled: true,
            low_quality: AdmmParams::new(1.0, 1.0, 1.0, 0.01, 20),
            consistency: AdmmParams::new(1.0, 1.0, 1.0, 0.01, 10),
            directions: Directions::Xyz,
            kind: ConsistencyKind::Specialized,
            initializer: Initializer::Admm,
        }
    }
}

impl CddmConfig {
    pub fn validate(&self, sched: &Schedule) -> Result<()> {
        step_grid(sched.steps(), self.infer_steps, self.t0)?;
        self.low_quality.validate()?;
        self.consistency.validate()?;
        if let Initializer::CoarseDiffusion { factor, t0, steps } = &self.initializer {
            if *factor == 0 {
                return Err(Error::invalid("coarse factor must be positive"));
            }
            if *steps > 0 {
                step_grid(sched.steps(), *steps, *t0)?;
            }
        }
        Ok(())
    }

    /// Axes entering the consistency objective.
    pub fn axes(&self) -> Vec<Axis> {
        match self.directions {
            Directions::Xyz => vec![Axis::X, Axis::Y, Axis::Z],
            Directions::ZOnly => vec![Axis::Z],
        }
    }

    /// The consistency solver this configuration describes.
    pub fn consistency_solver(&self) -> AdmmConsistency {
        match (self.kind, self.directions) {
            (ConsistencyKind::Specialized, Directions::Xyz) => {
                AdmmConsistency::split(self.consistency.clone(), SplitAxes::xy_z())
            }
            (ConsistencyKind::Specialized, Directions::ZOnly) => {
                AdmmConsistency::split(self.consistency.clone(), SplitAxes::z_only())
            }
            (ConsistencyKind::Standard, _) => {
                AdmmConsistency::standard(self.consistency.clone(), self.axes())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    /// PSNR of `x̃₀` before and after consistency, when a reference is given.
    pub psnr_pre: Option<f64>,
    pub psnr_post: Option<f64>,
    /// Consistency objective at `x̃₀ʳᵉᶜᵒⁿ`.
    pub objective: f64,
    pub seconds_network: f64,
    pub seconds_consistency: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReconTrace {
    /// PSNR of the initial estimate, when a reference is given.
    pub psnr_init: Option<f64>,
    pub seconds_init: f64,
    pub steps: Vec<StepRecord>,
}

impl ReconTrace {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = BufWriter::new(File::create(path)?);
        writeln!(f, "k,psnr_pre,psnr_post,objective,seconds_network,seconds_consistency")?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for s in &self.steps {
            writeln!(
                f,
                "{},{},{},{:e},{:.6},{:.6}",
                s.k,
                opt(s.psnr_pre),
                opt(s.psnr_post),
                s.objective,
                s.seconds_network,
                s.seconds_consistency
            )?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Intermediate values of one reverse step.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub eps: Vec<f64>,
    pub x0_pred: Volume,
    pub x0_recon: Volume,
    pub xk_recon: Vec<f64>,
    pub next: Volume,
    pub record: StepRecord,
}

/// Mean-pools each slice in-plane by `factor`.
pub fn downsample(v: &Volume, factor: usize) -> Result<Volume> {
    let [nz, ny, nx] = v.dims();
    if factor == 0 || ny % factor != 0 || nx % factor != 0 {
        return Err(Error::invalid(format!(
            "in-plane size {ny}x{nx} is not divisible by {factor}"
        )));
    }
    let (cy, cx) = (ny / factor, nx / factor);
    let sp = v.spacing();
    let mut out = Volume::zeros(
        [nz, cy, cx],
        [sp[0], sp[1] * factor as f64, sp[2] * factor as f64],
    );
    let norm = 1.0 / (factor * factor) as f64;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = out.index(z, y / factor, x / factor);
                out.data_mut()[i] += norm * v.get(z, y, x);
            }
        }
    }
    Ok(out)
}

/// Bilinear in-plane upsampling on cell centres with edge clamping.
pub fn upsample(v: &Volume, factor: usize) -> Result<Volume> {
    if factor == 0 {
        return Err(Error::invalid("upsampling factor must be positive"));
    }
    let [nz, cy, cx] = v.dims();
    let (ny, nx) = (cy * factor, cx * factor);
    let sp = v.spacing();
    let mut out = Volume::zeros(
        [nz, ny, nx],
        [sp[0], sp[1] / factor as f64, sp[2] / factor as f64],
    );
    let coord = |i: usize, n: usize| {
        let c = ((i as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let lo = c.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        (lo, hi, c - lo as f64)
    };
    for z in 0..nz {
        for y in 0..ny {
            let (y0, y1, fy) = coord(y, cy);
            for x in 0..nx {
                let (x0, x1, fx) = coord(x, cx);
                let top = (1.0 - fx) * v.get(z, y0, x0) + fx * v.get(z, y0, x1);
                let bottom = (1.0 - fx) * v.get(z, y1, x0) + fx * v.get(z, y1, x1);
                out.set(z, y, x, (1.0 - fy) * top + fy * bottom);
            }
        }
    }
    Ok(out)
}

/// Initial estimate: split ADMM from `Aᵀy` under the low-quality profile,
/// optionally refined by the coarse-scale sampler.
pub fn init_low_quality(
    y: &Sinogram,
    proj: &Projector,
    cfg: &CddmConfig,
    net: &dyn NoisePredictor,
    sched: &Schedule,
    rng: &mut Rng,
) -> Result<Volume> {
    let start = proj.adjoint(y)?;
    let x = specialized_admm3d(y, proj, &cfg.low_quality, &start)?;
    match &cfg.initializer {
        Initializer::Admm => Ok(x),
        Initializer::CoarseDiffusion { factor, t0, steps } => {
            let mut coarse = downsample(&x, *factor)?;
            if *steps > 0 {
                let grid = step_grid(sched.steps(), *steps, *t0)?;
                let eps = rng.randn(coarse.len());
                let mut xt = mix(coarse.data(), &eps, sched.alpha_bar(grid[0]));
                for (i, &k) in grid.iter().enumerate() {
                    let prev = grid.get(i + 1).copied().unwrap_or(0);
                    let e = net.predict(&coarse.with_data(xt.clone())?, k, Label::Standard)?;
                    xt = ddim_step(&xt, k, prev, &e, sched, 0.0, None)?;
                }
                coarse = coarse.with_data(xt)?;
            }
            upsample(&coarse, *factor)
        }
    }
}

fn elapsed(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

/// One reverse step from `x_k` to `x_{k_prev}`:
///
/// ```text
/// ε̂ = ε_θp(x_k, k, c₁),  x̃₀ = (x_k − √(1−ᾱ_k) ε̂)/√ᾱ_k
/// x̃₀ʳᵉᶜᵒⁿ = consistency(x̃₀)
/// x̃_kʳᵉᶜᵒⁿ = √ᾱ_k x̃₀ʳᵉᶜᵒⁿ + √(1−ᾱ_k) ε̂
/// x_{k_prev} = DDIM(x̃_kʳᵉᶜᵒⁿ, ε_θp′(x̃_kʳᵉᶜᵒⁿ, k, c₂))   (DM on)
///            = DDIM(x̃_kʳᵉᶜᵒⁿ, ε_θp(x̃_kʳᵉᶜᵒⁿ, k, c₁))    (DM off)
/// ```
///
/// `x̃_kʳᵉᶜᵒⁿ` is formed as `x_k + √ᾱ_k (x̃₀ʳᵉᶜᵒⁿ − x̃₀)`, which equals the
/// above and returns `x_k` exactly when the consistency step is the identity.
#[allow(clippy::too_many_arguments)]
pub fn one_step_recon(
    x_k: &Volume,
    k: usize,
    k_prev: usize,
    nets: Nets<'_>,
    y: &Sinogram,
    proj: &Projector,
    consistency: &dyn Consistency,
    sched: &Schedule,
    cfg: &CddmConfig,
    truth: Option<&Volume>,
) -> Result<StepOutput> {
    let t = Instant::now();
    let eps = nets.standard.predict(x_k, k, Label::Standard)?;
    let x0_pred = x_k.with_data(predict_x0(x_k.data(), k, &eps, sched)?)?;
    let mut seconds_network = elapsed(t);

    let t = Instant::now();
    let x0_recon = consistency.apply(proj, y, &x0_pred)?;
    if !x0_recon.is_finite() {
        return Err(Error::NonFinite {
            context: "data consistency",
            iteration: k,
        });
    }
    let seconds_consistency = elapsed(t);

    let a = sched.alpha_bar(k).sqrt();
    let xk_recon: Vec<f64> = x_k
        .data()
        .iter()
        .zip(x0_recon.data().iter().zip(x0_pred.data()))
        .map(|(x, (r, p))| x + a * (r - p))
        .collect();

    let t = Instant::now();
    let renoised = x_k.with_data(xk_recon.clone())?;
    let eps_next = if cfg.dm_enabled {
        nets.corrected.predict(&renoised, k, Label::Corrected)?
    } else {
        nets.standard.predict(&renoised, k, Label::Standard)?
    };
    let next = x_k.with_data(ddim_step(&xk_recon, k, k_prev, &eps_next, sched, 0.0, None)?)?;
    seconds_network += elapsed(t);
    if !next.is_finite() {
        return Err(Error::NonFinite {
            context: "reverse step",
            iteration: k,
        });
    }

    let score = |v: &Volume| truth.map(|g| psnr(v.data(), g.data(), 1.0)).transpose();
    let record = StepRecord {
        k,
        psnr_pre: score(&x0_pred)?,
        psnr_post: score(&x0_recon)?,
        objective: objective_with(proj, y.data(), &x0_recon, cfg.consistency.lambda, &cfg.axes()),
        seconds_network,
        seconds_consistency,
    };
    Ok(StepOutput {
        eps,
        x0_pred,
        x0_recon,
        xk_recon,
        next,
        record,
    })
}

/// Full reconstruction with the consistency solver described by `cfg`.
pub fn cddm_reconstruct(
    y: &Sinogram,
    proj: &Projector,
    nets: Nets<'_>,
    sched: &Schedule,
    cfg: &CddmConfig,
    rng: &mut Rng,
    truth: Option<&Volume>,
) -> Result<(Volume, ReconTrace)> {
    let consistency = cfg.consistency_solver();
    cddm_reconstruct_with(y, proj, nets, sched, cfg, &consistency, rng, truth)
}

/// [`cddm_reconstruct`] with an explicit consistency step.
#[allow(clippy::too_many_arguments)]
pub fn cddm_reconstruct_with(
    y: &Sinogram,
    proj: &Projector,
    nets: Nets<'_>,
    sched: &Schedule,
    cfg: &CddmConfig,
    consistency: &dyn Consistency,
    rng: &mut Rng,
    truth: Option<&Volume>,
) -> Result<(Volume, ReconTrace)> {
    cfg.validate(sched)?;
    let grid = step_grid(sched.steps(), cfg.infer_steps, cfg.t0)?;
    let t = Instant::now();
    let x_lq = init_low_quality(y, proj, cfg, nets.standard, sched, rng)?;
    let mut trace = ReconTrace {
        psnr_init: truth.map(|g| psnr(x_lq.data(), g.data(), 1.0)).transpose()?,
        seconds_init: elapsed(t),
        steps: Vec::with_capacity(grid.len()),
    };
    let eps = rng.randn(x_lq.len());
    let mut x = x_lq.with_data(mix(x_lq.data(), &eps, sched.alpha_bar(grid[0])))?;
    for (i, &k) in grid.iter().enumerate() {
        let k_prev = grid.get(i + 1).copied().unwrap_or(0);
        let out = one_step_recon(&x, k, k_prev, nets, y, proj, consistency, sched, cfg, truth)?;
        trace.steps.push(out.record);
        x = out.next;
    }
    Ok((x, trace))
}
