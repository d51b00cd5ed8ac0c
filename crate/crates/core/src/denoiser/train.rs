use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EpsNet, Label};
use crate::diffusion::{dm_weight, mix, Schedule};
use crate::error::{Error, Result};
use crate::grid::{Rng, Sinogram, Volume};
use crate::operators::Projector;
use crate::solvers::Consistency;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Clamp on the consistency-error weight of the corrected objective.
    pub lambda_max: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub ema_decay: Option<f64>,
    /// Random flips (and transposes for square slices) of training slices.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 10_000,
            batch_size: 4,
            learning_rate: 1e-3,
            lambda_max: 1.0,
            grad_clip: 1.0,
            seed: 0,
            ema_decay: None,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(self.lambda_max > 0.0) || !(self.grad_clip > 0.0) {
            return Err(Error::invalid(
                "learning rate, lambda_max and grad_clip must be positive",
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if let Some(d) = self.ema_decay {
            if !(0.0..1.0).contains(&d) {
                return Err(Error::invalid(format!("EMA decay {d} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

/// Axial training slices of a common size.
#[derive(Clone, Debug)]
pub struct SliceDataset {
    ny: usize,
    nx: usize,
    spacing: [f64; 3],
    data: Vec<f64>,
}

impl SliceDataset {
    pub fn from_volumes(volumes: &[Volume]) -> Result<Self> {
        let first = volumes
            .first()
            .ok_or_else(|| Error::invalid("training set is empty"))?;
        let (ny, nx) = (first.ny(), first.nx());
        let mut data = Vec::new();
        for v in volumes {
            if v.ny() != ny || v.nx() != nx {
                return Err(Error::DimMismatch {
                    what: "training slice",
                    expected: vec![ny, nx],
                    actual: vec![v.ny(), v.nx()],
                });
            }
            data.extend_from_slice(v.data());
        }
        if data.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        Ok(SliceDataset {
            ny,
            nx,
            spacing: first.spacing(),
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len() / (self.ny * self.nx)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.ny, self.nx)
    }

    pub fn slice(&self, i: usize) -> &[f64] {
        let n = self.ny * self.nx;
        &self.data[i * n..(i + 1) * n]
    }

    fn draw(&self, rng: &mut Rng, augment: bool) -> Vec<f64> {
        let src = self.slice(rng.below(self.len()));
        if !augment {
            return src.to_vec();
        }
        let (ny, nx) = (self.ny, self.nx);
        let (fy, fx) = (rng.below(2) == 1, rng.below(2) == 1);
        let tr = ny == nx && rng.below(2) == 1;
        let mut out = vec![0.0; ny * nx];
        for y in 0..ny {
            for x in 0..nx {
                let sy = if fy { ny - 1 - y } else { y };
                let sx = if fx { nx - 1 - x } else { x };
                let (sy, sx) = if tr { (sx, sy) } else { (sy, sx) };
                out[y * nx + x] = src[sy * nx + sx];
            }
        }
        out
    }

    fn as_volume(&self, slice: Vec<f64>) -> Result<Volume> {
        Volume::from_vec([1, self.ny, self.nx], self.spacing, slice)
    }
}

/// Momentum-free adaptive step with global gradient-norm clipping:
/// `v ← βv + (1−β)g²`, `θ ← θ − η g / (√v̂ + ε)` with bias-corrected `v̂`.
#[derive(Clone, Debug)]
pub struct Rmsprop {
    pub lr: f64,
    pub decay: f64,
    pub eps: f64,
    sq: Vec<f64>,
    steps: i32,
}

impl Rmsprop {
    pub fn new(lr: f64, n: usize) -> Self {
        Rmsprop {
            lr,
            decay: 0.999,
            eps: 1e-8,
            sq: vec![0.0; n],
            steps: 0,
        }
    }

    /// Applies one update and returns the pre-clip gradient norm.
    pub fn step(&mut self, params: &mut [f64], grad: &mut [f64], clip: f64) -> Result<f64> {
        if params.len() != self.sq.len() || grad.len() != self.sq.len() {
            return Err(Error::LengthMismatch {
                expected: self.sq.len(),
                actual: grad.len(),
            });
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite {
                context: "gradient",
                iteration: self.steps as usize,
            });
        }
        if norm > clip {
            let s = clip / norm;
            grad.iter_mut().for_each(|g| *g *= s);
        }
        self.steps = self.steps.saturating_add(1);
        let corr = 1.0 - self.decay.powi(self.steps);
        for ((p, g), v) in params.iter_mut().zip(grad.iter()).zip(&mut self.sq) {
            *v = self.decay * *v + (1.0 - self.decay) * g * g;
            *p -= self.lr * g / ((*v / corr).sqrt() + self.eps);
        }
        Ok(norm)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub loss_standard: f64,
    pub loss_dm: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossTrace {
    pub records: Vec<LossRecord>,
}

impl LossTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Mean standard loss over `range` of record indices.
    pub fn mean_standard(&self, range: std::ops::Range<usize>) -> f64 {
        let r = &self.records[range];
        r.iter().map(|x| x.loss_standard).sum::<f64>() / r.len() as f64
    }

    pub fn mean_dm(&self, range: std::ops::Range<usize>) -> f64 {
        let r = &self.records[range];
        r.iter().filter_map(|x| x.loss_dm).sum::<f64>() / r.len() as f64
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = BufWriter::new(File::create(path)?);
        writeln!(f, "step,loss_standard,loss_dm")?;
        for r in &self.records {
            match r.loss_dm {
                Some(d) => writeln!(f, "{},{},{}", r.step, r.loss_standard, d)?,
                None => writeln!(f, "{},{},", r.step, r.loss_standard)?,
            }
        }
        f.flush()?;
        Ok(())
    }
}

/// Mean squared error per element.
pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Everything the corrected objective needs for one training sample.
#[derive(Clone, Debug)]
pub struct DmSample {
    /// `x̃₀` predicted from `x_t` with the standard label.
    pub x0_pred: Vec<f64>,
    /// `x̃₀` after data consistency.
    pub x0_recon: Vec<f64>,
    /// `Δx₀ = x̃₀ʳᵉᶜᵒⁿ − x₀`.
    pub delta: Vec<f64>,
    /// `x̃_tʳᵉᶜᵒⁿ = √ᾱ_t x̃₀ʳᵉᶜᵒⁿ + √(1−ᾱ_t) ε`.
    pub xt_recon: Vec<f64>,
    /// `ε + λ_α Δx₀`.
    pub target: Vec<f64>,
    pub weight: f64,
}

/// Builds the corrected-objective sample from a clean `x0`, its noised
/// `xt = √ᾱ x0 + √(1−ᾱ) eps` and the standard prediction `eps_hat`.
///
/// `Δx₀` is assembled as `(x̃₀ʳᵉᶜᵒⁿ − x̃₀) + √((1−ᾱ)/ᾱ)(ε − ε̂)` and
/// `x̃_tʳᵉᶜᵒⁿ` as `x_t + √ᾱ Δx₀`; both are algebraically the direct forms and
/// avoid cancellation, so an identity consistency with `ε̂ = ε` gives
/// `Δx₀ = 0` and `x̃_tʳᵉᶜᵒⁿ = x_t` exactly.
#[allow(clippy::too_many_arguments)]
pub fn dm_sample(
    x0: &Volume,
    xt: &[f64],
    eps: &[f64],
    eps_hat: &[f64],
    t: usize,
    sched: &Schedule,
    lambda_max: f64,
    proj: &Projector,
    y: &Sinogram,
    consistency: &dyn Consistency,
) -> Result<DmSample> {
    let n = x0.len();
    for len in [xt.len(), eps.len(), eps_hat.len()] {
        if len != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: len,
            });
        }
    }
    let x0_pred = crate::diffusion::predict_x0(xt, t, eps_hat, sched)?;
    let ab = sched.alpha_bar(t);
    let (a, ratio) = (ab.sqrt(), ((1.0 - ab) / ab).sqrt());
    let recon = consistency.apply(proj, y, &x0.with_data(x0_pred.clone())?)?;
    if !recon.is_finite() {
        return Err(Error::NonFinite {
            context: "data consistency",
            iteration: t,
        });
    }
    let x0_recon = recon.into_data();
    let delta: Vec<f64> = (0..n)
        .map(|i| (x0_recon[i] - x0_pred[i]) + ratio * (eps[i] - eps_hat[i]))
        .collect();
    let xt_recon: Vec<f64> = xt.iter().zip(&delta).map(|(x, d)| x + a * d).collect();
    let weight = dm_weight(ab, lambda_max);
    let target = eps.iter().zip(&delta).map(|(e, d)| e + weight * d).collect();
    Ok(DmSample {
        x0_pred,
        x0_recon,
        delta,
        xt_recon,
        target,
        weight,
    })
}

fn check_schedule(net: &EpsNet, sched: &Schedule) -> Result<()> {
    if net.config().timesteps != sched.steps() {
        return Err(Error::invalid(format!(
            "network expects {} timesteps, schedule has {}",
            net.config().timesteps,
            sched.steps()
        )));
    }
    Ok(())
}

struct Noised {
    x0: Vec<Vec<f64>>,
    ts: Vec<usize>,
    eps: Vec<f64>,
    xt: Vec<f64>,
}

fn draw_batch(data: &SliceDataset, sched: &Schedule, cfg: &TrainConfig, rng: &mut Rng) -> Noised {
    let n = data.ny * data.nx;
    let mut out = Noised {
        x0: Vec::with_capacity(cfg.batch_size),
        ts: Vec::with_capacity(cfg.batch_size),
        eps: Vec::with_capacity(cfg.batch_size * n),
        xt: Vec::with_capacity(cfg.batch_size * n),
    };
    for _ in 0..cfg.batch_size {
        let x0 = data.draw(rng, cfg.augment);
        let t = 1 + rng.below(sched.steps());
        let eps = rng.randn(n);
        out.xt.extend(mix(&x0, &eps, sched.alpha_bar(t)));
        out.eps.extend(eps);
        out.ts.push(t);
        out.x0.push(x0);
    }
    out
}

/// One gradient step on `mse(ε_θ(x, t, label), target)`; returns the loss
/// and the prediction made before the step.
#[allow(clippy::too_many_arguments)]
fn fit_step(
    net: &mut EpsNet,
    opt: &mut Rmsprop,
    x: &[f64],
    (h, w): (usize, usize),
    ts: &[usize],
    label: Label,
    target: &[f64],
    clip: f64,
    step: usize,
    context: &'static str,
) -> Result<(f64, Vec<f64>)> {
    let labels = vec![label; ts.len()];
    let pred = net.forward_train(x, h, w, ts, &labels)?;
    let loss = mse(&pred, target);
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context,
            iteration: step,
        });
    }
    let scale = 2.0 / pred.len() as f64;
    let d: Vec<f64> = pred.iter().zip(target).map(|(p, t)| scale * (p - t)).collect();
    let mut g = net.backward(&d)?;
    opt.step(net.params_mut(), &mut g, clip)?;
    Ok((loss, pred))
}

struct Ema(Option<(f64, Vec<f64>)>);

impl Ema {
    fn new(cfg: &TrainConfig, net: &EpsNet) -> Self {
        Ema(cfg.ema_decay.map(|d| (d, net.params().to_vec())))
    }

    fn update(&mut self, net: &EpsNet) {
        if let Some((d, avg)) = &mut self.0 {
            for (a, p) in avg.iter_mut().zip(net.params()) {
                *a = *d * *a + (1.0 - *d) * p;
            }
        }
    }

    fn finish(self, net: &mut EpsNet) {
        if let Some((_, avg)) = self.0 {
            net.params_mut().copy_from_slice(&avg);
        }
    }
}

/// Minimises `𝔼‖ε − ε_θ(√ᾱ_t x₀ + √(1−ᾱ_t) ε, t, c₁)‖²` with `t ~ U{1..T}`.
pub fn train_standard(
    net: &mut EpsNet,
    data: &SliceDataset,
    sched: &Schedule,
    cfg: &TrainConfig,
) -> Result<LossTrace> {
    cfg.validate()?;
    check_schedule(net, sched)?;
    let mut rng = Rng::with_stream(cfg.seed, 0);
    let mut opt = Rmsprop::new(cfg.learning_rate, net.num_params());
    let mut ema = Ema::new(cfg, net);
    let mut trace = LossTrace::default();
    for step in 0..cfg.steps {
        let b = draw_batch(data, sched, cfg, &mut rng);
        let (loss, _) = fit_step(
            net,
            &mut opt,
            &b.xt,
            data.dims(),
            &b.ts,
            Label::Standard,
            &b.eps,
            cfg.grad_clip,
            step,
            "standard loss",
        )?;
        ema.update(net);
        trace.records.push(LossRecord {
            step,
            loss_standard: loss,
            loss_dm: None,
        });
    }
    ema.finish(net);
    Ok(trace)
}

/// Fine-tunes a trained network for the corrected objective. Each step takes
/// a standard step with label `c₁`, reconstructs the `c₁` prediction of `x₀`
/// against `y = A x₀` through `consistency`, then takes a step on
/// `‖(ε + λ_α Δx₀) − ε_θ(x̃_tʳᵉᶜᵒⁿ, t, c₂)‖²`. The same `ε` noises both
/// inputs and the consistency output is treated as a constant.
///
/// `proj` must describe a single slice of the dataset's size.
pub fn train_dm(
    net: &mut EpsNet,
    data: &SliceDataset,
    sched: &Schedule,
    proj: &Projector,
    consistency: &dyn Consistency,
    cfg: &TrainConfig,
) -> Result<LossTrace> {
    cfg.validate()?;
    check_schedule(net, sched)?;
    let g = proj.geometry();
    if g.dims != [1, data.ny, data.nx] {
        return Err(Error::DimMismatch {
            what: "training projector",
            expected: vec![1, data.ny, data.nx],
            actual: g.dims.to_vec(),
        });
    }
    let n = data.ny * data.nx;
    let mut rng = Rng::with_stream(cfg.seed, 1);
    let mut opt = Rmsprop::new(cfg.learning_rate, net.num_params());
    let mut ema = Ema::new(cfg, net);
    let mut trace = LossTrace::default();
    for step in 0..cfg.steps {
        let b = draw_batch(data, sched, cfg, &mut rng);
        let (loss_std, eps_hat) = fit_step(
            net,
            &mut opt,
            &b.xt,
            data.dims(),
            &b.ts,
            Label::Standard,
            &b.eps,
            cfg.grad_clip,
            step,
            "standard loss",
        )?;
        let mut xt_recon = Vec::with_capacity(b.xt.len());
        let mut target = Vec::with_capacity(b.xt.len());
        for (i, (x0, &t)) in b.x0.iter().zip(&b.ts).enumerate() {
            let r = i * n..(i + 1) * n;
            let x0 = data.as_volume(x0.clone())?;
            let y = proj.forward(&x0)?;
            let s = dm_sample(
                &x0,
                &b.xt[r.clone()],
                &b.eps[r.clone()],
                &eps_hat[r],
                t,
                sched,
                cfg.lambda_max,
                proj,
                &y,
                consistency,
            )?;
            xt_recon.extend(s.xt_recon);
            target.extend(s.target);
        }
        let (loss_dm, _) = fit_step(
            net,
            &mut opt,
            &xt_recon,
            data.dims(),
            &b.ts,
            Label::Corrected,
            &target,
            cfg.grad_clip,
            step,
            "corrected loss",
        )?;
        ema.update(net);
        trace.records.push(LossRecord {
            step,
            loss_standard: loss_std,
            loss_dm: Some(loss_dm),
        });
    }
    ema.finish(net);
    Ok(trace)
}
