//! Noise schedule and samplers.
//!
//! Timesteps are 1-based: `t ∈ 1..=T`, with `ᾱ_0 ≡ 1` so that the last DDIM
//! hop to `t_prev = 0` lands on the predicted clean image.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl Schedule {
    /// Linearly spaced `β_1..β_T`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::invalid(format!(
                "need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
            )));
        }
        let betas: Vec<f64> = if steps == 1 {
            vec![beta_start]
        } else {
            (0..steps)
                .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
                .collect()
        };
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        Ok(Schedule {
            betas,
            alphas,
            alpha_bars,
        })
    }

    /// Total trained steps `T`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn check(&self, t: usize, min: usize) -> Result<()> {
        if t < min || t > self.steps() {
            return Err(Error::TimestepOutOfRange {
                t,
                min,
                max: self.steps(),
            });
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// Posterior standard deviation `σ_t = sqrt(β_t (1 − ᾱ_{t−1}) / (1 − ᾱ_t))`.
    pub fn ddpm_sigma(&self, t: usize) -> f64 {
        let ab = self.alpha_bar(t);
        let ab_prev = self.alpha_bar(t - 1);
        (self.beta(t) * (1.0 - ab_prev) / (1.0 - ab)).sqrt()
    }

    /// Hex SHA-256 of the β table, used to tie checkpoints to their schedule.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for b in &self.betas {
            h.update(b.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(())
}

/// `x_t = √ᾱ_t x_0 + √(1−ᾱ_t) ε`.
pub fn q_sample(x0: &[f64], t: usize, eps: &[f64], sched: &Schedule) -> Result<Vec<f64>> {
    sched.check(t, 1)?;
    same_len(x0, eps)?;
    Ok(mix(x0, eps, sched.alpha_bar(t)))
}

/// `√ᾱ x + √(1−ᾱ) ε` for an arbitrary `ᾱ`.
pub(crate) fn mix(x0: &[f64], eps: &[f64], alpha_bar: f64) -> Vec<f64> {
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect()
}

/// `x̃_0 = (x_t − √(1−ᾱ_t) ε̂) / √ᾱ_t`.
pub fn predict_x0(xt: &[f64], t: usize, eps_hat: &[f64], sched: &Schedule) -> Result<Vec<f64>> {
    sched.check(t, 1)?;
    same_len(xt, eps_hat)?;
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(xt.iter().zip(eps_hat).map(|(x, e)| (x - b * e) / a).collect())
}

/// DDIM update from `t` to `t_prev`:
/// `√ᾱ_prev x̃_0 + √(1−ᾱ_prev−σ²) ε̂ + σ ε_new`.
///
/// `noise` supplies `ε_new` and is required when `sigma > 0`.
pub fn ddim_step_with_noise(
    xt: &[f64],
    t: usize,
    t_prev: usize,
    eps_hat: &[f64],
    sched: &Schedule,
    sigma: f64,
    noise: Option<&[f64]>,
) -> Result<Vec<f64>> {
    sched.check(t, 1)?;
    if t_prev >= t {
        return Err(Error::invalid(format!("t_prev ({t_prev}) must be below t ({t})")));
    }
    let ab_prev = sched.alpha_bar(t_prev);
    if !(sigma >= 0.0) || sigma * sigma > 1.0 - ab_prev + 1e-15 {
        return Err(Error::invalid(format!(
            "sigma {sigma} outside [0, sqrt(1 - alpha_bar_prev)]"
        )));
    }
    let x0 = predict_x0(xt, t, eps_hat, sched)?;
    let a = ab_prev.sqrt();
    let b = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
    let mut out: Vec<f64> = x0.iter().zip(eps_hat).map(|(x, e)| a * x + b * e).collect();
    if sigma > 0.0 {
        let noise = noise.ok_or_else(|| Error::invalid("stochastic DDIM step needs noise"))?;
        same_len(xt, noise)?;
        for (o, n) in out.iter_mut().zip(noise) {
            *o += sigma * n;
        }
    }
    Ok(out)
}

/// [`ddim_step_with_noise`] drawing `ε_new` from `rng` when `sigma > 0`.
pub fn ddim_step(
    xt: &[f64],
    t: usize,
    t_prev: usize,
    eps_hat: &[f64],
    sched: &Schedule,
    sigma: f64,
    rng: Option<&mut Rng>,
) -> Result<Vec<f64>> {
    let noise = match (sigma > 0.0, rng) {
        (true, Some(r)) => Some(r.randn(xt.len())),
        (true, None) => return Err(Error::invalid("stochastic DDIM step needs an rng")),
        _ => None,
    };
    ddim_step_with_noise(xt, t, t_prev, eps_hat, sched, sigma, noise.as_deref())
}

/// Ancestral DDPM update with explicit noise:
/// `(x_t − β_t/√(1−ᾱ_t) ε̂)/√α_t + σ_t ε_new`, noise-free at `t = 1`.
pub fn ddpm_step_with_noise(
    xt: &[f64],
    t: usize,
    eps_hat: &[f64],
    sched: &Schedule,
    noise: &[f64],
) -> Result<Vec<f64>> {
    sched.check(t, 1)?;
    same_len(xt, eps_hat)?;
    same_len(xt, noise)?;
    let c = sched.beta(t) / (1.0 - sched.alpha_bar(t)).sqrt();
    let inv = 1.0 / sched.alpha(t).sqrt();
    let sigma = if t > 1 { sched.ddpm_sigma(t) } else { 0.0 };
    Ok(xt
        .iter()
        .zip(eps_hat)
        .zip(noise)
        .map(|((x, e), n)| (x - c * e) * inv + sigma * n)
        .collect())
}

pub fn ddpm_step(
    xt: &[f64],
    t: usize,
    eps_hat: &[f64],
    sched: &Schedule,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let noise = if t > 1 {
        rng.randn(xt.len())
    } else {
        vec![0.0; xt.len()]
    };
    ddpm_step_with_noise(xt, t, eps_hat, sched, &noise)
}

/// Descending reverse-process grid `[K, K − τ, …, τ]` with
/// `τ = trained_T / infer_steps` and `K = t₀·trained_T` snapped down to a
/// multiple of `τ`.
pub fn step_grid(trained_steps: usize, infer_steps: usize, t0: f64) -> Result<Vec<usize>> {
    if infer_steps == 0 || trained_steps % infer_steps != 0 {
        return Err(Error::invalid(format!(
            "infer_steps ({infer_steps}) must divide trained steps ({trained_steps})"
        )));
    }
    if !(t0 > 0.0 && t0 < 1.0) {
        return Err(Error::invalid(format!("noise strength must lie in (0, 1), got {t0}")));
    }
    let tau = trained_steps / infer_steps;
    // The small slack keeps e.g. 0.3·1000 = 300.00000000000006 from snapping low.
    let k = ((t0 * trained_steps as f64 + 1e-9).floor() as usize / tau) * tau;
    if k == 0 {
        return Err(Error::invalid(format!(
            "noise strength {t0} is below one sampling interval ({tau} of {trained_steps})"
        )));
    }
    Ok((1..=k / tau).rev().map(|i| i * tau).collect())
}

/// Weight of the consistency error in the discrepancy-mitigation target:
/// `λ_α = min(√(ᾱ/(1−ᾱ)), λ_max)`.
pub fn dm_weight(alpha_bar: f64, lambda_max: f64) -> f64 {
    (alpha_bar / (1.0 - alpha_bar)).sqrt().min(lambda_max)
}
