//! Conditional noise-prediction network `ε_θ(x_t, t, c)` over 2D slices.
//!
//! A residual convolutional stack: `conv_in` (1 → C), `blocks` residual blocks
//!
//! ```text
//! r ← r + conv₂(silu(conv₁(silu(r)) + P_b e)))
//! ```
//!
//! and `conv_out` (C → 1) after a final SiLU. The conditioning vector `e` is
//! an MLP of the sinusoidal embedding of `t` with the learned vector of the
//! label added after the first layer.

mod checkpoint;
mod layers;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Manifest};
pub use train::{
    dm_sample, mse, train_dm, train_standard, DmSample, LossRecord, LossTrace, Rmsprop,
    SliceDataset, TrainConfig,
};

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Rng, Volume};
use layers::{
    conv_backward, conv_forward, linear_backward, linear_forward, silu_backward, silu_vec, Shape,
};

/// Conditioning label: `c₁` marks the standard objective, `c₂` the
/// discrepancy-corrected one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "c1")]
    Standard,
    #[serde(rename = "c2")]
    Corrected,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Standard, Label::Corrected];

    fn index(self) -> usize {
        match self {
            Label::Standard => 0,
            Label::Corrected => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Standard => "c1",
            Label::Corrected => "c2",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub channels: usize,
    pub blocks: usize,
    pub emb_dim: usize,
    /// Largest accepted timestep.
    pub timesteps: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            channels: 32,
            blocks: 4,
            emb_dim: 64,
            timesteps: 1000,
        }
    }
}

impl NetConfig {
    /// A few hundred parameters, for gradient checks.
    pub fn tiny() -> Self {
        NetConfig {
            channels: 3,
            blocks: 2,
            emb_dim: 8,
            timesteps: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.timesteps == 0 {
            return Err(Error::invalid("channels and timesteps must be positive"));
        }
        if self.emb_dim < 2 || self.emb_dim % 2 != 0 {
            return Err(Error::invalid(format!(
                "embedding width must be even and >= 2, got {}",
                self.emb_dim
            )));
        }
        Ok(())
    }
}

/// Name, shape and flat range of one parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Debug)]
struct Dense {
    w: Range<usize>,
    b: Range<usize>,
}

#[derive(Clone, Debug)]
struct Layout {
    specs: Vec<ParamSpec>,
    time1: Dense,
    labels: Range<usize>,
    time2: Dense,
    conv_in: Dense,
    proj: Vec<Dense>,
    conv1: Vec<Dense>,
    conv2: Vec<Dense>,
    conv_out: Dense,
}

impl Layout {
    fn new(cfg: &NetConfig) -> Self {
        let (c, e) = (cfg.channels, cfg.emb_dim);
        let mut specs = Vec::new();
        let mut push = |name: String, shape: Vec<usize>| {
            let offset = specs.last().map_or(0, |s: &ParamSpec| s.offset + s.len());
            let spec = ParamSpec {
                name,
                shape,
                offset,
            };
            let r = spec.range();
            specs.push(spec);
            r
        };
        let dense = |push: &mut dyn FnMut(String, Vec<usize>) -> Range<usize>,
                     name: &str,
                     w: Vec<usize>,
                     fout: usize| Dense {
            w: push(format!("{name}.weight"), w),
            b: push(format!("{name}.bias"), vec![fout]),
        };
        let time1 = dense(&mut push, "time.0", vec![e, e], e);
        let labels = push("label".into(), vec![2, e]);
        let time2 = dense(&mut push, "time.1", vec![e, e], e);
        let conv_in = dense(&mut push, "conv_in", vec![c, 1, 3, 3], c);
        let mut proj = Vec::new();
        let mut conv1 = Vec::new();
        let mut conv2 = Vec::new();
        for b in 0..cfg.blocks {
            proj.push(dense(&mut push, &format!("block{b}.emb"), vec![c, e], c));
            conv1.push(dense(&mut push, &format!("block{b}.conv1"), vec![c, c, 3, 3], c));
            conv2.push(dense(&mut push, &format!("block{b}.conv2"), vec![c, c, 3, 3], c));
        }
        let conv_out = dense(&mut push, "conv_out", vec![1, c, 3, 3], 1);
        Layout {
            specs,
            time1,
            labels,
            time2,
            conv_in,
            proj,
            conv1,
            conv2,
            conv_out,
        }
    }

    fn len(&self) -> usize {
        self.specs.last().map_or(0, |s| s.offset + s.len())
    }
}

/// Activations kept for the backward pass.
#[derive(Clone, Debug)]
struct Tape {
    shape: Shape,
    labels: Vec<Label>,
    sin: Vec<f64>,
    h1: Vec<f64>,
    e: Vec<f64>,
    input: Vec<f64>,
    /// Residual stream entering each block, plus the final one.
    stream: Vec<Vec<f64>>,
    /// Pre-activation after `conv1` + embedding in each block.
    mid: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct EpsNet {
    config: NetConfig,
    layout: Layout,
    params: Vec<f64>,
    tape: Option<Tape>,
}

/// `[sin(t f_i), cos(t f_i)]` with `f_i = 10000^{−i/half}`.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let f = (-(10000f64).ln() * i as f64 / half as f64).exp();
        let a = t as f64 * f;
        out[i] = a.sin();
        out[half + i] = a.cos();
    }
    out
}

impl EpsNet {
    /// He-style initialisation; the second conv of each block and the output
    /// conv start scaled down so the untrained stack is close to identity.
    pub fn new(config: NetConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.len()];
        let mut fill = |r: &Range<usize>, std: f64| {
            for p in &mut params[r.clone()] {
                *p = std * rng.normal();
            }
        };
        let (c, e) = (config.channels as f64, config.emb_dim as f64);
        fill(&layout.time1.w, (1.0 / e).sqrt());
        fill(&layout.labels, 1.0);
        fill(&layout.time2.w, (1.0 / e).sqrt());
        fill(&layout.conv_in.w, (2.0 / 9.0f64).sqrt());
        for b in 0..config.blocks {
            fill(&layout.proj[b].w, (1.0 / e).sqrt());
            fill(&layout.conv1[b].w, (2.0 / (9.0 * c)).sqrt());
            fill(&layout.conv2[b].w, 0.1 * (2.0 / (9.0 * c)).sqrt());
        }
        fill(&layout.conv_out.w, 0.1 * (1.0 / (9.0 * c)).sqrt());
        Ok(EpsNet {
            config,
            layout,
            params,
            tape: None,
        })
    }

    /// Rebuilds a network from a flat parameter vector.
    pub fn from_params(config: NetConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.len() {
            return Err(Error::LengthMismatch {
                expected: layout.len(),
                actual: params.len(),
            });
        }
        Ok(EpsNet {
            config,
            layout,
            params,
            tape: None,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.layout.specs
    }

    fn p(&self, r: &Range<usize>) -> &[f64] {
        &self.params[r.clone()]
    }

    fn check(&self, x: &[f64], h: usize, w: usize, ts: &[usize], labels: &[Label]) -> Result<Shape> {
        if ts.is_empty() || ts.len() != labels.len() {
            return Err(Error::invalid(format!(
                "need one timestep and one label per slice, got {} and {}",
                ts.len(),
                labels.len()
            )));
        }
        if h == 0 || w == 0 {
            return Err(Error::invalid("slices must be non-empty"));
        }
        let shape = Shape {
            batch: ts.len(),
            h,
            w,
        };
        if x.len() != shape.n() {
            return Err(Error::DimMismatch {
                what: "network input",
                expected: vec![shape.batch, h, w],
                actual: vec![x.len()],
            });
        }
        for &t in ts {
            if t == 0 || t > self.config.timesteps {
                return Err(Error::TimestepOutOfRange {
                    t,
                    min: 1,
                    max: self.config.timesteps,
                });
            }
        }
        Ok(shape)
    }

    fn run(
        &self,
        x: &[f64],
        h: usize,
        w: usize,
        ts: &[usize],
        labels: &[Label],
        record: bool,
    ) -> Result<(Vec<f64>, Option<Tape>)> {
        let shape = self.check(x, h, w, ts, labels)?;
        let (c, e, l) = (self.config.channels, self.config.emb_dim, &self.layout);
        let (n, px) = (shape.n(), shape.pixels());

        let sin: Vec<f64> = ts.iter().flat_map(|&t| time_embedding(t, e)).collect();
        let mut h1 = linear_forward(self.p(&l.time1.w), self.p(&l.time1.b), &sin, e, e);
        for (row, lab) in h1.chunks_exact_mut(e).zip(labels) {
            let v = &self.params[l.labels.start + lab.index() * e..][..e];
            row.iter_mut().zip(v).for_each(|(a, b)| *a += b);
        }
        let e_vec = linear_forward(self.p(&l.time2.w), self.p(&l.time2.b), &silu_vec(&h1), e, e);
        let se = silu_vec(&e_vec);

        let mut r = conv_forward(self.p(&l.conv_in.w), self.p(&l.conv_in.b), x, 1, c, shape);
        let mut stream = Vec::new();
        let mut mid = Vec::new();
        for b in 0..self.config.blocks {
            let proj = linear_forward(self.p(&l.proj[b].w), self.p(&l.proj[b].b), &se, e, c);
            let mut u = conv_forward(
                self.p(&l.conv1[b].w),
                self.p(&l.conv1[b].b),
                &silu_vec(&r),
                c,
                c,
                shape,
            );
            for ch in 0..c {
                for s in 0..shape.batch {
                    let add = proj[s * c + ch];
                    u[ch * n + s * px..][..px].iter_mut().for_each(|v| *v += add);
                }
            }
            let dr = conv_forward(
                self.p(&l.conv2[b].w),
                self.p(&l.conv2[b].b),
                &silu_vec(&u),
                c,
                c,
                shape,
            );
            let next: Vec<f64> = r.iter().zip(&dr).map(|(a, b)| a + b).collect();
            if record {
                stream.push(r);
                mid.push(u);
            }
            r = next;
        }
        let out = conv_forward(
            self.p(&l.conv_out.w),
            self.p(&l.conv_out.b),
            &silu_vec(&r),
            c,
            1,
            shape,
        );
        let tape = record.then(|| {
            stream.push(r);
            Tape {
                shape,
                labels: labels.to_vec(),
                sin,
                h1,
                e: e_vec,
                input: x.to_vec(),
                stream,
                mid,
            }
        });
        Ok((out, tape))
    }

    /// Predicts noise for a batch of `ts.len()` slices of `h × w`, stored
    /// back to back in `x`.
    pub fn forward(
        &self,
        x: &[f64],
        h: usize,
        w: usize,
        ts: &[usize],
        labels: &[Label],
    ) -> Result<Vec<f64>> {
        Ok(self.run(x, h, w, ts, labels, false)?.0)
    }

    /// [`forward`](Self::forward) that also records activations for
    /// [`backward`](Self::backward).
    pub fn forward_train(
        &mut self,
        x: &[f64],
        h: usize,
        w: usize,
        ts: &[usize],
        labels: &[Label],
    ) -> Result<Vec<f64>> {
        let (out, tape) = self.run(x, h, w, ts, labels, true)?;
        self.tape = tape;
        Ok(out)
    }

    /// Slice-wise prediction over a volume, every slice at the same `t`.
    pub fn predict(&self, x: &Volume, t: usize, label: Label) -> Result<Vec<f64>> {
        let nz = x.nz();
        self.forward(x.data(), x.ny(), x.nx(), &vec![t; nz], &vec![label; nz])
    }

    /// Gradient of a scalar loss with respect to every parameter, given the
    /// loss gradient at the output of the last [`forward_train`](Self::forward_train).
    /// Consumes the recorded activations.
    pub fn backward(&mut self, d_out: &[f64]) -> Result<Vec<f64>> {
        let tape = self.tape.take().ok_or(Error::NoForwardPass)?;
        let shape = tape.shape;
        if d_out.len() != shape.n() {
            return Err(Error::LengthMismatch {
                expected: shape.n(),
                actual: d_out.len(),
            });
        }
        let (c, e, l) = (self.config.channels, self.config.emb_dim, &self.layout);
        let (n, px) = (shape.n(), shape.pixels());
        let mut grad = vec![0.0; self.params.len()];

        let (gw, gb) = split_pair(&mut grad, &l.conv_out);
        let last = &tape.stream[self.config.blocks];
        let mut dr = conv_backward(
            self.p(&l.conv_out.w),
            &silu_vec(last),
            d_out,
            c,
            1,
            shape,
            gw,
            gb,
            true,
        )
        .expect("input gradient requested");
        silu_backward(last, &mut dr);

        let se = silu_vec(&tape.e);
        let mut d_se = vec![0.0; se.len()];
        for b in (0..self.config.blocks).rev() {
            let u = &tape.mid[b];
            let (gw, gb) = split_pair(&mut grad, &l.conv2[b]);
            let mut du = conv_backward(
                self.p(&l.conv2[b].w),
                &silu_vec(u),
                &dr,
                c,
                c,
                shape,
                gw,
                gb,
                true,
            )
            .expect("input gradient requested");
            silu_backward(u, &mut du);

            let mut d_proj = vec![0.0; shape.batch * c];
            for ch in 0..c {
                for s in 0..shape.batch {
                    d_proj[s * c + ch] = du[ch * n + s * px..][..px].iter().sum();
                }
            }
            let (gw, gb) = split_pair(&mut grad, &l.proj[b]);
            let d = linear_backward(self.p(&l.proj[b].w), &se, &d_proj, e, c, gw, gb);
            d_se.iter_mut().zip(&d).for_each(|(a, b)| *a += b);

            let r = &tape.stream[b];
            let (gw, gb) = split_pair(&mut grad, &l.conv1[b]);
            let mut da = conv_backward(
                self.p(&l.conv1[b].w),
                &silu_vec(r),
                &du,
                c,
                c,
                shape,
                gw,
                gb,
                true,
            )
            .expect("input gradient requested");
            silu_backward(r, &mut da);
            dr.iter_mut().zip(&da).for_each(|(a, b)| *a += b);
        }
        let (gw, gb) = split_pair(&mut grad, &l.conv_in);
        conv_backward(self.p(&l.conv_in.w), &tape.input, &dr, 1, c, shape, gw, gb, false);

        silu_backward(&tape.e, &mut d_se);
        let (gw, gb) = split_pair(&mut grad, &l.time2);
        let mut dh1 = linear_backward(self.p(&l.time2.w), &silu_vec(&tape.h1), &d_se, e, e, gw, gb);
        silu_backward(&tape.h1, &mut dh1);
        for (row, lab) in dh1.chunks_exact(e).zip(&tape.labels) {
            let g = &mut grad[l.labels.start + lab.index() * e..][..e];
            g.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        }
        let (gw, gb) = split_pair(&mut grad, &l.time1);
        linear_backward(self.p(&l.time1.w), &tape.sin, &dh1, e, e, gw, gb);
        Ok(grad)
    }
}

/// Disjoint mutable views of a layer's weight and bias gradients.
fn split_pair<'a>(grad: &'a mut [f64], d: &Dense) -> (&'a mut [f64], &'a mut [f64]) {
    debug_assert_eq!(d.w.end, d.b.start);
    let (w, b) = grad[d.w.start..d.b.end].split_at_mut(d.w.len());
    (w, b)
}
