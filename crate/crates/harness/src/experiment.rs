//! Training, per-cell reconstruction and report emission.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use cddm::denoiser::{
    load_checkpoint, save_checkpoint, train_dm, train_standard, EpsNet, LossTrace, SliceDataset,
};
use cddm::diffusion::Schedule;
use cddm::operators::Projector;
use cddm::pipeline::{cddm_reconstruct, ConsistencyKind, Directions, Nets, ReconTrace};
use cddm::solvers::{specialized_admm3d, standard_admm, AdmmConsistency, SplitAxes};
use cddm::{grid::save_raw, Rng, Sinogram, Volume};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{derive_seed, tags, Config, Method};
use crate::error::{HarnessError, Result};
use crate::metrics::{plane_metrics, plane_slice, Plane, SsimParams};
use crate::phantom::{make_phantom, PhantomSpec};

/// `θ_p` (standard objective only) and `θ_p′` (after corrected fine-tuning).
#[derive(Clone, Debug)]
pub struct Networks {
    pub standard: EpsNet,
    pub corrected: EpsNet,
}

impl Networks {
    pub fn nets(&self) -> Nets<'_> {
        Nets {
            standard: &self.standard,
            corrected: &self.corrected,
        }
    }
}

pub fn training_phantoms(cfg: &Config) -> Vec<Volume> {
    (0..cfg.data.train_phantoms)
        .map(|i| {
            let kind = cfg.data.train_kinds[i % cfg.data.train_kinds.len()];
            make_phantom(&PhantomSpec {
                kind,
                dims: cfg.geometry.dims(),
                seed: derive_seed(cfg.seed, tags::TRAIN_PHANTOM, i as u64),
            })
        })
        .collect()
}

pub fn eval_specs(cfg: &Config) -> Vec<PhantomSpec> {
    (0..cfg.data.eval_phantoms)
        .map(|i| PhantomSpec {
            kind: cfg.data.eval_kind,
            dims: cfg.geometry.dims(),
            seed: derive_seed(cfg.seed, tags::EVAL_PHANTOM, i as u64),
        })
        .collect()
}

pub fn fresh_network(cfg: &Config) -> Result<EpsNet> {
    let mut rng = Rng::new(derive_seed(cfg.seed, tags::NET_INIT, 0));
    Ok(EpsNet::new(cfg.net_config(), &mut rng)?)
}

/// Standard training on the configured training phantoms.
pub fn train_base(cfg: &Config, sched: &Schedule) -> Result<(EpsNet, LossTrace)> {
    let data = SliceDataset::from_volumes(&training_phantoms(cfg))?;
    let mut net = fresh_network(cfg)?;
    let trace = train_standard(&mut net, &data, sched, &cfg.train_config())?;
    Ok((net, trace))
}

/// Corrected fine-tuning of a copy of `base` with single-slice split ADMM.
pub fn fine_tune(cfg: &Config, sched: &Schedule, base: &EpsNet) -> Result<(EpsNet, LossTrace)> {
    let data = SliceDataset::from_volumes(&training_phantoms(cfg))?;
    let proj = Projector::new(&cfg.geometry.geometry(1)?)?;
    let consistency = AdmmConsistency::split(cfg.profiles.training.clone(), SplitAxes::x_y());
    let mut net = base.clone();
    let trace = train_dm(&mut net, &data, sched, &proj, &consistency, &cfg.train_dm_config())?;
    Ok((net, trace))
}

/// Loads the configured checkpoints or trains both networks, saving
/// checkpoints and loss traces under `out`.
pub fn load_or_train(cfg: &Config, sched: &Schedule, out: &Path) -> Result<Networks> {
    let exp = &cfg.experiment;
    let standard = match &exp.checkpoint {
        Some(p) => load_checkpoint(p, sched)?,
        None => {
            let (net, trace) = train_base(cfg, sched)?;
            fs::create_dir_all(out)?;
            trace.write_csv(out.join("loss_standard.csv"))?;
            let path = out.join("eps_standard.bin");
            save_checkpoint(&net, sched, &path)?;
            // Continue from the stored (f32) weights so reruns from checkpoints match.
            load_checkpoint(&path, sched)?
        }
    };
    let corrected = match &exp.checkpoint_dm {
        Some(p) => load_checkpoint(p, sched)?,
        None => {
            let (net, trace) = fine_tune(cfg, sched, &standard)?;
            fs::create_dir_all(out)?;
            trace.write_csv(out.join("loss_dm.csv"))?;
            let path = out.join("eps_dm.bin");
            save_checkpoint(&net, sched, &path)?;
            // Continue from the stored (f32) weights so reruns from checkpoints match.
            load_checkpoint(&path, sched)?
        }
    };
    Ok(Networks {
        standard,
        corrected,
    })
}

/// ADMM baseline: split or standard ADMM from `Aᵀy` under the low-quality profile.
pub fn recon_admm(cfg: &Config, y: &Sinogram, proj: &Projector, standard: bool) -> Result<Volume> {
    let start = proj.adjoint(y)?;
    let p = &cfg.profiles.low_quality;
    Ok(if standard {
        standard_admm(y, proj, p, &start)?
    } else {
        specialized_admm3d(y, proj, p, &start)?
    })
}

/// One method on one measurement. `t0` overrides the sampler strength.
#[allow(clippy::too_many_arguments)]
pub fn run_method(
    cfg: &Config,
    sched: &Schedule,
    method: Method,
    y: &Sinogram,
    proj: &Projector,
    nets: Option<&Networks>,
    t0: Option<f64>,
    seed: u64,
    truth: Option<&Volume>,
) -> Result<(Volume, Option<ReconTrace>)> {
    if let Method::Admm | Method::AdmmStandard = method {
        return Ok((recon_admm(cfg, y, proj, method == Method::AdmmStandard)?, None));
    }
    let nets = nets.ok_or_else(|| HarnessError::Config(format!("{} needs networks", method.name())))?;
    let mut sampler = cfg.sampler(method != Method::CddmDmOff);
    if let Some(t0) = t0 {
        sampler.t0 = t0;
    }
    match method {
        Method::CddmZOnly => sampler.directions = Directions::ZOnly,
        Method::CddmStandard => sampler.kind = ConsistencyKind::Standard,
        _ => {}
    }
    let mut rng = Rng::new(seed);
    let (x, trace) = cddm_reconstruct(y, proj, nets.nets(), sched, &sampler, &mut rng, truth)?;
    Ok((x, Some(trace)))
}

/// 16-bit binary PGM, linear window over `[0, peak]`.
pub fn write_pgm(path: &Path, img: &[f64], h: usize, w: usize, peak: f64) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    write!(f, "P5\n{w} {h}\n65535\n")?;
    for &v in img {
        let q = ((v / peak).clamp(0.0, 1.0) * 65535.0).round() as u16;
        f.write_all(&q.to_be_bytes())?;
    }
    f.flush()?;
    Ok(())
}

/// Centre slice of every plane as `{stem}_{plane}.pgm`.
pub fn write_center_slices(dir: &Path, stem: &str, v: &Volume) -> Result<()> {
    let [nz, ny, nx] = v.dims();
    for (plane, i) in [(Plane::Axial, nz / 2), (Plane::Coronal, ny / 2), (Plane::Sagittal, nx / 2)] {
        let (img, h, w) = plane_slice(v, plane, i);
        write_pgm(&dir.join(format!("{stem}_{}.pgm", plane.name())), &img, h, w, 1.0)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: String,
    pub phantom: usize,
    pub t0: Option<f64>,
    pub plane: Plane,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: String,
    pub t0: Option<f64>,
    pub plane: Plane,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<MetricRow>,
    pub sweep: Vec<MetricRow>,
    pub summary: Vec<Summary>,
    pub completed: Vec<String>,
    pub failed: Vec<(String, String)>,
}

impl ExperimentReport {
    /// Mean PSNR of `method` on `plane` per phantom, in phantom order.
    pub fn psnr_by_phantom(&self, method: Method, plane: Plane) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.method == method.name() && r.plane == plane)
            .map(|r| r.psnr)
            .collect()
    }
}

#[derive(Clone, Debug)]
struct Cell {
    method: Method,
    phantom: usize,
    t0: Option<f64>,
}

impl Cell {
    fn name(&self) -> String {
        match self.t0 {
            Some(t0) => format!("{}_p{}_t{:.2}", self.method.name(), self.phantom, t0),
            None => format!("{}_p{}", self.method.name(), self.phantom),
        }
    }
}

fn write_rows(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "phantom", "t0", "plane", "psnr", "ssim"])?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.phantom.to_string(),
            r.t0.map(|t| format!("{t:.2}")).unwrap_or_default(),
            r.plane.name().to_string(),
            format!("{:.6}", r.psnr),
            format!("{:.6}", r.ssim),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn summarise(rows: &[MetricRow]) -> Vec<Summary> {
    let mut groups: BTreeMap<(String, String, usize), (Option<f64>, Plane, Vec<(f64, f64)>)> =
        BTreeMap::new();
    for r in rows {
        let key = (
            r.method.clone(),
            r.t0.map(|t| format!("{t:.2}")).unwrap_or_default(),
            r.plane as usize,
        );
        groups
            .entry(key)
            .or_insert_with(|| (r.t0, r.plane, Vec::new()))
            .2
            .push((r.psnr, r.ssim));
    }
    groups
        .into_iter()
        .map(|((method, _, _), (t0, plane, v))| Summary {
            method,
            t0,
            plane,
            mean_psnr: v.iter().map(|x| x.0).sum::<f64>() / v.len() as f64,
            mean_ssim: v.iter().map(|x| x.1).sum::<f64>() / v.len() as f64,
        })
        .collect()
}

/// Runs every (method × phantom) cell plus the `t₀` sweep and writes
///
/// * `metrics.csv`, `sweep.csv`: one row per cell and plane
/// * `report.json`: rows, per-method means and the cell manifest
/// * `manifest.json`: completed and failed cells, written even on failure
/// * `cells/<cell>/`: reconstruction (raw + JSON), centre slices, trace
///
/// Cells run on a pool of `threads` workers; each phantom's sampler seed is
/// shared by all methods so ablations see identical noise.
pub fn run_experiment(cfg: &Config, out: &Path, threads: usize) -> Result<ExperimentReport> {
    cfg.validate()?;
    let sched = cfg.schedule.build()?;
    fs::create_dir_all(out)?;
    fs::write(out.join("config.toml"), cfg.to_toml())?;

    let exp = &cfg.experiment;
    let needs_nets = exp.methods.iter().any(|m| m.needs_network()) || !exp.sweep_t0.is_empty();
    let nets = if needs_nets {
        Some(load_or_train(cfg, &sched, out)?)
    } else {
        None
    };

    let proj = Projector::new(&cfg.geometry.geometry(cfg.geometry.slices)?)?;
    let specs = eval_specs(cfg);
    let phantom_dir = out.join("phantoms");
    fs::create_dir_all(&phantom_dir)?;
    let mut truths = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let v = make_phantom(spec);
        write_center_slices(&phantom_dir, &format!("p{i}"), &v)?;
        let y = proj.forward(&v)?;
        truths.push((v, y));
    }

    let mut cells = Vec::new();
    for phantom in 0..specs.len() {
        for &method in &exp.methods {
            cells.push(Cell {
                method,
                phantom,
                t0: None,
            });
        }
        for &t0 in &exp.sweep_t0 {
            cells.push(Cell {
                method: Method::CddmDmOn,
                phantom,
                t0: Some(t0),
            });
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    let ssim_params = SsimParams::default();
    let results: Vec<Result<Vec<MetricRow>>> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let (truth, y) = &truths[cell.phantom];
                let seed = derive_seed(cfg.seed, tags::CELL, cell.phantom as u64);
                let (x, trace) = run_method(
                    cfg,
                    &sched,
                    cell.method,
                    y,
                    &proj,
                    nets.as_ref(),
                    cell.t0,
                    seed,
                    Some(truth),
                )?;
                let dir = out.join("cells").join(cell.name());
                fs::create_dir_all(&dir)?;
                save_raw(&x, dir.join("recon.raw"))?;
                write_center_slices(&dir, "recon", &x)?;
                if let Some(t) = trace {
                    t.write_csv(dir.join("trace.csv"))?;
                }
                let scores = plane_metrics(&x, truth, &ssim_params)?;
                Ok(scores
                    .into_iter()
                    .map(|s| MetricRow {
                        method: cell.method.name().to_string(),
                        phantom: cell.phantom,
                        t0: cell.t0,
                        plane: s.plane,
                        psnr: s.psnr,
                        ssim: s.ssim,
                    })
                    .collect())
            })
            .collect()
    });

    let mut report = ExperimentReport::default();
    for (cell, r) in cells.iter().zip(results) {
        match r {
            Ok(rows) => {
                report.completed.push(cell.name());
                if cell.t0.is_some() {
                    report.sweep.extend(rows);
                } else {
                    report.rows.extend(rows);
                }
            }
            Err(e) => report.failed.push((cell.name(), e.to_string())),
        }
    }
    let order = |name: &str| exp.methods.iter().position(|m| m.name() == name);
    report
        .rows
        .sort_by_key(|r| (order(&r.method), r.phantom, r.plane as usize));
    report.summary = summarise(&report.rows);
    report.summary.extend(summarise(&report.sweep));

    write_rows(&out.join("metrics.csv"), &report.rows)?;
    write_rows(&out.join("sweep.csv"), &report.sweep)?;
    let manifest = serde_json::json!({
        "completed": report.completed,
        "failed": report.failed,
    });
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    if let Some((cell, err)) = report.failed.first() {
        return Err(HarnessError::Config(format!(
            "{} of {} cells failed; first {cell}: {err}",
            report.failed.len(),
            cells.len()
        )));
    }
    Ok(report)
}

/// Writes `v` as raw + sidecar at `path`.
pub fn save_volume(v: &Volume, path: impl Into<PathBuf>) -> Result<()> {
    Ok(save_raw(v, path.into())?)
}
