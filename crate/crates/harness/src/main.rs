use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cddm::denoiser::{load_checkpoint, save_checkpoint};
use cddm::grid::{load_raw, save_raw};
use cddm::operators::Projector;
use cddm::{Sinogram, Volume};
use cddm_harness::config::{derive_seed, tags, Config, Method};
use cddm_harness::experiment::{
    fine_tune, recon_admm, run_experiment, run_method, train_base, write_center_slices, Networks,
};
use cddm_harness::metrics::{plane_metrics, psnr, SsimParams};
use cddm_harness::phantom::{make_phantom, PhantomKind, PhantomSpec};
use cddm_harness::{HarnessError, Result};

#[derive(Parser)]
#[command(name = "cddm", version, about = "Sparse-view CT reconstruction with cascaded diffusion")]
struct Cli {
    /// TOML configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the master seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a phantom volume.
    Phantom {
        #[arg(long, default_value = "shepp3d")]
        kind: PhantomKind,
    },
    /// Forward-project a volume into a sinogram.
    Project {
        #[arg(long)]
        input: PathBuf,
    },
    /// ADMM reconstruction under the low-quality profile.
    ReconAdmm {
        #[arg(long)]
        input: PathBuf,
        /// Use standard instead of direction-split ADMM.
        #[arg(long)]
        standard: bool,
    },
    /// Train the noise-prediction network on the standard objective.
    Train,
    /// Fine-tune a trained network on the corrected objective.
    TrainDm {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Cascaded diffusion reconstruction of a sinogram.
    ReconCddm {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        checkpoint_dm: PathBuf,
        /// Disable the corrected network in the final hop of each step.
        #[arg(long)]
        dm_off: bool,
        #[arg(long)]
        t0: Option<f64>,
        /// Ground truth for per-step PSNR in the trace.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Per-plane PSNR/SSIM of a volume against a reference.
    Eval {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        reference: PathBuf,
    },
    /// Noise-strength sweep of the DM-on method.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "0.3,0.5,0.7")]
        t0: Vec<f64>,
    },
    /// Full experiment matrix from the configuration.
    Run,
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn load_sinogram(cfg: &Config, path: &Path) -> Result<(Sinogram, Projector)> {
    let raw = load_raw(path)?;
    let [nz, views, det] = raw.dims();
    let g = cfg.geometry.geometry(nz)?;
    if [views, det] != [g.n_views(), g.n_det] {
        return Err(HarnessError::Config(format!(
            "sinogram {path:?} has {views} views x {det} bins, configuration expects {} x {}",
            g.n_views(),
            g.n_det
        )));
    }
    let proj = Projector::new(&g)?;
    let sino = Sinogram::from_vec(nz, g.angles.clone(), det, raw.into_data())?;
    Ok((sino, proj))
}

fn save_volume(v: &Volume, out: &Path, stem: &str) -> Result<()> {
    std::fs::create_dir_all(out)?;
    save_raw(v, out.join(format!("{stem}.raw")))?;
    write_center_slices(out, stem, v)?;
    println!("wrote {}", out.join(format!("{stem}.raw")).display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let out = cli.out.as_path();
    let sched = cfg.schedule.build()?;
    match &cli.command {
        Command::Phantom { kind } => {
            let v = make_phantom(&PhantomSpec {
                kind: *kind,
                dims: cfg.geometry.dims(),
                seed: cfg.seed,
            });
            save_volume(&v, out, "phantom")
        }
        Command::Project { input } => {
            let v = load_raw(input)?;
            let proj = Projector::new(&cfg.geometry.geometry(v.nz())?)?;
            let s = proj.forward(&v)?;
            let [nz, views, det] = s.dims();
            let as_volume = Volume::from_vec([nz, views, det], [1.0; 3], s.into_data())?;
            std::fs::create_dir_all(out)?;
            save_raw(&as_volume, out.join("sinogram.raw"))?;
            println!("wrote {}", out.join("sinogram.raw").display());
            Ok(())
        }
        Command::ReconAdmm { input, standard } => {
            let (y, proj) = load_sinogram(&cfg, input)?;
            let x = recon_admm(&cfg, &y, &proj, *standard)?;
            save_volume(&x, out, "recon_admm")
        }
        Command::Train => {
            let (net, trace) = train_base(&cfg, &sched)?;
            std::fs::create_dir_all(out)?;
            trace.write_csv(out.join("loss_standard.csv"))?;
            save_checkpoint(&net, &sched, out.join("eps_standard.bin"))?;
            println!("wrote {}", out.join("eps_standard.bin").display());
            Ok(())
        }
        Command::TrainDm { checkpoint } => {
            let base = load_checkpoint(checkpoint, &sched)?;
            let (net, trace) = fine_tune(&cfg, &sched, &base)?;
            std::fs::create_dir_all(out)?;
            trace.write_csv(out.join("loss_dm.csv"))?;
            save_checkpoint(&net, &sched, out.join("eps_dm.bin"))?;
            println!("wrote {}", out.join("eps_dm.bin").display());
            Ok(())
        }
        Command::ReconCddm {
            input,
            checkpoint,
            checkpoint_dm,
            dm_off,
            t0,
            reference,
        } => {
            let (y, proj) = load_sinogram(&cfg, input)?;
            let nets = Networks {
                standard: load_checkpoint(checkpoint, &sched)?,
                corrected: load_checkpoint(checkpoint_dm, &sched)?,
            };
            let truth = reference.as_ref().map(load_raw).transpose()?;
            let method = if *dm_off { Method::CddmDmOff } else { Method::CddmDmOn };
            let seed = derive_seed(cfg.seed, tags::CELL, 0);
            let (x, trace) =
                run_method(&cfg, &sched, method, &y, &proj, Some(&nets), *t0, seed, truth.as_ref())?;
            save_volume(&x, out, "recon_cddm")?;
            if let Some(t) = trace {
                t.write_csv(out.join("trace.csv"))?;
            }
            Ok(())
        }
        Command::Eval { input, reference } => {
            let x = load_raw(input)?;
            let r = load_raw(reference)?;
            let whole = psnr(&x, &r, 1.0)?;
            println!("plane,psnr,ssim");
            for s in plane_metrics(&x, &r, &SsimParams::default())? {
                println!("{},{:.6},{:.6}", s.plane.name(), s.psnr, s.ssim);
            }
            println!("volume,{:.6},", whole.db);
            Ok(())
        }
        Command::Sweep { t0 } => {
            let mut cfg = cfg.clone();
            cfg.experiment.methods = vec![Method::CddmDmOn];
            cfg.experiment.sweep_t0 = t0.clone();
            let report = run_experiment(&cfg, out, cli.threads)?;
            print_summary(&report);
            Ok(())
        }
        Command::Run => {
            let report = run_experiment(&cfg, out, cli.threads)?;
            print_summary(&report);
            Ok(())
        }
    }
}

fn print_summary(report: &cddm_harness::experiment::ExperimentReport) {
    println!("method,t0,plane,mean_psnr,mean_ssim");
    for s in &report.summary {
        let t0 = s.t0.map(|t| format!("{t:.2}")).unwrap_or_default();
        println!(
            "{},{},{},{:.4},{:.4}",
            s.method,
            t0,
            s.plane.name(),
            s.mean_psnr,
            s.mean_ssim
        );
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
