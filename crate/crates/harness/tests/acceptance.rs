//! End-to-end acceptance run. One PASS/FAIL line per criterion; exits
//! non-zero if any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use cddm::denoiser::{dm_sample, mse, EpsNet, Label, NetConfig};
use cddm::diffusion::{
    ddim_step_with_noise, ddpm_step_with_noise, dm_weight, predict_x0, q_sample, Schedule,
};
use cddm::grid::{dot, norm2};
use cddm::operators::{Axis, Geometry, LinearMap, Projector};
use cddm::solvers::{
    cg_solve, specialized_admm3d, standard_admm, tv_objective, AdmmParams, IdentityConsistency,
};
use cddm::{Rng, Volume};
use cddm_harness::config::Config;
use cddm_harness::experiment::{run_experiment, ExperimentReport};
use cddm_harness::metrics::Plane;
use cddm_harness::Method;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

fn adjoint_correctness() -> Outcome {
    let mut rng = Rng::new(1);
    let mut worst: f64 = 0.0;
    for n in [32, 64] {
        for views in [4, 8, 16] {
            let g = Geometry::parallel([1, n, n], [1.0; 3], views, n, 1.0).map_err(|e| e.to_string())?;
            let p = Projector::new(&g).map_err(|e| e.to_string())?;
            for _ in 0..20 {
                let x = rng.randn(p.input_len());
                let y = rng.randn(p.output_len());
                let mut ax = vec![0.0; p.output_len()];
                let mut aty = vec![0.0; p.input_len()];
                p.apply(&x, &mut ax);
                p.apply_adjoint(&y, &mut aty);
                let gap = (dot(&ax, &y).unwrap() - dot(&x, &aty).unwrap()).abs();
                worst = worst.max(gap / (norm2(&ax) * norm2(&y)));
            }
        }
    }
    check(worst < 1e-10, format!("worst normalised gap {worst:.2e}"))?;
    Ok(format!("worst normalised gap {worst:.2e} over 120 pairs"))
}

fn cg_vs_dense() -> Outcome {
    let mut rng = Rng::new(2);
    let mut worst: f64 = 0.0;
    for k in 0..10 {
        let n = 8 + 6 * k;
        let m = rng.randn(n * n);
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = (0..n).map(|l| m[l * n + i] * m[l * n + j]).sum::<f64>();
            }
            a[i * n + i] += 1.0;
        }
        let b = rng.randn(n);
        let want = common::dense_solve(&a, &b);
        let matvec = |x: &[f64], o: &mut [f64]| {
            for i in 0..n {
                o[i] = (0..n).map(|j| a[i * n + j] * x[j]).sum();
            }
        };
        let got = cg_solve(matvec, &b, &vec![0.0; n], 1e-14, 10 * n).map_err(|e| e.to_string())?;
        worst = worst.max(max_abs_diff(&got.x, &want));
    }
    check(worst < 1e-8, format!("max abs error {worst:.2e}"))?;
    Ok(format!("max abs error {worst:.2e} over sizes 8..62"))
}

fn solver_equivalence() -> Outcome {
    let dims = [4, 16, 16];
    let g = Geometry::parallel(dims, [1.0; 3], 8, 16, 1.0).map_err(|e| e.to_string())?;
    let proj = Projector::new(&g).map_err(|e| e.to_string())?;
    let y = proj.forward(&common::blocky_volume(dims)).map_err(|e| e.to_string())?;
    let x0 = Volume::zeros(dims, [1.0; 3]);
    let lambda = 0.1;
    let p = AdmmParams::new(1.0, 1.0, 1.0, lambda, 500);
    let split = specialized_admm3d(&y, &proj, &p, &x0).map_err(|e| e.to_string())?;
    let std = standard_admm(&y, &proj, &p, &x0).map_err(|e| e.to_string())?;
    let oracle = common::prox_grad_oracle(
        &proj,
        y.data(),
        dims,
        lambda,
        &[Axis::X, Axis::Y, Axis::Z],
        x0.data(),
        10_000,
        20,
    );
    let oracle = x0.with_data(oracle).map_err(|e| e.to_string())?;
    let f = [split, std, oracle].map(|x| tv_objective(&proj, &y, &x, lambda));
    let lo = f.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = f.iter().cloned().fold(0.0, f64::max);
    let spread = (hi - lo) / lo;
    let detail = format!(
        "objectives split {:.6} standard {:.6} prox-grad {:.6}, spread {:.3}%",
        f[0],
        f[1],
        f[2],
        100.0 * spread
    );
    check(spread < 5e-3, detail.clone())?;
    Ok(detail)
}

fn diffusion_algebra() -> Outcome {
    let s = Schedule::linear(1000, 1e-4, 0.02).map_err(|e| e.to_string())?;
    let mut rng = Rng::new(4);
    let x0 = rng.randn(256);
    let (mut round, mut ddim, mut ddpm): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for t in 1..=1000 {
        let eps = rng.randn(256);
        let xt = q_sample(&x0, t, &eps, &s).unwrap();
        round = round.max(max_abs_diff(&predict_x0(&xt, t, &eps, &s).unwrap(), &x0));
        let prev = t.saturating_sub(7);
        let want = if prev == 0 { x0.clone() } else { q_sample(&x0, prev, &eps, &s).unwrap() };
        let got = ddim_step_with_noise(&xt, t, prev, &eps, &s, 0.0, None).unwrap();
        ddim = ddim.max(max_abs_diff(&got, &want));

        let z = rng.randn(256);
        let (ab, ab_prev) = (s.alpha_bar(t), s.alpha_bar(t - 1));
        let sigma = ((1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev)).sqrt();
        let a = ddpm_step_with_noise(&xt, t, &eps, &s, &z).unwrap();
        let b = ddim_step_with_noise(&xt, t, t - 1, &eps, &s, sigma, Some(&z)).unwrap();
        ddpm = ddpm.max(max_abs_diff(&a, &b));
    }
    let detail = format!("round trip {round:.1e}, DDIM identity {ddim:.1e}, DDPM/DDIM {ddpm:.1e}");
    check(round < 1e-10 && ddim < 1e-10 && ddpm < 1e-10, detail.clone())?;
    Ok(detail)
}

fn gradient_fidelity() -> Outcome {
    let mut rng = Rng::new(5);
    let mut net = EpsNet::new(NetConfig::tiny(), &mut rng).map_err(|e| e.to_string())?;
    for p in net.params_mut() {
        *p += 0.2 * rng.normal();
    }
    let x = rng.randn(2 * 64);
    let target = rng.randn(2 * 64);
    let ts = [120, 870];
    let labels = [Label::Standard, Label::Corrected];
    let loss = |net: &EpsNet| {
        let out = net.forward(&x, 8, 8, &ts, &labels).unwrap();
        0.5 * out.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
    };
    let out = net.forward_train(&x, 8, 8, &ts, &labels).map_err(|e| e.to_string())?;
    let d: Vec<f64> = out.iter().zip(&target).map(|(a, b)| a - b).collect();
    let g = net.backward(&d).map_err(|e| e.to_string())?;
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for spec in net.param_specs().to_vec() {
        let picks: Vec<usize> = if spec.len() <= 10 {
            spec.range().collect()
        } else {
            (0..10).map(|_| spec.offset + rng.below(spec.len())).collect()
        };
        for i in picks {
            let orig = net.params()[i];
            net.params_mut()[i] = orig + h;
            let up = loss(&net);
            net.params_mut()[i] = orig - h;
            let down = loss(&net);
            net.params_mut()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let scale = fd.abs().max(g[i].abs());
            checked += 1;
            if scale < 1e-7 {
                check((fd - g[i]).abs() < 1e-9, format!("{} [{i}] both tiny but differ", spec.name))?;
                continue;
            }
            worst = worst.max((fd - g[i]).abs() / scale);
        }
    }
    check(worst < 1e-3, format!("worst relative error {worst:.2e}"))?;
    Ok(format!("worst relative error {worst:.2e} over {checked} coordinates"))
}

fn dm_collapse() -> Outcome {
    let s = Schedule::linear(1000, 1e-4, 0.02).map_err(|e| e.to_string())?;
    let g = Geometry::sparse_default([1, 8, 8], [1.0; 3]).map_err(|e| e.to_string())?;
    let proj = Projector::new(&g).map_err(|e| e.to_string())?;
    let net = EpsNet::new(NetConfig::tiny(), &mut Rng::new(6)).map_err(|e| e.to_string())?;
    let mut rng = Rng::new(7);
    for t in [1, 10, 100, 500, 900, 1000] {
        let x0 = Volume::from_vec([1, 8, 8], [1.0; 3], rng.randn(64)).unwrap();
        let eps = rng.randn(64);
        let xt = q_sample(x0.data(), t, &eps, &s).unwrap();
        let y = proj.forward(&x0).unwrap();
        let d = dm_sample(&x0, &xt, &eps, &eps, t, &s, 1.0, &proj, &y, &IdentityConsistency)
            .map_err(|e| e.to_string())?;
        let std_loss = mse(&net.forward(&xt, 8, 8, &[t], &[Label::Corrected]).unwrap(), &eps);
        let dm_loss = mse(&net.forward(&d.xt_recon, 8, 8, &[t], &[Label::Corrected]).unwrap(), &d.target);
        check(dm_loss == std_loss, format!("t={t}: DM {dm_loss} vs standard {std_loss}"))?;
    }
    for lmax in [0.5, 1.0, 5.0] {
        for t in 1..=1000 {
            let ab = s.alpha_bar(t);
            let want = (ab / (1.0 - ab)).sqrt().min(lmax);
            let got = dm_weight(ab, lmax);
            check(got == want, format!("λ_max {lmax}, t {t}: {got} vs {want}"))?;
        }
    }
    Ok("DM loss equals standard loss bitwise; weight exact at all t for λ_max 0.5, 1, 5".into())
}

fn out_root() -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn desk_config() -> Config {
    let mut cfg = Config::default();
    cfg.experiment.methods = vec![Method::Admm, Method::CddmDmOff, Method::CddmDmOn];
    cfg.experiment.sweep_t0 = vec![0.3, 0.5, 0.7];
    cfg
}

fn end_to_end(report: &ExperimentReport) -> Outcome {
    let admm = report.psnr_by_phantom(Method::Admm, Plane::Axial);
    let off = report.psnr_by_phantom(Method::CddmDmOff, Plane::Axial);
    let on = report.psnr_by_phantom(Method::CddmDmOn, Plane::Axial);
    check(admm.len() == 5 && off.len() == 5 && on.len() == 5, "missing phantoms")?;
    let mut lines = Vec::new();
    let mut good = 0;
    for i in 0..5 {
        let ok = on[i] - off[i] >= 0.2 && off[i] - admm[i] >= 0.2;
        good += ok as usize;
        lines.push(format!(
            "p{i}: admm {:.2} dm-off {:.2} dm-on {:.2}{}",
            admm[i],
            off[i],
            on[i],
            if ok { "" } else { " (x)" }
        ));
    }
    let detail = format!("{good}/5 phantoms ordered with 0.2 dB gaps; {}", lines.join("; "));
    check(good >= 4, detail.clone())?;
    Ok(detail)
}

fn sweep_shape(report: &ExperimentReport) -> Outcome {
    let mut means = Vec::new();
    for t0 in [0.3, 0.5, 0.7] {
        let rows: Vec<_> = report
            .sweep
            .iter()
            .filter(|r| r.t0.is_some_and(|t| (t - t0).abs() < 1e-9))
            .collect();
        check(rows.len() == 5 * 3, format!("t0 {t0}: {} rows", rows.len()))?;
        check(
            rows.iter().all(|r| r.psnr.is_finite() && r.ssim.is_finite()),
            format!("t0 {t0}: non-finite metric"),
        )?;
        let axial: Vec<f64> = rows.iter().filter(|r| r.plane == Plane::Axial).map(|r| r.psnr).collect();
        means.push(axial.iter().sum::<f64>() / axial.len() as f64);
    }
    let detail = format!(
        "mean axial PSNR t0=0.3 {:.2}, 0.5 {:.2}, 0.7 {:.2}",
        means[0], means[1], means[2]
    );
    check(means[1] > means[0].min(means[2]), detail.clone())?;
    Ok(detail)
}

fn same_bytes(a: &Path, b: &Path, files: &[&str]) -> Result<(), String> {
    for f in files {
        let x = fs::read(a.join(f)).map_err(|e| format!("{f}: {e}"))?;
        let y = fs::read(b.join(f)).map_err(|e| format!("{f}: {e}"))?;
        check(x == y, format!("{f} differs between runs"))?;
    }
    Ok(())
}

fn determinism(root: &Path, desk_out: &Path) -> Outcome {
    // Small config from scratch twice: training, fine-tuning and every method.
    let mut cfg = Config::default();
    cfg.geometry.size = 16;
    cfg.geometry.slices = 4;
    cfg.network.channels = 4;
    cfg.network.blocks = 1;
    cfg.network.emb_dim = 8;
    cfg.train.steps = 20;
    cfg.train_dm.steps = 4;
    cfg.data.train_phantoms = 3;
    cfg.data.eval_phantoms = 2;
    cfg.experiment.methods = vec![
        Method::Admm,
        Method::AdmmStandard,
        Method::CddmDmOff,
        Method::CddmDmOn,
        Method::CddmZOnly,
        Method::CddmStandard,
    ];
    cfg.experiment.sweep_t0 = vec![0.3, 0.7];
    let (a, b) = (root.join("det_a"), root.join("det_b"));
    run_experiment(&cfg, &a, 1).map_err(|e| e.to_string())?;
    run_experiment(&cfg, &b, 1).map_err(|e| e.to_string())?;
    same_bytes(
        &a,
        &b,
        &["metrics.csv", "sweep.csv", "loss_standard.csv", "loss_dm.csv", "eps_standard.bin", "eps_dm.bin"],
    )?;
    // Desk-scale reconstructions again from the saved networks.
    let mut cfg = desk_config();
    cfg.experiment.checkpoint = Some(desk_out.join("eps_standard.bin"));
    cfg.experiment.checkpoint_dm = Some(desk_out.join("eps_dm.bin"));
    let c = root.join("desk_rerun");
    run_experiment(&cfg, &c, 1).map_err(|e| e.to_string())?;
    same_bytes(desk_out, &c, &["metrics.csv", "sweep.csv"])?;
    // Traces also hold wall-clock timings; compare the deterministic columns.
    let strip = |p: &Path| -> Result<Vec<String>, String> {
        let text = fs::read_to_string(p.join("cells/cddm-dm-on_p0/trace.csv")).map_err(|e| e.to_string())?;
        Ok(text.lines().map(|l| l.split(',').take(4).collect::<Vec<_>>().join(",")).collect())
    };
    check(strip(desk_out)? == strip(&c)?, "trace.csv differs")?;
    Ok("metric CSVs, loss traces and checkpoints byte-identical across reruns".into())
}

fn run(id: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        Err(e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into()))
    });
    let secs = t.elapsed().as_secs_f64();
    match &r {
        Ok(d) => println!("criterion {id} {name}: PASS ({secs:.1}s) {d}"),
        Err(d) => println!("criterion {id} {name}: FAIL ({secs:.1}s) {d}"),
    }
    r.is_ok()
}

fn main() -> ExitCode {
    let mut ok = true;
    ok &= run(1, "adjoint correctness", adjoint_correctness);
    ok &= run(2, "CG vs dense solve", cg_vs_dense);
    ok &= run(3, "convex solver equivalence", solver_equivalence);
    ok &= run(4, "diffusion algebra", diffusion_algebra);
    ok &= run(5, "gradient fidelity", gradient_fidelity);
    ok &= run(6, "DM objective collapse", dm_collapse);

    let root = out_root();
    let desk_out = root.join("desk");
    let t = Instant::now();
    let report = run_experiment(&desk_config(), &desk_out, 1);
    let secs = t.elapsed().as_secs_f64();
    match &report {
        Ok(r) => {
            ok &= run(7, "end-to-end ordering", || end_to_end(r).map(|d| format!("{d} [run {secs:.0}s]")));
            ok &= run(8, "t0 sweep shape", || sweep_shape(r));
            ok &= run(9, "determinism", || determinism(&root, &desk_out));
        }
        Err(e) => {
            for (id, name) in [(7, "end-to-end ordering"), (8, "t0 sweep shape"), (9, "determinism")] {
                println!("criterion {id} {name}: FAIL experiment did not complete: {e}");
            }
            ok = false;
        }
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
