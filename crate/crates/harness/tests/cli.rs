use std::path::Path;
use std::process::Command;

fn cddm(dir: &Path, args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_cddm"))
        .arg("--config")
        .arg(dir.join("c.toml"))
        .arg("--out")
        .arg(dir)
        .args(args)
        .output()
        .unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn phantom_project_recon_eval_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("c.toml"),
        "[geometry]\nsize = 16\nslices = 2\nviews = 6\n[profiles.low_quality]\nrho1 = 0.1\nrho2 = 0.1\nrho3 = 1.0\nlambda = 0.02\nouter_iters = 5\n",
    )
    .unwrap();
    cddm(d, &["phantom", "--kind", "blobs"]);
    cddm(d, &["project", "--input", d.join("phantom.raw").to_str().unwrap()]);
    cddm(d, &["recon-admm", "--input", d.join("sinogram.raw").to_str().unwrap()]);
    let table = cddm(
        d,
        &[
            "eval",
            "--input",
            d.join("recon_admm.raw").to_str().unwrap(),
            "--reference",
            d.join("phantom.raw").to_str().unwrap(),
        ],
    );
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "plane,psnr,ssim");
    assert!(lines.iter().any(|l| l.starts_with("axial,")));
    let db: f64 = lines[1].split(',').nth(1).unwrap().parse().unwrap();
    assert!(db.is_finite() && db > 5.0, "{db}");
}

#[test]
fn unknown_config_key_fails() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "bogus = 1\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_cddm"))
        .arg("--config")
        .arg(dir.path().join("c.toml"))
        .args(["phantom", "--kind", "blobs"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
