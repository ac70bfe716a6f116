//! End-to-end tests of the command-line interface: exit codes, file
//! artifacts, and agreement with direct library calls.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_appearance-ot")
}

fn tmpdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!(
        "aot-cli-{tag}-{}-{:x}",
        std::process::id(),
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .unwrap()
            .as_nanos()
    ));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Binary PPM with a per-pixel color function.
fn write_ppm(path: &Path, w: usize, h: usize, f: impl Fn(usize, usize) -> [u8; 3]) {
    let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
    for r in 0..h {
        for c in 0..w {
            bytes.extend(f(r, c));
        }
    }
    std::fs::write(path, bytes).unwrap();
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env("OT_APPEARANCE_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

#[test]
fn missing_required_argument_exits_2_with_usage() {
    let out = run(&["transfer", "--source", "x.png"]);
    assert_eq!(code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.to_lowercase().contains("usage"), "stderr: {stderr}");
}

#[test]
fn missing_input_file_exits_3() {
    let dir = tmpdir("io");
    let a = dir.join("a.ppm");
    write_ppm(&a, 4, 4, |_, _| [10, 20, 30]);
    let out = run(&[
        "metrics",
        "--a",
        a.to_str().unwrap(),
        "--b",
        dir.join("missing.png").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3);
}

#[test]
fn mismatched_dimensions_exit_2() {
    let dir = tmpdir("dims");
    let a = dir.join("a.ppm");
    let b = dir.join("b.ppm");
    write_ppm(&a, 10, 10, |_, _| [100, 100, 100]);
    write_ppm(&b, 12, 10, |_, _| [100, 100, 100]);
    let out = run(&[
        "metrics",
        "--a",
        a.to_str().unwrap(),
        "--b",
        b.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2, "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn solver_underflow_exits_4() {
    // A gigantic position weight with mismatched grids underflows the
    // direct-path kernel into NaN territory.
    let dir = tmpdir("nan");
    let a = dir.join("a.ppm");
    let b = dir.join("b.ppm");
    write_ppm(&a, 5, 4, |r, c| [(r * 20) as u8, (c * 20) as u8, 100]);
    write_ppm(&b, 7, 6, |r, c| [(c * 15) as u8, 200, (r * 15) as u8]);
    let out = run(&[
        "transfer",
        "--source",
        a.to_str().unwrap(),
        "--target",
        b.to_str().unwrap(),
        "--out",
        dir.join("o.png").to_str().unwrap(),
        "--method",
        "sinkhorn",
        "--epsilon",
        "0.02",
        "--position-weight",
        "100000",
    ]);
    assert_eq!(code(&out), 4, "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn identity_transfer_reproduces_the_image() {
    let dir = tmpdir("ident");
    let g = dir.join("g.ppm");
    write_ppm(&g, 12, 12, |r, c| {
        if (r / 3 + c / 3) % 2 == 0 {
            [200, 80, 40]
        } else {
            [40, 80, 200]
        }
    });
    let out_path = dir.join("o.png");
    let report_path = dir.join("r.json");
    let out = run(&[
        "transfer",
        "--source",
        g.to_str().unwrap(),
        "--target",
        g.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
        "--method",
        "exact",
        "--report",
        report_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let original = appearance_ot::image_io::load_image(&g).unwrap();
    let result = appearance_ot::image_io::load_image(&out_path).unwrap();
    let mad: f64 = original
        .data()
        .iter()
        .zip(result.data())
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / original.data().len() as f64;
    assert!(mad <= 2.0 / 255.0);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert!(report["histogram_distance_after"].as_f64().unwrap() < 1e-9);
    assert_eq!(report["tool_version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(report["config"]["method"], "exact");
}

#[test]
fn metrics_reports_match_library_calls() {
    let dir = tmpdir("metrics");
    let a = dir.join("a.ppm");
    let b = dir.join("b.ppm");
    write_ppm(&a, 10, 10, |r, c| [(r * 25) as u8, (c * 25) as u8, 128]);
    write_ppm(&b, 10, 10, |r, c| [(c * 25) as u8, 128, (r * 25) as u8]);
    let report_path = dir.join("m.json");
    let out = run(&[
        "metrics",
        "--a",
        a.to_str().unwrap(),
        "--b",
        b.to_str().unwrap(),
        "--out",
        report_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();

    let img_a = appearance_ot::image_io::load_image(&a).unwrap();
    let img_b = appearance_ot::image_io::load_image(&b).unwrap();
    let bank = appearance_ot::metrics::FeatureBank::default();
    let lib = appearance_ot::metrics::metric_report(&img_a, &img_b, &img_b, &bank).unwrap();
    assert_eq!(report["ssim_whole"].as_f64().unwrap(), lib.ssim_whole);
    assert_eq!(report["ssim_edge"].as_f64().unwrap(), lib.ssim_edge);
    assert_eq!(report["gram_loss"].as_f64().unwrap(), lib.gram_loss);
    assert_eq!(report["content_loss"].as_f64().unwrap(), lib.content_loss);
    assert_eq!(report["histogram_w"].as_f64().unwrap(), lib.histogram_w);
}

#[test]
fn identical_metrics_inputs_hit_fixed_points() {
    let dir = tmpdir("metfix");
    let a = dir.join("a.ppm");
    write_ppm(&a, 9, 9, |r, c| [(r * 11) as u8, (c * 13) as u8, 77]);
    let out = run(&["metrics", "--a", a.to_str().unwrap(), "--b", a.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let report: serde_json::Value =
        serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["ssim_whole"].as_f64().unwrap(), 1.0);
    assert_eq!(report["gram_loss"].as_f64().unwrap(), 0.0);
    assert_eq!(report["histogram_w"].as_f64().unwrap(), 0.0);
}

#[test]
fn mask_demo_extremes() {
    let dir = tmpdir("mask");
    let a = dir.join("a.ppm");
    let b = dir.join("b.ppm");
    write_ppm(&a, 8, 8, |_, _| [10, 200, 10]);
    write_ppm(&b, 8, 8, |_, _| [200, 10, 200]);
    let mask = dir.join("m.png");
    let mixed = dir.join("y.png");

    // Zero patches: the mixed image is A bit-exactly.
    let out = run(&[
        "mask-demo",
        "--a",
        a.to_str().unwrap(),
        "--b",
        b.to_str().unwrap(),
        "--patches",
        "0",
        "--seed",
        "1",
        "--out",
        mask.to_str().unwrap(),
        "--mixed",
        mixed.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let got = appearance_ot::image_io::load_image(&mixed).unwrap();
    let want = appearance_ot::image_io::load_image(&a).unwrap();
    assert_eq!(got, want);

    // A whole-frame patch: the mixed image is B.
    let out = run(&[
        "mask-demo",
        "--a",
        a.to_str().unwrap(),
        "--b",
        b.to_str().unwrap(),
        "--patches",
        "1",
        "--min-frac",
        "1.0",
        "--max-frac",
        "1.0",
        "--seed",
        "1",
        "--out",
        mask.to_str().unwrap(),
        "--mixed",
        mixed.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let got = appearance_ot::image_io::load_image(&mixed).unwrap();
    let want = appearance_ot::image_io::load_image(&b).unwrap();
    assert_eq!(got, want);
}

#[test]
fn dual_demo_tolerance_failure_exits_5() {
    // One iteration cannot reach the shift oracle.
    let out = run(&["dual-demo", "--task", "shift1d", "--seed", "3", "--iters", "1"]);
    assert_eq!(code(&out), 5);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("status: fail"), "stdout: {stdout}");
}

#[test]
fn dual_demo_identity_passes_fast() {
    let out = run(&["dual-demo", "--task", "identity", "--seed", "1", "--iters", "400"]);
    assert_eq!(code(&out), 0, "stdout: {}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn bench_csv_shape_and_solver_inequality() {
    let dir = tmpdir("bench");
    let csv_path = dir.join("bench.csv");
    let out = run(&[
        "bench",
        "--sizes",
        "8,16",
        "--seed",
        "5",
        "--out",
        csv_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let text = std::fs::read_to_string(&csv_path).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "method,n_points,cost_or_estimate,marginal_error,seconds");
    // One row per (method, size) pair: 3 methods x 2 sizes.
    assert_eq!(rows.len(), 1 + 6);
    for row in &rows[1..] {
        assert_eq!(row.split(',').count(), 5, "row {row:?}");
    }
    // Exact never exceeds the entropic cost (1e-6 slack).
    for n in ["8", "16"] {
        let get = |method: &str| -> f64 {
            rows[1..]
                .iter()
                .find(|r| r.starts_with(&format!("{method},{n},")))
                .and_then(|r| r.split(',').nth(2))
                .unwrap()
                .parse()
                .unwrap()
        };
        assert!(get("exact") <= get("sinkhorn") + 1e-6);
    }
}

#[test]
fn thread_cap_does_not_change_results() {
    let dir = tmpdir("threads");
    let a = dir.join("a.ppm");
    let b = dir.join("b.ppm");
    write_ppm(&a, 14, 11, |r, c| [(r * 17) as u8, (c * 13) as u8, 90]);
    write_ppm(&b, 14, 11, |r, c| [230, (r * 19) as u8, (c * 11) as u8]);
    let mut images = Vec::new();
    for threads in ["1", "4"] {
        let out_img = dir.join(format!("o-{threads}.png"));
        let status = Command::new(bin())
            .args([
                "transfer",
                "--source",
                a.to_str().unwrap(),
                "--target",
                b.to_str().unwrap(),
                "--out",
                out_img.to_str().unwrap(),
                "--method",
                "sinkhorn",
                "--seed",
                "5",
                "--max-points",
                "32",
            ])
            .env("OT_APPEARANCE_THREADS", threads)
            .status()
            .unwrap();
        assert!(status.success());
        images.push(std::fs::read(&out_img).unwrap());
    }
    assert_eq!(images[0], images[1], "thread cap changed the output");
}

#[test]
fn dual_demo_shift1d_within_tolerance() {
    let out = run(&["dual-demo", "--task", "shift1d", "--seed", "0"]);
    assert_eq!(code(&out), 0, "stdout: {}", String::from_utf8_lossy(&out.stdout));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("oracle_w1: 2.000000"), "stdout: {stdout}");
    let estimate: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("estimate: "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((estimate - 2.0).abs() <= 0.2, "estimate {estimate}");
}

#[test]
fn transfer_accepts_geometry_maps() {
    let dir = tmpdir("geom");
    let a = dir.join("a.ppm");
    let b = dir.join("b.ppm");
    write_ppm(&a, 8, 8, |r, c| [(r * 30) as u8, (c * 30) as u8, 50]);
    write_ppm(&b, 8, 8, |r, c| [220, (r * 25) as u8, (c * 25) as u8]);
    // Position map: normalized coordinates in the red/green channels.
    let pos = dir.join("pos.ppm");
    write_ppm(&pos, 8, 8, |r, c| {
        [(c as f64 / 7.0 * 255.0) as u8, (r as f64 / 7.0 * 255.0) as u8, 0]
    });
    // Normal map: constant +z normals, (n+1)/2 encoded.
    let nrm = dir.join("nrm.ppm");
    write_ppm(&nrm, 8, 8, |_, _| [128, 128, 255]);
    let out_img = dir.join("o.png");
    let out = run(&[
        "transfer",
        "--source",
        a.to_str().unwrap(),
        "--target",
        b.to_str().unwrap(),
        "--out",
        out_img.to_str().unwrap(),
        "--method",
        "exact",
        "--position-map",
        pos.to_str().unwrap(),
        "--normal-map",
        nrm.to_str().unwrap(),
        "--max-points",
        "32",
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(out_img.is_file());
}

#[test]
fn config_file_with_unknown_keys_rejected() {
    let dir = tmpdir("cfg");
    let a = dir.join("a.ppm");
    write_ppm(&a, 6, 6, |_, _| [50, 100, 150]);
    let cfg = dir.join("cfg.json");
    std::fs::write(&cfg, r#"{"max_points": 16, "bogus_knob": 3}"#).unwrap();
    let out = run(&[
        "transfer",
        "--source",
        a.to_str().unwrap(),
        "--target",
        a.to_str().unwrap(),
        "--out",
        dir.join("o.png").to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus_knob"));
}

#[test]
fn flags_override_config_file() {
    let dir = tmpdir("cfg2");
    let a = dir.join("a.ppm");
    write_ppm(&a, 6, 6, |r, c| [(r * 40) as u8, (c * 40) as u8, 20]);
    let cfg = dir.join("cfg.json");
    std::fs::write(&cfg, r#"{"method": "sinkhorn", "seed": 11, "max_points": 9}"#).unwrap();
    let report_path = dir.join("r.json");
    let out = run(&[
        "transfer",
        "--source",
        a.to_str().unwrap(),
        "--target",
        a.to_str().unwrap(),
        "--out",
        dir.join("o.png").to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--method",
        "exact",
        "--report",
        report_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["config"]["method"], "exact", "flag wins over file");
    assert_eq!(report["config"]["seed"], 11, "file wins over default");
    assert_eq!(report["config"]["max_points"], 9);
}
