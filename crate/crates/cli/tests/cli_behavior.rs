//! End-to-end behaviour of the `mdfhp` binary, fully offline: exit codes,
//! output files and their provenance headers, config merging, and
//! run-to-run determinism. The FDSN download is exercised against a local
//! single-thread HTTP responder.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};

use mdfhp_cli::{FitFile, IgainFile, Meta, SweepFile};
use mdfhp_core::catalog::Catalog;
use mdfhp_core::estimate::{etas_param_names, mdfhp_param_names, FitResult, FittedModel};
use mdfhp_core::model::{EtasParams, Event, MdfhpParams};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mdfhp"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

#[track_caller]
fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "expected exit {code}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// 60 events over ~22 days, magnitudes cycling through six values ≥ 4.
/// Gaps follow a golden-ratio sequence: deterministic but aperiodic, so the
/// fits behave like they would on genuinely irregular data.
fn toy_catalog() -> Catalog {
    let mags = [4.1, 4.45, 5.3, 4.2, 6.1, 4.8];
    let mut t = 0.0;
    let events: Vec<Event> = (0..60)
        .map(|k| {
            let u = (0.618_033_988_749_895 * (k as f64 + 1.0)).fract();
            t += 0.37 * (0.15 + 1.7 * u);
            Event { t, mag: mags[k % 6] }
        })
        .collect();
    let horizon_t = events.last().unwrap().t;
    Catalog {
        origin_utc: "2020-01-01T00:00:00Z".into(),
        m0: 4.0,
        horizon_t,
        region: None,
        events,
    }
}

fn test_meta() -> Meta {
    Meta { tool_version: "test".into(), seed: Some(1), inputs: BTreeMap::new() }
}

/// Hand-built single-subprocess model file (Poisson at the toy event rate).
fn mdfhp_fit_result(fitted_on: String) -> FitResult {
    let params = MdfhpParams {
        lambda0: vec![2.7],
        alpha: vec![0.0],
        gamma: vec![0.0],
        beta: vec![0.7],
        c: vec![1.0],
        b_mag: vec![2.0],
    };
    FitResult {
        model: FittedModel::Mdfhp { boundaries: vec![4.0, 10.0], params },
        loglik: -10.0,
        log_intensity: 50.0,
        log_marks: 0.0,
        compensators: vec![60.0],
        aic: 32.0,
        bic: 44.0,
        n_params: 6,
        n_events: 60,
        param_names: mdfhp_param_names(1),
        estimates: vec![2.7, 0.0, 0.0, 0.7, 1.0, 2.0],
        ci: vec![None; 6],
        ci_level: 0.90,
        converged: true,
        trace: vec![],
        fitted_on,
        seed: 1,
    }
}

fn etas_fit_result(fitted_on: String) -> FitResult {
    let params =
        EtasParams { mu: 2.0, a: 0.0, delta: 0.0, c: 0.01, p: 1.1, b_mag: 2.0 };
    FitResult {
        model: FittedModel::Etas { m0: 4.0, params },
        loglik: -12.0,
        log_intensity: 40.0,
        log_marks: 0.0,
        compensators: vec![44.0],
        aic: 36.0,
        bic: 48.0,
        n_params: 6,
        n_events: 60,
        param_names: etas_param_names(),
        estimates: vec![2.0, 0.0, 0.0, 0.01, 1.1, 2.0],
        ci: vec![None; 6],
        ci_level: 0.90,
        converged: true,
        trace: vec![],
        fitted_on,
        seed: 1,
    }
}

fn write_fixture(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let cat = toy_catalog();
    let cat_path = dir.join("cat.json");
    cat.save_json(&cat_path).unwrap();
    let fit_path = dir.join("fit.json");
    FitFile { meta: test_meta(), fit: mdfhp_fit_result(cat.content_hash()) }
        .save(&fit_path)
        .unwrap();
    (cat_path, fit_path)
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let (cat_path, _) = write_fixture(dir.path());
    let cat = cat_path.to_str().unwrap();

    // No subcommand and unknown subcommand are clap usage errors.
    assert_exit(&run(&[]), 2);
    assert_exit(&run(&["frobnicate"]), 2);

    // Missing required option (post-merge check, not clap).
    assert_exit(&run(&["fit", "--model", "etas", "--out", "x.json"]), 2);

    // mdfhp without --cuts.
    let out = run(&["fit", "--catalog", cat, "--model", "mdfhp", "--out", "x.json"]);
    assert_exit(&out, 2);
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("--cuts"),
        "error should name the missing flag"
    );

    // Misordered region is rejected by the value parser.
    assert_exit(
        &run(&[
            "fetch", "--start", "1998-01-13", "--end", "2014-06-20", "--m0", "4",
            "--region", "-95,-106,15,21", "--out", "x.json",
        ]),
        2,
    );

    // A single sweep cut has nothing to compare against.
    assert_exit(&run(&["sweep", "--catalog", cat, "--cuts", "5.5"]), 2);

    // Unknown config keys fail loudly instead of being ignored.
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"t_startt": 0.0}"#).unwrap();
    assert_exit(
        &run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", "x.csv"]),
        2,
    );

    // Zero worker threads is meaningless.
    assert_exit(
        &run(&["fit", "--catalog", cat, "--model", "etas", "--out", "x.json", "--threads", "0"]),
        2,
    );
}

#[test]
fn io_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let missing = missing.to_str().unwrap();

    assert_exit(
        &run(&["fit", "--catalog", missing, "--model", "etas", "--out", "x.json"]),
        3,
    );
    assert_exit(
        &run(&["residuals", "--catalog", missing, "--fit", missing, "--out-dir", "d"]),
        3,
    );

    // Connection refused from the FDSN service: transport error.
    assert_exit(
        &run(&[
            "fetch", "--start", "1998-01-13", "--end", "1998-02-13", "--m0", "4",
            "--region", "-106,-95,15,21", "--out", "x.json",
            "--base-url", "http://127.0.0.1:9",
        ]),
        3,
    );
}

#[test]
fn hash_mismatch_exits_4_unless_overridden() {
    let dir = tempfile::tempdir().unwrap();
    let (cat_path, _) = write_fixture(dir.path());
    let cat = cat_path.to_str().unwrap();

    // A fit pinned to a different catalogue hash.
    let stale = dir.path().join("stale_fit.json");
    FitFile { meta: test_meta(), fit: mdfhp_fit_result("0".repeat(64)) }
        .save(&stale)
        .unwrap();
    let stale = stale.to_str().unwrap();

    let out_dir = dir.path().join("res");
    let out = run(&["residuals", "--catalog", cat, "--fit", stale, "--out-dir",
                    out_dir.to_str().unwrap()]);
    assert_exit(&out, 4);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--allow-hash-mismatch"));

    let out = run(&["residuals", "--catalog", cat, "--fit", stale, "--out-dir",
                    out_dir.to_str().unwrap(), "--allow-hash-mismatch"]);
    assert_exit(&out, 0);
    assert!(out_dir.join("residual_summary.json").exists());

    // A tampered catalogue file fails its own content check; the override
    // flag does not bless corrupted inputs.
    let tampered = fs::read_to_string(&cat_path).unwrap().replace("6.1", "6.2");
    let tampered_path = dir.path().join("tampered.json");
    fs::write(&tampered_path, tampered).unwrap();
    let out = run(&["residuals", "--catalog", tampered_path.to_str().unwrap(), "--fit", stale,
                    "--out-dir", out_dir.to_str().unwrap(), "--allow-hash-mismatch"]);
    assert_exit(&out, 4);
}

#[test]
fn residual_outputs_have_provenance_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let (cat_path, fit_path) = write_fixture(dir.path());
    let out_dir = dir.path().join("res");

    let out = run(&["residuals", "--catalog", cat_path.to_str().unwrap(), "--fit",
                    fit_path.to_str().unwrap(), "--out-dir", out_dir.to_str().unwrap()]);
    assert_exit(&out, 0);

    let csv = fs::read_to_string(out_dir.join("residuals_sp1.csv")).unwrap();
    assert!(csv.starts_with("# tool_version="));
    assert!(csv.contains("catalog_sha256="));
    assert!(csv.contains("fit_sha256="));
    assert!(csv.contains("k,tau,tau_minus_k,u"));
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 61);

    let svg = fs::read_to_string(out_dir.join("residuals_sp1.svg")).unwrap();
    assert!(svg.starts_with("<!-- tool_version="));
    assert!(svg.contains("<svg"));

    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("residual_summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["model"], "mdfhp");
    assert_eq!(summary["streams"][0]["n"], 60);
    assert!(summary["streams"][0]["ks_p"].is_number());
    assert!(summary["streams"][0]["pearson_p"].is_number());
    assert!(summary["meta"]["inputs"]["catalog"].is_string());
}

#[test]
fn simulate_is_deterministic_and_respects_config_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let (cat_path, fit_path) = write_fixture(dir.path());
    let fit = fit_path.to_str().unwrap();

    let sim_a = dir.path().join("a.csv");
    let sim_b = dir.path().join("b.csv");
    let sim_c = dir.path().join("c.csv");
    let base = [
        "simulate", "--fit", fit, "--t-start", "0", "--t-end", "20", "--seed", "7",
    ];
    for out_path in [&sim_a, &sim_b] {
        let mut args = base.to_vec();
        args.extend(["--out", out_path.to_str().unwrap()]);
        assert_exit(&run(&args), 0);
    }
    // Same seed: byte-identical files. Different seed: different draws.
    assert_eq!(fs::read(&sim_a).unwrap(), fs::read(&sim_b).unwrap());
    let out = run(&["simulate", "--fit", fit, "--t-start", "0", "--t-end", "20",
                    "--seed", "8", "--out", sim_c.to_str().unwrap()]);
    assert_exit(&out, 0);
    assert_ne!(fs::read(&sim_a).unwrap(), fs::read(&sim_c).unwrap());

    let text = fs::read_to_string(&sim_a).unwrap();
    assert!(text.contains("# seed=7"));
    assert!(text.contains("# window=[0,20)"));
    assert!(text.contains("t,mag,subprocess"));

    // Config supplies the window; an explicit flag overrides its end.
    let cfg = dir.path().join("sim.json");
    fs::write(
        &cfg,
        format!(r#"{{"fit": "{fit}", "t_start": 0.0, "t_end": 5.0, "seed": 7}}"#),
    )
    .unwrap();
    let from_cfg = dir.path().join("cfg.csv");
    let out = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out",
                    from_cfg.to_str().unwrap()]);
    assert_exit(&out, 0);
    assert!(fs::read_to_string(&from_cfg).unwrap().contains("# window=[0,5)"));

    let overridden = dir.path().join("ovr.csv");
    let out = run(&["simulate", "--config", cfg.to_str().unwrap(), "--t-end", "8",
                    "--out", overridden.to_str().unwrap()]);
    assert_exit(&out, 0);
    assert!(fs::read_to_string(&overridden).unwrap().contains("# window=[0,8)"));

    // Conditioning history cannot extend past the window start.
    let out = run(&["simulate", "--fit", fit, "--history-catalog", cat_path.to_str().unwrap(),
                    "--t-start", "30", "--t-end", "35", "--seed", "1",
                    "--out", dir.path().join("h.csv").to_str().unwrap()]);
    assert_exit(&out, 0);

    // An empty window is a usage error.
    let out = run(&["simulate", "--fit", fit, "--t-start", "5", "--t-end", "5",
                    "--out", dir.path().join("e.csv").to_str().unwrap()]);
    assert_exit(&out, 2);
}

#[test]
fn igain_round_trips_with_etas_and_mdfhp_fits() {
    let dir = tempfile::tempdir().unwrap();
    let (cat_path, fit_path) = write_fixture(dir.path());
    let cat = cat_path.to_str().unwrap();

    let etas_path = dir.path().join("etas_fit.json");
    let cat_hash = Catalog::load_json(&cat_path).unwrap().content_hash();
    FitFile { meta: test_meta(), fit: etas_fit_result(cat_hash) }
        .save(&etas_path)
        .unwrap();

    for fit in [fit_path.to_str().unwrap(), etas_path.to_str().unwrap()] {
        let json_out = dir.path().join("ig.json");
        let csv_out = dir.path().join("ig.csv");
        let out = run(&["igain", "--catalog", cat, "--fit", fit,
                        "--class-cuts", "5", "--window-days", "5", "--replicates", "30",
                        "--seed", "3",
                        "--out", json_out.to_str().unwrap(),
                        "--csv", csv_out.to_str().unwrap()]);
        assert_exit(&out, 0);

        let file: IgainFile =
            serde_json::from_str(&fs::read_to_string(&json_out).unwrap()).unwrap();
        assert_eq!(file.report.replicates, 30);
        assert_eq!(file.report.classes.len(), 2);
        assert_eq!(file.meta.seed, Some(3));
        for c in &file.report.classes {
            assert_eq!(c.n_s + c.n_f, c.n);
            assert!((c.g - (c.g_s + c.g_f)).abs() < 1e-12);
        }
        let csv = fs::read_to_string(&csv_out).unwrap();
        assert!(csv.starts_with("# tool_version="));
        assert!(csv.contains("class_lo,class_hi"));
    }

    // Class cuts outside (m0, 10) are a usage error.
    let out = run(&["igain", "--catalog", cat, "--fit", fit_path.to_str().unwrap(),
                    "--class-cuts", "3", "--replicates", "10",
                    "--out", dir.path().join("x.json").to_str().unwrap()]);
    assert_exit(&out, 2);
}

#[test]
fn fit_and_sweep_run_end_to_end_on_the_toy_catalogue() {
    let dir = tempfile::tempdir().unwrap();
    let (cat_path, _) = write_fixture(dir.path());
    let cat = cat_path.to_str().unwrap();

    // Small-budget ETAS fit: must converge enough to write a loadable file.
    let fit_out = dir.path().join("etas.json");
    let out = run(&["fit", "--catalog", cat, "--model", "etas",
                    "--restarts", "2", "--nm-max-evals", "2000", "--seed", "5",
                    "--out", fit_out.to_str().unwrap()]);
    assert_exit(&out, 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("log-likelihood"));
    assert!(stdout.contains("AIC"));
    assert!(stdout.contains("mu"));

    let (file, _) = FitFile::load(&fit_out).unwrap();
    assert_eq!(file.fit.n_events, 60);
    assert!(file.fit.params_etas().is_some());
    assert_eq!(file.meta.inputs["catalog"], file.fit.fitted_on);

    // Residuals of the fresh fit.
    let res_dir = dir.path().join("res");
    let out = run(&["residuals", "--catalog", cat, "--fit", fit_out.to_str().unwrap(),
                    "--out-dir", res_dir.to_str().unwrap()]);
    assert_exit(&out, 0);

    // Three-cut sweep; the 6.0 cut leaves only 10/60 events on top, which
    // trips the low-share flag.
    let sweep_out = dir.path().join("sweep.json");
    let out = run(&["sweep", "--catalog", cat, "--cuts", "4.5,5.0,6.0",
                    "--restarts", "1", "--nm-max-evals", "400", "--no-polish",
                    "--out", sweep_out.to_str().unwrap()]);
    assert_exit(&out, 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("best-AIC"));
    assert!(stdout.contains("low-share"));

    let file: SweepFile =
        serde_json::from_str(&fs::read_to_string(&sweep_out).unwrap()).unwrap();
    assert_eq!(file.report.rows.len(), 3);
    let last = &file.report.rows[2];
    assert_eq!(last.counts[0], 10);
    assert!(last.low_share);
    assert!(!file.report.rows[0].low_share);
    assert!(file.report.best_aic.is_some());
    for row in &file.report.rows {
        if row.fit_error.is_none() {
            assert_eq!(row.ks.len(), 2);
            assert_eq!(row.pearson.len(), 2);
            assert!(row.aic.is_some());
        }
    }
}

/// Minimal single-thread FDSN stand-in: answers one `/count` and one
/// `/query` request per accepted connection.
fn spawn_fdsn_stub(count: &'static str, csv: &'static str) -> (std::thread::JoinHandle<()>, u16) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    let handle = std::thread::spawn(move || {
        // Two requests: the count probe, then the first (only) CSV page.
        for _ in 0..2 {
            let (mut sock, _) = listener.accept().unwrap();
            let mut buf = [0u8; 4096];
            let mut req = Vec::new();
            loop {
                let n = sock.read(&mut buf).unwrap();
                req.extend_from_slice(&buf[..n]);
                if n == 0 || req.windows(4).any(|w| w == b"\r\n\r\n") {
                    break;
                }
            }
            let line = String::from_utf8_lossy(&req);
            let body = if line.starts_with("GET /count") { count } else { csv };
            let resp = format!(
                "HTTP/1.1 200 OK\r\ncontent-type: text/plain\r\ncontent-length: {}\r\n\
                 connection: close\r\n\r\n{}",
                body.len(),
                body
            );
            sock.write_all(resp.as_bytes()).unwrap();
        }
    });
    (handle, port)
}

#[test]
fn fetch_downloads_and_writes_a_loadable_catalogue() {
    const CSV: &str = "\
time,latitude,longitude,depth,mag,magType
1998-01-13T08:30:36.000Z,17.0,-101.0,33.0,4.5,mb
1998-02-01T00:00:00.000Z,16.5,-100.0,10.0,6.2,mw
1998-02-05T06:00:00.000Z,16.2,-100.1,5.0,4.4,mb
";
    let (handle, port) = spawn_fdsn_stub("3", CSV);

    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("fetched.json");
    let out = run(&[
        "fetch", "--start", "1998-01-13", "--end", "1998-03-01", "--m0", "4",
        "--region", "-106,-95,15,21",
        "--base-url", &format!("http://127.0.0.1:{port}"),
        "--out", out_path.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    handle.join().unwrap();
    assert!(String::from_utf8_lossy(&out.stdout).contains("fetched 3 events"));

    // The written file verifies its own hash and carries fetch provenance.
    let cat = Catalog::load_json(&out_path).unwrap();
    assert_eq!(cat.len(), 3);
    assert_eq!(cat.m0, 4.0);
    let raw: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&out_path).unwrap()).unwrap();
    assert!(raw["tool_version"].is_string());
    assert_eq!(raw["source"]["m0"], 4.0);
}
