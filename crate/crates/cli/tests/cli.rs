//! Behavior tests for ingestion, the fit artifact set, scoring, and the
//! binary's exit codes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use tbi_cli::{ingest, run_fit, run_score, run_synth, CliError};
use tbi_core::archive::DrawsArchive;
use tbi_core::config::RunConfig;
use tbi_core::{inference, report};

fn temp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("tbi-cli-test-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write(path: &Path, text: &str) {
    fs::write(path, text).unwrap();
}

const SMALL_CSV: &str = "\
y,a,x1,x2,extra
1,1,0.5,-0.2,9
0,0,-1.0,0.3,9
1,0,0.2,0.8,9
0,1,1.4,-0.9,9
1,1,-0.3,0.4,9
0,0,0.8,-1.2,9
1,0,-0.6,1.1,9
0,1,0.1,0.0,9
";

fn cfg_for(input: &Path, extra: &str) -> RunConfig {
    let text = format!(
        "family = bernoulli\ninput = {}\nmain_cols = x1,x2\nindex_cols = x1,x2\n{extra}",
        input.display()
    );
    RunConfig::from_text(&text).unwrap()
}

#[test]
fn ingest_drops_exactly_the_incomplete_rows() {
    let dir = temp_dir("ingest-missing");
    let input = dir.join("data.csv");
    // one missing cell in a used column, one missing cell in an unused column
    write(
        &input,
        "y,a,x1,x2,unused\n1,1,0.5,-0.2,\n0,0,,0.3,5\n1,0,0.2,0.8,5\n0,1,1.4,-0.9,5\n",
    );
    let ingested = ingest(&input, &cfg_for(&input, "")).unwrap();
    assert_eq!(ingested.dropped_rows, 1);
    assert_eq!(ingested.dataset.n(), 3);
}

#[test]
fn ingest_rejects_bad_arm_codes_naming_the_row() {
    let dir = temp_dir("ingest-arm");
    let input = dir.join("data.csv");
    write(&input, "y,a,x1,x2\n1,1,0.5,-0.2\n0,2,0.1,0.3\n");
    let err = ingest(&input, &cfg_for(&input, "")).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.message().contains("row 3"), "{}", err.message());
    assert!(err.message().contains("arm"), "{}", err.message());
}

#[test]
fn ingest_allows_index_subset_of_main() {
    let dir = temp_dir("ingest-subset");
    let input = dir.join("data.csv");
    write(&input, SMALL_CSV);
    let cfg = cfg_for(&input, "");
    let cfg = RunConfig {
        main_cols: vec!["x1".into(), "x2".into()],
        index_cols: vec!["x1".into()],
        ..cfg
    };
    let ingested = ingest(&input, &cfg).unwrap();
    assert_eq!(ingested.dataset.p_index(), 1);
    // intercept is prepended to the main block only
    assert_eq!(ingested.dataset.main_names()[0], "intercept");
    assert_eq!(ingested.dataset.p_main(), 3);
}

#[test]
fn ingest_reports_missing_columns() {
    let dir = temp_dir("ingest-col");
    let input = dir.join("data.csv");
    write(&input, SMALL_CSV);
    let cfg = cfg_for(&input, "");
    let cfg = RunConfig { main_cols: vec!["nope".into()], ..cfg };
    let err = ingest(&input, &cfg).unwrap_err();
    assert!(matches!(err, CliError::Data(_)));
    assert!(err.message().contains("nope"));
}

fn fitted_fixture(dir: &Path) -> (RunConfig, tbi_cli::FitArtifacts) {
    // synthesize a small trial, then fit a short chain on it
    let synth_cfg = RunConfig::from_text(
        "family = bernoulli\nsynth_n = 250\nsynth_p = 3\nsynth_amplitude = 2\nsynth_m_star = 0.2,-0.1,0.0\nsynth_beta_star = 1,0.8,0.4\nseed = 21\n",
    )
    .unwrap();
    let data = run_synth(&synth_cfg, dir).unwrap();
    let cfg = RunConfig::from_text(&format!(
        "family = bernoulli\ninput = {}\nmain_cols = x1,x2,x3\nindex_cols = x1,x2,x3\nn_basis = 6\nlambda_prior = 40\nn_iter = 120\nburn_in = 40\nthin = 2\nn_chains = 2\nseed = 33\n",
        data.display()
    ))
    .unwrap();
    let artifacts = run_fit(&cfg, &dir.join("fit")).unwrap();
    (cfg, artifacts)
}

#[test]
fn fit_artifacts_are_complete_and_consistent() {
    let dir = temp_dir("fit-artifacts");
    let (_, artifacts) = fitted_fixture(&dir);
    let out = &artifacts.out_dir;
    for name in
        ["draws.bin", "coefficients.csv", "subject_scores.csv", "figure_left.csv", "figure_right.csv", "run.json"]
    {
        assert!(out.join(name).exists(), "missing {name}");
    }
    // subject_scores has one row per complete-case subject
    let scores = fs::read_to_string(out.join("subject_scores.csv")).unwrap();
    assert_eq!(scores.lines().count(), 250 + 1);

    // figure_right: decision column is exactly I(tbi > 0.5), and the tbi
    // column reproduces the subject-score tbi bit for bit
    let fr = fs::read_to_string(out.join("figure_right.csv")).unwrap();
    let mut checked = 0;
    for (line, score_line) in fr.lines().skip(1).zip(scores.lines().skip(1)) {
        let fields: Vec<&str> = line.split(',').collect();
        let tbi: f64 = fields[1].parse().unwrap();
        let decision: u8 = fields[5].parse().unwrap();
        assert_eq!(decision, (tbi > 0.5) as u8);
        let score_tbi: f64 = score_line.split(',').nth(2).unwrap().parse().unwrap();
        assert!((tbi - score_tbi).abs() < 1e-12);
        checked += 1;
    }
    assert_eq!(checked, 250);

    // figure_left: credible bounds bracket the mean at every grid point
    let fl = fs::read_to_string(out.join("figure_left.csv")).unwrap();
    let mut grid_points = 0;
    for line in fl.lines().skip(1) {
        let f: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        assert!(f[2] <= f[1] && f[1] <= f[3], "bounds fail to bracket the mean: {line}");
        grid_points += 1;
    }
    assert_eq!(grid_points, 201);

    // run.json records every config key
    let run: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert!(run["config"]["n_basis"].is_string());
    assert!(run["acceptance_rate"].is_number());
}

#[test]
fn archive_roundtrip_reproduces_the_coefficient_table() {
    let dir = temp_dir("fit-roundtrip");
    let (cfg, artifacts) = fitted_fixture(&dir);
    let bytes = fs::read(artifacts.out_dir.join("draws.bin")).unwrap();
    let archive = DrawsArchive::read_from(&mut bytes.as_slice()).unwrap();
    assert_eq!(archive.seed, cfg.seed);

    // rebuild the training dataset and summarize from the reloaded draws
    let ingested = ingest(Path::new(cfg.input.as_ref().unwrap()), &cfg).unwrap();
    let summary = inference::summarize(
        &archive.draws,
        &ingested.dataset,
        &archive.family,
        &archive.system,
    )
    .unwrap();
    let rendered = report::render_coefficients(&summary);
    let original = fs::read_to_string(artifacts.out_dir.join("coefficients.csv")).unwrap();
    assert_eq!(rendered, original);
}

#[test]
fn scoring_the_training_file_is_idempotent() {
    let dir = temp_dir("score-idempotent");
    let (cfg, artifacts) = fitted_fixture(&dir);
    let scores_path = run_score(
        &artifacts.out_dir.join("draws.bin"),
        Path::new(cfg.input.as_ref().unwrap()),
        &dir.join("scores"),
    )
    .unwrap();
    let scores = fs::read_to_string(scores_path).unwrap();
    let training = fs::read_to_string(artifacts.out_dir.join("subject_scores.csv")).unwrap();
    // identical rows, modulo the extra extrapolated column
    for (got, want) in scores.lines().skip(1).zip(training.lines().skip(1)) {
        let got_fields: Vec<&str> = got.split(',').collect();
        let want_fields: Vec<&str> = want.split(',').collect();
        assert_eq!(got_fields.len(), want_fields.len() + 1);
        for (g, w) in got_fields.iter().zip(&want_fields) {
            let (gv, wv) = (g.parse::<f64>().unwrap(), w.parse::<f64>().unwrap());
            assert!((gv - wv).abs() <= 1e-12 * wv.abs().max(1.0), "{g} vs {w}");
        }
    }
    assert_eq!(scores.lines().count(), training.lines().count());
}

#[test]
fn scoring_flags_extrapolated_rows_and_handles_empty_input() {
    let dir = temp_dir("score-extrapolate");
    let (_, artifacts) = fitted_fixture(&dir);
    let model = artifacts.out_dir.join("draws.bin");

    let newdata = dir.join("new.csv");
    write(&newdata, "x1,x2,x3\n0.1,0.0,0.2\n50,50,50\n");
    let path = run_score(&model, &newdata, &dir.join("s1")).unwrap();
    let text = fs::read_to_string(path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[1].ends_with(",false"));
    assert!(lines[2].ends_with(",true"), "far-out row should extrapolate: {}", lines[2]);

    // empty file: header-only output, no error
    let empty = dir.join("empty.csv");
    write(&empty, "x1,x2,x3\n");
    let path = run_score(&model, &empty, &dir.join("s2")).unwrap();
    let text = fs::read_to_string(path).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("subject_id,"));

    // schema mismatch is a data error
    let bad = dir.join("bad.csv");
    write(&bad, "x1,x2\n0.1,0.2\n");
    let err = run_score(&model, &bad, &dir.join("s3")).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn binary_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_tbi");
    let dir = temp_dir("exit-codes");

    // usage error: unknown subcommand
    let out = Command::new(exe).arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    // usage error: unreadable config
    let out =
        Command::new(exe).args(["fit", "--config", "/nonexistent.conf"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    // data error: config is fine but the input file has a bad arm code
    let input = dir.join("bad.csv");
    write(&input, "y,a,x1,x2\n1,1,0.5,-0.2\n0,2,0.1,0.3\n");
    let conf = dir.join("fit.conf");
    write(
        &conf,
        &format!(
            "family = bernoulli\ninput = {}\nmain_cols = x1,x2\nout = {}\n",
            input.display(),
            dir.join("out").display()
        ),
    );
    let out = Command::new(exe).args(["fit", "--config"]).arg(&conf).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    // success path: synth
    let sconf = dir.join("synth.conf");
    write(&sconf, &format!("synth_n = 50\nsynth_p = 2\nout = {}\n", dir.join("sd").display()));
    let out = Command::new(exe).args(["synth", "--config"]).arg(&sconf).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}
