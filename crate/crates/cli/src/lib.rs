//! Pipelines behind the `tbi` command line: CSV ingestion, the fit/score/
//! synth subcommands, and the on-disk artifact set.

use nalgebra::{DMatrix, DVector};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;
use tbi_core::archive::{fnv1a, DrawsArchive};
use tbi_core::config::{Beta0Spec, RunConfig};
use tbi_core::error::Error as CoreError;
use tbi_core::inference;
use tbi_core::priors::HyperParameters;
use tbi_core::report;
use tbi_core::sampler;
use tbi_core::synth;
use tbi_core::Dataset;

/// Errors grouped by exit code: usage 1, data 2, numerical 3.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numerical(m) => m,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match &e {
            CoreError::Config(_) => CliError::Usage(e.to_string()),
            CoreError::Data(_) | CoreError::Support { .. } | CoreError::Archive(_) | CoreError::Io(_) => {
                CliError::Data(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message())
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn load_config(path: &Path) -> CliResult<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    RunConfig::from_text(&text).map_err(|e| CliError::Usage(e.to_string()))
}

fn is_missing(field: &str) -> bool {
    let t = field.trim();
    t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan") || t.eq_ignore_ascii_case("null")
}

struct RawTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_csv(path: &Path) -> CliResult<RawTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
    let header: Vec<String> =
        reader.headers().map_err(|e| CliError::Data(e.to_string()))?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Data(e.to_string()))?;
        rows.push(record.iter().map(String::from).collect());
    }
    Ok(RawTable { header, rows })
}

fn column_index(table: &RawTable, name: &str) -> CliResult<usize> {
    table
        .header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::Data(format!("column `{name}` not found in input")))
}

/// Result of complete-case ingestion.
#[derive(Debug)]
pub struct Ingested {
    pub dataset: Dataset,
    pub dropped_rows: usize,
}

/// Reads the trial CSV: outcome, 0/1 arm, and the two covariate blocks.
/// Rows with a missing value in any used column are dropped (the count is
/// reported); an intercept column is prepended to the main block.
pub fn ingest(path: &Path, cfg: &RunConfig) -> CliResult<Ingested> {
    let table = read_csv(path)?;
    let main_cols: Vec<String> = if cfg.main_cols.is_empty() {
        table
            .header
            .iter()
            .filter(|h| **h != cfg.outcome_col && **h != cfg.arm_col)
            .cloned()
            .collect()
    } else {
        cfg.main_cols.clone()
    };
    let index_cols: Vec<String> =
        if cfg.index_cols.is_empty() { main_cols.clone() } else { cfg.index_cols.clone() };
    if main_cols.is_empty() || index_cols.is_empty() {
        return Err(CliError::Data("no covariate columns selected".into()));
    }
    if main_cols.iter().any(|c| c == "intercept") {
        return Err(CliError::Data(
            "`intercept` is reserved; it is added to the main block automatically".into(),
        ));
    }

    let y_idx = column_index(&table, &cfg.outcome_col)?;
    let a_idx = column_index(&table, &cfg.arm_col)?;
    let main_idx: Vec<usize> =
        main_cols.iter().map(|c| column_index(&table, c)).collect::<CliResult<_>>()?;
    let index_idx: Vec<usize> =
        index_cols.iter().map(|c| column_index(&table, c)).collect::<CliResult<_>>()?;

    let mut used: Vec<usize> = vec![y_idx, a_idx];
    used.extend(&main_idx);
    used.extend(&index_idx);
    used.sort_unstable();
    used.dedup();

    let mut y = Vec::new();
    let mut arm = Vec::new();
    let mut main_data = Vec::new();
    let mut index_data = Vec::new();
    let mut dropped = 0usize;
    for (rowno, row) in table.rows.iter().enumerate() {
        if row.len() != table.header.len() {
            return Err(CliError::Data(format!(
                "row {}: expected {} fields, found {}",
                rowno + 2,
                table.header.len(),
                row.len()
            )));
        }
        if used.iter().any(|&c| is_missing(&row[c])) {
            dropped += 1;
            continue;
        }
        let parse = |c: usize| -> CliResult<f64> {
            row[c].parse::<f64>().map_err(|_| {
                CliError::Data(format!(
                    "row {}: cannot parse `{}` in column `{}`",
                    rowno + 2,
                    row[c],
                    table.header[c]
                ))
            })
        };
        let a = parse(a_idx)?;
        if a != 0.0 && a != 1.0 {
            return Err(CliError::Data(format!(
                "row {}: arm must be 0 or 1, found {}",
                rowno + 2,
                row[a_idx]
            )));
        }
        y.push(parse(y_idx)?);
        arm.push(a as u8);
        main_data.push(1.0); // intercept
        for &c in &main_idx {
            main_data.push(parse(c)?);
        }
        for &c in &index_idx {
            index_data.push(parse(c)?);
        }
    }
    if dropped > 0 {
        eprintln!("dropped {dropped} row(s) with missing values (complete-case analysis)");
    }
    let n = y.len();
    if n == 0 {
        return Err(CliError::Data("no complete rows left after filtering".into()));
    }
    let p_main = main_idx.len() + 1;
    let x_main = DMatrix::from_row_iterator(n, p_main, main_data);
    let x_index = DMatrix::from_row_iterator(n, index_idx.len(), index_data);
    let mut main_names = vec!["intercept".to_string()];
    main_names.extend(main_cols);
    let dataset = Dataset::new(y, arm, x_main, x_index, main_names, index_cols, cfg.pi_override)
        .map_err(CliError::from)?;
    Ok(Ingested { dataset, dropped_rows: dropped })
}

/// Canonical text of the resolved configuration; its hash ties archives to
/// the exact settings that produced them.
pub fn canonical_config_text(cfg: &RunConfig) -> String {
    let mut out = String::new();
    for (k, v) in cfg.provenance() {
        out.push_str(&k);
        out.push_str(" = ");
        out.push_str(&v);
        out.push('\n');
    }
    out
}

pub struct FitArtifacts {
    pub out_dir: PathBuf,
    pub summary: inference::Summary,
    pub model: sampler::FittedModel,
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> CliResult<()> {
    let path = dir.join(name);
    fs::write(&path, bytes)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

/// Runs the whole fit pipeline and writes the artifact set:
/// `draws.bin`, `coefficients.csv`, `subject_scores.csv`, `figure_left.csv`,
/// `figure_right.csv` and `run.json`.
pub fn run_fit(cfg: &RunConfig, out_dir: &Path) -> CliResult<FitArtifacts> {
    let start = Instant::now();
    let input = cfg
        .input
        .as_ref()
        .ok_or_else(|| CliError::Usage("fit needs `input` in the config".into()))?;
    let ingested = ingest(Path::new(input), cfg)?;
    let dataset = &ingested.dataset;
    dataset.check_support(&cfg.family).map_err(CliError::from)?;

    let beta0 = match &cfg.beta0 {
        Beta0Spec::Auto => {
            sampler::auto_beta0(dataset, &cfg.family, &cfg.model_settings()).map_err(CliError::from)?
        }
        Beta0Spec::Given(v) => {
            if v.len() != dataset.p_index() {
                return Err(CliError::Usage(format!(
                    "beta0 has length {}, expected {}",
                    v.len(),
                    dataset.p_index()
                )));
            }
            let b = DVector::from_vec(v.clone());
            let norm = b.norm();
            if norm < 1e-12 {
                return Err(CliError::Usage("beta0 must be nonzero".into()));
            }
            b / norm
        }
    };
    let hyper = HyperParameters::isotropic(
        cfg.lambda_prior,
        beta0,
        cfg.lambda_prop,
        dataset.p_main(),
        cfg.m_prior_sd,
    )
    .map_err(CliError::from)?;

    let fit_start = Instant::now();
    let model = sampler::fit_model(
        dataset,
        &cfg.family,
        &hyper,
        &cfg.model_settings(),
        &cfg.chain_config(),
    )
    .map_err(CliError::from)?;
    let fit_seconds = fit_start.elapsed().as_secs_f64();
    if model.draws.acceptance_rate == 0.0 {
        eprintln!("warning: no β proposal was accepted after burn-in; the chain may be stuck");
    }
    if model.draws.scoring_failures > 0 {
        eprintln!(
            "warning: {} scoring loop(s) hit the iteration cap during sampling",
            model.draws.scoring_failures
        );
    }

    let summary =
        inference::summarize(&model.draws, dataset, &model.init.family, &model.init.system)
            .map_err(CliError::from)?;

    fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", out_dir.display())))?;

    let config_text = canonical_config_text(cfg);
    let archive = DrawsArchive {
        seed: cfg.seed,
        config_hash: fnv1a(config_text.as_bytes()),
        family: model.init.family,
        system: model.init.system.clone(),
        rho: model.init.rho,
        lambda_prior: model.hyper.lambda_prior,
        lambda_prop: model.hyper.lambda_prop,
        beta0: model.hyper.beta0.clone(),
        m0: model.hyper.m0.clone(),
        q: model.hyper.q.clone(),
        main_names: dataset.main_names().to_vec(),
        index_names: dataset.index_names().to_vec(),
        chain: cfg.chain_config(),
        draws: model.draws.clone(),
    };
    let mut buf = Vec::new();
    archive.write_to(&mut buf).map_err(CliError::from)?;
    write_file(out_dir, "draws.bin", &buf)?;

    write_file(out_dir, "coefficients.csv", report::render_coefficients(&summary).as_bytes())?;
    write_file(
        out_dir,
        "subject_scores.csv",
        report::render_subject_scores(&summary.subject_scores).as_bytes(),
    )?;
    write_file(out_dir, "figure_left.csv", report::render_figure_left(&summary).as_bytes())?;
    write_file(out_dir, "figure_right.csv", report::render_figure_right(&summary).as_bytes())?;

    let diag = &model.draws.diagnostics;
    let diag_json: Vec<serde_json::Value> = diag
        .names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            serde_json::json!({
                "name": name,
                "ess": diag.ess[i],
                "split_rhat": diag.split_rhat[i],
            })
        })
        .collect();
    let run_json = serde_json::json!({
        "config": cfg.provenance(),
        "config_hash": format!("{:016x}", fnv1a(config_text.as_bytes())),
        "n": dataset.n(),
        "p_main": dataset.p_main(),
        "p_index": dataset.p_index(),
        "dropped_rows": ingested.dropped_rows,
        "pi": [dataset.pi().0, dataset.pi().1],
        "rho": model.init.rho,
        "dispersion": model.init.family.dispersion(),
        "initialization": {
            "converged": model.init.converged,
            "outer_iterations": model.init.outer_iterations,
        },
        "acceptance_rate": model.draws.acceptance_rate,
        "n_draws": model.draws.n_draws(),
        "scoring_failures": model.draws.scoring_failures,
        "error_rejections": model.draws.error_rejections,
        "rule_disagreements": summary.rule_disagreements,
        "diagnostics": diag_json,
        "timings": {
            "fit_seconds": fit_seconds,
            "total_seconds": start.elapsed().as_secs_f64(),
        },
    });
    write_file(
        out_dir,
        "run.json",
        serde_json::to_string_pretty(&run_json).expect("json").as_bytes(),
    )?;

    Ok(FitArtifacts { out_dir: out_dir.to_path_buf(), summary, model })
}

/// Scores a new covariate file against a stored model; writes `scores.csv`.
pub fn run_score(model_path: &Path, data_path: &Path, out_dir: &Path) -> CliResult<PathBuf> {
    let bytes = fs::read(model_path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", model_path.display())))?;
    let archive = DrawsArchive::read_from(&mut bytes.as_slice()).map_err(CliError::from)?;

    let table = read_csv(data_path)?;
    // every non-intercept training column must be present
    let needed: Vec<&String> = archive
        .main_names
        .iter()
        .filter(|n| n.as_str() != "intercept")
        .chain(archive.index_names.iter())
        .collect();
    let mut col_of = std::collections::BTreeMap::new();
    for name in needed {
        col_of.insert(name.clone(), column_index(&table, name)?);
    }

    let mut kept_rows: Vec<&Vec<String>> = Vec::new();
    let mut dropped = 0usize;
    for row in &table.rows {
        if row.len() != table.header.len() {
            return Err(CliError::Data("ragged row in new data".into()));
        }
        if col_of.values().any(|&c| is_missing(&row[c])) {
            dropped += 1;
        } else {
            kept_rows.push(row);
        }
    }
    if dropped > 0 {
        eprintln!("dropped {dropped} row(s) with missing values (complete-case scoring)");
    }

    fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", out_dir.display())))?;
    let out_path = out_dir.join("scores.csv");
    let n = kept_rows.len();
    if n == 0 {
        // empty input scores to an empty table
        fs::write(&out_path, report::render_scored_rows(&[]))
            .map_err(|e| CliError::Data(e.to_string()))?;
        return Ok(out_path);
    }

    let parse_cell = |row: &[String], name: &str, rowno: usize| -> CliResult<f64> {
        let c = col_of[name];
        row[c].parse::<f64>().map_err(|_| {
            CliError::Data(format!("row {}: cannot parse `{}` in column `{name}`", rowno + 2, row[c]))
        })
    };
    let p_main = archive.main_names.len();
    let p_index = archive.index_names.len();
    let mut x_main = DMatrix::zeros(n, p_main);
    let mut x_index = DMatrix::zeros(n, p_index);
    for (i, row) in kept_rows.iter().enumerate() {
        for (j, name) in archive.main_names.iter().enumerate() {
            x_main[(i, j)] =
                if name == "intercept" { 1.0 } else { parse_cell(row, name, i)? };
        }
        for (j, name) in archive.index_names.iter().enumerate() {
            x_index[(i, j)] = parse_cell(row, name, i)?;
        }
    }

    let rows = inference::score_matrix(&x_main, &x_index, &archive.draws, &archive.family, &archive.system)
        .map_err(CliError::from)?;
    fs::write(&out_path, report::render_scored_rows(&rows))
        .map_err(|e| CliError::Data(e.to_string()))?;
    Ok(out_path)
}

/// Generates a synthetic trial CSV (`dataset.csv`) from the config's synth
/// settings.
pub fn run_synth(cfg: &RunConfig, out_dir: &Path) -> CliResult<PathBuf> {
    let scenario = synth::Scenario {
        n: cfg.synth_n,
        p: cfg.synth_p,
        pi1: cfg.pi1,
        family: cfg.family,
        m_star: cfg.synth_m_star.clone().unwrap_or_else(|| vec![0.0; cfg.synth_p]),
        beta_star: cfg.synth_beta_star.clone().unwrap_or_else(|| vec![1.0; cfg.synth_p]),
        shape: cfg.synth_shape,
        amplitude: cfg.synth_amplitude,
        seed: cfg.seed,
    };
    if scenario.m_star.len() != scenario.p {
        return Err(CliError::Usage("synth_m_star length must equal synth_p".into()));
    }
    if scenario.beta_star.len() != scenario.p {
        return Err(CliError::Usage("synth_beta_star length must equal synth_p".into()));
    }
    let dataset = synth::generate(&scenario).map_err(CliError::from)?;
    fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", out_dir.display())))?;
    let mut out = String::from("y,a");
    for name in dataset.index_names() {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for i in 0..dataset.n() {
        out.push_str(&format!("{}", dataset.y()[i]));
        out.push_str(&format!(",{}", dataset.arm()[i]));
        for j in 0..dataset.p_index() {
            out.push_str(&format!(",{}", dataset.x_index()[(i, j)]));
        }
        out.push('\n');
    }
    let path = out_dir.join("dataset.csv");
    fs::write(&path, out).map_err(|e| CliError::Data(e.to_string()))?;
    Ok(path)
}

/// Reads a config file, applying the optional seed/out overrides from the
/// command line.
pub fn load_config_with_overrides(
    path: &Path,
    seed: Option<u64>,
    out: Option<&Path>,
) -> CliResult<(RunConfig, PathBuf)> {
    let mut cfg = load_config(path)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(out) = out {
        cfg.out = Some(out.display().to_string());
    }
    let out_dir = cfg
        .out
        .clone()
        .ok_or_else(|| CliError::Usage("no output directory: set `out` or pass --out".into()))?;
    Ok((cfg, PathBuf::from(out_dir)))
}
