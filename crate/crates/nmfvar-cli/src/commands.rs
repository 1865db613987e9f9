use std::path::{Path, PathBuf};

use ndarray::Array2;

use nmfvar::cluster::{self, MembershipSeries};
use nmfvar::design::{self, CovariateMode, Design};
use nmfvar::error::Error;
use nmfvar::frame::{self, TimeSeriesFrame};
use nmfvar::model_io::{self, ModelDoc};
use nmfvar::preprocess::{apply_pipeline, invert_pipeline, PipelineSpec};
use nmfvar::select::{self, CvOptions, FoldMode};
use nmfvar::solver::{fit, FactorModel, FitOptions};
use nmfvar::var;

pub use crate::CommonOpts;

type Result<T> = std::result::Result<T, Error>;

/// Maps library errors onto the documented exit codes: 2 input, 3
/// configuration/feasibility, 4 numeric.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io { .. } | Error::MalformedInput { .. } | Error::Model(_) => 2,
        Error::InvalidParameter(_)
        | Error::InvalidData(_)
        | Error::DimensionMismatch { .. }
        | Error::NotSquare { .. } => 3,
        Error::Numeric(_) | Error::NoConvergence { .. } | Error::DivisionByZero { .. } => 4,
    }
}

pub struct FitConfig {
    pub common: CommonOpts,
    pub rank: usize,
    pub lags: Option<usize>,
    pub kernel_beta: Option<f64>,
    pub identity: bool,
    pub fix_basis: Option<String>,
    pub basis_names: Option<String>,
}

pub struct CvConfig {
    pub common: CommonOpts,
    pub rank: Option<usize>,
    pub d_candidates: String,
    pub q_candidates: Option<String>,
    pub folds: usize,
    pub blocked_folds: bool,
}

pub struct ForecastConfig {
    pub common: CommonOpts,
    pub model: PathBuf,
    pub horizon: usize,
}

fn read_input(common: &CommonOpts) -> Result<TimeSeriesFrame> {
    Ok(frame::read_csv(&common.input)?.frame)
}

fn preprocess(
    common: &CommonOpts,
    raw: &TimeSeriesFrame,
) -> Result<(TimeSeriesFrame, nmfvar::preprocess::FittedPipeline)> {
    let spec = PipelineSpec::parse(&common.transform)?;
    apply_pipeline(raw, &spec)
}

fn parse_fixed_basis(spec: &str, p: usize, q: usize) -> Result<Array2<f64>> {
    if spec == "scalar" {
        if p != 1 || q != 1 {
            return Err(Error::InvalidParameter(format!(
                "--fix-basis scalar needs univariate data with rank 1, got P = {p}, Q = {q}"
            )));
        }
        return Ok(Array2::from_elem((1, 1), 1.0));
    }
    let text = std::fs::read_to_string(spec).map_err(|source| Error::Io {
        path: spec.to_string(),
        source,
    })?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|c| c.trim().parse::<f64>()).collect();
        let row = row.map_err(|_| Error::MalformedInput {
            path: spec.to_string(),
            row: i + 1,
            detail: "basis cells must be numbers".into(),
        })?;
        rows.push(row);
    }
    if rows.len() != p || rows.iter().any(|r| r.len() != q) {
        return Err(Error::InvalidParameter(format!(
            "fixed basis must be {p}x{q} to match the data and rank"
        )));
    }
    let mut m = Array2::zeros((p, q));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    Ok(m)
}

fn basis_labels(q: usize, names: Option<&str>) -> Result<Vec<String>> {
    match names {
        None => Ok((1..=q).map(|i| format!("Basis{i}")).collect()),
        Some(list) => {
            let labels: Vec<String> = list.split(',').map(|s| s.trim().to_string()).collect();
            if labels.len() != q || labels.iter().any(String::is_empty) {
                return Err(Error::InvalidParameter(format!(
                    "--basis-names needs exactly {q} non-empty comma-separated names"
                )));
            }
            Ok(labels)
        }
    }
}

/// Writes a labeled table: comments, then a header of `first_header` plus the
/// column names, then one row per label. Numbers use the same shortest
/// round-trip formatting as the frame writer.
fn write_table(
    path: &Path,
    comments: &[String],
    first_header: &str,
    col_names: &[String],
    row_labels: &[String],
    rows: &Array2<f64>,
) -> Result<()> {
    use std::io::Write;
    let file = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = std::io::BufWriter::new(file);
    for c in comments {
        writeln!(out, "{c}").map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec![first_header.to_string()];
    header.extend(col_names.iter().cloned());
    wtr.write_record(&header).map_err(|e| Error::Model(e.to_string()))?;
    for (i, label) in row_labels.iter().enumerate() {
        let mut record = vec![label.clone()];
        for j in 0..rows.ncols() {
            record.push(rows[(i, j)].to_string());
        }
        wtr.write_record(&record).map_err(|e| Error::Model(e.to_string()))?;
    }
    wtr.flush().map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}

fn write_membership_csv(
    path: &Path,
    series: &MembershipSeries,
    row_labels: &[String],
    basis_names: &[String],
    first_header: &str,
    comments: &[String],
) -> Result<()> {
    // rows = clustered axis, columns = bases
    let table = match series.axis {
        cluster::MembershipAxis::TimePoints => series.probabilities.t().to_owned(),
        cluster::MembershipAxis::Variables => series.probabilities.clone(),
    };
    write_table(path, comments, first_header, basis_names, row_labels, &table)
}

fn write_series_csv(
    path: &Path,
    variable_names: &[String],
    time_labels: &[String],
    values: &Array2<f64>,
    comments: &[String],
) -> Result<()> {
    let frame = TimeSeriesFrame::with_timestamps(
        variable_names.to_vec(),
        time_labels.to_vec(),
        (0..time_labels.len()).map(|i| i as f64).collect(),
        values.clone(),
    )?;
    frame::write_csv(path, &frame, comments, "time")
}

/// Per-column fitted values through the same deterministic path the
/// forecaster uses.
fn fitted_values(model: &FactorModel, design: &Design) -> Array2<f64> {
    let n = design.covariates.ncols();
    let mut out = Array2::zeros((model.n_vars(), n));
    for j in 0..n {
        let col = model.predict_column(design.covariates.column(j));
        out.column_mut(j).assign(&col);
    }
    out
}

pub fn cmd_fit(cfg: FitConfig) -> Result<()> {
    let raw = read_input(&cfg.common)?;
    let (pre, pipeline) = preprocess(&cfg.common, &raw)?;

    let design = if let Some(d) = cfg.lags {
        design::build_lag_design(&pre, d)?
    } else if let Some(beta) = cfg.kernel_beta {
        design::build_kernel_design(&pre, beta)?
    } else if cfg.identity {
        design::build_identity_design(&pre)?
    } else {
        return Err(Error::InvalidParameter(
            "choose a covariate mode: --lags D, --kernel-beta B, or --identity".into(),
        ));
    };

    let mut opts = FitOptions::new(cfg.rank);
    opts.max_iter = cfg.common.max_iter;
    opts.tolerance = cfg.common.tol;
    opts.seed = cfg.common.seed;
    if let Some(spec) = &cfg.fix_basis {
        opts.fixed_basis = Some(parse_fixed_basis(spec, pre.n_vars(), cfg.rank)?);
    }

    let model = fit(&design, &opts)?;

    let d = design.mode.lag_order();
    let target_labels: Vec<String> = pre.time_labels()[d..].to_vec();
    let fitted = fitted_values(&model, &design);
    let residuals = &design.target - &fitted;

    let basis_names = basis_labels(model.rank, cfg.basis_names.as_deref())?;
    let time_memb = cluster::time_membership(&model.diagnostics.coefficient_matrix)?
        .with_labels(target_labels.clone());

    // all-zero variables have undefined memberships; report them uniform and
    // leave a note so the file stays well formed
    let mut var_basis = model.basis.clone();
    let mut degenerate_vars = Vec::new();
    for (i, mut row) in var_basis.rows_mut().into_iter().enumerate() {
        if row.iter().all(|&v| v == 0.0) {
            row.fill(1.0 / model.rank as f64);
            degenerate_vars.push(pre.variable_names()[i].clone());
        }
    }
    let var_memb =
        cluster::variable_membership(&var_basis)?.with_labels(pre.variable_names().to_vec());

    let out = &cfg.common.output_dir;
    std::fs::create_dir_all(out).map_err(|source| Error::Io {
        path: out.display().to_string(),
        source,
    })?;

    let doc = ModelDoc::from_model(
        &model,
        &pipeline,
        pre.variable_names(),
        pre.n_obs(),
        cfg.common.seed,
    );
    model_io::save_model(&out.join("model.json"), &doc)?;

    write_series_csv(
        &out.join("fitted.csv"),
        pre.variable_names(),
        &target_labels,
        &fitted,
        &[],
    )?;
    write_series_csv(
        &out.join("residuals.csv"),
        pre.variable_names(),
        &target_labels,
        &residuals,
        &[],
    )?;
    write_membership_csv(
        &out.join("memberships_time.csv"),
        &time_memb,
        &target_labels,
        &basis_names,
        "time",
        &[],
    )?;
    let var_comments: Vec<String> = if degenerate_vars.is_empty() {
        Vec::new()
    } else {
        vec![format!(
            "# note: all-zero variables reported with uniform membership: {}",
            degenerate_vars.join(", ")
        )]
    };
    write_membership_csv(
        &out.join("memberships_vars.csv"),
        &var_memb,
        pre.variable_names(),
        &basis_names,
        "variable",
        &var_comments,
    )?;

    // stability diagnostics exist only for lag covariates
    let (rho, stationary, params) = if design.mode.is_lags() {
        let coeffs = var::var_coefficients(&model)?;
        let companion = var::companion_form(&coeffs)?;
        let reduction = var::parameter_reduction(pre.n_vars(), model.rank, d);
        (
            Some(companion.spectral_radius),
            Some(companion.stationary),
            Some(reduction),
        )
    } else {
        (None, None, None)
    };

    let per_var = cluster::r_squared_per_variable(&design.target, &fitted)?;
    let diagnostics = serde_json::json!({
        "r_squared": model.diagnostics.r_squared,
        "r_squared_per_variable": per_var.iter().map(|v| if v.is_finite() { Some(*v) } else { None }).collect::<Vec<_>>(),
        "spectral_radius": rho,
        "stationary": stationary,
        "parameters": params.map(|r| serde_json::json!({
            "nmfvar_params": r.nmfvar_params,
            "var_params": r.var_params,
            "ratio": r.ratio,
        })),
        "objective_trace": model.diagnostics.objective_trace,
        "iterations": model.diagnostics.iterations,
        "converged": model.diagnostics.converged,
        "seed": cfg.common.seed,
    });
    write_json(&out.join("diagnostics.json"), &diagnostics)?;

    println!(
        "fit: Q={} mode={} iterations={} converged={} r_squared={}{}",
        model.rank,
        mode_name(&design.mode),
        model.diagnostics.iterations,
        model.diagnostics.converged,
        model
            .diagnostics
            .r_squared
            .map_or("n/a".into(), |v| format!("{v:.4}")),
        rho.map_or(String::new(), |r| format!(" spectral_radius={r:.4}")),
    );
    Ok(())
}

fn mode_name(mode: &CovariateMode) -> &'static str {
    match mode {
        CovariateMode::Lags { .. } => "lags",
        CovariateMode::Kernel { .. } => "kernel",
        CovariateMode::Identity => "identity",
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Model(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse_candidates(text: &str, what: &str) -> Result<Vec<usize>> {
    let text = text.trim();
    if let Some((lo, hi)) = text.split_once("..") {
        let lo: usize = lo.trim().parse().map_err(|_| {
            Error::InvalidParameter(format!("bad {what} range '{text}'"))
        })?;
        let hi: usize = hi.trim().parse().map_err(|_| {
            Error::InvalidParameter(format!("bad {what} range '{text}'"))
        })?;
        if lo == 0 || hi < lo {
            return Err(Error::InvalidParameter(format!("bad {what} range '{text}'")));
        }
        return Ok((lo..=hi).collect());
    }
    let vals: std::result::Result<Vec<usize>, _> =
        text.split(',').map(|c| c.trim().parse::<usize>()).collect();
    let vals =
        vals.map_err(|_| Error::InvalidParameter(format!("bad {what} list '{text}'")))?;
    if vals.is_empty() || vals.contains(&0) {
        return Err(Error::InvalidParameter(format!("bad {what} list '{text}'")));
    }
    Ok(vals)
}

pub fn cmd_cv(cfg: CvConfig) -> Result<()> {
    let raw = read_input(&cfg.common)?;
    let (pre, _) = preprocess(&cfg.common, &raw)?;

    let d_candidates = parse_candidates(&cfg.d_candidates, "lag")?;
    let q_candidates = match &cfg.q_candidates {
        Some(text) => parse_candidates(text, "rank")?,
        None => match cfg.rank {
            Some(q) => vec![q],
            None => {
                return Err(Error::InvalidParameter(
                    "provide --rank or --q-candidates".into(),
                ))
            }
        },
    };

    let opts = CvOptions {
        folds: cfg.folds,
        seed: cfg.common.seed,
        fold_mode: if cfg.blocked_folds {
            FoldMode::ContiguousBlocks
        } else {
            FoldMode::ShuffledRoundRobin
        },
        max_iter: cfg.common.max_iter,
        tolerance: cfg.common.tol,
    };
    let report = select::cross_validate(&pre, &q_candidates, &d_candidates, &opts)?;

    let out = &cfg.common.output_dir;
    std::fs::create_dir_all(out).map_err(|source| Error::Io {
        path: out.display().to_string(),
        source,
    })?;
    let value = serde_json::to_value(&report).map_err(|e| Error::Model(e.to_string()))?;
    write_json(&out.join("cv_report.json"), &value)?;

    println!("{:>4} {:>4} {:>16} {:>16}", "Q", "D", "mean_sse", "sse_per_column");
    for c in &report.candidates {
        println!(
            "{:>4} {:>4} {:>16.6} {:>16.8}",
            c.rank, c.lag_order, c.mean_sse, c.mean_sse_per_column
        );
    }
    println!("chosen: Q={} D={}", report.chosen_rank, report.chosen_lag_order);
    Ok(())
}

pub fn cmd_forecast(cfg: ForecastConfig) -> Result<()> {
    let doc = model_io::load_model(&cfg.model)?;
    if !doc.covariate_mode.is_lags() {
        return Err(Error::InvalidParameter(
            "forecasting requires lag covariates".into(),
        ));
    }
    let model = doc.to_model()?;
    let d = model.lag_order;

    let raw = read_input(&cfg.common)?;
    if raw.n_vars() != doc.p {
        return Err(Error::DimensionMismatch {
            context: "forecast input variables",
            left: raw.n_vars().to_string(),
            right: doc.p.to_string(),
        });
    }
    let pre = doc.pipeline.reapply(&raw)?;
    let t = pre.n_obs();
    if t < d + 1 {
        return Err(Error::InvalidParameter(format!(
            "need at least {} preprocessed observations for lag order {d}, got {t}",
            d + 1
        )));
    }

    // history is the window feeding the final training point, so the first
    // forecast step re-predicts that point and later steps continue past it
    let mut history = Array2::zeros((pre.n_vars(), d));
    for (j, col) in (t - 1 - d..t - 1).enumerate() {
        history
            .column_mut(j)
            .assign(&pre.values().column(col));
    }
    let forecasts = var::forecast(&model, &history, cfg.horizon)?;

    // invert on the full history-plus-forecast matrix so differencing is
    // anchored by the actual observations
    let mut assembled = Array2::zeros((pre.n_vars(), t - 1 + cfg.horizon));
    for j in 0..t - 1 {
        assembled.column_mut(j).assign(&pre.values().column(j));
    }
    for h in 0..cfg.horizon {
        assembled.column_mut(t - 1 + h).assign(&forecasts.column(h));
    }
    let spacing = pre.spacing();
    let start = pre.timestamps()[0];
    let timestamps: Vec<f64> = (0..t - 1 + cfg.horizon)
        .map(|j| start + spacing * j as f64)
        .collect();
    let assembled_frame = TimeSeriesFrame::from_numeric(
        pre.variable_names().to_vec(),
        timestamps,
        assembled,
    )?;
    let inversion = invert_pipeline(&assembled_frame, &doc.pipeline)?;
    let inverted = inversion.frame;
    let total = inverted.n_obs();
    let mut final_values = Array2::zeros((doc.p, cfg.horizon));
    let mut labels = Vec::with_capacity(cfg.horizon);
    for h in 0..cfg.horizon {
        let j = total - cfg.horizon + h;
        final_values.column_mut(h).assign(&inverted.values().column(j));
        labels.push(inverted.time_labels()[j].clone());
    }

    let out = &cfg.common.output_dir;
    std::fs::create_dir_all(out).map_err(|source| Error::Io {
        path: out.display().to_string(),
        source,
    })?;
    let comments: Vec<String> = if inversion.smoothed_scale {
        vec!["# scale: smoothed (pipeline contains a moving average; its inversion is the identity)".into()]
    } else {
        Vec::new()
    };
    // rows = variables, columns = horizon steps
    write_table(
        &out.join("forecast.csv"),
        &comments,
        "variable",
        &labels,
        pre.variable_names(),
        &final_values,
    )?;
    println!(
        "forecast: horizon={} starting at {}{}",
        cfg.horizon,
        labels.first().map(String::as_str).unwrap_or("?"),
        if inversion.smoothed_scale {
            " (smoothed scale)"
        } else {
            ""
        }
    );
    Ok(())
}
