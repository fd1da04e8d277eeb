use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rmd_core::entrygame::{dataset_to_csv, population, simulate_data};
use rmd_core::harness::DgpSpec;
use rmd_core::{invert_ci, linalg, md_pipeline, power_report, run_experiment, Error, ExperimentKind, ExperimentRows, GameParams, McConfig};
use serde::Serialize;

use crate::input::{matrix, read_json, ProblemInput};
use crate::output::{content_hash, csv_bytes, emit, json_bytes};
use crate::{CliResult, Failure};

/// `A` is pseudo-inverted for the weight; far from unit scale the rank
/// threshold and the inverse become unreliable.
fn warn_on_scale(a_hat: &DMatrix<f64>) {
    let norm = linalg::singular_values(a_hat).iter().copied().fold(0.0, f64::max);
    if !(1e-4..=1e4).contains(&norm) {
        log::warn!("||A||_2 = {norm:.3e} is far from unit scale; consider rescaling the reduced-form parameters");
    }
}

#[derive(Serialize)]
struct RunMetadata<'a> {
    command: &'a str,
    version: &'a str,
    config: &'a McConfig,
    config_hash: String,
    csv_path: Option<String>,
    csv_hash: String,
    wall_time_secs: f64,
    total_failures: usize,
    oracle_df: Option<usize>,
    threads: usize,
}

pub fn monte_carlo(
    kind: ExperimentKind,
    command: &str,
    config: &Path,
    output: Option<PathBuf>,
    meta: Option<PathBuf>,
    seed: Option<u64>,
) -> CliResult<()> {
    let mut cfg: McConfig = read_json(config)?;
    cfg.experiment = kind;
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    cfg.validate()?;
    let report = run_experiment(&cfg)?;
    let csv = match &report.rows {
        ExperimentRows::Size(rows) => csv_bytes(rows)?,
        ExperimentRows::Rank(rows) => csv_bytes(rows)?,
        ExperimentRows::NullDist(rows) => csv_bytes(rows)?,
    };
    let csv_path = output.or_else(|| cfg.output.csv.as_ref().map(PathBuf::from));
    emit(csv_path.as_deref(), &csv)?;

    let meta_path = meta
        .or_else(|| cfg.output.json.as_ref().map(PathBuf::from))
        .or_else(|| csv_path.as_ref().map(|p| p.with_extension("json")));
    if let Some(path) = meta_path {
        let config_json = serde_json::to_vec(&cfg).map_err(|e| Failure::Io(e.to_string()))?;
        let md = RunMetadata {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config: &cfg,
            config_hash: content_hash(&config_json),
            csv_path: csv_path.as_ref().map(|p| p.display().to_string()),
            csv_hash: content_hash(&csv),
            wall_time_secs: report.wall_time_secs,
            total_failures: report.total_failures,
            oracle_df: report.oracle_df,
            threads: rayon::current_num_threads(),
        };
        emit(Some(&path), &json_bytes(&md)?)?;
    }
    Ok(())
}

pub fn test(input: &Path, output: Option<PathBuf>, seed: Option<u64>) -> CliResult<()> {
    let (inp, base) = ProblemInput::load(input)?;
    let model = inp.build_model()?;
    let rf = inp.reduced_form(&base)?;
    let beta0 = inp.beta0(model.dims().p)?;
    let pipe = md_pipeline(model.as_ref(), &rf, &beta0, &inp.options(seed))?;
    warn_on_scale(&pipe.a_hat);
    let result = pipe.decide_estimated(inp.tau)?;
    emit(output.as_deref(), &json_bytes(&result)?)
}

pub fn ci(input: &Path, output: Option<PathBuf>, csv: Option<PathBuf>, seed: Option<u64>) -> CliResult<()> {
    let (inp, base) = ProblemInput::load(input)?;
    let grid = inp
        .beta_grid
        .clone()
        .ok_or_else(|| Failure::Config("ci input needs beta_grid".into()))?;
    if grid.is_empty() {
        return Err(Failure::Config("beta_grid is empty".into()));
    }
    let model = inp.build_model()?;
    let rf = inp.reduced_form(&base)?;
    let opts = inp.options(seed);
    let first = md_pipeline(model.as_ref(), &rf, &DVector::from_element(1, grid[0]), &opts)?;
    warn_on_scale(&first.a_hat);
    let set = invert_ci(model.as_ref(), &rf, &grid, inp.tau, &opts, inp.strict)?;
    if let Some(path) = csv {
        emit(Some(&path), &csv_bytes(&set.points)?)?;
    }
    emit(output.as_deref(), &json_bytes(&set)?)
}

#[derive(Serialize)]
struct WeightRow {
    component: usize,
    delta_star: f64,
    relative_weight: f64,
}

pub fn power_local(input: &Path, output: Option<PathBuf>, weights: Option<PathBuf>, seed: Option<u64>) -> CliResult<()> {
    let (inp, base) = ProblemInput::load(input)?;
    let model = inp.build_model()?;
    let opts = inp.options(seed);
    let beta0 = inp.beta0(model.dims().p)?;

    let (theta0, alpha0, weight, df, n) = match inp.dgp_params()? {
        Some(params) if !inp.has_reduced_form() => {
            let pop = population(&params)?;
            let df = match inp.df {
                Some(df) => df,
                None if pop.df() > 0 => pop.df() as usize,
                None => {
                    return Err(Error::DegreesOfFreedom {
                        df: pop.df(),
                        r_sigma: pop.r_sigma,
                        r_alpha: pop.r_alpha,
                    }
                    .into())
                }
            };
            let alpha0 = inp.alpha0.clone().map(DVector::from_vec).unwrap_or(pop.alpha0);
            (pop.theta0, alpha0, pop.weight, df, inp.n.unwrap_or(1000))
        }
        _ => {
            let rf = inp.reduced_form(&base)?;
            let pipe = md_pipeline(model.as_ref(), &rf, &beta0, &opts)?;
            warn_on_scale(&pipe.a_hat);
            let df = match inp.df {
                Some(df) => df,
                None if pipe.df_hat() > 0 => pipe.df_hat() as usize,
                None => {
                    return Err(Error::DegreesOfFreedom {
                        df: pipe.df_hat(),
                        r_sigma: pipe.r_sigma.rank,
                        r_alpha: pipe.r_alpha.rank,
                    }
                    .into())
                }
            };
            let alpha0 = inp.alpha0.clone().map(DVector::from_vec).unwrap_or(pipe.alpha_hat);
            let weight = match &inp.weight {
                Some(rows) => matrix(rows, "weight")?,
                None => pipe.w_hat,
            };
            (rf.theta_hat, alpha0, weight, df, rf.n)
        }
    };
    let report = power_report(
        model.as_ref(),
        &theta0,
        &alpha0,
        &beta0,
        &weight,
        df,
        inp.tau,
        n,
        opts.b,
        &inp.scales,
    )?;
    if let Some(path) = weights {
        let rows: Vec<WeightRow> = report
            .delta_star
            .iter()
            .zip(&report.relative_weights)
            .enumerate()
            .map(|(i, (&d, &w))| WeightRow {
                component: i + 1,
                delta_star: d,
                relative_weight: w,
            })
            .collect();
        emit(Some(&path), &csv_bytes(&rows)?)?;
    }
    emit(output.as_deref(), &json_bytes(&report)?)
}

pub fn simulate_game(dgp: &str, n: usize, seed: u64, output: Option<PathBuf>) -> CliResult<()> {
    let params: GameParams = if dgp.ends_with(".json") {
        read_json(Path::new(dgp))?
    } else {
        DgpSpec::Named(dgp.into()).params().map_err(|e| Failure::Config(e.to_string()))?
    };
    let data = simulate_data(&params, n, seed)?;
    emit(output.as_deref(), dataset_to_csv(&data).as_bytes())
}
