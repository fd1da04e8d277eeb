use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rmd_core::harness::DgpSpec;
use rmd_core::serde_mat::matrix::from_rows;
use rmd_core::{
    GameConfig, GameDataset, GameModel, GameParams, Market, ModelRef, ModelSpec, ReducedFormEstimate, StructuralModel,
    TestOptions,
};
use serde::Deserialize;

use crate::{CliResult, Failure};

fn default_model() -> ModelRef {
    ModelRef::Name("entry_game".into())
}

fn default_tau() -> f64 {
    0.05
}

fn default_scales() -> Vec<f64> {
    vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]
}

/// Input of `test`, `ci` and `power-local`.
///
/// The reduced form comes from `theta_hat`/`sigma_hat`/`n`, from an
/// entry-game CSV (`data_csv`, relative to the input file), or, for
/// `power-local` only, from the population objects of `dgp`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemInput {
    #[serde(default = "default_model")]
    pub model: ModelRef,
    pub theta_hat: Option<Vec<f64>>,
    pub sigma_hat: Option<Vec<Vec<f64>>>,
    pub n: Option<usize>,
    pub data_csv: Option<PathBuf>,
    pub dgp: Option<DgpSpec>,
    pub beta0: Option<Vec<f64>>,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub options: TestOptions,
    pub beta_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub strict: bool,
    pub alpha0: Option<Vec<f64>>,
    pub weight: Option<Vec<Vec<f64>>>,
    pub df: Option<usize>,
    #[serde(default = "default_scales")]
    pub scales: Vec<f64>,
}

#[derive(Debug, Deserialize)]
struct MarketRecord {
    #[allow(dead_code)]
    market_id: usize,
    state: usize,
    a1: u8,
    a2: u8,
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

pub fn matrix(rows: &[Vec<f64>], what: &str) -> CliResult<DMatrix<f64>> {
    from_rows(rows).map_err(|e| Failure::Config(format!("{what}: {e}")))
}

/// Reads a `market_id,state,a1,a2` CSV with one-based states.
pub fn read_markets(path: &Path, states: [f64; 3]) -> CliResult<GameDataset> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let mut markets = Vec::new();
    for (line, rec) in reader.deserialize::<MarketRecord>().enumerate() {
        let rec = rec.map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        if !(1..=3).contains(&rec.state) || rec.a1 > 1 || rec.a2 > 1 {
            return Err(Failure::Config(format!(
                "{} row {}: state must be 1..3 and actions 0 or 1",
                path.display(),
                line + 1
            )));
        }
        markets.push(Market {
            state: rec.state - 1,
            a1: rec.a1 == 1,
            a2: rec.a2 == 1,
        });
    }
    Ok(GameDataset { markets, states })
}

impl ProblemInput {
    pub fn load(path: &Path) -> CliResult<(Self, PathBuf)> {
        let input: Self = read_json(path)?;
        if !(input.tau > 0.0 && input.tau < 1.0) {
            return Err(Failure::Config(format!("tau must lie in (0, 1), got {}", input.tau)));
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((input, base))
    }

    pub fn dgp_params(&self) -> CliResult<Option<GameParams>> {
        self.dgp
            .as_ref()
            .map(|d| d.params().map_err(|e| Failure::Config(e.to_string())))
            .transpose()
    }

    /// Entry-game settings, with states taken from `dgp` when one is given.
    fn game_config(&self) -> CliResult<Option<GameConfig>> {
        let spec = self.model.spec().map_err(|e| Failure::Config(e.to_string()))?;
        Ok(match spec {
            ModelSpec::EntryGame { mut config } => {
                if let Some(p) = self.dgp_params()? {
                    config.states = p.states;
                }
                Some(config)
            }
            _ => None,
        })
    }

    pub fn build_model(&self) -> CliResult<Box<dyn StructuralModel>> {
        if let Some(cfg) = self.game_config()? {
            return Ok(Box::new(GameModel::from_config(&cfg).map_err(|e| Failure::Config(e.to_string()))?));
        }
        self.model.build().map_err(|e| Failure::Config(e.to_string()))
    }

    pub fn has_reduced_form(&self) -> bool {
        self.theta_hat.is_some() || self.data_csv.is_some()
    }

    pub fn reduced_form(&self, base: &Path) -> CliResult<ReducedFormEstimate> {
        if let Some(rel) = &self.data_csv {
            let cfg = self
                .game_config()?
                .ok_or_else(|| Failure::Config("data_csv needs the entry_game model".into()))?;
            let data = read_markets(&base.join(rel), cfg.states)?;
            return Ok(rmd_core::entrygame::estimate_reduced_form(&data)?);
        }
        let (Some(theta), Some(sigma), Some(n)) = (&self.theta_hat, &self.sigma_hat, self.n) else {
            return Err(Failure::Config(
                "input needs theta_hat, sigma_hat and n, or data_csv".into(),
            ));
        };
        let sigma = matrix(sigma, "sigma_hat")?;
        ReducedFormEstimate::new(DVector::from_vec(theta.clone()), sigma, n).map_err(|e| Failure::Config(e.to_string()))
    }

    pub fn beta0(&self, p: usize) -> CliResult<DVector<f64>> {
        let beta = match (&self.beta0, self.dgp_params()?) {
            (Some(b), _) => b.clone(),
            (None, Some(params)) => vec![params.beta],
            (None, None) => return Err(Failure::Config("input needs beta0".into())),
        };
        if beta.len() != p {
            return Err(Failure::Config(format!("beta0 has {} entries, model expects {p}", beta.len())));
        }
        Ok(DVector::from_vec(beta))
    }

    pub fn options(&self, seed: Option<u64>) -> TestOptions {
        let mut opts = self.options.clone();
        if let Some(s) = seed {
            opts.seed = s;
        }
        opts
    }
}
