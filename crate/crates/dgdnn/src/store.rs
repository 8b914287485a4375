//! Dataset directories and model checkpoints.
//!
//! A dataset directory holds `manifest.json`, one `prices/<TICKER>.csv` per
//! ticker in the input format, the `run_config.json` that produced it and,
//! optionally, per-day feature dumps under `features/`.

use std::path::Path;

use chrono::NaiveDate;
use dgdnn_core::market::{make_window, MarketHistory};
use dgdnn_core::model::{ModelConfig, ModelParams};
use dgdnn_core::training::{StopReason, TrainOutcome};
use dgdnn_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::{FeatureDump, RunConfig};
use crate::error::{create_dir, read_to_string, write, CliError, Result};
use crate::formats::{tensor_bin, tensor_csv};
use crate::ingest::{align, read_ticker_csv, ticker_csv, DropReport};

pub const MANIFEST_VERSION: u32 = 1;
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub source: String,
    pub tickers: Vec<String>,
    pub indicators: Vec<String>,
    pub dates: Vec<NaiveDate>,
    pub manifest_hash: String,
    #[serde(default)]
    pub drop_report: Option<DropReport>,
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

fn from_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse {
        file: path.display().to_string(),
        line: e.line() as u64,
        message: e.to_string(),
    })
}

pub fn write_dataset(
    dir: &Path,
    history: &MarketHistory,
    source: &str,
    drop_report: Option<DropReport>,
    config: &RunConfig,
) -> Result<Manifest> {
    let u = history.universe();
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        source: source.to_string(),
        tickers: u.tickers.clone(),
        indicators: u.indicator_names.clone(),
        dates: u.calendar.clone(),
        manifest_hash: u.manifest_hash(),
        drop_report,
    };
    create_dir(dir)?;
    write(&dir.join("manifest.json"), to_json(&manifest))?;
    for (i, t) in u.tickers.iter().enumerate() {
        write(
            &dir.join("prices").join(format!("{t}.csv")),
            ticker_csv(history, i),
        )?;
    }
    write(&dir.join("run_config.json"), config.to_json())?;
    if config.data.features != FeatureDump::None {
        write_features(
            &dir.join("features"),
            history,
            config.data.lookback,
            config.data.features,
        )?;
    }
    Ok(manifest)
}

/// Normalized lookback windows, one file per day that has a full window.
pub fn write_features(
    dir: &Path,
    history: &MarketHistory,
    lookback: usize,
    kind: FeatureDump,
) -> Result<()> {
    let days = history.n_days();
    for t in lookback.saturating_sub(1)..days {
        let w = make_window(history, t, lookback)?;
        let date = history.universe().calendar[t];
        match kind {
            FeatureDump::None => return Ok(()),
            FeatureDump::Csv => write(&dir.join(format!("{date}.csv")), tensor_csv(&w.features))?,
            FeatureDump::Bin => write(&dir.join(format!("{date}.bin")), tensor_bin(&w.features))?,
        }
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<(Manifest, MarketHistory)> {
    if !dir.is_dir() {
        return Err(CliError::InputNotFound(dir.to_path_buf()));
    }
    let manifest: Manifest = from_json(&dir.join("manifest.json"))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(CliError::Compatibility(format!(
            "manifest version {}",
            manifest.version
        )));
    }
    let series = manifest
        .tickers
        .iter()
        .map(|t| read_ticker_csv(&dir.join("prices").join(format!("{t}.csv"))))
        .collect::<Result<Vec<_>>>()?;
    for s in &series {
        if s.dates != manifest.dates || s.indicator_names != manifest.indicators {
            return Err(CliError::Compatibility(format!(
                "{}: prices do not match the manifest calendar or columns",
                s.ticker
            )));
        }
    }
    let (history, _) = align(series, 0.0)?;
    if history.universe().manifest_hash() != manifest.manifest_hash {
        return Err(CliError::Compatibility(
            "manifest hash does not match its contents".into(),
        ));
    }
    Ok((manifest, history))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub universe_hash: String,
    pub tickers: Vec<String>,
    pub n_nodes: usize,
    pub in_dim: usize,
    pub model: ModelConfig,
    pub run_config: RunConfig,
    pub best_epoch: usize,
    pub best_val_mcc: f64,
    pub stop: StopReason,
    pub param_names: Vec<String>,
    pub tensors: Vec<Tensor>,
    #[serde(default)]
    pub static_adjacency: Option<Tensor>,
}

impl Checkpoint {
    pub fn new(
        params: &ModelParams,
        outcome: &TrainOutcome,
        manifest: &Manifest,
        run_config: &RunConfig,
        static_adjacency: Option<Tensor>,
    ) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            universe_hash: manifest.manifest_hash.clone(),
            tickers: manifest.tickers.clone(),
            n_nodes: params.n_nodes,
            in_dim: params.in_dim,
            model: params.config.clone(),
            run_config: run_config.clone(),
            best_epoch: outcome.best_epoch,
            best_val_mcc: outcome.best_val_mcc,
            stop: outcome.stop.clone(),
            param_names: params.layout.names.clone(),
            tensors: params.tensors.clone(),
            static_adjacency,
        }
    }

    pub fn params(&self) -> Result<ModelParams> {
        Ok(ModelParams::from_tensors(
            self.model.clone(),
            self.n_nodes,
            self.in_dim,
            self.tensors.clone(),
        )?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write(path, to_json(self))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(CliError::InputNotFound(path.to_path_buf()));
        }
        let c: Self = from_json(path)?;
        if c.version != CHECKPOINT_VERSION {
            return Err(CliError::Compatibility(format!(
                "checkpoint version {}",
                c.version
            )));
        }
        Ok(c)
    }

    pub fn check_universe(&self, manifest: &Manifest) -> Result<()> {
        if self.universe_hash != manifest.manifest_hash {
            return Err(CliError::Compatibility(format!(
                "checkpoint universe {} does not match dataset {}",
                self.universe_hash, manifest.manifest_hash
            )));
        }
        Ok(())
    }
}
