use std::path::{Path, PathBuf};

use reliablocks_core::avs::AvsParams;
use reliablocks_core::ingestion::GenParams;
use reliablocks_core::scoring::DEFAULT_FINALITY_DEPTH;
use reliablocks_core::{Amount, ScoringParams};
use serde::Deserialize;

use crate::CliError;

/// On-disk config. Every key is optional; unknown keys are an error.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub scoring: ScoringSection,
    #[serde(default)]
    pub avs: AvsSection,
    #[serde(default)]
    pub gen: Option<GenParams>,
    #[serde(default)]
    pub paths: PathsSection,
    #[serde(default)]
    pub simulate: SimulateSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoringSection {
    pub kappa_value: Option<f64>,
    /// Defaults to a fifth of `finality_depth`.
    pub kappa_depth: Option<f64>,
    pub rate_min: Option<f64>,
    pub rate_max: Option<f64>,
    pub finality_depth: Option<u64>,
    pub score_decimals: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AvsSection {
    pub min_stake: Option<Amount>,
    pub slash_fraction: Option<f64>,
    pub deviation_tolerance: Option<f64>,
    pub quorum_fraction: Option<f64>,
    pub reward_per_task: Option<Amount>,
    pub task_deadline: Option<u64>,
    pub reward_pool: Option<Amount>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub log: Option<PathBuf>,
    /// Defaults to `<log>.snapshot.json`.
    pub snapshot: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    /// Initial stake of each simulated operator.
    pub operator_stake: Option<Amount>,
}

#[derive(Debug, Clone)]
pub struct Config {
    pub scoring: ScoringParams,
    pub avs: AvsParams,
    pub gen: GenParams,
    pub log: PathBuf,
    pub snapshot: PathBuf,
    pub operator_stake: Amount,
}

pub const DEFAULT_LOG: &str = "reliablocks.log";

impl Config {
    /// Reads `path` if given, fills gaps with built-in defaults, and applies
    /// a `--log` override.
    pub fn load(path: Option<&Path>, log_override: Option<&Path>) -> Result<Self, CliError> {
        let file = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::io(format!("reading config {}: {e}", p.display())))?;
                toml::from_str::<ConfigFile>(&text)
                    .map_err(|e| CliError::usage(format!("config {}: {e}", p.display())))?
            }
            None => ConfigFile::default(),
        };
        Self::resolve(file, log_override)
    }

    pub fn resolve(file: ConfigFile, log_override: Option<&Path>) -> Result<Self, CliError> {
        let s = file.scoring;
        let finality_depth = s.finality_depth.unwrap_or(DEFAULT_FINALITY_DEPTH);
        let base = ScoringParams::with_finality_depth(finality_depth);
        let scoring = ScoringParams {
            kappa_value: s.kappa_value.unwrap_or(base.kappa_value),
            kappa_depth: s.kappa_depth.unwrap_or(base.kappa_depth),
            rate_min: s.rate_min.unwrap_or(base.rate_min),
            rate_max: s.rate_max.unwrap_or(base.rate_max),
            finality_depth,
            score_decimals: s.score_decimals.unwrap_or(base.score_decimals),
        };
        scoring.validate().map_err(|e| CliError::usage(e.to_string()))?;

        let a = file.avs;
        let d = AvsParams::default();
        let avs = AvsParams {
            min_stake: a.min_stake.unwrap_or(d.min_stake),
            slash_fraction: a.slash_fraction.unwrap_or(d.slash_fraction),
            deviation_tolerance: a.deviation_tolerance.unwrap_or(d.deviation_tolerance),
            quorum_fraction: a.quorum_fraction.unwrap_or(d.quorum_fraction),
            reward_per_task: a.reward_per_task.unwrap_or(d.reward_per_task),
            task_deadline: a.task_deadline.unwrap_or(d.task_deadline),
            reward_pool: a.reward_pool.unwrap_or(d.reward_pool),
        };
        avs.validate().map_err(|e| CliError::usage(e.to_string()))?;

        let gen = file.gen.unwrap_or_default();
        gen.validate().map_err(CliError::usage)?;

        let log = log_override
            .map(Path::to_path_buf)
            .or(file.paths.log)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_LOG));
        let snapshot = file.paths.snapshot.unwrap_or_else(|| {
            let mut name = log.clone().into_os_string();
            name.push(".snapshot.json");
            PathBuf::from(name)
        });
        let operator_stake = file
            .simulate
            .operator_stake
            .unwrap_or_else(|| Amount::from_tokens(100));
        if operator_stake < avs.min_stake {
            return Err(CliError::usage("simulate.operator_stake is below avs.min_stake"));
        }
        Ok(Self {
            scoring,
            avs,
            gen,
            log,
            snapshot,
            operator_stake,
        })
    }
}
