//! Per-block reliability scoring.
//!
//! A fast exit at L2 block `b` is economic evidence that the provider who
//! fronted the funds considers the state at `b`, and therefore every block
//! below it, valid. Each block accumulates the value of all exits at or above
//! it; that value plus the block's confirmation depth form a weight `w`, and
//! the score saturates as `100 * (1 - e^-w)`. Interest is the affine
//! complement of the score inside `[rate_min, rate_max]`.

use std::collections::{BTreeMap, BTreeSet};

use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;
use thiserror::Error;

use crate::amount::Amount;

/// Seven days of 2-second L2 blocks.
pub const DEFAULT_FINALITY_DEPTH: u64 = 7 * 24 * 60 * 60 / 2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoringError {
    #[error("event id {0:?} was already applied")]
    DuplicateEventId(String),
    #[error("malformed event: {0}")]
    MalformedEvent(String),
    #[error("head regression from {current} to {requested}")]
    HeadRegression { current: u64, requested: u64 },
    #[error("block {block} is beyond head {head}")]
    BlockBeyondHead { block: u64, head: u64 },
    #[error("score {0} is outside [0, 100]")]
    ScoreOutOfRange(f64),
    #[error("invalid scoring parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoringParams {
    /// Value-decay scale in whole tokens.
    pub kappa_value: f64,
    /// Depth-decay scale in blocks.
    pub kappa_depth: f64,
    pub rate_min: f64,
    pub rate_max: f64,
    pub finality_depth: u64,
    pub score_decimals: u32,
}

impl Default for ScoringParams {
    fn default() -> Self {
        Self::with_finality_depth(DEFAULT_FINALITY_DEPTH)
    }
}

impl ScoringParams {
    /// Defaults with the given finality depth; `kappa_depth` follows as a
    /// fifth of it.
    pub fn with_finality_depth(finality_depth: u64) -> Self {
        Self {
            kappa_value: 1000.0,
            kappa_depth: finality_depth as f64 / 5.0,
            rate_min: 0.01,
            rate_max: 0.03,
            finality_depth,
            score_decimals: 3,
        }
    }

    pub fn validate(&self) -> Result<(), ScoringError> {
        let bad = |msg: &str| Err(ScoringError::InvalidParams(msg.to_string()));
        if !(self.kappa_value.is_finite() && self.kappa_value > 0.0) {
            return bad("kappa_value must be a positive finite number");
        }
        if !(self.kappa_depth.is_finite() && self.kappa_depth > 0.0) {
            return bad("kappa_depth must be a positive finite number");
        }
        if !(self.rate_min > 0.0 && self.rate_min < self.rate_max && self.rate_max < 1.0) {
            return bad("rates must satisfy 0 < rate_min < rate_max < 1");
        }
        if self.finality_depth == 0 {
            return bad("finality_depth must be at least 1");
        }
        if self.score_decimals > 12 {
            return bad("score_decimals must be at most 12");
        }
        Ok(())
    }
}

/// One fast exit observed in L1 batch data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FastExitEvent {
    pub id: String,
    pub l2_block: u64,
    pub provider: String,
    pub value_base_units: Amount,
    pub l1_block: u64,
    pub ts: u64,
}

impl FastExitEvent {
    pub fn check_well_formed(&self) -> Result<(), ScoringError> {
        if self.id.is_empty() {
            return Err(ScoringError::MalformedEvent("empty id".into()));
        }
        if self.provider.is_empty() {
            return Err(ScoringError::MalformedEvent(format!(
                "event {:?} has an empty provider",
                self.id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockReliability {
    pub l2_block: u64,
    pub cumulative_value_base_units: Amount,
    pub exit_count: u64,
    pub depth: u64,
    pub score: f64,
    pub finalized: bool,
}

impl BlockReliability {
    fn rescore(&mut self, head: u64, params: &ScoringParams) {
        self.depth = head - self.l2_block;
        self.finalized = self.depth >= params.finality_depth;
        self.score = if self.finalized {
            100.0
        } else {
            score_from_weight(raw_weight(self, params), false, params)
        };
    }
}

/// Accumulated reliability state for one rollup.
///
/// `blocks` holds an entry for every block that carries at least one exit.
/// A block without exits inherits the totals of the nearest tracked block
/// above it, so queries never need the full `0..=head` range materialized.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub head: u64,
    pub blocks: BTreeMap<u64, BlockReliability>,
    pub event_count: u64,
    pub seen_ids: BTreeSet<String>,
}

impl ChainState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn apply_event(
        &mut self,
        event: &FastExitEvent,
        params: &ScoringParams,
    ) -> Result<(), ScoringError> {
        event.check_well_formed()?;
        if self.seen_ids.contains(&event.id) {
            return Err(ScoringError::DuplicateEventId(event.id.clone()));
        }
        let value = event.value_base_units;
        let block = event.l2_block;

        // Check every addition before touching state so a failure leaves it intact.
        let (above_value, above_count) = self.totals_above(block);
        for entry in self.blocks.range(..=block).map(|(_, b)| b) {
            entry
                .cumulative_value_base_units
                .checked_add(value)
                .ok_or_else(|| ScoringError::MalformedEvent("cumulative value overflow".into()))?;
        }
        above_value
            .checked_add(value)
            .ok_or_else(|| ScoringError::MalformedEvent("cumulative value overflow".into()))?;

        let new_head = self.head.max(block);
        self.blocks.entry(block).or_insert_with(|| BlockReliability {
            l2_block: block,
            cumulative_value_base_units: above_value,
            exit_count: above_count,
            depth: 0,
            score: 0.0,
            finalized: false,
        });
        for entry in self.blocks.range_mut(..=block).map(|(_, b)| b) {
            entry.cumulative_value_base_units += value;
            entry.exit_count += 1;
        }

        self.seen_ids.insert(event.id.clone());
        self.event_count += 1;
        if new_head != self.head {
            self.head = new_head;
            self.rescore_all(params);
        } else {
            for entry in self.blocks.range_mut(..=block).map(|(_, b)| b) {
                entry.rescore(new_head, params);
            }
        }
        Ok(())
    }

    pub fn advance_head(&mut self, new_head: u64, params: &ScoringParams) -> Result<(), ScoringError> {
        if new_head < self.head {
            return Err(ScoringError::HeadRegression {
                current: self.head,
                requested: new_head,
            });
        }
        if new_head != self.head {
            self.head = new_head;
            self.rescore_all(params);
        }
        Ok(())
    }

    pub fn query_block(&self, l2_block: u64, params: &ScoringParams) -> Result<BlockReliability, ScoringError> {
        if l2_block > self.head {
            return Err(ScoringError::BlockBeyondHead {
                block: l2_block,
                head: self.head,
            });
        }
        if let Some(tracked) = self.blocks.get(&l2_block) {
            return Ok(tracked.clone());
        }
        let (value, count) = self.totals_at_or_above(l2_block);
        Ok(self.materialize(l2_block, value, count, params))
    }

    /// Every block in `from..=to`, ascending, in one pass over the tracked set.
    pub fn query_range(
        &self,
        from: u64,
        to: u64,
        params: &ScoringParams,
    ) -> Result<Vec<BlockReliability>, ScoringError> {
        if to > self.head {
            return Err(ScoringError::BlockBeyondHead {
                block: to,
                head: self.head,
            });
        }
        if from > to {
            return Ok(Vec::new());
        }
        let mut out = Vec::with_capacity((to - from + 1) as usize);
        let (mut value, mut count) = self.totals_above(to);
        for block in (from..=to).rev() {
            match self.blocks.get(&block) {
                Some(tracked) => {
                    value = tracked.cumulative_value_base_units;
                    count = tracked.exit_count;
                    out.push(tracked.clone());
                }
                None => out.push(self.materialize(block, value, count, params)),
            }
        }
        out.reverse();
        Ok(out)
    }

    fn materialize(&self, l2_block: u64, value: Amount, count: u64, params: &ScoringParams) -> BlockReliability {
        let mut record = BlockReliability {
            l2_block,
            cumulative_value_base_units: value,
            exit_count: count,
            depth: 0,
            score: 0.0,
            finalized: false,
        };
        record.rescore(self.head, params);
        record
    }

    fn totals_at_or_above(&self, block: u64) -> (Amount, u64) {
        self.blocks
            .range(block..)
            .next()
            .map(|(_, b)| (b.cumulative_value_base_units, b.exit_count))
            .unwrap_or((Amount::ZERO, 0))
    }

    fn totals_above(&self, block: u64) -> (Amount, u64) {
        match block.checked_add(1) {
            Some(next) => self.totals_at_or_above(next),
            None => (Amount::ZERO, 0),
        }
    }

    fn rescore_all(&mut self, params: &ScoringParams) {
        let head = self.head;
        for entry in self.blocks.values_mut() {
            entry.rescore(head, params);
        }
    }
}

/// `V / kappa_value + depth / kappa_depth`, with `V` in whole tokens.
pub fn raw_weight(block: &BlockReliability, params: &ScoringParams) -> f64 {
    let tokens = block.cumulative_value_base_units.to_tokens_f64();
    tokens / params.kappa_value + block.depth as f64 / params.kappa_depth
}

/// Unrounded `100 * (1 - e^-w)`.
pub fn saturating_score(w: f64) -> f64 {
    (-100.0 * (-w).exp_m1()).clamp(0.0, 100.0)
}

pub fn score_from_weight(w: f64, finalized: bool, params: &ScoringParams) -> f64 {
    if finalized {
        return 100.0;
    }
    round_half_even(saturating_score(w.max(0.0)), params.score_decimals).clamp(0.0, 100.0)
}

pub fn interest_rate(score: f64, params: &ScoringParams) -> Result<f64, ScoringError> {
    if !(0.0..=100.0).contains(&score) {
        return Err(ScoringError::ScoreOutOfRange(score));
    }
    if score == 100.0 {
        return Ok(params.rate_min);
    }
    let spread = params.rate_max - params.rate_min;
    Ok((params.rate_max - spread * (score / 100.0)).max(params.rate_min))
}

pub fn round_half_even(x: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    (x * scale).round_ties_even() / scale
}

/// The externally visible per-block record shared by the CLI, the HTTP API
/// and CSV export.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorePayload {
    pub l2_block: u64,
    pub score: f64,
    pub interest_rate: f64,
    pub cumulative_value_base_units: Amount,
    pub exit_count: u64,
    pub depth: u64,
    pub finalized: bool,
    pub score_decimals: u32,
}

pub const CSV_HEADER: &str =
    "l2_block,score,interest_rate,cumulative_value_base_units,exit_count,depth,finalized";

impl ScorePayload {
    pub fn from_block(block: &BlockReliability, params: &ScoringParams) -> Self {
        Self {
            l2_block: block.l2_block,
            score: block.score,
            // A score with d decimals fixes the rate to d + 4 decimals for
            // percent-scale bands; rounding strips binary noise.
            interest_rate: round_half_even(
                interest_rate(block.score, params).expect("block scores are always within [0, 100]"),
                params.score_decimals + 4,
            ),
            cumulative_value_base_units: block.cumulative_value_base_units,
            exit_count: block.exit_count,
            depth: block.depth,
            finalized: block.finalized,
            score_decimals: params.score_decimals,
        }
    }

    pub fn formatted_score(&self) -> String {
        format!("{:.*}", self.score_decimals as usize, self.score)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("payload serialization cannot fail")
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.l2_block,
            self.formatted_score(),
            self.interest_rate,
            self.cumulative_value_base_units,
            self.exit_count,
            self.depth,
            self.finalized
        )
    }
}

impl Serialize for ScorePayload {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let score = RawValue::from_string(self.formatted_score()).map_err(serde::ser::Error::custom)?;
        let mut s = serializer.serialize_struct("ScorePayload", 7)?;
        s.serialize_field("l2_block", &self.l2_block)?;
        s.serialize_field("score", &score)?;
        s.serialize_field("interest_rate", &self.interest_rate)?;
        s.serialize_field("cumulative_value_base_units", &self.cumulative_value_base_units)?;
        s.serialize_field("exit_count", &self.exit_count)?;
        s.serialize_field("depth", &self.depth)?;
        s.serialize_field("finalized", &self.finalized)?;
        s.end()
    }
}

pub fn score_payload(state: &ChainState, l2_block: u64, params: &ScoringParams) -> Result<ScorePayload, ScoringError> {
    state
        .query_block(l2_block, params)
        .map(|b| ScorePayload::from_block(&b, params))
}
