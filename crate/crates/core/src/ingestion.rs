//! JSON-lines fast-exit feeds: parsing, validation and a seeded generator
//! that stands in for calldata extraction from real L1 batches.

use std::collections::HashSet;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amount::Amount;
use crate::rng::Xoshiro256StarStar;
use crate::scoring::{ChainState, FastExitEvent, ScoringError, ScoringParams};

/// One line of a feed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum FeedRecord {
    #[serde(rename = "fast_exit")]
    FastExit(FastExitEvent),
    #[serde(rename = "head")]
    HeadAdvance { l2_block: u64, ts: u64 },
}

impl FeedRecord {
    pub fn apply_to(&self, state: &mut ChainState, params: &ScoringParams) -> Result<(), ScoringError> {
        match self {
            FeedRecord::FastExit(event) => state.apply_event(event, params),
            FeedRecord::HeadAdvance { l2_block, .. } => state.advance_head(*l2_block, params),
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("feed records always serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {reason}")]
pub struct ParseError {
    /// 1-based line number; `parse_feed_line` reports 1.
    pub line: usize,
    pub column: usize,
    pub reason: String,
}

#[derive(Debug, Error)]
pub enum FeedError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("reading feed: {0}")]
    Io(#[from] std::io::Error),
}

pub fn parse_feed_line(line: &str) -> Result<FeedRecord, ParseError> {
    if line.trim().is_empty() {
        return Err(ParseError {
            line: 1,
            column: 0,
            reason: "empty line".into(),
        });
    }
    serde_json::from_str(line).map_err(|e| ParseError {
        line: 1,
        column: e.column(),
        reason: e.to_string(),
    })
}

/// Parses a whole feed; record `i` comes from line `i + 1`.
pub fn read_feed<R: BufRead>(reader: R) -> Result<Vec<FeedRecord>, FeedError> {
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let record = parse_feed_line(&line).map_err(|e| ParseError { line: idx + 1, ..e })?;
        records.push(record);
    }
    Ok(records)
}

pub fn write_feed<W: std::io::Write>(mut out: W, records: &[FeedRecord]) -> std::io::Result<()> {
    for record in records {
        out.write_all(record.to_json_line().as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenParams {
    pub seed: u64,
    pub num_blocks: u64,
    /// Mean fast exits per block.
    pub exit_rate: f64,
    /// Log-normal location of exit values, in log whole tokens.
    pub value_log_mean: f64,
    pub value_log_sigma: f64,
    pub num_providers: u32,
    pub block_time_seconds: u64,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            seed: 42,
            num_blocks: 100,
            exit_rate: 0.5,
            value_log_mean: 2.0,
            value_log_sigma: 1.0,
            num_providers: 5,
            block_time_seconds: 2,
        }
    }
}

/// Upper bound on `exit_rate`; beyond this `e^-rate` underflows and
/// inversion sampling breaks down.
pub const MAX_EXIT_RATE: f64 = 500.0;

const L1_BLOCK_TIME_SECONDS: u64 = 12;

impl GenParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.exit_rate.is_finite() && (0.0..=MAX_EXIT_RATE).contains(&self.exit_rate)) {
            return Err(format!("exit_rate must be in [0, {MAX_EXIT_RATE}]"));
        }
        if !(self.value_log_sigma.is_finite() && self.value_log_sigma >= 0.0) {
            return Err("value_log_sigma must be non-negative".into());
        }
        if !self.value_log_mean.is_finite() {
            return Err("value_log_mean must be finite".into());
        }
        if self.num_providers == 0 {
            return Err("num_providers must be at least 1".into());
        }
        Ok(())
    }
}

/// Sequential generator: per block, one head advance then
/// Poisson(`exit_rate`) fast exits.
#[derive(Debug, Clone)]
pub struct FeedGenerator {
    params: GenParams,
    rng: Xoshiro256StarStar,
    block: u64,
    pending_exits: u64,
    counter: u64,
}

impl FeedGenerator {
    pub fn new(params: GenParams) -> Self {
        Self {
            rng: Xoshiro256StarStar::seed_from_u64(params.seed),
            params,
            block: 0,
            pending_exits: 0,
            counter: 0,
        }
    }

    fn next_exit(&mut self) -> FeedRecord {
        let z = standard_normal(&mut self.rng);
        let tokens = (self.params.value_log_mean + self.params.value_log_sigma * z).exp();
        // `as` saturates, so absurd draws pin to u128::MAX rather than wrapping.
        let value = (tokens * 1e18).floor() as u128;
        let n = self.params.num_providers as u64;
        let provider = ((self.rng.next_f64() * n as f64) as u64).min(n - 1);
        self.counter += 1;
        let ts = self.block * self.params.block_time_seconds;
        FeedRecord::FastExit(FastExitEvent {
            id: format!("fe-{:08}", self.counter),
            l2_block: self.block,
            provider: format!("p{}", provider + 1),
            value_base_units: Amount(value),
            l1_block: ts / L1_BLOCK_TIME_SECONDS,
            ts,
        })
    }
}

impl Iterator for FeedGenerator {
    type Item = FeedRecord;

    fn next(&mut self) -> Option<FeedRecord> {
        if self.pending_exits > 0 {
            self.pending_exits -= 1;
            let record = self.next_exit();
            if self.pending_exits == 0 {
                self.block += 1;
            }
            return Some(record);
        }
        if self.block >= self.params.num_blocks {
            return None;
        }
        let block = self.block;
        self.pending_exits = poisson_inversion(&mut self.rng, self.params.exit_rate);
        if self.pending_exits == 0 {
            self.block += 1;
        }
        Some(FeedRecord::HeadAdvance {
            l2_block: block,
            ts: block * self.params.block_time_seconds,
        })
    }
}

pub fn generate_feed(params: &GenParams) -> Vec<FeedRecord> {
    FeedGenerator::new(params.clone()).collect()
}

/// Smallest `k` with `u < P(X <= k)`, from a single uniform draw.
fn poisson_inversion(rng: &mut Xoshiro256StarStar, rate: f64) -> u64 {
    let u = rng.next_f64();
    let mut k = 0u64;
    let mut p = (-rate).exp();
    let mut cdf = p;
    while u >= cdf {
        k += 1;
        p *= rate / k as f64;
        if p == 0.0 {
            break;
        }
        cdf += p;
    }
    k
}

/// Box-Muller, cosine branch; two uniforms per draw.
fn standard_normal(rng: &mut Xoshiro256StarStar) -> f64 {
    let u1 = 1.0 - rng.next_f64();
    let u2 = rng.next_f64();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind")]
pub enum ValidationIssue {
    DuplicateEventId { line: usize, id: String },
    HeadRegression { line: usize, from: u64, to: u64 },
    ExitBeyondHead { line: usize, l2_block: u64, head: u64 },
    MalformedEvent { line: usize, reason: String },
    ValueOverflow { line: usize },
}

impl ValidationIssue {
    pub fn line(&self) -> usize {
        match self {
            ValidationIssue::DuplicateEventId { line, .. }
            | ValidationIssue::HeadRegression { line, .. }
            | ValidationIssue::ExitBeyondHead { line, .. }
            | ValidationIssue::MalformedEvent { line, .. }
            | ValidationIssue::ValueOverflow { line } => *line,
        }
    }
}

impl std::fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ValidationIssue::DuplicateEventId { line, id } => {
                write!(f, "line {line}: duplicate event id {id:?}")
            }
            ValidationIssue::HeadRegression { line, from, to } => {
                write!(f, "line {line}: head regression from {from} to {to}")
            }
            ValidationIssue::ExitBeyondHead { line, l2_block, head } => {
                write!(f, "line {line}: exit at block {l2_block} beyond head {head}")
            }
            ValidationIssue::MalformedEvent { line, reason } => write!(f, "line {line}: {reason}"),
            ValidationIssue::ValueOverflow { line } => {
                write!(f, "line {line}: total exit value overflows 128 bits")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn first(&self) -> Option<&ValidationIssue> {
        self.issues.first()
    }
}

/// Checks a feed against everything replay would reject, starting from an
/// empty chain. Issues carry 1-based line numbers.
pub fn validate_feed(records: &[FeedRecord]) -> ValidationReport {
    let mut issues = Vec::new();
    let mut head = 0u64;
    let mut seen: HashSet<&str> = HashSet::new();
    let mut total = Amount::ZERO;
    for (idx, record) in records.iter().enumerate() {
        let line = idx + 1;
        match record {
            FeedRecord::HeadAdvance { l2_block, .. } => {
                if *l2_block < head {
                    issues.push(ValidationIssue::HeadRegression {
                        line,
                        from: head,
                        to: *l2_block,
                    });
                } else {
                    head = *l2_block;
                }
            }
            FeedRecord::FastExit(event) => {
                if let Err(ScoringError::MalformedEvent(reason)) = event.check_well_formed() {
                    issues.push(ValidationIssue::MalformedEvent { line, reason });
                    continue;
                }
                if !seen.insert(event.id.as_str()) {
                    issues.push(ValidationIssue::DuplicateEventId {
                        line,
                        id: event.id.clone(),
                    });
                    continue;
                }
                if event.l2_block > head {
                    issues.push(ValidationIssue::ExitBeyondHead {
                        line,
                        l2_block: event.l2_block,
                        head,
                    });
                }
                match total.checked_add(event.value_base_units) {
                    Some(t) => total = t,
                    None => issues.push(ValidationIssue::ValueOverflow { line }),
                }
            }
        }
    }
    ValidationReport { issues }
}
