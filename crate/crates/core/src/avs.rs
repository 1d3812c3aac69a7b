//! Operator-network simulation.
//!
//! Staked operators receive score tasks keyed by L2 block, each submits the
//! score it computes, and the task resolves to the median submission. Any
//! submitter further than `deviation_tolerance` from the consensus loses a
//! fixed fraction of stake to the treasury; the rest split the per-task
//! reward. Operators that stay silent are recorded but neither paid nor
//! slashed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amount::{Amount, SignedAmount};
use crate::rng::Xoshiro256StarStar;
use crate::scoring::{round_half_even, ChainState, ScoringError, ScoringParams};

/// Slash fractions are applied as an exact integer ratio at this resolution.
const SLASH_FRACTION_DENOMINATOR: u128 = 1_000_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AvsError {
    #[error("operator {0:?} is already registered")]
    DuplicateOperator(String),
    #[error("stake {stake} is below the minimum {min_stake}")]
    InsufficientStake { stake: Amount, min_stake: Amount },
    #[error("unknown operator {0:?}")]
    UnknownOperator(String),
    #[error("operator {0:?} is inactive")]
    InactiveOperator(String),
    #[error("block {block} is beyond head {head}")]
    BlockBeyondHead { block: u64, head: u64 },
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("task {0:?} is not open")]
    TaskNotOpen(String),
    #[error("operator {operator:?} already submitted to {task:?}")]
    DuplicateSubmission { task: String, operator: String },
    #[error("submitted score {0} is outside [0, 100]")]
    ScoreOutOfRange(f64),
    #[error("quorum not reached: {have} of {need} submissions")]
    QuorumNotReached { have: usize, need: usize },
    #[error("task {0:?} expired without submissions")]
    NoSubmissions(String),
    #[error("invalid AVS parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AvsParams {
    pub min_stake: Amount,
    pub slash_fraction: f64,
    /// Allowed absolute deviation from consensus, in score points.
    pub deviation_tolerance: f64,
    pub quorum_fraction: f64,
    pub reward_per_task: Amount,
    /// Ticks after creation at which a task may resolve below quorum.
    pub task_deadline: u64,
    /// Initial funding of the reward pool.
    pub reward_pool: Amount,
}

impl Default for AvsParams {
    fn default() -> Self {
        Self {
            min_stake: Amount::from_tokens(32),
            slash_fraction: 0.10,
            deviation_tolerance: 0.5,
            quorum_fraction: 2.0 / 3.0,
            reward_per_task: Amount(10_000_000_000_000_000),
            task_deadline: 10,
            reward_pool: Amount::from_tokens(1_000),
        }
    }
}

impl AvsParams {
    pub fn validate(&self) -> Result<(), AvsError> {
        let bad = |msg: &str| Err(AvsError::InvalidParams(msg.to_string()));
        if self.min_stake == Amount::ZERO {
            return bad("min_stake must be positive");
        }
        if !(self.slash_fraction > 0.0 && self.slash_fraction <= 1.0) {
            return bad("slash_fraction must be in (0, 1]");
        }
        if !(self.deviation_tolerance.is_finite() && self.deviation_tolerance > 0.0) {
            return bad("deviation_tolerance must be positive");
        }
        if !(self.quorum_fraction > 0.0 && self.quorum_fraction <= 1.0) {
            return bad("quorum_fraction must be in (0, 1]");
        }
        if self.reward_per_task == Amount::ZERO {
            return bad("reward_per_task must be positive");
        }
        if self.task_deadline == 0 {
            return bad("task_deadline must be positive");
        }
        Ok(())
    }

    /// `floor(slash_fraction * stake)`, with the fraction resolved to 1e-9.
    pub fn slash_amount(&self, stake: Amount) -> Amount {
        let parts = (self.slash_fraction * SLASH_FRACTION_DENOMINATOR as f64).round() as u128;
        let stake = stake.get();
        let slashed = match stake.checked_mul(parts) {
            Some(p) => p / SLASH_FRACTION_DENOMINATOR,
            None => {
                (stake / SLASH_FRACTION_DENOMINATOR) * parts
                    + (stake % SLASH_FRACTION_DENOMINATOR) * parts / SLASH_FRACTION_DENOMINATOR
            }
        };
        Amount(slashed.min(stake))
    }

    pub fn quorum_size(&self, active: usize) -> usize {
        ((self.quorum_fraction * active as f64).ceil() as usize).max(1)
    }
}

/// How a simulated operator behaves when asked for a score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    Honest,
    /// Honest score shifted by `delta` points, clamped to `[0, 100]`.
    Offset { delta: f64 },
    /// Uniform score from an operator-local generator.
    Random { seed: u64 },
    Silent,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Honest => f.write_str("honest"),
            Strategy::Offset { delta } => write!(f, "offset:{delta}"),
            Strategy::Random { seed } => write!(f, "random:{seed}"),
            Strategy::Silent => f.write_str("silent"),
        }
    }
}

impl FromStr for Strategy {
    type Err = String;

    /// `honest`, `silent`, `offset:<delta>` or `random:<seed>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        match (name, arg) {
            ("honest", None) => Ok(Strategy::Honest),
            ("silent", None) => Ok(Strategy::Silent),
            ("offset", Some(a)) => a
                .parse::<f64>()
                .ok()
                .filter(|d| d.is_finite())
                .map(|delta| Strategy::Offset { delta })
                .ok_or_else(|| format!("bad offset {a:?}")),
            ("random", Some(a)) => a
                .parse::<u64>()
                .map(|seed| Strategy::Random { seed })
                .map_err(|_| format!("bad random seed {a:?}")),
            _ => Err(format!(
                "unknown strategy {s:?} (expected honest, silent, offset:<delta> or random:<seed>)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Operator {
    pub id: String,
    pub stake: Amount,
    pub slashed_total: Amount,
    pub rewards_total: Amount,
    pub active: bool,
    pub strategy: Strategy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub operator_id: String,
    pub task_id: String,
    pub score: f64,
    pub submitted_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskStatus {
    Open,
    Resolved,
    Expired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: String,
    pub l2_block: u64,
    pub status: TaskStatus,
    pub created_at: u64,
    pub submissions: Vec<Submission>,
    pub result: Option<AggregationResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationResult {
    pub task_id: String,
    pub l2_block: u64,
    pub consensus_score: f64,
    pub accepted: BTreeSet<String>,
    pub slashed: BTreeSet<String>,
    pub non_responders: BTreeSet<String>,
    pub stake_deltas: BTreeMap<String, SignedAmount>,
    pub treasury_delta: Amount,
}

impl AggregationResult {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("aggregation results always serialize")
    }

    /// Sum of the positive stake deltas.
    pub fn rewards_paid(&self) -> Amount {
        Amount(
            self.stake_deltas
                .values()
                .filter(|d| d.0 > 0)
                .map(|d| d.0 as u128)
                .sum(),
        )
    }
}

/// Lower median; `None` for an empty slice.
pub fn lower_median(scores: &[f64]) -> Option<f64> {
    if scores.is_empty() {
        return None;
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(sorted[(sorted.len() - 1) / 2])
}

/// Resolves a set of submissions against the registry without mutating
/// anything. Order of `submissions` does not matter.
pub fn resolve_submissions(
    task_id: &str,
    l2_block: u64,
    submissions: &[Submission],
    operators: &BTreeMap<String, Operator>,
    reward_pool: Amount,
    params: &AvsParams,
) -> Option<AggregationResult> {
    let scores: Vec<f64> = submissions.iter().map(|s| s.score).collect();
    let consensus = lower_median(&scores)?;

    let mut accepted = BTreeSet::new();
    let mut slashed = BTreeSet::new();
    let mut stake_deltas = BTreeMap::new();
    let mut treasury_delta = Amount::ZERO;
    for sub in submissions {
        if (sub.score - consensus).abs() > params.deviation_tolerance {
            let stake = operators.get(&sub.operator_id).map(|o| o.stake).unwrap_or_default();
            let penalty = params.slash_amount(stake);
            treasury_delta += penalty;
            stake_deltas.insert(sub.operator_id.clone(), SignedAmount(-(penalty.get() as i128)));
            slashed.insert(sub.operator_id.clone());
        } else {
            accepted.insert(sub.operator_id.clone());
        }
    }

    let budget = params.reward_per_task.min(reward_pool).get();
    let share = if accepted.is_empty() {
        0
    } else {
        budget / accepted.len() as u128
    };
    for id in &accepted {
        stake_deltas.insert(id.clone(), SignedAmount(share as i128));
    }

    let submitted: BTreeSet<&str> = submissions.iter().map(|s| s.operator_id.as_str()).collect();
    let non_responders = operators
        .values()
        .filter(|o| o.active && !submitted.contains(o.id.as_str()))
        .map(|o| o.id.clone())
        .collect();

    Some(AggregationResult {
        task_id: task_id.to_string(),
        l2_block,
        consensus_score: consensus,
        accepted,
        slashed,
        non_responders,
        stake_deltas,
        treasury_delta,
    })
}

/// The score an operator would submit for `l2_block`, or `None` if it
/// stays silent. `task_seq` keys the random strategy so each task gets a
/// fresh but reproducible draw.
pub fn operator_compute(
    operator: &Operator,
    l2_block: u64,
    chain: &ChainState,
    params: &ScoringParams,
    task_seq: u64,
) -> Result<Option<f64>, ScoringError> {
    let decimals = params.score_decimals;
    Ok(match &operator.strategy {
        Strategy::Honest => Some(chain.query_block(l2_block, params)?.score),
        Strategy::Offset { delta } => {
            let honest = chain.query_block(l2_block, params)?.score;
            Some(round_half_even((honest + delta).clamp(0.0, 100.0), decimals))
        }
        Strategy::Random { seed } => {
            let mut rng =
                Xoshiro256StarStar::seed_from_u64(seed ^ task_seq.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            Some(round_half_even(rng.next_f64() * 100.0, decimals))
        }
        Strategy::Silent => None,
    })
}

/// Registry, task queue and value accounts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvsWorld {
    pub operators: BTreeMap<String, Operator>,
    pub tasks: Vec<Task>,
    pub treasury: Amount,
    pub reward_pool: Amount,
    pub tick: u64,
}

impl AvsWorld {
    pub fn new(params: &AvsParams) -> Self {
        Self {
            operators: BTreeMap::new(),
            tasks: Vec::new(),
            treasury: Amount::ZERO,
            reward_pool: params.reward_pool,
            tick: 0,
        }
    }

    pub fn register_operator(
        &mut self,
        id: &str,
        stake: Amount,
        strategy: Strategy,
        params: &AvsParams,
    ) -> Result<&Operator, AvsError> {
        if self.operators.contains_key(id) {
            return Err(AvsError::DuplicateOperator(id.to_string()));
        }
        if stake < params.min_stake {
            return Err(AvsError::InsufficientStake {
                stake,
                min_stake: params.min_stake,
            });
        }
        let op = Operator {
            id: id.to_string(),
            stake,
            slashed_total: Amount::ZERO,
            rewards_total: Amount::ZERO,
            active: true,
            strategy,
        };
        Ok(self.operators.entry(id.to_string()).or_insert(op))
    }

    pub fn active_count(&self) -> usize {
        self.operators.values().filter(|o| o.active).count()
    }

    /// Stake plus treasury plus undistributed rewards.
    pub fn total_value(&self) -> u128 {
        self.operators.values().map(|o| o.stake.get()).sum::<u128>()
            + self.treasury.get()
            + self.reward_pool.get()
    }

    pub fn create_task(&mut self, l2_block: u64, chain: &ChainState) -> Result<&Task, AvsError> {
        if l2_block > chain.head {
            return Err(AvsError::BlockBeyondHead {
                block: l2_block,
                head: chain.head,
            });
        }
        let task_id = format!("task-{}", self.tasks.len() + 1);
        self.tasks.push(Task {
            task_id,
            l2_block,
            status: TaskStatus::Open,
            created_at: self.tick,
            submissions: Vec::new(),
            result: None,
        });
        Ok(self.tasks.last().expect("just pushed"))
    }

    pub fn task(&self, task_id: &str) -> Option<&Task> {
        self.task_index(task_id).map(|i| &self.tasks[i])
    }

    fn task_index(&self, task_id: &str) -> Option<usize> {
        let n: usize = task_id.strip_prefix("task-")?.parse().ok()?;
        let idx = n.checked_sub(1)?;
        (self.tasks.get(idx)?.task_id == task_id).then_some(idx)
    }

    pub fn submit(&mut self, task_id: &str, operator_id: &str, score: f64) -> Result<(), AvsError> {
        if !(0.0..=100.0).contains(&score) {
            return Err(AvsError::ScoreOutOfRange(score));
        }
        let op = self
            .operators
            .get(operator_id)
            .ok_or_else(|| AvsError::UnknownOperator(operator_id.to_string()))?;
        if !op.active {
            return Err(AvsError::InactiveOperator(operator_id.to_string()));
        }
        let idx = self
            .task_index(task_id)
            .ok_or_else(|| AvsError::UnknownTask(task_id.to_string()))?;
        let tick = self.tick;
        let task = &mut self.tasks[idx];
        if task.status != TaskStatus::Open {
            return Err(AvsError::TaskNotOpen(task_id.to_string()));
        }
        if task.submissions.iter().any(|s| s.operator_id == operator_id) {
            return Err(AvsError::DuplicateSubmission {
                task: task_id.to_string(),
                operator: operator_id.to_string(),
            });
        }
        task.submissions.push(Submission {
            operator_id: operator_id.to_string(),
            task_id: task_id.to_string(),
            score,
            submitted_at: tick,
        });
        Ok(())
    }

    pub fn advance_ticks(&mut self, ticks: u64) {
        self.tick += ticks;
    }

    pub fn aggregate(&mut self, task_id: &str, params: &AvsParams) -> Result<AggregationResult, AvsError> {
        let idx = self
            .task_index(task_id)
            .ok_or_else(|| AvsError::UnknownTask(task_id.to_string()))?;
        let task = &self.tasks[idx];
        if task.status != TaskStatus::Open {
            return Err(AvsError::TaskNotOpen(task_id.to_string()));
        }
        let deadline_passed = self.tick >= task.created_at + params.task_deadline;
        let have = task.submissions.len();
        let need = params.quorum_size(self.active_count());
        if have < need && !deadline_passed {
            return Err(AvsError::QuorumNotReached { have, need });
        }
        if have == 0 {
            self.tasks[idx].status = TaskStatus::Expired;
            return Err(AvsError::NoSubmissions(task_id.to_string()));
        }

        let result = resolve_submissions(
            &task.task_id,
            task.l2_block,
            &task.submissions,
            &self.operators,
            self.reward_pool,
            params,
        )
        .expect("at least one submission");

        for (id, delta) in &result.stake_deltas {
            let op = self.operators.get_mut(id).expect("submitters are registered");
            let magnitude = Amount(delta.0.unsigned_abs());
            if result.slashed.contains(id) {
                op.stake = op.stake.saturating_sub(magnitude);
                op.slashed_total += magnitude;
                if op.stake < params.min_stake {
                    op.active = false;
                }
            } else {
                op.stake += magnitude;
                op.rewards_total += magnitude;
            }
        }
        self.treasury += result.treasury_delta;
        self.reward_pool = self.reward_pool.saturating_sub(result.rewards_paid());

        let task = &mut self.tasks[idx];
        task.status = TaskStatus::Resolved;
        task.result = Some(result.clone());
        Ok(result)
    }

    /// One full task lifecycle: create, collect a submission from every
    /// active operator in id order, aggregate. Waits out the deadline if
    /// silence leaves the task below quorum. Consumes one tick.
    pub fn run_round(
        &mut self,
        chain: &ChainState,
        l2_block: u64,
        scoring: &ScoringParams,
        params: &AvsParams,
    ) -> Result<AggregationResult, AvsError> {
        let task_id = self.create_task(l2_block, chain)?.task_id.clone();
        let task_seq = self.tasks.len() as u64;
        let mut scores = Vec::new();
        for op in self.operators.values().filter(|o| o.active) {
            if let Some(score) = operator_compute(op, l2_block, chain, scoring, task_seq)? {
                scores.push((op.id.clone(), score));
            }
        }
        for (id, score) in scores {
            self.submit(&task_id, &id, score)?;
        }
        let outcome = match self.aggregate(&task_id, params) {
            Err(AvsError::QuorumNotReached { .. }) => {
                let created = self.task(&task_id).expect("task exists").created_at;
                self.tick = self.tick.max(created + params.task_deadline);
                self.aggregate(&task_id, params)
            }
            other => other,
        };
        self.tick += 1;
        outcome
    }
}
