//! Browser demo: three operations exported to JS, each returning a JSON
//! string so the page needs no bindings beyond `JSON.parse`.

use std::collections::BTreeMap;

use reliablocks_core::avs::{AvsParams, AvsWorld, Strategy};
use reliablocks_core::ingestion::{generate_feed, FeedRecord, GenParams};
use reliablocks_core::scoring::{
    interest_rate, raw_weight, score_from_weight, BlockReliability, ScorePayload,
};
use reliablocks_core::{Amount, ChainState, ScoringParams};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Upper bound on blocks or rounds a single call will compute.
pub const MAX_STEPS: u64 = 20_000;

#[derive(Debug, Serialize)]
pub struct CurvePoint {
    pub depth: u64,
    pub score: f64,
    pub interest_rate: f64,
}

/// Score and rate of a block carrying `value_tokens` of exits, at every
/// depth from 0 to one past finality.
pub fn curve(value_tokens: f64, finality_depth: u64) -> Result<Vec<CurvePoint>, String> {
    if !(value_tokens.is_finite() && value_tokens >= 0.0) {
        return Err(format!("value must be a non-negative number, got {value_tokens}"));
    }
    if finality_depth == 0 || finality_depth > MAX_STEPS {
        return Err(format!("finality depth must be in 1..={MAX_STEPS}"));
    }
    let params = ScoringParams::with_finality_depth(finality_depth);
    let value = Amount((value_tokens * 1e18) as u128);
    (0..=finality_depth + 1)
        .map(|depth| {
            let mut block = BlockReliability {
                l2_block: 0,
                cumulative_value_base_units: value,
                exit_count: 0,
                depth,
                score: 0.0,
                finalized: depth >= finality_depth,
            };
            block.score = score_from_weight(raw_weight(&block, &params), block.finalized, &params);
            let rate = interest_rate(block.score, &params).map_err(|e| e.to_string())?;
            Ok(CurvePoint {
                depth,
                score: block.score,
                interest_rate: rate,
            })
        })
        .collect()
}

#[derive(Debug, Serialize)]
pub struct FeedRun {
    pub head: u64,
    pub exits: usize,
    pub blocks: Vec<ScorePayload>,
    /// Exit count landing on each block, before inheritance.
    pub exits_per_block: Vec<u64>,
}

/// Generates a synthetic feed and replays it.
pub fn feed(seed: u64, num_blocks: u64, exit_rate: f64, finality_depth: u64) -> Result<FeedRun, String> {
    if num_blocks == 0 || num_blocks > MAX_STEPS {
        return Err(format!("blocks must be in 1..={MAX_STEPS}"));
    }
    let gen = GenParams {
        seed,
        num_blocks,
        exit_rate,
        ..GenParams::default()
    };
    gen.validate()?;
    let params = ScoringParams::with_finality_depth(finality_depth.max(1));
    let records = generate_feed(&gen);
    let mut chain = ChainState::new();
    let mut exits_per_block = vec![0u64; num_blocks as usize];
    for record in &records {
        record.apply_to(&mut chain, &params).map_err(|e| e.to_string())?;
        if let FeedRecord::FastExit(e) = record {
            exits_per_block[e.l2_block as usize] += 1;
        }
    }
    let blocks = chain
        .query_range(0, chain.head, &params)
        .map_err(|e| e.to_string())?
        .iter()
        .map(|b| ScorePayload::from_block(b, &params))
        .collect();
    Ok(FeedRun {
        head: chain.head,
        exits: chain.event_count as usize,
        blocks,
        exits_per_block,
    })
}

#[derive(Debug, Serialize)]
pub struct Round {
    pub l2_block: u64,
    pub honest_score: f64,
    pub consensus_score: f64,
    pub slashed: Vec<String>,
    /// Stake per operator after the round, in whole tokens.
    pub stakes: BTreeMap<String, f64>,
    pub treasury: f64,
}

#[derive(Debug, Serialize)]
pub struct Game {
    pub operators: Vec<String>,
    pub byzantine: Vec<String>,
    pub rounds: Vec<Round>,
    pub conserved: bool,
}

/// Runs `rounds` tasks over a generated chain with `honest` honest
/// operators and `byzantine` ones submitting the honest score plus `offset`.
pub fn game(honest: usize, byzantine: usize, offset: f64, rounds: u64, seed: u64) -> Result<Game, String> {
    if honest + byzantine == 0 || honest + byzantine > 64 {
        return Err("operator count must be in 1..=64".into());
    }
    if rounds == 0 || rounds > MAX_STEPS {
        return Err(format!("rounds must be in 1..={MAX_STEPS}"));
    }
    let scoring = ScoringParams::with_finality_depth(100);
    let avs = AvsParams::default();
    let chain = {
        let gen = GenParams {
            seed,
            num_blocks: 200,
            ..GenParams::default()
        };
        let mut chain = ChainState::new();
        for r in generate_feed(&gen) {
            r.apply_to(&mut chain, &scoring).map_err(|e| e.to_string())?;
        }
        chain
    };

    let mut world = AvsWorld::new(&avs);
    let mut operators = Vec::new();
    let mut liars = Vec::new();
    for i in 0..honest + byzantine {
        let id = format!("op-{}", i + 1);
        let strategy = if i < honest {
            Strategy::Honest
        } else {
            liars.push(id.clone());
            Strategy::Offset { delta: offset }
        };
        world
            .register_operator(&id, Amount::from_tokens(100), strategy, &avs)
            .map_err(|e| e.to_string())?;
        operators.push(id);
    }
    let total = world.total_value();

    let mut out = Vec::new();
    for i in 0..rounds {
        if world.active_count() == 0 {
            break;
        }
        // Walk the unfinalized tail so most rounds have something to disagree on.
        let block = chain.head - (i * 7) % scoring.finality_depth.min(chain.head + 1);
        let honest_score = chain.query_block(block, &scoring).map_err(|e| e.to_string())?.score;
        let result = world
            .run_round(&chain, block, &scoring, &avs)
            .map_err(|e| e.to_string())?;
        out.push(Round {
            l2_block: block,
            honest_score,
            consensus_score: result.consensus_score,
            slashed: result.slashed.into_iter().collect(),
            stakes: world
                .operators
                .values()
                .map(|o| (o.id.clone(), o.stake.to_tokens_f64()))
                .collect(),
            treasury: world.treasury.to_tokens_f64(),
        });
    }
    Ok(Game {
        operators,
        byzantine: liars,
        rounds: out,
        conserved: world.total_value() == total,
    })
}

fn to_json<T: Serialize>(r: Result<T, String>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).expect("demo outputs serialize"),
        Err(e) => serde_json::json!({ "error": e }).to_string(),
    }
}

#[wasm_bindgen]
pub fn score_curve(value_tokens: f64, finality_depth: u32) -> String {
    to_json(curve(value_tokens, finality_depth.into()))
}

#[wasm_bindgen]
pub fn simulate_feed(seed: u32, blocks: u32, exit_rate: f64, finality_depth: u32) -> String {
    to_json(feed(seed.into(), blocks.into(), exit_rate, finality_depth.into()))
}

#[wasm_bindgen]
pub fn slashing_game(honest: u32, byzantine: u32, offset: f64, rounds: u32, seed: u32) -> String {
    to_json(game(honest as usize, byzantine as usize, offset, rounds.into(), seed.into()))
}
