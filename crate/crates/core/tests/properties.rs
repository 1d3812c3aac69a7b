mod common;

use std::collections::BTreeMap;

use common::{brute_force_totals, make_exit};
use proptest::prelude::*;
use reliablocks_core::avs::{
    resolve_submissions, AvsParams, AvsWorld, Operator, Strategy as OpStrategy, Submission,
};
use reliablocks_core::ingestion::{generate_feed, parse_feed_line, validate_feed, FeedRecord, GenParams};
use reliablocks_core::scoring::interest_rate;
use reliablocks_core::{Amount, ChainState, FastExitEvent, ScoringParams};

#[derive(Debug, Clone)]
enum Op {
    Exit { block: u64, value: u128 },
    Advance(u64),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => (0u64..150, 0u128..5_000_000_000_000_000_000_000u128)
            .prop_map(|(block, value)| Op::Exit { block, value }),
        1 => (0u64..30).prop_map(Op::Advance),
    ]
}

fn params() -> ScoringParams {
    ScoringParams::with_finality_depth(100)
}

/// Applies ops in order; returns the state and the exits applied.
fn build(ops: &[Op], p: &ScoringParams) -> (ChainState, Vec<FastExitEvent>) {
    let mut state = ChainState::new();
    let mut events = Vec::new();
    for (i, op) in ops.iter().enumerate() {
        match op {
            Op::Exit { block, value } => {
                let e = make_exit(i, *block, *value);
                state.apply_event(&e, p).unwrap();
                events.push(e);
            }
            Op::Advance(by) => {
                let h = state.head + by;
                state.advance_head(h, p).unwrap();
            }
        }
    }
    (state, events)
}

fn all_blocks(state: &ChainState, p: &ScoringParams) -> Vec<reliablocks_core::BlockReliability> {
    state.query_range(0, state.head, p).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn totals_match_brute_force(ops in prop::collection::vec(op(), 0..300)) {
        let p = params();
        let (state, events) = build(&ops, &p);
        let oracle = brute_force_totals(&events, state.head);
        for (b, block) in all_blocks(&state, &p).iter().enumerate() {
            prop_assert_eq!((block.cumulative_value_base_units.get(), block.exit_count), oracle[b]);
            prop_assert!((0.0..=100.0).contains(&block.score));
        }
    }

    #[test]
    fn appending_never_lowers_scores(ops in prop::collection::vec(op(), 0..120), extra in op()) {
        let p = params();
        let (mut state, _) = build(&ops, &p);
        let before = all_blocks(&state, &p);
        match extra {
            Op::Exit { block, value } => state.apply_event(&make_exit(10_000, block, value), &p).unwrap(),
            Op::Advance(by) => { let h = state.head + by; state.advance_head(h, &p).unwrap() }
        }
        for old in before {
            let new = state.query_block(old.l2_block, &p).unwrap();
            prop_assert!(new.score >= old.score);
            prop_assert!(new.cumulative_value_base_units >= old.cumulative_value_base_units);
            prop_assert!(new.depth >= old.depth);
            if old.finalized {
                prop_assert!(new.finalized);
                prop_assert_eq!(new.score, 100.0);
            }
        }
    }

    #[test]
    fn cumulative_value_is_antimonotone_in_height(ops in prop::collection::vec(op(), 0..200)) {
        let p = params();
        let (state, _) = build(&ops, &p);
        let blocks = all_blocks(&state, &p);
        for pair in blocks.windows(2) {
            prop_assert!(pair[0].cumulative_value_base_units >= pair[1].cumulative_value_base_units);
            prop_assert!(pair[0].exit_count >= pair[1].exit_count);
        }
    }

    #[test]
    fn exits_do_not_touch_higher_blocks(ops in prop::collection::vec(op(), 1..150), pick in 0.0f64..1.0, value in 0u128..10u128.pow(22)) {
        let p = params();
        let (mut state, _) = build(&ops, &p);
        let target = (pick * state.head as f64) as u64;
        let before = all_blocks(&state, &p);
        state.apply_event(&make_exit(99_999, target, value), &p).unwrap();
        for old in before.iter().filter(|b| b.l2_block > target) {
            prop_assert_eq!(&state.query_block(old.l2_block, &p).unwrap(), old);
        }
    }

    #[test]
    fn finalized_blocks_score_exactly_100(ops in prop::collection::vec(op(), 0..200)) {
        let p = params();
        let (state, _) = build(&ops, &p);
        for b in all_blocks(&state, &p) {
            prop_assert_eq!(b.finalized, b.depth >= p.finality_depth);
            if b.finalized { prop_assert_eq!(b.score, 100.0); }
        }
    }

    #[test]
    fn interest_is_antimonotone_and_banded(a in 0.0f64..=100.0, b in 0.0f64..=100.0) {
        let p = params();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let r_lo = interest_rate(lo, &p).unwrap();
        let r_hi = interest_rate(hi, &p).unwrap();
        prop_assert!(r_lo >= r_hi);
        for r in [r_lo, r_hi] {
            prop_assert!((p.rate_min..=p.rate_max).contains(&r));
        }
    }

    #[test]
    fn replay_is_deterministic_and_serializable(ops in prop::collection::vec(op(), 0..150)) {
        let p = params();
        let (a, _) = build(&ops, &p);
        let (b, _) = build(&ops, &p);
        let ja = serde_json::to_string(&a).unwrap();
        prop_assert_eq!(&ja, &serde_json::to_string(&b).unwrap());
        let back: ChainState = serde_json::from_str(&ja).unwrap();
        prop_assert_eq!(back, a);
    }

    #[test]
    fn generated_feeds_validate_and_replay(
        seed in any::<u64>(),
        num_blocks in 0u64..80,
        exit_rate in 0.0f64..4.0,
        value_log_mean in -3.0f64..8.0,
        value_log_sigma in 0.0f64..3.0,
        num_providers in 1u32..10,
    ) {
        let gp = GenParams { seed, num_blocks, exit_rate, value_log_mean, value_log_sigma, num_providers, block_time_seconds: 2 };
        let feed = generate_feed(&gp);
        prop_assert!(validate_feed(&feed).is_clean());
        let p = params();
        let mut state = ChainState::new();
        for r in &feed {
            r.apply_to(&mut state, &p).unwrap();
        }
        prop_assert_eq!(state.head, num_blocks.saturating_sub(1));
    }

    #[test]
    fn feed_lines_round_trip(block in any::<u64>(), value in any::<u128>(), ts in any::<u64>(), id in "[a-z0-9-]{1,12}", head in any::<bool>()) {
        let record = if head {
            FeedRecord::HeadAdvance { l2_block: block, ts }
        } else {
            FeedRecord::FastExit(FastExitEvent { id, l2_block: block, provider: "lp".into(), value_base_units: Amount(value), l1_block: block / 3, ts })
        };
        prop_assert_eq!(parse_feed_line(&record.to_json_line()).unwrap(), record);
    }
}

fn registry(n: usize, stake_tokens: u64) -> BTreeMap<String, Operator> {
    (0..n)
        .map(|i| {
            let id = format!("op-{i:02}");
            (id.clone(), Operator {
                id,
                stake: Amount::from_tokens(stake_tokens),
                slashed_total: Amount::ZERO,
                rewards_total: Amount::ZERO,
                active: true,
                strategy: OpStrategy::Honest,
            })
        })
        .collect()
}

fn submissions(scores: &[f64]) -> Vec<Submission> {
    scores
        .iter()
        .enumerate()
        .map(|(i, s)| Submission {
            operator_id: format!("op-{i:02}"),
            task_id: "task-1".into(),
            score: *s,
            submitted_at: 0,
        })
        .collect()
}

fn score_value() -> impl Strategy<Value = f64> {
    (0u32..=100_000).prop_map(|x| x as f64 / 1000.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn aggregation_ignores_submission_order(scores in prop::collection::vec(score_value(), 1..12), seed in any::<u64>()) {
        let ops = registry(scores.len(), 100);
        let params = AvsParams::default();
        let subs = submissions(&scores);
        let mut shuffled = subs.clone();
        // deterministic Fisher-Yates from the seed
        let mut x = seed | 1;
        for i in (1..shuffled.len()).rev() {
            x ^= x << 13; x ^= x >> 7; x ^= x << 17;
            shuffled.swap(i, (x % (i as u64 + 1)) as usize);
        }
        let a = resolve_submissions("task-1", 0, &subs, &ops, Amount::from_tokens(10), &params);
        let b = resolve_submissions("task-1", 0, &shuffled, &ops, Amount::from_tokens(10), &params);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn slash_iff_outside_tolerance(scores in prop::collection::vec(score_value(), 1..12), tol in 0.001f64..20.0) {
        let ops = registry(scores.len(), 100);
        let params = AvsParams { deviation_tolerance: tol, ..AvsParams::default() };
        let r = resolve_submissions("task-1", 0, &submissions(&scores), &ops, Amount::from_tokens(10), &params).unwrap();
        for (i, s) in scores.iter().enumerate() {
            let id = format!("op-{i:02}");
            let outside = (s - r.consensus_score).abs() > tol;
            prop_assert_eq!(r.slashed.contains(&id), outside);
            prop_assert_eq!(r.accepted.contains(&id), !outside);
        }
        let slashed_sum: i128 = r.stake_deltas.values().filter(|d| d.0 < 0).map(|d| -d.0).sum();
        prop_assert_eq!(slashed_sum as u128, r.treasury_delta.get());
    }

    #[test]
    fn honest_majority_sets_consensus(honest in score_value(), n_honest in 1usize..8, liars in prop::collection::vec(score_value(), 0..7), tol in 0.001f64..5.0) {
        prop_assume!(liars.len() < n_honest);
        let mut scores = vec![honest; n_honest];
        scores.extend(&liars);
        let ops = registry(scores.len(), 100);
        let params = AvsParams { deviation_tolerance: tol, ..AvsParams::default() };
        let r = resolve_submissions("task-1", 0, &submissions(&scores), &ops, Amount::from_tokens(10), &params).unwrap();
        prop_assert_eq!(r.consensus_score, honest);
        for i in 0..n_honest {
            let id = format!("op-{i:02}");
            prop_assert!(!r.slashed.contains(&id));
        }
    }

    #[test]
    fn rounds_conserve_value_and_deactivate_exactly(
        strategies in prop::collection::vec(prop_oneof![
            Just(OpStrategy::Honest),
            Just(OpStrategy::Silent),
            (-60.0f64..60.0).prop_map(|delta| OpStrategy::Offset { delta }),
            any::<u64>().prop_map(|seed| OpStrategy::Random { seed }),
        ], 1..7),
        stakes in prop::collection::vec(32u64..60, 7),
        rounds in 1usize..15,
        slash_fraction in 0.05f64..0.9,
    ) {
        let sp = params();
        let ap = AvsParams { slash_fraction, reward_per_task: Amount(7_777_777), reward_pool: Amount(50_000_000), ..AvsParams::default() };
        let mut chain = ChainState::new();
        chain.apply_event(&make_exit(0, 20, 3 * 10u128.pow(20)), &sp).unwrap();
        let mut world = AvsWorld::new(&ap);
        for (i, s) in strategies.iter().enumerate() {
            world.register_operator(&format!("op-{i}"), Amount::from_tokens(stakes[i]), s.clone(), &ap).unwrap();
        }
        let start = world.total_value();
        let mut replica = world.clone();
        for r in 0..rounds {
            let block = (r as u64 * 7) % 21;
            let a = world.run_round(&chain, block, &sp, &ap);
            let b = replica.run_round(&chain, block, &sp, &ap);
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(world.total_value(), start);
            for op in world.operators.values() {
                prop_assert_eq!(op.active, op.stake >= ap.min_stake);
            }
        }
    }
}
