//! Independent oracles shared by the integration suites. Nothing here calls
//! into the scoring code it is used to check.
#![allow(dead_code)]

use reliablocks_core::ingestion::FeedRecord;
use reliablocks_core::{Amount, FastExitEvent};

/// `e^x` from a Taylor series after halving `x` until it is tiny, then
/// squaring back up.
pub fn series_exp(x: f64) -> f64 {
    let mut halvings = 0;
    let mut r = x;
    while r.abs() > 1e-3 {
        r /= 2.0;
        halvings += 1;
    }
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..40 {
        term *= r / k as f64;
        sum += term;
        if term.abs() < 1e-300 {
            break;
        }
    }
    for _ in 0..halvings {
        sum *= sum;
    }
    sum
}

pub fn oracle_score(w: f64) -> f64 {
    100.0 * (1.0 - series_exp(-w))
}

/// Per-block `(cumulative value, exit count)` for blocks `0..=head` by
/// scanning every event for every block.
pub fn brute_force_totals(events: &[FastExitEvent], head: u64) -> Vec<(u128, u64)> {
    (0..=head)
        .map(|b| {
            events
                .iter()
                .filter(|e| e.l2_block >= b)
                .fold((0u128, 0u64), |(v, c), e| (v + e.value_base_units.get(), c + 1))
        })
        .collect()
}

pub fn exits_of(records: &[FeedRecord]) -> Vec<FastExitEvent> {
    records
        .iter()
        .filter_map(|r| match r {
            FeedRecord::FastExit(e) => Some(e.clone()),
            _ => None,
        })
        .collect()
}

pub fn make_exit(n: usize, block: u64, value: u128) -> FastExitEvent {
    FastExitEvent {
        id: format!("ev-{n}"),
        l2_block: block,
        provider: format!("p{}", n % 3),
        value_base_units: Amount(value),
        l1_block: block / 6,
        ts: block * 2,
    }
}
