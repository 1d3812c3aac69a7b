use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use reliablocks_core::avs::Strategy;
use reliablocks_core::ingestion::{read_feed, validate_feed, write_feed, FeedError, FeedRecord, GenParams};
use reliablocks_core::scoring::{score_payload, ScorePayload, CSV_HEADER};
use reliablocks_core::store::{read_log, replay as replay_log, snapshot, Engine, EventLog, LogRecord, Snapshot, StoreError};
use reliablocks_core::{Amount, ScoringError};
use reliablocks_service::AppState;
use serde_json::json;

use crate::config::Config;
use crate::CliError;

/// Blocks per range query when streaming an export.
const EXPORT_CHUNK: u64 = 4096;

fn io_err(context: &str, path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::io(format!("{context} {}: {e}", path.display()))
}

fn store_err(e: StoreError) -> CliError {
    match e {
        StoreError::Replay { .. } => CliError::domain(e.to_string()),
        other => CliError::io(other.to_string()),
    }
}

fn print_json(value: &serde_json::Value) {
    println!("{value}");
}

pub fn gen(
    config: Option<&Path>,
    seed: Option<u64>,
    blocks: Option<u64>,
    exit_rate: Option<f64>,
    out: &Path,
) -> Result<(), CliError> {
    let cfg = Config::load(config, None)?;
    let params = GenParams {
        seed: seed.unwrap_or(cfg.gen.seed),
        num_blocks: blocks.unwrap_or(cfg.gen.num_blocks),
        exit_rate: exit_rate.unwrap_or(cfg.gen.exit_rate),
        ..cfg.gen
    };
    params.validate().map_err(CliError::usage)?;
    let feed = reliablocks_core::ingestion::generate_feed(&params);
    let file = File::create(out).map_err(|e| io_err("creating", out, e))?;
    write_feed(BufWriter::new(file), &feed).map_err(|e| io_err("writing", out, e))?;
    let exits = feed.iter().filter(|r| matches!(r, FeedRecord::FastExit(_))).count();
    print_json(&json!({ "records": feed.len(), "exits": exits }));
    Ok(())
}

pub fn replay(config: Option<&Path>, log: Option<&Path>, events: &Path) -> Result<(), CliError> {
    let cfg = Config::load(config, log)?;
    let file = File::open(events).map_err(|e| io_err("opening", events, e))?;
    let records = match read_feed(BufReader::new(file)) {
        Ok(r) => r,
        Err(FeedError::Parse(e)) => return Err(CliError::validation(format!("invalid feed: {e}"))),
        Err(FeedError::Io(e)) => return Err(io_err("reading", events, e)),
    };
    let report = validate_feed(&records);
    if let Some(first) = report.first() {
        for issue in &report.issues {
            eprintln!("{issue}");
        }
        return Err(CliError::validation(format!(
            "feed failed validation at line {} ({} issue(s))",
            first.line(),
            report.issues.len()
        )));
    }

    let mut engine = Engine::genesis(&cfg.avs);
    let mut log = EventLog::create(&cfg.log).map_err(store_err)?;
    let log_records: Vec<LogRecord> = records.into_iter().map(|record| LogRecord::Feed { record }).collect();
    for record in &log_records {
        engine
            .apply(record, &cfg.scoring, &cfg.avs)
            .map_err(|e| CliError::domain(e.to_string()))?;
    }
    log.append_all(log_records).map_err(store_err)?;
    snapshot(&engine, &cfg.scoring, &cfg.avs)
        .write(&cfg.snapshot)
        .map_err(store_err)?;
    print_json(&json!({
        "head": engine.chain.head,
        "events": engine.chain.event_count,
        "log_entries": log.len(),
        "blocks_tracked": engine.chain.blocks.len(),
    }));
    Ok(())
}

/// Rebuilds state from the log, resuming from the snapshot when it is
/// usable under the active params.
pub fn load_engine(cfg: &Config) -> Result<Engine, CliError> {
    if !cfg.log.exists() {
        return Err(CliError::io(format!(
            "log {} not found; run `reliablocks replay` first",
            cfg.log.display()
        )));
    }
    let entries = read_log(&cfg.log).map_err(store_err)?;
    let snap = cfg
        .snapshot
        .exists()
        .then(|| Snapshot::read(&cfg.snapshot))
        .and_then(|r| r.map_err(|e| eprintln!("ignoring unreadable snapshot: {e}")).ok());
    if let Some(snap) = &snap {
        match replay_log(&entries, Some(snap), &cfg.scoring, &cfg.avs) {
            Ok(engine) => return Ok(engine),
            Err(e @ (StoreError::ParamsMismatch { .. } | StoreError::CorruptLog { .. })) => {
                eprintln!("snapshot not usable ({e}); replaying from genesis");
            }
            Err(e) => return Err(store_err(e)),
        }
    }
    replay_log(&entries, None, &cfg.scoring, &cfg.avs).map_err(store_err)
}

fn domain(e: ScoringError) -> CliError {
    CliError::domain(e.to_string())
}

pub fn score(config: Option<&Path>, log: Option<&Path>, block: u64) -> Result<(), CliError> {
    let cfg = Config::load(config, log)?;
    let engine = load_engine(&cfg)?;
    let payload = score_payload(&engine.chain, block, &cfg.scoring).map_err(domain)?;
    println!("{}", payload.to_json());
    Ok(())
}

/// Block for round `i` of `tasks`, spread evenly over `0..=head`.
fn spaced_block(i: u64, tasks: u64, head: u64) -> u64 {
    if tasks <= 1 {
        return head;
    }
    (u128::from(head) * u128::from(i) / u128::from(tasks - 1)) as u64
}

pub fn simulate(
    config: Option<&Path>,
    operators: usize,
    byzantine: usize,
    strategy: Strategy,
    tasks: u64,
) -> Result<(), CliError> {
    if operators == 0 {
        return Err(CliError::usage("--operators must be at least 1"));
    }
    if byzantine > operators {
        return Err(CliError::usage("--byzantine cannot exceed --operators"));
    }
    if tasks == 0 {
        return Err(CliError::usage("--tasks must be at least 1"));
    }
    let cfg = Config::load(config, None)?;
    let mut engine = load_engine(&cfg)?;
    let mut log = EventLog::open(&cfg.log).map_err(store_err)?;

    let mut records = Vec::new();
    for i in 1..=operators {
        let id = format!("op-{i}");
        let wanted = if i > operators - byzantine {
            strategy.clone()
        } else {
            Strategy::Honest
        };
        match engine.world.operators.get(&id) {
            Some(existing) if existing.strategy == wanted => {}
            Some(existing) => {
                return Err(CliError::domain(format!(
                    "{id} is already registered with strategy {}; replay a fresh log to change it",
                    existing.strategy
                )))
            }
            None => records.push(LogRecord::RegisterOperator {
                id,
                stake: cfg.operator_stake,
                strategy: wanted,
            }),
        }
    }
    let head = engine.chain.head;
    records.extend((0..tasks).map(|i| LogRecord::Round {
        l2_block: spaced_block(i, tasks, head),
    }));

    let stdout = io::stdout();
    let mut out = stdout.lock();
    let mut slashed = 0u128;
    let mut rewards = 0u128;
    let mut resolved = 0u64;
    for record in &records {
        let outcome = engine
            .apply(record, &cfg.scoring, &cfg.avs)
            .map_err(|e| CliError::domain(e.to_string()))?;
        match (record, outcome) {
            (_, Some(result)) => {
                slashed += result.treasury_delta.get();
                rewards += result.rewards_paid().get();
                resolved += 1;
                writeln!(out, "{}", result.to_json_line()).map_err(|e| CliError::io(e.to_string()))?;
            }
            (LogRecord::Round { l2_block }, None) => {
                eprintln!("round at block {l2_block} expired without submissions");
            }
            _ => {}
        }
    }
    out.flush().map_err(|e| CliError::io(e.to_string()))?;
    log.append_all(records).map_err(store_err)?;
    snapshot(&engine, &cfg.scoring, &cfg.avs)
        .write(&cfg.snapshot)
        .map_err(store_err)?;

    let stakes: serde_json::Map<String, serde_json::Value> = engine
        .world
        .operators
        .values()
        .map(|o| (o.id.clone(), json!(o.stake)))
        .collect();
    eprintln!(
        "{}",
        json!({
            "rounds": tasks,
            "resolved": resolved,
            "total_slashed": Amount(slashed),
            "total_rewards": Amount(rewards),
            "treasury": engine.world.treasury,
            "reward_pool": engine.world.reward_pool,
            "final_stakes": stakes,
        })
    );
    Ok(())
}

pub fn export_csv(config: Option<&Path>, log: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let cfg = Config::load(config, log)?;
    let engine = load_engine(&cfg)?;
    let file = File::create(out).map_err(|e| io_err("creating", out, e))?;
    let mut w = BufWriter::new(file);
    let write_err = |e: io::Error| io_err("writing", out, e);
    writeln!(w, "{CSV_HEADER}").map_err(write_err)?;
    let head = engine.chain.head;
    let mut from = 0u64;
    loop {
        let to = from.saturating_add(EXPORT_CHUNK - 1).min(head);
        for block in engine.chain.query_range(from, to, &cfg.scoring).map_err(domain)? {
            writeln!(w, "{}", ScorePayload::from_block(&block, &cfg.scoring).to_csv_row()).map_err(write_err)?;
        }
        if to == head {
            break;
        }
        from = to + 1;
    }
    w.flush().map_err(write_err)?;
    print_json(&json!({ "rows": u128::from(head) + 1 }));
    Ok(())
}

pub fn serve(config: Option<&Path>, log: Option<&Path>, addr: SocketAddr) -> Result<(), CliError> {
    let cfg = Config::load(config, log)?;
    let engine = load_engine(&cfg)?;
    let state = Arc::new(AppState::new(
        cfg.scoring.clone(),
        cfg.avs.clone(),
        engine.chain,
        engine.world,
        engine.applied,
    ));
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::io(e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::io(format!("binding {addr}: {e}")))?;
        let bound = listener.local_addr().map_err(|e| CliError::io(e.to_string()))?;
        print_json(&json!({ "listening": bound.to_string() }));
        io::stdout().flush().ok();
        reliablocks_service::serve(listener, state)
            .await
            .map_err(|e| CliError::io(e.to_string()))
    })
}

#[cfg(test)]
mod tests {
    use super::spaced_block;

    #[test]
    fn spacing_covers_both_ends() {
        let blocks: Vec<u64> = (0..5).map(|i| spaced_block(i, 5, 99)).collect();
        assert_eq!(blocks, vec![0, 24, 49, 74, 99]);
        assert_eq!(spaced_block(0, 1, 99), 99);
        assert_eq!(spaced_block(3, 4, 0), 0);
    }
}
