//! Append-only event log, full-state snapshots and deterministic replay.
//!
//! Log framing, repeated per entry:
//!
//! ```text
//! [u32 LE payload length][payload: JSON {"seq":..,"record":..}][u32 LE CRC32(payload)]
//! ```
//!
//! A snapshot's `as_of_seq` counts the entries folded into it, so the
//! genesis snapshot has `as_of_seq == 0` and replay resumes at entry
//! `as_of_seq`.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::amount::Amount;
use crate::avs::{AggregationResult, AvsError, AvsParams, AvsWorld, Strategy};
use crate::ingestion::FeedRecord;
use crate::scoring::{ChainState, ScoringError, ScoringParams};

const MAX_PAYLOAD_BYTES: u32 = 64 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("log I/O: {0}")]
    Io(#[from] io::Error),
    #[error("checksum mismatch in entry {index} at byte {offset}")]
    ChecksumMismatch { index: u64, offset: u64 },
    #[error("corrupt log at byte {offset}: {reason}")]
    CorruptLog { offset: u64, reason: String },
    #[error("snapshot params hash {found} does not match active params {expected}")]
    ParamsMismatch { expected: String, found: String },
    #[error("snapshot decode: {0}")]
    Snapshot(#[from] serde_json::Error),
    #[error("replaying entry {seq}: {source}")]
    Replay { seq: u64, source: ApplyError },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ApplyError {
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Avs(#[from] AvsError),
}

/// Everything that can change engine state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Feed { record: FeedRecord },
    RegisterOperator { id: String, stake: Amount, strategy: Strategy },
    Round { l2_block: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub record: LogRecord,
    #[serde(skip)]
    pub checksum: u32,
}

fn encode_frame(seq: u64, record: &LogRecord) -> (Vec<u8>, u32) {
    #[derive(Serialize)]
    struct Payload<'a> {
        seq: u64,
        record: &'a LogRecord,
    }
    let payload = serde_json::to_vec(&Payload { seq, record }).expect("log records always serialize");
    let crc = crc32fast::hash(&payload);
    let mut frame = Vec::with_capacity(payload.len() + 8);
    frame.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    frame.extend_from_slice(&payload);
    frame.extend_from_slice(&crc.to_le_bytes());
    (frame, crc)
}

/// Decodes every entry in `bytes`, checking framing, checksums and that
/// `seq` runs 0, 1, 2, ... without gaps.
pub fn decode_log(bytes: &[u8]) -> Result<Vec<LogEntry>, StoreError> {
    let mut entries = Vec::new();
    let mut pos = 0usize;
    while pos < bytes.len() {
        let offset = pos as u64;
        let corrupt = |reason: &str| StoreError::CorruptLog {
            offset,
            reason: reason.to_string(),
        };
        let header = bytes.get(pos..pos + 4).ok_or_else(|| corrupt("truncated length prefix"))?;
        let len = u32::from_le_bytes(header.try_into().expect("4 bytes"));
        if len > MAX_PAYLOAD_BYTES {
            return Err(corrupt("implausible payload length"));
        }
        let len = len as usize;
        let payload = bytes
            .get(pos + 4..pos + 4 + len)
            .ok_or_else(|| corrupt("truncated payload"))?;
        let trailer = bytes
            .get(pos + 4 + len..pos + 8 + len)
            .ok_or_else(|| corrupt("truncated checksum"))?;
        let checksum = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
        let index = entries.len() as u64;
        if crc32fast::hash(payload) != checksum {
            return Err(StoreError::ChecksumMismatch { index, offset });
        }
        let mut entry: LogEntry = serde_json::from_slice(payload)
            .map_err(|e| corrupt(&format!("undecodable payload: {e}")))?;
        if entry.seq != index {
            return Err(corrupt(&format!("expected seq {index}, found {}", entry.seq)));
        }
        entry.checksum = checksum;
        entries.push(entry);
        pos += 8 + len;
    }
    Ok(entries)
}

pub fn read_log(path: &Path) -> Result<Vec<LogEntry>, StoreError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    decode_log(&bytes)
}

/// Single-writer handle on a log file.
#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    file: File,
    next_seq: u64,
}

impl EventLog {
    /// Creates an empty log, replacing any existing file.
    pub fn create(path: &Path) -> Result<Self, StoreError> {
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)?;
        file.sync_all()?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
            next_seq: 0,
        })
    }

    /// Opens an existing log for appending after verifying all entries.
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let entries = read_log(path)?;
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
            next_seq: entries.len() as u64,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> u64 {
        self.next_seq
    }

    pub fn is_empty(&self) -> bool {
        self.next_seq == 0
    }

    /// Appends one record; durable on return.
    pub fn append(&mut self, record: LogRecord) -> Result<LogEntry, StoreError> {
        let mut entries = self.append_all(std::iter::once(record))?;
        Ok(entries.pop().expect("one record appended"))
    }

    /// Appends a batch with a single sync at the end.
    pub fn append_all<I>(&mut self, records: I) -> Result<Vec<LogEntry>, StoreError>
    where
        I: IntoIterator<Item = LogRecord>,
    {
        let mut out = Vec::new();
        let mut writer = BufWriter::new(&self.file);
        let mut seq = self.next_seq;
        for record in records {
            let (frame, checksum) = encode_frame(seq, &record);
            writer.write_all(&frame)?;
            out.push(LogEntry { seq, record, checksum });
            seq += 1;
        }
        writer.flush()?;
        drop(writer);
        self.file.sync_data()?;
        self.next_seq = seq;
        Ok(out)
    }
}

pub fn params_hash(scoring: &ScoringParams, avs: &AvsParams) -> String {
    let canonical = serde_json::to_vec(&(scoring, avs)).expect("params always serialize");
    Sha256::digest(&canonical)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Chain state plus operator world, as rebuilt from a log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Engine {
    pub chain: ChainState,
    pub world: AvsWorld,
    /// Number of log entries folded in.
    pub applied: u64,
}

impl Engine {
    pub fn genesis(avs: &AvsParams) -> Self {
        Self {
            chain: ChainState::new(),
            world: AvsWorld::new(avs),
            applied: 0,
        }
    }

    /// Applies one record. A round in which nobody submits is a valid
    /// outcome (the task expires) and yields `Ok(None)`.
    pub fn apply(
        &mut self,
        record: &LogRecord,
        scoring: &ScoringParams,
        avs: &AvsParams,
    ) -> Result<Option<AggregationResult>, ApplyError> {
        let outcome = match record {
            LogRecord::Feed { record } => {
                record.apply_to(&mut self.chain, scoring)?;
                None
            }
            LogRecord::RegisterOperator { id, stake, strategy } => {
                self.world.register_operator(id, *stake, strategy.clone(), avs)?;
                None
            }
            LogRecord::Round { l2_block } => {
                match self.world.run_round(&self.chain, *l2_block, scoring, avs) {
                    Ok(result) => Some(result),
                    Err(AvsError::NoSubmissions(_)) => None,
                    Err(e) => return Err(e.into()),
                }
            }
        };
        self.applied += 1;
        Ok(outcome)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub as_of_seq: u64,
    pub chain_state: ChainState,
    pub avs_state: AvsWorld,
    pub params_hash: String,
}

impl Snapshot {
    pub fn write(&self, path: &Path) -> Result<(), StoreError> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = File::create(&tmp)?;
            serde_json::to_writer(&mut f, self)?;
            f.write_all(b"\n")?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, StoreError> {
        let bytes = fs::read(path)?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

pub fn snapshot(engine: &Engine, scoring: &ScoringParams, avs: &AvsParams) -> Snapshot {
    Snapshot {
        as_of_seq: engine.applied,
        chain_state: engine.chain.clone(),
        avs_state: engine.world.clone(),
        params_hash: params_hash(scoring, avs),
    }
}

/// Folds `entries` into genesis, or into `from` when given, skipping
/// entries the snapshot already covers.
pub fn replay(
    entries: &[LogEntry],
    from: Option<&Snapshot>,
    scoring: &ScoringParams,
    avs: &AvsParams,
) -> Result<Engine, StoreError> {
    let mut engine = match from {
        Some(snap) => {
            let expected = params_hash(scoring, avs);
            if snap.params_hash != expected {
                return Err(StoreError::ParamsMismatch {
                    expected,
                    found: snap.params_hash.clone(),
                });
            }
            if snap.as_of_seq > entries.len() as u64 {
                return Err(StoreError::CorruptLog {
                    offset: 0,
                    reason: format!(
                        "snapshot covers {} entries but the log has {}",
                        snap.as_of_seq,
                        entries.len()
                    ),
                });
            }
            Engine {
                chain: snap.chain_state.clone(),
                world: snap.avs_state.clone(),
                applied: snap.as_of_seq,
            }
        }
        None => Engine::genesis(avs),
    };
    for (idx, entry) in entries.iter().enumerate().skip(engine.applied as usize) {
        if entry.seq != idx as u64 {
            return Err(StoreError::CorruptLog {
                offset: 0,
                reason: format!("expected seq {idx}, found {}", entry.seq),
            });
        }
        engine
            .apply(&entry.record, scoring, avs)
            .map_err(|source| StoreError::Replay { seq: entry.seq, source })?;
    }
    Ok(engine)
}
