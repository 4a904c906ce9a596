//! Per-node message store: duplicate suppression, conflict handling, and the
//! per-message relay flag that makes relaying selective.
//!
//! Every received device name is offered to [`MessageStore::ingest`]. Names
//! that decode become records keyed by message id; well-formed encrypted
//! frames that no local key opens are held verbatim (opaque) keyed by a
//! digest of the frame text, so keyless nodes can still forward ciphertext.
//! Non-frames and malformed frames are counted but never stored.

use std::collections::BTreeMap;
use std::sync::Arc;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codec::{self, Cipher, Codebook, DecodeError, DecodeOutcome, PlainMessage};
use crate::{NodeId, Tick};

/// What a stored record carries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StoredPayload {
    Message(PlainMessage),
    /// An undecryptable type-'1' frame held verbatim for forwarding.
    Opaque,
}

/// One stored message plus relay flag, provenance, and dedup counters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageRecord {
    /// Unique key within the store: the message id when decodable, otherwise
    /// a digest of the frame text.
    pub dedup_key: String,
    pub payload: StoredPayload,
    /// Wire form as first heard (or as encoded at origination). `None` only
    /// for originated messages whose body does not fit a name.
    pub frame_text: Option<String>,
    /// Whether this node forwards the record during exchange sessions.
    pub relay: bool,
    pub first_seen: Tick,
    pub first_source: NodeId,
    pub times_heard: u64,
    /// True for messages authored on this node.
    pub originated: bool,
}

impl MessageRecord {
    pub fn decodable(&self) -> bool {
        matches!(self.payload, StoredPayload::Message(_))
    }

    pub fn message(&self) -> Option<&PlainMessage> {
        match &self.payload {
            StoredPayload::Message(m) => Some(m),
            StoredPayload::Opaque => None,
        }
    }
}

/// Outcome of offering one device name to the store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngestResult {
    /// First sighting; a record was created.
    New,
    /// Same message again; `times_heard` was bumped.
    Duplicate,
    /// Same dedup key but different content; the first record wins.
    Conflict,
    /// New undecryptable frame stored verbatim.
    Opaque,
    /// Not a frame at all; ignored.
    NotAFrame,
    /// Valid header but unparseable; counted, never stored.
    Malformed,
}

impl IngestResult {
    pub fn label(self) -> &'static str {
        match self {
            IngestResult::New => "new",
            IngestResult::Duplicate => "duplicate",
            IngestResult::Conflict => "conflict",
            IngestResult::Opaque => "opaque",
            IngestResult::NotAFrame => "not_a_frame",
            IngestResult::Malformed => "malformed",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StoreCounters {
    pub new: u64,
    pub duplicate: u64,
    pub conflict: u64,
    pub opaque: u64,
    pub not_a_frame: u64,
    pub malformed: u64,
}

impl StoreCounters {
    /// Names that carried a frame this store accepted or suppressed.
    pub fn frames_ingested(&self) -> u64 {
        self.new + self.duplicate + self.conflict + self.opaque
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("no record with dedup key {key:?}")]
pub struct UnknownKey {
    pub key: String,
}

/// Single-owner per-node store. State is reproducible from the ingest log
/// plus the node's originate calls.
#[derive(Debug)]
pub struct MessageStore {
    owner: NodeId,
    records: BTreeMap<String, MessageRecord>,
    next_seq: u64,
    counters: StoreCounters,
    log: Vec<String>,
}

impl MessageStore {
    pub fn new(owner: NodeId) -> Self {
        MessageStore {
            owner,
            records: BTreeMap::new(),
            next_seq: 1,
            counters: StoreCounters::default(),
            log: Vec::new(),
        }
    }

    pub fn owner(&self) -> &NodeId {
        &self.owner
    }

    /// Offers one received device name. `relay_default` is consulted exactly
    /// once, when a record is created, to initialize its relay flag.
    pub fn ingest(
        &mut self,
        name: &str,
        source: &NodeId,
        now: Tick,
        cb: &Codebook,
        ciphers: &[Arc<dyn Cipher>],
        relay_default: impl FnOnce(&MessageRecord) -> bool,
    ) -> IngestResult {
        let result = match codec::decode_frame(name, cb, ciphers) {
            Ok(DecodeOutcome::Message(msg)) => self.upsert(
                msg.id().to_string(),
                StoredPayload::Message(msg),
                name,
                source,
                now,
                relay_default,
            ),
            Ok(DecodeOutcome::NotAFrame) => match codec::decode_legacy(name) {
                Some(body) => {
                    // Legacy frames carry no id; derive a stable one from the
                    // frame text so every node keys the message identically.
                    let id = format!("legacy-{}", &sha256_hex(name)[..12]);
                    let msg = PlainMessage::new(id.clone(), body).expect("derived id is non-empty");
                    self.upsert(
                        id,
                        StoredPayload::Message(msg),
                        name,
                        source,
                        now,
                        relay_default,
                    )
                }
                None => IngestResult::NotAFrame,
            },
            Err(DecodeError::Undecryptable) => self.upsert(
                sha256_hex(name),
                StoredPayload::Opaque,
                name,
                source,
                now,
                relay_default,
            ),
            Err(DecodeError::Malformed(reason)) => {
                log::debug!("{}: malformed frame from {source}: {reason}", self.owner);
                IngestResult::Malformed
            }
        };
        match result {
            IngestResult::New => self.counters.new += 1,
            IngestResult::Duplicate => self.counters.duplicate += 1,
            IngestResult::Conflict => self.counters.conflict += 1,
            IngestResult::Opaque => self.counters.opaque += 1,
            IngestResult::NotAFrame => self.counters.not_a_frame += 1,
            IngestResult::Malformed => self.counters.malformed += 1,
        }
        self.log.push(format!(
            "tick={now} source={source} frame={name} result={}",
            result.label()
        ));
        result
    }

    fn upsert(
        &mut self,
        key: String,
        payload: StoredPayload,
        name: &str,
        source: &NodeId,
        now: Tick,
        relay_default: impl FnOnce(&MessageRecord) -> bool,
    ) -> IngestResult {
        if let Some(existing) = self.records.get_mut(&key) {
            return if existing.payload == payload {
                existing.times_heard += 1;
                IngestResult::Duplicate
            } else {
                // Same key, different content: first record wins.
                IngestResult::Conflict
            };
        }
        let opaque = matches!(payload, StoredPayload::Opaque);
        let mut record = MessageRecord {
            dedup_key: key.clone(),
            payload,
            frame_text: Some(name.to_string()),
            relay: false,
            first_seen: now,
            first_source: source.clone(),
            times_heard: 1,
            originated: false,
        };
        record.relay = relay_default(&record);
        self.records.insert(key, record);
        if opaque {
            IngestResult::Opaque
        } else {
            IngestResult::New
        }
    }

    /// Creates a locally authored message with the next id in this node's
    /// sequence. `encode` renders the wire form; `None` means the message
    /// does not fit a device name and will never be relayed.
    pub fn originate(
        &mut self,
        body: &str,
        now: Tick,
        encode: impl FnOnce(&PlainMessage) -> Option<String>,
    ) -> &MessageRecord {
        let id = loop {
            let candidate = format!("{}-{}", self.owner, self.next_seq);
            self.next_seq += 1;
            if !self.records.contains_key(&candidate) {
                break candidate;
            }
        };
        let msg = PlainMessage::new(id.clone(), body).expect("sequence ids are non-empty");
        let frame_text = encode(&msg);
        let record = MessageRecord {
            dedup_key: id.clone(),
            payload: StoredPayload::Message(msg),
            frame_text,
            relay: true,
            first_seen: now,
            first_source: self.owner.clone(),
            times_heard: 1,
            originated: true,
        };
        self.records.insert(id.clone(), record);
        &self.records[&id]
    }

    pub fn set_relay(&mut self, key: &str, relay: bool) -> Result<(), UnknownKey> {
        match self.records.get_mut(key) {
            Some(record) => {
                record.relay = relay;
                Ok(())
            }
            None => Err(UnknownKey {
                key: key.to_string(),
            }),
        }
    }

    /// Records marked for relay, ordered by (first_seen, dedup_key).
    pub fn relayed_set(&self) -> Vec<&MessageRecord> {
        let mut out: Vec<&MessageRecord> = self.records.values().filter(|r| r.relay).collect();
        out.sort_by(|a, b| {
            a.first_seen
                .cmp(&b.first_seen)
                .then_with(|| a.dedup_key.cmp(&b.dedup_key))
        });
        out
    }

    pub fn get(&self, key: &str) -> Option<&MessageRecord> {
        self.records.get(key)
    }

    /// All records in dedup-key order.
    pub fn records(&self) -> impl Iterator<Item = &MessageRecord> {
        self.records.values()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn counters(&self) -> StoreCounters {
        self.counters
    }

    /// Ingest log, one `tick=.. source=.. frame=.. result=..` line per
    /// offered name.
    pub fn log_lines(&self) -> &[String] {
        &self.log
    }
}

pub(crate) fn sha256_hex(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}
