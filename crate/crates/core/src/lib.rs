//! MDSRoB — message dissemination via selective relay over Bluetooth device
//! names.
//!
//! Relay nodes carry short messages inside their advertised Bluetooth device
//! name. A frame is a name of the form `MDSR` + type character + payload
//! (bzip2-compressed, optionally encrypted, base64-encoded `id|body`), capped
//! at the 248-character name limit observed on common Bluetooth stacks. Nodes
//! discover each other with ordinary inquiries, cycle their own name through
//! every message they have chosen to relay, and use UUID scans to force peers
//! to re-read the name past the stack-level name cache.
//!
//! The crate provides:
//!
//! - [`codec`]: the frame grammar — escaping, codebook substitution,
//!   compression pipelines, and the legacy `JPC` format;
//! - [`store`]: the per-node message store with duplicate suppression and the
//!   per-message relay flag;
//! - [`node`]: the relay-node state machine (inquiry schedule, exchange
//!   sessions);
//! - [`radio`]: a deterministic simulated piconet with per-peer name caches;
//! - [`sim`]: a scenario-driven experiment harness with reproducible event
//!   logs and post-hoc metrics.

use std::fmt;

use serde::{Deserialize, Serialize};

pub mod codec;
pub mod node;
pub mod radio;
pub mod sim;
pub mod store;

pub use codec::{
    apply_codebook, decode_frame, decode_legacy, encode_frame, escape_text, unescape_and_expand,
    Cipher, Codebook, DecodeError, DecodeOutcome, EncodeError, FrameString, PlainMessage,
};
pub use node::{Node, NodeConfig, RelayPolicy};
pub use radio::{Latencies, Piconet, RadioCommand};
pub use sim::{replay_check, run, RunOutput, RunReport, Scenario};
pub use store::{IngestResult, MessageRecord, MessageStore};

/// Discrete simulation time. All protocol timings (scan intervals, radio
/// latencies) are expressed in ticks.
pub type Tick = u64;

/// Identifier of a participating device.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        NodeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_string())
    }
}

impl From<String> for NodeId {
    fn from(s: String) -> Self {
        NodeId(s)
    }
}
