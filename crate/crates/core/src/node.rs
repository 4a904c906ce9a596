//! Relay-node behavior: the inquiry schedule, the broadcast-receiver paths,
//! and the name-cycling exchange session.
//!
//! A node idles until its scan tick, inquires, and connects to one
//! discovered peer. Connecting makes the peer aware of us (its inbound
//! handler fires), and both sides then run the same session machine: set own
//! name to the next relayed frame, UUID-scan the peer so it re-reads the
//! name, wait one tick, repeat until all relayed messages are sent, then
//! restore the base name.

use std::collections::VecDeque;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::codec::{
    self, Cipher, Codebook, PlainMessage, MAX_NAME_CHARS, TYPE_ENCRYPTED, TYPE_PLAIN,
};
use crate::radio::RadioCommand;
use crate::store::{IngestResult, MessageRecord, MessageStore};
use crate::{NodeId, Tick};

/// Per-message relay decision, evaluated once when a record is created.
/// Decisions are pure functions of the record (plus the run seed), so the
/// same record always gets the same answer.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum RelayPolicy {
    /// Forward everything (the default).
    #[default]
    Everything,
    /// Forward nothing.
    Nothing,
    /// Forward only locally originated messages.
    OwnOnly,
    /// Forward decodable messages whose body contains the given substring.
    BodyContains(String),
    /// Forward with the given probability, derived deterministically from
    /// the run seed and the record's dedup key.
    Coin { probability: f64 },
}

impl RelayPolicy {
    pub fn decide(&self, seed: u64, record: &MessageRecord) -> bool {
        match self {
            RelayPolicy::Everything => true,
            RelayPolicy::Nothing => false,
            RelayPolicy::OwnOnly => record.originated,
            RelayPolicy::BodyContains(needle) => record
                .message()
                .is_some_and(|m| m.body().contains(needle.as_str())),
            RelayPolicy::Coin { probability } => {
                let mut hasher = Sha256::new();
                hasher.update(seed.to_be_bytes());
                hasher.update(record.dedup_key.as_bytes());
                let digest = hasher.finalize();
                let draw = u64::from_be_bytes(digest[..8].try_into().unwrap());
                (draw as f64) < probability.clamp(0.0, 1.0) * (u64::MAX as f64)
            }
        }
    }
}

/// Static configuration of one relay node.
pub struct NodeConfig {
    pub id: NodeId,
    /// The ordinary device name advertised outside exchange sessions.
    pub base_name: String,
    pub discoverable: bool,
    /// Inquiry period in ticks (≥ 1).
    pub scan_interval: u64,
    pub relay_policy: RelayPolicy,
    pub codebook: Arc<Codebook>,
    pub ciphers: Vec<Arc<dyn Cipher>>,
    /// Key id to encrypt originated messages with; `None` means plain
    /// type-'0' frames.
    pub encrypt_with: Option<String>,
    /// Exchange-loop switch: when false the session still cycles names but
    /// never scans the peer, so the peer never refreshes its view.
    pub uuid_scan_enabled: bool,
}

impl NodeConfig {
    pub fn new(id: impl Into<NodeId>, base_name: impl Into<String>) -> Self {
        NodeConfig {
            id: id.into(),
            base_name: base_name.into(),
            discoverable: true,
            scan_interval: 10,
            relay_policy: RelayPolicy::Everything,
            codebook: Arc::new(Codebook::empty()),
            ciphers: Vec::new(),
            encrypt_with: None,
            uuid_scan_enabled: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SessionStep {
    SetName,
    AwaitScan,
}

enum Session {
    Idle,
    Exchanging {
        peer: NodeId,
        remaining: VecDeque<String>,
        step: SessionStep,
    },
}

/// One relay node: configuration, message store, and session state.
pub struct Node {
    config: NodeConfig,
    store: MessageStore,
    session: Session,
    /// Last discovery-initiated session target, for rotating over peers.
    last_target: Option<NodeId>,
    seed: u64,
    frames_skipped: u64,
}

impl Node {
    pub fn new(config: NodeConfig, seed: u64) -> Self {
        assert!(
            config.scan_interval >= 1,
            "scan_interval must be at least 1"
        );
        let store = MessageStore::new(config.id.clone());
        Node {
            config,
            store,
            session: Session::Idle,
            last_target: None,
            seed,
            frames_skipped: 0,
        }
    }

    pub fn id(&self) -> &NodeId {
        &self.config.id
    }

    pub fn config(&self) -> &NodeConfig {
        &self.config
    }

    pub fn store(&self) -> &MessageStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut MessageStore {
        &mut self.store
    }

    pub fn session_active(&self) -> bool {
        matches!(self.session, Session::Exchanging { .. })
    }

    pub fn session_peer(&self) -> Option<&NodeId> {
        match &self.session {
            Session::Exchanging { peer, .. } => Some(peer),
            Session::Idle => None,
        }
    }

    /// Relayed frames dropped because they do not fit a device name.
    pub fn frames_skipped(&self) -> u64 {
        self.frames_skipped
    }

    /// Authors a new message on this node and returns its id.
    pub fn originate(&mut self, body: &str, now: Tick) -> String {
        let config = &self.config;
        let record = self
            .store
            .originate(body, now, |msg| match encode_origination(config, msg) {
                Ok(frame) => Some(frame),
                Err(err) => {
                    log::warn!(
                        "{}: originated message will not be relayed: {err}",
                        config.id
                    );
                    None
                }
            });
        let id = record.dedup_key.clone();
        let encodable = record.frame_text.is_some();
        if !encodable {
            self.frames_skipped += 1;
        }
        id
    }

    /// Per-tick driver: inquire on schedule when idle, otherwise advance the
    /// running session by one step.
    pub fn on_tick(&mut self, now: Tick) -> Vec<RadioCommand> {
        match self.session {
            Session::Idle => {
                if now.is_multiple_of(self.config.scan_interval) {
                    vec![RadioCommand::Inquiry]
                } else {
                    Vec::new()
                }
            }
            Session::Exchanging { .. } => self.advance_session(),
        }
    }

    /// Discovery results: ingest every advertised name, then connect to one
    /// peer and open a session toward it. Repeated discoveries rotate over
    /// the peer list in ascending id order.
    pub fn on_inquiry_complete(
        &mut self,
        now: Tick,
        peers: &[(NodeId, String)],
    ) -> Vec<RadioCommand> {
        for (peer, name) in peers {
            self.ingest_name(name, peer, now);
        }
        if peers.is_empty() || self.session_active() {
            return Vec::new();
        }
        let target = self.pick_target(peers);
        self.last_target = Some(target.clone());
        self.start_session(target.clone());
        vec![RadioCommand::Connect { target }]
    }

    /// A peer connected to us: re-read its name past the cache and, if idle,
    /// answer with our own session toward it.
    pub fn on_inbound_connection(&mut self, _now: Tick, from: &NodeId) -> Vec<RadioCommand> {
        if !self.session_active() {
            self.start_session(from.clone());
        }
        vec![RadioCommand::ReadName {
            subject: from.clone(),
        }]
    }

    /// A peer UUID-scanned us: the signal to fetch its current name fresh.
    pub fn on_uuid_scan(&mut self, _now: Tick, from: &NodeId) -> Vec<RadioCommand> {
        vec![RadioCommand::ReadName {
            subject: from.clone(),
        }]
    }

    /// A fresh name read finished; the delivered name is ingested.
    pub fn on_name_read(&mut self, now: Tick, subject: &NodeId, name: &str) -> Vec<RadioCommand> {
        self.ingest_name(name, subject, now);
        Vec::new()
    }

    fn pick_target(&self, peers: &[(NodeId, String)]) -> NodeId {
        // Peers arrive in ascending id order: take the first one after the
        // previous target, wrapping to the lowest.
        if let Some(last) = &self.last_target {
            if let Some((id, _)) = peers.iter().find(|(id, _)| id > last) {
                return id.clone();
            }
        }
        peers[0].0.clone()
    }

    fn start_session(&mut self, peer: NodeId) {
        let mut remaining = VecDeque::new();
        let mut skipped = 0;
        for record in self.store.relayed_set() {
            match &record.frame_text {
                Some(frame) if frame.chars().count() <= MAX_NAME_CHARS => {
                    remaining.push_back(frame.clone());
                }
                Some(frame) => {
                    log::warn!(
                        "{}: skipping {}-char frame for {}",
                        self.config.id,
                        frame.chars().count(),
                        record.dedup_key
                    );
                    skipped += 1;
                }
                // Unencodable originations were already counted.
                None => {}
            }
        }
        self.frames_skipped += skipped;
        self.session = Session::Exchanging {
            peer,
            remaining,
            step: SessionStep::SetName,
        };
    }

    fn advance_session(&mut self) -> Vec<RadioCommand> {
        let Session::Exchanging {
            peer,
            remaining,
            step,
        } = &mut self.session
        else {
            return Vec::new();
        };
        match step {
            SessionStep::SetName => match remaining.pop_front() {
                Some(frame) => {
                    let mut cmds = vec![RadioCommand::SetName { name: frame }];
                    if self.config.uuid_scan_enabled {
                        cmds.push(RadioCommand::UuidScan {
                            target: peer.clone(),
                        });
                    }
                    *step = SessionStep::AwaitScan;
                    cmds
                }
                None => {
                    // Everything sent: restore the base name, go idle.
                    self.session = Session::Idle;
                    vec![RadioCommand::SetName {
                        name: self.config.base_name.clone(),
                    }]
                }
            },
            SessionStep::AwaitScan => {
                // One-tick gap so the peer's fresh read lands on this frame.
                *step = SessionStep::SetName;
                Vec::new()
            }
        }
    }

    fn ingest_name(&mut self, name: &str, source: &NodeId, now: Tick) -> IngestResult {
        let config = &self.config;
        let seed = self.seed;
        self.store.ingest(
            name,
            source,
            now,
            &config.codebook,
            &config.ciphers,
            |record| config.relay_policy.decide(seed, record),
        )
    }
}

fn encode_origination(config: &NodeConfig, msg: &PlainMessage) -> Result<String, String> {
    let (type_code, cipher): (char, Option<&dyn Cipher>) = match &config.encrypt_with {
        Some(key_id) => {
            let cipher = config
                .ciphers
                .iter()
                .find(|c| c.key_id() == key_id.as_str())
                .ok_or_else(|| format!("no key {key_id:?} in this node's keyring"))?;
            (TYPE_ENCRYPTED, Some(&**cipher))
        }
        None => (TYPE_PLAIN, None),
    };
    codec::encode_frame(msg, type_code, &config.codebook, cipher)
        .map(|f| f.into_string())
        .map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{encode_frame, DecodeOutcome};

    fn node(id: &str) -> Node {
        Node::new(NodeConfig::new(id, format!("Device {id}")), 0)
    }

    fn frame(id: &str, body: &str) -> String {
        encode_frame(
            &PlainMessage::new(id, body).unwrap(),
            '0',
            &Codebook::empty(),
            None,
        )
        .unwrap()
        .into_string()
    }

    fn nid(s: &str) -> NodeId {
        NodeId::from(s)
    }

    #[test]
    fn inquiry_fires_on_schedule_only_when_idle() {
        let mut n = node("A");
        n.config.scan_interval = 10;
        assert_eq!(n.on_tick(10), vec![RadioCommand::Inquiry]);
        assert_eq!(n.on_tick(11), vec![]);
        // One-session rule: while exchanging, the scan tick advances the
        // session instead of inquiring.
        n.originate("msg", 0);
        n.on_inquiry_complete(19, &[(nid("B"), "Beta".into())]);
        let cmds = n.on_tick(20);
        assert!(!cmds.contains(&RadioCommand::Inquiry));
        assert!(matches!(cmds[0], RadioCommand::SetName { .. }));
    }

    #[test]
    fn discovery_ingests_then_connects_to_first_peer() {
        let mut n = node("A");
        let f = frame("m1", "hello");
        let cmds = n.on_inquiry_complete(5, &[(nid("B"), f.clone()), (nid("C"), "Nexus 7".into())]);
        assert_eq!(cmds, vec![RadioCommand::Connect { target: nid("B") }]);
        assert_eq!(n.session_peer(), Some(&nid("B")));
        assert!(n.store().get("m1").is_some());
        // The ordinary name was offered but not stored.
        assert_eq!(n.store().counters().not_a_frame, 1);
    }

    #[test]
    fn empty_discovery_changes_nothing() {
        let mut n = node("A");
        assert_eq!(n.on_inquiry_complete(5, &[]), vec![]);
        assert!(!n.session_active());
        assert!(n.store().is_empty());
    }

    #[test]
    fn repeated_discoveries_rotate_over_peers() {
        let peers = [
            (nid("B"), "b".to_string()),
            (nid("C"), "c".to_string()),
            (nid("D"), "d".to_string()),
        ];
        let mut n = node("A");
        let mut targets = Vec::new();
        for _ in 0..4 {
            let cmds = n.on_inquiry_complete(0, &peers);
            match &cmds[..] {
                [RadioCommand::Connect { target }] => targets.push(target.clone()),
                other => panic!("unexpected commands: {other:?}"),
            }
            // Finish the (empty) session so the next discovery starts one.
            n.on_tick(1);
            assert!(!n.session_active());
        }
        assert_eq!(targets, [nid("B"), nid("C"), nid("D"), nid("B")]);
    }

    #[test]
    fn session_runs_exactly_two_k_plus_one_ticks() {
        let mut n = node("A");
        n.originate("one", 0);
        n.originate("two", 0);
        n.on_inbound_connection(4, &nid("B"));

        let mut set_names = Vec::new();
        let mut scans = 0;
        let mut ticks = 0;
        while n.session_active() {
            for cmd in n.on_tick(5 + ticks) {
                match cmd {
                    RadioCommand::SetName { name } => set_names.push(name),
                    RadioCommand::UuidScan { target } => {
                        assert_eq!(target, nid("B"));
                        scans += 1;
                    }
                    other => panic!("unexpected command: {other:?}"),
                }
            }
            ticks += 1;
        }
        assert_eq!(ticks, 5); // 2k+1 with k=2
        assert_eq!(scans, 2);
        assert_eq!(set_names.len(), 3);
        assert_eq!(set_names[0], frame("A-1", "one"));
        assert_eq!(set_names[1], frame("A-2", "two"));
        assert_eq!(set_names[2], "Device A"); // base name restored
    }

    #[test]
    fn empty_session_restores_immediately() {
        let mut n = node("A");
        n.on_inbound_connection(0, &nid("B"));
        let cmds = n.on_tick(1);
        assert_eq!(
            cmds,
            vec![RadioCommand::SetName {
                name: "Device A".into()
            }]
        );
        assert!(!n.session_active());
    }

    #[test]
    fn inbound_while_exchanging_only_reads_the_name() {
        let mut n = node("A");
        n.originate("msg", 0);
        n.on_inbound_connection(1, &nid("B"));
        assert_eq!(n.session_peer(), Some(&nid("B")));
        let cmds = n.on_inbound_connection(2, &nid("C"));
        assert_eq!(cmds, vec![RadioCommand::ReadName { subject: nid("C") }]);
        // Still exchanging with the first peer.
        assert_eq!(n.session_peer(), Some(&nid("B")));
    }

    #[test]
    fn uuid_scan_triggers_fresh_read_and_reads_ingest() {
        let mut n = node("A");
        assert_eq!(
            n.on_uuid_scan(3, &nid("B")),
            vec![RadioCommand::ReadName { subject: nid("B") }]
        );
        let f = frame("m2", "body");
        n.on_name_read(4, &nid("B"), &f);
        n.on_name_read(5, &nid("B"), &f);
        let rec = n.store().get("m2").unwrap();
        assert_eq!(rec.times_heard, 2);
        // Base names ingest as non-frames.
        n.on_name_read(6, &nid("B"), "Device B");
        assert_eq!(n.store().counters().not_a_frame, 1);
    }

    #[test]
    fn non_relayed_records_never_reach_set_name() {
        let mut n = node("A");
        n.originate("public", 0);
        let secret = frame("s-1", "secret");
        n.on_name_read(1, &nid("B"), &secret);
        n.store_mut().set_relay("s-1", false).unwrap();

        n.on_inbound_connection(2, &nid("B"));
        let mut set_names = Vec::new();
        while n.session_active() {
            for cmd in n.on_tick(3) {
                if let RadioCommand::SetName { name } = cmd {
                    set_names.push(name);
                }
            }
        }
        assert!(!set_names.iter().any(|n| n == &secret));
        assert_eq!(set_names.len(), 2); // one frame + base-name restore
    }

    #[test]
    fn disabled_uuid_scan_suppresses_only_the_scan() {
        let mut n = node("A");
        n.config.uuid_scan_enabled = false;
        n.originate("msg", 0);
        n.on_inbound_connection(0, &nid("B"));
        let cmds = n.on_tick(1);
        assert_eq!(cmds.len(), 1);
        assert!(matches!(cmds[0], RadioCommand::SetName { .. }));
    }

    #[test]
    fn oversized_origination_is_skipped_with_counter() {
        let mut n = node("A");
        let body: String = (0..4000u32)
            .map(|i| char::from_u32(0x4E00 + (i % 2000)).unwrap())
            .collect();
        let id = n.originate(&body, 0);
        assert_eq!(n.frames_skipped(), 1);
        assert!(n.store().get(&id).unwrap().frame_text.is_none());
        // The record exists but no session will carry it.
        n.on_inbound_connection(1, &nid("B"));
        let cmds = n.on_tick(2);
        assert_eq!(
            cmds,
            vec![RadioCommand::SetName {
                name: "Device A".into()
            }]
        );
    }

    #[test]
    fn encrypted_origination_uses_the_named_key() {
        let key: Arc<dyn Cipher> = Arc::new(codec::XorStreamCipher::from_secret("K", "s3"));
        let mut config = NodeConfig::new("A", "Device A");
        config.ciphers = vec![key.clone()];
        config.encrypt_with = Some("K".into());
        let mut n = Node::new(config, 0);
        n.originate("classified", 0);
        let rec = n.store().get("A-1").unwrap();
        let frame_text = rec.frame_text.as_deref().unwrap();
        assert!(frame_text.starts_with("MDSR1"));
        let out = codec::decode_frame(frame_text, &Codebook::empty(), &[key]).unwrap();
        match out {
            DecodeOutcome::Message(m) => assert_eq!(m.body(), "classified"),
            other => panic!("unexpected outcome: {other:?}"),
        }
    }

    #[test]
    fn relay_policies_are_referentially_transparent() {
        let mut n = node("A");
        n.originate("mine", 0);
        let foreign = frame("f-1", "special marker");
        n.on_name_read(1, &nid("B"), &foreign);
        let own = n.store().get("A-1").unwrap().clone();
        let other = n.store().get("f-1").unwrap().clone();

        let policies = [
            RelayPolicy::Everything,
            RelayPolicy::Nothing,
            RelayPolicy::OwnOnly,
            RelayPolicy::BodyContains("marker".into()),
            RelayPolicy::Coin { probability: 0.5 },
        ];
        for policy in &policies {
            for record in [&own, &other] {
                assert_eq!(policy.decide(7, record), policy.decide(7, record));
            }
        }
        assert!(RelayPolicy::OwnOnly.decide(0, &own));
        assert!(!RelayPolicy::OwnOnly.decide(0, &other));
        assert!(RelayPolicy::BodyContains("marker".into()).decide(0, &other));
        assert!(!RelayPolicy::BodyContains("marker".into()).decide(0, &own));
        assert!(RelayPolicy::Coin { probability: 1.0 }.decide(3, &own));
        assert!(!RelayPolicy::Coin { probability: 0.0 }.decide(3, &own));
    }
}
