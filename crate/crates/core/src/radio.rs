//! Deterministic simulated piconet.
//!
//! Models exactly the Bluetooth behaviors the protocol leans on: inquiries
//! that only see discoverable neighbors and return *cached* names, fresh
//! remote-name reads that bypass the cache, connections, and UUID scans as
//! an observable signal. Name caching is the load-bearing quirk: a plain
//! inquiry never notices a peer's name change, which is why the exchange
//! loop forces fresh reads.
//!
//! All activity is totally ordered by (tick, sequence number) and appended
//! to a line-oriented log that serves as the determinism fixture.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::MAX_NAME_CHARS;
use crate::{NodeId, Tick};

/// Scheduling delays, in ticks, between a command and its observable effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Latencies {
    #[serde(default = "default_inquiry")]
    pub inquiry: u64,
    #[serde(default = "default_one")]
    pub read: u64,
    #[serde(default = "default_one")]
    pub connect: u64,
    #[serde(default = "default_one")]
    pub scan: u64,
}

fn default_inquiry() -> u64 {
    3
}

fn default_one() -> u64 {
    1
}

impl Default for Latencies {
    fn default() -> Self {
        Latencies {
            inquiry: 3,
            read: 1,
            connect: 1,
            scan: 1,
        }
    }
}

/// A command a node issues against its radio.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RadioCommand {
    /// Start a discovery round; completes after the inquiry latency.
    Inquiry,
    /// Fresh remote-name read, bypassing the cache.
    ReadName { subject: NodeId },
    /// Change this node's advertised name, effective immediately.
    SetName { name: String },
    /// Connect to an adjacent peer, triggering its inbound handler.
    Connect { target: NodeId },
    /// UUID-scan an adjacent peer, prompting it to re-read our name.
    UuidScan { target: NodeId },
}

impl RadioCommand {
    fn kind(&self) -> &'static str {
        match self {
            RadioCommand::Inquiry => "Inquiry",
            RadioCommand::ReadName { .. } => "ReadName",
            RadioCommand::SetName { .. } => "SetName",
            RadioCommand::Connect { .. } => "Connect",
            RadioCommand::UuidScan { .. } => "UuidScan",
        }
    }
}

/// Scheduled occurrence; payloads are computed when the event fires.
#[derive(Debug, Clone, PartialEq, Eq)]
enum Event {
    InquiryComplete { observer: NodeId },
    InboundConnection { target: NodeId, from: NodeId },
    UuidScanReceived { target: NodeId, from: NodeId },
    NameReadComplete { observer: NodeId, subject: NodeId },
}

/// A fired event, ready to dispatch to its target node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DeliveredEvent {
    InquiryComplete {
        observer: NodeId,
        /// Discoverable neighbors in ascending id order with the name the
        /// stack reports for each: cached if present, true name otherwise.
        peers: Vec<(NodeId, String)>,
    },
    InboundConnection {
        target: NodeId,
        from: NodeId,
    },
    UuidScanReceived {
        target: NodeId,
        from: NodeId,
    },
    NameReadComplete {
        observer: NodeId,
        subject: NodeId,
        name: String,
    },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RadioError {
    #[error("out of range: {observer} cannot reach {subject}")]
    OutOfRange { observer: NodeId, subject: NodeId },
    #[error("name is {chars} characters, over the {MAX_NAME_CHARS}-character limit")]
    NameTooLong { chars: usize },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} already registered")]
    DuplicateNode(NodeId),
    #[error("self edge on {0}")]
    SelfEdge(NodeId),
}

/// The shared radio state of every simulated device.
#[derive(Debug, Default)]
pub struct Piconet {
    latencies: Latencies,
    adjacency: BTreeMap<NodeId, BTreeSet<NodeId>>,
    true_names: BTreeMap<NodeId, String>,
    discoverable: BTreeMap<NodeId, bool>,
    /// (observer, subject) → last name the observer's stack saw.
    name_cache: BTreeMap<(NodeId, NodeId), String>,
    queue: BTreeMap<(Tick, u64), Event>,
    next_seq: u64,
    log: Vec<String>,
}

impl Piconet {
    pub fn new(latencies: Latencies) -> Self {
        Piconet {
            latencies,
            ..Piconet::default()
        }
    }

    pub fn latencies(&self) -> Latencies {
        self.latencies
    }

    pub fn add_node(
        &mut self,
        id: NodeId,
        name: impl Into<String>,
        discoverable: bool,
    ) -> Result<(), RadioError> {
        let name = name.into();
        if self.true_names.contains_key(&id) {
            return Err(RadioError::DuplicateNode(id));
        }
        check_name(&name)?;
        self.adjacency.insert(id.clone(), BTreeSet::new());
        self.discoverable.insert(id.clone(), discoverable);
        self.true_names.insert(id, name);
        Ok(())
    }

    pub fn add_edge(&mut self, a: &NodeId, b: &NodeId) -> Result<(), RadioError> {
        if a == b {
            return Err(RadioError::SelfEdge(a.clone()));
        }
        self.check_node(a)?;
        self.check_node(b)?;
        self.adjacency.get_mut(a).unwrap().insert(b.clone());
        self.adjacency.get_mut(b).unwrap().insert(a.clone());
        Ok(())
    }

    pub fn remove_edge(&mut self, a: &NodeId, b: &NodeId) -> Result<(), RadioError> {
        self.check_node(a)?;
        self.check_node(b)?;
        self.adjacency.get_mut(a).unwrap().remove(b);
        self.adjacency.get_mut(b).unwrap().remove(a);
        Ok(())
    }

    pub fn set_discoverable(&mut self, node: &NodeId, flag: bool) -> Result<(), RadioError> {
        self.check_node(node)?;
        self.discoverable.insert(node.clone(), flag);
        Ok(())
    }

    pub fn is_discoverable(&self, node: &NodeId) -> bool {
        self.discoverable.get(node).copied().unwrap_or(false)
    }

    pub fn true_name(&self, node: &NodeId) -> Option<&str> {
        self.true_names.get(node).map(String::as_str)
    }

    pub fn cached_name(&self, observer: &NodeId, subject: &NodeId) -> Option<&str> {
        self.name_cache
            .get(&(observer.clone(), subject.clone()))
            .map(String::as_str)
    }

    /// Applies a node's command, logging it (and any rejection) in the
    /// shared order.
    pub fn apply_command(
        &mut self,
        issuer: &NodeId,
        cmd: &RadioCommand,
        now: Tick,
    ) -> Result<(), RadioError> {
        let detail = match cmd {
            RadioCommand::Inquiry => "-".to_string(),
            RadioCommand::ReadName { subject } => format!("subject={subject}"),
            RadioCommand::SetName { name } => format!("name={name}"),
            RadioCommand::Connect { target } => format!("target={target}"),
            RadioCommand::UuidScan { target } => format!("target={target}"),
        };
        self.log_line(now, issuer, &format!("Cmd{}", cmd.kind()), &detail);
        let result = match cmd {
            RadioCommand::Inquiry => self.inquiry(issuer, now),
            RadioCommand::ReadName { subject } => self.remote_name_request(issuer, subject, now),
            RadioCommand::SetName { name } => self.set_name(issuer, name),
            RadioCommand::Connect { target } => self.connect(issuer, target, now),
            RadioCommand::UuidScan { target } => self.uuid_scan(issuer, target, now),
        };
        if let Err(err) = &result {
            self.log_line(
                now,
                issuer,
                "CmdRejected",
                &format!("cmd={} reason={err}", cmd.kind()),
            );
        }
        result
    }

    /// Starts a discovery round; the result is computed when the inquiry
    /// completes, so names reflect the cache state at that tick.
    pub fn inquiry(&mut self, observer: &NodeId, now: Tick) -> Result<(), RadioError> {
        self.check_node(observer)?;
        self.schedule(
            now + self.latencies.inquiry,
            Event::InquiryComplete {
                observer: observer.clone(),
            },
        );
        Ok(())
    }

    /// Fresh name read; needs adjacency but not discoverability.
    pub fn remote_name_request(
        &mut self,
        observer: &NodeId,
        subject: &NodeId,
        now: Tick,
    ) -> Result<(), RadioError> {
        self.check_adjacent(observer, subject)?;
        self.schedule(
            now + self.latencies.read,
            Event::NameReadComplete {
                observer: observer.clone(),
                subject: subject.clone(),
            },
        );
        Ok(())
    }

    /// Changes the advertised name immediately. No cache anywhere is
    /// invalidated; observers keep seeing the old name until a fresh read.
    pub fn set_name(&mut self, node: &NodeId, name: &str) -> Result<(), RadioError> {
        self.check_node(node)?;
        check_name(name)?;
        self.true_names.insert(node.clone(), name.to_string());
        Ok(())
    }

    pub fn connect(
        &mut self,
        initiator: &NodeId,
        target: &NodeId,
        now: Tick,
    ) -> Result<(), RadioError> {
        self.check_adjacent(initiator, target)?;
        self.schedule(
            now + self.latencies.connect,
            Event::InboundConnection {
                target: target.clone(),
                from: initiator.clone(),
            },
        );
        Ok(())
    }

    pub fn uuid_scan(
        &mut self,
        scanner: &NodeId,
        target: &NodeId,
        now: Tick,
    ) -> Result<(), RadioError> {
        self.check_adjacent(scanner, target)?;
        self.schedule(
            now + self.latencies.scan,
            Event::UuidScanReceived {
                target: target.clone(),
                from: scanner.clone(),
            },
        );
        Ok(())
    }

    /// Fires the next event due at or before `now`, if any. Payloads are
    /// computed here, against current radio state, and logged.
    pub fn pop_due(&mut self, now: Tick) -> Option<DeliveredEvent> {
        let (&(tick, seq), _) = self.queue.first_key_value()?;
        if tick > now {
            return None;
        }
        let event = self.queue.remove(&(tick, seq)).unwrap();
        let delivered = match event {
            Event::InquiryComplete { observer } => {
                let peers = self.discovery_results(&observer);
                let detail = if peers.is_empty() {
                    "peers=-".to_string()
                } else {
                    let joined: Vec<String> = peers
                        .iter()
                        .map(|(id, name)| format!("{id}={name}"))
                        .collect();
                    format!("peers={}", joined.join(";"))
                };
                self.log_line(now, &observer, "InquiryComplete", &detail);
                DeliveredEvent::InquiryComplete { observer, peers }
            }
            Event::InboundConnection { target, from } => {
                self.log_line(now, &target, "InboundConnection", &format!("from={from}"));
                DeliveredEvent::InboundConnection { target, from }
            }
            Event::UuidScanReceived { target, from } => {
                self.log_line(now, &target, "UuidScanReceived", &format!("from={from}"));
                DeliveredEvent::UuidScanReceived { target, from }
            }
            Event::NameReadComplete { observer, subject } => {
                // The read delivers the *current* true name and refreshes
                // the observer's cache entry.
                let name = self.true_names.get(&subject).cloned().unwrap_or_default();
                self.name_cache
                    .insert((observer.clone(), subject.clone()), name.clone());
                self.log_line(
                    now,
                    &observer,
                    "NameReadComplete",
                    &format!("subject={subject} name={name}"),
                );
                DeliveredEvent::NameReadComplete {
                    observer,
                    subject,
                    name,
                }
            }
        };
        Some(delivered)
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }

    /// The chronological command/event log.
    pub fn log(&self) -> &[String] {
        &self.log
    }

    fn discovery_results(&mut self, observer: &NodeId) -> Vec<(NodeId, String)> {
        let neighbors: Vec<NodeId> = self
            .adjacency
            .get(observer)
            .map(|set| {
                set.iter()
                    .filter(|n| self.discoverable.get(*n).copied().unwrap_or(false))
                    .cloned()
                    .collect()
            })
            .unwrap_or_default();
        let mut results = Vec::with_capacity(neighbors.len());
        for subject in neighbors {
            let key = (observer.clone(), subject.clone());
            let name = match self.name_cache.get(&key) {
                Some(cached) => cached.clone(),
                None => {
                    // First contact: the true name is seen once and cached.
                    let name = self.true_names[&subject].clone();
                    self.name_cache.insert(key, name.clone());
                    name
                }
            };
            results.push((subject, name));
        }
        results
    }

    fn schedule(&mut self, at: Tick, event: Event) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.insert((at, seq), event);
    }

    fn log_line(&mut self, tick: Tick, node: &NodeId, kind: &str, detail: &str) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.log.push(format!(
            "tick={tick} seq={seq} node={node} kind={kind} detail={detail}"
        ));
    }

    fn check_node(&self, node: &NodeId) -> Result<(), RadioError> {
        if self.true_names.contains_key(node) {
            Ok(())
        } else {
            Err(RadioError::UnknownNode(node.clone()))
        }
    }

    fn check_adjacent(&self, a: &NodeId, b: &NodeId) -> Result<(), RadioError> {
        self.check_node(a)?;
        self.check_node(b)?;
        if self.adjacency[a].contains(b) {
            Ok(())
        } else {
            Err(RadioError::OutOfRange {
                observer: a.clone(),
                subject: b.clone(),
            })
        }
    }
}

fn check_name(name: &str) -> Result<(), RadioError> {
    let chars = name.chars().count();
    if chars > MAX_NAME_CHARS {
        return Err(RadioError::NameTooLong { chars });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> NodeId {
        NodeId::from(s)
    }

    fn two_node_net() -> Piconet {
        let mut net = Piconet::new(Latencies::default());
        net.add_node(id("A"), "Alpha", true).unwrap();
        net.add_node(id("B"), "Beta", true).unwrap();
        net.add_edge(&id("A"), &id("B")).unwrap();
        net
    }

    fn drain(net: &mut Piconet, until: Tick) -> Vec<DeliveredEvent> {
        let mut out = Vec::new();
        for t in 0..=until {
            while let Some(ev) = net.pop_due(t) {
                out.push(ev);
            }
        }
        out
    }

    #[test]
    fn inquiry_sees_only_discoverable_neighbors() {
        let mut net = two_node_net();
        net.add_node(id("C"), "Gamma", false).unwrap();
        net.add_edge(&id("A"), &id("C")).unwrap();
        net.inquiry(&id("A"), 0).unwrap();
        let events = drain(&mut net, 3);
        assert_eq!(
            events,
            vec![DeliveredEvent::InquiryComplete {
                observer: id("A"),
                peers: vec![(id("B"), "Beta".to_string())],
            }]
        );
    }

    #[test]
    fn first_contact_caches_then_inquiries_serve_stale_names() {
        let mut net = two_node_net();
        net.inquiry(&id("A"), 0).unwrap();
        drain(&mut net, 3);
        assert_eq!(net.cached_name(&id("A"), &id("B")), Some("Beta"));

        net.set_name(&id("B"), "Renamed").unwrap();
        net.inquiry(&id("A"), 10).unwrap();
        let events = drain(&mut net, 13);
        assert_eq!(
            events,
            vec![DeliveredEvent::InquiryComplete {
                observer: id("A"),
                peers: vec![(id("B"), "Beta".to_string())],
            }]
        );
    }

    /// However often the subject renames itself, an observer that only ever
    /// inquires keeps seeing the first name it cached.
    #[test]
    fn inquiries_alone_never_observe_a_name_change() {
        let mut net = two_node_net();
        net.inquiry(&id("A"), 0).unwrap();
        drain(&mut net, 3);
        let mut t = 4;
        for round in 0..20 {
            net.set_name(&id("B"), &format!("name-{round}")).unwrap();
            net.inquiry(&id("A"), t).unwrap();
            let events = drain(&mut net, t + 3);
            match &events[..] {
                [DeliveredEvent::InquiryComplete { peers, .. }] => {
                    assert_eq!(peers[0].1, "Beta");
                }
                other => panic!("unexpected events: {other:?}"),
            }
            t += 4;
        }
    }

    #[test]
    fn fresh_read_returns_current_name_and_refreshes_cache() {
        let mut net = two_node_net();
        net.inquiry(&id("A"), 0).unwrap();
        drain(&mut net, 3);
        net.set_name(&id("B"), "Renamed").unwrap();

        net.remote_name_request(&id("A"), &id("B"), 4).unwrap();
        let events = drain(&mut net, 5);
        assert_eq!(
            events,
            vec![DeliveredEvent::NameReadComplete {
                observer: id("A"),
                subject: id("B"),
                name: "Renamed".to_string(),
            }]
        );
        // The next inquiry now serves the refreshed cache entry.
        net.inquiry(&id("A"), 6).unwrap();
        let events = drain(&mut net, 9);
        match &events[..] {
            [DeliveredEvent::InquiryComplete { peers, .. }] => {
                assert_eq!(peers[0].1, "Renamed");
            }
            other => panic!("unexpected events: {other:?}"),
        }
    }

    #[test]
    fn read_delivers_name_at_completion_tick() {
        let mut net = two_node_net();
        net.remote_name_request(&id("A"), &id("B"), 0).unwrap();
        // The subject renames before the read completes at tick 1.
        net.set_name(&id("B"), "Mid-flight").unwrap();
        let events = drain(&mut net, 1);
        assert_eq!(
            events,
            vec![DeliveredEvent::NameReadComplete {
                observer: id("A"),
                subject: id("B"),
                name: "Mid-flight".to_string(),
            }]
        );
    }

    #[test]
    fn reads_work_on_non_discoverable_subjects() {
        let mut net = two_node_net();
        net.set_discoverable(&id("B"), false).unwrap();
        net.remote_name_request(&id("A"), &id("B"), 0).unwrap();
        let events = drain(&mut net, 1);
        assert!(matches!(events[0], DeliveredEvent::NameReadComplete { .. }));
    }

    #[test]
    fn out_of_range_operations_are_rejected() {
        let mut net = two_node_net();
        net.add_node(id("C"), "Gamma", true).unwrap();
        let err = net.remote_name_request(&id("A"), &id("C"), 0).unwrap_err();
        assert_eq!(
            err,
            RadioError::OutOfRange {
                observer: id("A"),
                subject: id("C"),
            }
        );
        assert!(net.connect(&id("A"), &id("C"), 0).is_err());
        assert!(net.uuid_scan(&id("A"), &id("C"), 0).is_err());
    }

    #[test]
    fn name_length_boundary_is_exact() {
        let mut net = two_node_net();
        let fits = "x".repeat(248);
        let too_long = "x".repeat(249);
        net.set_name(&id("A"), &fits).unwrap();
        assert_eq!(
            net.set_name(&id("A"), &too_long).unwrap_err(),
            RadioError::NameTooLong { chars: 249 }
        );
        assert_eq!(net.true_name(&id("A")), Some(fits.as_str()));
        // Multi-byte characters count as characters, not bytes.
        let wide = "é".repeat(248);
        net.set_name(&id("A"), &wide).unwrap();
        assert!(net.set_name(&id("A"), &"é".repeat(249)).is_err());
    }

    #[test]
    fn connect_and_scan_are_delivered_with_latency() {
        let mut net = two_node_net();
        net.connect(&id("A"), &id("B"), 5).unwrap();
        net.uuid_scan(&id("B"), &id("A"), 5).unwrap();
        assert!(net.pop_due(5).is_none());
        let events = drain(&mut net, 6);
        assert_eq!(
            events,
            vec![
                DeliveredEvent::InboundConnection {
                    target: id("B"),
                    from: id("A"),
                },
                DeliveredEvent::UuidScanReceived {
                    target: id("A"),
                    from: id("B"),
                },
            ]
        );
    }

    #[test]
    fn identical_command_sequences_yield_identical_logs() {
        let run = || {
            let mut net = two_node_net();
            net.apply_command(&id("A"), &RadioCommand::Inquiry, 0)
                .unwrap();
            net.apply_command(
                &id("B"),
                &RadioCommand::SetName {
                    name: "shout".into(),
                },
                1,
            )
            .unwrap();
            net.apply_command(&id("A"), &RadioCommand::Connect { target: id("B") }, 2)
                .unwrap();
            let _ = net.apply_command(
                &id("A"),
                &RadioCommand::UuidScan {
                    target: id("missing"),
                },
                3,
            );
            drain(&mut net, 10);
            net.log().to_vec()
        };
        let first = run();
        assert_eq!(first, run());
        assert!(first.iter().any(|l| l.contains("kind=CmdRejected")));
    }
}
