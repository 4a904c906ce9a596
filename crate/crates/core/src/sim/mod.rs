//! Scenario-driven deterministic experiment harness.
//!
//! One run drives the event loop tick by tick to the horizon: scripted
//! actions first, then due radio events in (tick, sequence) order, then every
//! node's tick handler in ascending node-id order. All state lives in ordered
//! maps and every observable step lands in the radio log, so identical
//! scenarios produce byte-identical logs.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::codec::{Cipher, Codebook, XorStreamCipher};
use crate::node::{Node, NodeConfig, RelayPolicy};
use crate::radio::{DeliveredEvent, Piconet, RadioCommand};
use crate::store::{MessageRecord, StoreCounters};
use crate::{NodeId, Tick};

mod report;
mod scenario;

pub use report::{MessageInfo, RunCounters, RunReport};
pub use scenario::{
    CodebookSpec, KeySpec, NodeSpec, PolicySpec, Scenario, ScenarioError, ScriptAction,
    ScriptEntry, SCHEMA_VERSION,
};

/// Final state of one node's store, for post-run assertions.
#[derive(Debug, Clone)]
pub struct StoreSnapshot {
    pub records: Vec<MessageRecord>,
    pub counters: StoreCounters,
}

impl StoreSnapshot {
    pub fn get(&self, dedup_key: &str) -> Option<&MessageRecord> {
        self.records.iter().find(|r| r.dedup_key == dedup_key)
    }
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    /// The chronological radio command/event log; the determinism fixture.
    pub event_log: String,
    /// Per-node ingest logs.
    pub store_logs: BTreeMap<String, String>,
    pub stores: BTreeMap<String, StoreSnapshot>,
}

/// True iff two event logs are byte-identical.
pub fn replay_check(log_a: &str, log_b: &str) -> bool {
    log_a.as_bytes() == log_b.as_bytes()
}

/// Executes a scenario to its horizon.
pub fn run(scenario: &Scenario) -> Result<RunOutput, ScenarioError> {
    scenario.validate()?;

    let mut net = Piconet::new(scenario.latencies);
    let mut nodes: BTreeMap<NodeId, Node> = BTreeMap::new();
    for spec in &scenario.nodes {
        let config = build_config(spec, scenario.base_dir.as_deref())?;
        net.add_node(
            config.id.clone(),
            config.base_name.clone(),
            config.discoverable,
        )
        .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        nodes.insert(config.id.clone(), Node::new(config, scenario.seed));
    }
    for (a, b) in &scenario.topology {
        net.add_edge(&NodeId::from(a.as_str()), &NodeId::from(b.as_str()))
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
    }

    let mut counters = RunCounters::default();
    let mut originated: Vec<MessageInfo> = Vec::new();

    // Initial messages exist before the first tick, in node-id order.
    for spec in &scenario.nodes {
        let node = nodes.get_mut(&NodeId::from(spec.id.as_str())).unwrap();
        for body in &spec.messages {
            let id = node.originate(body, 0);
            originated.push(MessageInfo {
                id,
                origin: spec.id.clone(),
                body: body.clone(),
                originated_at: 0,
            });
        }
    }

    let mut script = scenario.script.iter().peekable();
    for now in 0..=scenario.horizon {
        while script.peek().is_some_and(|e| e.tick == now) {
            let entry = script.next().unwrap();
            apply_script(entry, now, &mut nodes, &mut net, &mut originated);
        }
        while let Some(event) = net.pop_due(now) {
            dispatch(event, now, &mut nodes, &mut net, &mut counters);
        }
        let ids: Vec<NodeId> = nodes.keys().cloned().collect();
        for id in &ids {
            let cmds = nodes.get_mut(id).unwrap().on_tick(now);
            apply_commands(id, &cmds, now, &mut net, &mut counters);
        }
    }

    let mut store_logs = BTreeMap::new();
    let mut stores = BTreeMap::new();
    for (id, node) in &nodes {
        counters.frames_skipped += node.frames_skipped();
        let c = node.store().counters();
        counters.frames_ingested += c.frames_ingested();
        counters.ingested_new += c.new;
        counters.duplicates += c.duplicate;
        counters.conflicts += c.conflict;
        counters.opaque += c.opaque;
        counters.malformed += c.malformed;
        counters.not_a_frame += c.not_a_frame;
        store_logs.insert(id.to_string(), join_lines(node.store().log_lines()));
        stores.insert(
            id.to_string(),
            StoreSnapshot {
                records: node.store().records().cloned().collect(),
                counters: c,
            },
        );
    }

    let node_names: Vec<String> = nodes.keys().map(ToString::to_string).collect();
    let report = report::build_report(
        SCHEMA_VERSION,
        scenario.seed,
        scenario.horizon,
        node_names,
        originated,
        |msg, node| {
            stores[node].records.iter().find_map(|r| {
                (r.dedup_key == msg.id && r.message().is_some_and(|m| m.body() == msg.body))
                    .then_some(r.first_seen)
            })
        },
        counters,
    );

    Ok(RunOutput {
        report,
        event_log: join_lines(net.log()),
        store_logs,
        stores,
    })
}

/// Horizon sufficient for full dissemination on a connected topology with
/// relay-everything and all nodes discoverable: per BFS layer from each
/// origin, allow the slowest inquirer a few rotations over its neighbors
/// plus the hop latencies and a maximal session.
pub fn epidemic_bound(scenario: &Scenario) -> Tick {
    let mut adjacency: BTreeMap<&str, BTreeSet<&str>> = scenario
        .nodes
        .iter()
        .map(|n| (n.id.as_str(), BTreeSet::new()))
        .collect();
    for (a, b) in &scenario.topology {
        adjacency.get_mut(a.as_str()).unwrap().insert(b);
        adjacency.get_mut(b.as_str()).unwrap().insert(a);
    }
    let deg_max = adjacency.values().map(BTreeSet::len).max().unwrap_or(0) as u64;
    let scan_max = scenario
        .nodes
        .iter()
        .map(|n| n.scan_interval)
        .max()
        .unwrap_or(1);
    let originations = scenario.originations();
    let session_len = 2 * originations.len() as u64 + 1;
    let l = scenario.latencies;
    let per_layer =
        (deg_max + 2) * scan_max + l.inquiry + l.connect + l.scan + l.read + session_len;

    let mut bound = 0;
    for (tick, origin, _) in &originations {
        bound = bound.max(tick + eccentricity(&adjacency, origin) * per_layer);
    }
    bound
}

fn eccentricity(adjacency: &BTreeMap<&str, BTreeSet<&str>>, origin: &str) -> u64 {
    let mut dist: BTreeMap<&str, u64> = BTreeMap::new();
    dist.insert(origin, 0);
    let mut queue = VecDeque::from([origin]);
    let mut max = 0;
    while let Some(node) = queue.pop_front() {
        let d = dist[node];
        max = max.max(d);
        for next in adjacency.get(node).into_iter().flatten() {
            if !dist.contains_key(*next) {
                dist.insert(next, d + 1);
                queue.push_back(next);
            }
        }
    }
    max
}

fn dispatch(
    event: DeliveredEvent,
    now: Tick,
    nodes: &mut BTreeMap<NodeId, Node>,
    net: &mut Piconet,
    counters: &mut RunCounters,
) {
    match event {
        DeliveredEvent::InquiryComplete { observer, peers } => {
            let cmds = nodes
                .get_mut(&observer)
                .unwrap()
                .on_inquiry_complete(now, &peers);
            apply_commands(&observer, &cmds, now, net, counters);
        }
        DeliveredEvent::InboundConnection { target, from } => {
            let cmds = nodes
                .get_mut(&target)
                .unwrap()
                .on_inbound_connection(now, &from);
            apply_commands(&target, &cmds, now, net, counters);
        }
        DeliveredEvent::UuidScanReceived { target, from } => {
            let cmds = nodes.get_mut(&target).unwrap().on_uuid_scan(now, &from);
            apply_commands(&target, &cmds, now, net, counters);
        }
        DeliveredEvent::NameReadComplete {
            observer,
            subject,
            name,
        } => {
            let cmds = nodes
                .get_mut(&observer)
                .unwrap()
                .on_name_read(now, &subject, &name);
            apply_commands(&observer, &cmds, now, net, counters);
        }
    }
}

fn apply_commands(
    issuer: &NodeId,
    cmds: &[RadioCommand],
    now: Tick,
    net: &mut Piconet,
    counters: &mut RunCounters,
) {
    for cmd in cmds {
        match cmd {
            RadioCommand::Inquiry => counters.inquiries += 1,
            RadioCommand::SetName { .. } => counters.name_sets += 1,
            RadioCommand::Connect { .. } => counters.connects += 1,
            RadioCommand::UuidScan { .. } => counters.uuid_scans += 1,
            RadioCommand::ReadName { .. } => counters.name_reads += 1,
        }
        if net.apply_command(issuer, cmd, now).is_err() {
            counters.rejected_commands += 1;
        }
    }
}

fn apply_script(
    entry: &ScriptEntry,
    now: Tick,
    nodes: &mut BTreeMap<NodeId, Node>,
    net: &mut Piconet,
    originated: &mut Vec<MessageInfo>,
) {
    match &entry.action {
        ScriptAction::Originate { node, body } => {
            let node_id = NodeId::from(node.as_str());
            let id = nodes.get_mut(&node_id).unwrap().originate(body, now);
            originated.push(MessageInfo {
                id,
                origin: node.clone(),
                body: body.clone(),
                originated_at: now,
            });
        }
        ScriptAction::SetRelay { node, key, relay } => {
            let node_id = NodeId::from(node.as_str());
            if let Err(err) = nodes
                .get_mut(&node_id)
                .unwrap()
                .store_mut()
                .set_relay(key, *relay)
            {
                log::warn!("script tick {now}: set_relay on {node}: {err}");
            }
        }
        ScriptAction::SetDiscoverable { node, discoverable } => {
            let _ = net.set_discoverable(&NodeId::from(node.as_str()), *discoverable);
        }
        ScriptAction::AddEdge { a, b } => {
            let _ = net.add_edge(&NodeId::from(a.as_str()), &NodeId::from(b.as_str()));
        }
        ScriptAction::RemoveEdge { a, b } => {
            let _ = net.remove_edge(&NodeId::from(a.as_str()), &NodeId::from(b.as_str()));
        }
    }
}

fn build_config(spec: &NodeSpec, base_dir: Option<&Path>) -> Result<NodeConfig, ScenarioError> {
    let codebook = match &spec.codebook {
        CodebookSpec::Default => Arc::new(Codebook::default_table().clone()),
        CodebookSpec::None => Arc::new(Codebook::empty()),
        CodebookSpec::Path(p) => {
            let path = match base_dir {
                Some(dir) if Path::new(p).is_relative() => dir.join(p),
                _ => PathBuf::from(p),
            };
            Arc::new(
                Codebook::load(&path).map_err(|source| ScenarioError::Codebook {
                    path: path.display().to_string(),
                    source,
                })?,
            )
        }
    };
    let ciphers: Vec<Arc<dyn Cipher>> = spec
        .keys
        .iter()
        .map(|k| Arc::new(XorStreamCipher::from_secret(&k.id, &k.secret)) as Arc<dyn Cipher>)
        .collect();
    let relay_policy = match &spec.relay_policy {
        PolicySpec::Everything => RelayPolicy::Everything,
        PolicySpec::Nothing => RelayPolicy::Nothing,
        PolicySpec::OwnOnly => RelayPolicy::OwnOnly,
        PolicySpec::BodyContains(s) => RelayPolicy::BodyContains(s.clone()),
        PolicySpec::Coin { probability } => RelayPolicy::Coin {
            probability: *probability,
        },
    };
    Ok(NodeConfig {
        id: NodeId::from(spec.id.as_str()),
        base_name: spec.effective_base_name().to_string(),
        discoverable: spec.discoverable,
        scan_interval: spec.scan_interval,
        relay_policy,
        codebook,
        ciphers,
        encrypt_with: spec.encrypt_with.clone(),
        uuid_scan_enabled: spec.uuid_scan,
    })
}

fn join_lines(lines: &[String]) -> String {
    if lines.is_empty() {
        String::new()
    } else {
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }
}
