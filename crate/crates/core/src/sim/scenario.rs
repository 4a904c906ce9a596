//! Scenario files: the experiment description the simulator executes.
//!
//! Scenarios are JSON documents with a versioned `schema` field (see
//! docs/scenario-schema.md). Loading normalizes declaration order so that
//! permuting the `nodes` or `script` arrays cannot change a run's outcome.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::codec::CodebookError;
use crate::radio::Latencies;
use crate::Tick;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("scenario parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("codebook {path}: {source}")]
    Codebook { path: String, source: CodebookError },
}

/// A complete experiment description.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Must equal [`SCHEMA_VERSION`].
    pub schema: u32,
    #[serde(default)]
    pub seed: u64,
    /// Last simulated tick, inclusive.
    pub horizon: Tick,
    #[serde(default)]
    pub latencies: Latencies,
    pub nodes: Vec<NodeSpec>,
    /// Initial undirected edges as `[a, b]` pairs.
    #[serde(default)]
    pub topology: Vec<(String, String)>,
    #[serde(default)]
    pub script: Vec<ScriptEntry>,
    /// Directory scenario-relative paths resolve against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: String,
    /// Advertised name outside sessions; defaults to the node id.
    #[serde(default)]
    pub base_name: Option<String>,
    #[serde(default = "default_true")]
    pub discoverable: bool,
    pub scan_interval: u64,
    #[serde(default)]
    pub relay_policy: PolicySpec,
    #[serde(default)]
    pub codebook: CodebookSpec,
    #[serde(default)]
    pub keys: Vec<KeySpec>,
    #[serde(default)]
    pub encrypt_with: Option<String>,
    #[serde(default = "default_true")]
    pub uuid_scan: bool,
    /// Message bodies originated at tick 0, in order.
    #[serde(default)]
    pub messages: Vec<String>,
}

impl NodeSpec {
    pub fn effective_base_name(&self) -> &str {
        self.base_name.as_deref().unwrap_or(&self.id)
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct KeySpec {
    pub id: String,
    pub secret: String,
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum PolicySpec {
    #[default]
    Everything,
    Nothing,
    OwnOnly,
    BodyContains(String),
    Coin {
        probability: f64,
    },
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum CodebookSpec {
    /// The table shipped with the crate.
    #[default]
    Default,
    /// No substitution.
    None,
    /// A codebook file, relative to the scenario file.
    Path(String),
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    pub tick: Tick,
    pub action: ScriptAction,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum ScriptAction {
    Originate {
        node: String,
        body: String,
    },
    SetRelay {
        node: String,
        key: String,
        relay: bool,
    },
    SetDiscoverable {
        node: String,
        discoverable: bool,
    },
    AddEdge {
        a: String,
        b: String,
    },
    RemoveEdge {
        a: String,
        b: String,
    },
}

impl ScriptAction {
    /// Canonical ordering key so same-tick actions execute in an order
    /// independent of their position in the file.
    fn sort_key(&self) -> (u8, String, String) {
        match self {
            ScriptAction::SetDiscoverable { node, discoverable } => {
                (0, node.clone(), discoverable.to_string())
            }
            ScriptAction::AddEdge { a, b } => (1, a.clone(), b.clone()),
            ScriptAction::RemoveEdge { a, b } => (2, a.clone(), b.clone()),
            ScriptAction::SetRelay { node, key, relay } => {
                (3, node.clone(), format!("{key}\0{relay}"))
            }
            ScriptAction::Originate { node, body } => (4, node.clone(), body.clone()),
        }
    }

    pub fn node_refs(&self) -> Vec<&str> {
        match self {
            ScriptAction::Originate { node, .. }
            | ScriptAction::SetRelay { node, .. }
            | ScriptAction::SetDiscoverable { node, .. } => vec![node],
            ScriptAction::AddEdge { a, b } | ScriptAction::RemoveEdge { a, b } => vec![a, b],
        }
    }
}

impl Scenario {
    /// Parses and validates a scenario document.
    pub fn from_json(source: &str) -> Result<Self, ScenarioError> {
        let mut scenario: Scenario = serde_json::from_str(source)?;
        scenario.validate()?;
        scenario.normalize();
        Ok(scenario)
    }

    /// Reads a scenario file; relative codebook paths resolve against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let source = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut scenario = Self::from_json(&source)?;
        scenario.base_dir = path.parent().map(PathBuf::from);
        Ok(scenario)
    }

    /// Sorts nodes and script entries into canonical order. Performed by the
    /// loaders; runs never depend on declaration order.
    pub fn normalize(&mut self) {
        self.nodes.sort_by(|a, b| a.id.cmp(&b.id));
        self.script.sort_by_key(|e| (e.tick, e.action.sort_key()));
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |detail: String| Err(ScenarioError::Invalid(detail));

        if self.schema != SCHEMA_VERSION {
            return invalid(format!(
                "schema is {}, this build supports {SCHEMA_VERSION}",
                self.schema
            ));
        }
        if self.nodes.is_empty() {
            return invalid("at least one node is required".into());
        }
        let l = self.latencies;
        if l.inquiry == 0 || l.read == 0 || l.connect == 0 || l.scan == 0 {
            return invalid("latencies must all be at least 1 tick".into());
        }

        let mut ids = std::collections::BTreeSet::new();
        for spec in &self.nodes {
            let at = |d: &str| format!("node {:?}: {d}", spec.id);
            if spec.id.is_empty()
                || !spec
                    .id
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-'))
            {
                return invalid(format!(
                    "node id {:?} must be non-empty and use only [A-Za-z0-9_.-]",
                    spec.id
                ));
            }
            if !ids.insert(spec.id.as_str()) {
                return invalid(format!("duplicate node id {:?}", spec.id));
            }
            if spec.scan_interval == 0 {
                return invalid(at("scan_interval must be at least 1"));
            }
            let base = spec.effective_base_name();
            if base.chars().count() > crate::codec::MAX_NAME_CHARS {
                return invalid(at("base_name is over the 248-character limit"));
            }
            if base.starts_with(crate::codec::FRAME_HEADER)
                || base.starts_with(crate::codec::LEGACY_HEADER)
            {
                return invalid(at("base_name must not start with a frame header"));
            }
            let mut key_ids = std::collections::BTreeSet::new();
            for key in &spec.keys {
                if key.id.is_empty() {
                    return invalid(at("key ids must be non-empty"));
                }
                if !key_ids.insert(key.id.as_str()) {
                    return invalid(at(&format!("duplicate key id {:?}", key.id)));
                }
            }
            if let Some(key_id) = &spec.encrypt_with {
                if !key_ids.contains(key_id.as_str()) {
                    return invalid(at(&format!(
                        "encrypt_with references unknown key {key_id:?}"
                    )));
                }
            }
            if let PolicySpec::Coin { probability } = spec.relay_policy {
                if !(0.0..=1.0).contains(&probability) {
                    return invalid(at("coin probability must be within [0, 1]"));
                }
            }
        }

        for (a, b) in &self.topology {
            if a == b {
                return invalid(format!("self edge on {a:?}"));
            }
            for end in [a, b] {
                if !ids.contains(end.as_str()) {
                    return invalid(format!("topology references unknown node {end:?}"));
                }
            }
        }

        for entry in &self.script {
            if entry.tick > self.horizon {
                return invalid(format!(
                    "script action at tick {} is past the horizon {}",
                    entry.tick, self.horizon
                ));
            }
            for node in entry.action.node_refs() {
                if !ids.contains(node) {
                    return invalid(format!("script references unknown node {node:?}"));
                }
            }
            if let ScriptAction::AddEdge { a, b } | ScriptAction::RemoveEdge { a, b } =
                &entry.action
            {
                if a == b {
                    return invalid(format!("script self edge on {a:?}"));
                }
            }
        }
        Ok(())
    }

    /// All originated messages: `(tick, node, body)`, initial ones first.
    pub fn originations(&self) -> Vec<(Tick, &str, &str)> {
        let mut out = Vec::new();
        for spec in &self.nodes {
            for body in &spec.messages {
                out.push((0, spec.id.as_str(), body.as_str()));
            }
        }
        for entry in &self.script {
            if let ScriptAction::Originate { node, body } = &entry.action {
                out.push((entry.tick, node.as_str(), body.as_str()));
            }
        }
        out
    }
}

fn default_true() -> bool {
    true
}
