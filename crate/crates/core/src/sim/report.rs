//! Post-run metrics: the delivery matrix, per-message coverage curves, and
//! activity counters, all computed from final store state and the logs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::Tick;

/// One originated message, as tracked by the harness.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageInfo {
    pub id: String,
    pub origin: String,
    pub body: String,
    pub originated_at: Tick,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounters {
    pub inquiries: u64,
    pub name_sets: u64,
    pub connects: u64,
    pub uuid_scans: u64,
    pub name_reads: u64,
    pub rejected_commands: u64,
    pub frames_ingested: u64,
    pub ingested_new: u64,
    pub duplicates: u64,
    pub conflicts: u64,
    pub opaque: u64,
    pub malformed: u64,
    pub not_a_frame: u64,
    pub frames_skipped: u64,
}

/// Everything measured about one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: u32,
    pub seed: u64,
    pub horizon: Tick,
    pub nodes: Vec<String>,
    pub messages: Vec<MessageInfo>,
    /// message id → node id → tick the node first held the message
    /// (decodable, body intact); `null` means never.
    pub delivery: BTreeMap<String, BTreeMap<String, Option<Tick>>>,
    /// message id → `(tick, holder count)` change points; non-decreasing.
    pub coverage: BTreeMap<String, Vec<(Tick, u64)>>,
    pub counters: RunCounters,
    /// Percentage of (message, node) pairs delivered by the horizon.
    pub coverage_pct: f64,
}

impl RunReport {
    pub fn first_seen(&self, message_id: &str, node: &str) -> Option<Tick> {
        self.delivery.get(message_id)?.get(node).copied().flatten()
    }

    /// Holder count for a message at the given tick.
    pub fn coverage_at(&self, message_id: &str, tick: Tick) -> u64 {
        let Some(points) = self.coverage.get(message_id) else {
            return 0;
        };
        points
            .iter()
            .take_while(|(t, _)| *t <= tick)
            .last()
            .map(|(_, count)| *count)
            .unwrap_or(0)
    }

    /// Flat comma-separated export of the delivery matrix: one row per
    /// message, one column per node, `never` for undelivered cells.
    pub fn delivery_csv(&self) -> String {
        let mut out = String::from("message,origin,originated_at");
        for node in &self.nodes {
            out.push(',');
            out.push_str(node);
        }
        out.push('\n');
        for msg in &self.messages {
            out.push_str(&msg.id);
            out.push(',');
            out.push_str(&msg.origin);
            out.push(',');
            out.push_str(&msg.originated_at.to_string());
            for node in &self.nodes {
                out.push(',');
                match self.first_seen(&msg.id, node) {
                    Some(tick) => out.push_str(&tick.to_string()),
                    None => out.push_str("never"),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn summary_line(&self) -> String {
        format!(
            "messages={} nodes={} coverage={:.1}%",
            self.messages.len(),
            self.nodes.len(),
            self.coverage_pct
        )
    }
}

/// Builds the delivery matrix and coverage curves from per-node first-seen
/// ticks gathered after the run.
pub(crate) fn build_report(
    schema: u32,
    seed: u64,
    horizon: Tick,
    nodes: Vec<String>,
    messages: Vec<MessageInfo>,
    first_seen: impl Fn(&MessageInfo, &str) -> Option<Tick>,
    counters: RunCounters,
) -> RunReport {
    let mut delivery: BTreeMap<String, BTreeMap<String, Option<Tick>>> = BTreeMap::new();
    let mut coverage: BTreeMap<String, Vec<(Tick, u64)>> = BTreeMap::new();
    let mut delivered_pairs = 0u64;

    for msg in &messages {
        let row: BTreeMap<String, Option<Tick>> = nodes
            .iter()
            .map(|node| (node.clone(), first_seen(msg, node)))
            .collect();

        let mut ticks: Vec<Tick> = row.values().flatten().copied().collect();
        ticks.sort_unstable();
        delivered_pairs += ticks.len() as u64;
        let mut points: Vec<(Tick, u64)> = Vec::new();
        for (i, tick) in ticks.iter().enumerate() {
            let count = (i + 1) as u64;
            match points.last_mut() {
                Some((t, c)) if t == tick => *c = count,
                _ => points.push((*tick, count)),
            }
        }
        coverage.insert(msg.id.clone(), points);
        delivery.insert(msg.id.clone(), row);
    }

    let total_pairs = messages.len() as u64 * nodes.len() as u64;
    let coverage_pct = if total_pairs == 0 {
        100.0
    } else {
        delivered_pairs as f64 / total_pairs as f64 * 100.0
    };

    RunReport {
        schema,
        seed,
        horizon,
        nodes,
        messages,
        delivery,
        coverage,
        counters,
        coverage_pct,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RunReport {
        let messages = vec![
            MessageInfo {
                id: "A-1".into(),
                origin: "A".into(),
                body: "hello".into(),
                originated_at: 0,
            },
            MessageInfo {
                id: "B-1".into(),
                origin: "B".into(),
                body: "world".into(),
                originated_at: 2,
            },
        ];
        build_report(
            1,
            7,
            100,
            vec!["A".into(), "B".into(), "C".into()],
            messages,
            |msg, node| match (msg.id.as_str(), node) {
                ("A-1", "A") => Some(0),
                ("A-1", "B") => Some(14),
                ("B-1", "B") => Some(2),
                ("B-1", "A") => Some(14),
                _ => None,
            },
            RunCounters::default(),
        )
    }

    #[test]
    fn coverage_curve_is_cumulative_and_queryable() {
        let report = sample();
        assert_eq!(report.coverage["A-1"], vec![(0, 1), (14, 2)]);
        assert_eq!(report.coverage_at("A-1", 0), 1);
        assert_eq!(report.coverage_at("A-1", 13), 1);
        assert_eq!(report.coverage_at("A-1", 14), 2);
        assert_eq!(report.coverage_at("A-1", 99), 2);
        assert_eq!(report.coverage_at("missing", 99), 0);
    }

    #[test]
    fn csv_matrix_has_never_cells() {
        let report = sample();
        let csv = report.delivery_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "message,origin,originated_at,A,B,C");
        assert_eq!(lines[1], "A-1,A,0,0,14,never");
        assert_eq!(lines[2], "B-1,B,2,14,2,never");
    }

    #[test]
    fn summary_and_percentages() {
        let report = sample();
        assert_eq!(report.coverage_pct, 4.0 / 6.0 * 100.0);
        assert_eq!(report.summary_line(), "messages=2 nodes=3 coverage=66.7%");
    }

    #[test]
    fn report_round_trips_through_json() {
        let report = sample();
        let json = serde_json::to_string_pretty(&report).unwrap();
        let back: RunReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.delivery, report.delivery);
        assert_eq!(back.coverage, report.coverage);
    }
}
