//! Run artifacts: `metrics.csv`, `history.jsonl`, `reports.jsonl`,
//! `summary.json` and telemetry CSV exports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use hfl_core::federation::Level;
use hfl_core::phases::{RunOutcome, ScopedMetrics};
use hfl_core::report::{AnomalyReport, EventSummary};
use hfl_core::telemetry::{Label, TelemetryStream};
use hfl_core::RoundRecord;
use serde::Serialize;

use crate::error::{Result, SimError};
use crate::format::sig9;

pub const METRICS_FILE: &str = "metrics.csv";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const REPORTS_FILE: &str = "reports.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const SUMMARY_FILE: &str = "summary.json";

pub const METRICS_HEADER: &str = "scope,id,round,accuracy,precision,recall,f1";

pub fn metrics_csv(rows: &[ScopedMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let m = &r.metrics;
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.scope.kind(),
            r.scope.id(),
            r.round,
            sig9(m.accuracy),
            sig9(m.precision),
            sig9(m.recall),
            sig9(m.f1)
        )
        .unwrap();
    }
    out
}

#[derive(Serialize)]
struct ClientLine<'a> {
    vehicle_id: &'a str,
    delta_norm: f64,
    mean_loss: f64,
    final_loss: f64,
    steps: usize,
}

#[derive(Serialize)]
struct NodeLine<'a> {
    node_id: &'a str,
    participating: usize,
    skipped: &'a [String],
    delta_norm: f64,
}

#[derive(Serialize)]
#[serde(untagged)]
enum Members<'a> {
    Clients {
        participating: usize,
        skipped: &'a [String],
        mean_loss: Option<f64>,
        clients: Vec<ClientLine<'a>>,
    },
    Nodes {
        nodes: Vec<NodeLine<'a>>,
    },
}

#[derive(Serialize)]
struct HistoryLine<'a> {
    round: usize,
    level: &'a str,
    #[serde(flatten)]
    members: Members<'a>,
}

/// One JSON line per round and level: client, vendor (when enabled),
/// cloudlet, multi_cloud.
pub fn history_jsonl(history: &[RoundRecord]) -> String {
    let mut out = String::new();
    for record in history {
        let loss = record.mean_client_loss();
        let clients = HistoryLine {
            round: record.round,
            level: "client",
            members: Members::Clients {
                participating: record.participating(),
                skipped: &record.skipped_clients,
                mean_loss: loss.is_finite().then_some(loss),
                clients: record
                    .clients
                    .iter()
                    .map(|c| ClientLine {
                        vehicle_id: &c.vehicle_id,
                        delta_norm: c.delta_norm,
                        mean_loss: c.mean_loss,
                        final_loss: c.final_loss,
                        steps: c.steps,
                    })
                    .collect(),
            },
        };
        push_line(&mut out, &clients);
        for level in [Level::Vendor, Level::Cloudlet, Level::MultiCloud] {
            let nodes: Vec<NodeLine> = record
                .nodes
                .iter()
                .filter(|n| n.level == level)
                .map(|n| NodeLine {
                    node_id: &n.node_id,
                    participating: n.participating,
                    skipped: &n.skipped,
                    delta_norm: n.delta_norm,
                })
                .collect();
            if nodes.is_empty() {
                continue;
            }
            let line = HistoryLine {
                round: record.round,
                level: level.as_str(),
                members: Members::Nodes { nodes },
            };
            push_line(&mut out, &line);
        }
    }
    out
}

#[derive(Serialize)]
struct ReportLine<'a> {
    vehicle_id: &'a str,
    first_window: usize,
    last_window: usize,
    start_t: u64,
    end_t: u64,
    peak_probability: f64,
    stakeholders: Vec<&'a str>,
    action: &'a str,
}

pub fn reports_jsonl(reports: &[AnomalyReport]) -> String {
    let mut out = String::new();
    for r in reports {
        let line = ReportLine {
            vehicle_id: &r.vehicle_id,
            first_window: r.first_window,
            last_window: r.last_window,
            start_t: r.start_t,
            end_t: r.end_t,
            peak_probability: r.peak_probability,
            stakeholders: r.stakeholders.iter().map(|s| s.as_str()).collect(),
            action: r.action.as_str(),
        };
        push_line(&mut out, &line);
    }
    out
}

fn push_line<T: Serialize>(out: &mut String, value: &T) {
    out.push_str(&serde_json::to_string(value).expect("record serializes"));
    out.push('\n');
}

#[derive(Serialize)]
struct EventRow<'a> {
    kind: &'a str,
    episodes: usize,
    detected: usize,
    recall: f64,
}

#[derive(Serialize)]
struct Summary<'a> {
    master_seed: u64,
    scenario_digest: &'a str,
    phases: Vec<&'a str>,
    rounds: usize,
    vehicles: usize,
    final_global: FinalMetrics,
    random_baseline_f1: f64,
    events: Vec<EventRow<'a>>,
    false_alarms: usize,
    reports: usize,
    wall_time_s: f64,
}

#[derive(Serialize)]
struct FinalMetrics {
    accuracy: f64,
    precision: f64,
    recall: f64,
    f1: f64,
    tp: u64,
    fp: u64,
    fn_: u64,
    tn: u64,
}

fn event_rows(events: &EventSummary) -> Vec<EventRow<'_>> {
    let mut rows: Vec<EventRow> = events
        .by_kind
        .iter()
        .map(|(kind, c)| EventRow {
            kind: kind.as_str(),
            episodes: c.episodes,
            detected: c.detected,
            recall: c.recall(),
        })
        .collect();
    let total = events.total();
    rows.push(EventRow {
        kind: "all",
        episodes: total.episodes,
        detected: total.detected,
        recall: total.recall(),
    });
    rows
}

/// Human-oriented run summary. Unlike the other artifacts it records wall
/// time, so it is not byte-stable across runs.
pub fn summary_json(outcome: &RunOutcome, digest: &str, wall_time_s: f64) -> String {
    let m = outcome.final_global();
    let c = &m.confusion;
    let summary = Summary {
        master_seed: outcome.config.master_seed,
        scenario_digest: digest,
        phases: outcome.trace.iter().map(|p| p.as_str()).collect(),
        rounds: outcome.history.len(),
        vehicles: outcome.topology.n_clients,
        final_global: FinalMetrics {
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            tn: c.tn,
        },
        random_baseline_f1: c.random_baseline_f1(),
        events: event_rows(&outcome.events),
        false_alarms: outcome.events.false_alarms,
        reports: outcome.reports.len(),
        wall_time_s,
    };
    let mut s = serde_json::to_string_pretty(&summary).expect("summary serializes");
    s.push('\n');
    s
}

/// One row per record: feature columns, then the label (`normal` or the
/// anomaly kind).
pub fn telemetry_csv(stream: &TelemetryStream) -> String {
    let mut out = String::new();
    for f in &stream.profile {
        out.push_str(&f.name);
        out.push(',');
    }
    out.push_str("label\n");
    for rec in &stream.records {
        for v in &rec.features {
            out.push_str(&sig9(*v));
            out.push(',');
        }
        match rec.label {
            Label::Normal => out.push_str("normal"),
            Label::Anomalous(kind) => out.push_str(kind.as_str()),
        }
        out.push('\n');
    }
    out
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|source| SimError::Write {
        path: path.to_path_buf(),
        source,
    })
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| SimError::Write {
        path: path.to_path_buf(),
        source,
    })
}
