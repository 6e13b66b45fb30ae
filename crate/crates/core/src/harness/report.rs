use std::fmt::Write as _;

use crate::forest::ConfusionMatrix;
use crate::model::ClassLabel;
use crate::oracle::ServerCounters;
use crate::pipeline::SinkId;
use crate::trainer::JoinStats;

/// One published model.
#[derive(Debug, Clone, PartialEq)]
pub struct TimelineEntry {
    pub version: u32,
    /// `initial`, `loaded`, or the retrain trigger.
    pub reason: String,
    /// Capture time at publication.
    pub at_us: u64,
    /// Wall time since the run started, in milliseconds.
    pub wall_ms: f64,
    pub training_rows: u64,
    /// Accuracy over the first windows this version classified (up to the
    /// policy's moving-window size).
    pub post_swap_accuracy: Option<f64>,
    pub post_swap_windows: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VersionAccuracy {
    pub version: u32,
    pub correct: u64,
    pub total: u64,
}

impl VersionAccuracy {
    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub workers: usize,
    pub packets_in: u64,
    pub per_sink: [u64; 3],
    pub dropped: u64,
    pub pre_decision: u64,
    /// Records in the input file that never became packets (non-UDP, IPv6...).
    pub pcap_skipped: u64,
    pub windows_classified: u64,
    /// Decisions about flows without ground truth; not scored.
    pub windows_unscored: u64,
    /// Rows are truth, columns prediction.
    pub confusion: ConfusionMatrix,
    pub per_version: Vec<VersionAccuracy>,
    pub timeline: Vec<TimelineEntry>,
    pub servers: ServerCounters,
    pub misroute_records: u64,
    pub labels_emitted: u64,
    pub join: JoinStats,
    pub batches_dropped: u64,
    pub windows_dropped: u64,
    pub warmup_windows: u64,
    /// Packets at or before this capture time trained the initial model and
    /// were not replayed.
    pub live_start_us: Option<u64>,
    /// Trainer moving accuracy after each trainer round, by capture time.
    pub moving_accuracy_trace: Vec<(u64, Option<f64>)>,
    pub elapsed_s: f64,
    pub throughput_pps: f64,
    pub latency_mean_us: f64,
    pub latency_p95_us: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.6}"))
}

impl MetricsReport {
    pub fn delivered(&self) -> u64 {
        self.per_sink.iter().sum()
    }

    /// `packets_in = delivered + dropped`, and every delivered packet was
    /// seen by a server.
    pub fn conserved(&self) -> bool {
        self.packets_in == self.delivered() + self.dropped && self.servers.received == self.delivered()
    }

    pub fn accuracy(&self) -> Option<f64> {
        (self.confusion.total() > 0).then(|| self.confusion.accuracy())
    }

    /// `(key, value, timing)` rows; timing rows vary run to run.
    fn rows(&self) -> Vec<(String, String, bool)> {
        let mut r: Vec<(String, String, bool)> = Vec::new();
        let mut put = |k: &str, v: String, timing: bool| r.push((k.to_string(), v, timing));
        put("workers", self.workers.to_string(), true);
        put("packets_in", self.packets_in.to_string(), false);
        for s in SinkId::ALL {
            put(&format!("packets_out.{}", s.as_str().to_ascii_lowercase()), self.per_sink[s.index()].to_string(), false);
        }
        put("packets_dropped", self.dropped.to_string(), false);
        put("pre_decision_packets", self.pre_decision.to_string(), false);
        put("pcap_skipped", self.pcap_skipped.to_string(), false);
        put("conservation", if self.conserved() { "ok" } else { "VIOLATED" }.to_string(), false);
        put("windows_classified", self.windows_classified.to_string(), false);
        put("windows_unscored", self.windows_unscored.to_string(), false);
        put("accuracy", opt(self.accuracy()), false);
        for t in ClassLabel::ALL {
            for p in ClassLabel::ALL {
                put(
                    &format!("confusion.{}.{}", t.as_str(), p.as_str()),
                    self.confusion.0[t.index()][p.index()].to_string(),
                    false,
                );
            }
        }
        for v in &self.per_version {
            put(&format!("version.{}.accuracy", v.version), opt(v.accuracy()), false);
            put(&format!("version.{}.windows", v.version), v.total.to_string(), false);
        }
        for (i, e) in self.timeline.iter().enumerate() {
            let k = |f: &str| format!("timeline.{i}.{f}");
            put(&k("version"), e.version.to_string(), false);
            put(&k("reason"), e.reason.clone(), false);
            put(&k("at_us"), e.at_us.to_string(), false);
            put(&k("training_rows"), e.training_rows.to_string(), false);
            put(&k("post_swap_accuracy"), opt(e.post_swap_accuracy), false);
            put(&k("post_swap_windows"), e.post_swap_windows.to_string(), false);
            put(&k("wall_ms"), format!("{:.3}", e.wall_ms), true);
        }
        put("server.received", self.servers.received.to_string(), false);
        put("server.correct", self.servers.correct.to_string(), false);
        put("server.misrouted", self.servers.misrouted.to_string(), false);
        put("server.pre_decision", self.servers.pre_decision.to_string(), false);
        put("server.unknown_flow", self.servers.unknown.to_string(), false);
        put("misroute_records", self.misroute_records.to_string(), false);
        put("labels_emitted", self.labels_emitted.to_string(), false);
        put("join.windows_in", self.join.windows_in.to_string(), false);
        put("join.labels_in", self.join.labels_in.to_string(), false);
        put("join.joined", self.join.joined.to_string(), false);
        put("join.expired", self.join.expired.to_string(), false);
        put("join.pending", self.join.pending.to_string(), false);
        put("queue.batches_dropped", self.batches_dropped.to_string(), false);
        put("queue.windows_dropped", self.windows_dropped.to_string(), false);
        put("warmup_windows", self.warmup_windows.to_string(), false);
        put("live_start_us", self.live_start_us.map_or("n/a".into(), |t| t.to_string()), false);
        put("elapsed_s", format!("{:.3}", self.elapsed_s), true);
        put("throughput_pps", format!("{:.0}", self.throughput_pps), true);
        put("latency_mean_us", format!("{:.3}", self.latency_mean_us), true);
        put("latency_p95_us", format!("{:.3}", self.latency_p95_us), true);
        r
    }

    /// Machine-readable `key=value` lines.
    pub fn to_kv(&self) -> String {
        self.rows().into_iter().map(|(k, v, _)| format!("{k}={v}\n")).collect()
    }

    /// The `key=value` lines that depend only on config and seed.
    pub fn decision_kv(&self) -> String {
        self.rows()
            .into_iter()
            .filter(|(_, _, timing)| !timing)
            .map(|(k, v, _)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let w = &mut s;
        let _ = writeln!(w, "traffic classification run ({} worker{})", self.workers, if self.workers == 1 { "" } else { "s" });
        let _ = writeln!(w);
        let _ = writeln!(w, "packets");
        let _ = writeln!(w, "  in             {:>12}", self.packets_in);
        for sink in SinkId::ALL {
            let _ = writeln!(w, "  -> {:<12}{:>12}", sink.as_str(), self.per_sink[sink.index()]);
        }
        let _ = writeln!(w, "  dropped        {:>12}", self.dropped);
        let _ = writeln!(w, "  pre-decision   {:>12}", self.pre_decision);
        let _ = writeln!(w, "  conservation   {:>12}", if self.conserved() { "ok" } else { "VIOLATED" });
        let _ = writeln!(w);
        let _ = writeln!(w, "classification");
        let _ = writeln!(w, "  windows        {:>12}", self.windows_classified);
        let _ = writeln!(w, "  accuracy       {:>12}", opt(self.accuracy()));
        let _ = writeln!(w, "  confusion (rows truth, columns predicted)");
        let _ = writeln!(w, "  {:>8}{:>10}{:>10}{:>10}", "", "AR", "CG", "other");
        for t in ClassLabel::ALL {
            let row = self.confusion.0[t.index()];
            let _ = writeln!(w, "  {:>8}{:>10}{:>10}{:>10}", t.as_str(), row[0], row[1], row[2]);
        }
        let _ = writeln!(w);
        let _ = writeln!(w, "model versions");
        let _ = writeln!(w, "  {:>7} {:<12} {:>12} {:>10} {:>9} {:>10} {:>9}", "version", "reason", "at (s)", "wall (ms)", "rows", "post-swap", "accuracy");
        for e in &self.timeline {
            let acc = self.per_version.iter().find(|v| v.version == e.version).and_then(|v| v.accuracy());
            let _ = writeln!(
                w,
                "  {:>7} {:<12} {:>12.3} {:>10.1} {:>9} {:>10} {:>9}",
                e.version,
                e.reason,
                e.at_us as f64 / 1e6,
                e.wall_ms,
                e.training_rows,
                e.post_swap_accuracy.map_or("n/a".into(), |a| format!("{a:.4}")),
                acc.map_or("n/a".into(), |a| format!("{a:.4}")),
            );
        }
        let _ = writeln!(w);
        let _ = writeln!(w, "servers");
        let _ = writeln!(w, "  correct        {:>12}", self.servers.correct);
        let _ = writeln!(w, "  misrouted      {:>12}  ({} flow/sink records)", self.servers.misrouted, self.misroute_records);
        let _ = writeln!(w, "  unknown flow   {:>12}", self.servers.unknown);
        let _ = writeln!(w, "  labels emitted {:>12}", self.labels_emitted);
        let _ = writeln!(w);
        let _ = writeln!(w, "trainer");
        let _ = writeln!(w, "  windows in     {:>12}", self.join.windows_in);
        let _ = writeln!(w, "  joined         {:>12}", self.join.joined);
        let _ = writeln!(w, "  expired        {:>12}", self.join.expired);
        let _ = writeln!(w, "  queue drops    {:>12}", self.windows_dropped);
        let _ = writeln!(w);
        let _ = writeln!(w, "performance");
        let _ = writeln!(w, "  elapsed        {:>12.3} s", self.elapsed_s);
        let _ = writeln!(w, "  throughput     {:>12.0} packets/s", self.throughput_pps);
        let _ = writeln!(w, "  latency mean   {:>12.3} us", self.latency_mean_us);
        let _ = writeln!(w, "  latency p95    {:>12.3} us", self.latency_p95_us);
        s
    }
}

/// Mean and 95th percentile (nearest rank) of nanosecond samples, in µs.
pub(crate) fn latency_stats(samples: &mut [u64]) -> (f64, f64) {
    if samples.is_empty() {
        return (0.0, 0.0);
    }
    let mean = samples.iter().map(|&n| n as f64).sum::<f64>() / samples.len() as f64;
    let rank = ((samples.len() as f64) * 0.95).ceil() as usize;
    let (_, p95, _) = samples.select_nth_unstable(rank.clamp(1, samples.len()) - 1);
    (mean / 1e3, *p95 as f64 / 1e3)
}
