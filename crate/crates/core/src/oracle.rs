//! The application-server side of the loop: checks each delivered packet
//! against ground truth and turns first sightings of a flow into labels for
//! the trainer.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::io::Write;
use std::sync::Arc;

use thiserror::Error;

use crate::model::{ClassLabel, FlowKey, Packet};
use crate::pcap::GroundTruthSidecar;
use crate::pipeline::SinkId;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("flow {0} is not in the ground truth")]
    UnknownFlow(FlowKey),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MisrouteRecord {
    pub flow: FlowKey,
    pub expected: ClassLabel,
    pub routed_to: SinkId,
    pub first_seen_us: u64,
    pub packet_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LabelEmission {
    pub flow: FlowKey,
    pub label: ClassLabel,
    pub emitted_at_us: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Correct,
    Misrouted,
    /// Delivered before the flow had a decision; never a misroute.
    PreDecision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Verification {
    pub verdict: Verdict,
    /// The misroute record after this packet was counted.
    pub misroute: Option<MisrouteRecord>,
    /// Label produced by this packet. It reaches the trainer through
    /// [`LabelOracle::drain_due`] once its `emitted_at_us` has passed.
    pub emission: Option<LabelEmission>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OracleConfig {
    /// Delay between seeing a flow and its label becoming available.
    pub label_latency_us: u64,
    /// Re-emit a flow's label once per this many microseconds. `None` emits
    /// once per flow per run.
    pub reemit_interval_us: Option<u64>,
}

/// Per-server tallies; a packet lands in exactly one of the four buckets.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ServerCounters {
    pub received: u64,
    pub correct: u64,
    pub misrouted: u64,
    pub pre_decision: u64,
    pub unknown: u64,
}

impl ServerCounters {
    pub fn consistent(&self) -> bool {
        self.correct + self.misrouted + self.pre_decision + self.unknown == self.received
    }
}

/// All three logical servers behind one ground-truth table.
pub struct LabelOracle {
    truth: Arc<GroundTruthSidecar>,
    config: OracleConfig,
    last_epoch: HashMap<FlowKey, u64>,
    misroutes: BTreeMap<(FlowKey, SinkId), MisrouteRecord>,
    queue: VecDeque<LabelEmission>,
    servers: [ServerCounters; 3],
    emitted: u64,
}

impl LabelOracle {
    pub fn new(truth: Arc<GroundTruthSidecar>, config: OracleConfig) -> Self {
        Self {
            truth,
            config,
            last_epoch: HashMap::new(),
            misroutes: BTreeMap::new(),
            queue: VecDeque::new(),
            servers: [ServerCounters::default(); 3],
            emitted: 0,
        }
    }

    pub fn verify_and_label(
        &mut self,
        p: &Packet,
        sink: SinkId,
        pre_decision: bool,
        now_us: u64,
    ) -> Result<Verification, OracleError> {
        let key = p.flow_key();
        let server = &mut self.servers[sink.index()];
        server.received += 1;
        let Some(truth) = self.truth.label_of(&key) else {
            server.unknown += 1;
            return Err(OracleError::UnknownFlow(key));
        };

        let epoch = self.config.reemit_interval_us.map_or(0, |e| now_us / e.max(1));
        let emission = if self.last_epoch.insert(key, epoch) != Some(epoch) {
            let e = LabelEmission {
                flow: key,
                label: truth,
                emitted_at_us: now_us + self.config.label_latency_us,
            };
            self.queue.push_back(e);
            self.emitted += 1;
            Some(e)
        } else {
            None
        };

        let (verdict, misroute) = if pre_decision {
            server.pre_decision += 1;
            (Verdict::PreDecision, None)
        } else if sink == SinkId::for_label(truth) {
            server.correct += 1;
            (Verdict::Correct, None)
        } else {
            server.misrouted += 1;
            let rec = self.misroutes.entry((key, sink)).or_insert(MisrouteRecord {
                flow: key,
                expected: truth,
                routed_to: sink,
                first_seen_us: now_us,
                packet_count: 0,
            });
            rec.packet_count += 1;
            (Verdict::Misrouted, Some(*rec))
        };
        Ok(Verification {
            verdict,
            misroute,
            emission,
        })
    }

    /// Labels whose latency has elapsed by `now_us`, in emission order.
    pub fn drain_due(&mut self, now_us: u64) -> Vec<LabelEmission> {
        let n = self.queue.iter().take_while(|e| e.emitted_at_us <= now_us).count();
        self.queue.drain(..n).collect()
    }

    /// Everything still queued, regardless of latency.
    pub fn drain_all(&mut self) -> Vec<LabelEmission> {
        self.queue.drain(..).collect()
    }

    pub fn server(&self, sink: SinkId) -> ServerCounters {
        self.servers[sink.index()]
    }

    pub fn totals(&self) -> ServerCounters {
        self.servers.iter().fold(ServerCounters::default(), |a, s| ServerCounters {
            received: a.received + s.received,
            correct: a.correct + s.correct,
            misrouted: a.misrouted + s.misrouted,
            pre_decision: a.pre_decision + s.pre_decision,
            unknown: a.unknown + s.unknown,
        })
    }

    pub fn labels_emitted(&self) -> u64 {
        self.emitted
    }

    /// Misroutes ordered by flow, then sink.
    pub fn misroutes(&self) -> impl Iterator<Item = &MisrouteRecord> {
        self.misroutes.values()
    }
}

pub fn write_misroute_log<'a, W: Write>(
    w: W,
    records: impl IntoIterator<Item = &'a MisrouteRecord>,
) -> csv::Result<()> {
    let mut wr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    wr.write_record([
        "src_ip",
        "src_port",
        "dst_ip",
        "dst_port",
        "proto",
        "expected",
        "routed_to",
        "first_seen_us",
        "packet_count",
    ])?;
    for r in records {
        let k = &r.flow;
        wr.write_record([
            k.src_ip.to_string(),
            k.src_port.to_string(),
            k.dst_ip.to_string(),
            k.dst_port.to_string(),
            k.proto.to_string(),
            r.expected.as_str().to_string(),
            r.routed_to.as_str().to_string(),
            r.first_seen_us.to_string(),
            r.packet_count.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}
