//! Packet path: per-flow features, classification with the live model,
//! sticky per-flow routing to the three class sinks, and hot model swaps.
//!
//! The live model sits in a [`SharedModel`]. Workers read it lock-free; a
//! swap publishes a complete `(version, model)` pair in one atomic store, so a
//! classification sees either the old pair or the new one.
//!
//! Each [`ClassifierWorker`] owns the extractor state and decision cache for
//! the flows sharded to it. Completed windows are batched towards the
//! trainer over a bounded queue; a full queue drops the batch and counts it
//! rather than stalling the packet path.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::ops::AddAssign;
use std::sync::{Arc, Mutex};

use arc_swap::ArcSwapOption;
use crossbeam_channel::{Receiver, Sender, TrySendError};
use thiserror::Error;

use crate::features::{ExtractorConfig, FeatureExtractor, FeatureVector};
use crate::forest::{deserialize_model, EnvelopeError, Model};
use crate::model::{ClassLabel, FlowKey, Packet};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PipelineError {
    #[error("no model has been published yet")]
    NotStarted,
    #[error("non-UDP packet dropped")]
    NonUdp,
    #[error("model version {offered} is not newer than the live version {current}")]
    StaleVersion { offered: u32, current: u32 },
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
}

/// An immutable published model.
#[derive(Debug)]
pub struct ModelHandle {
    pub version: u32,
    pub model: Model,
}

/// Application server a packet is forwarded to; one per class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SinkId {
    ArServer,
    CgServer,
    OtherServer,
}

impl SinkId {
    pub const ALL: [SinkId; 3] = [SinkId::ArServer, SinkId::CgServer, SinkId::OtherServer];

    pub fn for_label(label: ClassLabel) -> Self {
        match label {
            ClassLabel::Ar => SinkId::ArServer,
            ClassLabel::Cg => SinkId::CgServer,
            ClassLabel::Other => SinkId::OtherServer,
        }
    }

    pub fn label(self) -> ClassLabel {
        match self {
            SinkId::ArServer => ClassLabel::Ar,
            SinkId::CgServer => ClassLabel::Cg,
            SinkId::OtherServer => ClassLabel::Other,
        }
    }

    pub fn index(self) -> usize {
        self.label().index()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SinkId::ArServer => "AR_SERVER",
            SinkId::CgServer => "CG_SERVER",
            SinkId::OtherServer => "OTHER_SERVER",
        }
    }
}

impl fmt::Display for SinkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RouteDecision {
    pub flow: FlowKey,
    pub label: ClassLabel,
    pub confidence: f64,
    pub model_version: u32,
    pub window_index: u64,
    pub decided_at_us: u64,
}

/// A completed window as shipped to the trainer, with the prediction made
/// for it when there was one.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowRecord {
    pub vector: FeatureVector,
    pub predicted: Option<ClassLabel>,
    pub model_version: Option<u32>,
}

impl From<FeatureVector> for WindowRecord {
    fn from(vector: FeatureVector) -> Self {
        Self {
            vector,
            predicted: None,
            model_version: None,
        }
    }
}

/// Where one packet went.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dispatch {
    pub sink: SinkId,
    /// The flow had no decision yet; the packet went to the default sink.
    pub pre_decision: bool,
    /// Set when this packet completed a window.
    pub decision: Option<RouteDecision>,
}

/// The live-model slot shared by every worker and by the swapper.
#[derive(Default)]
pub struct SharedModel {
    slot: ArcSwapOption<ModelHandle>,
    swap_lock: Mutex<Vec<u32>>,
}

impl fmt::Debug for SharedModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SharedModel").field("version", &self.version()).finish()
    }
}

impl SharedModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn current(&self) -> Option<Arc<ModelHandle>> {
        self.slot.load_full()
    }

    pub fn version(&self) -> Option<u32> {
        self.slot.load().as_ref().map(|h| h.version)
    }

    /// Versions published so far, in publication order.
    pub fn published_versions(&self) -> Vec<u32> {
        self.swap_lock.lock().expect("swap lock poisoned").clone()
    }

    /// Publishes `model` as `version`, which must exceed the live version.
    pub fn publish(&self, model: Model, version: u32) -> Result<u32, PipelineError> {
        let mut history = self.swap_lock.lock().expect("swap lock poisoned");
        if let Some(current) = self.version() {
            if version <= current {
                return Err(PipelineError::StaleVersion {
                    offered: version,
                    current,
                });
            }
        }
        self.slot.store(Some(Arc::new(ModelHandle { version, model })));
        history.push(version);
        Ok(version)
    }

    /// Decodes an envelope and publishes it. Decoding happens before the
    /// swap lock is taken, so readers are never delayed by it.
    pub fn swap_model(&self, envelope: &[u8]) -> Result<u32, PipelineError> {
        let (model, version) = deserialize_model(envelope)?;
        self.publish(model, version)
    }
}

/// Per-worker packet accounting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PipelineCounters {
    pub packets_in: u64,
    pub per_sink: [u64; 3],
    pub dropped: u64,
    pub pre_decision: u64,
    pub windows_classified: u64,
    pub batches_sent: u64,
    pub batches_dropped: u64,
    pub windows_dropped: u64,
}

impl PipelineCounters {
    pub fn delivered(&self) -> u64 {
        self.per_sink.iter().sum()
    }

    /// `packets_in = delivered + dropped`.
    pub fn conserved(&self) -> bool {
        self.packets_in == self.delivered() + self.dropped
    }
}

impl AddAssign for PipelineCounters {
    fn add_assign(&mut self, o: Self) {
        self.packets_in += o.packets_in;
        for k in 0..3 {
            self.per_sink[k] += o.per_sink[k];
        }
        self.dropped += o.dropped;
        self.pre_decision += o.pre_decision;
        self.windows_classified += o.windows_classified;
        self.batches_sent += o.batches_sent;
        self.batches_dropped += o.batches_dropped;
        self.windows_dropped += o.windows_dropped;
    }
}

pub type FeatureBatch = Vec<WindowRecord>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelineConfig {
    pub extractor: ExtractorConfig,
    /// Windows per batch sent to the trainer.
    pub batch_size: usize,
    /// Batches the trainer queue holds before new ones are dropped.
    pub queue_capacity: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            extractor: ExtractorConfig::default(),
            batch_size: 64,
            queue_capacity: 1024,
        }
    }
}

/// Owns the shared model slot and the trainer-bound queue; hands out workers.
pub struct ClassifierPipeline {
    model: Arc<SharedModel>,
    config: PipelineConfig,
    feature_tx: Sender<FeatureBatch>,
}

impl ClassifierPipeline {
    /// Returns the pipeline and the receiving end of the feature queue.
    pub fn new(config: PipelineConfig) -> (Self, Receiver<FeatureBatch>) {
        let (tx, rx) = crossbeam_channel::bounded(config.queue_capacity.max(1));
        (
            Self {
                model: Arc::new(SharedModel::new()),
                config,
                feature_tx: tx,
            },
            rx,
        )
    }

    pub fn shared_model(&self) -> Arc<SharedModel> {
        Arc::clone(&self.model)
    }

    pub fn config(&self) -> PipelineConfig {
        self.config
    }

    pub fn worker(&self) -> ClassifierWorker {
        ClassifierWorker {
            model: Arc::clone(&self.model),
            extractor: FeatureExtractor::new(self.config.extractor),
            decisions: HashMap::new(),
            counters: PipelineCounters::default(),
            batch: Vec::with_capacity(self.config.batch_size),
            batch_size: self.config.batch_size.max(1),
            feature_tx: Some(self.feature_tx.clone()),
        }
    }

    pub fn publish(&self, model: Model, version: u32) -> Result<u32, PipelineError> {
        self.model.publish(model, version)
    }

    pub fn swap_model(&self, envelope: &[u8]) -> Result<u32, PipelineError> {
        self.model.swap_model(envelope)
    }
}

pub struct ClassifierWorker {
    model: Arc<SharedModel>,
    extractor: FeatureExtractor,
    decisions: HashMap<FlowKey, RouteDecision>,
    counters: PipelineCounters,
    batch: FeatureBatch,
    batch_size: usize,
    feature_tx: Option<Sender<FeatureBatch>>,
}

impl ClassifierWorker {
    /// A worker with no trainer attached; windows are classified but not
    /// shipped anywhere.
    pub fn standalone(model: Arc<SharedModel>, extractor: ExtractorConfig) -> Self {
        Self {
            model,
            extractor: FeatureExtractor::new(extractor),
            decisions: HashMap::new(),
            counters: PipelineCounters::default(),
            batch: Vec::new(),
            batch_size: usize::MAX,
            feature_tx: None,
        }
    }

    pub fn counters(&self) -> PipelineCounters {
        self.counters
    }

    pub fn latest_decision(&self, flow: &FlowKey) -> Option<&RouteDecision> {
        self.decisions.get(flow)
    }

    /// Classifies `p` (if it completes a window) and picks its sink.
    pub fn classify_and_route(&mut self, p: &Packet) -> Result<Dispatch, PipelineError> {
        // held for the whole call: one packet sees one model version
        let handle = self.model.slot.load();
        let Some(handle) = handle.as_ref() else {
            return Err(PipelineError::NotStarted);
        };
        self.counters.packets_in += 1;
        if !p.is_udp() {
            self.counters.dropped += 1;
            return Err(PipelineError::NonUdp);
        }

        let mut decision = None;
        if let Some(fv) = self.extractor.observe(p, p.ts_us) {
            let pred = handle.model.predict_features(&fv.values);
            let d = RouteDecision {
                flow: fv.flow,
                label: pred.label,
                confidence: pred.confidence,
                model_version: handle.version,
                window_index: fv.window_index,
                decided_at_us: p.ts_us,
            };
            self.decisions.insert(fv.flow, d);
            self.counters.windows_classified += 1;
            decision = Some(d);
            if self.feature_tx.is_some() {
                self.batch.push(WindowRecord {
                    vector: fv,
                    predicted: Some(pred.label),
                    model_version: Some(handle.version),
                });
                if self.batch.len() >= self.batch_size {
                    self.flush_batch();
                }
            }
        }

        let (sink, pre_decision) = match self.decisions.get(&p.flow_key()) {
            Some(d) => (SinkId::for_label(d.label), false),
            None => (SinkId::OtherServer, true),
        };
        self.counters.per_sink[sink.index()] += 1;
        if pre_decision {
            self.counters.pre_decision += 1;
        }
        Ok(Dispatch {
            sink,
            pre_decision,
            decision,
        })
    }

    /// Sends any buffered windows to the trainer queue.
    pub fn flush_batch(&mut self) {
        if self.batch.is_empty() {
            return;
        }
        let Some(tx) = &self.feature_tx else {
            self.batch.clear();
            return;
        };
        let batch = std::mem::replace(&mut self.batch, Vec::with_capacity(self.batch_size.min(1024)));
        let n = batch.len() as u64;
        match tx.try_send(batch) {
            Ok(()) => self.counters.batches_sent += 1,
            Err(TrySendError::Full(_)) | Err(TrySendError::Disconnected(_)) => {
                self.counters.batches_dropped += 1;
                self.counters.windows_dropped += n;
            }
        }
    }

    /// Evicts idle flows from the extractor and forgets their decisions.
    pub fn flush_expired(&mut self, now_us: u64) -> Vec<FlowKey> {
        let timeout = self.extractor.config().idle_timeout_us;
        let evicted = self.extractor.flush_expired(now_us, timeout);
        for k in &evicted {
            self.decisions.remove(k);
        }
        evicted
    }
}

pub const DECISION_LOG_HEADER: [&str; 10] = [
    "src_ip",
    "src_port",
    "dst_ip",
    "dst_port",
    "proto",
    "window_index",
    "label",
    "confidence",
    "model_version",
    "decided_at_us",
];

pub fn write_decision_log<W: Write>(w: W, decisions: &[RouteDecision]) -> csv::Result<()> {
    let mut wr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    wr.write_record(DECISION_LOG_HEADER)?;
    for d in decisions {
        let k = &d.flow;
        wr.write_record([
            k.src_ip.to_string(),
            k.src_port.to_string(),
            k.dst_ip.to_string(),
            k.dst_port.to_string(),
            k.proto.to_string(),
            d.window_index.to_string(),
            d.label.as_str().to_string(),
            d.confidence.to_string(),
            d.model_version.to_string(),
            d.decided_at_us.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::{serialize_model, DecisionTree, TreeNode};
    use std::net::Ipv4Addr;

    fn pkt(ts_us: u64, size: usize, host: u8) -> Packet {
        Packet {
            ts_us,
            src_ip: Ipv4Addr::new(10, 1, 0, host),
            dst_ip: Ipv4Addr::new(10, 0, 1, 10),
            src_port: 5004,
            dst_port: 4000,
            proto: 17,
            payload: vec![0; size],
            wire_len: (size + 42) as u32,
        }
    }

    fn constant(label: ClassLabel) -> Model {
        let mut c = [0; 3];
        c[label.index()] = 1;
        Model::Tree(DecisionTree::single_leaf(c))
    }

    /// mean_ps <= 500 -> CG, else AR
    fn size_rule() -> Model {
        Model::Tree(DecisionTree::from_nodes(vec![
            TreeNode::Internal {
                feature: 0,
                threshold: 500.0,
                left: 1,
                right: 2,
            },
            TreeNode::Leaf { counts: [0, 1, 0] },
            TreeNode::Leaf { counts: [1, 0, 0] },
        ]))
    }

    fn pipeline(window: usize) -> (ClassifierPipeline, Receiver<FeatureBatch>) {
        ClassifierPipeline::new(PipelineConfig {
            extractor: ExtractorConfig {
                window,
                ..ExtractorConfig::default()
            },
            batch_size: 1,
            queue_capacity: 16,
        })
    }

    #[test]
    fn not_started_without_model() {
        let (pl, _rx) = pipeline(4);
        let mut w = pl.worker();
        assert_eq!(w.classify_and_route(&pkt(0, 10, 1)), Err(PipelineError::NotStarted));
        assert_eq!(w.counters().packets_in, 0);
    }

    #[test]
    fn cold_start_then_sticky_routing() {
        let (pl, rx) = pipeline(4);
        pl.publish(constant(ClassLabel::Ar), 1).unwrap();
        let mut w = pl.worker();
        for i in 0..3 {
            let d = w.classify_and_route(&pkt(i * 10, 100, 1)).unwrap();
            assert_eq!(d.sink, SinkId::OtherServer);
            assert!(d.pre_decision);
            assert!(d.decision.is_none());
        }
        let d = w.classify_and_route(&pkt(30, 100, 1)).unwrap();
        assert_eq!(d.sink, SinkId::ArServer);
        assert!(!d.pre_decision);
        let dec = d.decision.unwrap();
        assert_eq!((dec.label, dec.model_version, dec.window_index), (ClassLabel::Ar, 1, 0));
        for i in 4..9 {
            assert_eq!(w.classify_and_route(&pkt(i * 10, 100, 1)).unwrap().sink, SinkId::ArServer);
        }
        let batch = rx.try_recv().unwrap();
        assert_eq!(batch.len(), 1);
        assert_eq!(batch[0].predicted, Some(ClassLabel::Ar));
        let c = w.counters();
        assert_eq!(c.packets_in, 9);
        assert_eq!(c.pre_decision, 3);
        assert!(c.conserved());
    }

    #[test]
    fn latest_decision_wins() {
        let (pl, _rx) = pipeline(2);
        pl.publish(size_rule(), 1).unwrap();
        let mut w = pl.worker();
        w.classify_and_route(&pkt(0, 100, 1)).unwrap();
        assert_eq!(w.classify_and_route(&pkt(1, 100, 1)).unwrap().sink, SinkId::CgServer);
        w.classify_and_route(&pkt(2, 900, 1)).unwrap();
        assert_eq!(w.classify_and_route(&pkt(3, 900, 1)).unwrap().sink, SinkId::ArServer);
        assert_eq!(w.classify_and_route(&pkt(4, 100, 1)).unwrap().sink, SinkId::ArServer);
    }

    #[test]
    fn swap_publishes_newer_versions_only() {
        let (pl, _rx) = pipeline(1);
        pl.publish(constant(ClassLabel::Cg), 3).unwrap();
        let mut w = pl.worker();
        assert_eq!(w.classify_and_route(&pkt(0, 1, 1)).unwrap().decision.unwrap().model_version, 3);

        let stale = serialize_model(&constant(ClassLabel::Ar), 3);
        assert_eq!(
            pl.swap_model(&stale),
            Err(PipelineError::StaleVersion { offered: 3, current: 3 })
        );
        assert_eq!(pl.shared_model().version(), Some(3));

        let fresh = serialize_model(&constant(ClassLabel::Ar), 4);
        assert_eq!(pl.swap_model(&fresh), Ok(4));
        let d = w.classify_and_route(&pkt(1, 1, 1)).unwrap().decision.unwrap();
        assert_eq!((d.model_version, d.label), (4, ClassLabel::Ar));
        assert_eq!(pl.shared_model().published_versions(), vec![3, 4]);

        assert!(matches!(pl.swap_model(b"XXXXjunk"), Err(PipelineError::Envelope(EnvelopeError::BadMagic))));
    }

    #[test]
    fn non_udp_is_dropped_and_counted() {
        let (pl, _rx) = pipeline(4);
        pl.publish(constant(ClassLabel::Ar), 1).unwrap();
        let mut w = pl.worker();
        let mut p = pkt(0, 10, 1);
        p.proto = 6;
        assert_eq!(w.classify_and_route(&p), Err(PipelineError::NonUdp));
        w.classify_and_route(&pkt(0, 10, 1)).unwrap();
        let c = w.counters();
        assert_eq!((c.packets_in, c.dropped, c.delivered()), (2, 1, 1));
        assert!(c.conserved());
    }

    #[test]
    fn full_queue_drops_batches_without_blocking() {
        let (pl, rx) = ClassifierPipeline::new(PipelineConfig {
            extractor: ExtractorConfig {
                window: 1,
                ..ExtractorConfig::default()
            },
            batch_size: 1,
            queue_capacity: 2,
        });
        pl.publish(constant(ClassLabel::Ar), 1).unwrap();
        let mut w = pl.worker();
        for i in 0..5 {
            w.classify_and_route(&pkt(i, 10, 1)).unwrap();
        }
        let c = w.counters();
        assert_eq!((c.batches_sent, c.batches_dropped, c.windows_dropped), (2, 3, 3));
        assert_eq!(rx.len(), 2);
    }

    #[test]
    fn eviction_forgets_decisions() {
        let (pl, _rx) = pipeline(1);
        pl.publish(constant(ClassLabel::Cg), 1).unwrap();
        let mut w = pl.worker();
        w.classify_and_route(&pkt(0, 10, 1)).unwrap();
        assert!(w.latest_decision(&pkt(0, 10, 1).flow_key()).is_some());
        assert_eq!(w.flush_expired(31_000_000).len(), 1);
        assert!(w.latest_decision(&pkt(0, 10, 1).flow_key()).is_none());
    }

    #[test]
    fn decision_log_layout() {
        let d = RouteDecision {
            flow: pkt(0, 1, 7).flow_key(),
            label: ClassLabel::Other,
            confidence: 0.75,
            model_version: 2,
            window_index: 5,
            decided_at_us: 1234,
        };
        let mut buf = Vec::new();
        write_decision_log(&mut buf, &[d]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "src_ip,src_port,dst_ip,dst_port,proto,window_index,label,confidence,model_version,decided_at_us\n\
             10.1.0.7,5004,10.0.1.10,4000,17,5,other,0.75,2,1234\n"
        );
    }
}
