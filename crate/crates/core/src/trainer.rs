//! The online trainer: joins classified windows with the labels coming back
//! from the servers, decides when to retrain, and produces the next model
//! envelope.
//!
//! Trees cannot be fine-tuned, so "learning from new traffic" means training
//! a fresh model on a replay buffer of past samples plus the samples seen
//! since the last retrain, the latter weighted up by `recency_weight`.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::thread::{self, JoinHandle};

use crossbeam_channel::{Receiver, Sender};

use crate::forest::{serialize_model, train_model, Dataset, Features, ForestError, Model, ModelKind, TrainParams};
use crate::model::{ClassLabel, FlowKey};
use crate::oracle::LabelEmission;
use crate::pipeline::WindowRecord;
use crate::rng::{sub_seed, SplitMix64};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledSample {
    pub features: Features,
    pub label: ClassLabel,
    pub flow: FlowKey,
    pub window_index: u64,
    pub joined_at_us: u64,
}

/// Bounded uniform sample of every labeled sample ever pushed (reservoir
/// sampling, Algorithm R).
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    samples: Vec<LabeledSample>,
    seen: u64,
    rng: SplitMix64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Self {
        Self {
            capacity,
            samples: Vec::with_capacity(capacity.min(1 << 16)),
            seen: 0,
            rng: SplitMix64::new(seed),
        }
    }

    pub fn push(&mut self, s: LabeledSample) {
        self.seen += 1;
        if self.samples.len() < self.capacity {
            self.samples.push(s);
        } else if self.capacity > 0 {
            let j = self.rng.below(self.seen);
            if (j as usize) < self.capacity {
                self.samples[j as usize] = s;
            }
        }
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Samples pushed over the buffer's lifetime.
    pub fn seen(&self) -> u64 {
        self.seen
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrainPolicy {
    pub min_new_samples: usize,
    pub accuracy_floor: f64,
    /// Joined decisions in the moving-accuracy window.
    pub moving_window: usize,
    pub min_interval_us: u64,
    pub recency_weight: u32,
}

impl Default for RetrainPolicy {
    fn default() -> Self {
        Self {
            min_new_samples: 500,
            accuracy_floor: 0.90,
            moving_window: 200,
            min_interval_us: 10_000_000,
            recency_weight: 2,
        }
    }
}

impl RetrainPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if self.min_new_samples < 1 {
            return Err("min_new_samples must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.accuracy_floor) {
            return Err("accuracy_floor must be in [0, 1]".into());
        }
        if self.moving_window < 1 {
            return Err("moving_window must be >= 1".into());
        }
        if self.recency_weight < 1 {
            return Err("recency_weight must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetrainReason {
    Batch,
    Drift,
    BatchAndDrift,
}

impl RetrainReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RetrainReason::Batch => "batch",
            RetrainReason::Drift => "drift",
            RetrainReason::BatchAndDrift => "batch+drift",
        }
    }
}

impl fmt::Display for RetrainReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub kind: ModelKind,
    pub params: TrainParams,
    pub policy: RetrainPolicy,
    pub replay_capacity: usize,
    /// Windows still unlabeled after this long are dropped.
    pub pending_ttl_us: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Forest,
            params: TrainParams::default(),
            policy: RetrainPolicy::default(),
            replay_capacity: 5000,
            pending_ttl_us: 60_000_000,
        }
    }
}

/// Cumulative join accounting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct JoinStats {
    pub windows_in: u64,
    pub labels_in: u64,
    pub joined: u64,
    pub expired: u64,
    pub pending: u64,
}

/// Output of one retrain.
#[derive(Debug, Clone)]
pub struct Retrained {
    pub version: u32,
    pub envelope: Vec<u8>,
    pub model: Model,
    /// Training rows after weight expansion.
    pub training_rows: u64,
}

/// Trains the successor of `current_version` on `replay` (weight 1) and
/// `new_samples` (weight `policy.recency_weight`). The model seed is
/// derived from `(params.seed, current_version + 1)`.
pub fn retrain(
    current_version: u32,
    new_samples: &[LabeledSample],
    replay: &ReplayBuffer,
    kind: ModelKind,
    params: &TrainParams,
    policy: &RetrainPolicy,
) -> Result<Retrained, ForestError> {
    let mut data = Dataset::new();
    for s in replay.samples() {
        data.push(s.features, s.label);
    }
    for s in new_samples {
        data.push_weighted(s.features, s.label, policy.recency_weight);
    }
    if data.is_empty() {
        return Err(ForestError::EmptyDataset);
    }
    let version = current_version + 1;
    let params = TrainParams {
        seed: sub_seed(params.seed, u64::from(version)),
        ..params.clone()
    };
    let model = train_model(kind, &data, &params)?;
    Ok(Retrained {
        version,
        envelope: serialize_model(&model, version),
        training_rows: data.effective_len(),
        model,
    })
}

pub struct OnlineTrainer {
    config: TrainerConfig,
    version: u32,
    replay: ReplayBuffer,
    new_samples: Vec<LabeledSample>,
    labels: HashMap<FlowKey, ClassLabel>,
    pending: HashMap<FlowKey, VecDeque<(WindowRecord, u64)>>,
    recent: VecDeque<bool>,
    recent_correct: usize,
    last_retrain_us: Option<u64>,
    stats: JoinStats,
}

impl OnlineTrainer {
    /// `current_version` is the version of the model being served.
    pub fn new(config: TrainerConfig, current_version: u32) -> Self {
        let replay = ReplayBuffer::new(config.replay_capacity, sub_seed(config.params.seed, u64::MAX));
        Self {
            config,
            version: current_version,
            replay,
            new_samples: Vec::new(),
            labels: HashMap::new(),
            pending: HashMap::new(),
            recent: VecDeque::new(),
            recent_correct: 0,
            last_retrain_us: None,
            stats: JoinStats::default(),
        }
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn stats(&self) -> JoinStats {
        self.stats
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn new_samples(&self) -> &[LabeledSample] {
        &self.new_samples
    }

    /// Seeds the replay buffer with samples the served model was trained on.
    /// They do not count as new samples.
    pub fn preload(&mut self, samples: impl IntoIterator<Item = LabeledSample>) {
        for s in samples {
            self.replay.push(s);
        }
    }

    /// Accuracy of the predictions on the last `moving_window` joined
    /// windows that carried one.
    pub fn moving_accuracy(&self) -> Option<f64> {
        if self.recent.is_empty() {
            None
        } else {
            Some(self.recent_correct as f64 / self.recent.len() as f64)
        }
    }

    /// Applies `labels`, then `windows`, then drops pendings older than the
    /// TTL. Repeated labels for a flow are no-ops.
    pub fn ingest(&mut self, windows: impl IntoIterator<Item = WindowRecord>, labels: &[LabelEmission], now_us: u64) {
        for e in labels {
            self.stats.labels_in += 1;
            if self.labels.contains_key(&e.flow) {
                continue;
            }
            self.labels.insert(e.flow, e.label);
            if let Some(waiting) = self.pending.remove(&e.flow) {
                self.stats.pending -= waiting.len() as u64;
                for (w, _) in waiting {
                    self.join(w, e.label, now_us);
                }
            }
        }
        for w in windows {
            self.stats.windows_in += 1;
            match self.labels.get(&w.vector.flow) {
                Some(&label) => self.join(w, label, now_us),
                None => {
                    self.stats.pending += 1;
                    self.pending.entry(w.vector.flow).or_default().push_back((w, now_us));
                }
            }
        }
        self.expire(now_us);
    }

    fn expire(&mut self, now_us: u64) {
        let ttl = self.config.pending_ttl_us;
        let mut expired = 0u64;
        self.pending.retain(|_, q| {
            while q.front().is_some_and(|&(_, t)| now_us.saturating_sub(t) > ttl) {
                q.pop_front();
                expired += 1;
            }
            !q.is_empty()
        });
        self.stats.expired += expired;
        self.stats.pending -= expired;
    }

    fn join(&mut self, w: WindowRecord, label: ClassLabel, now_us: u64) {
        if let Some(pred) = w.predicted {
            let ok = pred == label;
            self.recent.push_back(ok);
            self.recent_correct += usize::from(ok);
            if self.recent.len() > self.config.policy.moving_window {
                let old = self.recent.pop_front().expect("non-empty");
                self.recent_correct -= usize::from(old);
            }
        }
        let s = LabeledSample {
            features: w.vector.values,
            label,
            flow: w.vector.flow,
            window_index: w.vector.window_index,
            joined_at_us: now_us,
        };
        self.replay.push(s);
        self.new_samples.push(s);
        self.stats.joined += 1;
    }

    /// Retrain iff the minimum interval has elapsed and either trigger fires.
    /// The drift trigger needs a full moving window.
    pub fn should_retrain(&self, now_us: u64) -> Option<RetrainReason> {
        let p = &self.config.policy;
        if let Some(t) = self.last_retrain_us {
            if now_us.saturating_sub(t) < p.min_interval_us {
                return None;
            }
        }
        let batch = self.new_samples.len() >= p.min_new_samples;
        // A partial window is too noisy to call drift on.
        let drift = self.recent.len() >= p.moving_window
            && self.moving_accuracy().is_some_and(|a| a < p.accuracy_floor);
        match (batch, drift) {
            (true, true) => Some(RetrainReason::BatchAndDrift),
            (true, false) => Some(RetrainReason::Batch),
            (false, true) => Some(RetrainReason::Drift),
            (false, false) => None,
        }
    }

    /// Trains the next version and clears the new-sample set. The caller
    /// publishes the envelope.
    pub fn retrain(&mut self, now_us: u64) -> Result<Retrained, ForestError> {
        let out = retrain(
            self.version,
            &self.new_samples,
            &self.replay,
            self.config.kind,
            &self.config.params,
            &self.config.policy,
        )?;
        self.version = out.version;
        self.new_samples.clear();
        self.last_retrain_us = Some(now_us);
        Ok(out)
    }

    /// Checks the policy and retrains if it fires.
    pub fn maybe_retrain(&mut self, now_us: u64) -> Result<Option<(RetrainReason, Retrained)>, ForestError> {
        match self.should_retrain(now_us) {
            Some(reason) => Ok(Some((reason, self.retrain(now_us)?))),
            None => Ok(None),
        }
    }
}

pub enum TrainerInput {
    Ingest {
        windows: Vec<WindowRecord>,
        labels: Vec<LabelEmission>,
        now_us: u64,
    },
    /// Evaluate the policy at `now_us`.
    Tick(u64),
}

/// Runs an [`OnlineTrainer`] on its own thread so ingestion and training
/// never block the packet path. Inputs are processed in order, one at a
/// time, so at most one retrain is ever in flight.
pub struct TrainerService {
    tx: Sender<TrainerInput>,
    handle: JoinHandle<(OnlineTrainer, Vec<ForestError>)>,
}

impl TrainerService {
    /// `on_model` receives each new model, e.g. to swap it into a pipeline.
    pub fn spawn<F>(mut trainer: OnlineTrainer, queue: usize, mut on_model: F) -> Self
    where
        F: FnMut(RetrainReason, Retrained) + Send + 'static,
    {
        let (tx, rx): (Sender<TrainerInput>, Receiver<TrainerInput>) = crossbeam_channel::bounded(queue.max(1));
        let handle = thread::spawn(move || {
            let mut errors = Vec::new();
            for msg in rx {
                match msg {
                    TrainerInput::Ingest { windows, labels, now_us } => trainer.ingest(windows, &labels, now_us),
                    TrainerInput::Tick(now_us) => match trainer.maybe_retrain(now_us) {
                        Ok(Some((reason, out))) => on_model(reason, out),
                        Ok(None) => {}
                        Err(e) => errors.push(e),
                    },
                }
            }
            (trainer, errors)
        });
        Self { tx, handle }
    }

    pub fn sender(&self) -> Sender<TrainerInput> {
        self.tx.clone()
    }

    /// Closes the input queue, waits for pending work, and returns the
    /// trainer with any training errors it hit.
    pub fn shutdown(self) -> (OnlineTrainer, Vec<ForestError>) {
        drop(self.tx);
        self.handle.join().expect("trainer thread panicked")
    }
}
