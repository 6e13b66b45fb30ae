//! Offline entry points: fixture generation, feature dumps, training,
//! evaluation and the packet-path benchmark.

use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use super::report::latency_stats;
use super::{create_file, load_capture, load_truth, read_file, HarnessError};
use crate::features::{extract_all, write_features_csv, ExtractorConfig};
use crate::forest::{
    deserialize_model, evaluate, serialize_model, train_model, write_labeled_csv, ConfusionMatrix, Dataset, DecisionTree,
    Model, ModelKind, TrainParams,
};
use crate::model::{ClassLabel, Packet};
use crate::pcap::{write_pcap_file, FlowGroup, SynthPlan, TrafficProfile};
use crate::pipeline::{ClassifierWorker, SharedModel};

/// What `synth` generates: one class, or all three.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthProfile {
    Class(ClassLabel),
    Mixed,
}

impl FromStr for SynthProfile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mixed" => Ok(SynthProfile::Mixed),
            "ar" | "cg" | "other" => Ok(SynthProfile::Class(s.parse().expect("known label"))),
            _ => Err(format!("unknown profile `{s}` (ar, cg, other or mixed)")),
        }
    }
}

/// Writes `flows` synthetic flows (split evenly over the classes for
/// `Mixed`) to a pcap file and its ground-truth CSV. Returns the packet and
/// flow counts.
pub fn synth(
    profile: SynthProfile,
    flows: usize,
    duration_s: f64,
    seed: u64,
    pcap_out: &Path,
    labels_out: &Path,
) -> Result<(usize, usize), HarnessError> {
    let mut plan = SynthPlan::new(seed, duration_s);
    match profile {
        SynthProfile::Class(label) => plan = plan.with_group(FlowGroup::steady(TrafficProfile::for_label(label), flows)),
        SynthProfile::Mixed => {
            for (i, label) in ClassLabel::ALL.into_iter().enumerate() {
                let n = flows / 3 + usize::from(i < flows % 3);
                plan = plan.with_group(FlowGroup::steady(TrafficProfile::for_label(label), n));
            }
        }
    }
    let (packets, truth) = plan.generate()?;
    write_pcap_file(pcap_out, &packets)?;
    truth.write_file(labels_out)?;
    Ok((packets.len(), truth.len()))
}

/// Dumps the windows of a capture as CSV, with a `label` column when ground
/// truth is given (windows of unlabeled flows are then skipped). Returns the
/// number of rows written.
pub fn extract(
    pcap: &Path,
    labels: Option<&Path>,
    extractor: ExtractorConfig,
    out: &Path,
) -> Result<usize, HarnessError> {
    let cap = load_capture(pcap)?;
    let vectors = extract_all(&cap.packets, extractor);
    match labels {
        None => {
            write_features_csv(create_file(out)?, &vectors)?;
            Ok(vectors.len())
        }
        Some(l) => {
            let truth = load_truth(l)?;
            let rows: Vec<_> = vectors
                .iter()
                .filter_map(|fv| truth.label_of(&fv.flow).map(|y| (fv, y)))
                .collect();
            let n = rows.len();
            write_labeled_csv(create_file(out)?, rows)?;
            Ok(n)
        }
    }
}

/// Trains a model on a labeled CSV and writes it as a version-1 envelope.
pub fn train(data: &Path, kind: ModelKind, params: &TrainParams, out: &Path) -> Result<Model, HarnessError> {
    let dataset = Dataset::read_labeled_csv(read_file(data)?.as_slice())?;
    let model = train_model(kind, &dataset, params)?;
    std::fs::write(out, serialize_model(&model, 1)).map_err(|source| HarnessError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    Ok(model)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub model_version: u32,
    pub windows: u64,
    /// Windows of flows missing from the ground truth; not scored.
    pub unscored: u64,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
}

/// Scores an envelope on every window of a labeled capture.
pub fn eval(model: &Path, pcap: &Path, labels: &Path, extractor: ExtractorConfig) -> Result<EvalReport, HarnessError> {
    let (model, version) = deserialize_model(&read_file(model)?)?;
    let cap = load_capture(pcap)?;
    let truth = load_truth(labels)?;
    let vectors = extract_all(&cap.packets, extractor);
    let (data, unscored) = Dataset::from_vectors(&vectors, &truth);
    let ev = evaluate(&model, data.iter())?;
    Ok(EvalReport {
        model_version: version,
        windows: data.len() as u64,
        unscored: unscored as u64,
        accuracy: ev.accuracy,
        confusion: ev.confusion,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub packets: u64,
    pub workers: usize,
    pub windows: u64,
    pub elapsed_s: f64,
    pub packets_per_s: f64,
    pub latency_mean_us: f64,
    pub latency_p95_us: f64,
}

/// Runs `classify_and_route` over pre-parsed packets, each worker owning
/// the flows sharded to it. Without a model a single-leaf placeholder is
/// served, which measures the packet path without tree traversal.
pub fn bench(
    packets: &[Packet],
    model: Option<(Model, u32)>,
    workers: usize,
    extractor: ExtractorConfig,
) -> Result<BenchReport, HarnessError> {
    let workers = workers.max(1);
    let shared = Arc::new(SharedModel::new());
    let (model, version) = model.unwrap_or_else(|| (Model::Tree(DecisionTree::single_leaf([0, 0, 1])), 1));
    shared.publish(model, version)?;

    let mut shards: Vec<Vec<&Packet>> = vec![Vec::new(); workers];
    for p in packets {
        shards[(p.flow_key().shard_hash() % workers as u64) as usize].push(p);
    }
    let start = Instant::now();
    let results: Vec<(Vec<u64>, u64)> = std::thread::scope(|s| {
        let handles: Vec<_> = shards
            .into_iter()
            .map(|shard| {
                let mut w = ClassifierWorker::standalone(Arc::clone(&shared), extractor);
                s.spawn(move || {
                    let mut lat = Vec::with_capacity(shard.len());
                    for p in shard {
                        let t = Instant::now();
                        let _ = std::hint::black_box(w.classify_and_route(p));
                        lat.push(t.elapsed().as_nanos() as u64);
                    }
                    (lat, w.counters().windows_classified)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("bench worker panicked")).collect()
    });
    let elapsed_s = start.elapsed().as_secs_f64();
    let windows = results.iter().map(|r| r.1).sum();
    let mut lat: Vec<u64> = results.into_iter().flat_map(|r| r.0).collect();
    let (latency_mean_us, latency_p95_us) = latency_stats(&mut lat);
    Ok(BenchReport {
        packets: packets.len() as u64,
        workers,
        windows,
        elapsed_s,
        packets_per_s: if elapsed_s > 0.0 { packets.len() as f64 / elapsed_s } else { 0.0 },
        latency_mean_us,
        latency_p95_us,
    })
}
