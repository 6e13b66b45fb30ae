//! The closed loop.
//!
//! Time is capture time. Packets are processed in chunks of `chunk_us`. For
//! each chunk the classifier workers route every packet, the servers check
//! the routed packets in capture order, and then the trainer ingests the
//! chunk's windows (sorted by time, flow and window index) and the labels
//! that are due, and may retrain. A new model is published before the next
//! chunk starts. Every decision therefore depends only on the input and the
//! config, whatever the worker count or machine speed. `speed_factor > 0`
//! only adds sleeps so that chunks are paced against the wall clock.

use std::sync::Arc;
use std::time::{Duration, Instant};

use crossbeam_channel::Receiver;

use super::config::{InputSource, RunConfig};
use super::report::{latency_stats, MetricsReport, TimelineEntry, VersionAccuracy};
use super::{create_file, load_capture, load_truth, read_file, HarnessError};
use crate::features::FeatureExtractor;
use crate::forest::{deserialize_model, train_model, ConfusionMatrix, Dataset, Model, TrainParams};
use crate::model::Packet;
use crate::oracle::{write_misroute_log, LabelOracle, MisrouteRecord, OracleConfig};
use crate::pcap::{GroundTruthSidecar, SynthPlan};
use crate::pipeline::{
    write_decision_log, ClassifierPipeline, ClassifierWorker, Dispatch, FeatureBatch, PipelineConfig, PipelineError,
    RouteDecision,
};
use crate::rng::sub_seed;
use crate::trainer::{LabeledSample, OnlineTrainer};

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: MetricsReport,
    /// Every decision, in the order the deciding packets were captured.
    pub decisions: Vec<RouteDecision>,
    pub misroutes: Vec<MisrouteRecord>,
}

enum Packets {
    Loaded(Vec<Packet>),
    Synthetic(SynthPlan),
}

impl Packets {
    fn iter(&self) -> Result<Box<dyn Iterator<Item = Packet> + '_>, HarnessError> {
        Ok(match self {
            Packets::Loaded(v) => Box::new(v.iter().cloned()),
            Packets::Synthetic(plan) => Box::new(plan.stream()?),
        })
    }
}

fn open_input(config: &RunConfig) -> Result<(Packets, GroundTruthSidecar, u64), HarnessError> {
    match &config.input {
        InputSource::Pcap { pcap, labels } => {
            let cap = load_capture(pcap)?;
            let truth = load_truth(labels)?;
            if let Some(i) = cap.packets.windows(2).position(|w| w[1].ts_us < w[0].ts_us) {
                return Err(HarnessError::Input(format!(
                    "{}: packet {} is older than its predecessor",
                    pcap.display(),
                    i + 1
                )));
            }
            Ok((Packets::Loaded(cap.packets), truth, cap.drops.total()))
        }
        InputSource::Synthetic(s) => {
            let plan = s.plan();
            let truth = plan.sidecar()?;
            Ok((Packets::Synthetic(plan), truth, 0))
        }
    }
}

struct Initial {
    model: Model,
    version: u32,
    reason: &'static str,
    training_rows: u64,
    /// Packets at or before this time are not replayed.
    live_after_us: Option<u64>,
    warmup: Vec<LabeledSample>,
}

/// Trains version 1 on the first `warmup_fraction` of labeled windows.
/// `None` when the input yields no labeled window at all.
fn bootstrap(config: &RunConfig, packets: &Packets, truth: &GroundTruthSidecar) -> Result<Option<Initial>, HarnessError> {
    let mut ex = FeatureExtractor::new(config.extractor);
    let mut labeled = Vec::new();
    for p in packets.iter()? {
        if let Some(fv) = ex.observe(&p, p.ts_us) {
            if let Some(label) = truth.label_of(&fv.flow) {
                labeled.push((fv, label));
            }
        }
    }
    if labeled.is_empty() {
        return Ok(None);
    }
    let n = ((labeled.len() as f64 * config.warmup_fraction).ceil() as usize).clamp(1, labeled.len());
    labeled.truncate(n);
    let mut data = Dataset::new();
    for (fv, label) in &labeled {
        data.push(fv.values, *label);
    }
    let params = TrainParams {
        seed: sub_seed(config.trainer.params.seed, 1),
        ..config.trainer.params.clone()
    };
    let model = train_model(config.trainer.kind, &data, &params)?;
    let cutoff = labeled.last().map(|(fv, _)| fv.ts_us);
    Ok(Some(Initial {
        model,
        version: 1,
        reason: "initial",
        training_rows: data.effective_len(),
        live_after_us: cutoff,
        warmup: labeled
            .into_iter()
            .map(|(fv, label)| LabeledSample {
                features: fv.values,
                label,
                flow: fv.flow,
                window_index: fv.window_index,
                joined_at_us: fv.ts_us,
            })
            .collect(),
    }))
}

struct Live<'a> {
    config: &'a RunConfig,
    truth: Arc<GroundTruthSidecar>,
    pipeline: ClassifierPipeline,
    feature_rx: Receiver<FeatureBatch>,
    workers: Vec<ClassifierWorker>,
    oracle: LabelOracle,
    trainer: OnlineTrainer,
    decisions: Vec<RouteDecision>,
    timeline: Vec<TimelineEntry>,
    trace: Vec<(u64, Option<f64>)>,
    latency_ns: Vec<u64>,
    busy: Duration,
    started: Instant,
    pace_origin: Option<(u64, Instant)>,
}

impl Live<'_> {
    fn route_chunk(&mut self, chunk: &[Packet]) -> Vec<Result<Dispatch, PipelineError>> {
        let t0 = Instant::now();
        let out = if self.workers.len() == 1 {
            let w = &mut self.workers[0];
            let mut out = Vec::with_capacity(chunk.len());
            for p in chunk {
                let t = Instant::now();
                let r = w.classify_and_route(p);
                self.latency_ns.push(t.elapsed().as_nanos() as u64);
                out.push(r);
            }
            out
        } else {
            let n = self.workers.len() as u64;
            let mut shards: Vec<Vec<usize>> = vec![Vec::new(); self.workers.len()];
            for (i, p) in chunk.iter().enumerate() {
                shards[(p.flow_key().shard_hash() % n) as usize].push(i);
            }
            let mut tagged: Vec<(usize, Result<Dispatch, PipelineError>, u64)> = std::thread::scope(|s| {
                let handles: Vec<_> = self
                    .workers
                    .iter_mut()
                    .zip(shards)
                    .map(|(w, idx)| {
                        s.spawn(move || {
                            idx.into_iter()
                                .map(|i| {
                                    let t = Instant::now();
                                    let r = w.classify_and_route(&chunk[i]);
                                    (i, r, t.elapsed().as_nanos() as u64)
                                })
                                .collect::<Vec<_>>()
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .flat_map(|h| h.join().expect("classifier worker panicked"))
                    .collect()
            });
            tagged.sort_unstable_by_key(|(i, _, _)| *i);
            tagged
                .into_iter()
                .map(|(_, r, ns)| {
                    self.latency_ns.push(ns);
                    r
                })
                .collect()
        };
        self.busy += t0.elapsed();
        out
    }

    fn process_chunk(&mut self, chunk: &[Packet], now_us: u64) -> Result<(), HarnessError> {
        let routed = self.route_chunk(chunk);
        for (p, r) in chunk.iter().zip(routed) {
            match r {
                Ok(d) => {
                    self.decisions.extend(d.decision);
                    // unknown flows are counted by the oracle
                    let _ = self.oracle.verify_and_label(p, d.sink, d.pre_decision, p.ts_us);
                }
                Err(PipelineError::NonUdp) => {}
                Err(e) => return Err(e.into()),
            }
        }
        for w in &mut self.workers {
            w.flush_batch();
            w.flush_expired(now_us);
        }
        let mut windows: Vec<_> = self.feature_rx.try_iter().flatten().collect();
        windows.sort_by(|a, b| {
            (a.vector.ts_us, a.vector.flow, a.vector.window_index).cmp(&(b.vector.ts_us, b.vector.flow, b.vector.window_index))
        });
        let labels = self.oracle.drain_due(now_us);
        self.trainer.ingest(windows, &labels, now_us);
        self.trace.push((now_us, self.trainer.moving_accuracy()));

        if self.config.retrain_enabled {
            if let Some((reason, out)) = self.trainer.maybe_retrain(now_us)? {
                self.pipeline.swap_model(&out.envelope)?;
                self.timeline.push(TimelineEntry {
                    version: out.version,
                    reason: reason.as_str().to_string(),
                    at_us: now_us,
                    wall_ms: self.started.elapsed().as_secs_f64() * 1e3,
                    training_rows: out.training_rows,
                    post_swap_accuracy: None,
                    post_swap_windows: 0,
                });
            }
        }

        if self.config.speed_factor > 0.0 {
            let (origin_us, origin) = *self.pace_origin.get_or_insert((now_us, Instant::now()));
            let due = origin + Duration::from_secs_f64((now_us - origin_us) as f64 / 1e6 / self.config.speed_factor);
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                std::thread::sleep(wait);
            }
        }
        Ok(())
    }
}

/// Runs the loop to input exhaustion and writes any configured report files.
pub fn run(config: &RunConfig) -> Result<RunOutput, HarnessError> {
    config.validate()?;
    let started = Instant::now();
    let (packets, truth, pcap_skipped) = open_input(config)?;

    let initial = match &config.initial_model {
        Some(path) => {
            let (model, version) = deserialize_model(&read_file(path)?)?;
            Some(Initial {
                model,
                version,
                reason: "loaded",
                training_rows: 0,
                live_after_us: None,
                warmup: Vec::new(),
            })
        }
        None => bootstrap(config, &packets, &truth)?,
    };
    let Some(initial) = initial else {
        if packets.iter()?.next().is_some() {
            return Err(HarnessError::Input("the input has no labeled window to bootstrap a model from".into()));
        }
        let output = RunOutput {
            report: MetricsReport {
                workers: config.workers,
                pcap_skipped,
                elapsed_s: started.elapsed().as_secs_f64(),
                ..MetricsReport::default()
            },
            decisions: Vec::new(),
            misroutes: Vec::new(),
        };
        write_outputs(config, &output)?;
        return Ok(output);
    };

    let (pipeline, feature_rx) = ClassifierPipeline::new(PipelineConfig {
        extractor: config.extractor,
        batch_size: 64,
        queue_capacity: 1 << 16,
    });
    pipeline.publish(initial.model, initial.version)?;
    let truth = Arc::new(truth);
    let mut trainer = OnlineTrainer::new(config.trainer.clone(), initial.version);
    let warmup_windows = initial.warmup.len() as u64;
    trainer.preload(initial.warmup);
    let mut live = Live {
        config,
        truth: Arc::clone(&truth),
        workers: (0..config.workers).map(|_| pipeline.worker()).collect(),
        pipeline,
        feature_rx,
        oracle: LabelOracle::new(
            truth,
            OracleConfig {
                label_latency_us: config.label_latency_us,
                reemit_interval_us: config.reemit_interval_us,
            },
        ),
        trainer,
        decisions: Vec::new(),
        timeline: vec![TimelineEntry {
            version: initial.version,
            reason: initial.reason.to_string(),
            at_us: initial.live_after_us.unwrap_or(0),
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
            training_rows: initial.training_rows,
            post_swap_accuracy: None,
            post_swap_windows: 0,
        }],
        trace: Vec::new(),
        latency_ns: Vec::new(),
        busy: Duration::ZERO,
        started,
        pace_origin: None,
    };

    let chunk_us = config.chunk_us;
    let mut chunk: Vec<Packet> = Vec::new();
    let mut bounds: Option<(u64, u64)> = None; // (origin, current chunk end)
    for p in packets.iter()? {
        if initial.live_after_us.is_some_and(|cut| p.ts_us <= cut) {
            continue;
        }
        let (origin, end) = *bounds.get_or_insert((p.ts_us, p.ts_us + chunk_us));
        if p.ts_us >= end {
            live.process_chunk(&chunk, end)?;
            chunk.clear();
            let next = origin + ((p.ts_us - origin) / chunk_us + 1) * chunk_us;
            bounds = Some((origin, next));
        }
        chunk.push(p);
    }
    if let Some((_, end)) = bounds {
        live.process_chunk(&chunk, end)?;
    }

    let output = finish(live, warmup_windows, initial.live_after_us, pcap_skipped);
    write_outputs(config, &output)?;
    Ok(output)
}

fn finish(mut live: Live<'_>, warmup_windows: u64, live_after_us: Option<u64>, pcap_skipped: u64) -> RunOutput {
    let k = live.config.trainer.policy.moving_window as u64;
    let mut confusion = ConfusionMatrix::default();
    let mut unscored = 0;
    let mut per_version: Vec<VersionAccuracy> = live
        .timeline
        .iter()
        .map(|e| VersionAccuracy {
            version: e.version,
            correct: 0,
            total: 0,
        })
        .collect();
    for d in &live.decisions {
        let Some(truth) = live.truth.label_of(&d.flow) else {
            unscored += 1;
            continue;
        };
        confusion.record(truth, d.label);
        let i = live.timeline.iter().position(|e| e.version == d.model_version).expect("decision by a published model");
        let v = &mut per_version[i];
        let ok = u64::from(truth == d.label);
        v.total += 1;
        v.correct += ok;
        let e = &mut live.timeline[i];
        if e.post_swap_windows < k {
            let prev = e.post_swap_accuracy.unwrap_or(0.0) * e.post_swap_windows as f64;
            e.post_swap_windows += 1;
            e.post_swap_accuracy = Some((prev + ok as f64) / e.post_swap_windows as f64);
        }
    }

    let mut counters = crate::pipeline::PipelineCounters::default();
    for w in &live.workers {
        counters += w.counters();
    }
    let elapsed = live.started.elapsed().as_secs_f64();
    let (latency_mean_us, latency_p95_us) = latency_stats(&mut live.latency_ns);
    let busy = live.busy.as_secs_f64();
    let misroutes: Vec<MisrouteRecord> = live.oracle.misroutes().copied().collect();
    let report = MetricsReport {
        workers: live.workers.len(),
        packets_in: counters.packets_in,
        per_sink: counters.per_sink,
        dropped: counters.dropped,
        pre_decision: counters.pre_decision,
        pcap_skipped,
        windows_classified: counters.windows_classified,
        windows_unscored: unscored,
        confusion,
        per_version,
        timeline: live.timeline,
        servers: live.oracle.totals(),
        misroute_records: misroutes.len() as u64,
        labels_emitted: live.oracle.labels_emitted(),
        join: live.trainer.stats(),
        batches_dropped: counters.batches_dropped,
        windows_dropped: counters.windows_dropped,
        warmup_windows,
        live_start_us: live_after_us,
        moving_accuracy_trace: live.trace,
        elapsed_s: elapsed,
        throughput_pps: if busy > 0.0 { counters.packets_in as f64 / busy } else { 0.0 },
        latency_mean_us,
        latency_p95_us,
    };
    RunOutput {
        report,
        decisions: live.decisions,
        misroutes,
    }
}

fn write_outputs(config: &RunConfig, out: &RunOutput) -> Result<(), HarnessError> {
    use std::io::Write;
    let paths = &config.report;
    let io = |path: &std::path::Path| {
        let path = path.to_path_buf();
        move |source| HarnessError::Io { path, source }
    };
    if let Some(p) = &paths.text {
        create_file(p)?.write_all(out.report.to_text().as_bytes()).map_err(io(p))?;
    }
    if let Some(p) = &paths.kv {
        create_file(p)?.write_all(out.report.to_kv().as_bytes()).map_err(io(p))?;
    }
    if let Some(p) = &paths.decisions {
        write_decision_log(create_file(p)?, &out.decisions)?;
    }
    if let Some(p) = &paths.misroutes {
        write_misroute_log(create_file(p)?, &out.misroutes)?;
    }
    Ok(())
}

