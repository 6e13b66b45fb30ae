//! Four workers classify live traffic while the main thread publishes new
//! model versions. Every decision carries the version that made it.
//!
//! cargo run --example hot_swap

use std::collections::BTreeMap;
use std::thread;
use std::time::Duration;

use arcg_loop::features::ExtractorConfig;
use arcg_loop::forest::{serialize_model, train_model, Dataset, ModelKind, TrainParams};
use arcg_loop::harness::labeled_windows;
use arcg_loop::model::{ClassLabel, Packet};
use arcg_loop::pcap::{FlowGroup, SynthPlan, TrafficProfile};
use arcg_loop::pipeline::{ClassifierPipeline, PipelineConfig, PipelineCounters};

fn main() -> anyhow::Result<()> {
    let extractor = ExtractorConfig::default();
    let mut data = Dataset::new();
    for (v, label) in labeled_windows(300, 3, extractor)? {
        data.push(v.values, label);
    }

    let mut plan = SynthPlan::new(5, 30.0);
    for label in ClassLabel::ALL {
        plan = plan.with_group(FlowGroup::steady(TrafficProfile::for_label(label), 8));
    }
    let (packets, _) = plan.generate()?;

    let envelopes = (1..=5u32)
        .map(|version| {
            let params = TrainParams {
                seed: u64::from(version),
                n_trees: 10,
                ..TrainParams::default()
            };
            Ok(serialize_model(&train_model(ModelKind::Forest, &data, &params)?, version))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;

    let (pipeline, batches) = ClassifierPipeline::new(PipelineConfig::default());
    // Workers refuse packets until a first model is live.
    pipeline.swap_model(&envelopes[0])?;
    let drain = thread::spawn(move || batches.iter().map(|b| b.len()).sum::<usize>());

    // Shard by flow so each flow's packets stay on one worker, in order.
    let workers = 4;
    let mut shards: Vec<Vec<&Packet>> = vec![Vec::new(); workers];
    for p in &packets {
        shards[(p.flow_key().shard_hash() % workers as u64) as usize].push(p);
    }

    let mut total = PipelineCounters::default();
    let mut by_version = BTreeMap::new();
    thread::scope(|s| -> anyhow::Result<()> {
        let handles: Vec<_> = shards
            .iter()
            .map(|shard| {
                let mut w = pipeline.worker();
                s.spawn(move || {
                    let mut versions = BTreeMap::<u32, u64>::new();
                    for p in shard {
                        if let Ok(d) = w.classify_and_route(p) {
                            if let Some(dec) = d.decision {
                                *versions.entry(dec.model_version).or_default() += 1;
                            }
                        }
                    }
                    w.flush_batch();
                    (w.counters(), versions)
                })
            })
            .collect();

        for env in &envelopes[1..] {
            thread::sleep(Duration::from_millis(20));
            println!("published v{}", pipeline.swap_model(env)?);
        }
        for h in handles {
            let (c, versions) = h.join().expect("worker panicked");
            total += c;
            for (v, n) in versions {
                *by_version.entry(v).or_insert(0u64) += n;
            }
        }
        Ok(())
    })?;
    drop(pipeline);
    let shipped = drain.join().expect("drain panicked");

    println!("packets in {}, delivered {}, conserved {}", total.packets_in, total.delivered(), total.conserved());
    println!("windows classified {}, shipped to trainer {}", total.windows_classified, shipped);
    for (v, n) in by_version {
        println!("  v{v}: {n} decisions");
    }
    Ok(())
}
