//! Runs the online trainer on its own thread. The packet path classifies,
//! the oracle labels, and both feed the trainer through its queue; new
//! models come back through a callback that swaps them into the pipeline.
//!
//! cargo run --example trainer_service

use std::sync::Arc;

use arcg_loop::features::ExtractorConfig;
use arcg_loop::forest::{train_model, Dataset, ModelKind, TrainParams};
use arcg_loop::harness::labeled_windows;
use arcg_loop::model::ClassLabel;
use arcg_loop::oracle::{LabelOracle, OracleConfig};
use arcg_loop::pcap::{FlowGroup, SynthPlan, TrafficProfile};
use arcg_loop::pipeline::{ClassifierPipeline, PipelineConfig};
use arcg_loop::trainer::{OnlineTrainer, RetrainPolicy, TrainerConfig, TrainerInput, TrainerService};

fn main() -> anyhow::Result<()> {
    // A deliberately weak bootstrap model: one shallow tree.
    let mut data = Dataset::new();
    for (v, label) in labeled_windows(20, 9, ExtractorConfig::default())? {
        data.push(v.values, label);
    }
    let params = TrainParams {
        max_depth: 1,
        ..TrainParams::single_tree()
    };
    let (pipeline, batches) = ClassifierPipeline::new(PipelineConfig::default());
    pipeline.publish(train_model(ModelKind::Tree, &data, &params)?, 1)?;

    let config = TrainerConfig {
        params: TrainParams {
            n_trees: 10,
            ..TrainParams::default()
        },
        policy: RetrainPolicy {
            min_new_samples: 300,
            min_interval_us: 5_000_000,
            ..RetrainPolicy::default()
        },
        ..TrainerConfig::default()
    };
    let shared = pipeline.shared_model();
    let service = TrainerService::spawn(OnlineTrainer::new(config, 1), 64, move |reason, out| {
        shared.swap_model(&out.envelope).expect("fresh version");
        println!("  v{} trained on {} rows ({})", out.version, out.training_rows, reason.as_str());
    });

    let mut plan = SynthPlan::new(21, 60.0);
    for label in ClassLabel::ALL {
        plan = plan.with_group(FlowGroup::steady(TrafficProfile::for_label(label), 4));
    }
    let (packets, truth) = plan.generate()?;
    let mut oracle = LabelOracle::new(Arc::new(truth), OracleConfig::default());
    let mut worker = pipeline.worker();
    let tx = service.sender();

    let mut next_tick = 0;
    for p in &packets {
        let d = worker.classify_and_route(p)?;
        let _ = oracle.verify_and_label(p, d.sink, d.pre_decision, p.ts_us);
        if p.ts_us >= next_tick {
            worker.flush_batch();
            let windows: Vec<_> = batches.try_iter().flatten().collect();
            let labels = oracle.drain_due(p.ts_us);
            tx.send(TrainerInput::Ingest { windows, labels, now_us: p.ts_us })?;
            tx.send(TrainerInput::Tick(p.ts_us))?;
            next_tick = p.ts_us + 1_000_000;
        }
    }
    drop(tx);
    let (trainer, errors) = service.shutdown();
    anyhow::ensure!(errors.is_empty(), "training failed: {errors:?}");

    let t = oracle.totals();
    println!(
        "final model v{}; {} packets, {} correct, {} misrouted, {} pre-decision",
        trainer.version(),
        t.received,
        t.correct,
        t.misrouted,
        t.pre_decision
    );
    println!("join stats {:?}", trainer.stats());
    Ok(())
}
