//! Measures classify-and-route throughput with a trained forest at 1, 2
//! and 4 workers.
//!
//! cargo run --release --example bench

use arcg_loop::features::ExtractorConfig;
use arcg_loop::forest::{train_model, Dataset, ModelKind, TrainParams};
use arcg_loop::harness::{bench, labeled_windows};
use arcg_loop::model::ClassLabel;
use arcg_loop::pcap::{FlowGroup, SynthPlan, TrafficProfile};

fn main() -> anyhow::Result<()> {
    let extractor = ExtractorConfig::default();
    let mut data = Dataset::new();
    for (v, label) in labeled_windows(300, 1, extractor)? {
        data.push(v.values, label);
    }
    let model = train_model(ModelKind::Forest, &data, &TrainParams::default())?;

    let mut plan = SynthPlan::new(2, 30.0);
    for label in ClassLabel::ALL {
        plan = plan.with_group(FlowGroup::steady(TrafficProfile::for_label(label), 10));
    }
    let (packets, _) = plan.generate()?;

    for workers in [1, 2, 4] {
        let r = bench(&packets, Some((model.clone(), 1)), workers, extractor)?;
        println!(
            "workers={workers} packets={} windows={} packets_per_s={:.0} latency_mean_us={:.3} p95_us={:.3}",
            r.packets, r.windows, r.packets_per_s, r.latency_mean_us, r.latency_p95_us
        );
    }
    Ok(())
}
