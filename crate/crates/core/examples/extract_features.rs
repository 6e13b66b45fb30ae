//! Streams a synthetic capture through the per-flow extractor and prints
//! the mean of every feature per class.
//!
//! cargo run --example extract_features

use arcg_loop::features::{extract_sharded, ExtractorConfig, FEATURE_NAMES, N_FEATURES};
use arcg_loop::model::ClassLabel;
use arcg_loop::pcap::{FlowGroup, SynthPlan, TrafficProfile};

fn main() -> anyhow::Result<()> {
    let mut plan = SynthPlan::new(11, 20.0);
    for label in ClassLabel::ALL {
        plan = plan.with_group(FlowGroup::steady(TrafficProfile::for_label(label), 4));
    }
    let (packets, truth) = plan.generate()?;

    let vectors = extract_sharded(&packets, ExtractorConfig::default(), 4);
    println!("{} packets -> {} windows of 30 packets", packets.len(), vectors.len());

    let mut sums = [[0.0; N_FEATURES]; 3];
    let mut counts = [0usize; 3];
    for v in &vectors {
        let c = truth.label_of(&v.flow).expect("synthetic flows are labeled").index();
        counts[c] += 1;
        for (s, x) in sums[c].iter_mut().zip(v.values) {
            *s += x;
        }
    }
    print!("{:<10}", "feature");
    for l in ClassLabel::ALL {
        print!("{:>14}", l.as_str());
    }
    println!();
    for (f, name) in FEATURE_NAMES.iter().enumerate() {
        print!("{name:<10}");
        for c in 0..3 {
            print!("{:>14.1}", sums[c][f] / counts[c].max(1) as f64);
        }
        println!();
    }
    Ok(())
}
