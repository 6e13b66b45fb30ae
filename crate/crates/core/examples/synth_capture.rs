//! Generates a mixed AR / CG / other capture, writes it as pcap plus a
//! ground-truth CSV, reads both back and replays the packets at 50x.
//!
//! cargo run --example synth_capture

use arcg_loop::model::ClassLabel;
use arcg_loop::pcap::{read_pcap_file, replay, write_pcap_file, FlowGroup, GroundTruthSidecar, SynthPlan, TrafficProfile};

fn main() -> anyhow::Result<()> {
    let mut plan = SynthPlan::new(7, 5.0);
    for label in ClassLabel::ALL {
        plan = plan.with_group(FlowGroup::steady(TrafficProfile::for_label(label), 3));
    }
    let (packets, truth) = plan.generate()?;

    let dir = tempfile::tempdir()?;
    let pcap = dir.path().join("mixed.pcap");
    let labels = dir.path().join("mixed.csv");
    write_pcap_file(&pcap, &packets)?;
    truth.write_file(&labels)?;

    let cap = read_pcap_file(&pcap)?;
    let back = GroundTruthSidecar::read_file(&labels)?;
    assert_eq!(cap.packets, packets);
    assert_eq!(back.rows(), truth.rows());
    println!("{} packets, {} flows, round trip ok", cap.packets.len(), back.len());
    for (key, label) in back.rows() {
        let n = cap.packets.iter().filter(|p| p.flow_key() == *key).count();
        println!("  {key}  {:<5} {n} packets", label.as_str());
    }

    let stats = replay(&cap.packets, 50.0, |_| {})?;
    println!(
        "replayed {} packets ({} bytes) in {:.3} s at 50x",
        stats.packets_sent,
        stats.bytes_sent,
        stats.elapsed.as_secs_f64()
    );
    Ok(())
}
