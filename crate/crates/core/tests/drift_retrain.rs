use arcg_loop::features::{extract_all, ExtractorConfig};
use arcg_loop::forest::{evaluate, train_model, Dataset, ModelKind, TrainParams};
use arcg_loop::model::ClassLabel;
use arcg_loop::pcap::{synth_traffic, TrafficProfile};
use arcg_loop::trainer::{retrain, LabeledSample, ReplayBuffer, RetrainPolicy};

fn drifted_other() -> TrafficProfile {
    TrafficProfile {
        frame_rate_hz: 50.0,
        frame_size_mean_bytes: 9000.0,
        ..TrafficProfile::other()
    }
}

fn samples(profiles: &[TrafficProfile], seed: u64) -> Vec<LabeledSample> {
    let mut out = Vec::new();
    for (i, prof) in profiles.iter().enumerate() {
        let (packets, truth) = synth_traffic(prof, 6, 30.0, seed * 10 + i as u64).unwrap();
        for v in extract_all(&packets, ExtractorConfig::default()) {
            out.push(LabeledSample {
                features: v.values,
                label: truth.label_of(&v.flow).unwrap(),
                flow: v.flow,
                window_index: v.window_index,
                joined_at_us: v.ts_us,
            });
        }
    }
    out
}

fn dataset(s: &[LabeledSample]) -> Dataset {
    let mut d = Dataset::new();
    for x in s {
        d.push(x.features, x.label);
    }
    d
}

#[test]
fn one_retrain_on_post_shift_labels_beats_the_stale_model() {
    let before = [TrafficProfile::ar(), TrafficProfile::cg(), TrafficProfile::other()];
    let after = [TrafficProfile::ar(), TrafficProfile::cg(), drifted_other()];
    let old = samples(&before, 1);
    let new = samples(&after, 2);
    let holdout = dataset(&samples(&after, 3));

    let params = TrainParams {
        n_trees: 10,
        seed: 6,
        ..TrainParams::default()
    };
    let stale = train_model(ModelKind::Forest, &dataset(&old), &params).unwrap();
    let stale_acc = evaluate(&stale, holdout.iter()).unwrap().accuracy;

    let mut replay = ReplayBuffer::new(5000, 9);
    for s in &old {
        replay.push(*s);
    }
    let out = retrain(1, &new, &replay, ModelKind::Forest, &params, &RetrainPolicy::default()).unwrap();
    assert_eq!(out.version, 2);
    let fresh = evaluate(&out.model, holdout.iter()).unwrap();
    assert!(
        fresh.accuracy > stale_acc,
        "retrained {} vs stale {}",
        fresh.accuracy,
        stale_acc
    );
    // the drifted class is what the retrain fixes
    let other = ClassLabel::Other.index();
    let row = fresh.confusion.0[other];
    assert!(row[other] as f64 / row.iter().sum::<u64>() as f64 > 0.9, "{:?}", fresh.confusion);
}
