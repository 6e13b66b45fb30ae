//! Trains a single CART tree and a random forest on synthetic windows,
//! scores both on a held-out seed and round-trips the forest through its
//! binary envelope.
//!
//! cargo run --example train_forest

use arcg_loop::features::ExtractorConfig;
use arcg_loop::forest::{deserialize_model, evaluate, serialize_model, train_model, Dataset, ModelKind, TrainParams};
use arcg_loop::harness::labeled_windows;

fn dataset(seed: u64) -> anyhow::Result<Dataset> {
    let mut d = Dataset::new();
    for (v, label) in labeled_windows(600, seed, ExtractorConfig::default())? {
        d.push(v.values, label);
    }
    Ok(d)
}

fn main() -> anyhow::Result<()> {
    let train = dataset(1)?;
    let test = dataset(2)?;

    for kind in [ModelKind::Tree, ModelKind::Forest] {
        let params = TrainParams {
            seed: 42,
            ..TrainParams::for_kind(kind)
        };
        let model = train_model(kind, &train, &params)?;
        let eval = evaluate(&model, test.iter())?;
        println!("{:<6} held-out accuracy {:.4}", kind.as_str(), eval.accuracy);
        println!("       confusion (rows truth: AR CG other) {:?}", eval.confusion.0);

        let envelope = serialize_model(&model, 1);
        let (back, version) = deserialize_model(&envelope)?;
        assert_eq!(version, 1);
        assert!(test.iter().all(|(x, _)| back.predict_features(x) == model.predict_features(x)));
        println!("       envelope {} bytes, decoded model predicts identically", envelope.len());
    }
    Ok(())
}
