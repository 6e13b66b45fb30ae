use super::HarnessError;
use crate::features::{ExtractorConfig, FeatureExtractor, FeatureVector};
use crate::model::ClassLabel;
use crate::pcap::{FlowGroup, SynthPlan, TrafficProfile};

const FLOWS_PER_CLASS: usize = 10;

/// The first `per_class` windows of each class from synthetic traffic with
/// the default profiles, in emission order, classes interleaved as they
/// occur. Uses ten flows per class and only as much capture time as needed.
pub fn labeled_windows(
    per_class: usize,
    seed: u64,
    extractor: ExtractorConfig,
) -> Result<Vec<(FeatureVector, ClassLabel)>, HarnessError> {
    let slowest = ClassLabel::ALL
        .iter()
        .map(|&l| TrafficProfile::for_label(l).approx_packets_per_s())
        .fold(f64::INFINITY, f64::min);
    let windows_per_s = FLOWS_PER_CLASS as f64 * slowest / extractor.window as f64;
    let duration_s = 2.0 * per_class as f64 / windows_per_s + 5.0;
    let mut plan = SynthPlan::new(seed, duration_s);
    for label in ClassLabel::ALL {
        plan = plan.with_group(FlowGroup::steady(TrafficProfile::for_label(label), FLOWS_PER_CLASS));
    }
    let truth = plan.sidecar()?;
    let mut ex = FeatureExtractor::new(extractor);
    let mut have = [0usize; ClassLabel::COUNT];
    let mut out = Vec::with_capacity(3 * per_class);
    for p in plan.stream()? {
        if have.iter().all(|&n| n >= per_class) {
            break;
        }
        if let Some(fv) = ex.observe(&p, p.ts_us) {
            let label = truth.label_of(&fv.flow).expect("synthetic flows are labeled");
            if have[label.index()] < per_class {
                have[label.index()] += 1;
                out.push((fv, label));
            }
        }
    }
    if have.iter().any(|&n| n < per_class) {
        return Err(HarnessError::Input(format!("synthetic capture yielded only {have:?} windows per class")));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_counts_and_reproducible() {
        let a = labeled_windows(50, 3, ExtractorConfig::default()).unwrap();
        assert_eq!(a.len(), 150);
        for l in ClassLabel::ALL {
            assert_eq!(a.iter().filter(|(_, y)| *y == l).count(), 50);
        }
        assert_eq!(a, labeled_windows(50, 3, ExtractorConfig::default()).unwrap());
        assert_ne!(a, labeled_windows(50, 4, ExtractorConfig::default()).unwrap());
    }
}
