use std::collections::HashMap;
use std::io::{Read, Write};

use crate::features::{feature_record, FeatureVector, FEATURE_CSV_HEADER, FEATURE_NAMES, N_FEATURES};
use crate::model::ClassLabel;
use crate::pcap::GroundTruthSidecar;

use super::ForestError;

pub type Features = [f64; N_FEATURES];

/// Labeled training rows with integer duplication weights.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    x: Vec<Features>,
    y: Vec<ClassLabel>,
    w: Vec<u32>,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: Features, y: ClassLabel) {
        self.push_weighted(x, y, 1);
    }

    /// A row with weight `w` is equivalent to `w` copies of it.
    pub fn push_weighted(&mut self, x: Features, y: ClassLabel, w: u32) {
        assert!(w >= 1, "row weights must be >= 1");
        self.x.push(x);
        self.y.push(y);
        self.w.push(w);
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Row count after expanding weights.
    pub fn effective_len(&self) -> u64 {
        self.w.iter().map(|&w| u64::from(w)).sum()
    }

    pub fn features(&self) -> &[Features] {
        &self.x
    }

    pub fn labels(&self) -> &[ClassLabel] {
        &self.y
    }

    pub fn weights(&self) -> &[u32] {
        &self.w
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Features, ClassLabel)> {
        self.x.iter().zip(self.y.iter().copied())
    }

    pub fn class_counts(&self) -> [u64; ClassLabel::COUNT] {
        let mut c = [0u64; ClassLabel::COUNT];
        for (y, w) in self.y.iter().zip(&self.w) {
            c[y.index()] += u64::from(*w);
        }
        c
    }

    /// Labels each vector from the sidecar; vectors of unknown flows are
    /// skipped and counted.
    pub fn from_vectors(vectors: &[FeatureVector], truth: &GroundTruthSidecar) -> (Self, usize) {
        let mut d = Self::new();
        let mut unknown = 0;
        for fv in vectors {
            match truth.label_of(&fv.flow) {
                Some(l) => d.push(fv.values, l),
                None => unknown += 1,
            }
        }
        (d, unknown)
    }

    /// Reads a labeled feature CSV: the feature dump columns plus `label`.
    /// Columns are matched by header name; extra columns are ignored.
    pub fn read_labeled_csv<R: Read>(r: R) -> Result<Self, ForestError> {
        let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let headers = rd.headers()?.clone();
        let pos: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
        let col = |name: &str| {
            pos.get(name)
                .copied()
                .ok_or_else(|| ForestError::BadTrainingData(format!("missing column `{name}`")))
        };
        let feature_cols = FEATURE_NAMES.iter().map(|n| col(n)).collect::<Result<Vec<_>, _>>()?;
        let label_col = col("label")?;

        let mut d = Self::new();
        for (line, rec) in rd.records().enumerate() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).unwrap_or("");
            let mut x = [0.0; N_FEATURES];
            for (slot, &c) in x.iter_mut().zip(&feature_cols) {
                *slot = field(c).parse::<f64>().map_err(|e| {
                    ForestError::BadTrainingData(format!("row {}: column {c}: {e}", line + 1))
                })?;
                if !slot.is_finite() {
                    return Err(ForestError::BadTrainingData(format!("row {}: non-finite feature", line + 1)));
                }
            }
            let y = field(label_col)
                .parse::<ClassLabel>()
                .map_err(|e| ForestError::BadTrainingData(format!("row {}: {e}", line + 1)))?;
            d.push(x, y);
        }
        Ok(d)
    }
}

/// Writes the labeled feature CSV (feature dump columns plus `label`).
pub fn write_labeled_csv<'a, W: Write>(
    w: W,
    rows: impl IntoIterator<Item = (&'a FeatureVector, ClassLabel)>,
) -> csv::Result<()> {
    let mut wr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    let mut header: Vec<&str> = FEATURE_CSV_HEADER.to_vec();
    header.push("label");
    wr.write_record(&header)?;
    for (fv, label) in rows {
        let mut rec = feature_record(fv);
        rec.push(label.as_str().to_string());
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FlowKey;
    use std::net::Ipv4Addr;

    #[test]
    fn labeled_csv_round_trips_exactly() {
        let flow = FlowKey {
            src_ip: Ipv4Addr::new(10, 2, 0, 1),
            src_port: 5004,
            dst_ip: Ipv4Addr::new(10, 0, 2, 10),
            dst_port: 4000,
            proto: 17,
        };
        let fv = FeatureVector {
            flow,
            window_index: 0,
            values: [1.0 / 3.0, 2.5e-7, 1234.5678, 0.0, 8000.0, 1.0e10, 16_666.666_666_666_668, 3.0],
            ts_us: 0,
        };
        let mut buf = Vec::new();
        write_labeled_csv(&mut buf, [(&fv, ClassLabel::Cg)]).unwrap();
        let d = Dataset::read_labeled_csv(buf.as_slice()).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.features()[0], fv.values);
        assert_eq!(d.labels()[0], ClassLabel::Cg);
    }

    #[test]
    fn missing_columns_and_bad_labels_fail() {
        let text = "mean_ps,label\n1,AR\n";
        assert!(matches!(
            Dataset::read_labeled_csv(text.as_bytes()),
            Err(ForestError::BadTrainingData(_))
        ));
        let mut text = FEATURE_NAMES.join(",");
        text.push_str(",label\n1,2,3,4,5,6,7,8,XR\n");
        assert!(Dataset::read_labeled_csv(text.as_bytes()).is_err());
    }

    #[test]
    fn weights_expand() {
        let mut d = Dataset::new();
        d.push([0.0; 8], ClassLabel::Ar);
        d.push_weighted([1.0; 8], ClassLabel::Cg, 3);
        assert_eq!(d.len(), 2);
        assert_eq!(d.effective_len(), 4);
        assert_eq!(d.class_counts(), [1, 3, 0]);
    }
}
