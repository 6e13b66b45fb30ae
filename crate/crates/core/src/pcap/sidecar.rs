//! Ground-truth sidecar: one `(FlowKey, ClassLabel)` row per generated flow,
//! stored as CSV next to the pcap.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::net::Ipv4Addr;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ClassLabel, FlowKey};

#[derive(Debug, Error)]
pub enum SidecarError {
    #[error("flow {0} appears more than once")]
    DuplicateFlow(FlowKey),
    #[error("bad label: {0}")]
    Label(#[from] crate::model::ParseLabelError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    src_ip: Ipv4Addr,
    src_port: u16,
    dst_ip: Ipv4Addr,
    dst_port: u16,
    proto: u8,
    label: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruthSidecar {
    rows: Vec<(FlowKey, ClassLabel)>,
    index: HashMap<FlowKey, ClassLabel>,
}

impl GroundTruthSidecar {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_rows(rows: impl IntoIterator<Item = (FlowKey, ClassLabel)>) -> Result<Self, SidecarError> {
        let mut s = Self::new();
        for (k, l) in rows {
            s.push(k, l)?;
        }
        Ok(s)
    }

    pub fn push(&mut self, key: FlowKey, label: ClassLabel) -> Result<(), SidecarError> {
        if self.index.insert(key, label).is_some() {
            return Err(SidecarError::DuplicateFlow(key));
        }
        self.rows.push((key, label));
        Ok(())
    }

    /// Appends all rows of `other`, failing on the first shared flow.
    pub fn extend(&mut self, other: &GroundTruthSidecar) -> Result<(), SidecarError> {
        for &(k, l) in &other.rows {
            self.push(k, l)?;
        }
        Ok(())
    }

    pub fn label_of(&self, key: &FlowKey) -> Option<ClassLabel> {
        self.index.get(key).copied()
    }

    pub fn rows(&self) -> &[(FlowKey, ClassLabel)] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), SidecarError> {
        let mut wr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        for &(k, l) in &self.rows {
            wr.serialize(Row {
                src_ip: k.src_ip,
                src_port: k.src_port,
                dst_ip: k.dst_ip,
                dst_port: k.dst_port,
                proto: k.proto,
                label: l.as_str().to_string(),
            })?;
        }
        // header-only output for an empty sidecar
        if self.rows.is_empty() {
            wr.write_record(["src_ip", "src_port", "dst_ip", "dst_port", "proto", "label"])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, SidecarError> {
        let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let mut s = Self::new();
        for row in rd.deserialize::<Row>() {
            let row = row?;
            let key = FlowKey {
                src_ip: row.src_ip,
                src_port: row.src_port,
                dst_ip: row.dst_ip,
                dst_port: row.dst_port,
                proto: row.proto,
            };
            s.push(key, row.label.parse()?)?;
        }
        Ok(s)
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<(), SidecarError> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self, SidecarError> {
        Self::read_csv(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
