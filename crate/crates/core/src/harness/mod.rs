//! Assembly of the whole loop (pcap pool, classifier, servers, trainer),
//! the offline commands behind the CLI, and reporting.

mod commands;
mod config;
mod data;
mod report;
mod run;

use std::path::PathBuf;

use thiserror::Error;

use crate::forest::{EnvelopeError, ForestError};
use crate::pcap::{PcapError, SidecarError, SynthError};
use crate::pipeline::PipelineError;

pub use commands::{bench, eval, extract, synth, train, BenchReport, EvalReport, SynthProfile};
pub use config::{InputSource, OtherDrift, ReportPaths, RunConfig, SyntheticInput};
pub use data::labeled_windows;
pub use report::{MetricsReport, TimelineEntry, VersionAccuracy};
pub use run::{run, RunOutput};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Pcap(#[from] PcapError),
    #[error(transparent)]
    Sidecar(#[from] SidecarError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn read_file(path: &std::path::Path) -> Result<Vec<u8>, HarnessError> {
    std::fs::read(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn create_file(path: &std::path::Path) -> Result<std::io::BufWriter<std::fs::File>, HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })
}

pub(crate) fn load_capture(path: &std::path::Path) -> Result<crate::pcap::Capture, HarnessError> {
    crate::pcap::read_pcap(&read_file(path)?).map_err(|e| HarnessError::Input(format!("{}: {e}", path.display())))
}

pub(crate) fn load_truth(path: &std::path::Path) -> Result<crate::pcap::GroundTruthSidecar, HarnessError> {
    crate::pcap::GroundTruthSidecar::read_csv(read_file(path)?.as_slice())
        .map_err(|e| HarnessError::Input(format!("{}: {e}", path.display())))
}
