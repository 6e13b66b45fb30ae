//! The packet pool: pcap files, ground-truth sidecars, synthetic traffic and
//! paced replay.

mod format;
mod replay;
mod sidecar;
mod synth;

pub use format::{
    read_pcap, read_pcap_file, write_pcap, write_pcap_file, Capture, IngestDrops, PcapError, ENCAP_OVERHEAD,
    LINKTYPE_ETHERNET, PCAP_MAGIC, PCAP_MAGIC_SWAPPED, SNAPLEN,
};
pub use replay::{replay, ReplayError, ReplayStats};
pub use sidecar::{GroundTruthSidecar, SidecarError};
pub use synth::{synth_traffic, FlowGroup, SynthError, SynthPlan, SynthStream, TrafficProfile};
