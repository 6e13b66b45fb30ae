//! Synthetic AR / CG / other traffic.
//!
//! Each flow is an independent generator seeded with
//! `SplitMix64::derive(seed, flow_index)`. Per frame it draws, in order:
//! the frame size `N(mean, std)`, then one intra-frame gap per extra packet,
//! then the next inter-frame interval `N(1e6 / rate, jitter)`. Negative or
//! zero draws are clamped to 1 (byte or µs). A frame of `size` media bytes is
//! cut into `ceil(size / mtu)` chunks; in RTP mode every chunk gets a 12-byte
//! RTP header, all chunks of a frame share the RTP timestamp and the last one
//! carries the marker bit. Flows are merged into one stream ordered by
//! `(ts_us, flow_index)`.
//!
//! Addressing: flow `i` of class `c` (0-based within its class) sends from
//! `10.(c+1).hi.lo:5004`, where `hi.lo` encodes `i + 1`, to the class server
//! `10.0.(c+1).10:4000`.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::net::Ipv4Addr;

use thiserror::Error;

use super::format::ENCAP_OVERHEAD;
use super::sidecar::{GroundTruthSidecar, SidecarError};
use crate::model::{ClassLabel, FlowKey, Packet, RtpHeader, IPPROTO_UDP, RTP_HEADER_LEN};
use crate::rng::SplitMix64;

const RTP_CLOCK_HZ: f64 = 90_000.0;
const RTP_PAYLOAD_TYPE: u8 = 96;
const SRC_PORT: u16 = 5004;
const SERVER_PORT: u16 = 4000;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid traffic profile: {0}")]
    InvalidProfile(String),
    #[error("invalid synthesis plan: {0}")]
    InvalidPlan(String),
    #[error(transparent)]
    Sidecar(#[from] SidecarError),
}

/// Generation knobs for one traffic class.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficProfile {
    pub label: ClassLabel,
    pub frame_rate_hz: f64,
    /// Standard deviation of the inter-frame interval.
    pub frame_interval_jitter_us: f64,
    pub frame_size_mean_bytes: f64,
    pub frame_size_std_bytes: f64,
    /// Media bytes carried per packet.
    pub mtu_payload_bytes: u32,
    pub intra_frame_ipi_mean_us: f64,
    pub intra_frame_ipi_std_us: f64,
    pub rtp: bool,
}

impl TrafficProfile {
    pub fn cg() -> Self {
        Self {
            label: ClassLabel::Cg,
            frame_rate_hz: 60.0,
            frame_interval_jitter_us: 1_000.0,
            frame_size_mean_bytes: 8_000.0,
            frame_size_std_bytes: 2_000.0,
            mtu_payload_bytes: 1_200,
            intra_frame_ipi_mean_us: 40.0,
            intra_frame_ipi_std_us: 15.0,
            rtp: true,
        }
    }

    pub fn ar() -> Self {
        Self {
            label: ClassLabel::Ar,
            frame_rate_hz: 30.0,
            frame_interval_jitter_us: 2_000.0,
            frame_size_mean_bytes: 15_000.0,
            frame_size_std_bytes: 4_000.0,
            mtu_payload_bytes: 1_200,
            intra_frame_ipi_mean_us: 60.0,
            intra_frame_ipi_std_us: 20.0,
            rtp: true,
        }
    }

    pub fn other() -> Self {
        Self {
            label: ClassLabel::Other,
            frame_rate_hz: 25.0,
            frame_interval_jitter_us: 3_000.0,
            frame_size_mean_bytes: 4_000.0,
            frame_size_std_bytes: 1_500.0,
            mtu_payload_bytes: 1_200,
            intra_frame_ipi_mean_us: 250.0,
            intra_frame_ipi_std_us: 100.0,
            rtp: true,
        }
    }

    /// Default profile for a class.
    pub fn for_label(label: ClassLabel) -> Self {
        match label {
            ClassLabel::Ar => Self::ar(),
            ClassLabel::Cg => Self::cg(),
            ClassLabel::Other => Self::other(),
        }
    }

    /// `"ar"`, `"cg"` or `"other"` (case-insensitive).
    pub fn by_name(name: &str) -> Option<Self> {
        name.parse::<ClassLabel>().ok().map(Self::for_label)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidProfile(m.to_string()));
        if !(self.frame_rate_hz.is_finite() && self.frame_rate_hz > 0.0) {
            return bad("frame_rate_hz must be > 0");
        }
        if self.mtu_payload_bytes < 64 {
            return bad("mtu_payload_bytes must be >= 64");
        }
        let stds = [
            self.frame_interval_jitter_us,
            self.frame_size_std_bytes,
            self.intra_frame_ipi_std_us,
        ];
        if stds.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("standard deviations must be finite and >= 0");
        }
        if !(self.frame_size_mean_bytes.is_finite() && self.intra_frame_ipi_mean_us.is_finite()) {
            return bad("means must be finite");
        }
        Ok(())
    }

    fn frame_interval_us(&self) -> f64 {
        1e6 / self.frame_rate_hz
    }

    /// Rough packets per second of one flow, used to size datasets.
    pub fn approx_packets_per_s(&self) -> f64 {
        let per_frame = (self.frame_size_mean_bytes.max(1.0) / f64::from(self.mtu_payload_bytes)).ceil();
        self.frame_rate_hz * per_frame
    }
}

/// A set of flows of one class whose profile may change at given times.
#[derive(Debug, Clone)]
pub struct FlowGroup {
    pub flows: usize,
    /// `(start_us, profile)` ascending, the first starting at 0.
    pub phases: Vec<(u64, TrafficProfile)>,
}

impl FlowGroup {
    pub fn steady(profile: TrafficProfile, flows: usize) -> Self {
        Self {
            flows,
            phases: vec![(0, profile)],
        }
    }

    /// Flows that switch from `before` to `after` at `switch_us`.
    pub fn drifting(before: TrafficProfile, after: TrafficProfile, switch_us: u64, flows: usize) -> Self {
        Self {
            flows,
            phases: vec![(0, before), (switch_us, after)],
        }
    }

    pub fn label(&self) -> ClassLabel {
        self.phases[0].1.label
    }

    fn validate(&self) -> Result<(), SynthError> {
        let Some((first, p0)) = self.phases.first() else {
            return Err(SynthError::InvalidPlan("flow group without phases".into()));
        };
        if *first != 0 {
            return Err(SynthError::InvalidPlan("first phase must start at 0".into()));
        }
        for w in self.phases.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(SynthError::InvalidPlan("phase starts must increase".into()));
            }
        }
        for (_, p) in &self.phases {
            p.validate()?;
            if p.label != p0.label {
                return Err(SynthError::InvalidPlan("all phases of a group share one label".into()));
            }
        }
        Ok(())
    }

    fn profile_at(&self, t_us: u64) -> &TrafficProfile {
        let i = self.phases.partition_point(|(start, _)| *start <= t_us);
        &self.phases[i.saturating_sub(1)].1
    }
}

/// Everything needed to regenerate a synthetic capture.
#[derive(Debug, Clone)]
pub struct SynthPlan {
    pub seed: u64,
    pub duration_us: u64,
    pub groups: Vec<FlowGroup>,
}

impl SynthPlan {
    pub fn new(seed: u64, duration_s: f64) -> Self {
        Self {
            seed,
            duration_us: (duration_s.max(0.0) * 1e6).round() as u64,
            groups: Vec::new(),
        }
    }

    pub fn with_group(mut self, group: FlowGroup) -> Self {
        self.groups.push(group);
        self
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        self.groups.iter().try_for_each(FlowGroup::validate)
    }

    pub fn sidecar(&self) -> Result<GroundTruthSidecar, SynthError> {
        self.validate()?;
        let mut s = GroundTruthSidecar::new();
        for (key, label, _, _) in self.flow_slots() {
            s.push(key, label)?;
        }
        Ok(s)
    }

    /// `(key, label, group index, global flow index)` for every flow.
    fn flow_slots(&self) -> Vec<(FlowKey, ClassLabel, usize, u64)> {
        let mut per_label = [0u32; ClassLabel::COUNT];
        let mut out = Vec::new();
        let mut global = 0u64;
        for (g, group) in self.groups.iter().enumerate() {
            let label = group.label();
            for _ in 0..group.flows {
                per_label[label.index()] += 1;
                out.push((flow_address(label, per_label[label.index()]), label, g, global));
                global += 1;
            }
        }
        out
    }

    /// Lazily generated, timestamp-ordered packet stream.
    pub fn stream(&self) -> Result<SynthStream<'_>, SynthError> {
        self.validate()?;
        let gens: Vec<FlowGen<'_>> = self
            .flow_slots()
            .into_iter()
            .map(|(key, _, g, idx)| FlowGen::new(&self.groups[g], key, SplitMix64::derive(self.seed, idx), self.duration_us))
            .collect();
        let mut s = SynthStream {
            gens,
            heap: BinaryHeap::new(),
        };
        for i in 0..s.gens.len() {
            s.refill(i);
        }
        Ok(s)
    }

    pub fn generate(&self) -> Result<(Vec<Packet>, GroundTruthSidecar), SynthError> {
        let sidecar = self.sidecar()?;
        Ok((self.stream()?.collect(), sidecar))
    }
}

fn flow_address(label: ClassLabel, host: u32) -> FlowKey {
    let c = label.index() as u8 + 1;
    FlowKey {
        src_ip: Ipv4Addr::new(10, c, (host >> 8) as u8, host as u8),
        src_port: SRC_PORT,
        dst_ip: Ipv4Addr::new(10, 0, c, 10),
        dst_port: SERVER_PORT,
        proto: IPPROTO_UDP,
    }
}

/// Generates `flows` flows of one profile for `duration_s` seconds.
pub fn synth_traffic(
    profile: &TrafficProfile,
    flows: usize,
    duration_s: f64,
    seed: u64,
) -> Result<(Vec<Packet>, GroundTruthSidecar), SynthError> {
    profile.validate()?;
    if !(duration_s >= 0.0) {
        return Err(SynthError::InvalidPlan("duration must be >= 0".into()));
    }
    SynthPlan::new(seed, duration_s)
        .with_group(FlowGroup::steady(profile.clone(), flows))
        .generate()
}

fn clamp_round(x: f64) -> u64 {
    if x.is_nan() || x < 1.0 {
        1
    } else {
        x.round() as u64
    }
}

struct FlowGen<'a> {
    group: &'a FlowGroup,
    key: FlowKey,
    rng: SplitMix64,
    duration_us: u64,
    next_frame_us: u64,
    seq: u16,
    rtp_ts: u32,
    ssrc: u32,
    pending: VecDeque<Packet>,
}

impl<'a> FlowGen<'a> {
    fn new(group: &'a FlowGroup, key: FlowKey, mut rng: SplitMix64, duration_us: u64) -> Self {
        let ssrc = rng.next_u64() as u32;
        let seq = rng.next_u64() as u16;
        let rtp_ts = rng.next_u64() as u32;
        let offset = (rng.next_f64() * group.profile_at(0).frame_interval_us()) as u64;
        Self {
            group,
            key,
            rng,
            duration_us,
            next_frame_us: offset,
            seq,
            rtp_ts,
            ssrc,
            pending: VecDeque::new(),
        }
    }

    fn packet(&self, ts_us: u64, payload: Vec<u8>) -> Packet {
        Packet {
            ts_us,
            src_ip: self.key.src_ip,
            dst_ip: self.key.dst_ip,
            src_port: self.key.src_port,
            dst_port: self.key.dst_port,
            proto: self.key.proto,
            wire_len: (ENCAP_OVERHEAD + payload.len()) as u32,
            payload,
        }
    }

    fn next_frame(&mut self) -> bool {
        let t0 = self.next_frame_us;
        if t0 >= self.duration_us {
            return false;
        }
        let profile = self.group.profile_at(t0);
        let size = clamp_round(self.rng.normal(profile.frame_size_mean_bytes, profile.frame_size_std_bytes));
        let mtu = u64::from(profile.mtu_payload_bytes);
        let chunks = size.div_ceil(mtu);
        let mut ts = t0;
        for j in 0..chunks {
            if j > 0 {
                ts += clamp_round(self.rng.normal(profile.intra_frame_ipi_mean_us, profile.intra_frame_ipi_std_us));
            }
            let media = (size - j * mtu).min(mtu) as usize;
            let payload = if profile.rtp {
                let hdr = RtpHeader::new(j + 1 == chunks, RTP_PAYLOAD_TYPE, self.seq, self.rtp_ts, self.ssrc);
                self.seq = self.seq.wrapping_add(1);
                let mut v = Vec::with_capacity(RTP_HEADER_LEN + media);
                v.extend_from_slice(&hdr.encode());
                v.resize(RTP_HEADER_LEN + media, 0);
                v
            } else {
                vec![0u8; media]
            };
            let p = self.packet(ts, payload);
            self.pending.push_back(p);
        }
        let step = (RTP_CLOCK_HZ / profile.frame_rate_hz).round().max(1.0) as u32;
        self.rtp_ts = self.rtp_ts.wrapping_add(step);
        let interval = clamp_round(self.rng.normal(profile.frame_interval_us(), profile.frame_interval_jitter_us));
        self.next_frame_us = (t0 + interval).max(ts + 1);
        true
    }

    fn peek_ts(&mut self) -> Option<u64> {
        if self.pending.is_empty() && !self.next_frame() {
            return None;
        }
        self.pending.front().map(|p| p.ts_us)
    }
}

/// Iterator over a [`SynthPlan`]'s packets in global timestamp order.
pub struct SynthStream<'a> {
    gens: Vec<FlowGen<'a>>,
    heap: BinaryHeap<Reverse<(u64, usize)>>,
}

impl SynthStream<'_> {
    fn refill(&mut self, i: usize) {
        if let Some(ts) = self.gens[i].peek_ts() {
            self.heap.push(Reverse((ts, i)));
        }
    }
}

impl Iterator for SynthStream<'_> {
    type Item = Packet;

    fn next(&mut self) -> Option<Packet> {
        let Reverse((_, i)) = self.heap.pop()?;
        let p = self.gens[i].pending.pop_front().expect("heap entry has a pending packet");
        self.refill(i);
        Some(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_rtp;
    use std::collections::{HashMap, HashSet};

    #[test]
    fn zero_flows_is_empty() {
        let (pkts, side) = synth_traffic(&TrafficProfile::cg(), 0, 10.0, 1).unwrap();
        assert!(pkts.is_empty());
        assert!(side.is_empty());
    }

    #[test]
    fn deterministic_for_same_inputs() {
        let a = synth_traffic(&TrafficProfile::ar(), 3, 2.0, 11).unwrap();
        let b = synth_traffic(&TrafficProfile::ar(), 3, 2.0, 11).unwrap();
        assert_eq!(a, b);
        let c = synth_traffic(&TrafficProfile::ar(), 3, 2.0, 12).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn cg_inter_frame_mean_is_near_nominal() {
        let (pkts, _) = synth_traffic(&TrafficProfile::cg(), 1, 30.0, 7).unwrap();
        let mut frame_starts = Vec::new();
        let mut last_rtp = None;
        for p in &pkts {
            let h = parse_rtp(&p.payload).unwrap();
            if last_rtp != Some(h.timestamp) {
                frame_starts.push(p.ts_us);
                last_rtp = Some(h.timestamp);
            }
        }
        let gaps: Vec<f64> = frame_starts.windows(2).map(|w| (w[1] - w[0]) as f64).collect();
        assert!(gaps.len() >= 1000, "only {} frames", gaps.len());
        let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
        assert!((mean - 16_666.7).abs() / 16_666.7 < 0.05, "mean IFI {mean}");
    }

    #[test]
    fn output_is_time_ordered_and_sidecar_matches() {
        let plan = SynthPlan::new(5, 3.0)
            .with_group(FlowGroup::steady(TrafficProfile::cg(), 4))
            .with_group(FlowGroup::steady(TrafficProfile::other(), 3))
            .with_group(FlowGroup::steady(TrafficProfile::ar(), 2));
        let (pkts, side) = plan.generate().unwrap();
        assert!(pkts.windows(2).all(|w| w[0].ts_us <= w[1].ts_us));
        let seen: HashSet<FlowKey> = pkts.iter().map(Packet::flow_key).collect();
        let listed: HashSet<FlowKey> = side.rows().iter().map(|r| r.0).collect();
        assert_eq!(seen, listed);
        assert_eq!(side.len(), 9);
        for p in &pkts {
            assert!(p.wire_len as usize >= p.payload.len());
            assert_eq!(p.proto, 17);
        }
    }

    #[test]
    fn marker_closes_each_rtp_timestamp_group() {
        let (pkts, _) = synth_traffic(&TrafficProfile::ar(), 3, 2.0, 9).unwrap();
        let mut by_flow: HashMap<FlowKey, Vec<(u32, bool)>> = HashMap::new();
        for p in &pkts {
            let h = parse_rtp(&p.payload).unwrap();
            by_flow.entry(p.flow_key()).or_default().push((h.timestamp, h.marker));
        }
        for seq in by_flow.values() {
            for (i, &(ts, marker)) in seq.iter().enumerate() {
                let last_of_group = seq.get(i + 1).map_or(true, |n| n.0 != ts);
                assert_eq!(marker, last_of_group);
            }
        }
    }

    #[test]
    fn non_rtp_payloads_do_not_parse_as_rtp() {
        let mut p = TrafficProfile::other();
        p.rtp = false;
        let (pkts, _) = synth_traffic(&p, 2, 1.0, 3).unwrap();
        assert!(!pkts.is_empty());
        assert!(pkts.iter().all(|p| parse_rtp(&p.payload).is_err()));
        assert!(pkts.iter().all(|p| p.payload.len() <= 1200));
    }

    #[test]
    fn drifting_group_changes_frame_rate() {
        let mut after = TrafficProfile::other();
        after.frame_rate_hz = 50.0;
        after.frame_size_mean_bytes = 9_000.0;
        let plan = SynthPlan::new(1, 20.0)
            .with_group(FlowGroup::drifting(TrafficProfile::other(), after, 10_000_000, 1));
        let (pkts, _) = plan.generate().unwrap();
        let frames = |lo: u64, hi: u64| {
            pkts.iter()
                .filter(|p| p.ts_us >= lo && p.ts_us < hi)
                .filter(|p| parse_rtp(&p.payload).unwrap().marker)
                .count()
        };
        let before = frames(0, 10_000_000);
        let after = frames(10_000_000, 20_000_000);
        assert!((240..=260).contains(&before), "{before}");
        assert!((480..=520).contains(&after), "{after}");
    }

    #[test]
    fn invalid_profiles_are_rejected() {
        let mut p = TrafficProfile::cg();
        p.frame_rate_hz = 0.0;
        assert!(matches!(synth_traffic(&p, 1, 1.0, 1), Err(SynthError::InvalidProfile(_))));
        let mut p = TrafficProfile::cg();
        p.mtu_payload_bytes = 63;
        assert!(synth_traffic(&p, 1, 1.0, 1).is_err());
        let mut p = TrafficProfile::cg();
        p.frame_size_std_bytes = -1.0;
        assert!(synth_traffic(&p, 1, 1.0, 1).is_err());
    }
}
