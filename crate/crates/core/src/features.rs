//! Per-flow window statistics over packet size (PS), inter-packet interval
//! (IPI), frame size (FS) and inter-frame interval (IFI).
//!
//! Each flow emits one [`FeatureVector`] per `window` packets. Windows do not
//! overlap. Frames are RTP timestamp groups, closed by a timestamp change or
//! by the marker bit; packets that do not parse as RTP are frames of their
//! own. Frame state carries across window boundaries, so a frame is counted
//! in the window during which it completes. Means and population standard
//! deviations of an empty sample are 0.

use std::collections::HashMap;
use std::io::Write;
use std::thread;

use crate::model::{parse_rtp, FlowKey, Packet};

pub const N_FEATURES: usize = 8;

/// Column order of [`FeatureVector::values`].
pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "mean_ps", "std_ps", "mean_ipi", "std_ipi", "mean_fs", "std_fs", "mean_ifi", "std_ifi",
];

pub const DEFAULT_WINDOW: usize = 30;
pub const DEFAULT_IDLE_TIMEOUT_US: u64 = 30_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub flow: FlowKey,
    /// 0-based, per flow.
    pub window_index: u64,
    pub values: [f64; N_FEATURES],
    /// Timestamp of the packet that completed the window.
    pub ts_us: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExtractorConfig {
    pub window: usize,
    pub idle_timeout_us: u64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            idle_timeout_us: DEFAULT_IDLE_TIMEOUT_US,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct OpenFrame {
    rtp_ts: u32,
    bytes: u64,
    first_ts_us: u64,
}

#[derive(Debug, Clone)]
struct FlowState {
    packets_in_window: usize,
    last_pkt_ts_us: Option<u64>,
    ps: Vec<f64>,
    ipi: Vec<f64>,
    current_frame: Option<OpenFrame>,
    fs: Vec<f64>,
    ifi: Vec<f64>,
    last_frame_start_us: Option<u64>,
    last_seen_ts_us: u64,
    next_window_index: u64,
}

impl FlowState {
    fn new(window: usize, now_us: u64) -> Self {
        Self {
            packets_in_window: 0,
            last_pkt_ts_us: None,
            ps: Vec::with_capacity(window),
            ipi: Vec::with_capacity(window),
            current_frame: None,
            fs: Vec::new(),
            ifi: Vec::new(),
            last_frame_start_us: None,
            last_seen_ts_us: now_us,
            next_window_index: 0,
        }
    }

    fn complete_frame(&mut self, bytes: u64, first_ts_us: u64) {
        self.fs.push(bytes as f64);
        if let Some(prev) = self.last_frame_start_us {
            self.ifi.push(first_ts_us.saturating_sub(prev) as f64);
        }
        self.last_frame_start_us = Some(first_ts_us);
    }
}

/// Mean and population standard deviation; `(0, 0)` for an empty sample.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-flow state table. All packets of one flow must go through the same
/// extractor.
#[derive(Debug, Clone, Default)]
pub struct FeatureExtractor {
    config: ExtractorConfig,
    flows: HashMap<FlowKey, FlowState>,
}

impl FeatureExtractor {
    pub fn new(config: ExtractorConfig) -> Self {
        assert!(config.window >= 1, "window must hold at least one packet");
        Self {
            config,
            flows: HashMap::new(),
        }
    }

    pub fn config(&self) -> ExtractorConfig {
        self.config
    }

    pub fn active_flows(&self) -> usize {
        self.flows.len()
    }

    /// Feeds one packet; returns a vector when it completes the flow's
    /// current window.
    ///
    /// A flow idle for longer than the configured timeout restarts from
    /// window 0 even if [`flush_expired`](Self::flush_expired) has not run
    /// yet, so output does not depend on flush timing.
    pub fn observe(&mut self, p: &Packet, now_us: u64) -> Option<FeatureVector> {
        let key = p.flow_key();
        let window = self.config.window;
        let timeout = self.config.idle_timeout_us;
        let st = self
            .flows
            .entry(key)
            .and_modify(|st| {
                if now_us.saturating_sub(st.last_seen_ts_us) > timeout {
                    *st = FlowState::new(window, now_us);
                }
            })
            .or_insert_with(|| FlowState::new(window, now_us));
        st.last_seen_ts_us = st.last_seen_ts_us.max(now_us);

        let ps = p.payload.len() as u64;
        st.ps.push(ps as f64);
        if let Some(last) = st.last_pkt_ts_us {
            st.ipi.push(p.ts_us.saturating_sub(last) as f64);
        }
        st.last_pkt_ts_us = Some(p.ts_us);

        match parse_rtp(&p.payload) {
            Ok(h) => {
                if let Some(f) = st.current_frame {
                    if f.rtp_ts != h.timestamp {
                        st.current_frame = None;
                        st.complete_frame(f.bytes, f.first_ts_us);
                    }
                }
                let f = st.current_frame.get_or_insert(OpenFrame {
                    rtp_ts: h.timestamp,
                    bytes: 0,
                    first_ts_us: p.ts_us,
                });
                f.bytes += ps;
                if h.marker {
                    let f = st.current_frame.take().expect("frame just opened");
                    st.complete_frame(f.bytes, f.first_ts_us);
                }
            }
            Err(_) => {
                if let Some(f) = st.current_frame.take() {
                    st.complete_frame(f.bytes, f.first_ts_us);
                }
                st.complete_frame(ps, p.ts_us);
            }
        }

        st.packets_in_window += 1;
        if st.packets_in_window < window {
            return None;
        }
        let (mean_ps, std_ps) = mean_std(&st.ps);
        let (mean_ipi, std_ipi) = mean_std(&st.ipi);
        let (mean_fs, std_fs) = mean_std(&st.fs);
        let (mean_ifi, std_ifi) = mean_std(&st.ifi);
        let fv = FeatureVector {
            flow: key,
            window_index: st.next_window_index,
            values: [mean_ps, std_ps, mean_ipi, std_ipi, mean_fs, std_fs, mean_ifi, std_ifi],
            ts_us: p.ts_us,
        };
        st.next_window_index += 1;
        st.packets_in_window = 0;
        st.ps.clear();
        st.ipi.clear();
        st.fs.clear();
        st.ifi.clear();
        Some(fv)
    }

    /// Drops flows idle for more than `idle_timeout_us`; their partial
    /// windows are discarded. Returns the evicted keys in ascending order.
    pub fn flush_expired(&mut self, now_us: u64, idle_timeout_us: u64) -> Vec<FlowKey> {
        let mut evicted: Vec<FlowKey> = self
            .flows
            .iter()
            .filter(|(_, st)| now_us.saturating_sub(st.last_seen_ts_us) > idle_timeout_us)
            .map(|(k, _)| *k)
            .collect();
        evicted.sort_unstable();
        for k in &evicted {
            self.flows.remove(k);
        }
        evicted
    }
}

/// Runs one extractor over `packets` (using each packet's timestamp as the
/// clock) and returns every emitted vector in emission order.
pub fn extract_all<'a>(packets: impl IntoIterator<Item = &'a Packet>, config: ExtractorConfig) -> Vec<FeatureVector> {
    let mut ex = FeatureExtractor::new(config);
    packets.into_iter().filter_map(|p| ex.observe(p, p.ts_us)).collect()
}

/// Same output as [`extract_all`], computed by `workers` threads that each
/// own the flows whose [`FlowKey::shard_hash`] maps to them.
pub fn extract_sharded(packets: &[Packet], config: ExtractorConfig, workers: usize) -> Vec<FeatureVector> {
    let workers = workers.max(1);
    let mut shards: Vec<Vec<(usize, &Packet)>> = vec![Vec::new(); workers];
    for (i, p) in packets.iter().enumerate() {
        shards[(p.flow_key().shard_hash() % workers as u64) as usize].push((i, p));
    }
    let mut tagged: Vec<(usize, FeatureVector)> = thread::scope(|s| {
        let handles: Vec<_> = shards
            .into_iter()
            .map(|shard| {
                s.spawn(move || {
                    let mut ex = FeatureExtractor::new(config);
                    shard
                        .into_iter()
                        .filter_map(|(i, p)| ex.observe(p, p.ts_us).map(|fv| (i, fv)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("extractor worker panicked"))
            .collect()
    });
    tagged.sort_unstable_by_key(|(i, _)| *i);
    tagged.into_iter().map(|(_, fv)| fv).collect()
}

pub const FEATURE_CSV_HEADER: [&str; 14] = [
    "src_ip",
    "src_port",
    "dst_ip",
    "dst_port",
    "proto",
    "window_index",
    "mean_ps",
    "std_ps",
    "mean_ipi",
    "std_ipi",
    "mean_fs",
    "std_fs",
    "mean_ifi",
    "std_ifi",
];

pub(crate) fn feature_record(fv: &FeatureVector) -> Vec<String> {
    let k = &fv.flow;
    let mut rec = vec![
        k.src_ip.to_string(),
        k.src_port.to_string(),
        k.dst_ip.to_string(),
        k.dst_port.to_string(),
        k.proto.to_string(),
        fv.window_index.to_string(),
    ];
    rec.extend(fv.values.iter().map(|v| v.to_string()));
    rec
}

/// Writes the feature dump CSV (`src_ip,...,window_index,mean_ps,...,std_ifi`).
pub fn write_features_csv<W: Write>(w: W, vectors: &[FeatureVector]) -> csv::Result<()> {
    let mut wr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    wr.write_record(FEATURE_CSV_HEADER)?;
    for fv in vectors {
        wr.write_record(feature_record(fv))?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RtpHeader;
    use std::net::Ipv4Addr;

    fn raw(ts_us: u64, size: usize, src_last: u8) -> Packet {
        Packet {
            ts_us,
            src_ip: Ipv4Addr::new(10, 0, 0, src_last),
            dst_ip: Ipv4Addr::new(10, 0, 1, 10),
            src_port: 5004,
            dst_port: 4000,
            proto: 17,
            payload: vec![0; size],
            wire_len: (size + 42) as u32,
        }
    }

    fn rtp(ts_us: u64, size: usize, rtp_ts: u32, marker: bool) -> Packet {
        let mut p = raw(ts_us, size, 1);
        p.payload[..12].copy_from_slice(&RtpHeader::new(marker, 96, 0, rtp_ts, 1).encode());
        p
    }

    fn cfg(window: usize) -> ExtractorConfig {
        ExtractorConfig {
            window,
            idle_timeout_us: DEFAULT_IDLE_TIMEOUT_US,
        }
    }

    #[test]
    fn hand_computed_non_rtp_window() {
        let mut ex = FeatureExtractor::new(cfg(4));
        let sizes = [100, 200, 100, 200];
        let mut out = Vec::new();
        for (i, s) in sizes.iter().enumerate() {
            let p = raw(i as u64 * 1000, *s, 1);
            out.extend(ex.observe(&p, p.ts_us));
        }
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].values, [150.0, 50.0, 1000.0, 0.0, 150.0, 50.0, 1000.0, 0.0]);
        assert_eq!(out[0].window_index, 0);
        assert_eq!(out[0].ts_us, 3000);
    }

    #[test]
    fn incomplete_window_emits_nothing() {
        let mut ex = FeatureExtractor::new(cfg(4));
        for i in 0..3 {
            let p = raw(i * 10, 100, 1);
            assert!(ex.observe(&p, p.ts_us).is_none());
        }
    }

    #[test]
    fn rtp_timestamp_group_forms_one_frame() {
        let mut ex = FeatureExtractor::new(cfg(2));
        ex.observe(&rtp(0, 500, 7, false), 0);
        let fv = ex.observe(&rtp(100, 300, 7, true), 100).unwrap();
        // one frame of 800 bytes, no IFI yet
        assert_eq!(fv.values[4], 800.0);
        assert_eq!(fv.values[5], 0.0);
        assert_eq!(fv.values[6], 0.0);
        assert_eq!(fv.values[0], 400.0);
        assert_eq!(fv.values[2], 100.0);
    }

    #[test]
    fn timestamp_change_closes_frame_and_spans_windows() {
        // frames: {0,1} ts A no marker, closed by packet 2 (ts B); packet 3
        // closes B with a marker.
        let mut ex = FeatureExtractor::new(cfg(2));
        assert!(ex.observe(&rtp(0, 100, 1, false), 0).is_none());
        let w0 = ex.observe(&rtp(10, 100, 1, false), 10).unwrap();
        assert_eq!(&w0.values[4..], &[0.0; 4], "frame A still open");
        assert!(ex.observe(&rtp(1000, 50, 2, false), 1000).is_none());
        let w1 = ex.observe(&rtp(1010, 50, 2, true), 1010).unwrap();
        // frames A (200 B, start 0) and B (100 B, start 1000) both complete in window 1
        assert_eq!(w1.values[4], 150.0);
        assert_eq!(w1.values[5], 50.0);
        assert_eq!(w1.values[6], 1000.0);
        assert_eq!(w1.values[7], 0.0);
        assert_eq!(w1.window_index, 1);
    }

    #[test]
    fn k_windows_have_consecutive_indices() {
        let mut ex = FeatureExtractor::new(cfg(5));
        let out: Vec<_> = (0..23).filter_map(|i| ex.observe(&raw(i * 7, 10 + i as usize, 1), i * 7)).collect();
        assert_eq!(out.iter().map(|f| f.window_index).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn constant_inputs_have_zero_std() {
        let mut ex = FeatureExtractor::new(cfg(6));
        let fv = (0..6).find_map(|i| ex.observe(&raw(i * 500, 300, 1), i * 500)).unwrap();
        assert_eq!(fv.values, [300.0, 0.0, 500.0, 0.0, 300.0, 0.0, 500.0, 0.0]);
    }

    #[test]
    fn eviction_semantics() {
        let mut ex = FeatureExtractor::new(cfg(2));
        assert!(ex.flush_expired(0, 30_000_000).is_empty());
        ex.observe(&raw(0, 10, 1), 0);
        ex.observe(&raw(0, 10, 2), 0);
        ex.observe(&raw(2_000_000, 10, 2), 2_000_000);
        assert!(ex.flush_expired(31_000_000, 30_000_000).len() == 1);
        assert_eq!(ex.active_flows(), 1, "flow idle 29 s is retained");

        // evicted flow restarts at window 0 and its partial window is gone
        let fv = [raw(31_000_000, 10, 1), raw(31_000_100, 10, 1)]
            .iter()
            .find_map(|p| ex.observe(p, p.ts_us))
            .unwrap();
        assert_eq!(fv.window_index, 0);
        assert_eq!(fv.values[2], 100.0);
    }

    #[test]
    fn stale_flow_restarts_without_flush() {
        let mut a = FeatureExtractor::new(cfg(2));
        let mut b = FeatureExtractor::new(cfg(2));
        let pkts = [raw(0, 10, 1), raw(40_000_000, 10, 1), raw(40_000_500, 10, 1)];
        let out_a: Vec<_> = pkts.iter().filter_map(|p| a.observe(p, p.ts_us)).collect();
        b.observe(&pkts[0], 0);
        b.flush_expired(35_000_000, 30_000_000);
        let out_b: Vec<_> = pkts[1..].iter().filter_map(|p| b.observe(p, p.ts_us)).collect();
        assert_eq!(out_a, out_b);
        assert_eq!(out_a[0].values[2], 500.0);
    }

    #[test]
    fn sharded_matches_single() {
        let pkts: Vec<Packet> = (0..5000u64).map(|i| raw(i * 13, (i % 97) as usize + 20, (i % 11) as u8)).collect();
        let single = extract_all(&pkts, cfg(7));
        assert_eq!(single, extract_sharded(&pkts, cfg(7), 3));
        assert!(!single.is_empty());
    }

    #[test]
    fn csv_dump_header() {
        let fv = FeatureVector {
            flow: raw(0, 1, 1).flow_key(),
            window_index: 2,
            values: [1.5, 0.0, 2.0, 0.25, 3.0, 0.0, 4.0, 0.0],
            ts_us: 0,
        };
        let mut buf = Vec::new();
        write_features_csv(&mut buf, &[fv]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "src_ip,src_port,dst_ip,dst_port,proto,window_index,mean_ps,std_ps,mean_ipi,std_ipi,mean_fs,std_fs,mean_ifi,std_ifi\n\
             10.0.0.1,5004,10.0.1.10,4000,17,2,1.5,0,2,0.25,3,0,4,0\n"
        );
    }
}
