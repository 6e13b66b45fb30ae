//! Shared vocabulary: packets, flow identity, class labels and the RTP header.

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use thiserror::Error;

/// IP protocol number for UDP.
pub const IPPROTO_UDP: u8 = 17;

/// A captured datagram, reduced to what classification needs.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Packet {
    /// Microseconds since the capture epoch.
    pub ts_us: u64,
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub proto: u8,
    /// UDP payload only.
    pub payload: Vec<u8>,
    /// Original frame length on the wire.
    pub wire_len: u32,
}

impl Packet {
    pub fn flow_key(&self) -> FlowKey {
        flow_key(self)
    }

    pub fn is_udp(&self) -> bool {
        self.proto == IPPROTO_UDP
    }
}

/// Direction-sensitive 5-tuple. `A -> B` and `B -> A` are different flows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlowKey {
    pub src_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_ip: Ipv4Addr,
    pub dst_port: u16,
    pub proto: u8,
}

impl FlowKey {
    /// Stable 64-bit hash used for sharding flows across workers. Unlike
    /// `std::hash`, the value is fixed across processes and releases.
    pub fn shard_hash(&self) -> u64 {
        let ips = (u64::from(u32::from(self.src_ip)) << 32) | u64::from(u32::from(self.dst_ip));
        let rest = (u64::from(self.src_port) << 24)
            | (u64::from(self.dst_port) << 8)
            | u64::from(self.proto);
        crate::rng::mix64(crate::rng::mix64(ips) ^ rest)
    }
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{} -> {}:{} ({})",
            self.src_ip, self.src_port, self.dst_ip, self.dst_port, self.proto
        )
    }
}

/// Projects the five identity fields of a packet.
pub fn flow_key(p: &Packet) -> FlowKey {
    FlowKey {
        src_ip: p.src_ip,
        src_port: p.src_port,
        dst_ip: p.dst_ip,
        dst_port: p.dst_port,
        proto: p.proto,
    }
}

/// Traffic class. The derived order `Ar < Cg < Other` is the tie-break order
/// everywhere a vote or argmax needs one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClassLabel {
    Ar = 0,
    Cg = 1,
    Other = 2,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 3] = [ClassLabel::Ar, ClassLabel::Cg, ClassLabel::Other];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Ar => "AR",
            ClassLabel::Cg => "CG",
            ClassLabel::Other => "other",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown class label `{0}` (expected AR, CG or other)")]
pub struct ParseLabelError(pub String);

impl FromStr for ClassLabel {
    type Err = ParseLabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ar" | "0" => Ok(ClassLabel::Ar),
            "cg" | "1" => Ok(ClassLabel::Cg),
            "other" | "2" => Ok(ClassLabel::Other),
            _ => Err(ParseLabelError(s.to_string())),
        }
    }
}

/// Fixed 12-byte RTP header. CSRC lists and extensions are not decoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RtpHeader {
    pub version: u8,
    pub padding: bool,
    pub marker: bool,
    pub payload_type: u8,
    pub seq: u16,
    pub timestamp: u32,
    pub ssrc: u32,
}

pub const RTP_HEADER_LEN: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("payload is not RTP")]
pub struct NotRtp;

/// Decodes the fixed RTP header from the first 12 bytes of a UDP payload.
///
/// Only a length and version gate is applied, so arbitrary binary payloads
/// whose first two bits happen to be `10` will parse.
pub fn parse_rtp(payload: &[u8]) -> Result<RtpHeader, NotRtp> {
    let Some(b) = payload.get(..RTP_HEADER_LEN) else {
        return Err(NotRtp);
    };
    let version = b[0] >> 6;
    if version != 2 {
        return Err(NotRtp);
    }
    Ok(RtpHeader {
        version,
        padding: b[0] & 0x20 != 0,
        marker: b[1] & 0x80 != 0,
        payload_type: b[1] & 0x7f,
        seq: u16::from_be_bytes([b[2], b[3]]),
        timestamp: u32::from_be_bytes([b[4], b[5], b[6], b[7]]),
        ssrc: u32::from_be_bytes([b[8], b[9], b[10], b[11]]),
    })
}

impl RtpHeader {
    pub fn new(marker: bool, payload_type: u8, seq: u16, timestamp: u32, ssrc: u32) -> Self {
        Self {
            version: 2,
            padding: false,
            marker,
            payload_type,
            seq,
            timestamp,
            ssrc,
        }
    }

    pub fn encode(&self) -> [u8; RTP_HEADER_LEN] {
        let mut out = [0u8; RTP_HEADER_LEN];
        out[0] = (self.version << 6) | if self.padding { 0x20 } else { 0 };
        out[1] = (u8::from(self.marker) << 7) | (self.payload_type & 0x7f);
        out[2..4].copy_from_slice(&self.seq.to_be_bytes());
        out[4..8].copy_from_slice(&self.timestamp.to_be_bytes());
        out[8..12].copy_from_slice(&self.ssrc.to_be_bytes());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn packet(src: [u8; 4], sport: u16, dst: [u8; 4], dport: u16) -> Packet {
        Packet {
            ts_us: 0,
            src_ip: src.into(),
            dst_ip: dst.into(),
            src_port: sport,
            dst_port: dport,
            proto: IPPROTO_UDP,
            payload: vec![0; 10],
            wire_len: 52,
        }
    }

    #[test]
    fn flow_key_projects_five_tuple() {
        let p = packet([10, 0, 0, 1], 5004, [10, 0, 1, 10], 4000);
        let k = flow_key(&p);
        assert_eq!(k.src_ip, Ipv4Addr::new(10, 0, 0, 1));
        assert_eq!(k.src_port, 5004);
        assert_eq!(k.dst_ip, Ipv4Addr::new(10, 0, 1, 10));
        assert_eq!(k.dst_port, 4000);
        assert_eq!(k.proto, 17);

        let mut q = p.clone();
        q.ts_us = 99;
        q.payload = vec![1, 2, 3];
        assert_eq!(flow_key(&q), k);

        let rev = packet([10, 0, 1, 10], 4000, [10, 0, 0, 1], 5004);
        assert_ne!(flow_key(&rev), k);
    }

    #[test]
    fn rtp_header_decodes_all_fields() {
        let bytes = [
            0x80, 0xE0, 0x00, 0x07, 0x00, 0x00, 0x03, 0xE8, 0xDE, 0xAD, 0xBE, 0xEF,
        ];
        let h = parse_rtp(&bytes).unwrap();
        assert_eq!(h.version, 2);
        assert!(!h.padding);
        assert!(h.marker);
        assert_eq!(h.payload_type, 96);
        assert_eq!(h.seq, 7);
        assert_eq!(h.timestamp, 1000);
        assert_eq!(h.ssrc, 0xDEAD_BEEF);
        assert_eq!(h.encode(), bytes);
    }

    #[test]
    fn rtp_gates() {
        let mut v1 = [0u8; 12];
        v1[0] = 0x40;
        assert_eq!(parse_rtp(&v1), Err(NotRtp));
        let mut short = [0u8; 11];
        short[0] = 0x80;
        assert_eq!(parse_rtp(&short), Err(NotRtp));
        assert_eq!(parse_rtp(&[]), Err(NotRtp));
    }

    #[test]
    fn label_encoding_round_trips() {
        for l in ClassLabel::ALL {
            assert_eq!(ClassLabel::from_index(l.index()), Some(l));
            assert_eq!(l.as_str().parse::<ClassLabel>().unwrap(), l);
        }
        assert_eq!(ClassLabel::Ar.index(), 0);
        assert_eq!(ClassLabel::Cg.index(), 1);
        assert_eq!(ClassLabel::Other.index(), 2);
        assert!(ClassLabel::Ar < ClassLabel::Cg && ClassLabel::Cg < ClassLabel::Other);
        assert!("video".parse::<ClassLabel>().is_err());
    }

    proptest! {
        #[test]
        fn parse_rtp_only_looks_at_first_twelve_bytes(
            head in proptest::collection::vec(any::<u8>(), 0..24),
            tail in proptest::collection::vec(any::<u8>(), 0..8),
        ) {
            let a = parse_rtp(&head);
            if head.len() < RTP_HEADER_LEN {
                prop_assert!(a.is_err());
            } else {
                let mut extended = head[..RTP_HEADER_LEN].to_vec();
                extended.extend_from_slice(&tail);
                prop_assert_eq!(a, parse_rtp(&extended));
                prop_assert_eq!(a.is_ok(), head[0] >> 6 == 2);
            }
        }

        #[test]
        fn flow_key_is_pure(a in any::<[u8; 4]>(), b in any::<[u8; 4]>(), sp in any::<u16>(), dp in any::<u16>()) {
            let p = packet(a, sp, b, dp);
            prop_assert_eq!(flow_key(&p), flow_key(&p));
            prop_assert_eq!(flow_key(&p).shard_hash(), flow_key(&p.clone()).shard_hash());
        }
    }
}
