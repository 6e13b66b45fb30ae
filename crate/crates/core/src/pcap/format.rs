//! Classic libpcap container with Ethernet / IPv4 / UDP decoding.

use std::net::Ipv4Addr;
use std::path::Path;

use thiserror::Error;

use crate::model::{Packet, IPPROTO_UDP};

pub const PCAP_MAGIC: u32 = 0xA1B2_C3D4;
pub const PCAP_MAGIC_SWAPPED: u32 = 0xD4C3_B2A1;
pub const LINKTYPE_ETHERNET: u32 = 1;
pub const SNAPLEN: u32 = 65535;

const GLOBAL_HEADER_LEN: usize = 24;
const RECORD_HEADER_LEN: usize = 16;
const ETH_HEADER_LEN: usize = 14;
const IPV4_HEADER_LEN: usize = 20;
const UDP_HEADER_LEN: usize = 8;
/// Ethernet + minimal IPv4 + UDP headers prepended by [`write_pcap`].
pub const ENCAP_OVERHEAD: usize = ETH_HEADER_LEN + IPV4_HEADER_LEN + UDP_HEADER_LEN;

const ETHERTYPE_IPV4: u16 = 0x0800;
const ETHERTYPE_IPV6: u16 = 0x86DD;

const SRC_MAC: [u8; 6] = [0x02, 0, 0, 0, 0, 0x01];
const DST_MAC: [u8; 6] = [0x02, 0, 0, 0, 0, 0x02];

#[derive(Debug, Error)]
pub enum PcapError {
    #[error("bad pcap magic {0:#010x}")]
    BadMagic(u32),
    #[error("file shorter than the 24-byte global header")]
    TruncatedHeader,
    #[error("record at offset {offset} runs past end of file")]
    TruncatedRecord { offset: usize },
    #[error("unsupported link type {0} (only Ethernet is handled)")]
    UnsupportedLinkType(u32),
    #[error("record at offset {offset} claims {incl_len} captured bytes (snaplen {snaplen})")]
    OversizedRecord {
        offset: usize,
        incl_len: u32,
        snaplen: u32,
    },
    #[error("packet {index} cannot be encoded: {reason}")]
    NotEncodable { index: usize, reason: &'static str },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Records skipped while decoding, by cause.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestDrops {
    /// IPv4 datagrams carrying something other than UDP.
    pub non_udp: u64,
    pub ipv6: u64,
    /// Other ethertypes (ARP, VLAN-tagged frames, ...).
    pub unsupported: u64,
    /// Short or inconsistent headers, and non-first IP fragments.
    pub malformed: u64,
}

impl IngestDrops {
    pub fn total(&self) -> u64 {
        self.non_udp + self.ipv6 + self.unsupported + self.malformed
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Capture {
    pub link_type: u32,
    pub packets: Vec<Packet>,
    pub drops: IngestDrops,
}

impl Capture {
    /// Number of records in the file, decoded or not.
    pub fn records(&self) -> u64 {
        self.packets.len() as u64 + self.drops.total()
    }
}

#[derive(Clone, Copy)]
enum Endian {
    Little,
    Big,
}

impl Endian {
    fn u32(self, b: &[u8]) -> u32 {
        let a = [b[0], b[1], b[2], b[3]];
        match self {
            Endian::Little => u32::from_le_bytes(a),
            Endian::Big => u32::from_be_bytes(a),
        }
    }
}

pub fn read_pcap(bytes: &[u8]) -> Result<Capture, PcapError> {
    if bytes.len() < 4 {
        return Err(PcapError::TruncatedHeader);
    }
    let magic = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    let endian = match magic {
        PCAP_MAGIC => Endian::Little,
        PCAP_MAGIC_SWAPPED => Endian::Big,
        other => return Err(PcapError::BadMagic(other)),
    };
    if bytes.len() < GLOBAL_HEADER_LEN {
        return Err(PcapError::TruncatedHeader);
    }
    let snaplen = endian.u32(&bytes[16..20]);
    let link_type = endian.u32(&bytes[20..24]);
    if link_type != LINKTYPE_ETHERNET {
        return Err(PcapError::UnsupportedLinkType(link_type));
    }

    let mut packets = Vec::new();
    let mut drops = IngestDrops::default();
    let mut off = GLOBAL_HEADER_LEN;
    while off < bytes.len() {
        let Some(hdr) = bytes.get(off..off + RECORD_HEADER_LEN) else {
            return Err(PcapError::TruncatedRecord { offset: off });
        };
        let ts_sec = endian.u32(&hdr[0..4]);
        let ts_usec = endian.u32(&hdr[4..8]);
        let incl_len = endian.u32(&hdr[8..12]);
        let orig_len = endian.u32(&hdr[12..16]);
        if incl_len > snaplen.max(SNAPLEN) {
            return Err(PcapError::OversizedRecord {
                offset: off,
                incl_len,
                snaplen,
            });
        }
        let start = off + RECORD_HEADER_LEN;
        let Some(frame) = bytes.get(start..start + incl_len as usize) else {
            return Err(PcapError::TruncatedRecord { offset: off });
        };
        let ts_us = u64::from(ts_sec) * 1_000_000 + u64::from(ts_usec);
        match decode_ethernet(frame, ts_us, orig_len) {
            Ok(p) => packets.push(p),
            Err(Skip::NonUdp) => drops.non_udp += 1,
            Err(Skip::Ipv6) => drops.ipv6 += 1,
            Err(Skip::Unsupported) => drops.unsupported += 1,
            Err(Skip::Malformed) => drops.malformed += 1,
        }
        off = start + incl_len as usize;
    }
    Ok(Capture {
        link_type,
        packets,
        drops,
    })
}

enum Skip {
    NonUdp,
    Ipv6,
    Unsupported,
    Malformed,
}

fn decode_ethernet(frame: &[u8], ts_us: u64, orig_len: u32) -> Result<Packet, Skip> {
    if frame.len() < ETH_HEADER_LEN {
        return Err(Skip::Malformed);
    }
    match u16::from_be_bytes([frame[12], frame[13]]) {
        ETHERTYPE_IPV4 => {}
        ETHERTYPE_IPV6 => return Err(Skip::Ipv6),
        _ => return Err(Skip::Unsupported),
    }
    let ip = &frame[ETH_HEADER_LEN..];
    if ip.len() < IPV4_HEADER_LEN || ip[0] >> 4 != 4 {
        return Err(Skip::Malformed);
    }
    let ihl = usize::from(ip[0] & 0x0f) * 4;
    let total_len = usize::from(u16::from_be_bytes([ip[2], ip[3]]));
    if ihl < IPV4_HEADER_LEN || ip.len() < ihl || total_len < ihl {
        return Err(Skip::Malformed);
    }
    let proto = ip[9];
    if proto != IPPROTO_UDP {
        return Err(Skip::NonUdp);
    }
    let frag = u16::from_be_bytes([ip[6], ip[7]]) & 0x1fff;
    if frag != 0 {
        return Err(Skip::Malformed);
    }
    let src_ip = Ipv4Addr::new(ip[12], ip[13], ip[14], ip[15]);
    let dst_ip = Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19]);

    let ip_end = total_len.min(ip.len());
    let udp = &ip[ihl..ip_end];
    if udp.len() < UDP_HEADER_LEN {
        return Err(Skip::Malformed);
    }
    let udp_len = usize::from(u16::from_be_bytes([udp[4], udp[5]]));
    if udp_len < UDP_HEADER_LEN {
        return Err(Skip::Malformed);
    }
    let payload_end = udp_len.min(udp.len());
    Ok(Packet {
        ts_us,
        src_ip,
        dst_ip,
        src_port: u16::from_be_bytes([udp[0], udp[1]]),
        dst_port: u16::from_be_bytes([udp[2], udp[3]]),
        proto,
        payload: udp[UDP_HEADER_LEN..payload_end].to_vec(),
        wire_len: orig_len,
    })
}

fn ipv4_checksum(header: &[u8]) -> u16 {
    let mut sum: u32 = header
        .chunks(2)
        .map(|c| u32::from(u16::from_be_bytes([c[0], c[1]])))
        .sum();
    while sum > 0xffff {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

/// Encodes UDP packets as Ethernet/IPv4/UDP frames in a little-endian
/// classic pcap. `wire_len` is stored as the original length, so it must
/// cover the synthesized headers.
pub fn write_pcap(link_type: u32, packets: &[Packet]) -> Result<Vec<u8>, PcapError> {
    if link_type != LINKTYPE_ETHERNET {
        return Err(PcapError::UnsupportedLinkType(link_type));
    }
    let body: usize = packets
        .iter()
        .map(|p| RECORD_HEADER_LEN + ENCAP_OVERHEAD + p.payload.len())
        .sum();
    let mut out = Vec::with_capacity(GLOBAL_HEADER_LEN + body);
    out.extend_from_slice(&PCAP_MAGIC.to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&4u16.to_le_bytes());
    out.extend_from_slice(&0i32.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&SNAPLEN.to_le_bytes());
    out.extend_from_slice(&link_type.to_le_bytes());

    for (index, p) in packets.iter().enumerate() {
        let not = |reason| PcapError::NotEncodable { index, reason };
        if p.proto != IPPROTO_UDP {
            return Err(not("only UDP packets can be encoded"));
        }
        let frame_len = ENCAP_OVERHEAD + p.payload.len();
        if frame_len > SNAPLEN as usize {
            return Err(not("frame exceeds snaplen"));
        }
        if (p.wire_len as usize) < frame_len {
            return Err(not("wire_len shorter than the encoded frame"));
        }
        let ts_sec = u32::try_from(p.ts_us / 1_000_000).map_err(|_| not("timestamp overflows 32-bit seconds"))?;
        let ts_usec = (p.ts_us % 1_000_000) as u32;

        out.extend_from_slice(&ts_sec.to_le_bytes());
        out.extend_from_slice(&ts_usec.to_le_bytes());
        out.extend_from_slice(&(frame_len as u32).to_le_bytes());
        out.extend_from_slice(&p.wire_len.to_le_bytes());

        out.extend_from_slice(&DST_MAC);
        out.extend_from_slice(&SRC_MAC);
        out.extend_from_slice(&ETHERTYPE_IPV4.to_be_bytes());

        let ip_total = (IPV4_HEADER_LEN + UDP_HEADER_LEN + p.payload.len()) as u16;
        let mut ip = [0u8; IPV4_HEADER_LEN];
        ip[0] = 0x45;
        ip[2..4].copy_from_slice(&ip_total.to_be_bytes());
        ip[6] = 0x40; // don't fragment
        ip[8] = 64;
        ip[9] = p.proto;
        ip[12..16].copy_from_slice(&p.src_ip.octets());
        ip[16..20].copy_from_slice(&p.dst_ip.octets());
        let csum = ipv4_checksum(&ip);
        ip[10..12].copy_from_slice(&csum.to_be_bytes());
        out.extend_from_slice(&ip);

        let udp_len = (UDP_HEADER_LEN + p.payload.len()) as u16;
        out.extend_from_slice(&p.src_port.to_be_bytes());
        out.extend_from_slice(&p.dst_port.to_be_bytes());
        out.extend_from_slice(&udp_len.to_be_bytes());
        out.extend_from_slice(&0u16.to_be_bytes());
        out.extend_from_slice(&p.payload);
    }
    Ok(out)
}

pub fn read_pcap_file(path: impl AsRef<Path>) -> Result<Capture, PcapError> {
    read_pcap(&std::fs::read(path)?)
}

pub fn write_pcap_file(path: impl AsRef<Path>, packets: &[Packet]) -> Result<(), PcapError> {
    std::fs::write(path, write_pcap(LINKTYPE_ETHERNET, packets)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Byte image of a 60-byte Ethernet/IPv4/UDP frame carrying 18 payload
    /// bytes, built field by field without using the writer.
    fn hand_frame() -> Vec<u8> {
        let mut f = Vec::new();
        f.extend_from_slice(&[0xff; 6]);
        f.extend_from_slice(&[0x00, 0x11, 0x22, 0x33, 0x44, 0x55]);
        f.extend_from_slice(&[0x08, 0x00]);
        // IPv4: total length 20 + 8 + 18 = 46
        f.extend_from_slice(&[0x45, 0x00, 0x00, 46, 0x12, 0x34, 0x00, 0x00, 64, 17, 0, 0]);
        f.extend_from_slice(&[10, 0, 0, 1]);
        f.extend_from_slice(&[10, 0, 1, 10]);
        // UDP 5004 -> 4000, length 26
        f.extend_from_slice(&[0x13, 0x8c, 0x0f, 0xa0, 0x00, 26, 0x00, 0x00]);
        f.extend((0..18u8).map(|i| i + 1));
        assert_eq!(f.len(), 60);
        f
    }

    fn hand_file(big_endian: bool, frame: &[u8]) -> Vec<u8> {
        let w = |v: u32| {
            if big_endian {
                v.to_be_bytes()
            } else {
                v.to_le_bytes()
            }
        };
        let w16 = |v: u16| {
            if big_endian {
                v.to_be_bytes()
            } else {
                v.to_le_bytes()
            }
        };
        let mut b = Vec::new();
        b.extend_from_slice(&w(0xA1B2_C3D4));
        b.extend_from_slice(&w16(2));
        b.extend_from_slice(&w16(4));
        b.extend_from_slice(&w(0));
        b.extend_from_slice(&w(0));
        b.extend_from_slice(&w(65535));
        b.extend_from_slice(&w(1));
        b.extend_from_slice(&w(1_700_000_000));
        b.extend_from_slice(&w(250_000));
        b.extend_from_slice(&w(frame.len() as u32));
        b.extend_from_slice(&w(frame.len() as u32));
        b.extend_from_slice(frame);
        b
    }

    fn expected_packet() -> Packet {
        Packet {
            ts_us: 1_700_000_000 * 1_000_000 + 250_000,
            src_ip: Ipv4Addr::new(10, 0, 0, 1),
            dst_ip: Ipv4Addr::new(10, 0, 1, 10),
            src_port: 5004,
            dst_port: 4000,
            proto: 17,
            payload: (1..=18).collect(),
            wire_len: 60,
        }
    }

    #[test]
    fn decodes_hand_built_record() {
        let cap = read_pcap(&hand_file(false, &hand_frame())).unwrap();
        assert_eq!(cap.link_type, 1);
        assert_eq!(cap.packets, vec![expected_packet()]);
        assert_eq!(cap.drops, IngestDrops::default());
    }

    #[test]
    fn decodes_byte_swapped_file() {
        let file = hand_file(true, &hand_frame());
        assert_eq!(&file[..4], &[0xA1, 0xB2, 0xC3, 0xD4]);
        let cap = read_pcap(&file).unwrap();
        assert_eq!(cap.packets, vec![expected_packet()]);
    }

    #[test]
    fn truncated_record_is_an_error() {
        let file = hand_file(false, &hand_frame());
        let cut = &file[..file.len() - 3];
        assert!(matches!(read_pcap(cut), Err(PcapError::TruncatedRecord { offset: 24 })));
        // cut inside the record header too
        assert!(matches!(read_pcap(&file[..30]), Err(PcapError::TruncatedRecord { .. })));
    }

    #[test]
    fn rejects_bad_magic_and_link_type() {
        let mut file = hand_file(false, &hand_frame());
        file[0] = 0;
        assert!(matches!(read_pcap(&file), Err(PcapError::BadMagic(_))));
        let mut file = hand_file(false, &hand_frame());
        file[20] = 101;
        assert!(matches!(read_pcap(&file), Err(PcapError::UnsupportedLinkType(101))));
        assert!(matches!(read_pcap(&[0xd4, 0xc3]), Err(PcapError::TruncatedHeader)));
    }

    #[test]
    fn counts_skipped_records() {
        let mut tcp = hand_frame();
        tcp[14 + 9] = 6;
        let mut v6 = hand_frame();
        v6[12] = 0x86;
        v6[13] = 0xdd;
        let mut arp = hand_frame();
        arp[12] = 0x08;
        arp[13] = 0x06;
        let mut file = hand_file(false, &hand_frame());
        for f in [&tcp, &v6, &arp, &hand_frame()[..20].to_vec()] {
            let rec = hand_file(false, f);
            file.extend_from_slice(&rec[24..]);
        }
        let cap = read_pcap(&file).unwrap();
        assert_eq!(cap.packets.len(), 1);
        assert_eq!(
            cap.drops,
            IngestDrops {
                non_udp: 1,
                ipv6: 1,
                unsupported: 1,
                malformed: 1
            }
        );
        assert_eq!(cap.records(), 5);
    }

    #[test]
    fn empty_list_writes_bare_header() {
        let bytes = write_pcap(LINKTYPE_ETHERNET, &[]).unwrap();
        assert_eq!(bytes.len(), 24);
        assert_eq!(&bytes[..4], &[0xD4, 0xC3, 0xB2, 0xA1]);
        assert!(read_pcap(&bytes).unwrap().packets.is_empty());
    }

    #[test]
    fn single_packet_round_trips_and_checksum_verifies() {
        let p = expected_packet();
        let bytes = write_pcap(LINKTYPE_ETHERNET, std::slice::from_ref(&p)).unwrap();
        let ip = &bytes[24 + 16 + 14..24 + 16 + 34];
        assert_eq!(ipv4_checksum(ip), 0);
        assert_eq!(read_pcap(&bytes).unwrap().packets, vec![p]);
    }

    #[test]
    fn writer_rejects_unencodable_packets() {
        let mut p = expected_packet();
        p.wire_len = 10;
        assert!(matches!(
            write_pcap(LINKTYPE_ETHERNET, &[p.clone()]),
            Err(PcapError::NotEncodable { index: 0, .. })
        ));
        p.wire_len = 60;
        p.proto = 6;
        assert!(write_pcap(LINKTYPE_ETHERNET, &[p]).is_err());
    }
}
