//! UDP datagram counting from classic pcap captures.

use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::ParseError;

const MAGIC_USEC: u32 = 0xa1b2_c3d4;
const MAGIC_NSEC: u32 = 0xa1b2_3c4d;
const LINKTYPE_ETHERNET: u32 = 1;
const LINKTYPE_RAW_IP: u32 = 101;

/// One endpoint of a UDP flow; datagrams are counted per direction relative
/// to this endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EndpointFilter {
    pub addr: Ipv4Addr,
    pub port: u16,
}

/// Datagram and UDP payload byte counts per direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DatagramCounts {
    /// Datagrams sent by the filter endpoint.
    pub sent_datagrams: u64,
    pub sent_bytes: u64,
    /// Datagrams addressed to the filter endpoint.
    pub received_datagrams: u64,
    pub received_bytes: u64,
    /// Non-IP or non-UDP frames, and frames too short to decode.
    pub skipped_frames: u64,
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    swapped: bool,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        if end > self.data.len() {
            return None;
        }
        let slice = &self.data[self.pos..end];
        self.pos = end;
        Some(slice)
    }

    fn u32(&mut self) -> Option<u32> {
        let b: [u8; 4] = self.take(4)?.try_into().ok()?;
        Some(if self.swapped {
            u32::from_le_bytes(b)
        } else {
            u32::from_be_bytes(b)
        })
    }
}

fn be16(b: &[u8], off: usize) -> Option<u16> {
    Some(u16::from_be_bytes([*b.get(off)?, *b.get(off + 1)?]))
}

struct UdpDatagram {
    src: (Ipv4Addr, u16),
    dst: (Ipv4Addr, u16),
    payload_len: u64,
}

fn decode_ipv4_udp(packet: &[u8]) -> Option<UdpDatagram> {
    let version_ihl = *packet.first()?;
    if version_ihl >> 4 != 4 {
        return None;
    }
    let ihl = ((version_ihl & 0x0f) as usize) * 4;
    if ihl < 20 || packet.len() < ihl + 8 {
        return None;
    }
    if *packet.get(9)? != 17 {
        return None; // not UDP
    }
    let src = Ipv4Addr::new(packet[12], packet[13], packet[14], packet[15]);
    let dst = Ipv4Addr::new(packet[16], packet[17], packet[18], packet[19]);
    let udp = &packet[ihl..];
    let sport = be16(udp, 0)?;
    let dport = be16(udp, 2)?;
    let udp_len = be16(udp, 4)? as u64;
    let payload_len = udp_len.saturating_sub(8);
    Some(UdpDatagram {
        src: (src, sport),
        dst: (dst, dport),
        payload_len,
    })
}

/// Count UDP datagrams in a pcap capture, split into directions by matching
/// `filter` against the source or destination endpoint. Datagrams touching
/// neither side of the filter are excluded; malformed or non-UDP frames are
/// skipped and counted.
pub fn count_datagrams(capture: &[u8], filter: EndpointFilter) -> Result<DatagramCounts, ParseError> {
    let mut reader = Reader {
        data: capture,
        pos: 0,
        swapped: false,
    };
    let magic_bytes: [u8; 4] = reader
        .take(4)
        .ok_or_else(|| ParseError::BadPcapHeader("shorter than magic number".into()))?
        .try_into()
        .unwrap();
    let magic_be = u32::from_be_bytes(magic_bytes);
    let magic_le = u32::from_le_bytes(magic_bytes);
    if magic_be == MAGIC_USEC || magic_be == MAGIC_NSEC {
        reader.swapped = false;
    } else if magic_le == MAGIC_USEC || magic_le == MAGIC_NSEC {
        reader.swapped = true;
    } else {
        return Err(ParseError::BadPcapHeader(format!(
            "unknown magic 0x{magic_be:08x}"
        )));
    }
    // version(4) + thiszone(4) + sigfigs(4) + snaplen(4)
    reader
        .take(16)
        .ok_or_else(|| ParseError::BadPcapHeader("truncated global header".into()))?;
    let linktype = reader
        .u32()
        .ok_or_else(|| ParseError::BadPcapHeader("missing link type".into()))?;
    if linktype != LINKTYPE_ETHERNET && linktype != LINKTYPE_RAW_IP {
        return Err(ParseError::BadPcapHeader(format!(
            "unsupported link type {linktype}"
        )));
    }

    let mut counts = DatagramCounts::default();
    loop {
        // ts_sec, ts_usec
        if reader.take(8).is_none() {
            break;
        }
        let Some(incl_len) = reader.u32() else { break };
        let Some(_orig_len) = reader.u32() else { break };
        let Some(frame) = reader.take(incl_len as usize) else {
            // Truncated final record; frames so far stand.
            counts.skipped_frames += 1;
            break;
        };
        let ip_packet = if linktype == LINKTYPE_ETHERNET {
            if frame.len() < 14 || be16(frame, 12) != Some(0x0800) {
                counts.skipped_frames += 1;
                continue;
            }
            &frame[14..]
        } else {
            frame
        };
        match decode_ipv4_udp(ip_packet) {
            Some(dgram) => {
                let endpoint = (filter.addr, filter.port);
                if dgram.src == endpoint {
                    counts.sent_datagrams += 1;
                    counts.sent_bytes += dgram.payload_len;
                } else if dgram.dst == endpoint {
                    counts.received_datagrams += 1;
                    counts.received_bytes += dgram.payload_len;
                }
            }
            None => counts.skipped_frames += 1,
        }
    }
    Ok(counts)
}

/// Build a classic pcap capture from UDP datagrams (fixture generator).
pub fn build_pcap(datagrams: &[((Ipv4Addr, u16), (Ipv4Addr, u16), &[u8])]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC_USEC.to_be_bytes());
    out.extend_from_slice(&2u16.to_be_bytes()); // major
    out.extend_from_slice(&4u16.to_be_bytes()); // minor
    out.extend_from_slice(&0u32.to_be_bytes()); // thiszone
    out.extend_from_slice(&0u32.to_be_bytes()); // sigfigs
    out.extend_from_slice(&65535u32.to_be_bytes()); // snaplen
    out.extend_from_slice(&LINKTYPE_ETHERNET.to_be_bytes());
    for (i, (src, dst, payload)) in datagrams.iter().enumerate() {
        let udp_len = 8 + payload.len();
        let ip_len = 20 + udp_len;
        let frame_len = 14 + ip_len;
        out.extend_from_slice(&(i as u32).to_be_bytes()); // ts_sec
        out.extend_from_slice(&0u32.to_be_bytes()); // ts_usec
        out.extend_from_slice(&(frame_len as u32).to_be_bytes());
        out.extend_from_slice(&(frame_len as u32).to_be_bytes());
        // Ethernet
        out.extend_from_slice(&[0u8; 12]);
        out.extend_from_slice(&0x0800u16.to_be_bytes());
        // IPv4
        out.push(0x45);
        out.push(0);
        out.extend_from_slice(&(ip_len as u16).to_be_bytes());
        out.extend_from_slice(&[0, 0, 0, 0]); // id, flags+frag
        out.push(64); // ttl
        out.push(17); // UDP
        out.extend_from_slice(&[0, 0]); // checksum (unchecked)
        out.extend_from_slice(&src.0.octets());
        out.extend_from_slice(&dst.0.octets());
        // UDP
        out.extend_from_slice(&src.1.to_be_bytes());
        out.extend_from_slice(&dst.1.to_be_bytes());
        out.extend_from_slice(&(udp_len as u16).to_be_bytes());
        out.extend_from_slice(&[0, 0]); // checksum
        out.extend_from_slice(payload);
    }
    out
}
