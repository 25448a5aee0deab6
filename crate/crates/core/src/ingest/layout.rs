//! Header boundary detection for Ethernet frames.

use std::fmt;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};

use super::pcap::LINKTYPE_ETHERNET;
use super::{IngestError, RawPacket};

const ETH_HEADER_LEN: usize = 14;
const VLAN_TAG_LEN: usize = 4;
const ETHERTYPE_IPV4: u16 = 0x0800;
const ETHERTYPE_IPV6: u16 = 0x86dd;
const ETHERTYPE_VLAN: u16 = 0x8100;
const ETHERTYPE_QINQ: u16 = 0x88a8;
const IPV6_HEADER_LEN: usize = 40;

pub const PROTO_ICMP: u8 = 1;
pub const PROTO_TCP: u8 = 6;
pub const PROTO_UDP: u8 = 17;
pub const PROTO_ICMPV6: u8 = 58;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Span {
    pub offset: usize,
    pub len: usize,
}

impl Span {
    pub fn end(&self) -> usize {
        self.offset + self.len
    }
}

/// Byte spans of the link, network and transport headers of one frame.
///
/// Present layers are contiguous starting at offset 0. A layer is `None`
/// when the frame does not carry it or the parser does not understand it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HeaderLayout {
    pub link: Span,
    pub network: Option<Span>,
    pub transport: Option<Span>,
}

impl HeaderLayout {
    pub fn eth_off(&self) -> usize {
        self.link.offset
    }

    pub fn eth_len(&self) -> usize {
        self.link.len
    }

    pub fn net_off(&self) -> Option<usize> {
        self.network.map(|s| s.offset)
    }

    pub fn trans_off(&self) -> Option<usize> {
        self.transport.map(|s| s.offset)
    }

    /// First payload byte; only defined once a transport header was parsed.
    pub fn payload_off(&self) -> Option<usize> {
        self.transport.map(|s| s.end())
    }

    /// End of the last parsed header.
    pub fn deepest_boundary(&self) -> usize {
        self.transport
            .or(self.network)
            .map(|s| s.end())
            .unwrap_or(self.link.end())
    }

    /// True when link, network and transport headers were all found.
    pub fn is_complete(&self) -> bool {
        self.network.is_some() && self.transport.is_some()
    }
}

fn be16(b: &[u8], at: usize) -> u16 {
    u16::from_be_bytes([b[at], b[at + 1]])
}

fn malformed(reason: &'static str) -> IngestError {
    IngestError::MalformedHeader { reason }
}

/// Locates header boundaries in an Ethernet frame.
///
/// VLAN tags count as link-header bytes. IPv6 extension headers are left in
/// the payload. Non-initial IPv4 fragments have no transport layer.
pub fn parse_layout(pkt: &RawPacket) -> Result<HeaderLayout, IngestError> {
    if pkt.link_type != LINKTYPE_ETHERNET {
        return Err(IngestError::UnsupportedLinkType(pkt.link_type));
    }
    parse_ethernet(&pkt.data)
}

pub fn parse_ethernet(data: &[u8]) -> Result<HeaderLayout, IngestError> {
    if data.len() < ETH_HEADER_LEN {
        return Err(malformed("frame shorter than an Ethernet header"));
    }
    let mut eth_len = ETH_HEADER_LEN;
    let mut ethertype = be16(data, 12);
    while ethertype == ETHERTYPE_VLAN || ethertype == ETHERTYPE_QINQ {
        if data.len() < eth_len + VLAN_TAG_LEN {
            return Err(malformed("VLAN tag exceeds captured bytes"));
        }
        ethertype = be16(data, eth_len + 2);
        eth_len += VLAN_TAG_LEN;
    }
    let mut layout = HeaderLayout {
        link: Span {
            offset: 0,
            len: eth_len,
        },
        network: None,
        transport: None,
    };

    let net_off = eth_len;
    let (net_len, proto, first_fragment) = match ethertype {
        ETHERTYPE_IPV4 => {
            if data.len() < net_off + 20 {
                return Err(malformed("IPv4 header exceeds captured bytes"));
            }
            let vihl = data[net_off];
            if vihl >> 4 != 4 {
                return Err(malformed("IPv4 version field is not 4"));
            }
            let ihl = (vihl & 0x0f) as usize;
            if ihl < 5 {
                return Err(malformed("IPv4 IHL below 5"));
            }
            let len = ihl * 4;
            if data.len() < net_off + len {
                return Err(malformed("IPv4 options exceed captured bytes"));
            }
            let frag_offset = be16(data, net_off + 6) & 0x1fff;
            (len, data[net_off + 9], frag_offset == 0)
        }
        ETHERTYPE_IPV6 => {
            if data.len() < net_off + IPV6_HEADER_LEN {
                return Err(malformed("IPv6 header exceeds captured bytes"));
            }
            if data[net_off] >> 4 != 6 {
                return Err(malformed("IPv6 version field is not 6"));
            }
            (IPV6_HEADER_LEN, data[net_off + 6], true)
        }
        _ => return Ok(layout),
    };
    layout.network = Some(Span {
        offset: net_off,
        len: net_len,
    });
    if !first_fragment {
        return Ok(layout);
    }

    let trans_off = net_off + net_len;
    let trans_len = match proto {
        PROTO_TCP => {
            if data.len() < trans_off + 20 {
                return Err(malformed("TCP header exceeds captured bytes"));
            }
            let data_offset = (data[trans_off + 12] >> 4) as usize;
            if data_offset < 5 {
                return Err(malformed("TCP data offset below 5"));
            }
            data_offset * 4
        }
        PROTO_UDP | PROTO_ICMP | PROTO_ICMPV6 => 8,
        _ => return Ok(layout),
    };
    if data.len() < trans_off + trans_len {
        return Err(malformed("transport header exceeds captured bytes"));
    }
    layout.transport = Some(Span {
        offset: trans_off,
        len: trans_len,
    });
    Ok(layout)
}

/// Unidirectional traffic identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FiveTuple {
    pub src_ip: IpAddr,
    pub dst_ip: IpAddr,
    pub src_port: u16,
    pub dst_port: u16,
    pub proto: u8,
}

impl FiveTuple {
    pub fn reversed(&self) -> FiveTuple {
        FiveTuple {
            src_ip: self.dst_ip,
            dst_ip: self.src_ip,
            src_port: self.dst_port,
            dst_port: self.src_port,
            proto: self.proto,
        }
    }
}

pub(crate) struct Endpoint(pub IpAddr, pub u16);

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            IpAddr::V4(a) => write!(f, "{a}:{}", self.1),
            IpAddr::V6(a) => write!(f, "[{a}]:{}", self.1),
        }
    }
}

impl fmt::Display for FiveTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}>{}/{}",
            Endpoint(self.src_ip, self.src_port),
            Endpoint(self.dst_ip, self.dst_port),
            self.proto
        )
    }
}

/// Extracts the 5-tuple, or `None` without a network layer.
///
/// Ports are read only for TCP and UDP. A TCP/UDP packet whose transport
/// header is missing (non-initial fragment) also yields `None`, since its
/// ports are unknown.
pub fn five_tuple_of(pkt: &RawPacket, layout: &HeaderLayout) -> Option<FiveTuple> {
    let net = layout.network?;
    let d = &pkt.data;
    let (src_ip, dst_ip, proto) = match d[net.offset] >> 4 {
        4 => {
            let o = net.offset;
            let src = Ipv4Addr::new(d[o + 12], d[o + 13], d[o + 14], d[o + 15]);
            let dst = Ipv4Addr::new(d[o + 16], d[o + 17], d[o + 18], d[o + 19]);
            (IpAddr::V4(src), IpAddr::V4(dst), d[o + 9])
        }
        6 => {
            let o = net.offset;
            let mut src = [0u8; 16];
            let mut dst = [0u8; 16];
            src.copy_from_slice(&d[o + 8..o + 24]);
            dst.copy_from_slice(&d[o + 24..o + 40]);
            (
                IpAddr::V6(Ipv6Addr::from(src)),
                IpAddr::V6(Ipv6Addr::from(dst)),
                d[o + 6],
            )
        }
        _ => return None,
    };
    let (src_port, dst_port) = if proto == PROTO_TCP || proto == PROTO_UDP {
        let t = layout.transport?;
        (be16(d, t.offset), be16(d, t.offset + 2))
    } else {
        (0, 0)
    };
    Some(FiveTuple {
        src_ip,
        dst_ip,
        src_port,
        dst_port,
        proto,
    })
}
