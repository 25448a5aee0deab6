//! Packet capture ingest: the pcap container and header boundary parsing.

use std::io;
use std::path::PathBuf;

use thiserror::Error;

mod layout;
mod pcap;

pub(crate) use layout::Endpoint;
pub use layout::{
    five_tuple_of, parse_ethernet, parse_layout, FiveTuple, HeaderLayout, Span, PROTO_ICMP,
    PROTO_ICMPV6, PROTO_TCP, PROTO_UDP,
};
pub use pcap::{
    read_pcap, read_pcap_all, read_pcap_lenient, write_pcap, Endianness, PcapHeader, PcapReader,
    PcapWriter, TsResolution, GLOBAL_HEADER_LEN, LINKTYPE_ETHERNET, MAGIC_MICROS, MAGIC_NANOS,
    RECORD_HEADER_LEN,
};

/// One captured frame.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RawPacket {
    pub ts_sec: u32,
    /// Sub-second part in units of `resolution`.
    pub ts_frac: u32,
    pub resolution: TsResolution,
    pub orig_len: u32,
    pub link_type: u32,
    pub data: Vec<u8>,
}

impl RawPacket {
    /// Timestamp in nanoseconds, comparable across resolutions.
    pub fn timestamp_nanos(&self) -> u64 {
        let frac = match self.resolution {
            TsResolution::Micro => self.ts_frac as u64 * 1_000,
            TsResolution::Nano => self.ts_frac as u64,
        };
        self.ts_sec as u64 * 1_000_000_000 + frac
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot open {path}: {source}")]
    Open {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("unknown magic{}: {hint}", .found.map(|m| format!(" {m:#010x}")).unwrap_or_default())]
    UnknownMagic {
        found: Option<u32>,
        hint: &'static str,
    },
    #[error(
        "truncated record {record} at byte {offset}: expected {expected} bytes, {available} remain"
    )]
    TruncatedRecord {
        record: u64,
        offset: u64,
        expected: usize,
        available: usize,
    },
    #[error("record {record} has sub-second field {ts_frac} outside its resolution")]
    BadTimestamp { record: u64, ts_frac: u32 },
    #[error("malformed header: {reason}")]
    MalformedHeader { reason: &'static str },
    #[error("unsupported link type {0} (only Ethernet is parsed)")]
    UnsupportedLinkType(u32),
    #[error(transparent)]
    Io(#[from] io::Error),
}
