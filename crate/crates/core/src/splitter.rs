//! Grouping of packets into the three traffic views: single packets,
//! unidirectional flows and bidirectional sessions.
//!
//! There is no idle timeout. One 5-tuple (or one canonical endpoint pair)
//! maps to exactly one unit per capture. Units appear in order of their first
//! packet; packets inside a unit are time-ordered with capture order breaking
//! ties.

use std::collections::HashMap;
use std::fmt;
use std::io::{self, Write};
use std::net::IpAddr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ingest::{five_tuple_of, parse_layout, Endpoint, FiveTuple, HeaderLayout, RawPacket};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    Session,
    Flow,
    Packet,
}

impl Representation {
    pub const ALL: [Representation; 3] = [
        Representation::Session,
        Representation::Flow,
        Representation::Packet,
    ];

    /// Short experiment tag used in reports.
    pub fn tag(self) -> &'static str {
        match self {
            Representation::Session => "ExpS",
            Representation::Flow => "ExpF",
            Representation::Packet => "ExpP",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Representation::Session => "session",
            Representation::Flow => "flow",
            Representation::Packet => "packet",
        }
    }
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Representation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "session" | "exps" => Ok(Representation::Session),
            "flow" | "expf" => Ok(Representation::Flow),
            "packet" | "expp" => Ok(Representation::Packet),
            other => Err(format!("unknown representation '{other}'")),
        }
    }
}

/// Direction-free traffic identity: the two endpoints sorted ascending.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SessionKey {
    pub endpoint_a: (IpAddr, u16),
    pub endpoint_b: (IpAddr, u16),
    pub proto: u8,
}

impl SessionKey {
    pub fn canonical(t: &FiveTuple) -> SessionKey {
        let src = (t.src_ip, t.src_port);
        let dst = (t.dst_ip, t.dst_port);
        let (endpoint_a, endpoint_b) = if src <= dst { (src, dst) } else { (dst, src) };
        SessionKey {
            endpoint_a,
            endpoint_b,
            proto: t.proto,
        }
    }

    pub fn matches(&self, t: &FiveTuple) -> bool {
        SessionKey::canonical(t) == *self
    }
}

impl fmt::Display for SessionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}<>{}/{}",
            Endpoint(self.endpoint_a.0, self.endpoint_a.1),
            Endpoint(self.endpoint_b.0, self.endpoint_b.1),
            self.proto
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum UnitKey {
    /// Index of the packet in the capture.
    Packet(usize),
    Flow(FiveTuple),
    Session(SessionKey),
}

impl fmt::Display for UnitKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UnitKey::Packet(i) => write!(f, "#{i}"),
            UnitKey::Flow(t) => t.fmt(f),
            UnitKey::Session(k) => k.fmt(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitPacket {
    /// Position in the original capture.
    pub index: usize,
    pub packet: RawPacket,
    pub layout: HeaderLayout,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrafficUnit {
    pub kind: Representation,
    pub key: UnitKey,
    pub packets: Vec<UnitPacket>,
}

impl TrafficUnit {
    pub fn byte_count(&self) -> usize {
        self.packets.iter().map(|p| p.packet.data.len()).sum()
    }
}

/// Packets left out of every unit, by reason.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Exclusions {
    /// Header parsing failed (malformed, truncated or non-Ethernet).
    pub unparsable: usize,
    /// Parsed, but carries no 5-tuple (ARP, non-IP, later fragments).
    pub no_five_tuple: usize,
}

impl Exclusions {
    pub fn total(&self) -> usize {
        self.unparsable + self.no_five_tuple
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub representation: Representation,
    pub units: Vec<TrafficUnit>,
    pub excluded: Exclusions,
    pub total_packets: usize,
}

impl Split {
    pub fn packets_in_units(&self) -> usize {
        self.units.iter().map(|u| u.packets.len()).sum()
    }

    /// One line per unit: `kind,key,packet_count,byte_count`.
    pub fn write_manifest<W: Write>(&self, mut w: W) -> io::Result<()> {
        for u in &self.units {
            writeln!(
                w,
                "{},{},{},{}",
                u.kind,
                u.key,
                u.packets.len(),
                u.byte_count()
            )?;
        }
        Ok(())
    }
}

struct Parsed<'a> {
    index: usize,
    packet: &'a RawPacket,
    layout: HeaderLayout,
}

fn parse_all<'a>(capture: &'a [RawPacket], excluded: &mut Exclusions) -> Vec<Parsed<'a>> {
    capture
        .iter()
        .enumerate()
        .filter_map(|(index, packet)| match parse_layout(packet) {
            Ok(layout) => Some(Parsed {
                index,
                packet,
                layout,
            }),
            Err(_) => {
                excluded.unparsable += 1;
                None
            }
        })
        .collect()
}

fn to_unit_packet(p: &Parsed<'_>) -> UnitPacket {
    UnitPacket {
        index: p.index,
        packet: p.packet.clone(),
        layout: p.layout,
    }
}

pub fn split_packets(capture: &[RawPacket]) -> Split {
    let mut excluded = Exclusions::default();
    let units = parse_all(capture, &mut excluded)
        .iter()
        .map(|p| TrafficUnit {
            kind: Representation::Packet,
            key: UnitKey::Packet(p.index),
            packets: vec![to_unit_packet(p)],
        })
        .collect();
    Split {
        representation: Representation::Packet,
        units,
        excluded,
        total_packets: capture.len(),
    }
}

fn group_by<K, F>(capture: &[RawPacket], kind: Representation, key_of: F) -> Split
where
    K: std::hash::Hash + Eq + Clone,
    F: Fn(&FiveTuple) -> K,
    UnitKey: From<K>,
{
    let mut excluded = Exclusions::default();
    let mut slots: HashMap<K, usize> = HashMap::new();
    let mut units: Vec<TrafficUnit> = Vec::new();
    for p in parse_all(capture, &mut excluded) {
        let Some(tuple) = five_tuple_of(p.packet, &p.layout) else {
            excluded.no_five_tuple += 1;
            continue;
        };
        let key = key_of(&tuple);
        let slot = *slots.entry(key.clone()).or_insert_with(|| {
            units.push(TrafficUnit {
                kind,
                key: UnitKey::from(key),
                packets: Vec::new(),
            });
            units.len() - 1
        });
        units[slot].packets.push(to_unit_packet(&p));
    }
    for u in &mut units {
        // Stable sort: capture order survives among equal timestamps.
        u.packets.sort_by_key(|p| p.packet.timestamp_nanos());
    }
    Split {
        representation: kind,
        units,
        excluded,
        total_packets: capture.len(),
    }
}

impl From<FiveTuple> for UnitKey {
    fn from(t: FiveTuple) -> Self {
        UnitKey::Flow(t)
    }
}

impl From<SessionKey> for UnitKey {
    fn from(k: SessionKey) -> Self {
        UnitKey::Session(k)
    }
}

pub fn split_flows(capture: &[RawPacket]) -> Split {
    group_by(capture, Representation::Flow, |t| *t)
}

pub fn split_sessions(capture: &[RawPacket]) -> Split {
    group_by(capture, Representation::Session, SessionKey::canonical)
}

pub fn split(capture: &[RawPacket], representation: Representation) -> Split {
    match representation {
        Representation::Packet => split_packets(capture),
        Representation::Flow => split_flows(capture),
        Representation::Session => split_sessions(capture),
    }
}
