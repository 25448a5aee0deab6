//! Synthetic labeled captures: Ethernet/IPv4/UDP-or-TCP frames whose
//! payloads carry a per-class byte signature.

use std::fs;
use std::io;
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Scenario;
use crate::ingest::{
    write_pcap, Endianness, PcapHeader, RawPacket, TsResolution, LINKTYPE_ETHERNET, PROTO_TCP,
    PROTO_UDP,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("spec conflict: {0}")]
    SpecConflict(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSignature {
    pub name: String,
    /// Offset into the transport payload.
    pub offset: usize,
    pub pattern: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: Vec<ClassSignature>,
    pub packets_per_class: usize,
    /// Inclusive payload length range.
    pub payload_min: usize,
    pub payload_max: usize,
    /// Conversations per class; each becomes one session and up to two
    /// flows.
    pub tuple_pool: usize,
    /// Share of conversations carried over TCP (the rest use UDP).
    pub tcp_fraction: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// `n` classes named `class0..`, each with a distinct 8-byte signature
    /// at payload offset 10.
    pub fn with_classes(n: usize, packets_per_class: usize, seed: u64) -> SynthSpec {
        let classes = (0..n)
            .map(|c| ClassSignature {
                name: format!("class{c}"),
                offset: 10,
                pattern: signature_pattern(c),
            })
            .collect();
        SynthSpec {
            classes,
            packets_per_class,
            payload_min: 24,
            payload_max: 200,
            tuple_pool: 20,
            tcp_fraction: 0.5,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let conflict = |m: String| Err(SynthError::SpecConflict(m));
        if self.classes.is_empty() {
            return conflict("no classes".into());
        }
        if self.payload_min > self.payload_max {
            return conflict(format!(
                "payload range {}..={} is empty",
                self.payload_min, self.payload_max
            ));
        }
        if self.payload_max > 1400 {
            return conflict(format!("payload_max {} exceeds 1400", self.payload_max));
        }
        if self.tuple_pool == 0 {
            return conflict("tuple pool must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.tcp_fraction) {
            return conflict(format!("tcp_fraction {} outside [0, 1]", self.tcp_fraction));
        }
        for c in &self.classes {
            if c.pattern.is_empty() {
                return conflict(format!("class '{}' has an empty signature", c.name));
            }
            if c.offset + c.pattern.len() > self.payload_min {
                return conflict(format!(
                    "signature of '{}' ends at payload byte {} but payloads may be {} bytes",
                    c.name,
                    c.offset + c.pattern.len(),
                    self.payload_min
                ));
            }
        }
        for (i, a) in self.classes.iter().enumerate() {
            for b in &self.classes[i + 1..] {
                if a.name == b.name {
                    return conflict(format!("duplicate class name '{}'", a.name));
                }
                if !signatures_differ(a, b) {
                    return conflict(format!(
                        "signatures of '{}' and '{}' do not differ at any shared position",
                        a.name, b.name
                    ));
                }
            }
        }
        Ok(())
    }
}

/// A byte pattern unique to class `c`.
fn signature_pattern(c: usize) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC1A5_5000 + c as u64);
    let mut p: Vec<u8> = (0..8).map(|_| rng.gen()).collect();
    p[0] = c as u8;
    p
}

/// True when some payload position is covered by both signatures with
/// different bytes.
fn signatures_differ(a: &ClassSignature, b: &ClassSignature) -> bool {
    let lo = a.offset.max(b.offset);
    let hi = (a.offset + a.pattern.len()).min(b.offset + b.pattern.len());
    (lo..hi).any(|p| a.pattern[p - a.offset] != b.pattern[p - b.offset])
}

/// Fields of one synthetic frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameSpec {
    pub src_mac: [u8; 6],
    pub dst_mac: [u8; 6],
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub proto: u8,
    pub ip_id: u16,
    pub tcp_seq: u32,
    pub payload: Vec<u8>,
}

fn checksum(chunks: &[&[u8]]) -> u16 {
    let mut sum: u32 = 0;
    for chunk in chunks {
        let mut it = chunk.chunks(2);
        for pair in &mut it {
            let word = if pair.len() == 2 {
                u16::from_be_bytes([pair[0], pair[1]])
            } else {
                u16::from_be_bytes([pair[0], 0])
            };
            sum += word as u32;
        }
    }
    while sum > 0xffff {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

/// Ethernet + IPv4 (IHL 5) + UDP or TCP (data offset 5) frame, padded to
/// the 60-byte Ethernet minimum. Checksums are filled in.
pub fn build_frame(f: &FrameSpec) -> Vec<u8> {
    let trans_len = if f.proto == PROTO_TCP { 20 } else { 8 };
    let ip_total = 20 + trans_len + f.payload.len();
    let mut frame = Vec::with_capacity(14 + ip_total);
    frame.extend_from_slice(&f.dst_mac);
    frame.extend_from_slice(&f.src_mac);
    frame.extend_from_slice(&0x0800u16.to_be_bytes());

    let mut ip = [0u8; 20];
    ip[0] = 0x45;
    ip[2..4].copy_from_slice(&(ip_total as u16).to_be_bytes());
    ip[4..6].copy_from_slice(&f.ip_id.to_be_bytes());
    ip[6] = 0x40; // don't fragment
    ip[8] = 64;
    ip[9] = f.proto;
    ip[12..16].copy_from_slice(&f.src_ip.octets());
    ip[16..20].copy_from_slice(&f.dst_ip.octets());
    let c = checksum(&[&ip]);
    ip[10..12].copy_from_slice(&c.to_be_bytes());
    frame.extend_from_slice(&ip);

    let seg_len = (trans_len + f.payload.len()) as u16;
    let mut pseudo = [0u8; 12];
    pseudo[0..4].copy_from_slice(&f.src_ip.octets());
    pseudo[4..8].copy_from_slice(&f.dst_ip.octets());
    pseudo[9] = f.proto;
    pseudo[10..12].copy_from_slice(&seg_len.to_be_bytes());
    let mut t = vec![0u8; trans_len];
    t[0..2].copy_from_slice(&f.src_port.to_be_bytes());
    t[2..4].copy_from_slice(&f.dst_port.to_be_bytes());
    if f.proto == PROTO_TCP {
        t[4..8].copy_from_slice(&f.tcp_seq.to_be_bytes());
        t[12] = 5 << 4;
        t[13] = 0x18; // PSH|ACK
        t[14..16].copy_from_slice(&64240u16.to_be_bytes());
        let c = checksum(&[&pseudo, &t, &f.payload]);
        t[16..18].copy_from_slice(&c.to_be_bytes());
    } else {
        t[4..6].copy_from_slice(&seg_len.to_be_bytes());
        let c = checksum(&[&pseudo, &t, &f.payload]);
        let c = if c == 0 { 0xffff } else { c };
        t[6..8].copy_from_slice(&c.to_be_bytes());
    }
    frame.extend_from_slice(&t);
    frame.extend_from_slice(&f.payload);
    if frame.len() < 60 {
        frame.resize(60, 0);
    }
    frame
}

#[derive(Debug, Clone, Copy)]
struct Conversation {
    client: (Ipv4Addr, u16, [u8; 6]),
    server: (Ipv4Addr, u16, [u8; 6]),
    proto: u8,
}

/// One generated packet with its class index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthPacket {
    pub class: usize,
    pub packet: RawPacket,
}

/// Generates every class's packets, each class in time order.
pub fn synth_packets(spec: &SynthSpec) -> Result<Vec<Vec<SynthPacket>>, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.classes.len());
    for (ci, class) in spec.classes.iter().enumerate() {
        let convs: Vec<Conversation> = (0..spec.tuple_pool)
            .map(|_| Conversation {
                client: (
                    Ipv4Addr::new(192, 168, rng.gen_range(0..4), rng.gen_range(2..250)),
                    rng.gen_range(32768..61000),
                    mac(&mut rng),
                ),
                server: (
                    Ipv4Addr::new(10, rng.gen_range(0..8), rng.gen(), rng.gen_range(1..255)),
                    *[53u16, 80, 443, 23, 8080, 1883, 5683]
                        .choose(&mut rng)
                        .unwrap(),
                    mac(&mut rng),
                ),
                proto: if rng.gen_bool(spec.tcp_fraction) {
                    PROTO_TCP
                } else {
                    PROTO_UDP
                },
            })
            .collect();
        let mut packets = Vec::with_capacity(spec.packets_per_class);
        // Microsecond clock, 1.7e9 s epoch offset, ~10 ms spacing.
        let mut clock: u64 = 1_700_000_000 * 1_000_000 + ci as u64 * 997;
        for i in 0..spec.packets_per_class {
            // Every conversation gets traffic before any repeats.
            let conv = if i < convs.len() {
                convs[i]
            } else {
                *convs.choose(&mut rng).unwrap()
            };
            // The first packet of a conversation goes client → server, so
            // every conversation shows up as at least one flow per session
            // and most contribute two.
            let forward = i < convs.len() || rng.gen_bool(0.5);
            let (src, dst) = if forward {
                (conv.client, conv.server)
            } else {
                (conv.server, conv.client)
            };
            let len = rng.gen_range(spec.payload_min..=spec.payload_max);
            let mut payload: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            payload[class.offset..class.offset + class.pattern.len()]
                .copy_from_slice(&class.pattern);
            let data = build_frame(&FrameSpec {
                src_mac: src.2,
                dst_mac: dst.2,
                src_ip: src.0,
                dst_ip: dst.0,
                src_port: src.1,
                dst_port: dst.1,
                proto: conv.proto,
                ip_id: rng.gen(),
                tcp_seq: rng.gen(),
                payload,
            });
            clock += 5_000 + rng.gen_range(0..10_000);
            packets.push(SynthPacket {
                class: ci,
                packet: RawPacket {
                    ts_sec: (clock / 1_000_000) as u32,
                    ts_frac: (clock % 1_000_000) as u32,
                    resolution: TsResolution::Micro,
                    orig_len: data.len() as u32,
                    link_type: LINKTYPE_ETHERNET,
                    data,
                },
            });
        }
        out.push(packets);
    }
    Ok(out)
}

fn mac(rng: &mut impl Rng) -> [u8; 6] {
    let mut m: [u8; 6] = rng.gen();
    m[0] = (m[0] & 0xfe) | 0x02; // locally administered unicast
    m
}

fn header() -> PcapHeader {
    PcapHeader::new(LINKTYPE_ETHERNET, TsResolution::Micro, Endianness::Little)
}

/// Writes all classes into one capture, merged in timestamp order.
pub fn generate_fixture(spec: &SynthSpec, path: impl AsRef<Path>) -> Result<(), SynthError> {
    let mut all: Vec<SynthPacket> = synth_packets(spec)?.into_iter().flatten().collect();
    all.sort_by_key(|p| (p.packet.timestamp_nanos(), p.class));
    write_pcap(path, header(), all.iter().map(|p| &p.packet))?;
    Ok(())
}

/// Writes one capture per class into `dir` (`<name>.pcap`) and returns the
/// labeled scenario list.
pub fn generate_class_fixtures(
    spec: &SynthSpec,
    dir: impl AsRef<Path>,
) -> Result<Vec<Scenario>, SynthError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let per_class = synth_packets(spec)?;
    let mut scenarios = Vec::with_capacity(per_class.len());
    for (class, packets) in spec.classes.iter().zip(&per_class) {
        let path: PathBuf = dir.join(format!("{}.pcap", class.name));
        write_pcap(&path, header(), packets.iter().map(|p| &p.packet))?;
        scenarios.push(Scenario {
            path,
            label: class.name.clone(),
        });
    }
    Ok(scenarios)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::parse_ethernet;

    #[test]
    fn checksum_of_known_header() {
        // Example IPv4 header with checksum field zeroed; expected 0xb861.
        let h = [
            0x45, 0x00, 0x00, 0x73, 0x00, 0x00, 0x40, 0x00, 0x40, 0x11, 0x00, 0x00, 0xc0, 0xa8,
            0x00, 0x01, 0xc0, 0xa8, 0x00, 0xc7,
        ];
        assert_eq!(checksum(&[&h]), 0xb861);
    }

    #[test]
    fn frames_parse_back() {
        for proto in [PROTO_UDP, PROTO_TCP] {
            let f = build_frame(&FrameSpec {
                src_mac: [2; 6],
                dst_mac: [4; 6],
                src_ip: Ipv4Addr::new(10, 0, 0, 1),
                dst_ip: Ipv4Addr::new(10, 0, 0, 2),
                src_port: 5000,
                dst_port: 53,
                proto,
                ip_id: 1,
                tcp_seq: 7,
                payload: vec![0xab; 30],
            });
            let l = parse_ethernet(&f).unwrap();
            let t = if proto == PROTO_TCP { 20 } else { 8 };
            assert_eq!(l.payload_off(), Some(34 + t));
            // Verifying the IP checksum over the filled header yields zero.
            assert_eq!(checksum(&[&f[14..34]]), 0);
        }
    }

    #[test]
    fn conflicting_specs() {
        let mut s = SynthSpec::with_classes(2, 10, 0);
        s.classes[1].pattern = s.classes[0].pattern.clone();
        assert!(matches!(s.validate(), Err(SynthError::SpecConflict(_))));
        let mut s = SynthSpec::with_classes(2, 10, 0);
        s.classes[0].offset = 30;
        assert!(s.validate().is_err());
        let mut s = SynthSpec::with_classes(2, 10, 0);
        s.classes[1].offset = 18;
        assert!(s.validate().is_err(), "non-overlapping signatures");
    }

    #[test]
    fn class_counts_and_determinism() {
        let spec = SynthSpec::with_classes(3, 50, 4);
        let a = synth_packets(&spec).unwrap();
        assert_eq!(a.iter().map(Vec::len).collect::<Vec<_>>(), vec![50, 50, 50]);
        assert_eq!(a, synth_packets(&spec).unwrap());
    }
}
