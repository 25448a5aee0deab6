//! Fixed-length byte vectors from traffic units under the four header
//! retention policies.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::HeaderLayout;
use crate::splitter::{Representation, TrafficUnit};

pub const DEFAULT_SAMPLE_LEN: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeaderCategory {
    /// The whole frame.
    AllHeaders,
    /// Link header plus everything from the transport header on; the
    /// network header is cut out.
    OnlyEth,
    /// Everything from the network header on.
    WithoutEth,
    /// Everything from the transport header on.
    NoHeaders,
}

impl HeaderCategory {
    pub const ALL: [HeaderCategory; 4] = [
        HeaderCategory::AllHeaders,
        HeaderCategory::OnlyEth,
        HeaderCategory::WithoutEth,
        HeaderCategory::NoHeaders,
    ];

    pub fn name(self) -> &'static str {
        match self {
            HeaderCategory::AllHeaders => "all-headers",
            HeaderCategory::OnlyEth => "only-eth",
            HeaderCategory::WithoutEth => "without-eth",
            HeaderCategory::NoHeaders => "no-headers",
        }
    }

    /// Row label as printed in report tables.
    pub fn title(self) -> &'static str {
        match self {
            HeaderCategory::AllHeaders => "All headers",
            HeaderCategory::OnlyEth => "Only Eth",
            HeaderCategory::WithoutEth => "Without Eth",
            HeaderCategory::NoHeaders => "No headers",
        }
    }
}

impl fmt::Display for HeaderCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HeaderCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "all-headers" | "all" => Ok(HeaderCategory::AllHeaders),
            "only-eth" | "eth-only" => Ok(HeaderCategory::OnlyEth),
            "without-eth" | "no-eth" => Ok(HeaderCategory::WithoutEth),
            "no-headers" | "none" => Ok(HeaderCategory::NoHeaders),
            other => Err(format!("unknown header category '{other}'")),
        }
    }
}

/// Bytes of one packet kept under `cat`.
///
/// A missing network or transport boundary falls back to the end of the
/// deepest header that was parsed.
pub fn slice_category(pkt: &[u8], layout: &HeaderLayout, cat: HeaderCategory) -> Vec<u8> {
    let deepest = layout.deepest_boundary().min(pkt.len());
    let from_transport = layout.trans_off().unwrap_or(deepest).min(pkt.len());
    match cat {
        HeaderCategory::AllHeaders => pkt.to_vec(),
        HeaderCategory::OnlyEth => {
            let link_end = layout.link.end().min(pkt.len());
            let mut out = Vec::with_capacity(link_end + pkt.len() - from_transport);
            out.extend_from_slice(&pkt[..link_end]);
            out.extend_from_slice(&pkt[from_transport.max(link_end)..]);
            out
        }
        HeaderCategory::WithoutEth => {
            let start = layout.net_off().unwrap_or(deepest).min(pkt.len());
            pkt[start..].to_vec()
        }
        HeaderCategory::NoHeaders => pkt[from_transport..].to_vec(),
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EncodeError {
    #[error("unit {0} contributes no bytes under this category")]
    EmptyUnit(String),
    #[error("sample length must be positive")]
    ZeroLength,
}

/// Raw (unscaled) result of encoding one unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedUnit {
    /// Exactly `sample_len` bytes, zero padded.
    pub bytes: Vec<u8>,
    /// Bytes taken from the unit before padding (≤ `sample_len`).
    pub content_len: usize,
    /// Bytes dropped past `sample_len`.
    pub truncated: usize,
}

/// Concatenates per-packet slices in time order, truncates to `sample_len`
/// and zero pads.
pub fn encode_unit(
    unit: &TrafficUnit,
    cat: HeaderCategory,
    sample_len: usize,
) -> Result<EncodedUnit, EncodeError> {
    if sample_len == 0 {
        return Err(EncodeError::ZeroLength);
    }
    let mut bytes = Vec::with_capacity(sample_len);
    let mut total = 0usize;
    for p in &unit.packets {
        let slice = slice_category(&p.packet.data, &p.layout, cat);
        total += slice.len();
        let room = sample_len - bytes.len();
        bytes.extend_from_slice(&slice[..slice.len().min(room)]);
    }
    if total == 0 {
        return Err(EncodeError::EmptyUnit(unit.key.to_string()));
    }
    let content_len = bytes.len();
    bytes.resize(sample_len, 0);
    Ok(EncodedUnit {
        bytes,
        content_len,
        truncated: total - content_len,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SampleMeta {
    pub scenario: String,
    pub representation: Representation,
    pub category: HeaderCategory,
    pub unit_key: String,
    pub truncated_bytes: usize,
}

/// One labeled training row.
///
/// The vector is stored as raw bytes; [`ByteSample::values`] yields the
/// byte/255 scaling the network consumes, so import/export stays exact.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ByteSample {
    pub bytes: Vec<u8>,
    /// Leading bytes that came from traffic; the rest is padding.
    pub content_len: usize,
    pub label: usize,
    pub meta: SampleMeta,
}

impl ByteSample {
    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        self.bytes.iter().map(|&b| scale(b)).collect()
    }

    pub fn write_values(&self, out: &mut [f64]) {
        for (o, &b) in out.iter_mut().zip(&self.bytes) {
            *o = scale(b);
        }
    }
}

#[inline]
pub fn scale(b: u8) -> f64 {
    b as f64 / 255.0
}

/// Scales arbitrary bytes to a length-`sample_len` input vector.
pub fn scaled_vector(bytes: &[u8], sample_len: usize) -> Vec<f64> {
    let mut v: Vec<f64> = bytes.iter().take(sample_len).map(|&b| scale(b)).collect();
    v.resize(sample_len, 0.0);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{parse_ethernet, RawPacket, TsResolution, LINKTYPE_ETHERNET};
    use crate::splitter::{UnitKey, UnitPacket};

    fn udp_packet() -> Vec<u8> {
        let mut v: Vec<u8> = (0..60u8).collect();
        v[12] = 0x08;
        v[13] = 0x00;
        v[14] = 0x45;
        v[20] = 0;
        v[21] = 0;
        v[23] = 17;
        v
    }

    fn unit(datas: Vec<Vec<u8>>) -> TrafficUnit {
        TrafficUnit {
            kind: Representation::Flow,
            key: UnitKey::Packet(0),
            packets: datas
                .into_iter()
                .enumerate()
                .map(|(i, data)| UnitPacket {
                    index: i,
                    layout: parse_ethernet(&data).unwrap(),
                    packet: RawPacket {
                        ts_sec: i as u32,
                        ts_frac: 0,
                        resolution: TsResolution::Micro,
                        orig_len: data.len() as u32,
                        link_type: LINKTYPE_ETHERNET,
                        data,
                    },
                })
                .collect(),
        }
    }

    #[test]
    fn category_slices_of_udp_frame() {
        let p = udp_packet();
        let l = parse_ethernet(&p).unwrap();
        assert_eq!(slice_category(&p, &l, HeaderCategory::AllHeaders), p);
        let only = slice_category(&p, &l, HeaderCategory::OnlyEth);
        assert_eq!(only.len(), 40);
        assert_eq!(&only[..14], &p[..14]);
        assert_eq!(&only[14..], &p[34..]);
        assert_eq!(slice_category(&p, &l, HeaderCategory::WithoutEth), &p[14..]);
        assert_eq!(slice_category(&p, &l, HeaderCategory::NoHeaders), &p[34..]);
    }

    #[test]
    fn fallback_for_arp() {
        let mut p = vec![0u8; 42];
        p[12] = 0x08;
        p[13] = 0x06;
        let l = parse_ethernet(&p).unwrap();
        assert_eq!(slice_category(&p, &l, HeaderCategory::OnlyEth).len(), 42);
        assert_eq!(slice_category(&p, &l, HeaderCategory::WithoutEth).len(), 28);
        assert_eq!(slice_category(&p, &l, HeaderCategory::NoHeaders).len(), 28);
    }

    #[test]
    fn scaling_and_padding() {
        let v = scaled_vector(&[0x00, 0xff, 0x10], 5);
        assert_eq!(v, vec![0.0, 1.0, 16.0 / 255.0, 0.0, 0.0]);
    }

    #[test]
    fn unit_truncates_and_concatenates() {
        let a = udp_packet();
        let mut b = udp_packet();
        b[59] = 0xee;
        let u = unit(vec![a.clone(), b.clone()]);
        let enc = encode_unit(&u, HeaderCategory::AllHeaders, 100).unwrap();
        let mut cat = a.clone();
        cat.extend_from_slice(&b);
        assert_eq!(enc.bytes, cat[..100]);
        assert_eq!(enc.truncated, 20);
        assert_eq!(enc.content_len, 100);

        let enc = encode_unit(&u, HeaderCategory::NoHeaders, 200).unwrap();
        assert_eq!(&enc.bytes[..26], &a[34..]);
        assert_eq!(&enc.bytes[26..52], &b[34..]);
        assert!(enc.bytes[52..].iter().all(|&x| x == 0));
        assert_eq!((enc.content_len, enc.truncated), (52, 0));
    }

    #[test]
    fn empty_and_zero_length() {
        let u = unit(vec![udp_packet()]);
        assert_eq!(
            encode_unit(&u, HeaderCategory::AllHeaders, 0),
            Err(EncodeError::ZeroLength)
        );
        let mut bare = vec![0u8; 14];
        bare[12] = 0x08;
        bare[13] = 0x06;
        let u = unit(vec![bare]);
        assert!(matches!(
            encode_unit(&u, HeaderCategory::NoHeaders, 8),
            Err(EncodeError::EmptyUnit(_))
        ));
    }

    #[test]
    fn category_names_round_trip() {
        for c in HeaderCategory::ALL {
            assert_eq!(c.name().parse::<HeaderCategory>().unwrap(), c);
        }
    }
}
