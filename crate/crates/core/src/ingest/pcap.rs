//! Classic libpcap container: streaming reader and writer.
//!
//! Layout: a 24-byte global header followed by records, each a 16-byte
//! header (`ts_sec`, `ts_frac`, `incl_len`, `orig_len`) and `incl_len` bytes.
//! The magic number fixes both byte order and timestamp resolution.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{IngestError, RawPacket};

pub const MAGIC_MICROS: u32 = 0xa1b2_c3d4;
pub const MAGIC_NANOS: u32 = 0xa1b2_3c4d;
const PCAPNG_MAGIC: u32 = 0x0a0d_0d0a;

pub const GLOBAL_HEADER_LEN: usize = 24;
pub const RECORD_HEADER_LEN: usize = 16;

pub const LINKTYPE_ETHERNET: u32 = 1;

/// Upper bound on a single record; anything larger is treated as damage.
const MAX_RECORD_LEN: u32 = 256 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Endianness {
    Little,
    Big,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TsResolution {
    Micro,
    Nano,
}

impl TsResolution {
    pub fn units_per_second(self) -> u32 {
        match self {
            TsResolution::Micro => 1_000_000,
            TsResolution::Nano => 1_000_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PcapHeader {
    pub endianness: Endianness,
    pub resolution: TsResolution,
    pub version_major: u16,
    pub version_minor: u16,
    pub thiszone: i32,
    pub sigfigs: u32,
    pub snaplen: u32,
    pub link_type: u32,
}

impl PcapHeader {
    pub fn new(link_type: u32, resolution: TsResolution, endianness: Endianness) -> Self {
        PcapHeader {
            endianness,
            resolution,
            version_major: 2,
            version_minor: 4,
            thiszone: 0,
            sigfigs: 0,
            snaplen: 65_535,
            link_type,
        }
    }

    fn magic(&self) -> u32 {
        match self.resolution {
            TsResolution::Micro => MAGIC_MICROS,
            TsResolution::Nano => MAGIC_NANOS,
        }
    }

    fn parse(buf: &[u8; GLOBAL_HEADER_LEN]) -> Result<Self, IngestError> {
        let le = u32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]);
        let (endianness, resolution) = match le {
            MAGIC_MICROS => (Endianness::Little, TsResolution::Micro),
            MAGIC_NANOS => (Endianness::Little, TsResolution::Nano),
            m if m.swap_bytes() == MAGIC_MICROS => (Endianness::Big, TsResolution::Micro),
            m if m.swap_bytes() == MAGIC_NANOS => (Endianness::Big, TsResolution::Nano),
            PCAPNG_MAGIC => {
                return Err(IngestError::UnknownMagic {
                    found: Some(le),
                    hint: "file is pcapng; only classic pcap is supported",
                })
            }
            other => {
                return Err(IngestError::UnknownMagic {
                    found: Some(other),
                    hint: "not a classic pcap file",
                })
            }
        };
        let c = Codec(endianness);
        Ok(PcapHeader {
            endianness,
            resolution,
            version_major: c.u16(&buf[4..6]),
            version_minor: c.u16(&buf[6..8]),
            thiszone: c.u32(&buf[8..12]) as i32,
            sigfigs: c.u32(&buf[12..16]),
            snaplen: c.u32(&buf[16..20]),
            link_type: c.u32(&buf[20..24]),
        })
    }

    fn to_bytes(self) -> [u8; GLOBAL_HEADER_LEN] {
        let c = Codec(self.endianness);
        let mut out = [0u8; GLOBAL_HEADER_LEN];
        out[0..4].copy_from_slice(&c.put_u32(self.magic()));
        out[4..6].copy_from_slice(&c.put_u16(self.version_major));
        out[6..8].copy_from_slice(&c.put_u16(self.version_minor));
        out[8..12].copy_from_slice(&c.put_u32(self.thiszone as u32));
        out[12..16].copy_from_slice(&c.put_u32(self.sigfigs));
        out[16..20].copy_from_slice(&c.put_u32(self.snaplen));
        out[20..24].copy_from_slice(&c.put_u32(self.link_type));
        out
    }
}

#[derive(Clone, Copy)]
struct Codec(Endianness);

impl Codec {
    fn u16(self, b: &[u8]) -> u16 {
        let a = [b[0], b[1]];
        match self.0 {
            Endianness::Little => u16::from_le_bytes(a),
            Endianness::Big => u16::from_be_bytes(a),
        }
    }

    fn u32(self, b: &[u8]) -> u32 {
        let a = [b[0], b[1], b[2], b[3]];
        match self.0 {
            Endianness::Little => u32::from_le_bytes(a),
            Endianness::Big => u32::from_be_bytes(a),
        }
    }

    fn put_u16(self, v: u16) -> [u8; 2] {
        match self.0 {
            Endianness::Little => v.to_le_bytes(),
            Endianness::Big => v.to_be_bytes(),
        }
    }

    fn put_u32(self, v: u32) -> [u8; 4] {
        match self.0 {
            Endianness::Little => v.to_le_bytes(),
            Endianness::Big => v.to_be_bytes(),
        }
    }
}

/// Fills `buf` as far as the stream allows; returns bytes read.
fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

/// Streaming reader. Yields packets in file order; after the first error the
/// iterator is exhausted.
pub struct PcapReader<R> {
    inner: R,
    header: PcapHeader,
    records_read: u64,
    offset: u64,
    done: bool,
}

impl<R: Read> PcapReader<R> {
    pub fn new(mut inner: R) -> Result<Self, IngestError> {
        let mut buf = [0u8; GLOBAL_HEADER_LEN];
        let n = read_full(&mut inner, &mut buf)?;
        if n < 4 {
            return Err(IngestError::UnknownMagic {
                found: None,
                hint: "file too short to hold a magic number",
            });
        }
        // Check the magic first so a short pcapng file is still named as such.
        let probe = PcapHeader::parse(&buf);
        if n < GLOBAL_HEADER_LEN {
            probe?;
            return Err(IngestError::TruncatedRecord {
                record: 0,
                offset: 0,
                expected: GLOBAL_HEADER_LEN,
                available: n,
            });
        }
        Ok(PcapReader {
            inner,
            header: probe?,
            records_read: 0,
            offset: GLOBAL_HEADER_LEN as u64,
            done: false,
        })
    }

    pub fn header(&self) -> &PcapHeader {
        &self.header
    }

    pub fn link_type(&self) -> u32 {
        self.header.link_type
    }

    pub fn resolution(&self) -> TsResolution {
        self.header.resolution
    }

    fn next_record(&mut self) -> Result<Option<RawPacket>, IngestError> {
        let mut hdr = [0u8; RECORD_HEADER_LEN];
        let n = read_full(&mut self.inner, &mut hdr)?;
        if n == 0 {
            return Ok(None);
        }
        if n < RECORD_HEADER_LEN {
            return Err(IngestError::TruncatedRecord {
                record: self.records_read,
                offset: self.offset,
                expected: RECORD_HEADER_LEN,
                available: n,
            });
        }
        let c = Codec(self.header.endianness);
        let ts_sec = c.u32(&hdr[0..4]);
        let ts_frac = c.u32(&hdr[4..8]);
        let incl_len = c.u32(&hdr[8..12]);
        let orig_len = c.u32(&hdr[12..16]);
        if incl_len > MAX_RECORD_LEN {
            return Err(IngestError::TruncatedRecord {
                record: self.records_read,
                offset: self.offset,
                expected: incl_len as usize,
                available: 0,
            });
        }
        let mut data = vec![0u8; incl_len as usize];
        let got = read_full(&mut self.inner, &mut data)?;
        if got < data.len() {
            return Err(IngestError::TruncatedRecord {
                record: self.records_read,
                offset: self.offset,
                expected: data.len(),
                available: got,
            });
        }
        if ts_frac >= self.header.resolution.units_per_second() {
            return Err(IngestError::BadTimestamp {
                record: self.records_read,
                ts_frac,
            });
        }
        self.records_read += 1;
        self.offset += (RECORD_HEADER_LEN + data.len()) as u64;
        Ok(Some(RawPacket {
            ts_sec,
            ts_frac,
            resolution: self.header.resolution,
            orig_len,
            link_type: self.header.link_type,
            data,
        }))
    }
}

impl<R: Read> Iterator for PcapReader<R> {
    type Item = Result<RawPacket, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.next_record() {
            Ok(Some(p)) => Some(Ok(p)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

/// Opens `path` as a streaming packet source.
pub fn read_pcap(path: impl AsRef<Path>) -> Result<PcapReader<BufReader<File>>, IngestError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| IngestError::Open {
        path: path.to_path_buf(),
        source: e,
    })?;
    PcapReader::new(BufReader::new(file))
}

/// Reads a whole capture. On damage the packets before it are returned
/// alongside the error.
pub fn read_pcap_all(path: impl AsRef<Path>) -> Result<Vec<RawPacket>, IngestError> {
    let mut packets = Vec::new();
    for p in read_pcap(path)? {
        packets.push(p?);
    }
    Ok(packets)
}

/// Like [`read_pcap_all`] but keeps the packets that precede a truncated
/// record instead of discarding them.
pub fn read_pcap_lenient(
    path: impl AsRef<Path>,
) -> Result<(Vec<RawPacket>, Option<IngestError>), IngestError> {
    let mut packets = Vec::new();
    for p in read_pcap(path)? {
        match p {
            Ok(p) => packets.push(p),
            Err(e) => return Ok((packets, Some(e))),
        }
    }
    Ok((packets, None))
}

pub struct PcapWriter<W: Write> {
    inner: W,
    header: PcapHeader,
}

impl<W: Write> PcapWriter<W> {
    pub fn new(mut inner: W, header: PcapHeader) -> io::Result<Self> {
        inner.write_all(&header.to_bytes())?;
        Ok(PcapWriter { inner, header })
    }

    pub fn header(&self) -> &PcapHeader {
        &self.header
    }

    pub fn write_packet(&mut self, pkt: &RawPacket) -> io::Result<()> {
        let c = Codec(self.header.endianness);
        let incl = u32::try_from(pkt.data.len())
            .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "packet too large"))?;
        let mut hdr = [0u8; RECORD_HEADER_LEN];
        hdr[0..4].copy_from_slice(&c.put_u32(pkt.ts_sec));
        hdr[4..8].copy_from_slice(&c.put_u32(pkt.ts_frac));
        hdr[8..12].copy_from_slice(&c.put_u32(incl));
        hdr[12..16].copy_from_slice(&c.put_u32(pkt.orig_len));
        self.inner.write_all(&hdr)?;
        self.inner.write_all(&pkt.data)
    }

    pub fn into_inner(mut self) -> io::Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Writes `packets` to `path` with the given header settings.
pub fn write_pcap<'a>(
    path: impl AsRef<Path>,
    header: PcapHeader,
    packets: impl IntoIterator<Item = &'a RawPacket>,
) -> io::Result<()> {
    let file = File::create(path)?;
    let mut w = PcapWriter::new(BufWriter::new(file), header)?;
    for p in packets {
        w.write_packet(p)?;
    }
    w.into_inner()?.flush()
}
