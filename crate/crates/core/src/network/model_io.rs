//! Versioned binary model file.
//!
//! ```text
//! magic "BCNNMODL" | u32 version | config | u64 dropout seed
//! | u32 metadata length | metadata (UTF-8 key=value lines)
//! | u64 parameter count | f64 parameters (declared order)
//! | 32-byte SHA-256 of everything before it
//! ```
//! All integers and floats little-endian.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Head, Network, NetworkConfig, NetworkError, Padding};

pub const MODEL_MAGIC: &[u8; 8] = b"BCNNMODL";
pub const MODEL_FORMAT_VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

fn corrupt(msg: impl Into<String>) -> NetworkError {
    NetworkError::CorruptModelFile(msg.into())
}

/// Serializes the network with free-form `metadata` (key=value lines).
pub fn write_model<W: Write>(net: &Network, metadata: &str, mut w: W) -> Result<(), NetworkError> {
    let c = net.config();
    let mut buf = Vec::with_capacity(64 + metadata.len() + net.param_count() * 8 + CHECKSUM_LEN);
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    for v in [
        c.input_len,
        c.conv1_filters,
        c.conv2_filters,
        c.kernel,
        c.stride,
        c.pool,
        c.n_classes,
    ] {
        buf.extend_from_slice(&(v as u64).to_le_bytes());
    }
    buf.extend_from_slice(&c.dropout_rate.to_le_bytes());
    buf.push(match c.head {
        Head::SoftmaxCrossEntropy => 0,
        Head::SigmoidPerClass => 1,
    });
    buf.push(match c.padding {
        Padding::Same => 0,
        Padding::Valid => 1,
    });
    buf.extend_from_slice(&net.dropout_seed.to_le_bytes());
    buf.extend_from_slice(&(metadata.len() as u32).to_le_bytes());
    buf.extend_from_slice(metadata.as_bytes());
    buf.extend_from_slice(&(net.param_count() as u64).to_le_bytes());
    for p in net.params() {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    w.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NetworkError> {
        if self.buf.len() - self.pos < n {
            return Err(corrupt("file is truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, NetworkError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, NetworkError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, NetworkError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize, NetworkError> {
        usize::try_from(self.u64()?).map_err(|_| corrupt("size field overflows"))
    }

    fn f64(&mut self) -> Result<f64, NetworkError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses a model file; returns the network and its metadata text.
pub fn read_model<R: Read>(mut r: R) -> Result<(Network, String), NetworkError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < MODEL_MAGIC.len() || &bytes[..MODEL_MAGIC.len()] != MODEL_MAGIC {
        return Err(corrupt("missing model magic"));
    }
    if bytes.len() >= MODEL_MAGIC.len() + 4 {
        let v = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if v != MODEL_FORMAT_VERSION {
            return Err(corrupt(format!(
                "format version {v} found, version {MODEL_FORMAT_VERSION} supported"
            )));
        }
    }
    if bytes.len() < MODEL_MAGIC.len() + 4 + CHECKSUM_LEN {
        return Err(corrupt("file is truncated"));
    }
    let (body, sum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    if Sha256::digest(body).as_slice() != sum {
        return Err(corrupt("checksum mismatch (truncated or damaged file)"));
    }
    let mut c = Cursor { buf: body, pos: 12 };
    let input_len = c.usize()?;
    let conv1_filters = c.usize()?;
    let conv2_filters = c.usize()?;
    let kernel = c.usize()?;
    let stride = c.usize()?;
    let pool = c.usize()?;
    let n_classes = c.usize()?;
    let dropout_rate = c.f64()?;
    let head = match c.u8()? {
        0 => Head::SoftmaxCrossEntropy,
        1 => Head::SigmoidPerClass,
        h => return Err(corrupt(format!("unknown head code {h}"))),
    };
    let padding = match c.u8()? {
        0 => Padding::Same,
        1 => Padding::Valid,
        p => return Err(corrupt(format!("unknown padding code {p}"))),
    };
    let dropout_seed = c.u64()?;
    let meta_len = c.u32()? as usize;
    let metadata = String::from_utf8(c.take(meta_len)?.to_vec())
        .map_err(|_| corrupt("metadata is not UTF-8"))?;
    let n = c.usize()?;
    if n.checked_mul(8) != Some(body.len() - c.pos) {
        return Err(corrupt("parameter count disagrees with file size"));
    }
    let params = (0..n).map(|_| c.f64()).collect::<Result<Vec<_>, _>>()?;
    let config = NetworkConfig {
        input_len,
        conv1_filters,
        conv2_filters,
        kernel,
        stride,
        pool,
        dropout_rate,
        n_classes,
        head,
        padding,
    };
    let net = Network::from_params(config, params, dropout_seed).map_err(|e| match e {
        NetworkError::ShapeMismatch { expected, got, .. } => corrupt(format!(
            "config implies {expected} parameters, file holds {got}"
        )),
        NetworkError::InvalidConfig(m) => corrupt(m),
        other => other,
    })?;
    Ok((net, metadata))
}

pub fn save_model(
    net: &Network,
    metadata: &str,
    path: impl AsRef<Path>,
) -> Result<(), NetworkError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(net, metadata, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(Network, String), NetworkError> {
    read_model(File::open(path)?)
}
