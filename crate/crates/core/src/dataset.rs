//! Labeled datasets: assembly from captures, stratified splits, the hex
//! interchange file and the key-value manifest.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{encode_unit, ByteSample, EncodeError, HeaderCategory, SampleMeta};
use crate::ingest::{read_pcap_lenient, IngestError, RawPacket};
use crate::splitter::{split, Exclusions, Representation};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Ingest {
        path: PathBuf,
        #[source]
        source: IngestError,
    },
    #[error(
        "split ratios must be non-negative with a positive train share and sum to 1, got {0:?}"
    )]
    BadRatios([f64; 3]),
    #[error("need at least 2 classes, found {0}")]
    TooFewClasses(usize),
    #[error(
        "class '{class}' has {count} samples; at least {required} needed for the requested splits"
    )]
    ClassTooSmall {
        class: String,
        count: usize,
        required: usize,
    },
    #[error("sample length must be positive")]
    ZeroLength,
    #[error("line {line}: {reason}")]
    BadHexLine { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Scenario {
    pub path: PathBuf,
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    fn as_array(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let a = self.as_array();
        let ok = a.iter().all(|r| r.is_finite() && *r >= 0.0)
            && self.train > 0.0
            && (a.iter().sum::<f64>() - 1.0).abs() < 1e-9;
        if ok {
            Ok(())
        } else {
            Err(DatasetError::BadRatios(a))
        }
    }

    /// Smallest class size for which every non-empty split gets a sample.
    pub fn min_class_size(&self) -> usize {
        self.as_array()
            .iter()
            .filter(|r| **r > 0.0)
            .map(|r| ((1.0 / r) - 1e-9).ceil() as usize)
            .max()
            .unwrap_or(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetOptions {
    pub representation: Representation,
    pub category: HeaderCategory,
    pub sample_len: usize,
    pub ratios: SplitRatios,
    pub seed: u64,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions {
            representation: Representation::Packet,
            category: HeaderCategory::AllHeaders,
            sample_len: crate::encoder::DEFAULT_SAMPLE_LEN,
            ratios: SplitRatios::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-scenario ingest and encoding statistics.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScenarioStats {
    pub scenario: String,
    pub packets: usize,
    pub units: usize,
    pub excluded: Exclusions,
    pub empty_units: usize,
    pub truncated_bytes: usize,
    /// Set when the capture ended in a damaged record.
    pub read_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<ByteSample>,
    pub classes: Vec<String>,
    pub splits: Splits,
    pub options: DatasetOptions,
    pub stats: Vec<ScenarioStats>,
}

/// A capture already in memory, labeled with its class name.
#[derive(Debug, Clone)]
pub struct LabeledCapture {
    pub name: String,
    pub label: String,
    pub packets: Vec<RawPacket>,
}

impl Dataset {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn sample_len(&self) -> usize {
        self.options.sample_len
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    pub fn subset(&self, idx: &[usize]) -> Vec<&ByteSample> {
        idx.iter().map(|&i| &self.samples[i]).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Key-value manifest. `extra` entries (config hash and the like) are
    /// appended verbatim.
    pub fn write_manifest<W: Write>(&self, mut w: W, extra: &[(&str, String)]) -> io::Result<()> {
        let o = &self.options;
        writeln!(w, "samples = {}", self.samples.len())?;
        writeln!(w, "sample_len = {}", o.sample_len)?;
        writeln!(w, "category = {}", o.category)?;
        writeln!(w, "representation = {}", o.representation)?;
        writeln!(w, "seed = {}", o.seed)?;
        writeln!(w, "scaling = byte/255")?;
        writeln!(w, "padding = zero")?;
        writeln!(
            w,
            "ratios = {},{},{}",
            o.ratios.train, o.ratios.val, o.ratios.test
        )?;
        writeln!(
            w,
            "splits = {},{},{}",
            self.splits.train.len(),
            self.splits.val.len(),
            self.splits.test.len()
        )?;
        writeln!(w, "classes = {}", self.classes.join(","))?;
        for (name, count) in self.classes.iter().zip(self.class_counts()) {
            writeln!(w, "class_count.{name} = {count}")?;
        }
        for s in &self.stats {
            let n = &s.scenario;
            writeln!(w, "scenario.{n}.packets = {}", s.packets)?;
            writeln!(w, "scenario.{n}.units = {}", s.units)?;
            writeln!(w, "scenario.{n}.unparsable = {}", s.excluded.unparsable)?;
            writeln!(
                w,
                "scenario.{n}.no_five_tuple = {}",
                s.excluded.no_five_tuple
            )?;
            writeln!(w, "scenario.{n}.empty_units = {}", s.empty_units)?;
            writeln!(w, "scenario.{n}.truncated_bytes = {}", s.truncated_bytes)?;
            if let Some(e) = &s.read_error {
                writeln!(w, "scenario.{n}.read_error = {e}")?;
            }
        }
        for (k, v) in extra {
            writeln!(w, "{k} = {v}")?;
        }
        Ok(())
    }
}

/// Reads every scenario capture and builds a dataset.
pub fn build_dataset(
    scenarios: &[Scenario],
    options: &DatasetOptions,
) -> Result<Dataset, DatasetError> {
    let mut captures = Vec::with_capacity(scenarios.len());
    let mut read_errors = Vec::with_capacity(scenarios.len());
    for sc in scenarios {
        let (packets, err) =
            read_pcap_lenient(&sc.path).map_err(|source| DatasetError::Ingest {
                path: sc.path.clone(),
                source,
            })?;
        if let Some(e) = &err {
            log::warn!(
                "{}: {e}; keeping {} packets",
                sc.path.display(),
                packets.len()
            );
        }
        read_errors.push(err.map(|e| e.to_string()));
        let name = sc
            .path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| sc.path.display().to_string());
        captures.push(LabeledCapture {
            name,
            label: sc.label.clone(),
            packets,
        });
    }
    let mut ds = build_dataset_from_captures(&captures, options)?;
    for (s, e) in ds.stats.iter_mut().zip(read_errors) {
        s.read_error = e;
    }
    Ok(ds)
}

pub fn build_dataset_from_captures(
    captures: &[LabeledCapture],
    options: &DatasetOptions,
) -> Result<Dataset, DatasetError> {
    if options.sample_len == 0 {
        return Err(DatasetError::ZeroLength);
    }
    options.ratios.validate()?;

    let mut classes: Vec<String> = Vec::new();
    for c in captures {
        if !classes.contains(&c.label) {
            classes.push(c.label.clone());
        }
    }
    if classes.len() < 2 {
        return Err(DatasetError::TooFewClasses(classes.len()));
    }

    let mut samples = Vec::new();
    let mut stats = Vec::with_capacity(captures.len());
    for cap in captures {
        let label = classes.iter().position(|c| *c == cap.label).unwrap();
        let sp = split(&cap.packets, options.representation);
        let encoded: Vec<_> = sp
            .units
            .par_iter()
            .map(|u| {
                (
                    u.key.to_string(),
                    encode_unit(u, options.category, options.sample_len),
                )
            })
            .collect();
        let mut st = ScenarioStats {
            scenario: cap.name.clone(),
            packets: cap.packets.len(),
            units: sp.units.len(),
            excluded: sp.excluded,
            ..Default::default()
        };
        for (key, enc) in encoded {
            match enc {
                Ok(e) => {
                    st.truncated_bytes += e.truncated;
                    samples.push(ByteSample {
                        bytes: e.bytes,
                        content_len: e.content_len,
                        label,
                        meta: SampleMeta {
                            scenario: cap.name.clone(),
                            representation: options.representation,
                            category: options.category,
                            unit_key: key,
                            truncated_bytes: e.truncated,
                        },
                    });
                }
                Err(EncodeError::EmptyUnit(_)) => st.empty_units += 1,
                Err(EncodeError::ZeroLength) => return Err(DatasetError::ZeroLength),
            }
        }
        stats.push(st);
    }

    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let splits = stratified_split(&labels, &classes, &options.ratios, options.seed)?;
    Ok(Dataset {
        samples,
        classes,
        splits,
        options: *options,
        stats,
    })
}

/// Per-class shuffled split. Validation and test take `round(n·ratio)`
/// samples of each class, train takes the remainder; indices in each split
/// are sorted ascending.
pub fn stratified_split(
    labels: &[usize],
    classes: &[String],
    ratios: &SplitRatios,
    seed: u64,
) -> Result<Splits, DatasetError> {
    ratios.validate()?;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes.len()];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let required = ratios.min_class_size();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut splits = Splits::default();
    for (c, mut idx) in by_class.into_iter().enumerate() {
        let n = idx.len();
        if n < required {
            return Err(DatasetError::ClassTooSmall {
                class: classes[c].clone(),
                count: n,
                required,
            });
        }
        idx.shuffle(&mut rng);
        let n_val = (n as f64 * ratios.val).round() as usize;
        let n_test = ((n as f64 * ratios.test).round() as usize).min(n - n_val);
        let n_train = n - n_val - n_test;
        splits.train.extend_from_slice(&idx[..n_train]);
        splits.val.extend_from_slice(&idx[n_train..n_train + n_val]);
        splits.test.extend_from_slice(&idx[n_train + n_val..]);
    }
    splits.train.sort_unstable();
    splits.val.sort_unstable();
    splits.test.sort_unstable();
    Ok(splits)
}

const HEX_MAGIC: &str = "# bytecnn-hex v1";

/// Writes one `label,hexdigits` line per sample, preceded by `#` lines that
/// carry the class names, options and split membership. Only the content
/// bytes of each sample are written; padding is restored on import.
pub fn export_hex(ds: &Dataset, path: impl AsRef<Path>) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_hex(ds, &mut w)?;
    w.flush()
}

pub fn write_hex<W: Write>(ds: &Dataset, mut w: W) -> io::Result<()> {
    let o = &ds.options;
    writeln!(w, "{HEX_MAGIC}")?;
    writeln!(w, "# classes={}", ds.classes.join(","))?;
    writeln!(w, "# sample_len={}", o.sample_len)?;
    writeln!(w, "# category={}", o.category)?;
    writeln!(w, "# representation={}", o.representation)?;
    writeln!(w, "# seed={}", o.seed)?;
    writeln!(
        w,
        "# ratios={},{},{}",
        o.ratios.train, o.ratios.val, o.ratios.test
    )?;
    let mut tags = vec!['.'; ds.samples.len()];
    for (list, t) in [
        (&ds.splits.train, 'T'),
        (&ds.splits.val, 'V'),
        (&ds.splits.test, 'E'),
    ] {
        for &i in list {
            tags[i] = t;
        }
    }
    writeln!(w, "# splits={}", tags.into_iter().collect::<String>())?;
    for s in &ds.samples {
        writeln!(w, "{},{}", s.label, hex::encode(&s.bytes[..s.content_len]))?;
    }
    Ok(())
}

pub fn import_hex(path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    read_hex(BufReader::new(File::open(path)?))
}

fn bad(line: usize, reason: impl Into<String>) -> DatasetError {
    DatasetError::BadHexLine {
        line,
        reason: reason.into(),
    }
}

pub fn read_hex<R: BufRead>(r: R) -> Result<Dataset, DatasetError> {
    let mut header: BTreeMap<String, (usize, String)> = BTreeMap::new();
    // (line number, label, bytes)
    let mut rows: Vec<(usize, usize, Vec<u8>)> = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.trim().split_once('=') {
                header.insert(k.trim().to_string(), (line_no, v.trim().to_string()));
            }
            continue;
        }
        let (label, digits) = line
            .split_once(',')
            .ok_or_else(|| bad(line_no, "expected 'label,hexdigits'"))?;
        let label: usize = label
            .trim()
            .parse()
            .map_err(|_| bad(line_no, format!("label '{label}' is not a class index")))?;
        let digits = digits.trim();
        if digits.len() % 2 != 0 {
            return Err(bad(line_no, "odd number of hex digits"));
        }
        let bytes = hex::decode(digits).map_err(|e| bad(line_no, e.to_string()))?;
        rows.push((line_no, label, bytes));
    }

    let get = |k: &str| header.get(k);
    let parse_field = |k: &str| -> Result<Option<usize>, DatasetError> {
        get(k)
            .map(|(ln, v)| v.parse().map_err(|_| bad(*ln, format!("bad {k} '{v}'"))))
            .transpose()
    };
    let max_label = rows.iter().map(|r| r.1).max();
    let classes: Vec<String> = match get("classes") {
        Some((_, v)) if !v.is_empty() => v.split(',').map(str::to_string).collect(),
        _ => (0..max_label.map_or(0, |m| m + 1))
            .map(|i| i.to_string())
            .collect(),
    };
    if let Some(m) = max_label {
        if m >= classes.len() {
            let line = rows.iter().find(|r| r.1 == m).unwrap().0;
            return Err(bad(
                line,
                format!("label {m} outside {} classes", classes.len()),
            ));
        }
    }
    let longest = rows.iter().map(|r| r.2.len()).max().unwrap_or(0);
    let sample_len = parse_field("sample_len")?.unwrap_or(longest.max(1));
    if let Some(r) = rows.iter().find(|r| r.2.len() > sample_len) {
        return Err(bad(r.0, "sample longer than sample_len"));
    }
    let mut options = DatasetOptions {
        sample_len,
        seed: parse_field("seed")?.unwrap_or(0) as u64,
        ..Default::default()
    };
    if let Some((ln, v)) = get("category") {
        options.category = v.parse().map_err(|e: String| bad(*ln, e))?;
    }
    if let Some((ln, v)) = get("representation") {
        options.representation = v.parse().map_err(|e: String| bad(*ln, e))?;
    }
    if let Some((ln, v)) = get("ratios") {
        let parts: Vec<f64> = v
            .split(',')
            .map(|x| x.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad(*ln, "bad ratios"))?;
        if parts.len() != 3 {
            return Err(bad(*ln, "ratios need three values"));
        }
        options.ratios = SplitRatios {
            train: parts[0],
            val: parts[1],
            test: parts[2],
        };
    }

    let mut splits = Splits::default();
    match get("splits") {
        Some((ln, tags)) => {
            if tags.chars().count() != rows.len() {
                return Err(bad(*ln, "split tag count differs from sample count"));
            }
            for (i, t) in tags.chars().enumerate() {
                match t {
                    'T' => splits.train.push(i),
                    'V' => splits.val.push(i),
                    'E' => splits.test.push(i),
                    '.' => {}
                    other => return Err(bad(*ln, format!("unknown split tag '{other}'"))),
                }
            }
        }
        None => splits.train = (0..rows.len()).collect(),
    }

    let samples = rows
        .into_iter()
        .enumerate()
        .map(|(i, (_, label, mut bytes))| {
            let content_len = bytes.len();
            bytes.resize(sample_len, 0);
            ByteSample {
                bytes,
                content_len,
                label,
                meta: SampleMeta {
                    scenario: classes[label].clone(),
                    representation: options.representation,
                    category: options.category,
                    unit_key: format!("#{i}"),
                    truncated_bytes: 0,
                },
            }
        })
        .collect();
    Ok(Dataset {
        samples,
        classes,
        splits,
        options,
        stats: Vec::new(),
    })
}
