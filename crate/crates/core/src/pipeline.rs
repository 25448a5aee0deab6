//! End-to-end commands: split, encode, train, eval, bench, sweep, synth and
//! verify, driven by one layered configuration.
//!
//! Configuration is a TOML file layered over built-in defaults, with dotted
//! `key=value` overrides on top. Every artifact carries the configuration
//! hash and seed so `verify` can tie it back to the config that produced it.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bench::{bench_inference, BenchError, BenchLock, BenchReport};
use crate::dataset::{
    build_dataset_from_captures, export_hex, Dataset, DatasetError, DatasetOptions, LabeledCapture,
    Scenario, SplitRatios,
};
use crate::encoder::{HeaderCategory, DEFAULT_SAMPLE_LEN};
use crate::ingest::{read_pcap_lenient, IngestError};
use crate::metrics::{confusion, metrics, MetricsError, MetricsReport};
use crate::network::{
    evaluate, load_model, save_model, train, Head, Network, NetworkConfig, NetworkError,
    OptimizerKind, Padding, TrainConfig, TrainError, TrainHistory,
};
use crate::report::{emit_report, render_bench, render_grid, GridCell, ReportOutcome, Task};
use crate::splitter::{split, Representation};
use crate::synth::{generate_class_fixtures, SynthError, SynthSpec};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Input {
        path: PathBuf,
        #[source]
        source: IngestError,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("training diverged in epoch {epoch}; partial history written to {history}")]
    Diverged { epoch: usize, history: PathBuf },
    #[error(transparent)]
    Train(TrainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{path}: config hash {found} does not match {expected}")]
    HashMismatch {
        path: PathBuf,
        found: String,
        expected: String,
    },
    #[error("{0}: no config hash recorded")]
    NoHash(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl PipelineError {
    /// Process exit code by error category.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Input { .. } | PipelineError::Io { .. } => 3,
            PipelineError::Dataset(_) | PipelineError::Synth(_) | PipelineError::Metrics(_) => 4,
            PipelineError::Network(_) | PipelineError::Train(_) => 5,
            PipelineError::Diverged { .. } => 6,
            PipelineError::Bench(BenchError::Locked { .. }) => 7,
            PipelineError::Bench(_) => 5,
            PipelineError::HashMismatch { .. } | PipelineError::NoHash(_) => 8,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pool: usize,
    pub dropout_rate: f64,
    pub head: Head,
    pub padding: Padding,
}

impl Default for NetworkSection {
    fn default() -> Self {
        let d = NetworkConfig::default();
        NetworkSection {
            conv1_filters: d.conv1_filters,
            conv2_filters: d.conv2_filters,
            kernel: d.kernel,
            stride: d.stride,
            pool: d.pool,
            dropout_rate: d.dropout_rate,
            head: d.head,
            padding: d.padding,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerName {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerName,
    pub learning_rate: f64,
    pub momentum: f64,
    pub stop_at_perfect: bool,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            epochs: 50,
            batch_size: 32,
            optimizer: OptimizerName::Adam,
            learning_rate: 1e-3,
            momentum: 0.0,
            stop_at_perfect: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub repetitions: usize,
    /// Relative paths resolve against the output directory.
    pub lock_file: PathBuf,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection {
            repetitions: 5,
            lock_file: PathBuf::from("bench.lock"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub representation: Representation,
    pub category: HeaderCategory,
    pub sample_len: usize,
    pub ratios: SplitRatios,
    pub output_dir: PathBuf,
    pub scenarios: Vec<Scenario>,
    pub network: NetworkSection,
    pub training: TrainingSection,
    pub bench: BenchSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            representation: Representation::Packet,
            category: HeaderCategory::AllHeaders,
            sample_len: DEFAULT_SAMPLE_LEN,
            ratios: SplitRatios::default(),
            output_dir: PathBuf::from("out"),
            scenarios: Vec::new(),
            network: NetworkSection::default(),
            training: TrainingSection::default(),
            bench: BenchSection::default(),
        }
    }
}

/// Parses an override value as TOML, falling back to a bare string.
fn override_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_override(root: &mut toml::Table, key: &str, raw: &str) -> Result<(), PipelineError> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| PipelineError::Config(format!("'{p}' in '{key}' is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), override_value(raw));
    Ok(())
}

impl PipelineConfig {
    /// Defaults, then `file` (if any), then `overrides` (`dotted.key=value`).
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self, PipelineError> {
        let mut root = match file {
            Some(p) => fs::read_to_string(p)
                .map_err(io_err(p))?
                .parse::<toml::Table>()
                .map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?,
            None => toml::Table::new(),
        };
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| PipelineError::Config(format!("override '{o}' is not key=value")))?;
            apply_override(&mut root, k.trim(), v.trim())?;
        }
        let cfg: PipelineConfig = toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| PipelineError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hash of every setting that influences results (the output directory
    /// and bench settings are excluded). 16 hex digits of SHA-256.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.bench = BenchSection::default();
        let digest = Sha256::digest(c.to_toml().as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.scenarios.is_empty() {
            return Err(PipelineError::Config("no scenarios configured".into()));
        }
        for s in &self.scenarios {
            if !s.path.is_file() {
                return Err(PipelineError::Input {
                    path: s.path.clone(),
                    source: IngestError::Io(io::Error::new(
                        io::ErrorKind::NotFound,
                        "capture file not found",
                    )),
                });
            }
        }
        if self.sample_len == 0 {
            return Err(PipelineError::Config("sample_len must be positive".into()));
        }
        if self.training.epochs == 0 {
            return Err(PipelineError::Config(
                "training.epochs must be at least 1".into(),
            ));
        }
        if self.training.batch_size == 0 {
            return Err(PipelineError::Config(
                "training.batch_size must be at least 1".into(),
            ));
        }
        self.ratios.validate()?;
        Ok(())
    }

    pub fn dataset_options(&self) -> DatasetOptions {
        DatasetOptions {
            representation: self.representation,
            category: self.category,
            sample_len: self.sample_len,
            ratios: self.ratios,
            seed: self.seed,
        }
    }

    pub fn network_config(&self, n_classes: usize) -> NetworkConfig {
        let n = &self.network;
        NetworkConfig {
            input_len: self.sample_len,
            conv1_filters: n.conv1_filters,
            conv2_filters: n.conv2_filters,
            kernel: n.kernel,
            stride: n.stride,
            pool: n.pool,
            dropout_rate: n.dropout_rate,
            n_classes,
            head: n.head,
            padding: n.padding,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            optimizer: match t.optimizer {
                OptimizerName::Adam => OptimizerKind::adam(t.learning_rate),
                OptimizerName::Sgd => OptimizerKind::Sgd {
                    lr: t.learning_rate,
                    momentum: t.momentum,
                },
            },
            seed: self.seed,
            stop_at_perfect: t.stop_at_perfect,
        }
    }

    fn stamp(&self) -> Vec<(&'static str, String)> {
        vec![
            ("config_hash", self.config_hash()),
            ("seed", self.seed.to_string()),
        ]
    }

    fn out(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }

    fn ensure_output(&self) -> Result<(), PipelineError> {
        fs::create_dir_all(&self.output_dir).map_err(io_err(&self.output_dir))
    }

    fn lock_path(&self) -> PathBuf {
        if self.bench.lock_file.is_absolute() {
            self.bench.lock_file.clone()
        } else {
            self.output_dir.join(&self.bench.lock_file)
        }
    }
}

fn write_file(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<fs::File>) -> io::Result<()>,
) -> Result<(), PipelineError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(io_err(path))
}

fn scenario_name(s: &Scenario) -> String {
    s.path
        .file_stem()
        .map(|x| x.to_string_lossy().into_owned())
        .unwrap_or_else(|| s.path.display().to_string())
}

/// Reads every configured capture into memory.
pub fn load_captures(cfg: &PipelineConfig) -> Result<Vec<LabeledCapture>, PipelineError> {
    cfg.scenarios
        .iter()
        .map(|s| {
            let (packets, err) =
                read_pcap_lenient(&s.path).map_err(|source| PipelineError::Input {
                    path: s.path.clone(),
                    source,
                })?;
            if let Some(e) = err {
                log::warn!(
                    "{}: {e}; keeping {} packets",
                    s.path.display(),
                    packets.len()
                );
            }
            Ok(LabeledCapture {
                name: scenario_name(s),
                label: s.label.clone(),
                packets,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSummary {
    pub scenario: String,
    pub representation: Representation,
    pub packets: usize,
    pub units: usize,
    pub unparsable: usize,
    pub no_five_tuple: usize,
    pub manifest: PathBuf,
}

/// Splits every scenario and writes one unit manifest per scenario plus a
/// summary of unit and exclusion counts.
pub fn run_split(cfg: &PipelineConfig) -> Result<Vec<SplitSummary>, PipelineError> {
    cfg.validate()?;
    cfg.ensure_output()?;
    let captures = load_captures(cfg)?;
    let mut out = Vec::new();
    for cap in &captures {
        let sp = split(&cap.packets, cfg.representation);
        let manifest = cfg.out(&format!("{}.{}.manifest", cap.name, cfg.representation));
        write_file(&manifest, |w| {
            for (k, v) in cfg.stamp() {
                writeln!(w, "# {k}={v}")?;
            }
            sp.write_manifest(w)
        })?;
        out.push(SplitSummary {
            scenario: cap.name.clone(),
            representation: cfg.representation,
            packets: sp.total_packets,
            units: sp.units.len(),
            unparsable: sp.excluded.unparsable,
            no_five_tuple: sp.excluded.no_five_tuple,
            manifest,
        });
    }
    let summary = cfg.out(&format!("split-summary.{}.txt", cfg.representation));
    write_file(&summary, |w| {
        for (k, v) in cfg.stamp() {
            writeln!(w, "{k} = {v}")?;
        }
        writeln!(w, "representation = {}", cfg.representation)?;
        for s in &out {
            let n = &s.scenario;
            writeln!(w, "{n}.packets = {}", s.packets)?;
            writeln!(w, "{n}.units = {}", s.units)?;
            writeln!(w, "{n}.excluded.unparsable = {}", s.unparsable)?;
            writeln!(w, "{n}.excluded.no_five_tuple = {}", s.no_five_tuple)?;
        }
        Ok(())
    })?;
    Ok(out)
}

pub fn build(cfg: &PipelineConfig, captures: &[LabeledCapture]) -> Result<Dataset, PipelineError> {
    Ok(build_dataset_from_captures(
        captures,
        &cfg.dataset_options(),
    )?)
}

/// Builds the dataset and writes `dataset.hex` and `dataset.manifest`.
pub fn run_encode(cfg: &PipelineConfig) -> Result<Dataset, PipelineError> {
    cfg.validate()?;
    cfg.ensure_output()?;
    let ds = build(cfg, &load_captures(cfg)?)?;
    let hex_path = cfg.out("dataset.hex");
    export_hex(&ds, &hex_path).map_err(io_err(&hex_path))?;
    append_stamp(&hex_path, cfg, "# ")?;
    let manifest = cfg.out("dataset.manifest");
    write_file(&manifest, |w| ds.write_manifest(w, &cfg.stamp()))?;
    Ok(ds)
}

fn append_stamp(path: &Path, cfg: &PipelineConfig, prefix: &str) -> Result<(), PipelineError> {
    let mut f = fs::OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    for (k, v) in cfg.stamp() {
        writeln!(f, "{prefix}{k}={v}").map_err(io_err(path))?;
    }
    Ok(())
}

fn model_metadata(cfg: &PipelineConfig, ds: &Dataset) -> String {
    let mut m = String::new();
    for (k, v) in cfg.stamp() {
        m.push_str(&format!("{k}={v}\n"));
    }
    m.push_str("activation=relu\n");
    m.push_str("scaling=byte/255\n");
    m.push_str(&format!("classes={}\n", ds.classes.join(",")));
    m.push_str(&format!("representation={}\n", ds.options.representation));
    m.push_str(&format!("category={}\n", ds.options.category));
    m
}

fn write_history(path: &Path, cfg: &PipelineConfig, h: &TrainHistory) -> Result<(), PipelineError> {
    write_file(path, |w| {
        for (k, v) in cfg.stamp() {
            writeln!(w, "# {k}={v}")?;
        }
        h.write_csv(w)
    })
}

pub struct TrainOutcome {
    pub network: Network,
    pub history: TrainHistory,
    pub dataset: Dataset,
    pub model_path: PathBuf,
    pub history_path: PathBuf,
}

/// Trains on the configured scenarios; writes `model.bcnn` and
/// `history.csv`.
pub fn run_train(cfg: &PipelineConfig) -> Result<TrainOutcome, PipelineError> {
    cfg.validate()?;
    cfg.ensure_output()?;
    let ds = build(cfg, &load_captures(cfg)?)?;
    let nc = cfg.network_config(ds.n_classes());
    log::info!(
        "training {} parameters on {} samples",
        nc.geometry()?.param_count(),
        ds.splits.train.len()
    );
    let history_path = cfg.out("history.csv");
    let (network, history) = match train(&ds, &nc, &cfg.train_config()) {
        Ok(r) => r,
        Err(TrainError::DivergedLoss { epoch, history }) => {
            write_history(&history_path, cfg, &history)?;
            return Err(PipelineError::Diverged {
                epoch,
                history: history_path,
            });
        }
        Err(e) => return Err(PipelineError::Train(e)),
    };
    write_history(&history_path, cfg, &history)?;
    let model_path = cfg.out("model.bcnn");
    save_model(&network, &model_metadata(cfg, &ds), &model_path)?;
    Ok(TrainOutcome {
        network,
        history,
        dataset: ds,
        model_path,
        history_path,
    })
}

fn check_model_fits(net: &Network, ds: &Dataset) -> Result<(), PipelineError> {
    let c = net.config();
    if c.input_len != ds.sample_len() || c.n_classes != ds.n_classes() {
        return Err(PipelineError::Network(NetworkError::InvalidConfig(
            format!(
                "model expects {} bytes and {} classes; dataset has {} bytes and {} classes",
                c.input_len,
                c.n_classes,
                ds.sample_len(),
                ds.n_classes()
            ),
        )));
    }
    Ok(())
}

/// Test-split metrics for a trained network.
pub fn evaluate_test(net: &Network, ds: &Dataset) -> Result<MetricsReport, PipelineError> {
    check_model_fits(net, ds)?;
    let test = ds.subset(&ds.splits.test);
    let (_, _, preds) = evaluate(net, &test)?;
    let labels: Vec<usize> = test.iter().map(|s| s.label).collect();
    Ok(metrics(&confusion(&preds, &labels, ds.n_classes())?)?)
}

/// Evaluates a saved model on the test split and writes `eval.txt`/`.csv`.
pub fn run_eval(cfg: &PipelineConfig, model: &Path) -> Result<MetricsReport, PipelineError> {
    cfg.validate()?;
    cfg.ensure_output()?;
    let (net, _) = load_model(model)?;
    let ds = build(cfg, &load_captures(cfg)?)?;
    let m = evaluate_test(&net, &ds)?;
    let cell = GridCell {
        representation: cfg.representation,
        category: cfg.category,
        metrics: m.clone(),
    };
    let mut preamble = cfg.stamp();
    for (name, cm) in ds.classes.iter().zip(&m.per_class) {
        preamble.push((
            "class",
            format!(
                "{name} precision={:.4} recall={:.4} f1={:.4} support={}",
                cm.precision, cm.recall, cm.f1, cm.support
            ),
        ));
    }
    // A single cell; the incomplete-grid warning of emit_report is noise here.
    let (text, csv, _) = render_grid(&[cell], Some(Task::for_classes(ds.n_classes())), &preamble);
    for (ext, body) in [("txt", text), ("csv", csv)] {
        let p = cfg.out(&format!("eval.{ext}"));
        fs::write(&p, body).map_err(io_err(&p))?;
    }
    Ok(m)
}

/// Times inference of a saved model over the test split under the bench
/// lock; writes `bench.txt`/`.csv`.
pub fn run_bench(cfg: &PipelineConfig, model: &Path) -> Result<BenchReport, PipelineError> {
    cfg.validate()?;
    cfg.ensure_output()?;
    let _lock = BenchLock::acquire(cfg.lock_path())?;
    let (net, _) = load_model(model)?;
    let ds = build(cfg, &load_captures(cfg)?)?;
    check_model_fits(&net, &ds)?;
    let report = bench_inference(&net, &ds.subset(&ds.splits.test), cfg.bench.repetitions)?;
    write_bench(cfg, &[(cfg.representation, report)])?;
    Ok(report)
}

fn write_bench(
    cfg: &PipelineConfig,
    rows: &[(Representation, BenchReport)],
) -> Result<(), PipelineError> {
    let (text, csv) = render_bench(rows, true);
    let stamp: String = cfg
        .stamp()
        .into_iter()
        .map(|(k, v)| format!("# {k}={v}\n"))
        .collect();
    let t = cfg.out("bench.txt");
    fs::write(&t, format!("{stamp}{text}")).map_err(io_err(&t))?;
    let c = cfg.out("bench.csv");
    fs::write(&c, format!("{stamp}{csv}")).map_err(io_err(&c))?;
    Ok(())
}

pub struct SweepOutcome {
    pub cells: Vec<GridCell>,
    pub report: ReportOutcome,
    pub bench: Vec<(Representation, BenchReport)>,
}

/// Trains and evaluates every representation × category cell. Cells run in
/// parallel; each is deterministic on its own, so the grid report is
/// identical across runs. With `bench`, each representation's all-headers
/// model is then timed sequentially under the bench lock.
pub fn run_sweep(cfg: &PipelineConfig, bench: bool) -> Result<SweepOutcome, PipelineError> {
    cfg.validate()?;
    cfg.ensure_output()?;
    let captures = load_captures(cfg)?;
    let grid: Vec<(Representation, HeaderCategory)> = Representation::ALL
        .iter()
        .flat_map(|r| HeaderCategory::ALL.iter().map(move |c| (*r, *c)))
        .collect();
    let results: Vec<(GridCell, Network, Dataset)> = grid
        .par_iter()
        .map(|&(rep, cat)| {
            let mut cell_cfg = cfg.clone();
            cell_cfg.representation = rep;
            cell_cfg.category = cat;
            let ds = build(&cell_cfg, &captures)?;
            let nc = cell_cfg.network_config(ds.n_classes());
            let (net, _) = train(&ds, &nc, &cell_cfg.train_config()).map_err(|e| match e {
                TrainError::DivergedLoss { epoch, .. } => PipelineError::Diverged {
                    epoch,
                    history: PathBuf::from(format!("<sweep {}/{}>", rep.tag(), cat.name())),
                },
                other => PipelineError::Train(other),
            })?;
            let m = evaluate_test(&net, &ds)?;
            log::info!(
                "{} {}: accuracy {:.4} f1 {:.4}",
                rep.tag(),
                cat.name(),
                m.accuracy,
                m.weighted_f1
            );
            Ok((
                GridCell {
                    representation: rep,
                    category: cat,
                    metrics: m,
                },
                net,
                ds,
            ))
        })
        .collect::<Result<_, PipelineError>>()?;

    let cells: Vec<GridCell> = results.iter().map(|r| r.0.clone()).collect();
    let n_classes = results.first().map_or(2, |r| r.2.n_classes());
    let report = emit_report(
        &cells,
        Some(Task::for_classes(n_classes)),
        &cfg.stamp(),
        &cfg.output_dir,
        "sweep",
    )
    .map_err(io_err(&cfg.output_dir))?;

    let mut bench_rows = Vec::new();
    if bench {
        let _lock = BenchLock::acquire(cfg.lock_path())?;
        for (cell, net, ds) in &results {
            if cell.category != HeaderCategory::AllHeaders {
                continue;
            }
            let r = bench_inference(net, &ds.subset(&ds.splits.test), cfg.bench.repetitions)?;
            bench_rows.push((cell.representation, r));
        }
        write_bench(cfg, &bench_rows)?;
    }
    Ok(SweepOutcome {
        cells,
        report,
        bench: bench_rows,
    })
}

/// Writes one capture per class under `dir` plus a `pipeline.toml` that
/// lists them as scenarios.
pub fn run_synth(spec: &SynthSpec, dir: &Path) -> Result<Vec<Scenario>, PipelineError> {
    let scenarios = generate_class_fixtures(spec, dir)?;
    let cfg = PipelineConfig {
        seed: spec.seed,
        scenarios: scenarios.clone(),
        output_dir: dir.join("out"),
        ..Default::default()
    };
    let path = dir.join("pipeline.toml");
    fs::write(&path, cfg.to_toml()).map_err(io_err(&path))?;
    Ok(scenarios)
}

/// Pulls the recorded `config_hash` out of any artifact this module writes.
pub fn recorded_hash(path: &Path) -> Result<Option<String>, PipelineError> {
    let text = if path.extension().is_some_and(|e| e == "bcnn") {
        load_model(path)?.1
    } else {
        fs::read_to_string(path).map_err(io_err(path))?
    };
    for line in text.lines() {
        let line = line.trim_start_matches('#').trim();
        if let Some((k, v)) = line.split_once('=') {
            if k.trim() == "config_hash" {
                return Ok(Some(v.trim().to_string()));
            }
        }
    }
    Ok(None)
}

/// Checks that each artifact records the hash of `cfg`.
pub fn verify(cfg: &PipelineConfig, artifacts: &[PathBuf]) -> Result<String, PipelineError> {
    let expected = cfg.config_hash();
    for a in artifacts {
        match recorded_hash(a)? {
            Some(h) if h == expected => {}
            Some(found) => {
                return Err(PipelineError::HashMismatch {
                    path: a.clone(),
                    found,
                    expected,
                })
            }
            None => return Err(PipelineError::NoHash(a.clone())),
        }
    }
    Ok(expected)
}
