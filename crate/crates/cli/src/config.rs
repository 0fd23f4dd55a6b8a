//! Experiment configuration files.
//!
//! The format is line-oriented `key = value` pairs grouped under
//! `[section]` headers; `#` starts a comment. Sections: `[experiment]`
//! (kind, runs, base_seed, out_dir), `[data]`, `[network]` (for training
//! experiments), `[train]`, `[shade_ils]`, `[topo]`. Every field of the
//! resolved config, defaults included, is embedded in the run outputs.

use crate::error::{CliError, CliResult};
use evotrain_core::optim::OptimizerKind;
use evotrain_core::schedule::{ScheduleConfig, ScheduleKind};
use evotrain_core::topo::EaConfig;
use evotrain_core::train::TrainingConfig;
use evotrain_core::NetworkSpec;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    GradientTrain,
    ShadeIlsTrain,
    TopoEvolve,
    RandomTopo,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::GradientTrain => "gradient-train",
            ExperimentKind::ShadeIlsTrain => "shade-ils-train",
            ExperimentKind::TopoEvolve => "topo-evolve",
            ExperimentKind::RandomTopo => "random-topo",
        }
    }

    pub fn parse(s: &str) -> CliResult<Self> {
        Ok(match s {
            "gradient-train" => ExperimentKind::GradientTrain,
            "shade-ils-train" => ExperimentKind::ShadeIlsTrain,
            "topo-evolve" => ExperimentKind::TopoEvolve,
            "random-topo" => ExperimentKind::RandomTopo,
            other => return Err(CliError::Config(format!("unknown experiment kind `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSource {
    /// IDX image/label file pairs.
    Idx,
    /// EVT1 raw tensor container (u8, `[M, H, W, C]`) plus IDX labels.
    Evt1,
    /// Seeded synthetic blobs.
    Synthetic,
}

#[derive(Debug, Clone)]
pub struct DataConfig {
    pub source: DataSource,
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    /// 0 means "use the maximum label + 1".
    pub num_classes: usize,
    /// EVT1 RGB data: convert to luma before normalizing.
    pub grayscale: bool,
    /// 0 disables subsampling.
    pub subsample_train: usize,
    pub subsample_test: usize,
    pub stratified: bool,
    // synthetic parameters
    pub classes: usize,
    pub per_class: usize,
    pub test_per_class: usize,
    pub image_hw: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            train_images: PathBuf::new(),
            train_labels: PathBuf::new(),
            test_images: PathBuf::new(),
            test_labels: PathBuf::new(),
            num_classes: 0,
            grayscale: false,
            subsample_train: 0,
            subsample_test: 0,
            stratified: true,
            classes: 10,
            per_class: 100,
            test_per_class: 20,
            image_hw: 28,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub runs: u32,
    pub base_seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    /// Resolved network (training experiments).
    pub network: Option<NetworkSpec>,
    pub network_file: Option<PathBuf>,
    /// Gradient training block (seed filled per run).
    pub train: TrainingConfig,
    /// Scheduled metaheuristic block (seed filled per run).
    pub shade: ScheduleConfig,
    /// Evolution block (seed filled per run).
    pub topo: EaConfig,
    pub topo_fast: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::GradientTrain,
            runs: 5,
            base_seed: 42,
            out_dir: PathBuf::from("out"),
            data: DataConfig::default(),
            network: None,
            network_file: None,
            train: TrainingConfig {
                optimizer: OptimizerKind::Adam,
                learning_rate: 0.01,
                batch_size: 128,
                epochs: 20,
                seed: 0,
            },
            shade: ScheduleConfig::default(),
            topo: EaConfig::default(),
            topo_fast: false,
        }
    }
}

fn parse_sections(text: &str) -> CliResult<BTreeMap<String, BTreeMap<String, String>>> {
    let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    let mut current = String::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            current = name.trim().to_string();
            sections.entry(current.clone()).or_default();
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::Config(format!("line {}: expected `key = value`", lineno + 1))
        })?;
        if current.is_empty() {
            return Err(CliError::Config(format!(
                "line {}: key outside any [section]",
                lineno + 1
            )));
        }
        sections
            .get_mut(&current)
            .expect("section exists")
            .insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(sections)
}

struct Section<'a> {
    name: &'a str,
    map: &'a BTreeMap<String, String>,
}

impl Section<'_> {
    fn get<T: std::str::FromStr>(&self, key: &str, into: &mut T) -> CliResult<()>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = self.map.get(key) {
            *into = v
                .parse::<T>()
                .map_err(|e| CliError::Config(format!("[{}] {key}: {e}", self.name)))?;
        }
        Ok(())
    }
}

const KNOWN_KEYS: &[(&str, &[&str])] = &[
    ("experiment", &["kind", "runs", "base_seed", "out_dir"]),
    (
        "data",
        &[
            "source",
            "train_images",
            "train_labels",
            "test_images",
            "test_labels",
            "num_classes",
            "grayscale",
            "subsample_train",
            "subsample_test",
            "stratified",
            "classes",
            "per_class",
            "test_per_class",
            "image_hw",
        ],
    ),
    ("network", &["file"]),
    ("train", &["optimizer", "learning_rate", "batch_size", "epochs"]),
    (
        "shade_ils",
        &[
            "schedule",
            "n_eval",
            "population",
            "epochs",
            "frac_global",
            "weight_bound",
        ],
    ),
    (
        "topo",
        &[
            "lambda",
            "mu",
            "cxpb",
            "mutpb",
            "newpb",
            "ngen",
            "stagnation_limit",
            "fast",
        ],
    ),
];

impl ExperimentConfig {
    /// Parses and resolves a config file; referenced files must exist.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses config text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> CliResult<Self> {
        let sections = parse_sections(text)?;
        for (section, keys) in &sections {
            let known = KNOWN_KEYS.iter().find(|(s, _)| s == section).ok_or_else(|| {
                CliError::Config(format!("unknown section [{section}]"))
            })?;
            for key in keys.keys() {
                if !known.1.contains(&key.as_str()) {
                    return Err(CliError::Config(format!(
                        "unknown key `{key}` in [{section}]"
                    )));
                }
            }
        }
        let mut cfg = ExperimentConfig::default();
        let empty = BTreeMap::new();
        let sec = |name: &'static str| Section {
            name,
            map: sections.get(name).unwrap_or(&empty),
        };

        let exp = sec("experiment");
        let mut kind_str = cfg.kind.name().to_string();
        exp.get("kind", &mut kind_str)?;
        cfg.kind = ExperimentKind::parse(&kind_str)?;
        exp.get("runs", &mut cfg.runs)?;
        exp.get("base_seed", &mut cfg.base_seed)?;
        let mut out_dir = cfg.out_dir.display().to_string();
        exp.get("out_dir", &mut out_dir)?;
        cfg.out_dir = resolve_path(base, &out_dir);
        if cfg.runs == 0 {
            return Err(CliError::Config("runs must be >= 1".to_string()));
        }

        let data = sec("data");
        let mut source = String::from("synthetic");
        data.get("source", &mut source)?;
        cfg.data.source = match source.as_str() {
            "idx" => DataSource::Idx,
            "evt1" => DataSource::Evt1,
            "synthetic" => DataSource::Synthetic,
            other => {
                return Err(CliError::Config(format!("unknown data source `{other}`")))
            }
        };
        for (key, field) in [
            ("train_images", &mut cfg.data.train_images),
            ("train_labels", &mut cfg.data.train_labels),
            ("test_images", &mut cfg.data.test_images),
            ("test_labels", &mut cfg.data.test_labels),
        ] {
            let mut s = String::new();
            data.get(key, &mut s)?;
            if !s.is_empty() {
                *field = resolve_path(base, &s);
            }
        }
        data.get("num_classes", &mut cfg.data.num_classes)?;
        data.get("grayscale", &mut cfg.data.grayscale)?;
        data.get("subsample_train", &mut cfg.data.subsample_train)?;
        data.get("subsample_test", &mut cfg.data.subsample_test)?;
        data.get("stratified", &mut cfg.data.stratified)?;
        data.get("classes", &mut cfg.data.classes)?;
        data.get("per_class", &mut cfg.data.per_class)?;
        data.get("test_per_class", &mut cfg.data.test_per_class)?;
        data.get("image_hw", &mut cfg.data.image_hw)?;

        if cfg.data.source != DataSource::Synthetic {
            for (what, p) in [
                ("train_images", &cfg.data.train_images),
                ("train_labels", &cfg.data.train_labels),
                ("test_images", &cfg.data.test_images),
                ("test_labels", &cfg.data.test_labels),
            ] {
                if p.as_os_str().is_empty() {
                    return Err(CliError::Config(format!("[data] {what} is required")));
                }
                if !p.exists() {
                    return Err(CliError::Data(format!(
                        "[data] {what}: no such file {}",
                        p.display()
                    )));
                }
            }
        }

        let net = sec("network");
        let mut net_file = String::new();
        net.get("file", &mut net_file)?;
        if !net_file.is_empty() {
            let p = resolve_path(base, &net_file);
            let text = std::fs::read_to_string(&p).map_err(|e| {
                CliError::Data(format!("network file {}: {e}", p.display()))
            })?;
            let network = NetworkSpec::from_text(&text).map_err(CliError::config)?;
            network.validate().map_err(CliError::config)?;
            cfg.network_file = Some(p);
            cfg.network = Some(network);
        }

        let train = sec("train");
        let mut opt = cfg.train.optimizer.name().to_string();
        train.get("optimizer", &mut opt)?;
        cfg.train.optimizer = OptimizerKind::parse(&opt).map_err(CliError::config)?;
        train.get("learning_rate", &mut cfg.train.learning_rate)?;
        train.get("batch_size", &mut cfg.train.batch_size)?;
        train.get("epochs", &mut cfg.train.epochs)?;

        let shade = sec("shade_ils");
        let mut sched = cfg.shade.kind.name().to_string();
        shade.get("schedule", &mut sched)?;
        cfg.shade.kind = ScheduleKind::parse(&sched).map_err(CliError::config)?;
        shade.get("n_eval", &mut cfg.shade.n_eval)?;
        shade.get("population", &mut cfg.shade.np)?;
        shade.get("epochs", &mut cfg.shade.epochs)?;
        shade.get("frac_global", &mut cfg.shade.frac_global)?;
        shade.get("weight_bound", &mut cfg.shade.weight_bound)?;

        let topo = sec("topo");
        topo.get("lambda", &mut cfg.topo.lambda)?;
        topo.get("mu", &mut cfg.topo.mu)?;
        topo.get("cxpb", &mut cfg.topo.cxpb)?;
        topo.get("mutpb", &mut cfg.topo.mutpb)?;
        topo.get("newpb", &mut cfg.topo.newpb)?;
        topo.get("ngen", &mut cfg.topo.ngen)?;
        topo.get("stagnation_limit", &mut cfg.topo.stagnation_limit)?;
        topo.get("fast", &mut cfg.topo_fast)?;

        cfg.check_kind_requirements()?;
        Ok(cfg)
    }

    fn check_kind_requirements(&self) -> CliResult<()> {
        match self.kind {
            ExperimentKind::GradientTrain | ExperimentKind::ShadeIlsTrain => {
                if self.network.is_none() {
                    return Err(CliError::Config(format!(
                        "experiment kind {} requires [network] file",
                        self.kind.name()
                    )));
                }
            }
            ExperimentKind::TopoEvolve | ExperimentKind::RandomTopo => {
                self.topo.validate().map_err(CliError::config)?;
            }
        }
        Ok(())
    }

    /// Canonical text of the fully resolved configuration (defaults
    /// included), embedded in every output for reproducibility.
    pub fn resolved_text(&self) -> String {
        let d = &self.data;
        let mut s = String::new();
        s.push_str("[experiment]\n");
        s.push_str(&format!("kind = {}\n", self.kind.name()));
        s.push_str(&format!("runs = {}\n", self.runs));
        s.push_str(&format!("base_seed = {}\n", self.base_seed));
        s.push_str(&format!("out_dir = {}\n\n", self.out_dir.display()));
        s.push_str("[data]\n");
        s.push_str(&format!(
            "source = {}\n",
            match d.source {
                DataSource::Idx => "idx",
                DataSource::Evt1 => "evt1",
                DataSource::Synthetic => "synthetic",
            }
        ));
        match d.source {
            DataSource::Synthetic => {
                s.push_str(&format!("classes = {}\n", d.classes));
                s.push_str(&format!("per_class = {}\n", d.per_class));
                s.push_str(&format!("test_per_class = {}\n", d.test_per_class));
                s.push_str(&format!("image_hw = {}\n", d.image_hw));
            }
            _ => {
                s.push_str(&format!("train_images = {}\n", d.train_images.display()));
                s.push_str(&format!("train_labels = {}\n", d.train_labels.display()));
                s.push_str(&format!("test_images = {}\n", d.test_images.display()));
                s.push_str(&format!("test_labels = {}\n", d.test_labels.display()));
                s.push_str(&format!("grayscale = {}\n", d.grayscale));
            }
        }
        s.push_str(&format!("num_classes = {}\n", d.num_classes));
        s.push_str(&format!("subsample_train = {}\n", d.subsample_train));
        s.push_str(&format!("subsample_test = {}\n", d.subsample_test));
        s.push_str(&format!("stratified = {}\n\n", d.stratified));
        if let Some(f) = &self.network_file {
            s.push_str("[network]\n");
            s.push_str(&format!("file = {}\n\n", f.display()));
        }
        match self.kind {
            ExperimentKind::GradientTrain => {
                s.push_str("[train]\n");
                s.push_str(&format!("optimizer = {}\n", self.train.optimizer.name()));
                s.push_str(&format!("learning_rate = {}\n", self.train.learning_rate));
                s.push_str(&format!("batch_size = {}\n", self.train.batch_size));
                s.push_str(&format!("epochs = {}\n", self.train.epochs));
            }
            ExperimentKind::ShadeIlsTrain => {
                s.push_str("[shade_ils]\n");
                s.push_str(&format!("schedule = {}\n", self.shade.kind.name()));
                s.push_str(&format!("n_eval = {}\n", self.shade.n_eval));
                s.push_str(&format!("population = {}\n", self.shade.np));
                s.push_str(&format!("epochs = {}\n", self.shade.epochs));
                s.push_str(&format!("frac_global = {}\n", self.shade.frac_global));
                s.push_str(&format!("weight_bound = {}\n", self.shade.weight_bound));
            }
            ExperimentKind::TopoEvolve | ExperimentKind::RandomTopo => {
                s.push_str("[topo]\n");
                s.push_str(&format!("lambda = {}\n", self.topo.lambda));
                s.push_str(&format!("mu = {}\n", self.topo.mu));
                s.push_str(&format!("cxpb = {}\n", self.topo.cxpb));
                s.push_str(&format!("mutpb = {}\n", self.topo.mutpb));
                s.push_str(&format!("newpb = {}\n", self.topo.newpb));
                s.push_str(&format!("ngen = {}\n", self.topo.ngen));
                s.push_str(&format!("stagnation_limit = {}\n", self.topo.stagnation_limit));
                s.push_str(&format!("fast = {}\n", self.topo_fast));
            }
        }
        s
    }
}

fn resolve_path(base: &Path, s: &str) -> PathBuf {
    let p = PathBuf::from(s);
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}
