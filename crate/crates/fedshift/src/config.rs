//! Experiment configuration: flat `key = value` text with `[section]`
//! headers, overridable by `--key value` flags.
//!
//! Every key has a home section. Keys before the first header may be any
//! key; keys under a header must belong to it. `#` starts a comment. Later
//! assignments win, and flags are applied after the file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use fedshift_core::data::BenchmarkSpec;
use fedshift_core::{LocalHyper, RunConfig, SgdHyper, StrategySpec};

/// Where a value came from, for diagnostics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    Default,
    File { path: PathBuf, line: usize },
    Flag,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Default => f.write_str("default"),
            Origin::File { path, line } => write!(f, "{}:{line}", path.display()),
            Origin::Flag => f.write_str("command line"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{origin}: {}{message}", key.as_ref().map(|k| format!("key `{k}`: ")).unwrap_or_default())]
pub struct ConfigError {
    pub origin: Origin,
    pub key: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Sweep,
    Theory,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Train => "train",
            Mode::Sweep => "sweep",
            Mode::Theory => "theory",
        }
    }
}

pub struct KeySpec {
    pub name: &'static str,
    pub section: &'static str,
    pub help: &'static str,
    /// Booleans may be given as a bare flag.
    pub boolean: bool,
}

const fn key(name: &'static str, section: &'static str, help: &'static str) -> KeySpec {
    KeySpec {
        name,
        section,
        help,
        boolean: false,
    }
}

const fn flag(name: &'static str, section: &'static str, help: &'static str) -> KeySpec {
    KeySpec {
        name,
        section,
        help,
        boolean: true,
    }
}

pub const SECTIONS: [&str; 5] = ["run", "data", "model", "sweep", "output"];

/// Every recognized key, in echo order.
pub const KEYS: &[KeySpec] = &[
    key("mode", "run", "train, sweep or theory"),
    key(
        "strategy",
        "run",
        "fedavg, fedprox, scaffold, fedshift or reweight",
    ),
    key(
        "seed",
        "run",
        "seed for data, model init, sampling and shuffles",
    ),
    key("rounds", "run", "communication rounds T"),
    key("fraction", "run", "participation fraction C in (0,1]"),
    key("local_epochs", "run", "local epochs E"),
    key("batch", "run", "local batch size B"),
    key("lr", "run", "client learning rate"),
    key("lr_decay", "run", "learning-rate decay factor"),
    key(
        "lr_decay_every",
        "run",
        "rounds between learning-rate decays",
    ),
    key("momentum", "run", "SGD momentum in [0,1)"),
    key("weight_decay", "run", "L2 weight decay"),
    key(
        "prox_lambda",
        "run",
        "FedProx coefficient for a bare `fedprox`",
    ),
    key(
        "eval_every",
        "run",
        "evaluate every this many rounds (the last is always evaluated)",
    ),
    flag(
        "renormalize",
        "run",
        "divide aggregated deltas by the participants' weight",
    ),
    key("classes", "data", "number of classes K"),
    key("input_dim", "data", "input dimension"),
    key("train_samples", "data", "training pool size"),
    key("test_samples", "data", "test set size"),
    key("separation", "data", "scale of the random class means"),
    key("noise", "data", "per-coordinate noise standard deviation"),
    key("clients", "data", "number of clients N"),
    key("alpha", "data", "Dirichlet concentration"),
    key(
        "shards_dir",
        "data",
        "load client_<i>.txt and test.txt from this directory",
    ),
    flag(
        "export_shards",
        "data",
        "write the generated shards under <out>/shards",
    ),
    key(
        "hidden",
        "model",
        "comma-separated hidden widths; empty for logistic regression",
    ),
    key("sweep_strategy", "sweep", "strategies to sweep"),
    key("sweep_alpha", "sweep", "Dirichlet concentrations to sweep"),
    key("sweep_local_epochs", "sweep", "local epoch counts to sweep"),
    key("sweep_clients", "sweep", "client counts to sweep"),
    key(
        "sweep_fraction",
        "sweep",
        "participation fractions to sweep",
    ),
    key("out", "output", "output directory"),
    flag("parallel", "output", "run sweep cells concurrently"),
];

pub fn key_spec(name: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|k| k.name == name)
}

/// Fully resolved experiment configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub strategy: StrategySpec,
    pub seed: u64,
    pub rounds: usize,
    pub fraction: f64,
    pub local_epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub prox_lambda: f64,
    pub eval_every: usize,
    pub renormalize: bool,
    pub classes: usize,
    pub input_dim: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub separation: f64,
    pub noise: f64,
    pub clients: usize,
    pub alpha: f64,
    pub shards_dir: Option<PathBuf>,
    pub export_shards: bool,
    pub hidden: Vec<usize>,
    pub sweep_strategy: Vec<StrategySpec>,
    pub sweep_alpha: Vec<f64>,
    pub sweep_local_epochs: Vec<usize>,
    pub sweep_clients: Vec<usize>,
    pub sweep_fraction: Vec<f64>,
    pub out: PathBuf,
    pub parallel: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let desk = BenchmarkSpec::desk(0);
        let sgd = SgdHyper::default();
        Self {
            mode: Mode::Train,
            strategy: StrategySpec::FedShift,
            seed: 0,
            rounds: 100,
            fraction: 1.0,
            local_epochs: 5,
            batch: 40,
            lr: sgd.learning_rate,
            lr_decay: 0.95,
            lr_decay_every: 10,
            momentum: sgd.momentum,
            weight_decay: sgd.weight_decay,
            prox_lambda: 0.01,
            eval_every: 1,
            renormalize: false,
            classes: desk.num_classes,
            input_dim: desk.input_dim,
            train_samples: desk.train_samples,
            test_samples: desk.test_samples,
            separation: desk.separation,
            noise: desk.noise_sigma,
            clients: desk.num_clients,
            alpha: desk.alpha,
            shards_dir: None,
            export_shards: false,
            hidden: vec![32],
            sweep_strategy: Vec::new(),
            sweep_alpha: Vec::new(),
            sweep_local_epochs: Vec::new(),
            sweep_clients: Vec::new(),
            sweep_fraction: Vec::new(),
            out: PathBuf::from("out"),
            parallel: false,
        }
    }
}

/// Accumulates raw assignments from files and flags, then resolves them.
#[derive(Debug, Default)]
pub struct ConfigBuilder {
    /// Last assignment per key.
    values: BTreeMap<&'static str, (String, Origin)>,
}

impl ConfigBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, name: &str, value: &str, origin: Origin) -> Result<(), ConfigError> {
        let spec = key_spec(name).ok_or_else(|| ConfigError {
            origin: origin.clone(),
            key: Some(name.to_string()),
            message: "unknown key".into(),
        })?;
        self.values
            .insert(spec.name, (value.trim().to_string(), origin));
        Ok(())
    }

    pub fn read_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            origin: Origin::File {
                path: path.to_path_buf(),
                line: 0,
            },
            key: None,
            message: format!("cannot read config: {e}"),
        })?;
        self.read_str(&text, path)
    }

    pub fn read_str(&mut self, text: &str, path: &Path) -> Result<(), ConfigError> {
        let mut section: Option<&'static str> = None;
        for (i, raw) in text.lines().enumerate() {
            let origin = Origin::File {
                path: path.to_path_buf(),
                line: i + 1,
            };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .map(str::trim)
                    .ok_or_else(|| ConfigError {
                        origin: origin.clone(),
                        key: None,
                        message: format!("malformed section header `{line}`"),
                    })?;
                section = Some(
                    SECTIONS
                        .iter()
                        .copied()
                        .find(|s| *s == name)
                        .ok_or_else(|| ConfigError {
                            origin: origin.clone(),
                            key: None,
                            message: format!(
                                "unknown section [{name}] (expected one of {})",
                                SECTIONS.join(", ")
                            ),
                        })?,
                );
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError {
                origin: origin.clone(),
                key: None,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let k = k.trim().replace('-', "_");
            if let (Some(sec), Some(spec)) = (section, key_spec(&k)) {
                if spec.section != sec {
                    return Err(ConfigError {
                        origin,
                        key: Some(k),
                        message: format!("belongs in [{}], not [{sec}]", spec.section),
                    });
                }
            }
            self.set(&k, v, origin)?;
        }
        Ok(())
    }

    /// Applies every assignment over the defaults and checks invariants.
    pub fn build(&self) -> Result<ExperimentConfig, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        for (name, (value, origin)) in &self.values {
            apply(&mut cfg, name, value).map_err(|message| ConfigError {
                origin: origin.clone(),
                key: Some(name.to_string()),
                message,
            })?;
        }
        // A bare `fedprox` takes its coefficient from `prox_lambda`.
        let lambda = cfg.prox_lambda;
        let bare = |s: &str| s.trim().eq_ignore_ascii_case("fedprox");
        if self.values.get("strategy").is_none_or(|(v, _)| bare(v)) {
            if let StrategySpec::FedProx { .. } = cfg.strategy {
                cfg.strategy = StrategySpec::FedProx { lambda };
            }
        }
        if let Some((v, _)) = self.values.get("sweep_strategy") {
            for (spec, raw) in cfg.sweep_strategy.iter_mut().zip(v.split(',')) {
                if bare(raw) {
                    *spec = StrategySpec::FedProx { lambda };
                }
            }
        }
        self.validate(&cfg)?;
        Ok(cfg)
    }

    fn origin(&self, name: &str) -> Origin {
        self.values
            .get(name)
            .map_or(Origin::Default, |(_, o)| o.clone())
    }

    fn validate(&self, cfg: &ExperimentConfig) -> Result<(), ConfigError> {
        let fail = |name: &str, message: &str| ConfigError {
            origin: self.origin(name),
            key: Some(name.to_string()),
            message: message.to_string(),
        };
        let fraction_ok = |c: f64| c > 0.0 && c <= 1.0;
        if !fraction_ok(cfg.fraction) {
            return Err(fail("fraction", "fraction must be in (0,1]"));
        }
        if !cfg.sweep_fraction.iter().all(|&c| fraction_ok(c)) {
            return Err(fail("sweep_fraction", "fraction must be in (0,1]"));
        }
        let positive = [
            ("rounds", cfg.rounds),
            ("local_epochs", cfg.local_epochs),
            ("batch", cfg.batch),
            ("lr_decay_every", cfg.lr_decay_every),
            ("classes", cfg.classes),
            ("input_dim", cfg.input_dim),
            ("train_samples", cfg.train_samples),
            ("test_samples", cfg.test_samples),
            ("clients", cfg.clients),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(fail(name, "must be >= 1"));
            }
        }
        if cfg.classes < 2 {
            return Err(fail("classes", "must be >= 2"));
        }
        if cfg.sweep_local_epochs.contains(&0) || cfg.sweep_clients.contains(&0) {
            let name = if cfg.sweep_clients.contains(&0) {
                "sweep_clients"
            } else {
                "sweep_local_epochs"
            };
            return Err(fail(name, "must be >= 1"));
        }
        if cfg.hidden.contains(&0) {
            return Err(fail("hidden", "widths must be >= 1"));
        }
        for (name, v) in [
            ("lr", cfg.lr),
            ("lr_decay", cfg.lr_decay),
            ("separation", cfg.separation),
            ("noise", cfg.noise),
            ("alpha", cfg.alpha),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(fail(name, "must be a positive number"));
            }
        }
        if !cfg.sweep_alpha.iter().all(|&a| a.is_finite() && a > 0.0) {
            return Err(fail("sweep_alpha", "must be positive numbers"));
        }
        if !(0.0..1.0).contains(&cfg.momentum) {
            return Err(fail("momentum", "must be in [0,1)"));
        }
        if !(cfg.weight_decay.is_finite() && cfg.weight_decay >= 0.0) {
            return Err(fail("weight_decay", "must be >= 0"));
        }
        if !(cfg.prox_lambda.is_finite() && cfg.prox_lambda >= 0.0) {
            return Err(fail("prox_lambda", "must be >= 0"));
        }
        if cfg.mode == Mode::Sweep && cfg.sweep_axes_empty() {
            return Err(fail(
                "mode",
                "sweep mode needs at least one nonempty sweep_* axis",
            ));
        }
        if cfg.shards_dir.is_some() {
            for name in ["sweep_alpha", "sweep_clients"] {
                if self.values.contains_key(name) {
                    return Err(fail(name, "cannot be swept over imported shards"));
                }
            }
        }
        if cfg.out.as_os_str().is_empty() {
            return Err(fail("out", "output directory must be nonempty"));
        }
        Ok(())
    }
}

fn parse_num<T: std::str::FromStr>(value: &str, what: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("expected {what}, got `{value}`"))
}

fn parse_bool(value: &str) -> Result<bool, String> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(format!("expected true or false, got `{value}`")),
    }
}

fn parse_list<T>(value: &str, item: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>, String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(item)
        .collect()
}

fn parse_strategy(value: &str) -> Result<StrategySpec, String> {
    value
        .parse()
        .map_err(|e: fedshift_core::Error| e.to_string())
}

fn apply(cfg: &mut ExperimentConfig, name: &str, v: &str) -> Result<(), String> {
    const INT: &str = "a non-negative integer";
    const REAL: &str = "a number";
    match name {
        "mode" => {
            cfg.mode = match v.to_ascii_lowercase().as_str() {
                "train" => Mode::Train,
                "sweep" => Mode::Sweep,
                "theory" => Mode::Theory,
                _ => return Err(format!("expected train, sweep or theory, got `{v}`")),
            }
        }
        "strategy" => cfg.strategy = parse_strategy(v)?,
        "seed" => cfg.seed = parse_num(v, "an unsigned 64-bit integer")?,
        "rounds" => cfg.rounds = parse_num(v, INT)?,
        "fraction" => cfg.fraction = parse_num(v, REAL)?,
        "local_epochs" => cfg.local_epochs = parse_num(v, INT)?,
        "batch" => cfg.batch = parse_num(v, INT)?,
        "lr" => cfg.lr = parse_num(v, REAL)?,
        "lr_decay" => cfg.lr_decay = parse_num(v, REAL)?,
        "lr_decay_every" => cfg.lr_decay_every = parse_num(v, INT)?,
        "momentum" => cfg.momentum = parse_num(v, REAL)?,
        "weight_decay" => cfg.weight_decay = parse_num(v, REAL)?,
        "prox_lambda" => cfg.prox_lambda = parse_num(v, REAL)?,
        "eval_every" => cfg.eval_every = parse_num(v, INT)?,
        "renormalize" => cfg.renormalize = parse_bool(v)?,
        "classes" => cfg.classes = parse_num(v, INT)?,
        "input_dim" => cfg.input_dim = parse_num(v, INT)?,
        "train_samples" => cfg.train_samples = parse_num(v, INT)?,
        "test_samples" => cfg.test_samples = parse_num(v, INT)?,
        "separation" => cfg.separation = parse_num(v, REAL)?,
        "noise" => cfg.noise = parse_num(v, REAL)?,
        "clients" => cfg.clients = parse_num(v, INT)?,
        "alpha" => cfg.alpha = parse_num(v, REAL)?,
        "shards_dir" => cfg.shards_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
        "export_shards" => cfg.export_shards = parse_bool(v)?,
        "hidden" => cfg.hidden = parse_list(v, |s| parse_num(s, INT))?,
        "sweep_strategy" => cfg.sweep_strategy = parse_list(v, parse_strategy)?,
        "sweep_alpha" => cfg.sweep_alpha = parse_list(v, |s| parse_num(s, REAL))?,
        "sweep_local_epochs" => cfg.sweep_local_epochs = parse_list(v, |s| parse_num(s, INT))?,
        "sweep_clients" => cfg.sweep_clients = parse_list(v, |s| parse_num(s, INT))?,
        "sweep_fraction" => cfg.sweep_fraction = parse_list(v, |s| parse_num(s, REAL))?,
        "out" => cfg.out = PathBuf::from(v),
        "parallel" => cfg.parallel = parse_bool(v)?,
        _ => unreachable!("key table and apply() disagree on `{name}`"),
    }
    Ok(())
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(", ")
}

impl ExperimentConfig {
    pub fn sweep_axes_empty(&self) -> bool {
        self.sweep_strategy.is_empty()
            && self.sweep_alpha.is_empty()
            && self.sweep_local_epochs.is_empty()
            && self.sweep_clients.is_empty()
            && self.sweep_fraction.is_empty()
    }

    /// `(key, value)` for every key, in table order. Written into every
    /// output file.
    pub fn echo(&self) -> Vec<(&'static str, String)> {
        KEYS.iter()
            .map(|k| {
                let v = match k.name {
                    "mode" => self.mode.name().to_string(),
                    "strategy" => self.strategy.to_string(),
                    "seed" => self.seed.to_string(),
                    "rounds" => self.rounds.to_string(),
                    "fraction" => self.fraction.to_string(),
                    "local_epochs" => self.local_epochs.to_string(),
                    "batch" => self.batch.to_string(),
                    "lr" => self.lr.to_string(),
                    "lr_decay" => self.lr_decay.to_string(),
                    "lr_decay_every" => self.lr_decay_every.to_string(),
                    "momentum" => self.momentum.to_string(),
                    "weight_decay" => self.weight_decay.to_string(),
                    "prox_lambda" => self.prox_lambda.to_string(),
                    "eval_every" => self.eval_every.to_string(),
                    "renormalize" => self.renormalize.to_string(),
                    "classes" => self.classes.to_string(),
                    "input_dim" => self.input_dim.to_string(),
                    "train_samples" => self.train_samples.to_string(),
                    "test_samples" => self.test_samples.to_string(),
                    "separation" => self.separation.to_string(),
                    "noise" => self.noise.to_string(),
                    "clients" => self.clients.to_string(),
                    "alpha" => self.alpha.to_string(),
                    "shards_dir" => self
                        .shards_dir
                        .as_ref()
                        .map(|p| p.display().to_string())
                        .unwrap_or_default(),
                    "export_shards" => self.export_shards.to_string(),
                    "hidden" => join(&self.hidden),
                    "sweep_strategy" => join(&self.sweep_strategy),
                    "sweep_alpha" => join(&self.sweep_alpha),
                    "sweep_local_epochs" => join(&self.sweep_local_epochs),
                    "sweep_clients" => join(&self.sweep_clients),
                    "sweep_fraction" => join(&self.sweep_fraction),
                    "out" => self.out.display().to_string(),
                    "parallel" => self.parallel.to_string(),
                    other => unreachable!("key table and echo() disagree on `{other}`"),
                };
                (k.name, v)
            })
            .collect()
    }

    pub fn local_hyper(&self, epochs: usize) -> LocalHyper {
        LocalHyper {
            epochs,
            batch_size: self.batch,
            sgd: SgdHyper {
                learning_rate: self.lr,
                momentum: self.momentum,
                weight_decay: self.weight_decay,
            },
            seed: self.seed,
        }
    }

    pub fn run_config(&self, strategy: StrategySpec, epochs: usize, fraction: f64) -> RunConfig {
        let mut rc = RunConfig::new(strategy, self.local_hyper(epochs), self.rounds, self.seed);
        rc.fraction = fraction;
        rc.lr_decay_factor = self.lr_decay;
        rc.lr_decay_every = self.lr_decay_every;
        rc.eval_every = self.eval_every;
        rc.renormalize = self.renormalize;
        rc
    }

    pub fn benchmark_spec(&self, alpha: f64, clients: usize) -> BenchmarkSpec {
        BenchmarkSpec {
            num_classes: self.classes,
            input_dim: self.input_dim,
            train_samples: self.train_samples,
            test_samples: self.test_samples,
            separation: self.separation,
            noise_sigma: self.noise,
            num_clients: clients,
            alpha,
            seed: self.seed,
        }
    }
}
