//! Run configuration: a flat `key = value` file merged with command-line
//! overrides, later settings winning.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use floodnet::eval::default_weight_grid;
use floodnet::floodgen::ScenarioConfig;
use floodnet::ModelConfig;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub scenario: ScenarioConfig,
    pub model: ModelConfig,
    /// Directory holding `train.bin`, `val.bin`, `test.bin` and the graph.
    pub data: Option<PathBuf>,
    /// Directory of raw CSVs for `prepare`.
    pub input: Option<PathBuf>,
    /// Model file(s); `evaluate` accepts a comma-separated list.
    pub model_paths: Vec<PathBuf>,
    pub resume: Option<PathBuf>,
    /// Directory of sensor CSVs for `predict`.
    pub event: Option<PathBuf>,
    pub weights: Vec<f64>,
    pub runs: usize,
    /// Prediction cadence in steps.
    pub interval: usize,
    pub threshold: Option<f64>,
    /// Model keys set explicitly, applied on top of a resumed model.
    pub explicit_model_keys: BTreeSet<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scenario: ScenarioConfig::default(),
            model: ModelConfig::default(),
            data: None,
            input: None,
            model_paths: Vec::new(),
            resume: None,
            event: None,
            weights: default_weight_grid(),
            runs: 10,
            interval: 4,
            threshold: None,
            explicit_model_keys: BTreeSet::new(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .trim()
        .parse()
        .map_err(|_| CliError::usage(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s))
        .collect()
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let value = value.trim();
        let path = || (!value.is_empty()).then(|| PathBuf::from(value));
        match key {
            "seed" => {
                self.seed = parse(key, value)?;
                self.model.seed = self.seed;
            }
            "data" => self.data = path(),
            "input" => self.input = path(),
            "model" => {
                self.model_paths = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| PathBuf::from(s.trim()))
                    .collect()
            }
            "resume" => self.resume = path(),
            "event" => self.event = path(),
            "weights" => self.weights = parse_list(key, value)?,
            "runs" => self.runs = parse(key, value)?,
            "interval" => self.interval = parse(key, value)?,
            "threshold" if value.is_empty() => self.threshold = None,
            "threshold" => self.threshold = Some(parse(key, value)?),
            "n_sensors" => self.scenario.n_sensors = parse(key, value)?,
            "train_events" => self.scenario.train_events = parse(key, value)?,
            "test_events" => self.scenario.test_events = parse(key, value)?,
            "stride" => self.scenario.window.stride = parse(key, value)?,
            "zero_future_rain" => self.scenario.window.zero_future_rain = parse(key, value)?,
            "train_ratio" => self.scenario.train_ratio = parse(key, value)?,
            "test_ratio" => self.scenario.test_ratio = parse(key, value)?,
            "val_fraction" => self.scenario.val_fraction = parse(key, value)?,
            "catchment_gain" => self.scenario.sim.catchment_gain = parse(key, value)?,
            "discharge_per_ft2" => self.scenario.sim.discharge_per_ft2 = parse(key, value)?,
            "spill_fraction" => self.scenario.sim.spill_fraction = parse(key, value)?,
            _ => {
                self.model
                    .set(key, value)
                    .map_err(|_| CliError::usage(format!("unknown or invalid key `{key}` = `{value}`")))?;
                self.explicit_model_keys.insert(key.to_string());
            }
        }
        Ok(())
    }

    /// Applies `key = value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::usage(format!("{}:{}: expected `key = value`", origin.display(), i + 1))
            })?;
            self.set(k.trim(), v).map_err(|e| {
                CliError::usage(format!("{}:{}: {}", origin.display(), i + 1, e.message))
            })?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, path)?;
        Ok(cfg)
    }

    /// Every resolved setting in a fixed order.
    pub fn pairs(&self) -> Vec<(String, String)> {
        let opt = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        let s = &self.scenario;
        let mut out: Vec<(String, String)> = vec![
            ("seed", self.seed.to_string()),
            ("data", opt(&self.data)),
            ("input", opt(&self.input)),
            (
                "model",
                self.model_paths
                    .iter()
                    .map(|p| p.display().to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("resume", opt(&self.resume)),
            ("event", opt(&self.event)),
            ("weights", join(&self.weights)),
            ("runs", self.runs.to_string()),
            ("interval", self.interval.to_string()),
            ("threshold", self.threshold.map_or(String::new(), |t| t.to_string())),
            ("n_sensors", s.n_sensors.to_string()),
            ("train_events", s.train_events.to_string()),
            ("test_events", s.test_events.to_string()),
            ("stride", s.window.stride.to_string()),
            ("zero_future_rain", s.window.zero_future_rain.to_string()),
            ("train_ratio", s.train_ratio.to_string()),
            ("test_ratio", s.test_ratio.to_string()),
            ("val_fraction", s.val_fraction.to_string()),
            ("catchment_gain", s.sim.catchment_gain.to_string()),
            ("discharge_per_ft2", s.sim.discharge_per_ft2.to_string()),
            ("spill_fraction", s.sim.spill_fraction.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        out.extend(
            self.model
                .to_pairs()
                .into_iter()
                .filter(|(k, _)| *k != "seed")
                .map(|(k, v)| (k.to_string(), v)),
        );
        out
    }

    /// First 16 hex digits of SHA-256 over the resolved `key=value` lines.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.pairs() {
            h.update(format!("{k}={v}\n"));
        }
        h.finalize()[..8].iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub fn to_text(&self) -> String {
        self.pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
