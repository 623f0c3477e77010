//! TOML experiment configuration.
//!
//! ```toml
//! seed = 7
//! parties = 3
//!
//! [transport]
//! mode = "in-process"          # or "socket"
//! endpoints = []               # one "host:port" per party in socket mode
//! # party = 0                  # this process in socket mode
//!
//! [fixed_point]
//! modulus = "mersenne127"      # or a decimal prime below 2^64
//! k = 64
//! f = 20
//! kappa = 40
//!
//! [data]
//! classes = 2
//! partition = "iid"            # or "label_sorted"
//! test_fraction = 0.2
//! train = "train.csv"          # relative to this file; or a [data.synthetic] table
//!
//! [local]                      # per-party phase
//! epsilon = 0.25
//! iterations = 50
//!
//! [global]                     # secure phase
//! epsilon = 1.75
//! iterations = 100
//! lr = { schedule = "one-cycle", max = 0.1 }
//!
//! [training]
//! mode = "pea"                 # or "secure" (random init, no local phase)
//! eval_every = 10
//!
//! [output]
//! dir = "runs/example"         # DPMPC_OUTPUT_DIR overrides
//! ```
//!
//! Unset deltas default to `1/(10n)` split evenly between the phases, `n`
//! being the number of training rows.

use std::path::{Path, PathBuf};
use std::time::Duration;

use dpmpc_core::dp::{check_guard, PrivacyBudget};
use dpmpc_core::numeric::{FixedPoint, FixedPointParams, Modulus};
use dpmpc_core::train::{DpsgdConfig, LrSchedule, PrivacyMode};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Environment variable that replaces `[output] dir`.
pub const OUTPUT_ENV: &str = "DPMPC_OUTPUT_DIR";

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_parties")]
    pub parties: usize,
    #[serde(default)]
    pub transport: TransportSection,
    #[serde(default)]
    pub fixed_point: FixedPointSection,
    pub data: DataSection,
    #[serde(default = "PhaseSection::local_default")]
    pub local: PhaseSection,
    #[serde(default = "PhaseSection::global_default")]
    pub global: PhaseSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_seed() -> u64 {
    1
}

fn default_parties() -> usize {
    3
}

#[derive(Clone, Copy, Debug, Default, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    InProcess,
    Socket,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TransportSection {
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub endpoints: Vec<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// This process's index in socket mode; `--party` overrides.
    #[serde(default)]
    pub party: Option<usize>,
}

fn default_timeout() -> u64 {
    30
}

impl Default for TransportSection {
    fn default() -> Self {
        TransportSection { mode: Mode::InProcess, endpoints: Vec::new(), timeout_secs: default_timeout(), party: None }
    }
}

impl TransportSection {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FixedPointSection {
    #[serde(default = "default_modulus")]
    pub modulus: String,
    #[serde(default = "default_k")]
    pub k: u32,
    #[serde(default = "default_f")]
    pub f: u32,
    #[serde(default = "default_kappa")]
    pub kappa: u32,
}

fn default_modulus() -> String {
    "mersenne127".into()
}
fn default_k() -> u32 {
    FixedPointParams::default().k
}
fn default_f() -> u32 {
    FixedPointParams::default().f
}
fn default_kappa() -> u32 {
    FixedPointParams::default().kappa
}

impl Default for FixedPointSection {
    fn default() -> Self {
        FixedPointSection { modulus: default_modulus(), k: default_k(), f: default_f(), kappa: default_kappa() }
    }
}

impl FixedPointSection {
    pub fn build(&self) -> Result<FixedPoint, CliError> {
        let modulus = if self.modulus == "mersenne127" {
            Modulus::mersenne127()
        } else {
            let v: u128 = self
                .modulus
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("modulus `{}` is neither `mersenne127` nor an integer", self.modulus)))?;
            Modulus::new(v)?
        };
        Ok(FixedPoint::new(modulus, FixedPointParams { k: self.k, f: self.f, kappa: self.kappa })?)
    }
}

#[derive(Clone, Copy, Debug, Default, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum PartitionScheme {
    #[default]
    Iid,
    LabelSorted,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub n: usize,
    pub dim: usize,
    #[serde(default = "default_separation")]
    pub separation: f64,
    #[serde(default = "default_spread")]
    pub spread: f64,
}

fn default_separation() -> f64 {
    3.0
}
fn default_spread() -> f64 {
    1.0
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub classes: usize,
    #[serde(default)]
    pub partition: PartitionScheme,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub train: Option<PathBuf>,
    /// Separate test file; without it `test_fraction` of the training rows are held out.
    #[serde(default)]
    pub test: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticSection>,
}

fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq)]
#[serde(tag = "schedule", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LrSection {
    Constant { rate: f64 },
    OneCycle { max: f64 },
}

impl From<LrSection> for LrSchedule {
    fn from(s: LrSection) -> Self {
        match s {
            LrSection::Constant { rate } => LrSchedule::Constant(rate),
            LrSection::OneCycle { max } => LrSchedule::OneCycle { max },
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PhaseSection {
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_iterations")]
    pub iterations: u64,
    #[serde(default = "default_clip")]
    pub clip: f64,
    #[serde(default = "default_lr")]
    pub lr: LrSection,
    /// Target epsilon, required whenever the section is written out;
    /// `private = false` disables clipping and noise.
    pub epsilon: f64,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default = "default_true")]
    pub private: bool,
}

fn default_batch() -> usize {
    128
}
fn default_iterations() -> u64 {
    100
}
fn default_clip() -> f64 {
    3.0
}
fn default_lr() -> LrSection {
    LrSection::Constant { rate: 0.1 }
}
fn default_true() -> bool {
    true
}

impl PhaseSection {
    fn with_epsilon(epsilon: f64) -> Self {
        PhaseSection {
            batch: default_batch(),
            iterations: default_iterations(),
            clip: default_clip(),
            lr: default_lr(),
            epsilon,
            delta: None,
            private: true,
        }
    }

    pub fn local_default() -> Self {
        Self::with_epsilon(0.25)
    }

    pub fn global_default() -> Self {
        Self::with_epsilon(1.75)
    }

    /// Training parameters for this phase, `default_delta` filling an unset delta.
    pub fn dpsgd(&self, default_delta: f64) -> Result<DpsgdConfig, CliError> {
        let privacy = if self.private {
            let delta = self.delta.unwrap_or(default_delta);
            check_guard(self.epsilon, delta)?;
            PrivacyMode::Budget(PrivacyBudget::new(self.epsilon, delta)?)
        } else {
            PrivacyMode::NonPrivate
        };
        let cfg = DpsgdConfig { batch: self.batch, iterations: self.iterations, clip: self.clip, lr: self.lr.into(), privacy };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Debug, Default, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum TrainingMode {
    #[default]
    Pea,
    Secure,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    #[serde(default)]
    pub mode: TrainingMode,
    /// Evaluate every this many global steps (and after the last); 0 only at the end.
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    /// Seed of the public random initial model; defaults to the session seed.
    #[serde(default)]
    pub init_seed: Option<u64>,
    /// Include wall-clock times in metrics records (off makes streams reproducible byte for byte).
    #[serde(default = "default_true")]
    pub record_timing: bool,
    /// Also evaluate on the shared training rows.
    #[serde(default)]
    pub train_accuracy: bool,
}

fn default_eval_every() -> u64 {
    10
}
fn default_init_scale() -> f64 {
    0.01
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            mode: TrainingMode::Pea,
            eval_every: default_eval_every(),
            init_scale: default_init_scale(),
            init_seed: None,
            record_timing: true,
            train_accuracy: false,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_output")]
    pub dir: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("runs/latest")
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: default_output() }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Reads `path`; relative data and output paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = cfg.data.train.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.data.test.as_mut() {
            resolve(p);
        }
        resolve(&mut cfg.output.dir);
        Ok(cfg)
    }

    /// Output directory after the environment override.
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.output.dir.clone(),
        }
    }

    /// Structural checks that need no data.
    pub fn check(&self) -> Result<(), CliError> {
        if self.parties < 3 {
            return Err(CliError::Config(format!("at least 3 parties are required, got {}", self.parties)));
        }
        if self.transport.mode == Mode::Socket && self.transport.endpoints.len() != self.parties {
            return Err(CliError::Config(format!(
                "socket mode needs {} endpoints, got {}",
                self.parties,
                self.transport.endpoints.len()
            )));
        }
        self.fixed_point.build()?;
        match (&self.data.synthetic, &self.data.train) {
            (Some(_), Some(_)) => return Err(CliError::Config("give either data.train or data.synthetic, not both".into())),
            (None, None) => return Err(CliError::Config("one of data.train or data.synthetic is required".into())),
            _ => {}
        }
        if self.data.classes < 2 {
            return Err(CliError::Config("data.classes must be at least 2".into()));
        }
        if self.data.test.is_none() && !(self.data.test_fraction > 0.0 && self.data.test_fraction < 1.0) {
            return Err(CliError::Config(format!("test_fraction must lie in (0, 1), got {}", self.data.test_fraction)));
        }
        if !(self.training.init_scale >= 0.0) {
            return Err(CliError::Config("training.init_scale must be non-negative".into()));
        }
        // guards that do not depend on n
        for (name, phase) in [("local", &self.local), ("global", &self.global)] {
            if phase.private {
                if let Some(d) = phase.delta {
                    check_guard(phase.epsilon, d)?;
                } else if !(phase.epsilon > 0.0) {
                    return Err(CliError::Config(format!("{name}.epsilon must be positive")));
                }
            }
        }
        Ok(())
    }

    /// Phase parameters once the number of training rows `n` is known.
    pub fn phases(&self, n: usize) -> Result<(DpsgdConfig, DpsgdConfig), CliError> {
        let default_delta = 1.0 / (10.0 * n.max(1) as f64) / 2.0;
        Ok((self.local.dpsgd(default_delta)?, self.global.dpsgd(default_delta)?))
    }

    pub fn init_seed(&self) -> u64 {
        self.training.init_seed.unwrap_or(self.seed)
    }
}
