//! Run configuration: a TOML file, then command-line overrides.
//!
//! Every section is optional; omitted keys take the defaults below.
//!
//! ```toml
//! schema_version = 1
//! seed = 0
//! estimators = ["dv", "nwj", "ldr"]   # add "midiff" for the baseline
//! diagnostics = false
//!
//! [data]
//! preset = "d3"            # d3 | zero | dim | tanh | dpi | custom
//! n = 80000
//! sigma_x = 10.0
//! sigma_y = 1.0
//! sigma_z = 5.0
//! d = 3
//! rho = 0.0
//! map = "identity"         # applied to X: identity | tanh[:a] | affine:s,o
//! split_d1 = 1             # dpi only
//!
//! [schedule]
//! mode = "fixed_k"         # or "theory"
//! k = 2
//! epsilon_0 = 0.1
//! trials = 5
//! train_fraction = 0.5
//! # b = 40000            # joint batch size, default: smaller split
//!
//! [net]
//! hidden = [64, 64]
//! tau = 1e-3
//! epochs = 200
//! minibatch_size = 2048
//! learning_rate = 1e-3
//! init_seed = 0
//!
//! [estimate]
//! input = "data.csv"
//! # dims = [3, 3, 3]
//!
//! [digraph]
//! input = "series.csv"
//! nodes = ["a", "b", "c"]
//! lag = 5
//! estimator = "dv"
//! standardize = true
//! drop_policy = "drop_row"
//!
//! [bench]
//! n = [20000, 40000, 80000]
//! k = [2]
//! d = [3]
//! k_over_n = []            # when set, k = round(ratio * n) replaces the k list
//! methods = ["isolated_knn"]
//! mwu = false              # compare the first two methods per cell
//! mwu_estimator = "dv"
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use cmiknn_core::dinfo::DropPolicy;
use cmiknn_core::estimator::{EstimatorConfig, EstimatorKind, Method};
use cmiknn_core::{ComponentMap, GaussianChainConfig, KnnStructure, NetConfig, ScheduleMode};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable consulted for `out_dir` when no flag is given.
pub const OUT_DIR_ENV: &str = "CMIKNN_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// `I(X;Y|Z)` on the standard chain, `d = 3`.
    D3,
    /// `I(X;Z|Y) = 0` on the standard chain, `d = 3`.
    Zero,
    /// `I(X;Y|Z)` on the standard chain at the configured `d`.
    Dim,
    /// `I(tanh(0.05 X);Y|Z)`, `d = 1`.
    Tanh,
    /// `I(X;Y|Z)` next to `I(X;Y1|Z)` and `I(X;Y2|Y1,Z)`, `d = 5`, `d1 = 1`.
    Dpi,
    /// Exactly the `[data]` section.
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub preset: Preset,
    pub n: usize,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub sigma_z: f64,
    pub d: usize,
    pub rho: f64,
    pub map: String,
    pub split_d1: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            preset: Preset::D3,
            n: 80_000,
            sigma_x: 10.0,
            sigma_y: 1.0,
            sigma_z: 5.0,
            d: 3,
            rho: 0.0,
            map: "identity".into(),
            split_d1: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    FixedK,
    Theory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub mode: ModeName,
    pub k: usize,
    pub epsilon_0: f64,
    pub trials: usize,
    pub train_fraction: f64,
    pub b: Option<usize>,
    pub knn: KnnStructure,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            mode: ModeName::FixedK,
            k: 2,
            epsilon_0: 0.1,
            trials: 5,
            train_fraction: 0.5,
            b: None,
            knn: KnnStructure::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSection {
    pub hidden: Vec<usize>,
    pub tau: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub learning_rate: f64,
    pub init_seed: u64,
}

impl Default for NetSection {
    fn default() -> Self {
        let net = NetConfig::new(1);
        Self {
            hidden: net.hidden,
            tau: net.tau,
            epochs: net.epochs,
            minibatch_size: net.minibatch_size,
            learning_rate: net.optimizer.learning_rate,
            init_seed: net.init_seed,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateSection {
    pub input: Option<PathBuf>,
    pub dims: Option<[usize; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DigraphSection {
    pub input: Option<PathBuf>,
    pub nodes: Vec<String>,
    pub lag: usize,
    pub estimator: EstimatorKind,
    pub standardize: bool,
    pub drop_policy: DropPolicy,
}

impl Default for DigraphSection {
    fn default() -> Self {
        Self {
            input: None,
            nodes: Vec::new(),
            lag: 5,
            estimator: EstimatorKind::Dv,
            standardize: true,
            drop_policy: DropPolicy::DropRow,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub n: Vec<usize>,
    pub k: Vec<usize>,
    pub d: Vec<usize>,
    pub k_over_n: Vec<f64>,
    pub methods: Vec<Method>,
    pub mwu: bool,
    pub mwu_estimator: EstimatorKind,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            n: vec![20_000, 40_000, 80_000],
            k: vec![2],
            d: vec![3],
            k_over_n: Vec::new(),
            methods: vec![Method::IsolatedKnn],
            mwu: false,
            mwu_estimator: EstimatorKind::Dv,
        }
    }
}

/// Which estimators a run reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorChoice {
    Dv,
    Nwj,
    Ldr,
    Midiff,
}

impl std::str::FromStr for EstimatorChoice {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "dv" => EstimatorChoice::Dv,
            "nwj" => EstimatorChoice::Nwj,
            "ldr" => EstimatorChoice::Ldr,
            "midiff" => EstimatorChoice::Midiff,
            other => bail!("unknown estimator `{other}` (expected dv, nwj, ldr, or midiff)"),
        })
    }
}

/// The fully resolved configuration.
///
/// `threads` and `out_dir` only decide where and how fast a run executes,
/// so they are left out of the copy embedded in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    #[serde(skip_serializing)]
    pub threads: usize,
    #[serde(skip_serializing)]
    pub out_dir: PathBuf,
    pub estimators: Vec<EstimatorChoice>,
    pub diagnostics: bool,
    pub data: DataSection,
    pub schedule: ScheduleSection,
    pub net: NetSection,
    pub estimate: EstimateSection,
    pub digraph: DigraphSection,
    pub bench: BenchSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            threads: 0,
            out_dir: PathBuf::from("cmiknn-out"),
            estimators: vec![EstimatorChoice::Dv, EstimatorChoice::Nwj, EstimatorChoice::Ldr],
            diagnostics: false,
            data: DataSection::default(),
            schedule: ScheduleSection::default(),
            net: NetSection::default(),
            estimate: EstimateSection::default(),
            digraph: DigraphSection::default(),
            bench: BenchSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        ensure!(
            cfg.schema_version == SCHEMA_VERSION,
            "{}: schema_version {} is not supported (expected {SCHEMA_VERSION})",
            path.display(),
            cfg.schema_version
        );
        Ok(cfg)
    }

    pub fn wants_isolated(&self) -> bool {
        self.estimators.iter().any(|e| *e != EstimatorChoice::Midiff)
    }

    pub fn wants_midiff(&self) -> bool {
        self.estimators.contains(&EstimatorChoice::Midiff)
    }

    pub fn schedule_mode(&self) -> ScheduleMode {
        match self.schedule.mode {
            ModeName::FixedK => ScheduleMode::FixedK { k: self.schedule.k },
            ModeName::Theory => ScheduleMode::Theory {
                epsilon_0: self.schedule.epsilon_0,
            },
        }
    }

    pub fn estimator_config(&self) -> EstimatorConfig {
        let mut net = NetConfig::new(1);
        net.hidden = self.net.hidden.clone();
        net.tau = self.net.tau;
        net.epochs = self.net.epochs;
        net.minibatch_size = self.net.minibatch_size;
        net.optimizer.learning_rate = self.net.learning_rate;
        net.init_seed = self.net.init_seed;
        EstimatorConfig {
            trials: self.schedule.trials,
            schedule: self.schedule_mode(),
            joint_batch: self.schedule.b,
            train_fraction: self.schedule.train_fraction,
            net,
            knn: self.schedule.knn,
        }
    }

    /// Chain parameters after applying the preset.
    pub fn chain(&self) -> Result<GaussianChainConfig> {
        let d = &self.data;
        let dim = match d.preset {
            Preset::D3 | Preset::Zero => 3,
            Preset::Tanh => 1,
            Preset::Dpi => 5,
            Preset::Dim | Preset::Custom => d.d,
        };
        let (sx, sy, sz) = match d.preset {
            Preset::Custom => (d.sigma_x, d.sigma_y, d.sigma_z),
            _ => (10.0, 1.0, 5.0),
        };
        let rho = match d.preset {
            Preset::Dpi | Preset::Custom => d.rho,
            _ => 0.0,
        };
        Ok(GaussianChainConfig::new(sx, sy, sz, dim, rho)?)
    }

    /// Map applied to `X` after applying the preset.
    pub fn map(&self) -> Result<ComponentMap> {
        if self.data.preset == Preset::Tanh {
            return Ok(ComponentMap::Tanh { scale: 0.05 });
        }
        Ok(self.data.map.parse()?)
    }

    /// Checks value ranges that do not depend on data.
    pub fn validate_common(&self) -> Result<()> {
        ensure!(self.schedule.trials >= 1, "trials must be at least 1");
        ensure!(!self.estimators.is_empty(), "at least one estimator must be selected");
        let mut net = self.estimator_config().net;
        net.input_dim = 1;
        net.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg: RunConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.estimator_config().net.minibatch_size, 2048);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[net]\nwidth = 3\n").is_err());
    }

    #[test]
    fn presets_pick_chain_parameters() {
        let mut cfg = RunConfig::default();
        cfg.data.preset = Preset::Tanh;
        assert_eq!(cfg.chain().unwrap().d, 1);
        assert_eq!(cfg.map().unwrap(), ComponentMap::Tanh { scale: 0.05 });
        cfg.data.preset = Preset::Custom;
        cfg.data.rho = 0.7;
        assert!(cfg.chain().is_err());
    }

    #[test]
    fn embedded_copy_omits_execution_settings() {
        let mut cfg = RunConfig::default();
        cfg.threads = 7;
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(!json.contains("threads"));
        assert!(!json.contains("out_dir"));
    }

    #[test]
    fn estimator_names_parse() {
        assert_eq!("MiDiff".parse::<EstimatorChoice>().unwrap(), EstimatorChoice::Midiff);
        assert!("ksg".parse::<EstimatorChoice>().is_err());
    }
}
