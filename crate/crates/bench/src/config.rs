use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{bail, ensure, Result};
use lni_core::baselines::HashAlgorithm;
use lni_core::bpnn::{Optimizer, TrainConfig};
use lni_core::pyramid::PyramidConfig;
use serde::{Deserialize, Serialize};

pub const DEFAULT_NAMES: usize = 100_000;
pub const DEFAULT_REGIONS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    Generate { names: usize, seed: u64 },
    File { path: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IndexKind {
    Lni,
    Md5,
    Xxh64,
    Fnv1a,
    Patricia,
}

impl IndexKind {
    pub const ALL: [IndexKind; 5] = [
        IndexKind::Lni,
        IndexKind::Md5,
        IndexKind::Xxh64,
        IndexKind::Fnv1a,
        IndexKind::Patricia,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            IndexKind::Lni => "lni",
            IndexKind::Md5 => "md5",
            IndexKind::Xxh64 => "xxh64",
            IndexKind::Fnv1a => "fnv1a",
            IndexKind::Patricia => "patricia",
        }
    }

    pub fn hash_algorithm(self) -> Option<HashAlgorithm> {
        match self {
            IndexKind::Md5 => Some(HashAlgorithm::Md5),
            IndexKind::Xxh64 => Some(HashAlgorithm::Xxh64),
            IndexKind::Fnv1a => Some(HashAlgorithm::Fnv1a64),
            IndexKind::Lni | IndexKind::Patricia => None,
        }
    }

    /// Whether the index places names into slots (and so has occupancy and
    /// false-positive metrics).
    pub fn is_slot_mapper(self) -> bool {
        self != IndexKind::Patricia
    }
}

impl fmt::Display for IndexKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for IndexKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        IndexKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                format!(
                    "unknown index kind {s:?} (expected one of lni, md5, xxh64, fnv1a, patricia)"
                )
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Lm,
    Sgd,
}

impl FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "lm" => Ok(OptimizerKind::Lm),
            "sgd" => Ok(OptimizerKind::Sgd),
            _ => Err(format!("unknown optimizer {s:?} (expected lm or sgd)")),
        }
    }
}

/// Model hyper-parameters in a serializable form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub regions: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub level1_epochs: usize,
    pub level2_epochs: usize,
    /// Only used by SGD.
    pub learning_rate: f64,
    /// Only used by SGD.
    pub batch_size: usize,
    pub standardize: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let base = PyramidConfig::default();
        TrainingConfig {
            regions: DEFAULT_REGIONS,
            seed: 0,
            optimizer: OptimizerKind::Lm,
            level1_epochs: base.train_l1.epochs,
            level2_epochs: base.train_l2.epochs,
            learning_rate: base.train_l1.learning_rate,
            batch_size: base.train_l1.batch_size,
            standardize: true,
        }
    }
}

impl TrainingConfig {
    pub fn pyramid(&self) -> PyramidConfig {
        let level = |epochs| TrainConfig {
            optimizer: match self.optimizer {
                OptimizerKind::Lm => Optimizer::LevenbergMarquardt,
                OptimizerKind::Sgd => Optimizer::Sgd,
            },
            epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            standardize: self.standardize,
            ..TrainConfig::default()
        };
        PyramidConfig {
            regions: self.regions,
            train_l1: level(self.level1_epochs),
            train_l2: level(self.level2_epochs),
            ..PyramidConfig::default()
        }
        .seeded(self.seed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThroughputConfig {
    /// Lookups per timed repetition; the probe set is cycled to reach it.
    pub lookups_per_rep: usize,
    pub reps: usize,
    /// Lookups per timed batch, the unit behind the percentiles.
    pub batch: usize,
}

impl Default for ThroughputConfig {
    fn default() -> Self {
        ThroughputConfig {
            lookups_per_rep: 1_000_000,
            reps: 3,
            batch: 1000,
        }
    }
}

/// Everything a benchmark run depends on. Serialized verbatim into reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    /// Model file to use instead of training.
    pub model: Option<PathBuf>,
    pub indexes: Vec<IndexKind>,
    pub training: TrainingConfig,
    /// Names per slot for the false-positive sweep.
    pub load_factors: Vec<f64>,
    /// Slot budget for the fixed-size occupancy section and the built LNI;
    /// `None` means four slots per name.
    pub slots: Option<usize>,
    pub fp_target: f64,
    /// Step of the slots-required search; `None` means one slot per region.
    pub slot_granularity: Option<usize>,
    /// The slots-required search gives up beyond this many slots per name.
    pub max_slots_per_name: usize,
    /// Bucket count of the chained hash tables; `None` means one per name.
    pub hash_buckets: Option<usize>,
    /// Index copies counted in the LNI memory report.
    pub replicas: usize,
    pub timing: bool,
    pub throughput: ThroughputConfig,
    /// Nominal clock used to turn seconds into an estimated cycle count.
    pub cpu_ghz: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSource::Generate {
                names: DEFAULT_NAMES,
                seed: 0,
            },
            model: None,
            indexes: vec![
                IndexKind::Lni,
                IndexKind::Md5,
                IndexKind::Xxh64,
                IndexKind::Patricia,
            ],
            training: TrainingConfig::default(),
            load_factors: (0..=6).map(|k| 1.0 / (1u32 << k) as f64).collect(),
            slots: None,
            fp_target: 0.01,
            slot_granularity: None,
            max_slots_per_name: 1000,
            hash_buckets: None,
            replicas: 2,
            timing: true,
            throughput: ThroughputConfig::default(),
            cpu_ghz: None,
        }
    }
}

/// A configuration rejected before any work started.
#[derive(Debug)]
pub struct InvalidConfig(pub String);

impl fmt::Display for InvalidConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration: {}", self.0)
    }
}

impl std::error::Error for InvalidConfig {}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.check()
            .map_err(|e| InvalidConfig(format!("{e:#}")).into())
    }

    fn check(&self) -> Result<()> {
        ensure!(
            !self.indexes.is_empty(),
            "at least one index kind is required"
        );
        if let DatasetSource::Generate { names, .. } = self.dataset {
            ensure!(names > 0, "dataset must have at least one name");
        }
        ensure!(self.training.regions > 0, "regions must be at least 1");
        for &lf in &self.load_factors {
            ensure!(
                lf.is_finite() && lf > 0.0,
                "load factor {lf} must be positive"
            );
        }
        if self.slots == Some(0) {
            bail!("slots must be at least 1");
        }
        ensure!(
            self.fp_target > 0.0 && self.fp_target <= 1.0,
            "fp target {} must be in (0, 1]",
            self.fp_target
        );
        ensure!(
            self.slot_granularity != Some(0),
            "slot granularity must be at least 1"
        );
        ensure!(
            self.max_slots_per_name > 0,
            "max slots per name must be at least 1"
        );
        ensure!(
            self.hash_buckets != Some(0),
            "hash buckets must be at least 1"
        );
        ensure!(self.replicas > 0, "replicas must be at least 1");
        ensure!(
            self.throughput.reps >= 3,
            "throughput needs at least 3 repetitions"
        );
        ensure!(
            self.throughput.lookups_per_rep > 0,
            "lookups per repetition must be positive"
        );
        ensure!(self.throughput.batch > 0, "batch size must be positive");
        if let Some(ghz) = self.cpu_ghz {
            ensure!(
                ghz.is_finite() && ghz > 0.0,
                "cpu frequency {ghz} must be positive"
            );
        }
        self.training.pyramid().validate()?;
        Ok(())
    }

    pub fn has(&self, kind: IndexKind) -> bool {
        self.indexes.contains(&kind)
    }
}
