//! Two-level learned CDF model.
//!
//! A root network routes an input vector to one of `R` regions; the region's
//! own network then predicts where the vector falls inside that region as a
//! value in `[0, 1]`. Together they approximate the CDF of the sorted
//! training vectors, which the index turns into a (part, slot) pair.

use crate::bpnn::{InferenceSlab, Network, Optimizer, Samples, TrainConfig, TrainReport};
use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::input::{fold_into, process, scale_into, InputVector, DEFAULT_INPUT_DIM};
use crate::Scalar;

/// Regions in the reference deployment layout.
pub const DEFAULT_REGIONS: usize = 1000;
pub const DEFAULT_HIDDEN: usize = 20;

// Inputs up to this dimension are folded on the stack.
const STACK_DIM: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct PyramidConfig {
    /// Number of level-2 networks, equal to the bitmap's part count.
    pub regions: usize,
    pub input_dim: usize,
    pub hidden: usize,
    pub train_l1: TrainConfig,
    pub train_l2: TrainConfig,
}

impl Default for PyramidConfig {
    /// Reference topology (1000 regions of 5-20-1 networks) trained with
    /// Levenberg-Marquardt on standardized inputs: 50 steps at level 1, up to
    /// 100 per region at level 2.
    fn default() -> Self {
        PyramidConfig {
            regions: DEFAULT_REGIONS,
            input_dim: DEFAULT_INPUT_DIM,
            hidden: DEFAULT_HIDDEN,
            train_l1: TrainConfig {
                optimizer: Optimizer::LevenbergMarquardt,
                epochs: 50,
                seed: 1,
                standardize: true,
                ..TrainConfig::default()
            },
            train_l2: TrainConfig {
                optimizer: Optimizer::LevenbergMarquardt,
                epochs: 100,
                seed: 2,
                standardize: true,
                ..TrainConfig::default()
            },
        }
    }
}

impl PyramidConfig {
    pub fn with_regions(regions: usize) -> Self {
        PyramidConfig {
            regions,
            ..PyramidConfig::default()
        }
    }

    /// Applies `seed` to both levels, keeping them distinct.
    pub fn seeded(mut self, seed: u64) -> Self {
        self.train_l1.seed = seed.wrapping_mul(2);
        self.train_l2.seed = seed.wrapping_mul(2).wrapping_add(1);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.regions == 0 || self.regions > u32::MAX as usize {
            return Err(Error::Config(format!(
                "regions must be in 1..=2^32-1, got {}",
                self.regions
            )));
        }
        if self.input_dim == 0 || self.input_dim > u16::MAX as usize {
            return Err(Error::Config(format!(
                "input_dim must be in 1..=65535, got {}",
                self.input_dim
            )));
        }
        if self.hidden == 0 || self.hidden > u16::MAX as usize {
            return Err(Error::Config(format!(
                "hidden must be in 1..=65535, got {}",
                self.hidden
            )));
        }
        self.train_l1.validate()?;
        self.train_l2.validate()
    }
}

/// Sorted, deduplicated input vectors with their labels.
///
/// `l1_labels[i] = floor(i / size * R)`; `l2_labels[i] = i / size`, the
/// global CDF. Level-2 targets are re-normalized to the slot-centred rank
/// `(rank + 0.5) / count` within the predicted region when the model is
/// trained.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTrainingSet {
    pub input_dim: usize,
    pub regions: usize,
    pub vectors: Vec<InputVector>,
    pub l1_labels: Vec<u32>,
    pub l2_labels: Vec<f64>,
}

impl LabeledTrainingSet {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Labels an already sorted, deduplicated vector list.
    pub fn from_sorted(vectors: Vec<InputVector>, regions: usize) -> Result<Self> {
        let Some(first) = vectors.first() else {
            return Err(Error::EmptyDataset);
        };
        let input_dim = first.dim();
        let size = vectors.len();
        let l1_labels = (0..size)
            .map(|i| ((i as u128 * regions as u128) / size as u128) as u32)
            .collect();
        let l2_labels = (0..size).map(|i| i as f64 / size as f64).collect();
        Ok(LabeledTrainingSet {
            input_dim,
            regions,
            vectors,
            l1_labels,
            l2_labels,
        })
    }
}

/// Folds, sorts and deduplicates the names, then labels them.
pub fn build_training_set(dataset: &Dataset, cfg: &PyramidConfig) -> Result<LabeledTrainingSet> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut vectors: Vec<InputVector> = dataset
        .iter()
        .map(|n| process(n.as_bytes(), cfg.input_dim))
        .collect();
    vectors.sort_unstable();
    vectors.dedup();
    LabeledTrainingSet::from_sorted(vectors, cfg.regions)
}

/// Summary of a training run, kept with a freshly trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSummary {
    pub level1: TrainReport,
    pub populated_regions: usize,
    /// Sum of level-2 epochs across regions.
    pub level2_epochs: usize,
    /// Row-weighted mean of the level-2 final MSEs.
    pub level2_mse: f64,
    pub classification_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pyramid<T> {
    regions: usize,
    input_dim: usize,
    hidden: usize,
    level1: Network<T>,
    level2: Vec<Network<T>>,
    /// Level 1 at index 0, region `k` at `k + 1`.
    slab: InferenceSlab<T>,
    /// Which regions received training rows. `None` for models loaded from
    /// disk, which do not record it.
    region_populated: Option<Vec<bool>>,
    summary: Option<TrainingSummary>,
}

impl<T: Scalar> Pyramid<T> {
    /// Untrained model with freshly initialized networks.
    pub fn init(cfg: &PyramidConfig) -> Result<Self> {
        cfg.validate()?;
        let level1 = Network::init(cfg.input_dim, cfg.hidden, 1, cfg.train_l1.seed);
        let level2 = (0..cfg.regions)
            .map(|k| {
                Network::init(
                    cfg.input_dim,
                    cfg.hidden,
                    1,
                    level2_seed(cfg.train_l2.seed, k),
                )
            })
            .collect();
        Ok(Pyramid {
            regions: cfg.regions,
            input_dim: cfg.input_dim,
            hidden: cfg.hidden,
            slab: InferenceSlab::new(
                std::iter::once(&level1).chain(&level2),
                cfg.input_dim,
                cfg.hidden,
            ),
            level1,
            level2,
            region_populated: None,
            summary: None,
        })
    }

    /// Assembles a model from trained networks.
    pub fn from_networks(level1: Network<T>, level2: Vec<Network<T>>) -> Result<Self> {
        let (n, h) = (level1.input_dim(), level1.hidden_dim());
        if level2.is_empty() {
            return Err(Error::Config("a model needs at least one region".into()));
        }
        for net in std::iter::once(&level1).chain(&level2) {
            if net.input_dim() != n || net.hidden_dim() != h || net.output_dim() != 1 {
                return Err(Error::Config(format!(
                    "all networks must share topology {n}-{h}-1, found {}-{}-{}",
                    net.input_dim(),
                    net.hidden_dim(),
                    net.output_dim()
                )));
            }
        }
        Ok(Pyramid {
            regions: level2.len(),
            input_dim: n,
            hidden: h,
            slab: InferenceSlab::new(std::iter::once(&level1).chain(&level2), n, h),
            level1,
            level2,
            region_populated: None,
            summary: None,
        })
    }

    /// Trains level 1 on the scaled region labels, partitions the rows by the
    /// trained level-1 prediction, then trains every populated region's
    /// network on ranks local to that region.
    pub fn train(ts: &LabeledTrainingSet, cfg: &PyramidConfig) -> Result<Self> {
        cfg.validate()?;
        if ts.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if ts.input_dim != cfg.input_dim || ts.regions != cfg.regions {
            return Err(Error::Config(format!(
                "training set built for N={} R={}, config has N={} R={}",
                ts.input_dim, ts.regions, cfg.input_dim, cfg.regions
            )));
        }
        let mut model = Pyramid::init(cfg)?;
        let r = cfg.regions;
        let label_scale = if r > 1 { 1.0 / (r - 1) as f64 } else { 0.0 };

        let scaled: Vec<Vec<T>> = ts.vectors.iter().map(InputVector::scaled).collect();
        let mut l1 = Samples::with_capacity(cfg.input_dim, 1, ts.len());
        for (x, &label) in scaled.iter().zip(&ts.l1_labels) {
            l1.push(x, &[T::of(label as f64 * label_scale)])?;
        }
        let level1_report = model.level1.train(&l1, &cfg.train_l1)?;
        model.slab.write(0, &model.level1);

        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); r];
        for (i, x) in scaled.iter().enumerate() {
            rows[model.region_of(x)].push(i);
        }

        let mut populated = vec![false; r];
        let mut level2_epochs = 0;
        let mut weighted_mse = 0.0;
        for (k, members) in rows.iter().enumerate() {
            if members.is_empty() {
                continue;
            }
            populated[k] = true;
            let count = members.len() as f64;
            let mut samples = Samples::with_capacity(cfg.input_dim, 1, members.len());
            for (rank, &i) in members.iter().enumerate() {
                samples.push(&scaled[i], &[T::of((rank as f64 + 0.5) / count)])?;
            }
            let train_cfg = TrainConfig {
                seed: level2_seed(cfg.train_l2.seed, k),
                ..cfg.train_l2.clone()
            };
            let report = model.level2[k].train(&samples, &train_cfg)?;
            model.slab.write(k + 1, &model.level2[k]);
            level2_epochs += report.epochs_run;
            weighted_mse += report.final_mse * count;
        }

        let accuracy = model.classification_accuracy(ts)?;
        model.summary = Some(TrainingSummary {
            level1: level1_report,
            populated_regions: populated.iter().filter(|&&p| p).count(),
            level2_epochs,
            level2_mse: weighted_mse / ts.len() as f64,
            classification_accuracy: accuracy,
        });
        model.region_populated = Some(populated);
        Ok(model)
    }

    pub fn regions(&self) -> usize {
        self.regions
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn level1(&self) -> &Network<T> {
        &self.level1
    }

    /// Replaces the level-1 network, which must match the model topology.
    pub fn set_level1(&mut self, net: Network<T>) -> Result<()> {
        self.check_topology(&net)?;
        self.slab.write(0, &net);
        self.level1 = net;
        Ok(())
    }

    pub fn level2(&self) -> &[Network<T>] {
        &self.level2
    }

    /// Replaces region `k`'s network, which must match the model topology.
    pub fn set_level2(&mut self, k: usize, net: Network<T>) -> Result<()> {
        self.check_topology(&net)?;
        if k >= self.regions {
            return Err(Error::Config(format!(
                "region {k} out of range 0..{}",
                self.regions
            )));
        }
        self.slab.write(k + 1, &net);
        self.level2[k] = net;
        Ok(())
    }

    fn check_topology(&self, net: &Network<T>) -> Result<()> {
        if (net.input_dim(), net.hidden_dim(), net.output_dim()) != (self.input_dim, self.hidden, 1)
        {
            return Err(Error::Config(format!(
                "network {}-{}-{} does not match model topology {}-{}-1",
                net.input_dim(),
                net.hidden_dim(),
                net.output_dim(),
                self.input_dim,
                self.hidden
            )));
        }
        Ok(())
    }

    pub fn region_populated(&self) -> Option<&[bool]> {
        self.region_populated.as_deref()
    }

    pub fn summary(&self) -> Option<&TrainingSummary> {
        self.summary.as_ref()
    }

    /// Region for an already scaled input.
    #[inline]
    fn region_of(&self, x: &[T]) -> usize {
        region_from_output(self.slab.eval(0, x).as_f64(), self.regions)
    }

    #[inline]
    fn cdf_of(&self, region: usize, x: &[T]) -> f64 {
        self.slab.eval(region + 1, x).as_f64().clamp(0.0, 1.0)
    }

    fn check_dim(&self, v: &InputVector) {
        assert_eq!(v.dim(), self.input_dim, "input vector dimension mismatch");
    }

    /// `clamp(round(level1(v / 255) * (R - 1)), 0, R - 1)`.
    pub fn predict_region(&self, v: &InputVector) -> usize {
        self.check_dim(v);
        self.region_of(&v.scaled::<T>())
    }

    /// `clamp(level2[region](v / 255), 0, 1)`.
    pub fn predict_cdf(&self, v: &InputVector) -> f64 {
        self.check_dim(v);
        let x = v.scaled::<T>();
        self.cdf_of(self.region_of(&x), &x)
    }

    /// Folds `name` and runs both levels, returning `(region, cdf)`.
    #[inline]
    pub fn locate(&self, name: &[u8]) -> (usize, f64) {
        if self.input_dim <= STACK_DIM {
            let mut bytes = [0u8; STACK_DIM];
            let mut x = [T::zero(); STACK_DIM];
            let n = self.input_dim;
            fold_into(name, &mut bytes[..n]);
            scale_into(&bytes[..n], &mut x[..n]);
            let region = self.region_of(&x[..n]);
            (region, self.cdf_of(region, &x[..n]))
        } else {
            let x = process(name, self.input_dim).scaled::<T>();
            let region = self.region_of(&x);
            (region, self.cdf_of(region, &x))
        }
    }

    /// Fraction of rows whose predicted region equals their level-1 label.
    pub fn classification_accuracy(&self, ts: &LabeledTrainingSet) -> Result<f64> {
        if ts.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let hits = ts
            .vectors
            .iter()
            .zip(&ts.l1_labels)
            .filter(|(v, &label)| self.predict_region(v) == label as usize)
            .count();
        Ok(hits as f64 / ts.len() as f64)
    }

    /// Parameter bytes across all `1 + R` networks, headers excluded.
    pub fn model_size_bytes(&self) -> usize {
        self.level1.size_bytes() + self.level2.iter().map(Network::size_bytes).sum::<usize>()
    }
}

/// Model size for a topology without building it:
/// `(1 + R) * (h*N + h + h + 1) * bytes_per_param`.
pub fn model_size_for(
    regions: usize,
    input_dim: usize,
    hidden: usize,
    bytes_per_param: usize,
) -> usize {
    (1 + regions) * (hidden * input_dim + hidden + hidden + 1) * bytes_per_param
}

/// Maps a raw level-1 output to a region: clamp to `[0, 1]`, scale by
/// `R - 1`, round half away from zero.
#[inline]
pub fn region_from_output(raw: f64, regions: usize) -> usize {
    if regions <= 1 {
        return 0;
    }
    // NaN clamps to 0
    let unit = if raw.is_nan() {
        0.0
    } else {
        raw.clamp(0.0, 1.0)
    };
    ((unit * (regions - 1) as f64).round() as usize).min(regions - 1)
}

fn level2_seed(base: u64, region: usize) -> u64 {
    base ^ (region as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_names, CorpusSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vectors(n: usize, seed: u64) -> Vec<InputVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v: Vec<InputVector> = (0..n * 2)
            .map(|_| InputVector::from((0..5).map(|_| rng.gen::<u8>()).collect::<Vec<_>>()))
            .collect();
        v.sort_unstable();
        v.dedup();
        v.truncate(n);
        v
    }

    #[test]
    fn labels_follow_floor_rule() {
        let ts = LabeledTrainingSet::from_sorted(vectors(1000, 1), 1000).unwrap();
        assert_eq!(ts.l1_labels, (0..1000).collect::<Vec<u32>>());

        let ts = LabeledTrainingSet::from_sorted(vectors(10, 2), 1000).unwrap();
        assert_eq!(
            ts.l1_labels,
            vec![0, 100, 200, 300, 400, 500, 600, 700, 800, 900]
        );
        assert!(ts.l2_labels.iter().all(|l| (0.0..=1.0).contains(l)));
    }

    #[test]
    fn training_set_is_sorted_deduplicated_and_bounded() {
        let d = generate_names(&CorpusSpec::with_count(5000, 4)).unwrap();
        let ts = build_training_set(&d, &PyramidConfig::with_regions(100)).unwrap();
        assert!(ts.vectors.windows(2).all(|w| w[0] < w[1]));
        assert!(ts.l1_labels.windows(2).all(|w| w[0] <= w[1]));
        assert!(ts.l1_labels.iter().all(|&l| l < 100));
        assert!(matches!(
            build_training_set(&Dataset::default(), &PyramidConfig::default()),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn duplicate_vectors_collapse_to_one_row() {
        let d = Dataset::new(vec![
            crate::Name::new("/bcde/bcde").unwrap(),
            crate::Name::new("/ghij/ghij").unwrap(),
            crate::Name::new("/x").unwrap(),
        ])
        .unwrap();
        let ts = build_training_set(&d, &PyramidConfig::with_regions(2)).unwrap();
        assert_eq!(ts.len(), 2);
    }

    #[test]
    fn region_rounding_and_clamping() {
        assert_eq!(region_from_output(0.0, 1000), 0);
        assert_eq!(region_from_output(1.0, 1000), 999);
        assert_eq!(region_from_output(1.7, 1000), 999);
        assert_eq!(region_from_output(-0.3, 1000), 0);
        assert_eq!(region_from_output(f64::NAN, 1000), 0);
        // 0.5 / 999 * 999 = 0.5 rounds away from zero
        assert_eq!(region_from_output(0.5 / 999.0, 1000), 1);
        assert_eq!(region_from_output(0.3, 1), 0);
    }

    #[test]
    fn zero_level1_routes_everything_to_region_zero() {
        let mut model = Pyramid::<f64>::init(&PyramidConfig::with_regions(10)).unwrap();
        model.set_level1(Network::zeros(5, 20, 1)).unwrap();
        for v in vectors(50, 3) {
            assert_eq!(model.predict_region(&v), 0);
        }
        let mut net = Network::zeros(5, 20, 1);
        net.b2_mut()[0] = 1.0;
        model.set_level1(net).unwrap();
        assert_eq!(model.predict_region(&vectors(1, 3)[0]), 9);
    }

    #[test]
    fn cdf_is_clamped() {
        let mut model = Pyramid::<f64>::init(&PyramidConfig::with_regions(3)).unwrap();
        model.set_level1(Network::zeros(5, 20, 1)).unwrap();
        let v = InputVector::from(vec![1, 2, 3, 4, 5]);
        for (bias, expected) in [(0.0, 0.0), (-0.2, 0.0), (1.3, 1.0), (0.25, 0.25)] {
            let mut net = Network::zeros(5, 20, 1);
            net.b2_mut()[0] = bias;
            model.set_level2(0, net).unwrap();
            assert_eq!(model.predict_cdf(&v), expected);
        }
        assert!(model.set_level2(3, Network::zeros(5, 20, 1)).is_err());
        assert!(model.set_level1(Network::zeros(4, 20, 1)).is_err());
    }

    #[test]
    fn packed_evaluation_matches_forward() {
        let d = generate_names(&CorpusSpec::with_count(300, 4)).unwrap();
        let model = Pyramid::<f64>::init(&PyramidConfig::with_regions(5)).unwrap();
        for name in &d {
            let x = process(name.as_bytes(), 5).scaled::<f64>();
            let region = region_from_output(model.level1().forward(&x).unwrap(), 5);
            let cdf = model.level2()[region].forward(&x).unwrap().clamp(0.0, 1.0);
            assert_eq!(model.locate(name.as_bytes()), (region, cdf));
        }
    }

    #[test]
    fn locate_agrees_with_vector_api() {
        let d = generate_names(&CorpusSpec::with_count(500, 8)).unwrap();
        let model = Pyramid::<f64>::init(&PyramidConfig::with_regions(7)).unwrap();
        for name in &d {
            let v = process(name.as_bytes(), 5);
            assert_eq!(
                model.locate(name.as_bytes()),
                (model.predict_region(&v), model.predict_cdf(&v))
            );
        }
    }

    #[test]
    fn accuracy_of_constant_predictor() {
        let ts = LabeledTrainingSet::from_sorted(vectors(200, 5), 4).unwrap();
        let mut model = Pyramid::<f64>::init(&PyramidConfig::with_regions(4)).unwrap();
        model.set_level1(Network::zeros(5, 20, 1)).unwrap();
        let zeros = ts.l1_labels.iter().filter(|&&l| l == 0).count() as f64 / ts.len() as f64;
        assert_eq!(model.classification_accuracy(&ts).unwrap(), zeros);
    }

    #[test]
    fn model_size_formula() {
        assert_eq!(model_size_for(1000, 5, 20, 8), 1_129_128);
        assert_eq!(model_size_for(1, 5, 20, 8), 2256);
        assert_eq!(model_size_for(10, 5, 20, 8), 12_408);
        let model = Pyramid::<f64>::init(&PyramidConfig::with_regions(10)).unwrap();
        assert_eq!(model.model_size_bytes(), 12_408);
        let model = Pyramid::<f64>::init(&PyramidConfig::with_regions(1000)).unwrap();
        assert_eq!(model.model_size_bytes(), 1_129_128);
    }

    #[test]
    fn small_toy_model_populates_every_region() {
        let ts = LabeledTrainingSet::from_sorted(vectors(400, 6), 4).unwrap();
        let cfg = PyramidConfig {
            regions: 4,
            train_l1: TrainConfig {
                epochs: 300,
                batch_size: 16,
                learning_rate: 0.05,
                ..TrainConfig::default()
            },
            train_l2: TrainConfig {
                epochs: 20,
                ..TrainConfig::default()
            },
            ..PyramidConfig::default()
        };
        let model = Pyramid::<f64>::train(&ts, &cfg).unwrap();
        assert!(model.region_populated().unwrap().iter().all(|&p| p));
        assert_eq!(model.summary().unwrap().populated_regions, 4);
    }
}
