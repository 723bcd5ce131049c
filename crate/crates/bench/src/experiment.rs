use std::hint::black_box;
use std::time::Instant;

use anyhow::{Context, Result};
use lni_core::baselines::{ChainedHashTable, HashAlgorithm, PatriciaTrie};
use lni_core::corpus::{generate_names, load_dataset};
use lni_core::input::{collision_rate, DEFAULT_INPUT_DIM};
use lni_core::lni::{entries_for, Lni, MemoryBreakdown, ModelSource, Placements};
use lni_core::metrics::{slots_required, Occupancy, SlotCounter};
use lni_core::model_io::{decode_model, encode_model, load_model, model_crc};
use lni_core::pyramid::{build_training_set, Pyramid, PyramidConfig};
use lni_core::{CorpusSpec, Dataset};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::cache::{content_key, write_atomic, Cache};
use crate::config::{DatasetSource, ExperimentConfig, IndexKind, ThroughputConfig, TrainingConfig};
use crate::report::{
    ChainCount, ChainHistogram, DatasetInfo, MemoryRow, MetricsReport, ModelOrigin, OccupancyRow,
    ReportKind, SlotsRequiredRow, ThroughputRow, TrainingInfo, SCHEMA_VERSION,
};
use crate::VERSION;

/// Faces assigned round-robin to the entries of built indexes.
pub const BENCH_FACES: u32 = 16;

/// Reference deployment the memory section always reports: two replicas of
/// a 1000-region model over 14 million slots each.
pub const PARITY_REPLICAS: usize = 2;
pub const PARITY_REGIONS: usize = 1000;
pub const PARITY_SLOTS: usize = 14_000_000;

#[derive(Debug)]
pub struct RunOutcome {
    pub report: MetricsReport,
    /// Sweep cells computed in this run.
    pub computed: usize,
    /// Sweep cells read back from the output directory.
    pub reused: usize,
}

pub fn load_source(source: &DatasetSource) -> Result<Dataset> {
    match source {
        DatasetSource::Generate { names, seed } => {
            Ok(generate_names(&CorpusSpec::with_count(*names, *seed))?)
        }
        DatasetSource::File { path } => {
            load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
        }
    }
}

pub fn dataset_info(dataset: &Dataset) -> Result<DatasetInfo> {
    Ok(DatasetInfo {
        names: dataset.len(),
        fingerprint: format!("{:016x}", dataset.fingerprint()),
        mean_length: dataset.mean_length(),
        input_collision_rate: collision_rate(dataset, DEFAULT_INPUT_DIM)?,
    })
}

/// Rounds `slots` up to a whole number of slots per region, the granularity
/// of the bitmap. Applied to every index so all columns share budgets.
pub fn round_slots(slots: usize, regions: usize) -> usize {
    slots.max(1).div_ceil(regions) * regions
}

pub fn training_info(
    model: &Pyramid<f64>,
    dataset: &Dataset,
    origin: ModelOrigin,
) -> Result<TrainingInfo> {
    let encoded = encode_model(model);
    let summary = model.summary();
    let classification_accuracy = match summary {
        Some(s) => s.classification_accuracy,
        None => {
            let ts = build_training_set(dataset, &PyramidConfig::with_regions(model.regions()))?;
            model.classification_accuracy(&ts)?
        }
    };
    Ok(TrainingInfo {
        origin,
        regions: model.regions(),
        model_bytes: model.model_size_bytes(),
        model_crc: model_crc(&encoded).expect("encoded model has a trailer"),
        classification_accuracy,
        level1_epochs: summary.map(|s| s.level1.epochs_run),
        level1_mse: summary.map(|s| s.level1.final_mse),
        level2_epochs: summary.map(|s| s.level2_epochs),
        level2_mse: summary.map(|s| s.level2_mse),
        populated_regions: summary.map(|s| s.populated_regions),
    })
}

pub fn train_model(dataset: &Dataset, training: &TrainingConfig) -> Result<Pyramid<f64>> {
    let cfg = training.pyramid();
    let ts = build_training_set(dataset, &cfg)?;
    Ok(Pyramid::train(&ts, &cfg)?)
}

/// Trains the model for `training` on `dataset`, or reuses the copy a
/// previous run left in the cache.
fn cached_model(
    dataset: &Dataset,
    training: &TrainingConfig,
    cache: &mut Cache,
) -> Result<(Pyramid<f64>, TrainingInfo)> {
    let key = content_key(&json!({
        "kind": "model",
        "dataset": format!("{:016x}", dataset.fingerprint()),
        "training": training,
    }))?;
    if let Some(path) = cache.model_path(&key) {
        let info_path = path.with_extension("json");
        if let (Ok(bytes), Ok(info)) = (std::fs::read(&path), std::fs::read(&info_path)) {
            if let (Ok(model), Ok(info)) = (decode_model(&bytes), serde_json::from_slice(&info)) {
                cache.note_reused();
                return Ok((model, info));
            }
        }
    }
    let model = train_model(dataset, training)?;
    let info = training_info(&model, dataset, ModelOrigin::Trained)?;
    cache.note_computed();
    if let Some(path) = cache.model_path(&key) {
        write_atomic(&path, &encode_model(&model))?;
        write_atomic(
            &path.with_extension("json"),
            &serde_json::to_vec_pretty(&info)?,
        )?;
    }
    Ok((model, info))
}

/// Precomputed slot inputs of one mapper: model placements for the learned
/// index, raw 64-bit hashes for the hash mappers.
enum Mapping {
    Learned(Placements),
    Hashed(Vec<u64>),
}

impl Mapping {
    fn occupancy(&self, slots: usize, counter: &mut SlotCounter) -> Occupancy {
        match self {
            Mapping::Learned(p) => p.occupancy(slots, counter),
            Mapping::Hashed(h) => {
                counter.count(slots, h.iter().map(|&x| (x % slots as u64) as usize))
            }
        }
    }
}

/// Computes each mapper's slot inputs on first use.
struct Mappings<'a> {
    dataset: &'a Dataset,
    model: Option<&'a Pyramid<f64>>,
    computed: Vec<(IndexKind, Mapping)>,
}

impl Mappings<'_> {
    fn get(&mut self, kind: IndexKind) -> &Mapping {
        let at = match self.computed.iter().position(|(k, _)| *k == kind) {
            Some(at) => at,
            None => {
                let mapping = match kind.hash_algorithm() {
                    Some(alg) => Mapping::Hashed(
                        self.dataset
                            .iter()
                            .map(|n| alg.hash(n.as_bytes()))
                            .collect(),
                    ),
                    None => Mapping::Learned(Placements::compute(
                        self.model.expect("lni has a model"),
                        self.dataset,
                    )),
                };
                self.computed.push((kind, mapping));
                self.computed.len() - 1
            }
        };
        &self.computed[at].1
    }
}

fn occupancy_row(index: IndexKind, slots: usize, o: Occupancy) -> OccupancyRow {
    OccupancyRow {
        index: index.to_string(),
        load_factor: o.load_factor(),
        slots,
        inserts: o.inserts,
        collisions: o.collisions(),
        fp_probability: o.fp_probability(),
        empty_slot_ratio: o.empty_slot_ratio(),
    }
}

/// Runs every configured sweep. Each sweep cell is content-addressed by the
/// inputs it depends on, so a rerun into the same cache skips finished work.
pub fn run(cfg: &ExperimentConfig, cache: &mut Cache) -> Result<RunOutcome> {
    cfg.validate()?;
    let (computed0, reused0) = (cache.computed(), cache.reused());
    let dataset = load_source(&cfg.dataset)?;
    let info = dataset_info(&dataset)?;
    let m = dataset.len();

    let model = if cfg.has(IndexKind::Lni) {
        Some(match &cfg.model {
            Some(path) => {
                let model: Pyramid<f64> = load_model(path)
                    .with_context(|| format!("loading model {}", path.display()))?;
                let info = training_info(&model, &dataset, ModelOrigin::Loaded)?;
                (model, info)
            }
            None => cached_model(&dataset, &cfg.training, cache)?,
        })
    } else {
        None
    };
    let regions = model
        .as_ref()
        .map_or(cfg.training.regions, |(m, _)| m.regions());
    let model_key = model.as_ref().map(|(_, t)| t.model_crc);
    let base = json!({
        "dataset": info.fingerprint,
        "model_crc": model_key,
        "regions": regions,
        "version": SCHEMA_VERSION,
    });

    let slot_kinds: Vec<IndexKind> = cfg
        .indexes
        .iter()
        .copied()
        .filter(|k| k.is_slot_mapper())
        .collect();
    let mut mappings = Mappings {
        dataset: &dataset,
        model: model.as_ref().map(|(m, _)| m),
        computed: Vec::new(),
    };
    let mut counter = SlotCounter::new();

    let mut fp_sweep = Vec::new();
    for &lf in &cfg.load_factors {
        let slots = round_slots((m as f64 / lf).ceil() as usize, regions);
        for &kind in &slot_kinds {
            let key = json!({"cell": "occupancy", "index": kind, "slots": slots, "base": base});
            let row = cache.cell(&key, || {
                Ok(occupancy_row(
                    kind,
                    slots,
                    mappings.get(kind).occupancy(slots, &mut counter),
                ))
            })?;
            fp_sweep.push(row);
        }
    }

    let fixed_slots = round_slots(cfg.slots.unwrap_or(4 * m), regions);
    let mut occupancy = Vec::new();
    for &kind in &slot_kinds {
        let key = json!({"cell": "occupancy", "index": kind, "slots": fixed_slots, "base": base});
        occupancy.push(cache.cell(&key, || {
            Ok(occupancy_row(
                kind,
                fixed_slots,
                mappings.get(kind).occupancy(fixed_slots, &mut counter),
            ))
        })?);
    }

    let granularity = cfg.slot_granularity.unwrap_or(regions);
    let cap = round_slots(cfg.max_slots_per_name.saturating_mul(m), granularity);
    let mut slots_req = Vec::new();
    for &kind in &slot_kinds {
        let key = json!({
            "cell": "slots_required", "index": kind, "target": cfg.fp_target,
            "granularity": granularity, "cap": cap, "base": base,
        });
        slots_req.push(cache.cell(&key, || {
            let map = mappings.get(kind);
            let slots = slots_required(cfg.fp_target, granularity, cap, |s| {
                Ok(map.occupancy(s, &mut counter).fp_probability())
            })?;
            Ok(SlotsRequiredRow {
                index: kind.to_string(),
                fp_target: cfg.fp_target,
                granularity,
                slots,
                achieved_fp: map.occupancy(slots, &mut counter).fp_probability(),
            })
        })?);
    }

    let buckets = cfg.hash_buckets.unwrap_or(m);
    let hash_kinds: Vec<(IndexKind, HashAlgorithm)> = cfg
        .indexes
        .iter()
        .filter_map(|&k| k.hash_algorithm().map(|a| (k, a)))
        .collect();
    let mut chain_histograms = Vec::new();
    let mut memory = Vec::new();
    if let Some((model, _)) = &model {
        let b = MemoryBreakdown::for_layout(
            cfg.replicas,
            regions,
            model.input_dim(),
            model.hidden(),
            fixed_slots,
        );
        memory.push(lni_memory_row("lni-fib", Some(m), fixed_slots, b));
    }
    let parity = MemoryBreakdown::for_layout(
        PARITY_REPLICAS,
        PARITY_REGIONS,
        DEFAULT_INPUT_DIM,
        lni_core::pyramid::DEFAULT_HIDDEN,
        PARITY_SLOTS,
    );
    let mut parity_row = lni_memory_row("lni-fib-reference", None, PARITY_SLOTS, parity);
    parity_row.names = None;
    memory.push(parity_row);

    for &(kind, alg) in &hash_kinds {
        let key = json!({"cell": "hash_table", "index": kind, "buckets": buckets, "base": base});
        let (hist, mem): (ChainHistogram, MemoryRow) = cache.cell(&key, || {
            let table = hash_table(&dataset, alg, buckets);
            Ok((
                ChainHistogram {
                    index: kind.to_string(),
                    buckets,
                    names: table.len(),
                    empty_bucket_ratio: table.empty_bucket_ratio(),
                    longest_chain: table.longest_chain(),
                    chains: table
                        .chain_histogram()
                        .into_iter()
                        .map(|(length, count)| ChainCount { length, count })
                        .collect(),
                },
                structure_memory_row(kind, m, Some(buckets), table.memory_bytes()),
            ))
        })?;
        chain_histograms.push(hist);
        memory.push(mem);
    }
    if cfg.has(IndexKind::Patricia) {
        let key = json!({"cell": "patricia_memory", "base": base});
        memory.push(cache.cell(&key, || {
            let trie = patricia(&dataset);
            Ok(structure_memory_row(
                IndexKind::Patricia,
                m,
                None,
                trie.memory_bytes(),
            ))
        })?);
    }

    let mut throughput = Vec::new();
    if cfg.timing {
        for &kind in &cfg.indexes {
            let key = json!({
                "cell": "throughput", "index": kind, "slots": fixed_slots, "buckets": buckets,
                "throughput": cfg.throughput, "cpu_ghz": cfg.cpu_ghz, "base": base,
            });
            let row = cache.cell(&key, || {
                let tp = &cfg.throughput;
                let probe = dataset.names();
                let timing = match kind {
                    IndexKind::Lni => {
                        let model = model.as_ref().expect("lni has a model").0.clone();
                        let lni = Lni::build(
                            entries_for(&dataset, BENCH_FACES),
                            fixed_slots,
                            ModelSource::Preloaded(model),
                        )?;
                        time_lookups(probe, tp, |n| lni.lookup_untracked(n).entry().is_some())
                    }
                    IndexKind::Patricia => {
                        let trie = patricia(&dataset);
                        time_lookups(probe, tp, |n| trie.get(n).is_some())
                    }
                    hashed => {
                        let alg = hashed.hash_algorithm().expect("hash kind");
                        let table = hash_table(&dataset, alg, buckets);
                        time_lookups(probe, tp, |n| table.get(n).is_some())
                    }
                };
                Ok(timing.row(kind, tp, cfg.cpu_ghz))
            })?;
            throughput.push(row);
        }
    }

    let report = MetricsReport {
        report: ReportKind::Metrics,
        schema_version: SCHEMA_VERSION,
        tool_version: VERSION.into(),
        config: cfg.clone(),
        dataset: info,
        training: model.map(|(_, t)| t),
        fp_sweep,
        occupancy,
        slots_required: slots_req,
        chain_histograms,
        memory,
        throughput,
    };
    Ok(RunOutcome {
        report,
        computed: cache.computed() - computed0,
        reused: cache.reused() - reused0,
    })
}

fn lni_memory_row(
    index: &str,
    names: Option<usize>,
    slots: usize,
    b: MemoryBreakdown,
) -> MemoryRow {
    MemoryRow {
        index: index.into(),
        names,
        slots: Some(slots),
        replicas: b.replicas,
        model_bytes: b.model_bytes,
        bitmap_bytes: b.bitmap_bytes,
        structure_bytes: 0,
        total_bytes: b.total_bytes,
    }
}

fn structure_memory_row(
    kind: IndexKind,
    names: usize,
    slots: Option<usize>,
    bytes: usize,
) -> MemoryRow {
    MemoryRow {
        index: kind.to_string(),
        names: Some(names),
        slots,
        replicas: 1,
        model_bytes: 0,
        bitmap_bytes: 0,
        structure_bytes: bytes,
        total_bytes: bytes,
    }
}

pub fn hash_table(dataset: &Dataset, alg: HashAlgorithm, buckets: usize) -> ChainedHashTable<u32> {
    let mut t = ChainedHashTable::new(alg, buckets);
    for (i, n) in dataset.iter().enumerate() {
        t.insert(n.as_bytes(), i as u32);
    }
    t
}

pub fn patricia(dataset: &Dataset) -> PatriciaTrie<u32> {
    let mut t = PatriciaTrie::new();
    for (i, n) in dataset.iter().enumerate() {
        t.insert(n.as_bytes(), i as u32);
    }
    t
}

/// Raw timings of one throughput measurement.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Timing {
    /// Wall-clock seconds per repetition.
    pub rep_seconds: Vec<f64>,
    /// Nanoseconds per lookup within each timed batch, across all reps.
    pub batch_ns: Vec<f64>,
    pub hits_per_rep: usize,
}

impl Timing {
    pub fn row(
        &self,
        kind: IndexKind,
        tp: &ThroughputConfig,
        cpu_ghz: Option<f64>,
    ) -> ThroughputRow {
        let mut reps = self.rep_seconds.clone();
        reps.sort_by(f64::total_cmp);
        let median_seconds = reps[reps.len() / 2];
        let mut batches = self.batch_ns.clone();
        batches.sort_by(f64::total_cmp);
        let total: f64 = self.rep_seconds.iter().sum();
        let lookup_ns_mean = total * 1e9 / (tp.lookups_per_rep * self.rep_seconds.len()) as f64;
        ThroughputRow {
            index: kind.to_string(),
            lookups_per_rep: tp.lookups_per_rep,
            reps: self.rep_seconds.len(),
            hits_per_rep: self.hits_per_rep,
            median_seconds,
            msps: tp.lookups_per_rep as f64 / median_seconds / 1e6,
            lookup_ns_mean,
            lookup_ns_p50: percentile(&batches, 0.50),
            lookup_ns_p99: percentile(&batches, 0.99),
            cycles_per_lookup_estimate: cpu_ghz.map(|ghz| lookup_ns_mean * ghz),
        }
    }
}

/// Nearest-rank percentile of sorted, non-empty data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// One warm-up pass over the probe set, then `reps` repetitions of
/// `lookups_per_rep` lookups cycling through it, timed batch by batch.
pub fn time_lookups<N: AsRef<[u8]>>(
    probe: &[N],
    tp: &ThroughputConfig,
    mut lookup: impl FnMut(&[u8]) -> bool,
) -> Timing {
    assert!(!probe.is_empty(), "probe set is empty");
    for n in probe {
        black_box(lookup(black_box(n.as_ref())));
    }
    let mut rep_seconds = Vec::with_capacity(tp.reps);
    let mut batch_ns = Vec::with_capacity(tp.reps * tp.lookups_per_rep.div_ceil(tp.batch));
    let mut hits_per_rep = 0;
    for _ in 0..tp.reps {
        let mut pos = 0;
        let mut hits = 0;
        let mut remaining = tp.lookups_per_rep;
        let mut rep = 0.0;
        while remaining > 0 {
            let len = remaining.min(tp.batch);
            let start = Instant::now();
            for _ in 0..len {
                hits += lookup(black_box(probe[pos].as_ref())) as usize;
                pos += 1;
                if pos == probe.len() {
                    pos = 0;
                }
            }
            let secs = start.elapsed().as_secs_f64();
            rep += secs;
            batch_ns.push(secs * 1e9 / len as f64);
            remaining -= len;
        }
        rep_seconds.push(rep.max(f64::MIN_POSITIVE));
        hits_per_rep = hits;
    }
    Timing {
        rep_seconds,
        batch_ns,
        hits_per_rep,
    }
}
