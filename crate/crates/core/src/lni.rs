//! The learned name index: folding, the two-level model and the offset
//! bitmap wired together, plus the FIB facade and snapshot files.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::bitmap::{EnhancedBitmap, InsertOutcome, PartedStore, Probe, CELL_BYTES};
use crate::corpus::{Dataset, Name};
use crate::error::{Error, Result};
use crate::metrics::{Occupancy, SlotCounter};
use crate::pyramid::{build_training_set, model_size_for, Pyramid, PyramidConfig};
use crate::Scalar;

pub type Face = u32;

/// A forwarding entry: a name and its outgoing faces.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FibEntry {
    name: Name,
    faces: Vec<Face>,
}

impl FibEntry {
    pub fn new(name: Name, faces: Vec<Face>) -> Result<Self> {
        if faces.is_empty() {
            return Err(Error::Config(format!(
                "entry {} has no faces",
                name.as_str()
            )));
        }
        Ok(FibEntry { name, faces })
    }

    /// Single-face entry, for experiments that only care about names.
    pub fn with_face(name: Name, face: Face) -> Self {
        FibEntry {
            name,
            faces: vec![face],
        }
    }

    pub fn name(&self) -> &Name {
        &self.name
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }
}

impl fmt::Display for FibEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t", self.name.as_str())?;
        for (i, face) in self.faces.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{face}")?;
        }
        Ok(())
    }
}

impl FromStr for FibEntry {
    type Err = String;

    fn from_str(line: &str) -> std::result::Result<Self, String> {
        let (name, faces) = line
            .split_once('\t')
            .ok_or("missing TAB between name and faces")?;
        let name = Name::new(name).map_err(|e| e.to_string())?;
        let faces = faces
            .split(',')
            .map(|f| {
                f.parse::<Face>()
                    .map_err(|e| format!("bad face {f:?}: {e}"))
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        FibEntry::new(name, faces).map_err(|e| e.to_string())
    }
}

/// Parses a FIB snapshot: one `name<TAB>face,face,...` per line.
pub fn parse_fib(text: &str) -> Result<Vec<FibEntry>> {
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            line.parse().map_err(|reason| Error::Parse {
                line: i + 1,
                reason,
            })
        })
        .collect()
}

pub fn load_fib(path: impl AsRef<Path>) -> Result<Vec<FibEntry>> {
    let bytes = fs::read(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::Parse {
        line: 1 + bytes[..e.valid_up_to()]
            .iter()
            .filter(|&&b| b == b'\n')
            .count(),
        reason: "invalid UTF-8".into(),
    })?;
    parse_fib(text)
}

pub fn save_fib(entries: &[FibEntry], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&e.to_string());
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// One single-face entry per name, faces cycling through `0..faces`.
pub fn entries_for(dataset: &Dataset, faces: Face) -> Vec<FibEntry> {
    dataset
        .iter()
        .enumerate()
        .map(|(i, n)| FibEntry::with_face(n.clone(), i as Face % faces.max(1)))
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LniStats {
    pub inserts: u64,
    pub collisions: u64,
    pub lookups: u64,
    pub hits: u64,
    pub misses: u64,
}

#[derive(Debug, Default)]
struct Counters {
    inserts: AtomicU64,
    collisions: AtomicU64,
    lookups: AtomicU64,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl Counters {
    fn snapshot(&self) -> LniStats {
        LniStats {
            inserts: self.inserts.load(Ordering::Relaxed),
            collisions: self.collisions.load(Ordering::Relaxed),
            lookups: self.lookups.load(Ordering::Relaxed),
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
        }
    }
}

/// Outcome of a lookup.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Lookup<'a> {
    Hit { address: u64, entry: &'a FibEntry },
    Miss,
}

impl<'a> Lookup<'a> {
    pub fn entry(&self) -> Option<&'a FibEntry> {
        match *self {
            Lookup::Hit { entry, .. } => Some(entry),
            Lookup::Miss => None,
        }
    }
}

/// Where the model for [`Lni::build`] comes from.
pub enum ModelSource<T> {
    Train(PyramidConfig),
    Preloaded(Pyramid<T>),
}

/// Learned name index. Insert-only; after building, lookups take `&self`
/// and may run from many threads.
#[derive(Debug)]
pub struct Lni<T> {
    model: Pyramid<T>,
    bitmap: EnhancedBitmap,
    store: PartedStore<FibEntry>,
    stats: Counters,
    collided: Vec<Name>,
}

impl<T: Scalar> Lni<T> {
    /// An empty index over `total_slots` slots, one bitmap part per region.
    pub fn empty(model: Pyramid<T>, total_slots: usize) -> Result<Self> {
        let parts = model.regions();
        Ok(Lni {
            bitmap: EnhancedBitmap::new(parts, total_slots)?,
            store: PartedStore::new(parts),
            model,
            stats: Counters::default(),
            collided: Vec::new(),
        })
    }

    /// Trains (or takes) a model and inserts every entry.
    pub fn build(
        entries: Vec<FibEntry>,
        total_slots: usize,
        source: ModelSource<T>,
    ) -> Result<Self> {
        if total_slots == 0 {
            return Err(Error::Config("total_slots must be at least 1".into()));
        }
        let model = match source {
            ModelSource::Preloaded(m) => m,
            ModelSource::Train(cfg) => {
                let names = Dataset::new(entries.iter().map(|e| e.name.clone()).collect())?;
                Pyramid::train(&build_training_set(&names, &cfg)?, &cfg)?
            }
        };
        let mut lni = Self::empty(model, total_slots)?;
        for e in entries {
            lni.insert(e)?;
        }
        Ok(lni)
    }

    /// Maps a name to its bitmap coordinates `(part, slot)`.
    #[inline]
    pub fn place(&self, name: &[u8]) -> (usize, usize) {
        let (part, cdf) = self.model.locate(name);
        (part, self.bitmap.slot_of(cdf))
    }

    pub fn insert(&mut self, entry: FibEntry) -> Result<InsertOutcome> {
        let (part, slot) = self.place(entry.name.as_bytes());
        let name = entry.name.clone();
        let outcome = self.bitmap.insert(&mut self.store, part, slot, entry)?;
        self.stats.inserts.fetch_add(1, Ordering::Relaxed);
        if outcome == InsertOutcome::Collision {
            self.stats.collisions.fetch_add(1, Ordering::Relaxed);
            self.collided.push(name);
        }
        Ok(outcome)
    }

    /// Fold, predict part and position, probe the bitmap. A hit on a name
    /// that was never inserted is a false positive; callers that care compare
    /// the returned entry's name.
    #[inline]
    pub fn lookup(&self, name: &[u8]) -> Lookup<'_> {
        let result = self.lookup_untracked(name);
        self.stats.lookups.fetch_add(1, Ordering::Relaxed);
        match result {
            Lookup::Hit { .. } => self.stats.hits.fetch_add(1, Ordering::Relaxed),
            Lookup::Miss => self.stats.misses.fetch_add(1, Ordering::Relaxed),
        };
        result
    }

    /// [`Lni::lookup`] without touching the counters.
    #[inline]
    pub fn lookup_untracked(&self, name: &[u8]) -> Lookup<'_> {
        let (part, slot) = self.place(name);
        match self.bitmap.lookup(&self.store, part, slot) {
            Probe::Hit { address, entry } => Lookup::Hit { address, entry },
            Probe::Miss => Lookup::Miss,
        }
    }

    pub fn stats(&self) -> LniStats {
        self.stats.snapshot()
    }

    /// Names whose insert hit an occupied slot, in insertion order.
    pub fn collisions(&self) -> &[Name] {
        &self.collided
    }

    pub fn stored(&self) -> usize {
        self.store.len()
    }

    /// Build-time false-positive probability: collisions over inserts.
    pub fn false_positive_probability(&self) -> f64 {
        let s = self.stats();
        if s.inserts == 0 {
            0.0
        } else {
            s.collisions as f64 / s.inserts as f64
        }
    }

    /// Probe-mode false-positive probability: the fraction of `probe` names
    /// that hit an entry stored under a different name.
    pub fn probe_false_positive_probability(&self, probe: &Dataset) -> Result<f64> {
        if probe.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let false_hits = probe
            .iter()
            .filter(|n| matches!(self.lookup(n.as_bytes()), Lookup::Hit { entry, .. } if entry.name != **n))
            .count();
        Ok(false_hits as f64 / probe.len() as f64)
    }

    pub fn empty_slot_ratio(&self) -> f64 {
        self.bitmap.empty_slot_ratio()
    }

    pub fn model(&self) -> &Pyramid<T> {
        &self.model
    }

    pub fn bitmap(&self) -> &EnhancedBitmap {
        &self.bitmap
    }

    pub fn store(&self) -> &PartedStore<FibEntry> {
        &self.store
    }

    pub fn into_model(self) -> Pyramid<T> {
        self.model
    }
}

/// Model placements of a name set, reusable across slot budgets without
/// rerunning the networks.
#[derive(Clone, Debug)]
pub struct Placements {
    parts: usize,
    located: Vec<(u32, f64)>,
}

impl Placements {
    pub fn compute<T: Scalar>(model: &Pyramid<T>, names: &Dataset) -> Self {
        Placements {
            parts: model.regions(),
            located: names
                .iter()
                .map(|n| {
                    let (part, cdf) = model.locate(n.as_bytes());
                    (part as u32, cdf)
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.located.len()
    }

    pub fn is_empty(&self) -> bool {
        self.located.is_empty()
    }

    pub fn parts(&self) -> usize {
        self.parts
    }

    /// Occupancy of a bitmap built with `total_slots` slots (rounded up to a
    /// whole number of slots per part, as the bitmap does).
    pub fn occupancy(&self, total_slots: usize, counter: &mut SlotCounter) -> Occupancy {
        let per_part = total_slots.div_ceil(self.parts).max(1);
        counter.count(
            per_part * self.parts,
            self.located
                .iter()
                .map(|&(p, cdf)| p as usize * per_part + crate::bitmap::slot_of(cdf, per_part)),
        )
    }
}

/// Memory held by an LNI-based FIB made of `replicas` identical indexes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MemoryBreakdown {
    pub replicas: usize,
    pub model_bytes: usize,
    pub bitmap_bytes: usize,
    pub total_bytes: usize,
}

impl MemoryBreakdown {
    /// Model parameters at 8 bytes each plus 2-byte bitmap cells, where the
    /// bitmap has `regions` parts covering `total_slots` per replica.
    pub fn for_layout(
        replicas: usize,
        regions: usize,
        input_dim: usize,
        hidden: usize,
        total_slots: usize,
    ) -> Self {
        let model_bytes = replicas * model_size_for(regions, input_dim, hidden, 8);
        let bitmap_bytes = replicas * total_slots.div_ceil(regions) * regions * CELL_BYTES;
        MemoryBreakdown {
            replicas,
            model_bytes,
            bitmap_bytes,
            total_bytes: model_bytes + bitmap_bytes,
        }
    }
}

/// FIB facade. Only one index does the work; `replicas` scales the memory
/// report to a multi-index deployment.
#[derive(Debug)]
pub struct LniFib<T> {
    index: Lni<T>,
    replicas: usize,
}

pub const DEFAULT_REPLICAS: usize = 2;

impl<T: Scalar> LniFib<T> {
    pub fn new(index: Lni<T>, replicas: usize) -> Result<Self> {
        if replicas == 0 {
            return Err(Error::Config("replicas must be at least 1".into()));
        }
        Ok(LniFib { index, replicas })
    }

    pub fn index(&self) -> &Lni<T> {
        &self.index
    }

    pub fn replicas(&self) -> usize {
        self.replicas
    }

    pub fn lookup(&self, name: &[u8]) -> Lookup<'_> {
        self.index.lookup(name)
    }

    /// Model bytes are counted as stored on disk (8 bytes per parameter).
    pub fn memory_report(&self) -> MemoryBreakdown {
        let m = self.index.model();
        MemoryBreakdown::for_layout(
            self.replicas,
            m.regions(),
            m.input_dim(),
            m.hidden(),
            self.index.bitmap().total_slots(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bpnn::{Optimizer, TrainConfig};
    use crate::corpus::{generate_names, CorpusSpec};
    use crate::metrics::occupancy;
    use std::collections::HashSet;

    fn small_cfg(regions: usize) -> PyramidConfig {
        let mut cfg = PyramidConfig::with_regions(regions);
        cfg.train_l1 = TrainConfig {
            optimizer: Optimizer::LevenbergMarquardt,
            epochs: 20,
            seed: 1,
            standardize: true,
            ..TrainConfig::default()
        };
        cfg.train_l2 = TrainConfig {
            epochs: 20,
            seed: 2,
            ..cfg.train_l1.clone()
        };
        cfg
    }

    fn small_index(n: usize, slots: usize) -> (Dataset, Lni<f64>) {
        let d = generate_names(&CorpusSpec::with_count(n, 5)).unwrap();
        let lni = Lni::build(entries_for(&d, 4), slots, ModelSource::Train(small_cfg(10))).unwrap();
        (d, lni)
    }

    #[test]
    fn fib_lines_round_trip() {
        let text = "/a/b\t1,2,3\n/c\t7\n";
        let entries = parse_fib(text).unwrap();
        assert_eq!(entries[0].faces(), &[1, 2, 3]);
        assert_eq!(entries[1].name().as_str(), "/c");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fib.txt");
        save_fib(&entries, &path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), text);
        assert_eq!(load_fib(&path).unwrap(), entries);
    }

    #[test]
    fn fib_parse_errors_name_the_line() {
        for bad in [
            "/a\t1\n/b\n",
            "/a\t1\n/b\t\n",
            "/a\t1\n/b\tx\n",
            "/a\t1\nb\t1\n",
        ] {
            assert!(
                matches!(parse_fib(bad), Err(Error::Parse { line: 2, .. })),
                "{bad:?}"
            );
        }
        assert!(FibEntry::new(Name::new("/a").unwrap(), vec![]).is_err());
    }

    #[test]
    fn build_counts_every_insert() {
        let (d, lni) = small_index(2000, 4000);
        let s = lni.stats();
        assert_eq!(s.inserts, 2000);
        assert_eq!(s.inserts, lni.stored() as u64 + s.collisions);
        assert_eq!(lni.collisions().len() as u64, s.collisions);
        assert_eq!(lni.bitmap().parts(), lni.model().regions());
        lni.bitmap().check_tokens(lni.store()).unwrap();
        assert_eq!(d.len(), 2000);
    }

    #[test]
    fn inserted_names_hit_their_own_entries() {
        let (d, lni) = small_index(2000, 8000);
        let collided: HashSet<&Name> = lni.collisions().iter().collect();
        for n in d.iter().filter(|n| !collided.contains(n)) {
            assert_eq!(
                lni.lookup(n.as_bytes()).entry().map(FibEntry::name),
                Some(n)
            );
        }
        let s = lni.stats();
        assert_eq!(s.hits + s.misses, s.lookups);
        assert_eq!(s.misses, 0);
    }

    #[test]
    fn absent_names_miss_or_are_false_positives() {
        let (_, lni) = small_index(1000, 100_000);
        let probe = generate_names(&CorpusSpec::with_count(1000, 77)).unwrap();
        let fp = lni.probe_false_positive_probability(&probe).unwrap();
        assert!((0.0..0.5).contains(&fp));
        assert!(lni.stats().misses > 0);
    }

    #[test]
    fn probe_of_inserted_names_has_no_false_positives() {
        let (d, lni) = small_index(1000, 8000);
        let collided: HashSet<&Name> = lni.collisions().iter().collect();
        let kept = Dataset::new(
            d.iter()
                .filter(|n| !collided.contains(n))
                .cloned()
                .collect(),
        )
        .unwrap();
        assert_eq!(lni.probe_false_positive_probability(&kept).unwrap(), 0.0);
    }

    #[test]
    fn rebuild_is_deterministic() {
        let (_, a) = small_index(1500, 3000);
        let (_, b) = small_index(1500, 3000);
        assert_eq!(a.stats(), b.stats());
        assert_eq!(a.bitmap(), b.bitmap());
    }

    #[test]
    fn placements_agree_with_the_index() {
        let (d, lni) = small_index(1500, 3000);
        let placements = Placements::compute(lni.model(), &d);
        let occ = placements.occupancy(3000, &mut SlotCounter::new());
        assert_eq!(occ.collisions() as u64, lni.stats().collisions);
        assert!((occ.empty_slot_ratio() - lni.empty_slot_ratio()).abs() < 1e-15);
        let direct = occupancy(
            3000,
            d.iter().map(|n| {
                let (p, s) = lni.place(n.as_bytes());
                lni.bitmap().global_slot(p, s)
            }),
        );
        assert_eq!(direct, occ);
    }

    #[test]
    fn memory_layouts() {
        let parity = MemoryBreakdown::for_layout(2, 1000, 5, 20, 14_000_000);
        assert_eq!(parity.model_bytes, 2 * 1_129_128);
        assert_eq!(parity.bitmap_bytes, 28_000_000 * 2);
        assert_eq!(parity.total_bytes, 58_258_256);
        let single = MemoryBreakdown::for_layout(1, 1000, 5, 20, 4000);
        assert_eq!(single.total_bytes, 1_129_128 + 8000);
        let double = MemoryBreakdown::for_layout(1, 1000, 5, 20, 8000);
        assert_eq!(double.bitmap_bytes, 2 * single.bitmap_bytes);
    }

    #[test]
    fn fib_memory_report_uses_the_index_layout() {
        let model = Pyramid::<f64>::init(&PyramidConfig::default()).unwrap();
        let lni = Lni::empty(model, 4000).unwrap();
        let fib = LniFib::new(lni, 1).unwrap();
        assert_eq!(fib.memory_report().total_bytes, 1_129_128 + 8000);
        assert!(LniFib::new(
            Lni::<f64>::empty(Pyramid::init(&small_cfg(2)).unwrap(), 4).unwrap(),
            0
        )
        .is_err());
    }
}
