//! Synthetic NDN-style name corpora: generation, persistence and splitting.
//!
//! A dataset file is ASCII text with one name per line, each terminated by a
//! single `\n` (no BOM, no CR).

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Characters used inside generated name components.
pub const COMPONENT_ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789-_";

/// Number of first-level "publisher" components shared between names.
const PUBLISHER_POOL: usize = 64;

/// A hierarchical name such as `/ndn/tju/maps`.
///
/// Printable ASCII only, starts with `/`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Name(String);

impl Name {
    pub fn new(s: impl Into<String>) -> Result<Self> {
        let s = s.into();
        let reason = if s.is_empty() {
            Some("empty")
        } else if !s.bytes().all(|b| (0x20..=0x7e).contains(&b)) {
            Some("contains non-printable or non-ASCII bytes")
        } else if !s.starts_with('/') {
            Some("does not start with '/'")
        } else {
            None
        };
        match reason {
            Some(reason) => Err(Error::InvalidName { name: s, reason }),
            None => Ok(Name(s)),
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn as_bytes(&self) -> &[u8] {
        self.0.as_bytes()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Slash-separated components, skipping the leading empty one.
    pub fn components(&self) -> impl Iterator<Item = &str> {
        self.0.split('/').skip(1)
    }
}

impl fmt::Debug for Name {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(&self.0, f)
    }
}

impl fmt::Display for Name {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::str::FromStr for Name {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Name::new(s)
    }
}

impl AsRef<[u8]> for Name {
    fn as_ref(&self) -> &[u8] {
        self.as_bytes()
    }
}

/// An ordered collection of distinct names.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dataset {
    names: Vec<Name>,
}

impl Dataset {
    /// Fails if any name occurs twice.
    pub fn new(names: Vec<Name>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(names.len());
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(Error::Config(format!("duplicate name {name}")));
            }
        }
        Ok(Dataset { names })
    }

    pub fn names(&self) -> &[Name] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Name> {
        self.names.iter()
    }

    pub fn into_names(self) -> Vec<Name> {
        self.names
    }

    pub fn mean_length(&self) -> f64 {
        if self.names.is_empty() {
            return 0.0;
        }
        self.names.iter().map(Name::len).sum::<usize>() as f64 / self.names.len() as f64
    }

    /// FNV-1a over the file representation; identifies a dataset in reports.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for name in &self.names {
            for &b in name.as_bytes().iter().chain(std::iter::once(&b'\n')) {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a Name;
    type IntoIter = std::slice::Iter<'a, Name>;

    fn into_iter(self) -> Self::IntoIter {
        self.names.iter()
    }
}

/// Parameters for [`generate_names`].
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub count: usize,
    pub seed: u64,
    /// Inclusive range of components per name.
    pub component_count_range: (usize, usize),
    /// Inclusive range of bytes per component.
    pub component_length_range: (usize, usize),
    /// Desired mean name length in bytes, slashes included.
    pub target_mean_length: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            count: 100_000,
            seed: 0,
            component_count_range: (2, 6),
            component_length_range: (3, 12),
            target_mean_length: 26.0,
        }
    }
}

impl CorpusSpec {
    pub fn with_count(count: usize, seed: u64) -> Self {
        CorpusSpec {
            count,
            seed,
            ..CorpusSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (cmin, cmax) = self.component_count_range;
        let (lmin, lmax) = self.component_length_range;
        if self.count == 0 {
            return Err(Error::Config("count must be at least 1".into()));
        }
        if cmin == 0 || cmin > cmax {
            return Err(Error::Config(format!(
                "component_count_range [{cmin}, {cmax}] is empty or starts at 0"
            )));
        }
        if lmin == 0 || lmin > lmax {
            return Err(Error::Config(format!(
                "component_length_range [{lmin}, {lmax}] is empty or starts at 0"
            )));
        }
        if !(self.target_mean_length.is_finite() && self.target_mean_length > 0.0) {
            return Err(Error::Config("target_mean_length must be positive".into()));
        }
        Ok(())
    }

    /// Upper bound on the number of distinct names this spec can produce.
    fn namespace_size(&self) -> f64 {
        let (cmin, cmax) = self.component_count_range;
        let (lmin, lmax) = self.component_length_range;
        let alpha = COMPONENT_ALPHABET.len() as f64;
        let per_component: f64 = (lmin..=lmax).map(|l| alpha.powi(l as i32)).sum();
        (cmin..=cmax)
            .map(|c| {
                if c == 1 {
                    per_component
                } else {
                    PUBLISHER_POOL as f64 * per_component.powi(c as i32 - 1)
                }
            })
            .sum()
    }

    /// Bernoulli probability for the binomial component-length draw, chosen
    /// so the expected name length matches `target_mean_length`.
    fn length_bias(&self) -> f64 {
        let (cmin, cmax) = self.component_count_range;
        let (lmin, lmax) = self.component_length_range;
        if lmin == lmax {
            return 0.0;
        }
        let mean_components = (cmin + cmax) as f64 / 2.0;
        // every component contributes its bytes plus one '/'
        let per_component = self.target_mean_length / mean_components - 1.0;
        ((per_component - lmin as f64) / (lmax - lmin) as f64).clamp(0.0, 1.0)
    }
}

struct NameSampler {
    rng: ChaCha8Rng,
    bias: f64,
    counts: (usize, usize),
    lengths: (usize, usize),
    publishers: Vec<String>,
    // cumulative Zipf(1) weights over `publishers`
    publisher_cdf: Vec<f64>,
}

impl NameSampler {
    fn new(spec: &CorpusSpec) -> Self {
        let mut sampler = NameSampler {
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            bias: spec.length_bias(),
            counts: spec.component_count_range,
            lengths: spec.component_length_range,
            publishers: Vec::new(),
            publisher_cdf: Vec::new(),
        };
        let mut seen = HashSet::new();
        while sampler.publishers.len() < PUBLISHER_POOL {
            let token = sampler.component();
            // tiny alphabets/lengths may not have PUBLISHER_POOL distinct tokens
            if seen.insert(token.clone()) || seen.len() >= sampler.component_space() {
                sampler.publishers.push(token);
            }
        }
        let total: f64 = (1..=PUBLISHER_POOL).map(|r| 1.0 / r as f64).sum();
        let mut acc = 0.0;
        sampler.publisher_cdf = (1..=PUBLISHER_POOL)
            .map(|r| {
                acc += 1.0 / r as f64 / total;
                acc
            })
            .collect();
        sampler
    }

    fn component_space(&self) -> usize {
        let alpha = COMPONENT_ALPHABET.len() as f64;
        let n: f64 = (self.lengths.0..=self.lengths.1)
            .map(|l| alpha.powi(l as i32))
            .sum();
        n.min(usize::MAX as f64) as usize
    }

    fn component(&mut self) -> String {
        let (lmin, lmax) = self.lengths;
        let len = lmin
            + (0..lmax - lmin)
                .filter(|_| self.rng.gen_bool(self.bias))
                .count();
        (0..len)
            .map(|_| COMPONENT_ALPHABET[self.rng.gen_range(0..COMPONENT_ALPHABET.len())] as char)
            .collect()
    }

    fn publisher(&mut self) -> String {
        let u: f64 = self.rng.gen();
        let idx = self
            .publisher_cdf
            .partition_point(|&c| c < u)
            .min(PUBLISHER_POOL - 1);
        self.publishers[idx].clone()
    }

    fn name(&mut self) -> String {
        let components = self.rng.gen_range(self.counts.0..=self.counts.1);
        let mut s = String::with_capacity(32);
        for i in 0..components {
            s.push('/');
            let c = if i == 0 && components > 1 {
                self.publisher()
            } else {
                self.component()
            };
            s.push_str(&c);
        }
        s
    }
}

/// Generates `spec.count` distinct names, deterministically for a given seed.
///
/// Names are `/publisher/comp/...`: the first component comes from a small
/// Zipf-weighted pool so names share prefixes, the remaining components are
/// random strings over [`COMPONENT_ALPHABET`]. A candidate that duplicates an
/// earlier name is redrawn; after `count * 100` draws the call gives up.
pub fn generate_names(spec: &CorpusSpec) -> Result<Dataset> {
    spec.validate()?;
    if spec.namespace_size() < spec.count as f64 {
        return Err(Error::NamespaceExhausted {
            requested: spec.count,
            produced: 0,
        });
    }
    let mut sampler = NameSampler::new(spec);
    let mut seen = HashSet::with_capacity(spec.count);
    let mut names = Vec::with_capacity(spec.count);
    let budget = spec.count.saturating_mul(100);
    let mut attempts = 0usize;
    while names.len() < spec.count {
        if attempts == budget {
            return Err(Error::NamespaceExhausted {
                requested: spec.count,
                produced: names.len(),
            });
        }
        attempts += 1;
        let candidate = sampler.name();
        if seen.insert(candidate.clone()) {
            names.push(Name(candidate));
        }
    }
    Ok(Dataset { names })
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for name in dataset {
        out.write_all(name.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    parse_dataset(&fs::read(path)?)
}

/// Parses the dataset file format. A missing final `\n` is tolerated.
pub fn parse_dataset(bytes: &[u8]) -> Result<Dataset> {
    let body = bytes.strip_suffix(b"\n").unwrap_or(bytes);
    if body.is_empty() {
        return Ok(Dataset::default());
    }
    let mut seen = HashSet::new();
    let mut names = Vec::new();
    for (idx, line) in body.split(|&b| b == b'\n').enumerate() {
        let line_no = idx + 1;
        let parse_err = |reason: String| Error::Parse {
            line: line_no,
            reason,
        };
        if line.is_empty() {
            return Err(parse_err("empty line".into()));
        }
        let text = std::str::from_utf8(line)
            .ok()
            .filter(|s| s.is_ascii())
            .ok_or_else(|| parse_err("non-ASCII bytes".into()))?;
        let name = Name::new(text).map_err(|e| parse_err(e.to_string()))?;
        if !seen.insert(name.clone()) {
            return Err(parse_err(format!("duplicate name {name}")));
        }
        names.push(name);
    }
    Ok(Dataset { names })
}

/// Splits `dataset` into consecutive, disjoint partitions in input order.
///
/// Partition `i` gets `floor(weights[i] * len)` names. When the weights sum
/// to one, the rounding remainder goes to the last partition.
pub fn split_dataset(dataset: &Dataset, weights: &[f64]) -> Result<Vec<Dataset>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if weights.is_empty() || weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::Config("split weights must be positive".into()));
    }
    let total: f64 = weights.iter().sum();
    if total > 1.0 + 1e-9 {
        return Err(Error::Config(format!("split weights sum to {total} > 1")));
    }
    let n = dataset.len();
    let mut sizes: Vec<usize> = weights
        .iter()
        .map(|w| (w * n as f64).floor() as usize)
        .collect();
    if (total - 1.0).abs() <= 1e-9 {
        let assigned: usize = sizes.iter().sum();
        *sizes.last_mut().unwrap() += n - assigned.min(n);
    }
    let mut start = 0;
    Ok(sizes
        .into_iter()
        .map(|size| {
            let end = (start + size).min(n);
            let part = Dataset {
                names: dataset.names[start..end].to_vec(),
            };
            start = end;
            part
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(names: &[&str]) -> Dataset {
        Dataset::new(names.iter().map(|s| Name::new(*s).unwrap()).collect()).unwrap()
    }

    #[test]
    fn generates_requested_count_of_valid_names() {
        let d = generate_names(&CorpusSpec::with_count(1000, 7)).unwrap();
        assert_eq!(d.len(), 1000);
        let distinct: HashSet<_> = d.iter().collect();
        assert_eq!(distinct.len(), 1000);
        for name in &d {
            assert!(name.as_str().starts_with('/'));
            assert!(name.as_bytes().iter().all(|b| (0x20..=0x7e).contains(b)));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = CorpusSpec::with_count(5000, 42);
        assert_eq!(
            generate_names(&spec).unwrap(),
            generate_names(&spec).unwrap()
        );
        let other = generate_names(&CorpusSpec::with_count(5000, 43)).unwrap();
        assert_ne!(generate_names(&spec).unwrap(), other);
    }

    #[test]
    fn mean_length_tracks_target() {
        let d = generate_names(&CorpusSpec::with_count(100_000, 3)).unwrap();
        let mean = d.mean_length();
        assert!((20.8..=31.2).contains(&mean), "mean length {mean}");
    }

    #[test]
    fn tiny_namespace_is_rejected() {
        let spec = CorpusSpec {
            count: 100,
            component_count_range: (1, 1),
            component_length_range: (1, 1),
            ..CorpusSpec::default()
        };
        assert!(matches!(
            generate_names(&spec),
            Err(Error::NamespaceExhausted { requested: 100, .. })
        ));
    }

    #[test]
    fn namespace_exactly_full_is_reachable_or_reports_progress() {
        // 38 one-byte single-component names exist; asking for all of them
        // either succeeds or reports how far it got.
        let spec = CorpusSpec {
            count: 38,
            component_count_range: (1, 1),
            component_length_range: (1, 1),
            ..CorpusSpec::default()
        };
        match generate_names(&spec) {
            Ok(d) => assert_eq!(d.len(), 38),
            Err(Error::NamespaceExhausted { produced, .. }) => assert!(produced < 38),
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = CorpusSpec::with_count(0, 1);
        assert!(generate_names(&spec).is_err());
        spec.count = 10;
        spec.component_count_range = (4, 2);
        assert!(generate_names(&spec).is_err());
    }

    #[test]
    fn parses_simple_file() {
        let d = parse_dataset(b"/a\n/b\n").unwrap();
        assert_eq!(d, ds(&["/a", "/b"]));
    }

    #[test]
    fn empty_line_is_a_parse_error_with_line_number() {
        match parse_dataset(b"/a\n\n/b\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_non_ascii_cr_and_duplicates() {
        assert!(matches!(
            parse_dataset("/a\n/é\n".as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_dataset(b"/a\r\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_dataset(b"/a\n/a\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_dataset(b"a\n"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn save_load_round_trip() {
        let d = generate_names(&CorpusSpec::with_count(2000, 11)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("names.txt");
        save_dataset(&d, &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), d);
        let bytes = fs::read(&path).unwrap();
        assert_eq!(*bytes.last().unwrap(), b'\n');
        assert!(!bytes.contains(&b'\r'));
    }

    #[test]
    fn split_sizes_follow_floor_rule() {
        let names: Vec<String> = (0..101).map(|i| format!("/n{i}")).collect();
        let d101 = Dataset::new(
            names
                .iter()
                .map(|s| Name::new(s.as_str()).unwrap())
                .collect(),
        )
        .unwrap();
        let parts = split_dataset(&d101, &[0.5]).unwrap();
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0].len(), 50);

        let d100 = Dataset::new(d101.names()[..100].to_vec()).unwrap();
        let sizes: Vec<usize> = split_dataset(&d100, &[0.8, 0.2])
            .unwrap()
            .iter()
            .map(Dataset::len)
            .collect();
        assert_eq!(sizes, vec![80, 20]);

        let sizes: Vec<usize> = split_dataset(&d101, &[0.8, 0.2])
            .unwrap()
            .iter()
            .map(Dataset::len)
            .collect();
        assert_eq!(sizes, vec![80, 21]);
    }

    #[test]
    fn split_partitions_are_disjoint_and_ordered() {
        let d = generate_names(&CorpusSpec::with_count(1000, 5)).unwrap();
        let parts = split_dataset(&d, &[0.7, 0.2, 0.1]).unwrap();
        let joined: Vec<Name> = parts.iter().flat_map(|p| p.names().to_vec()).collect();
        assert_eq!(joined, d.names());
    }

    #[test]
    fn split_errors() {
        assert!(matches!(
            split_dataset(&Dataset::default(), &[1.0]),
            Err(Error::EmptyDataset)
        ));
        let d = ds(&["/a", "/b"]);
        assert!(split_dataset(&d, &[0.7, 0.7]).is_err());
        assert!(split_dataset(&d, &[0.0]).is_err());
        assert!(split_dataset(&d, &[]).is_err());
    }
}
