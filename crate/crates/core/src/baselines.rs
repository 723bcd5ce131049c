//! Comparator structures: hash slot mappers, a separately chained hash table
//! and a bit-level Patricia (crit-bit) trie.

use std::collections::BTreeMap;
use std::fmt;
use std::mem::size_of;
use std::str::FromStr;

use md5::{Digest, Md5};

use crate::bitmap::slot_of;
use crate::pyramid::Pyramid;
use crate::Scalar;

/// A deterministic function from a name to a slot in `0..slot_count()`.
pub trait SlotMapper {
    fn label(&self) -> String;
    fn slot_count(&self) -> usize;
    fn slot(&self, name: &[u8]) -> usize;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HashAlgorithm {
    /// First 8 digest bytes, little-endian.
    Md5,
    /// XXH64 with seed 0.
    Xxh64,
    Fnv1a64,
}

impl HashAlgorithm {
    pub const ALL: [HashAlgorithm; 3] = [
        HashAlgorithm::Md5,
        HashAlgorithm::Xxh64,
        HashAlgorithm::Fnv1a64,
    ];

    #[inline]
    pub fn hash(self, bytes: &[u8]) -> u64 {
        match self {
            HashAlgorithm::Md5 => {
                let digest = Md5::digest(bytes);
                u64::from_le_bytes(digest[..8].try_into().unwrap())
            }
            HashAlgorithm::Xxh64 => xxhash_rust::xxh64::xxh64(bytes, 0),
            HashAlgorithm::Fnv1a64 => fnv1a64(bytes),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            HashAlgorithm::Md5 => "md5",
            HashAlgorithm::Xxh64 => "xxh64",
            HashAlgorithm::Fnv1a64 => "fnv1a",
        }
    }
}

impl fmt::Display for HashAlgorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HashAlgorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        HashAlgorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown hash algorithm {s:?}"))
    }
}

#[inline]
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// `hash(name) mod slots`.
#[derive(Clone, Copy, Debug)]
pub struct HashMapper {
    pub algorithm: HashAlgorithm,
    pub slots: usize,
}

impl SlotMapper for HashMapper {
    fn label(&self) -> String {
        self.algorithm.to_string()
    }

    fn slot_count(&self) -> usize {
        self.slots
    }

    #[inline]
    fn slot(&self, name: &[u8]) -> usize {
        (self.algorithm.hash(name) % self.slots as u64) as usize
    }
}

/// The learned pipeline viewed as a mapper over `parts * slots_per_part`
/// slots.
#[derive(Clone, Copy, Debug)]
pub struct LearnedMapper<'a, T> {
    model: &'a Pyramid<T>,
    slots_per_part: usize,
}

impl<'a, T: Scalar> LearnedMapper<'a, T> {
    /// Rounds `total_slots` up to a whole number of slots per part.
    pub fn new(model: &'a Pyramid<T>, total_slots: usize) -> Self {
        LearnedMapper {
            model,
            slots_per_part: total_slots.div_ceil(model.regions()).max(1),
        }
    }
}

impl<T: Scalar> SlotMapper for LearnedMapper<'_, T> {
    fn label(&self) -> String {
        "lni".into()
    }

    fn slot_count(&self) -> usize {
        self.slots_per_part * self.model.regions()
    }

    #[inline]
    fn slot(&self, name: &[u8]) -> usize {
        let (part, cdf) = self.model.locate(name);
        part * self.slots_per_part + slot_of(cdf, self.slots_per_part)
    }
}

/// Separate chaining over `hash mod buckets`; stores full keys so lookups
/// are exact.
#[derive(Clone, Debug)]
pub struct ChainedHashTable<V> {
    algorithm: HashAlgorithm,
    buckets: Vec<Vec<(Box<[u8]>, V)>>,
    len: usize,
}

impl<V> ChainedHashTable<V> {
    pub fn new(algorithm: HashAlgorithm, buckets: usize) -> Self {
        assert!(buckets > 0, "hash table needs at least one bucket");
        ChainedHashTable {
            algorithm,
            buckets: (0..buckets).map(|_| Vec::new()).collect(),
            len: 0,
        }
    }

    pub fn algorithm(&self) -> HashAlgorithm {
        self.algorithm
    }

    pub fn bucket_count(&self) -> usize {
        self.buckets.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    fn bucket_of(&self, key: &[u8]) -> usize {
        (self.algorithm.hash(key) % self.buckets.len() as u64) as usize
    }

    /// Inserts or replaces; returns the previous value for `key`.
    pub fn insert(&mut self, key: &[u8], value: V) -> Option<V> {
        let b = self.bucket_of(key);
        let chain = &mut self.buckets[b];
        if let Some(slot) = chain.iter_mut().find(|(k, _)| &**k == key) {
            return Some(std::mem::replace(&mut slot.1, value));
        }
        chain.push((key.into(), value));
        self.len += 1;
        None
    }

    #[inline]
    pub fn get(&self, key: &[u8]) -> Option<&V> {
        self.buckets[self.bucket_of(key)]
            .iter()
            .find(|(k, _)| &**k == key)
            .map(|(_, v)| v)
    }

    pub fn empty_bucket_ratio(&self) -> f64 {
        let used = self.buckets.iter().filter(|c| !c.is_empty()).count();
        1.0 - used as f64 / self.buckets.len() as f64
    }

    /// Number of buckets per chain length, for lengths of 2 and above.
    pub fn chain_histogram(&self) -> BTreeMap<usize, usize> {
        let mut hist = BTreeMap::new();
        for c in self.buckets.iter().filter(|c| c.len() >= 2) {
            *hist.entry(c.len()).or_insert(0) += 1;
        }
        hist
    }

    pub fn longest_chain(&self) -> usize {
        self.buckets.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Heap and inline bytes actually held: bucket headers, chain slots at
    /// their allocated capacity, and key bytes.
    pub fn memory_bytes(&self) -> usize {
        let headers = self.buckets.capacity() * size_of::<Vec<(Box<[u8]>, V)>>();
        let slots: usize = self
            .buckets
            .iter()
            .map(|c| c.capacity() * size_of::<(Box<[u8]>, V)>())
            .sum();
        let keys: usize = self.buckets.iter().flatten().map(|(k, _)| k.len()).sum();
        size_of::<Self>() + headers + slots + keys
    }
}

const LEAF_TAG: u32 = 1 << 31;
/// Accounted bytes per internal node: crit-bit position and two child
/// references, 4 bytes each.
pub const TRIE_INTERNAL_NODE_BYTES: usize = 12;
/// Accounted bytes per leaf besides its key: one entry reference.
pub const TRIE_LEAF_REF_BYTES: usize = 4;

#[derive(Clone, Copy, Debug)]
struct Internal {
    /// Byte index of the critical bit.
    byte: u32,
    /// All bits set except the critical one.
    otherbits: u8,
    child: [u32; 2],
}

/// Bit-level Patricia trie (crit-bit tree) over byte strings. Keys behave as
/// if followed by an endless run of zero bytes, so keys must not contain
/// `0x00`; NDN names never do.
#[derive(Clone, Debug)]
pub struct PatriciaTrie<V> {
    nodes: Vec<Internal>,
    leaves: Vec<(Box<[u8]>, V)>,
    root: Option<u32>,
}

impl<V> Default for PatriciaTrie<V> {
    fn default() -> Self {
        PatriciaTrie {
            nodes: Vec::new(),
            leaves: Vec::new(),
            root: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DepthStats {
    pub mean: f64,
    pub max: usize,
}

#[inline]
fn byte_at(key: &[u8], i: u32) -> u8 {
    key.get(i as usize).copied().unwrap_or(0)
}

#[inline]
fn direction(node: &Internal, key: &[u8]) -> usize {
    ((1 + (node.otherbits | byte_at(key, node.byte)) as u32) >> 8) as usize
}

impl<V> PatriciaTrie<V> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn internal_nodes(&self) -> usize {
        self.nodes.len()
    }

    #[inline]
    fn closest_leaf(&self, key: &[u8]) -> Option<usize> {
        let mut r = self.root?;
        while r & LEAF_TAG == 0 {
            let node = &self.nodes[r as usize];
            r = node.child[direction(node, key)];
        }
        Some((r & !LEAF_TAG) as usize)
    }

    #[inline]
    pub fn get(&self, key: &[u8]) -> Option<&V> {
        let leaf = &self.leaves[self.closest_leaf(key)?];
        (&*leaf.0 == key).then_some(&leaf.1)
    }

    /// Inserts or replaces; returns the previous value for `key`.
    pub fn insert(&mut self, key: &[u8], value: V) -> Option<V> {
        assert!(!key.contains(&0), "trie keys must not contain NUL bytes");
        let Some(closest) = self.closest_leaf(key) else {
            self.leaves.push((key.into(), value));
            self.root = Some(LEAF_TAG);
            return None;
        };
        let existing = &self.leaves[closest].0;
        let len = existing.len().max(key.len()) as u32;
        let Some(byte) = (0..len).find(|&i| byte_at(existing, i) != byte_at(key, i)) else {
            return Some(std::mem::replace(&mut self.leaves[closest].1, value));
        };
        let diff = byte_at(existing, byte) ^ byte_at(key, byte);
        // keep only the highest differing bit, then invert
        let crit = 1u8 << (7 - diff.leading_zeros());
        let otherbits = !crit;
        let new_dir = ((1 + (otherbits | byte_at(key, byte)) as u32) >> 8) as usize;

        let leaf_ref = self.leaves.len() as u32 | LEAF_TAG;
        assert!(
            leaf_ref != u32::MAX && self.nodes.len() < LEAF_TAG as usize,
            "trie full"
        );
        self.leaves.push((key.into(), value));

        // find the edge where the new node belongs: above the first node
        // whose critical bit comes later than ours
        let mut parent: Option<(usize, usize)> = None;
        let mut r = self.root.unwrap();
        while r & LEAF_TAG == 0 {
            let node = &self.nodes[r as usize];
            if node.byte > byte || (node.byte == byte && node.otherbits > otherbits) {
                break;
            }
            let d = direction(node, key);
            parent = Some((r as usize, d));
            r = node.child[d];
        }
        let mut child = [0u32; 2];
        child[new_dir] = leaf_ref;
        child[1 - new_dir] = r;
        let new_ref = self.nodes.len() as u32;
        self.nodes.push(Internal {
            byte,
            otherbits,
            child,
        });
        match parent {
            Some((p, d)) => self.nodes[p].child[d] = new_ref,
            None => self.root = Some(new_ref),
        }
        None
    }

    /// Internal-node visits on the way to every leaf.
    pub fn depth_stats(&self) -> DepthStats {
        let Some(root) = self.root else {
            return DepthStats::default();
        };
        let (mut total, mut max) = (0usize, 0usize);
        let mut stack = vec![(root, 0usize)];
        while let Some((r, depth)) = stack.pop() {
            if r & LEAF_TAG != 0 {
                total += depth;
                max = max.max(depth);
            } else {
                for c in self.nodes[r as usize].child {
                    stack.push((c, depth + 1));
                }
            }
        }
        DepthStats {
            mean: total as f64 / self.leaves.len() as f64,
            max,
        }
    }

    /// Accounted bytes: 12 per internal node, 4 plus the key per leaf.
    pub fn memory_bytes(&self) -> usize {
        let keys: usize = self.leaves.iter().map(|(k, _)| k.len()).sum();
        self.nodes.len() * TRIE_INTERNAL_NODE_BYTES + self.leaves.len() * TRIE_LEAF_REF_BYTES + keys
    }

    /// Verifies the structural invariants: every node and leaf is reachable
    /// exactly once, every internal node has two children, critical bits
    /// strictly increase along each path, and each leaf agrees with the
    /// branch taken to reach it.
    pub fn check_invariants(&self) -> Result<(), String> {
        let Some(root) = self.root else {
            return if self.nodes.is_empty() && self.leaves.is_empty() {
                Ok(())
            } else {
                Err("empty root with stored nodes".into())
            };
        };
        if self.nodes.len() + 1 != self.leaves.len() {
            return Err(format!(
                "{} internal nodes for {} leaves",
                self.nodes.len(),
                self.leaves.len()
            ));
        }
        let mut seen_nodes = vec![false; self.nodes.len()];
        let mut seen_leaves = vec![false; self.leaves.len()];
        // (ref, bit position of parent, path decisions so far)
        type Pending = (u32, Option<u64>, Vec<(u32, u8, usize)>);
        let mut stack: Vec<Pending> = vec![(root, None, Vec::new())];
        while let Some((r, parent_pos, path)) = stack.pop() {
            if r & LEAF_TAG != 0 {
                let i = (r & !LEAF_TAG) as usize;
                if i >= self.leaves.len() || std::mem::replace(&mut seen_leaves[i], true) {
                    return Err(format!("leaf {i} missing or reached twice"));
                }
                let key = &self.leaves[i].0;
                for &(byte, otherbits, d) in &path {
                    let node = Internal {
                        byte,
                        otherbits,
                        child: [0; 2],
                    };
                    if direction(&node, key) != d {
                        return Err(format!("leaf {i} sits on the wrong side of byte {byte}"));
                    }
                }
                continue;
            }
            let n = r as usize;
            if n >= self.nodes.len() || std::mem::replace(&mut seen_nodes[n], true) {
                return Err(format!("node {n} missing or reached twice"));
            }
            let node = self.nodes[n];
            if node.otherbits.count_zeros() != 1 {
                return Err(format!("node {n} has a malformed bit mask"));
            }
            let pos = node.byte as u64 * 8 + node.otherbits.leading_ones() as u64;
            if parent_pos.is_some_and(|p| p >= pos) {
                return Err(format!("node {n} tests a bit no later than its parent"));
            }
            for (d, &c) in node.child.iter().enumerate() {
                let mut p = path.clone();
                p.push((node.byte, node.otherbits, d));
                stack.push((c, Some(pos), p));
            }
        }
        if seen_nodes.iter().any(|s| !s) || seen_leaves.iter().any(|s| !s) {
            return Err("unreachable nodes or leaves".into());
        }
        Ok(())
    }
}
