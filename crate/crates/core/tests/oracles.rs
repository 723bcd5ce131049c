//! Library results checked against closed-form expectations computed here.

use lni_core::baselines::{HashAlgorithm, HashMapper, SlotMapper};
use lni_core::corpus::generate_names;
use lni_core::metrics::{occupancy, slots_required};
use lni_core::CorpusSpec;

/// Expected fraction of inserts that land on an occupied slot when `m`
/// names are hashed uniformly into `s` slots.
fn uniform_fp(m: f64, s: f64) -> f64 {
    let lambda = m / s;
    1.0 - (1.0 - (-lambda).exp()) / lambda
}

/// Smallest slot count (continuous) whose expected uniform FP is at most
/// `target`, by bisection on the closed form.
fn uniform_slots_for(m: f64, target: f64) -> f64 {
    let (mut lo, mut hi) = (m * 1e-3, m * 1e4);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if uniform_fp(m, mid) <= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

#[test]
fn hash_slots_required_tracks_the_uniform_model() {
    let names = generate_names(&CorpusSpec::with_count(100_000, 21)).unwrap();
    let m = names.len() as f64;
    let expected = uniform_slots_for(m, 0.01);
    // The measured FP at a given size scatters by about 160k slots' worth
    // around the curve, so the search runs on a coarse grid.
    let granularity = 500_000;
    for alg in HashAlgorithm::ALL {
        let hashes: Vec<u64> = names.iter().map(|n| alg.hash(n.as_bytes())).collect();
        let found = slots_required(0.01, granularity, 100 * names.len(), |s| {
            Ok(occupancy(s, hashes.iter().map(|&h| (h % s as u64) as usize)).fp_probability())
        })
        .unwrap();
        assert!(
            (found as f64 - expected).abs() <= 2.0 * granularity as f64,
            "{alg}: found {found}, closed form {expected:.0}"
        );
    }
}

#[test]
fn empty_slot_ratio_follows_exp_minus_load() {
    let names = generate_names(&CorpusSpec::with_count(50_000, 22)).unwrap();
    for (alg, slots) in [
        (HashAlgorithm::Md5, 50_000),
        (HashAlgorithm::Xxh64, 100_000),
        (HashAlgorithm::Fnv1a64, 200_000),
    ] {
        let mapper = HashMapper {
            algorithm: alg,
            slots,
        };
        let occ = occupancy(slots, names.iter().map(|n| mapper.slot(n.as_bytes())));
        let lambda = names.len() as f64 / slots as f64;
        assert!(
            (occ.empty_slot_ratio() - (-lambda).exp()).abs() < 0.01,
            "{alg}"
        );
        assert!((occ.fp_probability() - uniform_fp(names.len() as f64, slots as f64)).abs() < 0.01);
    }
}

#[test]
fn closed_form_sanity() {
    assert!((uniform_fp(1.0, 1.0) - 0.3679).abs() < 1e-4);
    assert!((uniform_fp(1.0, 8.0) - 0.0600).abs() < 1e-4);
    let s = uniform_slots_for(1e5, 0.01);
    assert!((uniform_fp(1e5, s) - 0.01).abs() < 1e-9);
}
