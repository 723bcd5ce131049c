//! End-to-end use of the public API: names in, forwarding decisions out.

use std::collections::HashSet;

use lni_core::corpus::{generate_names, load_dataset, save_dataset};
use lni_core::index_io::{load_index, save_index};
use lni_core::lni::{entries_for, load_fib, save_fib, Lni, LniFib, Lookup, ModelSource};
use lni_core::model_io::{load_model, save_model};
use lni_core::pyramid::{build_training_set, PyramidConfig};
use lni_core::{CorpusSpec, FibEntry, LniIndex, Name, PyramidNn, PyramidNn32};

fn quick_config(regions: usize) -> PyramidConfig {
    let mut cfg = PyramidConfig::with_regions(regions).seeded(5);
    cfg.train_l1.epochs = 20;
    cfg.train_l2.epochs = 30;
    cfg
}

#[test]
fn names_to_faces_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let names = generate_names(&CorpusSpec::with_count(3000, 31)).unwrap();
    save_dataset(&names, dir.path().join("names.txt")).unwrap();
    let names = load_dataset(dir.path().join("names.txt")).unwrap();

    let cfg = quick_config(30);
    let model = PyramidNn::train(&build_training_set(&names, &cfg).unwrap(), &cfg).unwrap();
    save_model(&model, dir.path().join("m.pnn")).unwrap();
    let model: PyramidNn = load_model(dir.path().join("m.pnn")).unwrap();

    let entries = entries_for(&names, 4);
    save_fib(&entries, dir.path().join("fib.txt")).unwrap();
    let entries = load_fib(dir.path().join("fib.txt")).unwrap();

    let index = LniIndex::build(entries.clone(), 12_000, ModelSource::Preloaded(model)).unwrap();
    save_index(&index, 12_000, &entries, dir.path().join("i.lni")).unwrap();
    let loaded: LniIndex = load_index(dir.path().join("i.lni")).unwrap();

    let collided: HashSet<&Name> = loaded.collisions().iter().collect();
    for (i, e) in entries.iter().enumerate() {
        let hit = loaded.lookup(e.name().as_bytes());
        assert!(
            matches!(hit, Lookup::Hit { .. }),
            "stored or collided names never miss"
        );
        if !collided.contains(e.name()) {
            assert_eq!(hit.entry().unwrap().faces(), &[i as u32 % 4]);
        }
    }
    assert_eq!(loaded.stored() + loaded.collisions().len(), entries.len());

    let fib = LniFib::new(loaded, 2).unwrap();
    let mem = fib.memory_report();
    assert_eq!(mem.model_bytes, 2 * 31 * 141 * 8);
    assert_eq!(mem.bitmap_bytes, 2 * 12_000 * 2);
}

#[test]
fn training_inside_build_matches_separate_training() {
    let names = generate_names(&CorpusSpec::with_count(1500, 32)).unwrap();
    let cfg = quick_config(10);
    let entries = entries_for(&names, 2);
    let inline = LniIndex::build(entries.clone(), 6000, ModelSource::Train(cfg.clone())).unwrap();
    let model = PyramidNn::train(&build_training_set(&names, &cfg).unwrap(), &cfg).unwrap();
    let separate = LniIndex::build(entries, 6000, ModelSource::Preloaded(model)).unwrap();
    assert_eq!(inline.bitmap(), separate.bitmap());
}

#[test]
fn single_precision_models_run_the_same_pipeline() {
    let names = generate_names(&CorpusSpec::with_count(1500, 33)).unwrap();
    let cfg = quick_config(10);
    let ts = build_training_set(&names, &cfg).unwrap();
    let m32 = PyramidNn32::train(&ts, &cfg).unwrap();
    assert!(m32.classification_accuracy(&ts).unwrap() > 0.5);
    let index: Lni<f32> =
        Lni::build(entries_for(&names, 1), 6000, ModelSource::Preloaded(m32)).unwrap();
    let own = names
        .iter()
        .filter(|n| index.lookup(n.as_bytes()).entry().map(FibEntry::name) == Some(*n))
        .count();
    assert_eq!(own, index.stored());
}
