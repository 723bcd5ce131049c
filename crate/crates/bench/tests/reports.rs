use lni_bench::cache::Cache;
use lni_bench::config::{
    DatasetSource, ExperimentConfig, IndexKind, ThroughputConfig, TrainingConfig,
};
use lni_bench::report::{csv_pointer, write_report, Format};
use lni_bench::{compare, run, MetricsReport, REPORT_SCHEMA};
use serde_json::Value;

fn small_config(names: usize, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        dataset: DatasetSource::Generate { names, seed },
        indexes: IndexKind::ALL.to_vec(),
        training: TrainingConfig {
            regions: 20,
            seed,
            level1_epochs: 20,
            level2_epochs: 30,
            ..TrainingConfig::default()
        },
        throughput: ThroughputConfig {
            lookups_per_rep: 20_000,
            reps: 3,
            batch: 500,
        },
        cpu_ghz: Some(2.0),
        ..ExperimentConfig::default()
    }
}

fn report(cfg: &ExperimentConfig) -> MetricsReport {
    run(cfg, &mut Cache::disabled()).unwrap().report
}

fn to_bytes(value: &impl serde::Serialize, format: Format) -> Vec<u8> {
    let mut out = Vec::new();
    write_report(value, format, &mut out).unwrap();
    out
}

fn schema_errors(instance: &Value) -> Vec<String> {
    let schema: Value = serde_json::from_str(REPORT_SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    validator
        .iter_errors(instance)
        .map(|e| format!("{} at {}", e, e.instance_path()))
        .collect()
}

#[test]
fn metrics_and_comparison_reports_match_the_schema() {
    let r = report(&small_config(3000, 1));
    assert!(!r.throughput.is_empty());
    let value = serde_json::to_value(&r).unwrap();
    assert_eq!(schema_errors(&value), Vec::<String>::new());

    let c = compare(std::slice::from_ref(&r)).unwrap();
    let value = serde_json::to_value(&c).unwrap();
    assert_eq!(schema_errors(&value), Vec::<String>::new());

    let mut bad = serde_json::to_value(&r).unwrap();
    bad["fp_sweep"][0]["fp_probability"] = Value::from(1.5);
    assert!(!schema_errors(&bad).is_empty());
    let mut bad = serde_json::to_value(&r).unwrap();
    bad["memory"][0]["total_bytes"] = Value::from(12.5);
    assert!(!schema_errors(&bad).is_empty());
}

#[test]
fn csv_values_equal_their_json_counterparts() {
    let r = report(&small_config(2000, 2));
    let json: Value = serde_json::from_slice(&to_bytes(&r, Format::Json)).unwrap();
    let csv = to_bytes(&r, Format::Csv);
    let mut reader = csv::Reader::from_reader(&csv[..]);
    assert_eq!(
        reader.headers().unwrap(),
        vec!["section", "row", "field", "value"]
    );
    let mut rows = 0;
    for record in reader.records() {
        let record = record.unwrap();
        let pointer = csv_pointer(&record[0], &record[1], &record[2]);
        let expected = match json.pointer(&pointer) {
            Some(Value::String(s)) => s.clone(),
            Some(v) => v.to_string(),
            None => panic!("CSV row {pointer} has no JSON counterpart"),
        };
        assert_eq!(&record[3], expected, "{pointer}");
        rows += 1;
    }
    fn leaves(v: &Value) -> usize {
        match v {
            Value::Null => 0,
            Value::Array(a) => a.iter().map(leaves).sum(),
            Value::Object(o) => o.values().map(leaves).sum(),
            _ => 1,
        }
    }
    assert_eq!(rows, leaves(&json));
}

#[test]
fn untimed_reports_are_byte_stable() {
    let mut cfg = small_config(2000, 3);
    cfg.timing = false;
    let a = to_bytes(&report(&cfg), Format::Json);
    let b = to_bytes(&report(&cfg), Format::Json);
    assert_eq!(a, b);
    let dir = tempfile::tempdir().unwrap();
    let cached = run(&cfg, &mut Cache::at(dir.path())).unwrap().report;
    assert_eq!(to_bytes(&cached, Format::Json), a);
    let resumed = run(&cfg, &mut Cache::at(dir.path())).unwrap().report;
    assert_eq!(to_bytes(&resumed, Format::Json), a);
    assert_eq!(
        to_bytes(&resumed, Format::Csv),
        to_bytes(&report(&cfg), Format::Csv)
    );
}

#[test]
fn reruns_skip_completed_cells() {
    let mut cfg = small_config(2000, 4);
    cfg.timing = false;
    let dir = tempfile::tempdir().unwrap();
    let first = run(&cfg, &mut Cache::at(dir.path())).unwrap();
    // The default fixed-slot size equals the 1/4 load-factor size, so those
    // cells are shared within the first run.
    assert!(first.computed > 0);
    let fixed_shared = cfg.indexes.iter().filter(|k| k.is_slot_mapper()).count();
    assert_eq!(first.reused, fixed_shared);
    let second = run(&cfg, &mut Cache::at(dir.path())).unwrap();
    assert_eq!(second.computed, 0);
    assert_eq!(second.reused, first.computed + first.reused);
    assert_eq!(second.report, first.report);

    // A new load factor only computes its own cells.
    cfg.load_factors.push(1.0 / 128.0);
    let third = run(&cfg, &mut Cache::at(dir.path())).unwrap();
    let slot_mappers = cfg.indexes.iter().filter(|k| k.is_slot_mapper()).count();
    assert_eq!(third.computed, slot_mappers);
}

#[test]
fn fp_sweep_decreases_with_load_factor() {
    let mut cfg = small_config(5000, 5);
    cfg.timing = false;
    let r = report(&cfg);
    for kind in IndexKind::ALL.iter().filter(|k| k.is_slot_mapper()) {
        let rows: Vec<_> = r
            .fp_sweep
            .iter()
            .filter(|row| row.index == kind.as_str())
            .collect();
        assert_eq!(rows.len(), cfg.load_factors.len());
        for pair in rows.windows(2) {
            assert!(pair[1].load_factor < pair[0].load_factor);
            assert!(
                pair[1].fp_probability <= pair[0].fp_probability,
                "{kind}: {pair:?}"
            );
            assert!(pair[1].slots > pair[0].slots);
        }
    }
}

#[test]
fn report_fields_are_consistent() {
    let r = report(&small_config(2000, 6));
    let regions = r.config.training.regions;
    for row in r.fp_sweep.iter().chain(&r.occupancy) {
        assert_eq!(row.slots % regions, 0);
        assert_eq!(row.inserts, 2000);
        assert!((0.0..=1.0).contains(&row.fp_probability));
        assert!((0.0..=1.0).contains(&row.empty_slot_ratio));
        assert_eq!(
            row.fp_probability,
            row.collisions as f64 / row.inserts as f64
        );
    }
    for row in &r.slots_required {
        assert!(row.achieved_fp <= row.fp_target);
        assert_eq!(row.slots % row.granularity, 0);
    }
    let parity = r
        .memory
        .iter()
        .find(|m| m.index == "lni-fib-reference")
        .unwrap();
    assert_eq!(parity.total_bytes, 58_258_256);
    for m in &r.memory {
        assert_eq!(
            m.total_bytes,
            m.model_bytes + m.bitmap_bytes + m.structure_bytes
        );
    }
    for t in &r.throughput {
        assert_eq!(t.msps, t.lookups_per_rep as f64 / t.median_seconds / 1e6);
        assert!(t.lookup_ns_p50 <= t.lookup_ns_p99);
        assert_eq!(t.cycles_per_lookup_estimate, Some(t.lookup_ns_mean * 2.0));
        // every probe is a stored name
        if t.index != "lni" {
            assert_eq!(t.hits_per_rep, t.lookups_per_rep);
        }
    }
    for h in &r.chain_histograms {
        let chained: usize = h.chains.iter().map(|c| c.length * c.count).sum();
        assert!(chained <= h.names);
    }
}

#[test]
fn comparison_has_finite_ratios_and_checks_datasets() {
    let mut cfg = small_config(3000, 7);
    cfg.timing = false;
    cfg.indexes = vec![IndexKind::Lni, IndexKind::Md5];
    let lni_md5 = report(&cfg);
    cfg.indexes = vec![IndexKind::Xxh64, IndexKind::Patricia];
    let others = report(&cfg);
    let c = compare(&[lni_md5.clone(), others]).unwrap();
    assert_eq!(c.indexes, vec!["lni", "md5", "xxh64", "patricia"]);
    for metric in ["slots_required", "fp_probability"] {
        let ratios: Vec<_> = c.ratios.iter().filter(|r| r.metric == metric).collect();
        assert!(!ratios.is_empty(), "{metric}");
        for r in ratios {
            assert!(r.value.unwrap().is_finite(), "{r:?}");
        }
    }
    for t in &c.tables {
        for row in &t.rows {
            assert_eq!(row.values.len(), t.columns.len());
        }
    }

    cfg.indexes = vec![IndexKind::Md5];
    let single = report(&cfg);
    assert!(compare(std::slice::from_ref(&single))
        .unwrap_err()
        .to_string()
        .contains("two index kinds"));

    let mut other_data = small_config(3000, 8);
    other_data.timing = false;
    other_data.indexes = vec![IndexKind::Md5];
    let err = compare(&[lni_md5, report(&other_data)]).unwrap_err();
    assert!(err.to_string().contains("mismatched datasets"), "{err}");
}
