use std::collections::BTreeMap;

use anyhow::{bail, Result};
use serde::{Deserialize, Serialize};
use serde_json::Number;

use crate::config::IndexKind;
use crate::report::{DatasetInfo, MetricsReport, ReportKind, SCHEMA_VERSION};
use crate::VERSION;

/// One metric with indexes as columns. `values[i]` belongs to `columns[i]`
/// and is `None` where that index has no such measurement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub metric: String,
    /// What the row keys are, e.g. `load_factor`.
    pub key: String,
    pub columns: Vec<String>,
    pub rows: Vec<TableRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub key: String,
    pub values: Vec<Option<f64>>,
}

/// `numerator / denominator` for one metric row; `None` when the
/// denominator is zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub metric: String,
    pub key: String,
    pub numerator: String,
    pub denominator: String,
    pub value: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub report: ReportKind,
    pub schema_version: u32,
    pub tool_version: String,
    pub dataset: DatasetInfo,
    pub indexes: Vec<String>,
    pub tables: Vec<MetricTable>,
    pub ratios: Vec<Ratio>,
}

/// (metric, key name) -> row key -> index -> value, rows and indexes in
/// order of first appearance.
#[derive(Default)]
struct Collector {
    columns: Vec<String>,
    metrics: Vec<(String, String, Vec<KeyedRow>)>,
}

type KeyedRow = (String, BTreeMap<String, f64>);

impl Collector {
    fn add(&mut self, metric: &str, key_name: &str, key: String, index: &str, value: f64) {
        if !self.columns.iter().any(|c| c == index) {
            self.columns.push(index.to_string());
        }
        let at = match self.metrics.iter().position(|(m, _, _)| m == metric) {
            Some(at) => at,
            None => {
                self.metrics
                    .push((metric.into(), key_name.into(), Vec::new()));
                self.metrics.len() - 1
            }
        };
        let rows = &mut self.metrics[at].2;
        let row = match rows.iter().position(|(k, _)| *k == key) {
            Some(r) => r,
            None => {
                rows.push((key, BTreeMap::new()));
                rows.len() - 1
            }
        };
        // The first report to supply a value wins.
        rows[row].1.entry(index.to_string()).or_insert(value);
    }

    fn value(&self, metric: &str, key: &str, index: &str) -> Option<f64> {
        let (_, _, rows) = self.metrics.iter().find(|(m, _, _)| m == metric)?;
        rows.iter().find(|(k, _)| k == key)?.1.get(index).copied()
    }
}

fn key_of(x: f64) -> String {
    Number::from_f64(x).map_or_else(|| x.to_string(), |n| n.to_string())
}

/// Lines the reports up side by side. All reports must describe the same
/// dataset, and together they must cover at least two index kinds.
pub fn compare(reports: &[MetricsReport]) -> Result<ComparisonReport> {
    let Some(first) = reports.first() else {
        bail!("nothing to compare: no reports given");
    };
    for r in &reports[1..] {
        if r.dataset.fingerprint != first.dataset.fingerprint
            || r.dataset.names != first.dataset.names
        {
            bail!(
                "mismatched datasets: {} names ({}) vs {} names ({})",
                first.dataset.names,
                first.dataset.fingerprint,
                r.dataset.names,
                r.dataset.fingerprint
            );
        }
    }

    let mut c = Collector::default();
    for r in reports {
        for row in &r.fp_sweep {
            let key = key_of(row.load_factor);
            c.add(
                "fp_probability",
                "load_factor",
                key.clone(),
                &row.index,
                row.fp_probability,
            );
            c.add(
                "empty_slot_ratio",
                "load_factor",
                key,
                &row.index,
                row.empty_slot_ratio,
            );
        }
        for row in &r.occupancy {
            let key = row.slots.to_string();
            c.add(
                "fixed_slots_fp_probability",
                "slots",
                key.clone(),
                &row.index,
                row.fp_probability,
            );
            c.add(
                "fixed_slots_empty_slot_ratio",
                "slots",
                key,
                &row.index,
                row.empty_slot_ratio,
            );
        }
        for row in &r.slots_required {
            c.add(
                "slots_required",
                "fp_target",
                key_of(row.fp_target),
                &row.index,
                row.slots as f64,
            );
        }
        for row in &r.memory {
            // Reference layouts are not measurements of this dataset.
            if row.names.is_none() {
                continue;
            }
            let index = if row.index == "lni-fib" {
                "lni"
            } else {
                row.index.as_str()
            };
            c.add(
                "memory_bytes",
                "layout",
                "built".into(),
                index,
                row.total_bytes as f64,
            );
        }
        for row in &r.throughput {
            c.add("msps", "statistic", "median".into(), &row.index, row.msps);
            c.add(
                "lookup_ns",
                "statistic",
                "mean".into(),
                &row.index,
                row.lookup_ns_mean,
            );
            c.add(
                "lookup_ns",
                "statistic",
                "p50".into(),
                &row.index,
                row.lookup_ns_p50,
            );
            c.add(
                "lookup_ns",
                "statistic",
                "p99".into(),
                &row.index,
                row.lookup_ns_p99,
            );
        }
    }
    if c.columns.len() < 2 {
        bail!(
            "comparison needs at least two index kinds, found {}",
            if c.columns.is_empty() {
                "none".to_string()
            } else {
                c.columns.join(", ")
            }
        );
    }

    let lni = IndexKind::Lni.as_str();
    let hashes: Vec<&str> = IndexKind::ALL
        .iter()
        .filter(|k| k.hash_algorithm().is_some())
        .map(|k| k.as_str())
        .filter(|k| c.columns.iter().any(|col| col == k))
        .collect();
    let mut ratios = Vec::new();
    if c.columns.iter().any(|col| col == lni) {
        for metric in ["slots_required", "fp_probability", "lookup_ns"] {
            let Some((_, _, rows)) = c.metrics.iter().find(|(m, _, _)| m == metric) else {
                continue;
            };
            for (key, _) in rows {
                for &h in &hashes {
                    if let (Some(num), Some(den)) =
                        (c.value(metric, key, lni), c.value(metric, key, h))
                    {
                        ratios.push(Ratio {
                            metric: metric.into(),
                            key: key.clone(),
                            numerator: lni.into(),
                            denominator: h.into(),
                            value: (den != 0.0).then(|| num / den),
                        });
                    }
                }
            }
        }
    }

    let tables = c
        .metrics
        .iter()
        .map(|(metric, key, rows)| MetricTable {
            metric: metric.clone(),
            key: key.clone(),
            columns: c.columns.clone(),
            rows: rows
                .iter()
                .map(|(k, values)| TableRow {
                    key: k.clone(),
                    values: c
                        .columns
                        .iter()
                        .map(|col| values.get(col).copied())
                        .collect(),
                })
                .collect(),
        })
        .collect();

    Ok(ComparisonReport {
        report: ReportKind::Comparison,
        schema_version: SCHEMA_VERSION,
        tool_version: VERSION.into(),
        dataset: first.dataset.clone(),
        indexes: c.columns,
        tables,
        ratios,
    })
}
