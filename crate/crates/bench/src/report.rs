use std::io::Write;

use anyhow::Result;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::ExperimentConfig;

/// Bumped whenever the report layout changes incompatibly.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    Metrics,
    Comparison,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub names: usize,
    /// FNV-1a of the newline-joined names, hex.
    pub fingerprint: String,
    pub mean_length: f64,
    /// Fraction of names sharing their folded input vector with another name.
    pub input_collision_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelOrigin {
    /// Trained by this tool from the report's training config (possibly in
    /// an earlier, cached run).
    Trained,
    /// Loaded from a model file given on the command line.
    Loaded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingInfo {
    pub origin: ModelOrigin,
    pub regions: usize,
    pub model_bytes: usize,
    /// CRC-32 stored in the model file trailer.
    pub model_crc: u32,
    /// Level-1 accuracy on this dataset's labels.
    pub classification_accuracy: f64,
    /// The remaining fields are only known for models trained by this tool.
    pub level1_epochs: Option<usize>,
    pub level1_mse: Option<f64>,
    pub level2_epochs: Option<usize>,
    pub level2_mse: Option<f64>,
    pub populated_regions: Option<usize>,
}

/// Occupancy of one slot mapper at one slot budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupancyRow {
    pub index: String,
    pub load_factor: f64,
    pub slots: usize,
    pub inserts: usize,
    pub collisions: usize,
    pub fp_probability: f64,
    pub empty_slot_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotsRequiredRow {
    pub index: String,
    pub fp_target: f64,
    pub granularity: usize,
    pub slots: usize,
    pub achieved_fp: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainCount {
    pub length: usize,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainHistogram {
    pub index: String,
    pub buckets: usize,
    pub names: usize,
    pub empty_bucket_ratio: f64,
    pub longest_chain: usize,
    /// Buckets per chain length, lengths of 2 and above.
    pub chains: Vec<ChainCount>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryRow {
    pub index: String,
    /// `None` for reference layouts that are not built from the dataset.
    pub names: Option<usize>,
    pub slots: Option<usize>,
    pub replicas: usize,
    pub model_bytes: usize,
    pub bitmap_bytes: usize,
    /// Bytes of hash tables or tries, measured from the built structure.
    pub structure_bytes: usize,
    pub total_bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThroughputRow {
    pub index: String,
    pub lookups_per_rep: usize,
    pub reps: usize,
    pub hits_per_rep: usize,
    pub median_seconds: f64,
    /// Million lookups per second at the median repetition.
    pub msps: f64,
    pub lookup_ns_mean: f64,
    pub lookup_ns_p50: f64,
    pub lookup_ns_p99: f64,
    /// `lookup_ns_mean * cpu_ghz`: an estimate from a nominal clock, not a
    /// measured cycle count.
    pub cycles_per_lookup_estimate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub report: ReportKind,
    pub schema_version: u32,
    pub tool_version: String,
    pub config: ExperimentConfig,
    pub dataset: DatasetInfo,
    pub training: Option<TrainingInfo>,
    pub fp_sweep: Vec<OccupancyRow>,
    pub occupancy: Vec<OccupancyRow>,
    pub slots_required: Vec<SlotsRequiredRow>,
    pub chain_histograms: Vec<ChainHistogram>,
    pub memory: Vec<MemoryRow>,
    /// Empty when timing is disabled.
    pub throughput: Vec<ThroughputRow>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            _ => Err(format!("unknown format {s:?} (expected json or csv)")),
        }
    }
}

/// Writes any report as pretty JSON or as flattened CSV.
pub fn write_report<T: Serialize>(report: &T, format: Format, out: &mut dyn Write) -> Result<()> {
    let value = serde_json::to_value(report)?;
    match format {
        Format::Json => {
            serde_json::to_writer_pretty(&mut *out, &value)?;
            writeln!(out)?;
        }
        Format::Csv => write_csv(&value, out)?,
    }
    Ok(())
}

/// One row per scalar leaf: `section,row,field,value`. `section` is the
/// top-level key, `row` the array position inside it (empty for objects),
/// and `field` the dotted path below that. Numbers are written exactly as in
/// the JSON form; nulls are omitted.
pub fn write_csv(value: &Value, out: &mut dyn Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["section", "row", "field", "value"])?;
    let mut leaves = Vec::new();
    flatten(value, &mut Vec::new(), &mut leaves);
    for (path, text) in leaves {
        let section = path.first().cloned().unwrap_or_default();
        let (row, rest) = match path.get(1) {
            Some(seg) if seg.parse::<usize>().is_ok() && value[&section].is_array() => {
                (seg.clone(), &path[2..])
            }
            _ => (String::new(), path.get(1..).unwrap_or(&[])),
        };
        w.write_record([
            section.as_str(),
            row.as_str(),
            rest.join(".").as_str(),
            text.as_str(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn flatten(value: &Value, path: &mut Vec<String>, out: &mut Vec<(Vec<String>, String)>) {
    match value {
        Value::Null => {}
        Value::Bool(b) => out.push((path.clone(), b.to_string())),
        Value::Number(n) => out.push((path.clone(), n.to_string())),
        Value::String(s) => out.push((path.clone(), s.clone())),
        Value::Array(items) => {
            for (i, item) in items.iter().enumerate() {
                path.push(i.to_string());
                flatten(item, path, out);
                path.pop();
            }
        }
        Value::Object(map) => {
            for (k, v) in map {
                path.push(k.clone());
                flatten(v, path, out);
                path.pop();
            }
        }
    }
}

/// Resolves a CSV row back to the JSON value it came from.
pub fn csv_pointer(section: &str, row: &str, field: &str) -> String {
    let mut p = format!("/{section}");
    if !row.is_empty() {
        p.push('/');
        p.push_str(row);
    }
    if !field.is_empty() {
        for seg in field.split('.') {
            p.push('/');
            p.push_str(seg);
        }
    }
    p
}
