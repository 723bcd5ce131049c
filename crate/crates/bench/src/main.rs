//! `nni`: generate name sets, train models, build and query indexes, and run
//! the benchmark sweeps.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use lni_bench::cache::Cache;
use lni_bench::config::{
    DatasetSource, ExperimentConfig, IndexKind, InvalidConfig, OptimizerKind, TrainingConfig,
    DEFAULT_NAMES,
};
use lni_bench::experiment::{load_source, round_slots, train_model, training_info, BENCH_FACES};
use lni_bench::report::{write_report, Format, MetricsReport, ModelOrigin};
use lni_bench::{compare, run, VERSION};
use lni_core::corpus::{generate_names, save_dataset};
use lni_core::index_io::{decode_index, save_index};
use lni_core::lni::{entries_for, load_fib, FibEntry, Lni, Lookup, ModelSource};
use lni_core::model_io::{load_model, save_model};
use lni_core::pyramid::Pyramid;
use lni_core::{CorpusSpec, Dataset};
use serde_json::json;

#[derive(Parser)]
#[command(name = "nni", version = VERSION, about = "Learned name index toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic name set, one name per line.
    Generate {
        #[arg(long, default_value_t = DEFAULT_NAMES)]
        names: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; standard output when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train a model on a name set and write it to a model file.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        training: TrainArgs,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value = "json")]
        format: Format,
    },
    /// Build an index from a name set (or FIB file) and a trained model.
    Build {
        #[command(flatten)]
        data: DataArgs,
        /// FIB snapshot (`name<TAB>face,face`) to index instead of a name set.
        #[arg(long, conflicts_with = "dataset")]
        fib: Option<PathBuf>,
        #[arg(long)]
        model: PathBuf,
        /// Slot budget; four per name when omitted. Rounded up to a multiple
        /// of the model's region count.
        #[arg(long)]
        slots: Option<usize>,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value = "json")]
        format: Format,
    },
    /// Look names up in a built index.
    Lookup {
        #[arg(long)]
        index: PathBuf,
        /// Names to look up; read from standard input, one per line, when none
        /// are given.
        names: Vec<String>,
        #[arg(long, default_value = "json")]
        format: Format,
    },
    /// Run the metric sweeps and write a metrics report.
    Bench {
        #[command(flatten)]
        exp: ExperimentArgs,
    },
    /// Put indexes side by side, from saved reports or a fresh run.
    Compare {
        /// Metrics reports (JSON) to compare; a bench run is made when none
        /// are given.
        reports: Vec<PathBuf>,
        #[command(flatten)]
        exp: ExperimentArgs,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Name set file; a synthetic set is generated when omitted.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_NAMES)]
    names: usize,
    /// Seeds both dataset generation and training.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl DataArgs {
    fn source(&self) -> DatasetSource {
        match &self.dataset {
            Some(path) => DatasetSource::File { path: path.clone() },
            None => DatasetSource::Generate {
                names: self.names,
                seed: self.seed,
            },
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    regions: Option<usize>,
    #[arg(long)]
    optimizer: Option<OptimizerKind>,
    #[arg(long)]
    level1_epochs: Option<usize>,
    #[arg(long)]
    level2_epochs: Option<usize>,
}

impl TrainArgs {
    fn apply(&self, t: &mut TrainingConfig, seed: Option<u64>) {
        if let Some(r) = self.regions {
            t.regions = r;
        }
        if let Some(o) = self.optimizer {
            t.optimizer = o;
        }
        if let Some(e) = self.level1_epochs {
            t.level1_epochs = e;
        }
        if let Some(e) = self.level2_epochs {
            t.level2_epochs = e;
        }
        if let Some(s) = seed {
            t.seed = s;
        }
    }
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment config (JSON); flags given alongside override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    names: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Use this model file instead of training one.
    #[arg(long)]
    model: Option<PathBuf>,
    #[command(flatten)]
    training: TrainArgs,
    #[arg(long)]
    slots: Option<usize>,
    #[arg(long)]
    fp_target: Option<f64>,
    /// Comma-separated index kinds: lni, md5, xxh64, fnv1a, patricia.
    #[arg(long, value_delimiter = ',')]
    indexes: Option<Vec<IndexKind>>,
    #[arg(long)]
    lookups: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    /// Leave out throughput measurements, making the report deterministic.
    #[arg(long)]
    no_timing: bool,
    /// Nominal CPU frequency used for the estimated cycles per lookup.
    #[arg(long)]
    cpu_ghz: Option<f64>,
    /// Output directory for the report and resumable sweep cells; standard
    /// output (without caching) when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, default_value = "json")]
    format: Format,
}

impl ExperimentArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text)
                    .map_err(|e| InvalidConfig(format!("{}: {e}", path.display())))?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(path) = &self.dataset {
            cfg.dataset = DatasetSource::File { path: path.clone() };
        } else if self.names.is_some() || self.seed.is_some() {
            let (mut names, mut seed) = match cfg.dataset {
                DatasetSource::Generate { names, seed } => (names, seed),
                DatasetSource::File { .. } => (DEFAULT_NAMES, 0),
            };
            names = self.names.unwrap_or(names);
            seed = self.seed.unwrap_or(seed);
            cfg.dataset = DatasetSource::Generate { names, seed };
        }
        if self.model.is_some() {
            cfg.model = self.model.clone();
        }
        self.training.apply(&mut cfg.training, self.seed);
        if self.slots.is_some() {
            cfg.slots = self.slots;
        }
        if let Some(t) = self.fp_target {
            cfg.fp_target = t;
        }
        if let Some(ix) = &self.indexes {
            cfg.indexes = ix.clone();
        }
        if let Some(n) = self.lookups {
            cfg.throughput.lookups_per_rep = n;
        }
        if let Some(r) = self.reps {
            cfg.throughput.reps = r;
        }
        if self.no_timing {
            cfg.timing = false;
        }
        if self.cpu_ghz.is_some() {
            cfg.cpu_ghz = self.cpu_ghz;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn cache(&self) -> Cache {
        self.output.as_ref().map_or_else(Cache::disabled, Cache::at)
    }
}

fn extension(format: Format) -> &'static str {
    match format {
        Format::Json => "json",
        Format::Csv => "csv",
    }
}

/// Writes `report` to `dir/<stem>.<ext>` or, without a directory, to stdout.
fn emit<T: serde::Serialize>(
    report: &T,
    format: Format,
    dir: Option<&Path>,
    stem: &str,
) -> Result<()> {
    match dir {
        Some(dir) => {
            let mut buf = Vec::new();
            write_report(report, format, &mut buf)?;
            let path = dir.join(format!("{stem}.{}", extension(format)));
            lni_bench::cache::write_atomic(&path, &buf)?;
            eprintln!("wrote {}", path.display());
        }
        None => write_report(report, format, &mut io::stdout().lock())?,
    }
    Ok(())
}

fn load_entries(data: &DataArgs, fib: Option<&Path>) -> Result<(Vec<FibEntry>, Dataset)> {
    match fib {
        Some(path) => {
            let entries =
                load_fib(path).with_context(|| format!("loading FIB {}", path.display()))?;
            let names = Dataset::new(entries.iter().map(|e| e.name().clone()).collect())?;
            Ok((entries, names))
        }
        None => {
            let dataset = load_source(&data.source())?;
            Ok((entries_for(&dataset, BENCH_FACES), dataset))
        }
    }
}

fn cmd_generate(names: usize, seed: u64, output: Option<&Path>) -> Result<()> {
    let dataset = generate_names(&CorpusSpec::with_count(names, seed))?;
    match output {
        Some(path) => {
            save_dataset(&dataset, path).with_context(|| format!("writing {}", path.display()))?
        }
        None => {
            let mut out = io::BufWriter::new(io::stdout().lock());
            for name in &dataset {
                writeln!(out, "{name}")?;
            }
            out.flush()?;
        }
    }
    Ok(())
}

fn cmd_train(data: &DataArgs, args: &TrainArgs, output: &Path, format: Format) -> Result<()> {
    let dataset = load_source(&data.source())?;
    let mut training = TrainingConfig::default();
    args.apply(&mut training, Some(data.seed));
    training
        .pyramid()
        .validate()
        .map_err(|e| InvalidConfig(e.to_string()))?;
    let model = train_model(&dataset, &training)?;
    save_model(&model, output).with_context(|| format!("writing {}", output.display()))?;
    let info = training_info(&model, &dataset, ModelOrigin::Trained)?;
    write_report(
        &json!({ "training": info, "config": training }),
        format,
        &mut io::stdout().lock(),
    )
}

fn cmd_build(
    data: &DataArgs,
    fib: Option<&Path>,
    model_path: &Path,
    slots: Option<usize>,
    output: &Path,
    format: Format,
) -> Result<()> {
    let model: Pyramid<f64> = load_model(model_path)
        .with_context(|| format!("loading model {}", model_path.display()))?;
    let (entries, names) = load_entries(data, fib)?;
    let requested = slots.unwrap_or(4 * names.len());
    if requested == 0 {
        return Err(InvalidConfig("slots must be at least 1".into()).into());
    }
    let rounded = round_slots(requested, model.regions());
    if rounded != requested {
        eprintln!(
            "warning: {requested} slots is not a multiple of {} regions; rounded up to {rounded}",
            model.regions()
        );
    }
    let lni = Lni::build(entries.clone(), rounded, ModelSource::Preloaded(model))?;
    save_index(&lni, rounded, &entries, output)
        .with_context(|| format!("writing {}", output.display()))?;
    let stats = lni.stats();
    let summary = json!({
        "build": {
            "names": entries.len(),
            "requested_slots": requested,
            "slots": rounded,
            "stored": lni.stored(),
            "collisions": lni.collisions().len(),
            "fp_probability": lni.false_positive_probability(),
            "empty_slot_ratio": lni.empty_slot_ratio(),
            "inserts": stats.inserts,
        }
    });
    write_report(&summary, format, &mut io::stdout().lock())
}

fn cmd_lookup(index: &Path, names: &[String], format: Format) -> Result<()> {
    let bytes = fs::read(index).with_context(|| format!("reading {}", index.display()))?;
    let lni = decode_index::<f64>(&bytes)
        .and_then(|image| image.into_index())
        .with_context(|| format!("loading index {}", index.display()))?;
    let names: Vec<String> = if names.is_empty() {
        io::stdin()
            .lock()
            .lines()
            .filter_map(|l| l.map(|l| l.trim().to_string()).ok())
            .filter(|l| !l.is_empty())
            .collect()
    } else {
        names.to_vec()
    };
    let mut rows = Vec::with_capacity(names.len());
    for name in &names {
        rows.push(match lni.lookup(name.as_bytes()) {
            Lookup::Hit { address, entry } => json!({
                "name": name,
                "result": "hit",
                "address": address,
                "stored_name": entry.name().as_str(),
                "false_positive": entry.name().as_str() != name,
                "faces": entry.faces(),
            }),
            Lookup::Miss => json!({ "name": name, "result": "miss" }),
        });
    }
    let stats = lni.stats();
    let out = json!({
        "lookups": rows,
        "stats": {
            "lookups": stats.lookups,
            "hits": stats.hits,
            "misses": stats.misses,
            "false_positives": rows.iter().filter(|r| r["false_positive"] == true).count(),
        }
    });
    write_report(&out, format, &mut io::stdout().lock())
}

fn cmd_bench(exp: &ExperimentArgs) -> Result<MetricsReport> {
    let cfg = exp.config()?;
    let mut cache = exp.cache();
    let outcome = run(&cfg, &mut cache)?;
    if cache.root().is_some() {
        eprintln!(
            "sweep cells: {} computed, {} reused",
            outcome.computed, outcome.reused
        );
    }
    Ok(outcome.report)
}

fn cmd_compare(paths: &[PathBuf], exp: &ExperimentArgs) -> Result<()> {
    let reports = if paths.is_empty() {
        vec![cmd_bench(exp)?]
    } else {
        paths
            .iter()
            .map(|p| {
                let text =
                    fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing report {}", p.display()))
            })
            .collect::<Result<Vec<MetricsReport>>>()?
    };
    let comparison = compare(&reports)?;
    emit(&comparison, exp.format, exp.output.as_deref(), "comparison")
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            names,
            seed,
            output,
        } => cmd_generate(names, seed, output.as_deref()),
        Command::Train {
            data,
            training,
            output,
            format,
        } => cmd_train(&data, &training, &output, format),
        Command::Build {
            data,
            fib,
            model,
            slots,
            output,
            format,
        } => cmd_build(&data, fib.as_deref(), &model, slots, &output, format),
        Command::Lookup {
            index,
            names,
            format,
        } => cmd_lookup(&index, &names, format),
        Command::Bench { exp } => {
            let report = cmd_bench(&exp)?;
            emit(&report, exp.format, exp.output.as_deref(), "report")
        }
        Command::Compare { reports, exp } => cmd_compare(&reports, &exp),
    }
}

/// Error category and process exit status.
fn classify(err: &anyhow::Error) -> (&'static str, u8) {
    use lni_core::Error as E;
    for cause in err.chain() {
        if cause.is::<InvalidConfig>() {
            return ("config", 2);
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Io(_) => ("io", 3),
                E::Config(_) | E::NamespaceExhausted { .. } => ("config", 2),
                E::Parse { .. }
                | E::InvalidName { .. }
                | E::BadMagic { .. }
                | E::UnsupportedVersion(_)
                | E::Truncated { .. }
                | E::Malformed { .. }
                | E::Checksum { .. } => ("format", 4),
                E::Diverged { .. } => ("training", 5),
                _ => ("runtime", 1),
            };
        }
        if cause.is::<io::Error>() {
            return ("io", 3);
        }
        if cause.is::<serde_json::Error>() {
            return ("format", 4);
        }
    }
    ("runtime", 1)
}

fn fail(kind: &str, code: u8, message: String) -> ExitCode {
    eprintln!(
        "{}",
        json!({ "error": { "kind": kind, "message": message } })
    );
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string();
            let first = message.lines().next().unwrap_or("invalid arguments");
            return fail("usage", 2, first.trim_start_matches("error: ").to_string());
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        // A closed downstream pipe (e.g. `| head`) is not a failure.
        Err(e)
            if e.chain().any(|c| {
                c.downcast_ref::<io::Error>()
                    .is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe)
            }) =>
        {
            ExitCode::SUCCESS
        }
        Err(e) => {
            let (kind, code) = classify(&e);
            fail(kind, code, format!("{e:#}"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_override_the_default_config() {
        let cli = Cli::try_parse_from([
            "nni",
            "bench",
            "--names",
            "500",
            "--seed",
            "3",
            "--regions",
            "10",
            "--indexes",
            "lni,md5",
            "--no-timing",
            "--fp-target",
            "0.05",
        ])
        .unwrap();
        let Command::Bench { exp } = cli.command else {
            panic!()
        };
        let cfg = exp.config().unwrap();
        assert_eq!(
            cfg.dataset,
            DatasetSource::Generate {
                names: 500,
                seed: 3
            }
        );
        assert_eq!(cfg.training.regions, 10);
        assert_eq!(cfg.training.seed, 3);
        assert_eq!(cfg.indexes, vec![IndexKind::Lni, IndexKind::Md5]);
        assert!(!cfg.timing);
        assert_eq!(cfg.fp_target, 0.05);
    }

    #[test]
    fn invalid_flags_are_config_errors() {
        let cli = Cli::try_parse_from(["nni", "bench", "--fp-target", "2"]).unwrap();
        let Command::Bench { exp } = cli.command else {
            panic!()
        };
        let err = exp.config().unwrap_err();
        assert_eq!(classify(&err), ("config", 2));
    }

    #[test]
    fn unknown_index_kind_is_a_usage_error() {
        assert!(Cli::try_parse_from(["nni", "bench", "--indexes", "sha1"]).is_err());
    }

    #[test]
    fn fib_and_dataset_are_exclusive() {
        let err = Cli::try_parse_from([
            "nni",
            "build",
            "--fib",
            "a",
            "--dataset",
            "b",
            "--model",
            "m",
            "--output",
            "o",
        ]);
        assert!(err.is_err());
    }
}
