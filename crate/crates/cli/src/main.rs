mod config;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use earlyflow::dataset::{
    audit, build_cf, build_pf, distribution_with, read_csv, write_csv_to, Dataset, Provenance,
};
use earlyflow::eval::{split_keys, sweep_scenarios, ScenarioKind, Task, REPORT_HEADER};
use earlyflow::meter::meter;
use earlyflow::trace::pcap::encode_trace;
use earlyflow::trace::{dedup, displaced_count, read_trace, reorder, synth_trace, SynthSpec};
use earlyflow::{RuleSet, Trigger};
use serde_json::json;

use config::PipelineConfig;

/// Flow metering and complete vs. partial flow evaluation.
#[derive(Parser)]
#[command(name = "earlyflow", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// PipelineConfig JSON supplying defaults for every other flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Drop retransmitted duplicates and sort a capture by timestamp.
    Preprocess {
        /// Input pcap.
        input: PathBuf,
        /// Output pcap.
        output: PathBuf,
        /// Identical packets this close in time (µs) to an earlier copy are dropped.
        #[arg(long)]
        dedup_window_us: Option<i64>,
        #[command(flatten)]
        common: Common,
    },
    /// Meter a sorted capture into labeled CF and PF datasets.
    Meter {
        /// Input pcap, sorted by timestamp.
        input: PathBuf,
        /// Labeling rule file (defaults to rules_path in the config).
        #[arg(long)]
        rules: Option<PathBuf>,
        /// Output directory (defaults to output_dir in the config).
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Idle timeout in seconds.
        #[arg(long)]
        idle_timeout_s: Option<f64>,
        /// Active timeout in seconds.
        #[arg(long)]
        active_timeout_s: Option<f64>,
        /// Packet-count triggers, comma separated.
        #[arg(long, value_delimiter = ',')]
        pc: Option<Vec<u32>>,
        /// Duration triggers in milliseconds, comma separated.
        #[arg(long, value_delimiter = ',')]
        fd_ms: Option<Vec<u64>>,
        /// Classes with fewer complete flows are dropped.
        #[arg(long)]
        min_class_count: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Train and score every scenario for each PF dataset.
    Eval {
        /// Complete-flow dataset CSV.
        #[arg(long)]
        cf: PathBuf,
        /// Glob selecting PF dataset CSVs; may be repeated.
        #[arg(long, required = true)]
        pf: Vec<String>,
        /// Output directory (defaults to output_dir in the config).
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// binary, multi or both.
        #[arg(long, default_value = "both")]
        task: String,
        /// all, or a comma separated subset of CF_CF, PF_PF, CF_PF.
        #[arg(long, default_value = "all")]
        scenario: String,
        /// Split and forest seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Training fraction per label.
        #[arg(long)]
        ratio: Option<f64>,
        /// Trees per forest.
        #[arg(long)]
        n_trees: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Generate a labeled synthetic capture from a JSON spec.
    Synth {
        /// Generator spec JSON.
        spec: PathBuf,
        /// Output pcap.
        output: PathBuf,
        /// Ground-truth flow list (JSON).
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Failures mapped onto process exit codes.
enum Failure {
    Input(anyhow::Error),
    EmptyResult(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Input(e)
    }
}

type Result<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Preprocess {
            input,
            output,
            dedup_window_us,
            common,
        } => cmd_preprocess(&input, &output, dedup_window_us, &common),
        Command::Meter {
            input,
            rules,
            out_dir,
            idle_timeout_s,
            active_timeout_s,
            pc,
            fd_ms,
            min_class_count,
            common,
        } => {
            let overrides = MeterOverrides {
                idle_timeout_s,
                active_timeout_s,
                pc,
                fd_ms,
                min_class_count,
            };
            cmd_meter(&input, rules, out_dir, overrides, &common)
        }
        Command::Eval {
            cf,
            pf,
            out_dir,
            task,
            scenario,
            seed,
            ratio,
            n_trees,
            common,
        } => {
            let opts = EvalOptions {
                task,
                scenario,
                seed,
                ratio,
                n_trees,
            };
            cmd_eval(&cf, &pf, out_dir, opts, &common)
        }
        Command::Synth {
            spec,
            output,
            truth,
            seed,
        } => cmd_synth(&spec, &output, &truth, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::EmptyResult(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

/// Writes through a sibling temp file and renames it into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| anyhow!("{} is not a file path", path.display()))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    std::fs::write(&tmp, bytes).with_context(|| format!("cannot write {}", tmp.display()))?;
    std::fs::rename(&tmp, path)
        .with_context(|| format!("cannot move {} into place", path.display()))?;
    Ok(())
}

fn csv_bytes(ds: &Dataset) -> anyhow::Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_csv_to(ds, &mut buf)?;
    Ok(buf)
}

fn load_config(common: &Common) -> anyhow::Result<PipelineConfig> {
    PipelineConfig::load(common.config.as_deref())
}

fn out_dir(flag: Option<PathBuf>, cfg: &PipelineConfig) -> anyhow::Result<PathBuf> {
    let dir = flag.or_else(|| cfg.output_dir.clone()).ok_or_else(|| {
        anyhow!("no output directory: pass --out-dir or set output_dir in the config")
    })?;
    std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    Ok(dir)
}

fn cmd_preprocess(input: &Path, output: &Path, window: Option<i64>, common: &Common) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(w) = window {
        cfg.dedup_window_us = w;
    }
    cfg.validate()?;
    let trace = read_trace(input).map_err(anyhow::Error::from)?;
    let deduped = dedup(&trace, cfg.dedup_window_us);
    let displaced = displaced_count(&deduped.packets);
    let sorted = reorder(&deduped);
    write_atomic(output, &encode_trace(&sorted).map_err(anyhow::Error::from)?)?;
    println!("read: {}", trace.len());
    println!("skipped: {}", trace.stats.skipped + trace.stats.malformed);
    println!("dropped: {}", trace.len() - deduped.len());
    println!("reordered: {displaced}");
    println!("written: {}", sorted.len());
    Ok(())
}

struct MeterOverrides {
    idle_timeout_s: Option<f64>,
    active_timeout_s: Option<f64>,
    pc: Option<Vec<u32>>,
    fd_ms: Option<Vec<u64>>,
    min_class_count: Option<usize>,
}

fn trigger_file(t: Trigger) -> String {
    match t {
        Trigger::PacketCount(n) => format!("pf_pc_{n}.csv"),
        Trigger::Duration(ms) => format!("pf_fd_{ms}.csv"),
        Trigger::Bytes(b) => format!("pf_bc_{b}.csv"),
    }
}

fn trigger_from_file(path: &Path) -> Option<Trigger> {
    let stem = path.file_stem()?.to_str()?;
    let (kind, value) = stem.strip_prefix("pf_")?.split_once('_')?;
    match kind {
        "pc" => value.parse().ok().map(Trigger::PacketCount),
        "fd" => value.parse().ok().map(Trigger::Duration),
        "bc" => value.parse().ok().map(Trigger::Bytes),
        _ => None,
    }
}

fn cmd_meter(
    input: &Path,
    rules: Option<PathBuf>,
    out: Option<PathBuf>,
    o: MeterOverrides,
    common: &Common,
) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(r) = rules {
        cfg.rules_path = Some(r);
    }
    if let Some(v) = o.idle_timeout_s {
        cfg.meter.idle_timeout_s = v;
    }
    if let Some(v) = o.active_timeout_s {
        cfg.meter.active_timeout_s = v;
    }
    if let Some(v) = o.pc {
        cfg.meter.pc_triggers = v.into_iter().collect();
    }
    if let Some(v) = o.fd_ms {
        cfg.meter.fd_triggers_ms = v.into_iter().collect();
    }
    if let Some(v) = o.min_class_count {
        cfg.min_class_count = v;
    }
    cfg.validate()?;
    let rules_path = cfg
        .rules_path
        .clone()
        .ok_or_else(|| anyhow!("no rule file: pass --rules or set rules_path in the config"))?;
    let rules = RuleSet::load(&rules_path).map_err(anyhow::Error::from)?;
    let dir = out_dir(out, &cfg)?;

    let trace = read_trace(input).map_err(anyhow::Error::from)?;
    let output =
        meter(&trace, &cfg.meter).map_err(|e| anyhow!("{e} (run `earlyflow preprocess` first)"))?;
    let cf = build_cf(&output.records, &rules, cfg.min_class_count);

    let mut files = vec![("cf.csv".to_string(), csv_bytes(&cf)?)];
    let mut summaries = BTreeMap::new();
    summaries.insert(
        cf.provenance.to_string(),
        distribution_with(&cf, &rules.default_label),
    );
    for t in cfg.meter.triggers() {
        let pf = build_pf(&output.snapshots, &cf, t).map_err(anyhow::Error::from)?;
        summaries.insert(t.to_string(), distribution_with(&pf, &rules.default_label));
        files.push((trigger_file(t), csv_bytes(&pf)?));
    }
    let config_echo: serde_json::Value =
        serde_json::from_str(&cfg.to_json()).expect("config round trips");
    let report = audit(&output.records, &rules, cfg.meter.idle_timeout_s);
    let audit_json = json!({ "input": input.display().to_string(), "read_stats": trace.stats, "records": output.records.len(),
        "snapshots": output.snapshots.len(), "audit": report, "config": config_echo });
    let dist_json = json!({ "datasets": summaries, "config": config_echo });
    files.push((
        "audit.json".into(),
        serde_json::to_vec_pretty(&audit_json).map_err(anyhow::Error::from)?,
    ));
    files.push((
        "distribution.json".into(),
        serde_json::to_vec_pretty(&dist_json).map_err(anyhow::Error::from)?,
    ));
    files.push(("config.json".into(), cfg.to_json().into_bytes()));
    for (name, bytes) in &files {
        write_atomic(&dir.join(name), bytes)?;
    }
    println!("packets: {}", trace.len());
    println!(
        "flows: {} ({} snapshots)",
        output.records.len(),
        output.snapshots.len()
    );
    println!("cf.csv: {} flows", cf.len());
    println!("wrote {} files to {}", files.len(), dir.display());
    Ok(())
}

struct EvalOptions {
    task: String,
    scenario: String,
    seed: Option<u64>,
    ratio: Option<f64>,
    n_trees: Option<usize>,
}

fn parse_tasks(s: &str) -> anyhow::Result<Vec<Task>> {
    match s {
        "both" => Ok(vec![Task::Binary, Task::Multiclass]),
        other => Ok(vec![other.parse().map_err(|e: String| anyhow!(e))?]),
    }
}

fn parse_scenarios(s: &str) -> anyhow::Result<Vec<ScenarioKind>> {
    if s == "all" {
        return Ok(ScenarioKind::ALL.to_vec());
    }
    s.split(',')
        .map(|x| x.trim().parse().map_err(|e: String| anyhow!(e)))
        .collect()
}

fn read_pf(path: &Path) -> anyhow::Result<(Trigger, Dataset)> {
    let mut ds = read_csv(path)?;
    match ds.provenance {
        Provenance::Partial(t) => Ok((t, ds)),
        // A header-only file carries no provenance column values.
        Provenance::Complete if ds.is_empty() => {
            let t = trigger_from_file(path).ok_or_else(|| {
                anyhow!(
                    "{}: empty dataset and no trigger in the file name",
                    path.display()
                )
            })?;
            ds.provenance = Provenance::Partial(t);
            Ok((t, ds))
        }
        Provenance::Complete => bail!(
            "{} holds complete flows, expected a PF dataset",
            path.display()
        ),
    }
}

fn cmd_eval(
    cf_path: &Path,
    patterns: &[String],
    out: Option<PathBuf>,
    o: EvalOptions,
    common: &Common,
) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(s) = o.seed {
        cfg.split.seed = s;
        cfg.train.seed = s;
    }
    if let Some(r) = o.ratio {
        cfg.split.ratio = r;
    }
    if let Some(n) = o.n_trees {
        cfg.train.n_trees = n;
    }
    cfg.validate()?;
    let tasks = parse_tasks(&o.task)?;
    let scenarios = parse_scenarios(&o.scenario)?;
    let dir = out_dir(out, &cfg)?;

    let cf = read_csv(cf_path).map_err(anyhow::Error::from)?;
    if cf.provenance != Provenance::Complete {
        return Err(anyhow!(
            "{} is a {} dataset, expected CF",
            cf_path.display(),
            cf.provenance
        )
        .into());
    }
    let mut paths = BTreeSet::new();
    for p in patterns {
        let matched: Vec<PathBuf> = glob::glob(p)
            .with_context(|| format!("bad glob {p:?}"))?
            .collect::<std::result::Result<_, _>>()
            .map_err(anyhow::Error::from)?;
        if matched.is_empty() {
            return Err(anyhow!("no PF files match {p:?}").into());
        }
        paths.extend(matched);
    }
    let mut family = BTreeMap::new();
    for p in &paths {
        let (t, ds) = read_pf(p)?;
        if family.insert(t, ds).is_some() {
            return Err(anyhow!("more than one PF file for {t}").into());
        }
    }

    let split = split_keys(&cf, cfg.split.ratio, cfg.split.seed).map_err(anyhow::Error::from)?;
    let report = sweep_scenarios(
        &cf,
        &family,
        &scenarios,
        &tasks,
        &cfg.train,
        &split,
        &cfg.anomaly_labels,
    )
    .map_err(anyhow::Error::from)?;

    let mut summary = String::new();
    writeln!(summary, "CF: {} ({} flows)", cf_path.display(), cf.len()).unwrap();
    for (t, ds) in &family {
        writeln!(summary, "{t}: {} flows", ds.len()).unwrap();
    }
    writeln!(
        summary,
        "train keys: {}, test keys: {}",
        split.train_keys.len(),
        split.test_keys.len()
    )
    .unwrap();
    if !split.degenerate_labels.is_empty() {
        writeln!(
            summary,
            "labels with fewer than 2 flows (train only): {:?}",
            split.degenerate_labels
        )
        .unwrap();
    }
    writeln!(summary, "\n{report}\nconfig:\n{}", cfg.to_json()).unwrap();

    write_atomic(&dir.join("results.csv"), report.to_csv().as_bytes())?;
    write_atomic(&dir.join("summary.txt"), summary.as_bytes())?;
    print!("{report}");
    if report.all_skipped() {
        return Err(Failure::EmptyResult(format!(
            "every cell was skipped; see {} ({REPORT_HEADER})",
            dir.join("results.csv").display()
        )));
    }
    Ok(())
}

fn cmd_synth(spec_path: &Path, output: &Path, truth: &Path, seed: u64) -> Result<()> {
    let text = std::fs::read_to_string(spec_path)
        .with_context(|| format!("cannot read {}", spec_path.display()))?;
    let spec = SynthSpec::from_json(&text).map_err(anyhow::Error::from)?;
    let (trace, flows) = synth_trace(&spec, seed).map_err(anyhow::Error::from)?;
    write_atomic(output, &encode_trace(&trace).map_err(anyhow::Error::from)?)?;
    let truth_json = json!({ "seed": seed, "flows": flows });
    write_atomic(
        truth,
        &serde_json::to_vec_pretty(&truth_json).map_err(anyhow::Error::from)?,
    )?;
    println!("packets: {}", trace.len());
    println!("flows: {}", flows.len());
    Ok(())
}
