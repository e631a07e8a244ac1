//! Command-line verbs. The `ecgcl` binary only parses arguments and maps
//! errors to exit codes; everything else lives here so it can be tested.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::cl::{run_baseline, run_sequence, Baseline, ClModel, PhaseLog, PruneReport, SparsitySchedule};
use crate::config::{task_shape, SequenceConfig, TaskConfig};
use crate::data::{build_samples, load_csv, preprocess, save_csv, synth_ecg, SynthConfig};
use crate::error::{Error, Result};
use crate::network::TaskMode;
use crate::train::MetricsReport;

#[derive(Debug, Parser)]
#[command(name = "ecgcl", version, about = "Multi-resolution ECG interpreter with continual learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Leave wall-clock timings out of reports so reruns are byte-identical.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic CSV dataset and its manifest (config: synth JSON).
    Generate(Common),
    /// Run a continual-learning sequence (config: sequence JSON).
    TrainSequence(Common),
    /// Evaluate one task of a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Task id (1-based, in training order).
        #[arg(long)]
        task: u8,
        /// CSV file or directory; without it the task's test split from
        /// `--config` is used.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run the finetune or scratch reference on a sequence config.
    Baselines {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        mode: BaselineArg,
    },
    /// Write per-layer ownership histograms and pick-mask counts as CSV.
    ExportMasks {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum BaselineArg {
    Finetune,
    Scratch,
}

impl From<BaselineArg> for Baseline {
    fn from(b: BaselineArg) -> Self {
        match b {
            BaselineArg::Finetune => Baseline::Finetune,
            BaselineArg::Scratch => Baseline::Scratch,
        }
    }
}

pub const CHECKPOINT_FILE: &str = "checkpoint.ecgcl";

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn require_config(c: &Common) -> Result<&Path> {
    c.config
        .as_deref()
        .ok_or_else(|| Error::config("--config is required for this command"))
}

fn base_dir(config: &Path) -> PathBuf {
    config.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn load_sequence(c: &Common) -> Result<(SequenceConfig, PathBuf)> {
    let path = require_config(c)?;
    let mut cfg = SequenceConfig::load(path)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    Ok((cfg, base_dir(path)))
}

pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Generate(c) => generate(&c),
        Command::TrainSequence(c) => train_sequence(&c),
        Command::Eval {
            common,
            checkpoint,
            task,
            data,
        } => eval(&common, &checkpoint, task, data.as_deref()),
        Command::Baselines { common, mode } => baselines(&common, mode.into()),
        Command::ExportMasks { checkpoint, out } => export_masks(&checkpoint, &out),
    }
}

#[derive(Serialize)]
struct Manifest {
    seed: u64,
    records: usize,
    files: Vec<String>,
    fs: f64,
    leads: usize,
    duration_s: f64,
    r_peaks: usize,
    /// Records carrying each class ID.
    class_balance: BTreeMap<u32, usize>,
}

pub fn generate(c: &Common) -> Result<String> {
    let path = require_config(c)?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg: SynthConfig = serde_json::from_str(&text).map_err(|e| Error::config(e.to_string()))?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let records = synth_ecg(&cfg)?;
    let files = save_csv(&records, &c.out)?;
    let mut class_balance = BTreeMap::new();
    for r in &records {
        for &l in r.labels.iter().flatten() {
            *class_balance.entry(l).or_insert(0) += 1;
        }
    }
    let manifest = Manifest {
        seed: cfg.seed,
        records: records.len(),
        files: files
            .iter()
            .map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
            .collect(),
        fs: cfg.fs,
        leads: cfg.leads,
        duration_s: cfg.duration_s,
        r_peaks: records.iter().map(|r| r.qrs.as_ref().map_or(0, Vec::len)).sum(),
        class_balance,
    };
    write(&c.out.join("manifest.json"), &json(&manifest))?;
    Ok(format!("wrote {} records to {}\n", records.len(), c.out.display()))
}

/// Resolved configuration plus what the run actually did.
#[derive(Serialize)]
struct RunLog<'a> {
    config: &'a SequenceConfig,
    schedule: &'a SparsitySchedule,
    phases: &'a [PhaseLog],
    prunes: &'a [Vec<PruneReport>],
}

fn summary(reports: &[MetricsReport]) -> String {
    let mut s = String::new();
    for r in reports {
        let metric = match r.mode {
            TaskMode::Seg => "F1",
            TaskMode::Cls => "macro-AUC",
        };
        let _ = writeln!(s, "task {} {:16} {metric:>9} {:.4}", r.task_id, r.task, r.headline());
    }
    s
}

pub fn train_sequence(c: &Common) -> Result<String> {
    let (cfg, base) = load_sequence(c)?;
    let plans = cfg.plans(&base)?;
    let schedule = cfg.schedule();
    let mut model = ClModel::new(cfg.encoder, cfg.seed)?.with_pick(cfg.pick.clone());
    let out = run_sequence(&mut model, &plans, &schedule, !c.deterministic)?;
    mkdir(&c.out)?;
    Checkpoint {
        model: model.clone(),
        schedule: Some(schedule.clone()),
        preprocess: cfg.preprocess.clone(),
    }
    .save(c.out.join(CHECKPOINT_FILE))?;
    write(&c.out.join("reports.json"), &json(&out.reports))?;
    write(&c.out.join("post_task_reports.json"), &json(&out.post_task))?;
    let log = RunLog {
        config: &cfg,
        schedule: &schedule,
        phases: &out.phases,
        prunes: &out.prunes,
    };
    write(&c.out.join("config_log.json"), &json(&log))?;
    let table = model.owners.table(model.records.len() as u8);
    write(&c.out.join("occupancy.txt"), &table)?;
    Ok(format!(
        "{table}\nmodel storage: {} bytes\n{}",
        model.storage_bytes(),
        summary(&out.reports)
    ))
}

fn eval_task_config<'a>(cfg: &'a SequenceConfig, name: &str) -> Result<(usize, &'a TaskConfig)> {
    cfg.tasks
        .iter()
        .enumerate()
        .find(|(_, t)| t.name == name)
        .ok_or_else(|| Error::Lookup(format!("config has no task named `{name}`")))
}

pub fn eval(c: &Common, checkpoint: &Path, task: u8, data: Option<&Path>) -> Result<String> {
    let ck = Checkpoint::load(checkpoint)?;
    let model = &ck.model;
    let rec = model.record(task)?;
    let samples = match data {
        Some(path) => {
            let records = load_csv(path)?;
            let decl = TaskConfig {
                name: rec.name.clone(),
                mode: rec.shape.mode,
                leads: rec.shape.leads,
                classes: rec.classes.clone(),
                data: crate::config::DataSource::Csv(path.to_path_buf()),
                optim: Default::default(),
                retrain_epochs: 0,
            };
            let shape = task_shape(&decl, &records, &ck.preprocess)?;
            if shape != rec.shape {
                return Err(Error::shape(format!(
                    "data gives windows of {} samples, task {task} was trained on {}",
                    shape.window_len, rec.shape.window_len
                )));
            }
            build_samples(&preprocess(&records, &ck.preprocess)?, &rec.shape, &rec.classes)?
        }
        None => {
            let (cfg, base) = load_sequence(c)?;
            let (index, _) = eval_task_config(&cfg, &rec.name)?;
            cfg.plans(&base)?.swap_remove(index).test
        }
    };
    let report = model.evaluate(rec, &samples, !c.deterministic)?;
    let fingerprint_ok = model.fingerprint(task)? == rec.fingerprint;
    mkdir(&c.out)?;
    write(&c.out.join(format!("report_task{task}.json")), &json(&report))?;
    Ok(format!(
        "{}fingerprint {}\n",
        summary(std::slice::from_ref(&report)),
        if fingerprint_ok { "matches" } else { "DIFFERS" }
    ))
}

#[derive(Serialize)]
struct BaselineFile<'a> {
    mode: Baseline,
    storage_bytes: usize,
    reports: &'a [MetricsReport],
    post_task: &'a [MetricsReport],
    phases: &'a [PhaseLog],
}

pub fn baselines(c: &Common, mode: Baseline) -> Result<String> {
    let (cfg, base) = load_sequence(c)?;
    let plans = cfg.plans(&base)?;
    let out = run_baseline(mode, cfg.encoder, &plans, cfg.seed, !c.deterministic)?;
    mkdir(&c.out)?;
    let name = match mode {
        Baseline::Finetune => "finetune",
        Baseline::Scratch => "scratch",
    };
    let file = BaselineFile {
        mode,
        storage_bytes: out.storage_bytes,
        reports: &out.reports,
        post_task: &out.post_task,
        phases: &out.phases,
    };
    write(&c.out.join(format!("baseline_{name}.json")), &json(&file))?;
    Ok(format!(
        "{name}: {} bytes of model storage\n{}",
        out.storage_bytes,
        summary(&out.reports)
    ))
}

pub fn export_masks(checkpoint: &Path, out: &Path) -> Result<String> {
    let ck = Checkpoint::load(checkpoint)?;
    let m = &ck.model;
    let tasks = m.records.len() as u8;
    let mut own = String::from("layer,total,free");
    for t in 1..=tasks {
        let _ = write!(own, ",task{t}");
    }
    own.push('\n');
    for occ in m.owners.occupancy() {
        let _ = write!(own, "{},{},{}", occ.layer, occ.total, occ.free);
        for t in 1..=tasks {
            let _ = write!(own, ",{}", occ.owned.get(&t).copied().unwrap_or(0));
        }
        own.push('\n');
    }
    let mut picks = String::from("task,layer,picked,eligible\n");
    for r in &m.records {
        for (layer, bits) in r.pick.layers() {
            let owners = m.owners.owners(layer)?;
            let eligible = owners.iter().filter(|&&o| o != crate::cl::FREE && o < r.id).count();
            let picked = bits.iter().filter(|&&b| b).count();
            let _ = writeln!(picks, "{},{layer},{picked},{eligible}", r.id);
        }
    }
    mkdir(out)?;
    write(&out.join("ownership.csv"), &own)?;
    write(&out.join("picks.csv"), &picks)?;
    Ok(format!("wrote ownership.csv and picks.csv to {}\n", out.display()))
}
