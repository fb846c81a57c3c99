use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::Args;
use fhnet::interpret::{
    attribute_window, export_attention, snapshots_to_csv, window_lead_attribution, AttentionSnapshot, IgTarget,
};
use fhnet::io::{read_json, read_record_csv, sidecar_path, write_json, write_record_csv};
use fhnet::numerics::Tensor;
use fhnet::sigproc::{input_window, preprocess_record, WindowSpec};
use fhnet::synth::{emit_dataset, record_file_name, Manifest, MANIFEST_FILE};
use fhnet::train::{evaluate, Checkpoint, Dataset, EvalReport, TrainLog};
use serde::Serialize;

use crate::config::RunConfig;
use crate::Global;

/// Raised before anything is written when an output already exists.
#[derive(Debug)]
pub struct OutputsExist(pub Vec<PathBuf>);

impl fmt::Display for OutputsExist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "outputs already exist (pass --force to overwrite):")?;
        for p in &self.0 {
            write!(f, " {}", p.display())?;
        }
        Ok(())
    }
}

impl std::error::Error for OutputsExist {}

fn out_dir(g: &Global, command: &str) -> PathBuf {
    g.out.clone().unwrap_or_else(|| {
        let root = std::env::var_os("FHNET_OUT").map_or_else(|| PathBuf::from("fhnet-out"), PathBuf::from);
        root.join(command)
    })
}

/// Creates `dir` and refuses to continue if any of `files` is already there.
fn claim_outputs(g: &Global, dir: &Path, files: &[PathBuf]) -> Result<()> {
    let existing: Vec<PathBuf> = files.iter().filter(|p| p.exists()).cloned().collect();
    if !existing.is_empty() && !g.force {
        return Err(OutputsExist(existing).into());
    }
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

/// Every declared output must exist; JSON outputs must parse.
fn verify_outputs(files: &[PathBuf]) -> Result<()> {
    for p in files {
        if !p.is_file() {
            bail!("expected output {} was not written", p.display());
        }
        if p.extension().is_some_and(|e| e == "json") {
            read_json::<serde_json::Value>(p)?;
        }
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn echo_config(dir: &Path, cfg: &RunConfig) -> Result<()> {
    Ok(write_json(&dir.join("config.json"), cfg)?)
}

fn required(flag: Option<&PathBuf>, from_config: Option<&PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or(from_config)
        .cloned()
        .with_context(|| format!("no {name} given (use --{name} or paths.{name} in the config)"))
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    if !path.exists() {
        bail!("dataset path {} does not exist", path.display());
    }
    Dataset::load(path).with_context(|| format!("cannot load dataset {}", path.display()))
}

fn load_checkpoint(path: &Path) -> Result<(Checkpoint, String)> {
    if !path.exists() {
        bail!("checkpoint {} does not exist", path.display());
    }
    Checkpoint::load(path).with_context(|| format!("cannot load checkpoint {}", path.display()))
}

/// The training window of a checkpoint, or non-overlapping windows sized by
/// the model when it was saved without a training config.
fn checkpoint_window(ck: &Checkpoint) -> WindowSpec {
    ck.train_config
        .as_ref()
        .map(|t| t.window)
        .unwrap_or_else(|| WindowSpec::new(ck.model_config.t_in, ck.model_config.t_out, ck.model_config.t_in))
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Number of records [config: gen.records]
    #[arg(long)]
    pub records: Option<usize>,
    /// Seconds per record [config: gen.mix.duration_s]
    #[arg(long)]
    pub duration_s: Option<f64>,
}

pub fn gen(g: &Global, a: &GenArgs) -> Result<()> {
    let mut cfg = RunConfig::resolve(g.config.as_deref(), g.seed)?;
    if let Some(n) = a.records {
        cfg.gen.records = n;
    }
    if let Some(d) = a.duration_s {
        cfg.gen.mix.duration_s = d;
    }
    if cfg.gen.records == 0 {
        bail!("gen.records must be at least 1");
    }
    let dir = out_dir(g, "gen");
    let mut files: Vec<PathBuf> = (0..cfg.gen.records)
        .flat_map(|i| {
            let csv = dir.join(record_file_name(i));
            [sidecar_path(&csv), csv]
        })
        .collect();
    files.push(dir.join(MANIFEST_FILE));
    files.push(dir.join("config.json"));
    claim_outputs(g, &dir, &files)?;
    let manifest: Manifest = emit_dataset(&cfg.mix_configs(), &dir)?;
    echo_config(&dir, &cfg)?;
    verify_outputs(&files)?;
    println!("wrote {} records to {}", manifest.entries.len(), dir.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    /// A record CSV or a directory of them
    #[arg(long)]
    pub input: PathBuf,
    /// Short median window in seconds [config: preprocess.median_w1_s]
    #[arg(long)]
    pub median_w1_s: Option<f64>,
    /// Long median window in seconds [config: preprocess.median_w2_s]
    #[arg(long)]
    pub median_w2_s: Option<f64>,
    /// Wavelet decomposition levels [config: preprocess.dwt_levels]
    #[arg(long)]
    pub dwt_levels: Option<usize>,
}

fn record_files(input: &Path) -> Result<Vec<PathBuf>> {
    if !input.exists() {
        bail!("input {} does not exist", input.display());
    }
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(input)
        .with_context(|| format!("cannot read {}", input.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no CSV records in {}", input.display());
    }
    Ok(files)
}

pub fn preprocess(g: &Global, a: &PreprocessArgs) -> Result<()> {
    let mut cfg = RunConfig::resolve(g.config.as_deref(), g.seed)?;
    let p = &mut cfg.preprocess;
    p.median_w1_s = a.median_w1_s.unwrap_or(p.median_w1_s);
    p.median_w2_s = a.median_w2_s.unwrap_or(p.median_w2_s);
    p.dwt_levels = a.dwt_levels.unwrap_or(p.dwt_levels);
    let inputs = record_files(&a.input)?;
    let dir = out_dir(g, "preprocess");
    let outputs: Vec<PathBuf> = inputs
        .iter()
        .map(|f| dir.join(f.file_name().expect("record path has a file name")))
        .collect();
    let mut files: Vec<PathBuf> = outputs.iter().flat_map(|o| [o.clone(), sidecar_path(o)]).collect();
    files.push(dir.join("config.json"));
    let inputs_canon: Vec<PathBuf> = inputs.iter().filter_map(|p| p.canonicalize().ok()).collect();
    if outputs
        .iter()
        .any(|o| o.canonicalize().is_ok_and(|c| inputs_canon.contains(&c)))
    {
        bail!("output directory {} would overwrite the inputs", dir.display());
    }
    let records = inputs
        .iter()
        .map(|f| {
            let rec = read_record_csv(f)?;
            preprocess_record(&rec, &cfg.preprocess).with_context(|| format!("preprocessing {}", f.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    claim_outputs(g, &dir, &files)?;
    for (o, rec) in outputs.iter().zip(&records) {
        write_record_csv(o, rec)?;
    }
    echo_config(&dir, &cfg)?;
    verify_outputs(&files)?;
    println!(
        "preprocessed {} records into {} [{}]",
        records.len(),
        dir.display(),
        cfg.preprocess.stage_labels().join(", ")
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Record CSV or directory [config: paths.data]
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Number of epochs [config: train.epochs]
    #[arg(long)]
    pub epochs: Option<usize>,
}

pub fn train(g: &Global, a: &TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::resolve(g.config.as_deref(), g.seed)?;
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    let data = required(a.data.as_ref(), cfg.paths.data.as_ref(), "data")?;
    cfg.paths.data = Some(data.clone());
    let dataset = load_dataset(&data)?;
    let dir = out_dir(g, "train");
    let ckpt_path = dir.join("model.ckpt");
    let files = [ckpt_path.clone(), dir.join("train_log.json"), dir.join("config.json")];
    claim_outputs(g, &dir, &files)?;
    let ck = fhnet::train::train(&cfg.model, &cfg.train, &dataset, |e| {
        let val = e.val_loss.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
        eprintln!(
            "epoch {:>3}  train {:.6}  val {val}  grad_norm {:.4}  clipped {}",
            e.epoch, e.train_loss, e.mean_grad_norm, e.clipped_steps
        );
    })?;
    let log: &TrainLog = ck.log.as_ref().context("trainer returned no log")?;
    write_json(&files[1], log)?;
    ck.save(&ckpt_path)?;
    echo_config(&dir, &cfg)?;
    verify_outputs(&files)?;
    Checkpoint::load(&ckpt_path)?;
    println!("{}", ckpt_path.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint file [config: paths.checkpoint]
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Record CSV or directory with a fecg_ref column [config: paths.data]
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Record wall-clock seconds in the report (makes it non-reproducible)
    #[arg(long)]
    pub timing: bool,
}

pub fn eval(g: &Global, a: &EvalArgs) -> Result<()> {
    let cfg = RunConfig::resolve(g.config.as_deref(), g.seed)?;
    let ckpt = required(a.checkpoint.as_ref(), cfg.paths.checkpoint.as_ref(), "checkpoint")?;
    let data = required(a.data.as_ref(), cfg.paths.data.as_ref(), "data")?;
    let (ck, id) = load_checkpoint(&ckpt)?;
    let dataset = load_dataset(&data)?;
    if let Some(r) = dataset.records.iter().find(|r| r.record.fecg_ref.is_none()) {
        bail!("record `{}` has no fecg_ref column; evaluation needs ground truth", r.name);
    }
    let dir = out_dir(g, "eval");
    let files = [dir.join("report.json")];
    claim_outputs(g, &dir, &files)?;
    let start = Instant::now();
    let mut report: EvalReport = evaluate(&ck.model()?, &id, &dataset, &checkpoint_window(&ck))?;
    if a.timing {
        report.wall_clock_s = Some(start.elapsed().as_secs_f64());
    }
    write_json(&files[0], &report)?;
    verify_outputs(&files)?;
    let fmt_r2 = |m: &fhnet::train::Metrics| m.r_squared.value().map_or_else(|| "undefined".into(), |v| format!("{v:.4}"));
    println!("windows {}  window {}", report.window_count, report.window);
    println!("R2 {}  RMSE {:.4}", fmt_r2(&report.aggregate), report.aggregate.rmse);
    println!(
        "R2 {}  RMSE {:.4}  (normalized)",
        fmt_r2(&report.aggregate_normalized),
        report.aggregate_normalized.rmse
    );
    println!("R2 {}  RMSE {:.4}  (pooled)", fmt_r2(&report.concatenated), report.concatenated.rmse);
    Ok(())
}

pub fn parse_target(s: &str) -> std::result::Result<IgTarget, String> {
    match s {
        "sum" => Ok(IgTarget::Sum),
        _ => s
            .parse::<usize>()
            .map(IgTarget::Sample)
            .map_err(|_| format!("expected `sum` or a sample index, got `{s}`")),
    }
}

#[derive(Args, Debug)]
pub struct AttributeArgs {
    /// Checkpoint file [config: paths.checkpoint]
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Record CSV, or a directory whose first record is used [config: paths.data]
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Attribution window in seconds
    #[arg(long, default_value_t = 0.25)]
    pub window_s: f64,
    /// Riemann steps of the path integral
    #[arg(long, default_value_t = 128)]
    pub steps: usize,
    /// Seconds of signal to explain, covered by consecutive model input windows
    #[arg(long, default_value_t = 2.0)]
    pub duration_s: f64,
    /// Start of the explained span in seconds
    #[arg(long, default_value_t = 0.0)]
    pub start_s: f64,
    /// Explained output: `sum` of all predicted samples or a sample index
    #[arg(long, default_value = "sum", value_parser = parse_target)]
    pub target: IgTarget,
}

#[derive(Serialize)]
struct WindowCompleteness {
    offset: usize,
    f_input: f64,
    f_baseline: f64,
    completeness_gap: f64,
    relative_gap: f64,
}

#[derive(Serialize)]
struct AttributionReport<'a> {
    record: &'a str,
    start_sample: usize,
    samples: usize,
    target: IgTarget,
    table: &'a fhnet::interpret::AttributionTable,
    windows: Vec<WindowCompleteness>,
}

pub fn attribute(g: &Global, a: &AttributeArgs) -> Result<()> {
    let cfg = RunConfig::resolve(g.config.as_deref(), g.seed)?;
    let ckpt = required(a.checkpoint.as_ref(), cfg.paths.checkpoint.as_ref(), "checkpoint")?;
    let data = required(a.data.as_ref(), cfg.paths.data.as_ref(), "data")?;
    let (ck, id) = load_checkpoint(&ckpt)?;
    let dataset = load_dataset(&data)?;
    let named = &dataset.records[0];
    let rec = &named.record;
    let model = ck.model()?;
    let t_in = model.config.t_in;
    if rec.num_leads() != model.config.leads {
        bail!("record `{}` has {} leads, the model expects {}", named.name, rec.num_leads(), model.config.leads);
    }
    if !(a.duration_s > 0.0 && a.start_s >= 0.0) {
        bail!("--duration-s must be positive and --start-s non-negative");
    }
    let fs_hz = rec.sample_rate_hz;
    let start = (a.start_s * fs_hz).round() as usize;
    let n = (a.duration_s * fs_hz).round() as usize;
    let count = n.div_ceil(t_in);
    if start + count * t_in > rec.len() {
        bail!(
            "record `{}` has {} samples; explaining {n} samples from {start} needs {} ({count} windows of {t_in})",
            named.name,
            rec.len(),
            start + count * t_in
        );
    }

    let dir = out_dir(g, "attribute");
    let files = [
        dir.join("attribution.csv"),
        dir.join("attribution.json"),
        dir.join("attention.json"),
        dir.join("attention.csv"),
    ];
    claim_outputs(g, &dir, &files)?;

    let leads = rec.num_leads();
    let mut attr = vec![Vec::with_capacity(count * t_in); leads];
    let mut windows = Vec::with_capacity(count);
    let mut snapshots: Vec<AttentionSnapshot> = Vec::with_capacity(count);
    for w in 0..count {
        let offset = start + w * t_in;
        let x = input_window(rec, offset, t_in)?;
        let ig = attribute_window(&model, &x, a.steps, a.target)?;
        for (i, row) in attr.iter_mut().enumerate() {
            row.extend_from_slice(&ig.attributions.data()[i * t_in..(i + 1) * t_in]);
        }
        windows.push(WindowCompleteness {
            offset,
            f_input: ig.f_input,
            f_baseline: ig.f_baseline,
            completeness_gap: ig.completeness_gap(),
            relative_gap: ig.relative_gap(),
        });
        snapshots.push(export_attention(&model, &x, Some(offset))?);
    }
    let flat: Vec<f64> = attr.into_iter().flat_map(|r| r.into_iter().take(n)).collect();
    let mut table = window_lead_attribution(&Tensor::new(vec![leads, n], flat)?, fs_hz, a.window_s)?;
    table.baseline = "zeros".into();
    table.steps = a.steps;
    table.checkpoint_id = id;

    let csv = table.to_csv();
    write_text(&files[0], &csv)?;
    write_json(
        &files[1],
        &AttributionReport {
            record: &named.name,
            start_sample: start,
            samples: n,
            target: a.target,
            table: &table,
            windows,
        },
    )?;
    write_json(&files[2], &snapshots)?;
    write_text(&files[3], &snapshots_to_csv(&snapshots))?;
    verify_outputs(&files)?;
    print!("{csv}");
    Ok(())
}
