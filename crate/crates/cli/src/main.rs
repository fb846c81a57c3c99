//! `fhnet`: generate, preprocess, train, evaluate and attribute.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

const OUT_HELP: &str = "Output directory [default: $FHNET_OUT/<command>, or fhnet-out/<command>]";

const CONFIG_SCHEMA: &str = "\
RUN CONFIG (--config, JSON; unknown keys are rejected, omitted keys take defaults):
  seed          u64, the only seed; record i of `gen` uses seed + i
  model         leads, t_in, t_out, d_lift, d_cheb, d_model, blocks, heads, k_cheb,
                mstfe_kernels, adjacency, ffn_width, ta_residual, decoder_mstfe,
                decoder_padding, share_masks
  train         epochs, batch_size, lr, train_fraction, grad_clip,
                window {t_in, t_out, stride, alignment}
  gen           records, mix {leads, maternal_gains, fetal_gains, rho, noise_std,
                maternal_hr_bpm, fetal_hr_bpm, hr_jitter, duration_s, sample_rate_hz, ...}
  preprocess    median_w1_s, median_w2_s, dwt_levels
  paths         data, checkpoint
Every command that reads a config writes the fully materialized one to config.json.";

const RECORD_SCHEMA: &str = "\
RECORD CSV: header `t,lead_1,...,lead_L[,fecg_ref]`, one row per sample, t strictly
increasing. Sidecar `<name>.json`: sample_rate_hz, provenance, preprocessing (stage
labels in order), edge_handling, lead_norm, fecg_ref_norm.";

const EXIT_CODES: &str = "\
EXIT CODES: 0 success; 1 any error; 2 outputs already exist and --force was not given
(nothing is written).";

#[derive(Parser)]
#[command(name = "fhnet", version, about = "Fetal ECG extraction with a graph-attention encoder-decoder")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
pub struct Global {
    /// Overrides the config seed
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run config JSON
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overwrite existing outputs
    #[arg(long, global = true)]
    pub force: bool,
    #[arg(long, global = true, help = OUT_HELP)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic abdominal records with a fetal reference
    #[command(after_long_help = format!("OUTPUTS: record_NNNN.csv + record_NNNN.json per record, manifest.json \
(entries of file, seed, config), config.json.\n\n{RECORD_SCHEMA}\n\n{CONFIG_SCHEMA}\n\n{EXIT_CODES}"))]
    Gen(commands::GenArgs),
    /// Median baseline removal, wavelet denoising and z-scoring
    #[command(after_long_help = format!("OUTPUTS: one CSV + sidecar per input record under the same file name, \
config.json. Stages are appended to the sidecar's preprocessing list.\n\n{RECORD_SCHEMA}\n\n{EXIT_CODES}"))]
    Preprocess(commands::PreprocessArgs),
    /// Train a model; prints per-epoch losses and then the checkpoint path
    #[command(after_long_help = format!("OUTPUTS: model.ckpt, train_log.json, config.json.\n\n\
CHECKPOINT: magic `FHNETCK1`, u32 version 1, then length-prefixed JSON blocks (model config, train \
config, log) and named f64 tensors; its id is the sha256 of the file.\n\
TRAIN LOG: seed, window, split, train_windows, validation_windows, best_epoch, best_loss, epochs \
[{{epoch, train_loss, val_loss, mean_grad_norm, clipped_steps}}].\n\n{CONFIG_SCHEMA}\n\n{EXIT_CODES}"))]
    Train(commands::TrainArgs),
    /// Autoregressive evaluation against the fetal reference
    #[command(after_long_help = format!("OUTPUTS: report.json with checkpoint_id, window, window_spec, \
model_config, aggregation, window_count, undefined_r_squared, aggregate, aggregate_normalized, \
concatenated, concatenated_normalized, records[], windows[], wall_clock_s. Metrics are \
{{r_squared, rmse}}; r_squared is a number or \"undefined\". `aggregate` is the per-window mean on \
the recorded scale.\n\n{EXIT_CODES}"))]
    Eval(commands::EvalArgs),
    /// Integrated-gradients lead attribution and spatial attention
    #[command(after_long_help = format!("OUTPUTS:\n  attribution.csv   `lead,0.00s-0.25s,...` with rows Lead_1..Lead_L, 4 decimals, \
each column min-max normalized\n  attribution.json  table, target, per-window completeness\n  \
attention.json    per-window snapshots of s_sa, p_eff and argmax per block and head\n  \
attention.csv     window_offset,block,head,source,destination,s_sa,p_eff\n\n{EXIT_CODES}"))]
    Attribute(commands::AttributeArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => commands::gen(&cli.global, &a),
        Command::Preprocess(a) => commands::preprocess(&cli.global, &a),
        Command::Train(a) => commands::train(&cli.global, &a),
        Command::Eval(a) => commands::eval(&cli.global, &a),
        Command::Attribute(a) => commands::attribute(&cli.global, &a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<commands::OutputsExist>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
