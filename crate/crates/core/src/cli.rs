//! Command-line front end.
//!
//! Every artifact starts with a `#` comment line recording the command, the
//! resolved config and the seed.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{parse_config, RunConfig};
use crate::embedding::EmbeddingNetwork;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_repeated, grid_search_weights, write_cmc_long, write_cmc_table, GridRow};
use crate::gallery::{
    generate_synthetic, load_manifest, merge_galleries, write_manifest, MixedGallery, SyntheticConfig,
};
use crate::rng;
use crate::sampling::triplet_capacity;
use crate::training::{train, write_loss_curve};

pub const CHECKPOINT_FILE: &str = "checkpoint.tfnet";
pub const LOSS_CURVE_FILE: &str = "loss_curve.csv";
pub const CMC_FILE: &str = "cmc.csv";
pub const CMC_LONG_FILE: &str = "cmc_long.csv";
pub const GRID_FILE: &str = "grid.csv";
pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Debug, Parser)]
#[command(name = "triplet-reid", version, about = "Weighted triplet-loss metric learning with CMC evaluation")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON config file
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Top-level seed (overrides the config)
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides the config)
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Override a config key, e.g. `--set beta=0.5`
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network; writes a checkpoint and the loss curve.
    Train,
    /// Evaluate a checkpoint with repeated CMC trials.
    Eval {
        /// Defaults to `<out>/checkpoint.tfnet`
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate one model per (gamma, beta) pair.
    Grid {
        #[arg(long, value_delimiter = ',', default_value = "1")]
        gammas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.3,0.5,1")]
        betas: Vec<f64>,
        /// Manifest(s) to evaluate on; defaults to the training data
        #[arg(long, value_delimiter = ',')]
        eval_data: Vec<PathBuf>,
    },
    /// Write a synthetic Gaussian-cluster manifest.
    Synth {
        #[arg(long, default_value_t = 30)]
        ids: usize,
        #[arg(long, default_value_t = 6)]
        per_id: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 5.0)]
        spread: f64,
        #[arg(long, default_value_t = 0.2)]
        noise: f64,
        #[arg(long, default_value = "synth")]
        tag: String,
    },
    /// Print the number of distinct triplets in a P x K batch.
    CountTriplets {
        #[arg(long)]
        persons: u64,
        #[arg(long)]
        per_person: u64,
    },
}

/// Parses arguments, runs, and maps the outcome to an exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let stdout = std::io::stdout();
    match run(&cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn resolve_config(global: &GlobalArgs) -> Result<RunConfig> {
    let mut cfg = parse_config(global.config.as_deref(), &global.overrides)?;
    if let Some(s) = global.seed {
        cfg.train.seed = s;
    }
    if let Some(o) = &global.out {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

pub fn run<W: Write>(cli: &Cli, stdout: &mut W) -> Result<()> {
    if let Command::CountTriplets { persons, per_person } = cli.command {
        writeln!(stdout, "{}", triplet_capacity(persons, per_person)).map_err(|e| Error::io("<stdout>", e))?;
        return Ok(());
    }
    let cfg = resolve_config(&cli.global)?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    match &cli.command {
        Command::CountTriplets { .. } => unreachable!(),
        Command::Synth { ids, per_id, dim, spread, noise, tag } => {
            let synth = SyntheticConfig {
                n_ids: *ids,
                per_id: *per_id,
                dim: *dim,
                cluster_spread: *spread,
                noise: *noise,
                seed: cfg.seed(),
                tag: tag.clone(),
            };
            let g: MixedGallery<f64> = generate_synthetic(&synth)?;
            let mut header = provenance("synth", &cfg);
            header.push(format!("synth ids={ids} per_id={per_id} dim={dim} spread={spread} noise={noise} tag={tag}"));
            let path = out.join(MANIFEST_FILE);
            write_artifact(&path, |w| write_manifest(&g, &header, w))?;
            writeln!(stdout, "wrote {}", path.display()).map_err(|e| Error::io("<stdout>", e))?;
        }
        Command::Train => {
            let gallery = load_data(&cfg.data)?;
            let dims = cfg.resolved_layer_dims(gallery.input_dim())?;
            let net = EmbeddingNetwork::init(&dims, cfg.seed())?;
            let (net, stats) = train(net, &gallery, &cfg.train)?;
            let header = provenance("train", &cfg);
            write_artifact(&out.join(CHECKPOINT_FILE), |w| net.write_checkpoint(&header, w))?;
            write_artifact(&out.join(LOSS_CURVE_FILE), |w| write_loss_curve(&stats, &header, w))?;
            if let Some(last) = stats.last() {
                writeln!(stdout, "trained {} epochs, final mean loss {}", stats.len(), last.mean_loss)
                    .map_err(|e| Error::io("<stdout>", e))?;
            }
        }
        Command::Eval { checkpoint } => {
            let gallery = load_data(&cfg.data)?;
            let path = checkpoint.clone().unwrap_or_else(|| out.join(CHECKPOINT_FILE));
            let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
            let net = EmbeddingNetwork::<f64>::read_checkpoint(BufReader::new(file))?;
            if net.input_dim() != gallery.input_dim() {
                return Err(Error::DimensionMismatch { expected: net.input_dim(), got: gallery.input_dim() });
            }
            let mut split = rng::stream(cfg.seed(), rng::STREAM_SPLIT);
            let result = evaluate_repeated(&net, &gallery, &cfg.protocol, &mut split)?;
            let mut header = provenance("eval", &cfg);
            header.push(format!("checkpoint {}", path.display()));
            let row = GridRow { gamma: cfg.train.loss.gamma, beta: cfg.train.loss.beta, result };
            write_artifact(&out.join(CMC_FILE), |w| {
                write_cmc_table(std::slice::from_ref(&row), &cfg.protocol.ks, &header, w)
            })?;
            write_artifact(&out.join(CMC_LONG_FILE), |w| write_cmc_long(&row.result.overall, &header, w))?;
            writeln!(stdout, "top-1 {}", row.result.overall.top1()).map_err(|e| Error::io("<stdout>", e))?;
        }
        Command::Grid { gammas, betas, eval_data } => {
            let gallery = load_data(&cfg.data)?;
            let eval_gallery = if eval_data.is_empty() { gallery.clone() } else { load_data(eval_data)? };
            let dims = cfg.resolved_layer_dims(gallery.input_dim())?;
            let net = EmbeddingNetwork::init(&dims, cfg.seed())?;
            let rows = grid_search_weights(&net, &gallery, &eval_gallery, gammas, betas, &cfg.train, &cfg.protocol)?;
            let mut header = provenance("grid", &cfg);
            header.push(format!("gammas {gammas:?} betas {betas:?}"));
            write_artifact(&out.join(GRID_FILE), |w| write_cmc_table(&rows, &cfg.protocol.ks, &header, w))?;
            for r in &rows {
                writeln!(stdout, "gamma={} beta={} top1={}", r.gamma, r.beta, r.result.overall.top1())
                    .map_err(|e| Error::io("<stdout>", e))?;
            }
        }
    }
    Ok(())
}

fn provenance(command: &str, cfg: &RunConfig) -> Vec<String> {
    vec![format!("triplet-reid {command} seed={} config={}", cfg.seed(), cfg.to_json())]
}

fn load_data(paths: &[PathBuf]) -> Result<MixedGallery<f64>> {
    if paths.is_empty() {
        return Err(Error::config("data", "no input manifest; set `data` in the config or pass --set data=PATH"));
    }
    let galleries = paths.iter().map(load_manifest).collect::<Result<Vec<_>>>()?;
    merge_galleries(&galleries)
}

fn write_artifact(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|()| w.flush()).map_err(|e| Error::io(path, e))
}
