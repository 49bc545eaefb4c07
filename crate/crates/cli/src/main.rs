//! `hvtrack`: build tracklet caches, train, track, evaluate and plot.
//!
//! Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage error.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use hvtrack::dataset::{build_hv, load_kitti_tracklets, read_cache, write_cache, Category, Split, Tracklet};
use hvtrack::evaluation::{evaluate, plot_category_bars, plot_curves, read_runs, render_report, write_runs, OpeReport};
use hvtrack::model::{checkpoint, HvTrackNet};
use hvtrack::synth::generate_dataset;
use hvtrack::tracker::{run_tracklets, TrackOptions};
use hvtrack::train::{train, write_loss_log};

use config::RunConfig;

/// Frame intervals with a search-area enlargement offset.
const INTERVALS: [usize; 5] = [1, 2, 3, 5, 10];

#[derive(Debug, Parser)]
#[command(name = "hvtrack", version, about = "Point-cloud single-object tracking under high temporal variation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split KITTI tracklets at a frame interval and write a tracklet cache.
    BuildHv {
        #[arg(long)]
        kitti_root: PathBuf,
        #[arg(long, value_parser = parse_category)]
        category: Category,
        #[arg(long, value_parser = parse_interval)]
        interval: usize,
        #[arg(long, value_parser = parse_split, default_value = "test")]
        split: Split,
        /// Output directory; defaults to `<cache dir>/kitti-<category>-<split>-<interval>`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Keep only points within this horizontal distance of each box center.
        #[arg(long)]
        keep_radius: Option<f64>,
    },
    /// Generate synthetic tracklets into a tracklet cache.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory; defaults to `<cache dir>/synth`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `synth.count`.
        #[arg(long)]
        count: Option<usize>,
        /// Overrides `synth.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model; writes `model.ckpt`, `loss.tsv` and `config.toml` to `--out`.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Tracklet cache; defaults to `paths.data`.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `train.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Track every tracklet of a cache; writes run records, reports and plots.
    Track {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Split raw tracklets at this interval before tracking.
        #[arg(long, value_parser = parse_interval)]
        interval: Option<usize>,
        #[arg(long, default_value_t = 6, value_parser = clap::value_parser!(u64).range(1..=8))]
        k_test: u64,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Track options (`[track]` table) other than the memory size and seed.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Recompute the report from run records.
    Eval {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Plot the threshold curves and per-category bars of a JSON report.
    Plot {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_category(s: &str) -> Result<Category, String> {
    s.parse().map_err(|e: hvtrack::Error| e.to_string())
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse().map_err(|e: hvtrack::Error| e.to_string())
}

fn parse_interval(s: &str) -> Result<usize, String> {
    let v: usize = s.parse().map_err(|_| format!("`{s}` is not an integer"))?;
    if INTERVALS.contains(&v) {
        Ok(v)
    } else {
        Err(format!("interval must be one of {INTERVALS:?}"))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::FAILURE
        }
    }
}

/// The error chain joined by `: `, skipping causes the previous message already ends with.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.ends_with(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::BuildHv { kitti_root, category, interval, split, out, keep_radius } => {
            let out = out.unwrap_or_else(|| {
                let name = format!("kitti-{category}-{split:?}-{interval}").to_lowercase();
                RunConfig::default().cache_dir().join(name)
            });
            build_hv_cmd(&kitti_root, category, interval, split, &out, keep_radius)
        }
        Command::Synth { config, out, count, seed } => {
            let mut cfg = RunConfig::load_or_default(config.as_deref())?;
            if let Some(c) = count {
                cfg.synth.count = c;
            }
            if let Some(s) = seed {
                cfg.synth.scene.seed = s;
            }
            let out = out.unwrap_or_else(|| cfg.cache_dir().join("synth"));
            let tracklets = generate_dataset(&cfg.synth.scene, cfg.synth.count)?;
            write_cache(&out, &tracklets, None)?;
            println!("tracklets: {}", tracklets.len());
            println!("frames: {}", frame_count(&tracklets));
            println!("out: {}", out.display());
            Ok(())
        }
        Command::Train { config, data, out, seed } => {
            let mut cfg = RunConfig::load_or_default(config.as_deref())?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            let data = data.or_else(|| cfg.paths.data.clone()).context("no --data given and no paths.data in the config")?;
            train_cmd(&cfg, &data, &out)
        }
        Command::Track { checkpoint, data, interval, k_test, report, seed, config } => {
            let cfg = RunConfig::load_or_default(config.as_deref())?;
            let opts = TrackOptions { k_test: k_test as usize, seed, ..cfg.track };
            track_cmd(&checkpoint, &data, interval, &opts, &report)
        }
        Command::Eval { runs, report } => {
            let records = read_runs(&runs)?;
            let r = evaluate(&records)?;
            write_report(&r, &report)?;
            print!("{}", render_report(&r));
            Ok(())
        }
        Command::Plot { report, out } => {
            let text = std::fs::read_to_string(&report).with_context(|| format!("reading {}", report.display()))?;
            let r: OpeReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", report.display()))?;
            plot_all(&r, &out)
        }
    }
}

fn frame_count(tracklets: &[Tracklet]) -> usize {
    tracklets.iter().map(Tracklet::len).sum()
}

fn build_hv_cmd(root: &Path, category: Category, interval: usize, split: Split, out: &Path, keep_radius: Option<f64>) -> Result<()> {
    let source = load_kitti_tracklets(root, category, split)?;
    let hv = build_hv(&source, interval)?;
    let (n_src, n_hv) = (frame_count(&source), frame_count(&hv));
    println!("source tracklets: {}", source.len());
    println!("source frames: {n_src}");
    println!("tracklets: {}", hv.len());
    println!("frames: {n_hv}");
    if n_src != n_hv {
        bail!("frame conservation failed: {n_src} source frames, {n_hv} after splitting");
    }
    println!("conservation: ok");
    write_cache(out, &hv, keep_radius)?;
    println!("out: {}", out.display());
    Ok(())
}

fn train_cmd(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let tracklets = read_cache(data)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut net = HvTrackNet::new(cfg.model.clone(), cfg.train.seed)?;
    log::info!("training on {} tracklets ({} frames)", tracklets.len(), frame_count(&tracklets));
    let logs = train(&mut net, &tracklets, &cfg.train, |_| {})?;
    write_loss_log(&out.join("loss.tsv"), &logs)?;
    checkpoint::save(&net, &out.join("model.ckpt"))?;
    let echo = out.join("config.toml");
    std::fs::write(&echo, cfg.to_toml_string()).with_context(|| format!("writing {}", echo.display()))?;
    if let (Some(first), Some(last)) = (logs.first(), logs.last()) {
        println!("steps: {}", logs.len());
        println!("initial loss: {:.4}", first.loss.total);
        println!("final loss: {:.4}", last.loss.total);
    }
    println!("checkpoint: {}", out.join("model.ckpt").display());
    Ok(())
}

/// Leaves tracklets already at `interval` alone and splits raw ones.
fn at_interval(tracklets: Vec<Tracklet>, interval: Option<usize>) -> Result<Vec<Tracklet>> {
    let Some(k) = interval else { return Ok(tracklets) };
    let mut out = Vec::new();
    for t in tracklets {
        if t.interval == k {
            out.push(t);
        } else if t.interval == 1 {
            out.extend(build_hv(std::slice::from_ref(&t), k)?);
        } else {
            bail!("tracklet {} was built at interval {}, cannot re-split at {k}", t.name, t.interval);
        }
    }
    Ok(out)
}

fn track_cmd(ckpt: &Path, data: &Path, interval: Option<usize>, opts: &TrackOptions, report: &Path) -> Result<()> {
    let net = checkpoint::load(ckpt, None)?;
    let tracklets = at_interval(read_cache(data)?, interval)?;
    let runs = run_tracklets(&net, &tracklets, opts)?;
    std::fs::create_dir_all(report).with_context(|| format!("creating {}", report.display()))?;
    write_runs(&report.join("runs.txt"), &runs)?;
    let r = evaluate(&runs)?;
    write_report(&r, report)?;
    plot_all(&r, report)?;
    print!("{}", render_report(&r));
    Ok(())
}

/// Writes `report.txt` and `report.json` into `dir`.
fn write_report(r: &OpeReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let txt = dir.join("report.txt");
    std::fs::write(&txt, render_report(r)).with_context(|| format!("writing {}", txt.display()))?;
    let json = dir.join("report.json");
    std::fs::write(&json, serde_json::to_string_pretty(r)?).with_context(|| format!("writing {}", json.display()))?;
    Ok(())
}

fn plot_all(r: &OpeReport, dir: &Path) -> Result<()> {
    plot_curves(r, dir)?;
    plot_category_bars(r, dir)?;
    Ok(())
}
