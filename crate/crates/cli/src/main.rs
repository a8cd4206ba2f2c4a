//! `eraki`: phantom generation, sampling, map estimation, reconstruction,
//! metrics, relaxometry fitting and benchmarking as subcommands.

mod io;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use eraki_core::bench::run_bench;
use eraki_core::bundle::load_bundle;
use eraki_core::metrics::{nrmse_masked, psnr};
use eraki_core::phantom::{echoes_as_time, make_phantom};
use eraki_core::pipeline::{margin_mask, run_method, Method};
use eraki_core::quantmap::fit_decay;
use eraki_core::recon::ReconProblem;
use eraki_core::sampling::PatternKind;
use eraki_core::{Axis, CTensor, Error, ErrorKind, Result};
use serde_json::{json, Map};

use crate::io::*;

#[derive(Parser)]
#[command(name = "eraki", version, about = "Scan-specific k-space reconstruction toolkit")]
struct Cli {
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, env = "ERAKI_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's top-level seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides one config field, e.g. `--set train.iterations=200`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl ConfigArgs {
    fn load(&self, require_seed: bool) -> Result<eraki_core::config::RunConfig> {
        load_config(self.config.as_deref(), self.seed, &self.sets, require_seed)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Synthesizes multi-coil k-space with known maps and relaxation times.
    Phantom {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Builds the sampling mask(s) for the configured grid.
    Mask {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimates ESPIRiT maps from the ACS region of a k-space bundle.
    Maps {
        /// K-space bundle (or a phantom directory).
        #[arg(long)]
        acs: PathBuf,
        /// Mask directory or bundle locating the ACS.
        #[arg(long)]
        mask: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstructs undersampled k-space.
    Recon {
        #[arg(long, value_parser = parse_method)]
        method: Method,
        /// Fully sampled or undersampled k-space; the mask is applied either way.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        /// Precomputed maps; estimated from the ACS when absent.
        #[arg(long)]
        maps: Option<PathBuf>,
        /// Reference image bundle for NRMSE/PSNR in the report.
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
        /// Overrides `train.iterations`.
        #[arg(long)]
        iterations: Option<usize>,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Prints NRMSE and PSNR of a reconstruction against a reference.
    Metrics {
        /// Image bundle (or a recon directory).
        #[arg(long)]
        recon: PathBuf,
        /// Reference image bundle.
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Voxels this close to a grid edge are left out of the NRMSE.
        #[arg(long, default_value_t = 2)]
        margin: usize,
    },
    /// Fits T2 / T2* maps to a multi-echo image stack.
    Fit {
        /// Image bundle with an `echo` axis (or a recon directory).
        #[arg(long)]
        echoes: PathBuf,
        /// Echo times in ms, comma separated.
        #[arg(long, value_delimiter = ',')]
        te: Option<Vec<f64>>,
        /// Overrides `fit.threshold_fraction`.
        #[arg(long)]
        threshold_fraction: Option<f64>,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Times the configured methods on one scenario.
    Bench {
        /// Scenario config (a run configuration).
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        /// Print the text table as well.
        #[arg(long)]
        table: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse::<Method>().map_err(|e| e.to_string())
}

fn step(msg: impl AsRef<str>) {
    eprintln!("[eraki] {}", msg.as_ref());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numerical => 4,
            })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Phantom { cfg, out } => phantom(&cfg, &out),
        Command::Mask { cfg, out } => mask(&cfg, &out),
        Command::Maps { acs, mask, cfg, out } => maps(&acs, &mask, &cfg, &out),
        Command::Recon { method, data, mask, maps, reference, iterations, mut cfg, out } => {
            if let Some(n) = iterations {
                cfg.sets.push(format!("train.iterations={n}"));
            }
            recon(method, &data, &mask, maps.as_deref(), reference.as_deref(), &cfg, &out)
        }
        Command::Metrics { recon, reference, margin } => {
            let m = metrics(&recon, &reference, margin)?;
            println!("{}", serde_json::to_string_pretty(&m)?);
            Ok(())
        }
        Command::Fit { echoes, te, threshold_fraction, mut cfg, out } => {
            if let Some(f) = threshold_fraction {
                cfg.sets.push(format!("fit.threshold_fraction={f}"));
            }
            fit(&echoes, te, &cfg, &out)
        }
        Command::Bench { scenario, seed, sets, table, out } => bench(&scenario, seed, &sets, table, &out),
    }
}

fn phantom(args: &ConfigArgs, out: &Path) -> Result<()> {
    let cfg = args.load(true)?;
    step(format!("phantom {:?}, {} coils, {} echoes", cfg.phantom.extents, cfg.phantom.coils, cfg.phantom.te_ms.len()));
    let ph = make_phantom(&cfg.phantom)?;
    ensure_dir(out)?;
    let mut meta = Map::new();
    meta.insert("te_ms".into(), json!(cfg.phantom.te_ms));
    meta.insert("echo_type".into(), serde_json::to_value(cfg.phantom.echo_type)?);
    save(&ph.kspace, out, "kspace", meta.clone())?;
    save(&ph.images, out, "images", meta.clone())?;
    save(&ph.reference, out, "reference", meta)?;
    save(&ph.sens_true, out, "sens_true", Map::new())?;
    save(&ph.t2_true, out, "t2_true", Map::new())?;
    save(&ph.t2star_true, out, "t2star_true", Map::new())?;
    let support = real_mask(ph.t2_true.axes(), ph.t2_true.shape(), &ph.support)?;
    save(&support, out, "support", Map::new())?;
    write_manifest(out, "phantom", Some(&cfg), &[])
}

fn mask(args: &ConfigArgs, out: &Path) -> Result<()> {
    let cfg = args.load(true)?;
    let [_, ny, nz] = cfg.phantom.extents;
    let ne = cfg.phantom.te_ms.len();
    let extents = if cfg.mask.kind == PatternKind::Kyt { [ny, ne] } else { [ny, nz] };
    let masks = cfg.mask.build(extents, ne)?;
    step(format!("{} mask(s) over {extents:?}", masks.len()));
    ensure_dir(out)?;
    let names = save_masks(out, &masks)?;
    let m = &masks[0];
    let desc = json!({
        "masks": names,
        "kind": cfg.mask.kind,
        "axes": m.axes,
        "extents": m.extents,
        "pattern": m.pattern,
        "acs": m.acs,
        "sampled": masks.iter().map(|m| m.sampled_count()).collect::<Vec<_>>(),
        "nominal_acceleration": m.nominal_acceleration(),
        "effective_acceleration": m.effective_acceleration(),
        "elliptical_factor": m.elliptical_factor(),
    });
    write_json(&out.join(MASK_DESCRIPTOR), &desc)?;
    write_manifest(out, "mask", Some(&cfg), &[])
}

fn maps(acs: &Path, mask: &Path, args: &ConfigArgs, out: &Path) -> Result<()> {
    let cfg = args.load(false)?;
    let masks = load_masks(mask)?;
    let data = load_kspace(acs, &masks)?;
    let mut problem = ReconProblem::new(&data, masks, cfg.train.clone())?;
    problem.espirit = cfg.espirit;
    step("estimating maps");
    let start = Instant::now();
    let m = problem.full_maps()?;
    step(format!("maps in {:.2}s", start.elapsed().as_secs_f64()));
    ensure_dir(out)?;
    let mut meta = Map::new();
    meta.insert("espirit".into(), serde_json::to_value(cfg.espirit)?);
    save(&m.maps, out, "maps", meta.clone())?;
    save(&m.eigval, out, "eigval", meta)?;
    let inputs = [("acs", hash_bundle(&resolve(acs, "kspace"))?), ("mask", hash_masks(mask)?)];
    write_manifest(out, "maps", Some(&cfg), &inputs)
}

#[allow(clippy::too_many_arguments)]
fn recon(
    method: Method,
    data: &Path,
    mask: &Path,
    maps_dir: Option<&Path>,
    reference: Option<&Path>,
    args: &ConfigArgs,
    out: &Path,
) -> Result<()> {
    let cfg = args.load(true)?;
    let masks = load_masks(mask)?;
    let kspace = load_kspace(data, &masks)?;
    let mut problem = ReconProblem::new(&kspace, masks, cfg.train.clone())?;
    problem.espirit = cfg.espirit;
    problem.target_maps = cfg.recon.target_maps;
    let mut inputs = vec![("data", hash_bundle(&resolve(data, "kspace"))?), ("mask", hash_masks(mask)?)];
    let start = Instant::now();
    problem.maps = Some(match maps_dir {
        Some(dir) => {
            inputs.push(("maps", hash_bundle(&resolve(dir, "maps"))?));
            load_maps(dir, cfg.espirit)?
        }
        None => problem.full_maps()?,
    });
    let maps_seconds = start.elapsed().as_secs_f64();
    step(format!("{method}: {} coils, {} echoes", problem.coils(), problem.echoes.len()));
    let run = run_method(&problem, method, &cfg.recon)?;
    step(format!("{method}: learning {:.2}s, inference {:.2}s", run.total_learn_seconds(), run.infer_seconds));

    ensure_dir(out)?;
    let mut meta = Map::new();
    meta.insert("method".into(), json!(method.as_str()));
    let images = run.image_stack()?;
    save(&CTensor::stack(&run.kspace, Axis::Echo, 0)?, out, "kspace", meta.clone())?;
    save(&images, out, "images", meta)?;
    write_json(&out.join("models.json"), &serde_json::to_value(&run.models)?)?;

    let mut report = json!({
        "method": method.as_str(),
        "seed": cfg.seed,
        "config_hash": cfg.hash(),
        "coils": problem.coils(),
        "echoes": problem.echoes.len(),
        "model_count": run.models.len(),
        "parameters": run.models.iter().map(|m| m.param_count()).sum::<usize>(),
        "iterations": if run.models.is_empty() { 0 } else { cfg.train.iterations },
        "final_loss": run.loss_histories.iter().map(|h| h.last().copied()).collect::<Vec<_>>(),
        "loss_histories": run.loss_histories,
        "maps_seconds": maps_seconds,
        "learn_seconds": run.total_learn_seconds(),
        "model_learn_seconds": run.learn_seconds,
        "infer_seconds": run.infer_seconds,
    });
    if let Some(r) = reference {
        let m = compare(&images, &load_bundle(r)?.0, cfg.recon.metric_margin)?;
        report["nrmse"] = m["nrmse"].clone();
        report["psnr_db"] = m["psnr_db"].clone();
        inputs.push(("reference", hash_bundle(r)?));
        step(format!("{method}: nrmse {:.4}", m["nrmse"].as_f64().unwrap_or(f64::NAN)));
    }
    write_json(&out.join("report.json"), &report)?;
    write_manifest(out, &format!("recon {method}"), Some(&cfg), &inputs)
}

/// Drops a singleton echo axis.
fn squeeze_echo(x: CTensor) -> Result<CTensor> {
    if x.has_axis(Axis::Echo) && x.extent(Axis::Echo)? == 1 {
        return x.select(Axis::Echo, 0);
    }
    Ok(x)
}

/// Brings `reference` onto the axes of `images` (echoes become time points
/// for ky–t reconstructions) and compares magnitudes.
fn compare(images: &CTensor, reference: &CTensor, margin: usize) -> Result<serde_json::Value> {
    let mut r = reference.clone();
    if images.has_axis(Axis::T) && !r.has_axis(Axis::T) && r.has_axis(Axis::Echo) {
        r = echoes_as_time(&r)?;
    }
    let x = squeeze_echo(images.clone())?;
    let r = squeeze_echo(r)?;
    let r = r.permute(x.axes()).map_err(|_| {
        Error::Shape(format!("reference axes {:?} do not match reconstruction axes {:?}", r.axes(), x.axes()))
    })?;
    Ok(json!({
        "nrmse": nrmse_masked(&x, &r, Some(&margin_mask(&r, margin)))?,
        "nrmse_full": nrmse_masked(&x, &r, None)?,
        "psnr_db": psnr(&x, &r)?,
        "margin": margin,
    }))
}

fn metrics(recon: &Path, reference: &Path, margin: usize) -> Result<serde_json::Value> {
    let (x, _) = load_bundle(resolve(recon, "images"))?;
    let (r, _) = load_bundle(reference)?;
    compare(&x, &r, margin)
}

fn fit(echoes: &Path, te: Option<Vec<f64>>, args: &ConfigArgs, out: &Path) -> Result<()> {
    let cfg = args.load(false)?;
    let stem = resolve(echoes, "images");
    let (images, meta) = load_bundle(&stem)?;
    let stored: Option<Vec<f64>> = meta.get("te_ms").and_then(|v| serde_json::from_value(v.clone()).ok());
    let te = te
        .or_else(|| cfg.fit.te_ms.clone())
        .or(stored)
        .ok_or_else(|| Error::Config("echo times missing: pass --te or set fit.te_ms".into()))?;
    let first = te.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap_or(0);
    let peak = if images.has_axis(Axis::Echo) && first < images.extent(Axis::Echo)? {
        images.select(Axis::Echo, first)?.max_abs()
    } else {
        images.max_abs()
    };
    let threshold = cfg.fit.threshold_fraction * peak;
    step(format!("fitting {} echoes, threshold {threshold:.3e}", te.len()));
    let res = fit_decay(&images, &te, threshold)?;
    ensure_dir(out)?;
    let mut meta = Map::new();
    meta.insert("te_ms".into(), json!(te));
    meta.insert("unit".into(), json!("ms"));
    save(&res.t_map, out, "t_map", meta)?;
    save(&res.s0_map, out, "s0_map", Map::new())?;
    save(&res.r2_map, out, "r2_map", Map::new())?;
    save(&real_mask(res.t_map.axes(), res.t_map.shape(), &res.valid)?, out, "valid", Map::new())?;
    let summary = json!({
        "te_ms": te,
        "threshold": threshold,
        "voxels": res.valid.len(),
        "valid_voxels": res.valid.iter().filter(|v| **v).count(),
    });
    write_json(&out.join("fit.json"), &summary)?;
    write_manifest(out, "fit", Some(&cfg), &[("echoes", hash_bundle(&stem)?)])
}

fn bench(scenario: &Path, seed: Option<u64>, sets: &[String], table: bool, out: &Path) -> Result<()> {
    let cfg = load_config(Some(scenario), seed, sets, true)?;
    step(format!("bench: {}", cfg.bench.methods.join(", ")));
    let report = run_bench(&cfg)?;
    ensure_dir(out)?;
    write_json(&out.join("report.json"), &serde_json::to_value(&report)?)?;
    let text = report.to_table();
    std::fs::write(out.join("table.txt"), &text)?;
    if table {
        print!("{text}");
    }
    write_manifest(out, "bench", Some(&cfg), &[("scenario", hash_file(scenario)?)])
}
