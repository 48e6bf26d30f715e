use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use dbdn::data::{prepare_dataset, DatasetIndex, ImageRgb, PatchSampler, MANIFEST_NAME};
use dbdn::metrics::{evaluate, evaluate_bicubic, EvalOptions, EvalReport};
use dbdn::train::{run_training, RunOutput, TrainSchedule, Trainer, FINAL_CHECKPOINT};
use dbdn::{checkpoint, gradcheck, ModelConfig, Network, Variant};
use log::info;

use crate::settings::{usage, Resolver};
use crate::{CountArgs, EvalArgs, GradCheckArgs, ModelArgs, PrepareArgs, SrArgs, TrainArgs};

pub const CONFIG_ECHO: &str = "config.txt";

const MODEL_KEYS: [&str; 7] = ["variant", "scale", "blocks", "layers", "nr", "ng", "l0_every_block"];

const TRAIN_KEYS: &[&str] = &[
    "variant", "scale", "blocks", "layers", "nr", "ng", "l0_every_block", "data", "out", "steps", "batch", "patch",
    "lr", "halve_every", "checkpoint_every", "seed", "deterministic", "resume",
];
const COUNT_KEYS: &[&str] = &MODEL_KEYS;
const EVAL_KEYS: &[&str] =
    &["checkpoint", "baseline", "data", "scale", "out", "triptych", "workers", "deterministic"];
const SR_KEYS: &[&str] = &["checkpoint", "input", "output"];
const GRAD_KEYS: &[&str] = &["op", "seed"];
const PREPARE_KEYS: &[&str] = &["hr_dir", "out", "scales"];

fn resolve_model(r: &mut Resolver, m: &ModelArgs) -> Result<ModelConfig> {
    let variant = r.get("variant", m.variant, Variant::Dbdn)?;
    let wo_comp = variant == Variant::WoComp;
    let scale = r.get("scale", m.scale, 2)?;
    let blocks = r.get("blocks", m.blocks, if wo_comp { 1 } else { 16 })?;
    let layers = r.get("layers", m.layers, if wo_comp { 128 } else { 8 })?;
    let n_r = r.get("nr", m.nr, 64)?;
    let n_g = r.get("ng", m.ng, if wo_comp { 16 } else { n_r })?;
    let l0_in_every_block = r.get("l0_every_block", m.l0_every_block, false)?;
    let cfg = ModelConfig { variant, blocks, layers, n_r, n_g, scale, l0_in_every_block };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn echo_config(r: &Resolver, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join(CONFIG_ECHO), r.echo())?;
    Ok(())
}

fn print_echo(r: &Resolver) {
    for line in r.echo().lines() {
        println!("# {line}");
    }
}

/// Uses `data/index.txt` when present, otherwise prepares `data` as a raw HR
/// directory into `work`.
fn load_or_prepare(data: &Path, scales: &[usize], work: &Path) -> Result<DatasetIndex> {
    let manifest = data.join(MANIFEST_NAME);
    if manifest.is_file() {
        return DatasetIndex::load(&manifest).with_context(|| format!("reading {}", manifest.display()));
    }
    if !data.is_dir() {
        bail!("data directory {} does not exist", data.display());
    }
    info!("no {MANIFEST_NAME} in {}, preparing into {}", data.display(), work.display());
    Ok(prepare_dataset(data, scales, work)?)
}

pub fn train(a: TrainArgs) -> Result<ExitCode> {
    let mut r = Resolver::new("train", a.config.as_deref(), TRAIN_KEYS)?;
    let resume = r.optional::<String>("resume", a.resume)?;
    let model_given = a.model.variant.is_some()
        || a.model.scale.is_some()
        || a.model.blocks.is_some()
        || a.model.layers.is_some()
        || a.model.nr.is_some()
        || a.model.ng.is_some()
        || a.model.l0_every_block.is_some();
    let cfg = resolve_model(&mut r, &a.model)?;
    let data = PathBuf::from(r.required::<String>("data", a.data)?);
    let out = PathBuf::from(r.required::<String>("out", a.out)?);
    let d = TrainSchedule::default();
    let schedule = TrainSchedule {
        total: r.get("steps", a.steps, d.total)?,
        batch: r.get("batch", a.batch, d.batch)?,
        patch: r.get("patch", a.patch, d.patch)?,
        lr0: r.get("lr", a.lr, d.lr0)?,
        halve_every: r.get("halve_every", a.halve_every, d.halve_every)?,
    };
    schedule.validate().map_err(|e| usage(e.to_string()))?;
    let checkpoint_every = r.get("checkpoint_every", a.checkpoint_every, 1000)?;
    let seed = r.get("seed", a.seed, 0)?;
    // Training always runs single-threaded; the flag is recorded for replay.
    r.get("deterministic", a.deterministic, true)?;

    let mut trainer = match &resume {
        Some(path) => {
            let t = Trainer::resume(Path::new(path), schedule, seed)?;
            if t.net.config() != &cfg && model_given {
                bail!("checkpoint {path} holds {:?}, flags ask for {:?}", t.net.config(), cfg);
            }
            t
        }
        None => Trainer::new(cfg, schedule, seed)?,
    };
    let cfg = *trainer.net.config();
    if resume.is_some() && !model_given {
        // Model settings come from the checkpoint; re-resolve them for the echo.
        let m = ModelArgs {
            variant: Some(cfg.variant),
            scale: Some(cfg.scale),
            blocks: Some(cfg.blocks),
            layers: Some(cfg.layers),
            nr: Some(cfg.n_r),
            ng: Some(cfg.n_g),
            l0_every_block: Some(cfg.l0_in_every_block),
        };
        let mut fresh = Resolver::new("train", a.config.as_deref(), TRAIN_KEYS)?;
        fresh.optional("resume", resume.clone())?;
        resolve_model(&mut fresh, &m)?;
        for (k, v) in r.echo().lines().filter_map(|l| l.split_once('=')) {
            if !MODEL_KEYS.contains(&k) && k != "command" && k != "resume" {
                fresh.optional(k, Some(v.to_string()))?;
            }
        }
        r = fresh;
    }
    echo_config(&r, &out)?;

    let index = load_or_prepare(&data, &[cfg.scale], &out.join("prepared"))?;
    let sampler = PatchSampler::new(&index, cfg.scale, schedule.patch)?;
    info!(
        "training {} x{} ({} params) on {} images, {} steps from step {}",
        cfg.variant,
        cfg.scale,
        trainer.net.count_params(),
        sampler.len(),
        schedule.total,
        trainer.step
    );
    let records = run_training(&mut trainer, &sampler, &RunOutput { dir: out.clone(), checkpoint_every })?;
    match records.last() {
        Some(last) => {
            println!("step {} loss {}", last.step, last.loss);
            println!("checkpoint {}", out.join(FINAL_CHECKPOINT).display());
        }
        None => println!("no steps run"),
    }
    Ok(ExitCode::SUCCESS)
}

fn print_report(report: &EvalReport) {
    println!("image,psnr,ssim");
    print!("{}", report.to_csv().split_once('\n').map_or("", |(_, rest)| rest));
    for (name, why) in &report.skipped {
        println!("# skipped {name}: {why}");
    }
    println!("{}", report.summary());
}

pub fn eval(a: EvalArgs) -> Result<ExitCode> {
    let mut r = Resolver::new("eval", a.config.as_deref(), EVAL_KEYS)?;
    let ckpt = r.optional::<String>("checkpoint", a.checkpoint)?;
    let baseline = r.optional::<String>("baseline", a.baseline)?;
    let net = match (&ckpt, &baseline) {
        (Some(p), None) => Some(checkpoint::load(p)?),
        (None, Some(b)) if b == "bicubic" => None,
        (None, Some(b)) => return Err(usage(format!("unknown baseline '{b}'"))),
        (Some(_), Some(_)) => return Err(usage("--checkpoint and --baseline are exclusive")),
        (None, None) => return Err(usage("give --checkpoint or --baseline bicubic")),
    };
    let default_scale = net.as_ref().map_or(2, |n| n.config().scale);
    let scale = r.get("scale", a.scale, default_scale)?;
    if let Some(n) = &net {
        if n.config().scale != scale {
            bail!("checkpoint upscales x{} but --scale is {scale}", n.config().scale);
        }
    } else if !(2..=4).contains(&scale) {
        return Err(usage(format!("scale must be 2, 3 or 4, got {scale}")));
    }
    let data = PathBuf::from(r.required::<String>("data", a.data)?);
    let out = r.optional::<String>("out", a.out)?.map(PathBuf::from);
    let triptych = r.get("triptych", a.triptych, false)?;
    let deterministic = r.get("deterministic", a.deterministic, false)?;
    let workers = r.get("workers", a.workers, 1)?;
    if triptych && out.is_none() {
        return Err(usage("--triptych needs --out"));
    }

    let scratch;
    let work = match &out {
        Some(o) => {
            echo_config(&r, o)?;
            o.join(format!("prepared-x{scale}"))
        }
        None => {
            print_echo(&r);
            scratch = tempfile::tempdir()?;
            scratch.path().to_path_buf()
        }
    };
    let index = load_or_prepare(&data, &[scale], &work)?;
    let opts = EvalOptions {
        triptych_dir: out.as_ref().filter(|_| triptych).map(|o| o.join("triptych")),
        workers: if deterministic { 1 } else { workers },
    };
    let report = match &net {
        Some(n) => evaluate(n, &index, scale, &opts)?,
        None => evaluate_bicubic(&index, scale, &opts)?,
    };
    if report.per_image.is_empty() {
        bail!("no images with an x{scale} cache in {}", data.display());
    }
    if let Some(o) = &out {
        report.write(o.join("report.csv"))?;
    }
    print_report(&report);
    Ok(ExitCode::SUCCESS)
}

pub fn sr(a: SrArgs) -> Result<ExitCode> {
    let mut r = Resolver::new("sr", a.config.as_deref(), SR_KEYS)?;
    let ckpt = r.required::<String>("checkpoint", a.checkpoint)?;
    let input = r.required::<String>("input", a.input)?;
    let output = r.required::<String>("output", a.output)?;
    print_echo(&r);
    let net: Network = checkpoint::load(&ckpt)?;
    let img = ImageRgb::load(&input)?;
    let out = net.forward(&img.to_tensor())?;
    let sr = ImageRgb::from_tensor(&out, 0)?;
    sr.save_png(&output)?;
    println!("{}x{} -> {}x{} {}", img.height(), img.width(), sr.height(), sr.width(), output);
    Ok(ExitCode::SUCCESS)
}

pub fn count_params(a: CountArgs) -> Result<ExitCode> {
    let mut r = Resolver::new("count-params", a.config.as_deref(), COUNT_KEYS)?;
    let cfg = resolve_model(&mut r, &a.model)?;
    print_echo(&r);
    let net = Network::build(cfg, 0)?;
    let b = net.param_breakdown();
    println!("extraction {}", b.extraction);
    for (i, n) in b.blocks.iter().enumerate() {
        println!("block {} {n}", i + 1);
    }
    println!("global_compression {}", b.global_compression);
    println!("upsampler {}", b.upsampler);
    println!("reconstruction {}", b.reconstruction);
    println!("total {}", b.total());
    Ok(ExitCode::SUCCESS)
}

pub fn grad_check(a: GradCheckArgs) -> Result<ExitCode> {
    let mut r = Resolver::new("grad-check", a.config.as_deref(), GRAD_KEYS)?;
    let op = r.optional::<String>("op", a.op)?;
    let seed = r.get("seed", a.seed, 0)?;
    print_echo(&r);
    if let Some(op) = &op {
        if !gradcheck::CHECKS.contains(&op.as_str()) {
            return Err(usage(format!("unknown op '{op}', expected one of {}", gradcheck::CHECKS.join(", "))));
        }
    }
    let reports = gradcheck::run_checks(op.as_deref(), seed, None)?;
    let mut failed = 0;
    for rep in &reports {
        let status = if rep.passed() { "ok" } else { "FAIL" };
        println!("{:<18} max_rel_err {:.3e} over {:>5} elements  {status}", rep.name, rep.max_rel_error, rep.checked);
        failed += usize::from(!rep.passed());
    }
    if failed > 0 {
        eprintln!("{failed} gradient check(s) above {:e}", gradcheck::TOLERANCE);
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

pub fn prepare_data(a: PrepareArgs) -> Result<ExitCode> {
    let mut r = Resolver::new("prepare-data", a.config.as_deref(), PREPARE_KEYS)?;
    let hr_dir = PathBuf::from(r.required::<String>("hr_dir", a.hr_dir)?);
    let out = PathBuf::from(r.required::<String>("out", a.out)?);
    let scales_text = r.get("scales", a.scales, "2,3,4".to_string())?;
    let scales = scales_text
        .split(',')
        .map(|s| s.trim().parse::<usize>().ok().filter(|v| (2..=4).contains(v)))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| usage(format!("scales must be drawn from 2,3,4, got '{scales_text}'")))?;
    if !hr_dir.is_dir() {
        bail!("HR directory {} does not exist", hr_dir.display());
    }
    echo_config(&r, &out)?;
    let index = prepare_dataset(&hr_dir, &scales, &out)?;
    println!("{} images indexed, {} skipped -> {}", index.len(), index.skipped.len(), out.join(MANIFEST_NAME).display());
    Ok(ExitCode::SUCCESS)
}
