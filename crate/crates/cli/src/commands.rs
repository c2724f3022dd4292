use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use log::info;
use topogan::dataset::{
    augment_dataset, load_mnist_idx, postprocess, read_dataset, sweep_generate, synth_classes, write_dataset, AugmentParams,
    Condition, ConditionKind, Dataset, SweepGrid,
};
use topogan::eval::{conditional_eval, EvalRequest};
use topogan::fem::{run_simp, BoundaryConditions, MeshSpec, SimpParams};
use topogan::image::{montage, Grid};
use topogan::nets::grad_check_networks;
use topogan::train::{read_checkpoint, resume, sample, train, NetPlan, TrainConfig, TrainError, TrainState};

use crate::{
    AugmentArgs, Command, EvalArgs, GenArgs, GradcheckArgs, IdxImportArgs, SampleArgs, SweepArgs, SynthArgs, TrainArgs,
    UsageError,
};

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Gen(a) => gen(a),
        Command::Sweep(a) => sweep(a),
        Command::Synth(a) => synth(a),
        Command::Augment(a) => augment(a),
        Command::Train(a) => train_cmd(a),
        Command::Sample(a) => sample_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::IdxImport(a) => idx_import(a),
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn gen(a: GenArgs) -> Result<()> {
    let mesh = MeshSpec::new(a.nelx, a.nely).map_err(|e| usage(e.to_string()))?;
    let mut params = SimpParams::new(a.volfrac, a.penal, a.rmin).map_err(|e| usage(e.to_string()))?;
    params.max_iters = a.max_iters;
    params.validate().map_err(|e| usage(e.to_string()))?;
    let res = run_simp(&mesh, &params, &BoundaryConditions::cantilever(&mesh))?;
    let image = Grid::new(mesh.nelx, mesh.nely, res.density.values().to_vec());
    image.write_pgm(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    println!("compliance {:.6}", res.final_compliance());
    println!("iterations {}", res.iterations);
    println!("converged {}", res.converged);
    println!("volume_fraction {:.6}", image.mean());
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let mesh = MeshSpec::new(a.nelx, a.nely).map_err(|e| usage(e.to_string()))?;
    let grid = SweepGrid { volfracs: a.volfracs, penals: a.penals, rmins: a.rmins, mesh };
    grid.validate().map_err(|e| usage(e.to_string()))?;
    let ds = sweep_generate(&grid, &BoundaryConditions::cantilever(&mesh))?;
    write_dataset(&ds, &a.out)?;
    let unconverged = ds.samples().iter().filter(|s| !s.meta.converged).count();
    println!("wrote {} samples ({} unconverged) to {}", ds.len(), unconverged, a.out.display());
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let ds = synth_classes(a.classes, a.per_class, a.size, a.seed).map_err(|e| usage(e.to_string()))?;
    write_dataset(&ds, &a.out)?;
    println!("wrote {} samples to {}", ds.len(), a.out.display());
    Ok(())
}

fn augment(a: AugmentArgs) -> Result<()> {
    let ds = read_dataset(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    let params = AugmentParams { noise_count: a.noise_count, noise_amplitude: a.noise_amplitude, seed: a.seed };
    let out = augment_dataset(&ds, &params)?;
    write_dataset(&out, &a.out)?;
    println!("wrote {} samples to {}", out.len(), a.out.display());
    Ok(())
}

fn config_error(e: TrainError) -> anyhow::Error {
    match e {
        TrainError::Config(m) => usage(m),
        TrainError::Objective(e) => usage(e.to_string()),
        e => e.into(),
    }
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let ds = read_dataset(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    let overrides = a.overrides();
    let outcome = match &a.resume {
        Some(path) => {
            if a.plan.is_some() || overrides.iter().any(|(k, _)| *k != "steps") {
                return Err(usage("--resume keeps the checkpoint's settings; only --steps may be given"));
            }
            let steps = match overrides.first() {
                Some((_, v)) => Some(v.parse::<u64>().map_err(|_| usage(format!("bad value for steps: {v:?}")))?),
                None => None,
            };
            let ck = read_checkpoint(path).with_context(|| format!("reading {}", path.display()))?;
            resume(&ck, &ds, &a.out, steps)?
        }
        None => {
            let mut cfg = TrainConfig::default();
            match a.plan.as_deref() {
                None | Some("full") => {}
                Some("desk") => cfg.plan = NetPlan::desk(),
                Some(other) => return Err(usage(format!("unknown plan {other:?}; expected full or desk"))),
            }
            for (k, v) in overrides {
                cfg.set(k, v).map_err(config_error)?;
            }
            cfg.validate().map_err(config_error)?;
            info!("training {} for {} steps on {} samples", cfg.objective, cfg.steps, ds.len());
            train(cfg, &ds, &a.out)?
        }
    };
    let warnings = outcome.metrics.iter().filter(|m| m.collapse_warning).count();
    if let Some(last) = outcome.metrics.last() {
        println!(
            "step {} d_loss {:.4} g_loss {:.4} diversity {:.4}",
            last.step, last.d_loss, last.g_loss, last.diversity
        );
    }
    println!("collapse warnings {warnings}");
    println!("checkpoint {}", outcome.final_checkpoint.display());
    println!("metrics {}", outcome.metrics_path.display());
    Ok(())
}

/// Reads `text` as a class index or a continuous target, whichever the
/// model was trained on.
fn parse_condition(text: &str, kind: ConditionKind) -> Result<Condition> {
    match kind {
        ConditionKind::Class { cardinality } => {
            let index: u32 = text.trim().parse().map_err(|_| usage(format!("condition {text:?} is not a class index")))?;
            if index >= cardinality {
                return Err(usage(format!("class {index} out of range for a {cardinality}-class model")));
            }
            Ok(Condition::Class { index, cardinality })
        }
        ConditionKind::Continuous => {
            let v: f32 = text.trim().parse().map_err(|_| usage(format!("condition {text:?} is not a number")))?;
            Ok(Condition::Continuous(v))
        }
    }
}

fn load_model(path: &Path, condition: &str) -> Result<(topogan::train::Checkpoint, Condition)> {
    let ck = read_checkpoint(path).with_context(|| format!("reading {}", path.display()))?;
    let kind = TrainState::from_checkpoint(&ck)?.shape().kind;
    let cond = parse_condition(condition, kind)?;
    Ok((ck, cond))
}

fn sample_cmd(a: SampleArgs) -> Result<()> {
    if a.count == 0 {
        return Err(usage("--count must be at least 1"));
    }
    let (ck, cond) = load_model(&a.checkpoint, &a.condition)?;
    let mut images = sample(&ck, cond, a.count, a.seed)?;
    if a.postprocess {
        images = images.iter().map(postprocess).collect::<std::result::Result<_, _>>()?;
    }
    let cols = a.cols.unwrap_or_else(|| (a.count as f64).sqrt().ceil() as usize);
    let grid = montage(&images, cols).context("samples differ in size")?;
    grid.write_pgm(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    println!("wrote {} samples to {}", images.len(), a.out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    if !(a.tol >= 0.0) {
        return Err(usage(format!("--tol must be non-negative, got {}", a.tol)));
    }
    let (ck, condition) = load_model(&a.checkpoint, &a.condition)?;
    let req = EvalRequest { condition, count: a.count, tolerance: a.tol, seed: a.seed, compliance_penal: a.penal };
    let id = a.checkpoint.display().to_string();
    let report = conditional_eval(&ck, &id, &req)?;
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, &report)?;
    writeln!(out)?;
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let mut worst = 0.0f64;
    for (name, r) in grad_check_networks(a.seed)? {
        println!("{name:<24} checked {:>6} max_rel_err {:.3e}", r.checked, r.max_rel_err);
        worst = worst.max(r.max_rel_err);
    }
    if !(worst < a.tol) {
        bail!("max relative error {worst:.3e} is not below {:.1e}", a.tol);
    }
    Ok(())
}

fn idx_import(a: IdxImportArgs) -> Result<()> {
    let mut ds = load_mnist_idx(&a.images, &a.labels, a.downscale)?;
    if let Some(n) = a.limit {
        let picked: Vec<_> = ds.shuffled(a.seed).samples().iter().take(n).cloned().collect();
        ds = Dataset::from_samples(ds.width(), ds.height(), ds.kind(), picked)?;
    }
    write_dataset(&ds, &a.out)?;
    println!("wrote {} samples ({}x{}) to {}", ds.len(), ds.width(), ds.height(), a.out.display());
    Ok(())
}
