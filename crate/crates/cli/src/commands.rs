use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ctxsyn::codecs::{self, FlowField, Frame};
use ctxsyn::context::ContextExtractor;
use ctxsyn::evaluation::{evaluate, load_pairs, EvalOptions, Method};
use ctxsyn::flow::{estimate_flow, PyramidConfig};
use ctxsyn::losses::ConvStack;
use ctxsyn::synthesis::{interpolate, GridNetConfig, Model};
use ctxsyn::tensor::AdaMaxConfig;
use ctxsyn::training::{load_dataset, synthetic, DatasetOptions, LossKind, Progress, TrainConfig, TrainError, Trainer};

use crate::args::{Command, EvalArgs, FlowArgs, InterpolateArgs, TrainArgs};
use crate::manifest::{manifest_path, Manifest};
use crate::{InvalidData, Usage};

pub fn run(cmd: &Command) -> Result<()> {
    if let Command::Rerun(a) = cmd {
        let m = Manifest::read(&a.manifest)?;
        m.verify()?;
        return run(&m.command);
    }
    // Hash inputs before running so the manifest describes what was read.
    let manifest = Manifest::for_command(cmd)?;
    match cmd {
        Command::Interpolate(a) => cmd_interpolate(a)?,
        Command::Flow(a) => cmd_flow(a)?,
        Command::Train(a) => cmd_train(a)?,
        Command::Eval(a) => cmd_eval(a)?,
        Command::Rerun(_) => unreachable!(),
    }
    if let Some(p) = manifest_path(cmd) {
        manifest.write(&p)?;
    }
    Ok(())
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.{suffix}"))
}

fn load_or_estimate(path: Option<&PathBuf>, a: &Frame, b: &Frame) -> Result<FlowField> {
    match path {
        Some(p) => Ok(codecs::load_flo(p)?),
        None => Ok(estimate_flow(a, b, &PyramidConfig::fitted(a.width(), a.height()))?),
    }
}

fn check_t(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        bail!(Usage(format!("--t must be in [0, 1], got {t}")));
    }
    Ok(())
}

fn cmd_interpolate(a: &InterpolateArgs) -> Result<()> {
    check_t(a.t)?;
    let i1 = codecs::load_image(&a.first)?;
    let i2 = codecs::load_image(&a.second)?;
    if !i1.same_dims(&i2) {
        bail!(InvalidData(format!(
            "frames differ in size: {}x{} vs {}x{}",
            i1.width(),
            i1.height(),
            i2.width(),
            i2.height()
        )));
    }
    let model = Model::load(&a.weights).with_context(|| format!("loading weights {}", a.weights.display()))?;
    let f12 = load_or_estimate(a.flow_fwd.as_ref(), &i1, &i2)?;
    let f21 = load_or_estimate(a.flow_bwd.as_ref(), &i2, &i1)?;
    let out = interpolate(&i1, &i2, &f12, &f21, a.t, a.tau, &model, a.zero_context)?;
    codecs::save_image(&a.out, &out.frame)?;
    if a.emit_warped {
        let (b1, b2) = &out.bundles;
        codecs::save_image(&sibling(&a.out, "warp1.ppm"), &b1.image)?;
        codecs::save_image(&sibling(&a.out, "warp2.ppm"), &b2.image)?;
        codecs::save_image(&sibling(&a.out, "weight1.ppm"), &b1.weight_image())?;
        codecs::save_image(&sibling(&a.out, "weight2.ppm"), &b2.weight_image())?;
    }
    Ok(())
}

fn cmd_flow(a: &FlowArgs) -> Result<()> {
    let i1 = codecs::load_image(&a.first)?;
    let i2 = codecs::load_image(&a.second)?;
    if !i1.same_dims(&i2) {
        bail!(InvalidData("frames differ in size".into()));
    }
    let mut cfg = PyramidConfig::fitted(i1.width(), i1.height());
    if let Some(l) = a.levels {
        cfg.levels = l;
    }
    codecs::save_flo(&a.out_fwd, &estimate_flow(&i1, &i2, &cfg)?)?;
    codecs::save_flo(&a.out_bwd, &estimate_flow(&i2, &i1, &cfg)?)?;
    Ok(())
}

fn train_config(a: &TrainArgs, loss: LossKind) -> TrainConfig {
    TrainConfig {
        loss,
        optimizer: AdaMaxConfig { lr: a.lr, ..AdaMaxConfig::default() },
        batch: a.batch,
        epochs: a.epochs,
        crop: a.crop,
        seed: a.seed,
        tau: a.tau,
        max_iterations: a.max_iterations,
        refine_after: if a.init.is_some() { Some(0) } else { None },
        augment: !a.no_augment,
    }
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let loss: LossKind = a.loss.parse().map_err(Usage)?;
    let data = match (&a.data, a.synthetic) {
        (_, Some(n)) => synthetic::triplets(&synthetic::SceneConfig::default(), n, a.seed)?,
        (Some(root), None) => load_dataset(
            root,
            &DatasetOptions { select: a.select, cache_flow: a.cache_flow, ..DatasetOptions::default() },
        )?,
        (None, None) => bail!(Usage("either --data or --synthetic is required".into())),
    };
    if data.is_empty() {
        bail!(TrainError::EmptyDataset);
    }
    let cfg = train_config(a, loss);
    let mut trainer = if let Some(ckpt) = &a.resume {
        Trainer::load(ckpt, cfg)?
    } else {
        let mut model = match &a.init {
            Some(p) => Model::load(p)?,
            None => Model::new(GridNetConfig { channels: a.channels.clone(), ..GridNetConfig::default() }, a.seed)?,
        };
        if let Some(p) = &a.context_weights {
            model.context = ContextExtractor::load(&codecs::load_container(p)?)?;
        }
        Trainer::new(model, cfg)?
    };
    if let Some(p) = &a.feature_weights {
        trainer.set_feature_net(ConvStack::load(&codecs::load_container(p)?)?);
    }

    let log_path = sibling(&a.out, "csv");
    let mut log = OpenOptions::new()
        .create(true)
        .write(true)
        .append(a.resume.is_some())
        .truncate(a.resume.is_none())
        .open(&log_path)
        .with_context(|| format!("opening {}", log_path.display()))?;
    if a.resume.is_none() {
        writeln!(log, "{}", Progress::CSV_HEADER)?;
    }
    let every = a.checkpoint_every;
    let result = trainer.run(&data, |t, p| {
        writeln!(log, "{}", p.csv_row()).map_err(|source| TrainError::Io { path: log_path.clone(), source })?;
        if every.is_some_and(|n| n > 0 && p.iteration % n == 0) {
            t.save(&a.out)?;
        }
        Ok(())
    });
    // On a non-finite loss the trainer still holds the last good state.
    trainer.save(&a.out)?;
    let outcome = result?;
    if let Some(last) = outcome.log.last() {
        log::info!("finished at iteration {} with loss {}", last.iteration, last.loss);
    }
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    check_t(a.t)?;
    let model = Model::load(&a.weights).with_context(|| format!("loading weights {}", a.weights.display()))?;
    let pairs = load_pairs(&a.pairs)?;
    if pairs.is_empty() {
        bail!(InvalidData(format!("{} holds no examples", a.pairs.display())));
    }
    let opts = EvalOptions { t: a.t, tau: a.tau, baselines: a.with_baselines, zero_context: a.zero_context };
    let report = evaluate(&pairs, Some(&model), &opts)?;
    if report.rows.iter().all(|r| r.method != Method::Model) {
        bail!(InvalidData("no example has a ground-truth frame".into()));
    }
    std::fs::write(&a.out_csv, report.to_csv()).with_context(|| format!("writing {}", a.out_csv.display()))?;
    print!("{}", report.to_table());
    Ok(())
}
