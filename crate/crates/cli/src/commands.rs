use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use pdzseg_core::config::{ExperimentConfig, Preset};
use pdzseg_core::contour::extract_contours;
use pdzseg_core::corrupt::{corrupt, CorruptionSpec};
use pdzseg_core::data::{load_native_pair, parse_manifest, DatasetManifest, SampleRecord};
use pdzseg_core::eval::{run_eval, EvalOptions};
use pdzseg_core::model::{load_checkpoint, read_checkpoint_config, ModelConfig};
use pdzseg_core::pipeline::SampleCache;
use pdzseg_core::prompt::{gen_prompt, render_prompt_overlay};
use pdzseg_core::service::{segment_native, serve, ModelEntry, ServiceState};
use pdzseg_core::synthetic::{write_dataset, SyntheticSpec};
use pdzseg_core::train::{build_mixed_dataset, realized_counts, run_training, MixRegime, MixSpec};
use pdzseg_core::{Error, ImageTensor, MetricsReport, PromptKind, VisualPrompt};
use serde_json::{json, Value};

use crate::args::{
    ConfigArgs, CorruptArgs, EvalArgs, GenPromptsArgs, PredictArgs, PresetArg, RegimeArg, ServeArgs, SynthArgs,
    TrainArgs,
};

/// Loads the config file or preset and applies `overrides`.
fn resolve(common: &ConfigArgs, overrides: impl FnOnce(&mut ExperimentConfig) -> Result<()>) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::preset(match common.preset {
            PresetArg::Full => Preset::Full,
            PresetArg::Desk => Preset::Desk,
        }),
    };
    overrides(&mut cfg)?;
    cfg.validate()?;
    Ok(cfg)
}

fn adopt_model(cfg: &mut ExperimentConfig, model: &ModelConfig) {
    cfg.encoder = model.encoder.clone();
    cfg.lora = model.lora.clone();
    cfg.decoder = model.decoder.clone();
}

fn echo(cfg: &ExperimentConfig) -> Result<()> {
    println!("config_hash: {}", cfg.hash()?);
    println!("config: {}", cfg.canonical_json()?);
    Ok(())
}

fn plan(fields: Value) {
    println!("plan: {fields}");
}

fn require<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| anyhow!("no {what} given (flag or config `paths`)"))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn checkpoint_config(cfg: &ExperimentConfig) -> Result<(PathBuf, ModelConfig)> {
    let ckpt = require(&cfg.paths.checkpoint, "checkpoint")?.to_path_buf();
    let model = read_checkpoint_config(&ckpt)?;
    Ok((ckpt, model))
}

pub fn train(args: TrainArgs) -> Result<()> {
    let cfg = resolve(&args.common, |c| {
        let t = &mut c.train;
        if let Some(v) = args.epochs {
            t.epochs = v;
        }
        if let Some(v) = args.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = args.learning_rate {
            t.learning_rate = v;
        }
        if let Some(v) = args.beta1 {
            t.adam.beta1 = v;
        }
        if let Some(v) = args.beta2 {
            t.adam.beta2 = v;
        }
        if let Some(v) = args.adam_eps {
            t.adam.eps = v;
        }
        if let Some(v) = args.seed {
            t.seed = v;
        }
        if let Some(v) = args.validate {
            t.validate = v;
        }
        c.mix = override_mix(&c.mix, &args)?;
        if args.manifest.is_some() {
            c.paths.manifest.clone_from(&args.manifest);
        }
        if args.pretrained.is_some() {
            c.paths.pretrained.clone_from(&args.pretrained);
        }
        if args.ckpt.is_some() {
            c.paths.checkpoint.clone_from(&args.ckpt);
        }
        if args.output_dir.is_some() {
            c.paths.output_dir.clone_from(&args.output_dir);
        }
        Ok(())
    })?;
    echo(&cfg)?;
    let manifest = parse_manifest(require(&cfg.paths.manifest, "manifest")?)?;
    if let Some(p) = &cfg.paths.pretrained {
        if !p.exists() {
            return Err(Error::DanglingReference { path: p.clone() }.into());
        }
    }
    if args.common.dry_run {
        let items = build_mixed_dataset(&manifest, &cfg.mix, cfg.train.seed)?;
        let per_epoch = cfg.train.steps_per_epoch(items.len());
        plan(json!({
            "command": "train",
            "n_train": items.len(),
            "steps_per_epoch": per_epoch,
            "total_steps": per_epoch * cfg.train.epochs,
            "realized_mix": realized_counts(&items),
            "checkpoint": cfg.paths.checkpoint,
            "report": report_path(&cfg),
        }));
        return Ok(());
    }
    let (_, report) = run_training(&manifest, &cfg, &SampleCache::from_env())?;
    for e in &report.epochs {
        println!(
            "epoch {:>4}  loss {:.5}  lr {:.2e}  val_miou {}",
            e.epoch,
            e.mean_loss,
            e.learning_rate,
            e.validation_mean_iou.map_or("-".into(), |v| format!("{v:.4}"))
        );
    }
    match report_path(&cfg) {
        Some(path) => {
            write_json(&path, &report)?;
            println!("report: {}", path.display());
        }
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}

fn report_path(cfg: &ExperimentConfig) -> Option<PathBuf> {
    match (&cfg.paths.output_dir, &cfg.paths.checkpoint) {
        (Some(dir), _) => Some(dir.join("run_report.json")),
        (None, Some(ckpt)) => Some(ckpt.with_extension("report.json")),
        (None, None) => None,
    }
}

fn override_mix(base: &MixSpec, args: &TrainArgs) -> Result<MixSpec> {
    let touched = args.regime.is_some()
        || args.prompt_kind.is_some()
        || args.prompted_fraction.is_some()
        || !args.kind_fraction.is_empty();
    if !touched {
        return Ok(base.clone());
    }
    let regime = match args.regime {
        Some(RegimeArg::SinglePrompt) => MixRegime::SinglePrompt,
        Some(RegimeArg::PromptVsNoneRatio) => MixRegime::PromptVsNoneRatio,
        Some(RegimeArg::FourWayMix) => MixRegime::FourWayMix,
        None if !args.kind_fraction.is_empty() => MixRegime::FourWayMix,
        None if args.prompted_fraction.is_some() => MixRegime::PromptVsNoneRatio,
        None if args.prompt_kind.is_some() => MixRegime::SinglePrompt,
        None => base.regime,
    };
    let mut mix = match regime {
        MixRegime::SinglePrompt => MixSpec::single(args.prompt_kind.or(base.prompt_kind).unwrap_or(PromptKind::LongScribble)),
        MixRegime::PromptVsNoneRatio => MixSpec::ratio(
            args.prompt_kind.or(base.prompt_kind).unwrap_or(PromptKind::LongScribble),
            args.prompted_fraction.unwrap_or(base.prompted_fraction),
        ),
        MixRegime::FourWayMix => MixSpec::four_way(),
    };
    if regime == MixRegime::FourWayMix && !args.kind_fraction.is_empty() {
        mix.per_kind_fractions = args.kind_fraction.iter().copied().collect::<BTreeMap<_, _>>();
        mix.prompted_fraction = mix
            .per_kind_fractions
            .iter()
            .filter(|(k, _)| **k != PromptKind::None)
            .map(|(_, f)| f)
            .sum();
    }
    mix.validate()?;
    Ok(mix)
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let mut cfg = resolve(&args.common, |c| {
        if args.manifest.is_some() {
            c.paths.manifest.clone_from(&args.manifest);
        }
        if args.ckpt.is_some() {
            c.paths.checkpoint.clone_from(&args.ckpt);
        }
        Ok(())
    })?;
    let (ckpt, model_cfg) = checkpoint_config(&cfg)?;
    adopt_model(&mut cfg, &model_cfg);
    echo(&cfg)?;
    let manifest = parse_manifest(require(&cfg.paths.manifest, "manifest")?)?;
    let corruption = args
        .corruption
        .map(|kind| CorruptionSpec::new(kind, args.severity, args.corruption_seed))
        .transpose()?;
    let n = manifest.split_samples(&args.split).len();
    if n == 0 {
        bail!("split {:?} is empty or missing", args.split);
    }
    if args.common.dry_run {
        plan(json!({
            "command": "eval",
            "split": args.split,
            "n_images": n,
            "prompt": args.prompt,
            "corruption": corruption.map(|c| c.to_string()),
            "checkpoint": ckpt,
            "out": args.out,
        }));
        return Ok(());
    }
    let model = load_checkpoint(&ckpt)?;
    let opts = EvalOptions {
        split: args.split.clone(),
        prompt_kind: args.prompt,
        corruption,
        batch_size: args.batch_size,
    };
    let report = run_eval(&model, &manifest, &opts, &SampleCache::from_env())?;
    println!("{}", MetricsReport::table_header());
    println!("{}", report.table_row());
    match &args.out {
        Some(path) => {
            write_json(path, &report)?;
            println!("report: {}", path.display());
        }
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}

fn split_records<'a>(manifest: &'a DatasetManifest, split: &str) -> Result<Vec<&'a SampleRecord>> {
    let records: Vec<&SampleRecord> = if split == "all" {
        manifest.samples.iter().collect()
    } else {
        manifest.split_samples(split)
    };
    if records.is_empty() {
        bail!("split {split:?} is empty or missing");
    }
    Ok(records)
}

pub fn gen_prompts(args: GenPromptsArgs) -> Result<()> {
    let cfg = resolve(&args.common, |c| {
        if args.manifest.is_some() {
            c.paths.manifest.clone_from(&args.manifest);
        }
        Ok(())
    })?;
    echo(&cfg)?;
    let manifest = parse_manifest(require(&cfg.paths.manifest, "manifest")?)?;
    let records = split_records(&manifest, &args.split)?;
    if args.common.dry_run {
        plan(json!({
            "command": "gen-prompts",
            "kind": args.kind,
            "n_samples": records.len(),
            "out": args.out,
            "render_dir": args.render_dir,
        }));
        return Ok(());
    }
    let mut docs = BTreeMap::new();
    let mut empty = 0usize;
    for record in records {
        let record = manifest.resolved(record);
        let (image, mask) = load_native_pair(&record)?;
        let prompt = match gen_prompt(args.kind, &mask, args.seed) {
            Ok(p) => p,
            Err(Error::NoRegion) => {
                empty += 1;
                VisualPrompt::none()
            }
            Err(e) => return Err(e.into()),
        };
        if let Some(dir) = &args.render_dir {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            render_prompt_overlay(&image, &prompt)?.save_png(&dir.join(format!("{}.png", record.sample_id)))?;
        }
        docs.insert(record.sample_id.clone(), prompt.to_document());
    }
    write_json(&args.out, &docs)?;
    println!("prompts: {} written to {} ({empty} without a zone)", docs.len(), args.out.display());
    Ok(())
}

pub fn corrupt_image(args: CorruptArgs) -> Result<()> {
    let cfg = resolve(&args.common, |_| Ok(()))?;
    echo(&cfg)?;
    let spec = CorruptionSpec::new(args.kind, args.severity, args.seed)?;
    if !args.input.exists() {
        return Err(Error::DanglingReference { path: args.input }.into());
    }
    let image = ImageTensor::load_png(&args.input)?;
    if args.common.dry_run {
        plan(json!({
            "command": "corrupt",
            "corruption": spec.to_string(),
            "seed": spec.seed,
            "input": args.input,
            "size": [image.width(), image.height()],
            "output": args.output,
        }));
        return Ok(());
    }
    corrupt(&image, &spec)?.save_png(&args.output)?;
    println!("wrote {}", args.output.display());
    Ok(())
}

fn load_prompt_doc(path: &Path, image: &ImageTensor) -> Result<VisualPrompt> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let doc: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let prompt = VisualPrompt::from_document(&doc, image.height(), image.width())?;
    prompt.check_bounds(image.height(), image.width())?;
    Ok(prompt)
}

pub fn predict(args: PredictArgs) -> Result<()> {
    let mut cfg = resolve(&args.common, |c| {
        if args.ckpt.is_some() {
            c.paths.checkpoint.clone_from(&args.ckpt);
        }
        Ok(())
    })?;
    let (ckpt, model_cfg) = checkpoint_config(&cfg)?;
    adopt_model(&mut cfg, &model_cfg);
    echo(&cfg)?;
    if !args.image.exists() {
        return Err(Error::DanglingReference { path: args.image }.into());
    }
    let image = ImageTensor::load_png(&args.image)?;
    let prompt = match &args.prompt {
        Some(p) => load_prompt_doc(p, &image)?,
        None => VisualPrompt::none(),
    };
    if args.common.dry_run {
        plan(json!({
            "command": "predict",
            "checkpoint": ckpt,
            "image": args.image,
            "size": [image.width(), image.height()],
            "prompt": prompt.to_document(),
            "out": args.out,
            "contours": args.contours,
        }));
        return Ok(());
    }
    let model = load_checkpoint(&ckpt)?;
    let mask = segment_native(&model, &image, &prompt)?;
    mask.save_png(&args.out)?;
    let contours = extract_contours(&mask);
    if let Some(path) = &args.contours {
        write_json(path, &contours)?;
    }
    println!(
        "mask: {} ({} zone pixels, {} contours)",
        args.out.display(),
        mask.count(pdzseg_core::data::DISSECTION),
        contours.len()
    );
    Ok(())
}

fn parse_model_spec(spec: &str) -> (String, PathBuf) {
    match spec.split_once('=') {
        Some((id, path)) if !id.is_empty() => (id.to_string(), PathBuf::from(path)),
        _ => {
            let path = PathBuf::from(spec);
            let id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "default".into());
            (id, path)
        }
    }
}

pub fn serve_models(args: ServeArgs) -> Result<()> {
    let mut cfg = resolve(&args.common, |_| Ok(()))?;
    let mut specs: Vec<(String, PathBuf)> = args.ckpts.iter().map(|s| parse_model_spec(s)).collect();
    if specs.is_empty() {
        let path = require(&cfg.paths.checkpoint, "checkpoint")?;
        specs.push(parse_model_spec(&path.to_string_lossy()));
    }
    let configs = specs
        .iter()
        .map(|(_, p)| read_checkpoint_config(p))
        .collect::<pdzseg_core::Result<Vec<_>>>()?;
    adopt_model(&mut cfg, &configs[0]);
    cfg.paths.checkpoint = Some(specs[0].1.clone());
    echo(&cfg)?;
    if args.common.dry_run {
        plan(json!({
            "command": "serve",
            "addr": args.addr.to_string(),
            "workers": args.workers,
            "models": specs.iter().map(|(id, p)| json!({"id": id, "checkpoint": p})).collect::<Vec<_>>(),
        }));
        return Ok(());
    }
    let entries = specs
        .iter()
        .map(|(id, path)| ModelEntry::from_checkpoint(id.clone(), path))
        .collect::<pdzseg_core::Result<Vec<_>>>()?;
    let state = Arc::new(ServiceState::new(entries, args.workers)?);
    let runtime = tokio::runtime::Runtime::new().context("starting async runtime")?;
    println!("listening on http://{}", args.addr);
    runtime.block_on(serve(args.addr, state))?;
    Ok(())
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let cfg = resolve(&args.common, |_| Ok(()))?;
    echo(&cfg)?;
    let spec = SyntheticSpec {
        kind: args.scene,
        n_train: args.n_train,
        n_test: args.n_test,
        height: args.size,
        width: args.size,
        frames_per_video: args.frames_per_video,
        seed: args.seed,
    };
    if spec.frames_per_video == 0 || spec.height < 16 {
        bail!("frames-per-video must be positive and size at least 16");
    }
    if args.common.dry_run {
        plan(json!({ "command": "synth", "out": args.out, "spec": spec }));
        return Ok(());
    }
    let manifest = write_dataset(&args.out, &spec)?;
    println!(
        "manifest: {} ({} samples)",
        args.out.join("manifest.json").display(),
        manifest.samples.len()
    );
    Ok(())
}
