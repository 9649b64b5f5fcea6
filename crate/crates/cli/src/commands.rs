use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use gem_core::formats::checkpoint::Checkpoint;
use gem_core::formats::image::{encode_ppm, overlay, read_pgm};
use gem_core::formats::manifest::{load_split, write_dataset};
use gem_core::formats::write_atomic;
use gem_core::pipeline::synth::synth_split;
use gem_core::pipeline::{evaluate, train_epoch, AdamW, FusionMode, Split, TrainConfig};
use gem_core::{GemError, GemModel, ParamStore32, Result};
use serde_json::json;

use crate::{EvalArgs, GenDataArgs, PredictArgs, TrainArgs};

fn read_config(path: Option<&Path>) -> Result<TrainConfig> {
    let cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| GemError::Format(format!("{}: {e}", p.display())))?;
            TrainConfig::from_json(&text).map_err(|e| GemError::Format(format!("{}: {e}", p.display())))?
        }
        None => TrainConfig::default(),
    };
    Ok(cfg)
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var("GEM_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| GemError::InvalidArgument(format!("GEM_SEED '{s}' is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

pub fn gen_data(a: &GenDataArgs) -> Result<()> {
    let mut cfg = read_config(a.config.as_deref())?;
    if let Some(seed) = a.seed.map(Ok).or_else(|| env_seed().transpose()).transpose()? {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let splits: Vec<_> = [(Split::Train, a.train), (Split::Val, a.val), (Split::Test, a.test)]
        .into_iter()
        .map(|(s, n)| (s, synth_split(&cfg, s, n)))
        .collect();
    write_dataset(&a.out, &splits)?;
    eprintln!(
        "wrote {} samples to {}",
        a.train + a.val + a.test,
        a.out.display()
    );
    Ok(())
}

fn default_log(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".log.jsonl");
    out.with_file_name(name)
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut cfg = read_config(a.config.as_deref())?;
    if let Some(seed) = env_seed()? {
        cfg.seed = seed;
    }
    if a.no_vbmatch {
        cfg.beta = 0.0;
    }
    if a.baseline_fusion {
        cfg.fusion = FusionMode::Addition;
    }
    if a.text_blind {
        cfg.text_blind = true;
    }
    cfg.validate()?;
    let load = |split| load_split(&a.data, split, cfg.image_size, cfg.num_points, cfg.num_tokens);
    let train = load(Split::Train)?;
    let val = load(Split::Val)?;
    if cfg.epochs > 0 && (train.is_empty() || val.is_empty()) {
        return Err(GemError::Format(format!(
            "{}: training needs non-empty train and val splits ({} / {} samples)",
            a.data.display(),
            train.len(),
            val.len()
        )));
    }

    let (model, mut store) = GemModel::new::<f32>(&cfg)?;
    let mut opt = AdamW::new(
        &store,
        cfg.learning_rate,
        (cfg.adam_beta1, cfg.adam_beta2),
        cfg.adam_eps,
        cfg.weight_decay,
    );
    let log_path = a.log.clone().unwrap_or_else(|| default_log(&a.out));
    let mut log = String::new();
    write_atomic(&log_path, b"")?;
    let mut best = Checkpoint::from_store(&cfg, &store);
    let mut best_pck = f64::NEG_INFINITY;
    for epoch in 0..cfg.epochs {
        let trace = train_epoch(&model, &mut store, &mut opt, &train, epoch)?;
        let m = evaluate(&model, &store, &val)?;
        let line = json!({
            "epoch": epoch,
            "train_loss": trace.mean_loss(),
            "mse": m.mse,
            "mae": m.mae,
            "pck02": m.pck02,
            "pck03": m.pck03,
            "pck04": m.pck04,
        });
        writeln!(log, "{line}").expect("writing to a String");
        write_atomic(&log_path, log.as_bytes())?;
        eprintln!("{line}");
        if m.pck02 > best_pck {
            best_pck = m.pck02;
            best = Checkpoint::from_store(&cfg, &store);
        }
    }
    best.save(&a.out)
}

fn load_checkpoint(path: &Path, config: Option<&Path>) -> Result<(GemModel, ParamStore32)> {
    let ck = Checkpoint::load(path)?;
    if let Some(p) = config {
        let cfg = read_config(Some(p))?;
        if !cfg.same_architecture(&ck.config) {
            return Err(GemError::Shape(format!(
                "checkpoint {} was trained with a different architecture than {}",
                path.display(),
                p.display()
            )));
        }
    }
    ck.into_model()
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let split = Split::parse(&a.split)?;
    let (model, store) = load_checkpoint(&a.checkpoint, a.config.as_deref())?;
    let cfg = model.config();
    let data = load_split(&a.data, split, cfg.image_size, cfg.num_points, cfg.num_tokens)?;
    if data.is_empty() {
        return Err(GemError::Format(format!("split '{}' of {} is empty", a.split, a.data.display())));
    }
    let m = evaluate(&model, &store, &data)?;
    println!("{}", serde_json::to_string(&m)?);
    Ok(())
}

pub fn predict(a: &PredictArgs) -> Result<()> {
    let (model, store) = load_checkpoint(&a.checkpoint, None)?;
    let size = model.config().image_size;
    let (w, h, pixels) = read_pgm(&a.image)?;
    if (w, h) != (size, size) {
        return Err(GemError::Format(format!(
            "{}: image is {w}×{h}, the model expects {size}×{size}",
            a.image.display()
        )));
    }
    let gt: Vec<[f64; 2]> = match &a.gt {
        Some(text) => serde_json::from_str(text).map_err(|e| GemError::Format(format!("--gt: {e}")))?,
        None => Vec::new(),
    };
    let points = model.predict(&store, &pixels, &a.tokens)?;
    let rgb = overlay(size, &pixels, &points, &gt);
    write_atomic(&a.overlay, &encode_ppm(size, size, &rgb)?)?;
    println!("{}", json!({ "points": points }));
    Ok(())
}
