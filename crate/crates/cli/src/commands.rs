use std::fs;
use std::path::{Path, PathBuf};

use setrack::data::got::load_sequence;
use setrack::data::{export_got_style, load_got_style, synth_sequence, SequenceRecord};
use setrack::evaluation::{
    benchmark_fps, evaluate_one_pass, evaluate_with_reset, hardware_descriptor, report_model_size, write_results,
    EvalSummary, SequenceMetrics,
};
use setrack::model::checkpoint::{deserialize_weights, Checkpoint};
use setrack::model::ModelWeights;
use setrack::tracking::{dump_frames, track_sequence, NetworkTracker};
use setrack::training::{epoch_file, TrainConfig, Trainer, TrainingData};
use setrack::{Error, Result};

use crate::config::RunConfig;

type W = ModelWeights<f32>;

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|source| Error::Io {
        path: p.to_path_buf(),
        source,
    })
}

fn write_json(path: &Path, v: &serde_json::Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(v)?).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load_dataset(root: &Path) -> Result<Vec<SequenceRecord>> {
    let seqs = load_got_style(root)?.collect::<Result<Vec<_>>>()?;
    if seqs.is_empty() {
        return Err(Error::EmptyDataset(format!("no sequences under {}", root.display())));
    }
    Ok(seqs)
}

fn load_weights(cfg: &RunConfig) -> Result<W> {
    cfg.require_paths(&[("checkpoint", &cfg.checkpoint)])?;
    deserialize_weights(cfg.checkpoint.as_ref().expect("checked"))
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    mkdir(&cfg.out)?;
    let mut manifest = Vec::new();
    for i in 0..cfg.sequences {
        let seq = synth_sequence(&cfg.synth.for_index(i))?;
        let dir = cfg.out.join(&seq.name);
        export_got_style(&seq, &dir)?;
        eprintln!("wrote {} ({} frames)", dir.display(), seq.len());
        manifest.push(serde_json::json!({ "name": seq.name, "frames": seq.len() }));
    }
    write_json(&cfg.out.join("manifest.json"), &serde_json::json!({ "sequences": manifest }))
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    cfg.require_paths(&[("dataset", &cfg.dataset)])?;
    let seqs = load_dataset(cfg.dataset.as_ref().expect("checked"))?
        .iter()
        .map(SequenceRecord::preloaded)
        .collect::<Result<Vec<_>>>()?;
    let tc = TrainConfig {
        checkpoint_dir: Some(cfg.out.clone()),
        ..cfg.train.clone()
    };
    let mut trainer = match &cfg.resume {
        Some(path) => Trainer::<f32>::from_checkpoint(Checkpoint::load(path)?, tc)?,
        None => Trainer::<f32>::new(&cfg.model, tc)?,
    };
    let data = TrainingData::Sequences(seqs);
    while trainer.epochs_done < trainer.config.epochs {
        let loss = trainer.run_epoch(&data)?;
        eprintln!("epoch {} mean loss {loss:.6}", trainer.epochs_done);
    }
    let last: PathBuf = cfg.out.join(epoch_file(trainer.epochs_done));
    let model = cfg.out.join("model.ckpt");
    trainer.checkpoint().save(&model)?;
    eprintln!("checkpoint {}", model.display());
    if last.exists() {
        eprintln!("last epoch checkpoint {}", last.display());
    }
    Ok(())
}

pub fn track(cfg: &RunConfig) -> Result<()> {
    cfg.require_paths(&[("sequence", &cfg.sequence)])?;
    let weights = load_weights(cfg)?;
    let seq = load_sequence(cfg.sequence.as_ref().expect("checked"))?;
    mkdir(&cfg.out)?;
    let track = track_sequence(&seq, &weights, cfg.delta)?;
    let csv = cfg.out.join(format!("{}.csv", seq.name));
    track.write_csv(&csv)?;
    eprintln!("wrote {} ({} rows)", csv.display(), track.len());
    if cfg.dump_frames {
        let dir = cfg.out.join("frames");
        dump_frames(&seq, &track, &dir)?;
        eprintln!("wrote annotated frames to {}", dir.display());
    }
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    cfg.require_paths(&[("dataset", &cfg.dataset)])?;
    let weights = load_weights(cfg)?;
    let seqs = load_dataset(cfg.dataset.as_ref().expect("checked"))?;
    mkdir(&cfg.out)?;
    let mut metrics = Vec::new();
    let mut tracks = Vec::new();
    let mut fps = None;
    for seq in &seqs {
        let seq = seq.preloaded()?;
        let track = track_sequence(&seq, &weights, cfg.delta)?;
        let one_pass = evaluate_one_pass(&track.boxes, &seq.annotations)?;
        let reset = evaluate_with_reset(&|| Ok(NetworkTracker::new(&weights, cfg.delta)), &seq, cfg.reset_skip)?;
        eprintln!(
            "{}: auc {:.3} p@20 {:.3} accuracy {:.3} failures {}",
            seq.name, one_pass.auc, one_pass.precision_at_20, reset.mean_iou, reset.failures
        );
        if fps.is_none() && seq.len() >= cfg.warmup + 2 {
            fps = Some(benchmark_fps(&weights, &seq, cfg.delta, cfg.warmup, cfg.reps)?);
        }
        metrics.push(SequenceMetrics {
            name: seq.name.clone(),
            frames: seq.len(),
            one_pass,
            reset,
        });
        tracks.push((seq.name.clone(), track));
    }
    let summary = EvalSummary {
        sequences: metrics,
        config_hash: weights.config().hash(),
        model_size: report_model_size(&weights, cfg.out.join("model.ckpt"))?,
        fps,
        hardware: hardware_descriptor(),
    };
    write_results(&cfg.out, &summary, &tracks)?;
    eprintln!(
        "accuracy {:.3} failures {} auc {:.3} -> {}",
        summary.accuracy(),
        summary.failures(),
        summary.auc(),
        cfg.out.join("metrics.json").display()
    );
    Ok(())
}

pub fn bench(cfg: &RunConfig) -> Result<()> {
    let weights = match &cfg.checkpoint {
        Some(_) => load_weights(cfg)?,
        None => W::init(&cfg.model, cfg.train.seed)?,
    };
    let seq = match &cfg.sequence {
        Some(p) => load_sequence(p)?.preloaded()?,
        None => synth_sequence(&cfg.synth)?,
    };
    mkdir(&cfg.out)?;
    let report = benchmark_fps(&weights, &seq, cfg.delta, cfg.warmup, cfg.reps)?;
    let size = report_model_size(&weights, cfg.out.join("model.ckpt"))?;
    let out = serde_json::json!({
        "fps": report.median_fps,
        "runs_fps": report.runs_fps,
        "frames_timed": report.frames_timed,
        "warmup": report.warmup,
        "hardware": report.hardware,
        "parameter_count": size.parameter_count,
        "checkpoint_bytes": size.checkpoint_bytes,
    });
    write_json(&cfg.out.join("bench.json"), &out)?;
    eprintln!(
        "{:.1} fps (median of {}) on {}; {} parameters",
        report.median_fps, cfg.reps, report.hardware, size.parameter_count
    );
    Ok(())
}
