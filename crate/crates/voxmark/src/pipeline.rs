//! The end-to-end steps behind each command, usable without the CLI.

use std::io::Write as _;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::time::Instant;

use voxmark_core::detect::{detect, DetectorConfig};
use voxmark_core::eval::{paired_errors, paired_t_test, score, EvalReport, ScoreItem, TTest};
use voxmark_core::labels::{make_targets, LabelConfig};
use voxmark_core::phantom::{generate_one, PhantomConfig};
use voxmark_core::shape::{apply_constraint, fit_with, pair_to_shape, ShapeModel, ShapeSpace};
use voxmark_core::train::{train_from, EpochStats, TrainConfig, TrainSample, TrainState};
use voxmark_core::unet::{predict, NetArch, NetParams};
use voxmark_core::{Category, Error as CoreError, LandmarkAnnotation, NoiseProfile, VolumeGrid};

use crate::checkpoint::{self, Checkpoint};
use crate::error::{Error, Result};
use crate::records::{write_json, AnnotationRecord, DetectionRecord, Manifest, ManifestEntry};
use crate::vvr;

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes `count_per_category` volumes of each category under `out/volumes`
/// plus `out/manifest.json`; returns the manifest path and per-category counts.
pub fn gen_data(cfg: &PhantomConfig, count_per_category: usize, out: &Path) -> Result<(PathBuf, [usize; 4])> {
    cfg.validate()?;
    let vol_dir = out.join("volumes");
    create_dir(&vol_dir)?;
    let mut entries = Vec::with_capacity(4 * count_per_category);
    let mut counts = [0usize; 4];
    for (ci, cat) in Category::ALL.into_iter().enumerate() {
        for i in 0..count_per_category {
            let s = generate_one(cfg, cat, i, (ci * count_per_category + i) as u64)?;
            let rel = format!("volumes/{}.vvr", s.annotation.volume_id);
            vvr::write(&out.join(&rel), &s.volume)?;
            counts[s.category.index()] += 1;
            entries.push(ManifestEntry {
                volume_path: rel,
                annotation: AnnotationRecord::from(&s.annotation),
                noise_profile: Some(s.noise_profile.as_str().to_string()),
            });
        }
    }
    let manifest = out.join("manifest.json");
    write_json(&manifest, &entries)?;
    Ok((manifest, counts))
}

/// A manifest entry with its volume loaded.
#[derive(Debug, Clone)]
pub struct LoadedVolume {
    pub annotation: LandmarkAnnotation,
    pub volume: VolumeGrid,
    pub noise_profile: NoiseProfile,
}

pub fn load_dataset(manifest: &Manifest) -> Result<Vec<LoadedVolume>> {
    manifest
        .entries
        .iter()
        .map(|e| {
            Ok(LoadedVolume {
                annotation: manifest.annotation(e),
                volume: vvr::read(&manifest.volume_path(e))?,
                noise_profile: manifest.noise_profile(e),
            })
        })
        .collect()
}

pub fn training_samples(data: &[LoadedVolume], labels: &LabelConfig) -> Result<Vec<TrainSample>> {
    data.iter()
        .map(|d| {
            let targets = make_targets(&d.annotation, d.volume.geometry(), labels)?;
            Ok(TrainSample { image: d.volume.clone(), targets })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainJob {
    pub arch: NetArch,
    pub labels: LabelConfig,
    pub train: TrainConfig,
    pub checkpoint_dir: PathBuf,
    /// Epochs between intermediate checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub resume: Option<PathBuf>,
}

pub const FINAL_CHECKPOINT: &str = "final.unc";
pub const LOSS_LOG: &str = "loss.csv";

pub fn epoch_checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:04}.unc")
}

/// Trains on `data`, writing checkpoints and a `epoch,mean_loss,wall_seconds`
/// log into the checkpoint directory. Resuming appends to the existing log.
pub fn train(job: &TrainJob, data: &[LoadedVolume], mut on_epoch: impl FnMut(&EpochStats)) -> Result<TrainState> {
    let samples = training_samples(data, &job.labels)?;
    create_dir(&job.checkpoint_dir)?;
    let state = match &job.resume {
        Some(p) => checkpoint::load(p, Some(&job.arch))?.into_state(),
        None => TrainState::new(NetParams::init(&job.arch, job.train.seed)?),
    };
    let log_path = job.checkpoint_dir.join(LOSS_LOG);
    let mut log = std::fs::OpenOptions::new()
        .create(true)
        .append(job.resume.is_some())
        .write(true)
        .truncate(job.resume.is_none())
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    if job.resume.is_none() {
        writeln!(log, "epoch,mean_loss,wall_seconds").map_err(|e| Error::io(&log_path, e))?;
    }
    let started = Instant::now();
    let mut failure: Option<Error> = None;
    let result = train_from(state, &samples, &job.arch, &job.train, |st, stats| {
        let wall = started.elapsed().as_secs_f64();
        if let Err(e) = writeln!(log, "{},{},{:.3}", stats.epoch, stats.mean_loss, wall) {
            failure = Some(Error::io(&log_path, e));
            return ControlFlow::Break(());
        }
        if job.checkpoint_every > 0 && stats.epoch % job.checkpoint_every == 0 {
            let p = job.checkpoint_dir.join(epoch_checkpoint_name(stats.epoch));
            if let Err(e) = checkpoint::save(&p, &Checkpoint::from_state(job.arch, st)) {
                failure = Some(e);
                return ControlFlow::Break(());
            }
        }
        on_epoch(&stats);
        ControlFlow::Continue(())
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let state = result?;
    checkpoint::save(&job.checkpoint_dir.join(FINAL_CHECKPOINT), &Checkpoint::from_state(job.arch, &state))?;
    Ok(state)
}

/// Fits the pair-shape model on every volume annotated with both landmarks.
pub fn shape_fit(data: &[LoadedVolume], space: ShapeSpace, max_modes: usize) -> Result<ShapeModel> {
    let mut shapes = Vec::new();
    for d in data {
        if let (Some(l), Some(r)) = (d.annotation.left, d.annotation.right) {
            let geom = d.volume.geometry();
            shapes.push(pair_to_shape(space.point(l, &geom), space.point(r, &geom))?);
        }
    }
    if shapes.len() < 2 {
        return Err(
            CoreError::DegenerateModel(format!("need at least 2 annotated pairs, found {}", shapes.len())).into()
        );
    }
    Ok(fit_with(&shapes, max_modes, space)?)
}

/// Detection records in dataset order; volumes the network cannot process
/// get an error record instead of failing the whole run.
pub fn detect_all(
    params: &NetParams<f32>,
    arch: &NetArch,
    data: &[LoadedVolume],
    cfg: &DetectorConfig,
    shape: Option<&ShapeModel>,
) -> Result<Vec<DetectionRecord>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(data.len());
    for d in data {
        let id = &d.annotation.volume_id;
        let res = predict(params, arch, &d.volume).and_then(|(l, r)| detect(&l, &r, cfg));
        out.push(match res {
            Ok(mut r) => {
                if let Some(m) = shape {
                    r = apply_constraint(&r, m, &d.volume.geometry());
                }
                DetectionRecord::ok(id, &r, cfg, shape.is_some())
            }
            Err(e) => DetectionRecord::failed(id, e.to_string(), cfg, shape.is_some()),
        });
    }
    Ok(out)
}

/// Scores a detection report against the dataset it was produced from.
/// Every record must be a successful detection of a volume in `data`.
pub fn evaluate(records: &[DetectionRecord], data: &[LoadedVolume]) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::Usage("detection report is empty".into()));
    }
    let mut items = Vec::with_capacity(records.len());
    for rec in records {
        let result = rec.result().ok_or_else(|| {
            Error::Usage(format!(
                "{}: no detection ({})",
                rec.volume_id,
                rec.error.as_deref().unwrap_or("missing sides")
            ))
        })?;
        let d = data
            .iter()
            .find(|d| d.annotation.volume_id == rec.volume_id)
            .ok_or_else(|| Error::Usage(format!("{}: not in the manifest", rec.volume_id)))?;
        items.push(ScoreItem {
            result_id: rec.volume_id.clone(),
            result,
            annotation: d.annotation.clone(),
            geometry: d.volume.geometry(),
            has_distractor: !d.annotation.distractors.is_empty(),
            noise_profile: d.noise_profile,
        });
    }
    Ok(score(&items)?)
}

/// Paired t-test on localization errors of entries scored in both reports.
pub fn compare(a: &EvalReport, b: &EvalReport) -> Result<(usize, TTest)> {
    let (x, y) = paired_errors(a, b);
    Ok((x.len(), paired_t_test(&x, &y)?))
}

/// Loads the network from a checkpoint, taking its architecture from the file.
pub fn load_network(path: &Path) -> Result<(NetArch, NetParams<f32>)> {
    let ck = checkpoint::load(path, None)?;
    Ok((ck.arch, ck.params))
}
