//! One function per CLI verb. Each validates everything it needs before
//! creating any output, then writes its artifacts and a run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::{Days, NaiveDate};
use ndarray::Array4;
use rayon::prelude::*;
use serde::Serialize;

use locust_core::curation::{
    assign_splits, generate_pseudo_absences, ingest_presences, read_curated, summarize, write_curated, BBox,
    CurationConfig, CurationError, ObservationRecord, Provenance, Split,
};
use locust_core::features::{
    build_chip, build_static_block, build_temporal_block, featurize_chips, featurize_points, flatten_concat,
    read_feature_set, write_feature_set, ChipStacks, FeatureError, FeatureManifest, Featurized, PointStacks,
    SampleKind,
};
use locust_core::geodata::{read_stack, write_stack, GeoError, GeoTransform, RasterStack, DEFAULT_NODATA};
use locust_core::metrics::MetricsReport;
use locust_core::models::{
    examples_from_feature_set, read_checkpoint, write_checkpoint, Architecture, Checkpoint, Example, InputShape,
    ModelConfig, Network, Prediction,
};
use locust_core::training::{score_all, EpochRecord, TrainConfig, TrainReport, Trainer};
use locust_core::{Network32, Tensor32};

use crate::config::PipelineConfig;
use crate::manifest::write_run_manifest;
use crate::render::probability_png;
use crate::stitch::{stitch, tile_region, Tile};
use crate::CheckpointMismatch;

pub const CURATED: &str = "curated.csv";

pub fn curated_path(out: &Path) -> PathBuf {
    out.join(CURATED)
}

pub fn features_dir(out: &Path, kind: SampleKind) -> PathBuf {
    out.join("features").join(match kind {
        SampleKind::Point => "points",
        SampleKind::Chip => "chips",
    })
}

pub fn model_dir(out: &Path) -> PathBuf {
    out.join("model")
}

pub fn best_checkpoint_path(out: &Path) -> PathBuf {
    model_dir(out).join("best.lckpt")
}

pub fn kind_for(arch: Architecture) -> SampleKind {
    if arch.is_segmentation() {
        SampleKind::Chip
    } else {
        SampleKind::Point
    }
}

fn bbox_of(gt: &GeoTransform) -> BBox {
    let (west, east, south, north) = gt.footprint();
    BBox { west, east, south, north }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------- curate

#[derive(Debug, Serialize)]
pub struct CurationSummaryRow {
    pub split: Split,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub breeding: usize,
    pub non_breeding: usize,
    pub total: usize,
}

#[derive(Debug, Serialize)]
pub struct CurationSummary {
    pub presences: usize,
    pub pseudo_absences: usize,
    pub outside_splits: usize,
    pub unparseable_rows: usize,
    pub non_breeding_reports: usize,
    pub splits: Vec<CurationSummaryRow>,
}

pub fn curate(cfg: &PipelineConfig) -> Result<CurationSummary> {
    let out = cfg.output_dir()?;
    let obs = cfg.require(&cfg.paths.observations, "observations")?;
    let bbox = match cfg.curation.sampling_bbox {
        Some(b) => b,
        None => {
            let stack = cfg
                .paths
                .temporal_stack
                .as_ref()
                .or(cfg.paths.image_stack.as_ref())
                .context("[curation] sampling_bbox is not set and there is no raster to take it from")?;
            bbox_of(&read_stack(stack)?.transform)
        }
    };
    let cc = CurationConfig {
        buffer_radius: cfg.curation.buffer_radius,
        sampling_bbox: bbox,
        ratio: cfg.curation.ratio,
        rng_seed: cfg.curation_seed(),
    };
    cc.validate()?;

    let ingested = ingest_presences(obs)?;
    if ingested.presences.is_empty() {
        return Err(CurationError::NoPresences.into());
    }
    let absences = generate_pseudo_absences(&ingested.presences, &cc)?;
    let mut records = ingested.presences.clone();
    records.extend(absences.iter().cloned());
    let split = assign_splits(&records, &cfg.curation.splits);

    fs::create_dir_all(out)?;
    let curated = curated_path(out);
    write_curated(&split.curated(), &curated)?;
    let rows: Vec<CurationSummaryRow> = summarize(&split, &cfg.curation.splits)
        .into_iter()
        .map(|s| CurationSummaryRow {
            split: s.split,
            start: s.start,
            end: s.end,
            breeding: s.breeding,
            non_breeding: s.non_breeding,
            total: s.breeding + s.non_breeding,
        })
        .collect();
    let summary = CurationSummary {
        presences: ingested.presences.len(),
        pseudo_absences: absences.len(),
        outside_splits: split.rejected.len(),
        unparseable_rows: ingested.rejected.len(),
        non_breeding_reports: ingested.discarded,
        splits: rows,
    };
    let summary_path = out.join("curation_summary.json");
    write_json(&summary_path, &summary)?;
    let rejects = out.join("ingest_rejections.csv");
    write_csv(&rejects, &ingested.rejected, &["line", "reason"])?;
    write_run_manifest(out, "curate", cfg, &[obs], &[&curated, &summary_path, &rejects])?;
    Ok(summary)
}

pub fn print_curation_summary(s: &CurationSummary) {
    println!("{:<11} {:<23} {:>9} {:>13} {:>7}", "split", "dates", "breeding", "non-breeding", "total");
    for r in &s.splits {
        println!(
            "{:<11} {} .. {} {:>9} {:>13} {:>7}",
            r.split.as_str(),
            r.start,
            r.end,
            r.breeding,
            r.non_breeding,
            r.total
        );
    }
    println!(
        "presences {} / pseudo-absences {} / outside splits {} / unparseable rows {} / non-breeding reports {}",
        s.presences, s.pseudo_absences, s.outside_splits, s.unparseable_rows, s.non_breeding_reports
    );
}

// ------------------------------------------------------- featurize / chip

fn write_featurized(cfg: &PipelineConfig, command: &str, f: Featurized, inputs: &[&Path]) -> Result<FeatureManifest> {
    let out = cfg.output_dir()?;
    let dir = features_dir(out, f.manifest.kind);
    fs::create_dir_all(&dir)?;
    let mut manifest = f.manifest;
    let mut outputs = Vec::new();
    for (split, set) in &f.sets {
        let name = format!("{}.lft", split.as_str());
        let path = dir.join(&name);
        write_feature_set(set, &path)?;
        if let Some(entry) = manifest.splits.get_mut(split) {
            entry.file = name;
        }
        outputs.push(path);
    }
    let mpath = dir.join("manifest.json");
    write_json(&mpath, &manifest)?;
    let rpath = dir.join("rejections.csv");
    write_csv(&rpath, &f.rejections, &["id", "split", "reason", "detail"])?;
    outputs.push(mpath);
    outputs.push(rpath);
    let outs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    write_run_manifest(out, command, cfg, inputs, &outs)?;
    for r in &f.rejections {
        println!("rejected {} ({}): {}", r.id, r.reason, r.detail);
    }
    Ok(manifest)
}

pub fn featurize(cfg: &PipelineConfig) -> Result<FeatureManifest> {
    let out = cfg.output_dir()?;
    let curated = curated_path(out);
    if !curated.exists() {
        bail!("{} not found; run `curate` first", curated.display());
    }
    let tpath = cfg.require(&cfg.paths.temporal_stack, "temporal_stack")?;
    let spath = cfg.require(&cfg.paths.static_stack, "static_stack")?;
    let temporal = read_stack(tpath)?;
    let static_ = read_stack(spath)?;
    if temporal.transform != static_.transform {
        bail!("temporal and static stacks are on different grids");
    }
    let records = read_curated(&curated)?;
    let f = featurize_points(&records, &PointStacks { temporal: &temporal, static_: &static_ }, &cfg.features)?;
    write_featurized(cfg, "featurize", f, &[&curated, tpath, spath])
}

pub fn chip(cfg: &PipelineConfig) -> Result<FeatureManifest> {
    let out = cfg.output_dir()?;
    let curated = curated_path(out);
    if !curated.exists() {
        bail!("{} not found; run `curate` first", curated.display());
    }
    let ipath = cfg.require(&cfg.paths.image_stack, "image_stack")?;
    let image = read_stack(ipath)?;
    let records = read_curated(&curated)?;
    let f = featurize_chips(&records, &ChipStacks { image: &image }, &cfg.features)?;
    write_featurized(cfg, "chip", f, &[&curated, ipath])
}

pub fn print_feature_manifest(m: &FeatureManifest) {
    if let (Some(t), Some(s), Some(f)) = (m.temporal_shape, m.static_shape, m.flat_len) {
        println!("temporal block {t:?}, static block {s:?}, flat length {f}");
    }
    if let Some(c) = m.chip_shape {
        println!("chip {c:?}");
    }
    for (split, e) in &m.splits {
        println!("{:<11} {:>6} samples ({} breeding, {} non-breeding) -> {}", split.as_str(), e.count, e.breeding, e.non_breeding, e.file);
    }
}

// ------------------------------------------------------------------ train

fn read_manifest(dir: &Path) -> Result<FeatureManifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).with_context(|| format!("{} not found; run featurization first", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

/// Model input layout implied by a feature manifest.
pub fn input_shape(arch: Architecture, m: &FeatureManifest) -> Result<InputShape> {
    let want = kind_for(arch);
    if m.kind != want {
        bail!("{} needs {:?} features, found {:?}", arch.as_str(), want, m.kind);
    }
    let incomplete = || anyhow::anyhow!("feature manifest lacks shape information");
    Ok(match arch {
        Architecture::Logreg | Architecture::Svm => InputShape::Flat {
            len: m.flat_len.ok_or_else(incomplete)?,
        },
        Architecture::PrithviLb => {
            let [t, b, size, _] = m.chip_shape.ok_or_else(incomplete)?;
            InputShape::Chip { t, b, size }
        }
        _ => {
            let [t, n, _, v] = m.temporal_shape.ok_or_else(incomplete)?;
            let s = m.static_shape.ok_or_else(incomplete)?[2];
            InputShape::Point { t, n, v, s }
        }
    })
}

fn load_split(dir: &Path, m: &FeatureManifest, split: Split) -> Result<Vec<Example<f32>>> {
    let Some(entry) = m.splits.get(&split) else {
        return Ok(Vec::new());
    };
    let set = read_feature_set(&dir.join(&entry.file))?;
    if set.sample_len != m.sample_len() {
        bail!("{} has sample length {}, manifest says {}", entry.file, set.sample_len, m.sample_len());
    }
    Ok(examples_from_feature_set(&set))
}

pub fn format_epoch(e: &EpochRecord) -> String {
    let v = &e.validation;
    let auc = v.roc_auc.map_or("n/a".to_string(), |a| format!("{a:.4}"));
    format!(
        "epoch {:>4} loss {:.6} val_acc {:.4} val_f1 {:.4} val_auc {}{}",
        e.epoch,
        e.train_loss,
        v.binary.accuracy,
        v.binary.f1,
        auc,
        if e.improved { " *" } else { "" }
    )
}

pub struct TrainOutcome {
    pub report: TrainReport,
    pub network: Network32,
}

pub fn train(cfg: &PipelineConfig, resume: bool) -> Result<TrainOutcome> {
    let out = cfg.output_dir()?;
    let arch = cfg.model.arch;
    let dir = features_dir(out, kind_for(arch));
    let manifest = read_manifest(&dir)?;
    let model_cfg = ModelConfig {
        arch,
        input: input_shape(arch, &manifest)?,
        seed: cfg.model_seed(),
        hyper: cfg.model.hyper.clone(),
    };
    model_cfg.validate()?;
    let train_set = load_split(&dir, &manifest, Split::Train)?;
    let val_set = load_split(&dir, &manifest, Split::Validation)?;
    if train_set.is_empty() || val_set.is_empty() {
        bail!("training needs non-empty train and validation splits");
    }
    let state_path = model_dir(out).join("state.lckpt");
    let mut trainer = if resume && state_path.exists() {
        let ck = read_checkpoint::<f32>(&state_path)?;
        if ck.config != model_cfg {
            return Err(CheckpointMismatch(format!("{} was written for a different model config", state_path.display())).into());
        }
        let mut t = Trainer::resume(&ck)?;
        // Only the epoch budget may change between runs.
        let same_otherwise = TrainConfig { max_epochs: t.config.max_epochs, ..cfg.train.clone() } == t.config;
        if !same_otherwise {
            bail!("{} was written with a different [train] section", state_path.display());
        }
        t.config.max_epochs = cfg.train.max_epochs;
        t.finished = t.report.stopped_early || t.epoch >= t.config.max_epochs;
        println!("resuming after epoch {}", t.epoch);
        t
    } else {
        Trainer::new(Network::new(model_cfg)?, cfg.train.clone())?
    };
    fs::create_dir_all(model_dir(out))?;
    // State is saved after every epoch so an interrupted run can resume.
    while !trainer.finished {
        let next = trainer.epoch + 1;
        trainer.run_until(&train_set, &val_set, next, &mut |e| println!("{}", format_epoch(e)))?;
        write_checkpoint(&state_path, &trainer.checkpoint())?;
    }
    let best = trainer.best_network(&val_set)?;
    let mut ck = Checkpoint::from_network(&best);
    ck.state = serde_json::json!({
        "best_epoch": trainer.report.best_epoch,
        "best_value": trainer.report.best_value,
        "selection_metric": trainer.config.selection_metric,
        "feature_kind": manifest.kind,
    });
    let best_path = best_checkpoint_path(out);
    write_checkpoint(&best_path, &ck)?;
    let report_path = model_dir(out).join("train_report.json");
    write_json(&report_path, &trainer.report)?;
    let inputs: Vec<PathBuf> = manifest
        .splits
        .values()
        .map(|e| dir.join(&e.file))
        .chain([dir.join("manifest.json")])
        .collect();
    let ins: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    write_run_manifest(out, "train", cfg, &ins, &[&best_path, &state_path, &report_path])?;
    println!(
        "best epoch {:?} ({:?} {:?}); {} epochs in {:.1}s",
        trainer.report.best_epoch,
        trainer.config.selection_metric,
        trainer.report.best_value,
        trainer.report.epochs.len(),
        trainer.report.wall_clock_seconds
    );
    Ok(TrainOutcome { report: trainer.report, network: best })
}

// --------------------------------------------------------------- evaluate

/// Loads a checkpoint and checks it against the feature manifest of its kind.
fn load_model(cfg: &PipelineConfig, checkpoint: Option<&Path>) -> Result<(Network32, FeatureManifest, PathBuf)> {
    let out = cfg.output_dir()?;
    let path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| best_checkpoint_path(out));
    if !path.exists() {
        return Err(CheckpointMismatch(format!("checkpoint {} does not exist", path.display())).into());
    }
    let ck = read_checkpoint::<f32>(&path).with_context(|| format!("loading {}", path.display()))?;
    let net = ck.to_network().with_context(|| format!("loading {}", path.display()))?;
    let manifest = read_manifest(&features_dir(out, kind_for(net.config.arch)))?;
    let want = input_shape(net.config.arch, &manifest).map_err(|e| CheckpointMismatch(e.to_string()))?;
    if want != net.config.input {
        return Err(CheckpointMismatch(format!(
            "checkpoint expects input {:?} but the features provide {:?}",
            net.config.input, want
        ))
        .into());
    }
    Ok((net, manifest, path))
}

pub fn evaluate(cfg: &PipelineConfig, checkpoint: Option<&Path>) -> Result<BTreeMap<String, MetricsReport>> {
    let out = cfg.output_dir()?;
    let (net, manifest, ck_path) = load_model(cfg, checkpoint)?;
    let dir = features_dir(out, manifest.kind);
    let mut reports = BTreeMap::new();
    for split in Split::ALL {
        let set = load_split(&dir, &manifest, split)?;
        if set.is_empty() {
            continue;
        }
        let scores = score_all(&net, &set)?;
        let r = MetricsReport::from_scores(split.as_str(), &scores, cfg.evaluate.threshold);
        reports.insert(split.as_str().to_string(), r);
    }
    let path = out.join("metrics.json");
    write_json(&path, &reports)?;
    let inputs: Vec<PathBuf> = manifest
        .splits
        .values()
        .map(|e| dir.join(&e.file))
        .chain([ck_path])
        .collect();
    let ins: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    write_run_manifest(out, "evaluate", cfg, &ins, &[&path])?;
    Ok(reports)
}

pub fn print_metrics(cfg: &PipelineConfig, reports: &BTreeMap<String, MetricsReport>) {
    println!(
        "{:<11} {:>6} {:>9} {:>10} {:>8} {:>8} {:>8}   ({:?} averaging)",
        "split", "n", "accuracy", "precision", "recall", "f1", "roc_auc", cfg.evaluate.averaging
    );
    for split in Split::ALL {
        if let Some(r) = reports.get(split.as_str()) {
            let m = r.get(cfg.evaluate.averaging);
            let auc = r.roc_auc.map_or("n/a".into(), |a| format!("{:.2}", 100.0 * a));
            println!(
                "{:<11} {:>6} {:>9.2} {:>10.2} {:>8.2} {:>8.2} {:>8}",
                split.as_str(),
                r.n,
                100.0 * m.accuracy,
                100.0 * m.precision,
                100.0 * m.recall,
                100.0 * m.f1,
                auc
            );
        }
    }
}

// ------------------------------------------------------------ predict-map

/// Cells whose centres fall inside `region`, as `(row0, col0, rows, cols)`.
pub fn region_pixels(gt: &GeoTransform, region: &BBox) -> Result<(usize, usize, usize, usize)> {
    let (fw, fe, fs, fnorth) = gt.footprint();
    let tol = 1e-9 * gt.pixel_size_lon.max(gt.pixel_size_lat);
    if !(region.west < region.east && region.south < region.north) {
        bail!("degenerate region {region:?}");
    }
    if region.west < fw - tol || region.east > fe + tol || region.south < fs - tol || region.north > fnorth + tol {
        bail!("region {region:?} lies outside the raster footprint ({fw}, {fe}, {fs}, {fnorth})");
    }
    let eps = 1e-9;
    let c0 = ((region.west - gt.origin_lon) / gt.pixel_size_lon - 0.5 - eps).ceil().max(0.0) as usize;
    let c1 = ((region.east - gt.origin_lon) / gt.pixel_size_lon - 0.5 + eps).floor() as isize;
    let r0 = ((gt.origin_lat - region.north) / gt.pixel_size_lat - 0.5 - eps).ceil().max(0.0) as usize;
    let r1 = ((gt.origin_lat - region.south) / gt.pixel_size_lat - 0.5 + eps).floor() as isize;
    if c1 < c0 as isize || r1 < r0 as isize {
        bail!("region {region:?} contains no cell centre");
    }
    let c1 = (c1 as usize).min(gt.n_cols - 1);
    let r1 = (r1 as usize).min(gt.n_rows - 1);
    Ok((r0, c0, r1 - r0 + 1, c1 - c0 + 1))
}

fn probe(gt: &GeoTransform, row: usize, col: usize, date: NaiveDate) -> ObservationRecord {
    let (lon, lat) = gt.pixel_to_world(row, col);
    ObservationRecord {
        id: format!("cell-{row}-{col}"),
        lon,
        lat,
        obs_date: date,
        label: 0,
        provenance: Provenance::PseudoAbsence,
        stage: String::new(),
        instar: String::new(),
    }
}

fn covers(stack: &RasterStack, start: NaiveDate, end: NaiveDate) -> bool {
    matches!((stack.timestamps.first(), stack.timestamps.last()), (Some(&a), Some(&b)) if a <= start && b >= end)
}

#[derive(Debug, Serialize)]
pub struct MapSummary {
    pub arch: Architecture,
    pub date: NaiveDate,
    pub region: BBox,
    pub row0: usize,
    pub col0: usize,
    pub rows: usize,
    pub cols: usize,
    pub tiles: Vec<Tile>,
    pub nodata_cells: usize,
    pub breeding_cells: usize,
    pub threshold: f64,
}

pub struct MapOutcome {
    pub raster: RasterStack,
    pub summary: MapSummary,
}

fn predict_points(
    net: &Network32,
    manifest: &FeatureManifest,
    cfg: &PipelineConfig,
    date: NaiveDate,
    region: &BBox,
) -> Result<(GeoTransform, (usize, usize, usize, usize), Vec<f32>, Vec<Tile>, Vec<PathBuf>)> {
    let tpath = cfg.require(&cfg.paths.temporal_stack, "temporal_stack")?;
    let spath = cfg.require(&cfg.paths.static_stack, "static_stack")?;
    let temporal = read_stack(tpath)?;
    let static_ = read_stack(spath)?;
    let gt = temporal.transform;
    let px = region_pixels(&gt, region)?;
    let mut fc = cfg.features.clone();
    fc.n = manifest.n;
    fc.history_days = manifest.history_days;
    let start = date - Days::new(fc.history_days as u64 - 1);
    if !covers(&temporal, start, date) {
        bail!("date {date} lacks the required {} days of history ({start} .. {date})", fc.history_days);
    }
    let (r0, c0, rows, cols) = px;
    let values: Vec<f32> = (0..rows * cols)
        .into_par_iter()
        .map(|i| -> Result<f32> {
            let rec = probe(&gt, r0 + i / cols, c0 + i % cols, date);
            let blocks = build_temporal_block(&rec, &temporal, &fc).and_then(|tb| {
                let sb = build_static_block(&rec, &static_, &fc)?;
                Ok(flatten_concat(&tb, &sb))
            });
            let mut x = match blocks {
                Ok(f) => f.values,
                Err(FeatureError::Geo(GeoError::WindowClipped { .. })) => return Ok(DEFAULT_NODATA),
                Err(e) => return Err(e.into()),
            };
            manifest.normalize_sample(&mut x)?;
            let t = Tensor32::from_vec(x.iter().map(|&v| v as f32).collect());
            Ok(net.predict(&t)?.p_breeding()[0])
        })
        .collect::<Result<_>>()?;
    Ok((gt, px, values, Vec::new(), vec![tpath.to_path_buf(), spath.to_path_buf()]))
}

fn predict_chips(
    net: &Network32,
    manifest: &FeatureManifest,
    cfg: &PipelineConfig,
    date: NaiveDate,
    region: &BBox,
) -> Result<(GeoTransform, (usize, usize, usize, usize), Vec<f32>, Vec<Tile>, Vec<PathBuf>)> {
    let ipath = cfg.require(&cfg.paths.image_stack, "image_stack")?;
    let image = read_stack(ipath)?;
    let gt = image.transform;
    let px = region_pixels(&gt, region)?;
    let [t, _, size, _] = manifest.chip_shape.context("feature manifest lacks chip shape")?;
    let mut fc = cfg.features.clone();
    fc.chip_size = size;
    fc.chip_periods = t;
    let (r0, c0, rows, cols) = px;
    let tiles = tile_region(r0, c0, rows, cols, size, (gt.n_rows, gt.n_cols))?;
    let maps: Vec<Vec<f32>> = tiles
        .par_iter()
        .map(|tile| -> Result<Vec<f32>> {
            let rec = probe(&gt, tile.row + size / 2, tile.col + size / 2, date);
            let chip = build_chip(&rec, &image, &fc)?;
            let mut x: Vec<f64> = chip.values.iter().copied().collect();
            manifest.normalize_sample(&mut x)?;
            let t = Tensor32::from_vec(x.iter().map(|&v| v as f32).collect());
            match net.predict(&t)? {
                Prediction::Map(m) => Ok(m.data()[size * size..].to_vec()),
                Prediction::Point(_) => bail!("segmentation model returned a point prediction"),
            }
        })
        .collect::<Result<_>>()?;
    let values = stitch(&tiles, &maps, r0, c0, rows, cols, DEFAULT_NODATA);
    Ok((gt, px, values, tiles, vec![ipath.to_path_buf()]))
}

pub fn predict_map(
    cfg: &PipelineConfig,
    checkpoint: Option<&Path>,
    region: Option<BBox>,
    date: Option<NaiveDate>,
) -> Result<MapOutcome> {
    let out = cfg.output_dir()?;
    let region = region.or(cfg.predict.region).context("no region: set [predict] region or pass --region")?;
    let date = date.or(cfg.predict.date).context("no date: set [predict] date or pass --date")?;
    let (net, manifest, ck_path) = load_model(cfg, checkpoint)?;
    let arch = net.config.arch;
    let (gt, (r0, c0, rows, cols), values, tiles, mut inputs) = if arch.is_segmentation() {
        predict_chips(&net, &manifest, cfg, date, &region)?
    } else {
        predict_points(&net, &manifest, cfg, date, &region)?
    };
    inputs.push(ck_path);

    let grid = gt.subgrid(r0, c0, rows, cols);
    let values4 = Array4::from_shape_vec((1, 1, rows, cols), values.clone())?;
    let raster = RasterStack::new(grid, vec!["p_breeding".into()], Vec::new(), values4, DEFAULT_NODATA)?;
    let summary = MapSummary {
        arch,
        date,
        region,
        row0: r0,
        col0: c0,
        rows,
        cols,
        tiles,
        nodata_cells: values.iter().filter(|&&v| v == DEFAULT_NODATA).count(),
        breeding_cells: values
            .iter()
            .filter(|&&v| v != DEFAULT_NODATA && v as f64 >= cfg.predict.threshold)
            .count(),
        threshold: cfg.predict.threshold,
    };

    let dir = out.join("map");
    fs::create_dir_all(&dir)?;
    let lgrs = dir.join("probability.lgrs");
    write_stack(&raster, &lgrs)?;
    let meta = dir.join("map.json");
    write_json(&meta, &summary)?;
    let mut outputs = vec![lgrs, meta];
    if cfg.predict.png {
        let png = dir.join("probability.png");
        let f = BufWriter::new(fs::File::create(&png)?);
        probability_png(f, &values, rows, cols, cfg.predict.threshold, DEFAULT_NODATA)?;
        outputs.push(png);
    }
    let ins: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    let outs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    write_run_manifest(out, "predict-map", cfg, &ins, &outs)?;
    Ok(MapOutcome { raster, summary })
}
