//! `synth` verb: writes a small self-contained scenario (reports, rasters and
//! a ready-to-run config) so the pipeline can be exercised without real data.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Result;
use serde::Serialize;

use locust_core::curation::{BBox, ObservationRecord, SplitSpec};
use locust_core::geodata::write_stack;
use locust_core::models::Architecture;
use locust_core::synth::{chip_scene, planted_scene, ChipSceneConfig, PlantedConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Scenario {
    /// Daily variable stacks for the point models.
    Points,
    /// Multi-band image stack for the segmentation model.
    Chips,
}

#[derive(Clone, Debug)]
pub struct SynthOptions {
    pub scenario: Scenario,
    pub sites: Option<usize>,
    pub static_vars: Option<usize>,
    pub chip_size: Option<usize>,
    pub seed: u64,
}

#[derive(Serialize)]
struct PresenceRow<'a> {
    id: &'a str,
    lon: f64,
    lat: f64,
    date: String,
    stage: &'a str,
    instar: &'a str,
}

fn write_presences(path: &Path, records: &[ObservationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(PresenceRow {
            id: &r.id,
            lon: r.lon,
            lat: r.lat,
            date: r.obs_date.format("%Y-%m-%d").to_string(),
            stage: &r.stage,
            instar: &r.instar,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct SynthPaths {
    observations: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    temporal_stack: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    static_stack: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    image_stack: Option<String>,
    output_dir: String,
}

#[derive(Serialize)]
struct SynthCuration {
    buffer_radius: f64,
    sampling_bbox: BBox,
    splits: SplitSpec,
}

#[derive(Serialize)]
struct SynthFeatures {
    chip_size: usize,
}

#[derive(Serialize)]
struct SynthModel {
    arch: Architecture,
}

#[derive(Serialize)]
struct SynthPredict {
    region: BBox,
    date: String,
}

#[derive(Serialize)]
struct SynthConfig {
    seed: u64,
    paths: SynthPaths,
    curation: SynthCuration,
    features: SynthFeatures,
    model: SynthModel,
    predict: SynthPredict,
}

/// Writes the scenario into `dir` and returns the path of its config file.
pub fn write_scenario(dir: &Path, opts: &SynthOptions) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let config = match opts.scenario {
        Scenario::Points => {
            let d = PlantedConfig::default();
            let pc = PlantedConfig {
                sites: opts.sites.unwrap_or(d.sites),
                static_vars: opts.static_vars.unwrap_or(d.static_vars),
                seed: opts.seed,
                ..d
            };
            let scene = planted_scene(&pc)?;
            write_presences(&dir.join("presences.csv"), &scene.presences)?;
            write_stack(&scene.temporal, &dir.join("temporal.lgrs"))?;
            write_stack(&scene.static_, &dir.join("static.lgrs"))?;
            let last = *scene.temporal.timestamps.last().expect("non-empty stack");
            let (west, east, south, north) = scene.temporal.transform.footprint();
            SynthConfig {
                seed: opts.seed,
                paths: SynthPaths {
                    observations: "presences.csv".into(),
                    temporal_stack: Some("temporal.lgrs".into()),
                    static_stack: Some("static.lgrs".into()),
                    image_stack: None,
                    output_dir: "out".into(),
                },
                curation: SynthCuration {
                    buffer_radius: 0.45,
                    sampling_bbox: scene.interior,
                    splits: scene.splits,
                },
                features: SynthFeatures { chip_size: 224 },
                model: SynthModel { arch: Architecture::Logreg },
                predict: SynthPredict {
                    region: BBox {
                        west: west + 0.25 * (east - west),
                        east: east - 0.25 * (east - west),
                        south: south + 0.25 * (north - south),
                        north: north - 0.25 * (north - south),
                    },
                    date: last.format("%Y-%m-%d").to_string(),
                },
            }
        }
        Scenario::Chips => {
            let d = ChipSceneConfig::default();
            let cc = ChipSceneConfig {
                sites: opts.sites.unwrap_or(d.sites),
                chip_size: opts.chip_size.unwrap_or(d.chip_size),
                seed: opts.seed,
                ..d
            };
            let scene = chip_scene(&cc)?;
            write_presences(&dir.join("presences.csv"), &scene.presences)?;
            write_stack(&scene.image, &dir.join("image.lgrs"))?;
            let last = *scene.image.timestamps.last().expect("non-empty stack");
            let (west, east, south, north) = scene.image.transform.footprint();
            SynthConfig {
                seed: opts.seed,
                paths: SynthPaths {
                    observations: "presences.csv".into(),
                    temporal_stack: None,
                    static_stack: None,
                    image_stack: Some("image.lgrs".into()),
                    output_dir: "out".into(),
                },
                curation: SynthCuration {
                    buffer_radius: 1.5 * cc.disk_radius as f64 * cc.resolution,
                    sampling_bbox: scene.interior,
                    splits: scene.splits,
                },
                features: SynthFeatures { chip_size: cc.chip_size },
                model: SynthModel { arch: Architecture::PrithviLb },
                predict: SynthPredict {
                    region: BBox { west, east, south, north },
                    date: last.format("%Y-%m-%d").to_string(),
                },
            }
        }
    };
    let path = dir.join("config.toml");
    fs::write(&path, toml::to_string(&config)?)?;
    Ok(path)
}
