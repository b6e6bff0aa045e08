//! Pipeline configuration: one TOML document with a section per stage.
//! Relative paths resolve against the directory holding the config file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use locust_core::curation::{BBox, SplitSpec};
use locust_core::features::FeatureConfig;
use locust_core::metrics::{Averaging, DEFAULT_THRESHOLD};
use locust_core::models::{Architecture, Hyper};
use locust_core::training::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Presence report CSV (`id,lon,lat,date,stage,instar`).
    pub observations: Option<PathBuf>,
    pub temporal_stack: Option<PathBuf>,
    pub static_stack: Option<PathBuf>,
    pub image_stack: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurationSection {
    pub buffer_radius: f64,
    pub ratio: f64,
    /// Defaults to the footprint of the temporal (or image) stack.
    pub sampling_bbox: Option<BBox>,
    pub splits: SplitSpec,
    pub seed: Option<u64>,
}

impl Default for CurationSection {
    fn default() -> Self {
        Self {
            buffer_radius: 0.2,
            ratio: 1.0,
            sampling_bbox: None,
            splits: SplitSpec::default(),
            seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub arch: Architecture,
    pub seed: Option<u64>,
    pub hyper: Hyper,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            arch: Architecture::Logreg,
            seed: None,
            hyper: Hyper::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    /// Averaging of the headline row printed by `evaluate`; the JSON has both.
    pub averaging: Averaging,
    pub threshold: f64,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            averaging: Averaging::Binary,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictSection {
    pub region: Option<BBox>,
    pub date: Option<NaiveDate>,
    /// Cells at or above this probability are drawn red in the PNG.
    pub threshold: f64,
    pub png: bool,
}

impl Default for PredictSection {
    fn default() -> Self {
        Self {
            region: None,
            date: None,
            threshold: DEFAULT_THRESHOLD,
            png: true,
        }
    }
}

/// Raw document. `train` stays untyped so its defaults can depend on the architecture.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Document {
    seed: Option<u64>,
    paths: Paths,
    curation: CurationSection,
    features: FeatureConfig,
    model: ModelSection,
    train: toml::Table,
    evaluate: EvaluateSection,
    predict: PredictSection,
}

/// Resolved configuration with seeds and paths filled in.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    pub curation: CurationSection,
    pub features: FeatureConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub evaluate: EvaluateSection,
    pub predict: PredictSection,
}

/// Command-line overrides.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path, ov: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base, ov).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(text: &str, base: &Path, ov: &Overrides) -> Result<Self> {
        let doc: Document = toml::from_str(text)?;
        let seed = ov.seed.or(doc.seed).unwrap_or(0);
        let pick = |own: Option<u64>| if ov.seed.is_some() { seed } else { own.unwrap_or(seed) };

        let mut paths = doc.paths;
        for p in [
            &mut paths.observations,
            &mut paths.temporal_stack,
            &mut paths.static_stack,
            &mut paths.image_stack,
            &mut paths.output_dir,
        ] {
            resolve(base, p);
        }
        if let Some(out) = &ov.output_dir {
            paths.output_dir = Some(out.clone());
        }

        let mut curation = doc.curation;
        curation.seed = Some(pick(curation.seed));
        let mut model = doc.model;
        model.seed = Some(pick(model.seed));

        let mut train = serde_json::to_value(TrainConfig::for_arch(model.arch))?;
        let explicit_seed = doc.train.contains_key("seed");
        for (k, v) in doc.train {
            train[k] = serde_json::to_value(v)?;
        }
        let mut train: TrainConfig = serde_json::from_value(train).context("[train] section")?;
        if ov.seed.is_some() || !explicit_seed {
            train.seed = seed;
        }

        let cfg = Self {
            seed,
            paths,
            curation,
            features: doc.features,
            model,
            train,
            evaluate: doc.evaluate,
            predict: doc.predict,
        };
        cfg.check()?;
        Ok(cfg)
    }

    /// Section-local checks that do not touch the filesystem.
    fn check(&self) -> Result<()> {
        self.curation.splits.validate()?;
        if !(self.curation.buffer_radius > 0.0) || !(self.curation.ratio > 0.0) {
            bail!("[curation] buffer_radius and ratio must be positive");
        }
        self.features.validate()?;
        self.train.validate()?;
        if !(0.0..=1.0).contains(&self.evaluate.threshold) || !(0.0..=1.0).contains(&self.predict.threshold) {
            bail!("thresholds must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn output_dir(&self) -> Result<&Path> {
        self.paths
            .output_dir
            .as_deref()
            .context("no output directory: set [paths] output_dir or pass --output-dir")
    }

    pub fn require<'a>(&self, p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
        let p = p.as_deref().with_context(|| format!("[paths] {key} is not set"))?;
        if !p.exists() {
            bail!("[paths] {key}: {} does not exist", p.display());
        }
        Ok(p)
    }

    pub fn model_seed(&self) -> u64 {
        self.model.seed.unwrap_or(self.seed)
    }

    pub fn curation_seed(&self) -> u64 {
        self.curation.seed.unwrap_or(self.seed)
    }
}
