//! Featurization of curated record sets into per-split [`FeatureSet`]s.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    build_chip, build_static_block, build_temporal_block, flatten_concat, FeatureConfig,
    FeatureError, FeatureSample, FeatureSet, SampleKind,
};
use crate::curation::{CuratedRecord, Split};
use crate::geodata::RasterStack;

pub struct PointStacks<'a> {
    pub temporal: &'a RasterStack,
    pub static_: &'a RasterStack,
}

pub struct ChipStacks<'a> {
    pub image: &'a RasterStack,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub id: String,
    pub split: Split,
    pub reason: String,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Per-group population statistics; `group(i)` maps a flat position to its variable.
    fn fit<'a>(
        samples: impl Iterator<Item = &'a [f64]>,
        n_groups: usize,
        group: impl Fn(usize) -> usize,
    ) -> Self {
        let mut sum = vec![0.0; n_groups];
        let mut sq = vec![0.0; n_groups];
        let mut cnt = vec![0usize; n_groups];
        for s in samples {
            for (i, &v) in s.iter().enumerate() {
                let g = group(i);
                sum[g] += v;
                sq[g] += v * v;
                cnt[g] += 1;
            }
        }
        let mean: Vec<f64> = (0..n_groups).map(|g| sum[g] / cnt[g].max(1) as f64).collect();
        let std = (0..n_groups)
            .map(|g| {
                let var = (sq[g] / cnt[g].max(1) as f64 - mean[g] * mean[g]).max(0.0);
                let sd = var.sqrt();
                if sd < 1e-12 {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Self { mean, std }
    }

    fn apply(&self, x: &mut [f64], group: impl Fn(usize) -> usize) {
        for (i, v) in x.iter_mut().enumerate() {
            let g = group(i);
            *v = (*v - self.mean[g]) / self.std[g];
        }
    }
}

/// z-score statistics fitted on the training split.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temporal: Option<NormStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub static_: Option<NormStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bands: Option<NormStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    pub file: String,
    pub count: usize,
    pub breeding: usize,
    pub non_breeding: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureManifest {
    pub kind: SampleKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temporal_shape: Option<[usize; 4]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub static_shape: Option<[usize; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flat_len: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chip_shape: Option<[usize; 4]>,
    #[serde(default)]
    pub temporal_variables: Vec<String>,
    #[serde(default)]
    pub static_variables: Vec<String>,
    #[serde(default)]
    pub bands: Vec<String>,
    pub n: usize,
    pub history_days: usize,
    pub label_radius: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalization: Option<Normalization>,
    /// Split name to file info; file names are filled in by the writer.
    #[serde(default)]
    pub splits: BTreeMap<Split, SplitFile>,
}

impl FeatureManifest {
    /// Length of one sample's value vector.
    pub fn sample_len(&self) -> usize {
        match self.kind {
            SampleKind::Point => self.flat_len.unwrap_or(0),
            SampleKind::Chip => self.chip_shape.map_or(0, |s| s.iter().product()),
        }
    }

    /// Applies the stored training-split statistics to a raw sample, as
    /// featurization did; a no-op when normalization was disabled.
    pub fn normalize_sample(&self, x: &mut [f64]) -> Result<(), FeatureError> {
        if x.len() != self.sample_len() {
            return Err(FeatureError::InvalidConfig(format!(
                "sample has {} values, manifest expects {}",
                x.len(),
                self.sample_len()
            )));
        }
        let Some(norm) = &self.normalization else {
            return Ok(());
        };
        let missing = || FeatureError::InvalidConfig("manifest normalization is incomplete".into());
        match self.kind {
            SampleKind::Point => {
                let [t, n, _, v] = self.temporal_shape.ok_or_else(missing)?;
                let s = self.static_shape.ok_or_else(missing)?[2];
                let (a, z) = x.split_at_mut(t * n * n * v);
                norm.temporal.as_ref().ok_or_else(missing)?.apply(a, |i| i % v);
                norm.static_.as_ref().ok_or_else(missing)?.apply(z, |i| i % s);
            }
            SampleKind::Chip => {
                let [_, b, h, w] = self.chip_shape.ok_or_else(missing)?;
                norm.bands.as_ref().ok_or_else(missing)?.apply(x, |i| (i / (h * w)) % b);
            }
        }
        Ok(())
    }
}

pub struct Featurized {
    pub sets: BTreeMap<Split, FeatureSet>,
    pub rejections: Vec<Rejection>,
    pub manifest: FeatureManifest,
}

struct Built {
    id: String,
    split: Split,
    label: u8,
    values: Vec<f64>,
    mask: Vec<i8>,
}

fn collect(
    results: Vec<(&CuratedRecord, Result<(Vec<f64>, Vec<i8>), FeatureError>)>,
) -> (Vec<Built>, Vec<Rejection>) {
    let mut built = Vec::new();
    let mut rejections = Vec::new();
    for (c, r) in results {
        match r {
            Ok((values, mask)) => built.push(Built {
                id: c.record.id.clone(),
                split: c.split,
                label: c.record.label,
                values,
                mask,
            }),
            Err(e) => rejections.push(Rejection {
                id: c.record.id.clone(),
                split: c.split,
                reason: e.reason().to_string(),
                detail: e.to_string(),
            }),
        }
    }
    rejections.sort_by(|a, b| a.id.cmp(&b.id));
    (built, rejections)
}

fn into_sets(
    built: Vec<Built>,
    kind: SampleKind,
    sample_len: usize,
    mask_len: usize,
    manifest: &mut FeatureManifest,
) -> BTreeMap<Split, FeatureSet> {
    let mut sets: BTreeMap<Split, FeatureSet> = Split::ALL
        .into_iter()
        .map(|s| (s, FeatureSet::new(kind, sample_len, mask_len)))
        .collect();
    for b in built {
        sets.get_mut(&b.split).expect("all splits").samples.push(FeatureSample {
            id: b.id,
            label: b.label,
            values: b.values.iter().map(|&v| v as f32).collect(),
            mask: b.mask,
        });
    }
    for (split, set) in sets.iter_mut() {
        set.samples.sort_by(|a, b| a.id.cmp(&b.id));
        let breeding = set.samples.iter().filter(|s| s.label == 1).count();
        manifest.splits.insert(
            *split,
            SplitFile {
                file: String::new(),
                count: set.len(),
                breeding,
                non_breeding: set.len() - breeding,
            },
        );
    }
    sets
}

fn train_rows(built: &[Built]) -> impl Iterator<Item = &[f64]> {
    built
        .iter()
        .filter(|b| b.split == Split::Train)
        .map(|b| b.values.as_slice())
}

fn require_train(built: &[Built]) -> Result<(), FeatureError> {
    if built.iter().any(|b| b.split == Split::Train) {
        Ok(())
    } else {
        Err(FeatureError::InvalidConfig(
            "normalization needs at least one training sample".into(),
        ))
    }
}

pub fn featurize_points(
    records: &[CuratedRecord],
    stacks: &PointStacks,
    cfg: &FeatureConfig,
) -> Result<Featurized, FeatureError> {
    cfg.validate()?;
    if !stacks.static_.is_static() {
        return Err(FeatureError::InvalidConfig("static stack has timestamps".into()));
    }
    let (t, n) = (cfg.time_steps(), cfg.n);
    let v = stacks.temporal.variables.len();
    let s = stacks.static_.variables.len();
    let results: Vec<_> = records
        .par_iter()
        .map(|c| {
            let r = build_temporal_block(&c.record, stacks.temporal, cfg).and_then(|tb| {
                let sb = build_static_block(&c.record, stacks.static_, cfg)?;
                Ok((flatten_concat(&tb, &sb).values, Vec::new()))
            });
            (c, r)
        })
        .collect();
    let (mut built, rejections) = collect(results);

    let nt = t * n * n * v;
    let normalization = if cfg.normalize {
        require_train(&built)?;
        let temporal = NormStats::fit(train_rows(&built).map(|x| &x[..nt]), v, |i| i % v);
        let static_ = NormStats::fit(train_rows(&built).map(|x| &x[nt..]), s, |i| i % s);
        for b in &mut built {
            let (a, z) = b.values.split_at_mut(nt);
            temporal.apply(a, |i| i % v);
            static_.apply(z, |i| i % s);
        }
        Some(Normalization {
            temporal: Some(temporal),
            static_: Some(static_),
            bands: None,
        })
    } else {
        None
    };

    let mut manifest = FeatureManifest {
        kind: SampleKind::Point,
        temporal_shape: Some([t, n, n, v]),
        static_shape: Some([n, n, s]),
        flat_len: Some(nt + n * n * s),
        chip_shape: None,
        temporal_variables: stacks.temporal.variables.clone(),
        static_variables: stacks.static_.variables.clone(),
        bands: Vec::new(),
        n,
        history_days: cfg.history_days,
        label_radius: cfg.label_radius,
        normalization,
        splits: BTreeMap::new(),
    };
    let sets = into_sets(built, SampleKind::Point, nt + n * n * s, 0, &mut manifest);
    Ok(Featurized {
        sets,
        rejections,
        manifest,
    })
}

pub fn featurize_chips(
    records: &[CuratedRecord],
    stacks: &ChipStacks,
    cfg: &FeatureConfig,
) -> Result<Featurized, FeatureError> {
    cfg.validate()?;
    let (t, b, hw) = (cfg.chip_periods, stacks.image.variables.len(), cfg.chip_size);
    let plane = hw * hw;
    let results: Vec<_> = records
        .par_iter()
        .map(|c| {
            let r = build_chip(&c.record, stacks.image, cfg)
                .map(|chip| (chip.values.iter().copied().collect(), chip.mask.iter().copied().collect()));
            (c, r)
        })
        .collect();
    let (mut built, rejections) = collect(results);
    let band = |i: usize| (i / plane) % b;
    let normalization = if cfg.normalize {
        require_train(&built)?;
        let bands = NormStats::fit(train_rows(&built), b, band);
        for x in &mut built {
            bands.apply(&mut x.values, band);
        }
        Some(Normalization {
            temporal: None,
            static_: None,
            bands: Some(bands),
        })
    } else {
        None
    };
    let mut manifest = FeatureManifest {
        kind: SampleKind::Chip,
        temporal_shape: None,
        static_shape: None,
        flat_len: None,
        chip_shape: Some([t, b, hw, hw]),
        temporal_variables: Vec::new(),
        static_variables: Vec::new(),
        bands: stacks.image.variables.clone(),
        n: cfg.n,
        history_days: cfg.chip_periods * cfg.chip_period_days,
        label_radius: cfg.label_radius,
        normalization,
        splits: BTreeMap::new(),
    };
    let sets = into_sets(built, SampleKind::Chip, t * b * plane, plane, &mut manifest);
    Ok(Featurized {
        sets,
        rejections,
        manifest,
    })
}
