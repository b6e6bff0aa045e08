use crate::features::FeatureSet;
use crate::num::Scalar;
use crate::tensorkit::Tensor;

/// One training or evaluation sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Example<T> {
    pub id: String,
    /// Flat input vector laid out per [`super::InputShape`].
    pub x: Tensor<T>,
    pub label: usize,
    /// Per-pixel targets for segmentation; `None` entries are ignored.
    pub mask: Option<Vec<Option<usize>>>,
}

impl<T: Scalar> Example<T> {
    pub fn point(id: impl Into<String>, x: Vec<T>, label: usize) -> Self {
        Self {
            id: id.into(),
            x: Tensor::from_vec(x),
            label,
            mask: None,
        }
    }
}

pub fn examples_from_feature_set<T: Scalar>(fs: &FeatureSet) -> Vec<Example<T>> {
    fs.samples
        .iter()
        .map(|s| Example {
            id: s.id.clone(),
            x: Tensor::from_vec(s.values.iter().map(|&v| T::of(v as f64)).collect()),
            label: s.label as usize,
            mask: (!s.mask.is_empty()).then(|| {
                s.mask
                    .iter()
                    .map(|&m| (m >= 0).then_some(m as usize))
                    .collect()
            }),
        })
        .collect()
}
