//! Labelled image sets, as used for prototype provenance.

use std::path::Path;

use protofaith_core::protopnet::LabeledImage;
use protofaith_core::Tensor;
use serde::{Deserialize, Serialize};

use super::json;
use crate::error::{Error, Result};

pub const DATASET_FORMAT: &str = "protofaith-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetFile {
    format: String,
    version: u32,
    shape: [usize; 3],
    images: Vec<ImageFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImageFile {
    label: usize,
    values: Vec<f64>,
}

/// All images must share one shape.
pub fn dataset_to_string(images: &[LabeledImage]) -> Result<String> {
    let path = Path::new("<dataset>");
    let first = images
        .first()
        .ok_or_else(|| Error::format(path, "dataset has no images"))?;
    let s = first.image.shape();
    if s.len() != 3 || images.iter().any(|i| i.image.shape() != s) {
        return Err(Error::format(
            path,
            "dataset images must share one [H, W, C] shape",
        ));
    }
    let files = images
        .iter()
        .enumerate()
        .map(|(n, i)| {
            json::check_finite(path, &format!("images[{n}].values"), i.image.data())?;
            Ok(ImageFile {
                label: i.label,
                values: i.image.data().to_vec(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(json::render(&DatasetFile {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        shape: [s[0], s[1], s[2]],
        images: files,
    }))
}

pub fn dataset_from_str(text: &str, path: &Path) -> Result<Vec<LabeledImage>> {
    let file: DatasetFile = json::parse(path, text, DATASET_FORMAT, DATASET_VERSION)?;
    let need: usize = file.shape.iter().product();
    file.images
        .into_iter()
        .enumerate()
        .map(|(n, i)| {
            if i.values.len() != need {
                return Err(Error::format(
                    path,
                    format!(
                        "images[{n}].values: shape {:?} needs {need} values, found {}",
                        file.shape,
                        i.values.len()
                    ),
                ));
            }
            Ok(LabeledImage {
                image: Tensor::new(file.shape.to_vec(), i.values)?,
                label: i.label,
            })
        })
        .collect()
}

pub fn save_dataset(images: &[LabeledImage], path: &Path) -> Result<()> {
    json::write(path, &dataset_to_string(images)?)
}

pub fn load_dataset(path: &Path) -> Result<Vec<LabeledImage>> {
    dataset_from_str(&json::read(path)?, path)
}
