//! Versioned JSON model format.
//!
//! Numbers are written in shortest round-trip decimal form, so loading a saved
//! model reproduces every weight bit for bit.

use std::path::Path;

use protofaith_core::{
    Activation, Classifier, Layer, LayerKind, ModelSpec, PrototypeSet, Provenance, Tensor,
};
use serde::{Deserialize, Serialize};

use super::json;
use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "protofaith-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    version: u32,
    /// `[H, W, C]`.
    input: [usize; 3],
    backbone: Vec<LayerFile>,
    extractor: Vec<LayerFile>,
    prototypes: PrototypeFile,
    classifier: ClassifierFile,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
enum LayerFile {
    Conv2d {
        /// `[kh, kw, cin, cout]`.
        kernel_shape: [usize; 4],
        stride: usize,
        padding: usize,
        activation: String,
        weights: Vec<f64>,
        bias: Vec<f64>,
    },
    Affine {
        /// `[out, in]`.
        weight_shape: [usize; 2],
        activation: String,
        weights: Vec<f64>,
        bias: Vec<f64>,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PrototypeFile {
    per_class: usize,
    classes: usize,
    channels: usize,
    /// Row `c * K + k` holds prototype `(c, k)`.
    values: Vec<f64>,
    provenance: Vec<Option<ProvenanceFile>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProvenanceFile {
    class: usize,
    index: usize,
    image: usize,
    row: usize,
    col: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassifierFile {
    /// `[C, K·C]` row-major.
    weights: Vec<f64>,
    bias: Option<Vec<f64>>,
}

fn layer_file(path: &Path, field: &str, layer: &Layer) -> Result<LayerFile> {
    json::check_finite(path, &format!("{field}.bias"), &layer.bias)?;
    let activation = layer.activation.name().to_string();
    let bias = layer.bias.clone();
    Ok(match &layer.kind {
        LayerKind::Conv2d {
            kernel,
            stride,
            padding,
        } => {
            json::check_finite(path, &format!("{field}.weights"), kernel.data())?;
            let s = kernel.shape();
            LayerFile::Conv2d {
                kernel_shape: [s[0], s[1], s[2], s[3]],
                stride: *stride,
                padding: *padding,
                activation,
                weights: kernel.data().to_vec(),
                bias,
            }
        }
        LayerKind::Affine { weights } => {
            json::check_finite(path, &format!("{field}.weights"), weights.data())?;
            let s = weights.shape();
            LayerFile::Affine {
                weight_shape: [s[0], s[1]],
                activation,
                weights: weights.data().to_vec(),
                bias,
            }
        }
    })
}

fn activation(path: &Path, field: &str, name: &str) -> Result<Activation> {
    Activation::from_name(name).ok_or_else(|| {
        Error::format(
            path,
            format!(
                "{field}.activation: unknown activation '{name}' (expected none, relu or relu1)"
            ),
        )
    })
}

fn weights(path: &Path, field: &str, shape: Vec<usize>, values: Vec<f64>) -> Result<Tensor> {
    let expected: usize = shape.iter().product();
    if values.len() != expected {
        return Err(Error::format(
            path,
            format!(
                "{field}.weights: shape {shape:?} needs {expected} values, found {}",
                values.len()
            ),
        ));
    }
    Ok(Tensor::new(shape, values)?)
}

fn layer(path: &Path, field: &str, file: LayerFile) -> Result<Layer> {
    match file {
        LayerFile::Conv2d {
            kernel_shape,
            stride,
            padding,
            activation: a,
            weights: w,
            bias,
        } => {
            if stride == 0 {
                return Err(Error::format(
                    path,
                    format!("{field}.stride must be at least 1"),
                ));
            }
            let a = activation(path, field, &a)?;
            Ok(Layer::conv2d(
                weights(path, field, kernel_shape.to_vec(), w)?,
                bias,
                stride,
                padding,
                a,
            ))
        }
        LayerFile::Affine {
            weight_shape,
            activation: a,
            weights: w,
            bias,
        } => {
            let a = activation(path, field, &a)?;
            Ok(Layer::affine(
                weights(path, field, weight_shape.to_vec(), w)?,
                bias,
                a,
            ))
        }
    }
}

/// JSON text of `model`.
pub fn model_to_string(model: &ModelSpec) -> Result<String> {
    let path = Path::new("<model>");
    let layers = |field: &str, ls: &[Layer]| -> Result<Vec<LayerFile>> {
        ls.iter()
            .enumerate()
            .map(|(i, l)| layer_file(path, &format!("{field}[{i}]"), l))
            .collect()
    };
    let protos = model.prototypes();
    let classifier = model.classifier();
    json::check_finite(path, "classifier.weights", classifier.weights.data())?;
    if let Some(b) = &classifier.bias {
        json::check_finite(path, "classifier.bias", b)?;
    }
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        input: model.input_shape(),
        backbone: layers("backbone", model.backbone())?,
        extractor: layers("extractor", model.extractor())?,
        prototypes: PrototypeFile {
            per_class: protos.per_class(),
            classes: protos.classes(),
            channels: protos.channels(),
            values: protos.values().to_vec(),
            provenance: protos
                .provenance_records()
                .iter()
                .map(|r| {
                    r.map(|r| ProvenanceFile {
                        class: r.class,
                        index: r.index,
                        image: r.image,
                        row: r.row,
                        col: r.col,
                    })
                })
                .collect(),
        },
        classifier: ClassifierFile {
            weights: classifier.weights.data().to_vec(),
            bias: classifier.bias.clone(),
        },
    };
    Ok(json::render(&file))
}

/// Parses model JSON; `path` only labels errors.
pub fn model_from_str(text: &str, path: &Path) -> Result<ModelSpec> {
    let file: ModelFile = json::parse(path, text, MODEL_FORMAT, MODEL_VERSION)?;
    let layers = |field: &str, ls: Vec<LayerFile>| -> Result<Vec<Layer>> {
        ls.into_iter()
            .enumerate()
            .map(|(i, l)| layer(path, &format!("{field}[{i}]"), l))
            .collect()
    };
    let backbone = layers("backbone", file.backbone)?;
    let extractor = layers("extractor", file.extractor)?;

    let p = file.prototypes;
    let count = p.per_class * p.classes;
    if p.values.len() != count * p.channels {
        return Err(Error::format(
            path,
            format!(
                "prototypes.values: expected K·C·L = {}·{}·{} = {} values, found {}",
                p.per_class,
                p.classes,
                p.channels,
                count * p.channels,
                p.values.len()
            ),
        ));
    }
    let provenance = p
        .provenance
        .into_iter()
        .map(|r| {
            r.map(|r| Provenance {
                class: r.class,
                index: r.index,
                image: r.image,
                row: r.row,
                col: r.col,
            })
        })
        .collect();
    let prototypes = PrototypeSet::new(p.per_class, p.classes, p.channels, p.values)
        .and_then(|s| s.with_provenance(provenance))
        .map_err(|e| Error::format(path, format!("prototypes: {e}")))?;

    let c = file.classifier;
    if c.weights.len() != p.classes * count {
        return Err(Error::format(
            path,
            format!(
                "classifier.weights: expected C × K·C = {} × {count} = {} values (K·C = {count} prototypes), found {}",
                p.classes,
                p.classes * count,
                c.weights.len()
            ),
        ));
    }
    let classifier = Classifier {
        weights: Tensor::new(vec![p.classes, count], c.weights)?,
        bias: c.bias,
    };
    ModelSpec::new(file.input, backbone, extractor, prototypes, classifier)
        .map_err(|e| Error::format(path, format!("invalid model: {e}")))
}

pub fn save_model(model: &ModelSpec, path: &Path) -> Result<()> {
    json::write(path, &model_to_string(model)?)
}

pub fn load_model(path: &Path) -> Result<ModelSpec> {
    model_from_str(&json::read(path)?, path)
}
