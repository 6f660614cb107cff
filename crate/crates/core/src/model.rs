//! Model description: backbone, extractor, prototypes and classifier.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ops::{matrix_dims, ConvGeometry};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
    Relu1,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::None => "none",
            Activation::Relu => "relu",
            Activation::Relu1 => "relu1",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "none" => Some(Activation::None),
            "relu" => Some(Activation::Relu),
            "relu1" => Some(Activation::Relu1),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    /// Kernel `[k_h, k_w, c_in, c_out]`.
    Conv2d {
        kernel: Tensor,
        stride: usize,
        padding: usize,
    },
    /// Weights `[out, in]` applied to the flattened input; output is `[1, 1, out]`.
    Affine { weights: Tensor },
}

/// One linear layer followed by an element-wise activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub kind: LayerKind,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn conv2d(
        kernel: Tensor,
        bias: Vec<f64>,
        stride: usize,
        padding: usize,
        activation: Activation,
    ) -> Self {
        Self {
            kind: LayerKind::Conv2d {
                kernel,
                stride,
                padding,
            },
            bias,
            activation,
        }
    }

    pub fn affine(weights: Tensor, bias: Vec<f64>, activation: Activation) -> Self {
        Self {
            kind: LayerKind::Affine { weights },
            bias,
            activation,
        }
    }

    /// Output shape for an `[h, w, c]` input, or a shape error.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let out = match &self.kind {
            LayerKind::Conv2d {
                kernel,
                stride,
                padding,
            } => ConvGeometry::new(input, kernel.shape(), *stride, *padding)?.output_shape(),
            LayerKind::Affine { weights } => {
                let (rows, cols) = matrix_dims(weights)?;
                if cols != input.iter().product::<usize>() {
                    return Err(Error::ShapeMismatch {
                        op: "affine layer",
                        left: weights.shape().to_vec(),
                        right: input.to_vec(),
                    });
                }
                vec![1, 1, rows]
            }
        };
        if self.bias.len() != out[2] {
            return Err(Error::ShapeMismatch {
                op: "layer bias",
                left: vec![self.bias.len()],
                right: vec![out[2]],
            });
        }
        Ok(out)
    }

    fn is_pointwise_conv(&self) -> bool {
        matches!(&self.kind, LayerKind::Conv2d { kernel, stride: 1, padding: 0 }
            if kernel.shape()[0] == 1 && kernel.shape()[1] == 1)
    }
}

/// Where a projected prototype came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Provenance {
    pub class: usize,
    pub index: usize,
    /// Position of the source image in the training list.
    pub image: usize,
    pub row: usize,
    pub col: usize,
}

/// `K` prototypes for each of `C` classes, each a vector of length `L`.
///
/// Prototype `(c, k)` has flat index `c * K + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    per_class: usize,
    classes: usize,
    channels: usize,
    values: Vec<f64>,
    provenance: Vec<Option<Provenance>>,
}

impl PrototypeSet {
    pub fn new(
        per_class: usize,
        classes: usize,
        channels: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if per_class == 0 || classes == 0 || channels == 0 {
            return Err(Error::InvalidModel(
                "prototype set needs K, C, L >= 1".into(),
            ));
        }
        let count = per_class * classes;
        if values.len() != count * channels {
            return Err(Error::InvalidShape {
                shape: vec![count, channels],
                len: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "prototype values".into(),
            });
        }
        Ok(Self {
            per_class,
            classes,
            channels,
            values,
            provenance: vec![None; count],
        })
    }

    pub fn with_provenance(mut self, provenance: Vec<Option<Provenance>>) -> Result<Self> {
        if provenance.len() != self.len() {
            return Err(Error::InvalidModel(format!(
                "{} provenance records for {} prototypes",
                provenance.len(),
                self.len()
            )));
        }
        for (p, rec) in provenance.iter().enumerate() {
            if let Some(rec) = rec {
                if self.class_of(p) != rec.class || p % self.per_class != rec.index {
                    return Err(Error::InvalidModel(format!(
                        "provenance of prototype {p} names class {} index {}",
                        rec.class, rec.index
                    )));
                }
            }
        }
        self.provenance = provenance;
        Ok(self)
    }

    /// `K`.
    pub fn per_class(&self) -> usize {
        self.per_class
    }

    /// `C`.
    pub fn classes(&self) -> usize {
        self.classes
    }

    /// `L`.
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.per_class * self.classes
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, class: usize, k: usize) -> usize {
        class * self.per_class + k
    }

    pub fn class_of(&self, prototype: usize) -> usize {
        prototype / self.per_class
    }

    pub fn value(&self, prototype: usize) -> &[f64] {
        &self.values[prototype * self.channels..(prototype + 1) * self.channels]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn provenance(&self, prototype: usize) -> Option<&Provenance> {
        self.provenance[prototype].as_ref()
    }

    pub fn provenance_records(&self) -> &[Option<Provenance>] {
        &self.provenance
    }
}

/// Final linear layer from the `K·C` distances to `C` logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    /// `[C, K·C]`, applied to raw distances.
    pub weights: Tensor,
    pub bias: Option<Vec<f64>>,
}

impl Classifier {
    pub fn weight(&self, class: usize, prototype: usize) -> f64 {
        let cols = self.weights.shape()[1];
        self.weights.data()[class * cols + prototype]
    }
}

/// Full prototype network `F ∘ Q ∘ Z ∘ V`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    input_shape: [usize; 3],
    backbone: Vec<Layer>,
    extractor: Vec<Layer>,
    prototypes: PrototypeSet,
    classifier: Classifier,
    latent_shape: [usize; 3],
}

impl ModelSpec {
    /// Validates the layer chain, extractor structure and classifier arity.
    pub fn new(
        input_shape: [usize; 3],
        backbone: Vec<Layer>,
        extractor: Vec<Layer>,
        prototypes: PrototypeSet,
        classifier: Classifier,
    ) -> Result<Self> {
        if input_shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidModel(format!(
                "input shape {input_shape:?} has a zero extent"
            )));
        }
        if extractor.len() != 2 || !extractor.iter().all(Layer::is_pointwise_conv) {
            return Err(Error::InvalidModel(
                "extractor must be exactly two 1x1 convolutions with stride 1 and no padding"
                    .into(),
            ));
        }
        let mut shape = input_shape.to_vec();
        for layer in backbone.iter().chain(&extractor) {
            shape = layer.output_shape(&shape)?;
        }
        if shape[2] != prototypes.channels() {
            return Err(Error::ShapeMismatch {
                op: "latent channels vs prototype length",
                left: shape.clone(),
                right: vec![prototypes.channels()],
            });
        }
        let classes = prototypes.classes();
        let count = prototypes.len();
        if classifier.weights.shape() != [classes, count] {
            return Err(Error::InvalidModel(format!(
                "classifier weights have shape {:?}, expected [{classes}, {count}] (C x K*C)",
                classifier.weights.shape()
            )));
        }
        if let Some(b) = &classifier.bias {
            if b.len() != classes {
                return Err(Error::InvalidModel(format!(
                    "classifier bias has length {}, expected {classes}",
                    b.len()
                )));
            }
        }
        Ok(Self {
            input_shape,
            backbone,
            extractor,
            prototypes,
            classifier,
            latent_shape: [shape[0], shape[1], shape[2]],
        })
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    /// `(H', W', L)`.
    pub fn latent_shape(&self) -> [usize; 3] {
        self.latent_shape
    }

    pub fn backbone(&self) -> &[Layer] {
        &self.backbone
    }

    pub fn extractor(&self) -> &[Layer] {
        &self.extractor
    }

    pub fn prototypes(&self) -> &PrototypeSet {
        &self.prototypes
    }

    pub fn classifier(&self) -> &Classifier {
        &self.classifier
    }

    pub fn classes(&self) -> usize {
        self.prototypes.classes()
    }

    /// True when the extractor ends in relu1, so latents lie in `[0, 1]^L`.
    pub fn is_bounded(&self) -> bool {
        self.extractor.last().map(|l| l.activation) == Some(Activation::Relu1)
    }

    /// Copy of this model with a replacement prototype set of the same dimensions.
    pub fn with_prototypes(&self, prototypes: PrototypeSet) -> Result<Self> {
        let cur = &self.prototypes;
        if (
            prototypes.per_class(),
            prototypes.classes(),
            prototypes.channels(),
        ) != (cur.per_class(), cur.classes(), cur.channels())
        {
            return Err(Error::InvalidModel(
                "replacement prototypes change K, C or L".into(),
            ));
        }
        Ok(Self {
            prototypes,
            ..self.clone()
        })
    }

    pub(crate) fn check_input(&self, image: &[usize]) -> Result<()> {
        if image != self.input_shape {
            return Err(Error::ShapeMismatch {
                op: "model input",
                left: image.to_vec(),
                right: self.input_shape.to_vec(),
            });
        }
        Ok(())
    }
}
