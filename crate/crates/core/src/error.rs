use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two shapes that were required to agree did not.
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// A tensor was built from a shape whose extent product differs from the data length.
    InvalidShape {
        shape: Vec<usize>,
        len: usize,
    },
    /// A NaN or infinity appeared.
    NonFinite {
        context: String,
    },
    /// A non-finite value appeared while evaluating the given layer.
    NonFiniteLayer {
        stage: &'static str,
        layer: usize,
    },
    /// An operation that needs at least one element received none.
    Empty(&'static str),
    /// Variance below the clamping tolerance.
    NegativeVariance {
        value: f64,
    },
    ClassOutOfRange {
        class: usize,
        classes: usize,
    },
    PrototypeOutOfRange {
        index: usize,
        count: usize,
    },
    /// Separation cost needs prototypes of some other class.
    NoOtherClassPrototypes,
    /// Projection needs at least one training image for every class.
    ClassWithoutImages {
        class: usize,
    },
    /// Exact enumeration was asked for too many players.
    TooManyFeatures {
        features: usize,
        limit: usize,
    },
    /// The extractor does not end in a bounded activation, so no global maximum distance exists.
    UnboundedExtractor,
    /// The prototype has no recorded source image.
    MissingProvenance {
        prototype: usize,
    },
    /// Attribution maps combined together disagree on their inputs.
    InconsistentMaps(String),
    InvalidArgument(String),
    InvalidModel(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, left, right } => {
                write!(f, "{op}: shape mismatch between {left:?} and {right:?}")
            }
            Error::InvalidShape { shape, len } => {
                write!(f, "shape {shape:?} does not match data length {len}")
            }
            Error::NonFinite { context } => write!(f, "non-finite value in {context}"),
            Error::NonFiniteLayer { stage, layer } => {
                write!(f, "non-finite value produced by {stage} layer {layer}")
            }
            Error::Empty(what) => write!(f, "{what}: empty input"),
            Error::NegativeVariance { value } => write!(f, "negative variance {value}"),
            Error::ClassOutOfRange { class, classes } => {
                write!(
                    f,
                    "class {class} out of range (model has {classes} classes)"
                )
            }
            Error::PrototypeOutOfRange { index, count } => {
                write!(
                    f,
                    "prototype {index} out of range (model has {count} prototypes)"
                )
            }
            Error::NoOtherClassPrototypes => write!(f, "no other-class prototypes"),
            Error::ClassWithoutImages { class } => {
                write!(f, "class {class} has no training images")
            }
            Error::TooManyFeatures { features, limit } => write!(
                f,
                "exact enumeration refused: {features} features exceeds the limit of {limit}"
            ),
            Error::UnboundedExtractor => write!(
                f,
                "extractor does not end in relu1, maximum distance is undefined"
            ),
            Error::MissingProvenance { prototype } => {
                write!(f, "prototype {prototype} has no provenance record")
            }
            Error::InconsistentMaps(msg) => write!(f, "inconsistent attribution maps: {msg}"),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::InvalidModel(msg) => write!(f, "invalid model: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
