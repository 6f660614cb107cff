//! File formats: JSON models and datasets, text tensors, PGM heatmaps and CSV tables.

mod dataset;
mod json;
mod model;
pub mod pgm;
pub mod tables;
mod tensor;

pub use dataset::{
    dataset_from_str, dataset_to_string, load_dataset, save_dataset, DATASET_FORMAT,
    DATASET_VERSION,
};
pub use model::{
    load_model, model_from_str, model_to_string, save_model, MODEL_FORMAT, MODEL_VERSION,
};
pub use pgm::render_heatmap;
pub use tensor::{load_image, load_tensor, save_tensor, tensor_from_str, tensor_to_string};
