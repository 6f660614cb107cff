//! The original upsampled-distance-map explanation.
//!
//! The distance map of one prototype is flipped against the global maximum
//! distance `L`, bilinearly upscaled to the input size and cropped to the
//! bounding box of its top-5% region.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::protopnet;
use crate::shapley::{AttributionMap, Granularity, Method, Target};
use crate::tensor::Tensor;

/// Percentile used for the crop.
pub const CROP_PERCENTILE: f64 = 95.0;

/// Inclusive pixel bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropBox {
    pub row_min: usize,
    pub row_max: usize,
    pub col_min: usize,
    pub col_max: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LegacyMap {
    pub prototype: usize,
    /// `‖p - z_ij‖²` over `[H', W']`.
    pub raw: Tensor,
    /// `L - raw`.
    pub flipped: Tensor,
    pub max_distance: f64,
    /// `[H, W]`.
    pub upscaled: Tensor,
    pub threshold: f64,
    pub crop: CropBox,
    /// Target distance of the full image and of the all-baseline image.
    full_distance: f64,
    empty_distance: f64,
}

/// Bilinear resize of an `[h, w]` grid with corner alignment.
pub fn upscale_bilinear(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let coord = |dst: usize, out: usize, input: usize| -> (usize, usize, f64) {
        if out <= 1 || input <= 1 {
            return (0, 0, 0.0);
        }
        let pos = dst as f64 * (input - 1) as f64 / (out - 1) as f64;
        let lo = (libm::floor(pos) as usize).min(input - 1);
        let hi = (lo + 1).min(input - 1);
        (lo, hi, pos - lo as f64)
    };
    let mut out = Vec::with_capacity(out_h * out_w);
    for r in 0..out_h {
        let (r0, r1, tr) = coord(r, out_h, h);
        for c in 0..out_w {
            let (c0, c1, tc) = coord(c, out_w, w);
            let top = src[r0 * w + c0] * (1.0 - tc) + src[r0 * w + c1] * tc;
            let bottom = src[r1 * w + c0] * (1.0 - tc) + src[r1 * w + c1] * tc;
            out.push(top * (1.0 - tr) + bottom * tr);
        }
    }
    out
}

/// Percentile with linear interpolation between order statistics (rank `p/100 · (n-1)`).
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("percentile"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = libm::floor(rank) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let t = rank - lo as f64;
    Ok(sorted[lo] + (sorted[hi] - sorted[lo]) * t)
}

fn crop_box(values: &[f64], w: usize, threshold: f64) -> CropBox {
    let mut b: Option<CropBox> = None;
    for (idx, _) in values.iter().enumerate().filter(|(_, &v)| v >= threshold) {
        let (r, c) = (idx / w, idx % w);
        b = Some(match b {
            None => CropBox {
                row_min: r,
                row_max: r,
                col_min: c,
                col_max: c,
            },
            Some(b) => CropBox {
                row_min: b.row_min.min(r),
                row_max: b.row_max.max(r),
                col_min: b.col_min.min(c),
                col_max: b.col_max.max(c),
            },
        });
    }
    b.expect("the maximum is always at or above any percentile")
}

/// Legacy explanation of prototype `prototype` for `image`.
pub fn legacy_map(model: &ModelSpec, image: &Tensor, prototype: usize) -> Result<LegacyMap> {
    if !model.is_bounded() {
        return Err(Error::UnboundedExtractor);
    }
    let count = model.prototypes().len();
    if prototype >= count {
        return Err(Error::PrototypeOutOfRange {
            index: prototype,
            count,
        });
    }
    let [h, w, _] = model.input_shape();
    let [lh, lw, l] = model.latent_shape();
    let out = protopnet::forward(model, image)?;
    let raw = protopnet::distance_map(&out.latent, model.prototypes().value(prototype))?;
    let max_distance = l as f64;
    let flipped: Vec<f64> = raw.iter().map(|d| max_distance - d).collect();
    let upscaled = upscale_bilinear(&flipped, lh, lw, h, w);
    let threshold = percentile(&upscaled, CROP_PERCENTILE)?;
    let crop = crop_box(&upscaled, w, threshold);

    let empty = Tensor::zeros(image.shape().to_vec());
    let empty_distance = protopnet::forward(model, &empty)?.distances.values[prototype];
    Ok(LegacyMap {
        prototype,
        raw: Tensor::new(alloc::vec![lh, lw], raw)?,
        flipped: Tensor::new(alloc::vec![lh, lw], flipped)?,
        max_distance,
        upscaled: Tensor::new(alloc::vec![h, w], upscaled)?,
        threshold,
        crop,
        full_distance: out.distances.values[prototype],
        empty_distance,
    })
}

/// Reads the upscaled flipped map as a per-pixel attribution.
///
/// The completeness residual is taken against the prototype distance with a
/// zero baseline; it is generally far from zero.
pub fn legacy_as_attribution(map: &LegacyMap) -> AttributionMap {
    let values = map.upscaled.data().to_vec();
    let residual = values.iter().sum::<f64>() - (map.full_distance - map.empty_distance);
    AttributionMap {
        shape: map.upscaled.shape().to_vec(),
        values,
        method: Method::Legacy,
        target: Target::Distance(map.prototype),
        granularity: Granularity::Pixel,
        baseline: 0.0,
        residual,
        std_error: None,
    }
}
