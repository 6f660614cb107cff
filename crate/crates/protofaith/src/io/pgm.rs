//! Binary PGM (P5) heatmaps.
//!
//! Values are min-max scaled to `0..=maxval`; the original range is kept in a
//! `# min <a> max <b>` header comment so a reader can map the levels back.

use std::path::Path;

use protofaith_core::shapley::AttributionMap;
use protofaith_core::Tensor;

use crate::error::{Error, Result};

/// Accepted grey depths.
pub const MAXVALS: [u16; 2] = [255, 65535];

/// Encodes an `[H, W]` grid of finite values.
pub fn encode(values: &[f64], height: usize, width: usize, maxval: u16) -> Result<Vec<u8>> {
    let label = Path::new("<heatmap>");
    if !MAXVALS.contains(&maxval) {
        return Err(Error::format(
            label,
            format!("maxval must be 255 or 65535, got {maxval}"),
        ));
    }
    if values.len() != height * width {
        return Err(Error::format(
            label,
            format!("{} values for a {height}x{width} map", values.len()),
        ));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::format(label, "heatmap values must be finite"));
    }
    let (min, max) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let (min, max) = if values.is_empty() {
        (0.0, 0.0)
    } else {
        (min, max)
    };
    let top = f64::from(maxval);
    let level = |v: f64| -> u16 {
        if max > min {
            ((v - min) / (max - min) * top).round().clamp(0.0, top) as u16
        } else {
            maxval / 2 + 1
        }
    };
    let mut out =
        format!("P5\n# min {min:?} max {max:?}\n{width} {height}\n{maxval}\n").into_bytes();
    for &v in values {
        let g = level(v);
        if maxval == 255 {
            out.push(g as u8);
        } else {
            out.extend_from_slice(&g.to_be_bytes());
        }
    }
    Ok(out)
}

/// Heatmap of an attribution; scalar-granularity maps are summed over channels first.
pub fn heatmap_bytes(map: &AttributionMap, maxval: u16) -> Result<Vec<u8>> {
    let (h, w) = (map.shape[0], map.shape[1]);
    let values: Vec<f64> = if map.shape.len() == 3 {
        map.values
            .chunks(map.shape[2])
            .map(|c| c.iter().sum())
            .collect()
    } else {
        map.values.clone()
    };
    encode(&values, h, w, maxval)
}

pub fn render_heatmap(map: &AttributionMap, path: &Path, maxval: u16) -> Result<()> {
    let bytes = heatmap_bytes(map, maxval)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Decodes a P5 file into an `[H, W]` tensor.
///
/// With a `# min a max b` comment the levels map back onto `[a, b]`,
/// otherwise onto `[0, 1]`.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let mut pos = 0;
    let mut line = 1;
    let err = |line: usize, offset: usize, message: &str| Error::Parse {
        path: path.to_path_buf(),
        line,
        offset,
        message: message.into(),
    };
    let mut range: Option<(f64, f64)> = None;
    let mut fields: Vec<usize> = Vec::new();
    let mut magic = false;
    while fields.len() < 3 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            if bytes[pos] == b'\n' {
                line += 1;
            }
            pos += 1;
        }
        if pos >= bytes.len() {
            return Err(err(line, pos, "unexpected end of file in PGM header"));
        }
        if bytes[pos] == b'#' {
            let end = bytes[pos..]
                .iter()
                .position(|&b| b == b'\n')
                .map_or(bytes.len(), |e| pos + e);
            let comment = String::from_utf8_lossy(&bytes[pos + 1..end]);
            let parts: Vec<&str> = comment.split_ascii_whitespace().collect();
            if let ["min", a, "max", b] = parts.as_slice() {
                match (a.parse::<f64>(), b.parse::<f64>()) {
                    (Ok(a), Ok(b)) if a.is_finite() && b.is_finite() => range = Some((a, b)),
                    _ => return Err(err(line, pos, "malformed or non-finite range comment")),
                }
            }
            pos = end;
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let token = std::str::from_utf8(&bytes[start..pos]).unwrap_or("");
        if !magic {
            if token != "P5" {
                return Err(err(line, start, "not a binary PGM (P5)"));
            }
            magic = true;
            continue;
        }
        fields.push(
            token
                .parse()
                .map_err(|_| err(line, start, "malformed PGM header field"))?,
        );
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let (width, height, maxval) = (fields[0], fields[1], fields[2]);
    if maxval == 0 || maxval > 65535 {
        return Err(err(line, pos, "PGM maxval must lie in 1..=65535"));
    }
    let depth = if maxval < 256 { 1 } else { 2 };
    let need = width * height * depth;
    if bytes.len() < pos + need {
        return Err(err(
            line,
            bytes.len(),
            "unexpected end of file in PGM raster",
        ));
    }
    let raster = &bytes[pos..pos + need];
    let top = maxval as f64;
    let (lo, hi) = range.unwrap_or((0.0, 1.0));
    let values = (0..width * height)
        .map(|i| {
            let g = if depth == 1 {
                raster[i] as f64
            } else {
                u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]) as f64
            };
            if hi > lo {
                lo + g / top * (hi - lo)
            } else {
                lo
            }
        })
        .collect();
    Ok(Tensor::new(vec![height, width], values)?)
}
