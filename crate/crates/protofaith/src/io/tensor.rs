//! Plain-text tensors: a `shape` line, then row-major values.

use std::fmt::Write as _;
use std::path::Path;

use protofaith_core::Tensor;

use super::{json, pgm};
use crate::error::{Error, Result};

/// Text of `tensor`, one line per leading index.
pub fn tensor_to_string(tensor: &Tensor) -> String {
    let shape = tensor.shape();
    let mut out = String::from("shape");
    for d in shape {
        write!(out, " {d}").unwrap();
    }
    out.push('\n');
    let row = if shape.len() > 1 {
        tensor.len() / shape[0].max(1)
    } else {
        tensor.len()
    };
    for chunk in tensor.data().chunks(row.max(1)) {
        let line: Vec<String> = chunk.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

struct Token<'a> {
    text: &'a str,
    line: usize,
    offset: usize,
}

fn tokens(text: &str) -> impl Iterator<Item = Token<'_>> {
    let mut line_start = 0;
    text.split_inclusive('\n')
        .enumerate()
        .flat_map(move |(i, line)| {
            let start = line_start;
            line_start += line.len();
            line.split_ascii_whitespace().map(move |t| Token {
                text: t,
                line: i + 1,
                // tokens are subslices of `line`
                offset: start + (t.as_ptr() as usize - line.as_ptr() as usize),
            })
        })
}

/// Parses the text format; `path` only labels errors.
pub fn tensor_from_str(text: &str, path: &Path) -> Result<Tensor> {
    let err = |line: usize, offset: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        offset,
        message,
    };
    let end_line = text.lines().count().max(1);
    let mut toks = tokens(text).peekable();
    match toks.next() {
        Some(t) if t.text == "shape" => {}
        Some(t) => {
            return Err(err(
                t.line,
                t.offset,
                format!("expected 'shape', found '{}'", t.text),
            ))
        }
        None => return Err(err(1, 0, "empty tensor file".into())),
    }
    let mut shape = Vec::new();
    while let Some(t) = toks.peek() {
        if t.line != 1 {
            break;
        }
        let dim = t
            .text
            .parse::<usize>()
            .map_err(|_| err(t.line, t.offset, format!("bad extent '{}'", t.text)))?;
        shape.push(dim);
        toks.next();
    }
    if shape.is_empty() {
        return Err(err(
            1,
            5.min(text.len()),
            "shape line lists no extents".into(),
        ));
    }
    let expected: usize = shape.iter().product();
    let mut values = Vec::with_capacity(expected);
    for t in toks {
        if values.len() == expected {
            return Err(err(
                t.line,
                t.offset,
                format!("more than the {expected} values of shape {shape:?}"),
            ));
        }
        let v = t
            .text
            .parse::<f64>()
            .map_err(|_| err(t.line, t.offset, format!("malformed number '{}'", t.text)))?;
        if !v.is_finite() {
            return Err(err(
                t.line,
                t.offset,
                format!("non-finite value '{}'", t.text),
            ));
        }
        values.push(v);
    }
    if values.len() < expected {
        return Err(err(
            end_line,
            text.len(),
            format!(
                "unexpected end of file: shape {shape:?} needs {expected} values, found {}",
                values.len()
            ),
        ));
    }
    Ok(Tensor::new(shape, values)?)
}

pub fn save_tensor(tensor: &Tensor, path: &Path) -> Result<()> {
    json::check_finite(path, "tensor", tensor.data())?;
    json::write(path, &tensor_to_string(tensor))
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    tensor_from_str(&json::read(path)?, path)
}

/// An `[H, W, C]` image from a tensor file or a binary PGM.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let tensor = if bytes.starts_with(b"P5") {
        pgm::decode(&bytes, path)?
    } else {
        let text = String::from_utf8(bytes).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            offset: e.utf8_error().valid_up_to(),
            message: "tensor file is not UTF-8".into(),
        })?;
        tensor_from_str(&text, path)?
    };
    if tensor.shape().len() == 2 {
        let (h, w) = (tensor.shape()[0], tensor.shape()[1]);
        return Ok(tensor.reshape(vec![h, w, 1])?);
    }
    if tensor.shape().len() != 3 {
        return Err(Error::format(
            path,
            format!("image must be [H, W, C], found shape {:?}", tensor.shape()),
        ));
    }
    Ok(tensor)
}
