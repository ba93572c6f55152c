//! Plain-text model checkpoints.
//!
//! ```text
//! oodlab-model v1
//! dims=2,16,3 activation=relu k=3
//! W0 <row-major values>
//! b0 <values>
//! W1 ...
//! ```
//!
//! Values are written with 17 significant digits so that reading a checkpoint
//! back reproduces every parameter bit for bit.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{Activation, Dense, Model, ModelSpec};

pub const MODEL_MAGIC: &str = "oodlab-model v1";

/// Formats a float with 17 significant digits.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn model_to_string(model: &Model) -> String {
    let spec = model.spec();
    let dims: Vec<String> = spec.layer_dims().iter().map(ToString::to_string).collect();
    let mut out = String::new();
    out.push_str(MODEL_MAGIC);
    out.push('\n');
    out.push_str(&format!(
        "dims={} activation={} k={}\n",
        dims.join(","),
        spec.activation(),
        spec.num_classes()
    ));
    for (i, layer) in model.layers().iter().enumerate() {
        write_tensor(&mut out, &format!("W{i}"), layer.weights.as_slice());
        write_tensor(&mut out, &format!("b{i}"), &layer.biases);
    }
    out
}

fn write_tensor(out: &mut String, name: &str, values: &[f64]) {
    out.push_str(name);
    for v in values {
        out.push(' ');
        out.push_str(&fmt_f64(*v));
    }
    out.push('\n');
}

pub fn model_from_str(text: &str, origin: &str) -> Result<Model> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let perr = |line: usize, msg: String| Error::parse(origin, line + 1, msg);

    let (n, magic) = lines
        .next()
        .ok_or_else(|| perr(0, "empty checkpoint".into()))?;
    if magic.trim() != MODEL_MAGIC {
        return Err(perr(
            n,
            format!("expected `{MODEL_MAGIC}`, found `{}`", magic.trim()),
        ));
    }

    let (n, header) = lines
        .next()
        .ok_or_else(|| perr(n, "missing header line".into()))?;
    let mut dims: Option<Vec<usize>> = None;
    let mut activation: Option<Activation> = None;
    let mut k: Option<usize> = None;
    for field in header.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| perr(n, format!("malformed header field `{field}`")))?;
        match key {
            "dims" => {
                let parsed: std::result::Result<Vec<usize>, _> =
                    value.split(',').map(str::parse).collect();
                dims = Some(parsed.map_err(|e| perr(n, format!("bad dims: {e}")))?);
            }
            "activation" => {
                activation = Some(value.parse().map_err(|e: Error| perr(n, e.to_string()))?)
            }
            "k" => k = Some(value.parse().map_err(|e| perr(n, format!("bad k: {e}")))?),
            other => return Err(perr(n, format!("unknown header key `{other}`"))),
        }
    }
    let dims = dims.ok_or_else(|| perr(n, "header lacks dims".into()))?;
    let activation = activation.ok_or_else(|| perr(n, "header lacks activation".into()))?;
    let k = k.ok_or_else(|| perr(n, "header lacks k".into()))?;
    if dims.len() < 2 || dims.last() != Some(&k) {
        return Err(perr(n, format!("dims {dims:?} inconsistent with k={k}")));
    }
    let spec = ModelSpec::new(dims[0], dims[1..dims.len() - 1].to_vec(), k, activation)
        .map_err(|e| perr(n, e.to_string()))?;

    let mut layers = Vec::with_capacity(dims.len() - 1);
    for (i, w) in dims.windows(2).enumerate() {
        let weights = read_tensor(&mut lines, &format!("W{i}"), w[1] * w[0], origin)?;
        let biases = read_tensor(&mut lines, &format!("b{i}"), w[1], origin)?;
        layers.push(Dense {
            weights: Matrix::from_vec(w[1], w[0], weights)?,
            biases,
        });
    }
    if let Some((n, extra)) = lines.next() {
        return Err(perr(n, format!("unexpected trailing line `{extra}`")));
    }
    Model::from_layers(spec, layers)
}

fn read_tensor<'a>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    name: &str,
    expected: usize,
    origin: &str,
) -> Result<Vec<f64>> {
    let (n, line) = lines
        .next()
        .ok_or_else(|| Error::parse(origin, 0, format!("missing tensor {name}")))?;
    let mut tokens = line.split_whitespace();
    let found = tokens.next().unwrap_or_default();
    if found != name {
        return Err(Error::parse(
            origin,
            n + 1,
            format!("expected tensor {name}, found `{found}`"),
        ));
    }
    let values: Vec<f64> = tokens
        .map(|t| {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(origin, n + 1, format!("bad value `{t}` in {name}")))
        })
        .collect::<Result<_>>()?;
    if values.len() != expected {
        return Err(Error::parse(
            origin,
            n + 1,
            format!(
                "tensor {name} has {} values, expected {expected}",
                values.len()
            ),
        ));
    }
    Ok(values)
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, model_to_string(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<Model> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_str(&text, &path.display().to_string())
}
