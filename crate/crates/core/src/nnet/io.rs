//! JSON model files: named gate matrices as nested row-major arrays.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, ModelParams, NormalizationMeta, GATES};
use crate::error::{Error, Result};

pub const MODEL_VERSION: &str = "pulseguard-lstm-ae/1";

#[derive(Serialize, Deserialize)]
struct LayerFile {
    input_dim: usize,
    hidden_dim: usize,
    /// `W_i`, `U_i`, `b_i`, ... keyed by name. Matrices are `[[f64]]`, biases `[f64]`.
    #[serde(flatten)]
    tensors: BTreeMap<String, serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct OutputFile {
    weight: Vec<Vec<f64>>,
    bias: f64,
}

#[derive(Serialize, Deserialize)]
struct ParamsFile {
    encoder: Vec<LayerFile>,
    decoder: Vec<LayerFile>,
    output: OutputFile,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: String,
    architecture: Architecture,
    architecture_overridden: bool,
    normalization: NormalizationMeta,
    parameters: ParamsFile,
}

fn matrix(values: &[f64], rows: usize, cols: usize) -> serde_json::Value {
    serde_json::Value::from(values.chunks(cols).take(rows).map(|r| r.to_vec()).collect::<Vec<_>>())
}

fn layer_file(model: &ModelParams, index: usize) -> LayerFile {
    let l = model.layer(index);
    let h = l.hidden_dim;
    let mut tensors = BTreeMap::new();
    for (gi, g) in GATES.iter().enumerate() {
        let w = &l.w[gi * h * l.input_dim..(gi + 1) * h * l.input_dim];
        let u = &l.u[gi * h * h..(gi + 1) * h * h];
        tensors.insert(format!("W_{g}"), matrix(w, h, l.input_dim));
        tensors.insert(format!("U_{g}"), matrix(u, h, h));
        tensors.insert(
            format!("b_{g}"),
            serde_json::Value::from(l.b[gi * h..(gi + 1) * h].to_vec()),
        );
    }
    LayerFile {
        input_dim: l.input_dim,
        hidden_dim: h,
        tensors,
    }
}

pub fn save_model(model: &ModelParams, path: &Path) -> Result<()> {
    let layout = model.layout();
    let n = layout.layers.len();
    let file = ModelFile {
        version: MODEL_VERSION.into(),
        architecture: model.arch.clone(),
        architecture_overridden: !model.arch.is_default(),
        normalization: model.normalization.clone(),
        parameters: ParamsFile {
            encoder: (0..layout.n_encoder).map(|i| layer_file(model, i)).collect(),
            decoder: (layout.n_encoder..n).map(|i| layer_file(model, i)).collect(),
            output: OutputFile {
                weight: vec![model.output_weights().to_vec()],
                bias: model.output_bias(),
            },
        },
    };
    let text = serde_json::to_string(&file).map_err(|e| Error::malformed(path, e))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_matrix(path: &Path, layer: &LayerFile, name: &str, rows: usize, cols: usize, out: &mut Vec<f64>) -> Result<()> {
    let v = layer
        .tensors
        .get(name)
        .ok_or_else(|| Error::malformed(path, format!("missing tensor {name}")))?;
    let m: Vec<Vec<f64>> =
        serde_json::from_value(v.clone()).map_err(|e| Error::malformed(path, format!("{name}: {e}")))?;
    if m.len() != rows || m.iter().any(|r| r.len() != cols) {
        return Err(Error::Dimension(format!(
            "{name} should be {rows}x{cols}, found {}x{}",
            m.len(),
            m.first().map_or(0, |r| r.len())
        )));
    }
    out.extend(m.into_iter().flatten());
    Ok(())
}

fn read_vector(path: &Path, layer: &LayerFile, name: &str, len: usize, out: &mut Vec<f64>) -> Result<()> {
    let v = layer
        .tensors
        .get(name)
        .ok_or_else(|| Error::malformed(path, format!("missing tensor {name}")))?;
    let b: Vec<f64> = serde_json::from_value(v.clone()).map_err(|e| Error::malformed(path, format!("{name}: {e}")))?;
    if b.len() != len {
        return Err(Error::Dimension(format!(
            "{name} should have {len} entries, found {}",
            b.len()
        )));
    }
    out.extend(b);
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelParams> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    // Peek at the version before committing to the full schema.
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::malformed(path, e))?;
    match raw.get("version").and_then(|v| v.as_str()) {
        Some(v) if v == MODEL_VERSION => {}
        Some(v) => {
            return Err(Error::VersionMismatch {
                expected: MODEL_VERSION.into(),
                found: v.into(),
            })
        }
        None => return Err(Error::malformed(path, "missing version")),
    }
    let file: ModelFile = serde_json::from_value(raw).map_err(|e| Error::malformed(path, e))?;
    file.architecture.validate()?;
    let shapes = file.architecture.layer_shapes();
    let layers: Vec<&LayerFile> = file.parameters.encoder.iter().chain(&file.parameters.decoder).collect();
    if file.parameters.encoder.len() != file.architecture.encoder_hidden.len() || layers.len() != shapes.len() {
        return Err(Error::Dimension("layer count does not match architecture".into()));
    }

    let mut values = Vec::new();
    for (layer, &(n_in, h)) in layers.iter().zip(&shapes) {
        if layer.input_dim != n_in || layer.hidden_dim != h {
            return Err(Error::Dimension(format!(
                "layer declares {}→{}, architecture implies {n_in}→{h}",
                layer.input_dim, layer.hidden_dim
            )));
        }
        // Flat order per layer: W (all gates), U (all gates), b (all gates).
        for g in GATES {
            read_matrix(path, layer, &format!("W_{g}"), h, n_in, &mut values)?;
        }
        for g in GATES {
            read_matrix(path, layer, &format!("U_{g}"), h, h, &mut values)?;
        }
        for g in GATES {
            read_vector(path, layer, &format!("b_{g}"), h, &mut values)?;
        }
    }
    let d = file.architecture.output_dim_in();
    let out = &file.parameters.output;
    if out.weight.len() != 1 || out.weight[0].len() != d {
        return Err(Error::Dimension(format!("output weight should be 1x{d}")));
    }
    values.extend_from_slice(&out.weight[0]);
    values.push(out.bias);
    let model = ModelParams::from_parts(file.architecture, file.normalization, values)?;
    if !model.is_finite() {
        return Err(Error::malformed(path, "non-finite parameter"));
    }
    Ok(model)
}
