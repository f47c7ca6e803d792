//! JSON model file. Parameter arrays are base64 strings of little-endian
//! `f32` values in row-major order; computation stays in `f64`.

use std::fs;
use std::io::Write;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fisher::FisherDiag;
use crate::nnet::{Architecture, DenseLayer, LayerParams, Network, ParamSet, TrainRecord, TrainedModel};
use crate::ClassLabel;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedLayer {
    pub weights: String,
    pub bias: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub architecture: Architecture,
    pub class_labels: Vec<ClassLabel>,
    pub layers: Vec<EncodedLayer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fisher: Option<Vec<EncodedLayer>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainRecord>,
}

fn encode<'a>(values: impl Iterator<Item = &'a f64>) -> String {
    let mut bytes = Vec::new();
    for &v in values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    B64.encode(bytes)
}

fn decode(s: &str, expected: usize, what: &str) -> Result<Vec<f64>> {
    let bytes = B64
        .decode(s)
        .map_err(|e| Error::ModelFormat(format!("{what}: invalid base64 ({e})")))?;
    if bytes.len() != 4 * expected {
        return Err(Error::ModelFormat(format!(
            "{what}: decoded {} values, expected {expected}",
            bytes.len() / 4
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
        .collect())
}

fn encode_params(p: &LayerParams) -> EncodedLayer {
    EncodedLayer {
        weights: encode(p.weights.iter()),
        bias: encode(p.bias.iter()),
    }
}

fn decode_params(e: &EncodedLayer, out: usize, inp: usize, what: &str) -> Result<LayerParams> {
    let w = decode(&e.weights, out * inp, &format!("{what} weights"))?;
    let b = decode(&e.bias, out, &format!("{what} bias"))?;
    Ok(LayerParams {
        weights: Array2::from_shape_vec((out, inp), w).expect("length checked"),
        bias: Array1::from(b),
    })
}

impl ModelFile {
    pub fn from_model(model: &TrainedModel) -> Self {
        let net = &model.network;
        Self {
            format_version: FORMAT_VERSION,
            architecture: net.architecture(),
            class_labels: net.class_labels().to_vec(),
            layers: ParamSet::from_network(net).layers.iter().map(encode_params).collect(),
            fisher: model
                .fisher
                .as_ref()
                .map(|f| f.layers().iter().map(encode_params).collect()),
            training: model.meta.clone(),
        }
    }

    pub fn to_model(&self) -> Result<TrainedModel> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported format_version {} (this build reads {FORMAT_VERSION})",
                self.format_version
            )));
        }
        self.architecture.validate()?;
        let arch = &self.architecture;
        if self.layers.len() != arch.layers.len() {
            return Err(Error::ModelFormat(format!(
                "{} parameter blocks for {} layers",
                self.layers.len(),
                arch.layers.len()
            )));
        }
        let shapes: Vec<(usize, usize)> = arch
            .layers
            .iter()
            .scan(arch.input_width, |inp, spec| {
                let shape = (spec.width, *inp);
                *inp = spec.width;
                Some(shape)
            })
            .collect();
        let layers = self
            .layers
            .iter()
            .zip(&shapes)
            .zip(&arch.layers)
            .enumerate()
            .map(|(i, ((e, &(o, n)), spec))| {
                let p = decode_params(e, o, n, &format!("layer {i}"))?;
                DenseLayer::new(p.weights, p.bias, spec.activation)
            })
            .collect::<Result<Vec<_>>>()?;
        let network = Network::new(layers, self.class_labels.clone())?;
        let fisher = match &self.fisher {
            None => None,
            Some(blocks) => {
                if blocks.len() != shapes.len() {
                    return Err(Error::ModelFormat("Fisher block count does not match layers".into()));
                }
                let layers = blocks
                    .iter()
                    .zip(&shapes)
                    .enumerate()
                    .map(|(i, (e, &(o, n)))| decode_params(e, o, n, &format!("Fisher layer {i}")))
                    .collect::<Result<Vec<_>>>()?;
                Some(FisherDiag::new(ParamSet { layers })?)
            }
        };
        Ok(TrainedModel {
            network,
            fisher,
            meta: self.training.clone(),
        })
    }
}

pub fn to_json(model: &TrainedModel) -> Result<String> {
    Ok(serde_json::to_string_pretty(&ModelFile::from_model(model))?)
}

pub fn from_json(s: &str) -> Result<TrainedModel> {
    serde_json::from_str::<ModelFile>(s)?.to_model()
}

/// Writes the model next to `path` under a temporary name and renames it into
/// place, so a failed write never leaves a partial file.
pub fn save_model(path: impl AsRef<Path>, model: &TrainedModel) -> Result<()> {
    let path = path.as_ref();
    let json = to_json(model)?;
    write_atomic(path, json.as_bytes())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = std::path::PathBuf::from(tmp);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&s)
}
