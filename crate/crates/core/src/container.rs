//! `ANMD` container: magic, little-endian `u32` version, a JSON manifest, then
//! named raw tensor payloads.
//!
//! ```text
//! "ANMD" | u32 version | u32 len | manifest (UTF-8 JSON)
//! u32 count | count × { u32 len | name | u8 dtype | u32 ndim | ndim × u64 | u64 len | bytes }
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::denoiser::{DenoiserParams, PARTS};
use crate::error::{Error, Result};
use crate::graph::{denoiser_param_name, layer_param_name, ModelGraph};
use crate::layer::{LayerDesc, LayerKind};
use crate::noise::NoiseSpec;
use crate::optim::{AdamConfig, AdamState, Moments};
use crate::tensor::Tensor4;

pub const MAGIC: &[u8; 4] = b"ANMD";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 0,
    F64 = 1,
}

impl DType {
    fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Payload {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<u64>,
    pub bytes: Vec<u8>,
}

impl Payload {
    pub fn f64(name: impl Into<String>, shape: Vec<u64>, values: &[f64]) -> Self {
        Self {
            name: name.into(),
            dtype: DType::F64,
            shape,
            bytes: values.iter().flat_map(|v| v.to_le_bytes()).collect(),
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match self.dtype {
            DType::F64 => self
                .bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
            DType::F32 => self
                .bytes
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
                .collect(),
        }
    }
}

/// A manifest plus payloads, before interpretation.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub manifest: String,
    pub payloads: Vec<Payload>,
}

impl Container {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(self.manifest.as_bytes());
        out.extend_from_slice(&(self.payloads.len() as u32).to_le_bytes());
        for p in &self.payloads {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.push(p.dtype as u8);
            out.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
            for d in &p.shape {
                out.extend_from_slice(&d.to_le_bytes());
            }
            out.extend_from_slice(&(p.bytes.len() as u64).to_le_bytes());
            out.extend_from_slice(&p.bytes);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::BadMagic);
        }
        r.pos = 4;
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Version {
                found: version,
                expected: VERSION,
            });
        }
        let len = r.u32("manifest length")? as usize;
        let manifest = String::from_utf8(r.take(len, "manifest")?.to_vec())
            .map_err(|_| Error::Manifest("manifest is not UTF-8".into()))?;
        let count = r.u32("payload count")?;
        let mut payloads = Vec::new();
        for _ in 0..count {
            let name_len = r.u32("payload name length")? as usize;
            let name = String::from_utf8(r.take(name_len, "payload name")?.to_vec())
                .map_err(|_| Error::Manifest("payload name is not UTF-8".into()))?;
            let dtype = match r.take(1, "dtype tag")?[0] {
                0 => DType::F32,
                1 => DType::F64,
                t => return Err(Error::Manifest(format!("{name}: unknown dtype tag {t}"))),
            };
            let ndim = r.u32("rank")? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64("dimension")?);
            }
            let byte_len = r.u64("payload length")? as usize;
            let data = r.take(byte_len, &name)?.to_vec();
            let elems: u64 = shape.iter().product();
            if elems as usize * dtype.size() != byte_len {
                return Err(Error::Manifest(format!(
                    "{name}: shape {shape:?} does not match {byte_len} bytes"
                )));
            }
            payloads.push(Payload {
                name,
                dtype,
                shape,
                bytes: data,
            });
        }
        Ok(Self { manifest, payloads })
    }

    fn payload_map(&self) -> BTreeMap<&str, &Payload> {
        self.payloads.iter().map(|p| (p.name.as_str(), p)).collect()
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Truncated(format!("{what} at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerManifest {
    kind: LayerKind,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    trainable: bool,
    noise_enabled: bool,
    weight: Option<String>,
    bias: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AttachmentManifest {
    layer_index: usize,
    channels: usize,
    bottleneck: usize,
    ratio: f64,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelManifest {
    format: String,
    name: String,
    classes: usize,
    input_shape: [usize; 3],
    layers: Vec<LayerManifest>,
    attachments: Vec<AttachmentManifest>,
    noise: NoiseSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

fn push_layer(
    payloads: &mut Vec<Payload>,
    layer: &LayerDesc,
    name: impl Fn(&str) -> String,
) -> (Option<String>, Option<String>) {
    let w = layer.weight.as_ref().map(|w| {
        let n = name("weight");
        let shape = w.shape().iter().map(|&d| d as u64).collect();
        payloads.push(Payload::f64(n.clone(), shape, w.data()));
        n
    });
    let b = layer.bias.as_ref().map(|b| {
        let n = name("bias");
        payloads.push(Payload::f64(n.clone(), vec![b.len() as u64], b));
        n
    });
    (w, b)
}

pub fn save_model(model: &ModelGraph) -> Vec<u8> {
    encode_model(model, None)
}

/// Like [`save_model`], also recording the master seed in the manifest.
pub fn save_model_seeded(model: &ModelGraph, seed: u64) -> Vec<u8> {
    encode_model(model, Some(seed))
}

/// The master seed a checkpoint was written with, if recorded.
pub fn model_seed(bytes: &[u8]) -> Result<Option<u64>> {
    let container = Container::decode(bytes)?;
    let manifest: ModelManifest = serde_json::from_str(&container.manifest)
        .map_err(|e| Error::Manifest(e.to_string()))?;
    Ok(manifest.seed)
}

fn encode_model(model: &ModelGraph, seed: Option<u64>) -> Vec<u8> {
    let mut payloads = Vec::new();
    let layers = model
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let (weight, bias) = push_layer(&mut payloads, l, |f| layer_param_name(i, f));
            LayerManifest {
                kind: l.kind,
                in_channels: l.in_channels,
                out_channels: l.out_channels,
                kernel: l.kernel,
                stride: l.stride,
                padding: l.padding,
                trainable: l.trainable,
                noise_enabled: l.noise_enabled,
                weight,
                bias,
            }
        })
        .collect();
    let attachments = model
        .attachments
        .iter()
        .map(|(&i, d)| {
            for (part, l) in d.parts() {
                push_layer(&mut payloads, l, |f| denoiser_param_name(i, part, f));
            }
            AttachmentManifest {
                layer_index: i,
                channels: d.channels,
                bottleneck: d.bottleneck,
                ratio: d.ratio,
                trainable: d.pw_reduce.trainable,
            }
        })
        .collect();
    let manifest = ModelManifest {
        format: "anoise-model".into(),
        name: model.name.clone(),
        classes: model.classes,
        input_shape: model.input_shape,
        layers,
        attachments,
        noise: model.noise.clone(),
        seed,
    };
    Container {
        manifest: serde_json::to_string(&manifest).expect("manifest serializes"),
        payloads,
    }
    .encode()
}

fn tensor_from(
    payloads: &BTreeMap<&str, &Payload>,
    name: &str,
    expected: [usize; 4],
) -> Result<Tensor4> {
    let p = payloads
        .get(name)
        .ok_or_else(|| Error::MissingPayload(name.to_string()))?;
    let numel: usize = expected.iter().product();
    if p.shape.iter().product::<u64>() as usize != numel {
        return Err(Error::Manifest(format!(
            "{name}: stored shape {:?}, expected {expected:?}",
            p.shape
        )));
    }
    Tensor4::from_vec(expected, p.to_f64())
}

fn vector_from(payloads: &BTreeMap<&str, &Payload>, name: &str, len: usize) -> Result<Vec<f64>> {
    let p = payloads
        .get(name)
        .ok_or_else(|| Error::MissingPayload(name.to_string()))?;
    let v = p.to_f64();
    if v.len() != len {
        return Err(Error::Manifest(format!("{name}: {} values, expected {len}", v.len())));
    }
    Ok(v)
}

fn layer_from(
    m: &LayerManifest,
    payloads: &BTreeMap<&str, &Payload>,
) -> Result<LayerDesc> {
    let mut layer = LayerDesc {
        kind: m.kind,
        in_channels: m.in_channels,
        out_channels: m.out_channels,
        kernel: m.kernel,
        stride: m.stride,
        padding: m.padding,
        weight: None,
        bias: None,
        trainable: m.trainable,
        noise_enabled: m.noise_enabled,
    };
    if let Some(name) = &m.weight {
        let shape = layer
            .weight_shape()
            .ok_or_else(|| Error::Manifest(format!("{} layer cannot carry a weight", m.kind.name())))?;
        layer.weight = Some(tensor_from(payloads, name, shape)?);
    }
    if let Some(name) = &m.bias {
        layer.bias = Some(vector_from(payloads, name, m.out_channels)?);
    }
    layer.validate()?;
    Ok(layer)
}

pub fn load_model(bytes: &[u8]) -> Result<ModelGraph> {
    let container = Container::decode(bytes)?;
    let manifest: ModelManifest = serde_json::from_str(&container.manifest)
        .map_err(|e| Error::Manifest(e.to_string()))?;
    if manifest.format != "anoise-model" {
        return Err(Error::Manifest(format!(
            "expected a model container, found `{}`",
            manifest.format
        )));
    }
    let payloads = container.payload_map();
    let layers = manifest
        .layers
        .iter()
        .map(|l| layer_from(l, &payloads))
        .collect::<Result<Vec<_>>>()?;
    let mut model = ModelGraph {
        name: manifest.name,
        classes: manifest.classes,
        input_shape: manifest.input_shape,
        layers,
        attachments: BTreeMap::new(),
        noise: manifest.noise,
    };
    for a in &manifest.attachments {
        let (c, b) = (a.channels, a.bottleneck);
        let name = |part: &str, f: &str| denoiser_param_name(a.layer_index, part, f);
        let pointwise = |part: &str, cin: usize, cout: usize| -> Result<LayerDesc> {
            let mut l = LayerDesc::pointwise(
                cin,
                cout,
                tensor_from(&payloads, &name(part, "weight"), [cout, cin, 1, 1])?,
                Some(vector_from(&payloads, &name(part, "bias"), cout)?),
            )?;
            l.trainable = a.trainable;
            Ok(l)
        };
        let mut dw = LayerDesc::depthwise(
            b,
            3,
            1,
            1,
            tensor_from(&payloads, &name(PARTS[1], "weight"), [b, 1, 3, 3])?,
            Some(vector_from(&payloads, &name(PARTS[1], "bias"), b)?),
        )?;
        dw.trainable = a.trainable;
        let params = DenoiserParams {
            channels: c,
            bottleneck: b,
            ratio: a.ratio,
            pw_reduce: pointwise(PARTS[0], c, b)?,
            dw,
            head_mean: pointwise(PARTS[2], b, c)?,
            head_scale: pointwise(PARTS[3], b, c)?,
        };
        model.attachments.insert(a.layer_index, params);
    }
    model.validate()?;
    Ok(model)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerManifest {
    format: String,
    step: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    tensors: Vec<String>,
}

/// Optimizer sidecar in the same container format.
pub fn save_optimizer(state: &AdamState) -> Vec<u8> {
    let mut payloads = Vec::new();
    for (name, m) in &state.moments {
        payloads.push(Payload::f64(format!("m.{name}"), vec![m.m.len() as u64], &m.m));
        payloads.push(Payload::f64(format!("v.{name}"), vec![m.v.len() as u64], &m.v));
    }
    let manifest = OptimizerManifest {
        format: "anoise-adam".into(),
        step: state.step,
        lr: state.config.lr,
        beta1: state.config.beta1,
        beta2: state.config.beta2,
        eps: state.config.eps,
        tensors: state.moments.keys().cloned().collect(),
    };
    Container {
        manifest: serde_json::to_string(&manifest).expect("manifest serializes"),
        payloads,
    }
    .encode()
}

pub fn load_optimizer(bytes: &[u8]) -> Result<AdamState> {
    let container = Container::decode(bytes)?;
    let manifest: OptimizerManifest = serde_json::from_str(&container.manifest)
        .map_err(|e| Error::Manifest(e.to_string()))?;
    if manifest.format != "anoise-adam" {
        return Err(Error::Manifest(format!(
            "expected an optimizer container, found `{}`",
            manifest.format
        )));
    }
    let payloads = container.payload_map();
    let mut state = AdamState::new(AdamConfig {
        lr: manifest.lr,
        beta1: manifest.beta1,
        beta2: manifest.beta2,
        eps: manifest.eps,
    });
    state.step = manifest.step;
    for name in manifest.tensors {
        let get = |key: String| {
            payloads
                .get(key.as_str())
                .map(|p| p.to_f64())
                .ok_or(Error::MissingPayload(key))
        };
        let m = get(format!("m.{name}"))?;
        let v = get(format!("v.{name}"))?;
        state.moments.insert(name, Moments { m, v });
    }
    Ok(state)
}
