//! Model specs for the VNN family and the 1D LeNet5 adaptation, parameter
//! initialization, inference, and the `.vnnf` model file.

use super::layer::{self, LayerSpec};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::{domain, stream};
use crate::simenv::LineImage;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const NORMALIZATION: &str = "(pixel - 128) / 128";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub input_width: usize,
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
}

/// The architecture menu. VNNs span 1-3 convolutions plus one FC head;
/// LeNet5 is the classic topology flattened to one dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arch {
    Vnn1,
    Vnn2,
    Vnn3,
    Vnn4,
    LeNet5,
}

impl Arch {
    pub const ALL: [Arch; 5] = [Arch::Vnn1, Arch::Vnn2, Arch::Vnn3, Arch::Vnn4, Arch::LeNet5];

    pub fn parse(s: &str) -> Option<Arch> {
        match s.to_ascii_lowercase().as_str() {
            "vnn1" => Some(Arch::Vnn1),
            "vnn2" => Some(Arch::Vnn2),
            "vnn3" => Some(Arch::Vnn3),
            "vnn4" => Some(Arch::Vnn4),
            "lenet5" | "lenet" => Some(Arch::LeNet5),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Arch::Vnn1 => "vnn1",
            Arch::Vnn2 => "vnn2",
            Arch::Vnn3 => "vnn3",
            Arch::Vnn4 => "vnn4",
            Arch::LeNet5 => "lenet5",
        }
    }

    pub fn spec(self, input_width: usize) -> ModelSpec {
        let b = SpecBuilder::new(self.name(), input_width);
        match self {
            Arch::Vnn1 => b.conv(2, 1).relu().pool().flatten().fc(7).build(),
            Arch::Vnn2 => b.conv(4, 2).relu().pool().flatten().fc(7).build(),
            Arch::Vnn3 => b
                .conv(4, 1)
                .relu()
                .pool()
                .conv(8, 1)
                .relu()
                .pool()
                .flatten()
                .fc(7)
                .build(),
            Arch::Vnn4 => b
                .conv(16, 1)
                .relu()
                .pool()
                .conv(32, 1)
                .relu()
                .pool()
                .conv(64, 1)
                .relu()
                .flatten()
                .fc(7)
                .build(),
            Arch::LeNet5 => b
                .conv(6, 1)
                .relu()
                .pool()
                .conv(16, 1)
                .relu()
                .pool()
                .flatten()
                .fc(120)
                .relu()
                .fc(84)
                .relu()
                .fc(7)
                .build(),
        }
    }
}

/// Builds a spec while tracking the running (channels, length) shape.
pub struct SpecBuilder {
    name: String,
    input_width: usize,
    layers: Vec<LayerSpec>,
    ch: usize,
    len: usize,
    flat: Option<usize>,
}

impl SpecBuilder {
    pub fn new(name: &str, input_width: usize) -> Self {
        SpecBuilder {
            name: name.to_string(),
            input_width,
            layers: Vec::new(),
            ch: 1,
            len: input_width,
            flat: None,
        }
    }

    pub fn conv(mut self, out_ch: usize, stride: usize) -> Self {
        self.layers.push(LayerSpec::conv(self.ch, out_ch, stride));
        self.len = layer::out_len(self.len, 5, stride);
        self.ch = out_ch;
        self
    }

    pub fn pool(mut self) -> Self {
        self.layers.push(LayerSpec::pool());
        self.len = layer::out_len(self.len, 5, 3);
        self
    }

    pub fn relu(mut self) -> Self {
        self.layers.push(LayerSpec::Relu);
        self
    }

    pub fn flatten(mut self) -> Self {
        self.layers.push(LayerSpec::Flatten);
        self.flat = Some(self.ch * self.len);
        self
    }

    pub fn fc(mut self, outputs: usize) -> Self {
        let inputs = self.flat.take().unwrap_or(self.ch * self.len);
        self.layers.push(LayerSpec::Fc { inputs, outputs });
        self.flat = Some(outputs);
        self
    }

    pub fn build(self) -> ModelSpec {
        let classes = match self.layers.last() {
            Some(LayerSpec::Fc { outputs, .. }) => *outputs,
            _ => panic!("model must end in an FC layer"),
        };
        ModelSpec {
            name: self.name,
            input_width: self.input_width,
            classes,
            layers: self.layers,
        }
    }
}

impl ModelSpec {
    /// Activation (channels, length) after every layer, starting with the
    /// input; FC outputs are reported as (1, outputs).
    pub fn shape_walk(&self) -> Vec<(usize, usize)> {
        let mut shapes = vec![(1usize, self.input_width)];
        let (mut ch, mut len) = (1usize, self.input_width);
        for l in &self.layers {
            match *l {
                LayerSpec::Conv1d {
                    out_ch, kernel, stride, ..
                } => {
                    len = layer::out_len(len, kernel, stride);
                    ch = out_ch;
                }
                LayerSpec::MaxPool1d { kernel, stride } => {
                    len = layer::out_len(len, kernel, stride);
                }
                LayerSpec::Relu => {}
                LayerSpec::Flatten => {
                    len *= ch;
                    ch = 1;
                }
                LayerSpec::Fc { outputs, .. } => {
                    ch = 1;
                    len = outputs;
                }
            }
            shapes.push((ch, len));
        }
        shapes
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.layers.last(), Some(LayerSpec::Fc { .. })) {
            return Err(Error::InvalidConfig("model must end in an FC layer".into()));
        }
        let shapes = self.shape_walk();
        for (i, l) in self.layers.iter().enumerate() {
            let (ch, len) = shapes[i];
            match *l {
                LayerSpec::Conv1d { in_ch, kernel, stride, .. } => {
                    if in_ch != ch || len < kernel || stride == 0 || kernel == 0 {
                        return Err(Error::InvalidConfig(format!("bad conv at layer {i}")));
                    }
                }
                LayerSpec::MaxPool1d { kernel, stride } => {
                    if len < kernel || stride == 0 || kernel == 0 {
                        return Err(Error::InvalidConfig(format!("bad pool at layer {i}")));
                    }
                }
                LayerSpec::Fc { inputs, .. } => {
                    if inputs != ch * len {
                        return Err(Error::InvalidConfig(format!(
                            "fc at layer {i} expects {inputs}, gets {}",
                            ch * len
                        )));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// params = sum conv(out*in*k + out) + fc(in*out + out)
pub fn param_count(spec: &ModelSpec) -> usize {
    spec.layers
        .iter()
        .map(|l| match *l {
            LayerSpec::Conv1d {
                in_ch, out_ch, kernel, ..
            } => out_ch * in_ch * kernel + out_ch,
            LayerSpec::Fc { inputs, outputs } => inputs * outputs + outputs,
            _ => 0,
        })
        .sum()
}

/// MACs = sum conv(out*in*k*out_len) + fc(in*out)
pub fn mac_count(spec: &ModelSpec) -> usize {
    let shapes = spec.shape_walk();
    spec.layers
        .iter()
        .enumerate()
        .map(|(i, l)| match *l {
            LayerSpec::Conv1d {
                in_ch, out_ch, kernel, ..
            } => {
                let (_, out_len) = shapes[i + 1];
                out_ch * in_ch * kernel * out_len
            }
            LayerSpec::Fc { inputs, outputs } => inputs * outputs,
            _ => 0,
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub w: Tensor,
    pub b: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    pub epochs: usize,
    pub final_loss: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FloatModel {
    pub spec: ModelSpec,
    /// Parameters for the weighted layers, in layer order.
    pub params: Vec<LayerParams>,
    pub train_meta: TrainMeta,
}

impl FloatModel {
    /// Fan-in-scaled uniform init (bound sqrt(6/fan_in)), biases zero,
    /// one rng stream per weighted layer.
    pub fn init(spec: &ModelSpec, seed: u64) -> FloatModel {
        let mut params = Vec::new();
        for (li, l) in spec.layers.iter().enumerate() {
            let (w_shape, b_len, fan_in) = match *l {
                LayerSpec::Conv1d {
                    in_ch, out_ch, kernel, ..
                } => (vec![out_ch, in_ch, kernel], out_ch, in_ch * kernel),
                LayerSpec::Fc { inputs, outputs } => (vec![outputs, inputs], outputs, inputs),
                _ => continue,
            };
            let mut rng = stream(seed, domain::INIT, li as u64);
            let bound = (6.0f32 / fan_in as f32).sqrt();
            let len: usize = w_shape.iter().product();
            let data: Vec<f32> = (0..len).map(|_| rng.random_range(-bound..bound)).collect();
            params.push(LayerParams {
                w: Tensor::from_vec(&w_shape, data),
                b: vec![0.0; b_len],
            });
        }
        FloatModel {
            spec: spec.clone(),
            params,
            train_meta: TrainMeta {
                seed,
                epochs: 0,
                final_loss: f32::NAN,
            },
        }
    }

    pub fn normalize(img: &LineImage) -> Tensor {
        let data: Vec<f32> = img.pixels().iter().map(|&p| (p as f32 - 128.0) / 128.0).collect();
        Tensor::from_vec(&[1, data.len()], data)
    }
}

/// Per-layer activations of one forward pass; `acts[0]` is the normalized
/// input, `acts[i+1]` the output of layer i.
pub struct Trace {
    pub acts: Vec<Tensor>,
    /// Inverted-dropout mask applied to the final FC input, if any.
    pub dropout_mask: Option<Vec<f32>>,
}

pub(crate) fn forward_trace(
    model: &FloatModel,
    input: Tensor,
    dropout: Option<(&mut rand_chacha::ChaCha8Rng, f32)>,
) -> Result<Trace> {
    let mut acts = vec![input];
    let mut dropout_mask = None;
    let mut pi = 0usize;
    let last_layer = model.spec.layers.len() - 1;
    let mut dropout = dropout;
    for (li, l) in model.spec.layers.iter().enumerate() {
        if li == last_layer {
            if let Some((rng, p)) = dropout.take() {
                if p > 0.0 {
                    let x = acts.last_mut().unwrap();
                    let keep = 1.0 - p;
                    let mask: Vec<f32> = (0..x.len())
                        .map(|_| if rng.random::<f32>() < keep { 1.0 / keep } else { 0.0 })
                        .collect();
                    for (v, m) in x.data_mut().iter_mut().zip(&mask) {
                        *v *= m;
                    }
                    dropout_mask = Some(mask);
                }
            }
        }
        let x = acts.last().unwrap();
        let y = match *l {
            LayerSpec::Conv1d { stride, .. } => {
                let p = &model.params[pi];
                pi += 1;
                layer::conv1d_forward(x, &p.w, &p.b, stride)?
            }
            LayerSpec::MaxPool1d { kernel, stride } => layer::maxpool1d_forward(x, kernel, stride)?,
            LayerSpec::Relu => layer::relu_forward(x),
            LayerSpec::Flatten => x.reshaped(&[x.len()]),
            LayerSpec::Fc { .. } => {
                let p = &model.params[pi];
                pi += 1;
                layer::fc_forward(x, &p.w, &p.b)?
            }
        };
        acts.push(y);
    }
    Ok(Trace { acts, dropout_mask })
}

/// Logits for one image.
pub fn forward(model: &FloatModel, img: &LineImage) -> Result<Vec<f32>> {
    if img.width() != model.spec.input_width {
        return Err(Error::WidthMismatch {
            expected: model.spec.input_width,
            got: img.width(),
        });
    }
    let trace = forward_trace(model, FloatModel::normalize(img), None)?;
    Ok(trace.acts.last().unwrap().data().to_vec())
}

/// Argmax with ties broken toward the lowest class index.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0usize;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn predict(model: &FloatModel, img: &LineImage) -> Result<usize> {
    Ok(argmax(&forward(model, img)?))
}

const VNNF_MAGIC: &[u8; 4] = b"VNNF";

#[derive(Serialize, Deserialize)]
struct VnnfHeader {
    spec: ModelSpec,
    train_meta: TrainMeta,
    normalization: String,
}

impl FloatModel {
    /// `.vnnf`: magic, u8 version, u32 header length, JSON header, then the
    /// little-endian float32 blob (per weighted layer: weights then biases).
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&VnnfHeader {
            spec: self.spec.clone(),
            train_meta: self.train_meta.clone(),
            normalization: NORMALIZATION.to_string(),
        })?;
        let mut out = Vec::new();
        out.extend_from_slice(VNNF_MAGIC);
        out.push(1u8);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for p in &self.params {
            for &v in p.w.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for &v in &p.b {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<FloatModel> {
        if bytes.len() < 9 || &bytes[0..4] != VNNF_MAGIC {
            return Err(Error::Format("not a VNNF file".into()));
        }
        let hlen = u32::from_le_bytes([bytes[5], bytes[6], bytes[7], bytes[8]]) as usize;
        let header: VnnfHeader = serde_json::from_slice(&bytes[9..9 + hlen])?;
        header.spec.validate()?;
        let mut off = 9 + hlen;
        let mut read_f32 = |n: usize| -> Result<Vec<f32>> {
            let need = n * 4;
            if off + need > bytes.len() {
                return Err(Error::Format("VNNF blob truncated".into()));
            }
            let mut out = Vec::with_capacity(n);
            for i in 0..n {
                let s = off + i * 4;
                out.push(f32::from_le_bytes([bytes[s], bytes[s + 1], bytes[s + 2], bytes[s + 3]]));
            }
            off += need;
            Ok(out)
        };
        let mut params = Vec::new();
        for l in &header.spec.layers {
            let (w_shape, b_len) = match *l {
                LayerSpec::Conv1d {
                    in_ch, out_ch, kernel, ..
                } => (vec![out_ch, in_ch, kernel], out_ch),
                LayerSpec::Fc { inputs, outputs } => (vec![outputs, inputs], outputs),
                _ => continue,
            };
            let w_len: usize = w_shape.iter().product();
            let w = Tensor::from_vec(&w_shape, read_f32(w_len)?);
            let b = read_f32(b_len)?;
            params.push(LayerParams { w, b });
        }
        if off != bytes.len() {
            return Err(Error::Format("VNNF trailing bytes".into()));
        }
        Ok(FloatModel {
            spec: header.spec,
            params,
            train_meta: header.train_meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<FloatModel> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        FloatModel::from_bytes(&bytes)
    }
}
