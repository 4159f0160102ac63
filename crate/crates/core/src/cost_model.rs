//! Analytic per-layer cost profiles for transformer models.
//!
//! A model is a chain of splittable entries: every attention sublayer,
//! feed-forward sublayer, norm, embedding and classifier is one entry, and
//! the activation crossing each boundary is `seq * hidden * 4` bytes.
//! Attention internals (projections, scores, softmax, weighted sum) are one
//! atomic entry, so no `s^2`-sized tensor ever crosses a split point.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Bytes per tensor element (single precision).
pub const ELEMENT_BYTES: u64 = 4;

/// Softmax cost per score element.
pub const SOFTMAX_FLOP_PER_ELEMENT: u64 = 5;

/// Whole-model client time for `bert-12` at 4096 tokens used by
/// [`reference_devices`].
pub const REFERENCE_CLIENT_SECONDS: f64 = 7.727;
/// Whole-model server time for `bert-12` at 4096 tokens used by
/// [`reference_devices`].
pub const REFERENCE_SERVER_SECONDS: f64 = 0.0979;
pub const REFERENCE_MODEL: &str = "bert-12";
pub const REFERENCE_SEQ_LEN: u64 = 4096;

pub const PRESETS: [&str; 4] = ["vanilla-6x6", "bert-12", "gpt2-24", "cmt-like"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Embedding,
    Attention,
    FeedForward,
    LayerNorm,
    Classifier,
    Custom,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Embedding => "embedding",
            LayerKind::Attention => "attention",
            LayerKind::FeedForward => "feed_forward",
            LayerKind::LayerNorm => "layer_norm",
            LayerKind::Classifier => "classifier",
            LayerKind::Custom => "custom",
        }
    }
}

/// `quadratic * s^2 + linear * s + constant`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeqPolynomial {
    #[serde(default)]
    pub quadratic: u64,
    #[serde(default)]
    pub linear: u64,
    #[serde(default)]
    pub constant: u64,
}

impl SeqPolynomial {
    pub fn eval(&self, s: u64) -> u64 {
        let s = s as u128;
        let v = self.quadratic as u128 * s * s + self.linear as u128 * s + self.constant as u128;
        saturate(v)
    }
}

/// User-supplied cost formulas for a `custom` layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CustomCost {
    pub flop: SeqPolynomial,
    /// Falls back to the activation size `s * d * 4` when absent.
    #[serde(default)]
    pub memory: Option<SeqPolynomial>,
}

/// One splittable entry of a model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub hidden_dim: u64,
    pub heads: u64,
    pub ffn_dim: u64,
    pub vocab_or_class_dim: u64,
    /// The entry sees `ceil(seq_len / seq_divisor)` tokens.
    #[serde(default = "one")]
    pub seq_divisor: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom: Option<CustomCost>,
}

fn one() -> u64 {
    1
}

impl LayerSpec {
    pub fn new(kind: LayerKind, d: u64, h: u64, d_ff: u64, v: u64) -> Self {
        Self {
            kind,
            hidden_dim: d,
            heads: h,
            ffn_dim: d_ff,
            vocab_or_class_dim: v,
            seq_divisor: 1,
            custom: None,
        }
    }

    pub fn custom(hidden_dim: u64, cost: CustomCost) -> Self {
        Self {
            custom: Some(cost),
            ..Self::new(LayerKind::Custom, hidden_dim, 1, 1, 1)
        }
    }

    fn downsampled(mut self, divisor: u64) -> Self {
        self.seq_divisor = divisor;
        self
    }

    /// Tokens this entry processes for a model-level sequence length.
    pub fn effective_seq(&self, seq_len: u64) -> u64 {
        seq_len.div_ceil(self.seq_divisor.max(1))
    }

    fn validate(&self, index: usize) -> Result<()> {
        let dims = [
            self.hidden_dim,
            self.heads,
            self.ffn_dim,
            self.vocab_or_class_dim,
            self.seq_divisor,
        ];
        if dims.contains(&0) {
            return Err(Error::Config(format!(
                "layer {index}: all dimensions must be positive"
            )));
        }
        match (self.kind, self.custom.is_some()) {
            (LayerKind::Custom, false) => Err(Error::Config(format!(
                "layer {index}: custom layer without cost coefficients"
            ))),
            (kind, true) if kind != LayerKind::Custom => Err(Error::Config(format!(
                "layer {index}: cost coefficients given for a {} layer",
                kind.as_str()
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub seq_len: u64,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.seq_len == 0 {
            return Err(Error::Config("seq_len must be at least 1".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::Config(format!(
                "model `{}` has no layers",
                self.name
            )));
        }
        self.layers
            .iter()
            .enumerate()
            .try_for_each(|(i, l)| l.validate(i))
    }

    pub fn with_seq_len(&self, seq_len: u64) -> Self {
        Self {
            seq_len,
            ..self.clone()
        }
    }

    pub fn count_kind(&self, kind: LayerKind) -> usize {
        self.layers.iter().filter(|l| l.kind == kind).count()
    }

    pub fn total_flop(&self) -> u64 {
        saturate(
            self.layers
                .iter()
                .map(|l| flop_of_layer(l, self.seq_len) as u128)
                .sum(),
        )
    }

    /// Bytes of the raw model input (one 4-byte element per token).
    pub fn input_bytes(&self) -> u64 {
        self.seq_len.saturating_mul(ELEMENT_BYTES)
    }
}

fn saturate(v: u128) -> u64 {
    u64::try_from(v).unwrap_or(u64::MAX)
}

fn encoder_block(d: u64, h: u64, d_ff: u64) -> [LayerSpec; 4] {
    [
        LayerSpec::new(LayerKind::Attention, d, h, d_ff, 1),
        LayerSpec::new(LayerKind::LayerNorm, d, h, d_ff, 1),
        LayerSpec::new(LayerKind::FeedForward, d, h, d_ff, 1),
        LayerSpec::new(LayerKind::LayerNorm, d, h, d_ff, 1),
    ]
}

/// Builds one of the named preset architectures.
pub fn build_preset(name: &str, seq_len: u64) -> Result<ModelSpec> {
    let layers = match name {
        "bert-12" => {
            let (d, h, d_ff) = (768, 12, 3072);
            let mut layers = vec![
                LayerSpec::new(LayerKind::Embedding, d, h, d_ff, 1),
                LayerSpec::new(LayerKind::LayerNorm, d, h, d_ff, 1),
            ];
            for _ in 0..12 {
                layers.extend(encoder_block(d, h, d_ff));
            }
            layers.push(LayerSpec::new(LayerKind::Classifier, d, h, d_ff, 2));
            layers
        }
        "gpt2-24" => {
            // pre-norm decoder-only stack with a language-model head
            let (d, h, d_ff) = (1024, 16, 4096);
            let mut layers = vec![LayerSpec::new(LayerKind::Embedding, d, h, d_ff, 1)];
            for _ in 0..24 {
                layers.extend([
                    LayerSpec::new(LayerKind::LayerNorm, d, h, d_ff, 1),
                    LayerSpec::new(LayerKind::Attention, d, h, d_ff, 1),
                    LayerSpec::new(LayerKind::LayerNorm, d, h, d_ff, 1),
                    LayerSpec::new(LayerKind::FeedForward, d, h, d_ff, 1),
                ]);
            }
            layers.push(LayerSpec::new(LayerKind::LayerNorm, d, h, d_ff, 1));
            layers.push(LayerSpec::new(LayerKind::Classifier, d, h, d_ff, 50257));
            layers
        }
        "vanilla-6x6" => {
            let (d, h, d_ff) = (512, 8, 2048);
            let mut layers = vec![LayerSpec::new(LayerKind::Embedding, d, h, d_ff, 1)];
            for _ in 0..6 {
                layers.extend(encoder_block(d, h, d_ff));
            }
            layers.push(LayerSpec::new(LayerKind::Embedding, d, h, d_ff, 1));
            for _ in 0..6 {
                // self-attention, cross-attention (equal source/target length), FFN
                layers.extend([
                    LayerSpec::new(LayerKind::Attention, d, h, d_ff, 1),
                    LayerSpec::new(LayerKind::LayerNorm, d, h, d_ff, 1),
                    LayerSpec::new(LayerKind::Attention, d, h, d_ff, 1),
                    LayerSpec::new(LayerKind::LayerNorm, d, h, d_ff, 1),
                    LayerSpec::new(LayerKind::FeedForward, d, h, d_ff, 1),
                    LayerSpec::new(LayerKind::LayerNorm, d, h, d_ff, 1),
                ]);
            }
            layers.push(LayerSpec::new(LayerKind::Classifier, d, h, d_ff, 37000));
            layers
        }
        "cmt-like" => {
            let widths = [64, 128, 256, 512];
            let heads = [1, 2, 4, 8];
            let depths = [3, 3, 16, 3];
            let mut layers = Vec::new();
            let mut divisor = 1;
            for stage in 0..4 {
                let (d, h) = (widths[stage], heads[stage]);
                let d_ff = 4 * d;
                layers
                    .push(LayerSpec::new(LayerKind::Embedding, d, h, d_ff, 1).downsampled(divisor));
                for _ in 0..depths[stage] {
                    layers.extend(encoder_block(d, h, d_ff).map(|l| l.downsampled(divisor)));
                }
                divisor *= 4;
            }
            layers.push(
                LayerSpec::new(LayerKind::Classifier, 512, 8, 2048, 1000).downsampled(divisor / 4),
            );
            layers
        }
        other => return Err(Error::UnknownPreset(other.to_string())),
    };
    let spec = ModelSpec {
        name: name.to_string(),
        seq_len,
        layers,
    };
    spec.validate()?;
    Ok(spec)
}

/// Floating-point operations of one entry at the given model sequence length.
pub fn flop_of_layer(layer: &LayerSpec, seq_len: u64) -> u64 {
    let s = layer.effective_seq(seq_len) as u128;
    let d = layer.hidden_dim as u128;
    let v = match layer.kind {
        // Q, K, V, O projections + QK^T + weights*V + softmax
        LayerKind::Attention => {
            let h = layer.heads as u128;
            8 * s * d * d + 4 * s * s * d + SOFTMAX_FLOP_PER_ELEMENT as u128 * s * s * h
        }
        LayerKind::FeedForward => 4 * s * d * layer.ffn_dim as u128,
        LayerKind::LayerNorm => 5 * s * d,
        LayerKind::Embedding => 2 * s * d,
        LayerKind::Classifier => 2 * s * d * layer.vocab_or_class_dim as u128,
        LayerKind::Custom => {
            return layer
                .custom
                .map_or(0, |c| c.flop.eval(layer.effective_seq(seq_len)))
        }
    };
    saturate(v)
}

/// Activation memory in bytes; attention also holds its score matrices.
pub fn memory_of_layer(layer: &LayerSpec, seq_len: u64) -> u64 {
    let s = layer.effective_seq(seq_len) as u128;
    let activation = s * layer.hidden_dim as u128 * ELEMENT_BYTES as u128;
    let v = match layer.kind {
        LayerKind::Attention => activation + s * s * layer.heads as u128 * ELEMENT_BYTES as u128,
        LayerKind::Custom => match layer.custom.and_then(|c| c.memory) {
            Some(poly) => return poly.eval(layer.effective_seq(seq_len)),
            None => activation,
        },
        _ => activation,
    };
    saturate(v)
}

/// Size of the tensor this entry hands to the next one.
pub fn output_bytes(layer: &LayerSpec, seq_len: u64) -> u64 {
    match layer.kind {
        LayerKind::Classifier => layer.vocab_or_class_dim.saturating_mul(ELEMENT_BYTES),
        _ => saturate(
            layer.effective_seq(seq_len) as u128 * layer.hidden_dim as u128 * ELEMENT_BYTES as u128,
        ),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec<T> {
    pub name: String,
    /// FLOP per second.
    pub throughput: T,
}

impl<T: Scalar> DeviceSpec<T> {
    pub fn new(name: impl Into<String>, throughput: T) -> Result<Self> {
        if !(throughput > T::zero()) {
            return Err(Error::Config("device throughput must be positive".into()));
        }
        Ok(Self {
            name: name.into(),
            throughput,
        })
    }

    pub fn time_for(&self, flop: u64) -> T {
        T::from_u64_lossy(flop) / self.throughput
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMetric {
    #[default]
    Flop,
    Memory,
}

impl std::str::FromStr for CostMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flop" => Ok(CostMetric::Flop),
            "memory" => Ok(CostMetric::Memory),
            other => Err(Error::Config(format!("unknown metric `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerProfile<T> {
    pub index: usize,
    pub kind: LayerKind,
    /// Resource cost under the chosen metric.
    pub r: T,
    #[serde(rename = "client_time_s")]
    pub client_time: T,
    #[serde(rename = "server_time_s")]
    pub server_time: T,
    /// Bytes of this entry's input tensor.
    #[serde(rename = "tau_bytes")]
    pub tau: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile<T> {
    pub model: String,
    pub seq_len: u64,
    pub metric: CostMetric,
    pub layers: Vec<LayerProfile<T>>,
}

impl<T: Scalar> ModelProfile<T> {
    pub fn total_r(&self) -> T {
        self.layers.iter().fold(T::zero(), |acc, l| acc + l.r)
    }

    pub fn total_client_time(&self) -> T {
        self.layers
            .iter()
            .fold(T::zero(), |acc, l| acc + l.client_time)
    }

    pub fn total_server_time(&self) -> T {
        self.layers
            .iter()
            .fold(T::zero(), |acc, l| acc + l.server_time)
    }
}

pub fn profile<T: Scalar>(
    spec: &ModelSpec,
    client: &DeviceSpec<T>,
    server: &DeviceSpec<T>,
    metric: CostMetric,
) -> ModelProfile<T> {
    let mut tau = spec.input_bytes();
    let layers = spec
        .layers
        .iter()
        .enumerate()
        .map(|(index, layer)| {
            let flop = flop_of_layer(layer, spec.seq_len);
            let r = match metric {
                CostMetric::Flop => flop,
                CostMetric::Memory => memory_of_layer(layer, spec.seq_len),
            };
            let entry = LayerProfile {
                index,
                kind: layer.kind,
                r: T::from_u64_lossy(r),
                client_time: client.time_for(flop),
                server_time: server.time_for(flop),
                tau,
            };
            tau = output_bytes(layer, spec.seq_len);
            entry
        })
        .collect();
    ModelProfile {
        model: spec.name.clone(),
        seq_len: spec.seq_len,
        metric,
        layers,
    }
}

/// Device whose throughput runs the whole model in `target_total_time`.
pub fn calibrate<T: Scalar>(
    name: &str,
    spec: &ModelSpec,
    target_total_time: T,
) -> Result<DeviceSpec<T>> {
    if !(target_total_time > T::zero()) {
        return Err(Error::Config(
            "calibration target time must be positive".into(),
        ));
    }
    let flop = spec.total_flop();
    if flop == 0 {
        return Err(Error::DegenerateModel);
    }
    DeviceSpec::new(name, T::from_u64_lossy(flop) / target_total_time)
}

/// Client and server calibrated so `bert-12` at 4096 tokens takes 7.727 s
/// on the client and 0.0979 s on the server.
pub fn reference_devices<T: Scalar>() -> (DeviceSpec<T>, DeviceSpec<T>) {
    let spec = build_preset(REFERENCE_MODEL, REFERENCE_SEQ_LEN).expect("reference preset");
    let client = calibrate("client", &spec, T::from_f64_lossy(REFERENCE_CLIENT_SECONDS))
        .expect("reference client");
    let server = calibrate("server", &spec, T::from_f64_lossy(REFERENCE_SERVER_SECONDS))
        .expect("reference server");
    (client, server)
}
