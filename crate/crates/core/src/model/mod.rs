//! The dual-stream classifier.
//!
//! Two convolutional backbones with independent weights see the RGB image
//! (spatial stream) and its guided residual (residual stream). Each
//! backbone is a stack of `3×3` stride-2 convolutions with ReLU, ending in a
//! `C×8×8` feature map for 64×64 inputs. Every stream has an auxiliary head
//! (global average pool, then linear) whose loss feeds the stream weights;
//! the two feature maps are fused (attention fusion or an element-wise
//! baseline), pooled and classified by the detector head.

mod checkpoint;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use train::{
    evaluate, evaluate_inputs, input_norm, train, train_inputs, EpochRecord, Evaluation,
};

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::afm::{channel_attention_on, fuse_on, StreamWeights};
use crate::error::{Error, Result};
use crate::guided::GuidedFilterParams;
use crate::image::Image;
use crate::mte::extract_guided_residual;
use crate::tensor::{AdamConfig, Tape, Tensor, Var};

/// Channels of the RGB input and of its residual.
pub const INPUT_CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMethod {
    Afm,
    Max,
    Min,
    Sum,
    Concat,
}

impl FusionMethod {
    pub const ALL: [FusionMethod; 5] = [
        FusionMethod::Afm,
        FusionMethod::Max,
        FusionMethod::Min,
        FusionMethod::Sum,
        FusionMethod::Concat,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMethod::Afm => "afm",
            FusionMethod::Max => "max",
            FusionMethod::Min => "min",
            FusionMethod::Sum => "sum",
            FusionMethod::Concat => "concat",
        }
    }
}

impl fmt::Display for FusionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FusionMethod::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown fusion method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Output channels of each conv block; the last entry is the bottleneck `C`.
    pub channels: Vec<usize>,
    pub input_size: usize,
    pub n_classes: usize,
    pub use_mte: bool,
    pub use_afm: bool,
    pub fusion: FusionMethod,
    pub skip_connection: bool,
    /// Keep the last epoch's stream weights for inference; otherwise `(0.5, 0.5)`.
    pub freeze_epoch_weights: bool,
    pub guided: GuidedFilterParams,
    pub optimizer: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: vec![8, 16, 16],
            input_size: 64,
            n_classes: 4,
            use_mte: true,
            use_afm: true,
            fusion: FusionMethod::Afm,
            skip_connection: false,
            freeze_epoch_weights: true,
            guided: GuidedFilterParams::default(),
            optimizer: AdamConfig::default(),
            epochs: 6,
            batch_size: 1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// One ablation cell: MTE on or off, with the given fusion.
    pub fn ablation(use_mte: bool, fusion: FusionMethod) -> Self {
        ModelConfig {
            use_mte,
            use_afm: fusion == FusionMethod::Afm,
            fusion,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.channels.is_empty() || self.channels.contains(&0) {
            return bad(format!("conv channels must be positive, got {:?}", self.channels));
        }
        if self.input_size == 0 {
            return bad("input_size must be positive".into());
        }
        if self.n_classes < 2 {
            return bad(format!("n_classes must be at least 2, got {}", self.n_classes));
        }
        if self.use_afm != (self.fusion == FusionMethod::Afm) {
            return bad(format!(
                "fusion {} is inconsistent with use_afm = {}",
                self.fusion, self.use_afm
            ));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be at least 1".into());
        }
        self.guided.validate()
    }

    pub fn bottleneck_channels(&self) -> usize {
        *self.channels.last().expect("validated nonempty")
    }

    /// Width of the pooled fused feature the detector sees.
    pub fn detector_width(&self) -> usize {
        match self.fusion {
            FusionMethod::Concat => 2 * self.bottleneck_channels(),
            _ => self.bottleneck_channels(),
        }
    }

    /// Side of the bottleneck map after the stride-2 blocks.
    pub fn bottleneck_size(&self) -> usize {
        self.channels.iter().fold(self.input_size, |s, _| s.div_ceil(2))
    }
}

/// Un-normalized inputs of the two streams for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamInputs {
    pub rgb: Tensor,
    pub gr: Tensor,
}

/// `C×H×W` tensor of an image's planes.
pub fn image_tensor(img: &Image) -> Tensor {
    let data = img.planes().iter().flat_map(|p| p.data().iter().copied()).collect();
    Tensor::new(&[img.channels(), img.height(), img.width()], data)
        .expect("planes fill the shape")
}

/// Stream inputs of `img`: the residual stream gets the guided residual
/// with MTE, the image itself without.
pub fn stream_inputs(img: &Image, config: &ModelConfig) -> Result<StreamInputs> {
    if img.width() != config.input_size
        || img.height() != config.input_size
        || img.channels() != INPUT_CHANNELS
    {
        return Err(Error::DimensionMismatch(format!(
            "model expects {s}x{s}x{INPUT_CHANNELS}, got {}x{}x{}",
            img.width(),
            img.height(),
            img.channels(),
            s = config.input_size
        )));
    }
    let rgb = image_tensor(img);
    let gr = if config.use_mte {
        image_tensor(&extract_guided_residual(img, &config.guided)?.residual)
    } else {
        rgb.clone()
    };
    Ok(StreamInputs { rgb, gr })
}

/// Per-channel standardization of one stream's input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn identity(channels: usize) -> Self {
        ChannelStats {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Mean and standard deviation of every channel across `tensors`; a
    /// zero deviation is replaced by 1.
    pub fn fit<'a>(tensors: impl IntoIterator<Item = &'a Tensor>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut count = 0usize;
        for t in tensors {
            let c = t.shape()[0];
            if sum.is_empty() {
                sum = vec![0.0; c];
                sq = vec![0.0; c];
            }
            if c != sum.len() {
                return Err(Error::DimensionMismatch(format!(
                    "channel count {c} vs {}",
                    sum.len()
                )));
            }
            let plane = t.numel() / c;
            for (ch, chunk) in t.data().chunks(plane).enumerate() {
                sum[ch] += chunk.iter().sum::<f64>();
                sq[ch] += chunk.iter().map(|v| v * v).sum::<f64>();
            }
            count += plane;
        }
        if count == 0 {
            return Err(Error::EmptyDataset);
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let s = (q / n - m * m).max(0.0).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(ChannelStats { mean, std })
    }

    pub fn apply(&self, t: &Tensor) -> Tensor {
        let plane = t.numel() / self.mean.len();
        Tensor::from_fn(t.shape(), |i| {
            let c = i / plane;
            (t.data()[i] - self.mean[c]) / self.std[c]
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub rgb: ChannelStats,
    pub gr: ChannelStats,
}

impl Default for InputNorm {
    fn default() -> Self {
        InputNorm {
            rgb: ChannelStats::identity(INPUT_CHANNELS),
            gr: ChannelStats::identity(INPUT_CHANNELS),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    /// `C_out×C_in×3×3`.
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Backbone and auxiliary head of one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamParams {
    pub convs: Vec<ConvLayer>,
    /// `n_classes×C`.
    pub head_w: Tensor,
    pub head_b: Tensor,
}

impl StreamParams {
    fn init(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut c_in = INPUT_CHANNELS;
        let convs = config
            .channels
            .iter()
            .map(|&c_out| {
                // He initialization for ReLU
                let std = (2.0 / (c_in * 9) as f64).sqrt();
                let layer = ConvLayer {
                    weight: Tensor::randn(&[c_out, c_in, 3, 3], std, rng),
                    bias: Tensor::zeros(&[c_out]),
                };
                c_in = c_out;
                layer
            })
            .collect();
        StreamParams {
            convs,
            head_w: Tensor::zeros(&[config.n_classes, c_in]),
            head_b: Tensor::zeros(&[config.n_classes]),
        }
    }

    fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for c in &self.convs {
            out.push(&c.weight);
            out.push(&c.bias);
        }
        out.push(&self.head_w);
        out.push(&self.head_b);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for c in &mut self.convs {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }

    fn names(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        for i in 0..self.convs.len() {
            out.push(format!("{prefix}.conv{i}.weight"));
            out.push(format!("{prefix}.conv{i}.bias"));
        }
        out.push(format!("{prefix}.head.weight"));
        out.push(format!("{prefix}.head.bias"));
        out
    }
}

/// Logits of the detector and of the two auxiliary heads.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamLogits {
    pub fused: Vec<f64>,
    pub rgb: Vec<f64>,
    pub gr: Vec<f64>,
}

/// Tape handles of a forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub fused: Var,
    pub rgb: Var,
    pub gr: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrNet {
    pub config: ModelConfig,
    pub rgb: StreamParams,
    pub gr: StreamParams,
    /// `n_classes×detector_width`.
    pub det_w: Tensor,
    pub det_b: Tensor,
    /// Stream weights used for fusion; after training, those of the last epoch.
    pub weights: StreamWeights,
    pub norm: InputNorm,
}

impl GrNet {
    /// Fresh model: He-initialized convolutions from `config.seed`, zero heads.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let rgb = StreamParams::init(&config, &mut rng);
        let gr = StreamParams::init(&config, &mut rng);
        Ok(GrNet {
            det_w: Tensor::zeros(&[config.n_classes, config.detector_width()]),
            det_b: Tensor::zeros(&[config.n_classes]),
            rgb,
            gr,
            weights: StreamWeights::default(),
            norm: InputNorm::default(),
            config,
        })
    }

    /// Parameter names in [`GrNet::parameters`] order.
    pub fn parameter_names(&self) -> Vec<String> {
        let mut names = self.rgb.names("rgb");
        names.extend(self.gr.names("gr"));
        names.push("detector.weight".into());
        names.push("detector.bias".into());
        names
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut out = self.rgb.tensors();
        out.extend(self.gr.tensors());
        out.push(&self.det_w);
        out.push(&self.det_b);
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.rgb.tensors_mut();
        out.extend(self.gr.tensors_mut());
        out.push(&mut self.det_w);
        out.push(&mut self.det_b);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|t| t.numel()).sum()
    }

    /// Weights applied at inference time.
    pub fn inference_weights(&self) -> StreamWeights {
        if self.config.freeze_epoch_weights {
            self.weights
        } else {
            StreamWeights::default()
        }
    }

    /// Puts every parameter on `tape` (tracked), in [`GrNet::parameters`] order.
    pub fn register(&self, tape: &mut Tape) -> Vec<Var> {
        self.parameters().into_iter().map(|t| tape.param(t)).collect()
    }

    /// Puts every parameter on `tape` as a constant.
    pub fn register_constant(&self, tape: &mut Tape) -> Vec<Var> {
        self.parameters().into_iter().map(|t| tape.constant(t)).collect()
    }

    fn linear_on(tape: &mut Tape, w: Var, b: Var, x: Var) -> Result<Var> {
        let n = tape.shape(x)[0];
        let col = tape.reshape(x, &[n, 1])?;
        let y = tape.matmul(w, col)?;
        let classes = tape.shape(y)[0];
        let y = tape.reshape(y, &[classes])?;
        tape.add(y, b)
    }

    /// Backbone features and auxiliary logits; `vars` holds this stream's
    /// parameters in registration order.
    fn stream_on(tape: &mut Tape, vars: &[Var], x: Var) -> Result<(Var, Var)> {
        let blocks = (vars.len() - 2) / 2;
        let mut h = x;
        for i in 0..blocks {
            let c = tape.conv2d(h, vars[2 * i], Some(vars[2 * i + 1]), 2, 1)?;
            h = tape.relu(c);
        }
        let pooled = tape.global_avg_pool(h)?;
        let logits = Self::linear_on(tape, vars[2 * blocks], vars[2 * blocks + 1], pooled)?;
        Ok((h, logits))
    }

    /// Records a forward pass on already-normalized inputs.
    pub fn forward_on(
        &self,
        tape: &mut Tape,
        params: &[Var],
        rgb: Var,
        gr: Var,
        weights: &StreamWeights,
    ) -> Result<ForwardVars> {
        let per_stream = 2 * self.config.channels.len() + 2;
        let (f_rgb, l_rgb) = Self::stream_on(tape, &params[..per_stream], rgb)?;
        let (f_gr, l_gr) = Self::stream_on(tape, &params[per_stream..2 * per_stream], gr)?;
        let fused = match self.config.fusion {
            FusionMethod::Afm => {
                let skip = self.config.skip_connection;
                let (a_rgb, _) = channel_attention_on(tape, f_rgb, skip)?;
                let (a_gr, _) = channel_attention_on(tape, f_gr, skip)?;
                fuse_on(tape, a_rgb, a_gr, weights)?
            }
            FusionMethod::Max => tape.maximum(f_rgb, f_gr)?,
            FusionMethod::Min => tape.minimum(f_rgb, f_gr)?,
            FusionMethod::Sum => tape.add(f_rgb, f_gr)?,
            FusionMethod::Concat => tape.concat(&[f_rgb, f_gr])?,
        };
        let pooled = tape.global_avg_pool(fused)?;
        let det = Self::linear_on(tape, params[2 * per_stream], params[2 * per_stream + 1], pooled)?;
        Ok(ForwardVars {
            fused: det,
            rgb: l_rgb,
            gr: l_gr,
        })
    }

    /// Normalized stream inputs.
    pub fn normalize(&self, inputs: &StreamInputs) -> (Tensor, Tensor) {
        (self.norm.rgb.apply(&inputs.rgb), self.norm.gr.apply(&inputs.gr))
    }

    pub fn forward_inputs(&self, inputs: &StreamInputs) -> Result<StreamLogits> {
        let expect = [INPUT_CHANNELS, self.config.input_size, self.config.input_size];
        for t in [&inputs.rgb, &inputs.gr] {
            if t.shape() != expect {
                return Err(Error::DimensionMismatch(format!(
                    "stream input {:?}, model expects {expect:?}",
                    t.shape()
                )));
            }
        }
        let mut tape = Tape::new();
        let params = self.register_constant(&mut tape);
        let (rgb, gr) = self.normalize(inputs);
        let (rgb, gr) = (tape.constant(&rgb), tape.constant(&gr));
        let out = self.forward_on(&mut tape, &params, rgb, gr, &self.inference_weights())?;
        Ok(StreamLogits {
            fused: tape.value(out.fused).data().to_vec(),
            rgb: tape.value(out.rgb).data().to_vec(),
            gr: tape.value(out.gr).data().to_vec(),
        })
    }

    /// Bottleneck feature maps `(spatial, residual)` for prepared inputs.
    pub fn features(&self, inputs: &StreamInputs) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let params = self.register_constant(&mut tape);
        let (rgb, gr) = self.normalize(inputs);
        let (rgb, gr) = (tape.constant(&rgb), tape.constant(&gr));
        let per_stream = 2 * self.config.channels.len() + 2;
        let (f_rgb, _) = Self::stream_on(&mut tape, &params[..per_stream], rgb)?;
        let (f_gr, _) = Self::stream_on(&mut tape, &params[per_stream..2 * per_stream], gr)?;
        Ok((tape.value(f_rgb).detached(), tape.value(f_gr).detached()))
    }

    /// `(fused, spatial, residual)` logits for one image.
    pub fn forward(&self, img: &Image) -> Result<StreamLogits> {
        self.forward_inputs(&stream_inputs(img, &self.config)?)
    }
}

/// Softmax of a logit vector.
pub fn probabilities(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::generate_base;

    #[test]
    fn config_rules() {
        assert!(ModelConfig::default().validate().is_ok());
        let bad = ModelConfig {
            use_afm: false,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = ModelConfig {
            fusion: FusionMethod::Sum,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(ModelConfig::ablation(false, FusionMethod::Sum).validate().is_ok());
        let cat = ModelConfig::ablation(true, FusionMethod::Concat);
        assert_eq!(cat.detector_width(), 32);
        assert_eq!(ModelConfig::default().bottleneck_size(), 8);
    }

    #[test]
    fn untrained_logits_are_uniform() {
        for fusion in FusionMethod::ALL {
            let net = GrNet::new(ModelConfig::ablation(true, fusion)).unwrap();
            let out = net.forward(&generate_base(1)).unwrap();
            for l in [&out.fused, &out.rgb, &out.gr] {
                assert_eq!(l, &vec![0.0; 4]);
            }
            let p = probabilities(&out.fused);
            let loss = -p[0].ln();
            assert!((loss - 4f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_streams_agree() {
        let mut net = GrNet::new(ModelConfig::ablation(false, FusionMethod::Sum)).unwrap();
        net.rgb.head_w = Tensor::randn(&[4, 16], 1.0, &mut ChaCha8Rng::seed_from_u64(9));
        net.gr = net.rgb.clone();
        let zeros = Image::filled(64, 64, 3, 0.0);
        let out = net.forward(&zeros).unwrap();
        assert_eq!(out.rgb, out.gr);
    }

    #[test]
    fn wrong_size_is_rejected() {
        let net = GrNet::new(ModelConfig::default()).unwrap();
        assert!(matches!(
            net.forward(&Image::filled(32, 32, 3, 0.5)),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(net.forward(&Image::filled(64, 64, 1, 0.5)).is_err());
    }

    #[test]
    fn parameter_names_line_up() {
        let net = GrNet::new(ModelConfig::default()).unwrap();
        assert_eq!(net.parameter_names().len(), net.parameters().len());
        assert_eq!(net.parameter_names()[0], "rgb.conv0.weight");
    }

    #[test]
    fn channel_stats_standardize() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ts: Vec<Tensor> = (0..5)
            .map(|_| Tensor::uniform(&[3, 4, 4], 0.2, 0.9, &mut rng))
            .collect();
        let stats = ChannelStats::fit(&ts).unwrap();
        let normed: Vec<Tensor> = ts.iter().map(|t| stats.apply(t)).collect();
        let again = ChannelStats::fit(&normed).unwrap();
        for c in 0..3 {
            assert!(again.mean[c].abs() < 1e-12);
            assert!((again.std[c] - 1.0).abs() < 1e-12);
        }
        let flat = ChannelStats::fit([&Tensor::filled(&[3, 2, 2], 0.5)]).unwrap();
        assert_eq!(flat.std, vec![1.0; 3]);
    }
}
