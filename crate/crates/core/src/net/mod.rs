//! One encoder, two decoders.
//!
//! The encoder is `levels` stride-2 convolutions (each followed by a leaky
//! rectifier) over the two-channel concatenation of source and target. Each
//! decoder starts with a convolution at the coarsest level and an upsampling,
//! then runs `levels - 1` computation blocks
//! `combine -> concat -> conv -> activation -> upsample` and finishes with an
//! 8-channel convolution and a 3-channel flow convolution. The forward decoder
//! combines skip features by addition, the backward decoder by subtraction
//! (`encoder - decoder`); the decoders are otherwise identical.

mod checkpoint;
pub mod layers;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Shape3;
use crate::volume::{FlowField3, Volume3};

pub use checkpoint::{load_checkpoint, load_checkpoint_into, save_checkpoint, CheckpointInfo, CKPT_MAGIC};
pub use layers::{Tensor, UpsampleMode};

use layers::*;

/// Channels of the last computation block and of the refinement convolution.
pub const REFINE_CHANNELS: usize = 8;
pub const FLOW_CHANNELS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv3,
    LeakyRelu,
    Upsample2,
    AddSkip,
    SubSkip,
    /// Joins the preceding combine layer's output with that layer's input.
    Concat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    /// 1 or 2; meaningful for convolutions only.
    pub stride: usize,
    /// Encoder level (1-based) of the skip feature for combine and concat layers.
    pub skip_source: Option<usize>,
    /// Offset into the flat parameter vector (convolutions only).
    pub param_offset: usize,
}

impl LayerSpec {
    fn conv(cin: usize, cout: usize, stride: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Conv3,
            in_channels: cin,
            out_channels: cout,
            stride,
            skip_source: None,
            param_offset: 0,
        }
    }

    fn pointwise(kind: LayerKind, channels: usize) -> Self {
        LayerSpec {
            kind,
            in_channels: channels,
            out_channels: channels,
            stride: 1,
            skip_source: None,
            param_offset: 0,
        }
    }

    fn skip(kind: LayerKind, cin: usize, cout: usize, level: usize) -> Self {
        LayerSpec {
            kind,
            in_channels: cin,
            out_channels: cout,
            stride: 1,
            skip_source: Some(level),
            param_offset: 0,
        }
    }

    /// `27 * in * out + out` for convolutions, 0 otherwise.
    pub fn param_count(&self) -> usize {
        match self.kind {
            LayerKind::Conv3 => 27 * self.in_channels * self.out_channels + self.out_channels,
            _ => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub levels: usize,
    pub base_channels: usize,
    pub input_shape: Shape3,
    #[serde(default)]
    pub upsample: UpsampleMode,
}

impl NetworkConfig {
    pub fn new(levels: usize, base_channels: usize, input_shape: Shape3) -> Self {
        NetworkConfig {
            levels,
            base_channels,
            input_shape,
            upsample: UpsampleMode::Nearest,
        }
    }

    /// Four levels of 32 channels over 192x224x192 inputs.
    pub fn paper_scale() -> Self {
        NetworkConfig::new(4, 32, Shape3::new(192, 224, 192))
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::InvalidArgument(format!("levels must be >= 2, got {}", self.levels)));
        }
        if self.base_channels == 0 {
            return Err(Error::InvalidArgument("base_channels must be >= 1".into()));
        }
        if self.levels >= usize::BITS as usize {
            return Err(Error::InvalidArgument(format!("levels {} too large", self.levels)));
        }
        let div = 1usize << self.levels;
        if !self.input_shape.is_valid() || self.input_shape.0.iter().any(|&d| d % div != 0) {
            return Err(Error::ShapeMismatch(format!(
                "input shape {} must be divisible by 2^{} = {div} on every axis",
                self.input_shape, self.levels
            )));
        }
        Ok(())
    }

    /// Output channels of each computation block.
    pub fn block_channels(&self) -> Vec<usize> {
        let n = self.levels - 1;
        (0..n)
            .map(|j| if j + 1 == n { REFINE_CHANNELS } else { self.base_channels })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Forward,
    Backward,
}

#[derive(Clone, Debug)]
pub struct Network {
    config: NetworkConfig,
    pub encoder: Vec<LayerSpec>,
    pub decoder_fwd: Vec<LayerSpec>,
    pub decoder_bwd: Vec<LayerSpec>,
    params: Vec<f64>,
    grads: Vec<f64>,
    /// Bumped on every parameter mutation so stale tapes can be detected.
    version: u64,
}

fn encoder_specs(cfg: &NetworkConfig) -> Vec<LayerSpec> {
    let b = cfg.base_channels;
    let mut v = Vec::new();
    for level in 0..cfg.levels {
        let cin = if level == 0 { 2 } else { b };
        v.push(LayerSpec::conv(cin, b, 2));
        v.push(LayerSpec::pointwise(LayerKind::LeakyRelu, b));
    }
    v
}

fn decoder_specs(cfg: &NetworkConfig, combine: LayerKind) -> Vec<LayerSpec> {
    let b = cfg.base_channels;
    let mut v = vec![
        LayerSpec::conv(b, b, 1),
        LayerSpec::pointwise(LayerKind::LeakyRelu, b),
        LayerSpec::pointwise(LayerKind::Upsample2, b),
    ];
    let mut ch = b;
    for (j, out) in cfg.block_channels().into_iter().enumerate() {
        let level = cfg.levels - 1 - j;
        v.push(LayerSpec::skip(combine, ch, ch, level));
        v.push(LayerSpec::skip(LayerKind::Concat, ch, 2 * ch, level));
        v.push(LayerSpec::conv(2 * ch, out, 1));
        v.push(LayerSpec::pointwise(LayerKind::LeakyRelu, out));
        v.push(LayerSpec::pointwise(LayerKind::Upsample2, out));
        ch = out;
    }
    v.push(LayerSpec::conv(ch, REFINE_CHANNELS, 1));
    v.push(LayerSpec::pointwise(LayerKind::LeakyRelu, REFINE_CHANNELS));
    v.push(LayerSpec::conv(REFINE_CHANNELS, FLOW_CHANNELS, 1));
    v
}

fn assign_offsets(layers: &mut [LayerSpec], offset: &mut usize) {
    for l in layers.iter_mut() {
        if l.kind == LayerKind::Conv3 {
            l.param_offset = *offset;
            *offset += l.param_count();
        }
    }
}

/// Everything the backward pass needs from one forward pass.
#[derive(Clone, Debug)]
pub struct Tape {
    version: u64,
    shape: Shape3,
    encoder: Vec<Tensor>,
    decoder_fwd: Vec<Tensor>,
    decoder_bwd: Option<Vec<Tensor>>,
}

impl Tape {
    pub fn ran_backward_decoder(&self) -> bool {
        self.decoder_bwd.is_some()
    }
}

impl Network {
    /// Builds the network with Glorot-uniform weights and zero biases; both
    /// flow convolutions start at zero so the initial flows are the identity.
    pub fn build(config: NetworkConfig, seed: u64) -> Result<Self> {
        let mut net = Self::zeroed(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers: Vec<LayerSpec> = net
            .encoder
            .iter()
            .chain(&net.decoder_fwd)
            .chain(&net.decoder_bwd)
            .filter(|l| l.kind == LayerKind::Conv3)
            .cloned()
            .collect();
        for l in layers {
            let nw = 27 * l.in_channels * l.out_channels;
            if l.out_channels == FLOW_CHANNELS {
                continue;
            }
            let limit = (6.0 / (27 * (l.in_channels + l.out_channels)) as f64).sqrt();
            for w in &mut net.params[l.param_offset..l.param_offset + nw] {
                *w = rng.gen_range(-limit..limit);
            }
        }
        Ok(net)
    }

    /// Same architecture with every parameter zero.
    pub fn zeroed(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut encoder = encoder_specs(&config);
        let mut decoder_fwd = decoder_specs(&config, LayerKind::AddSkip);
        let mut decoder_bwd = decoder_specs(&config, LayerKind::SubSkip);
        let mut offset = 0;
        assign_offsets(&mut encoder, &mut offset);
        assign_offsets(&mut decoder_fwd, &mut offset);
        assign_offsets(&mut decoder_bwd, &mut offset);
        Ok(Network {
            config,
            encoder,
            decoder_fwd,
            decoder_bwd,
            params: vec![0.0; offset],
            grads: vec![0.0; offset],
            version: 0,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version += 1;
        &mut self.params
    }

    pub fn grads(&self) -> &[f64] {
        &self.grads
    }

    pub fn zero_grads(&mut self) {
        self.grads.fill(0.0);
    }

    /// Parameters and gradients together, for an optimizer step.
    pub fn params_and_grads_mut(&mut self) -> (&mut [f64], &[f64]) {
        self.version += 1;
        (&mut self.params, &self.grads)
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Index range of the parameters owned by one decoder.
    pub fn decoder_param_range(&self, branch: Branch) -> std::ops::Range<usize> {
        let layers = match branch {
            Branch::Forward => &self.decoder_fwd,
            Branch::Backward => &self.decoder_bwd,
        };
        let convs: Vec<&LayerSpec> = layers.iter().filter(|l| l.kind == LayerKind::Conv3).collect();
        let first = convs.first().expect("decoder has convolutions");
        let last = convs.last().expect("decoder has convolutions");
        first.param_offset..last.param_offset + last.param_count()
    }

    /// Parameter count implied by the architecture:
    /// sum over convolutions of `27 * in * out + out`.
    pub fn expected_param_count(config: &NetworkConfig) -> usize {
        let b = config.base_channels;
        let conv = |i: usize, o: usize| 27 * i * o + o;
        let enc = conv(2, b) + (config.levels - 1) * conv(b, b);
        let mut dec = conv(b, b);
        let mut ch = b;
        for out in config.block_channels() {
            dec += conv(2 * ch, out);
            ch = out;
        }
        dec += conv(ch, REFINE_CHANNELS) + conv(REFINE_CHANNELS, FLOW_CHANNELS);
        enc + 2 * dec
    }

    fn check_input(&self, s: &Volume3, t: &Volume3) -> Result<()> {
        let want = self.config.input_shape;
        if s.shape() != want || t.shape() != want || s.channels() != 1 || t.channels() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "network expects two single-channel {want} volumes, got {}x{} and {}x{}",
                s.shape(),
                s.channels(),
                t.shape(),
                t.channels()
            )));
        }
        Ok(())
    }

    fn run_layers(&self, layers: &[LayerSpec], input: Tensor, encoder_acts: &[Tensor]) -> Vec<Tensor> {
        let mut acts = Vec::with_capacity(layers.len() + 1);
        acts.push(input);
        for (i, l) in layers.iter().enumerate() {
            let x = &acts[i];
            let y = match l.kind {
                LayerKind::Conv3 => conv3_forward(
                    x,
                    &self.params[l.param_offset..l.param_offset + l.param_count()],
                    l.out_channels,
                    l.stride,
                ),
                LayerKind::LeakyRelu => leaky_relu_forward(x),
                LayerKind::Upsample2 => upsample_forward(x, self.config.upsample),
                LayerKind::AddSkip | LayerKind::SubSkip => {
                    let e = &encoder_acts[2 * l.skip_source.expect("skip source")];
                    combine_forward(e, x, l.kind == LayerKind::SubSkip)
                }
                LayerKind::Concat => concat_forward(x, &acts[i - 1]),
            };
            acts.push(y);
        }
        acts
    }

    fn flow_from(acts: &[Tensor]) -> Result<FlowField3> {
        let out = acts.last().expect("non-empty activations");
        FlowField3::new(out.shape, out.data.clone())
    }

    /// Runs the encoder and both decoders.
    pub fn forward(&self, source: &Volume3, target: &Volume3) -> Result<(FlowField3, FlowField3, Tape)> {
        self.forward_with(source, target, true)
    }

    /// With `run_backward = false` the backward decoder is skipped and the
    /// returned backward flow is zero.
    pub fn forward_with(
        &self,
        source: &Volume3,
        target: &Volume3,
        run_backward: bool,
    ) -> Result<(FlowField3, FlowField3, Tape)> {
        self.check_input(source, target)?;
        let shape = self.config.input_shape;
        let mut input = source.data().to_vec();
        input.extend_from_slice(target.data());
        let enc = self.run_layers(&self.encoder, Tensor::from_data(2, shape, input), &[]);
        let bottom = enc.last().expect("encoder output").clone();
        let dec_f = self.run_layers(&self.decoder_fwd, bottom.clone(), &enc);
        let flow_st = Self::flow_from(&dec_f)?;
        let (flow_ts, dec_b) = if run_backward {
            let dec_b = self.run_layers(&self.decoder_bwd, bottom, &enc);
            (Self::flow_from(&dec_b)?, Some(dec_b))
        } else {
            (FlowField3::zeros(shape), None)
        };
        let tape = Tape {
            version: self.version,
            shape,
            encoder: enc,
            decoder_fwd: dec_f,
            decoder_bwd: dec_b,
        };
        Ok((flow_st, flow_ts, tape))
    }

    /// Backpropagates through one layer list; returns the gradient at its input
    /// and adds skip gradients into `enc_grads`.
    fn backprop_layers(
        &mut self,
        layers: &[LayerSpec],
        acts: &[Tensor],
        grad_out: Tensor,
        enc_grads: &mut [Option<Tensor>],
        want_input_grad: bool,
    ) -> Option<Tensor> {
        let mut grads: Vec<Option<Tensor>> = vec![None; acts.len()];
        grads[layers.len()] = Some(grad_out);
        for (i, l) in layers.iter().enumerate().rev() {
            let Some(g) = grads[i + 1].take() else {
                continue;
            };
            let x = &acts[i];
            let gin = match l.kind {
                LayerKind::Conv3 => {
                    let range = l.param_offset..l.param_offset + l.param_count();
                    let need = want_input_grad || i > 0;
                    conv3_backward(
                        x,
                        &self.params[range.clone()],
                        l.out_channels,
                        l.stride,
                        &g,
                        &mut self.grads[range],
                        need,
                    )
                }
                LayerKind::LeakyRelu => Some(leaky_relu_backward(x, &g)),
                LayerKind::Upsample2 => Some(upsample_backward(&g, x.shape, self.config.upsample)),
                LayerKind::AddSkip | LayerKind::SubSkip => {
                    let level = 2 * l.skip_source.expect("skip source");
                    accumulate(&mut enc_grads[level], &g);
                    if l.kind == LayerKind::SubSkip {
                        let neg: Vec<f64> = g.data.iter().map(|v| -v).collect();
                        Some(Tensor::from_data(g.channels, g.shape, neg))
                    } else {
                        Some(g)
                    }
                }
                LayerKind::Concat => {
                    let (combined, decoder) = concat_backward(&g, x.channels);
                    accumulate(&mut grads[i - 1], &decoder);
                    Some(combined)
                }
            };
            if let Some(gin) = gin {
                accumulate(&mut grads[i], &gin);
            }
        }
        grads[0].take()
    }

    /// Adds `d(objective)/d(params)` into the gradient buffer, given the
    /// objective's gradients with respect to both flows. `grad_flow_ts` must be
    /// `None` exactly when the tape skipped the backward decoder.
    pub fn backward(&mut self, tape: &Tape, grad_flow_st: &[f64], grad_flow_ts: Option<&[f64]>) -> Result<()> {
        if tape.version != self.version || tape.shape != self.config.input_shape {
            return Err(Error::StaleTape(format!(
                "tape from parameter version {} but network is at {}",
                tape.version, self.version
            )));
        }
        let n = 3 * tape.shape.voxels();
        if grad_flow_st.len() != n || grad_flow_ts.is_some_and(|g| g.len() != n) {
            return Err(Error::ShapeMismatch("flow gradient length".into()));
        }
        if grad_flow_ts.is_some() != tape.decoder_bwd.is_some() {
            return Err(Error::StaleTape("backward-decoder gradient does not match the tape".into()));
        }
        let mut enc_grads: Vec<Option<Tensor>> = vec![None; tape.encoder.len()];
        let top = tape.encoder.len() - 1;

        let layers = self.decoder_fwd.clone();
        let g = Tensor::from_data(FLOW_CHANNELS, tape.shape, grad_flow_st.to_vec());
        if let Some(gb) = self.backprop_layers(&layers, &tape.decoder_fwd, g, &mut enc_grads, true) {
            accumulate(&mut enc_grads[top], &gb);
        }
        if let (Some(acts), Some(gts)) = (&tape.decoder_bwd, grad_flow_ts) {
            let layers = self.decoder_bwd.clone();
            let g = Tensor::from_data(FLOW_CHANNELS, tape.shape, gts.to_vec());
            if let Some(gb) = self.backprop_layers(&layers, acts, g, &mut enc_grads, true) {
                accumulate(&mut enc_grads[top], &gb);
            }
        }

        // walk the encoder backwards, folding in skip gradients at each level
        let layers = self.encoder.clone();
        let mut g = enc_grads[top].take();
        for i in (0..layers.len()).rev() {
            let Some(gi) = g.take() else {
                g = enc_grads[i].take();
                continue;
            };
            let l = &layers[i];
            let x = &tape.encoder[i];
            let gin = match l.kind {
                LayerKind::Conv3 => {
                    let range = l.param_offset..l.param_offset + l.param_count();
                    conv3_backward(
                        x,
                        &self.params[range.clone()],
                        l.out_channels,
                        l.stride,
                        &gi,
                        &mut self.grads[range],
                        i > 0,
                    )
                }
                LayerKind::LeakyRelu => Some(leaky_relu_backward(x, &gi)),
                _ => unreachable!("encoder holds convolutions and activations only"),
            };
            g = gin;
            if let Some(extra) = enc_grads[i].take() {
                match &mut g {
                    Some(t) => t.add_assign(&extra),
                    None => g = Some(extra),
                }
            }
        }
        Ok(())
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: &Tensor) {
    match slot {
        Some(t) => t.add_assign(g),
        None => *slot = Some(g.clone()),
    }
}
