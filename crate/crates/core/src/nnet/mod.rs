//! LSTM sequence-to-sequence autoencoder, written from scratch.
//!
//! The encoder stack consumes a normalized segment one sample per step; the
//! last hidden state of the top encoder layer is the latent code. The decoder
//! stack receives that latent as its input at every step (repeat-vector
//! scheme) and a linear projection maps the top decoder hidden state to one
//! output sample per step.
//!
//! With [`DecoderMode::SeededReverse`] (the default) the bottom decoder layer
//! starts from the top encoder layer's final `(h, c)` and the decoder emits
//! the segment last sample first; the output is flipped back so it is always
//! aligned with the input. [`DecoderMode::Plain`] starts from zero state and
//! decodes forwards.
//!
//! The network works on chunks of `seq_len` samples (2 s by default); an
//! 8 s segment is reconstructed as four independent chunks.
//!
//! All parameters live in one flat `Vec<f64>`; [`Layout`] knows where each
//! layer's blocks sit. Gradients use the same layout, which keeps the
//! optimizer, clipping and gradient checks to plain slice loops.

mod engine;
mod gemm;
mod io;
mod lstm;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{PIPELINE_RATE_HZ, SEGMENT_LEN_S};
use crate::error::{Error, Result};

pub use engine::{backward, backward_batch, backward_to_target, loss_mse, reconstruct, reconstruct_batch, Gradients};
pub use io::{load_model, save_model, MODEL_VERSION};
pub use lstm::{lstm_step, sigmoid, LayerRef, LstmLayerParams, GATES};
pub use train::{clip_global_norm, train, train_with_progress, Adam, EpochStats, TrainConfig, TrainOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderMode {
    /// Zero initial state, forward decoding.
    Plain,
    /// Encoder-seeded state, reverse-time decoding.
    #[default]
    SeededReverse,
}

/// Layer sizes of the autoencoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    /// Hidden sizes of the encoder stack, bottom first. The last entry is the latent size.
    pub encoder_hidden: Vec<usize>,
    /// Hidden sizes of the decoder stack, bottom first.
    pub decoder_hidden: Vec<usize>,
    /// Steps per autoencoded chunk. Longer inputs are processed as
    /// consecutive chunks of this length.
    pub seq_len: usize,
    #[serde(default)]
    pub decoder: DecoderMode,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            input_dim: 1,
            encoder_hidden: vec![80, 40],
            decoder_hidden: vec![40, 80],
            seq_len: 64,
            decoder: DecoderMode::default(),
        }
    }
}

impl Architecture {
    /// Encoder with the given sizes and a mirrored decoder.
    pub fn mirrored(encoder_hidden: &[usize], seq_len: usize) -> Self {
        Architecture {
            input_dim: 1,
            encoder_hidden: encoder_hidden.to_vec(),
            decoder_hidden: encoder_hidden.iter().rev().copied().collect(),
            seq_len,
            decoder: DecoderMode::default(),
        }
    }

    pub fn with_decoder(mut self, decoder: DecoderMode) -> Self {
        self.decoder = decoder;
        self
    }

    pub fn latent_dim(&self) -> usize {
        *self.encoder_hidden.last().unwrap_or(&0)
    }

    pub fn is_default(&self) -> bool {
        *self == Architecture::default()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim != 1 {
            return Err(Error::Dimension(format!("input_dim must be 1, got {}", self.input_dim)));
        }
        if self.encoder_hidden.is_empty() || self.decoder_hidden.is_empty() {
            return Err(Error::Dimension("encoder and decoder need at least one layer".into()));
        }
        if self.encoder_hidden.iter().chain(&self.decoder_hidden).any(|&h| h == 0) {
            return Err(Error::Dimension("hidden sizes must be positive".into()));
        }
        if self.seq_len < 2 {
            return Err(Error::Dimension("seq_len must be at least 2".into()));
        }
        if self.decoder == DecoderMode::SeededReverse && self.decoder_hidden[0] != self.latent_dim() {
            return Err(Error::Dimension(format!(
                "seeded decoder needs its first layer ({}) to match the latent size ({})",
                self.decoder_hidden[0],
                self.latent_dim()
            )));
        }
        Ok(())
    }

    /// `(input_dim, hidden_dim)` of every LSTM layer: encoder layers then decoder layers.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        let mut input = self.input_dim;
        for &h in &self.encoder_hidden {
            shapes.push((input, h));
            input = h;
        }
        for &h in &self.decoder_hidden {
            shapes.push((input, h));
            input = h;
        }
        shapes
    }

    pub fn output_dim_in(&self) -> usize {
        *self.decoder_hidden.last().unwrap_or(&0)
    }
}

/// Offsets of one layer's blocks inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSlots {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w: usize,
    pub u: usize,
    pub b: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub layers: Vec<LayerSlots>,
    pub n_encoder: usize,
    pub out_w: usize,
    pub out_b: usize,
    pub out_dim_in: usize,
    pub total: usize,
}

impl Layout {
    pub fn new(arch: &Architecture) -> Self {
        let mut off = 0;
        let mut layers = Vec::new();
        for (input_dim, hidden_dim) in arch.layer_shapes() {
            let w = off;
            off += 4 * hidden_dim * input_dim;
            let u = off;
            off += 4 * hidden_dim * hidden_dim;
            let b = off;
            off += 4 * hidden_dim;
            layers.push(LayerSlots {
                input_dim,
                hidden_dim,
                w,
                u,
                b,
            });
        }
        let out_dim_in = arch.output_dim_in();
        let out_w = off;
        off += out_dim_in;
        let out_b = off;
        off += 1;
        Layout {
            layers,
            n_encoder: arch.encoder_hidden.len(),
            out_w,
            out_b,
            out_dim_in,
            total: off,
        }
    }

    pub fn layer<'a>(&self, values: &'a [f64], index: usize) -> LayerRef<'a> {
        let s = self.layers[index];
        let h = s.hidden_dim;
        LayerRef {
            input_dim: s.input_dim,
            hidden_dim: h,
            w: &values[s.w..s.w + 4 * h * s.input_dim],
            u: &values[s.u..s.u + 4 * h * h],
            b: &values[s.b..s.b + 4 * h],
        }
    }
}

/// Preprocessing the model expects its inputs to have gone through.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationMeta {
    pub pipeline_rate_hz: f64,
    pub segment_len_s: f64,
    pub scheme: String,
}

impl Default for NormalizationMeta {
    fn default() -> Self {
        NormalizationMeta {
            pipeline_rate_hz: PIPELINE_RATE_HZ,
            segment_len_s: SEGMENT_LEN_S,
            scheme: "zscore-population".into(),
        }
    }
}

/// Every weight and bias of the autoencoder plus its architecture metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: Architecture,
    pub normalization: NormalizationMeta,
    layout: Layout,
    values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        Ok(ModelParams {
            values: vec![0.0; layout.total],
            layout,
            arch,
            normalization: NormalizationMeta::default(),
        })
    }

    /// Xavier-uniform (gain 1) weights per gate block, zero biases except the
    /// forget gate, which starts at +1.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = model.layout.layers.clone();
        for s in layers {
            let h = s.hidden_dim;
            let w_lim = (6.0 / (s.input_dim + h) as f64).sqrt();
            for v in &mut model.values[s.w..s.w + 4 * h * s.input_dim] {
                *v = rng.gen_range(-w_lim..=w_lim);
            }
            let u_lim = (6.0 / (2 * h) as f64).sqrt();
            for v in &mut model.values[s.u..s.u + 4 * h * h] {
                *v = rng.gen_range(-u_lim..=u_lim);
            }
            for v in &mut model.values[s.b + h..s.b + 2 * h] {
                *v = 1.0;
            }
        }
        let d = model.layout.out_dim_in;
        let lim = (6.0 / (d + 1) as f64).sqrt();
        let start = model.layout.out_w;
        for v in &mut model.values[start..start + d] {
            *v = rng.gen_range(-lim..=lim);
        }
        Ok(model)
    }

    pub(crate) fn from_parts(arch: Architecture, normalization: NormalizationMeta, values: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        if values.len() != layout.total {
            return Err(Error::Dimension(format!(
                "expected {} parameters, got {}",
                layout.total,
                values.len()
            )));
        }
        Ok(ModelParams {
            arch,
            normalization,
            layout,
            values,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn n_params(&self) -> usize {
        self.values.len()
    }

    pub fn layer(&self, index: usize) -> LayerRef<'_> {
        self.layout.layer(&self.values, index)
    }

    pub fn encoder_layer(&self, index: usize) -> LayerRef<'_> {
        self.layer(index)
    }

    pub fn decoder_layer(&self, index: usize) -> LayerRef<'_> {
        self.layer(self.layout.n_encoder + index)
    }

    pub fn output_weights(&self) -> &[f64] {
        &self.values[self.layout.out_w..self.layout.out_w + self.layout.out_dim_in]
    }

    pub fn output_bias(&self) -> f64 {
        self.values[self.layout.out_b]
    }

    pub fn set_output_bias(&mut self, v: f64) {
        let i = self.layout.out_b;
        self.values[i] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
