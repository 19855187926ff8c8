//! Recurrent slot-attention video autoencoder.
//!
//! Frames are encoded to a coarse feature grid, slots compete for grid
//! locations through a softmax over slots, and each slot is decoded on its own
//! into an RGB image plus an alpha logit map. Alpha maps are normalized across
//! slots and the per-slot images composited by weighted sum.

use serde::{Deserialize, Serialize};
use slotrl_tensor::nn::{Activation, Conv2d, ConvTranspose2d, GruCell, LayerNorm, Linear, Mlp};
use slotrl_tensor::{Builder, Init, Padding, ParamStore, Scalar, Tensor};

use crate::blocks::{grid_coordinates, NormKind, TransformerBlock};
use crate::error::{argument, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaviConfig {
    pub image_size: usize,
    pub num_slots: usize,
    pub slot_dim: usize,
    /// common query/key/value width of slot attention
    pub attention_dim: usize,
    pub encoder_channels: usize,
    pub encoder_kernel: usize,
    pub decoder_channels: usize,
    pub mlp_hidden: usize,
    pub predictor_heads: usize,
    pub first_frame_iterations: usize,
    pub iterations: usize,
    pub epsilon: f64,
}

impl Default for SaviConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            num_slots: 7,
            slot_dim: 128,
            attention_dim: 128,
            encoder_channels: 32,
            encoder_kernel: 5,
            decoder_channels: 32,
            mlp_hidden: 256,
            predictor_heads: 4,
            first_frame_iterations: 3,
            iterations: 1,
            epsilon: 1e-8,
        }
    }
}

/// Stride-2 stages between the image and the feature grid.
const DOWNSAMPLE_STAGES: usize = 3;

impl SaviConfig {
    pub fn grid_size(&self) -> usize {
        self.image_size >> DOWNSAMPLE_STAGES
    }

    pub fn num_locations(&self) -> usize {
        self.grid_size() * self.grid_size()
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || !self.image_size.is_multiple_of(1 << DOWNSAMPLE_STAGES) {
            return Err(argument(format!(
                "image size {} is not a multiple of {}",
                self.image_size,
                1 << DOWNSAMPLE_STAGES
            )));
        }
        if self.num_slots == 0 || self.first_frame_iterations == 0 || self.iterations == 0 {
            return Err(argument("slot count and iteration counts must be positive"));
        }
        if !self.slot_dim.is_multiple_of(self.predictor_heads) {
            return Err(argument("slot_dim must be divisible by predictor_heads"));
        }
        Ok(())
    }
}

/// Convolutional encoder output: features `[B, L, C]` and the positional part `[L, C]`.
#[derive(Clone, Debug)]
pub struct FeatureMap<F: Scalar> {
    pub features: Tensor<F>,
    pub positional: Tensor<F>,
}

#[derive(Clone, Debug)]
pub struct SlotDecomposition<F: Scalar> {
    /// `[B, N, H, W, 3]`
    pub rgb: Tensor<F>,
    /// `[B, N, H, W, 1]`
    pub alpha_logits: Tensor<F>,
    /// `[B, N, H, W, 1]`, summing to one over slots
    pub masks: Tensor<F>,
    /// `[B, H, W, 3]`
    pub composite: Tensor<F>,
}

#[derive(Clone, Debug)]
pub struct SlotAttention<F: Scalar> {
    pub input_norm: LayerNorm<F>,
    pub input_mlp: Mlp<F>,
    pub feature_norm: LayerNorm<F>,
    pub slot_norm: LayerNorm<F>,
    pub query: Linear<F>,
    pub key: Linear<F>,
    pub value: Linear<F>,
    pub gru: GruCell<F>,
    pub update_norm: LayerNorm<F>,
    pub update_mlp: Mlp<F>,
    pub epsilon: f64,
}

impl<F: Scalar> SlotAttention<F> {
    fn new(b: &mut Builder<'_, F>, c: &SaviConfig) -> Self {
        let fdim = c.encoder_channels;
        let d = c.attention_dim;
        Self {
            input_norm: LayerNorm::new(&mut b.sub("input_norm"), fdim),
            input_mlp: Mlp::new(&mut b.sub("input_mlp"), fdim, fdim, fdim, Activation::Relu),
            feature_norm: LayerNorm::new(&mut b.sub("feature_norm"), fdim),
            slot_norm: LayerNorm::new(&mut b.sub("slot_norm"), c.slot_dim),
            query: Linear::with_bias(&mut b.sub("query"), c.slot_dim, d, false),
            key: Linear::with_bias(&mut b.sub("key"), fdim, d, false),
            value: Linear::with_bias(&mut b.sub("value"), fdim, d, false),
            gru: GruCell::new(&mut b.sub("gru"), d, c.slot_dim),
            update_norm: LayerNorm::new(&mut b.sub("update_norm"), c.slot_dim),
            update_mlp: Mlp::new(
                &mut b.sub("update_mlp"),
                c.slot_dim,
                c.mlp_hidden,
                c.slot_dim,
                Activation::Relu,
            ),
            epsilon: c.epsilon,
        }
    }

    /// Keys and values of a feature map, reused across iterations.
    fn keys_values(&self, features: &Tensor<F>) -> (Tensor<F>, Tensor<F>) {
        let h = self.input_mlp.forward(&self.input_norm.forward(features));
        let h = self.feature_norm.forward(&h);
        (self.key.forward(&h), self.value.forward(&h))
    }

    /// `iters` refinement steps of `slots [B, N, Dz]` against `features
    /// [B, L, C]`. Returns the slots and the last attention `[B, N, L]`,
    /// each row of which sums to one over locations.
    pub fn refine(&self, slots: &Tensor<F>, features: &Tensor<F>, iters: usize) -> Result<(Tensor<F>, Tensor<F>)> {
        if iters == 0 {
            return Err(argument("at least one iteration is required"));
        }
        if slots.dims() != 3 || features.dims() != 3 || slots.dim(0) != features.dim(0) {
            return Err(argument(format!(
                "slots {:?} and features {:?} do not align",
                slots.shape(),
                features.shape()
            )));
        }
        if slots.dim(2) != self.slot_norm.gamma.numel() || features.dim(2) != self.input_norm.gamma.numel() {
            return Err(argument("slot or feature width does not match the model"));
        }
        let (k, v) = self.keys_values(features);
        let d = self.key.out_dim();
        let scale = F::one() / F::of(d as f64).sqrt();
        let mut slots = slots.clone();
        let mut attn = None;
        for _ in 0..iters {
            let q = self.query.forward(&self.slot_norm.forward(&slots));
            let logits = q.matmul_t(&k).mul_scalar(scale);
            // slots compete for each location
            let a = logits.softmax(1).add_scalar(F::of(self.epsilon));
            let a = a.div(&a.sum_axis(-1, true));
            let updates = a.matmul(&v);
            let [bsz, n, dz] = slots.shape()[..] else { unreachable!() };
            let flat = slots.reshape(&[bsz * n, dz]);
            let next = self.gru.forward(&updates.reshape(&[bsz * n, d]), &flat);
            let next = next.add(&self.update_mlp.forward(&self.update_norm.forward(&next)));
            slots = next.reshape(&[bsz, n, dz]);
            attn = Some(a);
        }
        Ok((slots, attn.unwrap()))
    }
}

#[derive(Clone, Debug)]
pub struct Savi<F: Scalar> {
    pub config: SaviConfig,
    pub params: ParamStore<F>,
    encoder: Vec<Conv2d<F>>,
    encoder_pos: Linear<F>,
    pub slot_attention: SlotAttention<F>,
    predictor: TransformerBlock<F>,
    initial_slots: Tensor<F>,
    decoder_in: Linear<F>,
    decoder_pos: Linear<F>,
    decoder: Vec<ConvTranspose2d<F>>,
    decoder_out: Conv2d<F>,
    encoder_coords: Tensor<F>,
}

impl<F: Scalar> Savi<F> {
    pub fn new(config: SaviConfig, rng: &mut dyn rand::RngCore) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut b = Builder::new(&mut params, rng);
        let c = &config;
        let ch = c.encoder_channels;
        let mut encoder = vec![Conv2d::new(&mut b.sub("enc0"), 3, ch, c.encoder_kernel, 1, Padding::Replicate)];
        for s in 0..DOWNSAMPLE_STAGES {
            encoder.push(Conv2d::new(
                &mut b.sub(&format!("enc{}", s + 1)),
                ch,
                ch,
                c.encoder_kernel,
                2,
                Padding::Replicate,
            ));
        }
        let encoder_pos = Linear::new(&mut b.sub("enc_pos"), 4, ch);
        let slot_attention = SlotAttention::new(&mut b.sub("slot_attention"), c);
        let predictor = TransformerBlock::new(
            &mut b.sub("predictor"),
            c.slot_dim,
            c.predictor_heads,
            c.mlp_hidden,
            NormKind::Layer,
        );
        let initial_slots = b.param("initial_slots", &[c.num_slots, c.slot_dim], Init::Normal(1.0));
        let dc = c.decoder_channels;
        let decoder_in = Linear::new(&mut b.sub("dec_in"), c.slot_dim, dc);
        let decoder_pos = Linear::new(&mut b.sub("dec_pos"), 4, dc);
        let widths = [dc, dc, dc / 2, dc / 2];
        let decoder = (0..DOWNSAMPLE_STAGES)
            .map(|i| ConvTranspose2d::upsample2x(&mut b.sub(&format!("dec{i}")), widths[i], widths[i + 1]))
            .collect();
        let decoder_out = Conv2d::new(&mut b.sub("dec_out"), widths[DOWNSAMPLE_STAGES], 4, 1, 1, Padding::Zeros);
        let encoder_coords = grid_coordinates(config.grid_size());
        Ok(Self {
            config,
            params,
            encoder,
            encoder_pos,
            slot_attention,
            predictor,
            initial_slots,
            decoder_in,
            decoder_pos,
            decoder,
            decoder_out,
            encoder_coords,
        })
    }

    pub fn num_slots(&self) -> usize {
        self.config.num_slots
    }

    pub fn slot_dim(&self) -> usize {
        self.config.slot_dim
    }

    /// Learned initial slots `[N, Dz]`.
    pub fn initial_slots(&self) -> &Tensor<F> {
        &self.initial_slots
    }

    /// `frames [B, H, W, 3]` -> features `[B, L, C]` with the positional code added.
    pub fn encode_features(&self, frames: &Tensor<F>) -> Result<FeatureMap<F>> {
        let s = self.config.image_size;
        if frames.dims() != 4 || frames.shape()[1..] != [s, s, 3] {
            return Err(argument(format!(
                "expected frames [B, {s}, {s}, 3], got {:?}",
                frames.shape()
            )));
        }
        let mut h = frames.clone();
        for conv in &self.encoder {
            h = conv.forward(&h).relu();
        }
        let positional = self.encoder_pos.forward(&self.encoder_coords);
        let h = h.add(&positional);
        let l = self.config.num_locations();
        let ch = self.config.encoder_channels;
        Ok(FeatureMap {
            features: h.reshape(&[frames.dim(0), l, ch]),
            positional: positional.reshape(&[l, ch]),
        })
    }

    /// Inter-frame slot transition applied before each correction.
    pub fn predict(&self, slots: &Tensor<F>) -> Tensor<F> {
        self.predictor.forward(slots, None).0
    }

    /// Learned slots replicated over a batch: `[B, N, Dz]`.
    pub fn batch_initial_slots(&self, batch: usize) -> Tensor<F> {
        let (n, d) = (self.config.num_slots, self.config.slot_dim);
        self.initial_slots.unsqueeze(0).expand(&[batch, n, d])
    }

    /// One recursive step. With no previous slots, starts from the learned
    /// initialization with the first-frame iteration count.
    pub fn step(&self, prev: Option<&Tensor<F>>, frame: &Tensor<F>) -> Result<(Tensor<F>, Tensor<F>)> {
        let feats = self.encode_features(frame)?;
        match prev {
            None => {
                let init = self.batch_initial_slots(frame.dim(0));
                self.slot_attention
                    .refine(&init, &feats.features, self.config.first_frame_iterations)
            }
            Some(prev) => self
                .slot_attention
                .refine(&self.predict(prev), &feats.features, self.config.iterations),
        }
    }

    /// Slots for each frame of `video`, a list of `[B, H, W, 3]` steps.
    pub fn encode_video(&self, video: &[Tensor<F>]) -> Result<Vec<Tensor<F>>> {
        self.encode_video_from(&self.batch_initial_slots(video.first().map_or(0, |f| f.dim(0))), video)
    }

    /// Like [`Savi::encode_video`] but with explicit initial slots `[B, N, Dz]`.
    pub fn encode_video_from(&self, init: &Tensor<F>, video: &[Tensor<F>]) -> Result<Vec<Tensor<F>>> {
        if video.is_empty() {
            return Err(argument("empty video"));
        }
        let mut out: Vec<Tensor<F>> = Vec::with_capacity(video.len());
        for frame in video {
            let feats = self.encode_features(frame)?;
            let (slots, _) = match out.last() {
                None => self
                    .slot_attention
                    .refine(init, &feats.features, self.config.first_frame_iterations)?,
                Some(prev) => self
                    .slot_attention
                    .refine(&self.predict(prev), &feats.features, self.config.iterations)?,
            };
            out.push(slots);
        }
        Ok(out)
    }

    /// Decodes `slots [B, N, Dz]` into per-slot images, masks and the composite.
    pub fn decode(&self, slots: &Tensor<F>) -> Result<SlotDecomposition<F>> {
        if slots.dims() != 3 || slots.dim(2) != self.config.slot_dim {
            return Err(argument(format!("cannot decode slots of shape {:?}", slots.shape())));
        }
        let [b, n, dz] = slots.shape()[..] else { unreachable!() };
        let g = self.config.grid_size();
        let s = self.config.image_size;
        let dc = self.config.decoder_channels;
        let x = self
            .decoder_in
            .forward(&slots.reshape(&[b * n, dz]))
            .reshape(&[b * n, 1, 1, dc]);
        let pos = self.decoder_pos.forward(&grid_coordinates::<F>(g));
        let mut h = x.add(&pos);
        for up in &self.decoder {
            h = up.forward(&h).relu();
        }
        let out = self.decoder_out.forward(&h).reshape(&[b, n, s, s, 4]);
        let rgb = out.narrow(-1, 0, 3);
        let alpha_logits = out.narrow(-1, 3, 1);
        let masks = alpha_logits.softmax(1);
        let composite = masks.mul(&rgb).sum_axis(1, false);
        Ok(SlotDecomposition {
            rgb,
            alpha_logits,
            masks,
            composite,
        })
    }

    /// Mean squared error of the composites of `video` against the frames.
    pub fn reconstruction_loss(&self, video: &[Tensor<F>]) -> Result<Tensor<F>> {
        let slots = self.encode_video(video)?;
        let batch = video[0].dim(0);
        let t = video.len();
        let all = Tensor::stack(&slots, 1).reshape(&[batch * t, self.config.num_slots, self.config.slot_dim]);
        let decoded = self.decode(&all)?;
        let target = Tensor::stack(video, 1).reshape(&[batch * t, self.config.image_size, self.config.image_size, 3]);
        Ok(slotrl_tensor::nn::mse(&decoded.composite, &target))
    }
}
