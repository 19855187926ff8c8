//! Attention rollout over SAT layers, relevance overlays and open-loop
//! rollout strips.

use std::path::Path;

use slotrl_tensor::{no_grad, Scalar, Tensor};

use crate::dynamics::Dynamics;
use crate::env::Action;
use crate::error::{argument, Result};
use crate::image::{frames_to_tensor, write_rgb_png, Frame};
use crate::sat::{SatOutput, TokenKind, TokenLayout};
use crate::savi::{Savi, SlotDecomposition};

/// Segmentation colours indexed by slot number.
pub const SEGMENT_PALETTE: [[u8; 3]; 10] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [128, 128, 128],
];

/// Attention weights of one forward pass for a single batch item.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRecord {
    pub layout: TokenLayout,
    pub heads: usize,
    /// per layer, `heads * L * L` row-major weights
    pub layers: Vec<Vec<f64>>,
}

impl AttentionRecord {
    /// Extracts batch item `item` from a recorded SAT pass.
    pub fn from_output<F: Scalar>(out: &SatOutput<F>, item: usize) -> Result<Self> {
        let layers = out
            .attention
            .as_ref()
            .ok_or_else(|| argument("SAT output carries no attention record"))?;
        let first = layers.first().ok_or_else(|| argument("SAT has no layers"))?;
        let [b, h, l, _] = first.shape()[..] else {
            return Err(argument("attention weights must be [B, H, L, L]"));
        };
        if item >= b {
            return Err(argument(format!("batch item {item} out of {b}")));
        }
        let per = h * l * l;
        let rec = Self {
            layout: out.layout,
            heads: h,
            layers: layers
                .iter()
                .map(|w| w.to_f64_vec()[item * per..(item + 1) * per].to_vec())
                .collect(),
        };
        rec.check_shape()?;
        Ok(rec)
    }

    fn check_shape(&self) -> Result<()> {
        let l = self.layout.len();
        if self.heads == 0 || self.layers.is_empty() {
            return Err(argument("attention record needs at least one layer and head"));
        }
        if let Some(i) = self.layers.iter().position(|w| w.len() != self.heads * l * l) {
            return Err(argument(format!(
                "layer {i} holds {} weights, layout needs {}",
                self.layers[i].len(),
                self.heads * l * l
            )));
        }
        Ok(())
    }

    /// Largest deviation from one of any row sum over the keys the layout permits,
    /// or infinity when a forbidden key carries weight.
    pub fn max_row_error(&self) -> f64 {
        let l = self.layout.len();
        let mut worst: f64 = 0.0;
        for w in &self.layers {
            for (r, row) in w.chunks(l).enumerate() {
                let q = r % l;
                let mut sum = 0.0;
                for (k, &v) in row.iter().enumerate() {
                    if self.layout.allowed(q, k) {
                        sum += v;
                    } else if v != 0.0 {
                        return f64::INFINITY;
                    }
                }
                worst = worst.max((sum - 1.0).abs());
            }
        }
        worst
    }
}

/// Relevance of every slot token, `values[step * slots + slot]`, summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct Relevance {
    pub steps: usize,
    pub slots: usize,
    pub values: Vec<f64>,
}

impl Relevance {
    pub fn at_step(&self, step: usize) -> &[f64] {
        &self.values[step * self.slots..(step + 1) * self.slots]
    }
}

fn head_mean_with_residual(w: &[f64], heads: usize, l: usize) -> Vec<f64> {
    let mut a = vec![0.0; l * l];
    for h in 0..heads {
        for (dst, &v) in a.iter_mut().zip(&w[h * l * l..(h + 1) * l * l]) {
            *dst += v / heads as f64;
        }
    }
    for q in 0..l {
        let row = &mut a[q * l..(q + 1) * l];
        for v in row.iter_mut() {
            *v *= 0.5;
        }
        row[q] += 0.5;
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    a
}

/// Attention rollout towards the output token of `target_step`: head-averaged
/// layers with an identity residual, row-normalized and multiplied in layer
/// order, then restricted to slot tokens.
pub fn attention_rollout(record: &AttentionRecord, target_step: usize) -> Result<Relevance> {
    record.check_shape()?;
    let layout = record.layout;
    if target_step >= layout.steps {
        return Err(argument(format!("step {target_step} outside {} recorded steps", layout.steps)));
    }
    let l = layout.len();
    let mut rollout: Option<Vec<f64>> = None;
    for w in &record.layers {
        let a = head_mean_with_residual(w, record.heads, l);
        rollout = Some(match rollout {
            None => a,
            Some(prev) => {
                let mut out = vec![0.0; l * l];
                for i in 0..l {
                    for k in 0..l {
                        let aik = a[i * l + k];
                        if aik != 0.0 {
                            for j in 0..l {
                                out[i * l + j] += aik * prev[k * l + j];
                            }
                        }
                    }
                }
                out
            }
        });
    }
    let rollout = rollout.expect("at least one layer");
    let q = layout.output_token(target_step);
    let row = &rollout[q * l..(q + 1) * l];
    let mut values = Vec::with_capacity(layout.steps * layout.slots);
    for token in 0..l {
        if layout.kind(token) == TokenKind::Slot {
            values.push(row[token]);
        }
    }
    let total: f64 = values.iter().sum();
    if !(total > 0.0) {
        return Err(argument("output token assigns no relevance to any slot"));
    }
    values.iter_mut().for_each(|v| *v /= total);
    Ok(Relevance {
        steps: layout.steps,
        slots: layout.slots,
        values,
    })
}

/// Row-major RGB image of arbitrary size.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Copies an RGB tile with its top-left corner at `(row, col)`.
    pub fn blit(&mut self, row: usize, col: usize, tile: &Frame) {
        let s = tile.size();
        for r in 0..s {
            let dst = ((row + r) * self.width + col) * 3;
            self.data[dst..dst + s * 3].copy_from_slice(&tile.raw()[r * s * 3..(r + 1) * s * 3]);
        }
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        write_rgb_png(path, self.width, self.height, &self.data)
    }
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Black to red to yellow to white.
pub fn heat_color(v: f64) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0) * 3.0;
    [to_byte(v), to_byte(v - 1.0), to_byte(v - 2.0)]
}

/// `sum_n relevance[n] * mask_n` per pixel of item `item`.
pub fn heat_map<F: Scalar>(decomposition: &SlotDecomposition<F>, item: usize, relevance: &[f64]) -> Result<Vec<f64>> {
    let [b, n, h, w, _] = decomposition.masks.shape()[..] else {
        return Err(argument("masks must be [B, N, H, W, 1]"));
    };
    if relevance.len() != n || item >= b {
        return Err(argument(format!("{} relevance values for {n} slots", relevance.len())));
    }
    let masks = decomposition.masks.to_f64_vec();
    let px = h * w;
    let base = item * n * px;
    Ok((0..px)
        .map(|p| (0..n).map(|s| relevance[s] * masks[base + s * px + p]).sum())
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionOverlay {
    pub heat: Vec<f64>,
    /// reconstruction blended with the heat colours
    pub overlay: Frame,
    /// heat colours alone
    pub colormap: Frame,
}

pub fn render_attention_overlay<F: Scalar>(
    decomposition: &SlotDecomposition<F>,
    item: usize,
    relevance: &[f64],
) -> Result<AttentionOverlay> {
    let heat = heat_map(decomposition, item, relevance)?;
    let size = decomposition.composite.dim(1);
    let comp = decomposition.composite.to_f64_vec();
    let recon = &comp[item * size * size * 3..(item + 1) * size * size * 3];
    let mut overlay = Vec::with_capacity(size * size * 3);
    let mut colormap = Vec::with_capacity(size * size * 3);
    for (p, &v) in heat.iter().enumerate() {
        let c = heat_color(v);
        for ch in 0..3 {
            colormap.push(c[ch]);
            overlay.push(to_byte(0.5 * recon[p * 3 + ch] + 0.5 * f64::from(c[ch]) / 255.0));
        }
    }
    Ok(AttentionOverlay {
        heat,
        overlay: Frame::from_raw(size, overlay)?,
        colormap: Frame::from_raw(size, colormap)?,
    })
}

/// Grid of `3 + N` rows by `S + T` columns: ground truth, decoded seed
/// reconstructions followed by open-loop predictions, mask-argmax
/// segmentation, and each slot's masked reconstruction.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutStrip {
    pub rows: usize,
    pub columns: usize,
    pub tile: usize,
    pub image: RgbImage,
    /// `[column]` composite predictions
    pub predicted: Vec<Frame>,
    /// `[column][pixel]` winning slot
    pub segmentation: Vec<Vec<usize>>,
}

pub fn rollout_strip<F: Scalar>(
    savi: &Savi<F>,
    dynamics: &Dynamics<F>,
    frames: &[Frame],
    actions: &[Action],
    seed_len: usize,
) -> Result<RolloutStrip> {
    let _g = no_grad();
    let total = frames.len();
    if seed_len == 0 || seed_len > total || actions.len() < total {
        return Err(argument(format!(
            "{total} frames and {} actions cannot seed {seed_len} steps",
            actions.len()
        )));
    }
    let video = frames[..seed_len]
        .iter()
        .map(|f| frames_to_tensor(&[f]))
        .collect::<Result<Vec<_>>>()?;
    let seed = Tensor::stack(&savi.encode_video(&video)?, 1);
    let act: Vec<F> = actions[..total].iter().flat_map(|a| a.0.map(F::of)).collect();
    let act = Tensor::from_vec(act, &[1, total, crate::env::ACTION_DIM]);
    let horizon = total - seed_len;
    let all = if horizon == 0 {
        seed
    } else {
        Tensor::cat(&[seed.clone(), dynamics.rollout(&seed, &act, horizon)?], 1)
    };
    let n = savi.num_slots();
    let dec = savi.decode(&all.reshape(&[total, n, savi.slot_dim()]))?;
    let size = savi.config.image_size;
    let px = size * size;
    let rgb = dec.rgb.to_f64_vec();
    let masks = dec.masks.to_f64_vec();
    let comp = dec.composite.to_f64_vec();
    let unit_frame = |vals: &[f64]| Frame::from_raw(size, vals.iter().map(|&v| to_byte(v)).collect());

    let rows = 3 + n;
    let mut image = RgbImage::new(total * size, rows * size);
    let mut predicted = Vec::with_capacity(total);
    let mut segmentation = Vec::with_capacity(total);
    for (t, gt) in frames.iter().enumerate() {
        let x = t * size;
        image.blit(0, x, gt);
        let pred = unit_frame(&comp[t * px * 3..(t + 1) * px * 3])?;
        image.blit(size, x, &pred);
        predicted.push(pred);
        let m = |s: usize, p: usize| masks[(t * n + s) * px + p];
        let seg: Vec<usize> = (0..px)
            .map(|p| (0..n).fold(0, |best, s| if m(s, p) > m(best, p) { s } else { best }))
            .collect();
        let seg_raw: Vec<u8> = seg.iter().flat_map(|&s| SEGMENT_PALETTE[s % SEGMENT_PALETTE.len()]).collect();
        image.blit(2 * size, x, &Frame::from_raw(size, seg_raw)?);
        segmentation.push(seg);
        for s in 0..n {
            let vals: Vec<f64> = (0..px * 3)
                .map(|i| rgb[((t * n + s) * px) * 3 + i] * m(s, i / 3))
                .collect();
            image.blit((3 + s) * size, x, &unit_frame(&vals)?);
        }
    }
    Ok(RolloutStrip {
        rows,
        columns: total,
        tile: size,
        image,
        predicted,
        segmentation,
    })
}

pub fn export_rollout_strip<F: Scalar>(
    savi: &Savi<F>,
    dynamics: &Dynamics<F>,
    frames: &[Frame],
    actions: &[Action],
    seed_len: usize,
    path: &Path,
) -> Result<RolloutStrip> {
    let strip = rollout_strip(savi, dynamics, frames, actions, seed_len)?;
    strip.image.write_png(path)?;
    Ok(strip)
}
