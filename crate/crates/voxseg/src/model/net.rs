//! The promptable segmentation network.
//!
//! Architecture, at toy scale: patch embedding with fixed 2D sinusoidal
//! positions → pre-norm transformer encoder → memory cross-attention over the
//! slice-feature bank → two-way decoder between prompt tokens and image
//! tokens → per-token logit head upsampled bilinearly to the slice. One
//! structure per forward pass, conditioned through the prompts' class
//! embedding.

use std::collections::BTreeMap;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use super::memory::{MemoryBank, MemoryEntry};
use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::prompt::{ClickPrompt, Polarity};

/// Largest |slice offset| with its own learned memory encoding; farther
/// entries share the end rows.
pub const OFFSET_RANGE: i64 = 15;
const OFFSET_ROWS: usize = (2 * OFFSET_RANGE + 1) as usize;

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub slice_size: usize,
    pub patch: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub memory_capacity: usize,
    /// Background plus structures.
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            slice_size: 64,
            patch: 8,
            embed_dim: 64,
            heads: 4,
            encoder_blocks: 2,
            decoder_blocks: 1,
            memory_capacity: 8,
            num_classes: 5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.slice_size == 0 || self.slice_size % self.patch != 0 {
            return Err(Error::ConfigMismatch(format!(
                "slice_size {} must be a positive multiple of patch {}",
                self.slice_size, self.patch
            )));
        }
        if self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(Error::ConfigMismatch(format!(
                "embed_dim {} must be divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.embed_dim % 4 != 0 {
            return Err(Error::ConfigMismatch(
                "embed_dim must be divisible by 4 for 2D sinusoidal positions".into(),
            ));
        }
        if self.memory_capacity == 0 {
            return Err(Error::ConfigMismatch("memory_capacity must be at least 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::ConfigMismatch("need background plus at least one structure".into()));
        }
        if self.encoder_blocks == 0 || self.decoder_blocks == 0 {
            return Err(Error::ConfigMismatch("encoder and decoder need at least one block".into()));
        }
        Ok(())
    }

    /// Token-grid side length.
    pub fn grid(&self) -> usize {
        self.slice_size / self.patch
    }

    /// Token count T.
    pub fn tokens(&self) -> usize {
        self.grid() * self.grid()
    }
}

/// 1×d sinusoidal encoding of a 2D position: half the channels encode `y`,
/// half encode `x`, over a geometric frequency ladder.
fn sincos_row(y: f64, x: f64, d: usize) -> Array2<f64> {
    let quarter = d / 4;
    let mut row = Array2::<f64>::zeros((1, d));
    for i in 0..quarter {
        let omega = 10_000f64.powf(-(i as f64) / quarter as f64);
        row[[0, 2 * i]] = (y * omega).sin();
        row[[0, 2 * i + 1]] = (y * omega).cos();
        row[[0, d / 2 + 2 * i]] = (x * omega).sin();
        row[[0, d / 2 + 2 * i + 1]] = (x * omega).cos();
    }
    row
}

/// T×d positional table for the token grid.
fn grid_positions(grid: usize, d: usize) -> Array2<f64> {
    let mut table = Array2::<f64>::zeros((grid * grid, d));
    for gy in 0..grid {
        for gx in 0..grid {
            table.row_mut(gy * grid + gx).assign(&sincos_row(gy as f64, gx as f64, d).row(0));
        }
    }
    table
}

/// T×p² matrix of flattened non-overlapping patches, token-major.
fn extract_patches(image: &Array2<f64>, patch: usize) -> Array2<f64> {
    let grid = image.nrows() / patch;
    let mut out = Array2::<f64>::zeros((grid * grid, patch * patch));
    for gy in 0..grid {
        for gx in 0..grid {
            let block = image.slice(s![gy * patch..(gy + 1) * patch, gx * patch..(gx + 1) * patch]);
            for (k, &v) in block.iter().enumerate() {
                out[[gy * grid + gx, k]] = v;
            }
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

fn init_attention(params: &mut ParamStore, prefix: &str, d: usize, seed: u64) {
    for w in ["wq", "wk", "wv", "wo"] {
        params.init_xavier(&format!("{prefix}.{w}"), d, d, seed);
    }
    for b in ["bq", "bk", "bv", "bo"] {
        params.init_const(&format!("{prefix}.{b}"), 1, d, 0.0);
    }
}

fn init_layer_norm(params: &mut ParamStore, prefix: &str, d: usize) {
    params.init_const(&format!("{prefix}.g"), 1, d, 1.0);
    params.init_const(&format!("{prefix}.b"), 1, d, 0.0);
}

fn init_mlp(params: &mut ParamStore, prefix: &str, d: usize, seed: u64) {
    params.init_xavier(&format!("{prefix}.w1"), d, 4 * d, seed);
    params.init_const(&format!("{prefix}.b1"), 1, 4 * d, 0.0);
    params.init_xavier(&format!("{prefix}.w2"), 4 * d, d, seed);
    params.init_const(&format!("{prefix}.b2"), 1, d, 0.0);
}

impl Model {
    /// Fresh model with seed-deterministic initialization.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Model> {
        config.validate()?;
        let d = config.embed_dim;
        let mut params = ParamStore::new();
        params.init_xavier("patch_embed.w", config.patch * config.patch, d, seed);
        params.init_const("patch_embed.b", 1, d, 0.0);
        for i in 0..config.encoder_blocks {
            init_layer_norm(&mut params, &format!("enc{i}.ln1"), d);
            init_attention(&mut params, &format!("enc{i}.attn"), d, seed);
            init_layer_norm(&mut params, &format!("enc{i}.ln2"), d);
            init_mlp(&mut params, &format!("enc{i}.mlp"), d, seed);
        }
        init_attention(&mut params, "mem.attn", d, seed);
        init_layer_norm(&mut params, "mem.ln", d);
        params.init_embedding("mem.offset", OFFSET_ROWS, d, seed);
        params.init_embedding("prompt.polarity", 2, d, seed);
        params.init_embedding("prompt.class", config.num_classes, d, seed);
        params.init_embedding("prompt.none", 1, d, seed);
        for i in 0..config.decoder_blocks {
            init_attention(&mut params, &format!("dec{i}.pself"), d, seed);
            init_layer_norm(&mut params, &format!("dec{i}.ln1"), d);
            init_attention(&mut params, &format!("dec{i}.p2t"), d, seed);
            init_layer_norm(&mut params, &format!("dec{i}.ln2"), d);
            init_mlp(&mut params, &format!("dec{i}.mlp"), d, seed);
            init_layer_norm(&mut params, &format!("dec{i}.ln3"), d);
            init_attention(&mut params, &format!("dec{i}.t2p"), d, seed);
            init_layer_norm(&mut params, &format!("dec{i}.ln4"), d);
        }
        params.init_xavier("head.w", d, 1, seed);
        params.init_const("head.b", 1, 1, 0.0);
        params.init_embedding("memenc.proj", 1, d, seed);
        init_layer_norm(&mut params, "memenc.ln", d);
        Ok(Model { config, params })
    }

    /// Forward pass producing the logit map for one (slice, class); no
    /// gradients retained.
    pub fn predict(
        &self,
        image: &Array2<f64>,
        bank: &MemoryBank,
        clicks: &[ClickPrompt],
        class_id: u8,
        slice_index: usize,
    ) -> Result<Array2<f64>> {
        let mut net = Net::new(self);
        let (_, logits) = net.segment(image, bank, clicks, class_id, slice_index)?;
        Ok(net.tape.value(logits).clone())
    }

    /// Forward pass that also fuses the prediction into a memory entry.
    pub fn predict_with_memory(
        &self,
        image: &Array2<f64>,
        bank: &MemoryBank,
        clicks: &[ClickPrompt],
        class_id: u8,
        slice_index: usize,
    ) -> Result<(Array2<f64>, MemoryEntry)> {
        let mut net = Net::new(self);
        let (tokens, logits) = net.segment(image, bank, clicks, class_id, slice_index)?;
        let entry = net.encode_memory(tokens, logits, slice_index, !clicks.is_empty());
        Ok((net.tape.value(logits).clone(), entry))
    }

    /// Binary mask from a logit map (sigmoid > 0.5).
    pub fn binarize(logits: &Array2<f64>) -> Array2<u8> {
        logits.mapv(|l| (l > 0.0) as u8)
    }
}

/// One forward graph under construction: a tape plus the parameter leaves
/// bound so far.
pub struct Net<'m> {
    pub tape: Tape,
    model: &'m Model,
    bound: BTreeMap<String, Var>,
}

impl<'m> Net<'m> {
    pub fn new(model: &'m Model) -> Net<'m> {
        Net { tape: Tape::new(), model, bound: BTreeMap::new() }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.model.config
    }

    /// Bind a parameter tensor as a tape leaf (cached per name).
    fn p(&mut self, name: &str) -> Var {
        if let Some(&v) = self.bound.get(name) {
            return v;
        }
        let v = self.tape.leaf(self.model.params.get(name).clone());
        self.bound.insert(name.to_string(), v);
        v
    }

    /// Gradients of every bound parameter, after `tape.backward`.
    pub fn param_grads(&self) -> BTreeMap<String, Array2<f64>> {
        self.bound.iter().map(|(name, &v)| (name.clone(), self.tape.grad(v).clone())).collect()
    }

    fn linear(&mut self, x: Var, w_name: &str, b_name: &str) -> Var {
        let w = self.p(w_name);
        let b = self.p(b_name);
        let y = self.tape.matmul(x, w);
        self.tape.add_row(y, b)
    }

    fn layer_norm(&mut self, x: Var, prefix: &str) -> Var {
        let g = self.p(&format!("{prefix}.g"));
        let b = self.p(&format!("{prefix}.b"));
        let n = self.tape.layer_norm_rows(x, LN_EPS);
        let scaled = self.tape.mul_row(n, g);
        self.tape.add_row(scaled, b)
    }

    /// Multi-head scaled dot-product attention; `q` supplies queries, `kv`
    /// supplies keys and values.
    fn attention(&mut self, q: Var, kv: Var, prefix: &str) -> Var {
        let d = self.model.config.embed_dim;
        let h = self.model.config.heads;
        let dh = d / h;
        let qp = self.linear(q, &format!("{prefix}.wq"), &format!("{prefix}.bq"));
        let kp = self.linear(kv, &format!("{prefix}.wk"), &format!("{prefix}.bk"));
        let vp = self.linear(kv, &format!("{prefix}.wv"), &format!("{prefix}.bv"));
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(h);
        for k in 0..h {
            let (lo, hi) = (k * dh, (k + 1) * dh);
            let qh = self.tape.slice_cols(qp, lo, hi);
            let kh = self.tape.slice_cols(kp, lo, hi);
            let vh = self.tape.slice_cols(vp, lo, hi);
            let scores = self.tape.matmul_nt(qh, kh);
            let scaled = self.tape.scale(scores, scale);
            let attn = self.tape.softmax_rows(scaled);
            heads.push(self.tape.matmul(attn, vh));
        }
        let mut cat = heads[0];
        for &head in &heads[1..] {
            cat = self.tape.concat_cols(cat, head);
        }
        self.linear(cat, &format!("{prefix}.wo"), &format!("{prefix}.bo"))
    }

    fn mlp(&mut self, x: Var, prefix: &str) -> Var {
        let h = self.linear(x, &format!("{prefix}.w1"), &format!("{prefix}.b1"));
        let a = self.tape.gelu(h);
        self.linear(a, &format!("{prefix}.w2"), &format!("{prefix}.b2"))
    }

    /// Patchify + project + add sinusoidal positions.
    pub fn patch_embed(&mut self, image: &Array2<f64>) -> Result<Var> {
        let cfg = &self.model.config;
        if image.dim() != (cfg.slice_size, cfg.slice_size) {
            return Err(Error::DimensionError(format!(
                "slice {:?}, model expects {}×{}",
                image.dim(),
                cfg.slice_size,
                cfg.slice_size
            )));
        }
        let patches = self.tape.leaf(extract_patches(image, cfg.patch));
        let projected = self.linear(patches, "patch_embed.w", "patch_embed.b");
        let positions = self.tape.leaf(grid_positions(cfg.grid(), cfg.embed_dim));
        Ok(self.tape.add(projected, positions))
    }

    /// Pre-norm transformer encoder over image tokens.
    pub fn encoder(&mut self, mut tokens: Var) -> Var {
        for i in 0..self.model.config.encoder_blocks {
            let normed = self.layer_norm(tokens, &format!("enc{i}.ln1"));
            let attended = self.attention(normed, normed, &format!("enc{i}.attn"));
            tokens = self.tape.add(tokens, attended);
            let normed = self.layer_norm(tokens, &format!("enc{i}.ln2"));
            let expanded = self.mlp(normed, &format!("enc{i}.mlp"));
            tokens = self.tape.add(tokens, expanded);
        }
        tokens
    }

    /// Encode and embed one image slice (patch embed + encoder).
    pub fn forward_image(&mut self, image: &Array2<f64>) -> Result<Var> {
        let tokens = self.patch_embed(image)?;
        Ok(self.encoder(tokens))
    }

    /// Cross-attend current tokens to bank entries already on the tape, each
    /// entry shifted by its learned relative-offset row.
    pub fn memory_attend_vars(&mut self, tokens: Var, entries: &[(Var, i64)]) -> Var {
        if entries.is_empty() {
            return tokens;
        }
        let offsets = self.p("mem.offset");
        let mut bank_tokens: Option<Var> = None;
        for &(entry, offset) in entries {
            let idx = (offset.clamp(-OFFSET_RANGE, OFFSET_RANGE) + OFFSET_RANGE) as usize;
            let row = self.tape.slice_rows(offsets, idx, idx + 1);
            let shifted = self.tape.add_row(entry, row);
            bank_tokens = Some(match bank_tokens {
                None => shifted,
                Some(acc) => self.tape.concat_rows(acc, shifted),
            });
        }
        let bank_tokens = bank_tokens.unwrap();
        let attended = self.attention(tokens, bank_tokens, "mem.attn");
        let fused = self.tape.add(tokens, attended);
        self.layer_norm(fused, "mem.ln")
    }

    /// Memory cross-attention against a bank; empty bank passes through.
    pub fn memory_attend(&mut self, tokens: Var, bank: &MemoryBank, slice_index: usize) -> Var {
        let entries: Vec<(Var, i64)> = bank
            .entries()
            .iter()
            .map(|e| (self.tape.leaf(e.tokens.clone()), slice_index as i64 - e.slice_index as i64))
            .collect();
        self.memory_attend_vars(tokens, &entries)
    }

    /// One token per click: sinusoidal position (in token-grid units) +
    /// polarity embedding + class embedding. No clicks: learned no-prompt
    /// token + class embedding.
    pub fn encode_prompts(&mut self, clicks: &[ClickPrompt], class_id: u8) -> Result<Var> {
        let cfg = self.model.config;
        if (class_id as usize) >= cfg.num_classes {
            return Err(Error::InvalidArg(format!(
                "class {class_id} out of range for {} classes",
                cfg.num_classes
            )));
        }
        let class_table = self.p("prompt.class");
        let class_row =
            self.tape.slice_rows(class_table, class_id as usize, class_id as usize + 1);
        if clicks.is_empty() {
            let none = self.p("prompt.none");
            return Ok(self.tape.add(none, class_row));
        }
        let polarity_table = self.p("prompt.polarity");
        let mut tokens: Option<Var> = None;
        for click in clicks {
            if click.row >= cfg.slice_size || click.col >= cfg.slice_size {
                return Err(Error::CoordinateError(format!(
                    "click ({}, {}) outside {}×{} slice",
                    click.row, click.col, cfg.slice_size, cfg.slice_size
                )));
            }
            let pos = sincos_row(
                click.row as f64 / cfg.patch as f64,
                click.col as f64 / cfg.patch as f64,
                cfg.embed_dim,
            );
            let pos = self.tape.leaf(pos);
            let pol_idx = match click.polarity {
                Polarity::Positive => 0,
                Polarity::Negative => 1,
            };
            let pol = self.tape.slice_rows(polarity_table, pol_idx, pol_idx + 1);
            let tok = self.tape.add(pos, pol);
            let tok = self.tape.add(tok, class_row);
            tokens = Some(match tokens {
                None => tok,
                Some(acc) => self.tape.concat_rows(acc, tok),
            });
        }
        Ok(tokens.unwrap())
    }

    /// Two-way decoder + per-token head + bilinear upsample to the slice.
    pub fn decode_mask(&mut self, tokens: Var, prompts: Var) -> Var {
        let cfg = self.model.config;
        let mut t = tokens;
        let mut p = prompts;
        for i in 0..cfg.decoder_blocks {
            let a = self.attention(p, p, &format!("dec{i}.pself"));
            let sum = self.tape.add(p, a);
            p = self.layer_norm(sum, &format!("dec{i}.ln1"));
            let a = self.attention(p, t, &format!("dec{i}.p2t"));
            let sum = self.tape.add(p, a);
            p = self.layer_norm(sum, &format!("dec{i}.ln2"));
            let m = self.mlp(p, &format!("dec{i}.mlp"));
            let sum = self.tape.add(p, m);
            p = self.layer_norm(sum, &format!("dec{i}.ln3"));
            let a = self.attention(t, p, &format!("dec{i}.t2p"));
            let sum = self.tape.add(t, a);
            t = self.layer_norm(sum, &format!("dec{i}.ln4"));
        }
        let logits_tok = self.linear(t, "head.w", "head.b");
        let grid = self.tape.reshape(logits_tok, cfg.grid(), cfg.grid());
        self.tape.bilinear_up(grid, cfg.patch)
    }

    /// Full forward: image → encoder → memory attention → decoder. Returns
    /// (post-memory tokens, logit map).
    pub fn segment(
        &mut self,
        image: &Array2<f64>,
        bank: &MemoryBank,
        clicks: &[ClickPrompt],
        class_id: u8,
        slice_index: usize,
    ) -> Result<(Var, Var)> {
        let tokens = self.forward_image(image)?;
        let tokens = self.memory_attend(tokens, bank, slice_index);
        let prompts = self.encode_prompts(clicks, class_id)?;
        let logits = self.decode_mask(tokens, prompts);
        Ok((tokens, logits))
    }

    /// Fusion of prediction and tokens, still on the tape: logits pooled to
    /// the token grid, projected, added to the tokens, and normalized.
    pub fn encode_memory_var(&mut self, tokens: Var, logits: Var) -> Var {
        let cfg = self.model.config;
        let pooled = self.tape.avg_pool(logits, cfg.patch);
        let flat = self.tape.reshape(pooled, cfg.tokens(), 1);
        let proj = self.p("memenc.proj");
        let mask_feat = self.tape.matmul(flat, proj);
        let fused = self.tape.add(tokens, mask_feat);
        self.layer_norm(fused, "memenc.ln")
    }

    /// Fuse prediction + tokens into a detached memory entry.
    pub fn encode_memory(
        &mut self,
        tokens: Var,
        logits: Var,
        slice_index: usize,
        prompted: bool,
    ) -> MemoryEntry {
        let normed = self.encode_memory_var(tokens, logits);
        MemoryEntry { tokens: self.tape.value(normed).clone(), slice_index, prompted }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    pub(super) fn tiny_config() -> ModelConfig {
        ModelConfig {
            slice_size: 16,
            patch: 4,
            embed_dim: 8,
            heads: 2,
            encoder_blocks: 1,
            decoder_blocks: 1,
            memory_capacity: 4,
            num_classes: 3,
        }
    }

    fn rand_image(rng: &mut Rng, n: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, n), |_| rng.uniform())
    }

    fn click(row: usize, col: usize, polarity: Polarity) -> ClickPrompt {
        ClickPrompt { slice: 0, row, col, polarity, class_id: 1, iteration: 0 }
    }

    fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        assert_eq!(a.dim(), b.dim());
        a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        assert!(ModelConfig { patch: 7, ..Default::default() }.validate().is_err());
        assert!(ModelConfig { heads: 5, ..Default::default() }.validate().is_err());
        assert!(ModelConfig { memory_capacity: 0, ..Default::default() }.validate().is_err());
        assert!(ModelConfig { num_classes: 1, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn zero_image_zero_bias_embeds_to_positions() {
        let mut model = Model::init(tiny_config(), 1).unwrap();
        // Zero the projection so only the positional table remains.
        model.params.get_mut("patch_embed.w").fill(0.0);
        let image = Array2::<f64>::zeros((16, 16));
        let mut net = Net::new(&model);
        let tokens = net.patch_embed(&image).unwrap();
        let expected = grid_positions(4, 8);
        let got = net.tape.value(tokens);
        assert!(max_abs_diff(got, &expected) < 1e-12);
    }

    #[test]
    fn patch_embedding_is_local() {
        let model = Model::init(tiny_config(), 1).unwrap();
        let mut rng = Rng::from_tags(5, &[1]);
        let a = rand_image(&mut rng, 16);
        let mut b = a.clone();
        // Perturb exactly one patch: token (1,2) covers rows 4..8, cols 8..12.
        b[[5, 9]] += 1.0;
        let mut net_a = Net::new(&model);
        let ta = net_a.patch_embed(&a).unwrap();
        let mut net_b = Net::new(&model);
        let tb = net_b.patch_embed(&b).unwrap();
        let va = net_a.tape.value(ta);
        let vb = net_b.tape.value(tb);
        for t in 0..16 {
            let differ = va.row(t) != vb.row(t);
            assert_eq!(differ, t == 1 * 4 + 2, "token {t}");
        }
    }

    #[test]
    fn wrong_slice_shape_rejected() {
        let model = Model::init(tiny_config(), 1).unwrap();
        let mut net = Net::new(&model);
        let bad = Array2::<f64>::zeros((8, 8));
        assert!(matches!(net.patch_embed(&bad), Err(Error::DimensionError(_))));
    }

    #[test]
    fn single_key_attention_returns_projected_value() {
        // With one key/value token the softmax is a singleton: the output is
        // the value projection passed through the output projection,
        // independent of the query.
        let model = Model::init(tiny_config(), 2).unwrap();
        let mut rng = Rng::from_tags(6, &[2]);
        let kv_row = Array2::from_shape_fn((1, 8), |_| rng.normal());
        let out_for = |q_row: &Array2<f64>| -> Array2<f64> {
            let mut net = Net::new(&model);
            let q = net.tape.leaf(q_row.clone());
            let kv = net.tape.leaf(kv_row.clone());
            let y = net.attention(q, kv, "enc0.attn");
            net.tape.value(y).clone()
        };
        let q1 = Array2::from_shape_fn((1, 8), |_| rng.normal());
        let q2 = Array2::from_shape_fn((1, 8), |_| rng.normal());
        let y1 = out_for(&q1);
        let y2 = out_for(&q2);
        assert!(max_abs_diff(&y1, &y2) < 1e-12, "query must not matter with one key");
        // And it matches the direct projection of the value.
        let v = kv_row.dot(model.params.get("enc0.attn.wv")) + model.params.get("enc0.attn.bv");
        let o = v.dot(model.params.get("enc0.attn.wo")) + model.params.get("enc0.attn.bo");
        assert!(max_abs_diff(&y1, &o) < 1e-12);
    }

    #[test]
    fn empty_bank_memory_attention_is_identity() {
        let model = Model::init(tiny_config(), 3).unwrap();
        let mut rng = Rng::from_tags(7, &[3]);
        let image = rand_image(&mut rng, 16);
        let mut net = Net::new(&model);
        let tokens = net.forward_image(&image).unwrap();
        let bank = MemoryBank::new(4);
        let out = net.memory_attend(tokens, &bank, 5);
        assert_eq!(tokens, out, "pass-through must be the same node");
    }

    #[test]
    fn bank_entry_changes_output_and_stays_finite() {
        let model = Model::init(tiny_config(), 3).unwrap();
        let mut rng = Rng::from_tags(7, &[4]);
        let image = rand_image(&mut rng, 16);
        let mut bank = MemoryBank::new(4);
        let empty_logits = model.predict(&image, &bank, &[], 1, 0).unwrap();
        let mut net = Net::new(&model);
        let tokens = net.forward_image(&image).unwrap();
        let entry_tokens = net.tape.value(tokens).clone();
        bank.push(MemoryEntry { tokens: entry_tokens, slice_index: 0, prompted: true });
        let with_mem = model.predict(&image, &bank, &[], 1, 1).unwrap();
        assert!(with_mem.iter().all(|v| v.is_finite()));
        assert_eq!(with_mem.dim(), (16, 16));
        assert_ne!(empty_logits, with_mem, "memory must influence the logits");
    }

    #[test]
    fn prompt_tokens_count_and_no_prompt_fallback() {
        let model = Model::init(tiny_config(), 4).unwrap();
        let mut net = Net::new(&model);
        let none = net.encode_prompts(&[], 2).unwrap();
        assert_eq!(net.tape.value(none).dim(), (1, 8));
        let clicks =
            [click(3, 4, Polarity::Positive), click(9, 2, Polarity::Negative)];
        let toks = net.encode_prompts(&clicks, 1).unwrap();
        assert_eq!(net.tape.value(toks).dim(), (2, 8));
    }

    #[test]
    fn polarity_flip_shifts_token_by_embedding_difference() {
        let model = Model::init(tiny_config(), 4).unwrap();
        let mut net = Net::new(&model);
        let pos = net.encode_prompts(&[click(5, 6, Polarity::Positive)], 1).unwrap();
        let neg = net.encode_prompts(&[click(5, 6, Polarity::Negative)], 1).unwrap();
        let diff = net.tape.value(pos) - net.tape.value(neg);
        let table = model.params.get("prompt.polarity");
        let expected =
            (&table.row(0).to_owned() - &table.row(1)).insert_axis(ndarray::Axis(0));
        assert!(max_abs_diff(&diff, &expected) < 1e-12);
    }

    #[test]
    fn out_of_bounds_click_rejected() {
        let model = Model::init(tiny_config(), 4).unwrap();
        let mut net = Net::new(&model);
        let bad = [click(16, 0, Polarity::Positive)];
        assert!(matches!(net.encode_prompts(&bad, 1), Err(Error::CoordinateError(_))));
        assert!(net.encode_prompts(&[], 3).is_err(), "class out of range");
    }

    #[test]
    fn decoder_output_shape_and_finiteness() {
        let model = Model::init(tiny_config(), 5).unwrap();
        let mut rng = Rng::from_tags(9, &[5]);
        let image = rand_image(&mut rng, 16);
        let bank = MemoryBank::new(4);
        let clicks = [click(3, 3, Polarity::Positive)];
        let logits = model.predict(&image, &bank, &clicks, 1, 0).unwrap();
        assert_eq!(logits.dim(), (16, 16));
        assert!(logits.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn decoder_is_invariant_to_prompt_order() {
        let model = Model::init(tiny_config(), 6).unwrap();
        let mut rng = Rng::from_tags(10, &[6]);
        let image = rand_image(&mut rng, 16);
        let bank = MemoryBank::new(4);
        let a = click(3, 4, Polarity::Positive);
        let b = click(10, 11, Polarity::Negative);
        let c = click(7, 2, Polarity::Positive);
        let fwd = model.predict(&image, &bank, &[a, b, c], 1, 0).unwrap();
        let rev = model.predict(&image, &bank, &[c, a, b], 1, 0).unwrap();
        let max_diff =
            fwd.iter().zip(rev.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(max_diff < 1e-9, "prompt order changed logits by {max_diff}");
    }

    #[test]
    fn class_conditioning_changes_prediction() {
        let model = Model::init(tiny_config(), 7).unwrap();
        let mut rng = Rng::from_tags(11, &[7]);
        let image = rand_image(&mut rng, 16);
        let bank = MemoryBank::new(4);
        let clicks = [click(8, 8, Polarity::Positive)];
        let c1 = model.predict(&image, &bank, &clicks, 1, 0).unwrap();
        let mut clicks2 = clicks;
        clicks2[0].class_id = 2;
        let c2 = model.predict(&image, &bank, &clicks2, 2, 0).unwrap();
        assert_ne!(c1, c2);
    }

    #[test]
    fn encode_memory_zero_logits_zero_projection_normalizes_tokens() {
        let mut model = Model::init(tiny_config(), 8).unwrap();
        model.params.get_mut("memenc.proj").fill(0.0);
        let mut rng = Rng::from_tags(12, &[8]);
        let image = rand_image(&mut rng, 16);
        let mut net = Net::new(&model);
        let tokens = net.forward_image(&image).unwrap();
        let zero_logits = net.tape.leaf(Array2::zeros((16, 16)));
        let entry = net.encode_memory(tokens, zero_logits, 3, true);
        assert_eq!(entry.tokens.dim(), (16, 8));
        assert_eq!(entry.slice_index, 3);
        // γ=1, β=0 at init: entry tokens are the plain layer-normed tokens.
        let mut check = Net::new(&model);
        let t2 = check.forward_image(&image).unwrap();
        let normed = check.tape.layer_norm_rows(t2, LN_EPS);
        assert!(max_abs_diff(&entry.tokens, check.tape.value(normed)) < 1e-12);
    }

    #[test]
    fn different_masks_give_different_entries() {
        let model = Model::init(tiny_config(), 9).unwrap();
        let mut rng = Rng::from_tags(13, &[9]);
        let image = rand_image(&mut rng, 16);
        let logits_a = Array2::from_shape_fn((16, 16), |_| rng.normal());
        let logits_b = Array2::from_shape_fn((16, 16), |_| rng.normal());
        let entry_for = |l: &Array2<f64>| {
            let mut net = Net::new(&model);
            let tokens = net.forward_image(&image).unwrap();
            let lv = net.tape.leaf(l.clone());
            net.encode_memory(tokens, lv, 0, false).tokens
        };
        assert_ne!(entry_for(&logits_a), entry_for(&logits_b));
    }

    #[test]
    fn predictions_replay_deterministically() {
        let model = Model::init(tiny_config(), 10).unwrap();
        let mut rng = Rng::from_tags(14, &[10]);
        let image = rand_image(&mut rng, 16);
        let bank = MemoryBank::new(4);
        let clicks = [click(4, 4, Polarity::Positive)];
        let a = model.predict(&image, &bank, &clicks, 1, 0).unwrap();
        let b = model.predict(&image, &bank, &clicks, 1, 0).unwrap();
        assert_eq!(a, b);
    }
}
