//! The toy set predictor: linear patch embedding over synthetic rasters,
//! sinusoidal positions, a post-norm encoder/decoder with learned object
//! queries, shared feed-forward prediction heads, and an embedded
//! keypoint-to-rotation module for the pose term.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::rotest::{RotEstConfig, RotationEstimator};
use super::{Linear, ModelError, NormParams, ParamStore};
use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::geometry::KeypointKind;
use crate::losses::PredictionVars;
use crate::matching::PredictionTuple;
use crate::rng::SeedStream;
use crate::synth::{Raster, RASTER_CHANNELS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyTransformerConfig {
    pub raster_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    /// Set cardinality N (number of object queries).
    pub queries: usize,
    /// Real class count C; the class head emits C+1 logits.
    pub classes: usize,
    /// Hidden width of the four prediction heads.
    pub head_hidden: usize,
    /// Hidden width of the per-layer feed-forward blocks.
    pub ffn_dim: usize,
    pub keypoints: KeypointKind,
    pub rotest: RotEstConfig,
}

impl Default for ToyTransformerConfig {
    fn default() -> Self {
        Self {
            raster_size: 32,
            patch_size: 4,
            embed_dim: 64,
            encoder_layers: 2,
            decoder_layers: 2,
            heads: 4,
            queries: 20,
            classes: 5,
            head_hidden: 256,
            ffn_dim: 128,
            keypoints: KeypointKind::Ibb32,
            rotest: RotEstConfig::default(),
        }
    }
}

impl ToyTransformerConfig {
    pub fn tokens(&self) -> usize {
        let g = self.raster_size / self.patch_size;
        g * g
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * RASTER_CHANNELS
    }

    pub fn keypoint_values(&self) -> usize {
        self.keypoints.point_count() * 2
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.raster_size % self.patch_size != 0 {
            return Err(ModelError::InvalidConfig(
                "raster size must divide by patch size",
            ));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(ModelError::InvalidConfig(
                "embed dim must divide by head count",
            ));
        }
        if self.embed_dim % 2 != 0 {
            return Err(ModelError::InvalidConfig("embed dim must be even"));
        }
        if self.queries == 0 || self.classes == 0 {
            return Err(ModelError::InvalidConfig("empty set or class space"));
        }
        if self.rotest.input_dim != self.keypoint_values() {
            return Err(ModelError::InvalidConfig(
                "rotation head input must match keypoint values",
            ));
        }
        Ok(())
    }
}

/// Per-grid-cell sine/cosine position codes: the first half of the channels
/// encodes the x coordinate, the second half y, each as interleaved
/// (sin, cos) pairs over a geometric frequency ladder. Shape `(h·w, d)`,
/// values in `[−1, 1]`; cell (0,0) is all zeros on sin channels and ones on
/// cos channels.
pub fn sinusoidal_positions(h: usize, w: usize, d: usize) -> Result<Vec<f64>, ModelError> {
    if d % 2 != 0 {
        return Err(ModelError::InvalidConfig(
            "position encoding needs an even dimension",
        ));
    }
    let half = d / 2;
    let freq = |c: usize| -> f64 {
        let k = (c / 2) as f64;
        libm::pow(10000.0, -2.0 * k / half as f64)
    };
    let mut out = Vec::with_capacity(h * w * d);
    for y in 0..h {
        for x in 0..w {
            for c in 0..half {
                let a = x as f64 * freq(c);
                out.push(if c % 2 == 0 { libm::sin(a) } else { libm::cos(a) });
            }
            for c in 0..half {
                let a = y as f64 * freq(c);
                out.push(if c % 2 == 0 { libm::sin(a) } else { libm::cos(a) });
            }
        }
    }
    Ok(out)
}

/// Flattens a raster into patch tokens: row-major over the patch grid, each
/// token the `(y, x, channel)`-ordered pixel block.
pub fn raster_to_patches(raster: &Raster, patch: usize) -> Vec<f64> {
    let grid_h = raster.height / patch;
    let grid_w = raster.width / patch;
    let mut out = Vec::with_capacity(grid_h * grid_w * patch * patch * RASTER_CHANNELS);
    for gy in 0..grid_h {
        for gx in 0..grid_w {
            for py in 0..patch {
                for px in 0..patch {
                    for c in 0..RASTER_CHANNELS {
                        out.push(raster.at(gy * patch + py, gx * patch + px, c));
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionStage {
    EncoderSelf,
    DecoderSelf,
    DecoderCross,
}

impl AttentionStage {
    pub fn as_str(&self) -> &'static str {
        match self {
            AttentionStage::EncoderSelf => "encoder_self",
            AttentionStage::DecoderSelf => "decoder_self",
            AttentionStage::DecoderCross => "decoder_cross",
        }
    }
}

/// One exported attention map: row-stochastic weights, one row per query
/// position.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub stage: AttentionStage,
    pub layer: usize,
    pub head: usize,
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone)]
struct MultiHeadAttention {
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    heads: usize,
}

impl MultiHeadAttention {
    fn init<S: Real>(
        store: &mut ParamStore<S>,
        rng: &mut SeedStream,
        name: &str,
        dim: usize,
        heads: usize,
    ) -> Self {
        Self {
            wq: Linear::init(store, rng, &format!("{name}.wq"), dim, dim),
            wk: Linear::init(store, rng, &format!("{name}.wk"), dim, dim),
            wv: Linear::init(store, rng, &format!("{name}.wv"), dim, dim),
            wo: Linear::init(store, rng, &format!("{name}.wo"), dim, dim),
            heads,
        }
    }

    /// Position codes join the query/key paths only; values stay content
    /// pure, so position never leaks into the residual stream.
    #[allow(clippy::too_many_arguments)]
    fn forward<S: Real>(
        &self,
        tape: &mut Tape<S>,
        params: &[Var],
        query_in: Var,
        query_pos: Option<Var>,
        kv_in: Var,
        kv_pos: Option<Var>,
        sink: &mut Option<(&mut Vec<AttentionMap>, AttentionStage, usize)>,
    ) -> Result<Var, ModelError> {
        let dim = tape.value(query_in).cols();
        let head_dim = dim / self.heads;
        let q_in = match query_pos {
            Some(p) => tape.add(query_in, p)?,
            None => query_in,
        };
        let k_in = match kv_pos {
            Some(p) => tape.add(kv_in, p)?,
            None => kv_in,
        };
        let q = self.wq.forward(tape, params, q_in)?;
        let k = self.wk.forward(tape, params, k_in)?;
        let v = self.wv.forward(tape, params, kv_in)?;
        let scale = 1.0 / libm::sqrt(head_dim as f64);
        let mut ctx_heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * head_dim, head_dim)?;
            let kh = tape.slice_cols(k, h * head_dim, head_dim)?;
            let vh = tape.slice_cols(v, h * head_dim, head_dim)?;
            let kht = tape.transpose(kh);
            let scores_raw = tape.matmul(qh, kht)?;
            let scores = tape.scale(scores_raw, scale);
            let attn = tape.softmax_rows(scores);
            if let Some((maps, stage, layer)) = sink {
                let w = tape.value(attn);
                maps.push(AttentionMap {
                    stage: *stage,
                    layer: *layer,
                    head: h,
                    rows: w.rows(),
                    cols: w.cols(),
                    weights: w.to_f64_vec(),
                });
            }
            ctx_heads.push(tape.matmul(attn, vh)?);
        }
        let ctx = tape.concat_cols(&ctx_heads)?;
        Ok(self.wo.forward(tape, params, ctx)?)
    }
}

#[derive(Debug, Clone)]
struct FeedForward {
    fc1: Linear,
    fc2: Linear,
}

impl FeedForward {
    fn init<S: Real>(
        store: &mut ParamStore<S>,
        rng: &mut SeedStream,
        name: &str,
        dim: usize,
        hidden: usize,
    ) -> Self {
        Self {
            fc1: Linear::init(store, rng, &format!("{name}.fc1"), dim, hidden),
            fc2: Linear::init(store, rng, &format!("{name}.fc2"), hidden, dim),
        }
    }

    fn forward<S: Real>(
        &self,
        tape: &mut Tape<S>,
        params: &[Var],
        x: Var,
    ) -> Result<Var, ModelError> {
        let h = self.fc1.forward(tape, params, x)?;
        let h = tape.relu(h);
        Ok(self.fc2.forward(tape, params, h)?)
    }
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    attn: MultiHeadAttention,
    ffn: FeedForward,
    norm1: NormParams,
    norm2: NormParams,
}

#[derive(Debug, Clone)]
struct DecoderLayer {
    self_attn: MultiHeadAttention,
    cross_attn: MultiHeadAttention,
    ffn: FeedForward,
    norm1: NormParams,
    norm2: NormParams,
    norm3: NormParams,
}

#[derive(Debug, Clone)]
struct Mlp3 {
    fc1: Linear,
    fc2: Linear,
    fc3: Linear,
}

impl Mlp3 {
    fn init<S: Real>(
        store: &mut ParamStore<S>,
        rng: &mut SeedStream,
        name: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
    ) -> Self {
        Self {
            fc1: Linear::init(store, rng, &format!("{name}.fc1"), in_dim, hidden),
            fc2: Linear::init(store, rng, &format!("{name}.fc2"), hidden, hidden),
            fc3: Linear::init(store, rng, &format!("{name}.fc3"), hidden, out_dim),
        }
    }

    fn forward<S: Real>(
        &self,
        tape: &mut Tape<S>,
        params: &[Var],
        x: Var,
    ) -> Result<Var, ModelError> {
        let h = self.fc1.forward(tape, params, x)?;
        let h = tape.relu(h);
        let h = self.fc2.forward(tape, params, h)?;
        let h = tape.relu(h);
        Ok(self.fc3.forward(tape, params, h)?)
    }
}

/// The set predictor over raster patches.
#[derive(Debug, Clone)]
pub struct SetPredictor {
    pub cfg: ToyTransformerConfig,
    patch_embed: Linear,
    positions: Vec<f64>,
    encoder: Vec<EncoderLayer>,
    decoder: Vec<DecoderLayer>,
    queries: super::ParamId,
    class_head: Mlp3,
    box_head: Mlp3,
    trans_head: Mlp3,
    keypoint_head: Mlp3,
    pub rotation_head: RotationEstimator,
}

impl SetPredictor {
    pub fn init<S: Real>(
        store: &mut ParamStore<S>,
        rng: &mut SeedStream,
        cfg: ToyTransformerConfig,
    ) -> Result<Self, ModelError> {
        cfg.validate()?;
        let d = cfg.embed_dim;
        let patch_embed = Linear::init(store, rng, "patch_embed", cfg.patch_dim(), d);
        let grid = cfg.raster_size / cfg.patch_size;
        let positions = sinusoidal_positions(grid, grid, d)?;

        let mut encoder = Vec::with_capacity(cfg.encoder_layers);
        for l in 0..cfg.encoder_layers {
            encoder.push(EncoderLayer {
                attn: MultiHeadAttention::init(store, rng, &format!("enc{l}.attn"), d, cfg.heads),
                ffn: FeedForward::init(store, rng, &format!("enc{l}.ffn"), d, cfg.ffn_dim),
                norm1: NormParams::init(store, &format!("enc{l}.norm1"), d),
                norm2: NormParams::init(store, &format!("enc{l}.norm2"), d),
            });
        }
        let mut decoder = Vec::with_capacity(cfg.decoder_layers);
        for l in 0..cfg.decoder_layers {
            decoder.push(DecoderLayer {
                self_attn: MultiHeadAttention::init(
                    store,
                    rng,
                    &format!("dec{l}.self_attn"),
                    d,
                    cfg.heads,
                ),
                cross_attn: MultiHeadAttention::init(
                    store,
                    rng,
                    &format!("dec{l}.cross_attn"),
                    d,
                    cfg.heads,
                ),
                ffn: FeedForward::init(store, rng, &format!("dec{l}.ffn"), d, cfg.ffn_dim),
                norm1: NormParams::init(store, &format!("dec{l}.norm1"), d),
                norm2: NormParams::init(store, &format!("dec{l}.norm2"), d),
                norm3: NormParams::init(store, &format!("dec{l}.norm3"), d),
            });
        }
        // learned object queries, zero-mean uniform
        let bound = libm::sqrt(1.0 / d as f64);
        let qdata: Vec<S> = (0..cfg.queries * d)
            .map(|_| S::from_f64(rng.range(-bound, bound)))
            .collect();
        let queries = store.add(
            String::from("object_queries"),
            Tensor::from_vec(cfg.queries, d, qdata),
        );

        let class_head = Mlp3::init(store, rng, "head.class", d, cfg.head_hidden, cfg.classes + 1);
        let box_head = Mlp3::init(store, rng, "head.bbox", d, cfg.head_hidden, 4);
        let trans_head = Mlp3::init(store, rng, "head.trans", d, cfg.head_hidden, 3);
        let keypoint_head = Mlp3::init(
            store,
            rng,
            "head.keypoints",
            d,
            cfg.head_hidden,
            cfg.keypoint_values(),
        );
        let rotation_head = RotationEstimator::init(store, rng, "rotest", cfg.rotest)?;
        Ok(Self {
            cfg,
            patch_embed,
            positions,
            encoder,
            decoder,
            queries,
            class_head,
            box_head,
            trans_head,
            keypoint_head,
            rotation_head,
        })
    }

    fn encode<S: Real>(
        &self,
        tape: &mut Tape<S>,
        params: &[Var],
        patches: Var,
        pos: Var,
        mut sink: Option<&mut Vec<AttentionMap>>,
    ) -> Result<Var, ModelError> {
        let mut x = self.patch_embed.forward(tape, params, patches)?;
        for (l, layer) in self.encoder.iter().enumerate() {
            let mut s = sink
                .as_deref_mut()
                .map(|m| (m, AttentionStage::EncoderSelf, l));
            let a = layer
                .attn
                .forward(tape, params, x, Some(pos), x, Some(pos), &mut s)?;
            let res = tape.add(x, a)?;
            x = layer.norm1.forward(tape, params, res)?;
            let f = layer.ffn.forward(tape, params, x)?;
            let res = tape.add(x, f)?;
            x = layer.norm2.forward(tape, params, res)?;
        }
        Ok(x)
    }

    fn decode<S: Real>(
        &self,
        tape: &mut Tape<S>,
        params: &[Var],
        memory: Var,
        memory_pos: Var,
        mut sink: Option<&mut Vec<AttentionMap>>,
    ) -> Result<Var, ModelError> {
        // the learned object queries are the decoder's input embeddings
        let mut q = params[self.queries.0];
        for (l, layer) in self.decoder.iter().enumerate() {
            let mut s = sink
                .as_deref_mut()
                .map(|m| (m, AttentionStage::DecoderSelf, l));
            let a = layer
                .self_attn
                .forward(tape, params, q, None, q, None, &mut s)?;
            let res = tape.add(q, a)?;
            q = layer.norm1.forward(tape, params, res)?;
            let mut s = sink
                .as_deref_mut()
                .map(|m| (m, AttentionStage::DecoderCross, l));
            let c = layer.cross_attn.forward(
                tape,
                params,
                q,
                None,
                memory,
                Some(memory_pos),
                &mut s,
            )?;
            let res = tape.add(q, c)?;
            q = layer.norm2.forward(tape, params, res)?;
            let f = layer.ffn.forward(tape, params, q)?;
            let res = tape.add(q, f)?;
            q = layer.norm3.forward(tape, params, res)?;
        }
        Ok(q)
    }

    /// Shared prediction heads over `N` embeddings: raw class logits,
    /// sigmoid-squashed boxes and keypoints, and a translation code with
    /// sigmoid (u, v) and softplus depth.
    pub fn heads_forward<S: Real>(
        &self,
        tape: &mut Tape<S>,
        params: &[Var],
        embeddings: Var,
    ) -> Result<PredictionVars, ModelError> {
        let logits = self.class_head.forward(tape, params, embeddings)?;
        let box_raw = self.box_head.forward(tape, params, embeddings)?;
        let boxes = tape.sigmoid(box_raw);
        let trans_raw = self.trans_head.forward(tape, params, embeddings)?;
        let uv_raw = tape.slice_cols(trans_raw, 0, 2)?;
        let uv = tape.sigmoid(uv_raw);
        let tz_raw = tape.slice_cols(trans_raw, 2, 1)?;
        let tz = tape.softplus(tz_raw);
        let translations = tape.concat_cols(&[uv, tz])?;
        let kp_raw = self.keypoint_head.forward(tape, params, embeddings)?;
        let keypoints = tape.sigmoid(kp_raw);
        Ok(PredictionVars {
            class_logits: logits,
            boxes,
            translations,
            keypoints,
            keypoint_kind: self.cfg.keypoints,
        })
    }

    /// Full forward pass from raster patches (`[tokens, patch_dim]`) to the
    /// prediction tensors. Pass an attention sink to export the maps.
    pub fn forward<S: Real>(
        &self,
        tape: &mut Tape<S>,
        params: &[Var],
        patches: Var,
        mut sink: Option<&mut Vec<AttentionMap>>,
    ) -> Result<PredictionVars, ModelError> {
        let expected = (self.cfg.tokens(), self.cfg.patch_dim());
        if tape.value(patches).shape() != expected {
            return Err(ModelError::InvalidConfig(
                "patch tensor does not match the configured raster",
            ));
        }
        let pos = tape.leaf(Tensor::<S>::from_f64(
            self.cfg.tokens(),
            self.cfg.embed_dim,
            &self.positions,
        ));
        let memory = self.encode(tape, params, patches, pos, sink.as_deref_mut())?;
        let embeddings = self.decode(tape, params, memory, pos, sink)?;
        self.heads_forward(tape, params, embeddings)
    }

    /// Detached prediction tuples from head output values, for matching and
    /// evaluation.
    pub fn tuples_from_vars<S: Real>(
        &self,
        tape: &Tape<S>,
        preds: &PredictionVars,
    ) -> Vec<PredictionTuple> {
        let logits = tape.value(preds.class_logits);
        let boxes = tape.value(preds.boxes);
        let trans = tape.value(preds.translations);
        let kps = tape.value(preds.keypoints);
        let tuples = if self.cfg.keypoints == KeypointKind::Ibb32 {
            crate::geometry::ibb_tuples()
        } else {
            Vec::new()
        };
        (0..self.cfg.queries)
            .map(|i| PredictionTuple {
                class_logits: logits.row(i).iter().map(|x| x.to_f64()).collect(),
                bbox: crate::geometry::BoxCxcywh::new(
                    boxes.at(i, 0).to_f64(),
                    boxes.at(i, 1).to_f64(),
                    boxes.at(i, 2).to_f64(),
                    boxes.at(i, 3).to_f64(),
                ),
                translation: crate::geometry::TranslationCode::new(
                    trans.at(i, 0).to_f64(),
                    trans.at(i, 1).to_f64(),
                    trans.at(i, 2).to_f64(),
                ),
                keypoints: crate::geometry::KeypointSet2D::from_flat(
                    self.cfg.keypoints,
                    &kps.row(i).iter().map(|x| x.to_f64()).collect::<Vec<f64>>(),
                    tuples.clone(),
                ),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_scene, SceneConfig};

    fn small_cfg() -> ToyTransformerConfig {
        ToyTransformerConfig {
            encoder_layers: 1,
            decoder_layers: 1,
            queries: 5,
            head_hidden: 32,
            ffn_dim: 32,
            rotest: RotEstConfig {
                hidden_dim: 16,
                ..RotEstConfig::default()
            },
            ..ToyTransformerConfig::default()
        }
    }

    fn forward_values(
        cfg: &ToyTransformerConfig,
        seed: u64,
        scene_seed: u64,
    ) -> (Vec<f64>, Vec<f64>) {
        let mut store: ParamStore<f64> = ParamStore::new();
        let mut rng = SeedStream::new(seed, "init");
        let model = SetPredictor::init(&mut store, &mut rng, *cfg).unwrap();
        let sample = generate_scene(scene_seed, &SceneConfig::default());
        let patches = raster_to_patches(&sample.raster, cfg.patch_size);
        let mut tape: Tape<f64> = Tape::new();
        let params = store.inject(&mut tape);
        let p = tape.leaf_f64(cfg.tokens(), cfg.patch_dim(), &patches);
        let preds = model.forward(&mut tape, &params, p, None).unwrap();
        (
            tape.value(preds.class_logits).to_f64_vec(),
            tape.value(preds.keypoints).to_f64_vec(),
        )
    }

    #[test]
    fn position_codes_have_documented_shape_and_range() {
        let d = 64;
        let pos = sinusoidal_positions(8, 8, d).unwrap();
        assert_eq!(pos.len(), 64 * d);
        for v in &pos {
            assert!((-1.0..=1.0).contains(v));
        }
        // cell (0,0): sin channels 0, cos channels 1
        for c in 0..d {
            let within_axis = c % (d / 2);
            if within_axis % 2 == 0 {
                assert_eq!(pos[c], 0.0, "channel {c}");
            } else {
                assert_eq!(pos[c], 1.0, "channel {c}");
            }
        }
        assert!(sinusoidal_positions(4, 4, 63).is_err());
    }

    #[test]
    fn position_codes_are_collision_free_on_the_full_grid() {
        let d = 64;
        let pos = sinusoidal_positions(32, 32, d).unwrap();
        let n = 32 * 32;
        for a in 0..n {
            for b in (a + 1)..n {
                let mut max_diff = 0.0f64;
                for c in 0..d {
                    max_diff = max_diff.max((pos[a * d + c] - pos[b * d + c]).abs());
                }
                assert!(max_diff > 1e-6, "cells {a} and {b} collide");
            }
        }
    }

    #[test]
    fn output_shapes_match_the_contract() {
        for (patch, heads, queries) in [(2usize, 1usize, 5usize), (4, 4, 20)] {
            let cfg = ToyTransformerConfig {
                patch_size: patch,
                heads,
                queries,
                encoder_layers: 1,
                decoder_layers: 1,
                head_hidden: 32,
                ffn_dim: 32,
                rotest: RotEstConfig {
                    hidden_dim: 16,
                    ..RotEstConfig::default()
                },
                ..ToyTransformerConfig::default()
            };
            let mut store: ParamStore<f32> = ParamStore::new();
            let mut rng = SeedStream::new(1, "init");
            let model = SetPredictor::init(&mut store, &mut rng, cfg).unwrap();
            let mut tape: Tape<f32> = Tape::new();
            let params = store.inject(&mut tape);
            let p = tape.leaf(Tensor::zeros(cfg.tokens(), cfg.patch_dim()));
            let preds = model.forward(&mut tape, &params, p, None).unwrap();
            assert_eq!(
                tape.value(preds.class_logits).shape(),
                (queries, cfg.classes + 1)
            );
            assert_eq!(tape.value(preds.boxes).shape(), (queries, 4));
            assert_eq!(tape.value(preds.translations).shape(), (queries, 3));
            assert_eq!(
                tape.value(preds.keypoints).shape(),
                (queries, cfg.keypoint_values())
            );
        }
    }

    #[test]
    fn boxes_and_keypoints_are_squashed_to_unit_range() {
        let cfg = small_cfg();
        let mut store: ParamStore<f64> = ParamStore::new();
        let mut rng = SeedStream::new(5, "init");
        let model = SetPredictor::init(&mut store, &mut rng, cfg).unwrap();
        let mut tape: Tape<f64> = Tape::new();
        let params = store.inject(&mut tape);
        let sample = generate_scene(11, &SceneConfig::default());
        let patches = raster_to_patches(&sample.raster, cfg.patch_size);
        let p = tape.leaf_f64(cfg.tokens(), cfg.patch_dim(), &patches);
        let preds = model.forward(&mut tape, &params, p, None).unwrap();
        for v in tape.value(preds.boxes).data() {
            assert!((0.0..1.0).contains(v));
        }
        for v in tape.value(preds.keypoints).data() {
            assert!((0.0..1.0).contains(v));
        }
        // depth stays strictly positive through the softplus
        for i in 0..cfg.queries {
            assert!(tape.value(preds.translations).at(i, 2) > 0.0);
        }
    }

    #[test]
    fn eval_forward_is_bit_stable() {
        let cfg = small_cfg();
        let a = forward_values(&cfg, 3, 17);
        let b = forward_values(&cfg, 3, 17);
        assert_eq!(a, b);
    }

    #[test]
    fn attention_maps_are_row_stochastic() {
        let cfg = small_cfg();
        let mut store: ParamStore<f64> = ParamStore::new();
        let mut rng = SeedStream::new(9, "init");
        let model = SetPredictor::init(&mut store, &mut rng, cfg).unwrap();
        let sample = generate_scene(23, &SceneConfig::default());
        let patches = raster_to_patches(&sample.raster, cfg.patch_size);
        let mut tape: Tape<f64> = Tape::new();
        let params = store.inject(&mut tape);
        let p = tape.leaf_f64(cfg.tokens(), cfg.patch_dim(), &patches);
        let mut maps = Vec::new();
        let _ = model
            .forward(&mut tape, &params, p, Some(&mut maps))
            .unwrap();
        assert!(!maps.is_empty());
        let stages: Vec<AttentionStage> = maps.iter().map(|m| m.stage).collect();
        assert!(stages.contains(&AttentionStage::EncoderSelf));
        assert!(stages.contains(&AttentionStage::DecoderCross));
        for m in &maps {
            for r in 0..m.rows {
                let sum: f64 = m.weights[r * m.cols..(r + 1) * m.cols].iter().sum();
                assert!((sum - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn identical_embeddings_give_identical_tuples() {
        let cfg = small_cfg();
        let mut store: ParamStore<f64> = ParamStore::new();
        let mut rng = SeedStream::new(13, "init");
        let model = SetPredictor::init(&mut store, &mut rng, cfg).unwrap();
        let mut tape: Tape<f64> = Tape::new();
        let params = store.inject(&mut tape);
        // two identical embedding rows through the shared heads
        let e = tape.leaf_f64(2, cfg.embed_dim, &[0.3; 128]);
        let preds = model.heads_forward(&mut tape, &params, e).unwrap();
        let boxes = tape.value(preds.boxes);
        for j in 0..4 {
            assert_eq!(boxes.at(0, j), boxes.at(1, j));
        }
    }

    #[test]
    fn encoder_is_permutation_equivariant_with_positions() {
        // permuting tokens together with their position codes permutes the
        // encoder output and leaves the decoder output unchanged
        let cfg = small_cfg();
        let mut store: ParamStore<f64> = ParamStore::new();
        let mut rng = SeedStream::new(21, "init");
        let model = SetPredictor::init(&mut store, &mut rng, cfg).unwrap();
        let sample = generate_scene(31, &SceneConfig::default());
        let patches = raster_to_patches(&sample.raster, cfg.patch_size);
        let t = cfg.tokens();
        let pd = cfg.patch_dim();
        let d = cfg.embed_dim;

        // base run: embed + positions handled inside encode
        let run = |perm: &[usize]| -> Vec<f64> {
            let mut tape: Tape<f64> = Tape::new();
            let params = store.inject(&mut tape);
            // permute patch rows and positions consistently
            let mut pdata = vec![0.0; t * pd];
            let mut pos = vec![0.0; t * d];
            for (new_i, &old_i) in perm.iter().enumerate() {
                pdata[new_i * pd..(new_i + 1) * pd]
                    .copy_from_slice(&patches[old_i * pd..(old_i + 1) * pd]);
                pos[new_i * d..(new_i + 1) * d]
                    .copy_from_slice(&model.positions[old_i * d..(old_i + 1) * d]);
            }
            let px = tape.leaf_f64(t, pd, &pdata);
            let posv = tape.leaf_f64(t, d, &pos);
            let memory = model
                .encode(&mut tape, &params, px, posv, None)
                .unwrap();
            let emb = model
                .decode(&mut tape, &params, memory, posv, None)
                .unwrap();
            tape.value(emb).to_f64_vec()
        };

        let identity: Vec<usize> = (0..t).collect();
        let mut perm = identity.clone();
        let mut s = SeedStream::new(5, "perm");
        s.shuffle(&mut perm);
        let base = run(&identity);
        let permuted = run(&perm);
        for (a, b) in base.iter().zip(&permuted) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }
}
