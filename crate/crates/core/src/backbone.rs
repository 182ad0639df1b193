//! Four-stage Video Swin backbone (forward only) and the classification head.
//!
//! Parameter paths are normative and shared with external checkpoint
//! converters. All weight matrices are stored `in x out`.
//!
//! ```text
//! patch_embed.proj.weight                      [pt*ph*pw*3, C]
//! patch_embed.proj.bias                        [C]
//! patch_embed.norm.{weight,bias}               [C]
//! layers.{s}.blocks.{b}.norm1.{weight,bias}    [d]
//! layers.{s}.blocks.{b}.attn.relative_position_bias_table [(2P-1)(2M-1)(2M-1), heads]
//! layers.{s}.blocks.{b}.attn.qkv.weight        [d, 3d]
//! layers.{s}.blocks.{b}.attn.qkv.bias          [3d]
//! layers.{s}.blocks.{b}.attn.proj.{weight,bias} [d, d], [d]
//! layers.{s}.blocks.{b}.norm2.{weight,bias}    [d]
//! layers.{s}.blocks.{b}.mlp.fc1.{weight,bias}  [d, r*d], [r*d]
//! layers.{s}.blocks.{b}.mlp.fc2.{weight,bias}  [r*d, d], [d]
//! layers.{s}.downsample.norm.{weight,bias}     [4d]        (s = 0..2)
//! layers.{s}.downsample.reduction.weight       [4d, 2d]    (s = 0..2)
//! norm.{weight,bias}                           [8C]
//! head.weight                                  [8C, K]
//! head.bias                                    [K]
//! ```
//!
//! with `d = C * 2^s`. Blocks alternate regular and shifted windows, starting
//! with regular.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, ModelResult};
use crate::patch_embed::{
    embed_patches, merge_patches, pad_even, MergeWeights, PatchEmbedWeights, PatchGrid, VideoClip, LN_EPS,
};
use crate::tensor::{gelu, layer_norm, linear, matmul, Tensor};
use crate::weights_io::NamedWeights;
use crate::window::{grid_attention, AttentionWeights, RelativeBiasTable, WindowSpec};

pub const STAGES: usize = 4;

fn default_patch() -> [usize; 3] {
    [2, 4, 4]
}

fn default_mlp_ratio() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Base channel width `C`.
    pub embed_dim: usize,
    pub depths: [usize; STAGES],
    pub heads: [usize; STAGES],
    #[serde(default)]
    pub window: WindowSpec,
    #[serde(default = "default_patch")]
    pub patch: [usize; 3],
    #[serde(default = "default_mlp_ratio")]
    pub mlp_ratio: usize,
    pub num_classes: usize,
    /// Stochastic depth rate; identity at inference.
    #[serde(default)]
    pub drop_path: f64,
}

/// Published model sizes plus a tiny configuration for tests and desk runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    SwinT,
    SwinS,
    SwinB,
    SwinL,
    Micro,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::SwinT, Variant::SwinS, Variant::SwinB, Variant::SwinL, Variant::Micro];

    pub fn config(self, num_classes: usize) -> ModelConfig {
        let (embed_dim, depths, heads, window) = match self {
            Variant::SwinT => (96, [2, 2, 6, 2], [3, 6, 12, 24], WindowSpec::new(8, 7)),
            Variant::SwinS => (96, [2, 2, 18, 2], [3, 6, 12, 24], WindowSpec::new(8, 7)),
            Variant::SwinB => (128, [2, 2, 18, 2], [4, 8, 16, 32], WindowSpec::new(8, 7)),
            Variant::SwinL => (192, [2, 2, 18, 2], [6, 12, 24, 48], WindowSpec::new(8, 7)),
            Variant::Micro => (8, [1, 1, 1, 1], [1, 1, 1, 1], WindowSpec::new(2, 2)),
        };
        ModelConfig {
            embed_dim,
            depths,
            heads,
            window,
            patch: default_patch(),
            mlp_ratio: default_mlp_ratio(),
            num_classes,
            drop_path: 0.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::SwinT => "swin-t",
            Variant::SwinS => "swin-s",
            Variant::SwinB => "swin-b",
            Variant::SwinL => "swin-l",
            Variant::Micro => "micro",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| ModelError::InvalidConfig(format!("unknown variant {s:?} (expected swin-t, swin-s, swin-b, swin-l or micro)")))
    }
}

impl ModelConfig {
    /// Channel width of stage `s` (0-based).
    pub fn stage_dim(&self, s: usize) -> usize {
        self.embed_dim << s
    }

    /// Width of the pooled feature vector, `8C`.
    pub fn feature_dim(&self) -> usize {
        self.stage_dim(STAGES - 1)
    }

    pub fn patch_input_dim(&self) -> usize {
        self.patch.iter().product::<usize>() * 3
    }

    pub fn validate(&self) -> ModelResult<()> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.embed_dim == 0 {
            return bad("embed_dim must be >= 1".into());
        }
        if self.depths.contains(&0) {
            return bad(format!("every stage needs at least one block, got depths {:?}", self.depths));
        }
        for s in 0..STAGES {
            let (d, h) = (self.stage_dim(s), self.heads[s]);
            if h == 0 || d % h != 0 {
                return bad(format!("stage {s}: width {d} not divisible by {h} heads"));
            }
        }
        if !self.window.is_valid() {
            return bad(format!("window {:?} must be >= 1 on every axis", self.window));
        }
        if self.patch.contains(&0) {
            return bad(format!("patch {:?} must be >= 1 on every axis", self.patch));
        }
        if self.mlp_ratio == 0 {
            return bad("mlp_ratio must be >= 1".into());
        }
        if self.num_classes == 0 {
            return bad("num_classes must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.drop_path) {
            return bad(format!("drop_path {} outside [0, 1)", self.drop_path));
        }
        Ok(())
    }
}

/// How a parameter is initialized by [`random_weights`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    NormScale,
    NormShift,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub path: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

fn block_prefix(s: usize, b: usize) -> String {
    format!("layers.{s}.blocks.{b}")
}

/// Every parameter implied by `cfg`, in checkpoint order. Includes the head.
pub fn parameter_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    use ParamKind::*;
    let mut v = Vec::new();
    let mut push = |path: String, shape: Vec<usize>, kind| v.push(ParamSpec { path, shape, kind });
    let c = cfg.embed_dim;
    push("patch_embed.proj.weight".into(), vec![cfg.patch_input_dim(), c], Weight);
    push("patch_embed.proj.bias".into(), vec![c], Bias);
    push("patch_embed.norm.weight".into(), vec![c], NormScale);
    push("patch_embed.norm.bias".into(), vec![c], NormShift);
    let rows = RelativeBiasTable::rows(cfg.window);
    for s in 0..STAGES {
        let d = cfg.stage_dim(s);
        let hidden = d * cfg.mlp_ratio;
        for b in 0..cfg.depths[s] {
            let p = block_prefix(s, b);
            push(format!("{p}.norm1.weight"), vec![d], NormScale);
            push(format!("{p}.norm1.bias"), vec![d], NormShift);
            push(format!("{p}.attn.relative_position_bias_table"), vec![rows, cfg.heads[s]], Weight);
            push(format!("{p}.attn.qkv.weight"), vec![d, 3 * d], Weight);
            push(format!("{p}.attn.qkv.bias"), vec![3 * d], Bias);
            push(format!("{p}.attn.proj.weight"), vec![d, d], Weight);
            push(format!("{p}.attn.proj.bias"), vec![d], Bias);
            push(format!("{p}.norm2.weight"), vec![d], NormScale);
            push(format!("{p}.norm2.bias"), vec![d], NormShift);
            push(format!("{p}.mlp.fc1.weight"), vec![d, hidden], Weight);
            push(format!("{p}.mlp.fc1.bias"), vec![hidden], Bias);
            push(format!("{p}.mlp.fc2.weight"), vec![hidden, d], Weight);
            push(format!("{p}.mlp.fc2.bias"), vec![d], Bias);
        }
        if s + 1 < STAGES {
            push(format!("layers.{s}.downsample.norm.weight"), vec![4 * d], NormScale);
            push(format!("layers.{s}.downsample.norm.bias"), vec![4 * d], NormShift);
            push(format!("layers.{s}.downsample.reduction.weight"), vec![4 * d, 2 * d], Weight);
        }
    }
    let f = cfg.feature_dim();
    push("norm.weight".into(), vec![f], NormScale);
    push("norm.bias".into(), vec![f], NormShift);
    push(HEAD_WEIGHT.into(), vec![f, cfg.num_classes], Weight);
    push(HEAD_BIAS.into(), vec![cfg.num_classes], Bias);
    v
}

pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";

/// Scalar parameter count implied by `cfg`, head included.
pub fn count_parameters(cfg: &ModelConfig) -> u64 {
    let c = cfg.embed_dim as u64;
    let rows = RelativeBiasTable::rows(cfg.window) as u64;
    let r = cfg.mlp_ratio as u64;
    let mut total = cfg.patch_input_dim() as u64 * c + c + 2 * c;
    for s in 0..STAGES {
        let d = cfg.stage_dim(s) as u64;
        let h = cfg.heads[s] as u64;
        let attn = rows * h + 3 * d * d + 3 * d + d * d + d;
        let mlp = 2 * r * d * d + r * d + d;
        let norms = 4 * d;
        total += cfg.depths[s] as u64 * (attn + mlp + norms);
        if s + 1 < STAGES {
            total += 8 * d + 8 * d * d;
        }
    }
    let f = cfg.feature_dim() as u64;
    let k = cfg.num_classes as u64;
    total + 2 * f + f * k + k
}

/// Seeded initialization: truncated normal (std 0.02, cut at 2 std) for
/// weight matrices and bias tables, zeros for biases, unit norm scales.
pub fn random_weights(cfg: &ModelConfig, seed: u64) -> NamedWeights {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f32, 0.02).expect("valid std");
    let mut w = NamedWeights::new();
    for spec in parameter_specs(cfg) {
        let t = match spec.kind {
            ParamKind::Weight => Tensor::from_fn(spec.shape, |_| loop {
                let v = normal.sample(&mut rng);
                if v.abs() <= 0.04 {
                    break v;
                }
            }),
            ParamKind::Bias | ParamKind::NormShift => Tensor::zeros(spec.shape),
            ParamKind::NormScale => Tensor::full(spec.shape, 1.0),
        }
        .expect("valid parameter shape");
        w.insert(spec.path, t).expect("unique paths");
    }
    w
}

/// Globally pooled final-stage features, length `8C`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Tensor);

impl FeatureVector {
    pub fn new(values: Tensor) -> ModelResult<Self> {
        if values.rank() != 1 {
            return Err(ModelError::Shape {
                what: "feature vector",
                expected: vec![values.len()],
                found: values.shape().to_vec(),
            });
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f32] {
        self.0.data()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Shape of the token grid after one pipeline step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridShape {
    pub extents: [usize; 3],
    pub channels: usize,
}

impl From<&PatchGrid> for GridShape {
    fn from(g: &PatchGrid) -> Self {
        Self {
            extents: g.extents(),
            channels: g.channels(),
        }
    }
}

/// Backbone bound to a validated weight set. Never mutates the weights.
#[derive(Debug, Clone)]
pub struct VideoSwin<'w> {
    cfg: ModelConfig,
    weights: &'w NamedWeights,
}

impl<'w> VideoSwin<'w> {
    /// Checks that every backbone parameter exists with the expected shape.
    /// Head parameters are optional here since the head is replaced anyway.
    pub fn new(weights: &'w NamedWeights, cfg: &ModelConfig) -> ModelResult<Self> {
        cfg.validate()?;
        for spec in parameter_specs(cfg) {
            if spec.path.starts_with("head.") {
                continue;
            }
            check_param(weights, &spec.path, &spec.shape)?;
        }
        Ok(Self {
            cfg: cfg.clone(),
            weights,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    fn p(&self, path: &str) -> &'w Tensor {
        self.weights.get(path).expect("validated at construction")
    }

    pub fn forward_features(&self, clip: &VideoClip) -> ModelResult<FeatureVector> {
        self.forward_traced(clip).map(|(f, _)| f)
    }

    /// Forward pass that also reports the grid shape after embedding and after each stage.
    pub fn forward_traced(&self, clip: &VideoClip) -> ModelResult<(FeatureVector, Vec<GridShape>)> {
        let mut trace = Vec::with_capacity(STAGES + 1);
        let mut grid = embed_patches(
            clip,
            self.cfg.patch,
            PatchEmbedWeights {
                projection: self.p("patch_embed.proj.weight"),
                bias: self.p("patch_embed.proj.bias"),
                norm_weight: self.p("patch_embed.norm.weight"),
                norm_bias: self.p("patch_embed.norm.bias"),
            },
        )?;
        trace.push(GridShape::from(&grid));
        for s in 0..STAGES {
            for b in 0..self.cfg.depths[s] {
                grid = self.block(&grid, s, b)?;
            }
            trace.push(GridShape::from(&grid));
            if s + 1 < STAGES {
                let p = format!("layers.{s}.downsample");
                grid = merge_patches(
                    &pad_even(grid)?,
                    MergeWeights {
                        norm_weight: self.p(&format!("{p}.norm.weight")),
                        norm_bias: self.p(&format!("{p}.norm.bias")),
                        reduction: self.p(&format!("{p}.reduction.weight")),
                    },
                )?;
            }
        }
        let tokens = layer_norm(&grid.as_matrix(), self.p("norm.weight"), self.p("norm.bias"), LN_EPS)?;
        Ok((FeatureVector::new(mean_rows(&tokens))?, trace))
    }

    fn block(&self, grid: &PatchGrid, s: usize, b: usize) -> ModelResult<PatchGrid> {
        let pre = block_prefix(s, b);
        let p = |name: &str| self.p(&format!("{pre}.{name}"));
        let extents = grid.extents();
        let x = grid.as_matrix();

        let normed = layer_norm(&x, p("norm1.weight"), p("norm1.bias"), LN_EPS)?;
        let table = RelativeBiasTable::new(p("attn.relative_position_bias_table"), self.cfg.window)?;
        let attn = grid_attention(
            &PatchGrid::from_matrix(extents, normed)?,
            AttentionWeights {
                qkv_weight: p("attn.qkv.weight"),
                qkv_bias: p("attn.qkv.bias"),
                proj_weight: p("attn.proj.weight"),
                proj_bias: p("attn.proj.bias"),
            },
            table,
            self.cfg.window,
            self.cfg.heads[s],
            b % 2 == 1,
        )?;
        let x = x.add(&attn.as_matrix())?;

        let normed = layer_norm(&x, p("norm2.weight"), p("norm2.bias"), LN_EPS)?;
        let hidden = gelu(&linear(&normed, p("mlp.fc1.weight"), Some(p("mlp.fc1.bias")))?);
        let mlp = linear(&hidden, p("mlp.fc2.weight"), Some(p("mlp.fc2.bias")))?;
        PatchGrid::from_matrix(extents, x.add(&mlp)?)
    }
}

fn check_param(weights: &NamedWeights, path: &str, shape: &[usize]) -> ModelResult<()> {
    match weights.get(path) {
        None => Err(ModelError::MissingParameter { path: path.to_string() }),
        Some(t) if t.shape() != shape => Err(ModelError::ParameterShape {
            path: path.to_string(),
            expected: shape.to_vec(),
            found: t.shape().to_vec(),
        }),
        Some(_) => Ok(()),
    }
}

fn mean_rows(m: &Tensor) -> Tensor {
    let c = m.last_dim();
    let n = m.len() / c;
    let mut acc = vec![0f64; c];
    for row in m.data().chunks(c) {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += v as f64;
        }
    }
    Tensor::new(vec![c], acc.into_iter().map(|a| (a / n as f64) as f32).collect()).expect("c >= 1")
}

pub fn forward_features(clip: &VideoClip, weights: &NamedWeights, cfg: &ModelConfig) -> ModelResult<FeatureVector> {
    VideoSwin::new(weights, cfg)?.forward_features(clip)
}

/// `logits = f · W + b` with `W: D x K`, `b: K`.
pub fn classify(features: &FeatureVector, weight: &Tensor, bias: &Tensor) -> ModelResult<Tensor> {
    let d = features.len();
    let k = bias.len();
    if weight.shape() != [d, k] || bias.rank() != 1 {
        return Err(ModelError::Shape {
            what: "classification head",
            expected: vec![d, k],
            found: weight.shape().to_vec(),
        });
    }
    let row = features.tensor().clone().reshape(vec![1, d])?;
    let logits = matmul(&row, weight)?;
    Ok(logits.add(&bias.clone().reshape(vec![1, k])?)?.reshape(vec![k])?)
}

/// Index of the largest logit; the lowest index wins ties.
pub fn argmax(logits: &[f32]) -> usize {
    logits
        .iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn micro() -> ModelConfig {
        Variant::Micro.config(4)
    }

    fn random_clip(shape: [usize; 3], seed: u64) -> VideoClip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [t, h, w] = shape;
        VideoClip::new(Tensor::from_fn(vec![t, h, w, 3], |_| rng.random::<f32>()).unwrap()).unwrap()
    }

    #[test]
    fn variant_parameter_counts() {
        let m = |v: Variant| count_parameters(&v.config(400)) as f64 / 1e6;
        let within = |got: f64, want: f64| (got - want).abs() <= 0.05 * want;
        assert!(within(m(Variant::SwinT), 28.0), "swin-t {}", m(Variant::SwinT));
        assert!(within(m(Variant::SwinS), 50.0), "swin-s {}", m(Variant::SwinS));
        assert!(within(m(Variant::SwinB), 88.0), "swin-b {}", m(Variant::SwinB));
        // Swin-L is roughly 2.25x Swin-B in width squared; well above 88M.
        assert!(m(Variant::SwinL) > 150.0);
    }

    #[test]
    fn symbolic_count_matches_instantiated_weights() {
        for cfg in [micro(), Variant::Micro.config(239), {
            let mut c = micro();
            c.depths = [2, 1, 3, 2];
            c.heads = [2, 2, 4, 8];
            c.window = WindowSpec { t: 2, h: 3, w: 3 };
            c
        }] {
            let w = random_weights(&cfg, 1);
            assert_eq!(count_parameters(&cfg), w.scalar_count() as u64);
        }
    }

    #[test]
    fn feature_width_is_eight_c() {
        assert_eq!(Variant::SwinT.config(400).feature_dim(), 768);
        assert_eq!(Variant::SwinB.config(400).feature_dim(), 1024);
    }

    #[test]
    fn micro_forward_is_deterministic() {
        let cfg = micro();
        let w = random_weights(&cfg, 42);
        let clip = random_clip([8, 16, 16], 3);
        let model = VideoSwin::new(&w, &cfg).unwrap();
        let (a, trace) = model.forward_traced(&clip).unwrap();
        let b = model.forward_features(&clip).unwrap();
        assert_eq!(a.len(), 64);
        assert!(a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
        let extents: Vec<_> = trace.iter().map(|g| (g.extents, g.channels)).collect();
        assert_eq!(
            extents,
            vec![([4, 4, 4], 8), ([4, 4, 4], 8), ([4, 2, 2], 16), ([4, 1, 1], 32), ([4, 1, 1], 64)]
        );
    }

    #[test]
    fn degenerate_zero_clip_is_finite() {
        let cfg = micro();
        let mut w = random_weights(&cfg, 5);
        let mut zeroed = NamedWeights::new();
        for (p, t) in w.iter() {
            let t = if p.ends_with(".bias") { Tensor::zeros(t.shape().to_vec()).unwrap() } else { t.clone() };
            zeroed.insert(p, t).unwrap();
        }
        w = zeroed;
        let clip = VideoClip::new(Tensor::zeros(vec![8, 16, 16, 3]).unwrap()).unwrap();
        let f = forward_features(&clip, &w, &cfg).unwrap();
        assert!(f.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn missing_and_misshapen_parameters_are_named() {
        let cfg = micro();
        let full = random_weights(&cfg, 1);
        let mut w = NamedWeights::new();
        for (p, t) in full.iter() {
            if p != "layers.2.blocks.0.attn.qkv.weight" {
                w.insert(p, t.clone()).unwrap();
            }
        }
        assert_eq!(
            VideoSwin::new(&w, &cfg).unwrap_err(),
            ModelError::MissingParameter {
                path: "layers.2.blocks.0.attn.qkv.weight".into()
            }
        );
        let mut w = NamedWeights::new();
        for (p, t) in full.iter() {
            let t = if p == "norm.weight" { Tensor::zeros(vec![3]).unwrap() } else { t.clone() };
            w.insert(p, t).unwrap();
        }
        let err = VideoSwin::new(&w, &cfg).unwrap_err();
        assert_eq!(
            err,
            ModelError::ParameterShape {
                path: "norm.weight".into(),
                expected: vec![64],
                found: vec![3]
            }
        );
        assert!(err.to_string().contains("[64]") && err.to_string().contains("[3]"));
    }

    #[test]
    fn classify_examples() {
        let f = FeatureVector::new(Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap()).unwrap();
        let b = Tensor::new(vec![2], vec![0.25, -0.75]).unwrap();
        let logits = classify(&f, &Tensor::zeros(vec![3, 2]).unwrap(), &b).unwrap();
        assert_eq!(logits.data(), b.data());

        // Column k of W selects feature component k.
        let w = Tensor::from_fn(vec![3, 3], |i| if i / 3 == i % 3 { 1.0 } else { 0.0 }).unwrap();
        let logits = classify(&f, &w, &Tensor::zeros(vec![3]).unwrap()).unwrap();
        assert_eq!(logits.data(), f.values());

        assert!(classify(&f, &Tensor::zeros(vec![2, 2]).unwrap(), &b).is_err());
    }

    #[test]
    fn head_sizes_follow_class_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = FeatureVector::new(Tensor::from_fn(vec![768], |_| rng.random()).unwrap()).unwrap();
        for k in [239, 174] {
            let w = Tensor::zeros(vec![768, k]).unwrap();
            let b = Tensor::zeros(vec![k]).unwrap();
            assert_eq!(classify(&f, &w, &b).unwrap().len(), k);
        }
    }

    #[test]
    fn head_swap_leaves_features_unchanged() {
        let cfg = micro();
        let w = random_weights(&cfg, 2);
        let mut swapped = NamedWeights::new();
        for (p, t) in w.iter() {
            if !p.starts_with("head.") {
                swapped.insert(p, t.clone()).unwrap();
            }
        }
        swapped.insert(HEAD_WEIGHT, Tensor::full(vec![64, 239], 3.0).unwrap()).unwrap();
        swapped.insert(HEAD_BIAS, Tensor::full(vec![239], 1.0).unwrap()).unwrap();
        let clip = random_clip([8, 16, 16], 4);
        assert_eq!(
            forward_features(&clip, &w, &cfg).unwrap(),
            forward_features(&clip, &swapped, &cfg).unwrap()
        );
    }

    #[test]
    fn variant_names_roundtrip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("swin-xl".parse::<Variant>().is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = micro();
        c.heads = [3, 1, 1, 1];
        assert!(c.validate().is_err());
        let mut c = micro();
        c.depths = [1, 0, 1, 1];
        assert!(c.validate().is_err());
        assert!(Variant::SwinL.config(400).validate().is_ok());
    }

    #[test]
    fn config_json_defaults() {
        let cfg: ModelConfig =
            serde_json::from_str(r#"{"embed_dim":8,"depths":[1,1,1,1],"heads":[1,1,1,1],"num_classes":4}"#).unwrap();
        assert_eq!(cfg.window, WindowSpec::new(8, 7));
        assert_eq!(cfg.patch, [2, 4, 4]);
        assert_eq!(cfg.mlp_ratio, 4);
    }
}
