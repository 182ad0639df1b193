//! 3D patch embedding of the input clip and the between-stage patch merging.
//!
//! Patch flattening order is `(t, h, w, channel)`: the 2x4x4x3 voxel block
//! at grid position `(i, j, k)` becomes the row
//! `clip[2i + dt, 4j + dh, 4k + dw, ch]` for `dt, dh, dw, ch` in row-major order.
//! Merging concatenates each spatial 2x2 neighbourhood as
//! (top-left, bottom-left, top-right, bottom-right), i.e. offsets
//! `(0,0), (1,0), (0,1), (1,1)` in `(h, w)`.

use crate::error::{ModelError, ModelResult};
use crate::tensor::{layer_norm, linear, matmul, Tensor};

pub const LN_EPS: f32 = 1e-5;

/// Decoded RGB frames `T x H x W x 3` with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    frames: Tensor,
}

impl VideoClip {
    pub fn new(frames: Tensor) -> ModelResult<Self> {
        match frames.shape() {
            [_, _, _, 3] => Ok(Self { frames }),
            s => Err(ModelError::Shape {
                what: "video clip (T x H x W x 3)",
                expected: vec![0, 0, 0, 3],
                found: s.to_vec(),
            }),
        }
    }

    pub fn frames(&self) -> &Tensor {
        &self.frames
    }

    /// `(T, H, W)`.
    pub fn extents(&self) -> [usize; 3] {
        let s = self.frames.shape();
        [s[0], s[1], s[2]]
    }
}

/// Token grid `T' x H' x W' x C`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    tokens: Tensor,
}

impl PatchGrid {
    pub fn new(tokens: Tensor) -> ModelResult<Self> {
        if tokens.rank() != 4 {
            return Err(ModelError::Shape {
                what: "patch grid (T x H x W x C)",
                expected: vec![0; 4],
                found: tokens.shape().to_vec(),
            });
        }
        Ok(Self { tokens })
    }

    pub fn from_fn(extents: [usize; 3], channels: usize, f: impl FnMut(usize) -> f32) -> ModelResult<Self> {
        let [t, h, w] = extents;
        Self::new(Tensor::from_fn(vec![t, h, w, channels], f)?)
    }

    pub fn tokens(&self) -> &Tensor {
        &self.tokens
    }

    pub fn into_tokens(self) -> Tensor {
        self.tokens
    }

    pub fn extents(&self) -> [usize; 3] {
        let s = self.tokens.shape();
        [s[0], s[1], s[2]]
    }

    pub fn channels(&self) -> usize {
        self.tokens.shape()[3]
    }

    pub fn token_count(&self) -> usize {
        let [t, h, w] = self.extents();
        t * h * w
    }

    /// Tokens as an `N x C` matrix in `(t, h, w)` order.
    pub fn as_matrix(&self) -> Tensor {
        let c = self.channels();
        self.tokens
            .clone()
            .reshape(vec![self.token_count(), c])
            .expect("same element count")
    }

    pub(crate) fn from_matrix(extents: [usize; 3], m: Tensor) -> ModelResult<Self> {
        let c = m.last_dim();
        let [t, h, w] = extents;
        Self::new(m.reshape(vec![t, h, w, c])?)
    }
}

/// Parameters of the patch projection and its trailing normalization.
#[derive(Debug, Clone, Copy)]
pub struct PatchEmbedWeights<'a> {
    /// `(pt*ph*pw*3) x C`
    pub projection: &'a Tensor,
    pub bias: &'a Tensor,
    pub norm_weight: &'a Tensor,
    pub norm_bias: &'a Tensor,
}

/// Parameters of one patch-merging layer.
#[derive(Debug, Clone, Copy)]
pub struct MergeWeights<'a> {
    pub norm_weight: &'a Tensor,
    pub norm_bias: &'a Tensor,
    /// `4C x 2C`, no bias.
    pub reduction: &'a Tensor,
}

fn gather_patches(clip: &VideoClip, patch: [usize; 3]) -> ModelResult<(Tensor, [usize; 3])> {
    let [t, h, w] = clip.extents();
    let [pt, ph, pw] = patch;
    for (axis, extent, divisor) in [("time", t, pt), ("height", h, ph), ("width", w, pw)] {
        if divisor == 0 || extent % divisor != 0 {
            return Err(ModelError::Indivisible {
                what: "patch embedding",
                axis,
                extent,
                divisor,
            });
        }
    }
    let grid = [t / pt, h / ph, w / pw];
    let row_len = pt * ph * pw * 3;
    let src = clip.frames().data();
    let mut rows = Vec::with_capacity(grid.iter().product::<usize>() * row_len);
    for gt in 0..grid[0] {
        for gh in 0..grid[1] {
            for gw in 0..grid[2] {
                for dt in 0..pt {
                    for dh in 0..ph {
                        let y = gh * ph + dh;
                        let x0 = gw * pw;
                        let start = (((gt * pt + dt) * h + y) * w + x0) * 3;
                        rows.extend_from_slice(&src[start..start + pw * 3]);
                    }
                }
            }
        }
    }
    let n = grid.iter().product::<usize>();
    Ok((Tensor::new(vec![n, row_len], rows)?, grid))
}

/// Linear projection of every non-overlapping patch, before normalization.
pub fn project_patches(
    clip: &VideoClip,
    patch: [usize; 3],
    projection: &Tensor,
    bias: &Tensor,
) -> ModelResult<PatchGrid> {
    let row_len = patch.iter().product::<usize>() * 3;
    if projection.rank() != 2 || projection.shape()[0] != row_len {
        return Err(ModelError::Shape {
            what: "patch projection",
            expected: vec![row_len, projection.last_dim()],
            found: projection.shape().to_vec(),
        });
    }
    let (rows, grid) = gather_patches(clip, patch)?;
    let projected = linear(&rows, projection, Some(bias))?;
    PatchGrid::from_matrix(grid, projected)
}

/// Patch projection followed by layer normalization over channels.
pub fn embed_patches(
    clip: &VideoClip,
    patch: [usize; 3],
    weights: PatchEmbedWeights<'_>,
) -> ModelResult<PatchGrid> {
    let grid = project_patches(clip, patch, weights.projection, weights.bias)?;
    let normed = layer_norm(grid.tokens(), weights.norm_weight, weights.norm_bias, LN_EPS)?;
    PatchGrid::new(normed)
}

/// Concatenates each spatial 2x2 neighbourhood into `T' x H'/2 x W'/2 x 4C`.
pub fn gather_merge(grid: &PatchGrid) -> ModelResult<PatchGrid> {
    let [t, h, w] = grid.extents();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(ModelError::OddExtent {
            height: h,
            width: w,
        });
    }
    let c = grid.channels();
    let src = grid.tokens().data();
    let (h2, w2) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(t * h2 * w2 * 4 * c);
    for ti in 0..t {
        for hi in 0..h2 {
            for wi in 0..w2 {
                for (dh, dw) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    let start = ((ti * h + 2 * hi + dh) * w + 2 * wi + dw) * c;
                    out.extend_from_slice(&src[start..start + c]);
                }
            }
        }
    }
    PatchGrid::new(Tensor::new(vec![t, h2, w2, 4 * c], out)?)
}

/// Spatial 2x2 patch merging: concatenate to `4C`, normalize, project to `2C`.
pub fn merge_patches(grid: &PatchGrid, weights: MergeWeights<'_>) -> ModelResult<PatchGrid> {
    let c = grid.channels();
    let expected = vec![4 * c, weights.reduction.last_dim()];
    if weights.reduction.shape() != expected.as_slice() {
        return Err(ModelError::Shape {
            what: "merge reduction",
            expected,
            found: weights.reduction.shape().to_vec(),
        });
    }
    let merged = gather_merge(grid)?;
    let extents = merged.extents();
    let normed = layer_norm(
        &merged.as_matrix(),
        weights.norm_weight,
        weights.norm_bias,
        LN_EPS,
    )?;
    PatchGrid::from_matrix(extents, matmul(&normed, weights.reduction)?)
}

/// Zero-pads height and width up to even extents (high side).
pub fn pad_even(grid: PatchGrid) -> ModelResult<PatchGrid> {
    let [t, h, w] = grid.extents();
    if h % 2 == 0 && w % 2 == 0 {
        return Ok(grid);
    }
    pad_grid(&grid, [t, h + h % 2, w + w % 2])
}

/// Zero-pads a grid on the high side of each axis up to `target` extents.
pub fn pad_grid(grid: &PatchGrid, target: [usize; 3]) -> ModelResult<PatchGrid> {
    let [t, h, w] = grid.extents();
    if target == [t, h, w] {
        return Ok(grid.clone());
    }
    let c = grid.channels();
    let [tp, hp, wp] = target;
    let mut out = vec![0f32; tp * hp * wp * c];
    let src = grid.tokens().data();
    for ti in 0..t {
        for hi in 0..h {
            let s = (ti * h + hi) * w * c;
            let d = (ti * hp + hi) * wp * c;
            out[d..d + w * c].copy_from_slice(&src[s..s + w * c]);
        }
    }
    PatchGrid::new(Tensor::new(vec![tp, hp, wp, c], out)?)
}

/// Keeps the low `target` corner of a grid (inverse of [`pad_grid`]).
pub fn crop_grid(grid: &PatchGrid, target: [usize; 3]) -> ModelResult<PatchGrid> {
    let [tp, hp, wp] = grid.extents();
    if target == [tp, hp, wp] {
        return Ok(grid.clone());
    }
    let c = grid.channels();
    let [t, h, w] = target;
    let src = grid.tokens().data();
    let mut out = Vec::with_capacity(t * h * w * c);
    for ti in 0..t {
        for hi in 0..h {
            let s = (ti * hp + hi) * wp * c;
            out.extend_from_slice(&src[s..s + w * c]);
        }
    }
    PatchGrid::new(Tensor::new(vec![t, h, w, c], out)?)
}
