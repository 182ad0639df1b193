//! 3D window partitioning, cyclic shifting, shift masks and biased
//! multi-head self-attention within a window.
//!
//! Windows are enumerated in `(t, h, w)` order of their grid position and
//! tokens inside a window in `(t, h, w)` order of their local position, so a
//! window block is an `N x C` matrix with `N = wt * wh * ww`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, ModelResult};
use crate::patch_embed::PatchGrid;
use crate::tensor::{linear, softmax_in_place, Tensor};

/// Additive logit penalty that stands in for `-inf` in attention masks.
pub const MASK_VALUE: f32 = -1e4;

/// Region id given to zero-padded tokens; never equal to a real region.
const PAD_REGION: u32 = u32::MAX;

/// 3D window extent in tokens: `t x h x w` (`P x M x M` for the configured window).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl WindowSpec {
    /// `P x M x M`.
    pub fn new(p: usize, m: usize) -> Self {
        Self { t: p, h: m, w: m }
    }

    pub fn dims(self) -> [usize; 3] {
        [self.t, self.h, self.w]
    }

    pub fn from_dims([t, h, w]: [usize; 3]) -> Self {
        Self { t, h, w }
    }

    pub fn volume(self) -> usize {
        self.t * self.h * self.w
    }

    /// Shift offsets used by the shifted layout: each extent halved, floored.
    pub fn half_shift(self) -> [usize; 3] {
        [self.t / 2, self.h / 2, self.w / 2]
    }

    pub fn is_valid(self) -> bool {
        self.t >= 1 && self.h >= 1 && self.w >= 1
    }
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self::new(8, 7)
    }
}

/// Window and shift actually used on a grid of the given extents. Axes no
/// longer than the window collapse to a single window with no shift.
pub fn effective_window(extents: [usize; 3], window: WindowSpec, shifted: bool) -> (WindowSpec, [usize; 3]) {
    let dims = window.dims();
    let shift = window.half_shift();
    let mut eff = [0; 3];
    let mut off = [0; 3];
    for a in 0..3 {
        if extents[a] <= dims[a] {
            eff[a] = extents[a];
        } else {
            eff[a] = dims[a];
            if shifted {
                off[a] = shift[a];
            }
        }
    }
    (WindowSpec::from_dims(eff), off)
}

/// Smallest extents `>= extents` divisible by the window.
pub fn padded_extents(extents: [usize; 3], window: WindowSpec) -> [usize; 3] {
    let w = window.dims();
    [0, 1, 2].map(|a| extents[a].div_ceil(w[a]) * w[a])
}

fn window_counts(extents: [usize; 3], window: WindowSpec) -> ModelResult<[usize; 3]> {
    let w = window.dims();
    let axes = ["time", "height", "width"];
    let mut counts = [0; 3];
    for a in 0..3 {
        if w[a] == 0 || extents[a] % w[a] != 0 {
            return Err(ModelError::Indivisible {
                what: "window partition",
                axis: axes[a],
                extent: extents[a],
                divisor: w[a],
            });
        }
        counts[a] = extents[a] / w[a];
    }
    Ok(counts)
}

/// Flat token index of the `i`-th token of window `win` (both in `(t,h,w)` order).
fn token_offsets(extents: [usize; 3], window: WindowSpec) -> ModelResult<Vec<Vec<usize>>> {
    let counts = window_counts(extents, window)?;
    let [wt, wh, ww] = window.dims();
    let [_, h, w] = extents;
    let mut out = Vec::with_capacity(counts.iter().product());
    for bt in 0..counts[0] {
        for bh in 0..counts[1] {
            for bw in 0..counts[2] {
                let mut idx = Vec::with_capacity(window.volume());
                for lt in 0..wt {
                    for lh in 0..wh {
                        for lw in 0..ww {
                            let (t, y, x) = (bt * wt + lt, bh * wh + lh, bw * ww + lw);
                            idx.push((t * h + y) * w + x);
                        }
                    }
                }
                out.push(idx);
            }
        }
    }
    Ok(out)
}

/// Splits a grid into `(T'/P)(H'/M)(W'/M)` blocks of `P·M² x C` tokens.
pub fn partition_windows(grid: &PatchGrid, window: WindowSpec) -> ModelResult<Vec<Tensor>> {
    let c = grid.channels();
    let src = grid.tokens().data();
    let offsets = token_offsets(grid.extents(), window)?;
    offsets
        .into_iter()
        .map(|idx| {
            let mut data = Vec::with_capacity(idx.len() * c);
            for i in idx {
                data.extend_from_slice(&src[i * c..(i + 1) * c]);
            }
            Ok(Tensor::new(vec![window.volume(), c], data)?)
        })
        .collect()
}

/// Inverse of [`partition_windows`].
pub fn reverse_windows(blocks: &[Tensor], window: WindowSpec, extents: [usize; 3]) -> ModelResult<PatchGrid> {
    let offsets = token_offsets(extents, window)?;
    if offsets.len() != blocks.len() {
        return Err(ModelError::WindowCount {
            expected: offsets.len(),
            got: blocks.len(),
        });
    }
    let n = window.volume();
    let c = blocks.first().map_or(0, |b| b.last_dim());
    let mut out = vec![0f32; extents.iter().product::<usize>() * c];
    for (block, idx) in blocks.iter().zip(offsets) {
        if block.shape() != [n, c] {
            return Err(ModelError::Shape {
                what: "window block",
                expected: vec![n, c],
                found: block.shape().to_vec(),
            });
        }
        for (row, i) in block.data().chunks(c).zip(idx) {
            out[i * c..(i + 1) * c].copy_from_slice(row);
        }
    }
    let [t, h, w] = extents;
    PatchGrid::new(Tensor::new(vec![t, h, w, c], out)?)
}

/// Toroidal roll with `torch.roll` semantics: `out[i] = in[(i - shift) mod L]` per axis.
pub fn roll(grid: &PatchGrid, shifts: [isize; 3]) -> PatchGrid {
    let [t, h, w] = grid.extents();
    let c = grid.channels();
    let norm = |s: isize, l: usize| s.rem_euclid(l as isize) as usize;
    let (st, sh, sw) = (norm(shifts[0], t), norm(shifts[1], h), norm(shifts[2], w));
    if st == 0 && sh == 0 && sw == 0 {
        return grid.clone();
    }
    let src = grid.tokens().data();
    let mut out = vec![0f32; src.len()];
    for ti in 0..t {
        let ts = (ti + t - st) % t;
        for hi in 0..h {
            let hs = (hi + h - sh) % h;
            for wi in 0..w {
                let ws = (wi + w - sw) % w;
                let d = ((ti * h + hi) * w + wi) * c;
                let s = ((ts * h + hs) * w + ws) * c;
                out[d..d + c].copy_from_slice(&src[s..s + c]);
            }
        }
    }
    PatchGrid::new(Tensor::new(grid.tokens().shape().to_vec(), out).expect("same shape"))
        .expect("rank 4")
}

/// Rolls tokens toward the origin by `offsets`, so shifted windows straddle the
/// boundaries of the regular layout.
pub fn cyclic_shift(grid: &PatchGrid, offsets: [usize; 3]) -> PatchGrid {
    roll(grid, offsets.map(|o| -(o as isize)))
}

/// Undoes [`cyclic_shift`].
pub fn reverse_cyclic_shift(grid: &PatchGrid, offsets: [usize; 3]) -> PatchGrid {
    roll(grid, offsets.map(|o| o as isize))
}

fn axis_region(pos: usize, extent: usize, window: usize, shift: usize) -> u32 {
    if shift == 0 || pos < extent - window {
        0
    } else if pos < extent - shift {
        1
    } else {
        2
    }
}

/// Region id of every token of the shifted grid, flat in `(t, h, w)` order.
/// Regions are laid out in shifted coordinates: per axis `[0, L-win)`,
/// `[L-win, L-shift)` and the wrapped tail `[L-shift, L)`. `extents` are the
/// (padded) grid extents and `valid` the unpadded ones; a token whose
/// pre-shift position lies in padding gets [`PAD_REGION`].
pub fn region_ids(extents: [usize; 3], valid: [usize; 3], window: WindowSpec, offsets: [usize; 3]) -> Vec<u32> {
    let wd = window.dims();
    let per_axis = |a: usize| -> Vec<Option<u32>> {
        (0..extents[a])
            .map(|i| {
                let orig = (i + offsets[a]) % extents[a];
                (orig < valid[a]).then(|| axis_region(i, extents[a], wd[a], offsets[a]))
            })
            .collect()
    };
    let (rt, rh, rw) = (per_axis(0), per_axis(1), per_axis(2));
    let mut ids = Vec::with_capacity(extents.iter().product());
    for t in &rt {
        for h in &rh {
            for w in &rw {
                ids.push(match (t, h, w) {
                    (Some(t), Some(h), Some(w)) => t * 9 + h * 3 + w,
                    _ => PAD_REGION,
                });
            }
        }
    }
    ids
}

/// Additive `N x N` mask for one window: `0` within a region, [`MASK_VALUE`] across.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMask {
    values: Tensor,
}

impl AttentionMask {
    pub fn from_regions(ids: &[u32]) -> Self {
        let n = ids.len();
        let values = Tensor::from_fn(vec![n, n], |k| {
            if ids[k / n] == ids[k % n] {
                0.0
            } else {
                MASK_VALUE
            }
        })
        .expect("non-empty window");
        Self { values }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            values: Tensor::zeros(vec![n, n]).expect("non-empty window"),
        }
    }

    pub fn tokens(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.values.data()[i * self.tokens() + j]
    }

    pub fn is_zero(&self) -> bool {
        self.values.data().iter().all(|&v| v == 0.0)
    }
}

/// Per-window masks for a possibly padded, possibly shifted grid; `None`
/// where every token in the window shares one region.
pub fn window_masks(
    extents: [usize; 3],
    valid: [usize; 3],
    window: WindowSpec,
    offsets: [usize; 3],
) -> ModelResult<Vec<Option<AttentionMask>>> {
    let ids = region_ids(extents, valid, window, offsets);
    let windows = token_offsets(extents, window)?;
    Ok(windows
        .into_iter()
        .map(|idx| {
            let local: Vec<u32> = idx.iter().map(|&i| ids[i]).collect();
            let uniform = local.iter().all(|&r| r == local[0]);
            (!uniform).then(|| AttentionMask::from_regions(&local))
        })
        .collect())
}

/// Masks keeping tokens that the cyclic shift wrapped together from attending
/// across the wrap seam. Offsets must be strictly smaller than the window.
pub fn build_shift_mask(extents: [usize; 3], window: WindowSpec, offsets: [usize; 3]) -> ModelResult<Vec<AttentionMask>> {
    let n = window.volume();
    Ok(window_masks(extents, extents, window, offsets)?
        .into_iter()
        .map(|m| m.unwrap_or_else(|| AttentionMask::zeros(n)))
        .collect())
}

/// Learned per-head bias indexed by the relative `(dt, dh, dw)` offset of a token pair.
#[derive(Debug, Clone, Copy)]
pub struct RelativeBiasTable<'a> {
    /// `(2P-1)(2M-1)(2M-1) x heads`
    table: &'a Tensor,
    window: WindowSpec,
}

impl<'a> RelativeBiasTable<'a> {
    pub fn rows(window: WindowSpec) -> usize {
        (2 * window.t - 1) * (2 * window.h - 1) * (2 * window.w - 1)
    }

    pub fn new(table: &'a Tensor, window: WindowSpec) -> ModelResult<Self> {
        let rows = Self::rows(window);
        if table.rank() != 2 || table.shape()[0] != rows {
            return Err(ModelError::Shape {
                what: "relative position bias table",
                expected: vec![rows, table.last_dim()],
                found: table.shape().to_vec(),
            });
        }
        Ok(Self { table, window })
    }

    pub fn heads(&self) -> usize {
        self.table.shape()[1]
    }

    /// Table row for the offset `query - key`.
    pub fn row_of(&self, delta: [isize; 3]) -> usize {
        let [wt, wh, ww] = self.window.dims().map(|d| d as isize);
        let (t, h, w) = (delta[0] + wt - 1, delta[1] + wh - 1, delta[2] + ww - 1);
        (t * (2 * wh - 1) * (2 * ww - 1) + h * (2 * ww - 1) + w) as usize
    }

    /// `N x N` row indices for a window no larger than the table's window.
    pub fn index(&self, window: WindowSpec) -> Vec<usize> {
        let coords = local_coords(window);
        let mut idx = Vec::with_capacity(coords.len() * coords.len());
        for q in &coords {
            for k in &coords {
                idx.push(self.row_of([0, 1, 2].map(|a| q[a] as isize - k[a] as isize)));
            }
        }
        idx
    }

    /// Dense bias `heads x N x N` for the given window.
    pub fn gather(&self, window: WindowSpec) -> ModelResult<Tensor> {
        let full = self.window.dims();
        if window.dims().iter().zip(full).any(|(e, f)| *e > f) {
            return Err(ModelError::Shape {
                what: "bias gather window",
                expected: full.to_vec(),
                found: window.dims().to_vec(),
            });
        }
        let heads = self.heads();
        let idx = self.index(window);
        let n = window.volume();
        let tab = self.table.data();
        let mut out = vec![0f32; heads * n * n];
        for h in 0..heads {
            for (p, &row) in idx.iter().enumerate() {
                out[h * n * n + p] = tab[row * heads + h];
            }
        }
        Ok(Tensor::new(vec![heads, n, n], out)?)
    }
}

fn local_coords(window: WindowSpec) -> Vec<[usize; 3]> {
    let mut v = Vec::with_capacity(window.volume());
    for t in 0..window.t {
        for h in 0..window.h {
            for w in 0..window.w {
                v.push([t, h, w]);
            }
        }
    }
    v
}

/// Fused projections of one attention layer. Weights are `in x out`; the
/// `3C` columns of `qkv_weight` are `[q | k | v]`, each split into heads of
/// `C / heads` consecutive columns.
#[derive(Debug, Clone, Copy)]
pub struct AttentionWeights<'a> {
    pub qkv_weight: &'a Tensor,
    pub qkv_bias: &'a Tensor,
    pub proj_weight: &'a Tensor,
    pub proj_bias: &'a Tensor,
}

/// Output of [`window_attention_probs`]: the projected tokens and the
/// post-softmax attention weights `heads x N x N`.
#[derive(Debug, Clone)]
pub struct AttentionOutput {
    pub output: Tensor,
    pub probs: Tensor,
}

/// `softmax(Q K^T / sqrt(d) + B + mask) V` per head, concatenated and projected.
pub fn window_attention(
    block: &Tensor,
    weights: AttentionWeights<'_>,
    bias: &Tensor,
    mask: Option<&AttentionMask>,
    heads: usize,
) -> ModelResult<Tensor> {
    attend(block, weights, bias, mask, heads, false).map(|o| o.output)
}

pub fn window_attention_probs(
    block: &Tensor,
    weights: AttentionWeights<'_>,
    bias: &Tensor,
    mask: Option<&AttentionMask>,
    heads: usize,
) -> ModelResult<AttentionOutput> {
    attend(block, weights, bias, mask, heads, true)
}

fn attend(
    block: &Tensor,
    weights: AttentionWeights<'_>,
    bias: &Tensor,
    mask: Option<&AttentionMask>,
    heads: usize,
    keep_probs: bool,
) -> ModelResult<AttentionOutput> {
    let (n, c) = match block.shape() {
        [n, c] => (*n, *c),
        s => {
            return Err(ModelError::Shape {
                what: "window block",
                expected: vec![0, 0],
                found: s.to_vec(),
            })
        }
    };
    if heads == 0 || c % heads != 0 {
        return Err(ModelError::HeadsIndivisible { channels: c, heads });
    }
    if bias.shape() != [heads, n, n] {
        return Err(ModelError::Shape {
            what: "attention bias",
            expected: vec![heads, n, n],
            found: bias.shape().to_vec(),
        });
    }
    if let Some(m) = mask {
        if m.tokens() != n {
            return Err(ModelError::Shape {
                what: "attention mask",
                expected: vec![n, n],
                found: m.values().shape().to_vec(),
            });
        }
    }
    let hd = c / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let qkv = linear(block, weights.qkv_weight, Some(weights.qkv_bias))?;
    if qkv.last_dim() != 3 * c {
        return Err(ModelError::Shape {
            what: "qkv projection",
            expected: vec![c, 3 * c],
            found: weights.qkv_weight.shape().to_vec(),
        });
    }
    // Per-head contiguous copies: [part][head][token][d].
    let src = qkv.data();
    let mut split = vec![0f32; 3 * n * c];
    for row in 0..n {
        for part in 0..3 {
            for h in 0..heads {
                let from = row * 3 * c + part * c + h * hd;
                let to = ((part * heads + h) * n + row) * hd;
                split[to..to + hd].copy_from_slice(&src[from..from + hd]);
            }
        }
    }
    let head_part = |part: usize, h: usize| &split[(part * heads + h) * n * hd..(part * heads + h + 1) * n * hd];

    let mut mixed = vec![0f32; n * c];
    let mut probs = if keep_probs { vec![0f32; heads * n * n] } else { Vec::new() };
    let mut logits = vec![0f32; n];
    let mut acc = vec![0f64; hd];
    for h in 0..heads {
        let bias_h = &bias.data()[h * n * n..(h + 1) * n * n];
        let (qh, kh, vh) = (head_part(0, h), head_part(1, h), head_part(2, h));
        for i in 0..n {
            let qi = &qh[i * hd..(i + 1) * hd];
            for (j, (l, kj)) in logits.iter_mut().zip(kh.chunks_exact(hd)).enumerate() {
                let dot: f64 = qi.iter().zip(kj).map(|(&a, &b)| a as f64 * b as f64).sum();
                let mut v = (dot * scale) as f32 + bias_h[i * n + j];
                if let Some(m) = mask {
                    v += m.get(i, j);
                }
                *l = v;
            }
            softmax_in_place(&mut logits);
            if keep_probs {
                probs[(h * n + i) * n..(h * n + i + 1) * n].copy_from_slice(&logits);
            }
            acc.iter_mut().for_each(|a| *a = 0.0);
            for (&p, vj) in logits.iter().zip(vh.chunks_exact(hd)) {
                let p = p as f64;
                for (a, &v) in acc.iter_mut().zip(vj) {
                    *a += p * v as f64;
                }
            }
            for (d, a) in acc.iter().enumerate() {
                mixed[i * c + h * hd + d] = *a as f32;
            }
        }
    }
    let mixed = Tensor::new(vec![n, c], mixed)?;
    let output = linear(&mixed, weights.proj_weight, Some(weights.proj_bias))?;
    let probs = if keep_probs {
        Tensor::new(vec![heads, n, n], probs)?
    } else {
        Tensor::zeros(vec![1])?
    };
    Ok(AttentionOutput { output, probs })
}

/// Full (shifted) window attention over a grid: pad to the window, shift,
/// attend per window with region masks, then undo shift and padding.
pub fn grid_attention(
    grid: &PatchGrid,
    weights: AttentionWeights<'_>,
    table: RelativeBiasTable<'_>,
    window: WindowSpec,
    heads: usize,
    shifted: bool,
) -> ModelResult<PatchGrid> {
    let valid = grid.extents();
    let (eff, offsets) = effective_window(valid, window, shifted);
    let padded = padded_extents(valid, eff);
    let grid = crate::patch_embed::pad_grid(grid, padded)?;
    let grid = cyclic_shift(&grid, offsets);
    let masks = window_masks(padded, valid, eff, offsets)?;
    let bias = table.gather(eff)?;
    let blocks = partition_windows(&grid, eff)?;
    let outputs = blocks
        .par_iter()
        .zip(masks.par_iter())
        .map(|(b, m)| window_attention(b, weights, &bias, m.as_ref(), heads))
        .collect::<ModelResult<Vec<_>>>()?;
    let grid = reverse_windows(&outputs, eff, padded)?;
    let grid = reverse_cyclic_shift(&grid, offsets);
    crate::patch_embed::crop_grid(&grid, valid)
}
