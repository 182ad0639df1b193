//! Dataset manifest and fixed-size clip sampling from pre-decoded frames.
//!
//! A manifest is JSON lines, one video per line:
//! `{"id", "frame_dir", "fps", "frame_count", "width", "height", "labels": [..]}`.
//! Frames live in `frame_dir` (relative paths resolve against the manifest's
//! directory) as `000000.png`, `000001.png`, ... (`.jpg` and `.ppm` also accepted).

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ModelError;
use crate::patch_embed::VideoClip;
use crate::tensor::Tensor;

pub const FRAME_EXTENSIONS: [&str; 3] = ["png", "jpg", "ppm"];

#[derive(Debug, Error)]
pub enum ClipError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Manifest { path: PathBuf, line: usize, message: String },
    #[error("video {id:?}: missing frame {index} (looked for {path}.{{png,jpg,ppm}})")]
    MissingFrame { id: String, index: usize, path: PathBuf },
    #[error("video {id:?}: cannot decode frame {path}: {message}")]
    Decode { id: String, path: PathBuf, message: String },
    #[error("video {id:?}: {message}")]
    InvalidAsset { id: String, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type ClipResult<T> = Result<T, ClipError>;

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoAsset {
    pub id: String,
    pub frame_dir: PathBuf,
    pub fps: f64,
    pub frame_count: usize,
    /// Native frame width in pixels.
    pub width: u32,
    pub height: u32,
    pub labels: Vec<String>,
}

impl VideoAsset {
    pub fn duration_s(&self) -> f64 {
        self.frame_count as f64 / self.fps
    }

    pub fn validate(&self) -> ClipResult<()> {
        let bad = |message: &str| {
            Err(ClipError::InvalidAsset {
                id: self.id.clone(),
                message: message.to_string(),
            })
        };
        if self.id.is_empty() {
            return bad("empty id");
        }
        if self.frame_count == 0 {
            return bad("frame_count must be >= 1");
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return bad("fps must be positive");
        }
        if self.width == 0 || self.height == 0 {
            return bad("width and height must be >= 1");
        }
        if self.labels.is_empty() {
            return bad("at least one label required");
        }
        Ok(())
    }

    /// Base path of frame `index` without extension.
    pub fn frame_stem(&self, index: usize) -> PathBuf {
        self.frame_dir.join(format!("{index:06}"))
    }

    fn frame_path(&self, index: usize) -> ClipResult<PathBuf> {
        let stem = self.frame_stem(index);
        FRAME_EXTENSIONS
            .iter()
            .map(|ext| stem.with_extension(ext))
            .find(|p| p.is_file())
            .ok_or(ClipError::MissingFrame {
                id: self.id.clone(),
                index,
                path: stem,
            })
    }

    /// Decodes frame `index` as `H x W x 3` in `[0, 1]`.
    pub fn load_frame(&self, index: usize) -> ClipResult<Tensor> {
        let path = self.frame_path(index)?;
        let img = image::open(&path)
            .map_err(|e| ClipError::Decode {
                id: self.id.clone(),
                path: path.clone(),
                message: e.to_string(),
            })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
        Ok(Tensor::new(vec![h as usize, w as usize, 3], data).map_err(ModelError::from)?)
    }
}

/// Parsed manifest. Asset order follows the file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub assets: Vec<VideoAsset>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> ClipResult<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ClipError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base, path)
    }

    /// Parses manifest text; relative `frame_dir`s are joined onto `base`.
    pub fn parse(text: &str, base: &Path, origin: &Path) -> ClipResult<Self> {
        let mut assets = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| ClipError::Manifest {
                path: origin.to_path_buf(),
                line: i + 1,
                message,
            };
            let mut asset: VideoAsset = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
            asset.validate().map_err(|e| err(e.to_string()))?;
            if !seen.insert(asset.id.clone()) {
                return Err(err(format!("duplicate video id {:?}", asset.id)));
            }
            if asset.frame_dir.is_relative() {
                asset.frame_dir = base.join(&asset.frame_dir);
            }
            assets.push(asset);
        }
        Ok(Self { assets })
    }

    pub fn len(&self) -> usize {
        self.assets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assets.is_empty()
    }

    /// Sorted set of every label in the manifest.
    pub fn label_vocabulary(&self) -> Vec<String> {
        let mut v: Vec<String> = self.assets.iter().flat_map(|a| a.labels.iter().cloned()).collect();
        v.sort();
        v.dedup();
        v
    }
}

/// Clip geometry: `frames` samples `stride` apart, square frames of `size` pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipSpec {
    pub frames: usize,
    pub stride: usize,
    pub size: usize,
}

impl Default for ClipSpec {
    fn default() -> Self {
        Self {
            frames: 32,
            stride: 2,
            size: 224,
        }
    }
}

/// Frame indices of the clip: a `frames * stride` span centered in the video,
/// looping when the video is shorter than the span.
pub fn clip_indices(frame_count: usize, spec: ClipSpec) -> Vec<usize> {
    let span = spec.frames * spec.stride;
    let start = frame_count.saturating_sub(span) / 2;
    (0..spec.frames).map(|i| (start + i * spec.stride) % frame_count).collect()
}

pub fn sample_clip(asset: &VideoAsset, spec: ClipSpec) -> ClipResult<VideoClip> {
    asset.validate()?;
    let indices = clip_indices(asset.frame_count, spec);
    let mut cache: BTreeMap<usize, Tensor> = BTreeMap::new();
    let mut data = Vec::with_capacity(spec.frames * spec.size * spec.size * 3);
    for &i in &indices {
        if !cache.contains_key(&i) {
            let frame = resize_bilinear(&asset.load_frame(i)?, spec.size);
            cache.insert(i, frame);
        }
        data.extend_from_slice(cache[&i].data());
    }
    let frames = Tensor::new(vec![spec.frames, spec.size, spec.size, 3], data).map_err(ModelError::from)?;
    Ok(VideoClip::new(frames)?)
}

/// Scales the shorter side to `size`, center-crops to `size x size`, with
/// bilinear interpolation on half-pixel centers (edges clamped).
pub fn resize_bilinear(frame: &Tensor, size: usize) -> Tensor {
    let (h, w) = (frame.shape()[0], frame.shape()[1]);
    let scale = size as f64 / h.min(w) as f64;
    let scaled = |n: usize| ((n as f64 * scale).round() as usize).max(size);
    let (off_y, off_x) = ((scaled(h) - size) / 2, (scaled(w) - size) / 2);
    let taps = |out: usize, off: usize, extent: usize| -> Vec<(usize, usize, f32)> {
        (0..out)
            .map(|o| {
                let src = ((o + off) as f64 + 0.5) / scale - 0.5;
                let src = src.clamp(0.0, (extent - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(extent - 1);
                (i0, i1, (src - i0 as f64) as f32)
            })
            .collect()
    };
    let ys = taps(size, off_y, h);
    let xs = taps(size, off_x, w);
    let src = frame.data();
    let px = |y: usize, x: usize, c: usize| src[(y * w + x) * 3 + c];
    let lerp = |a: f32, b: f32, f: f32| a + (b - a) * f;
    let mut out = Vec::with_capacity(size * size * 3);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for c in 0..3 {
                let top = lerp(px(y0, x0, c), px(y0, x1, c), fx);
                let bottom = lerp(px(y1, x0, c), px(y1, x1, c), fx);
                out.push(lerp(top, bottom, fy));
            }
        }
    }
    Tensor::new(vec![size, size, 3], out).expect("size >= 1")
}
