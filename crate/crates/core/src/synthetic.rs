//! Small separable video dataset for desk runs: each class has its own
//! colour and stripe orientation, with per-video noise, lengths and sizes.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clip::{ClipError, ClipResult, Manifest, VideoAsset};

pub const SYNTHETIC_CLASSES: [&str; 4] = ["redHorizontal", "greenVertical", "blueDiagonal", "grayChecker"];
const SIZES: [(u32, u32); 4] = [(24, 24), (32, 24), (40, 32), (48, 36)];

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ClipError + '_ {
    move |source| ClipError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Patterns are laid out in frame-relative coordinates so a class looks the
/// same at every frame size once resized to the clip resolution.
fn pixel(class: usize, u: f32, v: f32, t: usize, noise: f32) -> [f32; 3] {
    let phase = t as f32 / 16.0;
    let band = |x: f32| if (x * 4.0).rem_euclid(1.0) < 0.5 { 1.0 } else { 0.5 };
    match class {
        0 => [0.9 * band(v + phase), 0.1, 0.1],
        1 => [0.1, 0.85 * band(u + phase), 0.15],
        2 => [0.1, 0.2, 0.9 * band((u + v) / 2.0 + phase)],
        _ => {
            let s = if ((u * 4.0) as u32 + (v * 4.0) as u32) % 2 == 0 { 0.8 } else { 0.3 };
            [s, s, s]
        }
    }
    .map(|x| (x + noise).clamp(0.0, 1.0))
}

/// Writes `videos` clips (round-robin over the four classes) under `dir` with
/// a `manifest.jsonl` and returns the parsed manifest.
pub fn write_synthetic_dataset(dir: &Path, videos: usize, seed: u64) -> ClipResult<Manifest> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut lines = Vec::with_capacity(videos);
    for i in 0..videos {
        let class = i % SYNTHETIC_CLASSES.len();
        let (width, height) = SIZES[(i / SYNTHETIC_CLASSES.len()) % SIZES.len()];
        let frame_count = rng.random_range(6..=40);
        let fps = [0.5, 1.0, 2.0][rng.random_range(0..3)];
        let id = format!("synth{i:03}");
        let frame_dir = dir.join(&id);
        fs::create_dir_all(&frame_dir).map_err(io(&frame_dir))?;
        for t in 0..frame_count {
            let mut img = RgbImage::new(width, height);
            for (x, y, p) in img.enumerate_pixels_mut() {
                let noise = rng.random_range(-0.08f32..0.08);
                let (u, v) = (x as f32 / width as f32, y as f32 / height as f32);
                *p = Rgb(pixel(class, u, v, t, noise).map(|v| (v * 255.0).round() as u8));
            }
            let path = frame_dir.join(format!("{t:06}.png"));
            img.save(&path).map_err(|e| ClipError::Decode {
                id: id.clone(),
                path: path.clone(),
                message: e.to_string(),
            })?;
        }
        let asset = VideoAsset {
            id: id.clone(),
            frame_dir: id.into(),
            fps,
            frame_count,
            width,
            height,
            labels: vec![SYNTHETIC_CLASSES[class].to_string()],
        };
        lines.push(serde_json::to_string(&asset).expect("serializable"));
    }
    let manifest = dir.join("manifest.jsonl");
    let mut f = fs::File::create(&manifest).map_err(io(&manifest))?;
    for l in &lines {
        writeln!(f, "{l}").map_err(io(&manifest))?;
    }
    Manifest::load(&manifest)
}
