//! Video frontend: pre-extracted RGB frames → frame stack → patch sequence.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patches::{PatchGeometry, PatchSequence};

pub const FRAME_SIZE: usize = 224;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameSelection {
    /// Uniform random start offset (training).
    RandomStart,
    /// Start at `⌊(len − n_f) / 2⌋` (evaluation).
    Center,
}

/// Picks `n_f` consecutive items out of `available`.
pub fn select_frames<F: Clone, R: Rng + ?Sized>(
    available: &[F],
    n_f: usize,
    mode: FrameSelection,
    rng: &mut R,
) -> Result<Vec<F>> {
    if n_f == 0 || available.len() < n_f {
        return Err(Error::InvalidInput(format!(
            "need {n_f} consecutive frames, {} available",
            available.len()
        )));
    }
    let slack = available.len() - n_f;
    let start = match mode {
        FrameSelection::Center => slack / 2,
        FrameSelection::RandomStart => rng.random_range(0..=slack),
    };
    Ok(available[start..start + n_f].to_vec())
}

/// `n_f` RGB frames, each `3 × size × size` channel-major, values in `[0, 1]`
/// (or normalized units after [`FrameStack::normalized`]).
#[derive(Clone, Debug, PartialEq)]
pub struct FrameStack {
    data: Vec<f32>,
    n_f: usize,
    size: usize,
}

impl FrameStack {
    pub fn new(data: Vec<f32>, n_f: usize, size: usize) -> Result<Self> {
        if n_f == 0 {
            return Err(Error::InvalidInput("frame stack needs at least one frame".into()));
        }
        if data.len() != n_f * 3 * size * size {
            return Err(Error::shape(
                "frame_stack",
                format!("{} values for {n_f}×3×{size}×{size}", data.len()),
            ));
        }
        Ok(Self { data, n_f, size })
    }

    pub fn from_frames(frames: &[Vec<f32>], size: usize) -> Result<Self> {
        let data = frames.iter().flatten().copied().collect();
        Self::new(data, frames.len(), size)
    }

    pub fn n_frames(&self) -> usize {
        self.n_f
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    fn at(&self, f: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[((f * 3 + c) * self.size + y) * self.size + x]
    }

    /// Per-channel `(x − mean[c]) / std[c]`.
    pub fn normalized(&self, mean: [f32; 3], std: [f32; 3]) -> Result<Self> {
        if std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidInput("channel std must be positive".into()));
        }
        let plane = self.size * self.size;
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let c = (i / plane) % 3;
                (v - mean[c]) / std[c]
            })
            .collect();
        Ok(Self {
            data,
            n_f: self.n_f,
            size: self.size,
        })
    }
}

/// Splits the stack into `tubelet × p × p` blocks (or `p × p` when `n_f == 1`).
/// Order: temporal block, then row, then column; within a block the values
/// are flattened channel-major, then time, then row, then column.
pub fn patchify_video(fs: &FrameStack, p: usize, tubelet: usize) -> Result<PatchSequence> {
    if p == 0 || !fs.size.is_multiple_of(p) {
        return Err(Error::shape("patchify_video", format!("patch {p} does not divide {}", fs.size)));
    }
    let t = if fs.n_f == 1 { 1 } else { tubelet };
    if t == 0 || !fs.n_f.is_multiple_of(t) {
        return Err(Error::shape(
            "patchify_video",
            format!("tubelet {tubelet} does not divide {} frames", fs.n_f),
        ));
    }
    let grid = fs.size / p;
    let geometry = PatchGeometry {
        temporal: fs.n_f / t,
        rows: grid,
        cols: grid,
    };
    let dim = 3 * t * p * p;
    let mut data = Vec::with_capacity(geometry.count() * dim);
    for tb in 0..geometry.temporal {
        for r in 0..grid {
            for col in 0..grid {
                for c in 0..3 {
                    for dt in 0..t {
                        for y in 0..p {
                            for x in 0..p {
                                data.push(fs.at(tb * t + dt, c, r * p + y, col * p + x));
                            }
                        }
                    }
                }
            }
        }
    }
    PatchSequence::new(data, dim, geometry)
}

/// Inverse of [`patchify_video`].
pub fn unpatchify_video(ps: &PatchSequence, p: usize) -> Result<FrameStack> {
    let g = ps.geometry();
    if g.rows != g.cols || p == 0 || !ps.dim().is_multiple_of(3 * p * p) {
        return Err(Error::shape("unpatchify_video", "geometry does not describe video patches"));
    }
    let t = ps.dim() / (3 * p * p);
    let (size, n_f) = (g.rows * p, g.temporal * t);
    let mut data = vec![0.0f32; n_f * 3 * size * size];
    let mut src = ps.data().iter();
    for tb in 0..g.temporal {
        for r in 0..g.rows {
            for col in 0..g.cols {
                for c in 0..3 {
                    for dt in 0..t {
                        for y in 0..p {
                            for x in 0..p {
                                let f = tb * t + dt;
                                data[((f * 3 + c) * size + r * p + y) * size + col * p + x] =
                                    *src.next().expect("sizes agree");
                            }
                        }
                    }
                }
            }
        }
    }
    FrameStack::new(data, n_f, size)
}

/// Frame files in `dir` named `frame_NNNN.{png,ppm}`, sorted by name.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::file(dir, e))?;
    let mut frames = Vec::new();
    for entry in entries {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or_default();
        if name.starts_with("frame_") && matches!(ext, "png" | "ppm") {
            frames.push(path);
        }
    }
    frames.sort();
    if frames.is_empty() {
        return Err(Error::InvalidInput(format!("no frame_*.png/ppm files in {}", dir.display())));
    }
    Ok(frames)
}

/// Loads one frame as `3 × 224 × 224` channel-major values in `[0, 1]`.
pub fn load_frame(path: &Path) -> Result<Vec<f32>> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    if w as usize != FRAME_SIZE || h as usize != FRAME_SIZE {
        return Err(Error::InvalidInput(format!(
            "{}: frame is {w}×{h}, expected {FRAME_SIZE}×{FRAME_SIZE}",
            path.display()
        )));
    }
    let plane = FRAME_SIZE * FRAME_SIZE;
    let mut out = vec![0.0f32; 3 * plane];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            out[c * plane + i] = px[c] as f32 / 255.0;
        }
    }
    Ok(out)
}

/// Writes a `3 × size × size` frame with values in `[0, 1]` as PNG or PPM
/// (chosen by extension).
pub fn save_frame(path: &Path, frame: &[f32], size: usize) -> Result<()> {
    let plane = size * size;
    let img = image::RgbImage::from_fn(size as u32, size as u32, |x, y| {
        let i = y as usize * size + x as usize;
        image::Rgb([0, 1, 2].map(|c| (frame[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8))
    });
    img.save(path)?;
    Ok(())
}

/// Nearest-neighbour resize of one `3 × src × src` frame.
pub fn resize_nearest(frame: &[f32], src: usize, dst: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; 3 * dst * dst];
    for c in 0..3 {
        for y in 0..dst {
            let sy = y * src / dst;
            for x in 0..dst {
                let sx = x * src / dst;
                out[(c * dst + y) * dst + x] = frame[(c * src + sy) * src + sx];
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoConfig {
    pub patch: usize,
    pub tubelet: usize,
    pub channel_mean: [f32; 3],
    pub channel_std: [f32; 3],
}

impl Default for VideoConfig {
    fn default() -> Self {
        Self {
            patch: 16,
            tubelet: 2,
            channel_mean: [0.5; 3],
            channel_std: [0.5; 3],
        }
    }
}

impl VideoConfig {
    pub fn validate(&self, n_f: usize) -> Result<()> {
        if self.patch == 0 || !FRAME_SIZE.is_multiple_of(self.patch) {
            return Err(Error::Config(format!("video patch {} must divide {FRAME_SIZE}", self.patch)));
        }
        if n_f == 0 || (n_f > 1 && (self.tubelet == 0 || !n_f.is_multiple_of(self.tubelet))) {
            return Err(Error::Config(format!(
                "n_f={n_f} must be 1 or a multiple of the tubelet size {}",
                self.tubelet
            )));
        }
        Ok(())
    }

    pub fn token_count(&self, n_f: usize) -> usize {
        let grid = FRAME_SIZE / self.patch;
        grid * grid * if n_f == 1 { 1 } else { n_f / self.tubelet }
    }

    pub fn patch_dim(&self, n_f: usize) -> usize {
        3 * self.patch * self.patch * if n_f == 1 { 1 } else { self.tubelet }
    }
}

/// Loads, normalizes and patchifies `n_f` frames selected from `dir`.
pub fn load_video_patches<R: Rng + ?Sized>(
    dir: &Path,
    n_f: usize,
    mode: FrameSelection,
    cfg: &VideoConfig,
    rng: &mut R,
) -> Result<PatchSequence> {
    let all = list_frames(dir)?;
    let chosen = select_frames(&all, n_f, mode, rng)?;
    let frames = chosen.iter().map(|p| load_frame(p)).collect::<Result<Vec<_>>>()?;
    let stack = FrameStack::from_frames(&frames, FRAME_SIZE)?.normalized(cfg.channel_mean, cfg.channel_std)?;
    patchify_video(&stack, cfg.patch, cfg.tubelet)
}
