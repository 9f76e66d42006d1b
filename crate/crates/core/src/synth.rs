//! Synthetic audio-visual captioning corpus: a pure tone (audio) and a solid
//! colour (video) whose words are independent, so each single modality can
//! recover only half of every caption.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{write_manifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::signal::{Waveform, SAMPLE_RATE};
use crate::video::{save_frame, FRAME_SIZE};

pub const TONES: [(&str, f32); 4] = [("deep", 200.0), ("low", 500.0), ("mid", 1200.0), ("high", 3000.0)];
pub const COLORS: [(&str, [f32; 3]); 4] = [
    ("red", [1.0, 0.0, 0.0]),
    ("green", [0.0, 1.0, 0.0]),
    ("blue", [0.0, 0.0, 1.0]),
    ("yellow", [1.0, 1.0, 0.0]),
];
pub const CLIP_SECONDS: usize = 10;
pub const FRAMES_PER_CLIP: usize = 20;
const AMPLITUDE: f32 = 0.5;
const NOISE_STD: f64 = 0.01;

pub fn caption(tone: &str, color: &str) -> String {
    format!("a {tone} tone with a {color} screen")
}

/// `(tone, color)` index per sample. Each block of 16 samples covers every
/// combination once in a seeded order.
pub fn combinations(n: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut block: Vec<(usize, usize)> = (0..TONES.len())
            .flat_map(|t| (0..COLORS.len()).map(move |c| (t, c)))
            .collect();
        block.shuffle(rng);
        out.extend(block);
    }
    out.truncate(n);
    out
}

fn tone(freq: f32, rng: &mut ChaCha8Rng) -> Result<Waveform> {
    let n = CLIP_SECONDS * SAMPLE_RATE as usize;
    let phase: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let noise = Normal::new(0.0, NOISE_STD).expect("valid std");
    let w = std::f32::consts::TAU * freq / SAMPLE_RATE as f32;
    let samples = (0..n)
        .map(|i| AMPLITUDE * (w * i as f32 + phase).sin() + noise.sample(rng) as f32)
        .collect();
    Waveform::new(samples, SAMPLE_RATE)
}

fn solid_frame(rgb: [f32; 3]) -> Vec<f32> {
    let plane = FRAME_SIZE * FRAME_SIZE;
    rgb.iter().flat_map(|&v| std::iter::repeat_n(v, plane)).collect()
}

/// Writes `n` samples plus `manifest.jsonl` under `out_dir`.
pub fn make_synth(out_dir: &Path, n: usize, seed: u64) -> Result<PathBuf> {
    if n == 0 {
        return Err(Error::InvalidInput("make_synth needs n ≥ 1".into()));
    }
    let mk = |p: &Path| fs::create_dir_all(p).map_err(|e| Error::file(p, e));
    mk(&out_dir.join("audio"))?;
    mk(&out_dir.join("frames"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let combos = combinations(n, &mut rng);
    let mut entries = Vec::with_capacity(n);
    for (i, &(t, c)) in combos.iter().enumerate() {
        let id = format!("synth_{i:04}");
        let audio_rel = PathBuf::from(format!("audio/{id}.wav"));
        tone(TONES[t].1, &mut rng)?.save_wav(&out_dir.join(&audio_rel))?;
        let frames_rel = PathBuf::from(format!("frames/{id}"));
        let dir = out_dir.join(&frames_rel);
        mk(&dir)?;
        let frame = solid_frame(COLORS[c].1);
        for f in 0..FRAMES_PER_CLIP {
            save_frame(&dir.join(format!("frame_{f:04}.png")), &frame, FRAME_SIZE)?;
        }
        entries.push(ManifestEntry {
            id,
            audio_path: Some(audio_rel),
            frames_dir: Some(frames_rel),
            captions: vec![caption(TONES[t].0, COLORS[c].0)],
        });
    }
    let manifest = out_dir.join("manifest.jsonl");
    write_manifest(&manifest, &entries)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combinations_cover_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut c = combinations(32, &mut rng);
        c[..16].sort();
        c[16..].sort();
        assert_eq!(c[..16], c[16..]);
        let mut first: Vec<_> = c[..16].to_vec();
        first.dedup();
        assert_eq!(first.len(), 16);
    }
}
