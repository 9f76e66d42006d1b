//! Audio frontend: 16 kHz waveform → log-Mel spectrogram → patch sequence.
//!
//! Frames are taken without centre padding using a symmetric Hann window of
//! `window` samples, zero padded to `n_fft` for the FFT. Power spectra go
//! through an HTK-scale triangular filterbank and are log-compressed with a
//! floor.

use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patches::{PatchGeometry, PatchSequence};

pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate != SAMPLE_RATE {
            return Err(Error::InvalidInput(format!(
                "sample rate {sample_rate} Hz, expected {SAMPLE_RATE} Hz (resampling is not supported)"
            )));
        }
        if samples.is_empty() {
            return Err(Error::InvalidInput("empty waveform".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Reads a mono 16-bit PCM WAV file.
    pub fn load_wav(path: &Path) -> Result<Self> {
        let mut reader = hound::WavReader::open(path)?;
        let spec = reader.spec();
        if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
            return Err(Error::InvalidInput(format!(
                "{}: expected mono 16-bit PCM, got {} channel(s) at {} bits",
                path.display(),
                spec.channels,
                spec.bits_per_sample
            )));
        }
        let samples = reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Self::new(samples, spec.sample_rate)
    }

    pub fn save_wav(&self, path: &Path) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut writer = hound::WavWriter::create(path, spec)?;
        for &s in &self.samples {
            writer.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
        }
        writer.finalize()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Normalization {
    /// Standardize each spectrogram by its own mean and standard deviation.
    PerInstance,
    Fixed { mean: f32, std: f32 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrontendConfig {
    pub sample_rate: u32,
    pub window: usize,
    pub hop: usize,
    pub n_fft: usize,
    pub n_mels: usize,
    pub fmin: f32,
    pub fmax: f32,
    pub log_floor: f32,
    pub target_frames: usize,
    pub patch: usize,
    pub normalization: Normalization,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            sample_rate: SAMPLE_RATE,
            window: 400,
            hop: 160,
            n_fft: 512,
            n_mels: 128,
            fmin: 0.0,
            fmax: 8000.0,
            log_floor: 1e-10,
            target_frames: 1024,
            patch: 16,
            normalization: Normalization::PerInstance,
        }
    }
}

impl FrontendConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("audio frontend: {m}")));
        if self.sample_rate != SAMPLE_RATE {
            return bad(format!("sample_rate must be {SAMPLE_RATE}"));
        }
        if self.window == 0 || self.hop == 0 || self.n_fft < self.window {
            return bad("window/hop must be positive and n_fft ≥ window".into());
        }
        if self.n_mels == 0 || !(self.fmin >= 0.0 && self.fmax > self.fmin) {
            return bad("need n_mels > 0 and 0 ≤ fmin < fmax".into());
        }
        if self.patch == 0 || !self.target_frames.is_multiple_of(self.patch) || !self.n_mels.is_multiple_of(self.patch) {
            return bad(format!(
                "patch {} must divide target_frames {} and n_mels {}",
                self.patch, self.target_frames, self.n_mels
            ));
        }
        if let Normalization::Fixed { std, .. } = self.normalization {
            if std <= 0.0 {
                return bad("normalization std must be positive".into());
            }
        }
        Ok(())
    }

    /// Number of audio tokens produced per clip.
    pub fn token_count(&self) -> usize {
        (self.target_frames / self.patch) * (self.n_mels / self.patch)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch
    }
}

/// `frames × mels` matrix of log energies, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    data: Vec<f32>,
    n_frames: usize,
    n_mels: usize,
}

impl MelSpectrogram {
    pub fn new(data: Vec<f32>, n_frames: usize, n_mels: usize) -> Result<Self> {
        if data.len() != n_frames * n_mels {
            return Err(Error::shape("mel_spectrogram", format!("{} values for {n_frames}×{n_mels}", data.len())));
        }
        Ok(Self { data, n_frames, n_mels })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.data[t * self.n_mels..(t + 1) * self.n_mels]
    }

    pub fn get(&self, t: usize, m: usize) -> f32 {
        self.data[t * self.n_mels + m]
    }

    pub fn mean_std(&self) -> (f32, f32) {
        let n = self.data.len() as f64;
        let mean = self.data.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = self.data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        (mean as f32, var.sqrt() as f32)
    }
}

/// Frame count of an unpadded STFT: `1 + ⌊(len − window) / hop⌋`.
pub fn frame_count(len: usize, window: usize, hop: usize) -> Option<usize> {
    (len >= window).then(|| 1 + (len - window) / hop)
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular HTK filterbank, `n_mels × (n_fft/2 + 1)` row-major.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: u32, fmin: f64, fmax: f64) -> Vec<f32> {
    let n_bins = n_fft / 2 + 1;
    let (mel_lo, mel_hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let mut fb = vec![0.0f32; n_mels * n_bins];
    for m in 0..n_mels {
        let (lo, centre, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * sample_rate as f64 / n_fft as f64;
            let up = (f - lo) / (centre - lo);
            let down = (hi - f) / (hi - centre);
            fb[m * n_bins + k] = up.min(down).max(0.0) as f32;
        }
    }
    fb
}

/// Symmetric Hann window.
pub fn hann_window(len: usize) -> Vec<f32> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|n| (0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / (len - 1) as f64).cos()) as f32)
        .collect()
}

/// Reusable STFT + filterbank state for one [`FrontendConfig`].
pub struct LogMel {
    cfg: FrontendConfig,
    window: Vec<f32>,
    filterbank: Vec<f32>,
    fft: Arc<dyn rustfft::Fft<f32>>,
}

impl LogMel {
    pub fn new(cfg: &FrontendConfig) -> Result<Self> {
        cfg.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
        Ok(Self {
            window: hann_window(cfg.window),
            filterbank: mel_filterbank(cfg.n_mels, cfg.n_fft, cfg.sample_rate, cfg.fmin as f64, cfg.fmax as f64),
            fft,
            cfg: cfg.clone(),
        })
    }

    pub fn compute(&self, w: &Waveform) -> Result<MelSpectrogram> {
        let cfg = &self.cfg;
        if w.sample_rate() != cfg.sample_rate {
            return Err(Error::InvalidInput(format!(
                "sample rate {} Hz does not match frontend rate {} Hz",
                w.sample_rate(),
                cfg.sample_rate
            )));
        }
        let n_frames = frame_count(w.samples().len(), cfg.window, cfg.hop).ok_or_else(|| {
            Error::InvalidInput(format!(
                "waveform of {} samples is shorter than one {}-sample window",
                w.samples().len(),
                cfg.window
            ))
        })?;
        let n_bins = cfg.n_fft / 2 + 1;
        let mut buf = vec![Complex::new(0.0f32, 0.0); cfg.n_fft];
        let mut scratch = vec![Complex::new(0.0f32, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0f32; n_bins];
        let mut out = Vec::with_capacity(n_frames * cfg.n_mels);
        for t in 0..n_frames {
            let frame = &w.samples()[t * cfg.hop..t * cfg.hop + cfg.window];
            for (i, c) in buf.iter_mut().enumerate() {
                *c = Complex::new(if i < cfg.window { frame[i] * self.window[i] } else { 0.0 }, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for m in 0..cfg.n_mels {
                let weights = &self.filterbank[m * n_bins..(m + 1) * n_bins];
                let energy: f32 = weights.iter().zip(&power).map(|(&a, &b)| a * b).sum();
                out.push(energy.max(cfg.log_floor).ln());
            }
        }
        MelSpectrogram::new(out, n_frames, cfg.n_mels)
    }
}

pub fn compute_logmel(w: &Waveform, cfg: &FrontendConfig) -> Result<MelSpectrogram> {
    LogMel::new(cfg)?.compute(w)
}

/// Pads with `pad_value` rows at the end, or truncates at the end, to exactly
/// `target_frames` rows.
pub fn pad_or_truncate(m: &MelSpectrogram, target_frames: usize, pad_value: f32) -> MelSpectrogram {
    let keep = m.n_frames.min(target_frames) * m.n_mels;
    let mut data = m.data[..keep].to_vec();
    data.resize(target_frames * m.n_mels, pad_value);
    MelSpectrogram {
        data,
        n_frames: target_frames,
        n_mels: m.n_mels,
    }
}

/// Entry-wise `(x − mean) / std`.
pub fn normalize(m: &MelSpectrogram, mean: f32, std: f32) -> Result<MelSpectrogram> {
    if !(std > 0.0) {
        return Err(Error::InvalidInput(format!("normalization std must be positive, got {std}")));
    }
    Ok(MelSpectrogram {
        data: m.data.iter().map(|&v| (v - mean) / std).collect(),
        n_frames: m.n_frames,
        n_mels: m.n_mels,
    })
}

/// Splits the spectrogram into `p×p` patches, time-block index outer and
/// frequency-block index inner, each flattened row-major (time rows).
pub fn patchify_audio(m: &MelSpectrogram, p: usize) -> Result<PatchSequence> {
    if p == 0 || !m.n_frames.is_multiple_of(p) || !m.n_mels.is_multiple_of(p) {
        return Err(Error::shape(
            "patchify_audio",
            format!("{}×{} is not divisible into {p}×{p} patches", m.n_frames, m.n_mels),
        ));
    }
    let (rows, cols) = (m.n_frames / p, m.n_mels / p);
    let mut data = Vec::with_capacity(m.data.len());
    for tb in 0..rows {
        for fb in 0..cols {
            for t in 0..p {
                let start = (tb * p + t) * m.n_mels + fb * p;
                data.extend_from_slice(&m.data[start..start + p]);
            }
        }
    }
    PatchSequence::new(
        data,
        p * p,
        PatchGeometry {
            temporal: 1,
            rows,
            cols,
        },
    )
}

/// Inverse of [`patchify_audio`].
pub fn unpatchify_audio(ps: &PatchSequence, p: usize) -> Result<MelSpectrogram> {
    let g = ps.geometry();
    if ps.dim() != p * p || g.temporal != 1 {
        return Err(Error::shape("unpatchify_audio", "geometry does not describe audio patches"));
    }
    let (n_frames, n_mels) = (g.rows * p, g.cols * p);
    let mut data = vec![0.0f32; n_frames * n_mels];
    for (idx, patch) in ps.iter().enumerate() {
        let (tb, fb) = (idx / g.cols, idx % g.cols);
        for t in 0..p {
            let start = (tb * p + t) * n_mels + fb * p;
            data[start..start + p].copy_from_slice(&patch[t * p..(t + 1) * p]);
        }
    }
    MelSpectrogram::new(data, n_frames, n_mels)
}

/// Full audio chain: log-Mel → normalization → pad/truncate → patches.
pub struct AudioFrontend {
    logmel: LogMel,
}

impl AudioFrontend {
    pub fn new(cfg: &FrontendConfig) -> Result<Self> {
        Ok(Self { logmel: LogMel::new(cfg)? })
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.logmel.cfg
    }

    pub fn spectrogram(&self, w: &Waveform) -> Result<MelSpectrogram> {
        let cfg = self.config();
        let mel = self.logmel.compute(w)?;
        let (mean, std) = match cfg.normalization {
            Normalization::Fixed { mean, std } => (mean, std),
            Normalization::PerInstance => {
                let (mean, std) = mel.mean_std();
                // A constant spectrogram (e.g. digital silence) has zero spread.
                (mean, if std > 1e-6 { std } else { 1.0 })
            }
        };
        let mel = normalize(&mel, mean, std)?;
        Ok(pad_or_truncate(&mel, cfg.target_frames, 0.0))
    }

    pub fn patches(&self, w: &Waveform) -> Result<PatchSequence> {
        patchify_audio(&self.spectrogram(w)?, self.config().patch)
    }

    pub fn load(&self, path: &Path) -> Result<PatchSequence> {
        self.patches(&Waveform::load_wav(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sine(freq: f64, n: usize) -> Waveform {
        let s = (0..n)
            .map(|i| (0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / 16000.0).sin()) as f32)
            .collect();
        Waveform::new(s, 16000).unwrap()
    }

    #[test]
    fn ten_seconds_give_998_frames() {
        let cfg = FrontendConfig::default();
        assert_eq!(frame_count(160_000, 400, 160), Some(998));
        let mel = compute_logmel(&sine(440.0, 160_000), &cfg).unwrap();
        assert_eq!((mel.n_frames(), mel.n_mels()), (998, 128));
        assert!(mel.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn silence_sits_at_the_log_floor() {
        let cfg = FrontendConfig::default();
        let w = Waveform::new(vec![0.0; 4000], 16000).unwrap();
        let mel = compute_logmel(&w, &cfg).unwrap();
        let floor = 1e-10f32.ln();
        assert!(mel.data().iter().all(|&v| v == floor));
    }

    #[test]
    fn rejects_bad_waveforms() {
        assert!(Waveform::new(vec![0.0; 10], 44_100).is_err());
        assert!(Waveform::new(vec![], 16_000).is_err());
        let short = Waveform::new(vec![0.0; 399], 16_000).unwrap();
        assert!(compute_logmel(&short, &FrontendConfig::default()).is_err());
    }

    /// Brute-force DFT of one windowed frame, projected on the filterbank.
    fn dft_mel_argmax(frame: &[f32], cfg: &FrontendConfig) -> usize {
        let win = hann_window(cfg.window);
        let n_bins = cfg.n_fft / 2 + 1;
        let power: Vec<f64> = (0..n_bins)
            .map(|k| {
                let (mut re, mut im) = (0.0f64, 0.0f64);
                for n in 0..cfg.window {
                    let x = (frame[n] * win[n]) as f64;
                    let ang = -2.0 * std::f64::consts::PI * (k * n) as f64 / cfg.n_fft as f64;
                    re += x * ang.cos();
                    im += x * ang.sin();
                }
                re * re + im * im
            })
            .collect();
        let fb = mel_filterbank(cfg.n_mels, cfg.n_fft, cfg.sample_rate, cfg.fmin as f64, cfg.fmax as f64);
        (0..cfg.n_mels)
            .map(|m| (m, (0..n_bins).map(|k| fb[m * n_bins + k] as f64 * power[k]).sum::<f64>()))
            .fold((0, f64::MIN), |best, cur| if cur.1 > best.1 { cur } else { best })
            .0
    }

    #[test]
    fn sine_peak_bin_is_constant_and_matches_dft_oracle() {
        let cfg = FrontendConfig::default();
        let w = sine(440.0, 16_000);
        let mel = compute_logmel(&w, &cfg).unwrap();
        let argmax = |t: usize| {
            mel.frame(t)
                .iter()
                .enumerate()
                .fold((0, f32::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
                .0
        };
        let expected = dft_mel_argmax(&w.samples()[..cfg.window], &cfg);
        for t in 0..mel.n_frames() {
            assert_eq!(argmax(t), expected, "frame {t}");
        }
    }

    #[test]
    fn pad_or_truncate_examples() {
        let m = MelSpectrogram::new((0..998 * 128).map(|v| v as f32).collect(), 998, 128).unwrap();
        let p = pad_or_truncate(&m, 1024, 0.0);
        assert_eq!(p.n_frames(), 1024);
        assert_eq!(&p.data()[..998 * 128], m.data());
        assert!(p.data()[998 * 128..].iter().all(|&v| v == 0.0));

        let full = pad_or_truncate(&p, 1024, 0.0);
        assert_eq!(full, p);

        let long = MelSpectrogram::new((0..1100 * 128).map(|v| v as f32).collect(), 1100, 128).unwrap();
        let cut = pad_or_truncate(&long, 1024, 0.0);
        assert_eq!(cut.data(), &long.data()[..1024 * 128]);
    }

    #[test]
    fn normalize_examples() {
        let m = MelSpectrogram::new(vec![1.0, 3.0, 5.0, 7.0], 2, 2).unwrap();
        assert_eq!(normalize(&m, 0.0, 1.0).unwrap(), m);
        assert_eq!(normalize(&m, 4.0, 2.0).unwrap().data(), &[-1.5, -0.5, 0.5, 1.5]);
        let c = MelSpectrogram::new(vec![2.5; 6], 3, 2).unwrap();
        assert!(normalize(&c, 2.5, 3.0).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(normalize(&m, 0.0, 0.0).is_err());
    }

    #[test]
    fn normalize_is_affine() {
        let m = MelSpectrogram::new(vec![1.0, -3.0, 5.0, 0.25], 2, 2).unwrap();
        let (a, b) = (2.0f32, -1.5f32);
        let scaled = MelSpectrogram::new(m.data().iter().map(|&v| a * v + b).collect(), 2, 2).unwrap();
        let lhs = normalize(&scaled, a * 0.5 + b, a * 2.0).unwrap();
        let rhs = normalize(&m, 0.5, 2.0).unwrap();
        for (x, y) in lhs.data().iter().zip(rhs.data()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn patchify_examples() {
        let m = MelSpectrogram::new(vec![0.0; 1024 * 128], 1024, 128).unwrap();
        let ps = patchify_audio(&m, 16).unwrap();
        assert_eq!((ps.count(), ps.dim()), (512, 256));

        let single = MelSpectrogram::new((0..256).map(|v| v as f32).collect(), 16, 16).unwrap();
        let ps = patchify_audio(&single, 16).unwrap();
        assert_eq!(ps.count(), 1);
        assert_eq!(ps.patch(0), single.data());

        // Quadrant (t, f) holds value 10·t + f.
        let quad: Vec<f32> = (0..32 * 32)
            .map(|i| {
                let (t, f) = (i / 32, i % 32);
                (10 * (t / 16) + f / 16) as f32
            })
            .collect();
        let ps = patchify_audio(&MelSpectrogram::new(quad, 32, 32).unwrap(), 16).unwrap();
        let firsts: Vec<f32> = ps.iter().map(|p| p[0]).collect();
        assert_eq!(firsts, vec![0.0, 1.0, 10.0, 11.0]);
        assert!(ps.iter().all(|p| p.iter().all(|&v| v == p[0])));

        let odd = MelSpectrogram::new(vec![0.0; 20 * 16], 20, 16).unwrap();
        assert!(patchify_audio(&odd, 16).is_err());
    }

    #[test]
    fn full_chain_shape_is_content_independent() {
        let fe = AudioFrontend::new(&FrontendConfig::default()).unwrap();
        for w in [sine(440.0, 160_000), Waveform::new(vec![0.0; 8000], 16000).unwrap(), sine(3000.0, 200_000)] {
            let ps = fe.patches(&w).unwrap();
            assert_eq!((ps.count(), ps.dim()), (512, 256));
            assert!(ps.data().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let w = sine(440.0, 1600);
        w.save_wav(&path).unwrap();
        let r = Waveform::load_wav(&path).unwrap();
        assert_eq!(r.samples().len(), 1600);
        for (a, b) in w.samples().iter().zip(r.samples()) {
            assert!((a - b).abs() < 1.0 / 16000.0);
        }
    }

    proptest! {
        #[test]
        fn patchify_round_trips(tb in 1usize..4, fb in 1usize..4, p in 1usize..5, seed in 0u32..1000) {
            let (t, f) = (tb * p, fb * p);
            let data: Vec<f32> = (0..t * f).map(|i| ((i as u32 ^ seed) % 97) as f32).collect();
            let m = MelSpectrogram::new(data, t, f).unwrap();
            let ps = patchify_audio(&m, p).unwrap();
            prop_assert_eq!(ps.count(), tb * fb);
            prop_assert_eq!(unpatchify_audio(&ps, p).unwrap(), m);
        }

        #[test]
        fn frame_count_is_monotone(a in 400usize..50_000, extra in 0usize..5000) {
            prop_assert!(frame_count(a + extra, 400, 160) >= frame_count(a, 400, 160));
        }
    }
}
