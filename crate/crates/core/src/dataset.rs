//! JSON-lines manifests and the frontend-backed training dataset.

use std::borrow::Cow;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::encoder::Modality;
use crate::error::{Error, Result};
use crate::patches::PatchSequence;
use crate::signal::AudioFrontend;
use crate::text::{TokenSequence, Vocabulary};
use crate::training::{Example, TrainingData};
use crate::video::{load_video_patches, FrameSelection, VideoConfig};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames_dir: Option<PathBuf>,
    #[serde(default)]
    pub captions: Vec<String>,
}

impl ManifestEntry {
    fn check(&self, modality: Modality) -> Result<()> {
        if modality.uses_audio() && self.audio_path.is_none() {
            return Err(Error::InvalidInput(format!("entry `{}` has no audio_path for modality {modality}", self.id)));
        }
        if modality.uses_video() && self.frames_dir.is_none() {
            return Err(Error::InvalidInput(format!("entry `{}` has no frames_dir for modality {modality}", self.id)));
        }
        Ok(())
    }
}

/// Reads a manifest; relative media paths resolve against its directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut e: ManifestEntry = serde_json::from_str(line)
            .map_err(|err| Error::InvalidInput(format!("{}:{}: {err}", path.display(), n + 1)))?;
        if e.audio_path.is_none() && e.frames_dir.is_none() {
            return Err(Error::InvalidInput(format!("entry `{}` has neither audio_path nor frames_dir", e.id)));
        }
        for p in [&mut e.audio_path, &mut e.frames_dir].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        out.push(e);
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::file(path, e))?;
    for e in entries {
        writeln!(f, "{}", serde_json::to_string(e)?)?;
    }
    Ok(())
}

/// How often each frontend ran; lets callers assert an unused modality is
/// never touched.
#[derive(Debug, Default)]
pub struct FrontendCounters {
    pub audio: AtomicUsize,
    pub video: AtomicUsize,
}

impl FrontendCounters {
    pub fn audio_calls(&self) -> usize {
        self.audio.load(Ordering::Relaxed)
    }

    pub fn video_calls(&self) -> usize {
        self.video.load(Ordering::Relaxed)
    }
}

/// Runs the frontends a modality needs on one manifest entry.
pub struct Preprocessor {
    modality: Modality,
    n_f: usize,
    audio: AudioFrontend,
    video: VideoConfig,
    pub counters: FrontendCounters,
}

impl Preprocessor {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.frontend.video.validate(cfg.n_f)?;
        Ok(Self {
            modality: cfg.modality,
            n_f: cfg.n_f,
            audio: AudioFrontend::new(&cfg.frontend.audio)?,
            video: cfg.frontend.video.clone(),
            counters: FrontendCounters::default(),
        })
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn audio(&self, e: &ManifestEntry) -> Result<Option<PatchSequence>> {
        e.check(self.modality)?;
        if !self.modality.uses_audio() {
            return Ok(None);
        }
        self.counters.audio.fetch_add(1, Ordering::Relaxed);
        let path = e.audio_path.as_deref().expect("checked above");
        Ok(Some(self.audio.load(path)?))
    }

    pub fn video(&self, e: &ManifestEntry, mode: FrameSelection, rng: &mut ChaCha8Rng) -> Result<Option<PatchSequence>> {
        e.check(self.modality)?;
        if !self.modality.uses_video() {
            return Ok(None);
        }
        self.counters.video.fetch_add(1, Ordering::Relaxed);
        let dir = e.frames_dir.as_deref().expect("checked above");
        Ok(Some(load_video_patches(dir, self.n_f, mode, &self.video, rng)?))
    }
}

/// Every (entry, caption) pair of a manifest. Audio patches are computed once
/// per entry; video patches are recomputed per draw under random frame
/// selection and cached otherwise.
pub struct ManifestDataset {
    entries: Vec<ManifestEntry>,
    items: Vec<(usize, TokenSequence)>,
    audio: Vec<Option<PatchSequence>>,
    video: Vec<Option<PatchSequence>>,
    selection: FrameSelection,
    pre: Preprocessor,
}

impl ManifestDataset {
    pub fn new(
        entries: Vec<ManifestEntry>,
        vocab: &Vocabulary,
        cfg: &RunConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let pre = Preprocessor::new(cfg)?;
        let selection = cfg.frontend.train_frame_selection;
        let mut items = Vec::new();
        let mut audio = Vec::with_capacity(entries.len());
        let mut video = Vec::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if e.captions.is_empty() {
                return Err(Error::InvalidInput(format!("training entry `{}` has no captions", e.id)));
            }
            for c in &e.captions {
                let seq = vocab.encode(c);
                if seq.len() > cfg.decoder.max_positions {
                    return Err(Error::Config(format!(
                        "caption of `{}` needs {} positions, decoder has {}",
                        e.id,
                        seq.len(),
                        cfg.decoder.max_positions
                    )));
                }
                items.push((i, seq));
            }
            audio.push(pre.audio(e)?);
            video.push(match selection {
                FrameSelection::Center => pre.video(e, selection, rng)?,
                FrameSelection::RandomStart => None,
            });
        }
        Ok(Self {
            entries,
            items,
            audio,
            video,
            selection,
            pre,
        })
    }

    pub fn counters(&self) -> &FrontendCounters {
        &self.pre.counters
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }
}

impl TrainingData for ManifestDataset {
    fn len(&self) -> usize {
        self.items.len()
    }

    fn example(&self, index: usize, rng: &mut ChaCha8Rng) -> Result<Cow<'_, Example>> {
        let (entry, tokens) = self
            .items
            .get(index)
            .ok_or_else(|| Error::InvalidInput(format!("example {index} out of range")))?;
        let e = &self.entries[*entry];
        let video = match &self.video[*entry] {
            Some(v) => Some(v.clone()),
            None => self.pre.video(e, self.selection, rng)?,
        };
        Ok(Cow::Owned(Example {
            id: e.id.clone(),
            audio: self.audio[*entry].clone(),
            video,
            tokens: tokens.clone(),
        }))
    }
}
