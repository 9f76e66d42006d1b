//! Command implementations behind the `avcap` executable.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::{read_manifest, ManifestDataset, ManifestEntry, Preprocessor};
use crate::encoder::Modality;
use crate::error::{Error, Result};
use crate::gradcheck::{run_gradcheck, GradcheckReport};
use crate::inference::beam_search;
use crate::metrics::{evaluate_corpus, EvalPair, EvalReport};
use crate::model::{AvCap, AvInput};
use crate::params::ModelParams;
use crate::text::Vocabulary;
use crate::training::{prepare_params, train_loop, StepLog, TrainReport};
use crate::video::FrameSelection;

pub const CHECKPOINT_FILE: &str = "model.avcp";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const CONFIG_FILE: &str = "config.json";
pub const LOSS_FILE: &str = "loss.csv";
pub const RUN_FILE: &str = "run.json";

pub fn cmd_make_synth(out_dir: &Path, n: usize, seed: u64) -> Result<PathBuf> {
    crate::synth::make_synth(out_dir, n, seed)
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    pub config: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub modality: Option<Modality>,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub out_dir: PathBuf,
    pub report: TrainReport,
    pub vocab_size: usize,
    pub audio_frontend_calls: usize,
    pub video_frontend_calls: usize,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    config: &'a RunConfig,
    seed: u64,
    final_step: usize,
    final_loss: Option<f64>,
    vocab_size: usize,
}

/// Resolves options against the config file and trains.
pub fn cmd_train(opts: &TrainOptions, on_step: impl FnMut(&StepLog)) -> Result<TrainOutcome> {
    let mut cfg = match &opts.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::desk(),
    };
    if let Some(m) = opts.modality {
        cfg.modality = m;
    }
    if let Some(s) = opts.steps {
        cfg.train.total_steps = s;
        cfg.train.warmup_steps = cfg.train.warmup_steps.min(s.saturating_sub(1));
    }
    if let Some(seed) = opts.seed {
        cfg.train.seed = seed;
    }
    let manifest = opts
        .manifest
        .clone()
        .or_else(|| cfg.paths.manifest.clone())
        .ok_or_else(|| Error::Config("no training manifest given".into()))?;
    let out_dir = opts
        .out_dir
        .clone()
        .or_else(|| cfg.paths.out_dir.clone())
        .ok_or_else(|| Error::Config("no output directory given".into()))?;
    cfg.validate()?;
    train_with_config(&cfg, &manifest, &out_dir, on_step)
}

/// Builds the vocabulary, trains from `manifest` and writes checkpoint,
/// vocabulary, effective config, loss log and run manifest to `out_dir`.
pub fn train_with_config(
    cfg: &RunConfig,
    manifest: &Path,
    out_dir: &Path,
    on_step: impl FnMut(&StepLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if !manifest.is_file() {
        return Err(Error::Config(format!("manifest {} not found", manifest.display())));
    }
    let entries = read_manifest(manifest)?;
    if entries.is_empty() {
        return Err(Error::InvalidInput(format!("manifest {} is empty", manifest.display())));
    }
    let captions: Vec<&str> = entries.iter().flat_map(|e| e.captions.iter().map(String::as_str)).collect();
    let vocab = Vocabulary::build(&captions, cfg.vocab_min_count)?;
    let mut effective = cfg.clone();
    effective.decoder.vocab_size = vocab.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let data = ManifestDataset::new(entries, &vocab, &effective, &mut rng)?;
    let mut model = AvCap::<f32>::init(effective.model_config(vocab.len()), cfg.train.seed)?;
    prepare_params(model.params_mut(), &cfg.train.policy)?;
    let report = train_loop(&mut model, &data, &cfg.train, on_step)?;

    fs::create_dir_all(out_dir).map_err(|e| Error::file(out_dir, e))?;
    model.params().save(&out_dir.join(CHECKPOINT_FILE))?;
    vocab.save(&out_dir.join(VOCAB_FILE))?;
    effective.save(&out_dir.join(CONFIG_FILE))?;
    let loss_path = out_dir.join(LOSS_FILE);
    fs::write(&loss_path, report.loss_csv()).map_err(|e| Error::file(&loss_path, e))?;
    let run = RunManifest {
        config: &effective,
        seed: cfg.train.seed,
        final_step: report.final_step,
        final_loss: report.final_loss(),
        vocab_size: vocab.len(),
    };
    let run_path = out_dir.join(RUN_FILE);
    fs::write(&run_path, serde_json::to_string_pretty(&run)? + "\n").map_err(|e| Error::file(&run_path, e))?;
    Ok(TrainOutcome {
        out_dir: out_dir.to_path_buf(),
        report,
        vocab_size: vocab.len(),
        audio_frontend_calls: data.counters().audio_calls(),
        video_frontend_calls: data.counters().video_calls(),
    })
}

/// A trained model with its configuration and vocabulary.
pub struct Trained {
    pub config: RunConfig,
    pub vocab: Vocabulary,
    pub model: AvCap<f32>,
}

/// Loads a checkpoint; config and vocabulary default to the files written
/// next to it by training.
pub fn load_trained(checkpoint: &Path, config: Option<&Path>, vocab: Option<&Path>) -> Result<Trained> {
    let dir = checkpoint.parent().unwrap_or(Path::new("."));
    let config_path = config.map(Path::to_path_buf).unwrap_or_else(|| dir.join(CONFIG_FILE));
    let vocab_path = vocab.map(Path::to_path_buf).unwrap_or_else(|| dir.join(VOCAB_FILE));
    let cfg = RunConfig::load(&config_path)?;
    let vocab = Vocabulary::load(&vocab_path)?;
    let params = ModelParams::<f32>::load(checkpoint)?;
    let model = AvCap::from_parts(cfg.model_config(vocab.len()), params)?;
    Ok(Trained {
        config: cfg,
        vocab,
        model,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionLine {
    pub id: String,
    pub caption: String,
    pub score: f64,
}

/// Beam-search captions for manifest entries (centre frame selection).
pub fn caption_entries(t: &Trained, entries: &[ManifestEntry], beam: usize, alpha: f64, max_len: usize) -> Result<Vec<CaptionLine>> {
    let pre = Preprocessor::new(&t.config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let max_len = max_len.min(t.config.decoder.max_positions);
    entries
        .iter()
        .map(|e| {
            let audio = pre.audio(e)?;
            let video = pre.video(e, FrameSelection::Center, &mut rng)?;
            let feature = t.model.encode(&AvInput {
                audio: audio.as_ref(),
                video: video.as_ref(),
            })?;
            let dec = t.model.incremental(&feature)?;
            let best = beam_search(&dec, beam, alpha, max_len)?
                .into_iter()
                .next()
                .ok_or_else(|| Error::InvalidInput("beam search returned nothing".into()))?;
            Ok(CaptionLine {
                id: e.id.clone(),
                caption: t.vocab.decode(best.caption_ids())?,
                score: best.score,
            })
        })
        .collect()
}

#[derive(Clone, Debug, Default)]
pub struct CaptionOptions {
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
    pub config: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub beam: Option<usize>,
    pub alpha: Option<f64>,
    pub max_len: Option<usize>,
}

pub fn captions_jsonl(lines: &[CaptionLine]) -> Result<String> {
    let mut s = String::new();
    for l in lines {
        s.push_str(&serde_json::to_string(l)?);
        s.push('\n');
    }
    Ok(s)
}

/// Captions every manifest entry; writes JSON lines to `out` when given.
pub fn cmd_caption(opts: &CaptionOptions) -> Result<Vec<CaptionLine>> {
    let trained = load_trained(&opts.checkpoint, opts.config.as_deref(), opts.vocab.as_deref())?;
    if !opts.manifest.is_file() {
        return Err(Error::Config(format!("manifest {} not found", opts.manifest.display())));
    }
    let entries = read_manifest(&opts.manifest)?;
    let inf = &trained.config.inference;
    let lines = caption_entries(
        &trained,
        &entries,
        opts.beam.unwrap_or(inf.beam),
        opts.alpha.unwrap_or(inf.alpha),
        opts.max_len.unwrap_or(inf.max_len),
    )?;
    if let Some(out) = &opts.out {
        let text = captions_jsonl(&lines)?;
        fs::File::create(out)
            .and_then(|mut f| f.write_all(text.as_bytes()))
            .map_err(|e| Error::file(out, e))?;
    }
    Ok(lines)
}

#[derive(Deserialize)]
struct CandidateLine {
    id: String,
    caption: String,
}

#[derive(Deserialize)]
struct ReferenceLine {
    id: String,
    captions: Vec<String>,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| Error::InvalidInput(format!("{}:{}: {e}", path.display(), n + 1))))
        .collect()
}

/// Pairs candidate and reference files by id.
pub fn eval_pairs(candidates: &Path, references: &Path) -> Result<Vec<EvalPair>> {
    let cands: Vec<CandidateLine> = read_jsonl(candidates)?;
    let refs: Vec<ReferenceLine> = read_jsonl(references)?;
    let mut ref_map: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for r in refs {
        if ref_map.insert(r.id.clone(), r.captions).is_some() {
            return Err(Error::InvalidInput(format!("duplicate reference id `{}`", r.id)));
        }
    }
    let cand_ids: BTreeSet<&str> = cands.iter().map(|c| c.id.as_str()).collect();
    if cand_ids.len() != cands.len() {
        return Err(Error::InvalidInput("duplicate candidate ids".into()));
    }
    let missing_refs: Vec<&str> = cand_ids.iter().copied().filter(|id| !ref_map.contains_key(*id)).collect();
    let missing_cands: Vec<&str> = ref_map.keys().map(String::as_str).filter(|id| !cand_ids.contains(id)).collect();
    if !missing_refs.is_empty() || !missing_cands.is_empty() {
        return Err(Error::InvalidInput(format!(
            "id mismatch: without references [{}]; without candidates [{}]",
            missing_refs.join(", "),
            missing_cands.join(", ")
        )));
    }
    cands
        .iter()
        .map(|c| EvalPair::from_text(c.id.clone(), &c.caption, &ref_map[&c.id]))
        .collect()
}

pub fn cmd_eval(candidates: &Path, references: &Path, spice: Option<f64>) -> Result<EvalReport> {
    evaluate_corpus(&eval_pairs(candidates, references)?, spice)
}

pub fn cmd_gradcheck(config: Option<&Path>, seed: Option<u64>) -> Result<GradcheckReport> {
    let mut cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::desk(),
    };
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    run_gradcheck(&cfg, None)
}
