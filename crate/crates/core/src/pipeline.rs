//! File-level pipeline: dataset synthesis, features, training, rendering and
//! evaluation, all driven by a JSON-lines manifest.
//!
//! Dataset layout:
//! ```text
//! <dataset>/manifest.jsonl
//! <dataset>/<scene_id>/{mics,clean,ambience,target}.wav
//! ```
//! Renders go to `<dir>/<scene_id>/alpha_<alpha>.wav`.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::brnet::{self, EpochLog, ModelConfig, ModelParams, TrainConfig, TrainItem, TrainState};
use crate::dsp::wav::{self, Audio, SampleFormat};
use crate::dsp::{bins_for, ErbFilterbank, Spectrogram, Stft, ERB_BANDS, FRAME_SIZE, HOP, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::metrics::{self, AggregateTable, GroupKey, MetricReport};
use crate::par::{self, Exec};
use crate::scene::{
    mix_scene, sample_scene, scene_seed, ArrayGeometry, BinauralPair, HrirSet, SceneRanges,
    SceneSpec, SignalKind, SignalPool, SignalSource, SphericalHead,
};
use crate::score::{extract_score, ScoreFeature, ScoreParams};

pub const MANIFEST: &str = "manifest.jsonl";
/// Held-out scenes are indexed from here so their seeds never collide with
/// training scenes, whatever the split sizes.
pub const TEST_INDEX_BASE: u64 = 1_000_000;
const HRIR_STEP_DEG: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::invalid(format!("unknown split {s:?}, expected train, val or test"))),
        }
    }
}

/// One manifest line. Wav paths are relative to the manifest directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub scene_id: String,
    pub split: Split,
    pub geometry_id: String,
    pub spec: SceneSpec,
    pub mics: String,
    pub clean: String,
    pub ambience: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    /// Total scenes, split into train, val and test.
    pub count: usize,
    pub val_count: usize,
    pub test_count: usize,
    pub seed: u64,
    pub ranges: SceneRanges,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            count: 70,
            val_count: 10,
            test_count: 10,
            seed: 0,
            ranges: SceneRanges::default(),
        }
    }
}

impl DatasetConfig {
    pub fn train_count(&self) -> usize {
        self.count.saturating_sub(self.val_count + self.test_count)
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 || self.val_count + self.test_count > self.count {
            return Err(Error::invalid(format!(
                "dataset count {} cannot hold {} val and {} test scenes",
                self.count, self.val_count, self.test_count
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub alphas: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            alphas: vec![1.0, 0.5, 0.0],
        }
    }
}

/// Everything a pipeline run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// `"synthetic"` or a directory of `speech/*.wav` and `music/*.wav`.
    pub corpus: String,
    /// `"synthetic"` or an HRIR index file.
    pub hrir: String,
    pub geometry: PathBuf,
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub score: ScoreParams,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: "synthetic".into(),
            hrir: "synthetic".into(),
            geometry: PathBuf::from("geometries/g1.json"),
            output_dir: PathBuf::from("out"),
            dataset: DatasetConfig::default(),
            score: ScoreParams::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.model.looks != self.score.look_directions {
            return Err(Error::invalid(format!(
                "model expects {} look directions but features use {}",
                self.model.looks, self.score.look_directions
            )));
        }
        if self.model.bands != ERB_BANDS {
            return Err(Error::invalid(format!("model bands must be {ERB_BANDS}")));
        }
        for &a in &self.eval.alphas {
            check_alpha(a)?;
        }
        Ok(())
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.output_dir.join("dataset")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.dataset_dir().join(MANIFEST)
    }

    pub fn features_dir(&self) -> PathBuf {
        self.output_dir.join("features")
    }

    pub fn model_dir(&self) -> PathBuf {
        self.output_dir.join("model")
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.model_dir().join("model.brn")
    }

    pub fn render_dir(&self) -> PathBuf {
        self.output_dir.join("render")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.output_dir.join("eval")
    }
}

pub fn check_alpha(a: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&a) {
        return Err(Error::invalid(format!("alpha {a} outside the valid range [0, 1]")));
    }
    Ok(())
}

pub fn load_hrirs(spec: &str) -> Result<HrirSet> {
    if spec == "synthetic" {
        return HrirSet::synthetic(HRIR_STEP_DEG, &SphericalHead::default());
    }
    HrirSet::load(spec, SAMPLE_RATE)
}

/// Geometry id used in manifests and reports: the file stem.
pub fn geometry_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "geometry".into())
}

pub fn filterbank() -> Result<ErbFilterbank> {
    ErbFilterbank::new(ERB_BANDS, bins_for(FRAME_SIZE), SAMPLE_RATE)
}

fn stft() -> Stft {
    Stft::new(FRAME_SIZE, HOP, SAMPLE_RATE).expect("default STFT parameters are valid")
}

/// Training pool and held-out pool. Every fifth signal of each kind is held
/// out; kinds with fewer than five signals are shared by both pools.
pub fn signal_pools(corpus: &dyn SignalSource) -> Result<(SignalPool, SignalPool)> {
    let split = |ids: Vec<String>| -> (Vec<String>, Vec<String>) {
        if ids.len() < 5 {
            return (ids.clone(), ids);
        }
        let (test, train): (Vec<_>, Vec<_>) = ids.into_iter().enumerate().partition(|(i, _)| i % 5 == 4);
        (
            train.into_iter().map(|x| x.1).collect(),
            test.into_iter().map(|x| x.1).collect(),
        )
    };
    let (speech_train, speech_test) = split(corpus.ids(SignalKind::Speech)?);
    let (music_train, music_test) = split(corpus.ids(SignalKind::Music)?);
    Ok((
        SignalPool {
            speech: speech_train,
            music: music_train,
        },
        SignalPool {
            speech: speech_test,
            music: music_test,
        },
    ))
}

fn write_pair(path: &Path, p: &BinauralPair) -> Result<()> {
    let audio = Audio::new(SAMPLE_RATE, vec![p.left.clone(), p.right.clone()])?;
    wav::write(path, &audio, SampleFormat::Float32)
}

pub fn read_pair(path: &Path) -> Result<BinauralPair> {
    let a = wav::read(path)?;
    if a.channel_count() != 2 || a.sample_rate != SAMPLE_RATE {
        return Err(Error::format(format!(
            "{}: expected 2 channels at {SAMPLE_RATE} Hz, got {} at {}",
            path.display(),
            a.channel_count(),
            a.sample_rate
        )));
    }
    let mut ch = a.channels.into_iter();
    Ok(BinauralPair {
        left: ch.next().expect("two channels"),
        right: ch.next().expect("two channels"),
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Scene ids and seeds per split, in manifest order.
fn scene_plan(cfg: &DatasetConfig) -> Vec<(String, Split, u64)> {
    let n_train = cfg.train_count();
    let mut plan = Vec::with_capacity(cfg.count);
    for i in 0..n_train + cfg.val_count {
        let split = if i < n_train { Split::Train } else { Split::Val };
        plan.push((format!("scene_{i:05}"), split, i as u64));
    }
    for j in 0..cfg.test_count as u64 {
        let i = TEST_INDEX_BASE + j;
        plan.push((format!("scene_{i:07}"), Split::Test, i));
    }
    plan
}

/// Synthesizes a dataset into `dir` and writes its manifest.
pub fn synth_dataset(
    cfg: &DatasetConfig,
    corpus: &dyn SignalSource,
    hrirs: &HrirSet,
    geometry: &ArrayGeometry,
    geometry_id: &str,
    dir: &Path,
    exec: Exec,
) -> Result<Vec<ManifestEntry>> {
    cfg.validate()?;
    geometry.validate()?;
    let (train_pool, test_pool) = signal_pools(corpus)?;
    create_dir(dir)?;
    let plan = scene_plan(cfg);
    let entries = par::try_map_indexed(exec, plan.len(), |k| {
        let (scene_id, split, index) = &plan[k];
        let pool = if *split == Split::Test { &test_pool } else { &train_pool };
        let spec = sample_scene(scene_seed(cfg.seed, *index), &cfg.ranges, pool)?;
        let audio = mix_scene(&spec, geometry, hrirs, corpus, SAMPLE_RATE, exec)?;
        let scene_dir = dir.join(scene_id);
        create_dir(&scene_dir)?;
        let mics = Audio::new(SAMPLE_RATE, audio.mics)?;
        wav::write(scene_dir.join("mics.wav"), &mics, SampleFormat::Float32)?;
        write_pair(&scene_dir.join("clean.wav"), &audio.clean)?;
        write_pair(&scene_dir.join("ambience.wav"), &audio.ambience)?;
        write_pair(&scene_dir.join("target.wav"), &audio.target)?;
        Ok(ManifestEntry {
            scene_id: scene_id.clone(),
            split: *split,
            geometry_id: geometry_id.to_string(),
            spec,
            mics: format!("{scene_id}/mics.wav"),
            clean: format!("{scene_id}/clean.wav"),
            ambience: format!("{scene_id}/ambience.wav"),
            target: format!("{scene_id}/target.wav"),
        })
    })?;
    write_manifest(&dir.join(MANIFEST), &entries)?;
    Ok(entries)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut text = String::new();
    for e in entries {
        text.push_str(&serde_json::to_string(e).expect("manifest entry serializes"));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let file = fs::File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound(path.display().to_string())
        } else {
            Error::io(path, e)
        }
    })?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line)
            .map_err(|e| Error::format(format!("{} line {}: {e}", path.display(), n + 1)))?;
        out.push(entry);
    }
    Ok(out)
}

/// Directory holding the manifest, against which wav paths resolve.
pub fn manifest_root(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn read_wav(root: &Path, rel: &str) -> Result<Audio> {
    let path = root.join(rel);
    if !path.exists() {
        return Err(Error::NotFound(path.display().to_string()));
    }
    wav::read(&path)
}

/// Mic channels of one scene, checked against the geometry.
pub fn read_mics(root: &Path, entry: &ManifestEntry, geometry: &ArrayGeometry) -> Result<Vec<Vec<f64>>> {
    let a = read_wav(root, &entry.mics)?;
    if a.channel_count() != geometry.mic_count() {
        return Err(Error::invalid(format!(
            "scene {}: recording has {} channels but the geometry has {} mics",
            entry.scene_id,
            a.channel_count(),
            geometry.mic_count()
        )));
    }
    if a.sample_rate != SAMPLE_RATE {
        return Err(Error::invalid(format!(
            "scene {}: sample rate {} differs from {SAMPLE_RATE}",
            entry.scene_id, a.sample_rate
        )));
    }
    Ok(a.channels)
}

pub fn feature_path(dir: &Path, scene_id: &str) -> PathBuf {
    dir.join(format!("{scene_id}.scrf"))
}

/// Writes one score feature file per manifest entry.
pub fn extract_features(
    manifest: &Path,
    geometry: &ArrayGeometry,
    score: &ScoreParams,
    out_dir: &Path,
    exec: Exec,
) -> Result<Vec<PathBuf>> {
    let entries = read_manifest(manifest)?;
    let root = manifest_root(manifest);
    let fb = filterbank()?;
    create_dir(out_dir)?;
    par::try_map_indexed(exec, entries.len(), |k| {
        let e = &entries[k];
        let mics = read_mics(&root, e, geometry)?;
        let feat = extract_score(&mics, geometry, &fb, score, SAMPLE_RATE, exec)?;
        let path = feature_path(out_dir, &e.scene_id);
        feat.save(&path)?;
        Ok(path)
    })
}

fn stereo_spectra(s: &Stft, p: &BinauralPair) -> Result<[Spectrogram; 2]> {
    Ok([s.analyze(&p.left)?, s.analyze(&p.right)?])
}

/// Training items of one split. Cached features are used when present in
/// `features_dir`, otherwise computed.
#[allow(clippy::too_many_arguments)]
pub fn load_items(
    manifest: &Path,
    split: Split,
    geometry: &ArrayGeometry,
    features_dir: Option<&Path>,
    score: &ScoreParams,
    fb: &ErbFilterbank,
    exec: Exec,
) -> Result<Vec<TrainItem>> {
    let root = manifest_root(manifest);
    let entries: Vec<_> = read_manifest(manifest)?.into_iter().filter(|e| e.split == split).collect();
    let s = stft();
    par::try_map_indexed(exec, entries.len(), |k| {
        let e = &entries[k];
        let mics = read_mics(&root, e, geometry)?;
        let cached = features_dir.map(|d| feature_path(d, &e.scene_id)).filter(|p| p.exists());
        let feature = match cached {
            Some(p) => ScoreFeature::load(p)?,
            None => extract_score(&mics, geometry, fb, score, SAMPLE_RATE, exec)?,
        };
        let clean = read_pair(&root.join(&e.clean))?;
        let ambience = read_pair(&root.join(&e.ambience))?;
        Ok(TrainItem {
            feature,
            reference: s.analyze(&mics[geometry.reference_index])?,
            clean: stereo_spectra(&s, &clean)?,
            ambience: stereo_spectra(&s, &ambience)?,
        })
    })
}

/// Trains on the manifest's train split, validating on its val split.
/// Writes `model.brn` (best validation weights), `train_state.brs` and
/// `train_log.jsonl` into `model_dir`; resumes from an existing state file.
#[allow(clippy::too_many_arguments)]
pub fn train_from_manifest(
    manifest: &Path,
    geometry: &ArrayGeometry,
    features_dir: Option<&Path>,
    score: &ScoreParams,
    model: ModelConfig,
    cfg: &TrainConfig,
    model_dir: &Path,
    exec: Exec,
    on_epoch: &mut dyn FnMut(&EpochLog) -> Result<()>,
) -> Result<TrainState> {
    let fb = filterbank()?;
    let train_items = load_items(manifest, Split::Train, geometry, features_dir, score, &fb, exec)?;
    let val_items = load_items(manifest, Split::Val, geometry, features_dir, score, &fb, exec)?;
    if train_items.is_empty() || val_items.is_empty() {
        return Err(Error::invalid(format!(
            "manifest has {} train and {} val scenes; both must be nonempty",
            train_items.len(),
            val_items.len()
        )));
    }
    create_dir(model_dir)?;
    let state_path = model_dir.join("train_state.brs");
    let state = brnet::train(
        model,
        &train_items,
        &val_items,
        &fb,
        cfg,
        Some(&state_path),
        exec,
        on_epoch,
    )?;
    state.best.save(model_dir.join("model.brn"))?;
    write_log(&model_dir.join("train_log.jsonl"), &state.log)?;
    Ok(state)
}

pub fn write_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for entry in log {
        let line = serde_json::to_string(entry).expect("epoch log serializes");
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn alpha_file(alpha: f64) -> String {
    format!("alpha_{alpha}.wav")
}

pub fn render_path(dir: &Path, scene_id: &str, alpha: f64) -> PathBuf {
    dir.join(scene_id).join(alpha_file(alpha))
}

/// Renders one recording file to a stereo file.
#[allow(clippy::too_many_arguments)]
pub fn render_file(
    params: &ModelParams,
    mics_path: &Path,
    geometry: &ArrayGeometry,
    score: &ScoreParams,
    alpha: f64,
    out: &Path,
    exec: Exec,
) -> Result<BinauralPair> {
    check_alpha(alpha)?;
    if !mics_path.exists() {
        return Err(Error::NotFound(mics_path.display().to_string()));
    }
    let a = wav::read(mics_path)?;
    if a.sample_rate != SAMPLE_RATE {
        return Err(Error::invalid(format!(
            "{}: sample rate {} differs from {SAMPLE_RATE}",
            mics_path.display(),
            a.sample_rate
        )));
    }
    let fb = filterbank()?;
    let pair = brnet::render(params, &a.channels, geometry, &fb, score, alpha, SAMPLE_RATE, exec)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_pair(out, &pair)?;
    Ok(pair)
}

/// Renders every scene of `split` (all scenes if `None`) at each alpha.
#[allow(clippy::too_many_arguments)]
pub fn render_manifest(
    params: &ModelParams,
    manifest: &Path,
    geometry: &ArrayGeometry,
    split: Option<Split>,
    alphas: &[f64],
    score: &ScoreParams,
    out_dir: &Path,
    exec: Exec,
) -> Result<Vec<PathBuf>> {
    for &a in alphas {
        check_alpha(a)?;
    }
    let root = manifest_root(manifest);
    let entries: Vec<_> = read_manifest(manifest)?
        .into_iter()
        .filter(|e| split.is_none_or(|s| e.split == s))
        .collect();
    let fb = filterbank()?;
    let jobs: Vec<(usize, f64)> = (0..entries.len())
        .flat_map(|i| alphas.iter().map(move |&a| (i, a)))
        .collect();
    par::try_map_indexed(exec, jobs.len(), |k| {
        let (i, alpha) = jobs[k];
        let e = &entries[i];
        let mics = read_mics(&root, e, geometry)?;
        let pair = brnet::render(params, &mics, geometry, &fb, score, alpha, SAMPLE_RATE, exec)?;
        let path = render_path(out_dir, &e.scene_id, alpha);
        create_dir(path.parent().expect("render path has a scene directory"))?;
        write_pair(&path, &pair)?;
        Ok(path)
    })
}

fn selected(manifest: &Path, split: Option<Split>) -> Result<Vec<ManifestEntry>> {
    let entries: Vec<_> = read_manifest(manifest)?
        .into_iter()
        .filter(|e| split.is_none_or(|s| e.split == s))
        .collect();
    if entries.is_empty() {
        return Err(Error::invalid("no scenes selected for evaluation"));
    }
    Ok(entries)
}

/// Scores every (scene, alpha) pair; `estimate` sees the scene, alpha and
/// the blended oracle target.
fn score_pairs(
    manifest: &Path,
    entries: &[ManifestEntry],
    alphas: &[f64],
    exec: Exec,
    estimate: impl Fn(&ManifestEntry, f64, &BinauralPair) -> Result<BinauralPair> + Sync + Send,
) -> Result<Vec<MetricReport>> {
    for &a in alphas {
        check_alpha(a)?;
    }
    let root = manifest_root(manifest);
    let jobs: Vec<(usize, f64)> = (0..entries.len())
        .flat_map(|i| alphas.iter().map(move |&a| (i, a)))
        .collect();
    par::try_map_indexed(exec, jobs.len(), |k| {
        let (i, alpha) = jobs[k];
        let e = &entries[i];
        let clean = read_pair(&root.join(&e.clean))?;
        let ambience = read_pair(&root.join(&e.ambience))?;
        let reference = clean.blend(&ambience, alpha);
        let est = estimate(e, alpha, &reference)?;
        metrics::evaluate(&reference, &est, &e.scene_id, alpha, Some(&e.geometry_id))
    })
}

/// Metrics of rendered scenes against the blended oracle targets.
pub fn evaluate_renders(
    manifest: &Path,
    split: Option<Split>,
    alphas: &[f64],
    render_dir: &Path,
    exec: Exec,
) -> Result<Vec<MetricReport>> {
    let entries = selected(manifest, split)?;
    let missing: Vec<PathBuf> = entries
        .iter()
        .flat_map(|e| alphas.iter().map(|&a| render_path(render_dir, &e.scene_id, a)))
        .filter(|p| !p.exists())
        .collect();
    if !missing.is_empty() {
        let shown: Vec<_> = missing.iter().take(3).map(|p| p.display().to_string()).collect();
        let msg = format!(
            "{} of {} expected renders missing (layout <dir>/<scene_id>/alpha_<alpha>.wav), e.g. {}",
            missing.len(),
            entries.len() * alphas.len(),
            shown.join(", ")
        );
        return Err(Error::io(render_dir, std::io::Error::new(std::io::ErrorKind::NotFound, msg)));
    }
    score_pairs(manifest, &entries, alphas, exec, |e, alpha, _| {
        read_pair(&render_path(render_dir, &e.scene_id, alpha))
    })
}

/// Oracle targets scored against themselves; a sanity baseline.
pub fn evaluate_oracle(
    manifest: &Path,
    split: Option<Split>,
    alphas: &[f64],
    exec: Exec,
) -> Result<Vec<MetricReport>> {
    let entries = selected(manifest, split)?;
    score_pairs(manifest, &entries, alphas, exec, |_, _, reference| Ok(reference.clone()))
}

/// Writes `reports.jsonl`, `aggregate.json` and `aggregate.txt`.
pub fn write_eval(reports: &[MetricReport], keys: &[GroupKey], out_dir: &Path) -> Result<AggregateTable> {
    create_dir(out_dir)?;
    let mut lines = String::new();
    for r in reports {
        lines.push_str(&serde_json::to_string(r).expect("report serializes"));
        lines.push('\n');
    }
    let write = |name: &str, text: &str| {
        let p = out_dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write("reports.jsonl", &lines)?;
    let table = metrics::aggregate(reports, keys)?;
    write("aggregate.json", &serde_json::to_string_pretty(&table).expect("table serializes"))?;
    write("aggregate.txt", &table.to_text())?;
    Ok(table)
}
