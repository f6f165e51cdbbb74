//! `batkit` command line: synth, features, train, render, eval and rir.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use batkit::brnet::ModelParams;
use batkit::dsp::wav::{self, Audio, SampleFormat};
use batkit::dsp::SAMPLE_RATE;
use batkit::metrics::GroupKey;
use batkit::pipeline::{self, RunConfig, Split};
use batkit::scene::{open_corpus, simulate_rir, ArrayGeometry, RoomSpec};
use batkit::{Error, Exec};
use clap::{Parser, Subcommand};
use serde_json::Value;

#[derive(Parser)]
#[command(name = "batkit", version, about = "Binaural rendering with adjustable ambience")]
struct Cli {
    /// JSON run configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set dataset.count=20`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    /// Run every stage on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize a dataset and its manifest.
    Synth {
        #[arg(long)]
        geometry: Option<PathBuf>,
        /// Dataset directory [default: <output_dir>/dataset].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extract score features for every scene of a manifest.
    Features {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        geometry: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the network on a manifest's train and val splits.
    Train {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        geometry: Option<PathBuf>,
        /// Cached feature directory; missing files are computed on the fly.
        #[arg(long)]
        features: Option<PathBuf>,
        /// Model directory [default: <output_dir>/model].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render one recording, or every scene of a manifest split.
    Render {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        geometry: Option<PathBuf>,
        /// Ambience factors in [0, 1], comma separated.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        alpha: Vec<f64>,
        /// Single multichannel recording; `--out` is then the stereo file.
        #[arg(long, conflicts_with = "manifest")]
        mics: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score renders against oracle targets and aggregate.
    Eval {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        renders: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        alpha: Vec<f64>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Evaluate `target.wav` stems against themselves instead of renders.
        #[arg(long)]
        oracle: bool,
        /// Group keys, comma separated: alpha, geometry.
        #[arg(long, value_delimiter = ',', default_value = "alpha,geometry")]
        by: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate one room impulse response to a mono wav.
    Rir {
        /// Room size in metres: x,y,z.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        room: Vec<f64>,
        #[arg(long)]
        t60: f64,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        source: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        mic: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Failure with its exit code: 2 for usage, 1 for runtime.
struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_usage() { 2 } else { 1 },
            msg: e.to_string(),
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure { code: 2, msg: msg.into() }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Ok(v) = std::env::var("BATKIT_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => batkit::par::init_threads(n),
            _ => {
                eprintln!("error: BATKIT_THREADS must be a positive integer, got {v:?}");
                return ExitCode::from(2);
            }
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

/// Writes `value` at a dotted path, refusing keys the config does not know.
fn apply_set(root: &mut Value, known: &Value, assignment: &str) -> CliResult<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {assignment:?}")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut node = root;
    let mut schema = known;
    for (i, part) in parts.iter().enumerate() {
        schema = schema
            .get(part)
            .ok_or_else(|| usage(format!("unknown config key {key:?}")))?;
        let obj = node
            .as_object_mut()
            .ok_or_else(|| usage(format!("config key {key:?} does not name an object path")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

fn load_config(path: Option<&Path>, sets: &[String]) -> CliResult<RunConfig> {
    let mut value = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| usage(format!("cannot read config {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", p.display())))?
        }
        None => Value::Object(Default::default()),
    };
    let known = serde_json::to_value(RunConfig::default()).expect("default config serializes");
    for s in sets {
        apply_set(&mut value, &known, s)?;
    }
    let cfg: RunConfig = serde_json::from_value(value).map_err(|e| usage(format!("config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

/// A malformed geometry file is a validation error, not a runtime one.
fn load_geometry(path: &Path) -> CliResult<ArrayGeometry> {
    ArrayGeometry::load(path).map_err(|e| match e {
        Error::Format(_) => usage(e.to_string()),
        e => e.into(),
    })
}

fn group_keys(by: &[String]) -> CliResult<Vec<GroupKey>> {
    by.iter()
        .map(|k| match k.as_str() {
            "alpha" => Ok(GroupKey::Alpha),
            "geometry" => Ok(GroupKey::Geometry),
            _ => Err(usage(format!("unknown group key {k:?}, expected alpha or geometry"))),
        })
        .collect()
}

fn split_filter(s: &str) -> CliResult<Option<Split>> {
    if s == "all" {
        return Ok(None);
    }
    Ok(Some(s.parse()?))
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = load_config(cli.config.as_deref(), &cli.sets)?;
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    match cli.cmd {
        Cmd::Synth { geometry, out } => {
            let gpath = geometry.unwrap_or_else(|| cfg.geometry.clone());
            let g = load_geometry(&gpath)?;
            let corpus = open_corpus(&cfg.corpus, SAMPLE_RATE)?;
            let hrirs = pipeline::load_hrirs(&cfg.hrir)?;
            let dir = out.unwrap_or_else(|| cfg.dataset_dir());
            let gid = pipeline::geometry_id(&gpath);
            let entries =
                pipeline::synth_dataset(&cfg.dataset, corpus.as_ref(), &hrirs, &g, &gid, &dir, exec)?;
            println!("wrote {} scenes to {}", entries.len(), dir.join(pipeline::MANIFEST).display());
        }
        Cmd::Features { manifest, geometry, out } => {
            let g = load_geometry(&geometry.unwrap_or_else(|| cfg.geometry.clone()))?;
            let manifest = manifest.unwrap_or_else(|| cfg.manifest_path());
            let dir = out.unwrap_or_else(|| cfg.features_dir());
            let files = pipeline::extract_features(&manifest, &g, &cfg.score, &dir, exec)?;
            println!("wrote {} feature files to {}", files.len(), dir.display());
        }
        Cmd::Train { manifest, geometry, features, out } => {
            let g = load_geometry(&geometry.unwrap_or_else(|| cfg.geometry.clone()))?;
            let manifest = manifest.unwrap_or_else(|| cfg.manifest_path());
            let features = features.unwrap_or_else(|| cfg.features_dir());
            let dir = out.unwrap_or_else(|| cfg.model_dir());
            let mut report = |e: &batkit::brnet::EpochLog| {
                eprintln!(
                    "epoch {:>3}  train {:.5}  val {:.5}  lr {:.2e}{}",
                    e.epoch,
                    e.train_loss,
                    e.val_loss,
                    e.lr,
                    if e.lr_halved { "  (halved)" } else { "" }
                );
                Ok(())
            };
            let state = pipeline::train_from_manifest(
                &manifest,
                &g,
                Some(&features),
                &cfg.score,
                cfg.model,
                &cfg.train,
                &dir,
                exec,
                &mut report,
            )?;
            println!(
                "trained {} epochs, best val loss {:.5}, checkpoint {}",
                state.log.len(),
                state.best_val,
                dir.join("model.brn").display()
            );
        }
        Cmd::Render { checkpoint, geometry, alpha, mics, manifest, split, out } => {
            let alphas = if alpha.is_empty() { cfg.eval.alphas.clone() } else { alpha };
            for &a in &alphas {
                pipeline::check_alpha(a)?;
            }
            let g = load_geometry(&geometry.unwrap_or_else(|| cfg.geometry.clone()))?;
            let params = ModelParams::load(checkpoint.unwrap_or_else(|| cfg.checkpoint_path()))?;
            if let Some(mics) = mics {
                let [a] = alphas[..] else {
                    return Err(usage("rendering one recording takes exactly one --alpha"));
                };
                let out = out.ok_or_else(|| usage("--out is required with --mics"))?;
                pipeline::render_file(&params, &mics, &g, &cfg.score, a, &out, exec)?;
                println!("wrote {}", out.display());
            } else {
                let manifest = manifest.unwrap_or_else(|| cfg.manifest_path());
                let dir = out.unwrap_or_else(|| cfg.render_dir());
                let files = pipeline::render_manifest(
                    &params,
                    &manifest,
                    &g,
                    split_filter(&split)?,
                    &alphas,
                    &cfg.score,
                    &dir,
                    exec,
                )?;
                println!("wrote {} renders to {}", files.len(), dir.display());
            }
        }
        Cmd::Eval { manifest, renders, alpha, split, oracle, by, out } => {
            let alphas = if alpha.is_empty() { cfg.eval.alphas.clone() } else { alpha };
            for &a in &alphas {
                pipeline::check_alpha(a)?;
            }
            let keys = group_keys(&by)?;
            let manifest = manifest.unwrap_or_else(|| cfg.manifest_path());
            let split = split_filter(&split)?;
            let reports = if oracle {
                pipeline::evaluate_oracle(&manifest, split, &alphas, exec)?
            } else {
                let dir = renders.unwrap_or_else(|| cfg.render_dir());
                pipeline::evaluate_renders(&manifest, split, &alphas, &dir, exec)?
            };
            let dir = out.unwrap_or_else(|| cfg.eval_dir());
            let table = pipeline::write_eval(&reports, &keys, &dir)?;
            print!("{}", table.to_text());
        }
        Cmd::Rir { room, t60, source, mic, seed, out } => {
            let v3 = |name: &str, v: &[f64]| -> CliResult<[f64; 3]> {
                <[f64; 3]>::try_from(v).map_err(|_| usage(format!("--{name} needs three values x,y,z")))
            };
            let (mic, source) = (v3("mic", &mic)?, v3("source", &source)?);
            let spec = RoomSpec {
                dimensions: v3("room", &room)?,
                t60,
                array_center: mic,
                array_yaw: 0.0,
            };
            spec.validate()?;
            let rir = simulate_rir(&spec, source, mic, SAMPLE_RATE, seed)?;
            let audio = Audio::new(SAMPLE_RATE, vec![rir.taps])?;
            wav::write(&out, &audio, SampleFormat::Float32)?;
            println!("wrote {} ({} taps, direct delay {})", out.display(), audio.len(), rir.direct_delay);
        }
    }
    Ok(())
}
