//! Command-line surface: `envtts <forge|train|synth|eval|sweep|plot>`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::audio::io::{read_mel, read_wav, write_mel, write_wav};
use crate::audio::{griffin_lim, stft_mel, MelConfig, MelSpectrogram, SerValue};
use crate::denoiser::{load_checkpoint, Checkpoint, DenoiserConfig};
use crate::error::{Error, Result};
use crate::eval::{char_error_rate, decode_transcript, mel_mse, mel_variance, plot_mel, ser_sweep, spearman, SweepInputs};
use crate::flow::{reconstruct, synthesize, Method, SamplerConfig, SynthesisRequest};
use crate::forge::{
    forge_triplet, load_samples, read_manifest, save_corpus, synth_sample, SynthOptions, TripletSample, DEFAULT_THRESHOLD_DB,
    MANIFEST_FILE,
};
use crate::text::CharVocab;
use crate::train::{train, TrainConfig, TrainRun};

#[derive(Parser, Debug)]
#[command(name = "envtts", version, about = "Environment-conditioned flow-matching TTS")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Mine triplets from recordings, or generate a synthetic corpus.
    Forge(ForgeArgs),
    /// Train a denoiser on a forged corpus.
    Train(TrainArgs),
    /// Synthesize one utterance.
    Synth(SynthArgs),
    /// Masked reconstruction error over a corpus.
    Eval(EvalArgs),
    /// Synthesize across SER values and measure the environment level.
    Sweep(SweepArgs),
    /// Render a mel dump as a grayscale PNG.
    Plot(PlotArgs),
}

#[derive(Args, Debug, Clone, Copy)]
struct SeedArg {
    /// Falls back to UMBRA_SEED, then 0.
    #[arg(long, env = "UMBRA_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct SamplerArgs {
    #[arg(long, default_value_t = 32)]
    steps: usize,
    #[arg(long, value_enum, default_value_t = MethodArg::Euler)]
    method: MethodArg,
    #[arg(long, default_value_t = 64)]
    gl_iters: usize,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum MethodArg {
    Euler,
    Midpoint,
}

impl SamplerArgs {
    fn config(&self, seed: u64) -> SamplerConfig {
        SamplerConfig {
            n_steps: self.steps,
            method: match self.method {
                MethodArg::Euler => Method::Euler,
                MethodArg::Midpoint => Method::Midpoint,
            },
            seed,
            griffin_lim_iters: self.gl_iters,
        }
    }
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["input", "synthetic"])))]
struct ForgeArgs {
    /// Directory of `<id>.wav` recordings, each with a `<id>.txt` transcript.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Generate this many synthetic samples with known stems instead.
    #[arg(long)]
    synthetic: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD_DB)]
    threshold_db: f64,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Preset {
    Small,
    Base,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Preset::Small)]
    preset: Preset,
    /// Defaults to the preset's value, raised to fit the longest sample.
    #[arg(long)]
    max_frames: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    frames_per_batch: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Continue from a checkpoint saved with optimizer state.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args, Debug)]
struct PromptArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Reference speech recording.
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    ref_text: String,
    /// Environment prompt recording.
    #[arg(long)]
    env: PathBuf,
    #[arg(long)]
    text: String,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    prompt: PromptArgs,
    #[arg(long)]
    ser: f64,
    /// Output WAV; the mel dump goes next to it with a `.mel` extension.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    prompt: PromptArgs,
    /// Comma-separated, strictly increasing.
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
    ser: Vec<f64>,
    /// Output directory for the report and per-SER files.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args, Debug)]
struct PlotArgs {
    #[arg(long)]
    mel: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 40)]
    n_mels: usize,
}

/// Runs the CLI and returns the process exit code.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            1
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Forge(a) => forge(a),
        Command::Train(a) => train_cmd(a),
        Command::Synth(a) => synth(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a),
        Command::Plot(a) => {
            let cfg = MelConfig {
                n_mels: a.n_mels,
                ..MelConfig::default()
            };
            plot_mel(&read_mel(&a.mel, &cfg)?, &a.out)
        }
    }
}

fn forge(a: ForgeArgs) -> Result<()> {
    let cfg = MelConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed.seed);
    let mut samples: Vec<(String, TripletSample, Option<String>)> = Vec::new();
    if let Some(n) = a.synthetic {
        let opts = SynthOptions::default();
        for i in 0..n {
            let s = synth_sample(&mut rng, &cfg, &opts)?;
            let ser = SerValue::new(rng.random_range(0.0..=1.0))?;
            samples.push((format!("syn{i:05}"), s.triplet(ser, &cfg)?, Some(s.env_class.name().to_string())));
        }
    } else if let Some(dir) = &a.input {
        let mut wavs: Vec<PathBuf> = fs::read_dir(dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        wavs.retain(|p| p.extension().is_some_and(|e| e == "wav"));
        wavs.sort();
        if wavs.is_empty() {
            return Err(Error::InvalidInput(format!("no .wav files in {}", dir.display())));
        }
        for wav in wavs {
            let id = wav.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let txt = wav.with_extension("txt");
            let transcript = fs::read_to_string(&txt)
                .map_err(|e| Error::InvalidInput(format!("{}: {e}", txt.display())))?;
            let wave = read_wav(&wav)?;
            let t = forge_triplet(&wave, transcript.trim(), &mut rng, &cfg, a.threshold_db)?;
            samples.push((id, t, None));
        }
    }
    let manifest = save_corpus(&a.out, &samples)?;
    println!("forged {} samples into {}", manifest.records.len(), a.out.join(MANIFEST_FILE).display());
    Ok(())
}

fn preset(p: Preset, mel: &MelConfig) -> DenoiserConfig {
    let base = DenoiserConfig {
        n_mels: mel.n_mels,
        ..DenoiserConfig::default()
    };
    match p {
        Preset::Base => base,
        Preset::Small => DenoiserConfig {
            model_dim: 64,
            n_blocks: 2,
            n_heads: 4,
            ff_mult: 2,
            d_text: 32,
            ser_embed_dim: 32,
            time_embed_dim: 32,
            max_frames: 128,
            ..base
        },
    }
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mel = MelConfig::default();
    let manifest = read_manifest(&a.manifest)?;
    let samples = load_samples(&manifest, &mel)?;
    let longest = samples.iter().map(TripletSample::n_frames).max().unwrap_or(1);
    let mut model = preset(a.preset, &mel);
    model.max_frames = a.max_frames.unwrap_or(model.max_frames.max(longest));
    let defaults = TrainConfig::default();
    let config = TrainConfig {
        steps: a.steps.unwrap_or(defaults.steps),
        lr: a.lr.unwrap_or(defaults.lr),
        weight_decay: a.weight_decay.unwrap_or(defaults.weight_decay),
        frames_per_batch: a.frames_per_batch.unwrap_or(defaults.frames_per_batch.max(model.max_frames)),
        checkpoint_every: a.checkpoint_every.unwrap_or(defaults.checkpoint_every),
        seed: a.seed.seed,
        ..defaults
    };
    let vocab = CharVocab::default();
    let report = train(&TrainRun {
        config,
        model,
        mel,
        vocab: &vocab,
        samples: &samples,
        out_dir: &a.out,
        resume: a.resume.as_deref(),
    })?;
    if let (Some(first), Some(last)) = (report.losses.first(), report.losses.last()) {
        println!("loss {:.5} -> {:.5}", first.1, last.1);
    }
    println!("{}", report.final_checkpoint.display());
    Ok(())
}

fn load_model(path: &Path) -> Result<(Checkpoint, CharVocab)> {
    let ckpt = load_checkpoint(path)?;
    let vocab = CharVocab::default();
    if vocab.size() != ckpt.params.config.vocab_size {
        return Err(Error::InvalidInput(format!(
            "checkpoint vocabulary has {} ids, the character table has {}",
            ckpt.params.config.vocab_size,
            vocab.size()
        )));
    }
    Ok((ckpt, vocab))
}

struct Prompts {
    ckpt: Checkpoint,
    vocab: CharVocab,
    ref_mel: MelSpectrogram,
    env_mel: MelSpectrogram,
}

fn load_prompts(p: &PromptArgs) -> Result<Prompts> {
    let (ckpt, vocab) = load_model(&p.ckpt)?;
    let ref_mel = stft_mel(&read_wav(&p.reference)?, &ckpt.mel)?;
    let env_mel = stft_mel(&read_wav(&p.env)?, &ckpt.mel)?;
    Ok(Prompts {
        ckpt,
        vocab,
        ref_mel,
        env_mel,
    })
}

fn synth(a: SynthArgs) -> Result<()> {
    let p = load_prompts(&a.prompt)?;
    let req = SynthesisRequest {
        ref_mel: &p.ref_mel,
        ref_text: &a.prompt.ref_text,
        env_prompt: &p.env_mel,
        gen_text: &a.prompt.text,
        ser: SerValue::new(a.ser)?,
    };
    let out = synthesize(&p.ckpt.params, &p.vocab, &req, &a.sampler.config(a.seed.seed))?;
    write_wav(&a.out, &out.wave)?;
    write_mel(a.out.with_extension("mel"), &out.mel)?;
    println!("{}", a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct EvalLine<'a> {
    id: &'a str,
    mse: f64,
    variance: f64,
    relative: f64,
    cer: f64,
}

fn eval(a: EvalArgs) -> Result<()> {
    let (ckpt, vocab) = load_model(&a.ckpt)?;
    let manifest = read_manifest(&a.manifest)?;
    let samples = load_samples(&manifest, &ckpt.mel)?;
    let sampler = a.sampler.config(a.seed.seed);
    let mut total = 0.0;
    for (rec, s) in manifest.records.iter().zip(&samples) {
        let k = s.transcript.chars().count();
        let ref_chars = k.div_ceil(2).min(k.saturating_sub(1)).max(1);
        let (gen, truth) = reconstruct(&ckpt.params, &vocab, s, ref_chars, &sampler)?;
        let mse = mel_mse(&gen, &truth, None)?;
        let variance = mel_variance(&truth);
        let wave = griffin_lim(&gen, sampler.griffin_lim_iters, sampler.seed)?;
        let line = EvalLine {
            id: &rec.id,
            mse,
            variance,
            relative: mse / variance.max(f64::MIN_POSITIVE),
            cer: char_error_rate(&s.transcript, &decode_transcript(&wave, k)),
        };
        total += line.relative;
        println!("{}", serde_json::to_string(&line)?);
    }
    println!("{{\"mean_relative\":{}}}", total / samples.len().max(1) as f64);
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let p = load_prompts(&a.prompt)?;
    let inputs = SweepInputs {
        ref_mel: &p.ref_mel,
        ref_text: &a.prompt.ref_text,
        env_prompt: &p.env_mel,
        gen_text: &a.prompt.text,
    };
    let id = a.prompt.ckpt.display().to_string();
    let result = ser_sweep(&p.ckpt.params, &p.vocab, &id, &inputs, &a.ser, &a.sampler.config(a.seed.seed), &a.out)?;
    let report = a.out.join("sweep.jsonl");
    result.write_report(&report)?;
    let ratios = result.ratios();
    match spearman(&a.ser, &ratios) {
        Some(rho) => println!("spearman {rho:.3}"),
        None => println!("spearman undefined"),
    }
    println!("{}", report.display());
    Ok(())
}
