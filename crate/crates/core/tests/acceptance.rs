//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits nonzero if any fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use envtts::audio::{mix_at_ser, snr_to_ser, MelConfig, SerValue, Waveform};
use envtts::denoiser::{
    cond_vector, denoise_forward, load_checkpoint, loss_and_gradients, save_checkpoint, DenoiserConfig, DenoiserParams,
};
use envtts::eval::{mel_mse, mel_variance, ser_sweep, spearman, SweepInputs};
use envtts::flow::{
    cfm_loss, flow_point, integrate, reconstruct, standard_normal, synthesize, Method, SamplerConfig, SynthesisRequest,
    TemporalMask, TrainingDraw,
};
use envtts::forge::{energy_vad, env_fidelity, forge_stems, synth_sample, SynthOptions, SynthSample, TripletSample, DEFAULT_THRESHOLD_DB};
use envtts::nn::Params;
use envtts::text::{embed_text, estimate_target_length, extend_with_filler, tokenize, CharVocab};
use envtts::train::{smoothed, train, TrainConfig, TrainRun};
use ndarray::Array2;
use proptest::prelude::*;
use proptest::test_runner::{Config as PtConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Tolerances.
const GRAD_MAX_REL: f64 = 1e-4;
const GRAD_STEP: f64 = 1e-3;
const GRAD_BUDGET: Duration = Duration::from_secs(120);
const EULER_SLOPE: (f64, f64) = (0.85, 1.15);
const MIDPOINT_SLOPE: (f64, f64) = (1.8, 2.2);
const SNR_TOL_DB: f64 = 0.05;
const LOSS_RATIO_MAX: f64 = 0.10;
const RECON_REL_MAX: f64 = 0.05;
const OVERFIT_STEPS: usize = 3000;
const OVERFIT_BUDGET: Duration = Duration::from_secs(15 * 60);
const LOSS_WINDOW: usize = 100;
const SWEEP_SERS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
const SWEEP_SEEDS: u64 = 10;
const SWEEP_MIN_MONOTONE: usize = 8;
const FORGE_MIXTURES: u64 = 100;
const FORGE_MEDIAN_R: f64 = 0.8;
const VAD_MIN_PR: f64 = 0.95;
const PROPERTY_CASES: u32 = 1000;

fn property_config() -> PtConfig {
    PtConfig {
        cases: PROPERTY_CASES,
        failure_persistence: None,
        ..PtConfig::default()
    }
}

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn randomized(cfg: DenoiserConfig, seed: u64) -> DenoiserParams {
    let mut p = DenoiserParams::init(&mut rng(seed), cfg).unwrap();
    let mut r = rng(seed + 1);
    for (_, mut t) in p.tensors_mut() {
        t.mapv_inplace(|v| v + 0.15 * r.random_range(-1.0..1.0));
    }
    p
}

fn grad_draw(cfg: &DenoiserConfig, n: usize, seed: u64, t: f64, ser: f64, span: (usize, usize)) -> TrainingDraw {
    let mut r = rng(seed);
    let vocab = CharVocab::default();
    let speech = standard_normal(&mut r, cfg.n_mels, n);
    let env = standard_normal(&mut r, cfg.n_mels, n);
    let mask = TemporalMask::span(n, span.0, span.1).unwrap();
    TrainingDraw {
        x_t: standard_normal(&mut r, cfg.n_mels, n),
        speech_ctx: mask.unmasked_part(&speech).unwrap(),
        env_ctx: mask.unmasked_part(&env).unwrap(),
        tokens: extend_with_filler(&tokenize("hello", &vocab).unwrap(), n, &vocab).unwrap(),
        t,
        ser: SerValue::new(ser).unwrap(),
        mask,
        target: standard_normal(&mut r, cfg.n_mels, n),
    }
}

/// Relative error per tensor is `|a - n| / max(|a|, |n|)` over the sampled
/// entries, with a 1e-6 floor for tensors whose gradient is identically zero.
fn gradient_correctness() -> Check {
    let start = Instant::now();
    let cfg = DenoiserConfig {
        n_mels: 8,
        model_dim: 32,
        n_blocks: 2,
        ..DenoiserConfig::tiny()
    };
    let params = randomized(cfg, 10);
    let batch = vec![grad_draw(&cfg, 16, 11, 0.37, 0.6, (4, 9)), grad_draw(&cfg, 16, 12, 0.81, 0.2, (0, 16))];
    let (_, grad) = loss_and_gradients(&params, &batch).map_err(|e| e.to_string())?;
    let analytic: Vec<(String, Vec<f64>)> = grad
        .tensors()
        .into_iter()
        .map(|(n, t)| (n, t.iter().copied().collect()))
        .collect();
    let mut probe = params.clone();
    let mut worst = (0.0f64, String::new());
    for (ti, (name, a)) in analytic.iter().enumerate() {
        let stride = a.len().div_ceil(64).max(1);
        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        for k in (0..a.len()).step_by(stride) {
            let set = |p: &mut DenoiserParams, v: f64| {
                let mut views = p.tensors_mut();
                let slot = views[ti].1.iter_mut().nth(k).unwrap();
                let old = *slot;
                *slot = v;
                old
            };
            let orig = set(&mut probe, 0.0);
            set(&mut probe, orig + GRAD_STEP);
            let lp = cfm_loss(&probe, &batch).unwrap();
            set(&mut probe, orig - GRAD_STEP);
            let lm = cfm_loss(&probe, &batch).unwrap();
            set(&mut probe, orig);
            let numeric = (lp - lm) / (2.0 * GRAD_STEP);
            diff += (a[k] - numeric).powi(2);
            na += a[k] * a[k];
            nn += numeric * numeric;
        }
        let rel = diff.sqrt() / na.sqrt().max(nn.sqrt()).max(1e-6);
        if rel > worst.0 {
            worst = (rel, name.clone());
        }
    }
    let elapsed = start.elapsed();
    ensure(
        worst.0 <= GRAD_MAX_REL && elapsed <= GRAD_BUDGET,
        format!(
            "{} tensors, worst relative error {:.2e} ({}), {:.1}s",
            analytic.len(),
            worst.0,
            worst.1,
            elapsed.as_secs_f64()
        ),
    )
}

fn adaln_transparency() -> Check {
    let cfg = DenoiserConfig::tiny();
    let p = DenoiserParams::init(&mut rng(0), cfg).unwrap();
    let vocab = CharVocab::default();
    let n = 12;
    let mut r = rng(1);
    let x = standard_normal(&mut r, cfg.n_mels, n);
    let speech = standard_normal(&mut r, cfg.n_mels, n);
    let env = standard_normal(&mut r, cfg.n_mels, n);
    let tokens = extend_with_filler(&tokenize("abc", &vocab).unwrap(), n, &vocab).unwrap();
    let text = embed_text(&tokens, &p.text).unwrap();
    let outs: Vec<Array2<f64>> = [(0.0, 0.0), (0.5, 0.3), (1.0, 1.0)]
        .iter()
        .map(|&(t, s)| {
            let c = cond_vector(t, SerValue::new(s).unwrap(), &p).unwrap();
            denoise_forward(&x, &speech, &env, text.view(), &c, &p).unwrap()
        })
        .collect();
    let bits = |m: &Array2<f64>| m.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let same = outs.iter().all(|o| bits(o) == bits(&outs[0]));
    ensure(same, format!("3 conditioning points, bit-identical: {same}"))
}

fn solver_order() -> Check {
    let scalar = |method, n| {
        let cfg = SamplerConfig {
            n_steps: n,
            method,
            ..Default::default()
        };
        integrate(|x, _| Ok(x.clone()), &Array2::from_elem((1, 1), 1.0), &cfg).unwrap()[[0, 0]]
    };
    let slope = |method| {
        let ns = [2usize, 4, 8, 16, 32, 64];
        let pts: Vec<(f64, f64)> = ns
            .iter()
            .map(|&n| ((n as f64).ln(), (scalar(method, n) - 1f64.exp()).abs().ln()))
            .collect();
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
        let num: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let den: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        -num / den
    };
    let (e, m) = (slope(Method::Euler), slope(Method::Midpoint));
    let e2 = scalar(Method::Euler, 2);
    ensure(
        (EULER_SLOPE.0..=EULER_SLOPE.1).contains(&e) && (MIDPOINT_SLOPE.0..=MIDPOINT_SLOPE.1).contains(&m) && e2 == 2.25,
        format!("euler slope {e:.3}, midpoint slope {m:.3}, euler n=2 {e2}"),
    )
}

fn ot_identities() -> Check {
    let mut runner = TestRunner::new(property_config());
    let strat = (1usize..6, 1usize..10, any::<u64>());
    let res = runner.run(&strat, |(f, n, seed)| {
        let mut r = rng(seed);
        let x0 = standard_normal(&mut r, f, n).mapv(|v| v * 3.0);
        let x1 = standard_normal(&mut r, f, n).mapv(|v| v * 3.0);
        let p0 = flow_point(&x0, &x1, 0.0).unwrap();
        let p1 = flow_point(&x0, &x1, 1.0).unwrap();
        let t = r.random_range(0.0..=1.0);
        let pt = flow_point(&x0, &x1, t).unwrap();
        prop_assert_eq!(&p0.x_t, &x0);
        prop_assert_eq!(&p1.x_t, &x1);
        prop_assert_eq!(&pt.target, &(&x1 - &x0));
        Ok(())
    });
    match res {
        Ok(()) => Ok(format!("{PROPERTY_CASES} random cases exact")),
        Err(e) => Err(e.to_string()),
    }
}

fn ser_mapping() -> Check {
    let ends = snr_to_ser(-5.0).value() == 0.0 && snr_to_ser(20.0).value() == 1.0;
    let mut r = rng(3);
    let speech: Vec<f64> = (0..16000)
        .map(|i| 0.3 * (i as f64 * 0.05).sin() + 0.05 * r.random_range(-1.0..1.0))
        .collect();
    let env: Vec<f64> = (0..7000).map(|_| r.random_range(-1.0..1.0)).collect();
    let speech = Waveform::new(speech, 16000).unwrap();
    let env = Waveform::new(env, 16000).unwrap();
    let mut worst = 0.0f64;
    for ser in SWEEP_SERS {
        let mix = mix_at_ser(&speech, &env, SerValue::new(ser).unwrap()).unwrap();
        let p_s = speech.power();
        let p_e = mix
            .wave
            .samples()
            .iter()
            .zip(speech.samples())
            .map(|(m, s)| (m / mix.peak_scale - s).powi(2))
            .sum::<f64>()
            / speech.len() as f64;
        let snr = 10.0 * (p_s / p_e).log10();
        worst = worst.max((snr - (25.0 * ser - 5.0)).abs());
    }
    ensure(
        ends && worst <= SNR_TOL_DB,
        format!("endpoints exact: {ends}, worst SNR deviation {worst:.2e} dB"),
    )
}

struct Overfit {
    pairs: Vec<SynthSample>,
    samples: Vec<TripletSample>,
    params: DenoiserParams,
    losses: Vec<f64>,
    elapsed: Duration,
}

fn overfit_model(dir: &Path) -> Overfit {
    let cfg = MelConfig::default();
    let opts = SynthOptions {
        min_chars: 3,
        max_chars: 4,
        ..Default::default()
    };
    let pairs: Vec<SynthSample> = (0..2)
        .map(|i| synth_sample(&mut rng(100 + i), &cfg, &opts).unwrap())
        .collect();
    // Two stem pairs at four SER levels each; the pairs interleave so eight
    // distinct levels are seen.
    let mut samples = Vec::new();
    for (pi, p) in pairs.iter().enumerate() {
        for q in 0..4 {
            let ser = (2 * q + pi) as f64 / 7.0;
            samples.push(p.triplet(SerValue::new(ser).unwrap(), &cfg).unwrap());
        }
    }
    let model = DenoiserConfig {
        model_dim: 64,
        n_blocks: 2,
        n_heads: 4,
        ff_mult: 2,
        d_text: 32,
        n_mels: cfg.n_mels,
        max_frames: 128,
        ser_embed_dim: 32,
        time_embed_dim: 32,
        ..DenoiserConfig::default()
    };
    let vocab = CharVocab::default();
    let start = Instant::now();
    let report = train(&TrainRun {
        config: TrainConfig {
            steps: OVERFIT_STEPS,
            lr: 1e-3,
            weight_decay: 0.0,
            frames_per_batch: 1024,
            checkpoint_every: OVERFIT_STEPS,
            seed: 1,
            ..Default::default()
        },
        model,
        mel: cfg,
        vocab: &vocab,
        samples: &samples,
        out_dir: dir,
        resume: None,
    })
    .unwrap();
    let elapsed = start.elapsed();
    Overfit {
        pairs,
        samples,
        params: load_checkpoint(&report.final_checkpoint).unwrap().params,
        losses: report.losses.iter().map(|l| l.1).collect(),
        elapsed,
    }
}

fn overfit_convergence(o: &Overfit) -> Check {
    let sm = smoothed(&o.losses, LOSS_WINDOW);
    let initial = sm[LOSS_WINDOW - 1];
    let last = *sm.last().unwrap();
    let vocab = CharVocab::default();
    let sampler = SamplerConfig::default();
    let mut worst = 0.0f64;
    for s in &o.samples {
        let k = s.transcript.chars().count();
        let (generated, truth) = reconstruct(&o.params, &vocab, s, k.div_ceil(2), &sampler).map_err(|e| e.to_string())?;
        let rel = mel_mse(&generated, &truth, None).unwrap() / mel_variance(&truth);
        worst = worst.max(rel);
    }
    let ratio = last / initial;
    ensure(
        ratio <= LOSS_RATIO_MAX && worst <= RECON_REL_MAX && o.elapsed <= OVERFIT_BUDGET,
        format!(
            "{OVERFIT_STEPS} steps in {:.0}s, smoothed loss {initial:.4} -> {last:.4} (ratio {ratio:.3}), worst reconstruction mse/var {worst:.4} over {} samples",
            o.elapsed.as_secs_f64(),
            o.samples.len()
        ),
    )
}

fn ser_monotonicity(o: &Overfit, dir: &Path) -> Check {
    let vocab = CharVocab::default();
    let pair = &o.pairs[0];
    let sample = &o.samples[0];
    let chars: Vec<char> = pair.transcript.chars().collect();
    let j = chars.len().div_ceil(2);
    let n_ref = sample.n_frames() * j / chars.len();
    let ref_mel = sample.speech_mel.frames(0, n_ref).unwrap();
    let env = sample.env_mel.frames(0, n_ref).unwrap();
    let ref_text: String = chars[..j].iter().collect();
    let gen_text: String = chars[j..].iter().collect();
    let inputs = SweepInputs {
        ref_mel: &ref_mel,
        ref_text: &ref_text,
        env_prompt: &env,
        gen_text: &gen_text,
    };
    let mut monotone = 0;
    let mut rhos = Vec::new();
    for seed in 0..SWEEP_SEEDS {
        let sampler = SamplerConfig {
            seed,
            ..Default::default()
        };
        let res = ser_sweep(&o.params, &vocab, "overfit", &inputs, &SWEEP_SERS, &sampler, &dir.join(format!("sweep{seed}")))
            .map_err(|e| e.to_string())?;
        let rho = spearman(&SWEEP_SERS, &res.ratios()).unwrap_or(0.0);
        if rho == -1.0 {
            monotone += 1;
        }
        rhos.push(format!("{rho:.1}"));
    }
    ensure(
        monotone >= SWEEP_MIN_MONOTONE,
        format!("{monotone}/{SWEEP_SEEDS} seeds with rho = -1 (rho per seed: {})", rhos.join(" ")),
    )
}

fn forge_fidelity() -> Check {
    let cfg = MelConfig::default();
    let opts = SynthOptions {
        lead_frames: 25,
        trail_frames: 25,
        ..Default::default()
    };
    let mut rs = Vec::new();
    let mut per_strategy: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut picker = rng(7);
    for seed in 0..FORGE_MIXTURES {
        let s = synth_sample(&mut rng(1000 + seed), &cfg, &opts).unwrap();
        let ser = picker.random_range(0.0..=1.0);
        let mix = mix_at_ser(&s.speech, &s.env, SerValue::new(ser).unwrap()).unwrap();
        let stems = forge_stems(&mix.wave, &mut picker, &cfg, DEFAULT_THRESHOLD_DB).map_err(|e| e.to_string())?;
        let r = env_fidelity(&stems, &s.env, &cfg).unwrap_or(0.0);
        rs.push(r);
        per_strategy.entry(format!("{:?}", stems.strategy)).or_default().push(r);
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        let h = v.len() / 2;
        if v.len().is_multiple_of(2) { (v[h - 1] + v[h]) / 2.0 } else { v[h] }
    };
    let overall = median(&mut rs);
    let breakdown: Vec<String> = per_strategy
        .iter_mut()
        .map(|(k, v)| format!("{k} n={} median {:.3}", v.len(), median(v)))
        .collect();

    // Tone bursts at several levels over a faint noise floor. A frame is
    // truly speech when its window overlaps a burst.
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    let mut r = rng(9);
    for (b, amp) in [0.05, 0.2, 0.5, 0.9].into_iter().enumerate() {
        let (on, off) = (3200 + 800 * b, 4800 - 400 * b);
        let n_bursts = 5;
        let len = off + n_bursts * (on + off);
        let mut x: Vec<f64> = (0..len).map(|_| 1e-4 * r.random_range(-1.0..1.0)).collect();
        let mut ranges = Vec::new();
        for k in 0..n_bursts {
            let start = off + k * (on + off);
            for (i, v) in x.iter_mut().enumerate().skip(start).take(on) {
                *v += amp * (2.0 * std::f64::consts::PI * 700.0 * i as f64 / 16000.0).sin();
            }
            ranges.push(start..start + on);
        }
        let labels = energy_vad(&Waveform::new(x, 16000).unwrap(), &cfg, DEFAULT_THRESHOLD_DB).unwrap();
        for (f, &pred) in labels.labels().iter().enumerate() {
            let (lo, hi) = (f * cfg.hop, f * cfg.hop + cfg.n_fft);
            let truth = ranges.iter().any(|rg| rg.start < hi && lo < rg.end);
            match (pred, truth) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                _ => {}
            }
        }
    }
    let precision = tp as f64 / (tp + fp).max(1) as f64;
    let recall = tp as f64 / (tp + fneg).max(1) as f64;
    ensure(
        overall >= FORGE_MEDIAN_R && precision >= VAD_MIN_PR && recall >= VAD_MIN_PR,
        format!(
            "median env r {overall:.3} over {FORGE_MIXTURES} mixtures (min {:.3}; {}), VAD precision {precision:.3} recall {recall:.3}",
            rs[0],
            breakdown.join(", ")
        ),
    )
}

fn determinism(dir: &Path) -> Check {
    let cfg = MelConfig::default();
    let vocab = CharVocab::default();
    let sample = synth_sample(&mut rng(21), &cfg, &SynthOptions::default()).unwrap();
    let samples = vec![
        sample.triplet(SerValue::new(0.3).unwrap(), &cfg).unwrap(),
        sample.triplet(SerValue::new(0.8).unwrap(), &cfg).unwrap(),
    ];
    let model = DenoiserConfig {
        n_mels: cfg.n_mels,
        max_frames: 128,
        ..DenoiserConfig::tiny()
    };
    let run = |out: &Path, steps: usize, resume: Option<&Path>| {
        train(&TrainRun {
            config: TrainConfig {
                steps,
                checkpoint_every: 3,
                frames_per_batch: 256,
                seed: 5,
                ..Default::default()
            },
            model,
            mel: cfg,
            vocab: &vocab,
            samples: &samples,
            out_dir: out,
            resume,
        })
        .unwrap()
    };
    let straight = run(&dir.join("a"), 6, None);
    let first = run(&dir.join("b"), 3, None);
    let resumed = run(&dir.join("b"), 6, Some(&first.final_checkpoint));
    let a = load_checkpoint(&straight.final_checkpoint).unwrap();
    let b = load_checkpoint(&resumed.final_checkpoint).unwrap();
    let resume_ok = a.params == b.params && std::fs::read(&straight.final_checkpoint).unwrap() == std::fs::read(&resumed.final_checkpoint).unwrap();

    let copy = dir.join("copy.ckpt");
    save_checkpoint(&copy, &a.params, &a.mel, a.optimizer.as_ref()).unwrap();
    let round_trip = std::fs::read(&copy).unwrap() == std::fs::read(&straight.final_checkpoint).unwrap();

    let k = sample.transcript.chars().count();
    let n_ref = samples[0].n_frames() * 2 / k;
    let ref_mel = samples[0].speech_mel.frames(0, n_ref).unwrap();
    let env = samples[0].env_mel.frames(0, n_ref).unwrap();
    let text: String = sample.transcript.chars().take(2).collect();
    let req = SynthesisRequest {
        ref_mel: &ref_mel,
        ref_text: &text,
        env_prompt: &env,
        gen_text: "xyz",
        ser: SerValue::new(0.4).unwrap(),
    };
    let sampler = SamplerConfig {
        n_steps: 8,
        seed: 3,
        griffin_lim_iters: 8,
        ..Default::default()
    };
    let s1 = synthesize(&a.params, &vocab, &req, &sampler).unwrap();
    let s2 = synthesize(&a.params, &vocab, &req, &sampler).unwrap();
    let synth_ok = s1.mel == s2.mel && s1.wave.samples().iter().zip(s2.wave.samples()).all(|(x, y)| x.to_bits() == y.to_bits());
    ensure(
        resume_ok && round_trip && synth_ok,
        format!("resume bit-identical: {resume_ok}, save/load/save byte-identical: {round_trip}, synthesis bit-identical: {synth_ok}"),
    )
}

fn duration_rule() -> Check {
    let mut runner = TestRunner::new(property_config());
    let strat = ("[a-z é漢]{1,120}", "[a-z é漢]{1,120}", 1usize..5000);
    let res = runner.run(&strat, |(gen, reference, n_ref)| {
        let (g, r) = (gen.chars().count() as f64, reference.chars().count() as f64);
        let oracle = (n_ref as f64 * g / r).ceil() as usize;
        prop_assert_eq!(estimate_target_length(&gen, &reference, n_ref).unwrap(), oracle);
        Ok(())
    });
    match res {
        Ok(()) => Ok(format!("{PROPERTY_CASES} random cases match")),
        Err(e) => Err(e.to_string()),
    }
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut results: Vec<Check> = Vec::new();
    let mut push = |name: &str, f: &mut dyn FnMut() -> Check| {
        let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        match &r {
            Ok(s) => println!("PASS {name}: {s}"),
            Err(s) => println!("FAIL {name}: {s}"),
        }
        results.push(r);
    };
    push("1 gradient correctness", &mut gradient_correctness);
    push("2 adaLN-zero transparency", &mut adaln_transparency);
    push("3 solver order", &mut solver_order);
    push("4 OT-path identities", &mut ot_identities);
    push("5 SER mapping", &mut ser_mapping);
    let overfit = catch_unwind(|| overfit_model(&d.join("overfit"))).ok();
    let missing = || Err::<String, _>("overfit training panicked".to_string());
    push("6 overfit convergence", &mut || overfit.as_ref().map_or_else(missing, overfit_convergence));
    push("7 SER control monotonicity", &mut || overfit.as_ref().map_or_else(missing, |o| ser_monotonicity(o, d)));
    push("8 triplet forge fidelity", &mut forge_fidelity);
    push("9 determinism and persistence", &mut || determinism(d));
    push("10 duration rule", &mut duration_rule);
    let failed = results.iter().filter(|r| r.is_err()).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
