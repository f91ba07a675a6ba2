use std::path::Path;
use std::process::Command;

use envtts::audio::io::{read_mel, read_wav, write_wav};
use envtts::audio::MelConfig;
use envtts::cli::cli_main;
use envtts::forge::{read_manifest, synth_sample, SynthOptions, MANIFEST_FILE};
use rand::SeedableRng;

fn run(args: &[&str]) -> i32 {
    cli_main(std::iter::once("envtts").chain(args.iter().copied()))
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_envtts"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_2() {
    for args in [
        vec!["frobnicate"],
        vec!["synth", "--ser", "0.5"],
        vec!["forge", "--out", "x", "--bogus"],
        vec!["forge", "--out", "x"],
        vec![],
    ] {
        let out = bin().args(&args).output().unwrap();
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"), "{args:?}");
    }
    assert_eq!(bin().arg("--help").status().unwrap().code(), Some(0));
}

#[test]
fn runtime_failure_is_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["plot", "--mel", s(&dir.path().join("nope.mel")), "--out", s(&dir.path().join("x.png"))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("error:"));
}

#[test]
fn seed_env_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let forge = |name: &str, seed_flag: Option<&str>, env: Option<&str>| {
        let out = dir.path().join(name);
        let mut c = bin();
        c.args(["forge", "--synthetic", "2", "--out", s(&out)]);
        if let Some(v) = seed_flag {
            c.args(["--seed", v]);
        }
        c.env_remove("UMBRA_SEED");
        if let Some(v) = env {
            c.env("UMBRA_SEED", v);
        }
        assert!(c.status().unwrap().success());
        std::fs::read(out.join(MANIFEST_FILE)).unwrap()
    };
    let flag = forge("a", Some("7"), None);
    let env = forge("b", None, Some("7"));
    let other = forge("c", None, Some("8"));
    let strip = |b: Vec<u8>| String::from_utf8(b).unwrap();
    assert_eq!(strip(flag), strip(env.clone()));
    assert_ne!(strip(env), strip(other));
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let corpus = d.join("corpus");
    assert_eq!(run(&["forge", "--synthetic", "3", "--out", s(&corpus), "--seed", "1"]), 0);
    let manifest = corpus.join(MANIFEST_FILE);
    assert_eq!(read_manifest(&manifest).unwrap().records.len(), 3);

    let model = d.join("model");
    assert_eq!(
        run(&["train", "--manifest", s(&manifest), "--out", s(&model), "--steps", "4", "--checkpoint-every", "2", "--seed", "3"]),
        0
    );
    let ckpt = model.join("ckpt_4.ckpt");
    assert!(ckpt.exists() && model.join("ckpt_2.ckpt").exists());
    assert!(model.join("loss.log").exists());

    let cfg = MelConfig::default();
    let sample = synth_sample(&mut rand_chacha::ChaCha8Rng::seed_from_u64(5), &cfg, &SynthOptions::default()).unwrap();
    let (ref_wav, env_wav) = (d.join("ref.wav"), d.join("env.wav"));
    write_wav(&ref_wav, &sample.speech).unwrap();
    write_wav(&env_wav, &sample.env).unwrap();
    let prompt = |cmd: &'static str| {
        vec![
            cmd.to_string(),
            "--ckpt".into(),
            s(&ckpt).into(),
            "--ref".into(),
            s(&ref_wav).into(),
            "--ref-text".into(),
            sample.transcript.clone(),
            "--env".into(),
            s(&env_wav).into(),
            "--text".into(),
            "ab".into(),
            "--steps".into(),
            "4".into(),
            "--gl-iters".into(),
            "4".into(),
        ]
    };
    let runv = |v: Vec<String>| cli_main(std::iter::once("envtts".to_string()).chain(v));

    let out = d.join("out.wav");
    let mut args = prompt("synth");
    args.extend(["--ser".into(), "0.5".into(), "--out".into(), s(&out).into()]);
    assert_eq!(runv(args.clone()), 0);
    let first = std::fs::read(&out).unwrap();
    assert!(!read_wav(&out).unwrap().is_empty());
    assert!(read_mel(d.join("out.mel"), &cfg).unwrap().n_frames() > 0);
    assert_eq!(runv(args), 0);
    assert_eq!(std::fs::read(&out).unwrap(), first);

    let sweep = d.join("sweep");
    let mut args = prompt("sweep");
    args.extend(["--ser".into(), "0,0.25,0.5,0.75,1".into(), "--out".into(), s(&sweep).into()]);
    assert_eq!(runv(args), 0);
    let report = std::fs::read_to_string(sweep.join("sweep.jsonl")).unwrap();
    assert_eq!(report.lines().count(), 6);
    let pngs = std::fs::read_dir(&sweep)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png"))
        .count();
    assert_eq!(pngs, 5);

    let mut args = prompt("sweep");
    args.extend(["--ser".into(), "0.5,0.25".into(), "--out".into(), s(&d.join("bad")).into()]);
    assert_eq!(runv(args), 1);

    assert_eq!(run(&["eval", "--ckpt", s(&ckpt), "--manifest", s(&manifest), "--steps", "2", "--gl-iters", "2"]), 0);

    let png = d.join("out.png");
    assert_eq!(run(&["plot", "--mel", s(&d.join("out.mel")), "--out", s(&png)]), 0);
    assert!(png.exists());
}
