use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Strategy, TripletSample};
use crate::audio::io::{read_mel, write_mel};
use crate::audio::{MelConfig, SerValue};
use crate::error::{format_err, Error, Result};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// One line of the manifest. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub target: PathBuf,
    pub speech: PathBuf,
    pub env: PathBuf,
    pub transcript: String,
    pub ser: f64,
    pub strategy: Strategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env_class: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub dir: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.dir.join(p)
    }
}

fn check_record(m: &Manifest, r: &ManifestRecord, seen: &mut HashSet<String>) -> Result<()> {
    let err = |reason: String| Error::Manifest {
        id: r.id.clone(),
        reason,
    };
    if r.id.is_empty() {
        return Err(err("empty id".into()));
    }
    if !seen.insert(r.id.clone()) {
        return Err(err("duplicate id".into()));
    }
    if r.transcript.is_empty() {
        return Err(err("empty transcript".into()));
    }
    SerValue::new(r.ser).map_err(|e| err(e.to_string()))?;
    for p in [&r.target, &r.speech, &r.env] {
        if !m.resolve(p).is_file() {
            return Err(err(format!("missing file {}", p.display())));
        }
    }
    Ok(())
}

pub fn write_manifest(records: &[ManifestRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert(&r.id) {
            return Err(Error::Manifest {
                id: r.id.clone(),
                reason: "duplicate id".into(),
            });
        }
    }
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

/// Parses and checks a manifest: unique ids, valid SER, existing files.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut manifest = Manifest {
        dir,
        records: Vec::new(),
    };
    let reader = BufReader::new(fs::File::open(path)?);
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: ManifestRecord =
            serde_json::from_str(&line).map_err(|e| format_err(path, format!("line {}: {e}", i + 1)))?;
        manifest.records.push(r);
    }
    let mut seen = HashSet::new();
    for r in &manifest.records {
        check_record(&manifest, r, &mut seen)?;
    }
    Ok(manifest)
}

/// Writes each sample's mels under `dir/mels` and a manifest at
/// `dir/manifest.jsonl`.
pub fn save_corpus(dir: impl AsRef<Path>, samples: &[(String, TripletSample, Option<String>)]) -> Result<Manifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("mels"))?;
    let mut records = Vec::with_capacity(samples.len());
    for (id, s, env_class) in samples {
        s.validate().map_err(|e| Error::Manifest {
            id: id.clone(),
            reason: e.to_string(),
        })?;
        let rel = |kind: &str| PathBuf::from("mels").join(format!("{id}.{kind}.mel"));
        write_mel(dir.join(rel("target")), &s.target_mel)?;
        write_mel(dir.join(rel("speech")), &s.speech_mel)?;
        write_mel(dir.join(rel("env")), &s.env_mel)?;
        records.push(ManifestRecord {
            id: id.clone(),
            target: rel("target"),
            speech: rel("speech"),
            env: rel("env"),
            transcript: s.transcript.clone(),
            ser: s.ser.value(),
            strategy: s.strategy,
            env_class: env_class.clone(),
        });
    }
    write_manifest(&records, dir.join(MANIFEST_FILE))?;
    Ok(Manifest {
        dir: dir.to_path_buf(),
        records,
    })
}

pub fn load_samples(manifest: &Manifest, cfg: &MelConfig) -> Result<Vec<TripletSample>> {
    manifest
        .records
        .iter()
        .map(|r| {
            let with_id = |e: Error| Error::Manifest {
                id: r.id.clone(),
                reason: e.to_string(),
            };
            let s = TripletSample {
                target_mel: read_mel(manifest.resolve(&r.target), cfg).map_err(with_id)?,
                speech_mel: read_mel(manifest.resolve(&r.speech), cfg).map_err(with_id)?,
                env_mel: read_mel(manifest.resolve(&r.env), cfg).map_err(with_id)?,
                transcript: r.transcript.clone(),
                ser: SerValue::new(r.ser).map_err(with_id)?,
                strategy: r.strategy,
            };
            s.validate().map_err(with_id)?;
            Ok(s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forge::{synth_sample, SynthOptions};
    use rand::SeedableRng;

    fn corpus(dir: &Path) -> Manifest {
        let cfg = MelConfig::default();
        let samples: Vec<_> = (0..3)
            .map(|i| {
                let s = synth_sample(&mut rand_chacha::ChaCha8Rng::seed_from_u64(i), &cfg, &SynthOptions::default())
                    .unwrap();
                let t = s.triplet(SerValue::new(0.25 * i as f64).unwrap(), &cfg).unwrap();
                (format!("s{i}"), t, Some(s.env_class.name().to_string()))
            })
            .collect();
        save_corpus(dir, &samples).unwrap()
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = corpus(dir.path());
        let back = read_manifest(dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(m, back);
        let samples = load_samples(&back, &MelConfig::default()).unwrap();
        assert_eq!(samples.len(), 3);
        assert_eq!(samples[1].ser.value(), 0.25);
        assert_eq!(samples[2].strategy, Strategy::Synthetic);
    }

    #[test]
    fn missing_file_names_the_record() {
        let dir = tempfile::tempdir().unwrap();
        let m = corpus(dir.path());
        fs::remove_file(m.resolve(&m.records[1].env)).unwrap();
        match read_manifest(dir.path().join(MANIFEST_FILE)) {
            Err(Error::Manifest { id, .. }) => assert_eq!(id, "s1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_manifest_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        write_manifest(&[], &path).unwrap();
        assert!(read_manifest(&path).unwrap().is_empty());
    }

    #[test]
    fn duplicate_and_malformed_records() {
        let dir = tempfile::tempdir().unwrap();
        let m = corpus(dir.path());
        let dup = vec![m.records[0].clone(), m.records[0].clone()];
        assert!(write_manifest(&dup, dir.path().join("dup.jsonl")).is_err());
        let line = serde_json::to_string(&m.records[0]).unwrap();
        fs::write(dir.path().join("dup.jsonl"), format!("{line}\n{line}\n")).unwrap();
        assert!(matches!(read_manifest(dir.path().join("dup.jsonl")), Err(Error::Manifest { .. })));
        fs::write(dir.path().join("bad.jsonl"), "{\"id\": 3}\n").unwrap();
        assert!(matches!(read_manifest(dir.path().join("bad.jsonl")), Err(Error::Format { .. })));
    }
}
