//! C ABI over the synthesis side of `envtts`.
//!
//! Objects cross the boundary as opaque handles created by `*_load` /
//! `*_new` functions and released by the matching `*_free`. Fallible calls
//! return an [`EnvttsStatus`]; on failure a message is kept per thread and
//! can be fetched with [`envtts_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use envtts::audio::io::{read_wav, write_wav};
use envtts::audio::{snr_to_ser, stft_mel, MelConfig, MelSpectrogram, SerValue, Waveform};
use envtts::denoiser::{load_checkpoint, DenoiserParams};
use envtts::flow::{synthesize, SamplerConfig, SynthesisRequest};
use envtts::text::{estimate_target_length, CharVocab};
use envtts::Error;

/// Result codes. Zero is success.
#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvttsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Io = 4,
    Format = 5,
    DurationOverflow = 6,
    BufferTooSmall = 7,
    Internal = 8,
    Panic = 9,
}

impl From<&Error> for EnvttsStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::ShapeMismatch(_) => Self::ShapeMismatch,
            Error::Io(_) | Error::Wav(_) | Error::Png(_) => Self::Io,
            Error::Format { .. } | Error::Json(_) | Error::Manifest { .. } => Self::Format,
            Error::DurationOverflow { .. } => Self::DurationOverflow,
            Error::Diverged(_) => Self::Internal,
            _ => Self::InvalidArgument,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(EnvttsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(EnvttsStatus::from(&e), e.to_string())
    }
}

fn fail(status: EnvttsStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

/// Runs `f`, recording the error message and turning panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EnvttsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            EnvttsStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            EnvttsStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(EnvttsStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(EnvttsStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| fail(EnvttsStatus::NullPointer, format!("{name} is null")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| fail(EnvttsStatus::NullPointer, format!("{name} is null")))
}

/// A trained velocity network with its front-end settings.
pub struct EnvttsModel {
    params: DenoiserParams,
    mel: MelConfig,
    vocab: CharVocab,
}

/// Mono audio.
pub struct EnvttsWave(Waveform);

/// A log-mel spectrogram, `n_mels` rows by `n_frames` columns.
pub struct EnvttsMel(MelSpectrogram);

/// Message for the last failed call on this thread, or null. Valid until
/// the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn envtts_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static version string.
#[no_mangle]
pub extern "C" fn envtts_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint written by the trainer.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn envtts_model_load(path: *const c_char, out: *mut *mut EnvttsModel) -> EnvttsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let ckpt = load_checkpoint(PathBuf::from(str_arg(path, "path")?))?;
        let vocab = CharVocab::default();
        if vocab.size() != ckpt.params.config.vocab_size {
            return Err(fail(EnvttsStatus::Format, "checkpoint vocabulary does not match the character table"));
        }
        *out = Box::into_raw(Box::new(EnvttsModel {
            params: ckpt.params,
            mel: ckpt.mel,
            vocab,
        }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`envtts_model_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn envtts_model_free(model: *mut EnvttsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Sample rate the model was trained at, or 0 for a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn envtts_model_sample_rate(model: *const EnvttsModel) -> u32 {
    model.as_ref().map_or(0, |m| m.mel.sample_rate)
}

/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn envtts_model_n_mels(model: *const EnvttsModel) -> usize {
    model.as_ref().map_or(0, |m| m.mel.n_mels)
}

/// Copies `len` samples into a new waveform.
///
/// # Safety
/// `samples` must point to `len` readable floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn envtts_wave_new(
    samples: *const f32,
    len: usize,
    sample_rate: u32,
    out: *mut *mut EnvttsWave,
) -> EnvttsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        if samples.is_null() && len > 0 {
            return Err(fail(EnvttsStatus::NullPointer, "samples is null"));
        }
        let data = if len == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(samples, len).iter().map(|&v| v as f64).collect()
        };
        *out = Box::into_raw(Box::new(EnvttsWave(Waveform::new(data, sample_rate)?)));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn envtts_wave_read(path: *const c_char, out: *mut *mut EnvttsWave) -> EnvttsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let w = read_wav(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(EnvttsWave(w)));
        Ok(())
    })
}

/// Writes a 32-bit float WAV.
///
/// # Safety
/// `wave` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn envtts_wave_write(wave: *const EnvttsWave, path: *const c_char) -> EnvttsStatus {
    guard(|| {
        let w = ref_arg(wave, "wave")?;
        write_wav(str_arg(path, "path")?, &w.0)?;
        Ok(())
    })
}

/// # Safety
/// `wave` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn envtts_wave_len(wave: *const EnvttsWave) -> usize {
    wave.as_ref().map_or(0, |w| w.0.len())
}

/// # Safety
/// `wave` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn envtts_wave_sample_rate(wave: *const EnvttsWave) -> u32 {
    wave.as_ref().map_or(0, |w| w.0.sample_rate())
}

/// Copies the samples into `buf`, which must hold at least
/// [`envtts_wave_len`] floats.
///
/// # Safety
/// `wave` must be a live handle; `buf` must point to `cap` writable floats.
#[no_mangle]
pub unsafe extern "C" fn envtts_wave_copy(wave: *const EnvttsWave, buf: *mut f32, cap: usize) -> EnvttsStatus {
    guard(|| {
        let w = ref_arg(wave, "wave")?;
        let n = w.0.len();
        if cap < n {
            return Err(fail(EnvttsStatus::BufferTooSmall, format!("need {n} floats, got {cap}")));
        }
        if n > 0 {
            if buf.is_null() {
                return Err(fail(EnvttsStatus::NullPointer, "buf is null"));
            }
            let dst = std::slice::from_raw_parts_mut(buf, n);
            for (d, s) in dst.iter_mut().zip(w.0.samples()) {
                *d = *s as f32;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `wave` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn envtts_wave_free(wave: *mut EnvttsWave) {
    if !wave.is_null() {
        drop(Box::from_raw(wave));
    }
}

/// Log-mel analysis with the model's front-end settings.
///
/// # Safety
/// `model` and `wave` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn envtts_mel_from_wave(
    model: *const EnvttsModel,
    wave: *const EnvttsWave,
    out: *mut *mut EnvttsMel,
) -> EnvttsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let m = ref_arg(model, "model")?;
        let w = ref_arg(wave, "wave")?;
        *out = Box::into_raw(Box::new(EnvttsMel(stft_mel(&w.0, &m.mel)?)));
        Ok(())
    })
}

/// # Safety
/// `mel` must be a live handle or null; the out pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn envtts_mel_dims(mel: *const EnvttsMel, n_mels: *mut usize, n_frames: *mut usize) -> EnvttsStatus {
    guard(|| {
        let m = ref_arg(mel, "mel")?;
        if let Some(f) = n_mels.as_mut() {
            *f = m.0.n_mels();
        }
        if let Some(n) = n_frames.as_mut() {
            *n = m.0.n_frames();
        }
        Ok(())
    })
}

/// Copies the values row-major (band by band) into `buf`.
///
/// # Safety
/// `mel` must be a live handle; `buf` must point to `cap` writable floats.
#[no_mangle]
pub unsafe extern "C" fn envtts_mel_copy(mel: *const EnvttsMel, buf: *mut f32, cap: usize) -> EnvttsStatus {
    guard(|| {
        let m = ref_arg(mel, "mel")?;
        let n = m.0.n_mels() * m.0.n_frames();
        if cap < n {
            return Err(fail(EnvttsStatus::BufferTooSmall, format!("need {n} floats, got {cap}")));
        }
        if buf.is_null() {
            return Err(fail(EnvttsStatus::NullPointer, "buf is null"));
        }
        let dst = std::slice::from_raw_parts_mut(buf, n);
        for (d, s) in dst.iter_mut().zip(m.0.values().iter()) {
            *d = *s as f32;
        }
        Ok(())
    })
}

/// # Safety
/// `mel` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn envtts_mel_free(mel: *mut EnvttsMel) {
    if !mel.is_null() {
        drop(Box::from_raw(mel));
    }
}

/// Sampler settings. Zeroed fields take the library defaults.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct EnvttsSynthOptions {
    pub seed: u64,
    /// ODE steps; 0 means 32.
    pub n_steps: u32,
    /// 0 for Euler, 1 for midpoint.
    pub method: u32,
    /// Griffin-Lim iterations; 0 means 64.
    pub griffin_lim_iters: u32,
}

impl EnvttsSynthOptions {
    fn sampler(&self) -> Result<SamplerConfig, Failure> {
        let d = SamplerConfig::default();
        Ok(SamplerConfig {
            n_steps: if self.n_steps == 0 { d.n_steps } else { self.n_steps as usize },
            method: match self.method {
                0 => envtts::flow::Method::Euler,
                1 => envtts::flow::Method::Midpoint,
                m => return Err(fail(EnvttsStatus::InvalidArgument, format!("unknown method {m}"))),
            },
            seed: self.seed,
            griffin_lim_iters: if self.griffin_lim_iters == 0 {
                d.griffin_lim_iters
            } else {
                self.griffin_lim_iters as usize
            },
        })
    }
}

/// Synthesizes `gen_text` in the voice of `reference` over the environment
/// in `env`, at the given SER. `out_mel` may be null.
///
/// # Safety
/// Handles must be live, strings NUL-terminated, `opts` null or readable,
/// and `out_wave` writable.
#[no_mangle]
pub unsafe extern "C" fn envtts_synthesize(
    model: *const EnvttsModel,
    reference: *const EnvttsWave,
    ref_text: *const c_char,
    env: *const EnvttsWave,
    gen_text: *const c_char,
    ser: f64,
    opts: *const EnvttsSynthOptions,
    out_wave: *mut *mut EnvttsWave,
    out_mel: *mut *mut EnvttsMel,
) -> EnvttsStatus {
    guard(|| {
        let out_wave = out_arg(out_wave, "out_wave")?;
        *out_wave = ptr::null_mut();
        if let Some(m) = out_mel.as_mut() {
            *m = ptr::null_mut();
        }
        let m = ref_arg(model, "model")?;
        let ref_mel = stft_mel(&ref_arg(reference, "reference")?.0, &m.mel)?;
        let env_mel = stft_mel(&ref_arg(env, "env")?.0, &m.mel)?;
        let sampler = opts.as_ref().copied().unwrap_or_default().sampler()?;
        let req = SynthesisRequest {
            ref_mel: &ref_mel,
            ref_text: str_arg(ref_text, "ref_text")?,
            env_prompt: &env_mel,
            gen_text: str_arg(gen_text, "gen_text")?,
            ser: SerValue::new(ser)?,
        };
        let out = synthesize(&m.params, &m.vocab, &req, &sampler)?;
        *out_wave = Box::into_raw(Box::new(EnvttsWave(out.wave)));
        if let Some(slot) = out_mel.as_mut() {
            *slot = Box::into_raw(Box::new(EnvttsMel(out.mel)));
        }
        Ok(())
    })
}

/// Clamped linear map from SNR in dB to SER in [0, 1].
#[no_mangle]
pub extern "C" fn envtts_snr_to_ser(snr_db: f64) -> f64 {
    snr_to_ser(snr_db).value()
}

/// Frames to generate for `gen_text` given a reference of `ref_frames`
/// frames transcribed as `ref_text`.
///
/// # Safety
/// Strings must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn envtts_estimate_frames(
    gen_text: *const c_char,
    ref_text: *const c_char,
    ref_frames: usize,
    out: *mut usize,
) -> EnvttsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = estimate_target_length(str_arg(gen_text, "gen_text")?, str_arg(ref_text, "ref_text")?, ref_frames)?;
        Ok(())
    })
}
