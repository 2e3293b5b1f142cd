//! Hand-engineered low-level descriptors (LLDs).
//!
//! Each frame yields 34 values, always in this order:
//!
//! | index  | feature                                      |
//! |--------|----------------------------------------------|
//! | 0      | zero-crossing rate                           |
//! | 1      | energy (mean square)                         |
//! | 2      | entropy of energy (10 sub-frames)            |
//! | 3      | spectral centroid, fraction of Nyquist       |
//! | 4      | spectral spread, fraction of Nyquist         |
//! | 5      | spectral entropy (10 sub-bands)              |
//! | 6      | spectral flux                                |
//! | 7      | spectral rolloff (85%), fraction of Nyquist  |
//! | 8-20   | MFCC 1-13                                    |
//! | 21-32  | chroma vector (12 pitch classes)             |
//! | 33     | chroma deviation                             |
//!
//! Time-domain features use the raw frame; spectral features use the
//! Hamming-windowed frame zero-padded to a power-of-two FFT. Spectral
//! moments are weighted by the power spectrum.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::numcore::Matrix;
use crate::sequence::{FrameSequence, SourceKind, LLD_DIM};

pub const SAMPLE_RATE: u32 = 16_000;
pub const WINDOW_MS: f64 = 50.0;
pub const HOP_MS: f64 = 25.0;
pub const ROLLOFF: f64 = 0.85;
pub const MEL_FILTERS: usize = 26;
pub const MFCC_COUNT: usize = 13;
pub const EPS: f64 = 1e-10;

const SUB_BLOCKS: usize = 10;

pub mod index {
    pub const ZCR: usize = 0;
    pub const ENERGY: usize = 1;
    pub const ENERGY_ENTROPY: usize = 2;
    pub const CENTROID: usize = 3;
    pub const SPREAD: usize = 4;
    pub const SPECTRAL_ENTROPY: usize = 5;
    pub const FLUX: usize = 6;
    pub const ROLLOFF: usize = 7;
    pub const MFCC: usize = 8;
    pub const CHROMA: usize = 21;
    pub const CHROMA_DEVIATION: usize = 33;
}

pub const FEATURE_NAMES: [&str; LLD_DIM] = [
    "zcr",
    "energy",
    "energy_entropy",
    "spectral_centroid",
    "spectral_spread",
    "spectral_entropy",
    "spectral_flux",
    "spectral_rolloff",
    "mfcc_1",
    "mfcc_2",
    "mfcc_3",
    "mfcc_4",
    "mfcc_5",
    "mfcc_6",
    "mfcc_7",
    "mfcc_8",
    "mfcc_9",
    "mfcc_10",
    "mfcc_11",
    "mfcc_12",
    "mfcc_13",
    "chroma_1",
    "chroma_2",
    "chroma_3",
    "chroma_4",
    "chroma_5",
    "chroma_6",
    "chroma_7",
    "chroma_8",
    "chroma_9",
    "chroma_10",
    "chroma_11",
    "chroma_12",
    "chroma_deviation",
];

/// Mono audio at 16 kHz.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate != SAMPLE_RATE {
            return Err(Error::Data(format!(
                "sample rate {sample_rate} Hz unsupported; resample to {SAMPLE_RATE} Hz first"
            )));
        }
        if let Some(bad) = samples.iter().find(|s| !(-1.0..=1.0).contains(*s)) {
            return Err(Error::Data(format!("sample {bad} outside [-1, 1]")));
        }
        Ok(AudioClip {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Reads 16-bit/24-bit/32-bit integer or float PCM WAV, averaging channels.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(wav_err)?,
        hound::SampleFormat::Int => {
            let scale = (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<Result<_, _>>()
                .map_err(wav_err)?
        }
    };
    let mono = interleaved
        .chunks(channels)
        .map(|c| (c.iter().sum::<f64>() / c.len() as f64).clamp(-1.0, 1.0))
        .collect();
    AudioClip::new(mono, spec.sample_rate)
}

fn ms_to_samples(ms: f64, sample_rate: u32) -> usize {
    (ms * sample_rate as f64 / 1000.0).round() as usize
}

fn frame_starts(n: usize, window: usize, hop: usize) -> Result<impl Iterator<Item = usize>> {
    if window == 0 || hop == 0 || hop > window {
        return Err(Error::Config(format!(
            "need window >= hop > 0, got window {window} and hop {hop} samples"
        )));
    }
    if n < window {
        return Err(Error::Data(format!(
            "clip has {n} samples, shorter than one {window}-sample window"
        )));
    }
    let count = (n - window) / hop + 1;
    Ok((0..count).map(move |i| i * hop))
}

/// Symmetric Hamming window.
pub fn hamming(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (len - 1) as f64).cos())
        .collect()
}

/// Splits a clip into Hamming-windowed frames. A trailing partial frame
/// is dropped, so `T = ⌊(N − window) / hop⌋ + 1`.
pub fn frame_signal(clip: &AudioClip, window_ms: f64, hop_ms: f64) -> Result<Vec<Vec<f64>>> {
    if !(window_ms >= hop_ms && hop_ms > 0.0) {
        return Err(Error::Config(format!(
            "need window_ms >= hop_ms > 0, got {window_ms} and {hop_ms}"
        )));
    }
    let window = ms_to_samples(window_ms, clip.sample_rate);
    let hop = ms_to_samples(hop_ms, clip.sample_rate);
    let w = hamming(window);
    Ok(frame_starts(clip.samples.len(), window, hop)?
        .map(|s| {
            clip.samples[s..s + window]
                .iter()
                .zip(&w)
                .map(|(x, w)| x * w)
                .collect()
        })
        .collect())
}

/// Triangular mel filterbank plus orthonormal DCT-II.
#[derive(Clone, Debug)]
pub struct Mfcc {
    /// `(first_bin, weights)` per filter.
    filters: Vec<(usize, Vec<f64>)>,
    dct: Vec<[f64; MEL_FILTERS]>,
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

impl Mfcc {
    /// Filterbank for a one-sided power spectrum of `nfft / 2 + 1` bins,
    /// filters spanning 0 Hz to Nyquist.
    pub fn new(nfft: usize, sample_rate: u32) -> Self {
        let nyquist = sample_rate as f64 / 2.0;
        let top = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..MEL_FILTERS + 2)
            .map(|i| mel_to_hz(top * i as f64 / (MEL_FILTERS + 1) as f64))
            .collect();
        let bin_hz = sample_rate as f64 / nfft as f64;
        let bins = nfft / 2 + 1;
        let filters = edges
            .windows(3)
            .map(|e| {
                let (lo, mid, hi) = (e[0], e[1], e[2]);
                let weights: Vec<(usize, f64)> = (0..bins)
                    .filter_map(|k| {
                        let f = k as f64 * bin_hz;
                        let w = if f > lo && f <= mid {
                            (f - lo) / (mid - lo)
                        } else if f > mid && f < hi {
                            (hi - f) / (hi - mid)
                        } else {
                            0.0
                        };
                        (w > 0.0).then_some((k, w))
                    })
                    .collect();
                let first = weights.first().map_or(0, |&(k, _)| k);
                (first, weights.into_iter().map(|(_, w)| w).collect())
            })
            .collect();
        let m = MEL_FILTERS as f64;
        let dct = (0..MFCC_COUNT)
            .map(|i| {
                let norm = if i == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
                let mut row = [0.0; MEL_FILTERS];
                for (j, r) in row.iter_mut().enumerate() {
                    *r = norm * (PI * i as f64 * (j as f64 + 0.5) / m).cos();
                }
                row
            })
            .collect();
        Mfcc { filters, dct }
    }

    /// Log mel energies, floored at [`EPS`].
    pub fn log_mel(&self, power: &[f64]) -> [f64; MEL_FILTERS] {
        let mut out = [0.0; MEL_FILTERS];
        for (o, (first, w)) in out.iter_mut().zip(&self.filters) {
            let e: f64 = power[*first..*first + w.len()]
                .iter()
                .zip(w)
                .map(|(p, w)| p * w)
                .sum();
            *o = e.max(EPS).ln();
        }
        out
    }

    /// First 13 cepstral coefficients of a one-sided power spectrum.
    pub fn coefficients(&self, power: &[f64]) -> [f64; MFCC_COUNT] {
        let log_mel = self.log_mel(power);
        let mut out = [0.0; MFCC_COUNT];
        for (o, row) in out.iter_mut().zip(&self.dct) {
            *o = row.iter().zip(&log_mel).map(|(a, b)| a * b).sum();
        }
        out
    }
}

/// Frame-wise LLD extractor with cached FFT plan and filterbanks.
pub struct LldExtractor {
    window: usize,
    hop: usize,
    nfft: usize,
    hamming: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    mfcc: Mfcc,
    /// Pitch class of every spectrum bin above DC.
    chroma_class: Vec<usize>,
    chroma_count: [usize; 12],
}

impl Default for LldExtractor {
    fn default() -> Self {
        Self::new()
    }
}

impl LldExtractor {
    pub fn new() -> Self {
        let window = ms_to_samples(WINDOW_MS, SAMPLE_RATE);
        let hop = ms_to_samples(HOP_MS, SAMPLE_RATE);
        let nfft = window.next_power_of_two();
        let bin_hz = SAMPLE_RATE as f64 / nfft as f64;
        let chroma_class: Vec<usize> = (1..=nfft / 2)
            .map(|k| {
                let semis = (12.0 * (k as f64 * bin_hz / 27.5).log2()).round() as i64;
                semis.rem_euclid(12) as usize
            })
            .collect();
        let mut chroma_count = [0; 12];
        for &c in &chroma_class {
            chroma_count[c] += 1;
        }
        LldExtractor {
            window,
            hop,
            nfft,
            hamming: hamming(window),
            fft: FftPlanner::new().plan_fft_forward(nfft),
            mfcc: Mfcc::new(nfft, SAMPLE_RATE),
            chroma_class,
            chroma_count,
        }
    }

    pub fn nfft(&self) -> usize {
        self.nfft
    }

    pub fn mfcc(&self) -> &Mfcc {
        &self.mfcc
    }

    /// One-sided power spectrum `|X_k|² / nfft` of a windowed frame,
    /// `nfft / 2 + 1` bins.
    pub fn power_spectrum(&self, windowed: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = windowed
            .iter()
            .map(|&x| Complex::new(x, 0.0))
            .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
            .take(self.nfft)
            .collect();
        self.fft.process(&mut buf);
        buf[..=self.nfft / 2]
            .iter()
            .map(|c| c.norm_sqr() / self.nfft as f64)
            .collect()
    }

    pub fn extract(&self, clip: &AudioClip) -> Result<FrameSequence> {
        let starts: Vec<usize> =
            frame_starts(clip.samples.len(), self.window, self.hop)?.collect();
        let mut frames = Matrix::zeros(starts.len(), LLD_DIM);
        let mut prev: Option<Vec<f64>> = None;
        let mut windowed = vec![0.0; self.window];
        for (t, &s) in starts.iter().enumerate() {
            let raw = &clip.samples[s..s + self.window];
            for ((w, x), h) in windowed.iter_mut().zip(raw).zip(&self.hamming) {
                *w = x * h;
            }
            let power = self.power_spectrum(&windowed);
            let out = frames.row_mut(t);
            self.frame_features(raw, &power, prev.as_deref(), out);
            prev = Some(power);
        }
        FrameSequence::new(frames, HOP_MS, SourceKind::Lld)
    }

    fn frame_features(&self, raw: &[f64], power: &[f64], prev: Option<&[f64]>, out: &mut [f64]) {
        out[index::ZCR] = zero_crossing_rate(raw);
        out[index::ENERGY] = energy(raw);
        out[index::ENERGY_ENTROPY] = block_entropy(&raw.iter().map(|x| x * x).collect::<Vec<_>>());

        let bin_hz = SAMPLE_RATE as f64 / self.nfft as f64;
        let nyquist = SAMPLE_RATE as f64 / 2.0;
        let (centroid, spread) = centroid_spread(power, bin_hz);
        out[index::CENTROID] = centroid / nyquist;
        out[index::SPREAD] = spread / nyquist;
        out[index::SPECTRAL_ENTROPY] = block_entropy(power);
        out[index::FLUX] = prev.map_or(0.0, |p| spectral_flux(power, p));
        out[index::ROLLOFF] = rolloff(power, ROLLOFF) as f64 / (power.len() - 1) as f64;

        let mfcc = self.mfcc.coefficients(power);
        out[index::MFCC..index::MFCC + MFCC_COUNT].copy_from_slice(&mfcc);

        let chroma = self.chroma(power);
        out[index::CHROMA..index::CHROMA + 12].copy_from_slice(&chroma);
        let mean = chroma.iter().sum::<f64>() / 12.0;
        out[index::CHROMA_DEVIATION] =
            (chroma.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / 12.0).sqrt();
    }

    fn chroma(&self, power: &[f64]) -> [f64; 12] {
        let mut acc = [0.0; 12];
        for (p, &c) in power[1..].iter().zip(&self.chroma_class) {
            acc[c] += p;
        }
        let total: f64 = power[1..].iter().sum::<f64>() + EPS;
        let mut out = [0.0; 12];
        for c in 0..12 {
            if self.chroma_count[c] > 0 {
                out[c] = acc[c] / self.chroma_count[c] as f64 / total;
            }
        }
        out
    }
}

/// Convenience wrapper over a default [`LldExtractor`].
pub fn extract_lld(clip: &AudioClip) -> Result<FrameSequence> {
    LldExtractor::new().extract(clip)
}

/// Fraction of adjacent sample pairs whose sign differs.
pub fn zero_crossing_rate(frame: &[f64]) -> f64 {
    if frame.len() < 2 {
        return 0.0;
    }
    let sign = |x: f64| -> f64 {
        if x > 0.0 {
            1.0
        } else if x < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    let changes: f64 = frame
        .windows(2)
        .map(|w| (sign(w[1]) - sign(w[0])).abs())
        .sum::<f64>()
        / 2.0;
    changes / (frame.len() - 1) as f64
}

pub fn energy(frame: &[f64]) -> f64 {
    frame.iter().map(|x| x * x).sum::<f64>() / frame.len() as f64
}

/// Entropy (bits) of the normalized energy in 10 equal blocks; any
/// remainder past the last full block is ignored.
fn block_entropy(values: &[f64]) -> f64 {
    let block = values.len() / SUB_BLOCKS;
    if block == 0 {
        return 0.0;
    }
    let sums: Vec<f64> = values
        .chunks_exact(block)
        .take(SUB_BLOCKS)
        .map(|c| c.iter().sum())
        .collect();
    let total: f64 = sums.iter().sum::<f64>() + EPS;
    -sums
        .iter()
        .map(|s| {
            let p = s / total;
            p * (p + EPS).log2()
        })
        .sum::<f64>()
}

/// Power-weighted centroid and spread in Hz.
pub fn centroid_spread(power: &[f64], bin_hz: f64) -> (f64, f64) {
    let total: f64 = power.iter().sum::<f64>() + EPS;
    let centroid = power
        .iter()
        .enumerate()
        .map(|(k, p)| k as f64 * bin_hz * p)
        .sum::<f64>()
        / total;
    let spread = (power
        .iter()
        .enumerate()
        .map(|(k, p)| (k as f64 * bin_hz - centroid).powi(2) * p)
        .sum::<f64>()
        / total)
        .sqrt();
    (centroid, spread)
}

fn spectral_flux(power: &[f64], prev: &[f64]) -> f64 {
    let s = power.iter().sum::<f64>() + EPS;
    let sp = prev.iter().sum::<f64>() + EPS;
    power
        .iter()
        .zip(prev)
        .map(|(a, b)| (a / s - b / sp).powi(2))
        .sum()
}

/// Index of the first bin at which cumulative power reaches `fraction` of
/// the total; 0 for a silent frame.
fn rolloff(power: &[f64], fraction: f64) -> usize {
    let total: f64 = power.iter().sum();
    if total <= EPS {
        return 0;
    }
    let threshold = fraction * total;
    let mut acc = 0.0;
    for (k, p) in power.iter().enumerate() {
        acc += p;
        if acc >= threshold {
            return k;
        }
    }
    power.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(samples: Vec<f64>) -> AudioClip {
        AudioClip::new(samples, SAMPLE_RATE).unwrap()
    }

    fn tone(hz: f64, seconds: f64, amp: f64) -> AudioClip {
        let n = (seconds * SAMPLE_RATE as f64) as usize;
        clip((0..n)
            .map(|i| amp * (2.0 * PI * hz * i as f64 / SAMPLE_RATE as f64).sin())
            .collect())
    }

    #[test]
    fn frame_counts() {
        let one_second = clip(vec![0.0; 16_000]);
        assert_eq!(frame_signal(&one_second, 50.0, 25.0).unwrap().len(), 39);
        let one_window = clip(vec![0.1; 800]);
        assert_eq!(frame_signal(&one_window, 50.0, 25.0).unwrap().len(), 1);
        assert!(matches!(
            frame_signal(&one_second, 20.0, 30.0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            frame_signal(&clip(vec![0.0; 799]), 50.0, 25.0),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn zcr_extremes() {
        let dc = extract_lld(&clip(vec![0.3; 4000])).unwrap();
        assert!(dc.frames().iter_rows().all(|r| r[index::ZCR] == 0.0));
        let alt = extract_lld(&clip((0..4000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect())).unwrap();
        assert!(alt.frames().iter_rows().all(|r| r[index::ZCR] == 1.0));
    }

    #[test]
    fn tone_centroid_near_frequency() {
        let seq = extract_lld(&tone(440.0, 1.0, 0.5)).unwrap();
        for r in seq.frames().iter_rows().skip(1).take(seq.len() - 2) {
            let hz = r[index::CENTROID] * 8000.0;
            assert!((hz - 440.0).abs() < 20.0, "{hz}");
        }
    }

    #[test]
    fn silence_is_finite() {
        let seq = extract_lld(&clip(vec![0.0; 3000])).unwrap();
        assert!(seq.frames().is_finite());
        assert_eq!(seq.dim(), 34);
    }

    #[test]
    fn zero_spectrum_mfcc_is_scaled_floor() {
        let m = Mfcc::new(1024, SAMPLE_RATE);
        let c = m.coefficients(&vec![0.0; 513]);
        let expected = (MEL_FILTERS as f64).sqrt() * EPS.ln();
        assert!((c[0] - expected).abs() < 1e-12);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn every_filter_covers_some_bins() {
        let m = Mfcc::new(1024, SAMPLE_RATE);
        assert_eq!(m.filters.len(), MEL_FILTERS);
        assert!(m.filters.iter().all(|(_, w)| !w.is_empty()));
    }

    #[test]
    fn rejects_other_sample_rates() {
        assert!(AudioClip::new(vec![0.0; 10], 44_100).is_err());
        assert!(AudioClip::new(vec![1.5], SAMPLE_RATE).is_err());
    }
}
