//! Log-Mel spectrogram extraction.
//!
//! Frontend contract, bit-stable for tests:
//! 1. the clip is zero-padded or truncated to exactly 30 seconds;
//! 2. frames are centered at `t * hop` with a periodic Hann window and
//!    zero padding at the edges (no reflection);
//! 3. mel filtering uses Slaney-style triangles (linear below 1 kHz,
//!    logarithmic above) with area normalization, spanning 0..Nyquist;
//! 4. power is floored at `10^log_floor` and log10-compressed;
//! 5. the log spectrogram is clamped below at `global_max - 8` and mapped
//!    through `(x + 4) / 4`.
//!
//! An all-zero clip therefore produces `(log_floor + 4) / 4` everywhere.

use super::AudioClip;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Model input length in seconds; everything is padded or truncated to it.
pub const CHUNK_SECONDS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrogramConfig {
    pub sample_rate: u32,
    pub fft_size: usize,
    pub hop: usize,
    pub mel_bins: usize,
    /// Always `30 s * sample_rate / hop`; stored for checkpoint clarity.
    pub target_frames: usize,
    /// log10 power floor (default -10, i.e. power floored at 1e-10).
    pub log_floor: f64,
}

impl SpectrogramConfig {
    pub fn new(sample_rate: u32, fft_size: usize, hop: usize, mel_bins: usize) -> Result<Self> {
        if hop == 0 || hop > fft_size {
            return Err(Error::InvalidConfig(format!(
                "hop ({hop}) must be in 1..=fft_size ({fft_size})"
            )));
        }
        if mel_bins == 0 {
            return Err(Error::InvalidConfig("mel_bins must be >= 1".into()));
        }
        let chunk = CHUNK_SECONDS * sample_rate as usize;
        if chunk % hop != 0 {
            return Err(Error::InvalidConfig(format!(
                "hop ({hop}) must divide 30 s of samples ({chunk})"
            )));
        }
        Ok(Self {
            sample_rate,
            fft_size,
            hop,
            mel_bins,
            target_frames: chunk / hop,
            log_floor: -10.0,
        })
    }

    /// 16 kHz / fft 400 / hop 160 / 80 mels: the 80x3000 input geometry
    /// whose element count matches the 240K reprogramming parameters.
    pub fn reference() -> Self {
        Self::new(16_000, 400, 160, 80).expect("reference geometry is valid")
    }

    /// Small geometry for desk-scale training: 4 kHz / fft 1200 / hop 1200,
    /// 32 mels, 100 frames.
    pub fn compact() -> Self {
        Self::new(4_000, 1_200, 1_200, 32).expect("compact geometry is valid")
    }

    pub fn chunk_samples(&self) -> usize {
        CHUNK_SECONDS * self.sample_rate as usize
    }

    /// Normalized value an all-zero input maps to; also the saliency
    /// masking fill.
    pub fn silence_value(&self) -> f64 {
        (self.log_floor + 4.0) / 4.0
    }
}

/// Slaney mel scale: linear below 1 kHz, logarithmic above.
pub fn hz_to_mel(hz: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = (6.4f64).ln() / 27.0;
    if hz >= min_log_hz {
        min_log_mel + (hz / min_log_hz).ln() / logstep
    } else {
        hz / f_sp
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = (6.4f64).ln() / 27.0;
    if mel >= min_log_mel {
        min_log_hz * (logstep * (mel - min_log_mel)).exp()
    } else {
        f_sp * mel
    }
}

/// Precomputed FFT plan, Hann window and mel filterbank for one geometry.
pub struct MelExtractor {
    cfg: SpectrogramConfig,
    fft: Arc<dyn Fft<f32>>,
    window: Vec<f32>,
    /// mel_bins x (fft_size/2 + 1), row-major.
    filters: Vec<f32>,
    /// Triangle center frequency per mel bin.
    centers: Vec<f64>,
}

impl MelExtractor {
    pub fn new(cfg: SpectrogramConfig) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
        let n = cfg.fft_size;
        let window: Vec<f32> = (0..n)
            .map(|i| 0.5 * (1.0 - (2.0 * std::f32::consts::PI * i as f32 / n as f32).cos()))
            .collect();

        let bins = n / 2 + 1;
        let nyquist = cfg.sample_rate as f64 / 2.0;
        let mel_lo = hz_to_mel(0.0);
        let mel_hi = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..cfg.mel_bins + 2)
            .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.mel_bins + 1) as f64))
            .collect();
        let mut filters = vec![0.0f32; cfg.mel_bins * bins];
        for m in 0..cfg.mel_bins {
            let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let norm = 2.0 / (hi - lo);
            for (i, f) in filters[m * bins..(m + 1) * bins].iter_mut().enumerate() {
                let freq = i as f64 * cfg.sample_rate as f64 / n as f64;
                let rise = (freq - lo) / (center - lo);
                let fall = (hi - freq) / (hi - center);
                *f = (norm * rise.min(fall).max(0.0)) as f32;
            }
        }
        let centers = edges[1..=cfg.mel_bins].to_vec();
        Self {
            cfg,
            fft,
            window,
            filters,
            centers,
        }
    }

    pub fn config(&self) -> &SpectrogramConfig {
        &self.cfg
    }

    pub fn mel_center_freqs(&self) -> &[f64] {
        &self.centers
    }

    /// Floored log10 mel power, before the dynamic-range clamp and the
    /// affine map. Monotone in input amplitude.
    pub fn extract_raw(&self, clip: &AudioClip) -> Result<Tensor<f32>> {
        if clip.sample_rate != self.cfg.sample_rate {
            return Err(Error::SampleRateMismatch {
                clip: clip.sample_rate,
                config: self.cfg.sample_rate,
            });
        }
        let cfg = &self.cfg;
        let chunk = cfg.chunk_samples();
        let mut padded = vec![0.0f32; chunk];
        let copy = clip.samples.len().min(chunk);
        padded[..copy].copy_from_slice(&clip.samples[..copy]);

        let n = cfg.fft_size;
        let bins = n / 2 + 1;
        let half = n / 2;
        let mut buf = vec![Complex::new(0.0f32, 0.0f32); n];
        let mut scratch = vec![Complex::new(0.0f32, 0.0f32); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0f32; bins];
        let frames = cfg.target_frames;
        let mut out = vec![0.0f32; cfg.mel_bins * frames];
        let floor = 10f32.powf(cfg.log_floor as f32);

        for t in 0..frames {
            let center = t * cfg.hop;
            for (i, b) in buf.iter_mut().enumerate() {
                let src = center as isize + i as isize - half as isize;
                let s = if src >= 0 && (src as usize) < chunk {
                    padded[src as usize]
                } else {
                    0.0
                };
                *b = Complex::new(s * self.window[i], 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, b) in power.iter_mut().zip(&buf[..bins]) {
                *p = b.norm_sqr();
            }
            for m in 0..cfg.mel_bins {
                let row = &self.filters[m * bins..(m + 1) * bins];
                let mel: f32 = row.iter().zip(&power).map(|(&f, &p)| f * p).sum();
                out[m * frames + t] = mel.max(floor).log10();
            }
        }
        Tensor::new(vec![cfg.mel_bins, frames], out)
    }

    /// Full frontend: raw log-mel, dynamic-range clamp, affine map.
    pub fn extract(&self, clip: &AudioClip) -> Result<Tensor<f32>> {
        let mut t = self.extract_raw(clip)?;
        let max = t.data().iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let lo = max - 8.0;
        for v in t.data_mut() {
            *v = (v.max(lo) + 4.0) / 4.0;
        }
        Ok(t)
    }
}

/// One-shot extraction; training loops should hold a [`MelExtractor`].
pub fn log_mel(clip: &AudioClip, cfg: &SpectrogramConfig) -> Result<Tensor<f32>> {
    MelExtractor::new(*cfg).extract(clip)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine_clip(freq: f64, secs: f64, sr: u32, amp: f32) -> AudioClip {
        let n = (secs * sr as f64) as usize;
        let samples = (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / sr as f64).sin() as f32)
            .collect();
        AudioClip::new(samples, sr, None)
    }

    #[test]
    fn reference_geometry_is_80_by_3000() {
        let cfg = SpectrogramConfig::reference();
        assert_eq!(cfg.mel_bins, 80);
        assert_eq!(cfg.target_frames, 3000);
        assert_eq!(cfg.mel_bins * cfg.target_frames, 240_000);
        let clip = sine_clip(440.0, 2.0, 16_000, 0.5);
        let mel = log_mel(&clip, &cfg).unwrap();
        assert_eq!(mel.shape(), &[80, 3000]);
    }

    #[test]
    fn silence_maps_to_constant_floor() {
        let cfg = SpectrogramConfig::compact();
        let clip = AudioClip::new(vec![0.0; cfg.chunk_samples()], cfg.sample_rate, None);
        let mel = log_mel(&clip, &cfg).unwrap();
        let expected = cfg.silence_value() as f32;
        assert!(mel.data().iter().all(|&v| v == expected));
    }

    #[test]
    fn shape_is_fixed_regardless_of_duration() {
        let cfg = SpectrogramConfig::compact();
        for secs in [1.0, 15.0, 30.0, 45.0] {
            let clip = sine_clip(500.0, secs, cfg.sample_rate, 0.3);
            let mel = log_mel(&clip, &cfg).unwrap();
            assert_eq!(mel.shape(), &[cfg.mel_bins, cfg.target_frames]);
        }
    }

    #[test]
    fn trailing_padding_beyond_30s_changes_nothing() {
        let cfg = SpectrogramConfig::compact();
        let base = sine_clip(700.0, 30.0, cfg.sample_rate, 0.4);
        let mut padded = base.clone();
        padded.samples.extend(vec![0.25f32; 12_345]);
        let a = log_mel(&base, &cfg).unwrap();
        let b = log_mel(&padded, &cfg).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn sample_rate_mismatch_rejected() {
        let cfg = SpectrogramConfig::compact();
        let clip = sine_clip(500.0, 1.0, 8_000, 0.3);
        assert!(matches!(
            log_mel(&clip, &cfg),
            Err(Error::SampleRateMismatch { .. })
        ));
    }

    #[test]
    fn pure_tone_lands_in_nearest_mel_bin() {
        // Filterbank-geometry oracle: the argmax bin per frame must be the
        // bin whose triangle center is nearest 1 kHz.
        let cfg = SpectrogramConfig::reference();
        let extractor = MelExtractor::new(cfg);
        let clip = sine_clip(1000.0, 30.0, 16_000, 0.5);
        let mel = extractor.extract(&clip).unwrap();

        let expected_bin = extractor
            .mel_center_freqs()
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                (*a - 1000.0).abs().partial_cmp(&(*b - 1000.0).abs()).unwrap()
            })
            .map(|(i, _)| i)
            .unwrap();

        let frames = cfg.target_frames;
        for t in 0..frames {
            let argmax = (0..cfg.mel_bins)
                .max_by(|&a, &b| {
                    mel.data()[a * frames + t]
                        .partial_cmp(&mel.data()[b * frames + t])
                        .unwrap()
                })
                .unwrap();
            assert_eq!(argmax, expected_bin, "frame {t}");
        }
    }

    #[test]
    fn amplitude_scaling_never_decreases_raw_values() {
        let cfg = SpectrogramConfig::compact();
        let extractor = MelExtractor::new(cfg);
        let quiet = sine_clip(300.0, 10.0, cfg.sample_rate, 0.1);
        let mut loud = quiet.clone();
        for s in &mut loud.samples {
            *s *= 3.0;
        }
        let a = extractor.extract_raw(&quiet).unwrap();
        let b = extractor.extract_raw(&loud).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!(y >= x);
        }
    }

    #[test]
    fn invalid_geometry_rejected() {
        assert!(SpectrogramConfig::new(16_000, 100, 160, 80).is_err()); // hop > fft
        assert!(SpectrogramConfig::new(16_000, 400, 170, 80).is_err()); // hop not dividing 30 s
        assert!(SpectrogramConfig::new(16_000, 400, 160, 0).is_err());
    }
}
