//! Audio ingestion and the fixed-length log-Mel input representation.

pub mod mel;
pub mod synth;
pub mod wav;

pub use mel::{log_mel, MelExtractor, SpectrogramConfig, CHUNK_SECONDS};
pub use synth::{synth_dialect, SynthSpec};

use rand::RngExt;
use rand_chacha::ChaCha8Rng;

/// Mono audio clip with amplitudes in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub label: Option<usize>,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32, label: Option<usize>) -> Self {
        debug_assert!(sample_rate > 0 && !samples.is_empty());
        Self {
            samples,
            sample_rate,
            label,
        }
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Uniformly positioned contiguous window of `seconds`. Clips shorter than
/// the window are returned unchanged; downstream padding handles them.
pub fn sample_window(clip: &AudioClip, seconds: f64, rng: &mut ChaCha8Rng) -> AudioClip {
    let win = (seconds * clip.sample_rate as f64).round() as usize;
    if clip.samples.len() <= win {
        return clip.clone();
    }
    let start = rng.random_range(0..=clip.samples.len() - win);
    AudioClip {
        samples: clip.samples[start..start + win].to_vec(),
        sample_rate: clip.sample_rate,
        label: clip.label,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{domain_rng, RngDomain};

    fn ramp_clip(seconds: usize, sr: u32) -> AudioClip {
        let n = seconds * sr as usize;
        let samples = (0..n).map(|i| (i % 1000) as f32 / 1000.0).collect();
        AudioClip::new(samples, sr, Some(0))
    }

    #[test]
    fn window_has_exact_length_and_valid_offset() {
        let clip = ramp_clip(60, 1000);
        let mut rng = domain_rng(1, RngDomain::Window, 0);
        for _ in 0..20 {
            let w = sample_window(&clip, 30.0, &mut rng);
            assert_eq!(w.samples.len(), 30_000);
            // window content must be a contiguous slice of the source
            let start = (w.samples[0] * 1000.0).round() as usize;
            assert!(start < clip.samples.len());
        }
    }

    #[test]
    fn short_clip_passes_through() {
        let clip = ramp_clip(10, 1000);
        let mut rng = domain_rng(1, RngDomain::Window, 0);
        let w = sample_window(&clip, 30.0, &mut rng);
        assert_eq!(w, clip);
    }

    #[test]
    fn window_is_seed_reproducible() {
        let clip = ramp_clip(60, 1000);
        let a = sample_window(&clip, 30.0, &mut domain_rng(9, RngDomain::Window, 7));
        let b = sample_window(&clip, 30.0, &mut domain_rng(9, RngDomain::Window, 7));
        assert_eq!(a, b);
    }
}
