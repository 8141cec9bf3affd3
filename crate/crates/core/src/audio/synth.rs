//! Synthetic dialect generator: a desk-scale stand-in for real dialect
//! corpora.
//!
//! Each class is assigned a fixed set of sinusoid band frequencies,
//! interleaved across classes on the mel axis so no two classes share a
//! band and every class covers low and high regions. Clips are that
//! signature plus uniform noise; the signature can be confined to a time
//! interval so saliency tests know where the evidence lives.

use super::mel::{hz_to_mel, mel_to_hz};
use super::AudioClip;
use crate::error::{Error, Result};
use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub classes: usize,
    pub sample_rate: u32,
    pub bands_per_class: usize,
    pub band_min_hz: f64,
    pub band_max_hz: f64,
    pub signature_amp: f64,
    pub noise_amp: f64,
    /// Seconds within the clip where the signature is audible; `None`
    /// keeps it on for the whole clip.
    pub active_interval: Option<(f64, f64)>,
}

impl SynthSpec {
    pub fn new(classes: usize, sample_rate: u32) -> Self {
        Self {
            classes,
            sample_rate,
            bands_per_class: 3,
            band_min_hz: 100.0,
            band_max_hz: 0.45 * sample_rate as f64,
            signature_amp: 0.22,
            noise_amp: 0.04,
            active_interval: None,
        }
    }

    pub fn with_active_interval(mut self, start: f64, end: f64) -> Self {
        self.active_interval = Some((start, end));
        self
    }

    /// Deterministic band centers of a class, a pure function of the spec.
    pub fn band_freqs(&self, class_id: usize) -> Vec<f64> {
        let slots = self.classes * self.bands_per_class;
        let mel_lo = hz_to_mel(self.band_min_hz);
        let mel_hi = hz_to_mel(self.band_max_hz);
        (0..self.bands_per_class)
            .map(|b| {
                let slot = b * self.classes + class_id;
                mel_to_hz(mel_lo + (mel_hi - mel_lo) * (slot as f64 + 0.5) / slots as f64)
            })
            .collect()
    }
}

/// Generates one clip of `duration_secs` for `class_id`. The rng drives
/// phases and noise only; the band layout is fixed by the spec.
pub fn synth_dialect(
    spec: &SynthSpec,
    class_id: usize,
    duration_secs: f64,
    rng: &mut ChaCha8Rng,
) -> Result<AudioClip> {
    if class_id >= spec.classes {
        return Err(Error::InvalidConfig(format!(
            "class id {class_id} out of range for {} classes",
            spec.classes
        )));
    }
    let sr = spec.sample_rate as f64;
    let n = (duration_secs * sr).round() as usize;
    let freqs = spec.band_freqs(class_id);

    // Rotating-phasor oscillators; renormalized periodically to hold the
    // unit circle over long clips.
    let mut re: Vec<f64> = Vec::with_capacity(freqs.len());
    let mut im: Vec<f64> = Vec::with_capacity(freqs.len());
    let mut rot: Vec<(f64, f64)> = Vec::with_capacity(freqs.len());
    for f in &freqs {
        let phase = rng.random::<f64>() * 2.0 * std::f64::consts::PI;
        re.push(phase.cos());
        im.push(phase.sin());
        let omega = 2.0 * std::f64::consts::PI * f / sr;
        rot.push((omega.cos(), omega.sin()));
    }

    let (active_lo, active_hi) = match spec.active_interval {
        Some((a, b)) => ((a * sr) as usize, (b * sr) as usize),
        None => (0, usize::MAX),
    };
    let amp = spec.signature_amp / spec.bands_per_class as f64;

    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let mut s = (rng.random::<f64>() * 2.0 - 1.0) * spec.noise_amp;
        let active = i >= active_lo && i < active_hi;
        for b in 0..freqs.len() {
            let (c, d) = rot[b];
            let (r, m) = (re[b], im[b]);
            re[b] = r * c - m * d;
            im[b] = r * d + m * c;
            if active {
                s += amp * im[b];
            }
        }
        if i % 4096 == 4095 {
            for b in 0..freqs.len() {
                let norm = (re[b] * re[b] + im[b] * im[b]).sqrt();
                re[b] /= norm;
                im[b] /= norm;
            }
        }
        samples.push(s as f32);
    }

    Ok(AudioClip::new(samples, spec.sample_rate, Some(class_id)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{domain_rng, RngDomain};

    #[test]
    fn classes_have_disjoint_band_sets() {
        let spec = SynthSpec::new(4, 4000);
        let f0 = spec.band_freqs(0);
        let f1 = spec.band_freqs(1);
        assert_ne!(f0, f1);
        for a in &f0 {
            for b in &f1 {
                assert!((a - b).abs() > 1.0, "bands overlap: {a} vs {b}");
            }
        }
    }

    #[test]
    fn same_class_and_seed_is_bit_identical() {
        let spec = SynthSpec::new(4, 4000);
        let a = synth_dialect(&spec, 2, 3.0, &mut domain_rng(5, RngDomain::Synth, 11)).unwrap();
        let b = synth_dialect(&spec, 2, 3.0, &mut domain_rng(5, RngDomain::Synth, 11)).unwrap();
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn out_of_range_class_rejected() {
        let spec = SynthSpec::new(4, 4000);
        let mut rng = domain_rng(5, RngDomain::Synth, 0);
        assert!(synth_dialect(&spec, 4, 1.0, &mut rng).is_err());
    }

    /// Goertzel power at one frequency; the oracle's own DFT probe.
    fn goertzel(samples: &[f32], freq: f64, sr: f64) -> f64 {
        let omega = 2.0 * std::f64::consts::PI * freq / sr;
        let coeff = 2.0 * omega.cos();
        let (mut s1, mut s2) = (0.0f64, 0.0f64);
        for &x in samples {
            let s0 = x as f64 + coeff * s1 - s2;
            s2 = s1;
            s1 = s0;
        }
        s1 * s1 + s2 * s2 - coeff * s1 * s2
    }

    #[test]
    fn band_energy_oracle_classifies_200_clips() {
        // Bayes-style oracle: score each class by summed Goertzel power at
        // its known band centers; require >= 99% over 200 clips.
        let spec = SynthSpec::new(4, 4000);
        let sr = spec.sample_rate as f64;
        let mut correct = 0;
        let total = 200;
        for i in 0..total {
            let class = i % spec.classes;
            let mut rng = domain_rng(42, RngDomain::Synth, i as u64);
            let clip = synth_dialect(&spec, class, 2.0, &mut rng).unwrap();
            let best = (0..spec.classes)
                .map(|c| {
                    let e: f64 = spec
                        .band_freqs(c)
                        .iter()
                        .map(|&f| goertzel(&clip.samples, f, sr))
                        .sum();
                    (c, e)
                })
                .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                .unwrap()
                .0;
            if best == class {
                correct += 1;
            }
        }
        assert!(
            correct * 100 >= total * 99,
            "oracle accuracy {correct}/{total}"
        );
    }

    #[test]
    fn signature_is_confined_to_active_interval() {
        let spec = SynthSpec::new(2, 4000).with_active_interval(1.0, 2.0);
        let mut rng = domain_rng(3, RngDomain::Synth, 0);
        let clip = synth_dialect(&spec, 0, 3.0, &mut rng).unwrap();
        let sr = spec.sample_rate as usize;
        let rms = |s: &[f32]| (s.iter().map(|&x| (x * x) as f64).sum::<f64>() / s.len() as f64).sqrt();
        let outside = rms(&clip.samples[..sr]);
        let inside = rms(&clip.samples[sr..2 * sr]);
        assert!(inside > 3.0 * outside, "inside {inside} outside {outside}");
    }
}
