//! Mono WAV input/output. Accepts 16-bit integer and 32-bit float PCM;
//! everything else is rejected with a descriptive error.

use super::AudioClip;
use crate::error::{Error, Result};
use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use std::path::Path;

pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let reader = WavReader::open(path)
        .map_err(|e| Error::Audio(format!("cannot open {}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Audio(format!(
            "{}: expected mono audio, got {} channels",
            path.display(),
            spec.channels
        )));
    }
    let samples: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?,
        (fmt, bits) => {
            return Err(Error::Audio(format!(
                "{}: unsupported encoding {bits}-bit {fmt:?}; expected 16-bit int or 32-bit float PCM",
                path.display()
            )))
        }
    };
    if samples.is_empty() {
        return Err(Error::Audio(format!("{}: empty audio", path.display())));
    }
    Ok(AudioClip::new(samples, spec.sample_rate, None))
}

/// Writes 16-bit PCM mono.
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec)
        .map_err(|e| Error::Audio(format!("cannot create {}: {e}", path.display())))?;
    for &s in &clip.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer
            .write_sample(v)
            .map_err(|e| Error::Audio(format!("write {}: {e}", path.display())))?;
    }
    writer
        .finalize()
        .map_err(|e| Error::Audio(format!("finalize {}: {e}", path.display())))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pcm16_roundtrip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tone.wav");
        let clip = AudioClip::new(
            (0..4000).map(|i| (i as f32 / 4000.0) * 0.8 - 0.4).collect(),
            4000,
            Some(1),
        );
        write_wav(&path, &clip).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 4000);
        assert_eq!(back.samples.len(), clip.samples.len());
        for (a, b) in clip.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() < 1.0 / 32000.0);
        }
    }

    #[test]
    fn non_wav_file_rejected_with_description() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("not_audio.wav");
        std::fs::write(&path, b"definitely not RIFF data").unwrap();
        match read_wav(&path) {
            Err(Error::Audio(msg)) => assert!(msg.contains("not_audio.wav")),
            other => panic!("expected Audio error, got {other:?}"),
        }
    }

    #[test]
    fn stereo_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stereo.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 4000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        for _ in 0..100 {
            w.write_sample(0i16).unwrap();
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        match read_wav(&path) {
            Err(Error::Audio(msg)) => assert!(msg.contains("mono")),
            other => panic!("expected Audio error, got {other:?}"),
        }
    }
}
