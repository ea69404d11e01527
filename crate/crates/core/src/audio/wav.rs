use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{resample, AudioClip, CANONICAL_RATE};
use crate::error::{Error, Result};

const PCM16_SCALE: f64 = 32_768.0;

fn map_hound(path: &Path, err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(e) => Error::io(path, e),
        hound::Error::FormatError(msg) => Error::MalformedWav(msg.to_string()),
        hound::Error::Unsupported => Error::UnsupportedCodec("unsupported wav variant".into()),
        hound::Error::TooWide => Error::UnsupportedCodec("sample width too wide".into()),
        hound::Error::UnfinishedSample => Error::MalformedWav("truncated sample data".into()),
        hound::Error::InvalidSampleFormat => {
            Error::UnsupportedCodec("invalid sample format".into())
        }
    }
}

/// Reads a WAV file, downmixes to mono and clamps, without resampling.
pub fn load_wav_native(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    let channels = usize::from(spec.channels);
    if !(1..=2).contains(&channels) {
        return Err(Error::UnsupportedCodec(format!(
            "{channels} channels (only mono and stereo are read)"
        )));
    }

    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / PCM16_SCALE))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (format, bits) => {
            return Err(Error::UnsupportedCodec(format!(
                "{format:?} with {bits} bits per sample"
            )))
        }
    };

    if interleaved.len() < channels {
        return Err(Error::EmptyAudio);
    }
    let mono: Vec<f64> = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(2)
            .map(|lr| 0.5 * (lr[0] + lr[1]))
            .collect()
    };
    let mono = mono
        .into_iter()
        .map(|s| if s.is_finite() { s } else { 0.0 })
        .collect();
    Ok(AudioClip::clamp_from(mono, spec.sample_rate)?.clip)
}

/// Reads a PCM16 or float32 WAV file and canonicalises it: mono by channel
/// mean, resampled to 16 kHz, clamped to `[-1, 1]`.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let clip = load_wav_native(path)?;
    if clip.sample_rate() == CANONICAL_RATE {
        Ok(clip)
    } else {
        resample(&clip, CANONICAL_RATE)
    }
}

/// Writes a clip as 16-bit little-endian mono PCM at the clip's rate.
pub fn save_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &s in clip.samples() {
        writer
            .write_sample(quantize(s))
            .map_err(|e| map_hound(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound(path, e))
}

fn quantize(s: f64) -> i16 {
    (s * PCM16_SCALE).round().clamp(-32_768.0, 32_767.0) as i16
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zeros_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.wav");
        save_wav(&AudioClip::silence(16_000, 16_000), &path).unwrap();
        let back = load_wav(&path).unwrap();
        assert_eq!(back.len(), 16_000);
        assert!(back.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn half_quantizes_to_16384() {
        assert!((quantize(0.5) - 16_384).abs() <= 1);
        assert_eq!(quantize(1.0), 32_767);
        assert_eq!(quantize(-1.0), -32_768);
    }

    #[test]
    fn random_round_trip_within_one_step() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.wav");
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let samples: Vec<f64> = (0..16_000).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let clip = AudioClip::new(samples, 16_000).unwrap();
        save_wav(&clip, &path).unwrap();
        let back = load_wav(&path).unwrap();
        let worst = clip
            .samples()
            .iter()
            .zip(back.samples())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1.0 / 32_768.0, "max error {worst}");
    }

    #[test]
    fn stereo_mean_downmix() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 16_000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        for _ in 0..1000 {
            w.write_sample(16_384i16).unwrap();
            w.write_sample(-16_384i16).unwrap();
        }
        w.finalize().unwrap();
        let clip = load_wav(&path).unwrap();
        assert_eq!(clip.len(), 1000);
        assert!(clip.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn float_input_is_read_and_clamped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 16_000,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        for v in [0.25f32, 1.5, -3.0] {
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();
        let clip = load_wav(&path).unwrap();
        assert_eq!(clip.samples(), &[0.25, 1.0, -1.0]);
    }

    #[test]
    fn error_paths() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.wav");
        std::fs::write(&bad, b"RIFF\x04\x00\x00\x00WAVEjunk").unwrap();
        assert!(matches!(
            load_wav(&bad),
            Err(Error::MalformedWav(_)) | Err(Error::Io { .. })
        ));

        let empty = dir.path().join("empty.wav");
        save_wav(&AudioClip::silence(0, 16_000), &empty).unwrap();
        assert!(matches!(load_wav(&empty), Err(Error::EmptyAudio)));

        let wide = dir.path().join("24.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 16_000,
            bits_per_sample: 24,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&wide, spec).unwrap();
        w.write_sample(5i32).unwrap();
        w.finalize().unwrap();
        assert!(matches!(load_wav(&wide), Err(Error::UnsupportedCodec(_))));

        let unwritable = dir.path().join("missing-dir").join("x.wav");
        assert!(save_wav(&AudioClip::silence(4, 16_000), unwritable).is_err());
    }
}
