use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use hound::{SampleFormat as HoundFormat, WavReader, WavSpec, WavWriter};

use super::{AudioBuffer, AudioError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleFormat {
    /// 16-bit integer PCM; samples outside [-1, 1] are clipped to full scale.
    Pcm16,
    Float32,
}

fn map_hound(path: &Path, e: hound::Error) -> AudioError {
    match e {
        hound::Error::IoError(io) if io.kind() == ErrorKind::UnexpectedEof => {
            AudioError::Truncated(path.to_path_buf())
        }
        hound::Error::IoError(io) if io.kind() == ErrorKind::NotFound => {
            AudioError::NotFound(path.to_path_buf())
        }
        hound::Error::IoError(source) => AudioError::Io {
            path: path.to_path_buf(),
            source,
        },
        hound::Error::Unsupported => AudioError::Unsupported {
            path: path.to_path_buf(),
            detail: "encoding not handled by the decoder".into(),
        },
        other => AudioError::Malformed {
            path: path.to_path_buf(),
            detail: other.to_string(),
        },
    }
}

fn check_spec(path: &Path, spec: &WavSpec) -> Result<(), AudioError> {
    let ok = matches!(
        (spec.sample_format, spec.bits_per_sample),
        (HoundFormat::Int, 16) | (HoundFormat::Float, 32)
    );
    if !ok {
        return Err(AudioError::Unsupported {
            path: path.to_path_buf(),
            detail: format!("{:?} with {} bits per sample", spec.sample_format, spec.bits_per_sample),
        });
    }
    if !(1..=2).contains(&spec.channels) {
        return Err(AudioError::Unsupported {
            path: path.to_path_buf(),
            detail: format!("{} channels", spec.channels),
        });
    }
    Ok(())
}

pub(crate) fn open(path: &Path) -> Result<WavReader<std::io::BufReader<fs::File>>, AudioError> {
    if !path.exists() {
        return Err(AudioError::NotFound(path.to_path_buf()));
    }
    let reader = WavReader::open(path).map_err(|e| map_hound(path, e))?;
    check_spec(path, &reader.spec())?;
    Ok(reader)
}

/// Reads PCM-16 (scaled by 1/32768) or float-32 WAV files with one or two
/// channels.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioBuffer, AudioError> {
    let path = path.as_ref();
    let mut reader = open(path)?;
    let spec = reader.spec();
    let expected = reader.len() as usize;
    let samples: Vec<f32> = match spec.sample_format {
        HoundFormat::Int => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<Result<_, _>>(),
        HoundFormat::Float => reader.samples::<f32>().collect::<Result<_, _>>(),
    }
    .map_err(|e| match e {
        // The header was valid, so a failed read means the data chunk ends early.
        hound::Error::IoError(_) => AudioError::Truncated(path.to_path_buf()),
        other => map_hound(path, other),
    })?;
    if samples.len() != expected {
        return Err(AudioError::Truncated(path.to_path_buf()));
    }
    AudioBuffer::new(samples, spec.sample_rate, spec.channels).map_err(|e| match e {
        AudioError::NonFinite => AudioError::Malformed {
            path: path.to_path_buf(),
            detail: "non-finite float samples".into(),
        },
        other => other,
    })
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".partial");
    path.with_file_name(name)
}

/// Writes atomically (temporary file, then rename).
pub fn write_wav(buf: &AudioBuffer, path: impl AsRef<Path>, format: SampleFormat) -> Result<(), AudioError> {
    let path = path.as_ref();
    if buf.samples.is_empty() {
        return Err(AudioError::InvalidArgument("cannot write an empty buffer".into()));
    }
    if buf.samples.iter().any(|v| !v.is_finite()) {
        return Err(AudioError::NonFinite);
    }
    let spec = WavSpec {
        channels: buf.channels,
        sample_rate: buf.sample_rate,
        bits_per_sample: match format {
            SampleFormat::Pcm16 => 16,
            SampleFormat::Float32 => 32,
        },
        sample_format: match format {
            SampleFormat::Pcm16 => HoundFormat::Int,
            SampleFormat::Float32 => HoundFormat::Float,
        },
    };
    let tmp = tmp_path(path);
    let result = (|| {
        let mut w = WavWriter::create(&tmp, spec)?;
        match format {
            SampleFormat::Pcm16 => {
                for &s in &buf.samples {
                    let v = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0);
                    w.write_sample(v as i16)?;
                }
            }
            SampleFormat::Float32 => {
                for &s in &buf.samples {
                    w.write_sample(s)?;
                }
            }
        }
        w.finalize()
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(map_hound(path, e));
    }
    fs::rename(&tmp, path).map_err(|source| AudioError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn full_scale_mapping() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: HoundFormat::Int,
        };
        let mut w = WavWriter::create(&p, spec).unwrap();
        for v in [32767i16, 0, -32768] {
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();
        let b = load_wav(&p).unwrap();
        assert_eq!(b.samples, vec![32767.0 / 32768.0, 0.0, -1.0]);
    }

    #[test]
    fn zeros_produce_zero_data_chunk() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.wav");
        write_wav(&AudioBuffer::mono(vec![0.0; 100], 8000).unwrap(), &p, SampleFormat::Pcm16).unwrap();
        let bytes = fs::read(&p).unwrap();
        let pos = bytes.windows(4).position(|w| w == b"data").unwrap();
        let len = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap());
        assert_eq!(len, 200);
        assert!(bytes[pos + 8..pos + 208].iter().all(|&b| b == 0));
    }

    #[test]
    fn pcm_clips_and_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let samples: Vec<f32> = (0..1000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let buf = AudioBuffer::new(samples.clone(), 22050, 2).unwrap();
        let p16 = dir.path().join("p.wav");
        let pf = dir.path().join("f.wav");
        write_wav(&buf, &p16, SampleFormat::Pcm16).unwrap();
        write_wav(&buf, &pf, SampleFormat::Float32).unwrap();
        let b16 = load_wav(&p16).unwrap();
        let bf = load_wav(&pf).unwrap();
        assert_eq!((b16.channels, b16.sample_rate), (2, 22050));
        for (a, b) in samples.iter().zip(&b16.samples) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
        assert_eq!(bf.samples, samples);

        let clip = AudioBuffer::mono(vec![1.5, -2.0], 8000).unwrap();
        write_wav(&clip, &p16, SampleFormat::Pcm16).unwrap();
        let mut r = WavReader::open(&p16).unwrap();
        let raw: Vec<i16> = r.samples::<i16>().map(|s| s.unwrap()).collect();
        assert_eq!(raw, vec![32767, -32768]);
    }

    #[test]
    fn distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_wav(dir.path().join("nope.wav")), Err(AudioError::NotFound(_))));

        let p24 = dir.path().join("p24.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 24,
            sample_format: HoundFormat::Int,
        };
        let mut w = WavWriter::create(&p24, spec).unwrap();
        w.write_sample(5i32).unwrap();
        w.finalize().unwrap();
        assert!(matches!(load_wav(&p24), Err(AudioError::Unsupported { .. })));

        let pt = dir.path().join("t.wav");
        write_wav(&AudioBuffer::mono(vec![0.25; 64], 8000).unwrap(), &pt, SampleFormat::Pcm16).unwrap();
        let bytes = fs::read(&pt).unwrap();
        fs::write(&pt, &bytes[..bytes.len() - 31]).unwrap();
        let err = load_wav(&pt);
        assert!(matches!(err, Err(AudioError::Truncated(_))), "{err:?}");

        let empty = AudioBuffer {
            samples: vec![],
            sample_rate: 8000,
            channels: 1,
        };
        assert!(write_wav(&empty, &pt, SampleFormat::Pcm16).is_err());
        let nan = AudioBuffer {
            samples: vec![f32::NAN],
            sample_rate: 8000,
            channels: 1,
        };
        assert!(matches!(write_wav(&nan, &pt, SampleFormat::Pcm16), Err(AudioError::NonFinite)));
    }
}
