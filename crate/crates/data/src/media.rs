//! Wave I/O, video tensor archives, and the stage-one audio filter.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use colors_core::backbone::VideoClip;
use colors_core::checkpoint;
use colors_core::frontend::AudioWave;
use colors_core::Tensor;

use crate::error::{DataError, Result};
use crate::records::{AudioStatus, ClipRecord};

/// Peaks below this level (dB re full scale) mark a clip silent.
pub const SILENCE_DB: f64 = -80.0;

/// Reads a RIFF wave file, mixing all channels down to mono by averaging.
pub fn read_wav(path: &Path) -> Result<AudioWave> {
    let unreadable = |e: hound::Error| DataError::Unreadable {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut reader = hound::WavReader::open(path).map_err(unreadable)?;
    let spec = reader.spec();
    let channels = usize::from(spec.channels.max(1));
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(unreadable)?,
        hound::SampleFormat::Int => {
            let full = f64::from(1u32 << (spec.bits_per_sample - 1));
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) / full))
                .collect::<std::result::Result<_, _>>()
                .map_err(unreadable)?
        }
    };
    let samples = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    Ok(AudioWave {
        samples,
        sample_rate: spec.sample_rate,
    })
}

/// Writes mono 16-bit PCM, clipping to [-1, 1].
pub fn write_wav(path: &Path, wave: &AudioWave) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let fail = |e: hound::Error| DataError::Unreadable {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(fail)?;
    for &s in &wave.samples {
        w.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16).map_err(fail)?;
    }
    w.finalize().map_err(fail)
}

/// Stores a clip as a one-entry tensor archive named `frames`.
pub fn write_video(path: &Path, clip: &VideoClip) -> Result<()> {
    let meta = serde_json::json!({"fps": clip.fps});
    let file = std::io::BufWriter::new(fs::File::create(path)?);
    checkpoint::write_archive(file, &[("frames", &clip.frames)], &meta)?;
    Ok(())
}

pub fn read_video(path: &Path) -> Result<VideoClip> {
    let archive = checkpoint::load(path)?;
    let frames: Tensor = archive
        .get("frames")
        .cloned()
        .ok_or_else(|| DataError::Unreadable {
            path: path.to_path_buf(),
            reason: "no `frames` entry".into(),
        })?;
    let fps = archive.meta.get("fps").and_then(|v| v.as_f64()).unwrap_or(0.0);
    Ok(VideoClip { frames, fps })
}

/// `20 log10(max |x|)`; `-inf` for an all-zero or empty signal.
pub fn peak_db(samples: &[f64]) -> f64 {
    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    20.0 * peak.log10()
}

/// Verdict for one clip's audio: `None` means the media carries no audio stream.
pub fn audio_filter_stage1(audio: Option<&[f64]>) -> (AudioStatus, Option<f64>) {
    match audio {
        None => (AudioStatus::NoStream, None),
        Some(samples) => {
            let db = peak_db(samples);
            let status = if db < SILENCE_DB {
                AudioStatus::Silent
            } else {
                AudioStatus::Ok
            };
            (status, Some(db))
        }
    }
}

/// Source audio for a video id: `<media>/<video_id>.wav`, absent when the
/// source has no audio stream.
pub fn source_audio_path(media: &Path, video_id: &str) -> PathBuf {
    media.join(format!("{video_id}.wav"))
}

/// Applies the stage-one filter to every record, reading each source once.
pub fn filter_records(records: &mut [ClipRecord], media: &Path) -> Result<()> {
    let mut cache: Option<(String, Option<AudioWave>)> = None;
    for rec in records.iter_mut() {
        if cache.as_ref().map(|(id, _)| id != &rec.video_id).unwrap_or(true) {
            let path = source_audio_path(media, &rec.video_id);
            let wave = if path.exists() { Some(read_wav(&path)?) } else { None };
            cache = Some((rec.video_id.clone(), wave));
        }
        let wave = cache.as_ref().and_then(|(_, w)| w.as_ref());
        let span = wave.map(|w| {
            let rate = f64::from(w.sample_rate);
            let a = ((rec.start_s * rate).round() as usize).min(w.samples.len());
            let b = ((rec.end_s * rate).round() as usize).min(w.samples.len());
            &w.samples[a..b]
        });
        let (status, db) = audio_filter_stage1(span);
        rec.audio_status = Some(status);
        rec.peak_db = db.filter(|d| d.is_finite());
    }
    Ok(())
}

/// One clip id per line; blank lines and `#` comments are ignored.
pub fn read_exclusions(path: &Path) -> Result<HashSet<String>> {
    Ok(fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

/// Marks listed clips that passed stage one as manually excluded.
pub fn apply_exclusions(records: &mut [ClipRecord], excluded: &HashSet<String>) -> usize {
    let mut n = 0;
    for rec in records.iter_mut() {
        if excluded.contains(&rec.clip_id) && rec.audio_status == Some(AudioStatus::Ok) {
            rec.audio_status = Some(AudioStatus::ExcludedManual);
            n += 1;
        }
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdicts() {
        assert_eq!(audio_filter_stage1(None), (AudioStatus::NoStream, None));
        let (s, db) = audio_filter_stage1(Some(&[0.0; 100]));
        assert_eq!(s, AudioStatus::Silent);
        assert_eq!(db, Some(f64::NEG_INFINITY));
        let sine: Vec<f64> = (0..400).map(|i| (i as f64 * std::f64::consts::PI / 200.0 + 0.5 * std::f64::consts::PI).sin()).collect();
        let (s, db) = audio_filter_stage1(Some(&sine));
        assert_eq!(s, AudioStatus::Ok);
        assert_eq!(db, Some(0.0));
        // -80 dB exactly is not below the threshold
        assert_eq!(audio_filter_stage1(Some(&[1e-4])).0, AudioStatus::Ok);
        assert_eq!(audio_filter_stage1(Some(&[0.9e-4])).0, AudioStatus::Silent);
    }

    #[test]
    fn wav_roundtrip_quantizes_to_16_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let wave = AudioWave {
            samples: vec![0.0, 0.5, -0.5, 1.0, -1.0],
            sample_rate: 16_000,
        };
        write_wav(&path, &wave).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 16_000);
        for (a, b) in wave.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() < 1.0 / 32767.0);
        }
    }

    #[test]
    fn stereo_is_mixed_down() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for s in [16384i16, 0, -16384, -16384] {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
        let wave = read_wav(&path).unwrap();
        assert_eq!(wave.samples, vec![0.25, -0.5]);
    }

    #[test]
    fn garbage_is_unreadable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.wav");
        std::fs::write(&path, b"not a wave").unwrap();
        assert!(matches!(read_wav(&path), Err(DataError::Unreadable { .. })));
    }
}
