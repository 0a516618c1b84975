//! Small reproducible corpora for tests and demos.

use std::fs;
use std::path::Path;

use colors_core::frontend::AudioWave;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::media::{source_audio_path, write_wav};
use crate::records::{ClipRecord, Label, TemporalAnnotation};
use crate::synth::pink_noise;

/// Per-source `(violent, nonviolent)` clip counts matching the published
/// NTU-CCTV split sizes.
pub const NTU_SOURCES: [(usize, usize); 3] = [(1000, 1000), (502, 1026), (507, 680)];
/// Same for DVD.
pub const DVD_SOURCES: [(usize, usize); 4] = [(400, 500), (298, 465), (130, 200), (130, 122)];

/// Expands per-source counts into clip records, one second per clip.
pub fn records_from_sources(prefix: &str, sources: &[(usize, usize)]) -> Vec<ClipRecord> {
    let mut out = Vec::new();
    for (s, &(v, nv)) in sources.iter().enumerate() {
        let video_id = format!("{prefix}{s:02}");
        let labels = std::iter::repeat_n(Label::Violent, v).chain(std::iter::repeat_n(Label::Nonviolent, nv));
        for (i, label) in labels.enumerate() {
            out.push(ClipRecord {
                clip_id: format!("{video_id}_{i:04}"),
                video_id: video_id.clone(),
                start_s: i as f64,
                end_s: i as f64 + 1.0,
                label,
                audio_status: None,
                peak_db: None,
                split: None,
            });
        }
    }
    out
}

pub fn annotation_set() -> Vec<TemporalAnnotation> {
    let ann = |id: &str, d: f64, iv: &[(f64, f64)]| TemporalAnnotation {
        video_id: id.into(),
        duration_s: d,
        violent_intervals: iv.to_vec(),
    };
    vec![
        ann("cam01", 10.0, &[(3.0, 6.0)]),
        ann("cam02", 10.0, &[(0.0, 10.0)]),
        ann("cam03", 12.0, &[(2.0, 4.0), (4.0, 7.0), (9.5, 11.0)]),
        ann("cam04", 8.0, &[(0.4, 5.0)]),
        ann("cam05", 6.0, &[]),
    ]
}

/// Writes the annotation documents and matching source audio into `dir`:
/// `cam02`/`cam03` are noisy, `cam01` is silent during its violent run,
/// `cam04` is silent throughout and `cam05` has no audio file.
pub fn write_annotation_corpus(ann_dir: &Path, media_dir: &Path, sample_rate: u32) -> Result<()> {
    fs::create_dir_all(ann_dir)?;
    fs::create_dir_all(media_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for (k, ann) in annotation_set().iter().enumerate() {
        fs::write(ann_dir.join(format!("{}.json", ann.video_id)), serde_json::to_vec_pretty(ann)?)?;
        let n = (ann.duration_s * f64::from(sample_rate)) as usize;
        let samples = match k {
            1 | 2 => pink_noise(n, 0.2, &mut rng),
            0 => {
                let mut s = pink_noise(n, 0.2, &mut rng);
                let rate = sample_rate as usize;
                s[3 * rate..6 * rate].iter_mut().for_each(|v| *v = 0.0);
                s
            }
            3 => vec![0.0; n],
            _ => continue,
        };
        write_wav(&source_audio_path(media_dir, &ann.video_id), &AudioWave { samples, sample_rate })?;
    }
    Ok(())
}
