//! Annotation and clip record types, and run segmentation.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DataError, Result};

/// Shortest clip kept by [`segment_runs`], in seconds.
pub const MIN_CLIP_S: f64 = 1.0;

/// One source video's timeline. Stored as one JSON document per video:
///
/// ```json
/// {"video_id": "cam03_0412", "duration_s": 95.0, "violent_intervals": [[12.5, 30.0]]}
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemporalAnnotation {
    pub video_id: String,
    pub duration_s: f64,
    pub violent_intervals: Vec<(f64, f64)>,
}

impl TemporalAnnotation {
    /// Intervals must be finite, positive-length, sorted, non-overlapping and
    /// inside `[0, duration]`. Touching intervals are allowed.
    pub fn validate(&self) -> Result<()> {
        let bad = |(start, end): (f64, f64), reason: &str| DataError::MalformedInterval {
            video_id: self.video_id.clone(),
            start,
            end,
            reason: reason.into(),
        };
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(bad((0.0, self.duration_s), "duration must be positive"));
        }
        let mut prev_end = 0.0;
        for &(s, e) in &self.violent_intervals {
            if !(s.is_finite() && e.is_finite()) || e <= s {
                return Err(bad((s, e), "end must exceed start"));
            }
            if s < 0.0 || e > self.duration_s {
                return Err(bad((s, e), "outside the video timeline"));
            }
            if s < prev_end {
                return Err(bad((s, e), "overlaps or precedes the previous interval"));
            }
            prev_end = e;
        }
        Ok(())
    }
}

/// Reads every `*.json` annotation in `dir`, sorted by file name.
pub fn load_annotations(dir: &Path) -> Result<Vec<TemporalAnnotation>> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let ann: TemporalAnnotation = serde_json::from_str(&fs::read_to_string(p)?)?;
            ann.validate()?;
            Ok(ann)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Violent,
    Nonviolent,
}

impl Label {
    pub fn target(self) -> f64 {
        match self {
            Label::Violent => 1.0,
            Label::Nonviolent => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AudioStatus {
    Ok,
    NoStream,
    Silent,
    ExcludedManual,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// One clip. `audio_status`, `peak_db` and `split` are filled in by later
/// curation stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub clip_id: String,
    pub video_id: String,
    pub start_s: f64,
    pub end_s: f64,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_status: Option<AudioStatus>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peak_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

impl ClipRecord {
    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Segmentation {
    pub clips: Vec<ClipRecord>,
    /// Runs shorter than the minimum, as `(label, start, end)`.
    pub dropped: Vec<(Label, f64, f64)>,
}

/// Partitions the timeline into alternating maximal runs; touching violent
/// intervals merge into one run. Runs shorter than `min_clip_s` are dropped.
pub fn segment_runs(ann: &TemporalAnnotation, min_clip_s: f64) -> Result<Segmentation> {
    ann.validate()?;
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for &(s, e) in &ann.violent_intervals {
        match merged.last_mut() {
            Some(last) if last.1 == s => last.1 = e,
            _ => merged.push((s, e)),
        }
    }
    let mut runs = Vec::new();
    let mut cursor = 0.0;
    for (s, e) in merged {
        if s > cursor {
            runs.push((Label::Nonviolent, cursor, s));
        }
        runs.push((Label::Violent, s, e));
        cursor = e;
    }
    if cursor < ann.duration_s {
        runs.push((Label::Nonviolent, cursor, ann.duration_s));
    }
    let mut out = Segmentation {
        clips: Vec::new(),
        dropped: Vec::new(),
    };
    for (i, (label, s, e)) in runs.into_iter().enumerate() {
        if e - s < min_clip_s {
            log::info!("{}: dropping {:?} run ({s}, {e}) shorter than {min_clip_s} s", ann.video_id, label);
            out.dropped.push((label, s, e));
            continue;
        }
        out.clips.push(ClipRecord {
            clip_id: format!("{}_{i:04}", ann.video_id),
            video_id: ann.video_id.clone(),
            start_s: s,
            end_s: e,
            label,
            audio_status: None,
            peak_db: None,
            split: None,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ann(duration: f64, iv: &[(f64, f64)]) -> TemporalAnnotation {
        TemporalAnnotation {
            video_id: "v".into(),
            duration_s: duration,
            violent_intervals: iv.to_vec(),
        }
    }

    fn spans(seg: &Segmentation) -> Vec<(Label, f64, f64)> {
        seg.clips.iter().map(|c| (c.label, c.start_s, c.end_s)).collect()
    }

    #[test]
    fn three_runs() {
        let seg = segment_runs(&ann(10.0, &[(3.0, 6.0)]), MIN_CLIP_S).unwrap();
        assert_eq!(
            spans(&seg),
            vec![
                (Label::Nonviolent, 0.0, 3.0),
                (Label::Violent, 3.0, 6.0),
                (Label::Nonviolent, 6.0, 10.0)
            ]
        );
    }

    #[test]
    fn whole_timeline_violent() {
        let seg = segment_runs(&ann(10.0, &[(0.0, 10.0)]), MIN_CLIP_S).unwrap();
        assert_eq!(spans(&seg), vec![(Label::Violent, 0.0, 10.0)]);
    }

    #[test]
    fn touching_intervals_merge() {
        let seg = segment_runs(&ann(10.0, &[(2.0, 4.0), (4.0, 7.0)]), MIN_CLIP_S).unwrap();
        assert_eq!(seg.clips[1].label, Label::Violent);
        assert_eq!((seg.clips[1].start_s, seg.clips[1].end_s), (2.0, 7.0));
        assert_eq!(seg.clips.len(), 3);
    }

    #[test]
    fn short_runs_are_dropped_and_reported() {
        let seg = segment_runs(&ann(10.0, &[(0.5, 5.0)]), MIN_CLIP_S).unwrap();
        assert_eq!(seg.dropped, vec![(Label::Nonviolent, 0.0, 0.5)]);
        assert_eq!(seg.clips.len(), 2);
    }

    #[test]
    fn malformed_intervals() {
        for iv in [vec![(5.0, 3.0)], vec![(1.0, 4.0), (3.0, 6.0)], vec![(8.0, 12.0)], vec![(-1.0, 2.0)]] {
            let err = segment_runs(&ann(10.0, &iv), MIN_CLIP_S).unwrap_err();
            assert!(matches!(err, DataError::MalformedInterval { .. }), "{iv:?}");
        }
    }
}
