use std::collections::{BTreeMap, BTreeSet};

use colors_data::fixtures::{annotation_set, records_from_sources, write_annotation_corpus, DVD_SOURCES, NTU_SOURCES};
use colors_data::manifest::{save_training_manifest, load_manifest, write_manifest};
use colors_data::media::{apply_exclusions, filter_records};
use colors_data::records::{load_annotations, segment_runs, AudioStatus, ClipRecord, Label, Split, TemporalAnnotation, MIN_CLIP_S};
use colors_data::split::{make_splits, DEFAULT_TOLERANCE};
use colors_data::DataError;
use proptest::prelude::*;

fn curate(dir: &std::path::Path) -> Vec<ClipRecord> {
    let (ann, media) = (dir.join("ann"), dir.join("media"));
    write_annotation_corpus(&ann, &media, 8000).unwrap();
    let mut records: Vec<ClipRecord> = load_annotations(&ann)
        .unwrap()
        .iter()
        .flat_map(|a| segment_runs(a, MIN_CLIP_S).unwrap().clips)
        .collect();
    filter_records(&mut records, &media).unwrap();
    records
}

#[test]
fn fixture_corpus_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let records = curate(dir.path());
    let status: BTreeMap<&str, AudioStatus> =
        records.iter().map(|r| (r.clip_id.as_str(), r.audio_status.unwrap())).collect();
    assert_eq!(status["cam01_0000"], AudioStatus::Ok);
    assert_eq!(status["cam01_0001"], AudioStatus::Silent);
    assert_eq!(status["cam01_0002"], AudioStatus::Ok);
    assert_eq!(status["cam02_0000"], AudioStatus::Ok);
    assert!(records.iter().filter(|r| r.video_id == "cam04").all(|r| r.audio_status == Some(AudioStatus::Silent)));
    assert!(records.iter().filter(|r| r.video_id == "cam05").all(|r| r.audio_status == Some(AudioStatus::NoStream)));
    // Silent clips carry no finite peak.
    assert!(records.iter().filter(|r| r.audio_status == Some(AudioStatus::Silent)).all(|r| r.peak_db.is_none()));
}

#[test]
fn curation_is_reproducible_byte_for_byte() {
    let render = || {
        let dir = tempfile::tempdir().unwrap();
        let records = curate(dir.path());
        let split = make_splits(&records, (0.75, 0.25), 7, 0.5).unwrap();
        let mut buf = Vec::new();
        write_manifest(&mut buf, &split.records).unwrap();
        buf
    };
    assert_eq!(render(), render());
}

#[test]
fn training_manifest_drops_unusable_audio() {
    let dir = tempfile::tempdir().unwrap();
    let mut records = curate(dir.path());
    let excluded: BTreeSet<String> = ["cam03_0000".to_string(), "cam01_0001".to_string()].into();
    let n = apply_exclusions(&mut records, &excluded.into_iter().collect());
    // cam01_0001 was already silent, so only one clip changes.
    assert_eq!(n, 1);
    let path = dir.path().join("train.jsonl");
    let kept = save_training_manifest(&path, &records).unwrap();
    let back = load_manifest(&path).unwrap();
    assert_eq!(back.len(), kept);
    assert!(back.iter().all(|r| r.audio_status == Some(AudioStatus::Ok)));
    assert!(back.iter().all(|r| r.clip_id != "cam03_0000"));
}

#[test]
fn ntu_fixture_reproduces_published_split() {
    let out = make_splits(&records_from_sources("ntu", &NTU_SOURCES), (0.75, 0.25), 0, DEFAULT_TOLERANCE).unwrap();
    assert_eq!((out.train.total(), out.train.violent, out.train.nonviolent), (3528, 1502, 2026));
    assert_eq!((out.test.total(), out.test.violent, out.test.nonviolent), (1187, 507, 680));
}

#[test]
fn dvd_fixture_reproduces_published_split() {
    let out = make_splits(&records_from_sources("dvd", &DVD_SOURCES), (0.75, 0.25), 0, DEFAULT_TOLERANCE).unwrap();
    assert_eq!((out.train.total(), out.train.violent, out.train.nonviolent), (1663, 698, 965));
    assert_eq!((out.test.total(), out.test.violent, out.test.nonviolent), (582, 260, 322));
}

#[test]
fn single_source_warns_and_keeps_one_split() {
    let out = make_splits(&records_from_sources("solo", &[(5, 9)]), (0.75, 0.25), 3, DEFAULT_TOLERANCE).unwrap();
    assert_eq!(out.warnings.len(), 1);
    let splits: BTreeSet<_> = out.records.iter().map(|r| format!("{:?}", r.split)).collect();
    assert_eq!(splits.len(), 1);
}

#[test]
fn lopsided_sources_are_infeasible() {
    let err = make_splits(&records_from_sources("x", &[(100, 0), (0, 100)]), (0.75, 0.25), 0, 0.05).unwrap_err();
    assert!(matches!(err, DataError::InfeasibleSplit(_)));
}

fn arb_annotation() -> impl Strategy<Value = TemporalAnnotation> {
    (2.0f64..60.0, prop::collection::vec(0.0f64..1.0, 0..10)).prop_map(|(duration, cuts)| {
        let mut pts: Vec<f64> = cuts.iter().map(|c| (c * duration * 100.0).round() / 100.0).collect();
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pts.dedup();
        let violent_intervals = pts.chunks_exact(2).map(|w| (w[0], w[1])).collect();
        TemporalAnnotation {
            video_id: "p".into(),
            duration_s: duration,
            violent_intervals,
        }
    })
}

proptest! {
    #[test]
    fn runs_tile_the_timeline(ann in arb_annotation(), min in 0.0f64..3.0) {
        let seg = segment_runs(&ann, min).unwrap();
        let mut spans: Vec<(f64, f64, Label)> = seg.clips.iter().map(|c| (c.start_s, c.end_s, c.label)).collect();
        spans.extend(seg.dropped.iter().map(|&(l, s, e)| (s, e, l)));
        spans.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        prop_assert_eq!(spans.first().map(|s| s.0), Some(0.0));
        prop_assert_eq!(spans.last().map(|s| s.1), Some(ann.duration_s));
        for w in spans.windows(2) {
            prop_assert_eq!(w[0].1, w[1].0);
            // Maximal runs alternate class.
            prop_assert_ne!(w[0].2, w[1].2);
        }
        for (s, e, l) in &spans {
            let inside = ann.violent_intervals.iter().any(|&(a, b)| a <= *s && *e <= b);
            prop_assert_eq!(*l == Label::Violent, inside);
        }
        prop_assert!(seg.clips.iter().all(|c| c.duration_s() >= min));
    }

    #[test]
    fn splits_keep_sources_whole_and_are_seed_deterministic(
        sources in prop::collection::vec((1usize..40, 1usize..40), 2..12),
        seed in 0u64..1000,
    ) {
        let records = records_from_sources("s", &sources);
        let a = make_splits(&records, (0.75, 0.25), seed, 1.0).unwrap();
        let b = make_splits(&records, (0.75, 0.25), seed, 1.0).unwrap();
        prop_assert_eq!(&a.records, &b.records);
        let mut per_source: BTreeMap<&str, BTreeSet<Option<Split>>> = BTreeMap::new();
        for r in &a.records {
            per_source.entry(&r.video_id).or_default().insert(r.split);
        }
        prop_assert!(per_source.values().all(|s| s.len() == 1));
        prop_assert_eq!(a.train.total() + a.test.total(), records.len());
    }
}

#[test]
fn fixture_annotations_validate() {
    for a in annotation_set() {
        a.validate().unwrap();
    }
}
