//! Source-level stratified train/test splitting.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{DataError, Result};
use crate::records::{ClipRecord, Label, Split};

/// Default allowed gap between a split's violent fraction and the global one.
pub const DEFAULT_TOLERANCE: f64 = 0.05;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ClassCounts {
    pub violent: usize,
    pub nonviolent: usize,
}

impl ClassCounts {
    pub fn of(records: &[ClipRecord]) -> Self {
        let mut c = Self::default();
        for r in records {
            c.add(r.label, 1);
        }
        c
    }

    fn add(&mut self, label: Label, n: usize) {
        match label {
            Label::Violent => self.violent += n,
            Label::Nonviolent => self.nonviolent += n,
        }
    }

    pub fn total(&self) -> usize {
        self.violent + self.nonviolent
    }

    pub fn violent_fraction(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            self.violent as f64 / self.total() as f64
        }
    }

    fn plus(self, o: Self) -> Self {
        Self {
            violent: self.violent + o.violent,
            nonviolent: self.nonviolent + o.nonviolent,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SplitOutcome {
    #[serde(skip)]
    pub records: Vec<ClipRecord>,
    pub train: ClassCounts,
    pub test: ClassCounts,
    /// Achieved share of clips in the training split.
    pub train_fraction: f64,
    pub warnings: Vec<String>,
}

impl SplitOutcome {
    pub fn summary(&self) -> String {
        format!(
            "train {} ({} V / {} NV), test {} ({} V / {} NV)",
            self.train.total(),
            self.train.violent,
            self.train.nonviolent,
            self.test.total(),
            self.test.violent,
            self.test.nonviolent
        )
    }
}

/// Assigns whole source videos to train or test.
///
/// Sources are shuffled under `seed`, then stably ordered largest first. Each
/// source joins train when that moves the train class counts closer (L1) to
/// `ratios.0` times the global counts; otherwise it goes to test.
pub fn make_splits(
    records: &[ClipRecord],
    ratios: (f64, f64),
    seed: u64,
    tolerance: f64,
) -> Result<SplitOutcome> {
    let (tr, te) = ratios;
    if !(tr > 0.0 && te >= 0.0 && ((tr + te) - 1.0).abs() < 1e-9) {
        return Err(DataError::Config(format!("split ratios {tr},{te} must be positive and sum to 1")));
    }
    let mut by_source: BTreeMap<&str, ClassCounts> = BTreeMap::new();
    for r in records {
        by_source.entry(r.video_id.as_str()).or_default().add(r.label, 1);
    }
    let global = ClassCounts::of(records);
    let mut sources: Vec<(&str, ClassCounts)> = by_source.into_iter().collect();
    sources.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    sources.sort_by_key(|(_, c)| std::cmp::Reverse(c.total()));

    let target = (tr * global.violent as f64, tr * global.nonviolent as f64);
    let dist = |c: ClassCounts| (c.violent as f64 - target.0).abs() + (c.nonviolent as f64 - target.1).abs();
    let mut train = ClassCounts::default();
    let mut assignment: BTreeMap<&str, Split> = BTreeMap::new();
    for (id, counts) in &sources {
        let with = train.plus(*counts);
        if dist(with) < dist(train) {
            train = with;
            assignment.insert(id, Split::Train);
        } else {
            assignment.insert(id, Split::Test);
        }
    }
    // Every source fitting under the target would leave test empty; the
    // smallest source then moves over.
    if te > 0.0 && sources.len() > 1 && assignment.values().all(|s| *s == Split::Train) {
        let (id, counts) = sources[sources.len() - 1];
        assignment.insert(id, Split::Test);
        train = ClassCounts {
            violent: train.violent - counts.violent,
            nonviolent: train.nonviolent - counts.nonviolent,
        };
    }
    let test = ClassCounts {
        violent: global.violent - train.violent,
        nonviolent: global.nonviolent - train.nonviolent,
    };

    let mut warnings = Vec::new();
    if sources.len() < 2 {
        let msg = format!("{} source video(s): stratification impossible, all clips in one split", sources.len());
        log::warn!("{msg}");
        warnings.push(msg);
    } else {
        let g = global.violent_fraction();
        for (name, c) in [("train", train), ("test", test)] {
            if c.total() == 0 && te > 0.0 {
                return Err(DataError::InfeasibleSplit(format!("{name} split is empty; achieved train {train:?}, test {test:?}")));
            }
            let gap = (c.violent_fraction() - g).abs();
            if c.total() > 0 && gap > tolerance {
                return Err(DataError::InfeasibleSplit(format!(
                    "{name} violent fraction {:.4} vs global {g:.4} exceeds tolerance {tolerance}",
                    c.violent_fraction()
                )));
            }
        }
    }

    let out: Vec<ClipRecord> = records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.split = Some(assignment[r.video_id.as_str()]);
            r
        })
        .collect();
    Ok(SplitOutcome {
        records: out,
        train,
        test,
        train_fraction: if global.total() == 0 { 0.0 } else { train.total() as f64 / global.total() as f64 },
        warnings,
    })
}

/// Parses `"0.75,0.25"`.
pub fn parse_ratios(s: &str) -> Result<(f64, f64)> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| DataError::Config(format!("ratios `{s}`: {e}")))?;
    match parts[..] {
        [a, b] => Ok((a, b)),
        _ => Err(DataError::Config(format!("ratios `{s}`: expected two values"))),
    }
}
