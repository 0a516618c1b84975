//! Classification metrics, flip analysis between two models, and McNemar's test.

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Confusion counts with violent as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn from_predictions(preds: &[bool], labels: &[bool]) -> Result<Self> {
        if preds.len() != labels.len() {
            return Err(CliError::LengthMismatch(format!("{} predictions, {} labels", preds.len(), labels.len())));
        }
        let mut c = Self::default();
        for (&p, &y) in preds.iter().zip(labels) {
            match (p, y) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub confusion: Confusion,
    pub accuracy: f64,
    pub f1_violent: f64,
    pub f1_nonviolent: f64,
    pub macro_f1: f64,
}

impl EvalReport {
    /// Predictions are `logit > 0`.
    pub fn from_logits(logits: &[f64], labels: &[bool]) -> Result<Self> {
        let preds: Vec<bool> = logits.iter().map(|&q| q > 0.0).collect();
        Self::from_predictions(&preds, labels)
    }

    pub fn from_predictions(preds: &[bool], labels: &[bool]) -> Result<Self> {
        if labels.is_empty() {
            return Err(CliError::EmptyManifest);
        }
        let c = Confusion::from_predictions(preds, labels)?;
        let f1_violent = f1(c.tp, c.fp, c.fn_);
        let f1_nonviolent = f1(c.tn, c.fn_, c.fp);
        Ok(Self {
            n: c.total(),
            confusion: c,
            accuracy: (c.tp + c.tn) as f64 / c.total() as f64,
            f1_violent,
            f1_nonviolent,
            macro_f1: 0.5 * (f1_violent + f1_nonviolent),
        })
    }

    pub fn text(&self) -> String {
        let c = &self.confusion;
        format!(
            "n            {}\naccuracy     {:.4}\nF1 violent   {:.4}\nF1 nonviol.  {:.4}\nmacro F1     {:.4}\nconfusion    TP {} FP {} TN {} FN {}\n",
            self.n, self.accuracy, self.f1_violent, self.f1_nonviolent, self.macro_f1, c.tp, c.fp, c.tn, c.fn_
        )
    }
}

/// Four-way partition of clips by which model is right.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlipCells {
    /// Video-only wrong, audio-visual right.
    pub helps: usize,
    /// Video-only right, audio-visual wrong.
    pub hurts: usize,
    pub both_correct: usize,
    pub both_wrong: usize,
}

impl FlipCells {
    pub fn n(&self) -> usize {
        self.helps + self.hurts + self.both_correct + self.both_wrong
    }

    pub fn video_accuracy(&self) -> f64 {
        (self.both_correct + self.hurts) as f64 / self.n() as f64
    }

    pub fn av_accuracy(&self) -> f64 {
        (self.both_correct + self.helps) as f64 / self.n() as f64
    }

    fn add(&mut self, video_ok: bool, av_ok: bool) {
        match (video_ok, av_ok) {
            (false, true) => self.helps += 1,
            (true, false) => self.hurts += 1,
            (true, true) => self.both_correct += 1,
            (false, false) => self.both_wrong += 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlipTable {
    pub overall: FlipCells,
    pub violent: FlipCells,
    pub nonviolent: FlipCells,
    pub video_accuracy: f64,
    pub av_accuracy: f64,
}

impl FlipTable {
    pub fn from_cells(overall: FlipCells, violent: FlipCells, nonviolent: FlipCells) -> Self {
        Self {
            video_accuracy: overall.video_accuracy(),
            av_accuracy: overall.av_accuracy(),
            overall,
            violent,
            nonviolent,
        }
    }

    pub fn text(&self) -> String {
        let mut s = format!("{:<12}{:>8}{:>8}{:>14}{:>12}\n", "class", "helps", "hurts", "both_correct", "both_wrong");
        for (name, c) in [("violent", &self.violent), ("nonviolent", &self.nonviolent), ("total", &self.overall)] {
            s += &format!("{name:<12}{:>8}{:>8}{:>14}{:>12}\n", c.helps, c.hurts, c.both_correct, c.both_wrong);
        }
        s += &format!(
            "video-only accuracy {:.2}%\naudio-visual accuracy {:.2}%\n",
            100.0 * self.video_accuracy,
            100.0 * self.av_accuracy
        );
        s
    }
}

pub fn flip_analysis(preds_video: &[bool], preds_av: &[bool], labels: &[bool]) -> Result<FlipTable> {
    if preds_video.len() != labels.len() || preds_av.len() != labels.len() {
        return Err(CliError::LengthMismatch(format!(
            "video-only {}, audio-visual {}, labels {}",
            preds_video.len(),
            preds_av.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(CliError::EmptyManifest);
    }
    let (mut all, mut v, mut nv) = (FlipCells::default(), FlipCells::default(), FlipCells::default());
    for ((&pv, &pa), &y) in preds_video.iter().zip(preds_av).zip(labels) {
        let (vo, ao) = (pv == y, pa == y);
        all.add(vo, ao);
        if y { &mut v } else { &mut nv }.add(vo, ao);
    }
    Ok(FlipTable::from_cells(all, v, nv))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McNemar {
    pub chi2: f64,
    pub p: f64,
}

/// Continuity-corrected McNemar statistic `(|b - c| - 1)^2 / (b + c)` on the
/// discordant counts, with the one-degree-of-freedom chi-square survival
/// `erfc(sqrt(chi2 / 2))`. Tied counts give `1 / (b + c)`, not zero.
pub fn mcnemar(helps: usize, hurts: usize) -> Result<McNemar> {
    let n = helps + hurts;
    if n == 0 {
        return Err(CliError::NotApplicable);
    }
    let diff = (helps as f64 - hurts as f64).abs() - 1.0;
    let chi2 = diff.powi(2) / n as f64;
    Ok(McNemar {
        chi2,
        p: libm::erfc((chi2 / 2.0).sqrt()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mcnemar_small_cases() {
        assert!((mcnemar(10, 10).unwrap().chi2 - 0.05).abs() < 1e-15);
        let m = mcnemar(1, 0).unwrap();
        assert_eq!(m.chi2, 0.0);
        assert_eq!(m.p, 1.0);
        assert!(matches!(mcnemar(0, 0), Err(CliError::NotApplicable)));
    }

    #[test]
    fn perfect_predictions() {
        let labels = [true, false, true, false];
        let r = EvalReport::from_predictions(&labels, &labels).unwrap();
        assert_eq!((r.accuracy, r.f1_violent, r.f1_nonviolent), (1.0, 1.0, 1.0));
    }
}
