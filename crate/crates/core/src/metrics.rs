//! Class-balanced evaluation metrics and experiment reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transfer::{ExperimentResult, Mode};

/// One-vs-rest counts for the two classes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: [u64; 2],
    pub fp: [u64; 2],
    pub fn_: [u64; 2],
}

pub fn confusion(predictions: &[u8], truths: &[u8]) -> Result<ConfusionCounts> {
    if predictions.len() != truths.len() {
        return Err(Error::DimensionMismatch {
            expected: truths.len(),
            actual: predictions.len(),
        });
    }
    if truths.is_empty() {
        return Err(Error::invalid("cannot score an empty prediction list"));
    }
    let mut cc = ConfusionCounts::default();
    for (&p, &t) in predictions.iter().zip(truths) {
        if p > 1 || t > 1 {
            return Err(Error::invalid(format!("labels must be 0 or 1, got prediction {p} truth {t}")));
        }
        if p == t {
            cc.tp[t as usize] += 1;
        } else {
            cc.fn_[t as usize] += 1;
            cc.fp[p as usize] += 1;
        }
    }
    Ok(cc)
}

impl ConfusionCounts {
    fn support(&self, class: usize) -> u64 {
        self.tp[class] + self.fn_[class]
    }

    fn require_support(&self) -> Result<()> {
        for class in 0..2 {
            if self.support(class) == 0 {
                return Err(Error::MissingClass {
                    split: "evaluation".into(),
                    class: class as u8,
                });
            }
        }
        Ok(())
    }

    pub fn recall(&self, class: usize) -> f64 {
        self.tp[class] as f64 / self.support(class) as f64
    }

    pub fn precision(&self, class: usize) -> Option<f64> {
        let predicted = self.tp[class] + self.fp[class];
        (predicted > 0).then(|| self.tp[class] as f64 / predicted as f64)
    }

    pub fn total(&self) -> u64 {
        self.support(0) + self.support(1)
    }
}

/// Unweighted average recall: mean of the two per-class recalls.
pub fn uar(cc: &ConfusionCounts) -> Result<f64> {
    cc.require_support()?;
    Ok((cc.recall(0) + cc.recall(1)) / 2.0)
}

/// Unweighted average precision. A class that was never predicted has no
/// precision: that is an error unless `zero_if_undefined` maps it to 0.
pub fn uap(cc: &ConfusionCounts, zero_if_undefined: bool) -> Result<f64> {
    let mut sum = 0.0;
    for class in 0..2 {
        sum += match cc.precision(class) {
            Some(p) => p,
            None if zero_if_undefined => 0.0,
            None => return Err(Error::UndefinedPrecision { class: class as u8 }),
        };
    }
    Ok(sum / 2.0)
}

/// Mean per-class F1; a class with `P + R = 0` contributes 0.
pub fn macro_f1(cc: &ConfusionCounts) -> Result<f64> {
    cc.require_support()?;
    let mut sum = 0.0;
    for class in 0..2 {
        let p = cc.precision(class).unwrap_or(0.0);
        let r = cc.recall(class);
        if p + r > 0.0 {
            sum += 2.0 * p * r / (p + r);
        }
    }
    Ok(sum / 2.0)
}

pub fn accuracy(cc: &ConfusionCounts) -> f64 {
    (cc.tp[0] + cc.tp[1]) as f64 / cc.total() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub uar: f64,
    pub uap: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
}

/// All metrics at once; undefined precision counts as 0 here.
pub fn score(predictions: &[u8], truths: &[u8]) -> Result<MetricSet> {
    let cc = confusion(predictions, truths)?;
    Ok(MetricSet {
        uar: uar(&cc)?,
        uap: uap(&cc, true)?,
        macro_f1: macro_f1(&cc)?,
        accuracy: accuracy(&cc),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub table: String,
    /// One JSON record per result, newline-terminated.
    pub records: String,
}

/// Renders experiment results as a text table and as line-delimited JSON.
///
/// The table has a detail section (one row per result, sorted by model,
/// mode, seed) and a summary pivoting mean test UAR per model into the
/// three mode columns.
pub fn report(results: &[ExperimentResult]) -> Result<Report> {
    if results.is_empty() {
        return Err(Error::invalid("nothing to report"));
    }
    let mut sorted: Vec<&ExperimentResult> = results.iter().collect();
    sorted.sort_by(|a, b| {
        a.model
            .cmp(&b.model)
            .then(a.mode.cmp(&b.mode))
            .then(a.seed.cmp(&b.seed))
    });

    let mut table = String::new();
    let _ = writeln!(
        table,
        "{:<32} {:<20} {:>6} {:>6} {:>6} {:>8} {:>8} {:>6}",
        "model", "mode", "seed", "UAR", "UAP", "macroF1", "accuracy", "T"
    );
    for r in &sorted {
        let _ = writeln!(
            table,
            "{:<32} {:<20} {:>6} {:>6.3} {:>6.3} {:>8.3} {:>8.3} {:>6.3}",
            r.model, r.mode.as_str(), r.seed, r.test.uar, r.test.uap, r.test.macro_f1, r.test.accuracy, r.threshold
        );
    }

    let mut pivot: BTreeMap<&str, BTreeMap<Mode, Vec<f64>>> = BTreeMap::new();
    for r in &sorted {
        pivot.entry(&r.model).or_default().entry(r.mode).or_default().push(r.test.uar);
    }
    let _ = writeln!(table);
    let _ = writeln!(table, "{:<32} {:>12} {:>20} {:>20}", "Unweighted Average Recall", "target-only", "source-no-finetune", "source+finetune");
    for (model, modes) in &pivot {
        let cell = |m: Mode| match modes.get(&m) {
            Some(v) => format!("{:.3}", v.iter().sum::<f64>() / v.len() as f64),
            None => "-".into(),
        };
        let _ = writeln!(
            table,
            "{:<32} {:>12} {:>20} {:>20}",
            model,
            cell(Mode::TargetOnly),
            cell(Mode::SourceNoFinetune),
            cell(Mode::SourceFinetune)
        );
    }

    let mut records = String::new();
    for r in &sorted {
        records.push_str(&serde_json::to_string(r).map_err(|e| Error::invalid(e.to_string()))?);
        records.push('\n');
    }
    Ok(Report { table, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn confusion_counts() {
        let cc = confusion(&[0, 1], &[0, 1]).unwrap();
        assert_eq!((cc.tp[0], cc.fn_[0], cc.tp[1], cc.fn_[1]), (1, 0, 1, 0));
        let cc = confusion(&[1, 1], &[0, 1]).unwrap();
        assert_eq!((cc.tp[0], cc.fn_[0], cc.tp[1], cc.fn_[1]), (0, 1, 1, 0));
        assert_eq!((cc.fp[0], cc.fp[1]), (0, 1));
        assert!(confusion(&[], &[]).is_err());
        assert!(confusion(&[1], &[0, 1]).is_err());
    }

    #[test]
    fn uar_values() {
        let cc = ConfusionCounts { tp: [2, 1], fp: [1, 0], fn_: [0, 1] };
        assert_eq!(uar(&cc).unwrap(), 0.75);
        let perfect = confusion(&[0, 1, 1], &[0, 1, 1]).unwrap();
        assert_eq!(uar(&perfect).unwrap(), 1.0);
        let worked = ConfusionCounts { tp: [133, 28], fp: [28, 0], fn_: [0, 28] };
        assert!((uar(&worked).unwrap() - 0.75).abs() <= 1e-12);
        let one_class = confusion(&[0, 0], &[0, 0]).unwrap();
        assert!(matches!(uar(&one_class), Err(Error::MissingClass { class: 1, .. })));
    }

    #[test]
    fn uap_values() {
        let perfect = confusion(&[0, 1], &[0, 1]).unwrap();
        assert_eq!(uap(&perfect, false).unwrap(), 1.0);
        let cc = ConfusionCounts { tp: [2, 3], fp: [2, 1], fn_: [1, 2] };
        assert!((uap(&cc, false).unwrap() - 0.625).abs() <= 1e-12);
        let never_one = confusion(&[0, 0], &[0, 1]).unwrap();
        assert!(matches!(uap(&never_one, false), Err(Error::UndefinedPrecision { class: 1 })));
        assert_eq!(uap(&never_one, true).unwrap(), 0.25);
    }

    #[test]
    fn macro_f1_values() {
        assert_eq!(macro_f1(&confusion(&[0, 1], &[0, 1]).unwrap()).unwrap(), 1.0);
        let cc = ConfusionCounts { tp: [2, 2], fp: [1, 1], fn_: [1, 1] };
        assert!((macro_f1(&cc).unwrap() - 2.0 / 3.0).abs() <= 1e-12);
        assert_eq!(macro_f1(&confusion(&[1, 0], &[0, 1]).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn constant_classifier_scores_half() {
        for constant in 0..2u8 {
            let truths = [0, 0, 0, 1, 1];
            let cc = confusion(&[constant; 5], &truths).unwrap();
            assert_eq!(uar(&cc).unwrap(), 0.5);
        }
    }

    fn labels() -> impl Strategy<Value = (Vec<u8>, Vec<u8>)> {
        (2usize..40).prop_flat_map(|n| {
            (
                proptest::collection::vec(0u8..2, n),
                proptest::collection::vec(0u8..2, n - 2).prop_map(|mut t| {
                    t.push(0);
                    t.push(1);
                    t
                }),
            )
        })
    }

    proptest! {
        #[test]
        fn label_swap_symmetry((p, t) in labels()) {
            let cc = confusion(&p, &t).unwrap();
            let sp: Vec<u8> = p.iter().map(|x| 1 - x).collect();
            let st: Vec<u8> = t.iter().map(|x| 1 - x).collect();
            let sc = confusion(&sp, &st).unwrap();
            prop_assert!((uar(&cc).unwrap() - uar(&sc).unwrap()).abs() < 1e-12);
            prop_assert!((uap(&cc, true).unwrap() - uap(&sc, true).unwrap()).abs() < 1e-12);
            prop_assert!((macro_f1(&cc).unwrap() - macro_f1(&sc).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn uar_ignores_item_order((p, t) in labels(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut idx: Vec<usize> = (0..p.len()).collect();
            idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let pp: Vec<u8> = idx.iter().map(|&i| p[i]).collect();
            let tt: Vec<u8> = idx.iter().map(|&i| t[i]).collect();
            let a = uar(&confusion(&p, &t).unwrap()).unwrap();
            let b = uar(&confusion(&pp, &tt).unwrap()).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn confusion_invariants((p, t) in labels()) {
            let cc = confusion(&p, &t).unwrap();
            let n0 = t.iter().filter(|&&x| x == 0).count() as u64;
            prop_assert_eq!(cc.tp[0] + cc.fn_[0], n0);
            prop_assert_eq!(cc.tp[1] + cc.fn_[1], t.len() as u64 - n0);
            prop_assert_eq!(cc.fp[0], cc.fn_[1]);
            prop_assert_eq!(cc.fp[1], cc.fn_[0]);
        }
    }
}
