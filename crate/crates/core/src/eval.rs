//! Evaluation protocol: utterance metrics, speaker aggregation, binarized
//! accuracy and the class-to-intelligibility mapping.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::str::FromStr;

use libm::sqrt;

use crate::labels::argmax;
use crate::{ClassScores, Error, Result, Task};

fn check_pair(pred: &[usize], refs: &[usize]) -> Result<()> {
    if pred.len() != refs.len() {
        return Err(Error::ShapeMismatch {
            context: "predictions vs references",
            expected: refs.len(),
            actual: pred.len(),
        });
    }
    if refs.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    Ok(())
}

pub fn accuracy(pred: &[usize], refs: &[usize]) -> Result<f64> {
    check_pair(pred, refs)?;
    let hits = pred.iter().zip(refs).filter(|(p, r)| p == r).count();
    Ok(hits as f64 / refs.len() as f64)
}

/// Mean per-class F1 over the classes that occur in `pred` or `refs`.
pub fn macro_f1(pred: &[usize], refs: &[usize], n_classes: usize) -> Result<f64> {
    check_pair(pred, refs)?;
    if let Some(&bad) = pred.iter().chain(refs).find(|&&c| c >= n_classes) {
        return Err(Error::LabelOutOfRange { label: bad, n_classes });
    }
    let mut tp = vec![0usize; n_classes];
    let mut n_pred = vec![0usize; n_classes];
    let mut n_ref = vec![0usize; n_classes];
    for (&p, &r) in pred.iter().zip(refs) {
        n_pred[p] += 1;
        n_ref[r] += 1;
        if p == r {
            tp[p] += 1;
        }
    }
    let mut sum = 0.0;
    let mut present = 0;
    for c in 0..n_classes {
        if n_pred[c] == 0 && n_ref[c] == 0 {
            continue;
        }
        present += 1;
        let precision = if n_pred[c] > 0 { tp[c] as f64 / n_pred[c] as f64 } else { 0.0 };
        let recall = if n_ref[c] > 0 { tp[c] as f64 / n_ref[c] as f64 } else { 0.0 };
        if precision + recall > 0.0 {
            sum += 2.0 * precision * recall / (precision + recall);
        }
    }
    Ok(sum / present as f64)
}

/// Area under the ROC curve from rank statistics, with tied scores sharing
/// their mid-rank. `None` without at least one positive and one negative.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j share their mean.
        let mid = (i + 1 + j) as f64 / 2.0;
        rank_sum += mid * order[i..j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j;
    }
    let p = n_pos as f64;
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n_neg as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OvrAuc {
    /// Mean over the classes that have an AUC; `None` when none do.
    pub mean: Option<f64>,
    pub per_class: Vec<Option<f64>>,
}

/// One-vs-rest AUC for every class.
pub fn ovr_auc(scores: &[ClassScores], refs: &[usize], n_classes: usize) -> Result<OvrAuc> {
    if scores.len() != refs.len() {
        return Err(Error::ShapeMismatch {
            context: "scores vs references",
            expected: refs.len(),
            actual: scores.len(),
        });
    }
    if refs.is_empty() {
        return Err(Error::Empty("scores"));
    }
    if let Some(s) = scores.iter().find(|s| s.n_classes() != n_classes) {
        return Err(Error::ShapeMismatch {
            context: "class score length",
            expected: n_classes,
            actual: s.n_classes(),
        });
    }
    let mut column = vec![0.0; refs.len()];
    let mut positive = vec![false; refs.len()];
    let per_class: Vec<Option<f64>> = (0..n_classes)
        .map(|c| {
            for (i, (s, &r)) in scores.iter().zip(refs).enumerate() {
                column[i] = s.probs()[c];
                positive[i] = r == c;
            }
            binary_auc(&column, &positive)
        })
        .collect();
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(OvrAuc { mean, per_class })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredUtterance {
    pub utterance_id: String,
    pub speaker_id: String,
    pub scores: ClassScores,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerScores {
    pub speaker_id: String,
    pub n_utterances: usize,
    pub mean: ClassScores,
    /// Argmax of `mean`, ties to the lower class.
    pub predicted: usize,
}

fn pairwise_sum(rows: &[&[f64]]) -> Vec<f64> {
    match rows.len() {
        0 => Vec::new(),
        1 => rows[0].to_vec(),
        n => {
            let mut left = pairwise_sum(&rows[..n / 2]);
            let right = pairwise_sum(&rows[n / 2..]);
            left.iter_mut().zip(&right).for_each(|(a, b)| *a += b);
            left
        }
    }
}

/// Per-speaker mean of the utterance score vectors, then argmax. Speakers come
/// out in id order; each mean is summed pairwise in utterance-id order, so
/// input order never changes a bit of the result.
pub fn speaker_aggregate(utterances: &[ScoredUtterance]) -> Result<Vec<SpeakerScores>> {
    let first = utterances.first().ok_or(Error::Empty("speaker group"))?;
    let k = first.scores.n_classes();
    let mut groups: BTreeMap<&str, Vec<&ScoredUtterance>> = BTreeMap::new();
    for u in utterances {
        if u.scores.n_classes() != k {
            return Err(Error::ShapeMismatch {
                context: "class score length",
                expected: k,
                actual: u.scores.n_classes(),
            });
        }
        groups.entry(&u.speaker_id).or_default().push(u);
    }
    groups
        .into_iter()
        .map(|(speaker, mut group)| {
            group.sort_by(|a, b| a.utterance_id.cmp(&b.utterance_id));
            let rows: Vec<&[f64]> = group.iter().map(|u| u.scores.probs()).collect();
            let n = group.len();
            let mean: Vec<f64> = pairwise_sum(&rows).into_iter().map(|v| v / n as f64).collect();
            let predicted = argmax(&mean);
            Ok(SpeakerScores {
                speaker_id: String::from(speaker),
                n_utterances: n,
                mean: ClassScores::new(mean)?,
                predicted,
            })
        })
        .collect()
}

/// Percentage of utterances whose typical/atypical call (typical iff the
/// argmax is class 0) matches the speaker's binary reference.
pub fn binarized_accuracy(scores: &[ClassScores], speaker_ref_binary: usize) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Empty("speaker utterances"));
    }
    if speaker_ref_binary > 1 {
        return Err(Error::LabelOutOfRange {
            label: speaker_ref_binary,
            n_classes: 2,
        });
    }
    let hits = scores
        .iter()
        .filter(|s| ((s.argmax() != 0) as usize) == speaker_ref_binary)
        .count();
    Ok(100.0 * hits as f64 / scores.len() as f64)
}

/// Intelligibility percentage assigned to each of the five classes.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct ClassMap(pub [f64; 5]);

impl ClassMap {
    pub const DEFAULT: ClassMap = ClassMap([100.0, 90.0, 60.0, 40.0, 20.0]);

    pub fn is_strictly_decreasing(&self) -> bool {
        self.0.windows(2).all(|w| w[0] > w[1])
    }
}

impl Default for ClassMap {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl FromStr for ClassMap {
    type Err = Error;

    /// Five comma-separated numbers, class 0 first.
    fn from_str(s: &str) -> Result<Self> {
        let values: Vec<f64> = s
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<core::result::Result<_, _>>()
            .map_err(|_| Error::invalid("class_map", alloc::format!("{s:?} is not a list of numbers")))?;
        let values: [f64; 5] = values
            .try_into()
            .map_err(|_| Error::invalid("class_map", "expected exactly five values"))?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("class_map", "values must be finite"));
        }
        Ok(ClassMap(values))
    }
}

/// Maps each predicted class through `map` and averages. A map that is not
/// strictly decreasing is used as given, with a warning.
pub fn intelligibility_percent(predicted: &[usize], map: &ClassMap) -> Result<f64> {
    if predicted.is_empty() {
        return Err(Error::Empty("speaker predictions"));
    }
    if let Some(&bad) = predicted.iter().find(|&&c| c >= 5) {
        return Err(Error::LabelOutOfRange { label: bad, n_classes: 5 });
    }
    if !map.is_strictly_decreasing() {
        log::warn!("class map {:?} is not strictly decreasing", map.0);
    }
    Ok(predicted.iter().map(|&c| map.0[c]).sum::<f64>() / predicted.len() as f64)
}

/// Product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch {
            context: "pearson inputs",
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::invalid("pearson", "at least two points required"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 {
        return Err(Error::ZeroVariance("pearson x"));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance("pearson y"));
    }
    Ok((sxy / sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

/// One scored utterance with everything the report needs.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub utterance_id: String,
    pub speaker_id: String,
    /// Reference class within the task.
    pub reference: usize,
    pub scores: ClassScores,
    /// Value of the slicing column (e.g. etiology), if slicing.
    pub slice: Option<String>,
    /// Reference intelligibility percentage, if known.
    pub reference_percent: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalOptions {
    pub class_map: ClassMap,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct SpeakerRow {
    pub speaker_id: String,
    pub n_utterances: usize,
    pub reference: usize,
    pub predicted: usize,
    pub binarized_accuracy: f64,
    /// Five-class task only.
    pub intelligibility_percent: Option<f64>,
    pub reference_percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct IntelligibilitySummary {
    pub class_map: ClassMap,
    pub map_strictly_decreasing: bool,
    /// Correlation of predicted and reference speaker percentages; `None`
    /// with fewer than two referenced speakers or a constant side.
    pub pearson: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct EvalReport {
    pub task: Task,
    pub n_utterances: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub mean_ovr_auc: Option<f64>,
    pub per_class_auc: Vec<Option<f64>>,
    pub speakers: Vec<SpeakerRow>,
    pub slices: BTreeMap<String, EvalReport>,
    pub class_counts: Vec<usize>,
    pub intelligibility: Option<IntelligibilitySummary>,
}

/// Name of the slice holding items without a slice value.
pub const UNLABELED_SLICE: &str = "(none)";

/// Full report; when any item carries a slice value, a sub-report is added
/// per distinct value.
pub fn evaluate(items: &[EvalItem], task: Task, options: &EvalOptions) -> Result<EvalReport> {
    let mut report = report_for(items, task, options)?;
    if items.iter().any(|i| i.slice.is_some()) {
        let mut groups: BTreeMap<&str, Vec<EvalItem>> = BTreeMap::new();
        for item in items {
            let key = item.slice.as_deref().unwrap_or(UNLABELED_SLICE);
            groups.entry(key).or_default().push(item.clone());
        }
        let groups: Vec<(&str, Vec<EvalItem>)> = groups.into_iter().collect();
        let run = |(name, group): &(&str, Vec<EvalItem>)| report_for(group, task, options).map(|r| (String::from(*name), r));
        #[cfg(feature = "parallel")]
        let subs: Vec<Result<(String, EvalReport)>> = {
            use rayon::prelude::*;
            groups.par_iter().map(run).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let subs: Vec<Result<(String, EvalReport)>> = groups.iter().map(run).collect();
        for sub in subs {
            let (name, r) = sub?;
            report.slices.insert(name, r);
        }
    }
    Ok(report)
}

fn report_for(items: &[EvalItem], task: Task, options: &EvalOptions) -> Result<EvalReport> {
    let k = task.n_classes();
    if items.is_empty() {
        return Err(Error::Empty("evaluation items"));
    }
    let refs: Vec<usize> = items.iter().map(|i| i.reference).collect();
    if let Some(&bad) = refs.iter().find(|&&r| r >= k) {
        return Err(Error::LabelOutOfRange { label: bad, n_classes: k });
    }
    let scores: Vec<ClassScores> = items.iter().map(|i| i.scores.clone()).collect();
    let auc = ovr_auc(&scores, &refs, k)?;
    let pred: Vec<usize> = scores.iter().map(ClassScores::argmax).collect();
    let mut class_counts = vec![0usize; k];
    refs.iter().for_each(|&r| class_counts[r] += 1);

    let scored: Vec<ScoredUtterance> = items
        .iter()
        .map(|i| ScoredUtterance {
            utterance_id: i.utterance_id.clone(),
            speaker_id: i.speaker_id.clone(),
            scores: i.scores.clone(),
        })
        .collect();
    let mut by_speaker: BTreeMap<&str, Vec<&EvalItem>> = BTreeMap::new();
    for item in items {
        by_speaker.entry(&item.speaker_id).or_default().push(item);
    }
    let mut speakers = Vec::new();
    for agg in speaker_aggregate(&scored)? {
        let group = &by_speaker[agg.speaker_id.as_str()];
        let reference = group[0].reference;
        if group.iter().any(|i| i.reference != reference) {
            return Err(Error::invalid(
                "reference",
                alloc::format!("speaker {:?} has conflicting reference classes", agg.speaker_id),
            ));
        }
        let utt_scores: Vec<ClassScores> = group.iter().map(|i| i.scores.clone()).collect();
        let utt_pred: Vec<usize> = utt_scores.iter().map(ClassScores::argmax).collect();
        let percents: Vec<f64> = group.iter().filter_map(|i| i.reference_percent).collect();
        speakers.push(SpeakerRow {
            speaker_id: agg.speaker_id.clone(),
            n_utterances: agg.n_utterances,
            reference,
            predicted: agg.predicted,
            binarized_accuracy: binarized_accuracy(&utt_scores, (reference != 0) as usize)?,
            intelligibility_percent: match task {
                Task::FiveClass => Some(intelligibility_percent(&utt_pred, &options.class_map)?),
                Task::MildPlus => None,
            },
            reference_percent: (!percents.is_empty()).then(|| percents.iter().sum::<f64>() / percents.len() as f64),
        });
    }

    let intelligibility = (task == Task::FiveClass).then(|| {
        let (pred_pc, ref_pc): (Vec<f64>, Vec<f64>) = speakers
            .iter()
            .filter_map(|s| Some((s.intelligibility_percent?, s.reference_percent?)))
            .unzip();
        IntelligibilitySummary {
            class_map: options.class_map,
            map_strictly_decreasing: options.class_map.is_strictly_decreasing(),
            pearson: pearson(&pred_pc, &ref_pc).ok(),
        }
    });

    Ok(EvalReport {
        task,
        n_utterances: items.len(),
        accuracy: accuracy(&pred, &refs)?,
        macro_f1: macro_f1(&pred, &refs, k)?,
        mean_ovr_auc: auc.mean,
        per_class_auc: auc.per_class,
        speakers,
        slices: BTreeMap::new(),
        class_counts,
        intelligibility,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn onehot(k: usize, c: usize) -> ClassScores {
        let mut p = vec![0.0; k];
        p[c] = 1.0;
        ClassScores::new(p).unwrap()
    }

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&[0, 1, 1], &[0, 1, 2]).unwrap(), 2.0 / 3.0);
        assert_eq!(accuracy(&[1, 0], &[0, 1]).unwrap(), 0.0);
        assert!(accuracy(&[], &[]).is_err());
        assert!(accuracy(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn macro_f1_cases() {
        assert!((macro_f1(&[0, 0, 0, 0], &[0, 0, 1, 1], 2).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(macro_f1(&[3], &[3], 5).unwrap(), 1.0);
        assert_eq!(macro_f1(&[0, 2, 4], &[0, 2, 4], 5).unwrap(), 1.0);
    }

    #[test]
    fn auc_cases() {
        let pos = [true, true, false, false];
        assert_eq!(binary_auc(&[0.9, 0.8, 0.2, 0.1], &pos), Some(1.0));
        assert_eq!(binary_auc(&[0.5; 4], &pos), Some(0.5));
        assert_eq!(binary_auc(&[0.1, 0.2], &[true, true]), None);
    }

    #[test]
    fn single_class_slice_has_no_mean_auc() {
        let scores = [onehot(5, 2), onehot(5, 1)];
        let auc = ovr_auc(&scores, &[2, 2], 5).unwrap();
        assert_eq!(auc.mean, None);
        assert!(auc.per_class.iter().all(Option::is_none));
    }

    #[test]
    fn speaker_tie_goes_to_typical() {
        let utts = [
            ScoredUtterance {
                utterance_id: "b".into(),
                speaker_id: "s".into(),
                scores: onehot(5, 1),
            },
            ScoredUtterance {
                utterance_id: "a".into(),
                speaker_id: "s".into(),
                scores: onehot(5, 0),
            },
        ];
        let s = speaker_aggregate(&utts).unwrap();
        assert_eq!(s[0].mean.probs(), &[0.5, 0.5, 0.0, 0.0, 0.0]);
        assert_eq!(s[0].predicted, 0);
    }

    #[test]
    fn intelligibility_map() {
        let m = ClassMap::DEFAULT;
        assert_eq!(intelligibility_percent(&[0, 0], &m).unwrap(), 100.0);
        assert_eq!(intelligibility_percent(&[1, 1, 2], &m).unwrap(), 80.0);
        assert_eq!(intelligibility_percent(&[4], &m).unwrap(), 20.0);
        assert_eq!("100, 90,60,40,20".parse::<ClassMap>().unwrap(), m);
        assert!("1,2,3".parse::<ClassMap>().is_err());
        let flat = ClassMap([50.0; 5]);
        assert!(!flat.is_strictly_decreasing());
        assert_eq!(intelligibility_percent(&[3], &flat).unwrap(), 50.0);
    }

    #[test]
    fn binarized_accuracy_cases() {
        let typ = [onehot(5, 0), onehot(5, 0)];
        assert_eq!(binarized_accuracy(&typ, 0).unwrap(), 100.0);
        let mixed = [onehot(5, 0), onehot(5, 3)];
        assert_eq!(binarized_accuracy(&mixed, 1).unwrap(), 50.0);
    }

    #[test]
    fn pearson_cases() {
        let x = [1.0, 2.0, 3.0];
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        let y: Vec<f64> = x.iter().map(|v| -2.0 * v + 7.0).collect();
        assert!((pearson(&x, &y).unwrap() + 1.0).abs() < 1e-15);
        // Centred: (-1,0,1) and (-4/3,-1/3,5/3); r = 3 / sqrt(2 * 14/3).
        let r = pearson(&x, &[1.0, 2.0, 4.0]).unwrap();
        assert!((r - 3.0 / sqrt(28.0 / 3.0)).abs() < 1e-15);
        assert!((r - 0.98198).abs() < 1e-5);
        assert_eq!(pearson(&x, &[2.0; 3]), Err(Error::ZeroVariance("pearson y")));
    }

    #[test]
    fn report_with_slices() {
        let item = |u: &str, s: &str, r: usize, c: usize, slice: &str| EvalItem {
            utterance_id: u.into(),
            speaker_id: s.into(),
            reference: r,
            scores: onehot(5, c),
            slice: Some(slice.into()),
            reference_percent: None,
        };
        let items = [
            item("u1", "a", 0, 0, "control"),
            item("u2", "a", 0, 1, "control"),
            item("u3", "b", 3, 3, "als"),
            item("u4", "b", 3, 3, "als"),
        ];
        let r = evaluate(&items, Task::FiveClass, &EvalOptions::default()).unwrap();
        assert_eq!(r.accuracy, 0.75);
        assert_eq!(r.class_counts, vec![2, 0, 0, 2, 0]);
        assert_eq!(r.slices.keys().collect::<Vec<_>>(), ["als", "control"]);
        assert_eq!(r.slices["als"].mean_ovr_auc, None);
        assert_eq!(r.slices["als"].accuracy, 1.0);
        assert_eq!(r.speakers[0].intelligibility_percent, Some(95.0));
        assert_eq!(r.speakers[1].binarized_accuracy, 100.0);
    }
}
