//! Detection and tracking quality against ground truth: TP/FP/FN counts from
//! per-frame IoU matching, precision/recall/F1, and identity switches.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;
use thiserror::Error;

use crate::geometry::{iou, BBoxCorners};
use crate::io::BoxRow;
use crate::tracker::hungarian_min_cost;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("frames not aligned: {0}")]
    Alignment(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl std::ops::AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

/// Precision, recall and F1, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    /// Each value rounded to two decimals, as reported.
    pub fn rounded(&self) -> Prf {
        let r = |v: f64| (v * 100.0).round() / 100.0;
        Prf {
            precision: r(self.precision),
            recall: r(self.recall),
            f1: r(self.f1),
        }
    }
}

pub fn prf(c: ConfusionCounts) -> Result<Prf, EvalError> {
    if c.tp + c.fp == 0 {
        return Err(EvalError::UndefinedMetric("precision needs tp + fp > 0".into()));
    }
    if c.tp + c.fn_ == 0 {
        return Err(EvalError::UndefinedMetric("recall needs tp + fn > 0".into()));
    }
    let p = c.tp as f64 / (c.tp + c.fp) as f64;
    let r = c.tp as f64 / (c.tp + c.fn_) as f64;
    let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    Ok(Prf {
        precision: 100.0 * p,
        recall: 100.0 * r,
        f1: 100.0 * f1,
    })
}

/// A box with an optional track identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledBox {
    pub id: Option<u64>,
    pub bbox: BBoxCorners,
}

/// Boxes keyed by frame index.
pub type FrameBoxes = BTreeMap<u64, Vec<LabeledBox>>;

/// Groups table rows by frame. Rows marked invisible are left out.
pub fn frames_from_rows(rows: &[BoxRow]) -> FrameBoxes {
    let mut out = FrameBoxes::new();
    for r in rows {
        let e = out.entry(r.frame).or_default();
        if r.visible {
            e.push(LabeledBox { id: r.id, bbox: r.bbox });
        }
    }
    out
}

/// Optimal one-to-one matching maximising total IoU among pairs with
/// `iou >= iou_match`. Returns `(truth index, prediction index)` pairs.
pub fn match_frame(truth: &[BBoxCorners], pred: &[BBoxCorners], iou_match: f64) -> Vec<(usize, usize)> {
    if truth.is_empty() || pred.is_empty() {
        return Vec::new();
    }
    // pairs below the threshold cost more than any eligible pair
    let ious: Vec<Vec<f64>> = truth.iter().map(|t| pred.iter().map(|p| iou(t, p)).collect()).collect();
    let cost: Vec<Vec<f64>> = ious
        .iter()
        .map(|row| row.iter().map(|&v| if v >= iou_match { 1.0 - v } else { 2.0 }).collect())
        .collect();
    hungarian_min_cost(&cost)
        .unwrap_or_default()
        .into_iter()
        .filter(|&(i, j)| ious[i][j] >= iou_match)
        .collect()
}

fn check_alignment(truth: &FrameBoxes, pred: &FrameBoxes) -> Result<(), EvalError> {
    let (Some(first), Some(last)) = (truth.keys().next(), truth.keys().next_back()) else {
        if let Some(f) = pred.keys().next() {
            return Err(EvalError::Alignment(format!("prediction frame {f} but no ground truth")));
        }
        return Ok(());
    };
    if let Some(f) = pred.keys().find(|f| *f < first || *f > last) {
        return Err(EvalError::Alignment(format!(
            "prediction frame {f} outside ground-truth frames {first}..={last}"
        )));
    }
    Ok(())
}

/// One matched pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedPair {
    pub frame: u64,
    pub truth_id: Option<u64>,
    pub pred_id: Option<u64>,
}

fn count_frame(t: &[LabeledBox], p: &[LabeledBox], iou_match: f64, frame: u64, pairs: &mut Vec<MatchedPair>) -> ConfusionCounts {
    let tb: Vec<BBoxCorners> = t.iter().map(|b| b.bbox).collect();
    let pb: Vec<BBoxCorners> = p.iter().map(|b| b.bbox).collect();
    let m = match_frame(&tb, &pb, iou_match);
    pairs.extend(m.iter().map(|&(i, j)| MatchedPair {
        frame,
        truth_id: t[i].id,
        pred_id: p[j].id,
    }));
    ConfusionCounts {
        tp: m.len() as u64,
        fp: (p.len() - m.len()) as u64,
        fn_: (t.len() - m.len()) as u64,
    }
}

/// Sums TP/FP/FN over frames. A frame missing from `pred` has no
/// predictions; a prediction frame outside the ground-truth range is an
/// alignment error.
pub fn match_and_count(truth: &FrameBoxes, pred: &FrameBoxes, iou_match: f64) -> Result<ConfusionCounts, EvalError> {
    evaluate(truth, pred, iou_match, None).map(|r| r.counts)
}

/// Counts frames where a ground-truth object's matched predicted identity
/// differs from its previous matched identity. Pairs without both ids are
/// ignored.
pub fn id_switches(pairs: &[MatchedPair]) -> u64 {
    let mut sorted: Vec<&MatchedPair> = pairs.iter().collect();
    sorted.sort_by_key(|p| p.frame);
    let mut last: HashMap<u64, u64> = HashMap::new();
    let mut switches = 0;
    for p in sorted {
        let (Some(t), Some(q)) = (p.truth_id, p.pred_id) else { continue };
        if let Some(prev) = last.insert(t, q) {
            if prev != q {
                switches += 1;
            }
        }
    }
    switches
}

#[derive(Debug, Clone, Serialize)]
pub struct BucketReport {
    pub index: u64,
    pub first_frame: u64,
    pub last_frame: u64,
    pub counts: ConfusionCounts,
    pub metrics: Option<Prf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub iou_match: f64,
    pub counts: ConfusionCounts,
    /// `None` when a denominator is zero.
    pub metrics: Option<Prf>,
    pub buckets: Vec<BucketReport>,
    /// Present when both sides carry track ids.
    pub id_switches: Option<u64>,
    #[serde(skip)]
    pub pairs: Vec<MatchedPair>,
}

/// Full evaluation. With `bucket_frames`, counts are also split into
/// consecutive buckets of that many frames (by frame index).
pub fn evaluate(
    truth: &FrameBoxes,
    pred: &FrameBoxes,
    iou_match: f64,
    bucket_frames: Option<u64>,
) -> Result<EvalReport, EvalError> {
    check_alignment(truth, pred)?;
    let empty = Vec::new();
    let mut counts = ConfusionCounts::default();
    let mut pairs = Vec::new();
    let mut by_bucket: BTreeMap<u64, ConfusionCounts> = BTreeMap::new();
    let frames: std::collections::BTreeSet<u64> = truth.keys().chain(pred.keys()).copied().collect();
    for frame in frames {
        let t = truth.get(&frame).unwrap_or(&empty);
        let p = pred.get(&frame).unwrap_or(&empty);
        let c = count_frame(t, p, iou_match, frame, &mut pairs);
        counts += c;
        if let Some(n) = bucket_frames.filter(|&n| n > 0) {
            *by_bucket.entry(frame / n).or_default() += c;
        }
    }
    let buckets = by_bucket
        .into_iter()
        .map(|(index, c)| {
            let n = bucket_frames.unwrap_or(1);
            BucketReport {
                index,
                first_frame: index * n,
                last_frame: index * n + n - 1,
                counts: c,
                metrics: prf(c).ok(),
            }
        })
        .collect();
    let has_ids = |f: &FrameBoxes| f.values().flatten().next().is_some_and(|b| b.id.is_some());
    let id_sw = (has_ids(truth) && has_ids(pred)).then(|| id_switches(&pairs));
    Ok(EvalReport {
        iou_match,
        counts,
        metrics: prf(counts).ok(),
        buckets,
        id_switches: id_sw,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x: f64, y: f64) -> BBoxCorners {
        BBoxCorners::new(x, y, x + 10.0, y + 10.0).unwrap()
    }

    type Listing = (u64, Vec<(Option<u64>, BBoxCorners)>);

    fn frames(list: &[Listing]) -> FrameBoxes {
        list.iter()
            .map(|(f, v)| (*f, v.iter().map(|&(id, bbox)| LabeledBox { id, bbox }).collect()))
            .collect()
    }

    #[test]
    fn table_counts() {
        let m = prf(ConfusionCounts { tp: 2956, fp: 52, fn_: 406 }).unwrap().rounded();
        assert_eq!(m.precision, 98.27);
        // the raw counts give 87.92 / 92.81
        assert!((m.recall - 87.93).abs() <= 0.01 + 1e-9);
        assert_eq!(m.f1, 92.81);
    }

    #[test]
    fn trivial_prf() {
        let m = prf(ConfusionCounts { tp: 5, fp: 0, fn_: 0 }).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (100.0, 100.0, 100.0));
        let m = prf(ConfusionCounts { tp: 1, fp: 1, fn_: 1 }).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (50.0, 50.0, 50.0));
        assert!(matches!(prf(ConfusionCounts::default()), Err(EvalError::UndefinedMetric(_))));
        assert!(prf(ConfusionCounts { tp: 0, fp: 0, fn_: 3 }).is_err());
    }

    #[test]
    fn two_correct_one_spurious() {
        let truth = frames(&[(0, vec![(None, b(0.0, 0.0)), (None, b(50.0, 0.0)), (None, b(100.0, 0.0))])]);
        let pred = frames(&[(0, vec![(None, b(1.0, 0.0)), (None, b(50.0, 1.0)), (None, b(300.0, 300.0))])]);
        let c = match_and_count(&truth, &pred, 0.5).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 2, fp: 1, fn_: 1 });
    }

    #[test]
    fn no_predictions_and_alignment() {
        let truth = frames(&[(0, vec![(None, b(0.0, 0.0))]), (1, vec![(None, b(0.0, 0.0)), (None, b(40.0, 0.0))])]);
        let c = match_and_count(&truth, &FrameBoxes::new(), 0.5).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 0, fp: 0, fn_: 3 });
        let pred = frames(&[(9, vec![(None, b(0.0, 0.0))])]);
        assert!(matches!(match_and_count(&truth, &pred, 0.5), Err(EvalError::Alignment(_))));
    }

    #[test]
    fn switches() {
        let pair = |frame, t, p| MatchedPair { frame, truth_id: Some(t), pred_id: Some(p) };
        assert_eq!(id_switches(&[pair(0, 1, 5), pair(1, 1, 5), pair(2, 1, 5)]), 0);
        assert_eq!(id_switches(&[pair(0, 1, 5), pair(1, 1, 5), pair(2, 1, 6), pair(3, 1, 6)]), 1);
        // order of the input does not matter
        assert_eq!(id_switches(&[pair(3, 1, 6), pair(0, 1, 5), pair(2, 1, 6), pair(1, 1, 5)]), 1);
    }

    #[test]
    fn buckets_split_by_frame() {
        let truth = frames(&[(0, vec![(None, b(0.0, 0.0))]), (450, vec![(None, b(0.0, 0.0))])]);
        let pred = frames(&[(0, vec![(None, b(0.0, 0.0))])]);
        let r = evaluate(&truth, &pred, 0.5, Some(450)).unwrap();
        assert_eq!(r.buckets.len(), 2);
        assert_eq!(r.buckets[0].counts.tp, 1);
        assert_eq!(r.buckets[1].counts.fn_, 1);
        assert!(r.id_switches.is_none());
    }

    fn arb_frames() -> impl Strategy<Value = FrameBoxes> {
        proptest::collection::btree_map(
            0u64..40,
            proptest::collection::vec((0.0..200.0f64, 0.0..200.0f64, 1.0..40.0f64, 1.0..40.0f64), 0..6),
            1..10,
        )
        .prop_map(|m| {
            m.into_iter()
                .map(|(f, v)| {
                    let boxes = v
                        .into_iter()
                        .map(|(x, y, w, h)| LabeledBox { id: None, bbox: BBoxCorners::new(x, y, x + w, y + h).unwrap() })
                        .collect();
                    (f, boxes)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn self_match_is_perfect(truth in arb_frames()) {
            let c = match_and_count(&truth, &truth, 0.5).unwrap();
            prop_assert_eq!(c.fp, 0);
            prop_assert_eq!(c.fn_, 0);
            prop_assert_eq!(c.tp as usize, truth.values().map(Vec::len).sum::<usize>());
        }

        #[test]
        fn permutation_invariant(truth in arb_frames(), pred in arb_frames(), seed in any::<u64>()) {
            // keep predictions inside the truth range
            let lo = *truth.keys().next().unwrap();
            let hi = *truth.keys().next_back().unwrap();
            let pred: FrameBoxes = pred.into_iter().filter(|(f, _)| *f >= lo && *f <= hi).collect();
            let c = match_and_count(&truth, &pred, 0.5).unwrap();
            // shuffle boxes inside each frame
            let shuffle = |m: &FrameBoxes| -> FrameBoxes {
                m.iter().map(|(f, v)| {
                    let mut v = v.clone();
                    let k = (seed as usize).wrapping_add(*f as usize) % v.len().max(1);
                    v.rotate_left(k);
                    v.reverse();
                    (*f, v)
                }).collect()
            };
            prop_assert_eq!(match_and_count(&shuffle(&truth), &shuffle(&pred), 0.5).unwrap(), c);
            let total_t: u64 = truth.values().map(|v| v.len() as u64).sum();
            let total_p: u64 = pred.values().map(|v| v.len() as u64).sum();
            prop_assert_eq!(c.tp + c.fn_, total_t);
            prop_assert_eq!(c.tp + c.fp, total_p);
        }
    }
}
