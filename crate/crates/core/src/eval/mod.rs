//! Detection evaluation: greedy prediction/ground-truth matching and
//! 101-point interpolated average precision over a pooled ranking.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox, ScoredBox};

mod report;

pub use report::{
    aggregate_runs, diff_report, evaluate_run, load_run, render_table, EvalReport, Metric,
    MetricRow,
};

/// Predictions keyed by image id.
pub type ImagePredictions = BTreeMap<String, Vec<ScoredBox>>;
/// Ground-truth boxes keyed by image id.
pub type ImageGroundTruth = BTreeMap<String, Vec<BoundingBox>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApConfig {
    pub iou_thresholds: Vec<f64>,
    pub recall_levels: Vec<f64>,
}

impl Default for ApConfig {
    fn default() -> Self {
        Self {
            iou_thresholds: (0..10).map(|i| f64::from(50 + 5 * i) / 100.0).collect(),
            recall_levels: (0..=100).map(|i| f64::from(i) / 100.0).collect(),
        }
    }
}

impl ApConfig {
    pub fn validate(&self) -> Result<()> {
        let increasing = |v: &[f64]| v.windows(2).all(|w| w[0] < w[1]);
        if self.iou_thresholds.is_empty()
            || !increasing(&self.iou_thresholds)
            || self.iou_thresholds.iter().any(|&t| !(t > 0.0 && t <= 1.0))
        {
            return Err(Error::invalid(
                "iou_thresholds",
                "must be non-empty, strictly increasing and within (0, 1]",
            ));
        }
        if !increasing(&self.recall_levels)
            || self.recall_levels.first() != Some(&0.0)
            || self.recall_levels.last() != Some(&1.0)
        {
            return Err(Error::invalid(
                "recall_levels",
                "must be strictly increasing from 0 to 1",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    /// True-positive flag per prediction, in input order.
    pub tp: Vec<bool>,
    /// Ground-truth index claimed by each prediction.
    pub matched_gt: Vec<Option<usize>>,
    /// Ground truths left unmatched.
    pub false_negatives: usize,
}

impl MatchResult {
    pub fn true_positives(&self) -> usize {
        self.tp.iter().filter(|&&t| t).count()
    }

    pub fn false_positives(&self) -> usize {
        self.tp.len() - self.true_positives()
    }
}

/// Predictions in rank order claim the unmatched ground truth with the
/// highest IoU, provided it reaches `iou_threshold`.
pub fn match_predictions(preds: &[ScoredBox], gts: &[BoundingBox], iou_threshold: f64) -> MatchResult {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&i, &j| preds[i].rank_cmp(&preds[j]).then(i.cmp(&j)));
    let mut taken = vec![false; gts.len()];
    let mut tp = vec![false; preds.len()];
    let mut matched_gt = vec![None; preds.len()];
    for p in order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let v = iou(&preds[p].bbox, gt);
            if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            tp[p] = true;
            matched_gt[p] = Some(g);
        }
    }
    MatchResult {
        tp,
        matched_gt,
        false_negatives: taken.iter().filter(|&&t| !t).count(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApWarning {
    /// No ground truth at all; AP is reported as 0.
    NoGroundTruth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterpolatedAp {
    pub ap: f64,
    pub warning: Option<ApWarning>,
}

/// Measured `(recall, interpolated precision)` points along the ranked list.
/// The precision column is the running maximum from the right, so it is
/// non-increasing.
pub fn precision_envelope(ranked_tp: &[bool], total_gt: usize) -> Vec<(f64, f64)> {
    if total_gt == 0 {
        return Vec::new();
    }
    let mut tp = 0usize;
    let mut points: Vec<(f64, f64)> = ranked_tp
        .iter()
        .enumerate()
        .map(|(k, &hit)| {
            tp += usize::from(hit);
            (tp as f64 / total_gt as f64, tp as f64 / (k + 1) as f64)
        })
        .collect();
    for i in (0..points.len().saturating_sub(1)).rev() {
        points[i].1 = points[i].1.max(points[i + 1].1);
    }
    points
}

/// Mean of the interpolated precision over `recall_levels`, where the
/// interpolated precision at `r` is the best precision seen at any recall
/// `>= r` (0 if recall never gets there).
pub fn interpolated_ap(ranked_tp: &[bool], total_gt: usize, recall_levels: &[f64]) -> InterpolatedAp {
    if total_gt == 0 {
        return InterpolatedAp {
            ap: 0.0,
            warning: Some(ApWarning::NoGroundTruth),
        };
    }
    if recall_levels.is_empty() {
        return InterpolatedAp { ap: 0.0, warning: None };
    }
    let env = precision_envelope(ranked_tp, total_gt);
    let sum: f64 = recall_levels
        .iter()
        .map(|&r| {
            let i = env.partition_point(|&(rec, _)| rec < r);
            env.get(i).map_or(0.0, |&(_, p)| p)
        })
        .sum();
    InterpolatedAp {
        ap: sum / recall_levels.len() as f64,
        warning: None,
    }
}

/// Matches each image at `iou_threshold` and returns the TP flags of all
/// predictions pooled into one ranking, plus the ground-truth total.
/// Predictions on images without ground truth count as false positives.
pub fn pooled_ranking(
    preds: &ImagePredictions,
    gts: &ImageGroundTruth,
    iou_threshold: f64,
) -> (Vec<bool>, usize) {
    let total_gt = gts.values().map(Vec::len).sum();
    let mut ranked: Vec<(&str, ScoredBox, bool)> = Vec::new();
    for (image, boxes) in preds {
        let gt = gts.get(image).map(Vec::as_slice).unwrap_or(&[]);
        let m = match_predictions(boxes, gt, iou_threshold);
        ranked.extend(boxes.iter().zip(m.tp).map(|(b, t)| (image.as_str(), *b, t)));
    }
    ranked.sort_by(|a, b| a.1.rank_cmp(&b.1).then_with(|| a.0.cmp(b.0)).then(Ordering::Equal));
    (ranked.into_iter().map(|(_, _, t)| t).collect(), total_gt)
}

pub fn ap_at(preds: &ImagePredictions, gts: &ImageGroundTruth, iou_threshold: f64, cfg: &ApConfig) -> InterpolatedAp {
    let (ranked, total) = pooled_ranking(preds, gts, iou_threshold);
    interpolated_ap(&ranked, total, &cfg.recall_levels)
}

/// Mean of [`ap_at`] over every threshold in `cfg`.
pub fn ap_range(preds: &ImagePredictions, gts: &ImageGroundTruth, cfg: &ApConfig) -> InterpolatedAp {
    let mut warning = None;
    let sum: f64 = cfg
        .iou_thresholds
        .iter()
        .map(|&t| {
            let r = ap_at(preds, gts, t, cfg);
            warning = warning.or(r.warning);
            r.ap
        })
        .sum();
    InterpolatedAp {
        ap: sum / cfg.iou_thresholds.len().max(1) as f64,
        warning,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bb(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    fn sb(b: BoundingBox, c: f64) -> ScoredBox {
        ScoredBox::new(b, c).unwrap()
    }

    fn levels() -> Vec<f64> {
        ApConfig::default().recall_levels
    }

    #[test]
    fn default_config() {
        let c = ApConfig::default();
        c.validate().unwrap();
        assert_eq!(c.recall_levels.len(), 101);
        assert_eq!(c.iou_thresholds.len(), 10);
        assert_eq!(c.iou_thresholds[0], 0.5);
        assert_eq!(c.iou_thresholds[5], 0.75);
        assert_eq!(c.iou_thresholds[9], 0.95);
        assert!(ApConfig {
            iou_thresholds: vec![0.5, 0.5],
            ..ApConfig::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn matching_examples() {
        let g = bb(0.0, 0.0, 10.0, 10.0);
        let m = match_predictions(&[sb(g, 0.9)], &[g], 0.5);
        assert_eq!((m.true_positives(), m.false_positives(), m.false_negatives), (1, 0, 0));

        let m = match_predictions(&[sb(bb(0.0, 0.0, 10.0, 9.0), 0.6), sb(g, 0.8)], &[g], 0.5);
        assert_eq!(m.tp, vec![false, true]);

        let m = match_predictions(&[], &[g, g, g], 0.5);
        assert_eq!((m.true_positives(), m.false_negatives), (0, 3));
    }

    #[test]
    fn matching_prefers_highest_iou_gt() {
        let near = bb(0.0, 0.0, 10.0, 10.0);
        let far = bb(2.0, 0.0, 12.0, 10.0);
        let m = match_predictions(&[sb(bb(1.5, 0.0, 11.5, 10.0), 0.9)], &[near, far], 0.5);
        assert_eq!(m.matched_gt, vec![Some(1)]);
    }

    #[test]
    fn worked_example() {
        let r = interpolated_ap(&[true, false, true], 2, &levels());
        let expected = (51.0 + 50.0 * (2.0 / 3.0)) / 101.0;
        assert!((r.ap - expected).abs() < 1e-12);
        assert!((r.ap - 0.834983498349835).abs() < 1e-12);
    }

    #[test]
    fn trivial_cases() {
        assert_eq!(interpolated_ap(&[true, true, true], 3, &levels()).ap, 1.0);
        assert_eq!(interpolated_ap(&[], 3, &levels()).ap, 0.0);
        let r = interpolated_ap(&[], 0, &levels());
        assert_eq!((r.ap, r.warning), (0.0, Some(ApWarning::NoGroundTruth)));
        let r = interpolated_ap(&[false], 0, &levels());
        assert_eq!(r.warning, Some(ApWarning::NoGroundTruth));
    }

    #[test]
    fn identical_predictions_score_one_everywhere() {
        let gts: ImageGroundTruth = [("a".into(), vec![bb(0.0, 0.0, 5.0, 5.0), bb(10.0, 10.0, 20.0, 30.0)])].into();
        let preds: ImagePredictions = gts
            .iter()
            .map(|(k, v)| (k.clone(), v.iter().map(|b| sb(*b, 0.5)).collect()))
            .collect();
        let cfg = ApConfig::default();
        assert_eq!(ap_at(&preds, &gts, 0.75, &cfg).ap, 1.0);
        assert_eq!(ap_range(&preds, &gts, &cfg).ap, 1.0);
        assert_eq!(ap_range(&ImagePredictions::new(), &gts, &cfg).ap, 0.0);
    }

    #[test]
    fn shrunk_boxes_fail_at_075() {
        // area ratio 0.6 => IoU 0.6
        let g = bb(0.0, 0.0, 10.0, 10.0);
        let p = bb(0.0, 0.0, 10.0, 6.0);
        assert!((iou(&g, &p) - 0.6).abs() < 1e-15);
        let gts: ImageGroundTruth = [("a".into(), vec![g])].into();
        let preds: ImagePredictions = [("a".into(), vec![sb(p, 0.9)])].into();
        let cfg = ApConfig::default();
        assert_eq!(ap_at(&preds, &gts, 0.75, &cfg).ap, 0.0);
        assert_eq!(ap_at(&preds, &gts, 0.5, &cfg).ap, 1.0);
    }

    #[test]
    fn pooling_orders_across_images() {
        let g = bb(0.0, 0.0, 4.0, 4.0);
        let gts: ImageGroundTruth = [("a".into(), vec![g]), ("b".into(), vec![g])].into();
        let preds: ImagePredictions = [
            ("a".into(), vec![sb(g, 0.3)]),
            ("b".into(), vec![sb(bb(50.0, 50.0, 60.0, 60.0), 0.9), sb(g, 0.8)]),
            ("c".into(), vec![sb(g, 0.1)]),
        ]
        .into();
        let (ranked, total) = pooled_ranking(&preds, &gts, 0.5);
        assert_eq!(ranked, vec![false, true, true, false]);
        assert_eq!(total, 2);
    }

    /// Independent oracle: recall comparison in integers, precision maximum
    /// by direct scan of every prefix.
    fn oracle_ap(flags: &[bool], total_gt: usize) -> f64 {
        if total_gt == 0 {
            return 0.0;
        }
        let mut sum = 0.0;
        for level in 0..=100usize {
            let mut best = 0.0f64;
            for k in 1..=flags.len() {
                let tp = flags[..k].iter().filter(|&&f| f).count();
                if tp * 100 >= level * total_gt {
                    best = best.max(tp as f64 / k as f64);
                }
            }
            sum += best;
        }
        sum / 101.0
    }

    fn arb_flags() -> impl Strategy<Value = (Vec<bool>, usize)> {
        prop::collection::vec(any::<bool>(), 0..=6).prop_flat_map(|f| {
            let tp = f.iter().filter(|&&x| x).count();
            (Just(f), tp.max(1)..=4usize.max(tp))
        })
    }

    fn arb_scene() -> impl Strategy<Value = (Vec<ScoredBox>, Vec<BoundingBox>)> {
        let b = (0u8..12, 0u8..12, 1u8..8, 1u8..8)
            .prop_map(|(x, y, w, h)| bb(f64::from(x), f64::from(y), f64::from(x + w), f64::from(y + h)));
        (
            prop::collection::vec((b.clone(), 0u8..=10), 0..=6)
                .prop_map(|v| v.into_iter().map(|(b, c)| sb(b, f64::from(c) / 10.0)).collect()),
            prop::collection::vec(b, 0..=4),
        )
    }

    proptest! {
        #[test]
        fn matches_oracle((flags, total) in arb_flags()) {
            let got = interpolated_ap(&flags, total, &levels()).ap;
            prop_assert!((got - oracle_ap(&flags, total)).abs() < 1e-12);
        }

        #[test]
        fn envelope_non_increasing((flags, total) in arb_flags()) {
            let env = precision_envelope(&flags, total);
            prop_assert!(env.windows(2).all(|w| w[0].1 >= w[1].1 && w[0].0 <= w[1].0));
        }

        #[test]
        fn match_invariants((preds, gts) in arb_scene(), t in 0.05..1.0f64) {
            let m = match_predictions(&preds, &gts, t);
            prop_assert!(m.true_positives() <= preds.len().min(gts.len()));
            prop_assert_eq!(m.true_positives() + m.false_negatives, gts.len());
            let mut claimed: Vec<_> = m.matched_gt.iter().flatten().collect();
            let n = claimed.len();
            claimed.sort();
            claimed.dedup();
            prop_assert_eq!(claimed.len(), n);
        }

        #[test]
        fn monotone_confidence_transform_invariant((preds, gts) in arb_scene()) {
            let cfg = ApConfig::default();
            let p: ImagePredictions = [("x".to_string(), preds.clone())].into();
            let q: ImagePredictions = [("x".to_string(), preds.iter().map(|s| sb(s.bbox, s.confidence.powi(3) * 0.5)).collect())].into();
            let g: ImageGroundTruth = [("x".to_string(), gts)].into();
            for &t in &cfg.iou_thresholds {
                prop_assert_eq!(ap_at(&p, &g, t, &cfg).ap, ap_at(&q, &g, t, &cfg).ap);
            }
        }

        #[test]
        fn non_increasing_in_threshold((preds, gts) in arb_scene()) {
            let cfg = ApConfig::default();
            let p: ImagePredictions = [("x".to_string(), preds)].into();
            let g: ImageGroundTruth = [("x".to_string(), gts)].into();
            let aps: Vec<f64> = cfg.iou_thresholds.iter().map(|&t| ap_at(&p, &g, t, &cfg).ap).collect();
            prop_assert!(aps.windows(2).all(|w| w[0] >= w[1] - 1e-15), "{:?}", aps);
        }
    }
}
