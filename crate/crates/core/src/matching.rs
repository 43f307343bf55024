//! Matching cost between predicted and groundtruth tuples and the optimal
//! bipartite assignment minimizing its sum over the set.
//!
//! Only the class probability and bounding box enter the cost; keypoints,
//! translation, and pose are supervised through the losses after matching.

use alloc::vec;
use alloc::vec::Vec;

use crate::geometry::{giou, BoxCxcywh, KeypointSet2D, Pose, TranslationCode};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MatchingError {
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
}

/// Matching-cost weights; these reuse the box-loss weights and weigh the
/// class term by raw probability.
pub const COST_WEIGHT_BOX_L1: f64 = 5.0;
pub const COST_WEIGHT_GIOU: f64 = 2.0;

/// Geometry carried by a real (non-null) target.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetGeometry {
    /// Box in normalized cxcywh.
    pub bbox: BoxCxcywh,
    pub translation: TranslationCode,
    /// Keypoints in image-normalized units.
    pub keypoints: KeypointSet2D,
    pub pose: Pose,
    /// Index into the caller's model-cloud registry.
    pub model: usize,
}

/// One element of the groundtruth set. Null (no-object) padding carries a
/// class id but no geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetTuple {
    pub class_id: usize,
    pub geometry: Option<TargetGeometry>,
}

impl TargetTuple {
    pub fn object(class_id: usize, geometry: TargetGeometry) -> Self {
        Self {
            class_id,
            geometry: Some(geometry),
        }
    }

    pub fn null(null_class_id: usize) -> Self {
        Self {
            class_id: null_class_id,
            geometry: None,
        }
    }

    pub fn is_null(&self) -> bool {
        self.geometry.is_none()
    }
}

/// One element of the predicted set, in plain (detached) numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTuple {
    /// Length C+1; the last entry is the no-object class.
    pub class_logits: Vec<f64>,
    pub bbox: BoxCxcywh,
    pub translation: TranslationCode,
    pub keypoints: KeypointSet2D,
}

impl PredictionTuple {
    /// Numerically stable softmax over the logits; sums to 1.
    pub fn class_probs(&self) -> Vec<f64> {
        softmax(&self.class_logits)
    }

    pub fn predicted_class(&self) -> usize {
        let mut best = 0;
        for (i, l) in self.class_logits.iter().enumerate() {
            if *l > self.class_logits[best] {
                best = i;
            }
        }
        best
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut max = f64::NEG_INFINITY;
    for l in logits {
        max = max.max(*l);
    }
    let mut out: Vec<f64> = logits.iter().map(|l| libm::exp(l - max)).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// `−p̂(class) + 5·‖box − box̂‖₁ + 2·(1 − GIoU)`, defined for real targets.
pub fn matching_cost(pred: &PredictionTuple, target: &TargetTuple) -> Result<f64, MatchingError> {
    let geom = target
        .geometry
        .as_ref()
        .ok_or(MatchingError::InvalidArgument(
            "matching cost is undefined for null targets",
        ))?;
    let probs = pred.class_probs();
    let p = probs
        .get(target.class_id)
        .copied()
        .ok_or(MatchingError::InvalidArgument("target class out of range"))?;
    let g = giou(&pred.bbox, &geom.bbox)
        .map_err(|_| MatchingError::InvalidArgument("boxes must have positive extents"))?;
    Ok(-p + COST_WEIGHT_BOX_L1 * pred.bbox.l1_to(&geom.bbox) + COST_WEIGHT_GIOU * (1.0 - g))
}

/// Dense `n_pred × n_target` cost matrix, stored prediction-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    n_pred: usize,
    n_target: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(n_pred: usize, n_target: usize, data: Vec<f64>) -> Result<Self, MatchingError> {
        if data.len() != n_pred * n_target {
            return Err(MatchingError::InvalidArgument("cost matrix size mismatch"));
        }
        if data.iter().any(|c| !c.is_finite()) {
            return Err(MatchingError::InvalidArgument(
                "cost matrix entries must be finite",
            ));
        }
        Ok(Self {
            n_pred,
            n_target,
            data,
        })
    }

    pub fn n_pred(&self) -> usize {
        self.n_pred
    }

    pub fn n_target(&self) -> usize {
        self.n_target
    }

    pub fn at(&self, pred: usize, target: usize) -> f64 {
        self.data[pred * self.n_target + target]
    }
}

/// The optimal assignment: a map target index → prediction index plus the
/// predictions left unmatched (implicitly assigned to the null class).
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub target_to_pred: Vec<usize>,
    pub unmatched_preds: Vec<usize>,
    pub total_cost: f64,
}

impl Assignment {
    pub fn empty(n_pred: usize) -> Self {
        Self {
            target_to_pred: vec![],
            unmatched_preds: (0..n_pred).collect(),
            total_cost: 0.0,
        }
    }

    /// Inverse view: prediction index → matched target index.
    pub fn pred_to_target(&self, n_pred: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; n_pred];
        for (t, &p) in self.target_to_pred.iter().enumerate() {
            out[p] = Some(t);
        }
        out
    }
}

/// Kuhn–Munkres via shortest augmenting paths with potentials, O(n²m).
/// Deterministic: column scans run in index order and ties keep the lowest
/// index, so results are identical across runs and platforms.
pub fn hungarian(costs: &CostMatrix) -> Result<Assignment, MatchingError> {
    let n = costs.n_target();
    let m = costs.n_pred();
    if m < n {
        return Err(MatchingError::InvalidArgument(
            "need at least as many predictions as targets",
        ));
    }
    if n == 0 {
        return Ok(Assignment::empty(m));
    }

    // 1-indexed potentials; `col_to_row[j] = 0` means column j is free.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut col_to_row = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        col_to_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = col_to_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if !used[j] {
                    let cur = costs.at(j - 1, i0 - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[col_to_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_to_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_to_row[j0] = col_to_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut target_to_pred = vec![usize::MAX; n];
    for j in 1..=m {
        if col_to_row[j] != 0 {
            target_to_pred[col_to_row[j] - 1] = j - 1;
        }
    }
    debug_assert!(target_to_pred.iter().all(|&p| p != usize::MAX));
    let mut total = 0.0;
    for (t, &p) in target_to_pred.iter().enumerate() {
        total += costs.at(p, t);
    }
    let matched: Vec<usize> = target_to_pred.clone();
    let unmatched_preds = (0..m).filter(|p| !matched.contains(p)).collect();
    Ok(Assignment {
        target_to_pred,
        unmatched_preds,
        total_cost: total,
    })
}

/// Builds the cost matrix over the real (non-null) targets and solves the
/// assignment. Target indices in the result refer to positions in the
/// original `targets` slice.
pub fn match_sets(
    preds: &[PredictionTuple],
    targets: &[TargetTuple],
) -> Result<Assignment, MatchingError> {
    let real: Vec<usize> = targets
        .iter()
        .enumerate()
        .filter(|(_, t)| !t.is_null())
        .map(|(i, _)| i)
        .collect();
    if real.is_empty() {
        return Ok(Assignment::empty(preds.len()));
    }
    if preds.len() < real.len() {
        return Err(MatchingError::InvalidArgument(
            "need at least as many predictions as targets",
        ));
    }
    let mut data = Vec::with_capacity(preds.len() * real.len());
    for p in preds {
        for &t in &real {
            data.push(matching_cost(p, &targets[t])?);
        }
    }
    let costs = CostMatrix::new(preds.len(), real.len(), data)?;
    let dense = hungarian(&costs)?;
    // Remap compacted target indices onto the original slice.
    let mut target_to_pred = vec![usize::MAX; targets.len()];
    let mut matched = Vec::new();
    for (k, &orig) in real.iter().enumerate() {
        target_to_pred[orig] = dense.target_to_pred[k];
        matched.push(dense.target_to_pred[k]);
    }
    // Null targets keep usize::MAX and are filtered here.
    let target_to_pred: Vec<usize> = targets
        .iter()
        .enumerate()
        .map(|(i, t)| if t.is_null() { usize::MAX } else { target_to_pred[i] })
        .collect();
    let unmatched_preds = (0..preds.len()).filter(|p| !matched.contains(p)).collect();
    Ok(Assignment {
        target_to_pred,
        unmatched_preds,
        total_cost: dense.total_cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::KeypointKind;
    use crate::rng::SeedStream;

    fn brute_force_min(costs: &CostMatrix) -> f64 {
        // Enumerates every injection target → prediction; totals accumulate
        // left-to-right in target order, matching `hungarian`'s summation.
        fn rec(costs: &CostMatrix, t: usize, used: &mut [bool], acc: f64, best: &mut f64) {
            if t == costs.n_target() {
                if acc < *best {
                    *best = acc;
                }
                return;
            }
            for p in 0..costs.n_pred() {
                if !used[p] {
                    used[p] = true;
                    rec(costs, t + 1, used, acc + costs.at(p, t), best);
                    used[p] = false;
                }
            }
        }
        let mut used = vec![false; costs.n_pred()];
        let mut best = f64::INFINITY;
        rec(costs, 0, &mut used, 0.0, &mut best);
        best
    }

    fn dummy_kps() -> KeypointSet2D {
        KeypointSet2D::from_parts(KeypointKind::Bb8, vec![[0.5, 0.5]; 8], vec![])
    }

    fn pred(logits: Vec<f64>, bbox: BoxCxcywh) -> PredictionTuple {
        PredictionTuple {
            class_logits: logits,
            bbox,
            translation: TranslationCode::new(0.5, 0.5, 1.0),
            keypoints: dummy_kps(),
        }
    }

    fn target(class_id: usize, bbox: BoxCxcywh) -> TargetTuple {
        TargetTuple::object(
            class_id,
            TargetGeometry {
                bbox,
                translation: TranslationCode::new(0.5, 0.5, 1.0),
                keypoints: dummy_kps(),
                pose: Pose::new(
                    crate::geometry::Rotation::IDENTITY,
                    crate::linalg::Vec3::new(0.0, 0.0, 1.0),
                ),
                model: 0,
            },
        )
    }

    #[test]
    fn perfect_prediction_costs_minus_one() {
        let b = BoxCxcywh::new(0.5, 0.5, 0.2, 0.2);
        let mut logits = vec![0.0; 6];
        logits[2] = 40.0; // softmax ≈ 1 on the target class
        let c = matching_cost(&pred(logits, b), &target(2, b)).unwrap();
        assert!((c + 1.0).abs() < 1e-12, "{c}");
    }

    #[test]
    fn cost_matches_formula_parts() {
        let mut s = SeedStream::new(3, "match-cost");
        for _ in 0..100 {
            let pb = BoxCxcywh::new(s.range(0.2, 0.8), s.range(0.2, 0.8), s.range(0.05, 0.4), s.range(0.05, 0.4));
            let tb = BoxCxcywh::new(s.range(0.2, 0.8), s.range(0.2, 0.8), s.range(0.05, 0.4), s.range(0.05, 0.4));
            let logits: Vec<f64> = (0..6).map(|_| s.range(-2.0, 2.0)).collect();
            let p = pred(logits.clone(), pb);
            let t = target(3, tb);
            let expect = -softmax(&logits)[3]
                + 5.0 * pb.l1_to(&tb)
                + 2.0 * (1.0 - giou(&pb, &tb).unwrap());
            let got = matching_cost(&p, &t).unwrap();
            assert!((got - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn keypoints_and_translation_do_not_affect_cost() {
        let b = BoxCxcywh::new(0.5, 0.5, 0.2, 0.2);
        let t = target(1, b);
        let mut p = pred(vec![0.1, 0.9, -0.3, 0.0, 0.2, 0.4], b);
        let base = matching_cost(&p, &t).unwrap();
        p.translation = TranslationCode::new(0.1, 0.9, 3.0);
        p.keypoints = KeypointSet2D::from_parts(KeypointKind::Bb8, vec![[0.9, 0.1]; 8], vec![]);
        assert_eq!(matching_cost(&p, &t).unwrap(), base);
    }

    #[test]
    fn null_target_is_invalid() {
        let b = BoxCxcywh::new(0.5, 0.5, 0.2, 0.2);
        let p = pred(vec![0.0; 6], b);
        assert!(matching_cost(&p, &TargetTuple::null(5)).is_err());
    }

    #[test]
    fn two_by_two_example() {
        // cost[pred][target] = [[1,2],[2,4]] → (t0→p1, t1→p0), total 4
        let costs = CostMatrix::new(2, 2, vec![1.0, 2.0, 2.0, 4.0]).unwrap();
        let a = hungarian(&costs).unwrap();
        assert_eq!(a.target_to_pred, vec![1, 0]);
        assert_eq!(a.total_cost, 4.0);
    }

    #[test]
    fn diagonal_zeros_give_identity() {
        let n = 5;
        let mut data = vec![1.0; n * n];
        for i in 0..n {
            data[i * n + i] = 0.0;
        }
        let costs = CostMatrix::new(n, n, data).unwrap();
        let a = hungarian(&costs).unwrap();
        assert_eq!(a.target_to_pred, (0..n).collect::<Vec<_>>());
        assert_eq!(a.total_cost, 0.0);
    }

    #[test]
    fn rectangular_matches_brute_force() {
        let mut s = SeedStream::new(11, "hungarian");
        for trial in 0..200 {
            let nt = 1 + (trial % 6);
            let np = nt + s.below(8);
            let data: Vec<f64> = (0..np * nt).map(|_| s.range(-5.0, 5.0)).collect();
            let costs = CostMatrix::new(np, nt, data).unwrap();
            let a = hungarian(&costs).unwrap();
            let bf = brute_force_min(&costs);
            assert_eq!(a.total_cost, bf, "trial {trial}: {} vs {bf}", a.total_cost);
            // Assignment is injective and covers all targets.
            let mut seen = vec![false; np];
            for &p in &a.target_to_pred {
                assert!(!seen[p]);
                seen[p] = true;
            }
            assert_eq!(a.unmatched_preds.len(), np - nt);
        }
    }

    #[test]
    fn twenty_by_three_matches_brute_force() {
        let mut s = SeedStream::new(21, "hungarian-20x3");
        let data: Vec<f64> = (0..20 * 3).map(|_| s.range(0.0, 10.0)).collect();
        let costs = CostMatrix::new(20, 3, data).unwrap();
        let a = hungarian(&costs).unwrap();
        assert_eq!(a.total_cost, brute_force_min(&costs));
    }

    #[test]
    fn constant_shift_keeps_assignment() {
        let mut s = SeedStream::new(31, "hungarian-shift");
        for _ in 0..50 {
            let (np, nt) = (6, 4);
            let data: Vec<f64> = (0..np * nt).map(|_| s.range(-1.0, 1.0)).collect();
            let shifted: Vec<f64> = data.iter().map(|c| c + 3.7).collect();
            let a = hungarian(&CostMatrix::new(np, nt, data).unwrap()).unwrap();
            let b = hungarian(&CostMatrix::new(np, nt, shifted).unwrap()).unwrap();
            assert_eq!(a.target_to_pred, b.target_to_pred);
        }
    }

    #[test]
    fn permuting_predictions_permutes_assignment() {
        let mut s = SeedStream::new(41, "hungarian-perm");
        let (np, nt) = (7, 5);
        let data: Vec<f64> = (0..np * nt).map(|_| s.range(-2.0, 2.0)).collect();
        let costs = CostMatrix::new(np, nt, data.clone()).unwrap();
        let a = hungarian(&costs).unwrap();

        let mut perm: Vec<usize> = (0..np).collect();
        s.shuffle(&mut perm);
        let mut pdata = vec![0.0; np * nt];
        for (new_p, &old_p) in perm.iter().enumerate() {
            pdata[new_p * nt..(new_p + 1) * nt]
                .copy_from_slice(&data[old_p * nt..(old_p + 1) * nt]);
        }
        let b = hungarian(&CostMatrix::new(np, nt, pdata).unwrap()).unwrap();
        // total cost is permutation invariant
        assert!((a.total_cost - b.total_cost).abs() < 1e-12);
        for t in 0..nt {
            assert_eq!(perm[b.target_to_pred[t]], a.target_to_pred[t]);
        }
    }

    #[test]
    fn fewer_predictions_than_targets_is_invalid() {
        let costs = CostMatrix::new(2, 3, vec![0.0; 6]).unwrap();
        assert!(hungarian(&costs).is_err());
    }

    #[test]
    fn match_sets_zero_targets() {
        let b = BoxCxcywh::new(0.5, 0.5, 0.2, 0.2);
        let preds = vec![pred(vec![0.0; 6], b); 4];
        let a = match_sets(&preds, &[]).unwrap();
        assert!(a.target_to_pred.is_empty());
        assert_eq!(a.unmatched_preds, vec![0, 1, 2, 3]);
    }

    #[test]
    fn match_sets_picks_minimum_cost_prediction() {
        let tb = BoxCxcywh::new(0.5, 0.5, 0.2, 0.2);
        let t = target(1, tb);
        let mut preds = Vec::new();
        for i in 0..20 {
            let off = 0.02 * i as f64;
            preds.push(pred(
                vec![0.0; 6],
                BoxCxcywh::new(0.5 + off, 0.5, 0.2, 0.2),
            ));
        }
        let a = match_sets(&preds, &[t.clone()]).unwrap();
        assert_eq!(a.target_to_pred, vec![0]);
        // brute-force argmin over the single target
        let best = (0..20)
            .min_by(|&i, &j| {
                matching_cost(&preds[i], &t)
                    .unwrap()
                    .partial_cmp(&matching_cost(&preds[j], &t).unwrap())
                    .unwrap()
            })
            .unwrap();
        assert_eq!(a.target_to_pred[0], best);
    }
}
