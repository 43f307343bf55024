//! The set-prediction training objective: class negative log-likelihood
//! with down-weighted no-object padding, box L1 + generalized IoU, keypoint
//! L1 + cross-ratio consistency, and model-point pose displacement. Every
//! term is built from tape primitives, so gradients come from the same code
//! path that computes values; thin scalar wrappers evaluate single pairs on
//! a throwaway `f64` tape.

pub mod check;

use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{AdError, Real, Tape, Var};
use crate::geometry::{
    CameraIntrinsics, KeypointKind, KeypointSet2D, PointCloud, Rotation, CROSS_RATIO_SQ_TARGET,
};
use crate::matching::{Assignment, TargetTuple};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error(transparent)]
    Tape(#[from] AdError),
    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
}

/// Loss-term weights. Defaults: keypoint L1 γ = 10, cross-ratio δ = 1,
/// no-object class weight 0.4, box L1 = 5, box GIoU = 2, pose = 0.02.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub gamma: f64,
    pub delta: f64,
    pub class_null_weight: f64,
    pub box_l1: f64,
    pub box_giou: f64,
    pub pose_weight: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            gamma: 10.0,
            delta: 1.0,
            class_null_weight: 0.4,
            box_l1: 5.0,
            box_giou: 2.0,
            pose_weight: 0.02,
        }
    }
}

/// Scalar snapshot of the loss terms. `total` is the weighted sum with the
/// pose term scaled by `pose_weight`; the stored components are unscaled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub class_loss: f64,
    pub box_loss: f64,
    pub keypoint_loss: f64,
    pub pose_loss: f64,
    pub total: f64,
}

/// Tape handles for the loss terms of one sample or batch.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub class_loss: Var,
    pub box_loss: Var,
    pub keypoint_loss: Var,
    pub pose_loss: Var,
    pub total: Var,
}

impl LossVars {
    pub fn snapshot<S: Real>(&self, tape: &Tape<S>) -> LossBreakdown {
        LossBreakdown {
            class_loss: tape.value(self.class_loss).item().to_f64(),
            box_loss: tape.value(self.box_loss).item().to_f64(),
            keypoint_loss: tape.value(self.keypoint_loss).item().to_f64(),
            pose_loss: tape.value(self.pose_loss).item().to_f64(),
            total: tape.value(self.total).item().to_f64(),
        }
    }
}

/// `0.5x²` for `|x| < 1`, `|x| − 0.5` otherwise (β = 1).
pub fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

/// Weighted-mean class NLL over all predictions. `classes[i]` is the target
/// class of prediction `i` (the null class for unmatched slots); null rows
/// weigh `null_weight`, the rest 1, and the mean divides by the weight sum.
pub fn class_nll_vars<S: Real>(
    tape: &mut Tape<S>,
    logits: Var,
    classes: &[usize],
    null_class: usize,
    null_weight: f64,
) -> Result<Var, LossError> {
    let (n, n_classes) = tape.value(logits).shape();
    if classes.len() != n {
        return Err(LossError::ShapeMismatch(
            "one target class per prediction expected",
        ));
    }
    if classes.iter().any(|&c| c >= n_classes) {
        return Err(LossError::InvalidArgument("class id out of range"));
    }
    let log_probs = tape.log_softmax_rows(logits);
    let picked: Vec<(usize, usize)> = classes.iter().enumerate().map(|(i, &c)| (i, c)).collect();
    let sel = tape.select_elems(log_probs, &picked)?;
    let nll = tape.neg(sel);
    let weights: Vec<f64> = classes
        .iter()
        .map(|&c| if c == null_class { null_weight } else { 1.0 })
        .collect();
    let weight_sum: f64 = weights.iter().sum();
    let w = tape.leaf_f64(n, 1, &weights);
    let weighted = tape.mul(nll, w)?;
    let total = tape.sum(weighted);
    Ok(tape.scale(total, 1.0 / weight_sum))
}

/// Scalar class NLL for plain inputs.
pub fn class_nll(
    logits: &[Vec<f64>],
    classes: &[usize],
    null_class: usize,
    null_weight: f64,
) -> Result<f64, LossError> {
    let n = logits.len();
    if n == 0 {
        return Ok(0.0);
    }
    let cols = logits[0].len();
    let flat: Vec<f64> = logits.iter().flat_map(|r| r.iter().copied()).collect();
    let mut tape: Tape<f64> = Tape::new();
    let l = tape.leaf_f64(n, cols, &flat);
    let out = class_nll_vars(&mut tape, l, classes, null_class, null_weight)?;
    Ok(tape.value(out).item())
}

/// Differentiable generalized IoU per row of two `[M,4]` cxcywh stacks.
pub fn giou_vars<S: Real>(tape: &mut Tape<S>, a: Var, b: Var) -> Result<Var, LossError> {
    let (m, c) = tape.value(a).shape();
    if c != 4 || tape.value(b).shape() != (m, 4) {
        return Err(LossError::ShapeMismatch("boxes must be [M,4] cxcywh"));
    }
    for v in [a, b] {
        let t = tape.value(v);
        for row in 0..m {
            if t.at(row, 2).to_f64() <= 0.0 || t.at(row, 3).to_f64() <= 0.0 {
                return Err(LossError::InvalidArgument(
                    "boxes must have positive extents",
                ));
            }
        }
    }
    let sides = |tape: &mut Tape<S>, v: Var| -> Result<(Var, Var, Var, Var, Var), AdError> {
        let cx = tape.slice_cols(v, 0, 1)?;
        let cy = tape.slice_cols(v, 1, 1)?;
        let w = tape.slice_cols(v, 2, 1)?;
        let h = tape.slice_cols(v, 3, 1)?;
        let hw = tape.scale(w, 0.5);
        let hh = tape.scale(h, 0.5);
        let x1 = tape.sub(cx, hw)?;
        let x2 = tape.add(cx, hw)?;
        let y1 = tape.sub(cy, hh)?;
        let y2 = tape.add(cy, hh)?;
        let area = tape.mul(w, h)?;
        Ok((x1, y1, x2, y2, area))
    };
    let (ax1, ay1, ax2, ay2, aarea) = sides(tape, a)?;
    let (bx1, by1, bx2, by2, barea) = sides(tape, b)?;

    let ix1 = tape.maximum(ax1, bx1)?;
    let iy1 = tape.maximum(ay1, by1)?;
    let ix2 = tape.minimum(ax2, bx2)?;
    let iy2 = tape.minimum(ay2, by2)?;
    let iw_raw = tape.sub(ix2, ix1)?;
    let ih_raw = tape.sub(iy2, iy1)?;
    let iw = tape.relu(iw_raw);
    let ih = tape.relu(ih_raw);
    let inter = tape.mul(iw, ih)?;

    let sum_areas = tape.add(aarea, barea)?;
    let union = tape.sub(sum_areas, inter)?;
    let iou = tape.div(inter, union)?;

    let ex1 = tape.minimum(ax1, bx1)?;
    let ey1 = tape.minimum(ay1, by1)?;
    let ex2 = tape.maximum(ax2, bx2)?;
    let ey2 = tape.maximum(ay2, by2)?;
    let ew = tape.sub(ex2, ex1)?;
    let eh = tape.sub(ey2, ey1)?;
    let enclosing = tape.mul(ew, eh)?;
    let gap = tape.sub(enclosing, union)?;
    let penalty = tape.div(gap, enclosing)?;
    Ok(tape.sub(iou, penalty)?)
}

/// Mean box loss over the matched pairs: `5·‖Δ‖₁ + 2·(1 − GIoU)` per pair.
pub fn box_loss_vars<S: Real>(
    tape: &mut Tape<S>,
    pred: Var,
    gt: Var,
    w: &LossWeights,
) -> Result<Var, LossError> {
    let (m, _) = tape.value(pred).shape();
    let diff = tape.sub(pred, gt)?;
    let absdiff = tape.abs(diff);
    let l1_sum = tape.sum(absdiff);
    let l1 = tape.scale(l1_sum, w.box_l1 / m as f64);
    let g = giou_vars(tape, pred, gt)?;
    let neg_g = tape.neg(g);
    let one_minus = tape.add_scalar(neg_g, 1.0);
    let g_mean = tape.mean(one_minus);
    let g_term = tape.scale(g_mean, w.box_giou);
    Ok(tape.add(l1, g_term)?)
}

/// Scalar box loss for one pair.
pub fn box_loss(
    pred: &crate::geometry::BoxCxcywh,
    gt: &crate::geometry::BoxCxcywh,
    w: &LossWeights,
) -> Result<f64, LossError> {
    let mut tape: Tape<f64> = Tape::new();
    let p = tape.leaf_f64(1, 4, &pred.to_array());
    let g = tape.leaf_f64(1, 4, &gt.to_array());
    let out = box_loss_vars(&mut tape, p, g, w)?;
    Ok(tape.value(out).item())
}

/// Mean over the collinear 4-tuples of `smooth_l1(16/9 − CR²)`, evaluated on
/// a `[k,2]` keypoint stack. Empty tuple tables (corner-only sets) give 0.
pub fn cross_ratio_loss_vars<S: Real>(
    tape: &mut Tape<S>,
    kps: Var,
    tuples: &[[usize; 4]],
) -> Result<Var, LossError> {
    if tuples.is_empty() {
        return Ok(tape.scalar(0.0));
    }
    let (k, c) = tape.value(kps).shape();
    if c != 2 {
        return Err(LossError::ShapeMismatch("keypoints must be [k,2]"));
    }
    if tuples.iter().flatten().any(|&i| i >= k) {
        return Err(LossError::InvalidArgument("tuple index out of range"));
    }
    let gather = |tape: &mut Tape<S>, which: usize| -> Result<Var, AdError> {
        let idx: Vec<usize> = tuples.iter().map(|t| t[which]).collect();
        tape.gather_rows(kps, &idx)
    };
    let a = gather(tape, 0)?;
    let b = gather(tape, 1)?;
    let c_ = gather(tape, 2)?;
    let d = gather(tape, 3)?;
    let dist_sq = |tape: &mut Tape<S>, p: Var, q: Var| -> Result<Var, AdError> {
        let diff = tape.sub(p, q)?;
        let sq = tape.mul(diff, diff)?;
        Ok(tape.sum_cols(sq))
    };
    let ca = dist_sq(tape, c_, a)?;
    let db = dist_sq(tape, d, b)?;
    let cb = dist_sq(tape, c_, b)?;
    let da = dist_sq(tape, d, a)?;
    for denom in [cb, da] {
        if tape
            .value(denom)
            .data()
            .iter()
            .any(|x| x.to_f64() <= 1e-12)
        {
            return Err(LossError::DegenerateInput(
                "coincident points in cross-ratio denominator",
            ));
        }
    }
    let num = tape.mul(ca, db)?;
    let den = tape.mul(cb, da)?;
    let cr = tape.div(num, den)?;
    let neg_cr = tape.neg(cr);
    let residual = tape.add_scalar(neg_cr, CROSS_RATIO_SQ_TARGET);
    let sl1 = tape.smooth_l1(residual);
    Ok(tape.mean(sl1))
}

/// Scalar cross-ratio loss of one tagged keypoint set.
pub fn cross_ratio_loss(kps: &KeypointSet2D) -> Result<f64, LossError> {
    let mut tape: Tape<f64> = Tape::new();
    let flat = kps.flatten();
    let v = tape.leaf_f64(kps.points().len(), 2, &flat);
    let out = cross_ratio_loss_vars(&mut tape, v, kps.tuples())?;
    Ok(tape.value(out).item())
}

/// Keypoint loss of one pair: `γ·(Σ|Δ|)/k + δ·L_CR(pred)` for `[1,2k]` rows.
pub fn keypoint_loss_vars<S: Real>(
    tape: &mut Tape<S>,
    pred_flat: Var,
    gt_flat: Var,
    kind: KeypointKind,
    tuples: &[[usize; 4]],
    w: &LossWeights,
) -> Result<Var, LossError> {
    let (rows, cols) = tape.value(pred_flat).shape();
    if tape.value(gt_flat).shape() != (rows, cols) {
        return Err(LossError::ShapeMismatch(
            "prediction and target keypoints must match",
        ));
    }
    let k = kind.point_count();
    if cols != 2 * k {
        return Err(LossError::ShapeMismatch(
            "keypoint column count must be 2 · point count",
        ));
    }
    let diff = tape.sub(pred_flat, gt_flat)?;
    let absdiff = tape.abs(diff);
    let l1_sum = tape.sum(absdiff);
    let l1 = tape.scale(l1_sum, w.gamma / (k * rows) as f64);

    let mut cr_terms = tape.scalar(0.0);
    for r in 0..rows {
        let row = tape.gather_rows(pred_flat, &[r])?;
        let stacked = tape.reshape(row, k, 2)?;
        let cr = cross_ratio_loss_vars(tape, stacked, tuples)?;
        cr_terms = tape.add(cr_terms, cr)?;
    }
    let cr_mean = tape.scale(cr_terms, w.delta / rows as f64);
    Ok(tape.add(l1, cr_mean)?)
}

/// Scalar keypoint loss for one pair of tagged sets.
pub fn keypoint_loss(
    pred: &KeypointSet2D,
    gt: &KeypointSet2D,
    w: &LossWeights,
) -> Result<f64, LossError> {
    if pred.kind() != gt.kind() || pred.points().len() != gt.points().len() {
        return Err(LossError::ShapeMismatch(
            "keypoint sets must share a representation",
        ));
    }
    let mut tape: Tape<f64> = Tape::new();
    let p = tape.leaf_f64(1, pred.points().len() * 2, &pred.flatten());
    let g = tape.leaf_f64(1, gt.points().len() * 2, &gt.flatten());
    let out = keypoint_loss_vars(&mut tape, p, g, pred.kind(), pred.tuples(), w)?;
    Ok(tape.value(out).item())
}

/// Gram–Schmidt from a `[1,6]` 6D representation to the transposed rotation
/// `R̂ᵀ` as a `[3,3]` var whose rows are the orthonormal basis; `X @ R̂ᵀ`
/// then maps model points through the rotation.
pub fn rot6d_to_matrix_vars<S: Real>(tape: &mut Tape<S>, r6: Var) -> Result<Var, LossError> {
    if tape.value(r6).shape() != (1, 6) {
        return Err(LossError::ShapeMismatch("6D rotation input must be [1,6]"));
    }
    let a1 = tape.slice_cols(r6, 0, 3)?;
    let a2 = tape.slice_cols(r6, 3, 3)?;
    let normalize = |tape: &mut Tape<S>, v: Var| -> Result<Var, LossError> {
        let sq = tape.mul(v, v)?;
        let ssum = tape.sum_cols(sq);
        if tape.value(ssum).item().to_f64() < 1e-24 {
            return Err(LossError::DegenerateInput("zero column in 6D input"));
        }
        let norm = tape.sqrt(ssum);
        let inv = tape.recip(norm);
        Ok(tape.bcast_col_mul(v, inv)?)
    };
    let b1 = normalize(tape, a1)?;
    let prod = tape.mul(b1, a2)?;
    let dot = tape.sum_cols(prod);
    let proj = tape.bcast_col_mul(b1, dot)?;
    let a2_perp = tape.sub(a2, proj)?;
    if tape
        .value(a2_perp)
        .data()
        .iter()
        .map(|x| x.to_f64() * x.to_f64())
        .sum::<f64>()
        < 1e-24
    {
        return Err(LossError::DegenerateInput("parallel columns in 6D input"));
    }
    let b2 = normalize(tape, a2_perp)?;
    let cross = |tape: &mut Tape<S>, u: Var, v: Var| -> Result<Var, AdError> {
        let ux = tape.slice_cols(u, 0, 1)?;
        let uy = tape.slice_cols(u, 1, 1)?;
        let uz = tape.slice_cols(u, 2, 1)?;
        let vx = tape.slice_cols(v, 0, 1)?;
        let vy = tape.slice_cols(v, 1, 1)?;
        let vz = tape.slice_cols(v, 2, 1)?;
        let t1 = tape.mul(uy, vz)?;
        let t2 = tape.mul(uz, vy)?;
        let x = tape.sub(t1, t2)?;
        let t3 = tape.mul(uz, vx)?;
        let t4 = tape.mul(ux, vz)?;
        let y = tape.sub(t3, t4)?;
        let t5 = tape.mul(ux, vy)?;
        let t6 = tape.mul(uy, vx)?;
        let z = tape.sub(t5, t6)?;
        tape.concat_cols(&[x, y, z])
    };
    let b3 = cross(tape, b1, b2)?;
    Ok(tape.concat_rows(&[b1, b2, b3])?)
}

fn rotate_rows(r: &Rotation, model: &PointCloud) -> Vec<f64> {
    let mut out = Vec::with_capacity(model.len() * 3);
    for p in model.points() {
        let q = r.apply(*p);
        out.push(q.x);
        out.push(q.y);
        out.push(q.z);
    }
    out
}

/// Model-point rotation displacement: mean L1 distance between groundtruth
/// and predicted rotations of the model cloud. For symmetric objects the
/// pairing re-derives per forward pass as the closest predicted point, and
/// gradients flow only into the predicted rotation.
pub fn rot_loss_vars<S: Real>(
    tape: &mut Tape<S>,
    r_gt: &Rotation,
    rt_pred: Var,
    model: &PointCloud,
    symmetric: bool,
) -> Result<Var, LossError> {
    if tape.value(rt_pred).shape() != (3, 3) {
        return Err(LossError::ShapeMismatch("rotation var must be [3,3]"));
    }
    let k = model.len();
    let mut x_flat = Vec::with_capacity(k * 3);
    for p in model.points() {
        x_flat.push(p.x);
        x_flat.push(p.y);
        x_flat.push(p.z);
    }
    let x = tape.leaf_f64(k, 3, &x_flat);
    let pred_pts = tape.matmul(x, rt_pred)?;
    let gt_rows = rotate_rows(r_gt, model);
    let gt = tape.leaf_f64(k, 3, &gt_rows);

    let pred_sel = if symmetric {
        // closest-point pairing from current forward values
        let pv = tape.value(pred_pts).to_f64_vec();
        let mut pairing = Vec::with_capacity(k);
        for i in 0..k {
            let gi = &gt_rows[i * 3..i * 3 + 3];
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for j in 0..k {
                let pj = &pv[j * 3..j * 3 + 3];
                let d = (gi[0] - pj[0]).abs() + (gi[1] - pj[1]).abs() + (gi[2] - pj[2]).abs();
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            pairing.push(best);
        }
        tape.gather_rows(pred_pts, &pairing)?
    } else {
        pred_pts
    };
    let diff = tape.sub(gt, pred_sel)?;
    let absdiff = tape.abs(diff);
    let total = tape.sum(absdiff);
    Ok(tape.scale(total, 1.0 / k as f64))
}

/// Scalar rotation displacement loss.
pub fn rot_loss(
    r_gt: &Rotation,
    r_pred: &Rotation,
    model: &PointCloud,
    symmetric: bool,
) -> f64 {
    let k = model.len();
    let gt: Vec<f64> = rotate_rows(r_gt, model);
    let pr: Vec<f64> = rotate_rows(r_pred, model);
    let mut acc = 0.0;
    for i in 0..k {
        let gi = &gt[i * 3..i * 3 + 3];
        if symmetric {
            let mut best = f64::INFINITY;
            for j in 0..k {
                let pj = &pr[j * 3..j * 3 + 3];
                let d = (gi[0] - pj[0]).abs() + (gi[1] - pj[1]).abs() + (gi[2] - pj[2]).abs();
                if d < best {
                    best = d;
                }
            }
            acc += best;
        } else {
            let pi = &pr[i * 3..i * 3 + 3];
            acc += (gi[0] - pi[0]).abs() + (gi[1] - pi[1]).abs() + (gi[2] - pi[2]).abs();
        }
    }
    acc / k as f64
}

/// Pose loss: rotation displacement plus translation L1.
pub fn pose_loss_vars<S: Real>(
    tape: &mut Tape<S>,
    gt: &crate::geometry::Pose,
    rt_pred: Var,
    t_pred: Var,
    model: &PointCloud,
    symmetric: bool,
) -> Result<Var, LossError> {
    if tape.value(t_pred).shape() != (1, 3) {
        return Err(LossError::ShapeMismatch("translation var must be [1,3]"));
    }
    let rot = rot_loss_vars(tape, &gt.rotation, rt_pred, model, symmetric)?;
    let t_gt = tape.leaf_f64(1, 3, &gt.translation.to_array());
    let diff = tape.sub(t_gt, t_pred)?;
    let absdiff = tape.abs(diff);
    let t_term = tape.sum(absdiff);
    Ok(tape.add(rot, t_term)?)
}

/// Scalar pose loss.
pub fn pose_loss(
    gt: &crate::geometry::Pose,
    pred_r: &Rotation,
    pred_t: crate::linalg::Vec3,
    model: &PointCloud,
    symmetric: bool,
) -> f64 {
    let rot = rot_loss(&gt.rotation, pred_r, model, symmetric);
    let d = gt.translation - pred_t;
    rot + d.x.abs() + d.y.abs() + d.z.abs()
}

/// Decodes a `[1,3]` (u_norm, v_norm, tz) translation code var into a
/// `[1,3]` camera-frame translation var.
pub fn decode_translation_vars<S: Real>(
    tape: &mut Tape<S>,
    code: Var,
    cam: &CameraIntrinsics,
) -> Result<Var, LossError> {
    if tape.value(code).shape() != (1, 3) {
        return Err(LossError::ShapeMismatch("translation code must be [1,3]"));
    }
    if tape.value(code).at(0, 2).to_f64() <= 0.0 {
        return Err(LossError::InvalidArgument("tz must be > 0"));
    }
    let u_norm = tape.slice_cols(code, 0, 1)?;
    let v_norm = tape.slice_cols(code, 1, 1)?;
    let tz = tape.slice_cols(code, 2, 1)?;
    let u = tape.scale(u_norm, cam.width);
    let v = tape.scale(v_norm, cam.height);
    let du = tape.add_scalar(u, -cam.cx);
    let dv = tape.add_scalar(v, -cam.cy);
    let xnum = tape.mul(du, tz)?;
    let ynum = tape.mul(dv, tz)?;
    let x = tape.scale(xnum, 1.0 / cam.fx);
    let y = tape.scale(ynum, 1.0 / cam.fy);
    Ok(tape.concat_cols(&[x, y, tz])?)
}

/// Tape handles of one sample's prediction heads: `[N,C+1]` logits,
/// `[N,4]` boxes, `[N,3]` translation codes, `[N,2k]` keypoints.
#[derive(Debug, Clone, Copy)]
pub struct PredictionVars {
    pub class_logits: Var,
    pub boxes: Var,
    pub translations: Var,
    pub keypoints: Var,
    pub keypoint_kind: KeypointKind,
}

/// Static context for the pose term of the Hungarian loss.
pub struct PoseLossCtx<'a> {
    pub cam: &'a CameraIntrinsics,
    /// Model cloud per model index referenced by the targets.
    pub models: &'a [PointCloud],
    /// Symmetry flag per class id.
    pub symmetric: &'a [bool],
}

/// Maps a `[1,2k]` keypoint row to the predicted `R̂ᵀ` `[3,3]` var; the toy
/// model plugs its keypoint-to-rotation MLP in here.
pub type RotationHead<'m, S> =
    dyn FnMut(&mut Tape<S>, Var) -> Result<Var, LossError> + 'm;

/// The full Hungarian loss over one sample: class NLL over all N slots,
/// box/keypoint terms averaged over matched pairs, and (optionally) the
/// pose term via the rotation head and translation decode, scaled by
/// `pose_weight` in the total.
pub fn hungarian_loss<S: Real>(
    tape: &mut Tape<S>,
    preds: &PredictionVars,
    targets: &[TargetTuple],
    assignment: &Assignment,
    w: &LossWeights,
    pose: Option<(&PoseLossCtx<'_>, &mut RotationHead<'_, S>)>,
) -> Result<LossVars, LossError> {
    let (n, n_logit_cols) = tape.value(preds.class_logits).shape();
    let null_class = n_logit_cols - 1;

    // target class per prediction slot (null where unmatched)
    let mut classes = vec![null_class; n];
    for (t, &p) in assignment.target_to_pred.iter().enumerate() {
        if p != usize::MAX {
            if p >= n {
                return Err(LossError::InvalidArgument(
                    "assignment references a prediction out of range",
                ));
            }
            classes[p] = targets[t].class_id;
        }
    }
    let class_loss = class_nll_vars(
        tape,
        preds.class_logits,
        &classes,
        null_class,
        w.class_null_weight,
    )?;

    let matched: Vec<(usize, usize)> = assignment
        .target_to_pred
        .iter()
        .enumerate()
        .filter(|(_, &p)| p != usize::MAX)
        .map(|(t, &p)| (t, p))
        .collect();

    let (box_loss_v, kp_loss_v, pose_loss_v);
    if matched.is_empty() {
        box_loss_v = tape.scalar(0.0);
        kp_loss_v = tape.scalar(0.0);
        pose_loss_v = tape.scalar(0.0);
    } else {
        let pred_idx: Vec<usize> = matched.iter().map(|&(_, p)| p).collect();
        let m = matched.len();

        let pred_boxes = tape.gather_rows(preds.boxes, &pred_idx)?;
        let mut gt_boxes = Vec::with_capacity(m * 4);
        let mut gt_kps = Vec::new();
        for &(t, _) in &matched {
            let geom = targets[t]
                .geometry
                .as_ref()
                .ok_or(LossError::InvalidArgument("matched target has no geometry"))?;
            gt_boxes.extend_from_slice(&geom.bbox.to_array());
            gt_kps.extend(geom.keypoints.flatten());
        }
        let gt_boxes = tape.leaf_f64(m, 4, &gt_boxes);
        box_loss_v = box_loss_vars(tape, pred_boxes, gt_boxes, w)?;

        let pred_kps = tape.gather_rows(preds.keypoints, &pred_idx)?;
        let kcols = tape.value(preds.keypoints).cols();
        let gt_kps = tape.leaf_f64(m, kcols, &gt_kps);
        let tuples = targets[matched[0].0]
            .geometry
            .as_ref()
            .map(|g| g.keypoints.tuples().to_vec())
            .unwrap_or_default();
        kp_loss_v = keypoint_loss_vars(
            tape,
            pred_kps,
            gt_kps,
            preds.keypoint_kind,
            &tuples,
            w,
        )?;

        pose_loss_v = match pose {
            None => tape.scalar(0.0),
            Some((ctx, rot_head)) => {
                let mut acc = tape.scalar(0.0);
                for &(t, p) in &matched {
                    let geom = targets[t].geometry.as_ref().unwrap();
                    let model = ctx.models.get(geom.model).ok_or(
                        LossError::InvalidArgument("model index out of range"),
                    )?;
                    let symmetric = ctx
                        .symmetric
                        .get(targets[t].class_id)
                        .copied()
                        .unwrap_or(false);
                    let kp_row = tape.gather_rows(preds.keypoints, &[p])?;
                    let rt = rot_head(tape, kp_row)?;
                    let code_row = tape.gather_rows(preds.translations, &[p])?;
                    let t_pred = decode_translation_vars(tape, code_row, ctx.cam)?;
                    let pl =
                        pose_loss_vars(tape, &geom.pose, rt, t_pred, model, symmetric)?;
                    acc = tape.add(acc, pl)?;
                }
                tape.scale(acc, 1.0 / m as f64)
            }
        };
    }

    let cb = tape.add(class_loss, box_loss_v)?;
    let cbk = tape.add(cb, kp_loss_v)?;
    let pose_scaled = tape.scale(pose_loss_v, w.pose_weight);
    let total = tape.add(cbk, pose_scaled)?;
    Ok(LossVars {
        class_loss,
        box_loss: box_loss_v,
        keypoint_loss: kp_loss_v,
        pose_loss: pose_loss_v,
        total,
    })
}

#[cfg(test)]
mod tests;
