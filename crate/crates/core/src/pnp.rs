//! Pose recovery from 2D–3D correspondences: the control-point PnP solver
//! (4 control points from the centroid and principal directions, barycentric
//! coordinates, a 12×12 eigensystem, beta candidates for nullspace
//! dimensions 1–3 with Gauss–Newton refinement) plus a
//! hypothesize-and-verify RANSAC wrapper. A planar configuration falls back
//! to 3 control points and a 9×9 eigensystem.

use alloc::vec;
use alloc::vec::Vec;

use crate::geometry::{CameraIntrinsics, Pose, Rotation};
use crate::linalg::{jacobi_eigen_sym, kabsch, solve_dense, solve_ls, Mat3, Vec3};
use crate::rng::SeedStream;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PnpError {
    #[error("need at least 4 correspondences, got {got}")]
    InsufficientPoints { got: usize },
    #[error("numerical failure: {0}")]
    NumericalFailure(&'static str),
    #[error("no consensus set of at least 4 inliers")]
    NoConsensus,
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
}

/// Paired 3D model points (meters) and 2D image points (pixels).
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondences {
    world: Vec<Vec3>,
    image: Vec<[f64; 2]>,
}

impl Correspondences {
    pub fn new(world: Vec<Vec3>, image: Vec<[f64; 2]>) -> Result<Self, PnpError> {
        if world.len() != image.len() {
            return Err(PnpError::InvalidArgument(
                "world and image lists must pair up",
            ));
        }
        if world.len() < 4 {
            return Err(PnpError::InsufficientPoints { got: world.len() });
        }
        Ok(Self { world, image })
    }

    pub fn len(&self) -> usize {
        self.world.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn world(&self) -> &[Vec3] {
        &self.world
    }

    pub fn image(&self) -> &[[f64; 2]] {
        &self.image
    }

    fn subset(&self, idx: &[usize]) -> Self {
        Self {
            world: idx.iter().map(|&i| self.world[i]).collect(),
            image: idx.iter().map(|&i| self.image[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Inlier reprojection threshold in pixels.
    pub threshold_px: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            threshold_px: 2.0,
            seed: 0,
        }
    }
}

pub const RANSAC_MIN_SAMPLE: usize = 4;

/// Mean Euclidean reprojection error of a pose over the correspondences,
/// in pixels. Points behind the camera make the pose unusable.
pub fn mean_reprojection_error(c: &Correspondences, cam: &CameraIntrinsics, pose: &Pose) -> f64 {
    let mut acc = 0.0;
    for (w, px) in c.world.iter().zip(&c.image) {
        let p = pose.transform(*w);
        if p.z <= 1e-9 {
            return f64::INFINITY;
        }
        let proj = cam.project_camera_point(p);
        acc += libm::hypot(proj[0] - px[0], proj[1] - px[1]);
    }
    acc / c.len() as f64
}

struct ControlPoints {
    /// Control points in the world frame; 4 in general position, 3 planar.
    points: Vec<Vec3>,
    /// Barycentric coordinates per correspondence (len = points.len()).
    alphas: Vec<Vec<f64>>,
}

fn pick_control_points(world: &[Vec3]) -> Result<ControlPoints, PnpError> {
    let n = world.len() as f64;
    let mut centroid = Vec3::ZERO;
    for p in world {
        centroid = centroid + *p;
    }
    centroid = centroid * (1.0 / n);

    let mut cov = Mat3::zeros();
    for p in world {
        cov = cov.add_mat(&Mat3::outer(*p - centroid, *p - centroid));
    }
    cov = cov.scaled(1.0 / n);
    let flat: Vec<f64> = cov.m.iter().flatten().copied().collect();
    let (vals, vecs) = jacobi_eigen_sym(flat, 3);
    // ascending order: vals[0] smallest
    let axis = |k: usize| Vec3::new(vecs[k], vecs[3 + k], vecs[6 + k]);
    if vals[2] <= 1e-18 {
        return Err(PnpError::NumericalFailure(
            "degenerate point set (all points coincide)",
        ));
    }
    let planar = vals[0] / vals[2] < 1e-10;

    let mut points = vec![centroid];
    let dirs: &[usize] = if planar { &[2, 1] } else { &[2, 1, 0] };
    for &k in dirs {
        points.push(centroid + axis(k) * libm::sqrt(vals[k].max(1e-300)));
    }

    let ncp = points.len();
    let mut alphas = Vec::with_capacity(world.len());
    if ncp == 4 {
        let basis = Mat3::from_cols(
            points[1] - points[0],
            points[2] - points[0],
            points[3] - points[0],
        );
        let det = basis.det();
        if det.abs() < 1e-18 {
            return Err(PnpError::NumericalFailure("singular control-point basis"));
        }
        let b = &basis.m;
        let inv = Mat3 {
            m: [
                [
                    (b[1][1] * b[2][2] - b[1][2] * b[2][1]) / det,
                    (b[0][2] * b[2][1] - b[0][1] * b[2][2]) / det,
                    (b[0][1] * b[1][2] - b[0][2] * b[1][1]) / det,
                ],
                [
                    (b[1][2] * b[2][0] - b[1][0] * b[2][2]) / det,
                    (b[0][0] * b[2][2] - b[0][2] * b[2][0]) / det,
                    (b[0][2] * b[1][0] - b[0][0] * b[1][2]) / det,
                ],
                [
                    (b[1][0] * b[2][1] - b[1][1] * b[2][0]) / det,
                    (b[0][1] * b[2][0] - b[0][0] * b[2][1]) / det,
                    (b[0][0] * b[1][1] - b[0][1] * b[1][0]) / det,
                ],
            ],
        };
        for p in world {
            let co = inv.mul_vec(*p - points[0]);
            alphas.push(vec![1.0 - co.x - co.y - co.z, co.x, co.y, co.z]);
        }
    } else {
        // planar: 2 in-plane directions, least-squares coordinates
        let e1 = points[1] - points[0];
        let e2 = points[2] - points[0];
        let g = [e1.dot(e1), e1.dot(e2), e1.dot(e2), e2.dot(e2)];
        for p in world {
            let d = *p - points[0];
            let mut gm = g;
            let mut rv = [e1.dot(d), e2.dot(d)];
            let Some(x) = solve_dense(&mut gm, &mut rv, 2) else {
                return Err(PnpError::NumericalFailure("singular planar basis"));
            };
            alphas.push(vec![1.0 - x[0] - x[1], x[0], x[1]]);
        }
    }
    Ok(ControlPoints { points, alphas })
}

/// Columns of the eigenvector matrix of `MᵀM` for the 4 smallest
/// eigenvalues (ascending), each of length `3·ncp`.
fn nullspace_candidates(
    c: &Correspondences,
    cam: &CameraIntrinsics,
    cp: &ControlPoints,
) -> Vec<Vec<f64>> {
    let ncp = cp.points.len();
    let cols = 3 * ncp;
    let mut mtm = vec![0.0; cols * cols];
    let mut row = vec![0.0; cols];
    fn accumulate(row: &[f64], cols: usize, mtm: &mut [f64]) {
        for i in 0..cols {
            if row[i] == 0.0 {
                continue;
            }
            for j in 0..cols {
                mtm[i * cols + j] += row[i] * row[j];
            }
        }
    }
    for (alpha, px) in cp.alphas.iter().zip(c.image.iter()) {
        let x = (px[0] - cam.cx) / cam.fx;
        let y = (px[1] - cam.cy) / cam.fy;
        row.iter_mut().for_each(|v| *v = 0.0);
        for (j, &a) in alpha.iter().enumerate() {
            row[3 * j] = a;
            row[3 * j + 2] = -a * x;
        }
        accumulate(&row, cols, &mut mtm);
        row.iter_mut().for_each(|v| *v = 0.0);
        for (j, &a) in alpha.iter().enumerate() {
            row[3 * j + 1] = a;
            row[3 * j + 2] = -a * y;
        }
        accumulate(&row, cols, &mut mtm);
    }
    let (_vals, vecs) = jacobi_eigen_sym(mtm, cols);
    (0..4.min(cols))
        .map(|k| (0..cols).map(|i| vecs[i * cols + k]).collect())
        .collect()
}

/// One 3-vector slice of a stacked control-point vector.
fn segment(v: &[f64], j: usize) -> Vec3 {
    Vec3::new(v[3 * j], v[3 * j + 1], v[3 * j + 2])
}

struct BetaProblem {
    /// Per control-point pair: nullspace segment differences (one per
    /// candidate vector) and the squared world distance.
    dv: Vec<[Vec3; 4]>,
    rho: Vec<f64>,
}

impl BetaProblem {
    fn new(cp: &ControlPoints, vs: &[Vec<f64>]) -> Self {
        let ncp = cp.points.len();
        let mut dv = Vec::new();
        let mut rho = Vec::new();
        for a in 0..ncp {
            for b in (a + 1)..ncp {
                let mut seg = [Vec3::ZERO; 4];
                for (k, v) in vs.iter().enumerate() {
                    seg[k] = segment(v, a) - segment(v, b);
                }
                dv.push(seg);
                rho.push((cp.points[a] - cp.points[b]).norm_sq());
            }
        }
        Self { dv, rho }
    }

    fn pairs(&self) -> usize {
        self.rho.len()
    }

    /// Case N=1: least squares on the products (β1², β1β2, β1β3, β1β4).
    fn approx_1(&self) -> Option<[f64; 4]> {
        let m = self.pairs();
        let mut a = vec![0.0; m * 4];
        for p in 0..m {
            a[p * 4] = self.dv[p][0].norm_sq();
            a[p * 4 + 1] = 2.0 * self.dv[p][0].dot(self.dv[p][1]);
            a[p * 4 + 2] = 2.0 * self.dv[p][0].dot(self.dv[p][2]);
            a[p * 4 + 3] = 2.0 * self.dv[p][0].dot(self.dv[p][3]);
        }
        let x = solve_ls(&a, m, 4, &self.rho)?;
        let mut betas = [0.0; 4];
        if x[0] < 0.0 {
            betas[0] = libm::sqrt(-x[0]);
            for k in 1..4 {
                betas[k] = -x[k] / betas[0];
            }
        } else {
            betas[0] = libm::sqrt(x[0]);
            for k in 1..4 {
                betas[k] = x[k] / betas[0];
            }
        }
        if betas[0] == 0.0 {
            return None;
        }
        Some(betas)
    }

    /// Case N=2: least squares on (β1², β1β2, β2²).
    fn approx_2(&self) -> Option<[f64; 4]> {
        let m = self.pairs();
        let mut a = vec![0.0; m * 3];
        for p in 0..m {
            a[p * 3] = self.dv[p][0].norm_sq();
            a[p * 3 + 1] = 2.0 * self.dv[p][0].dot(self.dv[p][1]);
            a[p * 3 + 2] = self.dv[p][1].norm_sq();
        }
        let x = solve_ls(&a, m, 3, &self.rho)?;
        let mut betas = [0.0; 4];
        if x[0] < 0.0 {
            betas[0] = libm::sqrt(-x[0]);
            betas[1] = if x[2] < 0.0 { libm::sqrt(-x[2]) } else { 0.0 };
        } else {
            betas[0] = libm::sqrt(x[0]);
            betas[1] = if x[2] > 0.0 { libm::sqrt(x[2]) } else { 0.0 };
        }
        if x[1] < 0.0 {
            betas[0] = -betas[0];
        }
        Some(betas)
    }

    /// Case N=3: least squares on (β1², β1β2, β2², β1β3, β2β3).
    fn approx_3(&self) -> Option<[f64; 4]> {
        let m = self.pairs();
        if m < 5 {
            return None;
        }
        let mut a = vec![0.0; m * 5];
        for p in 0..m {
            a[p * 5] = self.dv[p][0].norm_sq();
            a[p * 5 + 1] = 2.0 * self.dv[p][0].dot(self.dv[p][1]);
            a[p * 5 + 2] = self.dv[p][1].norm_sq();
            a[p * 5 + 3] = 2.0 * self.dv[p][0].dot(self.dv[p][2]);
            a[p * 5 + 4] = 2.0 * self.dv[p][1].dot(self.dv[p][2]);
        }
        let x = solve_ls(&a, m, 5, &self.rho)?;
        let mut betas = [0.0; 4];
        if x[0] < 0.0 {
            betas[0] = libm::sqrt(-x[0]);
            betas[1] = if x[2] < 0.0 { libm::sqrt(-x[2]) } else { 0.0 };
        } else {
            betas[0] = libm::sqrt(x[0]);
            betas[1] = if x[2] > 0.0 { libm::sqrt(x[2]) } else { 0.0 };
        }
        if x[1] < 0.0 {
            betas[0] = -betas[0];
        }
        if betas[0] != 0.0 {
            betas[2] = x[3] / betas[0];
        }
        Some(betas)
    }

    /// Gauss–Newton on the control-point distance residuals.
    fn refine(&self, betas: &mut [f64; 4], iterations: usize) {
        let m = self.pairs();
        let dim = 4;
        for _ in 0..iterations {
            let mut jtj = vec![0.0; dim * dim];
            let mut jtr = vec![0.0; dim];
            for p in 0..m {
                let mut s = Vec3::ZERO;
                for k in 0..dim {
                    s = s + self.dv[p][k] * betas[k];
                }
                let r = self.rho[p] - s.norm_sq();
                let mut jrow = [0.0; 4];
                for (k, slot) in jrow.iter_mut().enumerate() {
                    *slot = 2.0 * s.dot(self.dv[p][k]);
                }
                for i in 0..dim {
                    jtr[i] += jrow[i] * r;
                    for j in 0..dim {
                        jtj[i * dim + j] += jrow[i] * jrow[j];
                    }
                }
            }
            // a tiny ridge keeps rank-deficient cases (planar, exact data)
            // solvable; it perturbs the step, not the solution
            for i in 0..dim {
                jtj[i * dim + i] += 1e-12;
            }
            let Some(delta) = solve_dense(&mut jtj, &mut jtr, dim) else {
                return;
            };
            for (k, d) in delta.iter().enumerate() {
                betas[k] += d;
            }
        }
    }
}

/// Camera-frame control points from betas, barycentric expansion,
/// depth-sign fix, then a rigid fit onto the world points.
fn pose_from_betas(
    c: &Correspondences,
    cp: &ControlPoints,
    vs: &[Vec<f64>],
    betas: &[f64; 4],
) -> Option<Pose> {
    let ncp = cp.points.len();
    let mut cc = vec![Vec3::ZERO; ncp];
    for (j, ccj) in cc.iter_mut().enumerate() {
        for (k, v) in vs.iter().enumerate() {
            *ccj = *ccj + segment(v, j) * betas[k];
        }
    }
    let mut pc: Vec<Vec3> = cp
        .alphas
        .iter()
        .map(|alpha| {
            let mut p = Vec3::ZERO;
            for (j, &a) in alpha.iter().enumerate() {
                p = p + cc[j] * a;
            }
            p
        })
        .collect();
    let depth_sum: f64 = pc.iter().map(|p| p.z).sum();
    if depth_sum < 0.0 {
        for p in &mut pc {
            *p = -*p;
        }
    }
    let (r, t) = kabsch(c.world(), &pc);
    let rotation = Rotation::project(r).ok()?;
    Some(Pose::new(rotation, t))
}

/// Control-point PnP. Among the beta candidates (nullspace dimensions 1–3,
/// each Gauss–Newton refined) the pose with the lowest mean reprojection
/// error that keeps every point in front of the camera wins.
pub fn epnp(c: &Correspondences, cam: &CameraIntrinsics) -> Result<Pose, PnpError> {
    let cp = pick_control_points(c.world())?;
    let vs = nullspace_candidates(c, cam, &cp);
    let problem = BetaProblem::new(&cp, &vs);

    let mut candidates: Vec<[f64; 4]> = Vec::new();
    for approx in [
        BetaProblem::approx_1 as fn(&BetaProblem) -> Option<[f64; 4]>,
        BetaProblem::approx_2,
        BetaProblem::approx_3,
    ] {
        if let Some(mut betas) = approx(&problem) {
            problem.refine(&mut betas, 5);
            candidates.push(betas);
        }
    }
    if candidates.is_empty() {
        return Err(PnpError::NumericalFailure("no beta candidate solvable"));
    }

    let mut best: Option<(f64, Pose)> = None;
    for betas in &candidates {
        let Some(pose) = pose_from_betas(c, &cp, &vs, betas) else {
            continue;
        };
        if c.world().iter().any(|w| pose.transform(*w).z <= 1e-9) {
            continue; // cheirality violation
        }
        let err = mean_reprojection_error(c, cam, &pose);
        if best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, pose));
        }
    }
    match best {
        Some((_, pose)) => Ok(pose),
        None => Err(PnpError::NumericalFailure(
            "all candidates violate cheirality",
        )),
    }
}

fn distinct_sample(stream: &mut SeedStream, n: usize, k: usize) -> Vec<usize> {
    let mut picked = Vec::with_capacity(k);
    while picked.len() < k {
        let i = stream.below(n);
        if !picked.contains(&i) {
            picked.push(i);
        }
    }
    picked
}

/// Hypothesize-and-verify pose estimation over minimal 4-point samples with
/// a final refit on the largest consensus set. Deterministic given the
/// seed: trial substreams derive from `(seed, trial index)`.
pub fn ransac_pnp(
    c: &Correspondences,
    cam: &CameraIntrinsics,
    cfg: &RansacConfig,
) -> Result<(Pose, Vec<bool>), PnpError> {
    if cfg.iterations == 0 || cfg.threshold_px <= 0.0 {
        return Err(PnpError::InvalidArgument(
            "iterations must be ≥ 1 and threshold > 0",
        ));
    }
    let n = c.len();
    let root = SeedStream::new(cfg.seed, "ransac-pnp");
    let reproj_err = |pose: &Pose, i: usize| -> f64 {
        let p = pose.transform(c.world()[i]);
        if p.z <= 1e-9 {
            return f64::INFINITY;
        }
        let proj = cam.project_camera_point(p);
        libm::hypot(proj[0] - c.image()[i][0], proj[1] - c.image()[i][1])
    };

    let mut best: Option<(usize, f64, Vec<usize>)> = None;
    for trial in 0..cfg.iterations {
        let mut stream = root.substream(trial as u64);
        let sample = distinct_sample(&mut stream, n, RANSAC_MIN_SAMPLE);
        let Ok(hypothesis) = epnp(&c.subset(&sample), cam) else {
            continue;
        };
        let mut inliers = Vec::new();
        let mut err_acc = 0.0;
        for i in 0..n {
            let e = reproj_err(&hypothesis, i);
            if e < cfg.threshold_px {
                inliers.push(i);
                err_acc += e;
            }
        }
        if inliers.len() < RANSAC_MIN_SAMPLE {
            continue;
        }
        let mean_err = err_acc / inliers.len() as f64;
        let better = match &best {
            None => true,
            Some((count, err, _)) => {
                inliers.len() > *count || (inliers.len() == *count && mean_err < *err)
            }
        };
        if better {
            best = Some((inliers.len(), mean_err, inliers));
        }
    }
    let Some((_, _, consensus)) = best else {
        return Err(PnpError::NoConsensus);
    };
    let refit = epnp(&c.subset(&consensus), cam)?;
    let mask: Vec<bool> = (0..n)
        .map(|i| reproj_err(&refit, i) < cfg.threshold_px)
        .collect();
    if mask.iter().filter(|m| **m).count() < RANSAC_MIN_SAMPLE {
        return Err(PnpError::NoConsensus);
    }
    Ok((refit, mask))
}
