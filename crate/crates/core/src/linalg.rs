//! Small dense linear algebra: 3-vectors, 3×3 matrices, a cyclic Jacobi
//! eigensolver for symmetric matrices (up to the 12×12 systems used by the
//! PnP solver), a 3×3 SVD built on it, and tiny least-squares solves.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Add, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Self = Self::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Self) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        libm::sqrt(self.norm_sq())
    }

    pub fn normalized(self) -> Self {
        self * (1.0 / self.norm())
    }

    pub fn scaled(self, s: f64) -> Self {
        self * s
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Row-major 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3 {
    pub m: [[f64; 3]; 3],
}

impl Mat3 {
    pub const IDENTITY: Self = Self {
        m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };

    pub fn zeros() -> Self {
        Self { m: [[0.0; 3]; 3] }
    }

    pub fn from_rows(r0: Vec3, r1: Vec3, r2: Vec3) -> Self {
        Self {
            m: [r0.to_array(), r1.to_array(), r2.to_array()],
        }
    }

    pub fn from_cols(c0: Vec3, c1: Vec3, c2: Vec3) -> Self {
        Self::from_rows(c0, c1, c2).transposed()
    }

    pub fn row(&self, i: usize) -> Vec3 {
        Vec3::from_array(self.m[i])
    }

    pub fn col(&self, j: usize) -> Vec3 {
        Vec3::new(self.m[0][j], self.m[1][j], self.m[2][j])
    }

    pub fn transposed(&self) -> Self {
        let mut out = Self::zeros();
        for i in 0..3 {
            for j in 0..3 {
                out.m[i][j] = self.m[j][i];
            }
        }
        out
    }

    pub fn trace(&self) -> f64 {
        self.m[0][0] + self.m[1][1] + self.m[2][2]
    }

    pub fn det(&self) -> f64 {
        self.row(0).dot(self.row(1).cross(self.row(2)))
    }

    pub fn mat_mul(&self, o: &Mat3) -> Mat3 {
        let mut out = Mat3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for (k, ok) in o.m.iter().enumerate() {
                    acc += self.m[i][k] * ok[j];
                }
                out.m[i][j] = acc;
            }
        }
        out
    }

    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        Vec3::new(self.row(0).dot(v), self.row(1).dot(v), self.row(2).dot(v))
    }

    pub fn scaled(&self, s: f64) -> Mat3 {
        let mut out = *self;
        for row in &mut out.m {
            for e in row {
                *e *= s;
            }
        }
        out
    }

    pub fn add_mat(&self, o: &Mat3) -> Mat3 {
        let mut out = *self;
        for i in 0..3 {
            for j in 0..3 {
                out.m[i][j] += o.m[i][j];
            }
        }
        out
    }

    /// Outer product `a bᵀ`.
    pub fn outer(a: Vec3, b: Vec3) -> Mat3 {
        let (a, b) = (a.to_array(), b.to_array());
        let mut out = Mat3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                out.m[i][j] = a[i] * b[j];
            }
        }
        out
    }
}

/// Eigendecomposition of a symmetric `n×n` matrix by cyclic Jacobi sweeps.
///
/// `a` is row-major and is consumed. Returns eigenvalues in ascending order
/// with matching eigenvectors as columns of a row-major `n×n` matrix. The
/// sign of each eigenvector is fixed so its largest-magnitude component is
/// positive, which keeps downstream solvers deterministic.
pub fn jacobi_eigen_sym(mut a: Vec<f64>, n: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(a.len(), n * n);
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let off = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += a[i * n + j] * a[i * n + j];
            }
        }
        s
    };
    let mut scale = 0.0f64;
    for x in &a {
        scale += x * x;
    }
    let tol = 1e-30 * scale.max(1e-300);

    for _sweep in 0..100 {
        if off(&a) <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + libm::sqrt(1.0 + theta * theta))
                } else {
                    -1.0 / (-theta + libm::sqrt(1.0 + theta * theta))
                };
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = t * c;

                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a[i * n + i]
            .partial_cmp(&a[j * n + j])
            .unwrap_or(core::cmp::Ordering::Equal)
    });

    let mut values = Vec::with_capacity(n);
    let mut vectors = vec![0.0; n * n];
    for (dst, &src) in order.iter().enumerate() {
        values.push(a[src * n + src]);
        // Sign convention: largest-|component| positive.
        let mut best = 0usize;
        let mut best_abs = -1.0f64;
        for k in 0..n {
            let x = v[k * n + src].abs();
            if x > best_abs {
                best_abs = x;
                best = k;
            }
        }
        let flip = if v[best * n + src] < 0.0 { -1.0 } else { 1.0 };
        for k in 0..n {
            vectors[k * n + dst] = flip * v[k * n + src];
        }
    }
    (values, vectors)
}

/// SVD of a 3×3 matrix: `a = u · diag(s) · vᵀ` with `s` descending and
/// `u`, `v` orthonormal (not necessarily rotations).
pub fn svd3(a: &Mat3) -> (Mat3, Vec3, Mat3) {
    let ata = a.transposed().mat_mul(a);
    let flat: Vec<f64> = ata.m.iter().flatten().copied().collect();
    let (vals, vecs) = jacobi_eigen_sym(flat, 3);
    // Ascending → descending.
    let idx = [2usize, 1, 0];
    let mut v_cols = [Vec3::ZERO; 3];
    let mut s = [0.0f64; 3];
    for (k, &j) in idx.iter().enumerate() {
        v_cols[k] = Vec3::new(vecs[j], vecs[3 + j], vecs[6 + j]);
        s[k] = libm::sqrt(vals[j].max(0.0));
    }
    let v = Mat3::from_cols(v_cols[0], v_cols[1], v_cols[2]);

    let mut u_cols = [Vec3::ZERO; 3];
    let eps = 1e-12 * (s[0].max(1e-300));
    for k in 0..3 {
        if s[k] > eps {
            u_cols[k] = a.mul_vec(v_cols[k]) * (1.0 / s[k]);
        } else {
            // Rank-deficient: complete an orthonormal basis.
            u_cols[k] = if k == 2 {
                u_cols[0].cross(u_cols[1]).normalized()
            } else if k == 1 {
                let c0 = u_cols[0];
                let pick = if c0.x.abs() < 0.9 {
                    Vec3::new(1.0, 0.0, 0.0)
                } else {
                    Vec3::new(0.0, 1.0, 0.0)
                };
                (pick - c0 * pick.dot(c0)).normalized()
            } else {
                Vec3::new(1.0, 0.0, 0.0)
            };
        }
    }
    let u = Mat3::from_cols(u_cols[0], u_cols[1], u_cols[2]);
    (u, Vec3::new(s[0], s[1], s[2]), v)
}

/// Nearest rotation matrix in the Frobenius sense (polar factor with a
/// determinant correction).
pub fn polar_rotation(a: &Mat3) -> Mat3 {
    let (u, _s, v) = svd3(a);
    let d = u.mat_mul(&v.transposed()).det();
    let sign = if d < 0.0 { -1.0 } else { 1.0 };
    let u_fixed = Mat3::from_cols(u.col(0), u.col(1), u.col(2) * sign);
    u_fixed.mat_mul(&v.transposed())
}

/// Rigid fit `dst ≈ R · src + t` by the Kabsch method.
pub fn kabsch(src: &[Vec3], dst: &[Vec3]) -> (Mat3, Vec3) {
    assert_eq!(src.len(), dst.len());
    assert!(src.len() >= 3);
    let n = src.len() as f64;
    let mut sc = Vec3::ZERO;
    let mut dc = Vec3::ZERO;
    for (s, d) in src.iter().zip(dst) {
        sc = sc + *s;
        dc = dc + *d;
    }
    sc = sc * (1.0 / n);
    dc = dc * (1.0 / n);

    let mut h = Mat3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h = h.add_mat(&Mat3::outer(*s - sc, *d - dc));
    }
    let (u, _s, v) = svd3(&h);
    let d = v.mat_mul(&u.transposed()).det();
    let sign = if d < 0.0 { -1.0 } else { 1.0 };
    let v_fixed = Mat3::from_cols(v.col(0), v.col(1), v.col(2) * sign);
    let r = v_fixed.mat_mul(&u.transposed());
    let t = dc - r.mul_vec(sc);
    (r, t)
}

/// Least-squares solve of `a x = b` (row-major `rows×cols`, `rows ≥ cols`)
/// via normal equations and Gaussian elimination with partial pivoting.
/// Returns `None` when the system is numerically singular.
pub fn solve_ls(a: &[f64], rows: usize, cols: usize, b: &[f64]) -> Option<Vec<f64>> {
    assert_eq!(a.len(), rows * cols);
    assert_eq!(b.len(), rows);
    let mut ata = vec![0.0; cols * cols];
    let mut atb = vec![0.0; cols];
    for r in 0..rows {
        let row = &a[r * cols..(r + 1) * cols];
        for i in 0..cols {
            atb[i] += row[i] * b[r];
            for j in i..cols {
                ata[i * cols + j] += row[i] * row[j];
            }
        }
    }
    for i in 0..cols {
        for j in 0..i {
            ata[i * cols + j] = ata[j * cols + i];
        }
    }
    solve_dense(&mut ata, &mut atb, cols)
}

/// In-place Gaussian elimination with partial pivoting on an `n×n` system.
pub fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Option<Vec<f64>> {
    for col in 0..n {
        let mut piv = col;
        let mut piv_abs = a[col * n + col].abs();
        for r in (col + 1)..n {
            let x = a[r * n + col].abs();
            if x > piv_abs {
                piv_abs = x;
                piv = r;
            }
        }
        if piv_abs < 1e-14 {
            return None;
        }
        if piv != col {
            for j in 0..n {
                a.swap(col * n + j, piv * n + j);
            }
            b.swap(col, piv);
        }
        let inv = 1.0 / a[col * n + col];
        for r in (col + 1)..n {
            let f = a[r * n + col] * inv;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                a[r * n + j] -= f * a[col * n + j];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut acc = b[col];
        for j in (col + 1)..n {
            acc -= a[col * n + j] * x[j];
        }
        x[col] = acc / a[col * n + col];
    }
    Some(x)
}
