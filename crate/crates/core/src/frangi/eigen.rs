//! Closed-form eigenvalues of small symmetric matrices.

use std::f64::consts::PI;

/// A real symmetric 2x2 or 3x3 matrix, stored as its upper triangle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SymmetricMatrix {
    /// `[a11, a12, a22]`
    Two([f64; 3]),
    /// `[a11, a12, a13, a22, a23, a33]`
    Three([f64; 6]),
}

impl SymmetricMatrix {
    pub fn dim(&self) -> usize {
        match self {
            SymmetricMatrix::Two(_) => 2,
            SymmetricMatrix::Three(_) => 3,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        match self {
            SymmetricMatrix::Two(m) => m[i + j],
            SymmetricMatrix::Three(m) => match (i, j) {
                (0, 0) => m[0],
                (0, 1) => m[1],
                (0, 2) => m[2],
                (1, 1) => m[3],
                (1, 2) => m[4],
                (2, 2) => m[5],
                _ => panic!("index ({i}, {j}) out of range"),
            },
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        let n = self.dim();
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += self.get(i, j).powi(2);
            }
        }
        s.sqrt()
    }
}

fn sort_by_abs<const N: usize>(mut v: [f64; N]) -> [f64; N] {
    v.sort_by(|a, b| a.abs().total_cmp(&b.abs()).then(a.total_cmp(b)));
    v
}

/// Eigenvalues of `[[xx, xy], [xy, yy]]`, ordered by absolute value.
#[inline]
pub fn eigen2(xx: f64, xy: f64, yy: f64) -> [f64; 2] {
    let mean = 0.5 * (xx + yy);
    let radius = (0.5 * (xx - yy)).hypot(xy);
    // Recover the smaller-magnitude root from the determinant to avoid cancellation.
    let big = if mean >= 0.0 { mean + radius } else { mean - radius };
    let small = if big != 0.0 {
        (xx * yy - xy * xy) / big
    } else {
        0.0
    };
    sort_by_abs([small, big])
}

/// Eigenvalues of a symmetric 3x3 matrix `[xx, xy, xz, yy, yz, zz]`,
/// ordered by absolute value.
///
/// Trigonometric solution of the characteristic cubic; near-repeated roots,
/// where `acos` loses precision, go through cyclic Jacobi rotations instead.
pub fn eigen3(m: [f64; 6]) -> [f64; 3] {
    let [a, b, c, d, e, f] = m;
    let off = b * b + c * c + e * e;
    if off == 0.0 {
        return sort_by_abs([a, d, f]);
    }
    let q = (a + d + f) / 3.0;
    let (a0, d0, f0) = (a - q, d - q, f - q);
    let p2 = a0 * a0 + d0 * d0 + f0 * f0 + 2.0 * off;
    let p = (p2 / 6.0).sqrt();
    if p == 0.0 {
        return [q; 3];
    }
    let (ba, bb, bc, bd, be, bf) = (a0 / p, b / p, c / p, d0 / p, e / p, f0 / p);
    let det = ba * (bd * bf - be * be) - bb * (bb * bf - be * bc) + bc * (bb * be - bd * bc);
    let r = 0.5 * det;
    if 1.0 - r.abs() < 1e-8 {
        return sort_by_abs(jacobi3(m));
    }
    let phi = r.acos() / 3.0;
    let e1 = q + 2.0 * p * phi.cos();
    let e3 = q + 2.0 * p * (phi + 2.0 * PI / 3.0).cos();
    let e2 = 3.0 * q - e1 - e3;
    sort_by_abs([e1, e2, e3])
}

/// Cyclic Jacobi eigenvalue iteration on a symmetric 3x3 matrix.
fn jacobi3(m: [f64; 6]) -> [f64; 3] {
    let mut a = [[m[0], m[1], m[2]], [m[1], m[3], m[4]], [m[2], m[4], m[5]]];
    for _ in 0..64 {
        let off = a[0][1].abs() + a[0][2].abs() + a[1][2].abs();
        let scale = a[0][0].abs() + a[1][1].abs() + a[2][2].abs() + off;
        if off <= f64::EPSILON * 1e-3 * scale || off == 0.0 {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if a[p][q] == 0.0 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let cs = 1.0 / (t * t + 1.0).sqrt();
            let sn = t * cs;
            for row in a.iter_mut() {
                let (kp, kq) = (row[p], row[q]);
                row[p] = cs * kp - sn * kq;
                row[q] = sn * kp + cs * kq;
            }
            for k in 0..3 {
                let (pk, qk) = (a[p][k], a[q][k]);
                a[p][k] = cs * pk - sn * qk;
                a[q][k] = sn * pk + cs * qk;
            }
        }
    }
    [a[0][0], a[1][1], a[2][2]]
}

/// Eigenvalues of a symmetric matrix, sorted by absolute value ascending.
pub fn eigen_symmetric(matrix: &SymmetricMatrix) -> Vec<f64> {
    match *matrix {
        SymmetricMatrix::Two([xx, xy, yy]) => eigen2(xx, xy, yy).to_vec(),
        SymmetricMatrix::Three(m) => eigen3(m).to_vec(),
    }
}

/// Unit eigenvector for a known eigenvalue by inverse iteration.
///
/// The residual `|A v - lambda v|` stays at rounding level even when
/// `lambda` belongs to a nearly repeated pair.
pub fn eigenvector_for(matrix: &SymmetricMatrix, lambda: f64) -> Vec<f64> {
    let n = matrix.dim();
    let scale = matrix.frobenius_norm().max(f64::MIN_POSITIVE);
    let mut shifted = [[0.0; 3]; 3];
    for (i, row) in shifted.iter_mut().enumerate().take(n) {
        for (j, v) in row.iter_mut().enumerate().take(n) {
            *v = matrix.get(i, j) - if i == j { lambda } else { 0.0 };
        }
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    let starts: [[f64; 3]; 3] = [[1.0, 0.7, 0.4], [-0.3, 1.0, 0.8], [0.5, -0.6, 1.0]];
    for start in starts {
        let mut v: Vec<f64> = start[..n].to_vec();
        for _ in 0..3 {
            let x = solve_shifted(&shifted, n, &v, scale);
            let norm = x.iter().map(|t| t * t).sum::<f64>().sqrt();
            if !(norm.is_finite() && norm > 0.0) {
                break;
            }
            v = x.iter().map(|t| t / norm).collect();
        }
        let residual = residual(matrix, lambda, &v);
        if best.as_ref().is_none_or(|(r, _)| residual < *r) {
            best = Some((residual, v));
        }
    }
    best.map(|(_, v)| v).unwrap_or_else(|| {
        let mut v = vec![0.0; n];
        v[0] = 1.0;
        v
    })
}

/// `|A v - lambda v|_2`.
pub fn residual(matrix: &SymmetricMatrix, lambda: f64, v: &[f64]) -> f64 {
    let n = matrix.dim();
    (0..n)
        .map(|i| {
            let av: f64 = (0..n).map(|j| matrix.get(i, j) * v[j]).sum();
            (av - lambda * v[i]).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

/// Gaussian elimination with partial pivoting; zero pivots are replaced by a
/// rounding-level perturbation so singular shifts still yield a direction.
fn solve_shifted(a: &[[f64; 3]; 3], n: usize, b: &[f64], scale: f64) -> Vec<f64> {
    let mut m = *a;
    let mut rhs = [0.0; 3];
    rhs[..n].copy_from_slice(b);
    let tiny = f64::EPSILON * scale;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap_or(col);
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        if m[col][col].abs() < tiny {
            m[col][col] = tiny;
        }
        for row in col + 1..n {
            let factor = m[row][col] / m[col][col];
            for k in col..n {
                m[row][k] -= factor * m[col][k];
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = rhs[row];
        for k in row + 1..n {
            acc -= m[row][k] * x[k];
        }
        x[row] = acc / m[row][row];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal() {
        assert_eq!(eigen3([3.0, 0.0, 0.0, 1.0, 0.0, 2.0]), [1.0, 2.0, 3.0]);
    }

    #[test]
    fn two_by_two() {
        let e = eigen2(2.0, 1.0, 2.0);
        assert!((e[0] - 1.0).abs() < 1e-15 && (e[1] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn zero_matrix() {
        assert_eq!(eigen3([0.0; 6]), [0.0; 3]);
        assert_eq!(eigen2(0.0, 0.0, 0.0), [0.0; 2]);
    }

    #[test]
    fn ordering_is_by_magnitude() {
        let e = eigen2(-5.0, 0.0, 1.0);
        assert_eq!(e, [1.0, -5.0]);
        let e = eigen3([-4.0, 0.0, 0.0, 2.0, 0.0, -0.5]);
        assert_eq!(e, [-0.5, 2.0, -4.0]);
    }

    #[test]
    fn repeated_root_goes_through_jacobi() {
        // eigenvalues {1, 1, 4}: J = ones(3) has eigenvalues {0, 0, 3}; A = I + J
        let e = eigen3([2.0, 1.0, 1.0, 2.0, 1.0, 2.0]);
        assert!((e[0] - 1.0).abs() < 1e-12);
        assert!((e[1] - 1.0).abs() < 1e-12);
        assert!((e[2] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn eigenvectors_have_small_residual() {
        let m = SymmetricMatrix::Three([2.0, 1.0, 1.0, 2.0, 1.0, 2.0]);
        for lambda in eigen_symmetric(&m) {
            let v = eigenvector_for(&m, lambda);
            assert!(residual(&m, lambda, &v) < 1e-12);
            let norm: f64 = v.iter().map(|t| t * t).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
        let m = SymmetricMatrix::Two([0.0, 0.0, 0.0]);
        let v = eigenvector_for(&m, 0.0);
        assert!(residual(&m, 0.0, &v) == 0.0);
    }
}
