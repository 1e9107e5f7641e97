//! Dense linear algebra for small symmetric problems.
//!
//! Covariance matrices here are tiny (one row/column per composition part),
//! so a cyclic Jacobi eigensolver and a pivoted Gaussian solve cover all
//! needs without an external linear-algebra dependency.

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        assert!(rows.iter().all(|r| r.len() == n), "matrix must be square");
        let mut data = Vec::with_capacity(n * n);
        for r in rows {
            data.extend_from_slice(r);
        }
        Self { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }
}

/// Eigendecomposition of a symmetric matrix: values descending, vectors as
/// rows aligned with the values.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    /// `vectors[k]` is the unit eigenvector for `values[k]`.
    pub vectors: Vec<Vec<f64>>,
}

/// Cyclic Jacobi eigendecomposition for symmetric matrices.
///
/// Rotations repeat until every off-diagonal entry falls below 1e-14 of the
/// matrix scale (at most 64 sweeps; tiny matrices converge in a handful).
pub fn symmetric_eigen(matrix: &SquareMatrix) -> SymmetricEigen {
    let n = matrix.n;
    let mut a = matrix.clone();
    // accumulated rotations, starts as identity; v[i][j], column j = eigvec j
    let mut v = SquareMatrix::zeros(n);
    for i in 0..n {
        v.set(i, i, 1.0);
    }
    let scale: f64 = (0..n)
        .map(|i| (0..n).map(|j| a.get(i, j).abs()).sum::<f64>())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);

    for _sweep in 0..64 {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off = off.max(a.get(i, j).abs());
            }
        }
        if off <= 1e-14 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                // tan of the rotation angle, the smaller root
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| {
        a.get(y, y)
            .partial_cmp(&a.get(x, x))
            .expect("finite eigenvalues")
    });
    let values: Vec<f64> = order.iter().map(|&k| a.get(k, k)).collect();
    let vectors: Vec<Vec<f64>> = order
        .iter()
        .map(|&k| (0..n).map(|i| v.get(i, k)).collect())
        .collect();
    SymmetricEigen { values, vectors }
}

/// Solve A x = b by Gaussian elimination with partial pivoting.
///
/// Returns `None` when the system is numerically singular.
pub fn solve(a: &SquareMatrix, b: &[f64]) -> Option<Vec<f64>> {
    let n = a.n;
    assert_eq!(b.len(), n);
    let mut m = a.clone();
    let mut x = b.to_vec();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| {
                m.get(i, col)
                    .abs()
                    .partial_cmp(&m.get(j, col).abs())
                    .expect("finite matrix")
            })
            .expect("non-empty range");
        if m.get(pivot, col).abs() < 1e-300 {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                let tmp = m.get(col, k);
                m.set(col, k, m.get(pivot, k));
                m.set(pivot, k, tmp);
            }
            x.swap(col, pivot);
        }
        let d = m.get(col, col);
        for row in (col + 1)..n {
            let f = m.get(row, col) / d;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                m.set(row, k, m.get(row, k) - f * m.get(col, k));
            }
            x[row] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        let mut s = x[col];
        for k in (col + 1)..n {
            s -= m.get(col, k) * x[k];
        }
        x[col] = s / m.get(col, col);
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn eigen_of_diagonal_matrix() {
        let m = SquareMatrix::from_rows(&[
            vec![3.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 2.0],
        ]);
        let e = symmetric_eigen(&m);
        assert_relative_eq!(e.values[0], 3.0, epsilon = 1e-12);
        assert_relative_eq!(e.values[1], 2.0, epsilon = 1e-12);
        assert_relative_eq!(e.values[2], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn eigen_known_two_by_two() {
        // [[2, 1], [1, 2]] has eigenvalues 3 and 1
        let m = SquareMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let e = symmetric_eigen(&m);
        assert_relative_eq!(e.values[0], 3.0, epsilon = 1e-12);
        assert_relative_eq!(e.values[1], 1.0, epsilon = 1e-12);
        let v = &e.vectors[0];
        assert_relative_eq!(v[0].abs(), (0.5f64).sqrt(), epsilon = 1e-10);
        assert_relative_eq!(v[1].abs(), (0.5f64).sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn eigen_reconstructs_matrix() {
        let m = SquareMatrix::from_rows(&[
            vec![4.0, 1.0, 0.5, -0.2],
            vec![1.0, 3.0, -0.7, 0.3],
            vec![0.5, -0.7, 2.0, 0.1],
            vec![-0.2, 0.3, 0.1, 1.5],
        ]);
        let e = symmetric_eigen(&m);
        let n = m.n();
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += e.values[k] * e.vectors[k][i] * e.vectors[k][j];
                }
                assert_relative_eq!(s, m.get(i, j), epsilon = 1e-10);
            }
        }
        // eigenvectors orthonormal
        for a in 0..n {
            for b in 0..n {
                let dot: f64 = (0..n).map(|i| e.vectors[a][i] * e.vectors[b][i]).sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert_relative_eq!(dot, expect, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn solve_known_system() {
        let a = SquareMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 3.0]]);
        let x = solve(&a, &[5.0, 10.0]).unwrap();
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(x[1], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn solve_rejects_singular() {
        let a = SquareMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        assert!(solve(&a, &[1.0, 2.0]).is_none());
    }
}
