//! Small dense factorizations: LU with partial pivoting and the cyclic
//! Jacobi eigenvalue sweep for symmetric matrices.

use crate::{Matrix, NumError};

/// LU factorization `P·A = L·U` stored compactly.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: Matrix,
    perm: Vec<usize>,
    sign: f64,
}

impl Lu {
    pub fn factor(a: &Matrix) -> Result<Self, NumError> {
        let (n, c) = a.shape();
        if n != c {
            return Err(NumError::NotSquare { shape: a.shape() });
        }
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        let scale = a.max_abs().max(f64::MIN_POSITIVE);
        for k in 0..n {
            let (pivot_row, pivot) =
                (k..n)
                    .map(|i| (i, lu.get(i, k).abs()))
                    .fold(
                        (k, -1.0),
                        |best, cur| if cur.1 > best.1 { cur } else { best },
                    );
            if pivot <= scale * 1e-15 {
                return Err(NumError::Singular);
            }
            if pivot_row != k {
                for j in 0..n {
                    let tmp = lu.get(k, j);
                    lu.set(k, j, lu.get(pivot_row, j));
                    lu.set(pivot_row, j, tmp);
                }
                perm.swap(k, pivot_row);
                sign = -sign;
            }
            let diag = lu.get(k, k);
            for i in (k + 1)..n {
                let factor = lu.get(i, k) / diag;
                lu.set(i, k, factor);
                if factor != 0.0 {
                    for j in (k + 1)..n {
                        let v = lu.get(i, j) - factor * lu.get(k, j);
                        lu.set(i, j, v);
                    }
                }
            }
        }
        Ok(Self { lu, perm, sign })
    }

    pub fn determinant(&self) -> f64 {
        (0..self.lu.rows()).fold(self.sign, |acc, i| acc * self.lu.get(i, i))
    }

    /// Solves `A·X = B` for every column of `B`.
    pub fn solve(&self, b: &Matrix) -> Result<Matrix, NumError> {
        let n = self.lu.rows();
        if b.rows() != n {
            return Err(NumError::Shape {
                op: "lu_solve",
                left: self.lu.shape(),
                right: b.shape(),
            });
        }
        let mut x = Matrix::from_fn(n, b.cols(), |i, j| b.get(self.perm[i], j));
        for col in 0..b.cols() {
            for i in 0..n {
                let mut acc = x.get(i, col);
                for k in 0..i {
                    acc -= self.lu.get(i, k) * x.get(k, col);
                }
                x.set(i, col, acc);
            }
            for i in (0..n).rev() {
                let mut acc = x.get(i, col);
                for k in (i + 1)..n {
                    acc -= self.lu.get(i, k) * x.get(k, col);
                }
                x.set(i, col, acc / self.lu.get(i, i));
            }
        }
        Ok(x)
    }
}

impl Matrix {
    pub fn inverse(&self) -> Result<Matrix, NumError> {
        Lu::factor(self)?.solve(&Matrix::identity(self.rows()))
    }

    /// Determinant via LU; a singular matrix has determinant 0.
    pub fn determinant(&self) -> Result<f64, NumError> {
        match Lu::factor(self) {
            Ok(lu) => Ok(lu.determinant()),
            Err(NumError::Singular) => Ok(0.0),
            Err(e) => Err(e),
        }
    }

    /// Eigenvalues of a symmetric matrix, ascending. Only the upper
    /// triangle's symmetric part is used.
    pub fn symmetric_eigenvalues(&self) -> Result<Vec<f64>, NumError> {
        let (n, c) = self.shape();
        if n != c {
            return Err(NumError::NotSquare {
                shape: self.shape(),
            });
        }
        let mut a = self.clone();
        a.symmetrize();
        for _sweep in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
                .map(|(i, j)| a.get(i, j).powi(2))
                .sum();
            if off <= 1e-30 * (1.0 + a.frobenius_norm().powi(2)) {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a.get(p, q);
                    if apq.abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let cos = 1.0 / (t * t + 1.0).sqrt();
                    let sin = t * cos;
                    for k in 0..n {
                        let akp = a.get(k, p);
                        let akq = a.get(k, q);
                        a.set(k, p, cos * akp - sin * akq);
                        a.set(k, q, sin * akp + cos * akq);
                    }
                    for k in 0..n {
                        let apk = a.get(p, k);
                        let aqk = a.get(q, k);
                        a.set(p, k, cos * apk - sin * aqk);
                        a.set(q, k, sin * apk + cos * aqk);
                    }
                }
            }
        }
        let mut eig: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
        eig.sort_by(|x, y| x.total_cmp(y));
        Ok(eig)
    }

    /// Spectral norm of a general matrix, `sqrt(λ_max(AᵀA))`.
    pub fn spectral_norm(&self) -> f64 {
        let gram = self.t_matmul(self).expect("gram shape");
        gram.symmetric_eigenvalues()
            .ok()
            .and_then(|e| e.last().copied())
            .unwrap_or(0.0)
            .max(0.0)
            .sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_round_trips() {
        let a = Matrix::from_rows(&[[4.0, 7.0, 2.0], [3.0, 6.0, 1.0], [2.0, 5.0, 3.0]]);
        let inv = a.inverse().unwrap();
        let id = &a * &inv;
        assert!((&id - &Matrix::identity(3)).max_abs() < 1e-12);
    }

    #[test]
    fn determinant_of_known_matrix() {
        let a = Matrix::from_rows(&[[0.0, 2.0], [3.0, 4.0]]);
        assert!((a.determinant().unwrap() + 6.0).abs() < 1e-12);
        let singular = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0]]);
        assert_eq!(singular.determinant().unwrap(), 0.0);
        assert!(matches!(singular.inverse(), Err(NumError::Singular)));
    }

    #[test]
    fn jacobi_recovers_known_spectrum() {
        let a = Matrix::from_rows(&[[2.0, 1.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 5.0]]);
        let e = a.symmetric_eigenvalues().unwrap();
        for (got, want) in e.iter().zip([1.0, 3.0, 5.0]) {
            assert!((got - want).abs() < 1e-12, "{e:?}");
        }
        let r = Matrix::from_rows(&[[3.0, 0.0], [4.0, 0.0]]);
        assert!((r.spectral_norm() - 5.0).abs() < 1e-12);
    }
}
