//! Model-agnostic extended Kalman filter.

use numkit::{Lu, Matrix};

use crate::error::{Error, Result};

/// Discrete-time process `x' = f(x, u)`.
pub trait Dynamics {
    type Input;

    fn transition(&self, x: &[f64], u: &Self::Input, dt: f64) -> Vec<f64>;

    /// `∂f/∂x` at `(x, u)`.
    fn jacobian(&self, x: &[f64], u: &Self::Input, dt: f64) -> Matrix;

    /// Per-step process covariance.
    fn process_noise(&self, x: &[f64], u: &Self::Input, dt: f64) -> Matrix;
}

/// Measurement `y = g(x) + v`.
pub trait Observation {
    fn predict(&self, x: &[f64]) -> Vec<f64>;

    /// `∂g/∂x` at `x`.
    fn jacobian(&self, x: &[f64]) -> Matrix;

    fn noise(&self) -> &Matrix;

    /// `y − ŷ`; angle channels override this to wrap.
    fn difference(&self, y: &[f64], predicted: &[f64]) -> Vec<f64> {
        y.iter().zip(predicted).map(|(a, b)| a - b).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EkfState {
    pub x: Vec<f64>,
    pub p: Matrix,
}

/// What an update saw and did.
#[derive(Debug, Clone)]
pub struct Innovation {
    /// `y − g(x̂_{k|k−1})`, taken before the state moves.
    pub residue: Vec<f64>,
    /// `H·P·Hᵀ + R`.
    pub covariance: Matrix,
    pub gain: Matrix,
    pub jacobian: Matrix,
}

impl EkfState {
    pub fn new(x: Vec<f64>, p: Matrix) -> Self {
        assert_eq!(p.shape(), (x.len(), x.len()), "covariance shape");
        Self { x, p }
    }

    /// `x̂ ← f(x̂, u)`, `P ← F·P·Fᵀ + Q`. Returns `F`.
    pub fn predict<D: Dynamics>(&mut self, model: &D, u: &D::Input, dt: f64) -> Result<Matrix> {
        if !(dt > 0.0) {
            return Err(Error::contract(format!("predict needs dt > 0, got {dt}")));
        }
        let f = model.jacobian(&self.x, u, dt);
        let q = model.process_noise(&self.x, u, dt);
        self.x = model.transition(&self.x, u, dt);
        let fp = f.matmul(&self.p)?;
        self.p = &fp.matmul_t(&f)? + &q;
        self.p.symmetrize();
        Ok(f)
    }

    /// Residue and innovation covariance at the current estimate, without
    /// touching it.
    pub fn innovation<O: Observation>(
        &self,
        obs: &O,
        y: &[f64],
    ) -> Result<(Vec<f64>, Matrix, Matrix)> {
        let predicted = obs.predict(&self.x);
        let residue = obs.difference(y, &predicted);
        let h = obs.jacobian(&self.x);
        let s = &h.matmul(&self.p.matmul_t(&h)?)? + obs.noise();
        Ok((residue, s, h))
    }

    /// `K = P·Hᵀ·S⁻¹`, `x̂ ← x̂ + K·r`, `P ← P − K·H·P`.
    pub fn update<O: Observation>(&mut self, obs: &O, y: &[f64]) -> Result<Innovation> {
        let (residue, s, h) = self.innovation(obs, y)?;
        let pht = self.p.matmul_t(&h)?;
        let lu = Lu::factor(&s).map_err(|e| {
            let diag: Vec<f64> = (0..s.rows()).map(|i| s.get(i, i)).collect();
            Error::numeric(format!(
                "innovation covariance not invertible ({e}); diag(S) = {diag:?}, trace(P) = {}",
                self.p.trace()
            ))
        })?;
        // S is symmetric, so K = (S⁻¹·(P·Hᵀ)ᵀ)ᵀ
        let gain = lu.solve(&pht.transpose())?.transpose();
        let dx = gain.matmul(&Matrix::column(&residue))?;
        for (xi, d) in self.x.iter_mut().zip(dx.data()) {
            *xi += d;
        }
        let khp = gain.matmul(&h)?.matmul(&self.p)?;
        self.p = &self.p - &khp;
        self.p.symmetrize();
        Ok(Innovation {
            residue,
            covariance: s,
            gain,
            jacobian: h,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `x' = x + dt·u`, `y = x`, all scalars.
    struct Scalar {
        q: f64,
        r: Matrix,
    }

    impl Dynamics for Scalar {
        type Input = f64;
        fn transition(&self, x: &[f64], u: &f64, dt: f64) -> Vec<f64> {
            vec![x[0] + dt * u]
        }
        fn jacobian(&self, _: &[f64], _: &f64, _: f64) -> Matrix {
            Matrix::identity(1)
        }
        fn process_noise(&self, _: &[f64], _: &f64, _: f64) -> Matrix {
            Matrix::scalar(self.q)
        }
    }

    impl Observation for Scalar {
        fn predict(&self, x: &[f64]) -> Vec<f64> {
            vec![x[0]]
        }
        fn jacobian(&self, _: &[f64]) -> Matrix {
            Matrix::identity(1)
        }
        fn noise(&self) -> &Matrix {
            &self.r
        }
    }

    #[test]
    fn perfect_measurement_leaves_state_alone() {
        let sys = Scalar {
            q: 0.1,
            r: Matrix::scalar(0.5),
        };
        let mut s = EkfState::new(vec![2.0], Matrix::scalar(1.0));
        let inn = s.update(&sys, &[2.0]).unwrap();
        assert_eq!(inn.residue, vec![0.0]);
        assert_eq!(s.x, vec![2.0]);
    }

    #[test]
    fn matches_hand_rolled_scalar_filter() {
        let (q, r, dt) = (0.01, 0.25, 0.1);
        let sys = Scalar {
            q,
            r: Matrix::scalar(r),
        };
        let mut s = EkfState::new(vec![0.0], Matrix::scalar(1.0));
        let (mut x, mut p) = (0.0_f64, 1.0_f64);
        for k in 0..200 {
            let u = (k as f64 * 0.3).sin();
            let y = (k as f64 * 0.17).cos() * 3.0;
            s.predict(&sys, &u, dt).unwrap();
            x += dt * u;
            p += q;
            assert!((s.x[0] - x).abs() <= 1e-12 && (s.p.get(0, 0) - p).abs() <= 1e-12);
            s.update(&sys, &[y]).unwrap();
            let k_gain = p / (p + r);
            x += k_gain * (y - x);
            p -= k_gain * p;
            assert!((s.x[0] - x).abs() <= 1e-12 && (s.p.get(0, 0) - p).abs() <= 1e-12);
        }
    }

    #[test]
    fn singular_innovation_is_numeric_error() {
        let sys = Scalar {
            q: 0.0,
            r: Matrix::scalar(0.0),
        };
        let mut s = EkfState::new(vec![0.0], Matrix::scalar(0.0));
        assert!(matches!(s.update(&sys, &[1.0]), Err(Error::Numeric(_))));
    }

    #[test]
    fn non_positive_dt_is_rejected() {
        let sys = Scalar {
            q: 0.0,
            r: Matrix::scalar(1.0),
        };
        let mut s = EkfState::new(vec![0.0], Matrix::scalar(1.0));
        assert!(s.predict(&sys, &0.0, 0.0).is_err());
    }
}
