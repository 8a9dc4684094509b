//! Running extremes of the quantities the boundedness lemma constrains.

use numkit::Matrix;
use serde::{Deserialize, Serialize};

/// Extremes gathered during a filter pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaLog {
    pub steps: usize,
    pub max_transition_norm: f64,
    pub min_abs_transition_det: f64,
    pub max_observation_norm: f64,
    pub min_cov_eigenvalue: f64,
    pub max_cov_eigenvalue: f64,
    pub non_finite: bool,
}

impl Default for LemmaLog {
    fn default() -> Self {
        Self {
            steps: 0,
            max_transition_norm: 0.0,
            min_abs_transition_det: f64::INFINITY,
            max_observation_norm: 0.0,
            min_cov_eigenvalue: f64::INFINITY,
            max_cov_eigenvalue: f64::NEG_INFINITY,
            non_finite: false,
        }
    }
}

impl LemmaLog {
    pub fn record_transition(&mut self, f: &Matrix) {
        self.steps += 1;
        if !f.is_finite() {
            self.non_finite = true;
            return;
        }
        self.max_transition_norm = self.max_transition_norm.max(f.spectral_norm());
        let det = f.determinant().map(f64::abs).unwrap_or(0.0);
        self.min_abs_transition_det = self.min_abs_transition_det.min(det);
    }

    pub fn record_observation(&mut self, h: &Matrix) {
        if !h.is_finite() {
            self.non_finite = true;
            return;
        }
        self.max_observation_norm = self.max_observation_norm.max(h.spectral_norm());
    }

    pub fn record_covariance(&mut self, p: &Matrix, x: &[f64]) {
        if !p.is_finite() || !x.iter().all(|v| v.is_finite()) {
            self.non_finite = true;
            return;
        }
        if let Ok(eig) = p.symmetric_eigenvalues() {
            self.min_cov_eigenvalue = self.min_cov_eigenvalue.min(eig[0]);
            self.max_cov_eigenvalue = self.max_cov_eigenvalue.max(eig[eig.len() - 1]);
        }
    }
}

/// Limits checked against a [`LemmaLog`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaBounds {
    /// Upper bound on `‖∇f‖`.
    pub transition_norm: f64,
    /// Upper bound on `‖∇g‖`.
    pub observation_norm: f64,
    /// Lower bound on `|det ∇f|`.
    pub transition_det: f64,
    /// Allowed range of covariance eigenvalues.
    pub cov_eigen_min: f64,
    pub cov_eigen_max: f64,
}

impl Default for LemmaBounds {
    fn default() -> Self {
        Self {
            transition_norm: 2.0,
            observation_norm: 2.0,
            transition_det: 1e-6,
            cov_eigen_min: -1e-9,
            cov_eigen_max: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub log: LemmaLog,
    pub bounds: LemmaBounds,
    pub passed: bool,
    pub failures: Vec<String>,
}

pub fn check_lemma_conditions(log: &LemmaLog, bounds: &LemmaBounds) -> LemmaReport {
    let mut failures = Vec::new();
    if log.non_finite {
        failures.push("non-finite Jacobian, state or covariance".to_string());
    }
    if log.max_transition_norm > bounds.transition_norm {
        failures.push(format!(
            "max ‖∇f‖ = {} > {}",
            log.max_transition_norm, bounds.transition_norm
        ));
    }
    if log.steps > 0 && log.min_abs_transition_det < bounds.transition_det {
        failures.push(format!(
            "min |det ∇f| = {} < {}",
            log.min_abs_transition_det, bounds.transition_det
        ));
    }
    if log.max_observation_norm > bounds.observation_norm {
        failures.push(format!(
            "max ‖∇g‖ = {} > {}",
            log.max_observation_norm, bounds.observation_norm
        ));
    }
    if log.min_cov_eigenvalue < bounds.cov_eigen_min {
        failures.push(format!(
            "min eig(P) = {} < {}",
            log.min_cov_eigenvalue, bounds.cov_eigen_min
        ));
    }
    if log.max_cov_eigenvalue > bounds.cov_eigen_max {
        failures.push(format!(
            "max eig(P) = {} > {}",
            log.max_cov_eigenvalue, bounds.cov_eigen_max
        ));
    }
    LemmaReport {
        log: log.clone(),
        bounds: bounds.clone(),
        passed: failures.is_empty(),
        failures,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_system_passes_trivially() {
        let mut log = LemmaLog::default();
        let f = Matrix::from_rows(&[[1.0, 0.1], [0.0, 1.0]]);
        for _ in 0..10 {
            log.record_transition(&f);
            log.record_observation(&Matrix::identity(2));
            log.record_covariance(&Matrix::identity(2), &[0.0, 0.0]);
        }
        let norm = f.spectral_norm();
        assert_eq!(log.max_transition_norm, norm);
        assert_eq!(log.min_abs_transition_det, 1.0);
        assert!(check_lemma_conditions(&log, &LemmaBounds::default()).passed);
    }

    #[test]
    fn nan_is_flagged() {
        let mut log = LemmaLog::default();
        log.record_transition(&Matrix::from_rows(&[[f64::NAN]]));
        let report = check_lemma_conditions(&log, &LemmaBounds::default());
        assert!(!report.passed);
        assert!(report.failures[0].contains("non-finite"));
    }
}
