use numkit::{Graph, Matrix, Var};

use super::config::ModelConfig;
use super::model::{Forward, Routing};

/// One half of the alternating objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Pull the proximity kernels toward the context maps.
    Min,
    /// Push the context maps away from the kernels.
    Max,
}

impl Phase {
    pub fn routing(self) -> Routing {
        match self {
            Phase::Min => Routing::MinPhase,
            Phase::Max => Routing::MaxPhase,
        }
    }

    /// Phase used for optimizer step `step`.
    pub fn for_step(step: usize) -> Self {
        if step.is_multiple_of(2) {
            Phase::Min
        } else {
            Phase::Max
        }
    }
}

/// Unweighted loss components for one window.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    /// Squared Frobenius reconstruction error.
    pub recon: f64,
    /// L1 norm of the per-step disparity.
    pub disparity: f64,
    /// Summed cross-entropy over labeled steps.
    pub class: f64,
    pub labeled: usize,
}

impl LossParts {
    pub fn objective(&self, phase: Phase, cfg: &ModelConfig) -> f64 {
        let class = if self.labeled == 0 { 0.0 } else { self.class };
        match phase {
            Phase::Min => self.recon + cfg.lambda_min * self.disparity + cfg.alpha1 * class,
            Phase::Max => self.recon - cfg.lambda_max * self.disparity + cfg.alpha2 * class,
        }
    }
}

/// Loss components from plain values. `prob` holds per-step attack
/// probabilities; only steps with `mask` set count toward the class term.
pub fn loss_parts(
    recon: &Matrix,
    target: &Matrix,
    disparity: &[f64],
    prob: &[f64],
    labels: &[bool],
    mask: &[bool],
) -> LossParts {
    let diff = recon - target;
    let mut class = 0.0;
    let mut labeled = 0;
    for ((&p, &y), &m) in prob.iter().zip(labels).zip(mask) {
        if m {
            let p = p.clamp(1e-15, 1.0 - 1e-15);
            class -= if y { p.ln() } else { (1.0 - p).ln() };
            labeled += 1;
        }
    }
    LossParts {
        recon: diff.data().iter().map(|v| v * v).sum(),
        disparity: disparity.iter().map(|v| v.abs()).sum(),
        class,
        labeled,
    }
}

/// Graph nodes of a phase objective.
#[derive(Debug, Clone, Copy)]
pub struct PhaseLoss {
    pub total: Var,
    pub recon: Var,
    pub disparity: Var,
    pub class: Option<Var>,
}

/// Builds the phase objective on top of a recorded forward pass. The
/// disparity is non-negative, so its L1 norm is a plain sum.
pub fn phase_loss(
    g: &mut Graph,
    fwd: &Forward,
    target: &Matrix,
    labels: &[bool],
    mask: &[bool],
    phase: Phase,
    cfg: &ModelConfig,
) -> PhaseLoss {
    let t = g.constant(target.clone());
    let diff = g.sub(fwd.recon, t);
    let sq = g.hadamard(diff, diff);
    let recon = g.sum(sq);
    let disparity = g.sum(fwd.disparity);
    let (lambda, alpha) = match phase {
        Phase::Min => (cfg.lambda_min, cfg.alpha1),
        Phase::Max => (-cfg.lambda_max, cfg.alpha2),
    };
    let d = g.scale(disparity, lambda);
    let mut total = g.add(recon, d);
    let class = if mask.iter().any(|m| *m) && alpha > 0.0 {
        let y = Matrix::column(
            &labels
                .iter()
                .map(|&b| if b { 1.0 } else { 0.0 })
                .collect::<Vec<_>>(),
        );
        let w = Matrix::column(
            &mask
                .iter()
                .map(|&b| if b { 1.0 } else { 0.0 })
                .collect::<Vec<_>>(),
        );
        let c = g.bce_with_logits(fwd.logits, &y, &w);
        let cw = g.scale(c, alpha);
        total = g.add(total, cw);
        Some(c)
    } else {
        None
    };
    PhaseLoss {
        total,
        recon,
        disparity,
        class,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_fit_without_labels_is_zero() {
        let r = Matrix::from_fn(3, 2, |i, j| (i + j) as f64);
        let parts = loss_parts(&r, &r, &[0.0; 3], &[0.3; 3], &[false; 3], &[false; 3]);
        assert_eq!(parts.objective(Phase::Min, &ModelConfig::default()), 0.0);
    }

    #[test]
    fn unit_error_reconstruction() {
        let target = Matrix::zeros(2, 3);
        let parts = loss_parts(
            &Matrix::filled(2, 3, 1.0),
            &target,
            &[0.0; 2],
            &[0.5; 2],
            &[false; 2],
            &[false; 2],
        );
        assert_eq!(parts.recon, 6.0);
    }

    #[test]
    fn coin_flip_cross_entropy() {
        let r = Matrix::zeros(4, 1);
        let labels = [true, false, true, true];
        let parts = loss_parts(&r, &r, &[0.0; 4], &[0.5; 4], &labels, &[true; 4]);
        assert!((parts.class - 4.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(parts.labeled, 4);
    }

    #[test]
    fn phases_alternate() {
        assert_eq!(Phase::for_step(0), Phase::Min);
        assert_eq!(Phase::for_step(1), Phase::Max);
    }
}
