//! Central finite-difference checks of the analytic gradients.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::Result;
use crate::mdp::{random_mdp, Mdp, RewardMode};
use crate::policy::{TreeModel, TreePolicyConfig, Variant};
use crate::variance::seeded_theta;

pub const DEFAULT_STEP: f64 = 1e-5;

/// `d log pi(a|root) / d theta(k)` by central differences of the policy.
pub fn finite_difference_gradient(
    mdp: &Mdp,
    config: &TreePolicyConfig,
    root: usize,
    step: f64,
) -> Result<DMatrix<f64>> {
    let n = mdp.num_states();
    let mut out = DMatrix::zeros(mdp.num_actions(), n);
    for k in 0..n {
        let mut plus = config.theta.clone();
        plus[k] += step;
        let mut minus = config.theta.clone();
        minus[k] -= step;
        let cp = config.with_theta(plus)?;
        let cm = config.with_theta(minus)?;
        let pp = TreeModel::new(mdp, &cp)?.distribution(root)?.probs;
        let pm = TreeModel::new(mdp, &cm)?.distribution(root)?.probs;
        for a in 0..mdp.num_actions() {
            out[(a, k)] = (pp[a].ln() - pm[a].ln()) / (2.0 * step);
        }
    }
    Ok(out)
}

/// `|analytic - numeric| / max(1, |analytic|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckSettings {
    /// Instances per variant.
    pub suite_size: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub step: f64,
    /// Negates entry `(0, root)` of every C gradient, to exercise the checker.
    pub inject_sign_flip: bool,
}

impl Default for GradcheckSettings {
    fn default() -> Self {
        Self {
            suite_size: 50,
            seed: 0,
            tolerance: 1e-5,
            step: DEFAULT_STEP,
            inject_sign_flip: false,
        }
    }
}

/// One mismatching gradient entry.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckFailure {
    pub instance_seed: u64,
    pub variant: Variant,
    pub depth: usize,
    pub root: usize,
    pub action: usize,
    pub state: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub checked_entries: usize,
    pub max_relative_error: f64,
    /// Largest `|pi^T grad|` seen.
    pub max_score_defect: f64,
    pub failures: Vec<GradcheckFailure>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// The randomized instance checked for `variant` under `seed`.
pub fn gradcheck_instance(
    variant: Variant,
    seed: u64,
) -> Result<(Mdp, TreePolicyConfig, usize)> {
    let s = 2 + (seed % 4) as usize;
    let a = 2 + ((seed / 4) % 3) as usize;
    let depth = 1 + ((seed / 3) % 4) as usize;
    let beta = 0.5 + 0.2 * (seed % 7) as f64;
    let rewards = match variant {
        Variant::Cumulative => RewardMode::StateAction,
        Variant::Exponentiated => RewardMode::State,
    };
    let (mdp, behavior) = random_mdp(s, a, rewards, 0.9, seed)?;
    let theta = seeded_theta(s, seed).map(|t| 2.0 * t - 1.0);
    let config = TreePolicyConfig::new(variant, depth, beta, theta, behavior)?;
    let root = (seed % s as u64) as usize;
    Ok((mdp, config, root))
}

pub fn run_gradcheck(settings: &GradcheckSettings) -> Result<GradcheckReport> {
    let mut report = GradcheckReport {
        checked_entries: 0,
        max_relative_error: 0.0,
        max_score_defect: 0.0,
        failures: Vec::new(),
    };
    for variant in [Variant::Cumulative, Variant::Exponentiated] {
        for i in 0..settings.suite_size as u64 {
            let instance_seed = settings.seed.wrapping_add(i);
            let (mdp, config, root) = gradcheck_instance(variant, instance_seed)?;
            let model = TreeModel::new(&mdp, &config)?;
            let mut analytic = model.gradient(root)?.values;
            if settings.inject_sign_flip && variant == Variant::Cumulative {
                analytic[(0, root)] = -analytic[(0, root)];
            }
            let pi = model.distribution(root)?.probs;
            let defect = (pi.transpose() * &analytic).amax();
            report.max_score_defect = report.max_score_defect.max(defect);
            let numeric = finite_difference_gradient(&mdp, &config, root, settings.step)?;
            for a in 0..analytic.nrows() {
                for k in 0..analytic.ncols() {
                    let err = relative_error(analytic[(a, k)], numeric[(a, k)]);
                    report.checked_entries += 1;
                    report.max_relative_error = report.max_relative_error.max(err);
                    if !(err <= settings.tolerance) {
                        report.failures.push(GradcheckFailure {
                            instance_seed,
                            variant,
                            depth: config.depth,
                            root,
                            action: a,
                            state: k,
                            analytic: analytic[(a, k)],
                            numeric: numeric[(a, k)],
                            relative_error: err,
                        });
                    }
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let report = run_gradcheck(&GradcheckSettings {
            suite_size: 8,
            ..GradcheckSettings::default()
        })
        .unwrap();
        assert!(report.passed(), "{:?}", report.failures.first());
        assert!(report.max_score_defect < 1e-10);
    }

    #[test]
    fn sign_flip_is_localized() {
        let report = run_gradcheck(&GradcheckSettings {
            suite_size: 4,
            inject_sign_flip: true,
            ..GradcheckSettings::default()
        })
        .unwrap();
        assert!(!report.passed());
        for f in &report.failures {
            assert_eq!(f.variant, Variant::Cumulative);
            assert_eq!((f.action, f.state), (0, f.root));
        }
    }

    #[test]
    fn zero_tolerance_fails_on_rounding() {
        let report = run_gradcheck(&GradcheckSettings {
            suite_size: 2,
            tolerance: 0.0,
            ..GradcheckSettings::default()
        })
        .unwrap();
        assert!(!report.passed());
    }
}
