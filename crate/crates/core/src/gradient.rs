//! Analytic gradients `d log pi(a|s) / d theta(s^k)` of both variants.
//!
//! C variant: `beta gamma^d [I - 1 pi^T] P_s P^(d-1)`.
//!
//! E variant: `beta gamma^d [I - 1 pi^T] D(pi)^-1 E_{s,d} D(w) / (1^T E_{s,d} w)`
//! with `w = exp(beta gamma^d theta)`. Row `a` of the E gradient is
//! `beta gamma^d (f_a - sum_b pi_b f_b)` where `f_a` is the normalized
//! leaf-weighted row of `E_{s,d}`.
//!
//! Both products are propagated as zero-sum row differences so that the
//! result keeps full relative accuracy when it decays like `|lambda_2|^d`.

use nalgebra::{Complex, DMatrix, DVector};
use serde::Serialize;

use crate::error::{Result, TreeMaxError};
use crate::linalg::project_rows_zero_sum;
use crate::mdp::Mdp;
use crate::policy::{TreeModel, TreePolicyConfig, Variant};
use crate::spectral::second_eigenpair;

/// The `A x S` gradient of `log pi(.|s)` with respect to the state scores.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMatrix {
    pub root_state: usize,
    pub values: DMatrix<f64>,
    /// Set for `d = 0`, where the policy is uniform and the gradient is zero.
    pub zero_depth: bool,
}

impl GradientMatrix {
    pub fn frobenius(&self) -> f64 {
        self.values.norm()
    }
}

impl<'a> TreeModel<'a> {
    fn zero_gradient(&self, root: usize) -> GradientMatrix {
        GradientMatrix {
            root_state: root,
            values: DMatrix::zeros(self.mdp().num_actions(), self.mdp().num_states()),
            zero_depth: true,
        }
    }

    pub fn gradient_c(&self, root: usize) -> Result<GradientMatrix> {
        let d = self.config().depth;
        let pi = self.policy_c(root)?;
        if d == 0 {
            return Ok(self.zero_gradient(root));
        }
        let p_s = self.mdp().transition_from(root);
        let mean_row = pi.probs.transpose() * p_s;
        let mut diff = DMatrix::from_fn(p_s.nrows(), p_s.ncols(), |a, k| p_s[(a, k)] - mean_row[k]);
        project_rows_zero_sum(&mut diff);
        let p = self.chain().transition();
        for _ in 1..d {
            diff *= p;
            project_rows_zero_sum(&mut diff);
        }
        let scale = self.config().beta * self.mdp().discount().powi(d as i32);
        Ok(GradientMatrix {
            root_state: root,
            values: diff * scale,
            zero_depth: false,
        })
    }

    pub fn gradient_e(&self, root: usize) -> Result<GradientMatrix> {
        let d = self.config().depth;
        let pi = self.policy_e(root)?;
        if d == 0 {
            return Ok(self.zero_gradient(root));
        }
        let em = self.exponent(root)?;
        let n = self.mdp().num_states();
        let num_actions = self.mdp().num_actions();

        // Rows q_a of P_s D(M_1), normalized to distributions.
        let shift = em.log_scale.max();
        let m_shifted = em.log_scale.map(|x| (x - shift).exp());
        let mut q = em.root_transition.clone();
        for (j, mut col) in q.column_iter_mut().enumerate() {
            col *= m_shifted[j];
        }
        for mut row in q.row_iter_mut() {
            let total = row.sum();
            row /= total;
        }
        let mut reference = DVector::from_fn(n, |k, _| q.column(k).mean()).transpose();
        let mut diff = DMatrix::from_fn(num_actions, n, |a, k| q[(a, k)] - reference[k]);
        project_rows_zero_sum(&mut diff);
        for b in &em.factors {
            reference *= b;
            diff *= b;
            project_rows_zero_sum(&mut diff);
        }

        let (w, _) = self.shifted_leaf_weights();
        let base = reference.dot(&w.transpose());
        let mut h = DMatrix::zeros(num_actions, n);
        for a in 0..num_actions {
            let delta_w: f64 = diff.row(a).dot(&w.transpose());
            let denom = base * (base + delta_w);
            for k in 0..n {
                h[(a, k)] = (base * diff[(a, k)] * w[k] - delta_w * reference[k] * w[k]) / denom;
            }
        }
        let mean = pi.probs.transpose() * &h;
        let scale = self.config().beta * self.mdp().discount().powi(d as i32);
        let values = DMatrix::from_fn(num_actions, n, |a, k| scale * (h[(a, k)] - mean[k]));
        Ok(GradientMatrix {
            root_state: root,
            values,
            zero_depth: false,
        })
    }

    /// Unstabilized E gradient, straight from the closed-form expression over
    /// the directly multiplied `E_{s,d}`. Cross-check only: it loses relative
    /// accuracy once the gradient is small and overflows for large `beta`.
    pub fn gradient_e_direct(&self, root: usize) -> Result<GradientMatrix> {
        let d = self.config().depth;
        if d == 0 {
            self.policy_e(root)?;
            return Ok(self.zero_gradient(root));
        }
        let e = self.direct_exponent(root)?;
        let scale = self.config().beta * self.mdp().discount().powi(d as i32);
        let w = self.config().theta.map(|t| (scale * t).exp());
        let ew = &e * &w;
        let total = ew.sum();
        let pi = &ew / total;
        let num_actions = e.nrows();
        let n = e.ncols();
        // D(pi)^-1 E D(w) / total
        let inner = DMatrix::from_fn(num_actions, n, |a, k| e[(a, k)] * w[k] / (total * pi[a]));
        let mean = pi.transpose() * &inner;
        let values = DMatrix::from_fn(num_actions, n, |a, k| scale * (inner[(a, k)] - mean[k]));
        Ok(GradientMatrix {
            root_state: root,
            values,
            zero_depth: false,
        })
    }

    pub fn gradient(&self, root: usize) -> Result<GradientMatrix> {
        match self.config().variant {
            Variant::Cumulative => self.gradient_c(root),
            Variant::Exponentiated => self.gradient_e(root),
        }
    }
}

pub fn grad_c(mdp: &Mdp, config: &TreePolicyConfig, root: usize) -> Result<GradientMatrix> {
    TreeModel::new(mdp, &config.with_variant(Variant::Cumulative))?.gradient_c(root)
}

pub fn grad_e(mdp: &Mdp, config: &TreePolicyConfig, root: usize) -> Result<GradientMatrix> {
    TreeModel::new(mdp, &config.with_variant(Variant::Exponentiated))?.gradient_e(root)
}

pub fn grad_e_direct(mdp: &Mdp, config: &TreePolicyConfig, root: usize) -> Result<GradientMatrix> {
    TreeModel::new(mdp, &config.with_variant(Variant::Exponentiated))?.gradient_e_direct(root)
}

/// Dispatches on `config.variant`.
pub fn tree_gradient(mdp: &Mdp, config: &TreePolicyConfig, root: usize) -> Result<GradientMatrix> {
    TreeModel::new(mdp, config)?.gradient(root)
}

/// Frobenius norm of the C gradient bracketed by the eigenvector lower bound
/// and the closed-form upper bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientNormBounds {
    pub frobenius: f64,
    /// `beta gamma^d |lambda_2|^(d-1) ||[I - 1 pi^T] P_s u||_2`, `u` the unit
    /// right eigenvector of `lambda_2`. May be zero when `P_s u = 0`.
    pub lower: f64,
    /// `beta gamma^d |lambda_2|^(d-1) (S-1) sqrt(2A) sqrt(A)`.
    pub upper: f64,
    pub lambda2_modulus: f64,
    /// `lambda_2` is complex; `u` is then the complex eigenvector.
    pub complex_lambda2: bool,
}

pub fn grad_norm_bounds(
    mdp: &Mdp,
    config: &TreePolicyConfig,
    root: usize,
) -> Result<GradientNormBounds> {
    if config.variant != Variant::Cumulative {
        return Err(TreeMaxError::InvalidConfig(
            "gradient norm bounds are defined for the C variant".into(),
        ));
    }
    let d = config.depth;
    if d == 0 {
        return Err(TreeMaxError::ZeroDepth);
    }
    let model = TreeModel::new(mdp, config)?;
    let grad = model.gradient_c(root)?;
    let pi = model.policy_c(root)?;
    let (lambda, u) = second_eigenpair(model.chain().transition())?;
    let lambda2 = lambda.norm();

    let p_s = mdp.transition_from(root).map(|x| Complex::new(x, 0.0));
    let pu = p_s * &u;
    let mean: Complex<f64> = pi
        .probs
        .iter()
        .zip(pu.iter())
        .map(|(&p, &z)| z * p)
        .sum();
    let projected = pu.map(|z| z - mean);
    let scale = config.beta * mdp.discount().powi(d as i32) * lambda2.powi(d as i32 - 1);

    let s = mdp.num_states() as f64;
    let a = mdp.num_actions() as f64;
    Ok(GradientNormBounds {
        frobenius: grad.frobenius(),
        lower: scale * projected.norm(),
        upper: scale * (s - 1.0) * (2.0 * a).sqrt() * a.sqrt(),
        lambda2_modulus: lambda2,
        complex_lambda2: lambda.im.abs() > 1e-12,
    })
}

/// `sqrt(2) A S beta gamma^d |lambda_2|^(d-1)`, the explicit-constant norm
/// bound used for the C-variant variance bound.
pub fn frobenius_envelope(num_actions: usize, num_states: usize, beta: f64, gamma: f64, depth: usize, lambda2: f64) -> f64 {
    2f64.sqrt()
        * num_actions as f64
        * num_states as f64
        * beta
        * gamma.powi(depth as i32)
        * lambda2.powi(depth as i32 - 1)
}
