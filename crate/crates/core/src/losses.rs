//! Scalar training objectives, built as graph composites so that every term
//! is differentiable with respect to whatever produced its inputs.
//!
//! Expectations over a domain's pool are realised as minibatch means, and
//! per-domain terms are summed over domains with equal weight.

use crate::autodiff::{Graph, Matrix, Var};
use crate::error::{Error, Result};
use crate::model::FeatureVars;

/// Probabilities are clamped to this floor before every log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Loss values recorded for one step. Terms an ablation never computes are `None`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBundle {
    pub lc1: Option<f64>,
    pub lc2: Option<f64>,
    pub lsep: Option<f64>,
    pub ladv_d: Option<f64>,
    pub ladv_u: Option<f64>,
}

impl LossBundle {
    /// Name of the first non-finite term, if any.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        [
            ("lc1", self.lc1),
            ("lc2", self.lc2),
            ("lsep", self.lsep),
            ("ladv_d", self.ladv_d),
            ("ladv_u", self.ladv_u),
        ]
        .into_iter()
        .find(|(_, v)| v.is_some_and(|v| !v.is_finite()))
        .map(|(name, _)| name)
    }
}

/// Trade-off weights: `alpha` on the separation term in the learning step,
/// `gamma` on the domain-adversarial term in the refinement step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HyperParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            gamma: 0.1,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("gamma", self.gamma)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Mean over rows of `sum_c mask * log(max(probs, floor))`.
fn masked_log_mean(g: &mut Graph<'_>, probs: Var, mask: Matrix) -> Result<Var> {
    let clamped = g.clamp_min(probs, PROB_FLOOR);
    let logp = g.log(clamped)?;
    let mask = g.leaf(mask, false);
    let picked = g.mul(logp, mask)?;
    g.mean_rows(picked)
}

/// Mean negative log-likelihood of `labels` under row-stochastic `probs`.
pub fn classification_loss(g: &mut Graph<'_>, probs: Var, labels: &[usize]) -> Result<Var> {
    let (rows, classes) = g.shape(probs);
    if labels.len() != rows {
        return Err(Error::Contract(format!(
            "{} labels for {rows} probability rows",
            labels.len()
        )));
    }
    let mut mask = Matrix::zeros(rows, classes);
    for (r, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::Contract(format!("label {y} outside 0..{classes}")));
        }
        mask.set(r, y, 1.0);
    }
    let ll = masked_log_mean(g, probs, mask)?;
    Ok(g.scale(ll, -1.0))
}

/// `sum_m || S_m^T D_m ||_F^2`: for each domain batch, the Frobenius norm of
/// the summed outer products of shared and domain-specific features.
pub fn separation_loss(g: &mut Graph<'_>, pairs: &[FeatureVars]) -> Result<Var> {
    let mut total: Option<Var> = None;
    for f in pairs {
        let (rs, rd) = (g.shape(f.shared), g.shape(f.domain));
        if rs.0 != rd.0 {
            return Err(Error::Dimension {
                op: "separation_loss",
                lhs: rs,
                rhs: rd,
            });
        }
        let st = g.transpose(f.shared);
        let outer = g.matmul(st, f.domain)?;
        let term = g.frob_sq(outer);
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    Ok(match total {
        Some(t) => t,
        None => g.leaf(Matrix::scalar(0.0), false),
    })
}

/// `sum_m mean_x log D_m(F_s(x))` where `domain_probs[m]` holds the
/// discriminator output on domain `m`'s samples.
pub fn domain_adv_loss(g: &mut Graph<'_>, domain_probs: &[Var]) -> Result<Var> {
    let domains = domain_probs.len();
    let mut total: Option<Var> = None;
    for (m, &p) in domain_probs.iter().enumerate() {
        let (rows, cols) = g.shape(p);
        if cols != domains {
            return Err(Error::Contract(format!(
                "discriminator output has {cols} columns for {domains} domains"
            )));
        }
        let mask = Matrix::from_fn(rows, cols, |_, c| if c == m { 1.0 } else { 0.0 });
        let term = masked_log_mean(g, p, mask)?;
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::Contract("domain_adv_loss needs at least one domain".into()))
}

/// `sum_m mean_x || C1(x) - C2(x) ||_1` over per-domain unlabeled batches.
pub fn discrepancy_loss(g: &mut Graph<'_>, pairs: &[(Var, Var)]) -> Result<Var> {
    let mut total: Option<Var> = None;
    for &(p1, p2) in pairs {
        let term = g.l1_rowdiff_mean(p1, p2)?;
        debug_assert!(g.value(term).item() <= 2.0 + 1e-9);
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    let total =
        total.ok_or_else(|| Error::Contract("discrepancy_loss needs at least one batch".into()))?;
    debug_assert!(g.value(total).item() <= 2.0 * pairs.len() as f64 + 1e-9);
    Ok(total)
}
