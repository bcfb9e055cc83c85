//! Per-example losses and their analytic logit gradients.
//!
//! Every kind except CP trains against a detached target `q̃`, so its loss is
//! `H(q̃, p)` and its gradient is `p - q̃`. CP keeps its entropy term attached to
//! the prediction: `L = (1-ε) H(q, p) - ε H(p, p)`.

use crate::error::{check_dims, Error, Result};
use crate::prob::{
    cross_entropy, entropy, kl_divergence, log_softmax_slice, softmax_slice, Logits, OneHot,
    ProbDist,
};
use crate::target::{local_trust, mix_target, self_knowledge, global_trust, ModKind, TrustParams};

/// A loss value split into its fitting and regularising parts, plus the same
/// loss written through KL divergences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    /// `(1-ε) H(q, p)`.
    pub fit_term: f64,
    /// The ε-weighted second term (`+εH(u,p)`, `-εH(p,p)` or `+εH(k,p)`).
    pub reg_term: f64,
    /// The KL rewrite, equal to `total` minus a term that does not depend on `p`.
    pub kl_form_total: f64,
}

/// Everything besides the logits that a loss evaluation needs.
#[derive(Debug, Clone, Copy)]
pub struct LossContext<'a> {
    /// Trust schedule; required for ProSelfLC, and its temperature is used for AT.
    pub trust: Option<&'a TrustParams>,
    /// Sharpen self knowledge with `trust.temperature`.
    pub at: bool,
    /// External knowledge for non-self LC.
    pub teacher: Option<&'a ProbDist>,
    /// Compute ProSelfLC's local trust on the tempered prediction (true) or on
    /// the plain prediction (false).
    pub local_on_tempered: bool,
}

impl Default for LossContext<'_> {
    fn default() -> Self {
        LossContext {
            trust: None,
            at: false,
            teacher: None,
            local_on_tempered: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Form {
    /// `H(q̃, p)` with `q̃ = (1-ε) q + ε k` held constant.
    Fixed { knowledge: Vec<f64>, eps: f64 },
    /// `(1-ε) H(q, p) - ε H(p, p)`.
    Penalty { eps: f64 },
}

/// The loss for one example with its target frozen at construction time.
///
/// Built from the logits at which the target is taken; `loss` and `gradient`
/// may then be evaluated at any logits with the target held fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    label: OneHot,
    form: Form,
}

impl Objective {
    pub fn new(kind: &ModKind, label: OneHot, z: &Logits, ctx: &LossContext<'_>) -> Result<Self> {
        kind.validate()?;
        check_dims(label.classes(), z.len())?;
        let c = label.classes();
        let form = match *kind {
            ModKind::Cce => Form::Fixed {
                knowledge: vec![0.0; c],
                eps: 0.0,
            },
            ModKind::Ls { epsilon } => Form::Fixed {
                knowledge: vec![1.0 / c as f64; c],
                eps: epsilon,
            },
            ModKind::Cp { epsilon } => Form::Penalty { eps: epsilon },
            ModKind::BootSoft { epsilon } => {
                let k = knowledge_of(z, ctx)?;
                Form::Fixed {
                    knowledge: k.into_vec(),
                    eps: epsilon,
                }
            }
            ModKind::NonSelfLc { epsilon } => {
                let teacher = ctx
                    .teacher
                    .ok_or_else(|| Error::param("non_self_lc requires a teacher distribution"))?;
                check_dims(c, teacher.classes())?;
                Form::Fixed {
                    knowledge: teacher.as_slice().to_vec(),
                    eps: epsilon,
                }
            }
            ModKind::ProSelfLc => {
                let params = ctx
                    .trust
                    .ok_or_else(|| Error::param("proselflc requires trust parameters"))?;
                let k = knowledge_of(z, ctx)?;
                let local_source = if ctx.local_on_tempered || !ctx.at {
                    k.clone()
                } else {
                    ProbDist::from_raw(softmax_slice(z.as_slice(), 1.0))
                };
                let eps = global_trust(params)? * local_trust(&local_source, params.local);
                Form::Fixed {
                    knowledge: k.into_vec(),
                    eps,
                }
            }
        };
        Ok(Objective { label, form })
    }

    /// The mixing weight applied to the second term.
    pub fn epsilon(&self) -> f64 {
        match self.form {
            Form::Fixed { eps, .. } | Form::Penalty { eps } => eps,
        }
    }

    /// The detached target `q̃`, or `None` for CP.
    pub fn target(&self) -> Option<ProbDist> {
        match &self.form {
            Form::Fixed { knowledge, eps } => {
                if *eps == 0.0 {
                    return Some(self.label.to_dist());
                }
                let k = ProbDist::from_raw(knowledge.clone());
                mix_target(&self.label, &k, *eps).ok().map(|t| t.dist)
            }
            Form::Penalty { .. } => None,
        }
    }

    pub fn loss(&self, z: &Logits) -> Result<LossBreakdown> {
        check_dims(self.label.classes(), z.len())?;
        let logp = log_softmax_slice(z.as_slice(), 1.0);
        let y = self.label.class();
        let fit_ce = -logp[y];
        // KL(q || p) equals H(q, p) for a one-hot q.
        let fit_kl = fit_ce;
        Ok(match &self.form {
            Form::Fixed { knowledge, eps } => {
                let eps = *eps;
                let reg_ce: f64 = if eps == 0.0 {
                    0.0
                } else {
                    -knowledge.iter().zip(&logp).map(|(k, l)| k * l).sum::<f64>()
                };
                let k_entropy: f64 = knowledge
                    .iter()
                    .filter(|&&k| k > 0.0)
                    .map(|&k| -k * k.ln())
                    .sum();
                let fit_term = (1.0 - eps) * fit_ce;
                let reg_term = eps * reg_ce;
                let kl_form_total = (1.0 - eps) * fit_kl + eps * (reg_ce - k_entropy);
                LossBreakdown {
                    total: fit_term + reg_term,
                    fit_term,
                    reg_term,
                    kl_form_total,
                }
            }
            Form::Penalty { eps } => {
                let eps = *eps;
                let self_entropy: f64 = -logp.iter().map(|l| l.exp() * l).sum::<f64>();
                let c = logp.len() as f64;
                let fit_term = (1.0 - eps) * fit_ce;
                let reg_term = -eps * self_entropy;
                // -ε H(p,p) = ε D_KL(p || u) - ε ln c
                let kl_to_uniform = c.ln() - self_entropy;
                LossBreakdown {
                    total: fit_term + reg_term,
                    fit_term,
                    reg_term,
                    kl_form_total: (1.0 - eps) * fit_kl + eps * kl_to_uniform,
                }
            }
        })
    }

    pub fn gradient(&self, z: &Logits) -> Result<Vec<f64>> {
        check_dims(self.label.classes(), z.len())?;
        let y = self.label.class();
        Ok(match &self.form {
            Form::Fixed { knowledge, eps } => {
                let p = softmax_slice(z.as_slice(), 1.0);
                p.iter()
                    .zip(knowledge)
                    .enumerate()
                    .map(|(j, (&pj, &kj))| {
                        let qj = if j == y { 1.0 } else { 0.0 };
                        pj - ((1.0 - eps) * qj + eps * kj)
                    })
                    .collect()
            }
            Form::Penalty { eps } => {
                let logp = log_softmax_slice(z.as_slice(), 1.0);
                let p: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
                let h: f64 = -p.iter().zip(&logp).map(|(a, b)| a * b).sum::<f64>();
                // ∂H(p)/∂z_j = -p_j (ln p_j + H)
                p.iter()
                    .zip(&logp)
                    .enumerate()
                    .map(|(j, (&pj, &lj))| {
                        let qj = if j == y { 1.0 } else { 0.0 };
                        (1.0 - eps) * (pj - qj) + eps * pj * (lj + h)
                    })
                    .collect()
            }
        })
    }
}

fn knowledge_of(z: &Logits, ctx: &LossContext<'_>) -> Result<ProbDist> {
    match ctx.trust {
        Some(params) => self_knowledge(z, params, ctx.at),
        None if ctx.at => Err(Error::param("annealed temperature requires trust parameters")),
        None => crate::prob::softmax(z, 1.0),
    }
}

pub fn loss_value(
    kind: &ModKind,
    label: OneHot,
    z: &Logits,
    ctx: &LossContext<'_>,
) -> Result<LossBreakdown> {
    Objective::new(kind, label, z, ctx)?.loss(z)
}

pub fn loss_gradient(
    kind: &ModKind,
    label: OneHot,
    z: &Logits,
    ctx: &LossContext<'_>,
) -> Result<Vec<f64>> {
    Objective::new(kind, label, z, ctx)?.gradient(z)
}

/// Loss families that have a closed-form KL rewrite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Cce,
    Ls,
    Cp,
    /// Self label correction (`k = p`).
    Lc,
}

impl Family {
    pub fn of(kind: &ModKind) -> Family {
        match kind {
            ModKind::Cce => Family::Cce,
            ModKind::Ls { .. } => Family::Ls,
            ModKind::Cp { .. } => Family::Cp,
            ModKind::BootSoft { .. } | ModKind::NonSelfLc { .. } | ModKind::ProSelfLc => Family::Lc,
        }
    }
}

/// `|cross-entropy form - (KL form + constant)|` for one family.
///
/// Cross-entropy forms:
/// CCE `H(q,p)`, LS `(1-ε)H(q,p) + εH(u,p)`, CP `(1-ε)H(q,p) - εH(p,p)`,
/// LC `(1-ε)H(q,p) + εH(p,p)`.
/// KL forms (direct summation):
/// CCE `D(q‖p)`, LS `(1-ε)D(q‖p) + εD(u‖p) + ε ln c`,
/// CP `(1-ε)D(q‖p) + εD(p‖u) - ε ln c`, LC `(1-ε)D(q‖p) - εD(p‖u) + ε ln c`.
pub fn decomposition_check(family: Family, q: &OneHot, p: &ProbDist, eps: f64) -> Result<f64> {
    check_dims(q.classes(), p.classes())?;
    let qd = q.to_dist();
    let u = ProbDist::uniform(q.classes())?;
    let ln_c = (q.classes() as f64).ln();
    let h_qp = cross_entropy(&qd, p)?;
    let kl_qp = kl_divergence(&qd, p)?;
    let (ce_form, kl_form) = match family {
        Family::Cce => (h_qp, kl_qp),
        Family::Ls => (
            (1.0 - eps) * h_qp + eps * cross_entropy(&u, p)?,
            (1.0 - eps) * kl_qp + eps * kl_divergence(&u, p)? + eps * ln_c,
        ),
        Family::Cp => (
            (1.0 - eps) * h_qp - eps * cross_entropy(p, p)?,
            (1.0 - eps) * kl_qp + eps * kl_divergence(p, &u)? - eps * ln_c,
        ),
        Family::Lc => (
            (1.0 - eps) * h_qp + eps * cross_entropy(p, p)?,
            (1.0 - eps) * kl_qp - eps * kl_divergence(p, &u)? + eps * ln_c,
        ),
    };
    Ok((ce_form - kl_form).abs())
}

/// Mean loss over a batch of examples and the summed per-example gradients
/// divided by the batch size, accumulated in index order.
pub fn batch_mean<'a, I>(objectives: I) -> Result<(f64, Vec<Vec<f64>>)>
where
    I: IntoIterator<Item = (&'a Objective, &'a Logits)>,
{
    let mut losses = Vec::new();
    let mut grads = Vec::new();
    for (obj, z) in objectives {
        losses.push(obj.loss(z)?.total);
        grads.push(obj.gradient(z)?);
    }
    if losses.is_empty() {
        return Err(Error::input("empty batch"));
    }
    let n = losses.len() as f64;
    grads
        .iter_mut()
        .for_each(|g| g.iter_mut().for_each(|v| *v /= n));
    Ok((losses.iter().sum::<f64>() / n, grads))
}

/// The ε-weighted second term of a family evaluated on `p` alone (`k = p` for LC).
pub fn second_term(family: Family, p: &ProbDist, eps: f64) -> Result<f64> {
    let u = ProbDist::uniform(p.classes())?;
    Ok(match family {
        Family::Cce => 0.0,
        Family::Ls => eps * cross_entropy(&u, p)?,
        Family::Cp => -eps * entropy(p),
        Family::Lc => eps * entropy(p),
    })
}
