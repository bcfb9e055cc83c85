//! Modified training targets: label smoothing, confidence penalty, (self)
//! label correction and ProSelfLC with its progressive trust schedule.

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::prob::{argmax_slice, confidence, softmax, ConfidenceMode, Logits, OneHot, ProbDist};

/// How much a single prediction is trusted, `l(p)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalTrust {
    ConstantOne,
    ConfTop,
    ConfAll,
}

impl LocalTrust {
    pub fn name(self) -> &'static str {
        match self {
            LocalTrust::ConstantOne => "constant_one",
            LocalTrust::ConfTop => "conf_top",
            LocalTrust::ConfAll => "conf_all",
        }
    }
}

/// Schedule state for the progressive self trust at one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrustParams {
    /// Iteration counter `t`.
    pub iter: u64,
    /// Total iterations `Γ`.
    pub total_iters: u64,
    /// Inflection fraction `Θ`; trust crosses 0.5 at `t = Γ·Θ`.
    pub inflection: f64,
    /// Growth speed `B` of the sigmoid.
    pub growth: f64,
    pub local: LocalTrust,
    /// Temperature used for the self-knowledge distribution.
    pub temperature: f64,
}

impl TrustParams {
    pub fn new(total_iters: u64, growth: f64, local: LocalTrust) -> Self {
        TrustParams {
            iter: 0,
            total_iters,
            inflection: 0.5,
            growth,
            local,
            temperature: 1.0,
        }
    }

    pub fn at_iter(mut self, iter: u64) -> Self {
        self.iter = iter;
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_iters == 0 {
            return Err(Error::param("total iterations must be > 0"));
        }
        if self.iter > self.total_iters {
            return Err(Error::param(format!(
                "iteration {} beyond total {}",
                self.iter, self.total_iters
            )));
        }
        if !(0.0..=1.0).contains(&self.inflection) {
            return Err(Error::param(format!(
                "inflection must lie in [0, 1], got {}",
                self.inflection
            )));
        }
        if !(self.growth.is_finite() && self.growth > 0.0) {
            return Err(Error::param(format!("growth must be > 0, got {}", self.growth)));
        }
        Ok(())
    }
}

/// Loss names as they appear in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossName {
    Cce,
    Ls,
    Cp,
    BootSoft,
    NonSelfLc,
    Proselflc,
}

/// Target-modification family and its fixed mixing weight `ε`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModKind {
    Cce,
    /// Label smoothing towards the uniform distribution.
    Ls { epsilon: f64 },
    /// Confidence penalty on the prediction's own entropy.
    Cp { epsilon: f64 },
    /// Self label correction with constant trust.
    BootSoft { epsilon: f64 },
    /// Label correction with externally supplied knowledge.
    NonSelfLc { epsilon: f64 },
    /// Self label correction with trust `g(t)·l(p)`.
    ProSelfLc,
}

impl ModKind {
    /// `epsilon` is ignored by CCE and ProSelfLC.
    pub fn from_name(name: LossName, epsilon: f64) -> Self {
        match name {
            LossName::Cce => ModKind::Cce,
            LossName::Ls => ModKind::Ls { epsilon },
            LossName::Cp => ModKind::Cp { epsilon },
            LossName::BootSoft => ModKind::BootSoft { epsilon },
            LossName::NonSelfLc => ModKind::NonSelfLc { epsilon },
            LossName::Proselflc => ModKind::ProSelfLc,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModKind::Cce => "cce",
            ModKind::Ls { .. } => "ls",
            ModKind::Cp { .. } => "cp",
            ModKind::BootSoft { .. } => "boot_soft",
            ModKind::NonSelfLc { .. } => "non_self_lc",
            ModKind::ProSelfLc => "proselflc",
        }
    }

    pub fn epsilon(&self) -> Option<f64> {
        match *self {
            ModKind::Ls { epsilon }
            | ModKind::Cp { epsilon }
            | ModKind::BootSoft { epsilon }
            | ModKind::NonSelfLc { epsilon } => Some(epsilon),
            ModKind::Cce | ModKind::ProSelfLc => None,
        }
    }

    pub fn needs_knowledge(&self) -> bool {
        matches!(
            self,
            ModKind::Cp { .. }
                | ModKind::BootSoft { .. }
                | ModKind::NonSelfLc { .. }
                | ModKind::ProSelfLc
        )
    }

    /// Self-knowledge kinds derive their knowledge from the learner's own logits.
    pub fn uses_self_knowledge(&self) -> bool {
        matches!(self, ModKind::BootSoft { .. } | ModKind::ProSelfLc)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(eps) = self.epsilon() {
            if !(0.0..1.0).contains(&eps) {
                return Err(Error::param(format!("epsilon must lie in [0, 1), got {eps}")));
            }
        }
        Ok(())
    }
}

/// A modified target with the trust that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetDist {
    pub dist: ProbDist,
    pub trust_used: f64,
    pub semantic_class: usize,
}

impl TargetDist {
    fn from_vec(v: Vec<f64>, trust_used: f64) -> Self {
        let semantic_class = argmax_slice(&v);
        TargetDist {
            dist: ProbDist::from_raw(v),
            trust_used,
            semantic_class,
        }
    }
}

/// `g(t) = 1 / (1 + exp(-(t/Γ - Θ)·B))`.
pub fn global_trust(params: &TrustParams) -> Result<f64> {
    params.validate()?;
    let eta = params.iter as f64 / params.total_iters as f64 - params.inflection;
    Ok(1.0 / (1.0 + (-eta * params.growth).exp()))
}

pub fn local_trust(p: &ProbDist, scheme: LocalTrust) -> f64 {
    match scheme {
        LocalTrust::ConstantOne => 1.0,
        LocalTrust::ConfTop => confidence(p, ConfidenceMode::Top),
        LocalTrust::ConfAll => confidence(p, ConfidenceMode::All),
    }
}

/// Self trust `ε_ProSelfLC = g(t) · l(p)`.
pub fn proselflc_trust(params: &TrustParams, p: &ProbDist) -> Result<f64> {
    Ok(global_trust(params)? * local_trust(p, params.local))
}

/// `(1 - ε) q + ε k`.
pub fn mix_target(q: &OneHot, knowledge: &ProbDist, eps: f64) -> Result<TargetDist> {
    check_dims(q.classes(), knowledge.classes())?;
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::param(format!("mixing weight must lie in [0, 1], got {eps}")));
    }
    let v = knowledge
        .as_slice()
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            let onehot = if j == q.class() { 1.0 } else { 0.0 };
            (1.0 - eps) * onehot + eps * k
        })
        .collect();
    Ok(TargetDist::from_vec(v, eps))
}

/// Build the modified target `q̃` for `kind`.
///
/// `knowledge` is required for every kind except CCE and LS. For Boot-soft and
/// ProSelfLC it is the (possibly temperature-scaled) self prediction; for CP it
/// is the current prediction. The CP vector returned here has its negative
/// entries clipped to zero and is renormalised. It is meant for inspection only;
/// the CP loss is evaluated from its own definition in [`crate::loss`].
pub fn build_target(
    kind: &ModKind,
    q: &OneHot,
    knowledge: Option<&ProbDist>,
    trust: Option<&TrustParams>,
) -> Result<TargetDist> {
    kind.validate()?;
    let require_knowledge = || {
        knowledge.ok_or_else(|| Error::param(format!("{} requires a knowledge distribution", kind.name())))
    };
    match *kind {
        ModKind::Cce => Ok(TargetDist::from_vec(q.to_dist().into_vec(), 0.0)),
        ModKind::Ls { epsilon } => mix_target(q, &ProbDist::uniform(q.classes())?, epsilon),
        ModKind::Cp { epsilon } => {
            let p = require_knowledge()?;
            check_dims(q.classes(), p.classes())?;
            let mut v: Vec<f64> = p
                .as_slice()
                .iter()
                .enumerate()
                .map(|(j, &pj)| {
                    let onehot = if j == q.class() { 1.0 } else { 0.0 };
                    ((1.0 - epsilon) * onehot - epsilon * pj).max(0.0)
                })
                .collect();
            let total: f64 = v.iter().sum();
            v.iter_mut().for_each(|x| *x /= total);
            Ok(TargetDist::from_vec(v, epsilon))
        }
        ModKind::BootSoft { epsilon } | ModKind::NonSelfLc { epsilon } => {
            mix_target(q, require_knowledge()?, epsilon)
        }
        ModKind::ProSelfLc => {
            let p = require_knowledge()?;
            let params = trust.ok_or_else(|| Error::param("proselflc requires trust parameters"))?;
            mix_target(q, p, proselflc_trust(params, p)?)
        }
    }
}

/// The self-knowledge distribution: `softmax(z, T)` with AT, else `softmax(z, 1)`.
///
/// The result is a constant with respect to the learner's parameters.
pub fn self_knowledge(z: &Logits, trust: &TrustParams, at_enabled: bool) -> Result<ProbDist> {
    if !at_enabled {
        return softmax(z, 1.0);
    }
    let t = trust.temperature;
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::param(format!(
            "self-knowledge temperature must lie in (0, 1], got {t}"
        )));
    }
    softmax(z, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::softmax_slice;
    use proptest::prelude::*;

    fn dist(v: &[f64]) -> ProbDist {
        ProbDist::new(v.to_vec()).unwrap()
    }

    #[test]
    fn global_trust_midpoint_and_ends() {
        for b in [1.0, 8.0, 16.0, 20.0] {
            let p = TrustParams::new(1000, b, LocalTrust::ConstantOne).at_iter(500);
            assert_eq!(global_trust(&p).unwrap(), 0.5);
        }
        // 40-digit reference values of 1/(1+e^8) and 1/(1+e^-8).
        let p = TrustParams::new(1000, 16.0, LocalTrust::ConstantOne);
        assert!((global_trust(&p).unwrap() - 3.353_501_304_664_781e-4).abs() < 1e-17);
        let p = p.at_iter(1000);
        assert!((global_trust(&p).unwrap() - 0.999_664_649_869_533_5).abs() < 1e-15);
    }

    #[test]
    fn global_trust_rejects_zero_total() {
        let p = TrustParams::new(0, 16.0, LocalTrust::ConstantOne);
        assert!(matches!(global_trust(&p), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn local_trust_examples() {
        let u = ProbDist::uniform(3).unwrap();
        assert!(local_trust(&u, LocalTrust::ConfAll).abs() < 1e-15);
        assert_eq!(local_trust(&dist(&[0.2, 0.8]), LocalTrust::ConstantOne), 1.0);
        assert_eq!(local_trust(&dist(&[0.9, 0.05, 0.05]), LocalTrust::ConfTop), 0.9);
    }

    #[test]
    fn target_examples() {
        let q = OneHot::new(0, 3).unwrap();
        let ls = build_target(&ModKind::Ls { epsilon: 0.3 }, &q, None, None).unwrap();
        let expect = [0.8, 0.1, 0.1];
        for (a, b) in ls.dist.as_slice().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(ls.semantic_class, 0);

        let k = dist(&[0.1, 0.2, 0.7]);
        let boot = build_target(&ModKind::BootSoft { epsilon: 0.0 }, &q, Some(&k), None).unwrap();
        assert_eq!(boot.dist, q.to_dist());

        let cce = build_target(&ModKind::Cce, &q, None, None).unwrap();
        assert_eq!(cce.trust_used, 0.0);
    }

    #[test]
    fn missing_inputs_are_rejected() {
        let q = OneHot::new(0, 3).unwrap();
        let k = ProbDist::uniform(3).unwrap();
        for kind in [
            ModKind::Cp { epsilon: 0.1 },
            ModKind::BootSoft { epsilon: 0.1 },
            ModKind::NonSelfLc { epsilon: 0.1 },
            ModKind::ProSelfLc,
        ] {
            assert!(build_target(&kind, &q, None, None).is_err());
        }
        assert!(build_target(&ModKind::ProSelfLc, &q, Some(&k), None).is_err());
        assert!(build_target(&ModKind::Ls { epsilon: 1.0 }, &q, None, None).is_err());
        assert!(build_target(&ModKind::Ls { epsilon: -0.1 }, &q, None, None).is_err());
    }

    #[test]
    fn clipped_cp_target_keeps_only_the_label() {
        let q = OneHot::new(1, 4).unwrap();
        let p = dist(&[0.1, 0.6, 0.2, 0.1]);
        let t = build_target(&ModKind::Cp { epsilon: 0.3 }, &q, Some(&p), None).unwrap();
        assert_eq!(t.dist.as_slice(), &[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(t.trust_used, 0.3);
    }

    #[test]
    fn self_knowledge_examples() {
        let params = TrustParams::new(10, 16.0, LocalTrust::ConfAll).with_temperature(0.5);
        let z = Logits::new(vec![2.0, 0.0]).unwrap();
        assert_eq!(self_knowledge(&z, &params, false).unwrap(), softmax(&z, 1.0).unwrap());
        let scaled = softmax(&Logits::new(vec![4.0, 0.0]).unwrap(), 1.0).unwrap();
        let got = self_knowledge(&z, &params, true).unwrap();
        for (a, b) in got.as_slice().iter().zip(scaled.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }

        // Reference: conf_all of softmax([1,0,-1]/T) is 0.72282... at T=0.4 and 0.24232... at T=1.
        let z = Logits::new(vec![1.0, 0.0, -1.0]).unwrap();
        let cold = self_knowledge(&z, &params.with_temperature(0.4), true).unwrap();
        let warm = self_knowledge(&z, &params.with_temperature(1.0), true).unwrap();
        let cold = confidence(&cold, ConfidenceMode::All);
        let warm = confidence(&warm, ConfidenceMode::All);
        assert!((cold - 0.722_822_559_171_469).abs() < 1e-12);
        assert!((warm - 0.242_320_889_338_417_7).abs() < 1e-12);
        assert!(cold > warm);

        assert!(self_knowledge(&z, &params.with_temperature(1.5), true).is_err());
        assert!(self_knowledge(&z, &params.with_temperature(0.0), true).is_err());
    }

    fn arb_case() -> impl Strategy<Value = (Vec<f64>, usize, f64)> {
        (2usize..10).prop_flat_map(|c| {
            (
                proptest::collection::vec(-8.0f64..8.0, c),
                0..c,
                0.0f64..0.999,
            )
        })
    }

    proptest! {
        #[test]
        fn mixtures_stay_between_label_and_knowledge((z, y, eps) in arb_case()) {
            let c = z.len();
            let q = OneHot::new(y, c).unwrap();
            let k = ProbDist::from_raw(softmax_slice(&z, 1.0));
            let kinds = [
                ModKind::Ls { epsilon: eps },
                ModKind::BootSoft { epsilon: eps },
                ModKind::NonSelfLc { epsilon: eps },
            ];
            for kind in kinds {
                let t = build_target(&kind, &q, Some(&k), None).unwrap();
                let other = if let ModKind::Ls { .. } = kind { vec![1.0 / c as f64; c] } else { k.as_slice().to_vec() };
                for (j, (&tj, &oj)) in t.dist.as_slice().iter().zip(&other).enumerate() {
                    let qj: f64 = if j == y { 1.0 } else { 0.0 };
                    prop_assert!(tj >= qj.min(oj) - 1e-12 && tj <= qj.max(oj) + 1e-12);
                }
            }
        }

        #[test]
        fn ls_and_cp_keep_the_semantic_class((z, y, eps) in arb_case()) {
            let c = z.len();
            let q = OneHot::new(y, c).unwrap();
            let p = ProbDist::from_raw(softmax_slice(&z, 1.0));
            let eps = eps * 0.5;
            let ls = build_target(&ModKind::Ls { epsilon: eps }, &q, None, None).unwrap();
            let cp = build_target(&ModKind::Cp { epsilon: eps }, &q, Some(&p), None).unwrap();
            prop_assert_eq!(ls.semantic_class, y);
            prop_assert_eq!(cp.semantic_class, y);
        }

        #[test]
        fn proselflc_revises_class_only_when_confidently_inconsistent(
            (z, y, _eps) in arb_case(),
            t in 0u64..=100,
            b in 1.0f64..30.0,
            scheme in prop_oneof![Just(LocalTrust::ConstantOne), Just(LocalTrust::ConfTop), Just(LocalTrust::ConfAll)],
        ) {
            let c = z.len();
            let q = OneHot::new(y, c).unwrap();
            let p = ProbDist::from_raw(softmax_slice(&z, 1.0));
            let params = TrustParams::new(100, b, scheme).at_iter(t);
            let target = build_target(&ModKind::ProSelfLc, &q, Some(&p), Some(&params)).unwrap();
            let eps = target.trust_used;

            // Brute-force mixture, independent of mix_target.
            let mut brute: Vec<f64> = p.as_slice().iter().map(|pj| eps * pj).collect();
            brute[y] += 1.0 - eps;
            let brute_class = argmax_slice(&brute);
            prop_assert_eq!(target.semantic_class, brute_class);

            if target.semantic_class != y {
                prop_assert!(eps > 0.5);
                prop_assert!(p.argmax() != y);
            }
        }

        #[test]
        fn trust_is_bounded_by_global_trust(
            (z, _y, _eps) in arb_case(),
            t in 0u64..=100,
            b in 1.0f64..30.0,
        ) {
            let p = ProbDist::from_raw(softmax_slice(&z, 1.0));
            let base = TrustParams::new(100, b, LocalTrust::ConstantOne).at_iter(t);
            let g = global_trust(&base).unwrap();
            prop_assert_eq!(proselflc_trust(&base, &p).unwrap(), g);
            for scheme in [LocalTrust::ConfTop, LocalTrust::ConfAll] {
                let params = TrustParams { local: scheme, ..base };
                prop_assert!(proselflc_trust(&params, &p).unwrap() <= g);
            }
            if t < 100 {
                prop_assert!(global_trust(&base.at_iter(t + 1)).unwrap() > g);
            }
        }
    }
}
