//! Identity suites over seeded random MDP families.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::*;
use crate::stats::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Identity {
    /// `|VoI_q − VoI_traj|`.
    Theorem1,
    /// Second term of the MI gradient.
    T2Zero,
    /// `Σ ∇p^π(s,a) r̃⁻(s_2,a_2)`, gradient through the full occupancy.
    Lemma2Zero,
    /// The same with the gradient through `p^π(s_1,a_1|s_2,a_2)` only.
    Lemma2Conditional,
    MiNonNegative,
    MiFactorized,
    MiCopyAction,
    PointwiseBound,
    OccupancyGradient,
    EstimatorConsistency,
}

impl Identity {
    pub const ALL: [Identity; 10] = [
        Identity::Theorem1,
        Identity::T2Zero,
        Identity::Lemma2Zero,
        Identity::Lemma2Conditional,
        Identity::MiNonNegative,
        Identity::MiFactorized,
        Identity::MiCopyAction,
        Identity::PointwiseBound,
        Identity::OccupancyGradient,
        Identity::EstimatorConsistency,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Identity::Theorem1 => "theorem1",
            Identity::T2Zero => "t2-zero",
            Identity::Lemma2Zero => "lemma2-zero",
            Identity::Lemma2Conditional => "lemma2-conditional",
            Identity::MiNonNegative => "mi-non-negative",
            Identity::MiFactorized => "mi-factorized",
            Identity::MiCopyAction => "mi-copy-action",
            Identity::PointwiseBound => "pointwise-bound",
            Identity::OccupancyGradient => "occupancy-gradient",
            Identity::EstimatorConsistency => "estimator-consistency",
        }
    }

    pub fn default_tolerance(self) -> f64 {
        match self {
            Identity::Theorem1 => 1e-10,
            Identity::T2Zero | Identity::Lemma2Zero | Identity::Lemma2Conditional => 1e-8,
            Identity::MiNonNegative | Identity::MiFactorized | Identity::MiCopyAction | Identity::PointwiseBound => 1e-12,
            Identity::OccupancyGradient => 1e-6,
            Identity::EstimatorConsistency => 0.02,
        }
    }
}

impl std::str::FromStr for Identity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Identity::ALL
            .into_iter()
            .find(|i| i.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown identity `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub identities: Vec<Identity>,
    pub instances: usize,
    pub seed: u64,
    /// Replaces every identity's default tolerance.
    pub tolerance: Option<f64>,
    pub mdp: RandomMdpConfig,
    pub estimator_budget: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            identities: Identity::ALL.to_vec(),
            instances: 100,
            seed: 0,
            tolerance: None,
            mdp: RandomMdpConfig::default(),
            estimator_budget: 100_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdentityReport {
    pub identity: String,
    pub instances: usize,
    pub max_residual: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteReport {
    pub reports: Vec<IdentityReport>,
    pub passed: bool,
}

impl SuiteReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<24} {:>9} {:>13} {:>10}  result", "identity", "instances", "max residual", "tolerance");
        for r in &self.reports {
            let _ = writeln!(
                out,
                "{:<24} {:>9} {:>13.3e} {:>10.1e}  {}",
                r.identity,
                r.instances,
                r.max_residual,
                r.tolerance,
                if r.passed { "PASS" } else { "FAIL" }
            );
        }
        let _ = writeln!(out, "{}", if self.passed { "all identities hold" } else { "some identities failed" });
        out
    }
}

fn worst(acc: f64, x: f64) -> f64 {
    if x.is_nan() || acc.is_nan() {
        f64::NAN
    } else {
        acc.max(x)
    }
}

/// Largest residual of one identity and the number of instances behind it.
pub fn residual(id: Identity, cfg: &SuiteConfig) -> Result<(f64, usize)> {
    let family = |k: usize| random_mdp(derive_seed(&[cfg.seed, k as u64]), &cfg.mdp);
    let over = |f: &dyn Fn(&ExactMDP, &ExactPolicy) -> Result<f64>| -> Result<(f64, usize)> {
        let mut w: f64 = 0.0;
        for k in 0..cfg.instances {
            let (mdp, pol) = family(k);
            w = worst(w, f(&mdp, &pol)?);
        }
        Ok((w, cfg.instances))
    };
    match id {
        Identity::Theorem1 => over(&|m, p| {
            Ok((exact_voi_q_form(m, p, 1)? - exact_voi_traj_form(m, p, 1)?).abs())
        }),
        Identity::T2Zero => over(&|m, p| check_t2_zero(m, p, 1)),
        Identity::Lemma2Zero => over(&|m, p| Ok(check_lemma2_zero(m, p, 1)?.literal)),
        Identity::Lemma2Conditional => over(&|m, p| Ok(check_lemma2_zero(m, p, 1)?.conditional)),
        Identity::MiNonNegative => over(&|m, p| Ok((-exact_mi(m, p, 1)?).max(0.0))),
        Identity::MiFactorized => {
            let mut w: f64 = 0.0;
            for k in 0..cfg.instances {
                let (m, p) = random_product_mdp(derive_seed(&[cfg.seed, k as u64]), &cfg.mdp);
                w = worst(w, exact_mi(&m, &p, 1)?.abs());
            }
            Ok((w, cfg.instances))
        }
        Identity::MiCopyAction => {
            let (m, p) = copy_action_mdp();
            Ok(((exact_mi(&m, &p, 1)? - std::f64::consts::LN_2).abs(), 1))
        }
        Identity::PointwiseBound => over(&|m, p| bound_violation(m, p, 1)),
        Identity::OccupancyGradient => over(&|m, p| occupancy_gradient_error(m, p, 0, 1e-5)),
        Identity::EstimatorConsistency => {
            let (m, p) = consistency_mdp();
            let r = estimator_consistency(&m, &p, cfg.estimator_budget, cfg.seed)?;
            Ok((r.max_deviation.unwrap_or(f64::NAN), 1))
        }
    }
}

pub fn run(cfg: &SuiteConfig) -> Result<SuiteReport> {
    let mut reports = Vec::with_capacity(cfg.identities.len());
    for id in &cfg.identities {
        let start = Instant::now();
        let (max_residual, instances) = residual(*id, cfg)?;
        let tolerance = cfg.tolerance.unwrap_or(id.default_tolerance());
        reports.push(IdentityReport {
            identity: id.name().to_string(),
            instances,
            max_residual,
            tolerance,
            passed: max_residual <= tolerance,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    let passed = reports.iter().all(|r| r.passed);
    Ok(SuiteReport { reports, passed })
}
