//! Augmented rewards for every method: `random`, `dec`, `cen`, `eiti`, `edti`,
//! `intrinsic-edti`, `plus-v` and `r-influence`.
//!
//! With `u_i` the curiosity bonus of agent `i` and `r` the team reward:
//!
//! | method           | r̂_i                                                     |
//! |------------------|----------------------------------------------------------|
//! | random           | r                                                        |
//! | dec              | r + β_int·u_i                                            |
//! | cen              | r + β_int·u_cen                                          |
//! | eiti             | β_ext·r + β_int·u_i + β_T·Σ_{j≠i} eiti_j                 |
//! | edti             | β_ext·r + β_int·u_i + β·Σ_{j≠i} edti_j                   |
//! | intrinsic-edti   | as edti, with the intrinsic value only                   |
//! | plus-v           | r + u_i + β·Σ_{j≠i} (β_int^pv·V_j^int + β_ext^pv·V_j^ext) |
//! | r-influence      | r + u_i + β_r·Σ_{j≠i} u_j                                |
//!
//! `eiti_j = log p(s_j'|s,a) / p(s_j'|s_j,a_j)` and
//! `edti_j = u_j + γ (1 − p⁻(s_j'|s_j,a_j) / p(s_j'|s,a)) V_j⁻(s')`.

use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::counts::{curiosity, CountTables, CuriosityConfig, CuriosityMode, TransitionKeys};
use crate::env::{Environment, JointAction, JointState, TaskId};
use crate::error::{Error, Result};
use crate::policy::{TargetModel, ValueTable};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Random,
    Dec,
    Cen,
    Eiti,
    Edti,
    IntrinsicEdti,
    #[serde(alias = "plusV", alias = "plusv")]
    PlusV,
    #[serde(alias = "r_influence")]
    RInfluence,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Random,
        Method::Dec,
        Method::Cen,
        Method::Eiti,
        Method::Edti,
        Method::IntrinsicEdti,
        Method::PlusV,
        Method::RInfluence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::Dec => "dec",
            Method::Cen => "cen",
            Method::Eiti => "eiti",
            Method::Edti => "edti",
            Method::IntrinsicEdti => "intrinsic-edti",
            Method::PlusV => "plus-v",
            Method::RInfluence => "r-influence",
        }
    }

    /// Methods whose reward contains a pairwise sum over the other agents.
    pub fn has_pairwise_term(self) -> bool {
        matches!(
            self,
            Method::Eiti | Method::Edti | Method::IntrinsicEdti | Method::PlusV | Method::RInfluence
        )
    }

    fn uses_transition_ratio(self) -> bool {
        matches!(self, Method::Eiti | Method::Edti | Method::IntrinsicEdti)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .or(match s {
                "plusV" | "plusv" => Some(Method::PlusV),
                "r_influence" => Some(Method::RInfluence),
                "intrinsic_edti" => Some(Method::IntrinsicEdti),
                _ => None,
            })
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapingConfig {
    pub method: Method,
    pub beta: f64,
    pub gamma: f64,
    pub beta_t: f64,
    pub beta_int: f64,
    pub beta_ext: f64,
    pub beta_r: f64,
    pub beta_int_plusv: f64,
    pub beta_ext_plusv: f64,
    pub curiosity: CuriosityConfig,
}

impl ShapingConfig {
    /// Per-task weights. Tasks without a full row fall back to the pass row
    /// for the missing entries.
    pub fn for_task(task: TaskId, method: Method) -> Self {
        let (eta, beta_t, beta_int, beta_ext, beta_r, bi, be) = match task {
            TaskId::Pass | TaskId::Twin => (10.0, 10.0, 1.0, 0.1, 1.0, 0.1, 0.01),
            TaskId::SecretRoom => (10.0, 10.0, 1.0, 0.1, 1.0, 0.1, 0.01),
            TaskId::PushBox => (1.0, 100.0, 100.0, 0.1, 0.1, 0.1, 0.01),
            TaskId::Island => (1.0, 10.0, 10.0, 0.5, 0.1, 0.1, 0.01),
            TaskId::LargeIsland => (1.0, 10.0, 1.0, 0.1, 0.1, 0.1, 0.01),
        };
        Self {
            method,
            beta: 1.0,
            gamma: 0.99,
            beta_t,
            beta_int,
            beta_ext,
            beta_r,
            beta_int_plusv: bi,
            beta_ext_plusv: be,
            curiosity: CuriosityConfig::new(eta),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.curiosity.eta > 0.0) {
            return Err(Error::Config("shaping.curiosity.eta must be > 0".into()));
        }
        if self.method.has_pairwise_term() {
            let b = match self.method {
                Method::Eiti => self.beta_t,
                Method::RInfluence => self.beta_r,
                _ => self.beta,
            };
            if !(b > 0.0) {
                return Err(Error::Config(format!(
                    "influence weight must be > 0 for method {}",
                    self.method
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config("shaping.gamma must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// One transition as seen by the shaping functions.
#[derive(Clone, Copy)]
pub struct Transition<'a> {
    pub s: &'a JointState,
    pub a: &'a JointAction,
    pub next: &'a JointState,
    pub keys: &'a TransitionKeys,
}

/// Source of `p(s_j'|s,a)` and `p(s_j'|s_j,a_j)`; `None` means unseen.
pub trait TransitionModel: Sync {
    fn p_joint(&self, t: &Transition<'_>, j: usize) -> Option<f64>;
    fn p_local(&self, t: &Transition<'_>, j: usize) -> Option<f64>;
}

/// Count ratios for a transition that is already recorded.
pub struct Recorded<'a>(pub &'a CountTables);

impl TransitionModel for Recorded<'_> {
    fn p_joint(&self, t: &Transition<'_>, j: usize) -> Option<f64> {
        self.0.p_joint(t.keys, j)
    }
    fn p_local(&self, t: &Transition<'_>, j: usize) -> Option<f64> {
        self.0.p_local(t.keys, j)
    }
}

/// Count ratios with the scored transition added on top of the stored counts.
pub struct Pending<'a>(pub &'a CountTables);

impl TransitionModel for Pending<'_> {
    fn p_joint(&self, t: &Transition<'_>, j: usize) -> Option<f64> {
        Some(self.0.p_joint_including(t.keys, j))
    }
    fn p_local(&self, t: &Transition<'_>, j: usize) -> Option<f64> {
        Some(self.0.p_local_including(t.keys, j))
    }
}

/// Frozen local estimates `p⁻` held by a target model.
pub struct Frozen<'a>(pub &'a TargetModel);

impl TransitionModel for Frozen<'_> {
    fn p_joint(&self, t: &Transition<'_>, j: usize) -> Option<f64> {
        self.0.counts().p_joint(t.keys, j)
    }
    fn p_local(&self, t: &Transition<'_>, j: usize) -> Option<f64> {
        self.0.p_minus(t.keys, j)
    }
}

/// Exact probabilities of the `twin` task. Both conditionals coincide because
/// the two rooms never interact.
pub struct ExactTwin<'a>(pub &'a Environment);

impl TransitionModel for ExactTwin<'_> {
    fn p_joint(&self, t: &Transition<'_>, j: usize) -> Option<f64> {
        self.p_local(t, j)
    }
    fn p_local(&self, t: &Transition<'_>, j: usize) -> Option<f64> {
        Some(self.0.twin_transition_probability(
            t.s.agents[j].pos,
            t.a.0[j],
            t.next.agents[j].pos,
        ))
    }
}

pub struct ShapingContext<'a> {
    pub model: &'a dyn TransitionModel,
    pub target_model: &'a dyn TransitionModel,
    /// Counts behind the curiosity bonus; the scored visit is added to them.
    pub counts: &'a CountTables,
    pub targets: &'a TargetModel,
    pub values_ext: &'a [Arc<ValueTable>],
    pub values_int: &'a [Arc<ValueTable>],
}

/// `log(p_joint / p_local)`, 0 when either side is unseen.
pub fn eiti_value(p_joint: Option<f64>, p_local: Option<f64>) -> f64 {
    match (p_joint, p_local) {
        (Some(j), Some(l)) if j > 0.0 && l > 0.0 => (j / l).ln(),
        _ => 0.0,
    }
}

/// `u_j + γ (1 − p⁻/p_joint) V⁻`; an unseen side leaves `u_j`.
pub fn edti_value(u_j: f64, gamma: f64, p_minus: Option<f64>, p_joint: Option<f64>, v_minus: f64) -> f64 {
    let factor = match (p_minus, p_joint) {
        (Some(m), Some(j)) if j > 0.0 => 1.0 - m / j,
        _ => 0.0,
    };
    u_j + gamma * factor * v_minus
}

pub fn eiti_term(model: &dyn TransitionModel, t: &Transition<'_>, j: usize) -> f64 {
    eiti_value(model.p_joint(t, j), model.p_local(t, j))
}

/// EDTI term for agent `j`, reading `p⁻` from `ctx.target_model` and `V⁻`
/// from `ctx.targets`.
pub fn edti_term(cfg: &ShapingConfig, ctx: &ShapingContext<'_>, t: &Transition<'_>, j: usize, u_j: f64) -> f64 {
    let v = target_value(cfg, ctx.targets, t.keys, j);
    edti_value(u_j, cfg.gamma, ctx.target_model.p_local(t, j), ctx.model.p_joint(t, j), v)
}

fn target_value(cfg: &ShapingConfig, targets: &TargetModel, keys: &TransitionKeys, j: usize) -> f64 {
    let s = keys.joint_arrival;
    match cfg.method {
        Method::IntrinsicEdti => cfg.beta_int * targets.v_int(j, s),
        _ => cfg.beta_ext * targets.v_ext(j, s) + cfg.beta_int * targets.v_int(j, s),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Components {
    pub extrinsic: f64,
    pub curiosity: f64,
    pub influence: f64,
    /// Number of pairwise terms in `influence`.
    pub pair_terms: usize,
}

impl Components {
    pub fn total(&self) -> f64 {
        self.extrinsic + self.curiosity + self.influence
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ShapedStep {
    pub rewards: SmallVec<[f64; 4]>,
    pub components: SmallVec<[Components; 4]>,
    /// Raw curiosity `u_j` of every agent.
    pub u: SmallVec<[f64; 4]>,
    /// Unweighted pairwise quantity attributed to each influenced agent `j`
    /// (the EITI or EDTI term, `u_j`, or the plus-v value mix).
    pub pair_values: SmallVec<[f64; 4]>,
    pub bound_checks: u32,
    pub bound_violations: u32,
}

/// `1 − p_l/p_j ≤ ln(p_j/p_l)` with a small tolerance for rounding.
pub fn lower_bound_holds(p_joint: f64, p_local: f64) -> bool {
    1.0 - p_local / p_joint <= (p_joint / p_local).ln() + 1e-12
}

fn curiosity_visits(cfg: &CuriosityConfig, counts: &CountTables, keys: &TransitionKeys, j: usize) -> u64 {
    counts.curiosity_visits(cfg, keys, j) + 1
}

pub fn shape(cfg: &ShapingConfig, ctx: &ShapingContext<'_>, t: &Transition<'_>, r: f64) -> ShapedStep {
    let n = t.keys.agents();
    let eta = cfg.curiosity.eta;
    let u: SmallVec<[f64; 4]> = (0..n)
        .map(|j| curiosity(eta, curiosity_visits(&cfg.curiosity, ctx.counts, t.keys, j)))
        .collect();
    let mut out = ShapedStep {
        u: u.clone(),
        ..ShapedStep::default()
    };

    if cfg.method.uses_transition_ratio() {
        for j in 0..n {
            let (pj, pl) = (ctx.model.p_joint(t, j), ctx.model.p_local(t, j));
            if let (Some(pj), Some(pl)) = (pj, pl) {
                if pj > 0.0 && pl > 0.0 {
                    out.bound_checks += 1;
                    let ok = lower_bound_holds(pj, pl);
                    debug_assert!(ok, "lower bound violated: p_joint {pj}, p_local {pl}");
                    if !ok {
                        out.bound_violations += 1;
                    }
                }
            }
        }
    }

    out.pair_values = match cfg.method {
        Method::Eiti => (0..n).map(|j| eiti_term(ctx.model, t, j)).collect(),
        Method::Edti | Method::IntrinsicEdti => {
            (0..n).map(|j| edti_term(cfg, ctx, t, j, u[j])).collect()
        }
        Method::PlusV => (0..n)
            .map(|j| {
                let s = t.keys.joint_arrival;
                cfg.beta_int_plusv * ctx.values_int[j].get(s)
                    + cfg.beta_ext_plusv * ctx.values_ext[j].get(s)
            })
            .collect(),
        Method::RInfluence => u.clone(),
        Method::Random | Method::Dec | Method::Cen => SmallVec::from_elem(0.0, n),
    };

    let u_cen = if cfg.method == Method::Cen {
        let cen = CuriosityConfig {
            mode: CuriosityMode::Centralized,
            keying: cfg.curiosity.keying,
            ..cfg.curiosity
        };
        curiosity(eta, curiosity_visits(&cen, ctx.counts, t.keys, 0))
    } else {
        0.0
    };

    for i in 0..n {
        let mut pair_sum = 0.0;
        let mut pair_terms = 0;
        if cfg.method.has_pairwise_term() {
            for j in (0..n).filter(|&j| j != i) {
                pair_sum += out.pair_values[j];
                pair_terms += 1;
            }
        }
        let c = match cfg.method {
            Method::Random => Components::default(),
            Method::Dec => Components {
                curiosity: cfg.beta_int * u[i],
                ..Components::default()
            },
            Method::Cen => Components {
                curiosity: cfg.beta_int * u_cen,
                ..Components::default()
            },
            Method::Eiti => Components {
                extrinsic: cfg.beta_ext * r,
                curiosity: cfg.beta_int * u[i],
                influence: cfg.beta_t * pair_sum,
                pair_terms,
            },
            Method::Edti | Method::IntrinsicEdti => Components {
                extrinsic: cfg.beta_ext * r,
                curiosity: cfg.beta_int * u[i],
                influence: cfg.beta * pair_sum,
                pair_terms,
            },
            Method::PlusV => Components {
                curiosity: u[i],
                influence: cfg.beta * pair_sum,
                pair_terms,
                ..Components::default()
            },
            Method::RInfluence => Components {
                curiosity: u[i],
                influence: cfg.beta_r * pair_sum,
                pair_terms,
                ..Components::default()
            },
        };
        let c = match cfg.method {
            Method::Random | Method::Dec | Method::Cen | Method::PlusV | Method::RInfluence => {
                Components { extrinsic: r, ..c }
            }
            _ => c,
        };
        out.rewards.push(c.total());
        out.components.push(c);
    }
    out
}

/// Immediate `r̃_j = r + u_j` for every agent, the quantity averaged into `r̃⁻`.
pub fn immediate_rtilde(r: f64, step: &ShapedStep) -> SmallVec<[f64; 4]> {
    step.u.iter().map(|u| r + u).collect()
}
