//! Exact computations on tiny fully enumerated two-agent MDPs.
//!
//! Joint state `s = (s_0, s_1)` is indexed `s_0 · |S_1| + s_1`, joint action
//! likewise. Occupancies are summed over `t = 0..h-1`, so their total mass is
//! `h`; every conditional taken from them is a ratio and unaffected.
//!
//! Functions take the influenced agent `j` and use `i = 1 - j` as the
//! influencing one, so `X_{2|1}` (agent 2 influenced by agent 1) is `j = 1`.

pub mod suite;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use smallvec::smallvec;

use crate::counts::{CountModel, TransitionKeys};
use crate::env::{Codec, TaskId};
use crate::error::{Error, Result};
use crate::key::KeyBuilder;

/// Largest `|S|·|A|` accepted.
pub const MAX_TABLE: usize = 1024;
pub const MAX_HORIZON: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactMDP {
    pub n_states: [usize; 2],
    pub n_actions: [usize; 2],
    /// `T(s'|s,a)` at `(s·|A| + a)·|S| + s'`.
    pub transition: Vec<f64>,
    /// Team reward `r(s,a)` at `s·|A| + a`.
    pub reward: Vec<f64>,
    /// Per-agent intrinsic rewards `u_j(s,a)`; an empty table means zero.
    pub intrinsic: [Vec<f64>; 2],
    pub p0: Vec<f64>,
    pub horizon: usize,
    pub gamma: f64,
}

impl ExactMDP {
    pub fn states(&self) -> usize {
        self.n_states[0] * self.n_states[1]
    }

    pub fn actions(&self) -> usize {
        self.n_actions[0] * self.n_actions[1]
    }

    pub fn state(&self, s: [usize; 2]) -> usize {
        s[0] * self.n_states[1] + s[1]
    }

    pub fn split_state(&self, s: usize) -> [usize; 2] {
        [s / self.n_states[1], s % self.n_states[1]]
    }

    pub fn action(&self, a: [usize; 2]) -> usize {
        a[0] * self.n_actions[1] + a[1]
    }

    pub fn split_action(&self, a: usize) -> [usize; 2] {
        [a / self.n_actions[1], a % self.n_actions[1]]
    }

    pub fn t(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[(s * self.actions() + a) * self.states() + next]
    }

    /// `r̃_j(s,a) = r(s,a) + u_j(s,a)`.
    pub fn reward_of(&self, j: usize, s: usize, a: usize) -> f64 {
        let k = s * self.actions() + a;
        self.reward[k] + self.intrinsic[j].get(k).copied().unwrap_or(0.0)
    }

    /// `p(s_j' = x | s, a)`.
    pub fn next_marginal(&self, j: usize, s: usize, a: usize, x: usize) -> f64 {
        (0..self.states())
            .filter(|n| self.split_state(*n)[j] == x)
            .map(|n| self.t(s, a, n))
            .sum()
    }

    /// `p(s_i' | s, a, s_j')` for `next = (s_i', s_j')`, with 0/0 read as uniform.
    pub fn other_given(&self, j: usize, s: usize, a: usize, next: usize) -> f64 {
        let x = self.split_state(next)[j];
        let den = self.next_marginal(j, s, a, x);
        if den > 0.0 {
            self.t(s, a, next) / den
        } else {
            1.0 / self.n_states[1 - j] as f64
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (ns, na) = (self.states(), self.actions());
        if ns == 0 || na == 0 {
            return Err(Error::InvalidTask("empty state or action set".into()));
        }
        if ns * na > MAX_TABLE || self.horizon > MAX_HORIZON {
            return Err(Error::Capacity(format!(
                "|S|·|A| = {} with horizon {} exceeds the exact-enumeration limit ({MAX_TABLE}, {MAX_HORIZON})",
                ns * na,
                self.horizon
            )));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidTask("horizon must be > 0".into()));
        }
        if self.transition.len() != ns * na * ns || self.reward.len() != ns * na || self.p0.len() != ns {
            return Err(Error::InvalidTask("table sizes do not match the state and action sets".into()));
        }
        for u in &self.intrinsic {
            if !u.is_empty() && u.len() != ns * na {
                return Err(Error::InvalidTask("intrinsic table has the wrong size".into()));
            }
        }
        for row in self.transition.chunks(ns) {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 || row.iter().any(|p| *p < 0.0) {
                return Err(Error::InvalidTask(format!("transition row sums to {sum}")));
            }
        }
        let sum: f64 = self.p0.iter().sum();
        if (sum - 1.0).abs() > 1e-12 || self.p0.iter().any(|p| *p < 0.0) {
            return Err(Error::InvalidTask(format!("initial distribution sums to {sum}")));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidTask("gamma must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Softmax policies `π_i(a_i|s_i)`, one logit table per agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactPolicy {
    pub n_states: [usize; 2],
    pub n_actions: [usize; 2],
    /// `θ_i[s_i·|A_i| + a_i]`.
    pub logits: [Vec<f64>; 2],
}

impl ExactPolicy {
    pub fn uniform(mdp: &ExactMDP) -> Self {
        Self {
            n_states: mdp.n_states,
            n_actions: mdp.n_actions,
            logits: [0, 1].map(|i| vec![0.0; mdp.n_states[i] * mdp.n_actions[i]]),
        }
    }

    pub fn params(&self, i: usize) -> usize {
        self.logits[i].len()
    }

    pub fn prob(&self, i: usize, si: usize, ai: usize) -> f64 {
        let na = self.n_actions[i];
        let row = &self.logits[i][si * na..(si + 1) * na];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|l| (l - m).exp()).sum();
        (row[ai] - m).exp() / z
    }

    /// `∂π_i(a_i|s_i) / ∂θ_i[k]`.
    pub fn dprob(&self, i: usize, si: usize, ai: usize, k: usize) -> f64 {
        let na = self.n_actions[i];
        let (ks, kb) = (k / na, k % na);
        if ks != si {
            return 0.0;
        }
        let p = self.prob(i, si, ai);
        let d = if kb == ai { 1.0 } else { 0.0 };
        p * (d - self.prob(i, si, kb))
    }

    pub fn joint(&self, mdp: &ExactMDP, s: usize, a: usize) -> f64 {
        let (ss, aa) = (mdp.split_state(s), mdp.split_action(a));
        self.prob(0, ss[0], aa[0]) * self.prob(1, ss[1], aa[1])
    }

    fn djoint(&self, mdp: &ExactMDP, wrt: usize, s: usize, a: usize, k: usize) -> f64 {
        let (ss, aa) = (mdp.split_state(s), mdp.split_action(a));
        let o = 1 - wrt;
        self.dprob(wrt, ss[wrt], aa[wrt], k) * self.prob(o, ss[o], aa[o])
    }

    pub fn nudged(&self, i: usize, k: usize, delta: f64) -> Self {
        let mut p = self.clone();
        p.logits[i][k] += delta;
        p
    }
}

/// `p^π(s,a)` summed over the horizon, with its gradient in one agent's logits.
#[derive(Clone, Debug)]
pub struct Occupancy {
    pub n_actions: usize,
    /// `P_t(s,a)` for each step.
    pub per_step: Vec<Vec<f64>>,
    pub total: Vec<f64>,
    /// Agent whose logits `grad` differentiates.
    pub wrt: usize,
    /// `∂ total / ∂θ_wrt[k]`, indexed `[k][s·|A| + a]`.
    pub grad: Vec<Vec<f64>>,
}

pub fn occupancy(mdp: &ExactMDP, pol: &ExactPolicy) -> Result<Occupancy> {
    occupancy_wrt(mdp, pol, 0)
}

/// Forward dynamic programming with forward-mode derivatives.
pub fn occupancy_wrt(mdp: &ExactMDP, pol: &ExactPolicy, wrt: usize) -> Result<Occupancy> {
    mdp.validate()?;
    let (ns, na, np) = (mdp.states(), mdp.actions(), pol.params(wrt));
    let mut d = mdp.p0.clone();
    let mut dd = vec![vec![0.0; ns]; np];
    let mut per_step = Vec::with_capacity(mdp.horizon);
    let mut total = vec![0.0; ns * na];
    let mut grad = vec![vec![0.0; ns * na]; np];
    for _ in 0..mdp.horizon {
        let mut p = vec![0.0; ns * na];
        let mut dp = vec![vec![0.0; ns * na]; np];
        for s in 0..ns {
            for a in 0..na {
                let pi = pol.joint(mdp, s, a);
                p[s * na + a] = d[s] * pi;
                for k in 0..np {
                    dp[k][s * na + a] = dd[k][s] * pi + d[s] * pol.djoint(mdp, wrt, s, a, k);
                }
            }
        }
        let mut nd = vec![0.0; ns];
        let mut ndd = vec![vec![0.0; ns]; np];
        for s in 0..ns {
            for a in 0..na {
                for n in 0..ns {
                    let t = mdp.t(s, a, n);
                    nd[n] += p[s * na + a] * t;
                    for k in 0..np {
                        ndd[k][n] += dp[k][s * na + a] * t;
                    }
                }
            }
        }
        for x in 0..ns * na {
            total[x] += p[x];
            for k in 0..np {
                grad[k][x] += dp[k][x];
            }
        }
        per_step.push(p);
        d = nd;
        dd = ndd;
    }
    Ok(Occupancy {
        n_actions: na,
        per_step,
        total,
        wrt,
        grad,
    })
}

impl Occupancy {
    pub fn pair(&self, s: usize, a: usize) -> f64 {
        self.total[s * self.n_actions + a]
    }

    /// `p^π(s_j, a_j)`.
    pub fn local_pair(&self, mdp: &ExactMDP, j: usize, sj: usize, aj: usize) -> f64 {
        self.sum_over_other(mdp, j, sj, aj, |s, a| self.pair(s, a))
    }

    /// `p^π(s_j' = x | s_j, a_j)`, `None` where `(s_j, a_j)` has no mass.
    pub fn local_next(&self, mdp: &ExactMDP, j: usize, sj: usize, aj: usize, x: usize) -> Option<f64> {
        let den = self.local_pair(mdp, j, sj, aj);
        let num = self.sum_over_other(mdp, j, sj, aj, |s, a| self.pair(s, a) * mdp.next_marginal(j, s, a, x));
        (den > 0.0).then(|| num / den)
    }

    /// `p^π(s_i, a_i | s_j, a_j)` for the joint `(s, a)`.
    pub fn other_given_local(&self, mdp: &ExactMDP, j: usize, s: usize, a: usize) -> Option<f64> {
        let (ss, aa) = (mdp.split_state(s), mdp.split_action(a));
        let den = self.local_pair(mdp, j, ss[j], aa[j]);
        (den > 0.0).then(|| self.pair(s, a) / den)
    }

    /// Sums `f(s, a)` over the other agent's state and action.
    fn sum_over_other(&self, mdp: &ExactMDP, j: usize, sj: usize, aj: usize, f: impl Fn(usize, usize) -> f64) -> f64 {
        let i = 1 - j;
        let mut acc = 0.0;
        for si in 0..mdp.n_states[i] {
            for ai in 0..mdp.n_actions[i] {
                let (mut ss, mut aa) = ([0; 2], [0; 2]);
                ss[i] = si;
                ss[j] = sj;
                aa[i] = ai;
                aa[j] = aj;
                acc += f(mdp.state(ss), mdp.action(aa));
            }
        }
        acc
    }
}

/// `r̃_j^π(s_j, a_j) = Σ p^π(s_i, a_i | s_j, a_j) r̃_j(s, a)`, indexed `s_j·|A_j| + a_j`.
pub fn counterfactual_reward(mdp: &ExactMDP, occ: &Occupancy, j: usize) -> Vec<f64> {
    let naj = mdp.n_actions[j];
    let mut out = vec![0.0; mdp.n_states[j] * naj];
    for sj in 0..mdp.n_states[j] {
        for aj in 0..naj {
            let den = occ.local_pair(mdp, j, sj, aj);
            if den > 0.0 {
                let num = occ.sum_over_other(mdp, j, sj, aj, |s, a| occ.pair(s, a) * mdp.reward_of(j, s, a));
                out[sj * naj + aj] = num / den;
            }
        }
    }
    out
}

/// Agent `j`'s `h`-step value `V_j^π(s)` by backward recursion.
pub fn value(mdp: &ExactMDP, pol: &ExactPolicy, j: usize) -> Vec<f64> {
    let (ns, na) = (mdp.states(), mdp.actions());
    let mut v = vec![0.0; ns];
    for _ in 0..mdp.horizon {
        let mut nv = vec![0.0; ns];
        for (s, slot) in nv.iter_mut().enumerate() {
            for a in 0..na {
                let future: f64 = (0..ns).map(|n| mdp.t(s, a, n) * v[n]).sum();
                *slot += pol.joint(mdp, s, a) * (mdp.reward_of(j, s, a) + mdp.gamma * future);
            }
        }
        v = nv;
    }
    v
}

fn local_index(mdp: &ExactMDP, j: usize, s: usize, a: usize) -> (usize, usize) {
    (mdp.split_state(s)[j], mdp.split_action(a)[j])
}

/// `MI_{j|i} = Σ p^π(s,a,s_j') [log p(s_j'|s,a) − log p^π(s_j'|s_j,a_j)]`.
pub fn exact_mi(mdp: &ExactMDP, pol: &ExactPolicy, j: usize) -> Result<f64> {
    let occ = occupancy(mdp, pol)?;
    let mut mi = 0.0;
    for s in 0..mdp.states() {
        for a in 0..mdp.actions() {
            let p = occ.pair(s, a);
            if p == 0.0 {
                continue;
            }
            let (sj, aj) = local_index(mdp, j, s, a);
            for x in 0..mdp.n_states[j] {
                let pn = mdp.next_marginal(j, s, a, x);
                if pn > 0.0 {
                    let pl = occ.local_next(mdp, j, sj, aj, x).expect("positive mass");
                    mi += p * pn * (pn.ln() - pl.ln());
                }
            }
        }
    }
    Ok(mi)
}

/// VoI as the expected gap between `Q_j^π(s,a,s_j')` and the counterfactual
/// `Q_{j|i}^{π,*}(s_j,a_j,s_j')` with the other agent marginalized out.
pub fn exact_voi_q_form(mdp: &ExactMDP, pol: &ExactPolicy, j: usize) -> Result<f64> {
    let occ = occupancy(mdp, pol)?;
    let v = value(mdp, pol, j);
    let i = 1 - j;
    let q = |s: usize, a: usize, x: usize| {
        let future: f64 = (0..mdp.n_states[i])
            .map(|y| {
                let mut n = [0; 2];
                n[i] = y;
                n[j] = x;
                let n = mdp.state(n);
                mdp.other_given(j, s, a, n) * v[n]
            })
            .sum();
        mdp.reward_of(j, s, a) + mdp.gamma * future
    };
    let mut voi = 0.0;
    for s in 0..mdp.states() {
        for a in 0..mdp.actions() {
            let p = occ.pair(s, a);
            if p == 0.0 {
                continue;
            }
            let (sj, aj) = local_index(mdp, j, s, a);
            for x in 0..mdp.n_states[j] {
                let pn = mdp.next_marginal(j, s, a, x);
                if pn == 0.0 {
                    continue;
                }
                let q_star = occ.sum_over_other(mdp, j, sj, aj, |s2, a2| {
                    occ.other_given_local(mdp, j, s2, a2).unwrap_or(0.0) * q(s2, a2, x)
                });
                voi += p * pn * (q(s, a, x) - q_star);
            }
        }
    }
    Ok(voi)
}

/// VoI as `E[r̃_j(s,a) − r̃_j^π(s_j,a_j) + γ(1 − p^π(s_j'|s_j,a_j)/p(s_j'|s,a)) V_j^π(s')]`.
///
/// Where `p(s_j'|s,a) = 0` the ratio term `T·p^π/p` is read with the same 0/0
/// convention as [`ExactMDP::other_given`].
pub fn exact_voi_traj_form(mdp: &ExactMDP, pol: &ExactPolicy, j: usize) -> Result<f64> {
    let occ = occupancy(mdp, pol)?;
    let v = value(mdp, pol, j);
    let rcf = counterfactual_reward(mdp, &occ, j);
    let naj = mdp.n_actions[j];
    let mut voi = 0.0;
    for s in 0..mdp.states() {
        for a in 0..mdp.actions() {
            let p = occ.pair(s, a);
            if p == 0.0 {
                continue;
            }
            let (sj, aj) = local_index(mdp, j, s, a);
            let mut future = 0.0;
            for n in 0..mdp.states() {
                let x = mdp.split_state(n)[j];
                let pl = occ.local_next(mdp, j, sj, aj, x).expect("positive mass");
                let pn = mdp.next_marginal(j, s, a, x);
                let t = mdp.t(s, a, n);
                future += if pn > 0.0 {
                    t * (1.0 - pl / pn) * v[n]
                } else {
                    -pl * mdp.other_given(j, s, a, n) * v[n]
                };
            }
            voi += p * (mdp.reward_of(j, s, a) - rcf[sj * naj + aj] + mdp.gamma * future);
        }
    }
    Ok(voi)
}

/// `RI_{j|i} = Σ p^π(s,a) [r̃_j(s,a) − r̃_j^π(s_j,a_j)]`.
pub fn exact_ri(mdp: &ExactMDP, pol: &ExactPolicy, j: usize) -> Result<f64> {
    let occ = occupancy(mdp, pol)?;
    let rcf = counterfactual_reward(mdp, &occ, j);
    let naj = mdp.n_actions[j];
    let mut ri = 0.0;
    for s in 0..mdp.states() {
        for a in 0..mdp.actions() {
            let (sj, aj) = local_index(mdp, j, s, a);
            ri += occ.pair(s, a) * (mdp.reward_of(j, s, a) - rcf[sj * naj + aj]);
        }
    }
    Ok(ri)
}

/// Monte-Carlo estimate of [`exact_ri`]: mean and standard error over episodes.
pub fn sampled_ri(mdp: &ExactMDP, pol: &ExactPolicy, j: usize, episodes: usize, seed: u64) -> Result<(f64, f64)> {
    let occ = occupancy(mdp, pol)?;
    let rcf = counterfactual_reward(mdp, &occ, j);
    let naj = mdp.n_actions[j];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut total = 0.0;
        sample_episode(mdp, pol, &mut rng, |s, a, _| {
            let (sj, aj) = local_index(mdp, j, s, a);
            total += mdp.reward_of(j, s, a) - rcf[sj * naj + aj];
        });
        xs.push(total);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok((mean, (var / n).sqrt()))
}

/// Max-abs over `θ_i` of `Σ p^π(s,a,s_j') ∇ log[p(s_j'|s,a) / p^π(s_j'|s_j,a_j)]`.
pub fn check_t2_zero(mdp: &ExactMDP, pol: &ExactPolicy, j: usize) -> Result<f64> {
    let i = 1 - j;
    let occ = occupancy_wrt(mdp, pol, i)?;
    let na = mdp.actions();
    let mut worst: f64 = 0.0;
    for k in 0..pol.params(i) {
        let g = &occ.grad[k];
        let mut term = 0.0;
        for sj in 0..mdp.n_states[j] {
            for aj in 0..mdp.n_actions[j] {
                let den = occ.local_pair(mdp, j, sj, aj);
                if den == 0.0 {
                    continue;
                }
                let dden = occ.sum_over_other(mdp, j, sj, aj, |s, a| g[s * na + a]);
                for x in 0..mdp.n_states[j] {
                    let num = occ.sum_over_other(mdp, j, sj, aj, |s, a| occ.pair(s, a) * mdp.next_marginal(j, s, a, x));
                    if num == 0.0 {
                        continue;
                    }
                    let dnum = occ.sum_over_other(mdp, j, sj, aj, |s, a| g[s * na + a] * mdp.next_marginal(j, s, a, x));
                    let dlog_local = dnum / num - dden / den;
                    // ∇ log p(s_j'|s,a) is zero: the dynamics do not depend on θ.
                    let weight = occ.sum_over_other(mdp, j, sj, aj, |s, a| occ.pair(s, a) * mdp.next_marginal(j, s, a, x));
                    term -= weight * dlog_local;
                }
            }
        }
        worst = worst.max(term.abs());
    }
    Ok(worst)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Lemma2Residual {
    /// `max_k |Σ_{s,a} ∂_k p^π(s,a) · r̃⁻_j(s_j,a_j)|`.
    pub literal: f64,
    /// The same sum with the gradient taken only through `p^π(s_i,a_i|s_j,a_j)`.
    pub conditional: f64,
}

/// Lemma 2 with `r̃⁻` frozen at the current counterfactual reward.
pub fn check_lemma2_zero(mdp: &ExactMDP, pol: &ExactPolicy, j: usize) -> Result<Lemma2Residual> {
    let occ = occupancy_wrt(mdp, pol, 1 - j)?;
    let frozen = counterfactual_reward(mdp, &occ, j);
    lemma2_with(mdp, &occ, j, &frozen)
}

/// Lemma 2 against an arbitrary frozen table `r̃⁻_j[s_j·|A_j| + a_j]`.
pub fn check_lemma2_zero_with(mdp: &ExactMDP, pol: &ExactPolicy, j: usize, frozen: &[f64]) -> Result<Lemma2Residual> {
    let occ = occupancy_wrt(mdp, pol, 1 - j)?;
    if frozen.len() != mdp.n_states[j] * mdp.n_actions[j] {
        return Err(Error::InvalidTask("frozen reward table has the wrong size".into()));
    }
    lemma2_with(mdp, &occ, j, frozen)
}

fn lemma2_with(mdp: &ExactMDP, occ: &Occupancy, j: usize, frozen: &[f64]) -> Result<Lemma2Residual> {
    let na = mdp.actions();
    let naj = mdp.n_actions[j];
    let mut lit: f64 = 0.0;
    let mut cond: f64 = 0.0;
    for g in &occ.grad {
        let mut l = 0.0;
        let mut c = 0.0;
        for sj in 0..mdp.n_states[j] {
            for aj in 0..naj {
                let r = frozen[sj * naj + aj];
                l += occ.sum_over_other(mdp, j, sj, aj, |s, a| g[s * na + a]) * r;
                let den = occ.local_pair(mdp, j, sj, aj);
                if den > 0.0 {
                    let dden = occ.sum_over_other(mdp, j, sj, aj, |s, a| g[s * na + a]);
                    let dcond = occ.sum_over_other(mdp, j, sj, aj, |s, a| {
                        g[s * na + a] / den - occ.pair(s, a) * dden / (den * den)
                    });
                    c += den * dcond * r;
                }
            }
        }
        lit = lit.max(l.abs());
        cond = cond.max(c.abs());
    }
    Ok(Lemma2Residual {
        literal: lit,
        conditional: cond,
    })
}

/// Worst violation of `1 − p^π(s_j'|s_j,a_j)/p(s_j'|s,a) ≤ log[p(s_j'|s,a)/p^π(s_j'|s_j,a_j)]`
/// over entries with positive occupancy; zero when the bound holds everywhere.
pub fn bound_violation(mdp: &ExactMDP, pol: &ExactPolicy, j: usize) -> Result<f64> {
    let occ = occupancy(mdp, pol)?;
    let mut worst: f64 = 0.0;
    for s in 0..mdp.states() {
        for a in 0..mdp.actions() {
            if occ.pair(s, a) == 0.0 {
                continue;
            }
            let (sj, aj) = local_index(mdp, j, s, a);
            for x in 0..mdp.n_states[j] {
                let pn = mdp.next_marginal(j, s, a, x);
                if pn > 0.0 {
                    let pl = occ.local_next(mdp, j, sj, aj, x).expect("positive mass");
                    worst = worst.max((1.0 - pl / pn) - (pn / pl).ln());
                }
            }
        }
    }
    Ok(worst)
}

/// Largest relative gap between the analytic occupancy gradient and central differences.
pub fn occupancy_gradient_error(mdp: &ExactMDP, pol: &ExactPolicy, wrt: usize, eps: f64) -> Result<f64> {
    let occ = occupancy_wrt(mdp, pol, wrt)?;
    let mut worst: f64 = 0.0;
    for k in 0..pol.params(wrt) {
        let up = occupancy_wrt(mdp, &pol.nudged(wrt, k, eps), wrt)?;
        let down = occupancy_wrt(mdp, &pol.nudged(wrt, k, -eps), wrt)?;
        for x in 0..occ.total.len() {
            let fd = (up.total[x] - down.total[x]) / (2.0 * eps);
            let an = occ.grad[k][x];
            let scale = an.abs().max(fd.abs()).max(1e-3);
            worst = worst.max((an - fd).abs() / scale);
        }
    }
    Ok(worst)
}

fn sample_index(rng: &mut impl Rng, probs: impl Iterator<Item = f64>) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (k, p) in probs.enumerate() {
        acc += p;
        last = k;
        if u < acc {
            return k;
        }
    }
    last
}

/// Samples one episode, calling `f(s, a, s')` per step.
fn sample_episode(mdp: &ExactMDP, pol: &ExactPolicy, rng: &mut impl Rng, mut f: impl FnMut(usize, usize, usize)) {
    let mut s = sample_index(rng, mdp.p0.iter().copied());
    for _ in 0..mdp.horizon {
        let ss = mdp.split_state(s);
        let a0 = sample_index(rng, (0..mdp.n_actions[0]).map(|b| pol.prob(0, ss[0], b)));
        let a1 = sample_index(rng, (0..mdp.n_actions[1]).map(|b| pol.prob(1, ss[1], b)));
        let a = mdp.action([a0, a1]);
        let n = sample_index(rng, (0..mdp.states()).map(|n| mdp.t(s, a, n)));
        f(s, a, n);
        s = n;
    }
}

/// Count-table keys for an oracle transition; each agent state is one byte.
pub fn oracle_keys(mdp: &ExactMDP, s: usize, a: usize, next: usize) -> TransitionKeys {
    let (ss, aa, nn) = (mdp.split_state(s), mdp.split_action(a), mdp.split_state(next));
    let key = |bytes: &[u8]| {
        let mut b = KeyBuilder::new();
        b.extend(bytes);
        b.key()
    };
    let (s0, s1, a0, a1, n0, n1) = (ss[0] as u8, ss[1] as u8, aa[0] as u8, aa[1] as u8, nn[0] as u8, nn[1] as u8);
    TransitionKeys {
        local_arrival: smallvec![key(&[n0]), key(&[n1])],
        local_pair: smallvec![key(&[s0, a0]), key(&[s1, a1])],
        local_trans: smallvec![key(&[s0, a0, n0]), key(&[s1, a1, n1])],
        joint_arrival: key(&[n0, n1]),
        joint_pair: key(&[s0, s1, a0, a1]),
        joint_trans: smallvec![key(&[s0, s1, a0, a1, n0]), key(&[s0, s1, a0, a1, n1])],
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConsistencyReport {
    pub budget: usize,
    /// Largest `|p_emp − p|` over observed entries; `None` when nothing was observed.
    pub max_deviation: Option<f64>,
    pub entries: usize,
    pub unseen: usize,
}

/// Samples `budget` transitions into a count model and compares the empirical
/// joint and local conditionals of both agents with the exact ones.
pub fn estimator_consistency(mdp: &ExactMDP, pol: &ExactPolicy, budget: usize, seed: u64) -> Result<ConsistencyReport> {
    let occ = occupancy(mdp, pol)?;
    let mut counts = CountModel::new(Codec::new(TaskId::Twin, 2));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut taken = 0;
    while taken < budget {
        let mut batch = Vec::with_capacity(mdp.horizon);
        sample_episode(mdp, pol, &mut rng, |s, a, n| batch.push((s, a, n)));
        for (s, a, n) in batch.into_iter().take(budget - taken) {
            counts.record_keys(&oracle_keys(mdp, s, a, n), None);
            taken += 1;
        }
    }
    let mut worst: Option<f64> = None;
    let mut entries = 0;
    let mut unseen = 0;
    for s in 0..mdp.states() {
        for a in 0..mdp.actions() {
            if occ.pair(s, a) == 0.0 {
                continue;
            }
            for j in 0..2 {
                let (sj, aj) = local_index(mdp, j, s, a);
                for x in 0..mdp.n_states[j] {
                    let mut n = [0; 2];
                    n[j] = x;
                    let keys = oracle_keys(mdp, s, a, mdp.state(n));
                    let exact_joint = mdp.next_marginal(j, s, a, x);
                    let exact_local = occ.local_next(mdp, j, sj, aj, x).expect("positive mass");
                    for (emp, exact) in [(counts.p_joint(&keys, j), exact_joint), (counts.p_local(&keys, j), exact_local)] {
                        entries += 1;
                        match emp {
                            Some(p) => {
                                let d = (p - exact).abs();
                                worst = Some(worst.map_or(d, |w: f64| w.max(d)));
                            }
                            None => unseen += 1,
                        }
                    }
                }
            }
        }
    }
    Ok(ConsistencyReport {
        budget,
        max_deviation: worst,
        entries,
        unseen,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomMdpConfig {
    pub min_states: usize,
    pub max_states: usize,
    pub max_actions: usize,
    pub max_horizon: usize,
    pub gamma: f64,
}

impl Default for RandomMdpConfig {
    fn default() -> Self {
        Self {
            min_states: 2,
            max_states: 3,
            max_actions: 2,
            max_horizon: 4,
            gamma: 0.9,
        }
    }
}

fn dirichlet1(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let xs: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let z: f64 = xs.iter().sum();
    xs.into_iter().map(|x| x / z).collect()
}

/// Dirichlet(1) transition rows and initial distribution, uniform [0,1]
/// rewards, standard-normal logits.
pub fn random_mdp(seed: u64, cfg: &RandomMdpConfig) -> (ExactMDP, ExactPolicy) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_states = [0; 2].map(|_| rng.random_range(cfg.min_states..=cfg.max_states));
    let n_actions = [0; 2].map(|_| rng.random_range(1..=cfg.max_actions));
    let horizon = rng.random_range(1..=cfg.max_horizon);
    let (ns, na) = (n_states[0] * n_states[1], n_actions[0] * n_actions[1]);
    let mut transition = Vec::with_capacity(ns * na * ns);
    for _ in 0..ns * na {
        transition.extend(dirichlet1(&mut rng, ns));
    }
    let reward = (0..ns * na).map(|_| rng.random::<f64>()).collect();
    let intrinsic = [0; 2].map(|_| (0..ns * na).map(|_| rng.random::<f64>()).collect());
    let p0 = dirichlet1(&mut rng, ns);
    let mdp = ExactMDP {
        n_states,
        n_actions,
        transition,
        reward,
        intrinsic,
        p0,
        horizon,
        gamma: cfg.gamma,
    };
    let logits = [0, 1].map(|i| (0..n_states[i] * n_actions[i]).map(|_| rng.sample::<f64, _>(StandardNormal)).collect());
    let pol = ExactPolicy {
        n_states,
        n_actions,
        logits,
    };
    (mdp, pol)
}

/// Two independent single-agent chains run side by side.
pub fn random_product_mdp(seed: u64, cfg: &RandomMdpConfig) -> (ExactMDP, ExactPolicy) {
    let (base, pol) = random_mdp(seed, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xFAC7);
    let rows: [Vec<Vec<f64>>; 2] =
        [0, 1].map(|i| (0..base.n_states[i] * base.n_actions[i]).map(|_| dirichlet1(&mut rng, base.n_states[i])).collect());
    let init: [Vec<f64>; 2] = [0, 1].map(|i| dirichlet1(&mut rng, base.n_states[i]));
    let mut mdp = base;
    let (ns, na) = (mdp.states(), mdp.actions());
    for s in 0..ns {
        let ss = mdp.split_state(s);
        mdp.p0[s] = init[0][ss[0]] * init[1][ss[1]];
        for a in 0..na {
            let aa = mdp.split_action(a);
            for n in 0..ns {
                let nn = mdp.split_state(n);
                let p = rows[0][ss[0] * mdp.n_actions[0] + aa[0]][nn[0]] * rows[1][ss[1] * mdp.n_actions[1] + aa[1]][nn[1]];
                mdp.transition[(s * na + a) * ns + n] = p;
            }
        }
    }
    (mdp, pol)
}

/// `h = 1`; agent 0 has one state and two actions, agent 1's next state is agent 0's action.
pub fn copy_action_mdp() -> (ExactMDP, ExactPolicy) {
    let n_states = [1, 2];
    let n_actions = [2, 1];
    let (ns, na) = (2, 2);
    let mut transition = vec![0.0; ns * na * ns];
    for s in 0..ns {
        for a in 0..na {
            // next = (0, a_0)
            transition[(s * na + a) * ns + a] = 1.0;
        }
    }
    let mdp = ExactMDP {
        n_states,
        n_actions,
        transition,
        reward: vec![0.0; ns * na],
        intrinsic: [Vec::new(), Vec::new()],
        p0: vec![1.0, 0.0],
        horizon: 1,
        gamma: 0.9,
    };
    let pol = ExactPolicy::uniform(&mdp);
    (mdp, pol)
}

/// The two-state-per-agent MDP used for estimator consistency.
pub fn consistency_mdp() -> (ExactMDP, ExactPolicy) {
    let cfg = RandomMdpConfig {
        min_states: 2,
        max_states: 2,
        max_actions: 2,
        max_horizon: 4,
        gamma: 0.9,
    };
    let (mut mdp, mut pol) = random_mdp(7, &cfg);
    mdp.n_actions = [2, 1];
    mdp.horizon = 4;
    let (ns, na) = (mdp.states(), mdp.actions());
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    mdp.transition = (0..ns * na).flat_map(|_| dirichlet1(&mut rng, ns)).collect();
    mdp.reward = vec![0.0; ns * na];
    mdp.intrinsic = [Vec::new(), Vec::new()];
    mdp.p0 = vec![0.25; ns];
    pol.n_actions = mdp.n_actions;
    pol.logits = [vec![0.0; 4], vec![0.0; 2]];
    (mdp, pol)
}
