//! Tabular softmax policies, value baselines, target models and the clipped
//! policy-gradient update.
//!
//! The surrogate maximised by [`update`] is
//!
//! ```text
//! L(θ) = Σ_g [ (1/n_g) Σ_{k∈g} min(ρ_k A_k, clip(ρ_k, 1-ε, 1+ε) A_k) + c_H · H(π(·|s_g)) ]
//! ```
//!
//! where `g` ranges over the distinct observation keys in the batch and
//! `ρ_k = π(a_k|s_k) / π_old(a_k|s_k)`. Each touched state carries unit weight,
//! which makes the step size per state independent of how often it was visited.

use std::io::{Read, Write};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::counts::{CountSnapshot, TransitionKeys};
use crate::error::{Error, Result};
use crate::key::{key_map, sorted_entries, Key, KeyMap};

pub const MAX_ACTIONS: usize = 6;

pub type Logits = [f64; MAX_ACTIONS];

pub fn softmax(logits: &Logits, n: usize) -> Logits {
    let mut p = [0.0; MAX_ACTIONS];
    let m = logits[..n].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for a in 0..n {
        p[a] = (logits[a] - m).exp();
        z += p[a];
    }
    for v in &mut p[..n] {
        *v /= z;
    }
    p
}

fn log_softmax(logits: &Logits, n: usize) -> Logits {
    let mut out = [0.0; MAX_ACTIONS];
    let m = logits[..n].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lz = logits[..n].iter().map(|l| (l - m).exp()).sum::<f64>().ln() + m;
    for a in 0..n {
        out[a] = logits[a] - lz;
    }
    out
}

fn entropy(p: &Logits, n: usize) -> f64 {
    -p[..n]
        .iter()
        .filter(|x| **x > 0.0)
        .map(|x| x * x.ln())
        .sum::<f64>()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyTable {
    n_actions: usize,
    logits: KeyMap<Logits>,
}

impl PolicyTable {
    pub fn new(n_actions: usize) -> Self {
        assert!((1..=MAX_ACTIONS).contains(&n_actions));
        Self {
            n_actions,
            logits: key_map(),
        }
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn logits(&self, s: Key) -> Logits {
        self.logits.get(&s).copied().unwrap_or([0.0; MAX_ACTIONS])
    }

    pub fn set_logits(&mut self, s: Key, l: Logits) {
        self.logits.insert(s, l);
    }

    pub fn probs(&self, s: Key) -> Logits {
        softmax(&self.logits(s), self.n_actions)
    }

    pub fn states(&self) -> usize {
        self.logits.len()
    }

    pub fn keys(&self) -> impl Iterator<Item = &Key> {
        self.logits.keys()
    }

    /// Samples an action; returns its index and log-probability.
    pub fn act(&self, s: Key, rng: &mut impl Rng) -> (usize, f64) {
        let l = self.logits(s);
        let p = softmax(&l, self.n_actions);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut a = self.n_actions - 1;
        for (k, pk) in p[..self.n_actions].iter().enumerate() {
            acc += pk;
            if u < acc {
                a = k;
                break;
            }
        }
        (a, log_softmax(&l, self.n_actions)[a])
    }

    pub fn greedy(&self, s: Key) -> usize {
        let l = self.logits(s);
        let mut best = 0;
        for a in 1..self.n_actions {
            if l[a] > l[best] {
                best = a;
            }
        }
        best
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        binio::put_u8(w, self.n_actions as u8)?;
        binio::put_map(w, &self.logits, |w, l| {
            for v in &l[..self.n_actions] {
                binio::put_f64(w, *v)?;
            }
            Ok(())
        })
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let n = binio::get_u8(r)? as usize;
        if !(1..=MAX_ACTIONS).contains(&n) {
            return Err(Error::Checkpoint(format!("policy with {n} actions")));
        }
        let logits = binio::get_map(r, |r| {
            let mut l = [0.0; MAX_ACTIONS];
            for v in &mut l[..n] {
                *v = binio::get_f64(r)?;
            }
            Ok(l)
        })?;
        Ok(Self { n_actions: n, logits })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValueTable {
    values: KeyMap<f64>,
}

impl ValueTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, k: Key) -> f64 {
        self.values.get(&k).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, k: Key, v: f64) {
        self.values.insert(k, v);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `V(k) ← V(k) + rate · (mean target at k − V(k))` for every key present
    /// in `targets`. Keys are processed in sorted order.
    pub fn regress(&mut self, targets: &[(Key, f64)], rate: f64) {
        let mut sorted: Vec<(Key, f64)> = targets.to_vec();
        sorted.sort_by_key(|(k, _)| *k);
        let mut i = 0;
        while i < sorted.len() {
            let k = sorted[i].0;
            let mut sum = 0.0;
            let mut n = 0usize;
            while i < sorted.len() && sorted[i].0 == k {
                sum += sorted[i].1;
                n += 1;
                i += 1;
            }
            let v = self.get(k);
            self.values.insert(k, v + rate * (sum / n as f64 - v));
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        binio::put_f64_map(w, &self.values)
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        Ok(Self {
            values: binio::get_f64_map(r)?,
        })
    }
}

/// Frozen copies of `p⁻`, `r̃⁻`, `V^{ext,−}` and `V^{int,−}`.
#[derive(Clone, Debug)]
pub struct TargetModel {
    counts: CountSnapshot,
    v_ext: Vec<Arc<ValueTable>>,
    v_int: Vec<Arc<ValueTable>>,
    refreshes: u64,
}

impl TargetModel {
    pub fn new(agents: usize) -> Self {
        Self {
            counts: CountSnapshot::empty(agents),
            v_ext: vec![Arc::new(ValueTable::new()); agents],
            v_int: vec![Arc::new(ValueTable::new()); agents],
            refreshes: 0,
        }
    }

    pub fn refresh(
        &mut self,
        counts: &CountSnapshot,
        v_ext: &[Arc<ValueTable>],
        v_int: &[Arc<ValueTable>],
    ) {
        self.counts = counts.clone();
        self.v_ext = v_ext.to_vec();
        self.v_int = v_int.to_vec();
        self.refreshes += 1;
    }

    pub fn from_parts(
        counts: CountSnapshot,
        v_ext: Vec<Arc<ValueTable>>,
        v_int: Vec<Arc<ValueTable>>,
        refreshes: u64,
    ) -> Self {
        Self {
            counts,
            v_ext,
            v_int,
            refreshes,
        }
    }

    pub fn refreshes(&self) -> u64 {
        self.refreshes
    }

    pub fn counts(&self) -> &CountSnapshot {
        &self.counts
    }

    /// `p⁻(s_j' | s_j, a_j)`.
    pub fn p_minus(&self, keys: &TransitionKeys, j: usize) -> Option<f64> {
        self.counts.p_local(keys, j)
    }

    /// `r̃⁻_j(s_j, a_j)`: recorded `r̃_j` averaged over the observed partners.
    pub fn r_minus(&self, j: usize, pair: Key) -> f64 {
        self.counts.mean_reward(j, pair)
    }

    pub fn v_ext(&self, j: usize, s: Key) -> f64 {
        self.v_ext[j].get(s)
    }

    pub fn v_int(&self, j: usize, s: Key) -> f64 {
        self.v_int[j].get(s)
    }

    pub fn value_tables(&self) -> (&[Arc<ValueTable>], &[Arc<ValueTable>]) {
        (&self.v_ext, &self.v_int)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UpdateConfig {
    pub lr: f64,
    pub clip: f64,
    pub epochs: u32,
    pub entropy_coef: f64,
    pub value_rate: f64,
    pub target_period: u32,
    pub normalize_advantages: bool,
    /// Discount applied when turning shaped rewards into returns.
    pub return_gamma: f64,
}

impl Default for UpdateConfig {
    fn default() -> Self {
        Self {
            lr: 1.0,
            clip: 0.2,
            epochs: 4,
            entropy_coef: 0.01,
            value_rate: 0.5,
            target_period: 10,
            normalize_advantages: true,
            return_gamma: 1.0,
        }
    }
}

impl UpdateConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("learner.clip must lie in (0, 1)");
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("learner.lr must be > 0");
        }
        if !(self.value_rate > 0.0 && self.value_rate <= 1.0) {
            return bad("learner.value_rate must lie in (0, 1]");
        }
        if self.epochs == 0 {
            return bad("learner.epochs must be > 0");
        }
        if self.target_period == 0 {
            return bad("learner.target_period must be > 0");
        }
        if !(self.return_gamma > 0.0 && self.return_gamma <= 1.0) {
            return bad("learner.return_gamma must lie in (0, 1]");
        }
        if !(self.entropy_coef >= 0.0) {
            return bad("learner.entropy_coef must be >= 0");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub obs: Key,
    pub action: u8,
    pub old_logp: f64,
    pub ret: f64,
    pub baseline: Key,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub mean_advantage: f64,
    pub clip_fraction: f64,
    pub entropy: f64,
    pub states: usize,
}

/// Suffix sums `R_t = Σ_{t' ≥ t} r_{t'}`.
pub fn compute_returns(rewards: &[f64]) -> Vec<f64> {
    compute_returns_discounted(rewards, 1.0)
}

pub fn compute_returns_discounted(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// One sample of a state group: `(action, old log-prob, advantage)`.
pub type GroupSample = (u8, f64, f64);

fn is_clipped(ratio: f64, adv: f64, clip: f64) -> bool {
    (adv > 0.0 && ratio > 1.0 + clip) || (adv < 0.0 && ratio < 1.0 - clip)
}

/// Surrogate contribution of one state group at logits `theta`.
pub fn group_objective(theta: &Logits, n: usize, samples: &[GroupSample], clip: f64, ent: f64) -> f64 {
    let lp = log_softmax(theta, n);
    let p = softmax(theta, n);
    let mut sum = 0.0;
    for &(a, old, adv) in samples {
        let ratio = (lp[a as usize] - old).exp();
        let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
        sum += (ratio * adv).min(clipped * adv);
    }
    sum / samples.len() as f64 + ent * entropy(&p, n)
}

/// Analytic gradient of [`group_objective`]; also returns how many samples sit
/// in the clipped region.
pub fn group_gradient(
    theta: &Logits,
    n: usize,
    samples: &[GroupSample],
    clip: f64,
    ent: f64,
) -> (Logits, usize) {
    let lp = log_softmax(theta, n);
    let p = softmax(theta, n);
    let mut g = [0.0; MAX_ACTIONS];
    let mut clipped = 0;
    let inv = 1.0 / samples.len() as f64;
    for &(a, old, adv) in samples {
        let ratio = (lp[a as usize] - old).exp();
        if is_clipped(ratio, adv, clip) {
            clipped += 1;
            continue;
        }
        let w = ratio * adv * inv;
        for b in 0..n {
            g[b] -= w * p[b];
        }
        g[a as usize] += w;
    }
    if ent > 0.0 {
        let h = entropy(&p, n);
        for b in 0..n {
            if p[b] > 0.0 {
                g[b] -= ent * p[b] * (p[b].ln() + h);
            }
        }
    }
    (g, clipped)
}

fn advantages(
    agent: usize,
    value: &ValueTable,
    batch: &[Sample],
    normalize: bool,
) -> Result<(Vec<f64>, f64)> {
    let mut adv = Vec::with_capacity(batch.len());
    for s in batch {
        let b = value.get(s.baseline);
        let a = s.ret - b;
        if !a.is_finite() {
            return Err(Error::NonFiniteAdvantage {
                agent,
                value: a,
                ret: s.ret,
                baseline: b,
            });
        }
        adv.push(a);
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    if normalize && adv.len() > 1 {
        let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        if sd > 1e-8 {
            for a in &mut adv {
                *a /= sd;
            }
        }
    }
    Ok((adv, mean))
}

/// Batch indices grouped by observation key, groups in key order.
fn groups(batch: &[Sample]) -> Vec<(Key, Vec<usize>)> {
    let mut idx: Vec<usize> = (0..batch.len()).collect();
    idx.sort_by_key(|&i| (batch[i].obs, i));
    let mut out: Vec<(Key, Vec<usize>)> = Vec::new();
    for i in idx {
        match out.last_mut() {
            Some((k, v)) if *k == batch[i].obs => v.push(i),
            _ => out.push((batch[i].obs, vec![i])),
        }
    }
    out
}

/// Full surrogate of a batch with explicit advantages.
pub fn surrogate_objective(policy: &PolicyTable, batch: &[Sample], adv: &[f64], cfg: &UpdateConfig) -> f64 {
    groups(batch)
        .iter()
        .map(|(k, idx)| {
            let gs: Vec<GroupSample> = idx
                .iter()
                .map(|&i| (batch[i].action, batch[i].old_logp, adv[i]))
                .collect();
            group_objective(&policy.logits(*k), policy.n_actions, &gs, cfg.clip, cfg.entropy_coef)
        })
        .sum()
}

pub fn surrogate_gradient(
    policy: &PolicyTable,
    batch: &[Sample],
    adv: &[f64],
    cfg: &UpdateConfig,
) -> KeyMap<Logits> {
    let mut out = key_map();
    for (k, idx) in groups(batch) {
        let gs: Vec<GroupSample> = idx
            .iter()
            .map(|&i| (batch[i].action, batch[i].old_logp, adv[i]))
            .collect();
        let (g, _) = group_gradient(&policy.logits(k), policy.n_actions, &gs, cfg.clip, cfg.entropy_coef);
        out.insert(k, g);
    }
    out
}

/// Clipped policy-gradient ascent on `policy` plus value regression of
/// `value` toward the batch returns.
pub fn update(
    agent: usize,
    policy: &mut PolicyTable,
    value: &mut ValueTable,
    batch: &[Sample],
    cfg: &UpdateConfig,
) -> Result<UpdateStats> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (adv, mean_adv) = advantages(agent, value, batch, cfg.normalize_advantages)?;
    let n = policy.n_actions;
    let mut clipped = 0usize;
    let mut ent_sum = 0.0;
    let gs_all = groups(batch);
    let mut gs: Vec<GroupSample> = Vec::new();
    for (k, idx) in &gs_all {
        gs.clear();
        gs.extend(idx.iter().map(|&i| (batch[i].action, batch[i].old_logp, adv[i])));
        let mut theta = policy.logits(*k);
        let mut last_clipped = 0;
        for _ in 0..cfg.epochs {
            let (g, c) = group_gradient(&theta, n, &gs, cfg.clip, cfg.entropy_coef);
            for b in 0..n {
                theta[b] += cfg.lr * g[b];
            }
            last_clipped = c;
        }
        // softmax is shift invariant; keep the stored logits centred
        let mean = theta[..n].iter().sum::<f64>() / n as f64;
        for v in &mut theta[..n] {
            *v -= mean;
        }
        clipped += last_clipped;
        ent_sum += entropy(&softmax(&theta, n), n);
        policy.logits.insert(*k, theta);
    }
    let targets: Vec<(Key, f64)> = batch.iter().map(|s| (s.baseline, s.ret)).collect();
    value.regress(&targets, cfg.value_rate);
    Ok(UpdateStats {
        mean_advantage: mean_adv,
        clip_fraction: clipped as f64 / batch.len() as f64,
        entropy: ent_sum / gs_all.len() as f64,
        states: gs_all.len(),
    })
}

/// Largest `|Σ_a π(a|s) − 1|` over stored states.
pub fn normalization_error(policy: &PolicyTable) -> f64 {
    sorted_entries(&policy.logits)
        .into_iter()
        .map(|(_, l)| (softmax(l, policy.n_actions)[..policy.n_actions].iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::key::key_of;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn k(i: u8) -> Key {
        key_of(&[i])
    }

    #[test]
    fn uniform_and_peaked_softmax() {
        let p = softmax(&[0.0; 6], 5);
        assert!(p[..5].iter().all(|x| (x - 0.2).abs() < 1e-15));
        let p = softmax(&[10.0, 0.0, 0.0, 0.0, 0.0, 0.0], 5);
        assert!((p[0] - 0.99982).abs() < 1e-5);
    }

    #[test]
    fn act_is_deterministic_and_logp_matches() {
        let mut pol = PolicyTable::new(5);
        pol.set_logits(k(1), [0.3, -1.0, 2.0, 0.0, 0.5, 0.0]);
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let (a, lp) = pol.act(k(1), &mut r1);
            assert_eq!((a, lp), pol.act(k(1), &mut r2));
            assert!((lp - pol.probs(k(1))[a].ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn returns_are_suffix_sums() {
        assert_eq!(compute_returns(&[1.0, 2.0, 3.0]), vec![6.0, 5.0, 3.0]);
        assert_eq!(compute_returns(&[0.0; 4]), vec![0.0; 4]);
        assert_eq!(compute_returns(&[7.5]), vec![7.5]);
        assert!(compute_returns(&[]).is_empty());
    }

    fn sample(obs: u8, action: u8, ret: f64) -> Sample {
        Sample {
            obs: k(obs),
            action,
            old_logp: (0.2f64).ln(),
            ret,
            baseline: k(obs),
        }
    }

    #[test]
    fn zero_advantage_leaves_logits() {
        let mut pol = PolicyTable::new(5);
        let mut v = ValueTable::new();
        let cfg = UpdateConfig {
            entropy_coef: 0.0,
            ..UpdateConfig::default()
        };
        update(0, &mut pol, &mut v, &[sample(1, 2, 0.0), sample(1, 3, 0.0)], &cfg).unwrap();
        assert_eq!(pol.logits(k(1)), [0.0; 6]);
    }

    #[test]
    fn positive_advantage_raises_probability() {
        let mut pol = PolicyTable::new(5);
        let mut v = ValueTable::new();
        let before = pol.probs(k(1))[2];
        update(0, &mut pol, &mut v, &[sample(1, 2, 3.0)], &UpdateConfig::default()).unwrap();
        assert!(pol.probs(k(1))[2] > before);
        assert!(v.get(k(1)) > 0.0);
    }

    #[test]
    fn empty_batch_and_non_finite_are_errors() {
        let mut pol = PolicyTable::new(5);
        let mut v = ValueTable::new();
        let cfg = UpdateConfig::default();
        assert!(matches!(update(0, &mut pol, &mut v, &[], &cfg), Err(Error::EmptyBatch)));
        let e = update(1, &mut pol, &mut v, &[sample(1, 0, f64::NAN)], &cfg).unwrap_err();
        assert!(matches!(e, Error::NonFiniteAdvantage { agent: 1, .. }));
    }

    /// Three states, mixed-sign advantages, ratios away from the clip edges.
    fn toy_batch() -> (PolicyTable, Vec<Sample>, Vec<f64>) {
        let mut pol = PolicyTable::new(5);
        pol.set_logits(k(0), [0.1, -0.2, 0.3, 0.0, 0.05, 0.0]);
        pol.set_logits(k(1), [-0.4, 0.2, 0.1, 0.25, -0.1, 0.0]);
        pol.set_logits(k(2), [0.0, 0.0, 0.9, -0.3, 0.2, 0.0]);
        let old = PolicyTable::new(5);
        let mut batch = Vec::new();
        let picks = [(0, 0), (0, 2), (1, 3), (1, 1), (1, 4), (2, 2), (2, 0)];
        for &(s, a) in &picks {
            let lp = old.probs(k(s))[a as usize].ln();
            batch.push(Sample {
                obs: k(s),
                action: a,
                old_logp: lp + 0.05 * (a as f64 - 2.0),
                ret: 0.0,
                baseline: k(s),
            });
        }
        let adv = vec![1.3, -0.7, 0.4, 2.0, -1.1, 0.9, -0.2];
        (pol, batch, adv)
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (pol, batch, adv) = toy_batch();
        let cfg = UpdateConfig::default();
        let g = surrogate_gradient(&pol, &batch, &adv, &cfg);
        let h = 1e-5;
        for s in 0..3 {
            for b in 0..5 {
                let mut plus = pol.clone();
                let mut l = plus.logits(k(s));
                l[b] += h;
                plus.set_logits(k(s), l);
                let mut minus = pol.clone();
                let mut l = minus.logits(k(s));
                l[b] -= h;
                minus.set_logits(k(s), l);
                let fd = (surrogate_objective(&plus, &batch, &adv, &cfg)
                    - surrogate_objective(&minus, &batch, &adv, &cfg))
                    / (2.0 * h);
                let an = g[&k(s)][b];
                let rel = (fd - an).abs() / an.abs().max(1e-3);
                assert!(rel < 1e-6, "state {s} action {b}: {an} vs {fd}");
            }
        }
    }

    #[test]
    fn value_regression_moves_toward_mean() {
        let mut v = ValueTable::new();
        v.set(k(3), 10.0);
        v.regress(&[(k(3), 2.0), (k(3), 4.0)], 0.5);
        assert_eq!(v.get(k(3)), 6.5);
    }

    #[test]
    fn targets_start_empty_and_refresh_is_idempotent() {
        use crate::counts::CountModel;
        use crate::env::{Codec, TaskId};
        let t = TargetModel::new(2);
        assert_eq!(t.v_ext(0, k(1)), 0.0);
        assert_eq!(t.r_minus(1, k(1)), 0.0);
        let m = CountModel::new(Codec::new(TaskId::Pass, 2));
        let mut ve = ValueTable::new();
        ve.set(k(1), 3.0);
        let ve = vec![Arc::new(ve); 2];
        let vi = vec![Arc::new(ValueTable::new()); 2];
        let mut a = TargetModel::new(2);
        a.refresh(&m.snapshot(), &ve, &vi);
        let first = a.v_ext(1, k(1));
        a.refresh(&m.snapshot(), &ve, &vi);
        assert_eq!(a.v_ext(1, k(1)), first);
        assert_eq!(first, 3.0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let (pol, _, _) = toy_batch();
        let mut buf = Vec::new();
        pol.write_to(&mut buf).unwrap();
        assert_eq!(PolicyTable::read_from(&mut buf.as_slice()).unwrap(), pol);
        let mut v = ValueTable::new();
        v.set(k(9), -1.25);
        let mut buf = Vec::new();
        v.write_to(&mut buf).unwrap();
        assert_eq!(ValueTable::read_from(&mut buf.as_slice()).unwrap(), v);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn probabilities_stay_normalized(rets in proptest::collection::vec(-50.0f64..50.0, 1..40), lr in 0.01f64..5.0) {
            let mut pol = PolicyTable::new(5);
            let mut v = ValueTable::new();
            let batch: Vec<Sample> = rets.iter().enumerate()
                .map(|(i, r)| sample((i % 4) as u8, (i % 5) as u8, *r)).collect();
            let cfg = UpdateConfig { lr, ..UpdateConfig::default() };
            for _ in 0..3 {
                update(0, &mut pol, &mut v, &batch, &cfg).unwrap();
            }
            prop_assert!(normalization_error(&pol) < 1e-12);
        }

        #[test]
        fn regression_is_a_contraction(v0 in -100.0f64..100.0, rets in proptest::collection::vec(-100.0f64..100.0, 1..10), rate in 0.01f64..1.0) {
            let mut v = ValueTable::new();
            v.set(k(0), v0);
            let target: Vec<(Key, f64)> = rets.iter().map(|r| (k(0), *r)).collect();
            let mean = rets.iter().sum::<f64>() / rets.len() as f64;
            let before = (v.get(k(0)) - mean).abs();
            v.regress(&target, rate);
            prop_assert!((v.get(k(0)) - mean).abs() <= before + 1e-12);
        }

        #[test]
        fn clipped_samples_get_no_gradient(adv in -5.0f64..5.0, shift in -2.0f64..2.0) {
            let theta = [shift, 0.0, 0.0, 0.0, 0.0, 0.0];
            let old = (0.2f64).ln();
            let (g, c) = group_gradient(&theta, 5, &[(0, old, adv)], 0.2, 0.0);
            let ratio = softmax(&theta, 5)[0] / 0.2;
            if is_clipped(ratio, adv, 0.2) {
                prop_assert_eq!(c, 1);
                prop_assert!(g.iter().all(|x| *x == 0.0));
            }
        }
    }
}
