//! Monte-Carlo visitation and transition counters.
//!
//! Per agent `j` the model keeps `N(s_j')` (arrivals), `N(s_j, a_j)`,
//! `N(s_j', s_j, a_j)` and the running sum of `r̃_j` per `(s_j, a_j)`; globally
//! it keeps `N(s')`, `N(s, a)` and, per agent, `N(s_j', s, a)`. Probabilities
//! are plain ratios of these counts. A condition that was never seen yields
//! `None`.
//!
//! The tables sit behind an [`Arc`], so [`CountModel::snapshot`] is a pointer
//! copy and the first write after a snapshot clones the tables once.

use std::io::{Read, Write};
use std::ops::Deref;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::binio;
use crate::env::{Codec, JointAction, JointState};
use crate::error::Result;
use crate::key::{Key, KeyBuilder, KeyMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CuriosityMode {
    /// `N(s_i)` over each agent's own state.
    Decentralized,
    /// `N(s)` over the joint state.
    Centralized,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CuriosityKeying {
    State,
    StateAction,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CuriosityConfig {
    pub eta: f64,
    pub mode: CuriosityMode,
    pub keying: CuriosityKeying,
}

impl CuriosityConfig {
    pub fn new(eta: f64) -> Self {
        Self {
            eta,
            mode: CuriosityMode::Decentralized,
            keying: CuriosityKeying::State,
        }
    }

    pub fn bonus(&self, visits: u64) -> f64 {
        curiosity(self.eta, visits)
    }
}

/// `η / √N`, with `η` for a hypothetical unvisited key.
pub fn curiosity(eta: f64, visits: u64) -> f64 {
    if visits == 0 {
        eta
    } else {
        eta / (visits as f64).sqrt()
    }
}

/// All table keys touched by one transition `(s, a, s')`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransitionKeys {
    pub local_arrival: SmallVec<[Key; 4]>,
    pub local_pair: SmallVec<[Key; 4]>,
    pub local_trans: SmallVec<[Key; 4]>,
    pub joint_arrival: Key,
    pub joint_pair: Key,
    pub joint_trans: SmallVec<[Key; 4]>,
}

impl TransitionKeys {
    pub fn new(codec: &Codec, s: &JointState, a: &JointAction, next: &JointState) -> Self {
        let n = s.agents.len();
        let mut b = KeyBuilder::new();
        let mut local_arrival = SmallVec::new();
        let mut local_pair = SmallVec::new();
        let mut local_trans = SmallVec::new();
        for j in 0..n {
            b.clear();
            codec.write_individual(next, j, &mut b);
            local_arrival.push(b.key());
            b.clear();
            codec.write_individual(s, j, &mut b);
            b.push(a.0[j] as u8);
            local_pair.push(b.key());
            codec.write_individual(next, j, &mut b);
            local_trans.push(b.key());
        }
        b.clear();
        codec.write_joint(next, &mut b);
        let joint_arrival = b.key();
        b.clear();
        codec.write_joint(s, &mut b);
        for act in &a.0 {
            b.push(*act as u8);
        }
        let joint_pair = b.key();
        let base = b.len();
        let mut joint_trans = SmallVec::new();
        for j in 0..n {
            b.truncate(base);
            codec.write_individual(next, j, &mut b);
            joint_trans.push(b.key());
        }
        Self {
            local_arrival,
            local_pair,
            local_trans,
            joint_arrival,
            joint_pair,
            joint_trans,
        }
    }

    pub fn agents(&self) -> usize {
        self.local_pair.len()
    }
}

/// Key of the decentralized curiosity count for agent `j`'s individual state.
pub fn individual_key(codec: &Codec, s: &JointState, j: usize) -> Key {
    let mut b = KeyBuilder::new();
    codec.write_individual(s, j, &mut b);
    b.key()
}

pub fn joint_key(codec: &Codec, s: &JointState) -> Key {
    let mut b = KeyBuilder::new();
    codec.write_joint(s, &mut b);
    b.key()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LocalTables {
    pub visits: KeyMap<u64>,
    pub pairs: KeyMap<u64>,
    pub trans: KeyMap<u64>,
    pub reward_sums: KeyMap<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct JointTables {
    pub visits: KeyMap<u64>,
    pub pairs: KeyMap<u64>,
    pub trans: Vec<KeyMap<u64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CountTables {
    pub local: Vec<LocalTables>,
    pub joint: JointTables,
    pub transitions: u64,
}

fn get(m: &KeyMap<u64>, k: Key) -> u64 {
    m.get(&k).copied().unwrap_or(0)
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl CountTables {
    fn new(agents: usize) -> Self {
        Self {
            local: vec![LocalTables::default(); agents],
            joint: JointTables {
                visits: KeyMap::default(),
                pairs: KeyMap::default(),
                trans: vec![KeyMap::default(); agents],
            },
            transitions: 0,
        }
    }

    pub fn agents(&self) -> usize {
        self.local.len()
    }

    pub fn local_visits(&self, j: usize, key: Key) -> u64 {
        get(&self.local[j].visits, key)
    }

    pub fn local_pair(&self, j: usize, key: Key) -> u64 {
        get(&self.local[j].pairs, key)
    }

    pub fn local_trans(&self, j: usize, key: Key) -> u64 {
        get(&self.local[j].trans, key)
    }

    pub fn joint_visits(&self, key: Key) -> u64 {
        get(&self.joint.visits, key)
    }

    pub fn joint_pair(&self, key: Key) -> u64 {
        get(&self.joint.pairs, key)
    }

    pub fn joint_trans(&self, j: usize, key: Key) -> u64 {
        get(&self.joint.trans[j], key)
    }

    /// `N(s_j', s_j, a_j) / N(s_j, a_j)` for the transition behind `keys`.
    pub fn p_local(&self, keys: &TransitionKeys, j: usize) -> Option<f64> {
        ratio(
            self.local_trans(j, keys.local_trans[j]),
            self.local_pair(j, keys.local_pair[j]),
        )
    }

    /// `N(s_j', s, a) / N(s, a)` for the transition behind `keys`.
    pub fn p_joint(&self, keys: &TransitionKeys, j: usize) -> Option<f64> {
        ratio(
            self.joint_trans(j, keys.joint_trans[j]),
            self.joint_pair(keys.joint_pair),
        )
    }

    /// As [`p_local`](Self::p_local), counting the queried transition once more
    /// on top of the stored counts.
    pub fn p_local_including(&self, keys: &TransitionKeys, j: usize) -> f64 {
        (self.local_trans(j, keys.local_trans[j]) + 1) as f64
            / (self.local_pair(j, keys.local_pair[j]) + 1) as f64
    }

    pub fn p_joint_including(&self, keys: &TransitionKeys, j: usize) -> f64 {
        (self.joint_trans(j, keys.joint_trans[j]) + 1) as f64
            / (self.joint_pair(keys.joint_pair) + 1) as f64
    }

    /// Mean recorded `r̃_j` for `(s_j, a_j)`, 0 when the pair is unseen.
    pub fn mean_reward(&self, j: usize, pair: Key) -> f64 {
        let n = self.local_pair(j, pair);
        if n == 0 {
            0.0
        } else {
            self.local[j].reward_sums.get(&pair).copied().unwrap_or(0.0) / n as f64
        }
    }

    pub fn p_emp_local(
        &self,
        codec: &Codec,
        j: usize,
        s: &JointState,
        a: &JointAction,
        next: &JointState,
    ) -> Option<f64> {
        self.p_local(&TransitionKeys::new(codec, s, a, next), j)
    }

    pub fn p_emp_joint(
        &self,
        codec: &Codec,
        j: usize,
        s: &JointState,
        a: &JointAction,
        next: &JointState,
    ) -> Option<f64> {
        self.p_joint(&TransitionKeys::new(codec, s, a, next), j)
    }

    /// Visit count behind an agent's curiosity bonus for the given transition.
    pub fn curiosity_visits(&self, cfg: &CuriosityConfig, keys: &TransitionKeys, j: usize) -> u64 {
        match (cfg.mode, cfg.keying) {
            (CuriosityMode::Decentralized, CuriosityKeying::State) => {
                self.local_visits(j, keys.local_arrival[j])
            }
            (CuriosityMode::Decentralized, CuriosityKeying::StateAction) => {
                self.local_pair(j, keys.local_pair[j])
            }
            (CuriosityMode::Centralized, CuriosityKeying::State) => {
                self.joint_visits(keys.joint_arrival)
            }
            (CuriosityMode::Centralized, CuriosityKeying::StateAction) => {
                self.joint_pair(keys.joint_pair)
            }
        }
    }

    pub fn distinct_states(&self) -> usize {
        self.joint.visits.len()
    }

    pub fn total_visits(&self) -> u64 {
        self.transitions
    }

    fn record(&mut self, keys: &TransitionKeys, rewards: Option<&[f64]>) {
        for j in 0..keys.agents() {
            let l = &mut self.local[j];
            *l.visits.entry(keys.local_arrival[j]).or_insert(0) += 1;
            *l.pairs.entry(keys.local_pair[j]).or_insert(0) += 1;
            *l.trans.entry(keys.local_trans[j]).or_insert(0) += 1;
            if let Some(r) = rewards {
                *l.reward_sums.entry(keys.local_pair[j]).or_insert(0.0) += r[j];
            }
            *self.joint.trans[j].entry(keys.joint_trans[j]).or_insert(0) += 1;
        }
        *self.joint.visits.entry(keys.joint_arrival).or_insert(0) += 1;
        *self.joint.pairs.entry(keys.joint_pair).or_insert(0) += 1;
        self.transitions += 1;
    }
}

/// Read-only view of the counts at one point in time.
#[derive(Clone, Debug)]
pub struct CountSnapshot {
    tables: Arc<CountTables>,
}

impl CountSnapshot {
    pub fn empty(agents: usize) -> Self {
        Self {
            tables: Arc::new(CountTables::new(agents)),
        }
    }

    pub fn ptr_eq(&self, other: &CountSnapshot) -> bool {
        Arc::ptr_eq(&self.tables, &other.tables)
    }
}

impl Deref for CountSnapshot {
    type Target = CountTables;
    fn deref(&self) -> &CountTables {
        &self.tables
    }
}

#[derive(Clone, Debug)]
pub struct CountModel {
    codec: Codec,
    tables: Arc<CountTables>,
}

impl Deref for CountModel {
    type Target = CountTables;
    fn deref(&self) -> &CountTables {
        &self.tables
    }
}

impl PartialEq for CountModel {
    fn eq(&self, other: &Self) -> bool {
        self.codec == other.codec && *self.tables == *other.tables
    }
}

/// Transitions recorded by one worker, applied to the master model in order.
#[derive(Clone, Debug, Default)]
pub struct CountDelta {
    entries: Vec<(TransitionKeys, SmallVec<[f64; 4]>)>,
}

impl CountDelta {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, keys: TransitionKeys, rewards: &[f64]) {
        self.entries.push((keys, rewards.iter().copied().collect()));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn append(&mut self, other: CountDelta) {
        self.entries.extend(other.entries);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&TransitionKeys, &[f64])> {
        self.entries.iter().map(|(k, r)| (k, r.as_slice()))
    }
}

impl CountModel {
    pub fn new(codec: Codec) -> Self {
        Self {
            tables: Arc::new(CountTables::new(codec.agents)),
            codec,
        }
    }

    pub fn codec(&self) -> Codec {
        self.codec
    }

    pub fn record_transition(&mut self, s: &JointState, a: &JointAction, next: &JointState) {
        let keys = TransitionKeys::new(&self.codec, s, a, next);
        Arc::make_mut(&mut self.tables).record(&keys, None);
    }

    pub fn record_keys(&mut self, keys: &TransitionKeys, rewards: Option<&[f64]>) {
        Arc::make_mut(&mut self.tables).record(keys, rewards);
    }

    pub fn merge(&mut self, delta: &CountDelta) {
        if delta.is_empty() {
            return;
        }
        let t = Arc::make_mut(&mut self.tables);
        for (keys, r) in delta.iter() {
            t.record(keys, Some(r));
        }
    }

    /// A model sharing the tables of a snapshot.
    pub fn from_snapshot(codec: Codec, snap: &CountSnapshot) -> Self {
        Self {
            codec,
            tables: Arc::clone(&snap.tables),
        }
    }

    pub fn snapshot(&self) -> CountSnapshot {
        CountSnapshot {
            tables: Arc::clone(&self.tables),
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let t = &*self.tables;
        binio::put_u64(w, t.local.len() as u64)?;
        binio::put_u64(w, t.transitions)?;
        for l in &t.local {
            binio::put_u64_map(w, &l.visits)?;
            binio::put_u64_map(w, &l.pairs)?;
            binio::put_u64_map(w, &l.trans)?;
            binio::put_f64_map(w, &l.reward_sums)?;
        }
        binio::put_u64_map(w, &t.joint.visits)?;
        binio::put_u64_map(w, &t.joint.pairs)?;
        for m in &t.joint.trans {
            binio::put_u64_map(w, m)?;
        }
        Ok(())
    }

    pub fn read_from(codec: Codec, r: &mut impl Read) -> Result<Self> {
        let agents = binio::get_len(r, 64)?;
        if agents != codec.agents {
            return Err(crate::Error::Checkpoint(format!(
                "count tables hold {agents} agents, task has {}",
                codec.agents
            )));
        }
        let transitions = binio::get_u64(r)?;
        let mut local = Vec::with_capacity(agents);
        for _ in 0..agents {
            local.push(LocalTables {
                visits: binio::get_u64_map(r)?,
                pairs: binio::get_u64_map(r)?,
                trans: binio::get_u64_map(r)?,
                reward_sums: binio::get_f64_map(r)?,
            });
        }
        let visits = binio::get_u64_map(r)?;
        let pairs = binio::get_u64_map(r)?;
        let mut trans = Vec::with_capacity(agents);
        for _ in 0..agents {
            trans.push(binio::get_u64_map(r)?);
        }
        Ok(Self {
            codec,
            tables: Arc::new(CountTables {
                local,
                joint: JointTables {
                    visits,
                    pairs,
                    trans,
                },
                transitions,
            }),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_task, Action, Pos, TaskConfig, TaskId};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn codec() -> Codec {
        Codec::new(TaskId::Pass, 2)
    }

    fn state(p: [(u8, u8); 2]) -> JointState {
        let env = make_task(TaskConfig::new(TaskId::Pass).with_grid(8), 0).unwrap();
        let mut s = env.state().clone();
        for (j, (r, c)) in p.iter().enumerate() {
            s.agents[j].pos = Pos::new(*r, *c);
        }
        s
    }

    fn ja(a: [usize; 2]) -> JointAction {
        JointAction::new(&[Action::from_index(a[0]), Action::from_index(a[1])])
    }

    #[test]
    fn single_record_sets_every_counter_to_one() {
        let mut m = CountModel::new(codec());
        let (s, a, n) = (state([(0, 0), (1, 1)]), ja([3, 1]), state([(0, 1), (2, 1)]));
        m.record_transition(&s, &a, &n);
        let k = TransitionKeys::new(&codec(), &s, &a, &n);
        assert_eq!(m.joint_pair(k.joint_pair), 1);
        for j in 0..2 {
            assert_eq!(m.local_pair(j, k.local_pair[j]), 1);
            assert_eq!(m.local_trans(j, k.local_trans[j]), 1);
            assert_eq!(m.joint_trans(j, k.joint_trans[j]), 1);
            assert_eq!(m.local_visits(j, k.local_arrival[j]), 1);
        }
        m.record_transition(&s, &a, &n);
        assert_eq!(m.joint_pair(k.joint_pair), 2);
        assert_eq!(m.local_trans(1, k.local_trans[1]), 2);
    }

    #[test]
    fn ratios_and_unseen() {
        let mut m = CountModel::new(codec());
        let s = state([(0, 0), (3, 3)]);
        let a = ja([3, 4]);
        let n1 = state([(0, 1), (3, 3)]);
        let n2 = state([(0, 0), (3, 3)]);
        for _ in 0..3 {
            m.record_transition(&s, &a, &n1);
            m.record_transition(&s, &a, &n2);
        }
        assert_eq!(m.p_emp_local(&codec(), 0, &s, &a, &n1), Some(0.5));
        assert_eq!(m.p_emp_joint(&codec(), 0, &s, &a, &n2), Some(0.5));
        assert_eq!(m.p_emp_local(&codec(), 1, &s, &a, &n1), Some(1.0));
        let other = ja([0, 0]);
        assert_eq!(m.p_emp_local(&codec(), 0, &s, &other, &n1), None);
        assert_eq!(m.p_emp_joint(&codec(), 0, &s, &other, &n1), None);
    }

    #[test]
    fn curiosity_values() {
        assert_eq!(curiosity(10.0, 1), 10.0);
        assert_eq!(curiosity(10.0, 4), 5.0);
        assert!((curiosity(1.0, 100) - 0.1).abs() < 1e-15);
        assert_eq!(curiosity(10.0, 0), 10.0);
    }

    #[test]
    fn snapshot_is_isolated_from_later_writes() {
        let mut m = CountModel::new(codec());
        let empty = m.snapshot();
        let (s, a, n) = (state([(0, 0), (1, 1)]), ja([3, 1]), state([(0, 1), (2, 1)]));
        let k = TransitionKeys::new(&codec(), &s, &a, &n);
        assert_eq!(empty.p_local(&k, 0), None);
        assert_eq!(empty.p_joint(&k, 1), None);
        m.record_transition(&s, &a, &n);
        let snap = m.snapshot();
        let again = m.snapshot();
        assert!(snap.ptr_eq(&again));
        m.record_transition(&s, &a, &n);
        assert_eq!(snap.joint_pair(k.joint_pair), 1);
        assert_eq!(m.joint_pair(k.joint_pair), 2);
        assert_eq!(empty.transitions, 0);
    }

    #[test]
    fn including_adds_the_queried_transition() {
        let m = CountModel::new(codec());
        let (s, a, n) = (state([(0, 0), (1, 1)]), ja([3, 1]), state([(0, 1), (2, 1)]));
        let k = TransitionKeys::new(&codec(), &s, &a, &n);
        assert_eq!(m.p_joint_including(&k, 0), 1.0);
        assert_eq!(m.p_local_including(&k, 1), 1.0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut m = CountModel::new(codec());
        let mut d = CountDelta::new();
        let (s, a, n) = (state([(0, 0), (1, 1)]), ja([3, 1]), state([(0, 1), (2, 1)]));
        d.push(TransitionKeys::new(&codec(), &s, &a, &n), &[1.5, 2.0]);
        m.merge(&d);
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        let back = CountModel::read_from(codec(), &mut buf.as_slice()).unwrap();
        assert_eq!(back, m);
        assert!(CountModel::read_from(Codec::new(TaskId::Pass, 3), &mut buf.as_slice()).is_err());
    }

    fn random_transitions(seed: u64, n: usize) -> Vec<(JointState, JointAction, JointState)> {
        let mut env = make_task(TaskConfig::new(TaskId::Pass).with_grid(6), seed).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        while out.len() < n {
            if env.is_done() {
                env.reset(seed);
            }
            let s = env.state().clone();
            let a = ja([rng.random_range(0..5), rng.random_range(0..5)]);
            let o = env.step(&a).unwrap();
            out.push((s, a, o.next_state));
        }
        out
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn successor_counts_partition_pair_counts(seed in 0u64..1000, n in 1usize..400) {
            let mut m = CountModel::new(codec());
            for (s, a, nx) in random_transitions(seed, n) {
                m.record_transition(&s, &a, &nx);
            }
            // Σ_{s'} N(s', s, a) = N(s, a), locally and jointly
            let total_joint: u64 = m.joint.trans[0].values().sum();
            prop_assert_eq!(total_joint, m.joint.pairs.values().sum::<u64>());
            for j in 0..2 {
                let mut seen = std::collections::HashSet::new();
                let mut sums: KeyMap<f64> = KeyMap::default();
                for (s, a, nx) in random_transitions(seed, n) {
                    let k = TransitionKeys::new(&codec(), &s, &a, &nx);
                    if seen.insert(k.local_trans[j]) {
                        *sums.entry(k.local_pair[j]).or_insert(0.0) += m.p_local(&k, j).unwrap();
                    }
                    prop_assert!(m.local_trans(j, k.local_trans[j]) <= m.local_pair(j, k.local_pair[j]));
                }
                for v in sums.values() {
                    prop_assert!((v - 1.0).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn replay_order_does_not_change_counts(seed in 0u64..1000, n in 1usize..300) {
            let tr = random_transitions(seed, n);
            let mut a = CountModel::new(codec());
            for (s, ac, nx) in &tr {
                a.record_transition(s, ac, nx);
            }
            let mut b = CountModel::new(codec());
            for (s, ac, nx) in tr.iter().rev() {
                b.record_transition(s, ac, nx);
            }
            prop_assert_eq!(a, b);
        }

        #[test]
        fn counts_never_decrease(seed in 0u64..1000, n in 2usize..200) {
            let tr = random_transitions(seed, n);
            let mut m = CountModel::new(codec());
            let keys: Vec<_> = tr.iter().map(|(s, a, nx)| TransitionKeys::new(&codec(), s, a, nx)).collect();
            let mut prev = vec![0u64; keys.len()];
            for (s, a, nx) in &tr {
                m.record_transition(s, a, nx);
                for (i, k) in keys.iter().enumerate() {
                    let c = m.joint_pair(k.joint_pair);
                    prop_assert!(c >= prev[i]);
                    prev[i] = c;
                }
            }
        }

        #[test]
        fn curiosity_strictly_decreasing(eta in 0.01f64..100.0, n in 1u64..1_000_000) {
            prop_assert!(curiosity(eta, n + 1) < curiosity(eta, n));
        }
    }
}
