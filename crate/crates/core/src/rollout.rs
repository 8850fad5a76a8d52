//! Parallel batch collection and per-batch reporting.
//!
//! Every environment runs on its own worker against snapshots frozen at the
//! start of the batch. Workers return count deltas; the coordinator merges
//! them into the master model in environment order once the batch is done.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::counts::{joint_key, CountDelta, CountModel, CountSnapshot, TransitionKeys};
use crate::env::{make_task, Action, JointAction, JointState, Pos, TaskConfig};
use crate::error::{Error, Result};
use crate::heatmap::Heatmaps;
use crate::key::{Key, KeyBuilder};
use crate::policy::{PolicyTable, TargetModel, ValueTable};
use crate::shaping::{
    edti_term, eiti_term, immediate_rtilde, shape, Frozen, Method, Pending, ShapedStep, ShapingConfig,
    ShapingContext, Transition,
};
use crate::stats::{derive_seed, mean, mean_ci95};

/// Read-only inputs shared by all workers of one batch.
#[derive(Clone, Debug)]
pub struct Snapshots {
    pub policies: Vec<Arc<PolicyTable>>,
    pub counts: CountSnapshot,
    pub targets: TargetModel,
    pub values_ext: Vec<Arc<ValueTable>>,
    pub values_int: Vec<Arc<ValueTable>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollectConfig {
    pub envs: usize,
    pub steps_per_env: u32,
    pub seed: u64,
    pub update: u64,
    pub heatmaps: bool,
    pub behaviour: Behaviour,
}

/// How workers pick actions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Behaviour {
    /// Sample from the policy.
    #[default]
    Sample,
    /// Most probable action.
    Greedy,
    /// Uniformly random actions; terms are still scored with the learned model.
    Uniform,
}

impl std::str::FromStr for Behaviour {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sample" => Ok(Behaviour::Sample),
            "greedy" => Ok(Behaviour::Greedy),
            "uniform" => Ok(Behaviour::Uniform),
            _ => Err(Error::Config(format!("unknown behaviour `{s}` (sample, greedy, uniform)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub obs: SmallVec<[Key; 4]>,
    pub actions: SmallVec<[u8; 4]>,
    pub logp: SmallVec<[f64; 4]>,
    /// Joint-state key of `s`, used by the value baselines.
    pub baseline: Key,
    pub extrinsic: f64,
    pub shaped: ShapedStep,
    pub done: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EventCounts {
    pub successes: u32,
    pub treasures: u32,
    pub beast_caught: u32,
    pub box_moves: u32,
    pub door_passes: u32,
    pub bound_checks: u64,
    pub bound_violations: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<StepRecord>,
    pub extrinsic_return: f64,
    /// The episode reached a terminal state or the horizon inside the budget.
    pub completed: bool,
    pub events: EventCounts,
}

#[derive(Clone, Debug)]
pub struct WorkerOutput {
    pub env: usize,
    pub trajectories: Vec<Trajectory>,
    pub delta: CountDelta,
    pub heatmaps: Option<Heatmaps>,
}

fn observation_key(codec: &crate::env::Codec, s: &JointState, i: usize, b: &mut KeyBuilder) -> Key {
    b.clear();
    codec.write_observation(s, i, b);
    b.key()
}

fn run_worker(
    task: &TaskConfig,
    shaping: &ShapingConfig,
    snaps: &Snapshots,
    cc: &CollectConfig,
    env_idx: usize,
) -> Result<WorkerOutput> {
    let mut episode = 0u64;
    let ep_seed = |e: u64| derive_seed(&[cc.seed, cc.update, env_idx as u64, e, 2]);
    let mut env = make_task(task.clone(), ep_seed(0))?;
    let codec = env.codec();
    let n = task.agents;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cc.seed, cc.update, env_idx as u64, 1]));
    let pending = Pending(&snaps.counts);
    let frozen = Frozen(&snaps.targets);
    let ctx = ShapingContext {
        model: &pending,
        target_model: &frozen,
        counts: &snaps.counts,
        targets: &snaps.targets,
        values_ext: &snaps.values_ext,
        values_int: &snaps.values_int,
    };
    let mut heat = cc.heatmaps.then(|| Heatmaps::new(env.layout().rows as usize, env.layout().cols as usize, n));
    let mut delta = CountDelta::new();
    let mut trajectories = Vec::new();
    let mut current = Trajectory::default();
    let mut state = env.state().clone();
    let mut b = KeyBuilder::new();
    let mut acts: SmallVec<[Action; 4]> = SmallVec::new();

    for _ in 0..cc.steps_per_env {
        let mut obs = SmallVec::new();
        let mut logp = SmallVec::new();
        let mut codes = SmallVec::new();
        acts.clear();
        for i in 0..n {
            let k = observation_key(&codec, &state, i, &mut b);
            let pol = &snaps.policies[i];
            let (a, lp) = match cc.behaviour {
                Behaviour::Sample => pol.act(k, &mut rng),
                Behaviour::Greedy => (pol.greedy(k), 0.0),
                Behaviour::Uniform => {
                    let n_a = pol.n_actions();
                    (rng.random_range(0..n_a), -(n_a as f64).ln())
                }
            };
            obs.push(k);
            logp.push(lp);
            codes.push(a as u8);
            acts.push(Action::from_index(a));
        }
        let ja = JointAction(acts.clone());
        let out = env.step(&ja)?;
        let keys = TransitionKeys::new(&codec, &state, &ja, &out.next_state);
        let t = Transition {
            s: &state,
            a: &ja,
            next: &out.next_state,
            keys: &keys,
        };
        let shaped = shape(shaping, &ctx, &t, out.extrinsic_reward);
        if let Some(h) = heat.as_mut() {
            let eiti: SmallVec<[f64; 4]> = (0..n).map(|j| eiti_term(ctx.model, &t, j)).collect();
            let edti: SmallVec<[f64; 4]> = (0..n).map(|j| edti_term(shaping, &ctx, &t, j, shaped.u[j])).collect();
            let from: SmallVec<[Pos; 4]> = state.agents.iter().map(|a| a.pos).collect();
            let to: SmallVec<[Pos; 4]> = out.next_state.agents.iter().map(|a| a.pos).collect();
            h.record(&from, &to, &eiti, &edti);
        }
        delta.push(keys, &immediate_rtilde(out.extrinsic_reward, &shaped));
        let ev = &mut current.events;
        ev.bound_checks += shaped.bound_checks as u64;
        ev.bound_violations += shaped.bound_violations as u64;
        ev.successes += out.info.success as u32;
        ev.treasures += out.info.treasures_found as u32;
        ev.beast_caught += out.info.beast_caught as u32;
        ev.box_moves += out.info.box_moved as u32;
        ev.door_passes += out.info.door_passed as u32;
        current.extrinsic_return += out.extrinsic_reward;
        current.steps.push(StepRecord {
            obs,
            actions: codes,
            logp,
            baseline: joint_key(&codec, &state),
            extrinsic: out.extrinsic_reward,
            shaped,
            done: out.done,
        });
        if out.done {
            current.completed = true;
            trajectories.push(std::mem::take(&mut current));
            episode += 1;
            state = env.reset(ep_seed(episode)).clone();
        } else {
            state = out.next_state;
        }
    }
    if !current.steps.is_empty() {
        trajectories.push(current);
    }
    Ok(WorkerOutput {
        env: env_idx,
        trajectories,
        delta,
        heatmaps: heat,
    })
}

/// Runs `cc.envs` environments for `cc.steps_per_env` steps each.
pub fn collect(
    task: &TaskConfig,
    shaping: &ShapingConfig,
    snaps: &Snapshots,
    cc: &CollectConfig,
) -> Result<Vec<WorkerOutput>> {
    if snaps.policies.len() != task.agents {
        return Err(Error::Config(format!(
            "{} policies for {} agents",
            snaps.policies.len(),
            task.agents
        )));
    }
    let results: Vec<Result<WorkerOutput>> = (0..cc.envs)
        .into_par_iter()
        .map(|e| {
            catch_unwind(AssertUnwindSafe(|| run_worker(task, shaping, snaps, cc, e))).unwrap_or_else(|p| {
                let message = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panic".into());
                Err(Error::Worker { worker: e, message })
            })
        })
        .collect();
    results.into_iter().collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub update: u64,
    pub method: String,
    pub task: String,
    pub seed: u64,
    pub episodes: usize,
    pub transitions: u64,
    pub mean_return: f64,
    pub ci95: f64,
    pub success_rate: f64,
    pub mean_u: f64,
    pub mean_influence_term: f64,
    pub beast_catch_rate: f64,
    pub treasures_per_ep: f64,
    pub distinct_states: usize,
    pub bound_checks: u64,
    pub bound_violations: u64,
    pub pair_terms_min: usize,
    pub pair_terms_max: usize,
}

/// Merges all deltas into `counts` once and summarises the batch. Episode
/// statistics use completed episodes; a batch without any falls back to the
/// truncated ones.
pub fn merge_and_report(
    outputs: &[WorkerOutput],
    counts: &mut CountModel,
    method: Method,
    task: &TaskConfig,
    seed: u64,
    update: u64,
) -> BatchReport {
    for o in outputs {
        counts.merge(&o.delta);
    }
    let all: Vec<&Trajectory> = outputs.iter().flat_map(|o| o.trajectories.iter()).collect();
    let done: Vec<&Trajectory> = all.iter().copied().filter(|t| t.completed).collect();
    let episodes = if done.is_empty() { all.clone() } else { done };
    let returns: Vec<f64> = episodes.iter().map(|t| t.extrinsic_return).collect();
    let (mean_return, ci95) = mean_ci95(&returns);
    let ep = episodes.len().max(1) as f64;

    let mut u = Vec::new();
    let mut infl = Vec::new();
    let (mut pmin, mut pmax) = (usize::MAX, 0usize);
    let mut transitions = 0u64;
    let (mut checks, mut viol) = (0u64, 0u64);
    for t in &all {
        transitions += t.steps.len() as u64;
        checks += t.events.bound_checks;
        viol += t.events.bound_violations;
        for s in &t.steps {
            u.push(mean(&s.shaped.u));
            let c = &s.shaped.components;
            infl.push(c.iter().map(|c| c.influence).sum::<f64>() / c.len() as f64);
            for c in c {
                pmin = pmin.min(c.pair_terms);
                pmax = pmax.max(c.pair_terms);
            }
        }
    }
    BatchReport {
        update,
        method: method.name().into(),
        task: task.task.name().into(),
        seed,
        episodes: episodes.len(),
        transitions,
        mean_return,
        ci95,
        success_rate: episodes.iter().filter(|t| t.events.successes > 0).count() as f64 / ep,
        mean_u: mean(&u),
        mean_influence_term: mean(&infl),
        beast_catch_rate: episodes.iter().filter(|t| t.events.beast_caught > 0).count() as f64 / ep,
        treasures_per_ep: episodes.iter().map(|t| t.events.treasures as f64).sum::<f64>() / ep,
        distinct_states: counts.distinct_states(),
        bound_checks: checks,
        bound_violations: viol,
        pair_terms_min: if pmin == usize::MAX { 0 } else { pmin },
        pair_terms_max: pmax,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::TaskId;

    fn snaps(task: &TaskConfig) -> Snapshots {
        let n = task.agents;
        Snapshots {
            policies: vec![Arc::new(PolicyTable::new(task.n_actions())); n],
            counts: CountSnapshot::empty(n),
            targets: TargetModel::new(n),
            values_ext: vec![Arc::new(ValueTable::new()); n],
            values_int: vec![Arc::new(ValueTable::new()); n],
        }
    }

    fn cc(envs: usize, steps: u32) -> CollectConfig {
        CollectConfig {
            envs,
            steps_per_env: steps,
            seed: 3,
            update: 0,
            heatmaps: false,
            behaviour: Behaviour::Sample,
        }
    }

    #[test]
    fn batch_size_is_bounded_by_budget() {
        let task = TaskConfig::new(TaskId::Pass).with_grid(8).with_horizon(40);
        let sh = ShapingConfig::for_task(TaskId::Pass, Method::Eiti);
        let out = collect(&task, &sh, &snaps(&task), &cc(4, 100)).unwrap();
        let steps: usize = out.iter().flat_map(|o| &o.trajectories).map(|t| t.steps.len()).sum();
        assert_eq!(steps, 400);
        for o in &out {
            assert_eq!(o.delta.len(), 100);
            assert!(o.trajectories.iter().all(|t| t.steps.len() <= 40));
        }
    }

    #[test]
    fn deterministic_given_seed_and_snapshots() {
        let task = TaskConfig::new(TaskId::Island);
        let sh = ShapingConfig::for_task(TaskId::Island, Method::Edti);
        let s = snaps(&task);
        let a = collect(&task, &sh, &s, &cc(3, 120)).unwrap();
        let b = collect(&task, &sh, &s, &cc(3, 120)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.trajectories, y.trajectories);
        }
    }

    #[test]
    fn merged_counts_match_sequential_recording() {
        let task = TaskConfig::new(TaskId::Pass).with_grid(8).with_horizon(30);
        let sh = ShapingConfig::for_task(TaskId::Pass, Method::Dec);
        let out = collect(&task, &sh, &snaps(&task), &cc(3, 50)).unwrap();
        let env = make_task(task.clone(), 0).unwrap();
        let mut merged = CountModel::new(env.codec());
        let report = merge_and_report(&out, &mut merged, Method::Dec, &task, 3, 0);
        assert_eq!(report.transitions, 150);
        assert_eq!(merged.total_visits(), 150);
        let mut seq = CountModel::new(env.codec());
        for o in out.iter().rev() {
            for (k, r) in o.delta.iter() {
                seq.record_keys(k, Some(r));
            }
        }
        assert_eq!(seq.joint, merged.joint);
        for j in 0..2 {
            assert_eq!(seq.local[j].trans, merged.local[j].trans);
            assert_eq!(seq.local[j].pairs, merged.local[j].pairs);
        }
    }

    #[test]
    fn identical_transitions_get_identical_terms_within_a_batch() {
        let task = TaskConfig::new(TaskId::Pass).with_grid(6).with_horizon(50);
        let sh = ShapingConfig::for_task(TaskId::Pass, Method::Eiti);
        let out = collect(&task, &sh, &snaps(&task), &cc(4, 200)).unwrap();
        let mut seen: std::collections::HashMap<(Key, Key, Key), SmallVec<[f64; 4]>> = Default::default();
        for o in &out {
            for ((keys, _), step) in o.delta.iter().zip(o.trajectories.iter().flat_map(|t| &t.steps)) {
                let k = (keys.joint_pair, keys.joint_trans[0], keys.joint_trans[1]);
                let v = step.shaped.pair_values.clone();
                if let Some(prev) = seen.get(&k) {
                    assert_eq!(prev, &v);
                } else {
                    seen.insert(k, v);
                }
            }
        }
    }

    #[test]
    fn report_of_zero_returns() {
        let task = TaskConfig::new(TaskId::Pass).with_grid(12).with_horizon(20);
        let sh = ShapingConfig::for_task(TaskId::Pass, Method::Random);
        let out = collect(&task, &sh, &snaps(&task), &cc(4, 20)).unwrap();
        let env = make_task(task.clone(), 0).unwrap();
        let mut m = CountModel::new(env.codec());
        let r = merge_and_report(&out, &mut m, Method::Random, &task, 0, 0);
        assert_eq!((r.mean_return, r.ci95), (0.0, 0.0));
        assert_eq!(r.episodes, 4);
        assert_eq!(r.beast_catch_rate, 0.0);
    }

    #[test]
    fn wrong_policy_count_is_rejected() {
        let task = TaskConfig::new(TaskId::Pass).with_grid(8);
        let sh = ShapingConfig::for_task(TaskId::Pass, Method::Random);
        let mut s = snaps(&task);
        s.policies.pop();
        assert!(collect(&task, &sh, &s, &cc(1, 5)).is_err());
    }
}
