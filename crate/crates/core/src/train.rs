//! The training loop: collect a batch, merge counts, update every agent.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::counts::CountModel;
use crate::env::{make_task, Codec, TaskConfig};
use crate::error::Result;
use crate::heatmap::Heatmaps;
use crate::key::Key;
use crate::policy::{compute_returns_discounted, update, PolicyTable, Sample, TargetModel, UpdateConfig, UpdateStats, ValueTable};
use crate::rollout::{collect, merge_and_report, BatchReport, Behaviour, CollectConfig, Snapshots, Trajectory, WorkerOutput};
use crate::shaping::ShapingConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct AgentLearner {
    pub policy: Arc<PolicyTable>,
    /// Baseline for the shaped return.
    pub value: ValueTable,
    pub v_ext: Arc<ValueTable>,
    pub v_int: Arc<ValueTable>,
}

impl AgentLearner {
    pub fn new(n_actions: usize) -> Self {
        Self {
            policy: Arc::new(PolicyTable::new(n_actions)),
            value: ValueTable::new(),
            v_ext: Arc::new(ValueTable::new()),
            v_int: Arc::new(ValueTable::new()),
        }
    }
}

/// Everything that defines one seed's run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub task: TaskConfig,
    pub shaping: ShapingConfig,
    pub learner: UpdateConfig,
    pub envs: usize,
    pub steps_per_env: u32,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct Trainer {
    pub spec: TrainSpec,
    pub codec: Codec,
    pub counts: CountModel,
    pub targets: TargetModel,
    pub agents: Vec<AgentLearner>,
    pub update: u64,
}

impl Trainer {
    pub fn new(spec: TrainSpec) -> Result<Self> {
        spec.task.validate()?;
        spec.shaping.validate()?;
        spec.learner.validate()?;
        if spec.envs == 0 || spec.steps_per_env == 0 {
            return Err(crate::Error::Config("envs and steps_per_env must be > 0".into()));
        }
        let env = make_task(spec.task.clone(), spec.seed)?;
        let codec = env.codec();
        let n = spec.task.agents;
        Ok(Self {
            counts: CountModel::new(codec),
            targets: TargetModel::new(n),
            agents: (0..n).map(|_| AgentLearner::new(spec.task.n_actions())).collect(),
            codec,
            spec,
            update: 0,
        })
    }

    pub fn snapshots(&self) -> Snapshots {
        Snapshots {
            policies: self.agents.iter().map(|a| Arc::clone(&a.policy)).collect(),
            counts: self.counts.snapshot(),
            targets: self.targets.clone(),
            values_ext: self.agents.iter().map(|a| Arc::clone(&a.v_ext)).collect(),
            values_int: self.agents.iter().map(|a| Arc::clone(&a.v_int)).collect(),
        }
    }

    fn collect_config(&self, heatmaps: bool, behaviour: Behaviour) -> CollectConfig {
        CollectConfig {
            envs: self.spec.envs,
            steps_per_env: self.spec.steps_per_env,
            seed: self.spec.seed,
            update: self.update,
            heatmaps,
            behaviour,
        }
    }

    fn refresh_targets(&mut self) {
        let snap = self.counts.snapshot();
        let ve: Vec<_> = self.agents.iter().map(|a| Arc::clone(&a.v_ext)).collect();
        let vi: Vec<_> = self.agents.iter().map(|a| Arc::clone(&a.v_int)).collect();
        self.targets.refresh(&snap, &ve, &vi);
    }

    /// One update: refresh targets when due, collect, merge, learn.
    pub fn step(&mut self) -> Result<(BatchReport, Vec<UpdateStats>)> {
        if self.update > 0 && self.update % self.spec.learner.target_period as u64 == 0 {
            self.refresh_targets();
        }
        let outputs = {
            let snaps = self.snapshots();
            collect(&self.spec.task, &self.spec.shaping, &snaps, &self.collect_config(false, Behaviour::Sample))?
        };
        let report = merge_and_report(
            &outputs,
            &mut self.counts,
            self.spec.shaping.method,
            &self.spec.task,
            self.spec.seed,
            self.update,
        );
        let stats = self.learn(&outputs)?;
        self.update += 1;
        Ok((report, stats))
    }

    fn learn(&mut self, outputs: &[WorkerOutput]) -> Result<Vec<UpdateStats>> {
        let trajectories: Vec<&Trajectory> = outputs.iter().flat_map(|o| o.trajectories.iter()).collect();
        let g = self.spec.learner.return_gamma;
        let mut stats = Vec::with_capacity(self.agents.len());
        for (i, agent) in self.agents.iter_mut().enumerate() {
            let mut batch = Vec::new();
            let mut ext_targets: Vec<(Key, f64)> = Vec::new();
            let mut int_targets: Vec<(Key, f64)> = Vec::new();
            for t in &trajectories {
                let shaped: Vec<f64> = t.steps.iter().map(|s| s.shaped.rewards[i]).collect();
                let ext: Vec<f64> = t.steps.iter().map(|s| s.extrinsic).collect();
                let int: Vec<f64> = t.steps.iter().map(|s| s.shaped.u[i]).collect();
                let ret = compute_returns_discounted(&shaped, g);
                let ret_ext = compute_returns_discounted(&ext, g);
                let ret_int = compute_returns_discounted(&int, g);
                for (k, s) in t.steps.iter().enumerate() {
                    batch.push(Sample {
                        obs: s.obs[i],
                        action: s.actions[i],
                        old_logp: s.logp[i],
                        ret: ret[k],
                        baseline: s.baseline,
                    });
                    ext_targets.push((s.baseline, ret_ext[k]));
                    int_targets.push((s.baseline, ret_int[k]));
                }
            }
            let rate = self.spec.learner.value_rate;
            let st = update(i, Arc::make_mut(&mut agent.policy), &mut agent.value, &batch, &self.spec.learner)?;
            Arc::make_mut(&mut agent.v_ext).regress(&ext_targets, rate);
            Arc::make_mut(&mut agent.v_int).regress(&int_targets, rate);
            stats.push(st);
        }
        Ok(stats)
    }

    /// Runs one batch with the current tables without learning or recording.
    pub fn evaluate(&self, envs: usize, behaviour: Behaviour, heatmaps: bool) -> Result<(BatchReport, Option<Heatmaps>)> {
        let snaps = self.snapshots();
        let mut cc = self.collect_config(heatmaps, behaviour);
        cc.envs = envs;
        let outputs = collect(&self.spec.task, &self.spec.shaping, &snaps, &cc)?;
        drop(snaps);
        let mut scratch = self.counts.clone();
        let report = merge_and_report(
            &outputs,
            &mut scratch,
            self.spec.shaping.method,
            &self.spec.task,
            self.spec.seed,
            self.update,
        );
        let mut heat: Option<Heatmaps> = None;
        for o in &outputs {
            if let Some(h) = &o.heatmaps {
                match heat.as_mut() {
                    Some(acc) => acc.merge(h),
                    None => heat = Some(h.clone()),
                }
            }
        }
        Ok((report, heat))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::TaskId;
    use crate::shaping::Method;

    fn spec(method: Method) -> TrainSpec {
        let task = TaskConfig::new(TaskId::Pass).with_grid(8).with_horizon(40);
        TrainSpec {
            shaping: ShapingConfig::for_task(TaskId::Pass, method),
            learner: UpdateConfig::default(),
            envs: 2,
            steps_per_env: task.horizon,
            seed: 1,
            task,
        }
    }

    #[test]
    fn runs_and_is_deterministic() {
        let mut a = Trainer::new(spec(Method::Edti)).unwrap();
        let mut b = Trainer::new(spec(Method::Edti)).unwrap();
        for _ in 0..12 {
            let (ra, _) = a.step().unwrap();
            let (rb, _) = b.step().unwrap();
            assert_eq!(ra, rb);
        }
        assert_eq!(a.targets.refreshes(), 1);
        assert_eq!(a.counts.total_visits(), 12 * 2 * 40);
        assert_eq!(a.agents, b.agents);
    }

    #[test]
    fn evaluation_leaves_state_untouched() {
        let mut t = Trainer::new(spec(Method::Eiti)).unwrap();
        t.step().unwrap();
        let before = t.counts.clone();
        let (r, h) = t.evaluate(3, Behaviour::Sample, true).unwrap();
        assert_eq!(r.episodes, 3);
        assert!(h.is_some());
        assert_eq!(t.counts, before);
    }
}
