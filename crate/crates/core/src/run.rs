//! Run artifacts: per-seed metrics and checkpoints, the aggregate curve,
//! evaluation and heatmap export from checkpoints.
//!
//! Layout under the output directory:
//! ```text
//! config.json
//! aggregate.csv
//! seed_<s>/metrics.csv
//! seed_<s>/metrics.jsonl
//! seed_<s>/checkpoint.bin
//! ```

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::heatmap::Heatmaps;
use crate::rollout::{BatchReport, Behaviour};
use crate::stats::{mean, mean_ci95};
use crate::train::Trainer;

pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_JSONL: &str = "metrics.jsonl";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const AGGREGATE_CSV: &str = "aggregate.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub update: u64,
    pub method: String,
    pub task: String,
    pub seed: u64,
    pub mean_return: f64,
    pub ci95: f64,
    pub mean_u: f64,
    pub mean_influence_term: f64,
    pub beast_catch_rate: f64,
    pub treasures_per_ep: f64,
    pub distinct_states: usize,
}

impl From<&BatchReport> for MetricsRow {
    fn from(r: &BatchReport) -> Self {
        Self {
            update: r.update,
            method: r.method.clone(),
            task: r.task.clone(),
            seed: r.seed,
            mean_return: r.mean_return,
            ci95: r.ci95,
            mean_u: r.mean_u,
            mean_influence_term: r.mean_influence_term,
            beast_catch_rate: r.beast_catch_rate,
            treasures_per_ep: r.treasures_per_ep,
            distinct_states: r.distinct_states,
        }
    }
}

/// One update of the across-seed learning curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub update: u64,
    pub method: String,
    pub task: String,
    pub seeds: usize,
    pub mean_return: f64,
    pub ci95: f64,
    pub mean_u: f64,
    pub mean_influence_term: f64,
    pub beast_catch_rate: f64,
    pub treasures_per_ep: f64,
    pub distinct_states: f64,
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

#[derive(Clone, Debug)]
pub struct SeedResult {
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
    pub bound_checks: u64,
    pub bound_violations: u64,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub seeds: Vec<SeedResult>,
    pub aggregate: Vec<AggregateRow>,
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Keeps the first `n` lines of a JSON-lines file.
fn truncate_lines(path: &Path, n: usize) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let text = std::fs::read_to_string(path)?;
    let kept: String = text.lines().take(n).map(|l| format!("{l}\n")).collect();
    std::fs::write(path, kept)?;
    Ok(())
}

/// Trains one seed to `cfg.updates`, resuming from its checkpoint when asked.
pub fn train_seed(cfg: &RunConfig, seed: u64, resume: bool) -> Result<SeedResult> {
    let dir = seed_dir(&cfg.output_dir, seed);
    std::fs::create_dir_all(&dir)?;
    let csv_path = dir.join(METRICS_CSV);
    let jsonl_path = dir.join(METRICS_JSONL);
    let ckpt_path = dir.join(CHECKPOINT);
    let spec = cfg.spec(seed);

    let (mut trainer, mut rows) = if resume && ckpt_path.exists() {
        let t = checkpoint::load(&ckpt_path)?;
        if t.spec != spec {
            return Err(Error::Config(format!(
                "checkpoint {} was written by a different configuration",
                ckpt_path.display()
            )));
        }
        let mut rows = if csv_path.exists() { read_metrics(&csv_path)? } else { Vec::new() };
        rows.retain(|r| r.update < t.update);
        if rows.len() as u64 != t.update {
            return Err(Error::Checkpoint(format!(
                "{} has {} rows before update {}",
                csv_path.display(),
                rows.len(),
                t.update
            )));
        }
        truncate_lines(&jsonl_path, rows.len())?;
        (t, rows)
    } else {
        let _ = std::fs::remove_file(&jsonl_path);
        (Trainer::new(spec)?, Vec::new())
    };

    write_metrics(&csv_path, &rows)?;
    let mut csv_out = csv::WriterBuilder::new()
        .has_headers(rows.is_empty())
        .from_writer(OpenOptions::new().append(true).open(&csv_path)?);
    let mut jsonl = BufWriter::new(OpenOptions::new().create(true).append(true).open(&jsonl_path)?);

    let mut checks = 0;
    let mut violations = 0;
    while trainer.update < cfg.updates {
        let (report, _) = trainer.step()?;
        checks += report.bound_checks;
        violations += report.bound_violations;
        let row = MetricsRow::from(&report);
        csv_out.serialize(&row)?;
        serde_json::to_writer(&mut jsonl, &report)?;
        jsonl.write_all(b"\n")?;
        if trainer.update % 50 == 0 {
            log::info!(
                "seed {seed} update {}/{}: return {:.1} states {}",
                trainer.update,
                cfg.updates,
                report.mean_return,
                report.distinct_states
            );
        }
        rows.push(row);
        if cfg.checkpoint_every > 0 && trainer.update % cfg.checkpoint_every == 0 {
            csv_out.flush()?;
            jsonl.flush()?;
            checkpoint::save(&trainer, &ckpt_path)?;
        }
    }
    csv_out.flush()?;
    jsonl.flush()?;
    checkpoint::save(&trainer, &ckpt_path)?;
    Ok(SeedResult {
        seed,
        rows,
        bound_checks: checks,
        bound_violations: violations,
    })
}

/// Trains every seed, then writes the aggregate computed from the per-seed CSVs.
pub fn train(cfg: &RunConfig, resume: bool) -> Result<RunSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", cfg.output_dir.display())))?;
    std::fs::write(cfg.output_dir.join("config.json"), cfg.to_json()?)?;
    let seeds: Vec<SeedResult> = if cfg.parallel_seeds {
        cfg.seeds.par_iter().map(|s| train_seed(cfg, *s, resume)).collect::<Result<_>>()?
    } else {
        cfg.seeds.iter().map(|s| train_seed(cfg, *s, resume)).collect::<Result<_>>()?
    };
    let paths: Vec<PathBuf> = cfg.seeds.iter().map(|s| seed_dir(&cfg.output_dir, *s).join(METRICS_CSV)).collect();
    let aggregate = aggregate_files(&paths)?;
    write_aggregate(&cfg.output_dir.join(AGGREGATE_CSV), &aggregate)?;
    Ok(RunSummary { seeds, aggregate })
}

pub fn aggregate_files(paths: &[PathBuf]) -> Result<Vec<AggregateRow>> {
    let per_seed = paths.iter().map(|p| read_metrics(p)).collect::<Result<Vec<_>>>()?;
    Ok(aggregate(&per_seed))
}

/// Mean and 95% CI across seeds of each update's per-seed values.
pub fn aggregate(per_seed: &[Vec<MetricsRow>]) -> Vec<AggregateRow> {
    let mut by_update: BTreeMap<u64, Vec<&MetricsRow>> = BTreeMap::new();
    for rows in per_seed {
        for r in rows {
            by_update.entry(r.update).or_default().push(r);
        }
    }
    by_update
        .into_iter()
        .map(|(update, rows)| {
            let col = |f: fn(&MetricsRow) -> f64| rows.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let (m, ci) = mean_ci95(&col(|r| r.mean_return));
            AggregateRow {
                update,
                method: rows[0].method.clone(),
                task: rows[0].task.clone(),
                seeds: rows.len(),
                mean_return: m,
                ci95: ci,
                mean_u: mean(&col(|r| r.mean_u)),
                mean_influence_term: mean(&col(|r| r.mean_influence_term)),
                beast_catch_rate: mean(&col(|r| r.beast_catch_rate)),
                treasures_per_ep: mean(&col(|r| r.treasures_per_ep)),
                distinct_states: mean(&col(|r| r.distinct_states as f64)),
            }
        })
        .collect()
}

pub fn write_aggregate(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_aggregate(path: &Path) -> Result<Vec<AggregateRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Evaluates a checkpoint on `envs` fresh episodes without learning.
pub fn evaluate(ckpt: &Path, envs: usize, behaviour: Behaviour) -> Result<BatchReport> {
    let t = checkpoint::load(ckpt)?;
    Ok(t.evaluate(envs, behaviour, false)?.0)
}

/// Runs one heatmap batch from a checkpoint and writes the per-agent grids.
/// With [`Behaviour::Uniform`] the map covers cells the trained policy no
/// longer visits.
pub fn export_heatmaps(ckpt: &Path, envs: usize, behaviour: Behaviour, out: &Path) -> Result<(Heatmaps, Vec<PathBuf>)> {
    let t = checkpoint::load(ckpt)?;
    let (_, heat) = t.evaluate(envs, behaviour, true)?;
    let heat = heat.ok_or_else(|| Error::Config("heatmaps need a grid task".into()))?;
    let files = heat.write_dir(out)?;
    Ok((heat, files))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::TaskId;
    use crate::shaping::Method;

    fn cfg(dir: &Path) -> RunConfig {
        let mut c = RunConfig::defaults(TaskId::Pass, Method::Eiti);
        c.task = c.task.with_grid(6).with_horizon(20);
        c.seeds = vec![1, 2];
        c.updates = 6;
        c.envs = 2;
        c.checkpoint_every = 3;
        c.output_dir = dir.to_path_buf();
        c
    }

    #[test]
    fn aggregate_is_recomputable_from_seed_files() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg(dir.path());
        let summary = train(&c, false).unwrap();
        assert_eq!(summary.aggregate.len(), 6);
        let on_disk = read_aggregate(&dir.path().join(AGGREGATE_CSV)).unwrap();
        assert_eq!(on_disk, summary.aggregate);
        let rows: Vec<_> = c.seeds.iter().map(|s| read_metrics(&seed_dir(dir.path(), *s).join(METRICS_CSV)).unwrap()).collect();
        assert_eq!(aggregate(&rows), on_disk);
        let lines = std::fs::read_to_string(seed_dir(dir.path(), 1).join(METRICS_JSONL)).unwrap();
        assert_eq!(lines.lines().count(), 6);
    }

    #[test]
    fn resumed_run_matches_straight_run() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        train(&cfg(a.path()), false).unwrap();
        let mut short = cfg(b.path());
        short.updates = 4;
        train(&short, false).unwrap();
        train(&cfg(b.path()), true).unwrap();
        for f in [METRICS_CSV, METRICS_JSONL] {
            let x = std::fs::read(seed_dir(a.path(), 2).join(f)).unwrap();
            let y = std::fs::read(seed_dir(b.path(), 2).join(f)).unwrap();
            assert_eq!(x, y, "{f}");
        }
    }

    #[test]
    fn heatmaps_match_grid() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg(dir.path());
        train(&c, false).unwrap();
        let (h, files) = export_heatmaps(&seed_dir(dir.path(), 1).join(CHECKPOINT), 2, Behaviour::Uniform, &dir.path().join("heat")).unwrap();
        assert_eq!((h.rows, h.cols), (6, 6));
        assert_eq!(files.len(), 8);
        assert!(export_heatmaps(&dir.path().join("missing.bin"), 2, Behaviour::Sample, dir.path()).is_err());
    }
}
