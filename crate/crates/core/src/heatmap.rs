//! Per-cell averages of the EITI and EDTI terms.
//!
//! For agent `i` two grids are kept per term:
//! * `source`: indexed by agent `i`'s own cell, averaging `Σ_{j≠i} term_j`
//!   (where an agent stands when it influences the others);
//! * `target`: indexed by agent `i`'s arrival cell, averaging `term_i` over
//!   the steps on which `i` actually moved (where an agent is influenced).

use std::io::Write;

use serde::Serialize;

use crate::env::Pos;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
    pub sum: Vec<f64>,
    pub count: Vec<u64>,
}

impl Grid {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            sum: vec![0.0; rows * cols],
            count: vec![0; rows * cols],
        }
    }

    pub fn add(&mut self, p: Pos, v: f64) {
        let i = p.row as usize * self.cols + p.col as usize;
        self.sum[i] += v;
        self.count[i] += 1;
    }

    pub fn merge(&mut self, other: &Grid) {
        for i in 0..self.sum.len() {
            self.sum[i] += other.sum[i];
            self.count[i] += other.count[i];
        }
    }

    /// Mean at `p`, `None` if never visited.
    pub fn mean(&self, p: Pos) -> Option<f64> {
        let i = p.row as usize * self.cols + p.col as usize;
        (self.count[i] > 0).then(|| self.sum[i] / self.count[i] as f64)
    }

    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        for r in 0..self.rows {
            let row: Vec<String> = (0..self.cols)
                .map(|c| match self.mean(Pos::new(r as u8, c as u8)) {
                    Some(v) => format!("{v}"),
                    None => String::new(),
                })
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Term {
    Eiti,
    Edti,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum View {
    Source,
    Target,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Heatmaps {
    pub rows: usize,
    pub cols: usize,
    grids: Vec<[Grid; 4]>,
}

fn slot(term: Term, view: View) -> usize {
    match (term, view) {
        (Term::Eiti, View::Source) => 0,
        (Term::Eiti, View::Target) => 1,
        (Term::Edti, View::Source) => 2,
        (Term::Edti, View::Target) => 3,
    }
}

impl Heatmaps {
    pub fn new(rows: usize, cols: usize, agents: usize) -> Self {
        let g = || Grid::new(rows, cols);
        Self {
            rows,
            cols,
            grids: (0..agents).map(|_| [g(), g(), g(), g()]).collect(),
        }
    }

    pub fn agents(&self) -> usize {
        self.grids.len()
    }

    pub fn grid(&self, agent: usize, term: Term, view: View) -> &Grid {
        &self.grids[agent][slot(term, view)]
    }

    /// Adds one transition: `from`/`to` are all agents' cells before and
    /// after the step, `eiti`/`edti` the per-influenced-agent terms.
    pub fn record(&mut self, from: &[Pos], to: &[Pos], eiti: &[f64], edti: &[f64]) {
        let n = from.len();
        let total_e: f64 = eiti.iter().sum();
        let total_d: f64 = edti.iter().sum();
        for i in 0..n {
            let g = &mut self.grids[i];
            g[0].add(from[i], total_e - eiti[i]);
            g[2].add(from[i], total_d - edti[i]);
            if from[i] != to[i] {
                g[1].add(to[i], eiti[i]);
                g[3].add(to[i], edti[i]);
            }
        }
    }

    pub fn merge(&mut self, other: &Heatmaps) {
        for (a, b) in self.grids.iter_mut().zip(&other.grids) {
            for k in 0..4 {
                a[k].merge(&b[k]);
            }
        }
    }

    /// Sum and sample count of a term over the given cells, across agents.
    pub fn pooled(&self, term: Term, view: View, cells: &[Pos]) -> (f64, u64) {
        let mut sum = 0.0;
        let mut count = 0u64;
        for g in &self.grids {
            let grid = &g[slot(term, view)];
            for p in cells {
                let i = p.row as usize * grid.cols + p.col as usize;
                sum += grid.sum[i];
                count += grid.count[i];
            }
        }
        (sum, count)
    }

    /// Mean of a term over the given cells, pooling samples across agents.
    pub fn pooled_mean(&self, term: Term, view: View, cells: &[Pos]) -> Option<f64> {
        let (sum, count) = self.pooled(term, view, cells);
        (count > 0).then(|| sum / count as f64)
    }

    /// Writes `{term}_{view}_agent{i}.csv` files into `dir`.
    pub fn write_dir(&self, dir: &std::path::Path) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut out = Vec::new();
        for i in 0..self.agents() {
            for (term, tn) in [(Term::Eiti, "eiti"), (Term::Edti, "edti")] {
                for (view, vn) in [(View::Source, "source"), (View::Target, "target")] {
                    let path = dir.join(format!("{tn}_{vn}_agent{i}.csv"));
                    let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
                    self.grid(i, term, view).write_csv(&mut f)?;
                    f.flush()?;
                    out.push(path);
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn source_gets_others_terms_target_gets_own() {
        let mut h = Heatmaps::new(3, 3, 2);
        let from = [Pos::new(0, 0), Pos::new(1, 1)];
        let to = [Pos::new(0, 0), Pos::new(1, 2)];
        h.record(&from, &to, &[0.5, 2.0], &[1.0, 3.0]);
        assert_eq!(h.grid(0, Term::Eiti, View::Source).mean(from[0]), Some(2.0));
        assert_eq!(h.grid(1, Term::Eiti, View::Source).mean(from[1]), Some(0.5));
        assert_eq!(h.grid(1, Term::Edti, View::Target).mean(to[1]), Some(3.0));
        // agent 0 did not move
        assert_eq!(h.grid(0, Term::Edti, View::Target).mean(to[0]), None);
        let mut csv = Vec::new();
        h.grid(0, Term::Eiti, View::Source).write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("2,,"));
    }
}
