//! Learning-efficiency metrics, significance testing and movement heatmaps.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{Room, Trajectory};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("run record has no episodes")]
    EmptyRecord,
    #[error("episode budget must be at least 1")]
    ZeroBudget,
    #[error("win cap must be at least 1")]
    ZeroCap,
    #[error("need at least {need} values per sample, got {got}")]
    SampleTooSmall { need: usize, got: usize },
    #[error("state ({row}, {col}) lies outside the {rows}x{cols} room")]
    RoomMismatch { row: usize, col: usize, rows: usize, cols: usize },
    #[error("episode indices must run 1, 2, ... without gaps (found {found} at position {position})")]
    NonContiguous { position: usize, found: usize },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("no runs given")]
    NoRuns,
}

/// One line of a run log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub episode: usize,
    pub steps: usize,
    pub env_r: f64,
    pub lang_r: f64,
    pub int_r: f64,
    #[serde(with = "bool_as_int")]
    pub win: bool,
}

mod bool_as_int {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(serde::de::Error::custom(format!("win flag must be 0 or 1, got {other}"))),
        }
    }
}

/// Per-episode log of one training run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunRecord {
    pub seed: u64,
    pub config_hash: String,
    pub rows: Vec<EpisodeRow>,
}

impl RunRecord {
    pub fn wins(&self) -> usize {
        self.rows.iter().filter(|r| r.win).count()
    }

    pub fn win_flags(&self) -> Vec<bool> {
        self.rows.iter().map(|r| r.win).collect()
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        for (i, row) in self.rows.iter().enumerate() {
            if row.episode != i + 1 {
                return Err(EvalError::NonContiguous { position: i, found: row.episode });
            }
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(out);
        if self.rows.is_empty() {
            w.write_record(["episode", "steps", "env_r", "lang_r", "int_r", "win"])?;
        }
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R, seed: u64, config_hash: &str) -> Result<RunRecord, EvalError> {
        let mut r = csv::Reader::from_reader(input);
        let rows = r.deserialize().collect::<Result<Vec<EpisodeRow>, _>>()?;
        let record = RunRecord { seed, config_hash: config_hash.to_string(), rows };
        record.validate()?;
        Ok(record)
    }
}

/// Normalised area under the cumulative-wins curve, `(1 / (T W)) * sum_i min(cumwins_i, W)`.
///
/// Runs shorter than `budget` (stopped at the win cap) hold their last cumulative value through
/// episode `budget`. Rows past the budget are ignored.
pub fn auc(run: &RunRecord, budget: usize, win_cap: usize) -> Result<f64, EvalError> {
    if run.rows.is_empty() {
        return Err(EvalError::EmptyRecord);
    }
    auc_from_wins(&run.win_flags(), budget, win_cap)
}

pub fn auc_from_wins(wins: &[bool], budget: usize, win_cap: usize) -> Result<f64, EvalError> {
    if budget == 0 {
        return Err(EvalError::ZeroBudget);
    }
    if win_cap == 0 {
        return Err(EvalError::ZeroCap);
    }
    let mut cumulative = 0usize;
    let mut area = 0.0;
    for i in 0..budget {
        if wins.get(i).copied().unwrap_or(false) {
            cumulative += 1;
        }
        area += cumulative.min(win_cap) as f64;
    }
    Ok(area / (budget as f64 * win_cap as f64))
}

/// Fraction of runs with at least one win.
pub fn success_rate(runs: &[RunRecord]) -> Result<f64, EvalError> {
    if runs.is_empty() {
        return Err(EvalError::NoRuns);
    }
    Ok(runs.iter().filter(|r| r.wins() > 0).count() as f64 / runs.len() as f64)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); zero for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    /// One-sided p-value for "sample a tends to be smaller than sample b".
    pub p_value: f64,
    /// Mann-Whitney U of sample a (pairs with a above b, ties counted half).
    pub u: f64,
    pub exact: bool,
    /// Every value in both samples is identical; `p_value` is then 1.
    pub degenerate: bool,
}

pub const EXACT_LIMIT: usize = 12;

/// One-sided Mann-Whitney U test of "a < b".
///
/// Exact permutation distribution of the rank sum (ties as midranks) when both samples have at
/// most 12 values, otherwise the normal approximation with tie and continuity corrections.
pub fn significance(a: &[f64], b: &[f64]) -> Result<Significance, EvalError> {
    for s in [a, b] {
        if s.len() < 3 {
            return Err(EvalError::SampleTooSmall { need: 3, got: s.len() });
        }
    }
    let (na, nb) = (a.len(), b.len());
    let n = na + nb;
    let first = a[0];
    if a.iter().chain(b).all(|x| *x == first) {
        return Ok(Significance { p_value: 1.0, u: (na * nb) as f64 / 2.0, exact: true, degenerate: true });
    }

    // doubled midranks keep everything integral
    let mut pooled: Vec<(f64, bool)> = a.iter().map(|x| (*x, true)).chain(b.iter().map(|x| (*x, false))).collect();
    pooled.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut ranks2 = vec![0usize; n];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        // positions i..=j share rank ((i+1) + (j+1)) / 2
        for r in &mut ranks2[i..=j] {
            *r = i + j + 2;
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    let observed2: usize = pooled.iter().zip(&ranks2).filter(|(p, _)| p.1).map(|(_, r)| *r).sum();
    let u = observed2 as f64 / 2.0 - (na * (na + 1)) as f64 / 2.0;

    if na <= EXACT_LIMIT && nb <= EXACT_LIMIT {
        let max_sum: usize = ranks2.iter().sum();
        // ways[k][s]: subsets of size k with doubled rank sum s
        let mut ways = vec![vec![0f64; max_sum + 1]; na + 1];
        ways[0][0] = 1.0;
        for &r in &ranks2 {
            for k in (1..=na).rev() {
                for s in (r..=max_sum).rev() {
                    let add = ways[k - 1][s - r];
                    if add != 0.0 {
                        ways[k][s] += add;
                    }
                }
            }
        }
        let total: f64 = ways[na].iter().sum();
        let below: f64 = ways[na][..=observed2].iter().sum();
        return Ok(Significance { p_value: (below / total).min(1.0), u, exact: true, degenerate: false });
    }

    let (naf, nbf, nf) = (na as f64, nb as f64, n as f64);
    let tie_term: f64 = ties.iter().map(|t| (t * t * t - t) as f64).sum::<f64>() / (nf * (nf - 1.0));
    let var = naf * nbf / 12.0 * ((nf + 1.0) - tie_term);
    let mu = naf * nbf / 2.0;
    let z = (u - mu + 0.5) / var.sqrt();
    Ok(Significance { p_value: normal_cdf(z).min(1.0), u, exact: false, degenerate: false })
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Visit counts per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub rows: usize,
    pub cols: usize,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl Heatmap {
    pub fn new(rows: usize, cols: usize) -> Heatmap {
        Heatmap { rows, cols, counts: vec![0; rows * cols], total: 0 }
    }

    pub fn at(&self, row: usize, col: usize) -> u64 {
        self.counts[row * self.cols + col]
    }

    fn visit(&mut self, row: usize, col: usize) -> Result<(), EvalError> {
        if row >= self.rows || col >= self.cols {
            return Err(EvalError::RoomMismatch { row, col, rows: self.rows, cols: self.cols });
        }
        self.counts[row * self.cols + col] += 1;
        self.total += 1;
        Ok(())
    }

    /// Adds one trajectory: its initial state once, then every `next_state`.
    pub fn add(&mut self, traj: &Trajectory) -> Result<(), EvalError> {
        if let Some(s) = traj.initial_state() {
            self.visit(s.row, s.col)?;
        }
        for t in &traj.transitions {
            self.visit(t.next_state.row, t.next_state.col)?;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Heatmap) -> Result<(), EvalError> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(EvalError::RoomMismatch { row: other.rows, col: other.cols, rows: self.rows, cols: self.cols });
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
        Ok(())
    }

    /// Visit-weighted mean Manhattan distance from `origin`.
    pub fn mean_distance_from(&self, origin: (usize, usize)) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        let mut acc = 0.0;
        for r in 0..self.rows {
            for c in 0..self.cols {
                let d = r.abs_diff(origin.0) + c.abs_diff(origin.1);
                acc += (d as u64 * self.at(r, c)) as f64;
            }
        }
        acc / self.total as f64
    }

    /// Counts as a comma separated matrix, one grid row per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for r in 0..self.rows {
            let line: Vec<String> = (0..self.cols).map(|c| self.at(r, c).to_string()).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Heatmap, EvalError> {
        let mut counts = Vec::new();
        let mut rows = 0;
        let mut cols = 0;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let row: Vec<u64> = line.split(',').map(|v| v.trim().parse().unwrap_or(0)).collect();
            cols = row.len();
            counts.extend(row);
            rows += 1;
        }
        let total = counts.iter().sum();
        Ok(Heatmap { rows, cols, counts, total })
    }

    /// Plain (P2) portable graymap, brighter means more visits, on a square-root scale.
    pub fn to_pgm(&self) -> String {
        let max = self.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
        let mut out = format!("P2\n{} {}\n255\n", self.cols, self.rows);
        for r in 0..self.rows {
            let line: Vec<String> = (0..self.cols)
                .map(|c| ((self.at(r, c) as f64 / max).sqrt() * 255.0).round().to_string())
                .collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}

pub fn heatmap<'a, I>(trajectories: I, room: &Room) -> Result<Heatmap, EvalError>
where
    I: IntoIterator<Item = &'a Trajectory>,
{
    let mut map = Heatmap::new(room.rows(), room.cols());
    for t in trajectories {
        map.add(t)?;
    }
    Ok(map)
}
