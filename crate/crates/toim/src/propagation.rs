//! Indirect-influence diffusion.
//!
//! Builds topic-conditioned influence vectors and adjacency from the
//! trained tie strengths, applies conservative (mass-preserving) or
//! non-conservative propagation, and refines the direct agree strengths
//! so users reachable only through intermediaries gain influence edges.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::ToimError;
use crate::influence::{TieStrength, TrainedModel};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropagationMode {
    Conservative,
    Nonconservative,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PropagationConfig {
    pub mode: PropagationMode,
    pub decay_beta: f64,
    pub steps: usize,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        PropagationConfig {
            mode: PropagationMode::Conservative,
            decay_beta: 0.5,
            steps: 1,
        }
    }
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay_beta > 0.0 && self.decay_beta < 1.0) {
            return Err(ToimError::InvalidConfig(
                "decay_beta must be in (0, 1)".into(),
            ));
        }
        if self.steps == 0 {
            return Err(ToimError::InvalidConfig("steps must be >= 1".into()));
        }
        Ok(())
    }
}

/// Sparse non-negative square matrix stored by row.
#[derive(Debug, Clone, PartialEq)]
pub struct RowMatrix {
    pub n: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl RowMatrix {
    pub fn zeros(n: usize) -> RowMatrix {
        RowMatrix {
            n,
            rows: vec![Vec::new(); n],
        }
    }

    pub fn from_dense(dense: &[Vec<f64>]) -> Result<RowMatrix> {
        let n = dense.len();
        let mut rows = Vec::with_capacity(n);
        for (i, row) in dense.iter().enumerate() {
            if row.len() != n {
                return Err(ToimError::BadAdjacencyRow(i));
            }
            let mut sparse = Vec::new();
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() || v < 0.0 {
                    return Err(ToimError::BadAdjacencyRow(i));
                }
                if v != 0.0 {
                    sparse.push((j, v));
                }
            }
            rows.push(sparse);
        }
        Ok(RowMatrix { n, rows })
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        if let Some(slot) = self.rows[i].iter_mut().find(|(jj, _)| *jj == j) {
            slot.1 = v;
        } else if v != 0.0 {
            self.rows[i].push((j, v));
            self.rows[i].sort_unstable_by_key(|(jj, _)| *jj);
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .iter()
            .find(|(jj, _)| *jj == j)
            .map_or(0.0, |(_, v)| *v)
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    /// Row vector of row `i` as a dense length-n vector.
    pub fn dense_row(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for &(j, v) in &self.rows[i] {
            out[j] = v;
        }
        out
    }

    /// Row-stochastic copy: nonzero rows divided by their sum, zero rows
    /// repaired with a self-loop. Negative or non-finite entries are
    /// rejected.
    pub fn row_normalized(&self) -> Result<RowMatrix> {
        let mut rows = Vec::with_capacity(self.n);
        for (i, row) in self.rows.iter().enumerate() {
            let sum: f64 = row.iter().map(|(_, v)| v).sum();
            if !sum.is_finite() || row.iter().any(|(_, v)| *v < 0.0) {
                return Err(ToimError::BadAdjacencyRow(i));
            }
            if sum == 0.0 {
                rows.push(vec![(i, 1.0)]);
            } else {
                rows.push(row.iter().map(|&(j, v)| (j, v / sum)).collect());
            }
        }
        Ok(RowMatrix { n: self.n, rows })
    }

    /// Left product v · M for a row vector v.
    pub fn left_mul(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (i, &x) in v.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for &(j, w) in &self.rows[i] {
                out[j] += x * w;
            }
        }
        out
    }
}

/// Topic-conditioned influence state: the per-user total outgoing agree
/// strength S and the adjacency TM with TM[i][j] = s_agree from i to j.
#[derive(Debug, Clone)]
pub struct PropagationField {
    pub topic: usize,
    pub s: Vec<f64>,
    pub tm: RowMatrix,
}

impl PropagationField {
    pub fn build(model: &TrainedModel, topic: usize, n_users: usize) -> PropagationField {
        let tm = direct_agree_matrix(&model.strengths, topic, n_users);
        let s = (0..n_users)
            .map(|i| tm.row(i).iter().map(|(_, v)| v).sum())
            .collect();
        PropagationField { topic, s, tm }
    }
}

/// Direct agree-strength adjacency for one topic: entry (i, j) is
/// neighbor i's normalized share of j's agreements.
pub fn direct_agree_matrix(
    strengths: &BTreeMap<(usize, usize), TieStrength>,
    topic: usize,
    n_users: usize,
) -> RowMatrix {
    let mut tm = RowMatrix::zeros(n_users);
    for ((j, k), ts) in strengths {
        if *k != topic {
            continue;
        }
        for (&i, &w) in ts.neighbors.iter().zip(&ts.s_agree) {
            tm.set(i, *j, w);
        }
    }
    tm
}

/// Same adjacency for the disagree side.
pub fn direct_disagree_matrix(
    strengths: &BTreeMap<(usize, usize), TieStrength>,
    topic: usize,
    n_users: usize,
) -> RowMatrix {
    let mut tm = RowMatrix::zeros(n_users);
    for ((j, k), ts) in strengths {
        if *k != topic {
            continue;
        }
        for (&i, &w) in ts.neighbors.iter().zip(&ts.s_disagree) {
            tm.set(i, *j, w);
        }
    }
    tm
}

/// Total outgoing agree strength per user: S[i] = Σ_{j≠i} s_agree[i][j].
pub fn influence_strength(
    strengths: &BTreeMap<(usize, usize), TieStrength>,
    topic: usize,
    n_users: usize,
) -> Vec<f64> {
    let tm = direct_agree_matrix(strengths, topic, n_users);
    (0..n_users)
        .map(|i| {
            tm.row(i)
                .iter()
                .filter(|(j, _)| *j != i)
                .map(|(_, v)| v)
                .sum()
        })
        .collect()
}

/// Mass-preserving diffusion:
/// F_t = (1−β)·Σ_{i=0}^{t−1} β^i·(ΔS·TM^i) + β^t·(ΔS·TM^t).
/// TM is row-normalized (zero rows get a self-loop) before use, so
/// ‖F_t‖₁ = ‖ΔS‖₁.
pub fn conservative_propagate(
    delta_s: &[f64],
    tm: &RowMatrix,
    decay_beta: f64,
    t: usize,
) -> Result<Vec<f64>> {
    if t == 0 {
        return Err(ToimError::InvalidConfig("steps must be >= 1".into()));
    }
    let tm = tm.row_normalized()?;
    let mut acc = vec![0.0; tm.n];
    let mut power = delta_s.to_vec(); // ΔS·TM^i
    let mut beta_i = 1.0;
    for _ in 0..t {
        for (a, p) in acc.iter_mut().zip(&power) {
            *a += (1.0 - decay_beta) * beta_i * p;
        }
        power = tm.left_mul(&power);
        beta_i *= decay_beta;
    }
    for (a, p) in acc.iter_mut().zip(&power) {
        *a += beta_i * p;
    }
    Ok(acc)
}

/// Mass-amplifying diffusion: F_t = Σ_{i=0}^{t} β^i·(ΔS·TM^i).
/// TM is used as-is (no normalization).
pub fn nonconservative_propagate(
    delta_s: &[f64],
    tm: &RowMatrix,
    decay_beta: f64,
    t: usize,
) -> Vec<f64> {
    let mut acc = vec![0.0; tm.n];
    let mut power = delta_s.to_vec();
    let mut beta_i = 1.0;
    for step in 0..=t {
        for (a, p) in acc.iter_mut().zip(&power) {
            *a += beta_i * p;
        }
        if step < t {
            power = tm.left_mul(&power);
            beta_i *= decay_beta;
        }
    }
    acc
}

pub fn propagate(
    delta_s: &[f64],
    tm: &RowMatrix,
    config: &PropagationConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    match config.mode {
        PropagationMode::Conservative => {
            conservative_propagate(delta_s, tm, config.decay_beta, config.steps)
        }
        PropagationMode::Nonconservative => Ok(nonconservative_propagate(
            delta_s,
            tm,
            config.decay_beta,
            config.steps,
        )),
    }
}

/// Refined influence parameters for one topic.
#[derive(Debug, Clone)]
pub struct RefinedParams {
    pub topic: usize,
    /// Refined agree-strength adjacency (source rows, not renormalized).
    pub refined: RowMatrix,
    /// Per replier j: tie strengths over the refined neighborhood.
    pub strengths: BTreeMap<usize, TieStrength>,
    /// (source, target) -> refined (ω_agree, ω_disagree).
    pub omega: BTreeMap<(usize, usize), (f64, f64)>,
}

/// Propagate each user's direct agree row through the field, replacing
/// direct strengths with the diffused weights. Users reachable only
/// through intermediaries gain edges; per-target strengths are then
/// renormalized, and ω is refreshed from the refined agree weight
/// against the direct disagree weight so ω_agree + ω_disagree = 1.
pub fn refine_ledger(
    model: &TrainedModel,
    topic: usize,
    n_users: usize,
    config: &PropagationConfig,
) -> Result<RefinedParams> {
    config.validate()?;
    let field = PropagationField::build(model, topic, n_users);
    let disagree = direct_disagree_matrix(&model.strengths, topic, n_users);

    let mut refined = RowMatrix::zeros(n_users);
    for v in 0..n_users {
        let delta = field.tm.dense_row(v);
        if delta.iter().all(|&x| x == 0.0) {
            continue;
        }
        let out = propagate(&delta, &field.tm, config)?;
        for (j, w) in out.into_iter().enumerate() {
            // Self entries (mass returning through cycles or the
            // self-loop repair) stay in the matrix so each source's
            // total influence mass is preserved; they are skipped when
            // neighborhoods are derived below, since influence between
            // a user and themselves is meaningless.
            if w > 0.0 {
                refined.set(v, j, w);
            }
        }
    }

    // Re-derive per-target tie strengths and ω from the refined weights.
    let mut incoming: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
    for v in 0..n_users {
        for &(j, w) in refined.row(v) {
            if j != v {
                incoming.entry(j).or_default().push((v, w));
            }
        }
    }
    let mut strengths = BTreeMap::new();
    let mut omega = BTreeMap::new();
    for (j, sources) in incoming {
        let total: f64 = sources.iter().map(|(_, w)| w).sum();
        let neighbors: Vec<usize> = sources.iter().map(|(v, _)| *v).collect();
        let s_agree: Vec<f64> = if total > 0.0 {
            sources.iter().map(|(_, w)| w / total).collect()
        } else {
            vec![1.0 / sources.len() as f64; sources.len()]
        };
        // Disagree side: direct disagree weights over the refined
        // neighborhood (zero for newly reached sources), renormalized.
        let d_raw: Vec<f64> = neighbors.iter().map(|&v| disagree.get(v, j)).collect();
        let d_total: f64 = d_raw.iter().sum();
        let (s_disagree, disagree_uniform) = if d_total > 0.0 {
            (d_raw.iter().map(|d| d / d_total).collect(), false)
        } else {
            (vec![1.0 / neighbors.len() as f64; neighbors.len()], true)
        };
        for ((&v, &(_, w)), &d) in neighbors.iter().zip(&sources).zip(&d_raw) {
            let denom = w + d;
            let (oa, od) = if denom > 0.0 {
                (w / denom, d / denom)
            } else {
                (0.5, 0.5)
            };
            omega.insert((v, j), (oa, od));
        }
        strengths.insert(
            j,
            TieStrength {
                neighbors,
                s_agree,
                s_disagree,
                agree_uniform: total == 0.0,
                disagree_uniform,
            },
        );
    }

    Ok(RefinedParams {
        topic,
        refined,
        strengths,
        omega,
    })
}

impl RefinedParams {
    /// CSV rows `source,target,topic,weight_direct,weight_refined,mode,t,beta`.
    pub fn to_csv(&self, direct: &RowMatrix, config: &PropagationConfig) -> String {
        let mode = match config.mode {
            PropagationMode::Conservative => "conservative",
            PropagationMode::Nonconservative => "nonconservative",
        };
        let mut out = String::from("source,target,topic,weight_direct,weight_refined,mode,t,beta\n");
        for v in 0..self.refined.n {
            for &(j, w) in self.refined.row(v) {
                out.push_str(&format!(
                    "{v},{j},{},{},{},{mode},{},{}\n",
                    self.topic,
                    direct.get(v, j),
                    w,
                    config.steps,
                    config.decay_beta
                ));
            }
        }
        out
    }
}
