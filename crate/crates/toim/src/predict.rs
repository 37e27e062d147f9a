//! Opinion prediction and evaluation.
//!
//! A user's future opinion on a topic is predicted by repeatedly
//! sampling one of their topic-opinion neighbors, drawing whether the
//! user would go along with that neighbor's opinion, and accumulating
//! the signed tie strength into SWO; the sign of SWO is the prediction.
//! A draw contributes only when the sampled neighbor's opinion is
//! actually available (known at test time, or drawable from an observed
//! Ψ row); if no draw contributes, the prediction abstains. Refined
//! (propagated) strengths can replace the direct ones, which adds
//! two-hop neighbors and reduces abstentions.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ToimError;
use crate::influence::{Psi, TrainedModel};
use crate::propagation::RefinedParams;
use crate::seed;
use crate::Result;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionConfig {
    /// Own-preference weight w ∈ [0, 1].
    pub w: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Use refined (propagated) strengths instead of direct ones.
    pub use_refined: bool,
}

impl Default for PredictionConfig {
    fn default() -> Self {
        PredictionConfig {
            w: 0.5,
            iterations: 100,
            seed: 0,
            use_refined: false,
        }
    }
}

impl PredictionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.w) {
            return Err(ToimError::InvalidConfig("w must be in [0, 1]".into()));
        }
        if self.iterations == 0 {
            return Err(ToimError::InvalidConfig("iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// The influence view predict draws from: a user's neighbors on one
/// topic with per-neighbor tie strengths and agreement probability.
#[derive(Debug, Clone)]
pub struct Neighborhood {
    pub neighbors: Vec<usize>,
    pub s_agree: Vec<f64>,
    pub s_disagree: Vec<f64>,
    pub omega_agree: Vec<f64>,
}

/// Direct or refined neighborhood of `user` on `topic`.
pub fn neighborhood(
    model: &TrainedModel,
    refined: Option<&RefinedParams>,
    user: usize,
    topic: usize,
) -> Result<Neighborhood> {
    let missing = || ToimError::NoNeighbors {
        user: user.to_string(),
        topic,
    };
    if let Some(r) = refined {
        debug_assert_eq!(r.topic, topic);
        let ts = r.strengths.get(&user).ok_or_else(missing)?;
        let omega_agree = ts
            .neighbors
            .iter()
            .map(|&i| r.omega.get(&(i, user)).map_or(0.5, |(a, _)| *a))
            .collect();
        Ok(Neighborhood {
            neighbors: ts.neighbors.clone(),
            s_agree: ts.s_agree.clone(),
            s_disagree: ts.s_disagree.clone(),
            omega_agree,
        })
    } else {
        let ts = model.strengths.get(&(user, topic)).ok_or_else(missing)?;
        let omega_agree = ts
            .neighbors
            .iter()
            .map(|&i| {
                model
                    .omega
                    .get(i, user, topic)
                    .map_or(0.5, |e| e.agree)
            })
            .collect();
        Ok(Neighborhood {
            neighbors: ts.neighbors.clone(),
            s_agree: ts.s_agree.clone(),
            s_disagree: ts.s_disagree.clone(),
            omega_agree,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Prediction {
    pub user: usize,
    pub topic: usize,
    /// +1 / −1, or 0 when abstained.
    pub o_new: i8,
    pub swo: f64,
    /// Number of iterations whose sampled neighbor had a usable opinion.
    pub support: usize,
    /// SWO landed exactly on 0 and was broken to +1.
    pub tie_broken: bool,
    pub abstained: bool,
}

/// One Algorithm-2 run over a non-empty neighborhood. `known` maps
/// (user, topic) to test-time opinions of other users.
pub fn predict_opinion(
    psi: &Psi,
    hood: &Neighborhood,
    user: usize,
    topic: usize,
    known: &BTreeMap<(usize, usize), i8>,
    config: &PredictionConfig,
    rng: &mut ChaCha8Rng,
) -> Prediction {
    let mut swo = 0.0;
    let mut support = 0usize;
    for _ in 0..config.iterations {
        let idx = rng.gen_range(0..hood.neighbors.len());
        let i = hood.neighbors[idx];
        // Neighbor opinion: known test-time value, else a Ψ draw when
        // the neighbor's opinion history was observed, else unusable.
        let o_i: i8 = match known.get(&(i, topic)) {
            Some(&o) if o != 0 => o,
            _ => {
                if psi.get(i, topic).observed {
                    if rng.gen::<f64>() < psi.get(i, topic).p_pos {
                        1
                    } else {
                        -1
                    }
                } else {
                    continue;
                }
            }
        };
        support += 1;
        let temp = config.w * psi.prob(user, topic, o_i)
            + (1.0 - config.w) * hood.omega_agree[idx];
        let o_temp = if rng.gen::<f64>() < temp { o_i } else { -o_i };
        if o_temp == o_i {
            swo += o_temp as f64 * hood.s_agree[idx];
        } else {
            swo += o_temp as f64 * hood.s_disagree[idx];
        }
    }
    let abstained = support == 0;
    let (o_new, tie_broken) = if abstained {
        (0, false)
    } else if swo > 0.0 {
        (1, false)
    } else if swo < 0.0 {
        (-1, false)
    } else {
        (1, true)
    };
    Prediction {
        user,
        topic,
        o_new,
        swo,
        support,
        tie_broken,
        abstained,
    }
}

/// Predict for one (user, topic) with its own deterministic sub-seed.
/// Missing neighborhoods surface as an error so callers can fall back
/// to a baseline.
pub fn predict(
    model: &TrainedModel,
    refined: Option<&RefinedParams>,
    user: usize,
    topic: usize,
    known: &BTreeMap<(usize, usize), i8>,
    config: &PredictionConfig,
) -> Result<Prediction> {
    config.validate()?;
    let hood = neighborhood(model, refined, user, topic)?;
    let mut rng = seed::sub_rng(config.seed, &[&user.to_string(), &topic.to_string()]);
    Ok(predict_opinion(
        &model.psi, &hood, user, topic, known, config, &mut rng,
    ))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub total: usize,
    pub answered: usize,
    pub correct: usize,
    pub abstentions: usize,
}

/// Score (prediction, gold) pairs; a prediction of 0 is an abstention.
/// Precision is over answered cases, recall over all gold labels.
pub fn evaluate(pairs: &[(i8, i8)]) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(ToimError::EmptyGold);
    }
    let total = pairs.len();
    let answered = pairs.iter().filter(|(p, _)| *p != 0).count();
    let correct = pairs.iter().filter(|(p, g)| *p != 0 && p == g).count();
    let precision = if answered > 0 {
        correct as f64 / answered as f64
    } else {
        0.0
    };
    let recall = correct as f64 / total as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(EvalReport {
        precision,
        recall,
        f1,
        total,
        answered,
        correct,
        abstentions: total - answered,
    })
}

/// Most frequent training polarity; ties go to +1.
pub fn baseline_majority(train_labels: &[i8]) -> i8 {
    let pos = train_labels.iter().filter(|&&l| l > 0).count();
    let neg = train_labels.iter().filter(|&&l| l < 0).count();
    if pos >= neg {
        1
    } else {
        -1
    }
}

/// Argmax of the user's own opinion distribution; abstains when the
/// distribution was never observed.
pub fn baseline_history(psi: &Psi, user: usize, topic: usize) -> Option<i8> {
    let e = psi.get(user, topic);
    if !e.observed {
        return None;
    }
    Some(if e.p_pos >= e.p_neg { 1 } else { -1 })
}
