//! Deterministic decomposition of the ledger phase into per-user-pair
//! tasks.
//!
//! Every ordered (influencer, replier) user pair becomes one task
//! holding all of that pair's (post, reply) message records and its own
//! RNG seed derived from the global seed and the two user ids. Tasks
//! share only read-only state, so running them on 1, 2, or 8 workers
//! produces bit-identical ledgers; the merge step only adds counters,
//! and distinct tasks can never touch the same (i, j, topic) key.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::{Graph, Vocabulary};
use crate::error::ToimError;
use crate::influence::{FrozenCorpus, NoaiTable, OpinionLedger, PairCounter};
use crate::opinion::{agreement_label, AgreementLabel, CoETable};
use crate::seed;
use crate::Result;

/// One unit of ledger work: an ordered user pair and all of its
/// (parent message, reply message) records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairTask {
    /// Influencer (parent author) user index.
    pub x: usize,
    /// Replier user index.
    pub xr: usize,
    /// (parent message, reply message) indices, ordered.
    pub records: Vec<(usize, usize)>,
    /// Task-local RNG seed derived from the two user ids.
    pub seed: u64,
}

/// Read-only state shared by all tasks.
pub struct TaskContext<'a> {
    pub graph: &'a Graph,
    pub vocab: &'a Vocabulary,
    pub frozen: &'a FrozenCorpus,
    pub coe: &'a CoETable,
    pub noai: &'a NoaiTable,
    pub iterations: usize,
}

/// Counters produced by one task, keyed by (influencer, replier, topic).
/// Keys from distinct tasks are disjoint by construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerFragment {
    /// Influencer user index.
    pub x: usize,
    /// Replier user index.
    pub xr: usize,
    pub entries: Vec<((usize, usize, usize), PairCounter)>,
}

/// Group reply edges into one task per ordered (influencer, replier)
/// pair. User indices follow canonical id order, so sorting by index is
/// deterministic across runs.
pub fn partition(graph: &Graph, global_seed: u64) -> Vec<PairTask> {
    let mut by_pair: std::collections::BTreeMap<(usize, usize), Vec<(usize, usize)>> =
        std::collections::BTreeMap::new();
    for e in &graph.reply_edges {
        if let Some(x) = graph.parent_of(e.via) {
            by_pair
                .entry((e.target, e.replier))
                .or_default()
                .push((x, e.via));
        }
    }
    by_pair
        .into_iter()
        .map(|((x, xr), mut records)| {
            records.sort_unstable();
            PairTask {
                x,
                xr,
                records,
                seed: seed::sub_seed(
                    global_seed,
                    &[&graph.users[x].id, &graph.users[xr].id],
                ),
            }
        })
        .collect()
}

/// Run one task: for every record and every topic-aligned (parent site,
/// reply site) pair, judge agreement each iteration. Unknown judgments
/// fall back to a NOAI-thresholded uniform draw: agree when the draw is
/// at or below NOAI(x, xr), disagree otherwise.
pub fn pair_computation(task: &PairTask, ctx: &TaskContext<'_>) -> LedgerFragment {
    let mut rng = ChaCha8Rng::seed_from_u64(task.seed);

    // (agree, disagree, any_observed, any_noai) per topic key.
    let mut acc: std::collections::BTreeMap<(usize, usize, usize), (u64, u64, bool, bool)> =
        std::collections::BTreeMap::new();

    for _ in 0..ctx.iterations {
        for &(x_msg, xr_msg) in &task.records {
            for sp in &ctx.frozen.sites[x_msg] {
                for sr in &ctx.frozen.sites[xr_msg] {
                    if sp.topic != sr.topic {
                        continue;
                    }
                    let key = (task.x, task.xr, sr.topic);
                    let n_i = &ctx.vocab.nouns[sp.noun];
                    let n_j = &ctx.vocab.nouns[sr.noun];
                    let slot = acc.entry(key).or_insert((0, 0, false, false));
                    match agreement_label(sp.polarity, sr.polarity, n_i, n_j, ctx.coe) {
                        AgreementLabel::Agree => {
                            slot.0 += 1;
                            slot.2 = true;
                        }
                        AgreementLabel::Disagree => {
                            slot.1 += 1;
                            slot.2 = true;
                        }
                        AgreementLabel::Unknown => {
                            let temp: f64 = rng.gen();
                            if temp <= ctx.noai.get(task.x, task.xr) {
                                slot.0 += 1;
                            } else {
                                slot.1 += 1;
                            }
                            slot.3 = true;
                        }
                    }
                }
            }
        }
    }

    let entries = acc
        .into_iter()
        .map(|(key, (agree, disagree, observed, noai))| {
            (
                key,
                PairCounter {
                    agree,
                    disagree,
                    noai_only: noai && !observed,
                },
            )
        })
        .collect();
    LedgerFragment {
        x: task.x,
        xr: task.xr,
        entries,
    }
}

/// Run all tasks on `workers` threads. Per-task seeding makes the output
/// independent of the worker count and schedule.
pub fn run_tasks(
    tasks: &[PairTask],
    ctx: &TaskContext<'_>,
    workers: usize,
) -> Result<Vec<LedgerFragment>> {
    if workers == 0 {
        return Err(ToimError::InvalidConfig("workers must be >= 1".into()));
    }
    if workers == 1 {
        return Ok(tasks.iter().map(|t| pair_computation(t, ctx)).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| ToimError::Other(e.to_string()))?;
    Ok(pool.install(|| tasks.par_iter().map(|t| pair_computation(t, ctx)).collect()))
}

/// Key-wise sum of fragment counters into the ledger. Two fragments for
/// the same ordered user pair indicate a broken partition and are
/// rejected.
pub fn merge(fragments: Vec<LedgerFragment>, ledger: &mut OpinionLedger) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for frag in fragments {
        if !seen.insert((frag.x, frag.xr)) {
            return Err(ToimError::OverlappingFragments(
                frag.x.to_string(),
                frag.xr.to_string(),
            ));
        }
        for (key, c) in frag.entries {
            let slot = ledger.pairs.entry(key).or_insert(PairCounter {
                agree: 0,
                disagree: 0,
                noai_only: true,
            });
            slot.agree += c.agree;
            slot.disagree += c.disagree;
            slot.noai_only = slot.noai_only && c.noai_only;
        }
    }
    Ok(())
}
