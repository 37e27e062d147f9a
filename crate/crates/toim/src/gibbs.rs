//! Collapsed Gibbs sampling over (user, noun, topic) assignments.
//!
//! One chain is strictly sequential: the collapsed count matrices are
//! shared state. Reply coupling ties a reply's noun tokens to the parent
//! post's matching tokens: they inherit the parent's topic instead of
//! being sampled, and the topic is credited to the replier's user-topic
//! counts.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Graph, Pos, Vocabulary};
use crate::error::ToimError;
use crate::Result;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GibbsConfig {
    /// Topic count K.
    pub k: usize,
    /// Symmetric user-topic prior.
    pub alpha: f64,
    /// Symmetric topic-noun prior (distinct from the propagation decay).
    pub beta: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl GibbsConfig {
    /// Standard heuristics: alpha = 50/K, beta = 0.01.
    pub fn new(k: usize, iterations: usize, seed: u64) -> GibbsConfig {
        GibbsConfig {
            k,
            alpha: 50.0 / k as f64,
            beta: 0.01,
            iterations,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(ToimError::InvalidConfig("K must be >= 1".into()));
        }
        if self.alpha <= 0.0 || self.beta <= 0.0 {
            return Err(ToimError::InvalidConfig("priors must be > 0".into()));
        }
        if self.iterations < 1 {
            return Err(ToimError::InvalidConfig("iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// One noun occurrence in sweep order.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NounToken {
    pub message: usize,
    pub position: usize,
    pub noun: usize,
    pub user: usize,
}

#[derive(Debug, Clone)]
pub struct GibbsState {
    tokens: Vec<NounToken>,
    z: Vec<usize>,
    /// Token index of the parent-post token whose topic is inherited.
    coupled: Vec<Option<usize>>,
    c_xz: Vec<Vec<u64>>,
    c_zw: Vec<Vec<u64>>,
    xz_sum: Vec<u64>,
    zw_sum: Vec<u64>,
    n_nouns: usize,
    k: usize,
}

/// Row-stochastic Θ (users × topics) and Φ (topics × nouns).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopicParams {
    pub theta: Vec<Vec<f64>>,
    pub phi: Vec<Vec<f64>>,
}

/// Sweep order: parents strictly before their descendants, ties by
/// canonical message order.
fn sweep_order(graph: &Graph) -> Vec<usize> {
    let mut depth = vec![0usize; graph.messages.len()];
    for mi in 0..graph.messages.len() {
        let mut d = 0;
        let mut cur = mi;
        while let Some(p) = graph.parent_of(cur) {
            d += 1;
            cur = p;
            if d > graph.messages.len() {
                break; // cycle guard; validated graphs cannot loop
            }
        }
        depth[mi] = d;
    }
    let mut order: Vec<usize> = (0..graph.messages.len()).collect();
    order.sort_by_key(|&mi| (depth[mi], mi));
    order
}

impl GibbsState {
    /// Collect noun tokens, wire up reply coupling, and draw the initial
    /// assignments.
    pub fn init(
        graph: &Graph,
        vocab: &Vocabulary,
        config: &GibbsConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<GibbsState> {
        config.validate()?;
        let mut tokens = Vec::new();
        // (message, noun) -> first flattened token index, for coupling.
        let mut first_token: std::collections::HashMap<(usize, usize), usize> =
            std::collections::HashMap::new();
        for &mi in &sweep_order(graph) {
            let m = &graph.messages[mi];
            let user = graph.author_idx(mi);
            for t in &m.tokens {
                if t.pos != Pos::Noun {
                    continue;
                }
                let noun = match vocab.noun_idx(&t.text) {
                    Some(n) => n,
                    None => continue,
                };
                let ti = tokens.len();
                tokens.push(NounToken {
                    message: mi,
                    position: t.position,
                    noun,
                    user,
                });
                first_token.entry((mi, noun)).or_insert(ti);
            }
        }
        let coupled: Vec<Option<usize>> = tokens
            .iter()
            .map(|t| {
                graph
                    .parent_of(t.message)
                    .and_then(|p| first_token.get(&(p, t.noun)).copied())
            })
            .collect();

        let mut state = GibbsState {
            z: vec![0; tokens.len()],
            coupled,
            tokens,
            c_xz: vec![vec![0; config.k]; graph.users.len()],
            c_zw: vec![vec![0; vocab.noun_count()]; config.k],
            xz_sum: vec![0; graph.users.len()],
            zw_sum: vec![0; config.k],
            n_nouns: vocab.noun_count(),
            k: config.k,
        };
        for ti in 0..state.tokens.len() {
            let z = match state.coupled[ti] {
                Some(pt) => state.z[pt],
                None => rng.gen_range(0..config.k),
            };
            state.z[ti] = z;
            state.increment(ti, z);
        }
        Ok(state)
    }

    fn increment(&mut self, ti: usize, z: usize) {
        let t = self.tokens[ti];
        self.c_xz[t.user][z] += 1;
        self.c_zw[z][t.noun] += 1;
        self.xz_sum[t.user] += 1;
        self.zw_sum[z] += 1;
    }

    fn decrement(&mut self, ti: usize) {
        let t = self.tokens[ti];
        let z = self.z[ti];
        self.c_xz[t.user][z] -= 1;
        self.c_zw[z][t.noun] -= 1;
        self.xz_sum[t.user] -= 1;
        self.zw_sum[z] -= 1;
    }

    /// Resample every noun token once.
    pub fn sweep(&mut self, config: &GibbsConfig, rng: &mut ChaCha8Rng) -> Result<()> {
        for ti in 0..self.tokens.len() {
            self.decrement(ti);
            let z = match self.coupled[ti] {
                Some(pt) => self.z[pt],
                None => {
                    let t = self.tokens[ti];
                    let weights = self.conditional_weights(t.user, t.noun, config)?;
                    sample_topic(&weights, rng)?
                }
            };
            self.z[ti] = z;
            self.increment(ti, z);
        }
        Ok(())
    }

    /// Unnormalized categorical weights for one (user, noun), with the
    /// current token already decremented from the counts.
    pub fn conditional_weights(
        &self,
        user: usize,
        noun: usize,
        config: &GibbsConfig,
    ) -> Result<Vec<f64>> {
        if user >= self.c_xz.len() {
            return Err(ToimError::UnknownUser(user));
        }
        if noun >= self.n_nouns {
            return Err(ToimError::UnknownNoun(noun));
        }
        let k = config.k;
        let mut weights = Vec::with_capacity(k);
        for z in 0..k {
            let user_part = (self.c_xz[user][z] as f64 + config.alpha)
                / (self.xz_sum[user] as f64 + k as f64 * config.alpha);
            let noun_part = (self.c_zw[z][noun] as f64 + config.beta)
                / (self.zw_sum[z] as f64 + self.n_nouns as f64 * config.beta);
            weights.push(user_part * noun_part);
        }
        Ok(weights)
    }

    /// Final parameter read-off.
    pub fn estimate(&self, config: &GibbsConfig) -> TopicParams {
        let k = config.k;
        let theta = self
            .c_xz
            .iter()
            .zip(&self.xz_sum)
            .map(|(row, &sum)| {
                row.iter()
                    .map(|&c| (c as f64 + config.alpha) / (sum as f64 + k as f64 * config.alpha))
                    .collect()
            })
            .collect();
        let phi = self
            .c_zw
            .iter()
            .zip(&self.zw_sum)
            .map(|(row, &sum)| {
                row.iter()
                    .map(|&c| {
                        (c as f64 + config.beta)
                            / (sum as f64 + self.n_nouns as f64 * config.beta)
                    })
                    .collect()
            })
            .collect();
        TopicParams { theta, phi }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn tokens(&self) -> &[NounToken] {
        &self.tokens
    }

    pub fn assignments(&self) -> &[usize] {
        &self.z
    }

    /// Topic assignment for a (message, token position) noun occurrence.
    pub fn assignment_at(&self, message: usize, position: usize) -> Option<usize> {
        self.tokens
            .iter()
            .position(|t| t.message == message && t.position == position)
            .map(|ti| self.z[ti])
    }

    pub fn user_topic_counts(&self) -> &[Vec<u64>] {
        &self.c_xz
    }

    pub fn topic_noun_counts(&self) -> &[Vec<u64>] {
        &self.c_zw
    }

    /// Serialize config, assignment vector and both count matrices
    /// (sparse triplets).
    pub fn checkpoint(&self, config: &GibbsConfig) -> Checkpoint {
        let triplets = |m: &[Vec<u64>]| -> Vec<(usize, usize, u64)> {
            m.iter()
                .enumerate()
                .flat_map(|(i, row)| {
                    row.iter()
                        .enumerate()
                        .filter(|(_, &c)| c > 0)
                        .map(move |(j, &c)| (i, j, c))
                })
                .collect()
        };
        Checkpoint {
            config: config.clone(),
            assignments: self.z.clone(),
            c_xz: triplets(&self.c_xz),
            c_zw: triplets(&self.c_zw),
        }
    }

    /// Rebuild a state from a checkpoint against the same graph/vocab.
    pub fn restore(
        graph: &Graph,
        vocab: &Vocabulary,
        checkpoint: &Checkpoint,
    ) -> Result<GibbsState> {
        let mut rng = ChaCha8Rng::seed_from_u64(checkpoint.config.seed);
        let mut state = GibbsState::init(graph, vocab, &checkpoint.config, &mut rng)?;
        if state.z.len() != checkpoint.assignments.len() {
            return Err(ToimError::InvalidConfig(
                "checkpoint does not match corpus".into(),
            ));
        }
        // Reset counts and replay the stored assignments.
        for ti in 0..state.z.len() {
            state.decrement(ti);
        }
        for ti in 0..checkpoint.assignments.len() {
            let z = checkpoint.assignments[ti];
            state.z[ti] = z;
            state.increment(ti, z);
        }
        // Cross-check against the stored sparse matrices.
        for &(i, j, c) in &checkpoint.c_xz {
            if state.c_xz[i][j] != c {
                return Err(ToimError::InvalidConfig(
                    "checkpoint count matrix mismatch".into(),
                ));
            }
        }
        for &(i, j, c) in &checkpoint.c_zw {
            if state.c_zw[i][j] != c {
                return Err(ToimError::InvalidConfig(
                    "checkpoint count matrix mismatch".into(),
                ));
            }
        }
        Ok(state)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: GibbsConfig,
    pub assignments: Vec<usize>,
    pub c_xz: Vec<(usize, usize, u64)>,
    pub c_zw: Vec<(usize, usize, u64)>,
}

/// Categorical draw proportional to `weights`.
pub fn sample_topic(weights: &[f64], rng: &mut ChaCha8Rng) -> Result<usize> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || weights.iter().any(|&w| w < 0.0) {
        return Err(ToimError::ZeroWeights);
    }
    let mut u = rng.gen_range(0.0..total);
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return Ok(i);
        }
        u -= w;
    }
    Ok(weights.len() - 1)
}

/// Run a full chain and read the parameters off the final sweep.
pub fn run(
    graph: &Graph,
    vocab: &Vocabulary,
    config: &GibbsConfig,
) -> Result<(GibbsState, TopicParams)> {
    if graph.messages.is_empty() {
        return Err(ToimError::EmptyGraph);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = GibbsState::init(graph, vocab, config, &mut rng)?;
    for _ in 0..config.iterations {
        state.sweep(config, &mut rng)?;
    }
    let params = state.estimate(config);
    Ok((state, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Graph;
    use crate::testutil::{comment, post};
    use std::collections::{BTreeMap, HashMap};

    fn simple_vocab(graph: &Graph) -> Vocabulary {
        Vocabulary::build(graph, &BTreeMap::new())
    }

    #[test]
    fn conditional_weights_direct_arithmetic() {
        // K=2, alpha=0.5, N=3, beta=0.1, C_xz[x]=[2,0], C_zw[0][w]=3
        // (topic-0 sum 5), C_zw[1][w]=0 (topic-1 sum 1).
        let config = GibbsConfig {
            k: 2,
            alpha: 0.5,
            beta: 0.1,
            iterations: 1,
            seed: 0,
        };
        let state = GibbsState {
            tokens: vec![],
            z: vec![],
            coupled: vec![],
            c_xz: vec![vec![2, 0]],
            c_zw: vec![vec![3, 1, 1], vec![0, 1, 0]],
            xz_sum: vec![2],
            zw_sum: vec![5, 1],
            n_nouns: 3,
            k: 2,
        };
        let w = state.conditional_weights(0, 0, &config).unwrap();
        assert!((w[0] - (2.5 / 3.0) * (3.1 / 5.3)).abs() < 1e-12);
        assert!((w[1] - (0.5 / 3.0) * (0.1 / 1.3)).abs() < 1e-12);
        assert!((w[0] - 0.487421).abs() < 1e-6);
        assert!((w[1] - 0.012820).abs() < 1e-6);
        assert!(w.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn conditional_weights_all_zero_counts_uniform() {
        let config = GibbsConfig {
            k: 2,
            alpha: 0.5,
            beta: 0.1,
            iterations: 1,
            seed: 0,
        };
        let state = GibbsState {
            tokens: vec![],
            z: vec![],
            coupled: vec![],
            c_xz: vec![vec![0, 0]],
            c_zw: vec![vec![0, 0, 0], vec![0, 0, 0]],
            xz_sum: vec![0],
            zw_sum: vec![0, 0],
            n_nouns: 3,
            k: 2,
        };
        let w = state.conditional_weights(0, 0, &config).unwrap();
        let expected = 1.0 / (2.0 * 3.0); // 1/(K*N)
        for &x in &w {
            assert!((x - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn conditional_weights_unknown_indices_error() {
        let config = GibbsConfig::new(2, 1, 0);
        let state = GibbsState {
            tokens: vec![],
            z: vec![],
            coupled: vec![],
            c_xz: vec![vec![0, 0]],
            c_zw: vec![vec![0], vec![0]],
            xz_sum: vec![0],
            zw_sum: vec![0, 0],
            n_nouns: 1,
            k: 2,
        };
        assert!(matches!(
            state.conditional_weights(5, 0, &config),
            Err(ToimError::UnknownUser(5))
        ));
        assert!(matches!(
            state.conditional_weights(0, 9, &config),
            Err(ToimError::UnknownNoun(9))
        ));
    }

    #[test]
    fn sample_topic_degenerate_and_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(sample_topic(&[1.0, 0.0], &mut rng).unwrap(), 0);
        }
        assert!(matches!(
            sample_topic(&[0.0, 0.0], &mut rng),
            Err(ToimError::ZeroWeights)
        ));
    }

    #[test]
    fn sample_topic_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let draws = 10_000;
        let mut zero = 0usize;
        for _ in 0..draws {
            if sample_topic(&[1.0, 1.0], &mut rng).unwrap() == 0 {
                zero += 1;
            }
        }
        let f = zero as f64 / draws as f64;
        assert!((0.48..=0.52).contains(&f), "uniform frequency {f}");

        let mut zero = 0usize;
        for _ in 0..draws {
            if sample_topic(&[3.0, 1.0], &mut rng).unwrap() == 0 {
                zero += 1;
            }
        }
        let f = zero as f64 / draws as f64;
        assert!((0.73..=0.77).contains(&f), "3:1 frequency {f}");
    }

    #[test]
    fn k1_corpus_is_fixed_point() {
        let graph = Graph::from_messages(
            vec![post("m1", "A", 1, &[("movie", crate::corpus::Pos::Noun)])],
            &HashMap::new(),
        )
        .unwrap();
        let vocab = simple_vocab(&graph);
        let config = GibbsConfig::new(1, 3, 7);
        let (state, params) = run(&graph, &vocab, &config).unwrap();
        assert_eq!(state.assignments(), &[0]);
        assert_eq!(params.theta.len(), 1);
        assert!((params.theta[0][0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn reply_coupling_shares_parent_topic() {
        use crate::corpus::Pos;
        let graph = Graph::from_messages(
            vec![
                post("m1", "A", 1, &[("movie", Pos::Noun), ("plot", Pos::Noun)]),
                comment("m2", "B", "m1", 2, &[("movie", Pos::Noun)]),
            ],
            &HashMap::new(),
        )
        .unwrap();
        let vocab = simple_vocab(&graph);
        let config = GibbsConfig::new(4, 10, 3);
        let (state, _) = run(&graph, &vocab, &config).unwrap();
        let parent_z = state.assignment_at(0, 0).unwrap();
        let reply_z = state.assignment_at(1, 0).unwrap();
        assert_eq!(parent_z, reply_z);
    }

    #[test]
    fn counts_conserve_token_total() {
        use crate::corpus::Pos;
        let graph = Graph::from_messages(
            vec![
                post("m1", "A", 1, &[("movie", Pos::Noun), ("plot", Pos::Noun)]),
                post("m2", "B", 2, &[("cast", Pos::Noun)]),
                comment("m3", "C", "m1", 3, &[("movie", Pos::Noun), ("song", Pos::Noun)]),
            ],
            &HashMap::new(),
        )
        .unwrap();
        let vocab = simple_vocab(&graph);
        let config = GibbsConfig::new(3, 5, 11);
        let (state, _) = run(&graph, &vocab, &config).unwrap();
        let total = state.tokens().len() as u64;
        let xz: u64 = state.user_topic_counts().iter().flatten().sum();
        let zw: u64 = state.topic_noun_counts().iter().flatten().sum();
        assert_eq!(xz, total);
        assert_eq!(zw, total);
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        use crate::corpus::Pos;
        let msgs: Vec<_> = (0..20)
            .map(|i| {
                let noun = format!("n{}", i % 5);
                let tokens = vec![(noun.as_str(), Pos::Noun)];
                post(&format!("m{i:02}"), &format!("u{}", i % 4), i, &tokens)
            })
            .collect();
        let graph = Graph::from_messages(msgs, &HashMap::new()).unwrap();
        let vocab = simple_vocab(&graph);
        let config = GibbsConfig::new(3, 10, 99);
        let (s1, p1) = run(&graph, &vocab, &config).unwrap();
        let (s2, p2) = run(&graph, &vocab, &config).unwrap();
        assert_eq!(s1.assignments(), s2.assignments());
        assert_eq!(p1.theta, p2.theta);
        assert_eq!(p1.phi, p2.phi);
    }

    #[test]
    fn estimate_direct_arithmetic() {
        // C_xz[x] = [2, 0], alpha = 0.5, K = 2 -> [2.5/3, 0.5/3].
        let config = GibbsConfig {
            k: 2,
            alpha: 0.5,
            beta: 0.1,
            iterations: 1,
            seed: 0,
        };
        let state = GibbsState {
            tokens: vec![],
            z: vec![],
            coupled: vec![],
            c_xz: vec![vec![2, 0]],
            c_zw: vec![vec![2, 0], vec![0, 0]],
            xz_sum: vec![2],
            zw_sum: vec![2, 0],
            n_nouns: 2,
            k: 2,
        };
        let params = state.estimate(&config);
        assert!((params.theta[0][0] - 2.5 / 3.0).abs() < 1e-12);
        assert!((params.theta[0][1] - 0.5 / 3.0).abs() < 1e-12);
        let sum: f64 = params.theta[0].iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        for row in &params.phi {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn estimate_all_zero_counts_uniform() {
        let config = GibbsConfig::new(4, 1, 0);
        let state = GibbsState {
            tokens: vec![],
            z: vec![],
            coupled: vec![],
            c_xz: vec![vec![0; 4]],
            c_zw: vec![vec![0; 3]; 4],
            xz_sum: vec![0],
            zw_sum: vec![0; 4],
            n_nouns: 3,
            k: 4,
        };
        let params = state.estimate(&config);
        for &v in &params.theta[0] {
            assert!((v - 0.25).abs() < 1e-12);
        }
        for row in &params.phi {
            for &v in row {
                assert!((v - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn estimate_matches_hand_recount() {
        use crate::corpus::Pos;
        // 5 messages, K=1: every token lands in topic 0, so theta/phi are
        // pure count ratios that we can recount by hand.
        let msgs = vec![
            post("m1", "A", 1, &[("x", Pos::Noun), ("y", Pos::Noun)]),
            post("m2", "A", 2, &[("x", Pos::Noun)]),
            post("m3", "B", 3, &[("y", Pos::Noun)]),
            post("m4", "B", 4, &[("y", Pos::Noun)]),
            post("m5", "B", 5, &[("x", Pos::Noun)]),
        ];
        let graph = Graph::from_messages(msgs, &HashMap::new()).unwrap();
        let vocab = simple_vocab(&graph);
        let config = GibbsConfig {
            k: 1,
            alpha: 0.5,
            beta: 0.1,
            iterations: 2,
            seed: 5,
        };
        let (state, params) = run(&graph, &vocab, &config).unwrap();
        // A owns 3 tokens, B owns 3 tokens; x appears 3 times, y 3 times.
        assert_eq!(state.user_topic_counts()[0][0], 3);
        assert_eq!(state.user_topic_counts()[1][0], 3);
        let xi = vocab.noun_idx("x").unwrap();
        let yi = vocab.noun_idx("y").unwrap();
        assert_eq!(state.topic_noun_counts()[0][xi], 3);
        assert_eq!(state.topic_noun_counts()[0][yi], 3);
        assert!((params.phi[0][xi] - 3.1 / 6.2).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip() {
        use crate::corpus::Pos;
        let msgs = vec![
            post("m1", "A", 1, &[("x", Pos::Noun), ("y", Pos::Noun)]),
            comment("m2", "B", "m1", 2, &[("x", Pos::Noun)]),
        ];
        let graph = Graph::from_messages(msgs, &HashMap::new()).unwrap();
        let vocab = simple_vocab(&graph);
        let config = GibbsConfig::new(3, 4, 17);
        let (state, _) = run(&graph, &vocab, &config).unwrap();
        let cp = state.checkpoint(&config);
        let json = serde_json::to_string(&cp).unwrap();
        let cp2: Checkpoint = serde_json::from_str(&json).unwrap();
        let restored = GibbsState::restore(&graph, &vocab, &cp2).unwrap();
        assert_eq!(restored.assignments(), state.assignments());
        assert_eq!(restored.user_topic_counts(), state.user_topic_counts());
    }
}
