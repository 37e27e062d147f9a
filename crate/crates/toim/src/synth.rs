//! Synthetic corpus generator with planted parameters.
//!
//! Generates a post/comment corpus from a known generative story so the
//! full pipeline can be checked against ground truth: users carry a
//! planted dominant topic, a signature opinion polarity, and pairwise
//! agreement rates; topics own disjoint noun vocabularies. Per-pair
//! agreement outcomes use quota sampling (an exact shuffled proportion
//! rather than independent draws) so the planted rate is recoverable
//! within rounding error on every pair.
//!
//! Three user roles support coverage experiments: plain opinionated
//! users are arranged in mutually replying pairs; an optional fraction
//! is arranged into (source, relay, isolated) triples where the relay
//! never utters an opinion word, leaving the isolated user's only direct
//! influence edge opinion-free — reachable only through two-hop
//! refinement.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Graph, Kind, Message, Pos, Token};
use crate::error::ToimError;
use crate::Result;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub users: usize,
    pub topics: usize,
    pub nouns_per_topic: usize,
    pub posts_per_user: usize,
    /// Reply records per directed user pair; 0 disables replies.
    pub replies_per_pair: usize,
    /// Planted probability that a reply agrees with its parent.
    pub omega_agree: f64,
    /// Planted probability that a user's own post carries their
    /// signature polarity.
    pub psi_strong: f64,
    /// Planted Θ weight of each user's dominant topic.
    pub theta_dominant: f64,
    /// Fraction of users arranged into two-hop (source, relay, isolated)
    /// triples instead of opinionated pairs.
    pub isolated_fraction: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            users: 20,
            topics: 2,
            nouns_per_topic: 10,
            posts_per_user: 10,
            replies_per_pair: 10,
            omega_agree: 0.9,
            psi_strong: 0.9,
            theta_dominant: 0.9,
            isolated_fraction: 0.0,
            seed: 1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.users < 2 || self.topics == 0 || self.nouns_per_topic == 0 {
            return Err(ToimError::InvalidConfig(
                "need >= 2 users and nonzero topics/nouns".into(),
            ));
        }
        if self.posts_per_user == 0 {
            return Err(ToimError::InvalidConfig("posts_per_user must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.omega_agree)
            || !(0.0..=1.0).contains(&self.isolated_fraction)
        {
            return Err(ToimError::InvalidConfig(
                "omega_agree and isolated_fraction must be in [0, 1]".into(),
            ));
        }
        if !(0.5..=1.0).contains(&self.psi_strong) {
            return Err(ToimError::InvalidConfig("psi_strong must be in [0.5, 1]".into()));
        }
        if self.theta_dominant < 1.0 / self.topics as f64 || self.theta_dominant > 1.0 {
            return Err(ToimError::InvalidConfig(
                "theta_dominant must be in [1/topics, 1]".into(),
            ));
        }
        if self.isolated_fraction > 0.0 && self.users < 3 {
            return Err(ToimError::InvalidConfig(
                "triples need at least 3 users".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldLabel {
    pub user: String,
    /// Planted dominant topic index (generator numbering, not the
    /// learned topic order).
    pub topic: usize,
    pub polarity: i8,
}

/// User roles in the planted reply structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// Opinionated, mutually paired with a partner.
    Paired(usize),
    /// Opinionated head of a triple; the relay replies to them.
    Source,
    /// Never utters opinion words; replies to their source.
    Relay,
    /// Opinionated; replies only to their relay.
    Isolated,
    /// No reply edges at all.
    Loner,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub messages: Vec<Message>,
    pub followers: HashMap<String, u64>,
    pub lexicon: BTreeMap<String, i8>,
    pub gold: Vec<GoldLabel>,
    pub user_ids: Vec<String>,
    pub roles: Vec<Role>,
    pub signature: Vec<i8>,
    pub dominant_topic: Vec<usize>,
}

impl SynthCorpus {
    pub fn to_graph(&self) -> Result<Graph> {
        Graph::from_messages(self.messages.clone(), &self.followers)
    }

    /// Lexicon in the `word<TAB>polarity` ingestion format.
    pub fn lexicon_tsv(&self) -> String {
        let mut out = String::new();
        for (w, p) in &self.lexicon {
            out.push_str(&format!("{w}\t{p:+}\n"));
        }
        out
    }

    /// Gold labels as JSON lines.
    pub fn gold_jsonl(&self) -> String {
        let mut out = String::new();
        for g in &self.gold {
            out.push_str(&serde_json::to_string(g).expect("gold serializes"));
            out.push('\n');
        }
        out
    }
}

fn noun_name(topic: usize, idx: usize) -> String {
    format!("t{topic}n{idx:03}")
}

/// Relays talk only about their own filler noun, which never co-occurs
/// with an opinion word anywhere in the corpus. That keeps a relay's
/// opinions genuinely undetectable: corpus-level co-occurrence fallback
/// has nothing to latch onto.
fn relay_noun(user: usize) -> String {
    format!("x{user:05}")
}

struct Generator<'a> {
    spec: &'a SynthSpec,
    rng: ChaCha8Rng,
    messages: Vec<Message>,
    next_id: usize,
    next_ts: i64,
}

impl<'a> Generator<'a> {
    fn fresh_id(&mut self) -> String {
        let id = format!("m{:07}", self.next_id);
        self.next_id += 1;
        id
    }

    fn pick_topic(&mut self, dominant: usize) -> usize {
        let k = self.spec.topics;
        if k == 1 || self.rng.gen::<f64>() < self.spec.theta_dominant {
            dominant
        } else {
            // Uniform over the non-dominant topics.
            let r = self.rng.gen_range(0..k - 1);
            if r >= dominant {
                r + 1
            } else {
                r
            }
        }
    }

    fn pick_noun(&mut self, topic: usize) -> String {
        let idx = self.rng.gen_range(0..self.spec.nouns_per_topic);
        noun_name(topic, idx)
    }

    fn tokens(noun: &str, polarity: i8) -> Vec<Token> {
        let mut tokens = vec![Token {
            text: noun.to_string(),
            pos: Pos::Noun,
            position: 0,
        }];
        if polarity != 0 {
            tokens.push(Token {
                text: if polarity > 0 { "good" } else { "bad" }.to_string(),
                pos: Pos::Adjective,
                position: 1,
            });
        }
        tokens
    }

    /// Post by `user`; polarity 0 means no opinion word. Returns
    /// (message index, noun, expressed polarity).
    fn push_post(&mut self, user: &str, topic: usize, polarity: i8, noun: Option<String>) -> (usize, String, i8) {
        let noun = noun.unwrap_or_else(|| self.pick_noun(topic));
        let id = self.fresh_id();
        let ts = self.next_ts;
        self.next_ts += 1;
        self.messages.push(Message {
            id,
            author: user.to_string(),
            kind: Kind::Post,
            parent: None,
            root: None,
            ts,
            tokens: Self::tokens(&noun, polarity),
        });
        (self.messages.len() - 1, noun, polarity)
    }

    /// Comment by `user` on message `parent_idx`, repeating the parent's
    /// noun (which couples the reply to the parent's topic).
    fn push_reply(&mut self, user: &str, parent_idx: usize, polarity: i8, noun: Option<String>) {
        let parent = &self.messages[parent_idx];
        let parent_id = parent.id.clone();
        let noun = noun.unwrap_or_else(|| parent.tokens[0].text.clone());
        let id = self.fresh_id();
        let ts = self.next_ts;
        self.next_ts += 1;
        self.messages.push(Message {
            id,
            author: user.to_string(),
            kind: Kind::Comment,
            parent: Some(parent_id.clone()),
            root: Some(parent_id),
            ts,
            tokens: Self::tokens(&noun, polarity),
        });
    }

    /// Shuffled outcome sequence with an exact round(ω·n) agree quota.
    fn agreement_quota(&mut self, n: usize) -> Vec<bool> {
        let agrees = (self.spec.omega_agree * n as f64).round() as usize;
        let mut outcomes = vec![true; agrees];
        outcomes.resize(n, false);
        outcomes.shuffle(&mut self.rng);
        outcomes
    }
}

/// Generate a corpus from the planted story. Deterministic: the same
/// spec (including its seed) yields a byte-identical corpus.
pub fn generate(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let mut g = Generator {
        spec,
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        messages: Vec::new(),
        next_id: 0,
        next_ts: 0,
    };

    let user_ids: Vec<String> = (0..spec.users).map(|u| format!("u{u:05}")).collect();
    let followers: HashMap<String, u64> = user_ids
        .iter()
        .map(|id| (id.clone(), g.rng.gen_range(0..100_000u64)))
        .collect();

    // Role layout: the first 3·m users form triples, the rest pair up.
    // Each triple or pair is one conversation group.
    let triples = ((spec.users as f64 * spec.isolated_fraction) / 3.0).round() as usize;
    let triples = triples.min(spec.users / 3);
    let mut roles = vec![Role::Loner; spec.users];
    let mut group = vec![0usize; spec.users];
    for t in 0..triples {
        roles[3 * t] = Role::Source;
        roles[3 * t + 1] = Role::Relay;
        roles[3 * t + 2] = Role::Isolated;
        for off in 0..3 {
            group[3 * t + off] = t;
        }
    }
    let mut next_group = triples;
    let mut rest: Vec<usize> = (3 * triples..spec.users).collect();
    while rest.len() >= 2 {
        let a = rest.remove(0);
        let b = rest.remove(0);
        roles[a] = Role::Paired(b);
        roles[b] = Role::Paired(a);
        group[a] = next_group;
        group[b] = next_group;
        next_group += 1;
    }
    for u in rest {
        group[u] = next_group;
        next_group += 1;
    }

    // Members of a group share a dominant topic and a signature
    // polarity, so reply partners reinforce rather than cancel each
    // other's opinion history; groups cycle through topics and split
    // polarity evenly.
    let dominant_topic: Vec<usize> = (0..spec.users).map(|u| group[u] % spec.topics).collect();
    let signature: Vec<i8> = (0..spec.users)
        .map(|u| if (group[u] / spec.topics) % 2 == 0 { 1 } else { -1 })
        .collect();

    // Posts. Relays post their private filler noun with no opinion
    // words; everyone else posts topical nouns.
    let mut posts_of: Vec<Vec<usize>> = vec![Vec::new(); spec.users];
    for u in 0..spec.users {
        for _ in 0..spec.posts_per_user {
            let topic = g.pick_topic(dominant_topic[u]);
            let (polarity, noun) = if roles[u] == Role::Relay {
                (0, Some(relay_noun(u)))
            } else if g.rng.gen::<f64>() < spec.psi_strong {
                (signature[u], None)
            } else {
                (-signature[u], None)
            };
            let (mi, _, _) = g.push_post(&user_ids[u], topic, polarity, noun);
            posts_of[u].push(mi);
        }
    }

    // Replies. The replier cycles through the target's posts; agreement
    // follows the per-pair quota. Replies to opinion-free parents carry
    // the replier's signature (relays stay mute).
    if spec.replies_per_pair > 0 {
        let mut directed: Vec<(usize, usize)> = Vec::new(); // (replier, target)
        for u in 0..spec.users {
            match roles[u] {
                Role::Paired(v) if v > u => {
                    directed.push((u, v));
                    directed.push((v, u));
                }
                Role::Relay => directed.push((u, u - 1)), // relay -> source
                Role::Isolated => directed.push((u, u - 1)), // isolated -> relay
                _ => {}
            }
        }
        for (replier, target) in directed {
            let outcomes = g.agreement_quota(spec.replies_per_pair);
            for (r, agree) in outcomes.into_iter().enumerate() {
                let parent_idx = posts_of[target][r % posts_of[target].len()];
                let parent_polarity = g.messages[parent_idx]
                    .tokens
                    .iter()
                    .find(|t| t.pos == Pos::Adjective)
                    .map_or(0, |t| if t.text == "good" { 1 } else { -1 });
                // A relay keeps to its filler noun even in replies, and
                // anyone replying to a relay echoes that filler noun
                // mutely — nothing may pair an opinion word with a
                // filler noun, or corpus statistics would resolve it.
                let (polarity, noun) = if roles[replier] == Role::Relay {
                    (0, Some(relay_noun(replier)))
                } else if roles[target] == Role::Relay {
                    (0, None)
                } else if parent_polarity == 0 {
                    (signature[replier], None)
                } else if agree {
                    (parent_polarity, None)
                } else {
                    (-parent_polarity, None)
                };
                g.push_reply(&user_ids[replier], parent_idx, polarity, noun);
            }
        }
    }

    // Gold: every opinionated user's planted signature on their dominant
    // topic (stands for the held-out final messages of each user).
    let gold = (0..spec.users)
        .filter(|&u| roles[u] != Role::Relay)
        .map(|u| GoldLabel {
            user: user_ids[u].clone(),
            topic: dominant_topic[u],
            polarity: signature[u],
        })
        .collect();

    let lexicon = [("good".to_string(), 1i8), ("bad".to_string(), -1i8)]
        .into_iter()
        .collect();

    Ok(SynthCorpus {
        messages: g.messages,
        followers,
        lexicon,
        gold,
        user_ids,
        roles,
        signature,
        dominant_topic,
    })
}
