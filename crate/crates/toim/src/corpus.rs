//! Heterogeneous message graph: loading, validation, indexing, subgraphs.
//!
//! The corpus arrives pre-tokenized with part-of-speech tags (one JSONL
//! line per message); no tokenization or tagging happens here. Ingestion
//! derives user nodes, post edges and reply edges from the message
//! records, so the graph is always consistent with the raw corpus.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::ToimError;
use crate::Result;

/// Part-of-speech tag carried by every token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pos {
    #[serde(rename = "noun")]
    Noun,
    #[serde(rename = "adj")]
    Adjective,
    #[serde(rename = "verb")]
    Verb,
    #[serde(rename = "modal")]
    Modal,
    #[serde(rename = "neg")]
    Negation,
    #[serde(rename = "adv")]
    Adversative,
    #[serde(rename = "other")]
    Other,
}

/// Message kind. Forwards/reposts are rejected at ingest: they repeat the
/// original text and carry no opinion of their own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Post,
    Comment,
    Reply,
    Mention,
}

impl Kind {
    pub fn is_post(self) -> bool {
        matches!(self, Kind::Post)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub pos: Pos,
    /// 0-based index within the message token list.
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub id: String,
    pub author: String,
    pub kind: Kind,
    pub parent: Option<String>,
    pub root: Option<String>,
    pub ts: i64,
    pub tokens: Vec<Token>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct User {
    pub id: String,
    pub follower_count: u64,
    /// Dense rank by total interaction count, filled lazily by the
    /// influence stage.
    pub interaction_rank: Option<u32>,
}

/// Reply edge: `replier` replied to (or commented on / mentioned) `target`,
/// through message `via`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplyEdge {
    pub replier: usize,
    pub target: usize,
    pub via: usize,
}

/// The heterogeneous graph G = (users, messages, post edges, reply edges).
/// Immutable after ingestion; all indices refer to the canonical
/// (id-lexicographic) orderings of `users` and `messages`.
#[derive(Debug, Clone)]
pub struct Graph {
    pub users: Vec<User>,
    pub messages: Vec<Message>,
    /// (user index, message index): the author relation.
    pub post_edges: Vec<(usize, usize)>,
    pub reply_edges: Vec<ReplyEdge>,
    user_index: HashMap<String, usize>,
    message_index: HashMap<String, usize>,
}

impl Graph {
    pub fn user_idx(&self, id: &str) -> Option<usize> {
        self.user_index.get(id).copied()
    }

    pub fn message_idx(&self, id: &str) -> Option<usize> {
        self.message_index.get(id).copied()
    }

    /// Index of the parent message, if any.
    pub fn parent_of(&self, msg: usize) -> Option<usize> {
        self.messages[msg]
            .parent
            .as_deref()
            .and_then(|p| self.message_idx(p))
    }

    pub fn author_idx(&self, msg: usize) -> usize {
        self.user_index[&self.messages[msg].author]
    }

    /// Build a graph from already-validated messages. Used by ingestion,
    /// subgraph extraction and the synthetic generator.
    pub fn from_messages(mut messages: Vec<Message>, followers: &HashMap<String, u64>) -> Result<Self> {
        messages.sort_by(|a, b| a.id.cmp(&b.id));

        let mut message_index = HashMap::new();
        for (i, m) in messages.iter().enumerate() {
            if message_index.insert(m.id.clone(), i).is_some() {
                return Err(ToimError::DuplicateMessage { id: m.id.clone() });
            }
        }

        let mut user_ids: BTreeSet<&str> = BTreeSet::new();
        for m in &messages {
            user_ids.insert(&m.author);
        }
        let users: Vec<User> = user_ids
            .into_iter()
            .map(|id| User {
                id: id.to_string(),
                follower_count: followers.get(id).copied().unwrap_or(0),
                interaction_rank: None,
            })
            .collect();
        let user_index: HashMap<String, usize> = users
            .iter()
            .enumerate()
            .map(|(i, u)| (u.id.clone(), i))
            .collect();

        // Validate parent/root structure.
        for m in &messages {
            match (m.kind.is_post(), &m.parent, &m.root) {
                (true, None, None) => {}
                (true, _, _) => {
                    return Err(ToimError::InvalidMessage {
                        id: m.id.clone(),
                        reason: "post carries parent or root reference".into(),
                    })
                }
                (false, Some(p), Some(r)) => {
                    if !message_index.contains_key(p.as_str()) {
                        return Err(ToimError::DanglingParent {
                            id: m.id.clone(),
                            parent: p.clone(),
                        });
                    }
                    if !message_index.contains_key(r.as_str()) {
                        return Err(ToimError::DanglingParent {
                            id: m.id.clone(),
                            parent: r.clone(),
                        });
                    }
                }
                (false, _, _) => {
                    return Err(ToimError::InvalidMessage {
                        id: m.id.clone(),
                        reason: "non-post message lacks parent or root".into(),
                    })
                }
            }
            for (i, t) in m.tokens.iter().enumerate() {
                if t.position != i {
                    return Err(ToimError::InvalidMessage {
                        id: m.id.clone(),
                        reason: format!("token position {} at index {}", t.position, i),
                    });
                }
            }
        }

        let mut post_edges = Vec::with_capacity(messages.len());
        let mut reply_edges = Vec::new();
        for (mi, m) in messages.iter().enumerate() {
            post_edges.push((user_index[&m.author], mi));
            if let Some(parent) = &m.parent {
                let pi = message_index[parent.as_str()];
                let replier = user_index[&m.author];
                let target = user_index[&messages[pi].author];
                // Self-replies carry no cross-user influence.
                if replier != target {
                    reply_edges.push(ReplyEdge {
                        replier,
                        target,
                        via: mi,
                    });
                }
            }
        }

        Ok(Graph {
            users,
            messages,
            post_edges,
            reply_edges,
            user_index,
            message_index,
        })
    }

    /// Retain exactly the messages containing at least one keyword token,
    /// their transitive parent/root messages, and all incident users and
    /// edges. Idempotent.
    pub fn extract_subgraph(&self, keywords: &[String]) -> Result<Graph> {
        let kw: HashSet<&str> = keywords.iter().map(|s| s.as_str()).collect();
        let mut keep: HashSet<usize> = HashSet::new();
        for (mi, m) in self.messages.iter().enumerate() {
            if m.tokens.iter().any(|t| kw.contains(t.text.as_str())) {
                keep.insert(mi);
            }
        }
        // Transitive closure over parent and root references.
        let mut stack: Vec<usize> = keep.iter().copied().collect();
        while let Some(mi) = stack.pop() {
            let m = &self.messages[mi];
            for r in [m.parent.as_deref(), m.root.as_deref()].into_iter().flatten() {
                let pi = self.message_index[r];
                if keep.insert(pi) {
                    stack.push(pi);
                }
            }
        }
        let messages: Vec<Message> = self
            .messages
            .iter()
            .enumerate()
            .filter(|(mi, _)| keep.contains(mi))
            .map(|(_, m)| m.clone())
            .collect();
        let followers: HashMap<String, u64> = self
            .users
            .iter()
            .map(|u| (u.id.clone(), u.follower_count))
            .collect();
        Graph::from_messages(messages, &followers)
    }

    /// Symmetric per-user-pair interaction counts over reply, comment and
    /// mention messages. Keys are ordered (lexicographically smaller id
    /// first).
    pub fn interaction_counts(&self) -> BTreeMap<(String, String), u32> {
        let mut counts = BTreeMap::new();
        for e in &self.reply_edges {
            let a = &self.users[e.replier].id;
            let b = &self.users[e.target].id;
            let key = if a < b {
                (a.clone(), b.clone())
            } else {
                (b.clone(), a.clone())
            };
            *counts.entry(key).or_insert(0) += 1;
        }
        counts
    }

    /// Canonical JSONL export; re-ingesting reproduces an equal graph.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for m in &self.messages {
            let followers = self.users[self.user_index[&m.author]].follower_count;
            let wire = WireMessage::from_message(m, followers);
            out.push_str(&serde_json::to_string(&wire).expect("message serializes"));
            out.push('\n');
        }
        out
    }

    /// Size summary used by the `ingest` command.
    pub fn summary(&self) -> GraphSummary {
        GraphSummary {
            users: self.users.len(),
            messages: self.messages.len(),
            post_edges: self.post_edges.len(),
            reply_edges: self.reply_edges.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub users: usize,
    pub messages: usize,
    pub post_edges: usize,
    pub reply_edges: usize,
}

/// Noun and opinion vocabularies. Index spaces are disjoint: noun indices
/// address `nouns`, opinion indices address `opinion_words`.
#[derive(Debug, Clone, Default)]
pub struct Vocabulary {
    pub nouns: Vec<String>,
    /// (word, polarity) with polarity in {+1, -1}.
    pub opinion_words: Vec<(String, i8)>,
    noun_index: HashMap<String, usize>,
    opinion_index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn noun_idx(&self, text: &str) -> Option<usize> {
        self.noun_index.get(text).copied()
    }

    pub fn opinion_idx(&self, text: &str) -> Option<usize> {
        self.opinion_index.get(text).copied()
    }

    pub fn polarity(&self, opinion: usize) -> i8 {
        self.opinion_words[opinion].1
    }

    pub fn noun_count(&self) -> usize {
        self.nouns.len()
    }

    /// W_N = all distinct noun tokens; W_O = all lexicon words observed in
    /// the corpus.
    pub fn build(graph: &Graph, lexicon: &BTreeMap<String, i8>) -> Vocabulary {
        let mut nouns: BTreeSet<&str> = BTreeSet::new();
        let mut observed: BTreeSet<&str> = BTreeSet::new();
        for m in &graph.messages {
            for t in &m.tokens {
                if t.pos == Pos::Noun {
                    nouns.insert(&t.text);
                }
                if lexicon.contains_key(&t.text) {
                    observed.insert(&t.text);
                }
            }
        }
        let nouns: Vec<String> = nouns.into_iter().map(String::from).collect();
        let opinion_words: Vec<(String, i8)> = observed
            .into_iter()
            .map(|w| (w.to_string(), lexicon[w]))
            .collect();
        let noun_index = nouns
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        let opinion_index = opinion_words
            .iter()
            .enumerate()
            .map(|(i, (w, _))| (w.clone(), i))
            .collect();
        Vocabulary {
            nouns,
            opinion_words,
            noun_index,
            opinion_index,
        }
    }
}

/// Wire format: one message per JSONL line.
#[derive(Debug, Serialize, Deserialize)]
pub struct WireMessage {
    pub id: String,
    pub user: String,
    pub kind: String,
    pub parent: Option<String>,
    pub root: Option<String>,
    pub ts: i64,
    pub tokens: Vec<WireToken>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub followers: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WireToken {
    pub t: String,
    pub pos: Pos,
}

impl WireMessage {
    fn from_message(m: &Message, followers: u64) -> WireMessage {
        let kind = match m.kind {
            Kind::Post => "post",
            Kind::Comment => "comment",
            Kind::Reply => "reply",
            Kind::Mention => "mention",
        };
        WireMessage {
            id: m.id.clone(),
            user: m.author.clone(),
            kind: kind.to_string(),
            parent: m.parent.clone(),
            root: m.root.clone(),
            ts: m.ts,
            tokens: m
                .tokens
                .iter()
                .map(|t| WireToken {
                    t: t.text.clone(),
                    pos: t.pos,
                })
                .collect(),
            followers: Some(followers),
        }
    }
}

/// Result of ingestion: the validated graph, the vocabularies, and any
/// non-fatal warnings (skipped forwards, clamped values).
#[derive(Debug)]
pub struct Ingested {
    pub graph: Graph,
    pub vocab: Vocabulary,
    pub warnings: Vec<String>,
}

/// Load a sentiment lexicon: TSV `word<TAB>+1|-1`.
pub fn load_lexicon(path: &Path) -> Result<BTreeMap<String, i8>> {
    let file = std::fs::File::open(path).map_err(|e| ToimError::io(path.display().to_string(), e))?;
    parse_lexicon(BufReader::new(file))
}

pub fn parse_lexicon<R: Read>(reader: R) -> Result<BTreeMap<String, i8>> {
    let mut lexicon = BTreeMap::new();
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| ToimError::io("<lexicon>", e))?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.splitn(2, '\t');
        let word = parts.next().unwrap_or_default();
        let pol = parts.next().unwrap_or_default().trim();
        let polarity = match pol {
            "+1" | "1" => 1,
            "-1" => -1,
            _ => {
                return Err(ToimError::MalformedLine {
                    line: lineno + 1,
                    reason: format!("lexicon polarity {pol:?} for word {word:?}"),
                })
            }
        };
        lexicon.insert(word.to_string(), polarity);
    }
    Ok(lexicon)
}

/// Ingest a JSONL corpus plus a lexicon file.
pub fn ingest_messages(path: &Path, lexicon_path: &Path) -> Result<Ingested> {
    let file = std::fs::File::open(path).map_err(|e| ToimError::io(path.display().to_string(), e))?;
    let lexicon = load_lexicon(lexicon_path)?;
    ingest_reader(BufReader::new(file), &lexicon)
}

/// Ingest from any reader (used by tests and the synthetic generator).
pub fn ingest_reader<R: Read>(reader: R, lexicon: &BTreeMap<String, i8>) -> Result<Ingested> {
    let mut messages = Vec::new();
    let mut followers: HashMap<String, u64> = HashMap::new();
    let mut warnings = Vec::new();

    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| ToimError::io("<corpus>", e))?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let wire: WireMessage =
            serde_json::from_str(&line).map_err(|e| ToimError::MalformedLine {
                line: lineno + 1,
                reason: e.to_string(),
            })?;
        let kind = match wire.kind.as_str() {
            "post" => Kind::Post,
            "comment" => Kind::Comment,
            "reply" => Kind::Reply,
            "mention" => Kind::Mention,
            // Forwards repeat the original post verbatim; they carry no
            // opinion and never enter the graph.
            "forward" | "repost" => {
                warnings.push(format!(
                    "line {}: skipped forward message {}",
                    lineno + 1,
                    wire.id
                ));
                continue;
            }
            other => {
                return Err(ToimError::MalformedLine {
                    line: lineno + 1,
                    reason: format!("unknown kind {other:?}"),
                })
            }
        };
        if let Some(f) = wire.followers {
            let entry = followers.entry(wire.user.clone()).or_insert(0);
            *entry = (*entry).max(f);
        }
        messages.push(Message {
            id: wire.id,
            author: wire.user,
            kind,
            parent: wire.parent,
            root: wire.root,
            ts: wire.ts,
            tokens: wire
                .tokens
                .into_iter()
                .enumerate()
                .map(|(i, t)| Token {
                    text: t.t,
                    pos: t.pos,
                    position: i,
                })
                .collect(),
        });
    }

    let graph = Graph::from_messages(messages, &followers)?;
    let vocab = Vocabulary::build(&graph, lexicon);
    Ok(Ingested {
        graph,
        vocab,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::msg;

    fn three_message_fixture() -> Vec<Message> {
        vec![
            msg("m1", "A", Kind::Post, None, None, 1, &[("movie", Pos::Noun)]),
            msg(
                "m2",
                "B",
                Kind::Comment,
                Some("m1"),
                Some("m1"),
                2,
                &[("movie", Pos::Noun), ("good", Pos::Adjective)],
            ),
            msg(
                "m3",
                "C",
                Kind::Reply,
                Some("m2"),
                Some("m1"),
                3,
                &[("plot", Pos::Noun)],
            ),
        ]
    }

    #[test]
    fn three_message_fixture_edge_counts() {
        let g = Graph::from_messages(three_message_fixture(), &HashMap::new()).unwrap();
        assert_eq!(g.users.len(), 3);
        assert_eq!(g.messages.len(), 3);
        assert_eq!(g.post_edges.len(), 3);
        assert_eq!(g.reply_edges.len(), 2);
    }

    #[test]
    fn empty_file_yields_empty_graph() {
        let ing = ingest_reader(std::io::empty(), &BTreeMap::new()).unwrap();
        assert!(ing.graph.users.is_empty());
        assert!(ing.graph.messages.is_empty());
        assert!(ing.vocab.nouns.is_empty());
        assert!(ing.vocab.opinion_words.is_empty());
    }

    #[test]
    fn dangling_parent_is_an_error() {
        let msgs = vec![msg(
            "m2",
            "B",
            Kind::Comment,
            Some("gone"),
            Some("gone"),
            2,
            &[],
        )];
        let err = Graph::from_messages(msgs, &HashMap::new()).unwrap_err();
        match err {
            ToimError::DanglingParent { id, parent } => {
                assert_eq!(id, "m2");
                assert_eq!(parent, "gone");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn duplicate_message_id_is_an_error() {
        let msgs = vec![
            msg("m1", "A", Kind::Post, None, None, 1, &[]),
            msg("m1", "B", Kind::Post, None, None, 2, &[]),
        ];
        assert!(matches!(
            Graph::from_messages(msgs, &HashMap::new()),
            Err(ToimError::DuplicateMessage { .. })
        ));
    }

    #[test]
    fn forwards_are_skipped_with_warning() {
        let corpus = concat!(
            r#"{"id":"m1","user":"A","kind":"post","parent":null,"root":null,"ts":1,"tokens":[]}"#,
            "\n",
            r#"{"id":"m2","user":"B","kind":"forward","parent":"m1","root":"m1","ts":2,"tokens":[]}"#,
            "\n",
        );
        let ing = ingest_reader(corpus.as_bytes(), &BTreeMap::new()).unwrap();
        assert_eq!(ing.graph.messages.len(), 1);
        assert_eq!(ing.warnings.len(), 1);
        assert!(ing.warnings[0].contains("m2"));
    }

    #[test]
    fn malformed_line_names_line_number() {
        let corpus = concat!(
            r#"{"id":"m1","user":"A","kind":"post","parent":null,"root":null,"ts":1,"tokens":[]}"#,
            "\n",
            "{not json}\n",
        );
        let err = ingest_reader(corpus.as_bytes(), &BTreeMap::new()).unwrap_err();
        match err {
            ToimError::MalformedLine { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn subgraph_identity_and_empty() {
        let g = Graph::from_messages(three_message_fixture(), &HashMap::new()).unwrap();
        // Keywords covering every message.
        let all = g
            .extract_subgraph(&["movie".into(), "plot".into()])
            .unwrap();
        assert_eq!(all.messages.len(), 3);
        assert_eq!(all.reply_edges.len(), 2);
        // No match.
        let none = g.extract_subgraph(&["camera".into()]).unwrap();
        assert!(none.messages.is_empty());
        assert!(none.users.is_empty());
    }

    #[test]
    fn subgraph_keeps_parent_closure() {
        // Keyword hits only the comment m2; its parent post m1 and both
        // authors must be retained.
        let g = Graph::from_messages(three_message_fixture(), &HashMap::new()).unwrap();
        let sub = g.extract_subgraph(&["good".into()]).unwrap();
        let ids: Vec<&str> = sub.messages.iter().map(|m| m.id.as_str()).collect();
        assert_eq!(ids, ["m1", "m2"]);
        let users: Vec<&str> = sub.users.iter().map(|u| u.id.as_str()).collect();
        assert_eq!(users, ["A", "B"]);
        assert_eq!(sub.reply_edges.len(), 1);
    }

    #[test]
    fn subgraph_is_idempotent() {
        let g = Graph::from_messages(three_message_fixture(), &HashMap::new()).unwrap();
        let kw = vec!["good".to_string()];
        let once = g.extract_subgraph(&kw).unwrap();
        let twice = once.extract_subgraph(&kw).unwrap();
        assert_eq!(once.messages, twice.messages);
        assert_eq!(once.users, twice.users);
    }

    #[test]
    fn interaction_counts_double_reply() {
        let msgs = vec![
            msg("m1", "A", Kind::Post, None, None, 1, &[]),
            msg("m2", "B", Kind::Reply, Some("m1"), Some("m1"), 2, &[]),
            msg("m3", "B", Kind::Reply, Some("m1"), Some("m1"), 3, &[]),
        ];
        let g = Graph::from_messages(msgs, &HashMap::new()).unwrap();
        let counts = g.interaction_counts();
        assert_eq!(counts[&("A".to_string(), "B".to_string())], 2);
    }

    #[test]
    fn interaction_counts_mixed_kinds_and_zero() {
        let g = Graph::from_messages(
            vec![msg("m1", "A", Kind::Post, None, None, 1, &[])],
            &HashMap::new(),
        )
        .unwrap();
        assert!(g.interaction_counts().is_empty());

        let msgs = vec![
            msg("m1", "A", Kind::Post, None, None, 1, &[]),
            msg("m2", "B", Kind::Reply, Some("m1"), Some("m1"), 2, &[]),
            msg("m3", "B", Kind::Mention, Some("m1"), Some("m1"), 3, &[]),
        ];
        let g = Graph::from_messages(msgs, &HashMap::new()).unwrap();
        assert_eq!(g.interaction_counts()[&("A".to_string(), "B".to_string())], 2);
    }

    #[test]
    fn jsonl_round_trip_reproduces_graph() {
        let mut followers = HashMap::new();
        followers.insert("A".to_string(), 100u64);
        let g = Graph::from_messages(three_message_fixture(), &followers).unwrap();
        let exported = g.to_jsonl();
        let re = ingest_reader(exported.as_bytes(), &BTreeMap::new()).unwrap();
        assert_eq!(re.graph.messages, g.messages);
        assert_eq!(re.graph.users, g.users);
        assert_eq!(re.graph.summary(), g.summary());
    }

    #[test]
    fn reply_edge_bound_holds() {
        let g = Graph::from_messages(three_message_fixture(), &HashMap::new()).unwrap();
        let non_posts = g.messages.iter().filter(|m| !m.kind.is_post()).count();
        assert!(g.reply_edges.len() <= non_posts);
    }
}
