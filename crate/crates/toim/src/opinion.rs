//! Opinion resolution and pairwise agreement labeling.
//!
//! For every noun occurrence we look for an opinion word, first inside a
//! ±4-token same-clause window, then by statistical dependence over the
//! noun's most frequent co-occurring opinion words. Polarity comes from
//! the lexicon, flipped once per negation token in the three positions
//! before the opinion word. Adversative tokens ("but", "however") split a
//! message into clauses that the window never crosses.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use crate::corpus::{Graph, Message, Pos, Vocabulary};
use crate::error::ToimError;
use crate::Result;

/// Opinion words kept per noun: the top 20 most frequent co-occurrents.
pub const OS_LIMIT: usize = 20;

/// Token window (each side) for in-message opinion word lookup.
const WINDOW: usize = 4;

/// Negation scope: tokens preceding the opinion word.
const NEGATION_WINDOW: usize = 3;

/// Message-level co-occurrence statistics between nouns and opinion words.
#[derive(Debug, Clone, Default)]
pub struct CorpusStats {
    /// (noun, opinion word) -> (message count, summed token-position gap).
    co: HashMap<(usize, usize), (u32, u64)>,
    /// Per noun: opinion-word indices ordered by descending CO, ties
    /// broken lexicographically by word string.
    os: Vec<Vec<usize>>,
}

impl CorpusStats {
    /// Number of messages where the pair co-occurs.
    pub fn co(&self, noun: usize, opinion: usize) -> u32 {
        self.co.get(&(noun, opinion)).map_or(0, |v| v.0)
    }

    /// Mean absolute token-position gap over co-occurrences.
    pub fn avedis(&self, noun: usize, opinion: usize) -> f64 {
        match self.co.get(&(noun, opinion)) {
            Some((count, dist)) if *count > 0 => *dist as f64 / *count as f64,
            _ => 0.0,
        }
    }

    /// OS(n): the retained co-occurring opinion words for a noun.
    pub fn opinion_set(&self, noun: usize) -> &[usize] {
        &self.os[noun]
    }
}

/// Two-pass fold over all messages; parallelizable by message partition
/// since the merges are commutative counts.
pub fn build_corpus_stats(graph: &Graph, vocab: &Vocabulary) -> CorpusStats {
    let mut co: HashMap<(usize, usize), (u32, u64)> = HashMap::new();
    for m in &graph.messages {
        let mut nouns: HashMap<usize, Vec<usize>> = HashMap::new();
        let mut opinions: HashMap<usize, Vec<usize>> = HashMap::new();
        for t in &m.tokens {
            if t.pos == Pos::Noun {
                if let Some(n) = vocab.noun_idx(&t.text) {
                    nouns.entry(n).or_default().push(t.position);
                }
            }
            if let Some(o) = vocab.opinion_idx(&t.text) {
                opinions.entry(o).or_default().push(t.position);
            }
        }
        for (&n, npos) in &nouns {
            for (&o, opos) in &opinions {
                // One count per message; the gap is the closest pair of
                // occurrences within it.
                let gap = npos
                    .iter()
                    .flat_map(|&a| opos.iter().map(move |&b| a.abs_diff(b)))
                    .filter(|&d| d > 0)
                    .min();
                if let Some(gap) = gap {
                    let entry = co.entry((n, o)).or_insert((0, 0));
                    entry.0 += 1;
                    entry.1 += gap as u64;
                }
            }
        }
    }

    let mut os: Vec<Vec<usize>> = vec![Vec::new(); vocab.noun_count()];
    let mut per_noun: Vec<Vec<(u32, usize)>> = vec![Vec::new(); vocab.noun_count()];
    for (&(n, o), &(count, _)) in &co {
        per_noun[n].push((count, o));
    }
    for (n, mut entries) in per_noun.into_iter().enumerate() {
        entries.sort_by(|a, b| {
            b.0.cmp(&a.0)
                .then_with(|| vocab.opinion_words[a.1].0.cmp(&vocab.opinion_words[b.1].0))
        });
        entries.truncate(OS_LIMIT);
        os[n] = entries.into_iter().map(|(_, o)| o).collect();
    }

    CorpusStats { co, os }
}

/// Statistical dependence SD = CO / AVEDIS; 0 for pairs that never
/// co-occurred.
pub fn statistical_dependence(noun: usize, opinion: usize, stats: &CorpusStats) -> f64 {
    let co = stats.co(noun, opinion);
    if co == 0 {
        return 0.0;
    }
    co as f64 / stats.avedis(noun, opinion)
}

/// Resolved opinion for one noun occurrence. Polarity 0 encodes "no
/// opinion detected" and always pairs with `opinion_word == None`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpinionRecord {
    pub message_id: String,
    pub noun: usize,
    pub opinion_word: Option<usize>,
    pub polarity: i8,
}

fn clause_ids(message: &Message) -> Vec<usize> {
    let mut ids = Vec::with_capacity(message.tokens.len());
    let mut clause = 0usize;
    for t in &message.tokens {
        if t.pos == Pos::Adversative {
            clause += 1;
        }
        ids.push(clause);
    }
    ids
}

/// Resolve the opinion word and polarity for the noun at `noun_pos` in
/// `message`. Window rule first, statistical-dependence fallback second.
pub fn resolve_opinion(
    message: &Message,
    noun_pos: usize,
    stats: &CorpusStats,
    vocab: &Vocabulary,
    min_sd: f64,
) -> OpinionRecord {
    let message_id = message.id.clone();
    let noun = vocab
        .noun_idx(&message.tokens[noun_pos].text)
        .expect("noun occurrence is in W_N");
    let clauses = clause_ids(message);

    // (a) nearest in-window opinion word in the same clause, ties leftmost.
    let mut best: Option<(usize, usize, usize)> = None; // (distance, position, word)
    for t in &message.tokens {
        if t.position == noun_pos || clauses[t.position] != clauses[noun_pos] {
            continue;
        }
        let dist = t.position.abs_diff(noun_pos);
        if dist > WINDOW {
            continue;
        }
        if let Some(ow) = vocab.opinion_idx(&t.text) {
            let cand = (dist, t.position, ow);
            if best.map_or(true, |b| (cand.0, cand.1) < (b.0, b.1)) {
                best = Some(cand);
            }
        }
    }
    if let Some((_, ow_pos, ow)) = best {
        let mut polarity = vocab.polarity(ow);
        let neg = message.tokens[ow_pos.saturating_sub(NEGATION_WINDOW)..ow_pos]
            .iter()
            .filter(|t| t.pos == Pos::Negation && clauses[t.position] == clauses[ow_pos])
            .count();
        if neg % 2 == 1 {
            polarity = -polarity;
        }
        return OpinionRecord {
            message_id,
            noun,
            opinion_word: Some(ow),
            polarity,
        };
    }

    // (b) argmax SD over OS(n); ties by higher CO, then word order.
    let mut best: Option<(f64, u32, usize)> = None;
    for &ow in stats.opinion_set(noun) {
        let sd = statistical_dependence(noun, ow, stats);
        if sd <= min_sd && min_sd > 0.0 {
            continue;
        }
        let co = stats.co(noun, ow);
        let better = match best {
            None => true,
            Some((bsd, bco, bow)) => {
                (sd, co) > (bsd, bco)
                    || (sd == bsd
                        && co == bco
                        && vocab.opinion_words[ow].0 < vocab.opinion_words[bow].0)
            }
        };
        if better {
            best = Some((sd, co, ow));
        }
    }
    if let Some((_, _, ow)) = best {
        return OpinionRecord {
            message_id,
            noun,
            opinion_word: Some(ow),
            polarity: vocab.polarity(ow),
        };
    }

    OpinionRecord {
        message_id,
        noun,
        opinion_word: None,
        polarity: 0,
    }
}

/// Competitive-entity table: unordered noun pairs marked consistent (1) or
/// opposite (0). Missing pairs are unknown.
#[derive(Debug, Clone, Default)]
pub struct CoETable {
    map: HashMap<(String, String), bool>,
}

fn pair_key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

impl CoETable {
    pub fn insert(&mut self, a: &str, b: &str, consistent: bool) {
        self.map.insert(pair_key(a, b), consistent);
    }

    /// `Some(true)` = consistent, `Some(false)` = opposite, `None` = unknown.
    pub fn lookup(&self, a: &str, b: &str) -> Option<bool> {
        self.map.get(&pair_key(a, b)).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// TSV `nounA<TAB>nounB<TAB>0|1`.
    pub fn load(path: &Path) -> Result<CoETable> {
        let file =
            std::fs::File::open(path).map_err(|e| ToimError::io(path.display().to_string(), e))?;
        CoETable::parse(BufReader::new(file))
    }

    pub fn parse<R: Read>(reader: R) -> Result<CoETable> {
        let mut table = CoETable::default();
        for (lineno, line) in BufReader::new(reader).lines().enumerate() {
            let line = line.map_err(|e| ToimError::io("<coe>", e))?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 3 {
                return Err(ToimError::MalformedLine {
                    line: lineno + 1,
                    reason: "expected nounA<TAB>nounB<TAB>0|1".into(),
                });
            }
            let consistent = match parts[2].trim() {
                "1" => true,
                "0" => false,
                other => {
                    return Err(ToimError::MalformedLine {
                        line: lineno + 1,
                        reason: format!("CoE label {other:?}"),
                    })
                }
            };
            table.insert(parts[0], parts[1], consistent);
        }
        Ok(table)
    }
}

/// Pairwise agreement of two opinions per the competitive-entity rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgreementLabel {
    Agree,
    Disagree,
    Unknown,
}

/// Same noun: agree iff polarities match. Different nouns: the CoE entry
/// decides whether matching polarities mean agreement (consistent
/// entities) or disagreement (opposite entities).
pub fn agreement_label(
    o_i: i8,
    o_j: i8,
    n_i: &str,
    n_j: &str,
    coe: &CoETable,
) -> AgreementLabel {
    if o_i == 0 || o_j == 0 {
        return AgreementLabel::Unknown;
    }
    let same_opinion = o_i == o_j;
    if n_i == n_j {
        return if same_opinion {
            AgreementLabel::Agree
        } else {
            AgreementLabel::Disagree
        };
    }
    match coe.lookup(n_i, n_j) {
        Some(true) => {
            if same_opinion {
                AgreementLabel::Agree
            } else {
                AgreementLabel::Disagree
            }
        }
        Some(false) => {
            if same_opinion {
                AgreementLabel::Disagree
            } else {
                AgreementLabel::Agree
            }
        }
        None => AgreementLabel::Unknown,
    }
}

/// All unordered pairs of each topic's `top_n` nouns under Φ, de-duplicated
/// across topics. `top_n` larger than the vocabulary is clamped with a
/// warning.
pub fn build_coe_candidates(
    phi: &[Vec<f64>],
    nouns: &[String],
    top_n: usize,
) -> (Vec<(String, String)>, Vec<String>) {
    let mut warnings = Vec::new();
    let top_n = if top_n > nouns.len() {
        warnings.push(format!(
            "top_n {} exceeds vocabulary size {}; clamped",
            top_n,
            nouns.len()
        ));
        nouns.len()
    } else {
        top_n
    };

    let mut pairs: BTreeSet<(String, String)> = BTreeSet::new();
    for row in phi {
        let mut ranked: Vec<usize> = (0..nouns.len()).collect();
        ranked.sort_by(|&a, &b| {
            row[b]
                .partial_cmp(&row[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| nouns[a].cmp(&nouns[b]))
        });
        let top = &ranked[..top_n];
        for (i, &a) in top.iter().enumerate() {
            for &b in &top[i + 1..] {
                pairs.insert(pair_key(&nouns[a], &nouns[b]));
            }
        }
    }
    (pairs.into_iter().collect(), warnings)
}

/// Candidate export: CoE TSV shape with an empty label column.
pub fn candidates_tsv(pairs: &[(String, String)]) -> String {
    let mut out = String::new();
    for (a, b) in pairs {
        out.push_str(a);
        out.push('\t');
        out.push_str(b);
        out.push('\t');
        out.push('\n');
    }
    out
}
