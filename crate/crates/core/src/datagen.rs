//! Synthetic token-aligned parallel corpora, plain-text ingestion,
//! vocabularies and batching.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{special, Batch};
use crate::tensor::NORMALIZATION_TOL;

pub const DEFAULT_PAIRS: usize = 5000;
pub const DEFAULT_VOCAB: usize = 50;
pub const DEFAULT_MIN_LEN: usize = 4;
pub const DEFAULT_MAX_LEN: usize = 12;
pub const DEFAULT_MAX_TOKENS: usize = 512;
/// Number of non-top target tokens sharing the ambiguous mass.
pub const DEFAULT_ALTERNATIVES: usize = 3;

pub const SPLIT_FILES: [&str; 6] = [
    "train.src",
    "train.tgt",
    "valid.src",
    "valid.tgt",
    "test.src",
    "test.tgt",
];
pub const VOCAB_FILE: &str = "vocab.json";

const RESERVED: [&str; special::COUNT] = ["<pad>", "<s>", "</s>", "<unk>"];
/// Stand-in for a space character in char tokenization.
pub const SPACE_TOKEN: &str = "\u{2581}";

/// Token-aligned stochastic translation: the target token at position `i`
/// is drawn from `mapping[source_i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyGrammar {
    pub source_vocab_size: usize,
    pub target_vocab_size: usize,
    /// One distribution over target tokens per source token.
    pub mapping: Vec<Vec<f64>>,
    pub min_len: usize,
    pub max_len: usize,
    /// Seed the mapping was drawn with.
    pub seed: u64,
}

impl ToyGrammar {
    /// Each source token has one preferred target with probability `p_amb`;
    /// the rest of the mass is split evenly over `DEFAULT_ALTERNATIVES`
    /// other targets. Preferred targets form a random permutation when the
    /// vocabularies have equal size.
    pub fn with_ambiguity(vocab: usize, p_amb: f64, min_len: usize, max_len: usize, seed: u64) -> Result<Self> {
        if !(p_amb > 0.0 && p_amb <= 1.0) {
            return Err(Error::Validation(format!(
                "ambiguity must lie in (0, 1], got {p_amb}"
            )));
        }
        if vocab < 2 {
            return Err(Error::Config("grammar needs at least two tokens".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut top: Vec<usize> = (0..vocab).collect();
        top.shuffle(&mut rng);
        let alternatives = DEFAULT_ALTERNATIVES.min(vocab - 1);
        let mapping = top
            .iter()
            .map(|&best| {
                let mut row = vec![0.0; vocab];
                row[best] = p_amb;
                if p_amb < 1.0 {
                    let others: Vec<usize> = (0..vocab).filter(|&t| t != best).collect();
                    let share = (1.0 - p_amb) / alternatives as f64;
                    for &t in others.choose_multiple(&mut rng, alternatives) {
                        row[t] = share;
                    }
                }
                row
            })
            .collect();
        let grammar = Self {
            source_vocab_size: vocab,
            target_vocab_size: vocab,
            mapping,
            min_len,
            max_len,
            seed,
        };
        grammar.validate()?;
        Ok(grammar)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mapping.is_empty() || self.source_vocab_size == 0 || self.target_vocab_size == 0 {
            return Err(Error::Config("grammar mapping is empty".into()));
        }
        if self.mapping.len() != self.source_vocab_size {
            return Err(Error::Config(format!(
                "mapping has {} rows for {} source tokens",
                self.mapping.len(),
                self.source_vocab_size
            )));
        }
        for (s, row) in self.mapping.iter().enumerate() {
            if row.len() != self.target_vocab_size {
                return Err(Error::Config(format!(
                    "mapping row {s} has {} entries, expected {}",
                    row.len(),
                    self.target_vocab_size
                )));
            }
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (sum - 1.0).abs() > NORMALIZATION_TOL {
                return Err(Error::Config(format!("mapping row {s} is not a distribution")));
            }
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config(format!(
                "invalid length range {}..={}",
                self.min_len, self.max_len
            )));
        }
        Ok(())
    }

    pub fn source_token(i: usize) -> String {
        format!("s{i}")
    }

    pub fn target_token(i: usize) -> String {
        format!("t{i}")
    }

    /// Largest probability in the mapping row of each source token.
    pub fn top_probability(&self, source: usize) -> f64 {
        self.mapping[source].iter().cloned().fold(0.0, f64::max)
    }
}

/// Token-string to id map with the four reserved ids first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Ids ordered by frequency (descending), then lexicographically. At
    /// most `max_vocab` non-reserved tokens are kept.
    pub fn build<'a, I: IntoIterator<Item = &'a str>>(tokens: I, max_vocab: usize) -> Self {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for t in tokens {
            if !RESERVED.contains(&t) {
                *counts.entry(t).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        ranked.truncate(max_vocab);
        let all = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(t, _)| t.to_string()))
            .collect();
        Self::from_tokens(all).expect("reserved prefix and unique tokens")
    }

    /// Rebuilds from tokens listed in id order.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < special::COUNT || tokens[..special::COUNT] != RESERVED {
            return Err(Error::Format("vocabulary must start with the reserved tokens".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(special::UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    /// Tokens for `ids`, dropping PAD/BOS/EOS but keeping `<unk>`.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&i| i != special::PAD && i != special::BOS && i != special::EOS)
            .map(|&i| self.token(i).unwrap_or(RESERVED[special::UNK]).to_string())
            .collect()
    }

    /// SHA-256 over the tokens in id order.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }

    pub fn to_json(&self) -> String {
        let map: serde_json::Map<String, serde_json::Value> = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), serde_json::Value::from(i)))
            .collect();
        serde_json::to_string_pretty(&map).expect("map serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let map: HashMap<String, usize> =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("vocabulary json: {e}")))?;
        let mut tokens = vec![None; map.len()];
        for (t, i) in map {
            match tokens.get_mut(i) {
                Some(slot @ None) => *slot = Some(t),
                _ => return Err(Error::Format(format!("vocabulary ids are not 0..{}", tokens.len()))),
            }
        }
        Self::from_tokens(tokens.into_iter().map(Option::unwrap).collect())
    }
}

/// One sentence pair as token strings.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentencePair {
    pub source: Vec<String>,
    pub target: Vec<String>,
}

impl SentencePair {
    /// Source ids ending with EOS.
    pub fn source_ids(&self, vocab: &Vocabulary) -> Vec<usize> {
        let mut ids = vocab.encode(&self.source);
        ids.push(special::EOS);
        ids
    }

    /// `BOS target.. EOS`.
    pub fn target_ids(&self, vocab: &Vocabulary) -> Vec<usize> {
        let mut ids = Vec::with_capacity(self.target.len() + 2);
        ids.push(special::BOS);
        ids.extend(vocab.encode(&self.target));
        ids.push(special::EOS);
        ids
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParallelCorpus {
    pub vocab: Vocabulary,
    pub train: Vec<SentencePair>,
    pub valid: Vec<SentencePair>,
    pub test: Vec<SentencePair>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl ParallelCorpus {
    /// 80/10/10 split in the given order, with the vocabulary built from
    /// every pair.
    pub fn from_pairs(pairs: Vec<SentencePair>, vocab: Vocabulary) -> Self {
        let n = pairs.len();
        let n_train = n * 8 / 10;
        let n_valid = n / 10;
        let mut it = pairs.into_iter();
        let train = it.by_ref().take(n_train).collect();
        let valid = it.by_ref().take(n_valid).collect();
        let test = it.collect();
        Self {
            vocab,
            train,
            valid,
            test,
        }
    }

    pub fn split(&self, split: Split) -> &[SentencePair] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    /// Frequency of every vocabulary id among training targets (EOS
    /// included once per sentence).
    pub fn target_unigram_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.vocab.len()];
        for pair in &self.train {
            for id in &pair.target_ids(&self.vocab)[1..] {
                counts[*id] += 1;
            }
        }
        counts
    }

    /// Writes the six split files and `vocab.json` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let splits = [&self.train, &self.valid, &self.test];
        for (i, pairs) in splits.iter().enumerate() {
            let src: String = pairs.iter().map(|p| p.source.join(" ") + "\n").collect();
            let tgt: String = pairs.iter().map(|p| p.target.join(" ") + "\n").collect();
            write_file(&dir.join(SPLIT_FILES[2 * i]), src.as_bytes())?;
            write_file(&dir.join(SPLIT_FILES[2 * i + 1]), tgt.as_bytes())?;
        }
        write_file(&dir.join(VOCAB_FILE), self.vocab.to_json().as_bytes())
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let vocab_path = dir.join(VOCAB_FILE);
        let vocab = Vocabulary::from_json(&read_file(&vocab_path)?)?;
        let mut splits = Vec::with_capacity(3);
        for i in 0..3 {
            let src_path = dir.join(SPLIT_FILES[2 * i]);
            let tgt_path = dir.join(SPLIT_FILES[2 * i + 1]);
            let src = read_file(&src_path)?;
            let tgt = read_file(&tgt_path)?;
            splits.push(align_lines(&src, &tgt, Tokenization::Whitespace, &src_path, &tgt_path)?);
        }
        let test = splits.pop().expect("three splits");
        let valid = splits.pop().expect("three splits");
        let train = splits.pop().expect("three splits");
        Ok(Self {
            vocab,
            train,
            valid,
            test,
        })
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Samples `n_pairs` sentence pairs from the grammar and splits them
/// 80/10/10. The vocabulary is built from the training split.
pub fn generate_corpus(grammar: &ToyGrammar, n_pairs: usize, seed: u64) -> Result<ParallelCorpus> {
    grammar.validate()?;
    if n_pairs < 10 {
        return Err(Error::Validation(format!("need at least 10 pairs, got {n_pairs}")));
    }
    let rows = grammar
        .mapping
        .iter()
        .map(|row| WeightedIndex::new(row).map_err(|e| Error::Config(format!("mapping row: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let len = rng.gen_range(grammar.min_len..=grammar.max_len);
        let mut source = Vec::with_capacity(len);
        let mut target = Vec::with_capacity(len);
        for _ in 0..len {
            let s = rng.gen_range(0..grammar.source_vocab_size);
            let t = rows[s].sample(&mut rng);
            source.push(ToyGrammar::source_token(s));
            target.push(ToyGrammar::target_token(t));
        }
        pairs.push(SentencePair { source, target });
    }
    let mut corpus = ParallelCorpus::from_pairs(pairs, Vocabulary::build(std::iter::empty(), 0));
    let tokens = corpus
        .train
        .iter()
        .flat_map(|p| p.source.iter().chain(&p.target).map(String::as_str));
    corpus.vocab = Vocabulary::build(tokens, usize::MAX);
    Ok(corpus)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tokenization {
    Whitespace,
    Char,
}

pub fn tokenize(line: &str, mode: Tokenization) -> Vec<String> {
    match mode {
        Tokenization::Whitespace => line.split_whitespace().map(str::to_string).collect(),
        Tokenization::Char => line
            .trim_end_matches(['\r', '\n'])
            .chars()
            .map(|c| if c == ' ' { SPACE_TOKEN.to_string() } else { c.to_string() })
            .collect(),
    }
}

pub fn detokenize<S: AsRef<str>>(tokens: &[S], mode: Tokenization) -> String {
    match mode {
        Tokenization::Whitespace => tokens.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(" "),
        Tokenization::Char => tokens
            .iter()
            .map(|t| if t.as_ref() == SPACE_TOKEN { " " } else { t.as_ref() })
            .collect(),
    }
}

fn align_lines(src: &str, tgt: &str, mode: Tokenization, src_path: &Path, tgt_path: &Path) -> Result<Vec<SentencePair>> {
    let src_lines: Vec<&str> = src.lines().collect();
    let tgt_lines: Vec<&str> = tgt.lines().collect();
    if src_lines.len() != tgt_lines.len() {
        let shorter = src_lines.len().min(tgt_lines.len());
        return Err(Error::Ingestion(format!(
            "{} has {} lines but {} has {}; first unmatched line is {}",
            src_path.display(),
            src_lines.len(),
            tgt_path.display(),
            tgt_lines.len(),
            shorter + 1
        )));
    }
    let mut pairs = Vec::with_capacity(src_lines.len());
    for (i, (s, t)) in src_lines.iter().zip(&tgt_lines).enumerate() {
        let pair = SentencePair {
            source: tokenize(s, mode),
            target: tokenize(t, mode),
        };
        if pair.source.is_empty() || pair.target.is_empty() {
            return Err(Error::Ingestion(format!(
                "line {} is empty on the {} side",
                i + 1,
                if pair.source.is_empty() { "source" } else { "target" }
            )));
        }
        pairs.push(pair);
    }
    Ok(pairs)
}

/// Line-aligned text files to sentence pairs plus a joint vocabulary of at
/// most `max_vocab` non-reserved tokens. All pairs land in `train`; use
/// [`ParallelCorpus::from_pairs`] on them to split.
pub fn ingest_parallel_text(
    source_path: &Path,
    target_path: &Path,
    tokenization: Tokenization,
    max_vocab: usize,
) -> Result<ParallelCorpus> {
    let src = read_file(source_path)?;
    let tgt = read_file(target_path)?;
    let pairs = align_lines(&src, &tgt, tokenization, source_path, target_path)?;
    if pairs.is_empty() {
        return Err(Error::Ingestion("no sentence pairs found".into()));
    }
    let vocab = Vocabulary::build(
        pairs
            .iter()
            .flat_map(|p| p.source.iter().chain(&p.target).map(String::as_str)),
        max_vocab,
    );
    Ok(ParallelCorpus {
        vocab,
        train: pairs,
        valid: Vec::new(),
        test: Vec::new(),
    })
}

/// Batches plus the number of pairs too long for `max_tokens`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchSet {
    pub batches: Vec<Batch>,
    pub skipped: usize,
}

impl BatchSet {
    pub fn num_tokens(&self) -> usize {
        self.batches
            .iter()
            .map(|b| b.num_source_tokens() + b.num_target_tokens())
            .sum()
    }
}

/// Groups pairs of similar length into padded batches with
/// `batch_size * (source_len + target_len) <= max_tokens`, then shuffles
/// batch order with `seed`.
pub fn make_batches(pairs: &[SentencePair], vocab: &Vocabulary, max_tokens: usize, seed: u64) -> Result<BatchSet> {
    let encoded: Vec<(Vec<usize>, Vec<usize>)> = pairs
        .iter()
        .map(|p| (p.source_ids(vocab), p.target_ids(vocab)))
        .collect();
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    order.sort_by_key(|&i| (encoded[i].0.len(), encoded[i].1.len(), i));

    let mut skipped = 0;
    let mut batches = Vec::new();
    let mut group: Vec<usize> = Vec::new();
    let (mut src_len, mut tgt_len) = (0, 0);
    for i in order {
        let (s, t) = (&encoded[i].0, &encoded[i].1);
        if s.len() + t.len() > max_tokens {
            skipped += 1;
            continue;
        }
        let (ns, nt) = (src_len.max(s.len()), tgt_len.max(t.len()));
        if !group.is_empty() && (group.len() + 1) * (ns + nt) > max_tokens {
            batches.push(pack(&encoded, &group)?);
            group.clear();
            (src_len, tgt_len) = (s.len(), t.len());
        } else {
            (src_len, tgt_len) = (ns, nt);
        }
        group.push(i);
    }
    if !group.is_empty() {
        batches.push(pack(&encoded, &group)?);
    }
    batches.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(BatchSet { batches, skipped })
}

fn pack(encoded: &[(Vec<usize>, Vec<usize>)], group: &[usize]) -> Result<Batch> {
    let sources: Vec<Vec<usize>> = group.iter().map(|&i| encoded[i].0.clone()).collect();
    let targets: Vec<Vec<usize>> = group.iter().map(|&i| encoded[i].1.clone()).collect();
    Batch::from_sequences(&sources, &targets)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grammar(p: f64) -> ToyGrammar {
        ToyGrammar::with_ambiguity(DEFAULT_VOCAB, p, DEFAULT_MIN_LEN, DEFAULT_MAX_LEN, 7).unwrap()
    }

    #[test]
    fn mapping_rows_are_distributions() {
        let g = grammar(0.7);
        g.validate().unwrap();
        for s in 0..g.source_vocab_size {
            assert!((g.top_probability(s) - 0.7).abs() < 1e-15);
        }
        assert!(ToyGrammar::with_ambiguity(10, 1.5, 4, 12, 0).is_err());
        assert!(ToyGrammar::with_ambiguity(10, 0.0, 4, 12, 0).is_err());
    }

    #[test]
    fn empty_mapping_is_a_config_error() {
        let mut g = grammar(0.7);
        g.mapping.clear();
        assert!(matches!(generate_corpus(&g, 100, 0), Err(Error::Config(_))));
        assert!(generate_corpus(&grammar(0.7), 9, 0).is_err());
    }

    #[test]
    fn deterministic_token_translation_at_full_confidence() {
        let g = grammar(1.0);
        let corpus = generate_corpus(&g, 50, 1).unwrap();
        for pair in &corpus.train {
            assert_eq!(pair.source.len(), pair.target.len());
            for (s, t) in pair.source.iter().zip(&pair.target) {
                let s: usize = s[1..].parse().unwrap();
                let t: usize = t[1..].parse().unwrap();
                assert_eq!(g.mapping[s][t], 1.0);
            }
        }
    }

    #[test]
    fn empirical_top_frequency_matches_ambiguity() {
        let g = grammar(0.7);
        let corpus = generate_corpus(&g, 1250, 3).unwrap();
        let (mut hits, mut total) = (0usize, 0usize);
        for pair in corpus.train.iter().chain(&corpus.valid).chain(&corpus.test) {
            for (s, t) in pair.source.iter().zip(&pair.target) {
                let s: usize = s[1..].parse().unwrap();
                let t: usize = t[1..].parse().unwrap();
                let best = (0..g.target_vocab_size)
                    .max_by(|&a, &b| g.mapping[s][a].total_cmp(&g.mapping[s][b]))
                    .unwrap();
                hits += usize::from(t == best);
                total += 1;
            }
        }
        assert!(total > 10_000);
        let freq = hits as f64 / total as f64;
        assert!((freq - 0.7).abs() < 0.02, "{freq}");
    }

    #[test]
    fn corpus_is_seed_determined_and_split() {
        let g = grammar(0.7);
        let a = generate_corpus(&g, 100, 5).unwrap();
        let b = generate_corpus(&g, 100, 5).unwrap();
        let c = generate_corpus(&g, 100, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!((a.train.len(), a.valid.len(), a.test.len()), (80, 10, 10));
    }

    #[test]
    fn vocabulary_order_and_truncation() {
        let v = Vocabulary::build("b a c b a b d".split(' '), 2);
        assert_eq!(&v.tokens()[4..], ["b", "a"]);
        assert_eq!(v.id("c"), special::UNK);
        assert_eq!(v.id("b"), 4);
        let back = Vocabulary::from_json(&v.to_json()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.fingerprint(), v.fingerprint());
        assert!(Vocabulary::from_tokens(vec!["x".into()]).is_err());
    }

    #[test]
    fn char_tokenization_round_trips() {
        let line = "ab c";
        let toks = tokenize(line, Tokenization::Char);
        assert_eq!(toks.len(), 4);
        assert_eq!(detokenize(&toks, Tokenization::Char), line);
    }

    #[test]
    fn batching_conserves_tokens_and_respects_budget() {
        let corpus = generate_corpus(&grammar(0.7), 200, 2).unwrap();
        let set = make_batches(&corpus.train, &corpus.vocab, 128, 9).unwrap();
        let total: usize = corpus
            .train
            .iter()
            .map(|p| p.source.len() + 1 + p.target.len() + 2)
            .sum();
        assert_eq!(set.skipped, 0);
        assert_eq!(set.num_tokens(), total);
        for b in &set.batches {
            assert!(b.batch_size * (b.source_len + b.target_len) <= 128);
        }
        assert_eq!(set, make_batches(&corpus.train, &corpus.vocab, 128, 9).unwrap());
    }

    #[test]
    fn oversized_pairs_are_skipped() {
        let corpus = generate_corpus(&grammar(0.7), 50, 2).unwrap();
        let set = make_batches(&corpus.train, &corpus.vocab, 16, 0).unwrap();
        let too_long = corpus.train.iter().filter(|p| 2 * p.source.len() + 3 > 16).count();
        assert_eq!(set.skipped, too_long);
    }
}
