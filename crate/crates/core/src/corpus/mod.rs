//! Documents, vocabulary, the TSV corpus format, batching, and a seeded
//! synthetic cross-domain corpus.
//!
//! Corpus file format, one document per line, fields separated by a single TAB:
//! label (`1`, `0` or `-`), domain (`S` or `T`), then one field per sentence
//! with tokens separated by single spaces.

mod synth;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::generator::TokenId;
pub use crate::losses::Domain;

pub use synth::{generate_synthetic, parse_roles, SynthConfig, SynthCorpus, WordPools, WordRole};

/// Out-of-vocabulary token, always id 0.
pub const OOV_TOKEN: &str = "<unk>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sentiment {
    Positive,
    Negative,
}

impl Sentiment {
    /// Index into a sentiment distribution: positive first.
    pub fn class_index(self) -> usize {
        match self {
            Sentiment::Positive => 0,
            Sentiment::Negative => 1,
        }
    }

    pub fn from_class_index(k: usize) -> Option<Self> {
        match k {
            0 => Some(Sentiment::Positive),
            1 => Some(Sentiment::Negative),
            _ => None,
        }
    }

    /// File label: `1` positive, `0` negative.
    pub fn label(self) -> &'static str {
        match self {
            Sentiment::Positive => "1",
            Sentiment::Negative => "0",
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Sentiment::Positive => Sentiment::Negative,
            Sentiment::Negative => Sentiment::Positive,
        }
    }
}

/// An unlabeled view of a document: what every training operation sees.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: String,
    pub domain: Domain,
    pub sentences: Vec<Vec<TokenId>>,
    /// Surface tokens, parallel to `sentences`.
    pub tokens: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDocument {
    pub doc: Document,
    pub sentiment: Sentiment,
}

/// Frequency-ranked token map with [`OOV_TOKEN`] reserved at id 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Keep the `limit` most frequent tokens, ties broken lexicographically.
    pub fn from_counts(counts: &HashMap<String, usize>, limit: usize) -> Self {
        let mut ranked: Vec<(&String, &usize)> = counts.iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
        let mut tokens = vec![OOV_TOKEN.to_string()];
        tokens.extend(ranked.into_iter().take(limit).map(|(t, _)| t.clone()));
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        Vocabulary { tokens, index }
    }

    /// Rebuild from tokens in id order; the first must be [`OOV_TOKEN`].
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(OOV_TOKEN) {
            return Err(Error::Usage(format!("vocabulary must start with {OOV_TOKEN}")));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.contains(char::is_whitespace) {
                return Err(Error::Parse {
                    line: i + 1,
                    detail: format!("bad vocabulary token `{t}`"),
                });
            }
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::Parse {
                    line: i + 1,
                    detail: format!("duplicate vocabulary token `{t}`"),
                });
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    /// Tokens in id order.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Number of ids, including the OOV id.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 1
    }

    pub fn id(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub vocab: Vocabulary,
    /// Labeled source documents (split into train/test by [`Corpus::split`]).
    pub source_labeled: Vec<LabeledDocument>,
    pub source_unlabeled: Vec<Document>,
    pub target_unlabeled: Vec<Document>,
    /// Labeled target documents, for evaluation only.
    pub target_test: Vec<LabeledDocument>,
}

/// Everything a training run may look at. Target documents carry no labels.
#[derive(Debug, Clone, Copy)]
pub struct TrainingView<'a> {
    pub labeled_source: &'a [LabeledDocument],
    pub unlabeled_source: &'a [Document],
    pub unlabeled_target: &'a [Document],
}

/// Held-out labeled sets used only for reporting.
#[derive(Debug, Clone, Copy)]
pub struct EvalSets<'a> {
    pub source_test: &'a [LabeledDocument],
    pub target_test: &'a [LabeledDocument],
}

/// A corpus with its labeled source documents split into train and test.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitCorpus {
    pub vocab: Vocabulary,
    pub source_train: Vec<LabeledDocument>,
    pub source_test: Vec<LabeledDocument>,
    pub source_unlabeled: Vec<Document>,
    pub target_unlabeled: Vec<Document>,
    pub target_test: Vec<LabeledDocument>,
}

impl SplitCorpus {
    pub fn training_view(&self) -> TrainingView<'_> {
        TrainingView {
            labeled_source: &self.source_train,
            unlabeled_source: &self.source_unlabeled,
            unlabeled_target: &self.target_unlabeled,
        }
    }

    pub fn eval_sets(&self) -> EvalSets<'_> {
        EvalSets {
            source_test: &self.source_test,
            target_test: &self.target_test,
        }
    }
}

impl Corpus {
    /// Seeded shuffle of the labeled source documents, the last
    /// `test_fraction` of which become the source test set.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<SplitCorpus> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::Config(format!(
                "test fraction {test_fraction} outside [0, 1)"
            )));
        }
        let mut labeled = self.source_labeled.clone();
        labeled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_test = (labeled.len() as f64 * test_fraction).round() as usize;
        let source_test = labeled.split_off(labeled.len() - n_test);
        Ok(SplitCorpus {
            vocab: self.vocab.clone(),
            source_train: labeled,
            source_test,
            source_unlabeled: self.source_unlabeled.clone(),
            target_unlabeled: self.target_unlabeled.clone(),
            target_test: self.target_test.clone(),
        })
    }

    /// The same documents with token ids taken from `vocab`.
    pub fn with_vocab(mut self, vocab: Vocabulary) -> Self {
        let remap = |d: &mut Document| {
            d.sentences = d
                .tokens
                .iter()
                .map(|s| s.iter().map(|t| vocab.id(t)).collect())
                .collect();
        };
        self.source_labeled.iter_mut().for_each(|d| remap(&mut d.doc));
        self.source_unlabeled.iter_mut().for_each(remap);
        self.target_unlabeled.iter_mut().for_each(remap);
        self.target_test.iter_mut().for_each(|d| remap(&mut d.doc));
        self.vocab = vocab;
        self
    }

    pub fn len(&self) -> usize {
        self.source_labeled.len()
            + self.source_unlabeled.len()
            + self.target_unlabeled.len()
            + self.target_test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The two corpus files' contents: source-tagged documents, then
    /// target-tagged documents.
    pub fn to_tsv(&self) -> (String, String) {
        let mut source = String::new();
        for d in &self.source_labeled {
            write_line(&mut source, Some(d.sentiment), d.doc.domain, &d.doc.tokens);
        }
        for d in &self.source_unlabeled {
            write_line(&mut source, None, d.domain, &d.tokens);
        }
        let mut target = String::new();
        for d in &self.target_unlabeled {
            write_line(&mut target, None, d.domain, &d.tokens);
        }
        for d in &self.target_test {
            write_line(&mut target, Some(d.sentiment), d.doc.domain, &d.doc.tokens);
        }
        (source, target)
    }

    pub fn save(&self, source_path: &Path, target_path: &Path) -> Result<()> {
        let (source, target) = self.to_tsv();
        std::fs::write(source_path, source).map_err(|e| Error::io(source_path, e))?;
        std::fs::write(target_path, target).map_err(|e| Error::io(target_path, e))?;
        Ok(())
    }
}

fn write_line(out: &mut String, label: Option<Sentiment>, domain: Domain, tokens: &[Vec<String>]) {
    let label = label.map_or("-", Sentiment::label);
    let domain = match domain {
        Domain::Source => "S",
        Domain::Target => "T",
    };
    let _ = write!(out, "{label}\t{domain}");
    for sentence in tokens {
        out.push('\t');
        out.push_str(&sentence.join(" "));
    }
    out.push('\n');
}

struct RawDocument {
    id: String,
    label: Option<Sentiment>,
    domain: Domain,
    tokens: Vec<Vec<String>>,
}

fn parse_lines(text: &str, file: &str, id_prefix: char) -> Result<Vec<RawDocument>> {
    let mut docs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let err = |detail: String| Error::Parse {
            line: line_no,
            detail: format!("{file}: {detail}"),
        };
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 {
            return Err(err(format!(
                "expected label, domain and at least one sentence, got {} field(s)",
                fields.len()
            )));
        }
        let label = match fields[0] {
            "1" => Some(Sentiment::Positive),
            "0" => Some(Sentiment::Negative),
            "-" => None,
            other => return Err(err(format!("unknown label `{other}`"))),
        };
        let domain = match fields[1] {
            "S" => Domain::Source,
            "T" => Domain::Target,
            other => return Err(err(format!("unknown domain tag `{other}`"))),
        };
        let mut tokens = Vec::with_capacity(fields.len() - 2);
        for (k, sentence) in fields[2..].iter().enumerate() {
            if sentence.is_empty() {
                return Err(err(format!("sentence {} is empty", k + 1)));
            }
            let words: Vec<String> = sentence.split(' ').map(str::to_string).collect();
            if words.iter().any(String::is_empty) {
                return Err(err(format!("sentence {} has an empty token", k + 1)));
            }
            tokens.push(words);
        }
        docs.push(RawDocument {
            id: format!("{id_prefix}{line_no}"),
            label,
            domain,
            tokens,
        });
    }
    Ok(docs)
}

/// Parse the two corpus files' contents and build the vocabulary from the
/// `vocab_limit` most frequent tokens across both.
pub fn parse_corpus(source_text: &str, target_text: &str, vocab_limit: usize) -> Result<Corpus> {
    let mut raw = parse_lines(source_text, "source", 's')?;
    raw.extend(parse_lines(target_text, "target", 't')?);

    let mut counts: HashMap<String, usize> = HashMap::new();
    for doc in &raw {
        for token in doc.tokens.iter().flatten() {
            *counts.entry(token.clone()).or_default() += 1;
        }
    }
    let vocab = Vocabulary::from_counts(&counts, vocab_limit);

    let mut corpus = Corpus {
        vocab,
        source_labeled: Vec::new(),
        source_unlabeled: Vec::new(),
        target_unlabeled: Vec::new(),
        target_test: Vec::new(),
    };
    for r in raw {
        let doc = Document {
            id: r.id,
            domain: r.domain,
            sentences: r
                .tokens
                .iter()
                .map(|s| s.iter().map(|t| corpus.vocab.id(t)).collect())
                .collect(),
            tokens: r.tokens,
        };
        match (r.domain, r.label) {
            (Domain::Source, Some(sentiment)) => {
                corpus.source_labeled.push(LabeledDocument { doc, sentiment })
            }
            (Domain::Source, None) => corpus.source_unlabeled.push(doc),
            (Domain::Target, None) => corpus.target_unlabeled.push(doc),
            (Domain::Target, Some(sentiment)) => {
                corpus.target_test.push(LabeledDocument { doc, sentiment })
            }
        }
    }
    Ok(corpus)
}

pub fn load_corpus(source_path: &Path, target_path: &Path, vocab_limit: usize) -> Result<Corpus> {
    let source = std::fs::read_to_string(source_path).map_err(|e| Error::io(source_path, e))?;
    let target = std::fs::read_to_string(target_path).map_err(|e| Error::io(target_path, e))?;
    parse_corpus(&source, &target, vocab_limit)
}

/// Seeded shuffle, then contiguous batches; the final partial batch is kept.
pub fn make_batches<T>(documents: &[T], batch_size: usize, seed: u64) -> Result<Vec<Vec<&T>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut order: Vec<&T> = documents.iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order.chunks(batch_size).map(<[&T]>::to_vec).collect())
}
