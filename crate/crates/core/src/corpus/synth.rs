use std::collections::HashSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{parse_corpus, write_line, Corpus, Domain, Sentiment};
use crate::error::{Error, Result};

/// Planted role of a vocabulary word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WordRole {
    PivotPos,
    PivotNeg,
    SrcPos,
    SrcNeg,
    TgtPos,
    TgtNeg,
    Filler,
}

impl WordRole {
    pub const ALL: [WordRole; 7] = [
        WordRole::PivotPos,
        WordRole::PivotNeg,
        WordRole::SrcPos,
        WordRole::SrcNeg,
        WordRole::TgtPos,
        WordRole::TgtNeg,
        WordRole::Filler,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            WordRole::PivotPos => "PIVOT_POS",
            WordRole::PivotNeg => "PIVOT_NEG",
            WordRole::SrcPos => "SRC_POS",
            WordRole::SrcNeg => "SRC_NEG",
            WordRole::TgtPos => "TGT_POS",
            WordRole::TgtNeg => "TGT_NEG",
            WordRole::Filler => "FILLER",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        WordRole::ALL.into_iter().find(|r| r.as_str() == s)
    }

    pub fn is_pivot(self) -> bool {
        matches!(self, WordRole::PivotPos | WordRole::PivotNeg)
    }

    pub fn is_source_only(self) -> bool {
        matches!(self, WordRole::SrcPos | WordRole::SrcNeg)
    }

    pub fn is_target_only(self) -> bool {
        matches!(self, WordRole::TgtPos | WordRole::TgtNeg)
    }
}

/// Disjoint word pools, one per role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordPools {
    pub pivot_pos: Vec<String>,
    pub pivot_neg: Vec<String>,
    pub source_pos: Vec<String>,
    pub source_neg: Vec<String>,
    pub target_pos: Vec<String>,
    pub target_neg: Vec<String>,
    /// The first half leans towards source documents, the second towards target.
    pub filler: Vec<String>,
}

impl WordPools {
    /// Pools of generated names such as `pivpos3` or `fill17`.
    pub fn numbered(pivots: usize, source_only: usize, target_only: usize, filler: usize) -> Self {
        let names = |prefix: &str, n: usize| (0..n).map(|i| format!("{prefix}{i}")).collect();
        WordPools {
            pivot_pos: names("pivpos", pivots),
            pivot_neg: names("pivneg", pivots),
            source_pos: names("srcpos", source_only),
            source_neg: names("srcneg", source_only),
            target_pos: names("tgtpos", target_only),
            target_neg: names("tgtneg", target_only),
            filler: names("fill", filler),
        }
    }

    fn by_role(&self) -> [(WordRole, &Vec<String>); 7] {
        [
            (WordRole::PivotPos, &self.pivot_pos),
            (WordRole::PivotNeg, &self.pivot_neg),
            (WordRole::SrcPos, &self.source_pos),
            (WordRole::SrcNeg, &self.source_neg),
            (WordRole::TgtPos, &self.target_pos),
            (WordRole::TgtNeg, &self.target_neg),
            (WordRole::Filler, &self.filler),
        ]
    }

    fn sentiment_pool(&self, domain: Domain, pivot: bool, polarity: Sentiment) -> &[String] {
        match (pivot, domain, polarity) {
            (true, _, Sentiment::Positive) => &self.pivot_pos,
            (true, _, Sentiment::Negative) => &self.pivot_neg,
            (false, Domain::Source, Sentiment::Positive) => &self.source_pos,
            (false, Domain::Source, Sentiment::Negative) => &self.source_neg,
            (false, Domain::Target, Sentiment::Positive) => &self.target_pos,
            (false, Domain::Target, Sentiment::Negative) => &self.target_neg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub pools: WordPools,
    pub source_labeled: usize,
    pub source_unlabeled: usize,
    pub target_unlabeled: usize,
    pub target_test: usize,
    /// Inclusive range of sentences per document.
    pub sentences_per_doc: (usize, usize),
    /// Inclusive range of words per sentence.
    pub words_per_sentence: (usize, usize),
    /// Chance that a word slot holds a sentiment word.
    pub sentiment_prob: f64,
    /// Chance that a sentiment word comes from the pivot pools.
    pub pivot_prob: f64,
    /// Chance that a sentiment word disagrees with the document's intended polarity.
    pub minority_prob: f64,
    /// Chance that a filler word comes from the half of the filler pool that
    /// leans towards the document's domain.
    pub filler_skew: f64,
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            pools: WordPools::numbered(10, 15, 15, 120),
            source_labeled: 400,
            source_unlabeled: 400,
            target_unlabeled: 400,
            target_test: 200,
            sentences_per_doc: (2, 4),
            words_per_sentence: (4, 8),
            sentiment_prob: 0.25,
            pivot_prob: 0.2,
            minority_prob: 0.15,
            filler_skew: 0.8,
            label_noise: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (role, pool) in self.pools.by_role() {
            if pool.is_empty() {
                return Err(Error::Config(format!("pool {} is empty", role.as_str())));
            }
            if role == WordRole::Filler && pool.len() < 2 {
                return Err(Error::Config("need at least two filler words".into()));
            }
            for w in pool {
                if w.is_empty() || w.contains(['\t', '\n', ' ']) {
                    return Err(Error::Config(format!("invalid word {w:?}")));
                }
                if !seen.insert(w.as_str()) {
                    return Err(Error::Config(format!("word `{w}` appears in more than one pool")));
                }
            }
        }
        for (name, p) in [
            ("sentiment_prob", self.sentiment_prob),
            ("minority_prob", self.minority_prob),
            ("filler_skew", self.filler_skew),
            ("label_noise", self.label_noise),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} outside [0, 1]")));
            }
        }
        if !(self.pivot_prob > 0.0 && self.pivot_prob < 1.0) {
            return Err(Error::Config(format!(
                "pivot_prob = {} must lie strictly between 0 and 1",
                self.pivot_prob
            )));
        }
        if self.minority_prob >= 0.5 {
            return Err(Error::Config("minority_prob must be below 0.5".into()));
        }
        for (name, (lo, hi)) in [
            ("sentences_per_doc", self.sentences_per_doc),
            ("words_per_sentence", self.words_per_sentence),
        ] {
            if lo == 0 || lo > hi {
                return Err(Error::Config(format!("{name} range ({lo}, {hi}) is invalid")));
            }
        }
        Ok(())
    }
}

/// A generated corpus, its file contents, and the planted role of every word.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub corpus: Corpus,
    pub source_tsv: String,
    pub target_tsv: String,
    pub roles: Vec<(String, WordRole)>,
}

impl SynthCorpus {
    /// `word<TAB>role` lines.
    pub fn roles_tsv(&self) -> String {
        let mut out = String::new();
        for (w, r) in &self.roles {
            let _ = writeln!(out, "{w}\t{}", r.as_str());
        }
        out
    }

    pub fn role_of(&self, word: &str) -> Option<WordRole> {
        self.roles.iter().find(|(w, _)| w == word).map(|(_, r)| *r)
    }
}

pub fn parse_roles(text: &str) -> Result<Vec<(String, WordRole)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let (word, role) = line.split_once('\t').ok_or_else(|| Error::Parse {
                line: i + 1,
                detail: "expected word<TAB>role".into(),
            })?;
            let role = WordRole::parse(role).ok_or_else(|| Error::Parse {
                line: i + 1,
                detail: format!("unknown role `{role}`"),
            })?;
            Ok((word.to_string(), role))
        })
        .collect()
}

enum Slot {
    Filler,
    Sentiment(Sentiment),
}

struct DocumentSampler<'a> {
    config: &'a SynthConfig,
    rng: ChaCha8Rng,
}

impl DocumentSampler<'_> {
    fn sentiment_word(&mut self, domain: Domain, polarity: Sentiment) -> String {
        let pivot = self.rng.gen_bool(self.config.pivot_prob);
        self.config
            .pools
            .sentiment_pool(domain, pivot, polarity)
            .choose(&mut self.rng)
            .expect("validated non-empty")
            .clone()
    }

    fn filler_word(&mut self, domain: Domain) -> String {
        let filler = &self.config.pools.filler;
        let half = filler.len() / 2;
        let (near, far) = match domain {
            Domain::Source => (&filler[..half], &filler[half..]),
            Domain::Target => (&filler[half..], &filler[..half]),
        };
        let pool = if self.rng.gen_bool(self.config.filler_skew) {
            near
        } else {
            far
        };
        pool.choose(&mut self.rng).expect("non-empty half").clone()
    }

    /// Tokens and the label (majority polarity of the planted sentiment words,
    /// possibly flipped by label noise).
    fn document(&mut self, domain: Domain) -> (Vec<Vec<String>>, Sentiment) {
        let intended = if self.rng.gen_bool(0.5) {
            Sentiment::Positive
        } else {
            Sentiment::Negative
        };
        let (smin, smax) = self.config.sentences_per_doc;
        let (wmin, wmax) = self.config.words_per_sentence;
        let n_sent = self.rng.gen_range(smin..=smax);
        let mut slots: Vec<Vec<Slot>> = (0..n_sent)
            .map(|_| {
                let n_words = self.rng.gen_range(wmin..=wmax);
                (0..n_words)
                    .map(|_| {
                        if self.rng.gen_bool(self.config.sentiment_prob) {
                            let polarity = if self.rng.gen_bool(self.config.minority_prob) {
                                intended.flipped()
                            } else {
                                intended
                            };
                            Slot::Sentiment(polarity)
                        } else {
                            Slot::Filler
                        }
                    })
                    .collect()
            })
            .collect();

        // Break ties (including documents with no sentiment words) towards the
        // intended polarity so every document has a strict majority.
        loop {
            let (pos, neg) = slots.iter().flatten().fold((0, 0), |(p, n), s| match s {
                Slot::Sentiment(Sentiment::Positive) => (p + 1, n),
                Slot::Sentiment(Sentiment::Negative) => (p, n + 1),
                Slot::Filler => (p, n),
            });
            if pos != neg {
                break;
            }
            let i = self.rng.gen_range(0..slots.len());
            let j = self.rng.gen_range(0..slots[i].len());
            slots[i][j] = Slot::Sentiment(intended);
        }
        let (pos, neg) = slots.iter().flatten().fold((0, 0), |(p, n), s| match s {
            Slot::Sentiment(Sentiment::Positive) => (p + 1, n),
            Slot::Sentiment(Sentiment::Negative) => (p, n + 1),
            Slot::Filler => (p, n),
        });
        let majority = if pos > neg {
            Sentiment::Positive
        } else {
            Sentiment::Negative
        };
        let label = if self.rng.gen_bool(self.config.label_noise) {
            majority.flipped()
        } else {
            majority
        };

        let tokens = slots
            .into_iter()
            .map(|sentence| {
                sentence
                    .into_iter()
                    .map(|slot| match slot {
                        Slot::Filler => self.filler_word(domain),
                        Slot::Sentiment(p) => self.sentiment_word(domain, p),
                    })
                    .collect()
            })
            .collect();
        (tokens, label)
    }
}

/// Generate a seeded cross-domain corpus with planted pivot and non-pivot
/// sentiment words. Target documents outside the test set are written
/// unlabeled.
pub fn generate_synthetic(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let mut sampler = DocumentSampler {
        config,
        rng: ChaCha8Rng::seed_from_u64(config.seed),
    };
    let mut source_tsv = String::new();
    for _ in 0..config.source_labeled {
        let (tokens, label) = sampler.document(Domain::Source);
        write_line(&mut source_tsv, Some(label), Domain::Source, &tokens);
    }
    for _ in 0..config.source_unlabeled {
        let (tokens, _) = sampler.document(Domain::Source);
        write_line(&mut source_tsv, None, Domain::Source, &tokens);
    }
    let mut target_tsv = String::new();
    for _ in 0..config.target_unlabeled {
        let (tokens, _) = sampler.document(Domain::Target);
        write_line(&mut target_tsv, None, Domain::Target, &tokens);
    }
    for _ in 0..config.target_test {
        let (tokens, label) = sampler.document(Domain::Target);
        write_line(&mut target_tsv, Some(label), Domain::Target, &tokens);
    }
    let corpus = parse_corpus(&source_tsv, &target_tsv, usize::MAX)?;
    let roles = config
        .pools
        .by_role()
        .into_iter()
        .flat_map(|(role, pool)| pool.iter().map(move |w| (w.clone(), role)))
        .collect();
    Ok(SynthCorpus {
        corpus,
        source_tsv,
        target_tsv,
        roles,
    })
}
