use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::model::Hagan;

/// Mean combined attention of one word type.
#[derive(Debug, Clone, PartialEq)]
pub struct WordScore {
    pub word: String,
    pub score: f64,
    pub count: usize,
}

/// Word scores sorted by word.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WordScoreTable {
    pub entries: Vec<WordScore>,
}

impl WordScoreTable {
    pub fn get(&self, word: &str) -> Option<&WordScore> {
        self.entries
            .binary_search_by(|e| e.word.as_str().cmp(word))
            .ok()
            .map(|i| &self.entries[i])
    }

    /// TSV `word<TAB>score<TAB>count`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let _ = writeln!(out, "{}\t{}\t{}", e.word, e.score, e.count);
        }
        out
    }
}

pub fn parse_word_scores(text: &str) -> Result<WordScoreTable> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let err = |detail: &str| Error::Parse {
            line: i + 1,
            detail: detail.to_string(),
        };
        let fields: Vec<&str> = line.split('\t').collect();
        let [word, score, count] = fields[..] else {
            return Err(err("expected word, score and count"));
        };
        let score: f64 = score.parse().map_err(|_| err("bad score"))?;
        let count: usize = count.parse().map_err(|_| err("bad count"))?;
        if !(0.0..=1.0).contains(&score) || count == 0 {
            return Err(err("score outside [0, 1] or zero count"));
        }
        entries.push(WordScore {
            word: word.to_string(),
            score,
            count,
        });
    }
    entries.sort_by(|a, b| a.word.cmp(&b.word));
    if entries.windows(2).any(|w| w[0].word == w[1].word) {
        return Err(Error::Parse {
            line: 0,
            detail: "duplicate word in score table".into(),
        });
    }
    Ok(WordScoreTable { entries })
}

/// Mean of `word attention × sentence attention` per word over every
/// occurrence in `docs`, in eval mode.
pub fn extract_word_scores<'a>(
    model: &Hagan,
    docs: impl IntoIterator<Item = &'a Document>,
) -> Result<WordScoreTable> {
    let docs: Vec<&Document> = docs.into_iter().collect();
    if docs.is_empty() {
        return Err(Error::Usage("word scores over an empty document set".into()));
    }
    let preds = model.predict_all(docs.iter().copied())?;
    let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for (doc, pred) in docs.iter().zip(&preds) {
        for (words, scores) in doc.tokens.iter().zip(pred.attention.combined()) {
            for (w, s) in words.iter().zip(scores) {
                let e = acc.entry(w.as_str()).or_insert((0.0, 0));
                e.0 += s;
                e.1 += 1;
            }
        }
    }
    Ok(WordScoreTable {
        entries: acc
            .into_iter()
            .map(|(word, (total, count))| WordScore {
                word: word.to_string(),
                score: total / count as f64,
                count,
            })
            .collect(),
    })
}

/// One TSV line per word occurrence:
/// `doc_id sent_idx word_idx token word_attn sent_attn combined`.
pub fn attention_dump<'a>(
    model: &Hagan,
    docs: impl IntoIterator<Item = &'a Document>,
) -> Result<String> {
    let docs: Vec<&Document> = docs.into_iter().collect();
    let preds = model.predict_all(docs.iter().copied())?;
    let mut out = String::new();
    for (doc, pred) in docs.iter().zip(&preds) {
        let att = &pred.attention;
        for (i, (words, weights)) in doc.tokens.iter().zip(&att.word).enumerate() {
            for (j, (w, a)) in words.iter().zip(weights).enumerate() {
                let s = att.sentence[i];
                let _ = writeln!(out, "{}\t{i}\t{j}\t{w}\t{a}\t{s}\t{}", doc.id, a * s);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_round_trips_and_rejects_bad_rows() {
        let table = WordScoreTable {
            entries: vec![
                WordScore {
                    word: "a".into(),
                    score: 0.25,
                    count: 3,
                },
                WordScore {
                    word: "b".into(),
                    score: 0.1 + 0.2,
                    count: 1,
                },
            ],
        };
        assert_eq!(parse_word_scores(&table.to_tsv()).unwrap(), table);
        assert_eq!(table.get("b").unwrap().count, 1);
        assert!(table.get("c").is_none());
        assert!(matches!(parse_word_scores("a\t2.0\t1\n"), Err(Error::Parse { line: 1, .. })));
        assert!(parse_word_scores("a\t0.5\n").is_err());
        assert!(parse_word_scores("a\t0.5\t1\na\t0.2\t1\n").is_err());
    }
}
