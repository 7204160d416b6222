//! Keyword extraction and tweet vectorization via a pretrained word-vector
//! table.
//!
//! The vector file format is plain UTF-8 text: a header line `N d`, then one
//! line per token, `token f_1 ... f_d`, space-separated with `.` as the
//! decimal point.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::stopwords::StopWords;

#[derive(Debug, Clone)]
pub struct VectorTable {
    dimension: usize,
    vectors: HashMap<String, Vec<f64>>,
    /// Character n-gram hashing fallback for out-of-vocabulary tokens;
    /// off by default for determinism against the shipped table.
    pub subword_fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TweetVector {
    pub tweet_id: String,
    pub vector: Vec<f64>,
    pub keyword_count: usize,
}

fn trim_token(tok: &str) -> &str {
    tok.trim_matches(|c: char| !c.is_alphanumeric())
}

fn is_capitalized(tok: &str) -> bool {
    tok.chars().next().is_some_and(|c| c.is_uppercase())
}

/// Extract keywords from tweet text: hashtags, mentions, and maximal runs
/// of consecutive capitalized tokens that are not stop words. Lowercased,
/// order preserved, duplicates kept.
pub fn extract_keywords(text: &str, stop: &StopWords) -> Vec<String> {
    let mut out = Vec::new();
    let mut run: Vec<String> = Vec::new();
    let flush = |run: &mut Vec<String>, out: &mut Vec<String>| {
        if !run.is_empty() {
            out.push(run.join(" "));
            run.clear();
        }
    };
    for raw in text.split_whitespace() {
        if let Some(rest) = raw.strip_prefix(['#', '@']) {
            flush(&mut run, &mut out);
            let tok = trim_token(rest);
            if !tok.is_empty() {
                out.push(tok.to_lowercase());
            }
            continue;
        }
        let tok = trim_token(raw);
        if tok.is_empty() || !is_capitalized(tok) || stop.contains(tok) {
            flush(&mut run, &mut out);
            continue;
        }
        run.push(tok.to_lowercase());
        // trailing punctuation ends the phrase
        if raw
            .chars()
            .last()
            .is_some_and(|c| !c.is_alphanumeric())
        {
            flush(&mut run, &mut out);
        }
    }
    flush(&mut run, &mut out);
    out
}

impl VectorTable {
    pub fn new(dimension: usize) -> Self {
        VectorTable {
            dimension,
            vectors: HashMap::new(),
            subword_fallback: false,
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn insert(&mut self, token: &str, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dimension {
            return Err(Error::Dimension {
                expected: self.dimension,
                got: vector.len(),
            });
        }
        self.vectors.insert(token.to_lowercase(), vector);
        Ok(())
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(&token.to_lowercase()).map(Vec::as_slice)
    }

    /// Resolve a single-word token, applying the subword fallback if enabled.
    fn resolve(&self, token: &str) -> Option<Vec<f64>> {
        if let Some(v) = self.get(token) {
            return Some(v.to_vec());
        }
        if self.subword_fallback {
            Some(subword_vector(&token.to_lowercase(), self.dimension))
        } else {
            None
        }
    }

    pub fn load(path: &Path) -> Result<VectorTable> {
        let text = fs::read_to_string(path)?;
        VectorTable::parse(&text)
    }

    pub fn parse(text: &str) -> Result<VectorTable> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::VectorLoad {
            line: 1,
            message: "empty file".into(),
        })?;
        let mut parts = header.split_whitespace();
        let n: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or(Error::VectorLoad {
                line: 1,
                message: "header must be `N d`".into(),
            })?;
        let d: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or(Error::VectorLoad {
                line: 1,
                message: "header must be `N d`".into(),
            })?;
        let mut table = VectorTable::new(d);
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let token = fields.next().ok_or(Error::VectorLoad {
                line: idx + 1,
                message: "missing token".into(),
            })?;
            let vector: Vec<f64> = fields
                .map(|f| {
                    f.parse::<f64>().map_err(|_| Error::VectorLoad {
                        line: idx + 1,
                        message: format!("bad float `{f}`"),
                    })
                })
                .collect::<Result<_>>()?;
            if vector.len() != d {
                return Err(Error::VectorLoad {
                    line: idx + 1,
                    message: format!("expected {d} floats, got {}", vector.len()),
                });
            }
            table.vectors.insert(token.to_lowercase(), vector);
        }
        if table.vectors.len() != n {
            return Err(Error::VectorLoad {
                line: 1,
                message: format!("header says {n} entries, found {}", table.vectors.len()),
            });
        }
        Ok(table)
    }
}

/// Deterministic pseudo-vector for an out-of-vocabulary token: mean of
/// hashed character n-gram (n = 3..6) bucket vectors, fastText style.
fn subword_vector(token: &str, dimension: usize) -> Vec<f64> {
    let wrapped: Vec<char> = format!("<{token}>").chars().collect();
    let mut acc = vec![0.0; dimension];
    let mut count = 0usize;
    for n in 3..=6 {
        if wrapped.len() < n {
            break;
        }
        for start in 0..=(wrapped.len() - n) {
            let gram: String = wrapped[start..start + n].iter().collect();
            let h = fnv1a(gram.as_bytes());
            for (i, slot) in acc.iter_mut().enumerate() {
                // splitmix-style scramble of (bucket hash, component)
                let mut x = h ^ (i as u64).wrapping_mul(0x9e3779b97f4a7c15);
                x ^= x >> 30;
                x = x.wrapping_mul(0xbf58476d1ce4e5b9);
                x ^= x >> 27;
                *slot += (x as f64 / u64::MAX as f64) * 2.0 - 1.0;
            }
            count += 1;
        }
    }
    if count > 0 {
        for slot in &mut acc {
            *slot /= count as f64;
        }
    }
    acc
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn mean_of(vectors: &[Vec<f64>]) -> Option<Vec<f64>> {
    if vectors.is_empty() {
        return None;
    }
    let d = vectors[0].len();
    let mut acc = vec![0.0; d];
    for v in vectors {
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    for a in &mut acc {
        *a /= vectors.len() as f64;
    }
    Some(acc)
}

/// Mean of the vectors of the keywords found in the table. Multi-word
/// keywords are first averaged over their constituent words. Absent when
/// no keyword resolves.
pub fn embed_keywords(tweet_id: &str, keywords: &[String], table: &VectorTable) -> Option<TweetVector> {
    let mut resolved = Vec::new();
    for kw in keywords {
        let words: Vec<Vec<f64>> = kw
            .split_whitespace()
            .filter_map(|w| table.resolve(w))
            .collect();
        if let Some(v) = mean_of(&words) {
            resolved.push(v);
        }
    }
    let vector = mean_of(&resolved)?;
    Some(TweetVector {
        tweet_id: tweet_id.to_string(),
        vector,
        keyword_count: resolved.len(),
    })
}

/// Mean over all non-stop-word tokens of the raw text that resolve in the
/// table; used by the verification stage.
pub fn embed_text(
    tweet_id: &str,
    text: &str,
    table: &VectorTable,
    stop: &StopWords,
) -> Option<TweetVector> {
    let resolved: Vec<Vec<f64>> = text
        .split_whitespace()
        .map(|raw| trim_token(raw.trim_start_matches(['#', '@'])))
        .filter(|tok| !tok.is_empty() && !stop.contains(tok))
        .filter_map(|tok| table.resolve(tok))
        .collect();
    let vector = mean_of(&resolved)?;
    Some(TweetVector {
        tweet_id: tweet_id.to_string(),
        vector,
        keyword_count: resolved.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> VectorTable {
        let mut t = VectorTable::new(2);
        t.insert("fire", vec![1.0, 0.0]).unwrap();
        t.insert("flood", vec![0.0, 1.0]).unwrap();
        t.insert("dock", vec![0.5, 0.5]).unwrap();
        t
    }

    #[test]
    fn extract_capitalized_runs_and_hashtags() {
        let kws = extract_keywords("Fire near Brooklyn Bridge #nyc", &StopWords::standard());
        assert_eq!(kws, vec!["fire", "brooklyn bridge", "nyc"]);
    }

    #[test]
    fn extract_empty_text() {
        assert!(extract_keywords("", &StopWords::standard()).is_empty());
    }

    #[test]
    fn extract_stop_words_only() {
        assert!(extract_keywords("the and of", &StopWords::standard()).is_empty());
    }

    #[test]
    fn extract_keeps_duplicates_in_order() {
        let kws = extract_keywords("#fire Big Fire #fire", &StopWords::standard());
        assert_eq!(kws, vec!["fire", "big fire", "fire"]);
    }

    #[test]
    fn extract_output_appears_in_text() {
        let text = "Huge Fire at @fdny station #Brooklyn tonight";
        let lower = text.to_lowercase();
        for kw in extract_keywords(text, &StopWords::standard()) {
            assert!(lower.contains(&kw), "{kw} not in text");
        }
    }

    #[test]
    fn parse_small_table() {
        let t = VectorTable::parse("2 3\nfoo 1 2 3\nbar 0.5 0.25 -1\n").unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.dimension(), 3);
        assert_eq!(t.get("bar").unwrap(), &[0.5, 0.25, -1.0]);
    }

    #[test]
    fn parse_rejects_short_line() {
        let err = VectorTable::parse("1 3\nfoo 1 2\n").unwrap_err();
        assert!(matches!(err, Error::VectorLoad { line: 2, .. }));
    }

    #[test]
    fn parse_rejects_bad_float() {
        let err = VectorTable::parse("1 2\nfoo 1 x\n").unwrap_err();
        assert!(matches!(err, Error::VectorLoad { line: 2, .. }));
    }

    #[test]
    fn embed_single_keyword_is_its_vector() {
        let v = embed_keywords("t", &["fire".into()], &table()).unwrap();
        assert_eq!(v.vector, vec![1.0, 0.0]);
        assert_eq!(v.keyword_count, 1);
    }

    #[test]
    fn embed_mean_of_two() {
        let v = embed_keywords("t", &["fire".into(), "flood".into()], &table()).unwrap();
        assert_eq!(v.vector, vec![0.5, 0.5]);
    }

    #[test]
    fn embed_all_oov_is_absent() {
        assert!(embed_keywords("t", &["zzz".into()], &table()).is_none());
    }

    #[test]
    fn embed_duplicates_shift_mean() {
        // mean of {v, v, w} = (2v + w) / 3
        let v = embed_keywords(
            "t",
            &["fire".into(), "fire".into(), "flood".into()],
            &table(),
        )
        .unwrap();
        assert!((v.vector[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((v.vector[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn embed_permutation_invariant() {
        let a = embed_keywords("t", &["fire".into(), "dock".into()], &table()).unwrap();
        let b = embed_keywords("t", &["dock".into(), "fire".into()], &table()).unwrap();
        assert_eq!(a.vector, b.vector);
    }

    #[test]
    fn embed_text_means_resolvable_tokens() {
        let v = embed_text("t", "fire at the dock", &table(), &StopWords::standard()).unwrap();
        assert_eq!(v.vector, vec![0.75, 0.25]);
    }

    #[test]
    fn embed_text_stop_words_absent() {
        assert!(embed_text("t", "the and of", &table(), &StopWords::standard()).is_none());
    }

    #[test]
    fn subword_fallback_is_deterministic() {
        let mut t = table();
        t.subword_fallback = true;
        let a = embed_keywords("t", &["unseenword".into()], &t).unwrap();
        let b = embed_keywords("t", &["unseenword".into()], &t).unwrap();
        assert_eq!(a.vector, b.vector);
        assert!(a.vector.iter().all(|x| x.is_finite()));
    }
}
