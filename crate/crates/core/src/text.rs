//! Message embeddings from pretrained keyword vectors: tokenization, TF-IDF
//! weights, weighted-average embeddings, and nearest-keyword lookup.

use std::collections::{HashMap, HashSet};
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::open_maybe_gz;
use crate::error::{Error, Result};
use crate::vmf::{dot, l2_norm};

/// Embeddings shorter than this before normalization are rejected.
const MIN_EMBEDDING_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdfVariant {
    /// `ln((1 + D) / (1 + df)) + 1`
    #[default]
    Smooth,
    /// Every keyword weighted 1; embeddings become term-frequency averages.
    Unweighted,
}

/// Vocabulary, keyword vectors and IDF weights.
#[derive(Debug, Clone, PartialEq)]
pub struct KeywordTable {
    vocabulary: Vec<String>,
    vectors: Vec<Vec<f64>>,
    idf: Vec<f64>,
    index: HashMap<String, usize>,
}

impl KeywordTable {
    /// Builds a table with unit IDF weights.
    pub fn new(vocabulary: Vec<String>, vectors: Vec<Vec<f64>>) -> Result<Self> {
        if vocabulary.len() != vectors.len() {
            return Err(Error::DimensionMismatch {
                expected: vocabulary.len(),
                found: vectors.len(),
            });
        }
        let dim = vectors.first().map_or(0, Vec::len);
        let mut index = HashMap::with_capacity(vocabulary.len());
        for (i, (w, v)) in vocabulary.iter().zip(&vectors).enumerate() {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::domain(format!("non-finite vector for keyword '{w}'")));
            }
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::domain(format!("duplicate keyword '{w}'")));
            }
        }
        let idf = vec![1.0; vocabulary.len()];
        Ok(KeywordTable {
            vocabulary,
            vectors,
            idf,
            index,
        })
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocabulary.is_empty()
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn vector(&self, token: &str) -> Option<&[f64]> {
        self.index.get(token).map(|&i| self.vectors[i].as_slice())
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    pub fn idf_of(&self, token: &str) -> Option<f64> {
        self.index.get(token).map(|&i| self.idf[i])
    }

    /// Replaces the IDF weights; they must be finite and non-negative.
    pub fn set_idf(&mut self, idf: Vec<f64>) -> Result<()> {
        if idf.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: idf.len(),
            });
        }
        if idf.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::domain("idf weights must be finite and non-negative"));
        }
        self.idf = idf;
        Ok(())
    }

    /// Sets IDF weights from a corpus of tokenized messages.
    pub fn fit_idf(&mut self, corpus: &[Vec<String>], variant: IdfVariant) -> Result<()> {
        let idf = match variant {
            IdfVariant::Smooth => compute_idf(corpus, &self.vocabulary)?,
            IdfVariant::Unweighted => vec![1.0; self.len()],
        };
        self.set_idf(idf)
    }
}

/// Reads a keyword-vector file: one `token v_1 … v_p` line per keyword, with
/// an optional `V p` header line. Gzip is detected by extension.
pub fn load_keyword_table(path: &Path) -> Result<KeywordTable> {
    if !path.exists() {
        return Err(Error::MissingEmbeddingFile(path.to_path_buf()));
    }
    parse_keyword_table(open_maybe_gz(path)?, &path.display().to_string())
}

pub fn parse_keyword_table<R: BufRead>(reader: R, source: &str) -> Result<KeywordTable> {
    let mut vocabulary = Vec::new();
    let mut vectors = Vec::new();
    let mut header: Option<(usize, usize)> = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let rest: Vec<&str> = parts.collect();
        if i == 0 && rest.len() == 1 {
            if let (Ok(v), Ok(p)) = (token.parse::<usize>(), rest[0].parse::<usize>()) {
                header = Some((v, p));
                continue;
            }
        }
        let values = rest
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(format!("{source}:{}", i + 1), e.to_string()))?;
        if values.is_empty() {
            return Err(Error::parse(format!("{source}:{}", i + 1), "keyword without a vector"));
        }
        vocabulary.push(token.to_string());
        vectors.push(values);
    }
    let table = KeywordTable::new(vocabulary, vectors)?;
    if let Some((v, p)) = header {
        if v != table.len() || (v > 0 && p != table.dim()) {
            return Err(Error::parse(
                source,
                format!("header declares {v}×{p}, file holds {}×{}", table.len(), table.dim()),
            ));
        }
    }
    Ok(table)
}

/// Lowercases, drops URLs and @-mentions, strips `#` from hashtags and
/// splits on non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for raw in text.split_whitespace() {
        let lower = raw.to_lowercase();
        if lower.starts_with("http://") || lower.starts_with("https://") || lower.starts_with("www.") {
            continue;
        }
        if lower.starts_with('@') {
            continue;
        }
        out.extend(
            lower
                .split(|c: char| !c.is_alphanumeric())
                .filter(|s| !s.is_empty())
                .map(str::to_string),
        );
    }
    out
}

/// Smoothed inverse document frequency of each vocabulary word over
/// `corpus`, counting each message once per word.
pub fn compute_idf(corpus: &[Vec<String>], vocabulary: &[String]) -> Result<Vec<f64>> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut df: HashMap<&str, usize> = HashMap::new();
    for doc in corpus {
        let unique: HashSet<&str> = doc.iter().map(String::as_str).collect();
        for w in unique {
            *df.entry(w).or_insert(0) += 1;
        }
    }
    let d = corpus.len() as f64;
    Ok(vocabulary
        .iter()
        .map(|w| {
            let n = df.get(w.as_str()).copied().unwrap_or(0) as f64;
            ((1.0 + d) / (1.0 + n)).ln() + 1.0
        })
        .collect())
}

/// Unit-norm TF-IDF weighted average of the keyword vectors of `tokens`.
pub fn embed_message<S: AsRef<str>>(tokens: &[S], table: &KeywordTable) -> Result<Vec<f64>> {
    let mut tf: HashMap<usize, f64> = HashMap::new();
    for t in tokens {
        if let Some(&i) = table.index.get(t.as_ref()) {
            *tf.entry(i).or_insert(0.0) += 1.0;
        }
    }
    if tf.is_empty() {
        return Err(Error::NoKnownTokens);
    }
    // Sum in vocabulary order so the result does not depend on token order.
    let mut entries: Vec<(usize, f64)> = tf.into_iter().collect();
    entries.sort_unstable_by_key(|e| e.0);
    let mut v = vec![0.0; table.dim()];
    for (i, count) in entries {
        let w = count * table.idf[i];
        for (acc, x) in v.iter_mut().zip(&table.vectors[i]) {
            *acc += w * x;
        }
    }
    let norm = l2_norm(&v);
    if !(norm >= MIN_EMBEDDING_NORM) {
        return Err(Error::NoKnownTokens);
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}

/// The `k` keywords most cosine-similar to `direction`, best first; ties in
/// lexicographic token order.
pub fn nearest_keywords(direction: &[f64], table: &KeywordTable, k: usize) -> Result<Vec<(String, f64)>> {
    if direction.len() != table.dim() {
        return Err(Error::DimensionMismatch {
            expected: table.dim(),
            found: direction.len(),
        });
    }
    let dn = l2_norm(direction);
    let mut scored: Vec<(&str, f64)> = table
        .vocabulary
        .iter()
        .zip(&table.vectors)
        .map(|(w, v)| {
            let n = l2_norm(v) * dn;
            (w.as_str(), if n > 0.0 { dot(v, direction) / n } else { 0.0 })
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(w, s)| (w.to_string(), s))
        .collect())
}
