//! Embedded BM25 retrieval over a corpus snapshot.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_segmentation::UnicodeSegmentation;

use crate::model::Document;
use crate::store::{Store, StoreError};

const INDEX_MAGIC: &[u8; 6] = b"STXIDX";
const INDEX_FORMAT_VERSION: u32 = 1;
const SNIPPET_RADIUS: usize = 40;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("cannot index an empty corpus")]
    EmptyCorpus,
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("index file: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub term: String,
    /// Byte range in the analyzed text.
    pub start: usize,
    pub end: usize,
}

/// Splits text into index terms.
pub trait Analyzer: Send + Sync {
    fn analyze(&self, text: &str) -> Vec<Token>;
}

/// Unicode word segmentation with lowercase folding and no stemming, so the
/// same analyzer serves Korean and English text.
#[derive(Debug, Clone, Copy, Default)]
pub struct UnicodeWordAnalyzer;

impl Analyzer for UnicodeWordAnalyzer {
    fn analyze(&self, text: &str) -> Vec<Token> {
        text.unicode_word_indices()
            .map(|(start, word)| Token {
                term: word.to_lowercase(),
                start,
                end: start + word.len(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    /// Non-negative inverse document frequency.
    pub fn idf(&self, n_docs: usize, doc_freq: usize) -> f64 {
        let n = n_docs as f64;
        let df = doc_freq as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    pub fn term_weight(&self, tf: f64, doc_len: f64, avg_len: f64) -> f64 {
        let norm = if avg_len > 0.0 {
            1.0 - self.b + self.b * doc_len / avg_len
        } else {
            1.0
        };
        tf * (self.k1 + 1.0) / (tf + self.k1 * norm)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SearchQuery {
    #[serde(default)]
    pub terms: Vec<String>,
    #[serde(default)]
    pub filters: BTreeMap<String, String>,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
}

fn default_top_k() -> usize {
    10
}

impl SearchQuery {
    pub fn terms<S: AsRef<str>>(terms: &[S], top_k: usize) -> Self {
        SearchQuery {
            terms: terms.iter().map(|t| t.as_ref().to_string()).collect(),
            filters: BTreeMap::new(),
            top_k,
        }
    }

    pub fn filter(mut self, key: &str, value: &str) -> Self {
        self.filters.insert(key.to_string(), value.to_string());
        self
    }

    fn check(&self) -> Result<(), SearchError> {
        if self.top_k == 0 {
            return Err(SearchError::InvalidQuery("top_k must be at least 1".into()));
        }
        if self.terms.iter().all(|t| t.trim().is_empty()) && self.filters.is_empty() {
            return Err(SearchError::InvalidQuery("query needs terms or filters".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub doc_id: String,
    pub score: f64,
    pub snippet: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Posting {
    doc: u32,
    tf: u32,
}

/// Immutable inverted-index snapshot of one corpus version.
#[derive(Serialize, Deserialize)]
pub struct SearchIndex {
    corpus_id: String,
    corpus_version: u64,
    params: Bm25Params,
    doc_ids: Vec<String>,
    doc_lens: Vec<u32>,
    bodies: Vec<String>,
    meta: Vec<BTreeMap<String, String>>,
    avg_len: f64,
    postings: HashMap<String, Vec<Posting>>,
    #[serde(skip, default = "default_analyzer")]
    analyzer: Arc<dyn Analyzer>,
}

fn default_analyzer() -> Arc<dyn Analyzer> {
    Arc::new(UnicodeWordAnalyzer)
}

impl std::fmt::Debug for SearchIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SearchIndex")
            .field("corpus_id", &self.corpus_id)
            .field("corpus_version", &self.corpus_version)
            .field("docs", &self.doc_ids.len())
            .field("vocabulary", &self.postings.len())
            .finish()
    }
}

/// Builds a snapshot index over the current version of a stored corpus.
pub fn build_index(store: &Store, corpus_id: &str) -> Result<Arc<SearchIndex>, SearchError> {
    let version = store.corpus_version(corpus_id)?;
    let docs = store.documents(corpus_id)?;
    let mut index = SearchIndex::build(&docs, Bm25Params::default(), default_analyzer())?;
    index.corpus_id = corpus_id.to_string();
    index.corpus_version = version;
    Ok(Arc::new(index))
}

impl SearchIndex {
    pub fn build(
        docs: &[Document],
        params: Bm25Params,
        analyzer: Arc<dyn Analyzer>,
    ) -> Result<Self, SearchError> {
        if docs.is_empty() {
            return Err(SearchError::EmptyCorpus);
        }
        let mut docs: Vec<&Document> = docs.iter().collect();
        docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
        let mut postings: HashMap<String, Vec<Posting>> = HashMap::new();
        let mut doc_lens = Vec::with_capacity(docs.len());
        for (i, doc) in docs.iter().enumerate() {
            let tokens = analyzer.analyze(&doc.body);
            doc_lens.push(tokens.len() as u32);
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in tokens {
                *tf.entry(t.term).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push(Posting {
                    doc: i as u32,
                    tf: count,
                });
            }
        }
        let total: u64 = doc_lens.iter().map(|&l| l as u64).sum();
        Ok(SearchIndex {
            corpus_id: String::new(),
            corpus_version: 0,
            params,
            avg_len: total as f64 / docs.len() as f64,
            doc_ids: docs.iter().map(|d| d.doc_id.clone()).collect(),
            bodies: docs.iter().map(|d| d.body.clone()).collect(),
            meta: docs.iter().map(|d| d.source_meta.clone()).collect(),
            doc_lens,
            postings,
            analyzer,
        })
    }

    pub fn corpus_id(&self) -> &str {
        &self.corpus_id
    }

    pub fn corpus_version(&self) -> u64 {
        self.corpus_version
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn vocabulary(&self) -> BTreeSet<&str> {
        self.postings.keys().map(String::as_str).collect()
    }

    /// Distinct query tokens, in sorted order.
    fn query_terms(&self, q: &SearchQuery) -> Vec<String> {
        let set: BTreeSet<String> = q
            .terms
            .iter()
            .flat_map(|t| self.analyzer.analyze(t))
            .map(|t| t.term)
            .collect();
        set.into_iter().collect()
    }

    fn passes_filters(&self, doc: usize, filters: &BTreeMap<String, String>) -> bool {
        filters
            .iter()
            .all(|(k, v)| self.meta[doc].get(k).is_some_and(|have| have == v))
    }

    pub fn search(&self, q: &SearchQuery) -> Result<Vec<SearchHit>, SearchError> {
        q.check()?;
        let terms = self.query_terms(q);
        let n = self.doc_ids.len();
        let mut scores: HashMap<usize, f64> = HashMap::new();
        if terms.is_empty() {
            // Filter-only query: every passing document, unscored.
            for doc in 0..n {
                if self.passes_filters(doc, &q.filters) {
                    scores.insert(doc, 0.0);
                }
            }
        } else {
            for term in &terms {
                let Some(list) = self.postings.get(term) else {
                    continue;
                };
                let idf = self.params.idf(n, list.len());
                for p in list {
                    let doc = p.doc as usize;
                    if !self.passes_filters(doc, &q.filters) {
                        continue;
                    }
                    let w = self
                        .params
                        .term_weight(p.tf as f64, self.doc_lens[doc] as f64, self.avg_len);
                    *scores.entry(doc).or_default() += idf * w;
                }
            }
        }
        let mut ranked: Vec<(usize, f64)> = scores.into_iter().collect();
        ranked.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.doc_ids[a.0].cmp(&self.doc_ids[b.0]))
        });
        ranked.truncate(q.top_k);
        Ok(ranked
            .into_iter()
            .map(|(doc, score)| SearchHit {
                doc_id: self.doc_ids[doc].clone(),
                score,
                snippet: self.snippet(doc, &terms),
            })
            .collect())
    }

    /// Window of text around the first occurrence of any query term, or the
    /// head of the body when nothing matches.
    fn snippet(&self, doc: usize, terms: &[String]) -> String {
        let body = &self.bodies[doc];
        let hit = self
            .analyzer
            .analyze(body)
            .into_iter()
            .find(|t| terms.binary_search(&t.term).is_ok());
        let (start, end) = match hit {
            Some(t) => (t.start, t.end),
            None => (0, 0),
        };
        let lo = body[..start]
            .char_indices()
            .rev()
            .nth(SNIPPET_RADIUS - 1)
            .map_or(0, |(i, _)| i);
        let hi = body[end..]
            .char_indices()
            .nth(SNIPPET_RADIUS)
            .map_or(body.len(), |(i, _)| end + i);
        body[lo..hi].to_string()
    }

    /// Writes the index as a version-tagged binary file.
    pub fn save(&self, path: &Path) -> Result<(), SearchError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let payload = bincode::serialize(self).map_err(|e| SearchError::Format(e.to_string()))?;
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp)?;
        f.write_all(INDEX_MAGIC)?;
        f.write_all(&INDEX_FORMAT_VERSION.to_le_bytes())?;
        f.write_all(&payload)?;
        f.sync_all()?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SearchError> {
        let bytes = fs::read(path)?;
        let header = INDEX_MAGIC.len() + 4;
        if bytes.len() < header || &bytes[..INDEX_MAGIC.len()] != INDEX_MAGIC {
            return Err(SearchError::Format("not an index file".into()));
        }
        let version = u32::from_le_bytes(bytes[INDEX_MAGIC.len()..header].try_into().unwrap());
        if version != INDEX_FORMAT_VERSION {
            return Err(SearchError::Format(format!("unsupported index version {version}")));
        }
        bincode::deserialize(&bytes[header..]).map_err(|e| SearchError::Format(e.to_string()))
    }
}
