//! Article corpus: loading, validation, filtering and summary counts.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum number of linked entities for an article to be kept.
pub const DEFAULT_MIN_ENTITIES: usize = 10;
/// Minimum English-equivalent word count for an article to be kept.
pub const DEFAULT_MIN_EQ_WORDS: f64 = 100.0;

/// One news item with its precomputed entity links.
#[derive(Debug, Clone, PartialEq)]
pub struct Article {
    pub id: String,
    pub country: String,
    pub language: String,
    pub publish_date: NaiveDate,
    /// Sorted and deduplicated.
    pub entities: Vec<String>,
    pub word_count: u64,
    pub embedding_id: Option<String>,
    pub title: Option<String>,
    pub url: Option<String>,
}

impl Article {
    pub fn new(
        id: impl Into<String>,
        country: impl Into<String>,
        language: impl Into<String>,
        publish_date: NaiveDate,
        entities: impl IntoIterator<Item = impl Into<String>>,
        word_count: u64,
    ) -> Self {
        let entities: BTreeSet<String> = entities.into_iter().map(Into::into).collect();
        Self {
            id: id.into(),
            country: country.into(),
            language: language.into(),
            publish_date,
            entities: entities.into_iter().collect(),
            word_count,
            embedding_id: None,
            title: None,
            url: None,
        }
    }

    /// Key under which this article's vector lives in an embedding store.
    pub fn embedding_key(&self) -> &str {
        self.embedding_id.as_deref().unwrap_or(&self.id)
    }
}

/// On-disk JSON Lines record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArticleRecord {
    pub id: String,
    pub country: String,
    pub language: String,
    pub date: String,
    pub entities: Vec<String>,
    pub word_count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
}

impl TryFrom<ArticleRecord> for Article {
    type Error = Error;

    fn try_from(rec: ArticleRecord) -> Result<Self> {
        if rec.id.is_empty() {
            return Err(Error::InvalidInput("empty article id".into()));
        }
        let date = NaiveDate::parse_from_str(&rec.date, "%Y-%m-%d")
            .map_err(|e| Error::InvalidInput(format!("bad date `{}`: {e}", rec.date)))?;
        let mut article = Article::new(rec.id, rec.country, rec.language, date, rec.entities, rec.word_count);
        article.embedding_id = rec.embedding_id;
        article.title = rec.title;
        article.url = rec.url;
        Ok(article)
    }
}

impl From<&Article> for ArticleRecord {
    fn from(a: &Article) -> Self {
        ArticleRecord {
            id: a.id.clone(),
            country: a.country.clone(),
            language: a.language.clone(),
            date: a.publish_date.format("%Y-%m-%d").to_string(),
            entities: a.entities.clone(),
            word_count: a.word_count,
            embedding_id: a.embedding_id.clone(),
            title: a.title.clone(),
            url: a.url.clone(),
        }
    }
}

/// An immutable collection of articles with unique ids.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    articles: Vec<Article>,
    index: HashMap<String, usize>,
    length_factors: BTreeMap<String, f64>,
}

impl Corpus {
    pub fn new(articles: Vec<Article>) -> Result<Self> {
        Self::with_factors(articles, BTreeMap::new())
    }

    pub fn with_factors(articles: Vec<Article>, length_factors: BTreeMap<String, f64>) -> Result<Self> {
        for (lang, &f) in &length_factors {
            if !(f > 0.0 && f.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "length factor for `{lang}` must be positive, got {f}"
                )));
            }
        }
        let mut index = HashMap::with_capacity(articles.len());
        for (i, a) in articles.iter().enumerate() {
            if a.id.is_empty() {
                return Err(Error::InvalidInput("empty article id".into()));
            }
            if index.insert(a.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(a.id.clone()));
            }
        }
        Ok(Self {
            articles,
            index,
            length_factors,
        })
    }

    pub fn articles(&self) -> &[Article] {
        &self.articles
    }

    pub fn len(&self) -> usize {
        self.articles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.articles.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Article> {
        self.index.get(id).map(|&i| &self.articles[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn length_factors(&self) -> &BTreeMap<String, f64> {
        &self.length_factors
    }

    /// Builds a subcorpus from the articles accepted by `keep`, sharing the
    /// length-factor table.
    pub fn retain(&self, mut keep: impl FnMut(&Article) -> bool) -> Corpus {
        let articles: Vec<Article> = self.articles.iter().filter(|a| keep(a)).cloned().collect();
        Corpus::with_factors(articles, self.length_factors.clone()).expect("subset of a valid corpus is valid")
    }

    /// Countries present, sorted.
    pub fn countries(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.articles.iter().map(|a| a.country.as_str()).collect();
        set.into_iter().map(str::to_owned).collect()
    }
}

/// Result of reading a JSON Lines corpus file.
#[derive(Debug)]
pub struct LoadReport {
    pub corpus: Corpus,
    /// `(line number, reason)` for every skipped line.
    pub skipped: Vec<(usize, String)>,
}

/// Reads one article per line. Malformed lines are skipped with a warning;
/// a duplicate id aborts the load.
pub fn load_corpus(path: &Path) -> Result<LoadReport> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(file), path)
}

pub fn read_corpus(reader: impl BufRead, origin: &Path) -> Result<LoadReport> {
    let mut articles = Vec::new();
    let mut seen = BTreeSet::new();
    let mut skipped = Vec::new();
    for (no, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<ArticleRecord>(&line)
            .map_err(Error::from)
            .and_then(Article::try_from);
        match parsed {
            Ok(article) => {
                if !seen.insert(article.id.clone()) {
                    return Err(Error::DuplicateId(article.id));
                }
                articles.push(article);
            }
            Err(e) => {
                log::warn!("{}:{}: skipping malformed record: {e}", origin.display(), no + 1);
                skipped.push((no + 1, e.to_string()));
            }
        }
    }
    Ok(LoadReport {
        corpus: Corpus::new(articles)?,
        skipped,
    })
}

/// Reads the two-column `language,factor` CSV.
pub fn load_length_factors(path: &Path) -> Result<BTreeMap<String, f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut out = BTreeMap::new();
    for row in rdr.records() {
        let row = row?;
        let lang = row.get(0).unwrap_or_default().to_owned();
        let factor: f64 = row
            .get(1)
            .unwrap_or_default()
            .parse()
            .map_err(|_| Error::InvalidInput(format!("bad factor for `{lang}`")))?;
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "length factor for `{lang}` must be positive, got {factor}"
            )));
        }
        out.insert(lang, factor);
    }
    Ok(out)
}

/// Word count scaled to an English-equivalent length. Languages missing from
/// the table use a factor of 1.0.
pub fn english_equivalent_length(article: &Article, factors: &BTreeMap<String, f64>) -> f64 {
    let factor = match factors.get(&article.language) {
        Some(&f) => f,
        None => {
            if !factors.is_empty() {
                log::warn!("no length factor for language `{}`; using 1.0", article.language);
            }
            1.0
        }
    };
    article.word_count as f64 * factor
}

/// Keeps articles with at least `min_entities` entities and at least
/// `min_eq_words` English-equivalent words. Both bounds are inclusive.
pub fn filter_articles(corpus: &Corpus, min_entities: usize, min_eq_words: f64) -> Corpus {
    let factors = corpus.length_factors().clone();
    corpus.retain(|a| a.entities.len() >= min_entities && english_equivalent_length(a, &factors) >= min_eq_words)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub per_country: BTreeMap<String, usize>,
    pub per_language: BTreeMap<String, usize>,
    pub date_range: Option<(NaiveDate, NaiveDate)>,
}

pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let mut stats = CorpusStats::default();
    for a in corpus.articles() {
        *stats.per_country.entry(a.country.clone()).or_default() += 1;
        *stats.per_language.entry(a.language.clone()).or_default() += 1;
        stats.date_range = Some(match stats.date_range {
            None => (a.publish_date, a.publish_date),
            Some((lo, hi)) => (lo.min(a.publish_date), hi.max(a.publish_date)),
        });
    }
    stats
}
