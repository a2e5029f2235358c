//! Synthetic corpus with planted events, used for fixtures and end-to-end
//! checks.
//!
//! Every event article carries the event's 12 core entities plus 2 of its
//! own, is dated within 4 days of the event start, and has an embedding near
//! the event's basis vector. Events are five days or more apart and share
//! no entities, so the similarity graph is a union of cliques and the
//! country × event counts are recoverable exactly. Two extra groups do not
//! reach the graph: background articles with unique entities, and articles
//! that fail the entity or length filter.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Days, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Article, ArticleRecord};
use crate::error::Result;
use crate::io;

pub const DIM: usize = 8;
pub const EVENTS: usize = 5;
pub const CORE_ENTITIES: usize = 12;
pub const EXTRA_ENTITIES: usize = 2;

/// Countries with their language, in planted-matrix row order.
pub const COUNTRIES: [(&str, &str); 6] = [
    ("US", "en"),
    ("DE", "de"),
    ("FR", "fr"),
    ("BR", "pt"),
    ("IN", "hi"),
    ("JP", "ja"),
];

/// Articles per country (rows) and event (columns) at full scale.
pub const PLANTED: [[usize; EVENTS]; 6] = [
    [60, 40, 30, 20, 10],
    [20, 50, 30, 30, 20],
    [30, 30, 40, 20, 30],
    [10, 20, 30, 60, 30],
    [50, 10, 20, 30, 40],
    [25, 25, 25, 25, 40],
];

const BACKGROUND: usize = 30;
const FILTERED: usize = 70;

pub const LENGTH_FACTORS: [(&str, f64); 6] = [
    ("en", 1.0),
    ("de", 1.2),
    ("fr", 0.9),
    ("pt", 0.95),
    ("hi", 1.1),
    ("ja", 2.0),
];

#[derive(Debug, Clone)]
pub struct Fixture {
    pub articles: Vec<Article>,
    pub embeddings: BTreeMap<String, Vec<f64>>,
    /// country → event → planted article count.
    pub planted: BTreeMap<String, BTreeMap<usize, usize>>,
}

impl Fixture {
    /// Planted event distribution of `country`.
    pub fn planted_distribution(&self, country: &str) -> BTreeMap<usize, f64> {
        let row = &self.planted[country];
        let total: usize = row.values().sum();
        row.iter()
            .filter(|(_, &k)| k > 0)
            .map(|(&e, &k)| (e, k as f64 / total as f64))
            .collect()
    }
}

fn start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 3, 1).expect("valid date")
}

/// Builds the fixture; `scale` divides every count (1 gives 1,000 articles,
/// 5 gives 200).
pub fn generate(seed: u64, scale: usize) -> Fixture {
    assert!(scale >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut articles = Vec::new();
    let mut embeddings = BTreeMap::new();
    let mut planted: BTreeMap<String, BTreeMap<usize, usize>> = BTreeMap::new();
    let noise = |rng: &mut ChaCha8Rng| rng.gen_range(-0.05..0.05);

    let mut seq = 0usize;
    let mut next_id = |prefix: &str| {
        seq += 1;
        format!("{prefix}{seq:05}")
    };

    for (ci, &(country, lang)) in COUNTRIES.iter().enumerate() {
        for e in 0..EVENTS {
            let n = PLANTED[ci][e] / scale;
            planted.entry(country.to_owned()).or_default().insert(e, n);
            for _ in 0..n {
                let id = next_id("a");
                let mut ents: Vec<String> = (0..CORE_ENTITIES).map(|k| format!("E{e}_{k:02}")).collect();
                ents.extend((0..EXTRA_ENTITIES).map(|k| format!("X_{id}_{k}")));
                let date = start() + Days::new((10 * e + rng.gen_range(0..4)) as u64);
                let words = rng.gen_range(300..900);
                articles.push(Article::new(id.clone(), country, lang, date, ents, words));
                let mut v: Vec<f64> = (0..DIM).map(|_| noise(&mut rng)).collect();
                v[e] += 1.0;
                embeddings.insert(id, v);
            }
        }
    }

    // unique entities, so no candidate pair reaches them
    for _ in 0..BACKGROUND / scale {
        let id = next_id("b");
        let (country, lang) = COUNTRIES[rng.gen_range(0..COUNTRIES.len())];
        let ents: Vec<String> = (0..14).map(|k| format!("U_{id}_{k}")).collect();
        let date = start() + Days::new(rng.gen_range(0..50));
        articles.push(Article::new(id.clone(), country, lang, date, ents, 500));
        let v: Vec<f64> = (0..DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
        embeddings.insert(id, v);
    }

    // event look-alikes that the filter must drop: half too few entities,
    // half too short after the length factor
    for k in 0..FILTERED / scale {
        let id = next_id("f");
        let (country, lang) = COUNTRIES[rng.gen_range(0..COUNTRIES.len())];
        let e = rng.gen_range(0..EVENTS);
        let (ents, words): (Vec<String>, u64) = if k % 2 == 0 {
            ((0..6).map(|j| format!("E{e}_{j:02}")).collect(), 600)
        } else {
            let factor = LENGTH_FACTORS.iter().find(|f| f.0 == lang).expect("known").1;
            let mut ents: Vec<String> = (0..CORE_ENTITIES).map(|j| format!("E{e}_{j:02}")).collect();
            ents.push(format!("X_{id}_0"));
            (ents, (60.0 / factor) as u64)
        };
        let date = start() + Days::new((10 * e + rng.gen_range(0..4)) as u64);
        articles.push(Article::new(id.clone(), country, lang, date, ents, words));
        let mut v: Vec<f64> = (0..DIM).map(|_| noise(&mut rng)).collect();
        v[e] += 1.0;
        embeddings.insert(id, v);
    }

    articles.shuffle(&mut rng);
    Fixture {
        articles,
        embeddings,
        planted,
    }
}

/// Demo country traits, `country,predictor,value`.
pub fn predictor_rows() -> Vec<[String; 3]> {
    let traits: [(&str, f64, f64, f64, &str); 6] = [
        ("US", 2.1e13, 7.85, 3.3e8, "americas"),
        ("DE", 3.8e12, 8.67, 8.3e7, "europe"),
        ("FR", 2.6e12, 7.99, 6.7e7, "europe"),
        ("BR", 4.4e11, 6.86, 2.1e8, "americas"),
        ("IN", 2.7e12, 6.61, 1.38e9, "asia"),
        ("JP", 4.2e11, 8.13, 1.26e8, "asia"),
    ];
    let mut rows = Vec::new();
    for (c, gdp, dem, pop, region) in traits {
        rows.push([c.into(), "gdp".into(), gdp.to_string()]);
        rows.push([c.into(), "democracy_index".into(), dem.to_string()]);
        rows.push([c.into(), "population".into(), pop.to_string()]);
        rows.push([c.into(), "region".into(), region.into()]);
    }
    rows
}

/// Writes corpus, embeddings, length factors, predictors, the planted
/// matrix and a config file into `dir`.
pub fn write_fixture(fx: &Fixture, dir: &Path) -> Result<()> {
    let records: Vec<ArticleRecord> = fx.articles.iter().map(ArticleRecord::from).collect();
    io::write_jsonl(&dir.join("corpus.jsonl"), &records)?;

    let mut text = format!("dim={DIM}\n");
    for (id, v) in &fx.embeddings {
        text.push_str(&serde_json::to_string(&serde_json::json!({ "id": id, "vec": v }))?);
        text.push('\n');
    }
    io::write_text(&dir.join("embeddings.jsonl"), &text)?;

    io::write_records(
        &dir.join("length_factors.csv"),
        std::iter::once(["language".to_owned(), "factor".to_owned()])
            .chain(LENGTH_FACTORS.iter().map(|(l, f)| [l.to_string(), f.to_string()])),
    )?;
    io::write_records(
        &dir.join("predictors.csv"),
        std::iter::once(["country".to_owned(), "predictor".to_owned(), "value".to_owned()]).chain(predictor_rows()),
    )?;
    let mut planted = vec![vec!["country".to_owned(), "event".to_owned(), "count".to_owned()]];
    for (c, row) in &fx.planted {
        for (e, n) in row {
            planted.push(vec![c.clone(), e.to_string(), n.to_string()]);
        }
    }
    io::write_records(&dir.join("planted.csv"), planted)?;
    io::write_text(
        &dir.join("config.txt"),
        "# synthetic fixture; paths are relative to this file\n\
         paths.corpus = corpus.jsonl\n\
         paths.embeddings = embeddings.jsonl\n\
         paths.length_factors = length_factors.csv\n\
         paths.predictors = predictors.csv\n\
         bundles.n_largest = 3\n\
         bundles.n_random = 2\n",
    )?;
    Ok(())
}
