//! Candidate pair generation by shared named entities.
//!
//! Two articles become a candidate pair when the Jaccard similarity of their
//! entity sets is strictly above `jaccard_min` and their publication dates
//! are at most `window_days` apart. Any pair with positive Jaccard shares at
//! least one entity, so seeding from entity postings finds every qualifying
//! pair without a quadratic scan.

use std::collections::{BTreeMap, HashMap};

use chrono::Datelike;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;

pub const DEFAULT_JACCARD_MIN: f64 = 0.25;
pub const DEFAULT_WINDOW_DAYS: u32 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePair {
    #[serde(rename = "a")]
    pub id_a: String,
    #[serde(rename = "b")]
    pub id_b: String,
    pub jaccard: f64,
    #[serde(rename = "gap_days")]
    pub date_gap_days: u32,
}

/// Skip seeding from entities whose posting list is longer than
/// `max(fraction * corpus_size, min_postings)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntityCap {
    pub fraction: f64,
    pub min_postings: usize,
}

impl Default for EntityCap {
    fn default() -> Self {
        Self {
            fraction: 0.10,
            min_postings: 1000,
        }
    }
}

impl EntityCap {
    pub fn limit(&self, corpus_size: usize) -> usize {
        ((self.fraction * corpus_size as f64).floor() as usize).max(self.min_postings)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairParams {
    pub jaccard_min: f64,
    pub window_days: u32,
    pub entity_cap: Option<EntityCap>,
}

impl Default for PairParams {
    fn default() -> Self {
        Self {
            jaccard_min: DEFAULT_JACCARD_MIN,
            window_days: DEFAULT_WINDOW_DAYS,
            entity_cap: Some(EntityCap::default()),
        }
    }
}

/// |A ∩ B| / |A ∪ B| over sorted, deduplicated slices; 0 when both are empty.
pub fn jaccard<T: Ord>(a: &[T], b: &[T]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Entity → ascending corpus positions of the articles mentioning it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InvertedIndex {
    pub postings: BTreeMap<String, Vec<usize>>,
}

impl InvertedIndex {
    pub fn len(&self) -> usize {
        self.postings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.postings.is_empty()
    }

    /// Article ids for `entity`, in corpus order.
    pub fn article_ids<'c>(&self, entity: &str, corpus: &'c Corpus) -> Vec<&'c str> {
        self.postings
            .get(entity)
            .map(|p| p.iter().map(|&i| corpus.articles()[i].id.as_str()).collect())
            .unwrap_or_default()
    }
}

pub fn build_inverted_index(corpus: &Corpus) -> InvertedIndex {
    let mut postings: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (pos, a) in corpus.articles().iter().enumerate() {
        // entities are deduplicated per article, so each incidence lands once
        for e in &a.entities {
            postings.entry(e.clone()).or_default().push(pos);
        }
    }
    InvertedIndex { postings }
}

/// Interned view of the corpus used during generation.
struct Interned {
    entities: Vec<Vec<u32>>,
    days: Vec<i64>,
    postings: Vec<Vec<u32>>,
}

fn intern(corpus: &Corpus) -> Interned {
    let mut ids: HashMap<&str, u32> = HashMap::new();
    let mut postings: Vec<Vec<u32>> = Vec::new();
    let mut entities = Vec::with_capacity(corpus.len());
    let mut days = Vec::with_capacity(corpus.len());
    for (pos, a) in corpus.articles().iter().enumerate() {
        let mut row: Vec<u32> = a
            .entities
            .iter()
            .map(|e| {
                let next = ids.len() as u32;
                let id = *ids.entry(e.as_str()).or_insert(next);
                if id as usize == postings.len() {
                    postings.push(Vec::new());
                }
                postings[id as usize].push(pos as u32);
                id
            })
            .collect();
        row.sort_unstable();
        entities.push(row);
        days.push(a.publish_date.num_days_from_ce() as i64);
    }
    Interned {
        entities,
        days,
        postings,
    }
}

/// All pairs with `jaccard > jaccard_min` and `|date gap| <= window_days`,
/// sorted by `(id_a, id_b)` with `id_a < id_b`.
pub fn generate_candidates(corpus: &Corpus, params: &PairParams) -> Vec<CandidatePair> {
    assert!(
        (0.0..1.0).contains(&params.jaccard_min),
        "jaccard_min must lie in [0, 1)"
    );
    let data = intern(corpus);
    let cap = params.entity_cap.map(|c| c.limit(corpus.len())).unwrap_or(usize::MAX);
    let capped = data.postings.iter().filter(|p| p.len() > cap).count();
    if capped > 0 {
        log::info!("{capped} entities above the posting cap of {cap} skipped during seeding");
    }
    let window = params.window_days as i64;
    let articles = corpus.articles();

    let mut pairs: Vec<CandidatePair> = (0..articles.len())
        .into_par_iter()
        .map_init(Vec::new, |seen: &mut Vec<u32>, i| {
            seen.clear();
            for &e in &data.entities[i] {
                let posting = &data.postings[e as usize];
                if posting.len() > cap {
                    continue;
                }
                // postings are ascending; only partners after i
                let start = posting.partition_point(|&p| p as usize <= i);
                seen.extend_from_slice(&posting[start..]);
            }
            seen.sort_unstable();
            seen.dedup();
            let mut out = Vec::new();
            for &j in seen.iter() {
                let j = j as usize;
                let gap = (data.days[i] - data.days[j]).abs();
                if gap > window {
                    continue;
                }
                let s = jaccard(&data.entities[i], &data.entities[j]);
                if s > params.jaccard_min {
                    let (a, b) = (&articles[i].id, &articles[j].id);
                    let (id_a, id_b) = if a < b { (a, b) } else { (b, a) };
                    out.push(CandidatePair {
                        id_a: id_a.clone(),
                        id_b: id_b.clone(),
                        jaccard: s,
                        date_gap_days: gap as u32,
                    });
                }
            }
            out
        })
        .flatten()
        .collect();
    pairs.sort_by(|x, y| (&x.id_a, &x.id_b).cmp(&(&y.id_a, &y.id_b)));
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tests::{date, random_corpus};
    use crate::corpus::Article;
    use std::collections::BTreeSet;

    fn art(id: &str, d: &str, ents: &[&str]) -> Article {
        Article::new(id, "US", "en", date(d), ents.iter().copied(), 500)
    }

    fn no_cap() -> PairParams {
        PairParams {
            entity_cap: None,
            ..PairParams::default()
        }
    }

    #[test]
    fn jaccard_examples() {
        assert_eq!(jaccard(&["a", "b"], &["a", "b"]), 1.0);
        assert_eq!(jaccard(&["a"], &["b"]), 0.0);
        assert_eq!(jaccard(&["e1", "e2", "e3"], &["e2", "e3", "e4"]), 0.5);
        assert_eq!(jaccard::<&str>(&[], &[]), 0.0);
    }

    #[test]
    fn index_examples() {
        assert!(build_inverted_index(&Corpus::default()).is_empty());
        let c = Corpus::new(vec![art("a", "2020-01-01", &["e1", "e2"])]).unwrap();
        let idx = build_inverted_index(&c);
        assert_eq!(idx.article_ids("e1", &c), vec!["a"]);
        assert_eq!(idx.article_ids("e2", &c), vec!["a"]);
        assert_eq!(idx.len(), 2);
    }

    #[test]
    fn index_matches_incidence_scan() {
        let c = random_corpus(3, 300);
        let idx = build_inverted_index(&c);
        let mut incidences = BTreeSet::new();
        for (pos, a) in c.articles().iter().enumerate() {
            for e in &a.entities {
                incidences.insert((e.clone(), pos));
            }
        }
        let from_index: BTreeSet<(String, usize)> = idx
            .postings
            .iter()
            .flat_map(|(e, p)| p.iter().map(move |&i| (e.clone(), i)))
            .collect();
        assert_eq!(from_index, incidences);
        let total: usize = idx.postings.values().map(Vec::len).sum();
        assert_eq!(total, incidences.len());
    }

    #[test]
    fn window_is_inclusive_and_jaccard_strict() {
        let ents = ["e1", "e2", "e3", "e4"];
        let c = Corpus::new(vec![art("a", "2020-01-01", &ents), art("b", "2020-01-07", &ents)]).unwrap();
        assert!(generate_candidates(&c, &no_cap()).is_empty());

        let c = Corpus::new(vec![art("a", "2020-01-01", &ents), art("b", "2020-01-06", &ents)]).unwrap();
        let p = generate_candidates(&c, &no_cap());
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].date_gap_days, 5);

        // |∩| = 1, |∪| = 4
        let c = Corpus::new(vec![
            art("a", "2020-01-01", &["e1", "e2"]),
            art("b", "2020-01-01", &["e1", "e3", "e4"]),
        ])
        .unwrap();
        assert!(generate_candidates(&c, &no_cap()).is_empty());
    }

    #[test]
    fn canonical_order() {
        let c = Corpus::new(vec![art("z", "2020-01-01", &["e1"]), art("m", "2020-01-02", &["e1"])]).unwrap();
        let p = generate_candidates(&c, &no_cap());
        assert_eq!((p[0].id_a.as_str(), p[0].id_b.as_str()), ("m", "z"));
    }

    fn brute_force(c: &Corpus, jmin: f64, window: i64) -> BTreeSet<(String, String)> {
        let mut out = BTreeSet::new();
        let arts = c.articles();
        for i in 0..arts.len() {
            for j in (i + 1)..arts.len() {
                let gap = (arts[i].publish_date - arts[j].publish_date).num_days().abs();
                if gap > window {
                    continue;
                }
                let a: BTreeSet<&String> = arts[i].entities.iter().collect();
                let b: BTreeSet<&String> = arts[j].entities.iter().collect();
                let inter = a.intersection(&b).count();
                let uni = a.union(&b).count();
                if uni > 0 && inter as f64 / uni as f64 > jmin {
                    let (x, y) = if arts[i].id < arts[j].id {
                        (&arts[i].id, &arts[j].id)
                    } else {
                        (&arts[j].id, &arts[i].id)
                    };
                    out.insert((x.clone(), y.clone()));
                }
            }
        }
        out
    }

    fn as_set(p: &[CandidatePair]) -> BTreeSet<(String, String)> {
        p.iter().map(|p| (p.id_a.clone(), p.id_b.clone())).collect()
    }

    #[test]
    fn equals_double_loop() {
        let c = random_corpus(21, 1000);
        let got = generate_candidates(&c, &no_cap());
        assert_eq!(got.len(), as_set(&got).len());
        assert_eq!(as_set(&got), brute_force(&c, 0.25, 5));
    }

    #[test]
    fn cap_skips_ubiquitous_seeds() {
        let mut arts: Vec<Article> = (0..20)
            .map(|i| art(&format!("a{i:02}"), "2020-01-01", &["covid"]))
            .collect();
        arts.push(art("b", "2020-01-01", &["covid", "x"]));
        let c = Corpus::new(arts).unwrap();
        let capped = PairParams {
            entity_cap: Some(EntityCap {
                fraction: 0.1,
                min_postings: 1,
            }),
            ..PairParams::default()
        };
        assert!(generate_candidates(&c, &capped).is_empty());
        assert_eq!(generate_candidates(&c, &no_cap()).len(), 210);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]

        #[test]
        fn order_independent(seed in 0u64..1000) {
            let c = random_corpus(seed, 150);
            let mut rev: Vec<Article> = c.articles().to_vec();
            rev.reverse();
            let r = Corpus::new(rev).unwrap();
            proptest::prop_assert_eq!(
                generate_candidates(&c, &no_cap()),
                generate_candidates(&r, &no_cap())
            );
        }

        #[test]
        fn monotone_in_thresholds(seed in 0u64..1000, j in 0.0f64..0.6, dj in 0.0f64..0.3, w in 0u32..8, dw in 0u32..4) {
            let c = random_corpus(seed, 150);
            let loose = PairParams { jaccard_min: j, window_days: w + dw, entity_cap: None };
            let tight = PairParams { jaccard_min: (j + dj).min(0.99), window_days: w, entity_cap: None };
            let l = as_set(&generate_candidates(&c, &loose));
            let t = as_set(&generate_candidates(&c, &tight));
            proptest::prop_assert!(t.is_subset(&l));
        }
    }
}
