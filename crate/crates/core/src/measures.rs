//! Country-level news diversity and synchrony.
//!
//! A country's event distribution is the share of its clustered article
//! memberships falling in each event cluster. Diversity is the Shannon
//! entropy of that distribution and synchrony between two countries is the
//! negative Jensen-Shannon divergence of their distributions. All logarithms
//! are base 2, so entropy is in bits and divergence lies in [0, 1].

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::events::ClusterSet;
use crate::simgraph::WeightedGraph;
use crate::simscore::ScoredPair;

/// Sparse probability distribution keyed by cluster id.
pub type Distribution = BTreeMap<usize, f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct CountryEventDistribution {
    pub country: String,
    pub probs: Distribution,
    pub support_size: usize,
    /// Articles of the country belonging to at least one cluster.
    pub clustered_articles: usize,
    /// Articles of the country outside every cluster.
    pub unclustered_articles: usize,
}

pub fn event_distribution(cs: &ClusterSet, corpus: &Corpus, country: &str) -> Result<CountryEventDistribution> {
    let memberships = cs.memberships();
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    let (mut clustered, mut unclustered) = (0, 0);
    for a in corpus.articles().iter().filter(|a| a.country == country) {
        match memberships.get(a.id.as_str()) {
            Some(ids) => {
                clustered += 1;
                for &c in ids {
                    *counts.entry(c).or_default() += 1;
                }
            }
            None => unclustered += 1,
        }
    }
    let total: usize = counts.values().sum();
    if total == 0 {
        return Err(Error::InsufficientCoverage(country.to_owned()));
    }
    let probs: Distribution = counts.into_iter().map(|(c, k)| (c, k as f64 / total as f64)).collect();
    Ok(CountryEventDistribution {
        country: country.to_owned(),
        support_size: probs.len(),
        probs,
        clustered_articles: clustered,
        unclustered_articles: unclustered,
    })
}

/// Distributions for every country with clustered coverage; countries
/// without any are returned separately.
pub fn all_distributions(cs: &ClusterSet, corpus: &Corpus) -> (Vec<CountryEventDistribution>, Vec<String>) {
    let mut dists = Vec::new();
    let mut uncovered = Vec::new();
    for country in corpus.countries() {
        match event_distribution(cs, corpus, &country) {
            Ok(d) => dists.push(d),
            Err(_) => {
                log::warn!("country {country} has no clustered articles");
                uncovered.push(country);
            }
        }
    }
    (dists, uncovered)
}

fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.log2()
    } else {
        0.0
    }
}

/// Shannon entropy in bits.
pub fn shannon_entropy(probs: &Distribution) -> f64 {
    (-probs.values().map(|&p| plogp(p)).sum::<f64>()).max(0.0)
}

/// Jensen-Shannon divergence in bits; ids missing from one side count as
/// probability zero.
pub fn jsd(p: &Distribution, q: &Distribution) -> f64 {
    let keys: BTreeSet<usize> = p.keys().chain(q.keys()).copied().collect();
    let mut sum = 0.0;
    for k in keys {
        let a = p.get(&k).copied().unwrap_or(0.0);
        let b = q.get(&k).copied().unwrap_or(0.0);
        let m = 0.5 * (a + b);
        let term = |x: f64| if x > 0.0 { 0.5 * x * (x / m).log2() } else { 0.0 };
        // one addition per key keeps the result exactly symmetric
        sum += term(a) + term(b);
    }
    sum.clamp(0.0, 1.0)
}

pub fn synchrony(p: &Distribution, q: &Distribution) -> f64 {
    -jsd(p, q)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynchronyMatrix {
    pub countries: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl SynchronyMatrix {
    pub fn from_distributions(dists: &[CountryEventDistribution]) -> Self {
        let n = dists.len();
        let mut values = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in (i + 1)..n {
                let s = synchrony(&dists[i].probs, &dists[j].probs);
                values[i][j] = s;
                values[j][i] = s;
            }
        }
        Self {
            countries: dists.iter().map(|d| d.country.clone()).collect(),
            values,
        }
    }

    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.countries.iter().position(|c| c == a)?;
        let j = self.countries.iter().position(|c| c == b)?;
        Some(self.values[i][j])
    }

    /// Upper-triangle entries `(a, b, synchrony)`.
    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str, f64)> + '_ {
        let n = self.countries.len();
        (0..n).flat_map(move |i| {
            ((i + 1)..n).map(move |j| {
                (
                    self.countries[i].as_str(),
                    self.countries[j].as_str(),
                    self.values[i][j],
                )
            })
        })
    }
}

#[derive(Debug, Clone)]
pub struct Subsample {
    pub corpus: Corpus,
    /// Countries with fewer than `per_country` articles.
    pub excluded: Vec<String>,
}

/// Draws exactly `per_country` articles without replacement from every
/// country that has that many. Output keeps corpus order.
pub fn equal_weight_subsample(corpus: &Corpus, per_country: usize, rng_seed: u64) -> Subsample {
    let mut by_country: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, a) in corpus.articles().iter().enumerate() {
        by_country.entry(a.country.as_str()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut keep = vec![false; corpus.len()];
    let mut excluded = Vec::new();
    for (country, positions) in by_country {
        if positions.len() < per_country {
            log::warn!(
                "country {country} has {} articles, below the subsample size {per_country}",
                positions.len()
            );
            excluded.push(country.to_owned());
            continue;
        }
        for &p in positions.choose_multiple(&mut rng, per_country) {
            keep[p] = true;
        }
    }
    let mut i = 0;
    let corpus = corpus.retain(|_| {
        let k = keep[i];
        i += 1;
        k
    });
    Subsample { corpus, excluded }
}

/// Mean similarity over scored pairs with both articles in `country`.
pub fn baseline_diversity(scored: &[ScoredPair], corpus: &Corpus, country: &str) -> Result<f64> {
    mean_similarity(scored, corpus, |a, b| a == country && b == country)
        .ok_or_else(|| Error::NoPairs(format!("no scored pairs within {country}")))
}

/// Mean similarity over scored pairs joining countries `a` and `b`.
pub fn baseline_synchrony(scored: &[ScoredPair], corpus: &Corpus, a: &str, b: &str) -> Result<f64> {
    mean_similarity(scored, corpus, |x, y| (x == a && y == b) || (x == b && y == a))
        .ok_or_else(|| Error::NoPairs(format!("no scored pairs between {a} and {b}")))
}

fn mean_similarity(scored: &[ScoredPair], corpus: &Corpus, select: impl Fn(&str, &str) -> bool) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for p in scored {
        let (Some(x), Some(y)) = (corpus.get(&p.id_a), corpus.get(&p.id_b)) else {
            continue;
        };
        if select(&x.country, &y.country) {
            sum += p.similarity;
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Baseline measures for every country and country pair in one pass.
pub fn baseline_tables(
    scored: &[ScoredPair],
    corpus: &Corpus,
) -> (BTreeMap<String, f64>, BTreeMap<(String, String), f64>) {
    let mut within: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    let mut between: BTreeMap<(String, String), (f64, usize)> = BTreeMap::new();
    for p in scored {
        let (Some(x), Some(y)) = (corpus.get(&p.id_a), corpus.get(&p.id_b)) else {
            continue;
        };
        let slot = if x.country == y.country {
            within.entry(x.country.clone()).or_default()
        } else {
            let key = if x.country < y.country {
                (x.country.clone(), y.country.clone())
            } else {
                (y.country.clone(), x.country.clone())
            };
            between.entry(key).or_default()
        };
        slot.0 += p.similarity;
        slot.1 += 1;
    }
    (
        within.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect(),
        between.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect(),
    )
}

#[derive(Debug, Clone)]
pub struct CountryGraph {
    pub graph: WeightedGraph,
    /// Countries kept, in population order.
    pub selected: Vec<String>,
    /// Countries skipped for lack of a population value.
    pub missing_population: Vec<String>,
}

/// Complete graph over the `top_by_population` most populous countries with
/// edge weight `1 + synchrony`. Pairs with zero weight get no edge.
pub fn synchrony_graph(
    matrix: &SynchronyMatrix,
    populations: &BTreeMap<String, f64>,
    top_by_population: usize,
) -> Result<CountryGraph> {
    let mut with_pop = Vec::new();
    let mut missing = Vec::new();
    for c in &matrix.countries {
        match populations.get(c) {
            Some(&p) => with_pop.push((c.clone(), p)),
            None => {
                log::warn!("no population for {c}; left out of the synchrony graph");
                missing.push(c.clone());
            }
        }
    }
    with_pop.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    with_pop.truncate(top_by_population);
    let selected: Vec<String> = with_pop.into_iter().map(|(c, _)| c).collect();
    let mut edges = Vec::new();
    for (i, a) in selected.iter().enumerate() {
        for b in &selected[i + 1..] {
            let w = 1.0 + matrix.get(a, b).expect("selected from matrix");
            if w > 0.0 {
                edges.push((a.clone(), b.clone(), w));
            }
        }
    }
    let graph = WeightedGraph::from_parts(selected.iter().cloned(), edges)?;
    Ok(CountryGraph {
        graph,
        selected,
        missing_population: missing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tests::date;
    use crate::corpus::Article;
    use crate::events::EventCluster;
    use proptest::prelude::*;
    use rand::Rng;

    fn dist(v: &[f64]) -> Distribution {
        v.iter().copied().enumerate().filter(|(_, p)| *p > 0.0).collect()
    }

    fn art(id: &str, country: &str) -> Article {
        Article::new(id, country, "en", date("2020-01-01"), ["Q"], 100)
    }

    fn cl(id: usize, members: &[String]) -> EventCluster {
        EventCluster {
            cluster_id: id,
            significance: 0.0,
            members: members.to_vec(),
        }
    }

    #[test]
    fn distribution_examples() {
        let ids: Vec<String> = (0..10).map(|i| format!("a{i}")).collect();
        let corpus = Corpus::new(ids.iter().map(|i| art(i, "US")).collect()).unwrap();
        let cs = ClusterSet {
            clusters: vec![cl(0, &ids[..5]), cl(1, &ids[5..])],
            unassigned: vec![],
        };
        let d = event_distribution(&cs, &corpus, "US").unwrap();
        assert_eq!(d.probs, dist(&[0.5, 0.5]));
        assert_eq!(d.support_size, 2);

        let cs = ClusterSet {
            clusters: vec![cl(3, &ids)],
            unassigned: vec![],
        };
        let d = event_distribution(&cs, &corpus, "US").unwrap();
        assert_eq!(d.probs, BTreeMap::from([(3, 1.0)]));
        assert!(matches!(
            event_distribution(&cs, &corpus, "FR"),
            Err(Error::InsufficientCoverage(_))
        ));
    }

    #[test]
    fn distribution_matches_membership_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let countries = ["US", "DE", "JP"];
        let articles: Vec<Article> = (0..120)
            .map(|i| art(&format!("a{i:03}"), countries[rng.gen_range(0..3)]))
            .collect();
        let corpus = Corpus::new(articles).unwrap();
        let clusters: Vec<EventCluster> = (0..9)
            .map(|c| {
                let m: Vec<String> = (0..120)
                    .filter(|_| rng.gen_bool(0.2))
                    .map(|i| format!("a{i:03}"))
                    .collect();
                cl(c, &m)
            })
            .collect();
        let cs = ClusterSet {
            clusters,
            unassigned: vec![],
        };
        for country in countries {
            let d = event_distribution(&cs, &corpus, country).unwrap();
            let mut counts = [0usize; 9];
            for c in &cs.clusters {
                for m in &c.members {
                    if corpus.get(m).unwrap().country == country {
                        counts[c.cluster_id] += 1;
                    }
                }
            }
            let total: usize = counts.iter().sum();
            for (c, &k) in counts.iter().enumerate() {
                let expect = k as f64 / total as f64;
                assert!((d.probs.get(&c).copied().unwrap_or(0.0) - expect).abs() < 1e-15);
            }
            assert!((d.probs.values().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn entropy_examples() {
        assert!((shannon_entropy(&dist(&[0.25; 4])) - 2.0).abs() < 1e-15);
        assert_eq!(shannon_entropy(&dist(&[1.0])), 0.0);
        assert!((shannon_entropy(&dist(&[0.5, 0.5, 0.0])) - 1.0).abs() < 1e-15);
    }

    fn kl_oracle(p: &[f64], q: &[f64]) -> f64 {
        p.iter()
            .zip(q)
            .filter(|(a, _)| **a > 0.0)
            .map(|(a, b)| a * (a / b).ln() / std::f64::consts::LN_2)
            .sum()
    }

    #[test]
    fn jsd_examples() {
        let p = dist(&[0.2, 0.3, 0.5]);
        assert_eq!(jsd(&p, &p), 0.0);
        assert!((jsd(&dist(&[0.5, 0.5, 0.0, 0.0]), &dist(&[0.0, 0.0, 0.3, 0.7])) - 1.0).abs() < 1e-12);
        let (a, b) = ([1.0, 0.0], [0.5, 0.5]);
        let m = [0.75, 0.25];
        let oracle = 0.5 * kl_oracle(&a, &m) + 0.5 * kl_oracle(&b, &m);
        let got = jsd(&dist(&a), &dist(&b));
        assert!((got - oracle).abs() < 1e-12);
        assert!((got - 0.3113).abs() < 1e-4);
    }

    #[test]
    fn subsample_examples() {
        let mut arts = Vec::new();
        for (c, n) in [("US", 80), ("DE", 60), ("FR", 50), ("XX", 10)] {
            for i in 0..n {
                arts.push(art(&format!("{c}{i:03}"), c));
            }
        }
        let corpus = Corpus::new(arts).unwrap();
        let s = equal_weight_subsample(&corpus, 50, 4);
        assert_eq!(s.corpus.len(), 150);
        assert_eq!(s.excluded, vec!["XX"]);
        let per: BTreeMap<&str, usize> = s.corpus.articles().iter().fold(BTreeMap::new(), |mut m, a| {
            *m.entry(a.country.as_str()).or_default() += 1;
            m
        });
        assert!(per.values().all(|&n| n == 50));
        let again = equal_weight_subsample(&corpus, 50, 4);
        assert_eq!(s.corpus.articles(), again.corpus.articles());
        for a in s.corpus.articles() {
            assert_eq!(corpus.get(&a.id), Some(a));
        }
    }

    fn sp(a: &str, b: &str, s: f64) -> ScoredPair {
        ScoredPair {
            id_a: a.into(),
            id_b: b.into(),
            similarity: s,
        }
    }

    #[test]
    fn baseline_examples() {
        let corpus = Corpus::new(vec![art("u1", "US"), art("u2", "US"), art("d1", "DE")]).unwrap();
        let scored = vec![sp("u1", "u2", 0.8), sp("d1", "u1", 0.6)];
        assert_eq!(baseline_diversity(&scored, &corpus, "US").unwrap(), 0.8);
        assert!(baseline_diversity(&scored, &corpus, "DE").is_err());
        assert_eq!(baseline_synchrony(&scored, &corpus, "US", "DE").unwrap(), 0.6);
        assert_eq!(baseline_synchrony(&scored, &corpus, "DE", "US").unwrap(), 0.6);
        let (w, b) = baseline_tables(&scored, &corpus);
        assert_eq!(w["US"], 0.8);
        assert_eq!(b[&("DE".to_string(), "US".to_string())], 0.6);
    }

    #[test]
    fn baseline_matches_filter_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let countries = ["US", "DE", "JP"];
        let corpus = Corpus::new((0..60).map(|i| art(&format!("a{i:02}"), countries[i % 3])).collect()).unwrap();
        let scored: Vec<ScoredPair> = (0..400)
            .map(|_| {
                let a = rng.gen_range(0..60);
                let b = (a + rng.gen_range(1..60)) % 60;
                sp(&format!("a{a:02}"), &format!("a{b:02}"), rng.gen_range(-1.0..1.0))
            })
            .collect();
        let (w, b) = baseline_tables(&scored, &corpus);
        for c in countries {
            let v: Vec<f64> = scored
                .iter()
                .filter(|p| corpus.get(&p.id_a).unwrap().country == c && corpus.get(&p.id_b).unwrap().country == c)
                .map(|p| p.similarity)
                .collect();
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            assert!((baseline_diversity(&scored, &corpus, c).unwrap() - mean).abs() < 1e-12);
            assert!((w[c] - mean).abs() < 1e-12);
        }
        let v: Vec<f64> = scored
            .iter()
            .filter(|p| {
                let (x, y) = (
                    &corpus.get(&p.id_a).unwrap().country,
                    &corpus.get(&p.id_b).unwrap().country,
                );
                (x == "US" && y == "JP") || (x == "JP" && y == "US")
            })
            .map(|p| p.similarity)
            .collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert!((baseline_synchrony(&scored, &corpus, "JP", "US").unwrap() - mean).abs() < 1e-12);
        assert!((b[&("JP".to_string(), "US".to_string())] - mean).abs() < 1e-12);
    }

    #[test]
    fn synchrony_graph_examples() {
        let m = SynchronyMatrix {
            countries: vec!["A".into(), "B".into(), "C".into(), "D".into()],
            values: vec![
                vec![0.0, -0.2, -0.5, -0.3],
                vec![-0.2, 0.0, -0.9, -0.3],
                vec![-0.5, -0.9, 0.0, -0.3],
                vec![-0.3, -0.3, -0.3, 0.0],
            ],
        };
        let pops = BTreeMap::from([
            ("A".to_string(), 10.0),
            ("B".to_string(), 30.0),
            ("C".to_string(), 20.0),
        ]);
        let cg = synchrony_graph(&m, &pops, 100).unwrap();
        assert_eq!(cg.missing_population, vec!["D"]);
        assert_eq!(cg.selected, vec!["B", "C", "A"]);
        assert!((cg.graph.weight("A", "B").unwrap() - 0.8).abs() < 1e-15);
        assert!((cg.graph.weight("A", "C").unwrap() - 0.5).abs() < 1e-15);
        assert!((cg.graph.weight("B", "C").unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(cg.graph.weight("C", "B"), cg.graph.weight("B", "C"));
        assert!(cg.graph.edges().all(|(a, b, _)| a != b));

        let top2 = synchrony_graph(&m, &pops, 2).unwrap();
        let mut by_pop: Vec<(&String, &f64)> = pops.iter().collect();
        by_pop.sort_by(|a, b| b.1.total_cmp(a.1));
        let expect: Vec<String> = by_pop.iter().take(2).map(|(c, _)| (*c).clone()).collect();
        assert_eq!(top2.selected, expect);
    }

    fn arb_dist(k: usize) -> impl Strategy<Value = Distribution> {
        proptest::collection::vec(0.0f64..1.0, k).prop_filter_map("nonzero", |v| {
            let s: f64 = v.iter().sum();
            (s > 1e-6).then(|| v.iter().map(|x| x / s).enumerate().filter(|(_, p)| *p > 0.0).collect())
        })
    }

    proptest! {
        #[test]
        fn jsd_properties(p in arb_dist(6), q in arb_dist(6)) {
            let d = jsd(&p, &q);
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert!((d - jsd(&q, &p)).abs() < 1e-15);
            prop_assert_eq!(jsd(&p, &p), 0.0);
            prop_assert!(synchrony(&p, &q) >= -1.0);
        }

        #[test]
        fn entropy_bounded_by_support(p in arb_dist(8)) {
            let h = shannon_entropy(&p);
            prop_assert!(h >= 0.0);
            prop_assert!(h <= (p.len() as f64).log2() + 1e-12);
        }

        #[test]
        fn measures_ignore_article_identity(seed in 0u64..1000) {
            // relabeling articles inside clusters leaves the distribution alone
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let corpus = Corpus::new((0..30).map(|i| art(&format!("a{i:02}"), if i % 2 == 0 { "US" } else { "DE" })).collect()).unwrap();
            let members: Vec<Vec<String>> = (0..4).map(|_| (0..30).filter(|_| rng.gen_bool(0.3)).map(|i| format!("a{i:02}")).collect()).collect();
            let cs = ClusterSet { clusters: members.iter().enumerate().map(|(i, m)| cl(i, m)).collect(), unassigned: vec![] };
            // swap two same-country ids everywhere
            let swap = |s: &String| match s.as_str() { "a00" => "a02".to_string(), "a02" => "a00".to_string(), _ => s.clone() };
            let swapped = ClusterSet { clusters: members.iter().enumerate().map(|(i, m)| cl(i, &m.iter().map(swap).collect::<Vec<_>>())).collect(), unassigned: vec![] };
            let a = event_distribution(&cs, &corpus, "US");
            let b = event_distribution(&swapped, &corpus, "US");
            match (a, b) {
                (Ok(a), Ok(b)) => prop_assert_eq!(a.probs, b.probs),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false),
            }
        }
    }
}
