//! Event detection: statistically significant, possibly overlapping clusters
//! in the article similarity graph.
//!
//! Each candidate cluster `C` is tested node by node against a weighted
//! configuration null model. For a node `i` with strength `s_i` and observed
//! weight `w_iC` into `C`, the r-score is the probability that strength-
//! preserving random rewiring gives `i` at least that much weight into `C`.
//! Weights are measured in units of the mean edge weight, and the tail is
//! the continuous extension of the binomial tail,
//!
//! ```text
//! r = P(X >= x) = I_pi(x, n - x + 1),   n = s_i / u,   x = w_iC / u,
//! pi = k_C_out / (2W - k_C_in - s_i)
//! ```
//!
//! where `k_C_in` counts stubs internal to `C` and `k_C_out` stubs leaving
//! it. Since every outside node draws its own r-score, the q-th best one is
//! judged against the distribution of the q-th order statistic of uniform
//! variables, `Omega_q(r) = I_r(q, N_ext - q + 1)`. Candidates are admitted
//! while `Omega_q < threshold`, and members whose own score (computed as if
//! they were the best outside candidate) reaches the threshold are pruned.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::simgraph::WeightedGraph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventCluster {
    pub cluster_id: usize,
    /// Lower is more significant.
    pub significance: f64,
    /// Sorted article ids.
    pub members: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClusterSet {
    pub clusters: Vec<EventCluster>,
    pub unassigned: Vec<String>,
}

impl ClusterSet {
    /// Every article id known to the set, sorted.
    pub fn universe(&self) -> Vec<String> {
        let mut all: BTreeSet<&str> = self.unassigned.iter().map(String::as_str).collect();
        for c in &self.clusters {
            all.extend(c.members.iter().map(String::as_str));
        }
        all.into_iter().map(str::to_owned).collect()
    }

    /// Article id → ids of the clusters containing it.
    pub fn memberships(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut m: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for c in &self.clusters {
            for a in &c.members {
                m.entry(a.as_str()).or_default().push(c.cluster_id);
            }
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventParams {
    pub significance_threshold: f64,
    pub max_iterations: usize,
    pub rng_seed: u64,
    /// Clusters overlapping more than this (Jaccard) are merged into the more
    /// significant one.
    pub dedup_overlap: f64,
    /// Use weighted label propagation instead of significance clustering.
    /// Debugging aid only; clusters are not filtered by significance.
    pub label_propagation: bool,
}

impl Default for EventParams {
    fn default() -> Self {
        Self {
            significance_threshold: 0.1,
            max_iterations: 50,
            rng_seed: 0,
            dedup_overlap: 0.9,
            label_propagation: false,
        }
    }
}

/// Continuous binomial upper tail `P(X >= x)` for `X ~ Bin(n, p)`.
fn binomial_tail(x: f64, n: f64, p: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let x = x.min(n);
    beta_reg(x, n - x + 1.0, p)
}

/// `P(q-th smallest of n_ext uniforms <= r)`.
fn order_statistic(r: f64, q: usize, n_ext: usize) -> f64 {
    if n_ext == 0 || q > n_ext {
        return 1.0;
    }
    if r <= 0.0 {
        return 0.0;
    }
    if r >= 1.0 {
        return 1.0;
    }
    beta_reg(q as f64, (n_ext - q + 1) as f64, r)
}

/// Null-model quantities shared by every cluster evaluation.
struct NullModel<'g> {
    g: &'g WeightedGraph,
    strength: Vec<f64>,
    two_w: f64,
    unit: f64,
    n: usize,
    density: f64,
}

/// Running totals for one cluster.
#[derive(Clone)]
struct ClusterState {
    member: Vec<bool>,
    size: usize,
    /// Total strength of members.
    k_tot: f64,
    /// Stubs internal to the cluster (twice the internal weight).
    k_in: f64,
}

impl<'g> NullModel<'g> {
    fn new(g: &'g WeightedGraph) -> Self {
        let n = g.node_count();
        let strength: Vec<f64> = (0..n).map(|i| g.strength(i)).collect();
        let w = g.total_weight();
        let unit = if g.edge_count() > 0 {
            w / g.edge_count() as f64
        } else {
            1.0
        };
        let pairs = (n as f64) * (n as f64 - 1.0) / 2.0;
        let density = if pairs > 0.0 { (w / unit / pairs).min(1.0) } else { 1.0 };
        Self {
            g,
            strength,
            two_w: 2.0 * w,
            unit,
            n,
            density,
        }
    }

    fn state(&self, members: &[usize]) -> ClusterState {
        let mut s = ClusterState {
            member: vec![false; self.n],
            size: 0,
            k_tot: 0.0,
            k_in: 0.0,
        };
        for &m in members {
            self.add(&mut s, m);
        }
        s
    }

    fn weight_into(&self, s: &ClusterState, i: usize) -> f64 {
        self.g
            .neighbors(i)
            .iter()
            .filter(|&&(j, _)| j != i && s.member[j])
            .map(|&(_, w)| w)
            .sum()
    }

    fn add(&self, s: &mut ClusterState, i: usize) {
        debug_assert!(!s.member[i]);
        let w = self.weight_into(s, i);
        s.member[i] = true;
        s.size += 1;
        s.k_tot += self.strength[i];
        s.k_in += 2.0 * w;
    }

    fn remove(&self, s: &mut ClusterState, i: usize) {
        debug_assert!(s.member[i]);
        s.member[i] = false;
        let w = self.weight_into(s, i);
        s.size -= 1;
        s.k_tot -= self.strength[i];
        s.k_in -= 2.0 * w;
    }

    /// r-score of outside node `i` attaching `w_ic` to a cluster with the
    /// given totals.
    fn r_score(&self, i: usize, w_ic: f64, size: usize, k_tot: f64, k_in: f64) -> f64 {
        if w_ic <= 0.0 {
            return 1.0;
        }
        let s_i = self.strength[i];
        let k_out = (k_tot - k_in).max(0.0);
        let outside = self.two_w - k_tot - s_i;
        let eps = 1e-9 * self.two_w.max(1.0);
        if outside > eps {
            let pool = self.two_w - k_in - s_i;
            let pi = (k_out / pool).clamp(0.0, 1.0);
            binomial_tail(w_ic / self.unit, s_i / self.unit, pi)
        } else {
            // C ∪ {i} holds every edge, so rewiring cannot move weight
            // elsewhere; compare against a uniform-density graph instead.
            binomial_tail((w_ic / self.unit).min(size as f64), size as f64, self.density)
        }
    }

    /// Retention score of every member: the member's r-score against the
    /// rest of the cluster, judged as the best of `N - |C| + 1` outsiders.
    fn member_scores(&self, s: &ClusterState, members: &[usize]) -> Vec<f64> {
        let n_ext = self.n - s.size + 1;
        members
            .iter()
            .map(|&j| {
                let w = self.weight_into(s, j);
                let r = self.r_score(j, w, s.size - 1, s.k_tot - self.strength[j], s.k_in - 2.0 * w);
                order_statistic(r, 1, n_ext)
            })
            .collect()
    }

    /// Outside neighbors with their r-scores, best first.
    fn candidates(&self, s: &ClusterState, members: &[usize]) -> Vec<(f64, usize)> {
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for &m in members {
            for &(j, w) in self.g.neighbors(m) {
                if !s.member[j] {
                    *acc.entry(j).or_insert(0.0) += w;
                }
            }
        }
        let mut out: Vec<(f64, usize)> = acc
            .into_iter()
            .map(|(j, w)| (self.r_score(j, w, s.size, s.k_tot, s.k_in), j))
            .collect();
        out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        out
    }

    /// Drops the worst member while its retention score reaches `threshold`.
    fn prune(&self, s: &mut ClusterState, members: &mut Vec<usize>, threshold: f64) -> bool {
        let mut changed = false;
        while members.len() >= 2 {
            let scores = self.member_scores(s, members);
            let (worst, &score) = scores
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1).then(members[b.0].cmp(&members[a.0])))
                .expect("nonempty");
            if score < threshold {
                break;
            }
            let node = members.swap_remove(worst);
            self.remove(s, node);
            changed = true;
        }
        if members.len() < 2 {
            for &m in members.iter() {
                self.remove(s, m);
            }
            members.clear();
        }
        changed
    }

    /// Admits the best outside candidates while their order statistic stays
    /// below `threshold`.
    fn grow(&self, s: &mut ClusterState, members: &mut Vec<usize>, threshold: f64) -> bool {
        let cands = self.candidates(s, members);
        let n_ext = self.n - s.size;
        let mut admitted = Vec::new();
        for (q, &(r, j)) in cands.iter().enumerate() {
            if order_statistic(r, q + 1, n_ext) < threshold {
                admitted.push(j);
            } else {
                break;
            }
        }
        for &j in &admitted {
            self.add(s, j);
            members.push(j);
        }
        !admitted.is_empty()
    }

    fn significance(&self, s: &ClusterState, members: &[usize]) -> f64 {
        if members.len() < 2 {
            return 1.0;
        }
        self.member_scores(s, members).into_iter().fold(0.0, f64::max)
    }
}

/// Significance score of an arbitrary member set: the worst member's
/// retention score. Lower is more significant.
pub fn cluster_significance(g: &WeightedGraph, members: &[&str]) -> Result<f64> {
    let null = NullModel::new(g);
    let idx: Vec<usize> = members
        .iter()
        .map(|m| g.node_index(m).ok_or_else(|| Error::UnknownArticle((*m).to_owned())))
        .collect::<Result<_>>()?;
    let unique: BTreeSet<usize> = idx.iter().copied().collect();
    let idx: Vec<usize> = unique.into_iter().collect();
    let state = null.state(&idx);
    Ok(null.significance(&state, &idx))
}

fn jaccard_sorted(a: &[usize], b: &[usize]) -> f64 {
    crate::pairgen::jaccard(a, b)
}

/// Detects event clusters. Deterministic for a fixed graph and seed.
pub fn detect_events(g: &WeightedGraph, params: &EventParams) -> ClusterSet {
    if params.label_propagation {
        return label_propagation(g, params);
    }
    let null = NullModel::new(g);
    let threshold = params.significance_threshold;
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);

    // strongest nodes seed first; the shuffle only orders ties
    let mut order: Vec<usize> = (0..g.node_count()).filter(|&i| g.degree(i) > 0).collect();
    order.shuffle(&mut rng);
    order.sort_by(|&a, &b| null.strength[b].total_cmp(&null.strength[a]));

    let mut covered = vec![false; g.node_count()];
    let mut found: Vec<(f64, Vec<usize>)> = Vec::new();
    for &seed in &order {
        if covered[seed] {
            continue;
        }
        let mut members: Vec<usize> = std::iter::once(seed)
            .chain(g.neighbors(seed).iter().map(|&(j, _)| j))
            .collect();
        let mut state = null.state(&members);
        let mut visited: HashSet<Vec<usize>> = HashSet::new();
        for _ in 0..params.max_iterations {
            let pruned = null.prune(&mut state, &mut members, threshold);
            if members.is_empty() {
                break;
            }
            let grew = null.grow(&mut state, &mut members, threshold);
            let mut key = members.clone();
            key.sort_unstable();
            if (!pruned && !grew) || !visited.insert(key) {
                break;
            }
        }
        null.prune(&mut state, &mut members, threshold);
        if members.len() < 2 {
            continue;
        }
        let sig = null.significance(&state, &members);
        if sig >= threshold {
            continue;
        }
        members.sort_unstable();
        for &m in &members {
            covered[m] = true;
        }
        found.push((sig, members));
    }
    finalize(g, found, params.dedup_overlap)
}

/// Orders clusters by (significance, smallest member id), drops
/// near-duplicates and assigns ids.
fn finalize(g: &WeightedGraph, mut found: Vec<(f64, Vec<usize>)>, dedup: f64) -> ClusterSet {
    found.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    let mut kept: Vec<(f64, Vec<usize>)> = Vec::new();
    for (sig, m) in found {
        if kept.iter().all(|(_, k)| jaccard_sorted(k, &m) <= dedup) {
            kept.push((sig, m));
        }
    }
    let mut assigned = vec![false; g.node_count()];
    let clusters = kept
        .into_iter()
        .enumerate()
        .map(|(id, (sig, m))| {
            for &i in &m {
                assigned[i] = true;
            }
            EventCluster {
                cluster_id: id,
                significance: sig,
                members: m.iter().map(|&i| g.name(i).to_owned()).collect(),
            }
        })
        .collect();
    let unassigned = (0..g.node_count())
        .filter(|&i| !assigned[i])
        .map(|i| g.name(i).to_owned())
        .collect();
    ClusterSet { clusters, unassigned }
}

fn label_propagation(g: &WeightedGraph, params: &EventParams) -> ClusterSet {
    let n = g.node_count();
    let mut label: Vec<usize> = (0..n).collect();
    for _ in 0..params.max_iterations.max(1) {
        let mut changed = false;
        for i in 0..n {
            let mut votes: BTreeMap<usize, f64> = BTreeMap::new();
            for &(j, w) in g.neighbors(i) {
                *votes.entry(label[j]).or_insert(0.0) += w;
            }
            if let Some((&best, _)) = votes.iter().max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(a.0))) {
                if best != label[i] {
                    label[i] = best;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in label.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    let null = NullModel::new(g);
    let found = groups
        .into_values()
        .filter(|m| m.len() >= 2)
        .map(|m| {
            let s = null.state(&m);
            (null.significance(&s, &m), m)
        })
        .collect();
    finalize(g, found, params.dedup_overlap)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterStats {
    pub cluster_id: usize,
    pub duration_days: u64,
    pub article_count: usize,
    pub language_count: usize,
    pub country_count: usize,
    pub first_date: NaiveDate,
    pub last_date: NaiveDate,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventStats {
    pub per_cluster: Vec<ClusterStats>,
    pub duration_histogram: BTreeMap<u64, usize>,
    pub size_histogram: BTreeMap<u64, usize>,
    pub language_histogram: BTreeMap<u64, usize>,
}

pub fn event_stats(cs: &ClusterSet, corpus: &Corpus) -> Result<EventStats> {
    let mut stats = EventStats::default();
    for c in &cs.clusters {
        let mut langs = BTreeSet::new();
        let mut countries = BTreeSet::new();
        let mut lo: Option<NaiveDate> = None;
        let mut hi: Option<NaiveDate> = None;
        for id in &c.members {
            let a = corpus.get(id).ok_or_else(|| Error::UnknownArticle(id.clone()))?;
            langs.insert(a.language.as_str());
            countries.insert(a.country.as_str());
            lo = Some(lo.map_or(a.publish_date, |d| d.min(a.publish_date)));
            hi = Some(hi.map_or(a.publish_date, |d| d.max(a.publish_date)));
        }
        let (Some(first), Some(last)) = (lo, hi) else {
            continue;
        };
        let cs = ClusterStats {
            cluster_id: c.cluster_id,
            duration_days: (last - first).num_days() as u64 + 1,
            article_count: c.members.len(),
            language_count: langs.len(),
            country_count: countries.len(),
            first_date: first,
            last_date: last,
        };
        *stats.duration_histogram.entry(cs.duration_days).or_default() += 1;
        *stats.size_histogram.entry(cs.article_count as u64).or_default() += 1;
        *stats.language_histogram.entry(cs.language_count as u64).or_default() += 1;
        stats.per_cluster.push(cs);
    }
    Ok(stats)
}

pub const BUNDLE_SIZE: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntrusionBundle {
    pub cluster_id: usize,
    pub in_cluster: Vec<String>,
    pub intruder: String,
    /// The 11 articles in the order shown to raters.
    pub presentation: Vec<String>,
}

/// One bundle for each of the `n_largest` largest clusters and for
/// `n_random` further clusters drawn at random, each with ten members and
/// one outside intruder, shuffled.
pub fn intrusion_bundles(cs: &ClusterSet, n_largest: usize, n_random: usize, rng_seed: u64) -> Vec<IntrusionBundle> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut eligible: Vec<&EventCluster> = cs.clusters.iter().filter(|c| c.members.len() >= BUNDLE_SIZE).collect();
    eligible.sort_by(|a, b| {
        b.members
            .len()
            .cmp(&a.members.len())
            .then(a.cluster_id.cmp(&b.cluster_id))
    });
    let take_large = n_largest.min(eligible.len());
    let mut selected: Vec<&EventCluster> = eligible[..take_large].to_vec();
    let mut rest: Vec<&EventCluster> = eligible[take_large..].to_vec();
    rest.shuffle(&mut rng);
    selected.extend(rest.into_iter().take(n_random));
    if selected.len() < n_largest + n_random {
        log::warn!(
            "only {} clusters with at least {BUNDLE_SIZE} members; requested {}",
            selected.len(),
            n_largest + n_random
        );
    }
    let universe = cs.universe();
    let mut out = Vec::with_capacity(selected.len());
    for c in selected {
        let members: HashSet<&str> = c.members.iter().map(String::as_str).collect();
        let outside: Vec<&String> = universe.iter().filter(|a| !members.contains(a.as_str())).collect();
        let Some(&intruder) = outside.choose(&mut rng) else {
            log::warn!("cluster {} has no outside article for an intruder", c.cluster_id);
            continue;
        };
        let in_cluster: Vec<String> = c.members.choose_multiple(&mut rng, BUNDLE_SIZE).cloned().collect();
        let mut presentation = in_cluster.clone();
        presentation.push(intruder.clone());
        presentation.shuffle(&mut rng);
        out.push(IntrusionBundle {
            cluster_id: c.cluster_id,
            in_cluster,
            intruder: intruder.clone(),
            presentation,
        });
    }
    out
}

/// Number of distinct unordered article pairs that share at least one
/// cluster.
pub fn cluster_pair_counts(cs: &ClusterSet) -> u64 {
    let choose2 = |n: usize| (n as u64) * (n as u64).saturating_sub(1) / 2;
    let total: u64 = cs.clusters.iter().map(|c| choose2(c.members.len())).sum();
    // a pair counted k > 1 times needs both ends in several clusters
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for c in &cs.clusters {
        for m in &c.members {
            *counts.entry(m.as_str()).or_default() += 1;
        }
    }
    let mut multi: HashMap<(&str, &str), u64> = HashMap::new();
    for c in &cs.clusters {
        let shared: Vec<&str> = c.members.iter().map(String::as_str).filter(|m| counts[m] > 1).collect();
        for (i, a) in shared.iter().enumerate() {
            for b in &shared[i + 1..] {
                let key = if a < b { (*a, *b) } else { (*b, *a) };
                *multi.entry(key).or_default() += 1;
            }
        }
    }
    let excess: u64 = multi.values().map(|&k| k - 1).sum();
    total - excess
}
