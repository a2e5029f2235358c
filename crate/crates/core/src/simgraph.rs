//! Weighted undirected graphs and the analytics run on them.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::path::Path;

use crate::error::{Error, Result};
use crate::simscore::ScoredPair;

/// Undirected graph with positive finite edge weights, no self-loops and no
/// parallel edges. Nodes are kept in sorted id order, so node indices follow
/// id order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightedGraph {
    nodes: Vec<String>,
    index: HashMap<String, usize>,
    adj: Vec<Vec<(usize, f64)>>,
    edges: Vec<(usize, usize, f64)>,
}

impl WeightedGraph {
    /// Builds a graph from explicit nodes plus edges; edge endpoints are added
    /// as nodes when missing. Repeated edges must carry identical weights.
    pub fn from_parts<N, E, S>(nodes: N, edges: E) -> Result<Self>
    where
        N: IntoIterator<Item = S>,
        E: IntoIterator<Item = (S, S, f64)>,
        S: Into<String>,
    {
        let mut node_set: BTreeSet<String> = nodes.into_iter().map(Into::into).collect();
        let mut edge_map: BTreeMap<(String, String), f64> = BTreeMap::new();
        for (a, b, w) in edges {
            let (a, b): (String, String) = (a.into(), b.into());
            if a == b {
                return Err(Error::InvalidInput(format!("self-loop on `{a}`")));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "edge ({a}, {b}) has non-positive or non-finite weight {w}"
                )));
            }
            let key = if a < b { (a, b) } else { (b, a) };
            match edge_map.get(&key) {
                Some(&old) if old != w => {
                    return Err(Error::ConflictingEdge {
                        a: key.0,
                        b: key.1,
                        w1: old,
                        w2: w,
                    })
                }
                Some(_) => {}
                None => {
                    node_set.insert(key.0.clone());
                    node_set.insert(key.1.clone());
                    edge_map.insert(key, w);
                }
            }
        }
        let nodes: Vec<String> = node_set.into_iter().collect();
        let index: HashMap<String, usize> = nodes.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        let mut adj = vec![Vec::new(); nodes.len()];
        let mut edges = Vec::with_capacity(edge_map.len());
        for ((a, b), w) in edge_map {
            let (u, v) = (index[&a], index[&b]);
            adj[u].push((v, w));
            adj[v].push((u, w));
            edges.push((u, v, w));
        }
        for list in &mut adj {
            list.sort_by_key(|&(n, _)| n);
        }
        Ok(Self {
            nodes,
            index,
            adj,
            edges,
        })
    }

    pub fn from_edges<S: Into<String>>(edges: impl IntoIterator<Item = (S, S, f64)>) -> Result<Self> {
        Self::from_parts(std::iter::empty::<S>(), edges)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.nodes[i]
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adj[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    pub fn strength(&self, i: usize) -> f64 {
        self.adj[i].iter().map(|&(_, w)| w).sum()
    }

    /// Edges as `(u, v, w)` index triples with `u < v`.
    pub fn edge_indices(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn edges(&self) -> impl Iterator<Item = (&str, &str, f64)> + '_ {
        self.edges
            .iter()
            .map(|&(u, v, w)| (self.nodes[u].as_str(), self.nodes[v].as_str(), w))
    }

    pub fn weight(&self, a: &str, b: &str) -> Option<f64> {
        let (u, v) = (self.node_index(a)?, self.node_index(b)?);
        self.adj[u]
            .binary_search_by_key(&v, |&(n, _)| n)
            .ok()
            .map(|k| self.adj[u][k].1)
    }

    pub fn total_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.2).sum()
    }

    /// Writes `u,v,weight` rows.
    pub fn write_edge_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["u", "v", "weight"])?;
        for (a, b, wt) in self.edges() {
            w.write_record([a, b, &wt.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_edge_csv(path: &Path) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        let mut edges = Vec::new();
        for row in r.records() {
            let row = row?;
            let w: f64 = row
                .get(2)
                .unwrap_or_default()
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad weight in {}", path.display())))?;
            edges.push((
                row.get(0).unwrap_or_default().to_owned(),
                row.get(1).unwrap_or_default().to_owned(),
                w,
            ));
        }
        Self::from_edges(edges)
    }
}

/// Keeps scored pairs with `similarity >= min_weight` as edges.
pub fn build_graph(scored: &[ScoredPair], min_weight: f64) -> Result<WeightedGraph> {
    if min_weight.is_nan() || min_weight <= 0.0 {
        return Err(Error::OutOfRange {
            value: min_weight,
            range: "(0, inf)",
        });
    }
    WeightedGraph::from_edges(
        scored
            .iter()
            .filter(|p| p.similarity >= min_weight)
            .map(|p| (p.id_a.as_str(), p.id_b.as_str(), p.similarity)),
    )
}

pub const DEFAULT_DAMPING: f64 = 0.85;
pub const DEFAULT_PAGERANK_TOL: f64 = 1e-9;
const PAGERANK_MAX_ITER: usize = 100_000;

/// Weighted PageRank by power iteration. Each node spreads its score over
/// its neighbors in proportion to edge weight; isolated nodes spread theirs
/// uniformly.
pub fn pagerank(g: &WeightedGraph, damping: f64, tol: f64) -> BTreeMap<String, f64> {
    let scores = pagerank_vec(g, damping, tol);
    g.nodes().iter().cloned().zip(scores).collect()
}

pub fn pagerank_vec(g: &WeightedGraph, damping: f64, tol: f64) -> Vec<f64> {
    let n = g.node_count();
    if n == 0 {
        return Vec::new();
    }
    let strength: Vec<f64> = (0..n).map(|i| g.strength(i)).collect();
    let nf = n as f64;
    let mut x = vec![1.0 / nf; n];
    let mut next = vec![0.0; n];
    for _ in 0..PAGERANK_MAX_ITER {
        let dangling: f64 = (0..n).filter(|&i| strength[i] == 0.0).map(|i| x[i]).sum();
        let base = (1.0 - damping) / nf + damping * dangling / nf;
        next.iter_mut().for_each(|v| *v = base);
        for (i, xi) in x.iter().enumerate() {
            if strength[i] > 0.0 {
                let share = damping * xi / strength[i];
                for &(j, w) in g.neighbors(i) {
                    next[j] += share * w;
                }
            }
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= total);
        let delta: f64 = x.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut x, &mut next);
        if delta < tol {
            break;
        }
    }
    x
}

#[derive(Clone, Copy, PartialEq)]
struct HeapItem {
    dist: f64,
    node: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn nearly_equal(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

/// Shortest-path betweenness with edge length `1 / weight`, each unordered
/// endpoint pair counted once.
pub fn betweenness(g: &WeightedGraph) -> BTreeMap<String, f64> {
    g.nodes().iter().cloned().zip(betweenness_vec(g)).collect()
}

pub fn betweenness_vec(g: &WeightedGraph) -> Vec<f64> {
    use rayon::prelude::*;
    let n = g.node_count();
    let partials: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|s| single_source_dependencies(g, s))
        .collect();
    let mut bc = vec![0.0; n];
    for delta in partials {
        for (b, d) in bc.iter_mut().zip(delta) {
            *b += d;
        }
    }
    // each unordered pair was accumulated from both of its endpoints
    bc.iter_mut().for_each(|b| *b /= 2.0);
    bc
}

fn single_source_dependencies(g: &WeightedGraph, s: usize) -> Vec<f64> {
    let n = g.node_count();
    let mut dist = vec![f64::INFINITY; n];
    let mut sigma = vec![0.0f64; n];
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut order = Vec::with_capacity(n);
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[s] = 0.0;
    sigma[s] = 1.0;
    heap.push(HeapItem { dist: 0.0, node: s });
    while let Some(HeapItem { dist: d, node: v }) = heap.pop() {
        if done[v] || d > dist[v] {
            continue;
        }
        done[v] = true;
        order.push(v);
        for &(w, wt) in g.neighbors(v) {
            if done[w] {
                continue;
            }
            let alt = dist[v] + 1.0 / wt;
            if dist[w].is_finite() && nearly_equal(alt, dist[w]) {
                sigma[w] += sigma[v];
                preds[w].push(v);
            } else if alt < dist[w] {
                dist[w] = alt;
                sigma[w] = sigma[v];
                preds[w].clear();
                preds[w].push(v);
                heap.push(HeapItem { dist: alt, node: w });
            }
        }
    }
    let mut delta = vec![0.0; n];
    for &w in order.iter().rev() {
        for &v in &preds[w] {
            delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
        }
    }
    delta[s] = 0.0;
    delta
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetentionRule {
    /// Keep an edge significant at either endpoint.
    Either,
    /// Keep an edge only when significant at both endpoints.
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackboneParams {
    pub alpha: f64,
    pub rule: RetentionRule,
    /// Treat the single edge of a degree-1 node as significant at that node.
    pub keep_degree_one: bool,
}

impl Default for BackboneParams {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            rule: RetentionRule::Either,
            keep_degree_one: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Backbone {
    pub graph: WeightedGraph,
    /// Input nodes left without any retained edge.
    pub dropped: Vec<String>,
}

/// Significance of edge weight `w` at a node of degree `k` and strength `s`
/// under uniform random splitting of the node's strength: `(1 - w/s)^(k-1)`.
pub fn disparity_significance(w: f64, strength: f64, degree: usize) -> f64 {
    let p = w / strength;
    (1.0 - p).max(0.0).powi(degree as i32 - 1)
}

/// Disparity-filter backbone.
pub fn disparity_backbone(g: &WeightedGraph, params: &BackboneParams) -> Result<Backbone> {
    if !(params.alpha > 0.0 && params.alpha < 1.0) {
        return Err(Error::OutOfRange {
            value: params.alpha,
            range: "(0, 1)",
        });
    }
    let strength: Vec<f64> = (0..g.node_count()).map(|i| g.strength(i)).collect();
    let significant_at = |node: usize, w: f64| -> bool {
        let k = g.degree(node);
        if k == 1 {
            return params.keep_degree_one;
        }
        disparity_significance(w, strength[node], k) < params.alpha
    };
    let kept: Vec<(&str, &str, f64)> = g
        .edge_indices()
        .iter()
        .filter(|&&(u, v, w)| {
            let (a, b) = (significant_at(u, w), significant_at(v, w));
            match params.rule {
                RetentionRule::Either => a || b,
                RetentionRule::Both => a && b,
            }
        })
        .map(|&(u, v, w)| (g.name(u), g.name(v), w))
        .collect();
    let graph = WeightedGraph::from_edges(kept)?;
    let dropped = g
        .nodes()
        .iter()
        .filter(|n| graph.node_index(n).is_none())
        .cloned()
        .collect();
    Ok(Backbone { graph, dropped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_graph(seed: u64, n: usize, p: f64) -> WeightedGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.gen_bool(p) {
                    edges.push((format!("n{i:03}"), format!("n{j:03}"), rng.gen_range(0.05..2.0)));
                }
            }
        }
        WeightedGraph::from_parts((0..n).map(|i| format!("n{i:03}")), edges).unwrap()
    }

    fn sp(a: &str, b: &str, s: f64) -> ScoredPair {
        ScoredPair {
            id_a: a.into(),
            id_b: b.into(),
            similarity: s,
        }
    }

    #[test]
    fn build_graph_examples() {
        let g = build_graph(&[sp("a", "b", 0.1), sp("c", "d", 0.2)], 0.5).unwrap();
        assert!(g.is_empty());
        let g = build_graph(
            &[
                sp("a", "b", 0.9),
                sp("b", "c", 0.8),
                sp("c", "d", 0.7),
                sp("a", "d", 0.2),
            ],
            0.5,
        )
        .unwrap();
        assert_eq!(g.edge_count(), 3);
        assert!(g.node_count() <= 4);
        assert!(build_graph(&[sp("a", "b", 0.9), sp("b", "a", 0.8)], 0.5).is_err());
        assert_eq!(
            build_graph(&[sp("a", "b", 0.9), sp("b", "a", 0.9)], 0.5)
                .unwrap()
                .edge_count(),
            1
        );
        assert!(build_graph(&[], 0.0).is_err());
        assert!(WeightedGraph::from_edges([("a", "a", 1.0)]).is_err());
        assert!(WeightedGraph::from_edges([("a", "b", -1.0)]).is_err());
    }

    #[test]
    fn build_graph_matches_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let scored: Vec<ScoredPair> = (0..300)
            .map(|_| {
                let a = rng.gen_range(0..50);
                let b = (a + rng.gen_range(1..50)) % 50;
                let (a, b) = (a.min(b), a.max(b));
                // weight is a function of the pair, so duplicates agree
                let s = ((a * 31 + b * 17) % 100) as f64 / 100.0;
                sp(&format!("x{a:02}"), &format!("x{b:02}"), s)
            })
            .collect();
        let g = build_graph(&scored, 0.4).unwrap();
        let mut expected: BTreeMap<(String, String), f64> = BTreeMap::new();
        for p in &scored {
            if p.similarity >= 0.4 {
                expected.insert((p.id_a.clone(), p.id_b.clone()), p.similarity);
            }
        }
        let got: BTreeMap<(String, String), f64> =
            g.edges().map(|(a, b, w)| ((a.to_owned(), b.to_owned()), w)).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn edge_csv_roundtrip() {
        let g = random_graph(1, 12, 0.4);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.csv");
        g.write_edge_csv(&p).unwrap();
        let h = WeightedGraph::read_edge_csv(&p).unwrap();
        assert_eq!(g.edges().collect::<Vec<_>>(), h.edges().collect::<Vec<_>>());
    }

    #[test]
    fn pagerank_examples() {
        let g = WeightedGraph::from_edges([("a", "b", 2.0)]).unwrap();
        let pr = pagerank(&g, DEFAULT_DAMPING, DEFAULT_PAGERANK_TOL);
        assert!((pr["a"] - 0.5).abs() < 1e-12 && (pr["b"] - 0.5).abs() < 1e-12);
        let c4 =
            WeightedGraph::from_edges([("a", "b", 1.0), ("b", "c", 1.0), ("c", "d", 1.0), ("d", "a", 1.0)]).unwrap();
        for v in pagerank(&c4, 0.85, 1e-9).values() {
            assert!((v - 0.25).abs() < 1e-12);
        }
        let iso = WeightedGraph::from_parts(["z"], [("a", "b", 1.0)]).unwrap();
        let pr = pagerank(&iso, 0.85, 1e-12);
        assert!(pr["z"] > 0.0);
        assert!((pr.values().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn betweenness_examples() {
        let path = WeightedGraph::from_edges([("a", "b", 1.0), ("b", "c", 1.0)]).unwrap();
        let bc = betweenness(&path);
        assert_eq!(bc["b"], 1.0);
        assert_eq!(bc["a"], 0.0);
        assert_eq!(bc["c"], 0.0);
        let mut k4 = Vec::new();
        for (i, a) in ["a", "b", "c", "d"].iter().enumerate() {
            for b in ["a", "b", "c", "d"].iter().skip(i + 1) {
                k4.push((*a, *b, 1.0));
            }
        }
        let bc = betweenness(&WeightedGraph::from_edges(k4).unwrap());
        assert!(bc.values().all(|&v| v == 0.0));
        // a weak direct tie is bypassed through the strong two-hop route
        let tri = WeightedGraph::from_edges([("a", "c", 0.1), ("a", "b", 1.0), ("b", "c", 1.0)]).unwrap();
        assert_eq!(betweenness(&tri)["b"], 1.0);
        // two equal shortest paths share the pair
        let sq =
            WeightedGraph::from_edges([("a", "b", 1.0), ("b", "d", 1.0), ("a", "c", 1.0), ("c", "d", 1.0)]).unwrap();
        assert_eq!(betweenness(&sq)["b"], 0.5);
    }

    #[test]
    fn backbone_examples() {
        // p = 1 at the hub side (k=2 there only when the other edge vanishes):
        // a node whose strength is dominated by one edge keeps it.
        let g = WeightedGraph::from_edges([("h", "a", 1.0), ("h", "b", 1e-9), ("a", "c", 1e-9)]).unwrap();
        let s = disparity_significance(1.0, g.strength(g.node_index("h").unwrap()), 2);
        assert!(s < 1e-8);
        let bb = disparity_backbone(&g, &BackboneParams::default()).unwrap();
        assert!(bb.graph.weight("h", "a").is_some());

        let star: Vec<(String, String, f64)> = (0..10).map(|i| ("hub".to_string(), format!("l{i}"), 1.0)).collect();
        let g = WeightedGraph::from_edges(star).unwrap();
        let hub = g.node_index("hub").unwrap();
        let a = disparity_significance(1.0, g.strength(hub), g.degree(hub));
        assert!((a - 0.9f64.powi(9)).abs() < 1e-15);
        assert!(a > 0.05);
        let bb = disparity_backbone(&g, &BackboneParams::default()).unwrap();
        assert_eq!(bb.graph.edge_count(), 10);
        let strict = BackboneParams {
            keep_degree_one: false,
            ..BackboneParams::default()
        };
        let bb = disparity_backbone(&g, &strict).unwrap();
        assert_eq!(bb.graph.edge_count(), 0);
        assert_eq!(bb.dropped.len(), 11);
        assert!(disparity_backbone(
            &g,
            &BackboneParams {
                alpha: 1.0,
                ..Default::default()
            }
        )
        .is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn pagerank_is_distribution(seed in 0u64..10_000) {
            let g = random_graph(seed, 25, 0.15);
            let pr = pagerank_vec(&g, 0.85, 1e-12);
            prop_assert!(pr.iter().all(|&x| x >= 0.0));
            prop_assert!((pr.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn betweenness_scale_invariant(seed in 0u64..10_000, scale in 0.01f64..100.0) {
            let g = random_graph(seed, 12, 0.3);
            let scaled = WeightedGraph::from_parts(
                g.nodes().iter().cloned(),
                g.edges().map(|(a, b, w)| (a.to_owned(), b.to_owned(), w * scale)).collect::<Vec<_>>(),
            ).unwrap();
            let (x, y) = (betweenness_vec(&g), betweenness_vec(&scaled));
            for (a, b) in x.iter().zip(&y) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn backbone_subset_and_scale_invariant(seed in 0u64..10_000, scale in 0.01f64..100.0) {
            let g = random_graph(seed, 30, 0.2);
            let bb = disparity_backbone(&g, &BackboneParams::default()).unwrap();
            for (a, b, w) in bb.graph.edges() {
                prop_assert_eq!(g.weight(a, b), Some(w));
            }
            let scaled = WeightedGraph::from_edges(
                g.edges().map(|(a, b, w)| (a.to_owned(), b.to_owned(), w * scale)).collect::<Vec<_>>(),
            ).unwrap();
            let sb = disparity_backbone(&scaled, &BackboneParams::default()).unwrap();
            let e1: Vec<(&str, &str)> = bb.graph.edges().map(|(a, b, _)| (a, b)).collect();
            let e2: Vec<(&str, &str)> = sb.graph.edges().map(|(a, b, _)| (a, b)).collect();
            prop_assert_eq!(e1, e2);
        }
    }
}
