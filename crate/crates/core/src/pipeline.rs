//! Stage runner behind the command line. Each stage reads the artifacts of
//! earlier stages from the output directory and writes its own.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::agreement;
use crate::config::{stage_seed, PipelineConfig};
use crate::corpus::{self, ArticleRecord, Corpus};
use crate::error::{Error, Result};
use crate::events::{self, ClusterSet, EventCluster, IntrusionBundle};
use crate::io;
use crate::measures::{self, SynchronyMatrix};
use crate::pairgen::{self, CandidatePair};
use crate::regress::{self, FeatureTable, Predictors};
use crate::simgraph::{self, WeightedGraph};
use crate::simscore::{self, EmbeddingStore, ScoredPair};

pub mod artifacts {
    pub const CONFIG_ECHO: &str = "config.echo.txt";
    pub const FILTERED: &str = "articles.filtered.jsonl";
    pub const CORPUS_STATS: &str = "corpus_stats.csv";
    pub const PAIRS: &str = "pairs.jsonl";
    pub const SCORED: &str = "scored.jsonl";
    pub const GRAPH: &str = "graph.csv";
    pub const CLUSTERS: &str = "clusters.jsonl";
    pub const EVENT_STATS: &str = "event_stats.csv";
    pub const HIST_DURATION: &str = "hist_duration.csv";
    pub const HIST_SIZE: &str = "hist_size.csv";
    pub const HIST_LANGUAGES: &str = "hist_languages.csv";
    pub const BUNDLES: &str = "intrusion_bundles.jsonl";
    pub const DISTRIBUTIONS: &str = "distributions.csv";
    pub const DIVERSITY: &str = "diversity.csv";
    pub const SYNCHRONY: &str = "synchrony.csv";
    pub const BASELINE_DIVERSITY: &str = "baseline_diversity.csv";
    pub const BASELINE_SYNCHRONY: &str = "baseline_synchrony.csv";
    pub const COUNTRY_GRAPH: &str = "country_graph.csv";
    pub const COUNTRY_BACKBONE: &str = "country_backbone.csv";
    pub const CENTRALITY: &str = "country_centrality.csv";
    pub const MODELS_SUMMARY: &str = "models_summary.csv";
    pub const SELECTION_LOG: &str = "selection.log";
    pub const ANSWERS: &str = "answers.csv";
    pub const RATINGS: &str = "ratings.csv";
    pub const AGREEMENT: &str = "agreement.csv";
    pub const REPORT_DIVERSITY: &str = "report/table_diversity.csv";
    pub const REPORT_SYNCHRONY: &str = "report/table_synchrony.csv";
    pub const REPORT_EVENTS: &str = "report/fig_event_stats.csv";
    pub const REPORT_SUMMARY: &str = "report/summary.csv";

    /// Regression targets; each gets `features_<t>.csv` and
    /// `model_<t>_{vif,aic}.csv`.
    pub const TARGETS: [&str; 4] = ["diversity", "synchrony", "baseline_diversity", "baseline_synchrony"];

    /// Outputs that must be byte-identical across reruns with the same
    /// seed. The config echo is left out because it records the output
    /// directory.
    pub fn primary() -> Vec<String> {
        let mut v: Vec<String> = [
            FILTERED,
            CORPUS_STATS,
            PAIRS,
            SCORED,
            GRAPH,
            CLUSTERS,
            EVENT_STATS,
            HIST_DURATION,
            HIST_SIZE,
            HIST_LANGUAGES,
            BUNDLES,
            DISTRIBUTIONS,
            DIVERSITY,
            SYNCHRONY,
            BASELINE_DIVERSITY,
            BASELINE_SYNCHRONY,
            COUNTRY_GRAPH,
            COUNTRY_BACKBONE,
            CENTRALITY,
            MODELS_SUMMARY,
            SELECTION_LOG,
            ANSWERS,
            RATINGS,
            AGREEMENT,
            REPORT_DIVERSITY,
            REPORT_SYNCHRONY,
            REPORT_EVENTS,
            REPORT_SUMMARY,
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for t in TARGETS {
            v.push(format!("features_{t}.csv"));
            v.push(format!("model_{t}_vif.csv"));
            v.push(format!("model_{t}_aic.csv"));
        }
        v
    }
}

use artifacts as a;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Pairs,
    Score,
    Graph,
    Events,
    Measures,
    Regress,
    Agreement,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Ingest,
        Stage::Pairs,
        Stage::Score,
        Stage::Graph,
        Stage::Events,
        Stage::Measures,
        Stage::Regress,
        Stage::Agreement,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Pairs => "pairs",
            Stage::Score => "score",
            Stage::Graph => "graph",
            Stage::Events => "events",
            Stage::Measures => "measures",
            Stage::Regress => "regress",
            Stage::Agreement => "agreement",
            Stage::Report => "report",
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CountRow {
    kind: String,
    key: String,
    count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct HistRow {
    value: u64,
    count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct DistRow {
    country: String,
    cluster_id: usize,
    probability: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct DiversityRow {
    country: String,
    entropy: f64,
    support_size: usize,
    clustered_articles: usize,
    unclustered_articles: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct SynchronyRow {
    country_a: String,
    country_b: String,
    jsd: f64,
    synchrony: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct BaselineDiversityRow {
    country: String,
    mean_similarity: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct BaselineSynchronyRow {
    country_a: String,
    country_b: String,
    mean_similarity: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CentralityRow {
    country: String,
    pagerank: f64,
    betweenness: f64,
    in_backbone: bool,
    pagerank_backbone: Option<f64>,
    betweenness_backbone: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelSummaryRow {
    target: String,
    selection: String,
    n: usize,
    k: usize,
    r2: f64,
    adj_r2: f64,
    aic: Option<f64>,
    predictors: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelRow {
    predictor: String,
    coefficient: f64,
    std_err: f64,
    t: f64,
    p: f64,
    significance: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct StatRow {
    statistic: String,
    value: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AnswerRow {
    rater: String,
    bundle: String,
    chosen: String,
}

#[derive(Debug, Serialize)]
struct FigRow {
    metric: &'static str,
    value: u64,
    count: usize,
}

fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    io::require(path)?;
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Config {
        key: key.to_owned(),
        reason: "required by this stage but not set".into(),
    })
}

pub struct Pipeline {
    cfg: PipelineConfig,
}

impl Pipeline {
    /// Validates the config, creates the output directory, and echoes the
    /// config into it.
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        std::fs::create_dir_all(&cfg.output).map_err(|e| Error::io(&cfg.output, e))?;
        io::write_text(&cfg.output.join(a::CONFIG_ECHO), &cfg.to_text())?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    fn out(&self, name: &str) -> PathBuf {
        self.cfg.output.join(name)
    }

    pub fn run(&self, stage: Stage) -> Result<()> {
        log::info!("stage {} starting", stage.name());
        match stage {
            Stage::Ingest => self.ingest(),
            Stage::Pairs => self.pairs(),
            Stage::Score => self.score(),
            Stage::Graph => self.graph(),
            Stage::Events => self.events(),
            Stage::Measures => self.measures(),
            Stage::Regress => self.regress(),
            Stage::Agreement => self.agreement(),
            Stage::Report => self.report(),
        }?;
        log::info!("stage {} done", stage.name());
        Ok(())
    }

    pub fn run_all(&self) -> Result<()> {
        Stage::ALL.iter().try_for_each(|&s| self.run(s))
    }

    fn load_filtered(&self) -> Result<Corpus> {
        let recs: Vec<ArticleRecord> = io::read_jsonl(&self.out(a::FILTERED))?;
        let articles = recs.into_iter().map(TryFrom::try_from).collect::<Result<Vec<_>>>()?;
        Corpus::new(articles)
    }

    fn ingest(&self) -> Result<()> {
        let path = required(&self.cfg.corpus, "paths.corpus")?;
        io::require(path)?;
        let report = corpus::load_corpus(path)?;
        if !report.skipped.is_empty() {
            log::warn!("{} malformed corpus lines skipped", report.skipped.len());
        }
        let factors = match &self.cfg.length_factors {
            Some(p) => corpus::load_length_factors(p)?,
            None => BTreeMap::new(),
        };
        let loaded = Corpus::with_factors(report.corpus.articles().to_vec(), factors)?;
        let mut kept = corpus::filter_articles(&loaded, self.cfg.min_entities, self.cfg.min_eq_words);
        log::info!("{} of {} articles pass the filter", kept.len(), loaded.len());
        if self.cfg.subsample_per_country > 0 {
            let sub = measures::equal_weight_subsample(
                &kept,
                self.cfg.subsample_per_country,
                stage_seed(self.cfg.rng_seed, "subsample"),
            );
            kept = sub.corpus;
        }
        let recs: Vec<ArticleRecord> = kept.articles().iter().map(ArticleRecord::from).collect();
        io::write_jsonl(&self.out(a::FILTERED), &recs)?;

        let stats = corpus::corpus_stats(&kept);
        let mut rows: Vec<CountRow> = Vec::new();
        for (kind, m) in [("country", &stats.per_country), ("language", &stats.per_language)] {
            rows.extend(m.iter().map(|(k, &n)| CountRow {
                kind: kind.into(),
                key: k.clone(),
                count: n,
            }));
        }
        rows.push(CountRow {
            kind: "total".into(),
            key: "loaded".into(),
            count: loaded.len(),
        });
        rows.push(CountRow {
            kind: "total".into(),
            key: "kept".into(),
            count: kept.len(),
        });
        io::write_csv(&self.out(a::CORPUS_STATS), &rows)
    }

    fn pairs(&self) -> Result<()> {
        let corpus = self.load_filtered()?;
        let pairs = pairgen::generate_candidates(&corpus, &self.cfg.pair_params());
        log::info!("{} candidate pairs", pairs.len());
        io::write_jsonl(&self.out(a::PAIRS), &pairs)
    }

    fn score(&self) -> Result<()> {
        let corpus = self.load_filtered()?;
        let pairs: Vec<CandidatePair> = io::read_jsonl(&self.out(a::PAIRS))?;
        let emb = required(&self.cfg.embeddings, "paths.embeddings")?;
        io::require(emb)?;
        let store = match &self.cfg.embedding_ids {
            Some(ids) => {
                io::require(ids)?;
                if self.cfg.embedding_dim == 0 {
                    return Err(Error::Config {
                        key: "embeddings.dim".into(),
                        reason: "required for the binary embedding format".into(),
                    });
                }
                EmbeddingStore::load_binary(emb, ids, self.cfg.embedding_dim)?
            }
            None => EmbeddingStore::load_jsonl(emb)?,
        };
        let outcome = simscore::score_pairs_with(&pairs, &store, |id| corpus.get(id).map(|a| a.embedding_key()))?;
        log::info!(
            "{} pairs scored, {} missing embeddings, {} degenerate",
            outcome.scored.len(),
            outcome.skipped_missing,
            outcome.skipped_degenerate
        );
        io::write_jsonl(&self.out(a::SCORED), &outcome.scored)
    }

    fn graph(&self) -> Result<()> {
        let scored: Vec<ScoredPair> = io::read_jsonl(&self.out(a::SCORED))?;
        let g = simgraph::build_graph(&scored, self.cfg.min_edge_weight)?;
        log::info!("graph has {} nodes and {} edges", g.node_count(), g.edge_count());
        g.write_edge_csv(&self.out(a::GRAPH))
    }

    fn events(&self) -> Result<()> {
        let corpus = self.load_filtered()?;
        io::require(&self.out(a::GRAPH))?;
        let g = WeightedGraph::read_edge_csv(&self.out(a::GRAPH))?;
        let cs = events::detect_events(&g, &self.cfg.event_params());
        log::info!(
            "{} event clusters, {} graph nodes unassigned, {} co-clustered pairs",
            cs.clusters.len(),
            cs.unassigned.len(),
            events::cluster_pair_counts(&cs)
        );
        io::write_jsonl(&self.out(a::CLUSTERS), &cs.clusters)?;
        let stats = events::event_stats(&cs, &corpus)?;
        io::write_csv(&self.out(a::EVENT_STATS), &stats.per_cluster)?;
        for (name, h) in [
            (a::HIST_DURATION, &stats.duration_histogram),
            (a::HIST_SIZE, &stats.size_histogram),
            (a::HIST_LANGUAGES, &stats.language_histogram),
        ] {
            let rows: Vec<HistRow> = h.iter().map(|(&value, &count)| HistRow { value, count }).collect();
            io::write_csv(&self.out(name), &rows)?;
        }
        let bundles = events::intrusion_bundles(
            &cs,
            self.cfg.n_largest,
            self.cfg.n_random,
            stage_seed(self.cfg.rng_seed, "bundles"),
        );
        io::write_jsonl(&self.out(a::BUNDLES), &bundles)
    }

    fn populations(&self) -> Result<BTreeMap<String, f64>> {
        if let Some(p) = &self.cfg.populations {
            #[derive(Deserialize)]
            struct Row {
                country: String,
                population: f64,
            }
            let rows: Vec<Row> = read_csv(p)?;
            return Ok(rows.into_iter().map(|r| (r.country, r.population)).collect());
        }
        let Some(p) = &self.cfg.predictors else {
            log::warn!("no populations or predictors configured; the country graph will be empty");
            return Ok(BTreeMap::new());
        };
        io::require(p)?;
        let preds = Predictors::load(p)?;
        Ok(preds
            .countries()
            .into_iter()
            .filter_map(|c| preds.numeric(&c, "population").map(|v| (c, v)))
            .collect())
    }

    fn measures(&self) -> Result<()> {
        let corpus = self.load_filtered()?;
        let clusters: Vec<EventCluster> = io::read_jsonl(&self.out(a::CLUSTERS))?;
        let scored: Vec<ScoredPair> = io::read_jsonl(&self.out(a::SCORED))?;
        let cs = ClusterSet {
            clusters,
            unassigned: Vec::new(),
        };
        let (dists, uncovered) = measures::all_distributions(&cs, &corpus);
        if !uncovered.is_empty() {
            log::warn!("no clustered coverage for {}", uncovered.join(", "));
        }
        let mut rows = Vec::new();
        for d in &dists {
            rows.extend(d.probs.iter().map(|(&c, &p)| DistRow {
                country: d.country.clone(),
                cluster_id: c,
                probability: p,
            }));
        }
        io::write_csv(&self.out(a::DISTRIBUTIONS), &rows)?;
        let div: Vec<DiversityRow> = dists
            .iter()
            .map(|d| DiversityRow {
                country: d.country.clone(),
                entropy: measures::shannon_entropy(&d.probs),
                support_size: d.support_size,
                clustered_articles: d.clustered_articles,
                unclustered_articles: d.unclustered_articles,
            })
            .collect();
        io::write_csv(&self.out(a::DIVERSITY), &div)?;
        let matrix = SynchronyMatrix::from_distributions(&dists);
        let sync: Vec<SynchronyRow> = matrix
            .pairs()
            .map(|(x, y, s)| SynchronyRow {
                country_a: x.into(),
                country_b: y.into(),
                jsd: -s,
                synchrony: s,
            })
            .collect();
        io::write_csv(&self.out(a::SYNCHRONY), &sync)?;

        let (within, between) = measures::baseline_tables(&scored, &corpus);
        let bd: Vec<BaselineDiversityRow> = within
            .into_iter()
            .map(|(country, mean_similarity)| BaselineDiversityRow {
                country,
                mean_similarity,
            })
            .collect();
        io::write_csv(&self.out(a::BASELINE_DIVERSITY), &bd)?;
        let bs: Vec<BaselineSynchronyRow> = between
            .into_iter()
            .map(|((x, y), mean_similarity)| BaselineSynchronyRow {
                country_a: x,
                country_b: y,
                mean_similarity,
            })
            .collect();
        io::write_csv(&self.out(a::BASELINE_SYNCHRONY), &bs)?;

        let cg = measures::synchrony_graph(&matrix, &self.populations()?, self.cfg.top_by_population)?;
        cg.graph.write_edge_csv(&self.out(a::COUNTRY_GRAPH))?;
        let bb = simgraph::disparity_backbone(&cg.graph, &self.cfg.backbone_params())?;
        bb.graph.write_edge_csv(&self.out(a::COUNTRY_BACKBONE))?;
        let mut rows = Vec::new();
        if cg.graph.node_count() > 0 {
            let pr = simgraph::pagerank(&cg.graph, simgraph::DEFAULT_DAMPING, simgraph::DEFAULT_PAGERANK_TOL);
            let bc = simgraph::betweenness(&cg.graph);
            let (pr_b, bc_b) = if bb.graph.node_count() > 0 {
                (
                    simgraph::pagerank(&bb.graph, simgraph::DEFAULT_DAMPING, simgraph::DEFAULT_PAGERANK_TOL),
                    simgraph::betweenness(&bb.graph),
                )
            } else {
                Default::default()
            };
            for c in cg.graph.nodes() {
                rows.push(CentralityRow {
                    country: c.clone(),
                    pagerank: pr[c],
                    betweenness: bc[c],
                    in_backbone: pr_b.contains_key(c),
                    pagerank_backbone: pr_b.get(c).copied(),
                    betweenness_backbone: bc_b.get(c).copied(),
                });
            }
        } else {
            log::warn!("country graph is empty; no centrality computed");
        }
        write_csv_with_header(
            &self.out(a::CENTRALITY),
            &rows,
            &[
                "country",
                "pagerank",
                "betweenness",
                "in_backbone",
                "pagerank_backbone",
                "betweenness_backbone",
            ],
        )
    }

    fn regress(&self) -> Result<()> {
        let p = required(&self.cfg.predictors, "paths.predictors")?;
        io::require(p)?;
        let preds = Predictors::load(p)?;
        let div: Vec<DiversityRow> = read_csv(&self.out(a::DIVERSITY))?;
        let sync: Vec<SynchronyRow> = read_csv(&self.out(a::SYNCHRONY))?;
        let bdiv: Vec<BaselineDiversityRow> = read_csv(&self.out(a::BASELINE_DIVERSITY))?;
        let bsync: Vec<BaselineSynchronyRow> = read_csv(&self.out(a::BASELINE_SYNCHRONY))?;

        let pair_key = |x: &str, y: &str| {
            if x <= y {
                (x.to_owned(), y.to_owned())
            } else {
                (y.to_owned(), x.to_owned())
            }
        };
        let tables: Vec<(&str, Result<FeatureTable>)> = vec![
            (
                "diversity",
                regress::country_table(
                    "diversity",
                    &div.iter().map(|r| (r.country.clone(), r.entropy)).collect(),
                    &preds,
                ),
            ),
            (
                "synchrony",
                regress::pair_table(
                    "synchrony",
                    &sync
                        .iter()
                        .map(|r| (pair_key(&r.country_a, &r.country_b), r.synchrony))
                        .collect(),
                    &preds,
                    &self.cfg.cutoffs,
                ),
            ),
            (
                "baseline_diversity",
                regress::country_table(
                    "baseline_diversity",
                    &bdiv.iter().map(|r| (r.country.clone(), r.mean_similarity)).collect(),
                    &preds,
                ),
            ),
            (
                "baseline_synchrony",
                regress::pair_table(
                    "baseline_synchrony",
                    &bsync
                        .iter()
                        .map(|r| (pair_key(&r.country_a, &r.country_b), r.mean_similarity))
                        .collect(),
                    &preds,
                    &self.cfg.cutoffs,
                ),
            ),
        ];

        let mut summary = Vec::new();
        let mut log_text = String::new();
        for (target, table) in tables {
            let table = match table {
                Ok(t) => t,
                Err(e) => {
                    log::warn!("no {target} regression: {e}");
                    log_text.push_str(&format!("== {target}\nskipped: {e}\n"));
                    continue;
                }
            };
            regress::write_feature_csv(&table, io::create(&self.out(&format!("features_{target}.csv")))?)?;
            let reports = [
                ("vif", regress::vif_select(&table, self.cfg.vif_max)),
                ("aic", regress::aic_stepwise_select(&table)),
            ];
            for (method, rep) in reports {
                log_text.push_str(&format!("== {target} / {method}\n{}", rep.to_log()));
                let fit = table.select(&rep.retained).and_then(|t| regress::ols_fit(&t));
                let path = self.out(&format!("model_{target}_{method}.csv"));
                match fit {
                    Ok(m) => {
                        regress::write_model_report(&m, io::create(&path)?)?;
                        summary.push(ModelSummaryRow {
                            target: target.into(),
                            selection: method.into(),
                            n: m.n,
                            k: m.k,
                            r2: m.r2,
                            adj_r2: m.adj_r2,
                            aic: regress::aic(&m).ok(),
                            predictors: rep.retained.join(";"),
                        });
                    }
                    Err(e) => {
                        log::warn!("{target}/{method} fit failed: {e}");
                        log_text.push_str(&format!("fit failed: {e}\n"));
                        io::write_text(&path, "predictor,coefficient,std_err,t,p,significance\n")?;
                    }
                }
            }
        }
        io::write_text(&self.out(a::SELECTION_LOG), &log_text)?;
        write_csv_with_header(
            &self.out(a::MODELS_SUMMARY),
            &summary,
            &["target", "selection", "n", "k", "r2", "adj_r2", "aic", "predictors"],
        )
    }

    fn agreement(&self) -> Result<()> {
        let bundles: Vec<IntrusionBundle> = io::read_jsonl(&self.out(a::BUNDLES))?;
        let truth: BTreeMap<String, String> = bundles
            .iter()
            .map(|b| (b.cluster_id.to_string(), b.intruder.clone()))
            .collect();
        let answers = match &self.cfg.answers {
            Some(p) => {
                io::require(p)?;
                agreement::load_answers(p)?
            }
            None => {
                log::info!(
                    "no answers file; simulating {} raters at accuracy {}",
                    self.cfg.simulated_raters,
                    self.cfg.simulated_accuracy
                );
                simulate_answers(
                    &bundles,
                    self.cfg.simulated_raters,
                    self.cfg.simulated_accuracy,
                    stage_seed(self.cfg.rng_seed, "agreement"),
                )
            }
        };
        let answer_rows: Vec<AnswerRow> = answers
            .iter()
            .flat_map(|(r, m)| {
                m.iter().map(move |(b, c)| AnswerRow {
                    rater: r.clone(),
                    bundle: b.clone(),
                    chosen: c.clone(),
                })
            })
            .collect();
        write_csv_with_header(&self.out(a::ANSWERS), &answer_rows, &["rater", "bundle", "chosen"])?;

        let mut stats = vec![StatRow {
            statistic: "bundles".into(),
            value: Some(bundles.len() as f64),
        }];
        if answers.values().all(BTreeMap::is_empty) {
            log::warn!("no intrusion answers; agreement statistics skipped");
            io::write_text(&self.out(a::RATINGS), "item\n")?;
            return io::write_csv(&self.out(a::AGREEMENT), &stats);
        }
        // label each choice by its position in the bundle so categories are
        // shared across bundles
        let positions: BTreeMap<String, &IntrusionBundle> =
            bundles.iter().map(|b| (b.cluster_id.to_string(), b)).collect();
        let labeled: BTreeMap<String, BTreeMap<String, String>> = answers
            .iter()
            .map(|(r, m)| {
                let m = m
                    .iter()
                    .map(|(b, c)| {
                        let label = positions
                            .get(b)
                            .and_then(|bd| bd.presentation.iter().position(|x| x == c))
                            .map_or_else(|| c.clone(), |i| i.to_string());
                        (b.clone(), label)
                    })
                    .collect();
                (r.clone(), m)
            })
            .collect();
        let table = agreement::ratings_from_answers(&labeled)?;
        table.write_csv(io::create(&self.out(a::RATINGS))?)?;
        stats.push(stat("gwet_ac1", agreement::gwet_ac1(&table)));
        stats.push(stat("krippendorff_alpha", agreement::krippendorff_alpha(&table)));
        let prec = agreement::precision_summary(&answers, &truth)?;
        for (r, p) in &prec.per_rater {
            stats.push(StatRow {
                statistic: format!("precision_{r}"),
                value: Some(*p),
            });
        }
        stats.push(StatRow {
            statistic: "precision_average".into(),
            value: Some(prec.average),
        });
        io::write_csv(&self.out(a::AGREEMENT), &stats)
    }

    fn report(&self) -> Result<()> {
        let summary: Vec<ModelSummaryRow> = read_csv(&self.out(a::MODELS_SUMMARY))?;
        for (path, targets) in [
            (a::REPORT_DIVERSITY, ["diversity", "baseline_diversity"]),
            (a::REPORT_SYNCHRONY, ["synchrony", "baseline_synchrony"]),
        ] {
            self.coefficient_table(path, &targets, &summary)?;
        }

        let mut fig = Vec::new();
        for (metric, name) in [
            ("duration_days", a::HIST_DURATION),
            ("article_count", a::HIST_SIZE),
            ("language_count", a::HIST_LANGUAGES),
        ] {
            let rows: Vec<HistRow> = read_csv(&self.out(name))?;
            fig.extend(rows.into_iter().map(|r| FigRow {
                metric,
                value: r.value,
                count: r.count,
            }));
        }
        io::write_csv(&self.out(a::REPORT_EVENTS), &fig)?;

        let mut lines = vec![vec!["metric".to_owned(), "value".to_owned()]];
        let count_lines = |name: &str| -> Result<usize> {
            io::require(&self.out(name))?;
            let text = std::fs::read_to_string(self.out(name)).map_err(|e| Error::io(self.out(name), e))?;
            Ok(text.lines().filter(|l| !l.trim().is_empty()).count())
        };
        lines.push(vec!["articles_kept".into(), count_lines(a::FILTERED)?.to_string()]);
        lines.push(vec!["candidate_pairs".into(), count_lines(a::PAIRS)?.to_string()]);
        lines.push(vec!["scored_pairs".into(), count_lines(a::SCORED)?.to_string()]);
        lines.push(vec!["graph_edges".into(), (count_lines(a::GRAPH)? - 1).to_string()]);
        lines.push(vec!["event_clusters".into(), count_lines(a::CLUSTERS)?.to_string()]);
        lines.push(vec![
            "countries_measured".into(),
            (count_lines(a::DIVERSITY)? - 1).to_string(),
        ]);
        let agreement: Vec<StatRow> = read_csv(&self.out(a::AGREEMENT))?;
        for s in agreement {
            lines.push(vec![s.statistic, s.value.map(|v| v.to_string()).unwrap_or_default()]);
        }
        io::write_records(&self.out(a::REPORT_SUMMARY), lines)
    }

    /// Coefficients with significance markers, one column per target and
    /// selection method, plus fit rows.
    fn coefficient_table(&self, path: &str, targets: &[&str], summary: &[ModelSummaryRow]) -> Result<()> {
        let mut columns: Vec<(String, BTreeMap<String, String>)> = Vec::new();
        let mut order: Vec<String> = Vec::new();
        for t in targets {
            for method in ["vif", "aic"] {
                let file = self.out(&format!("model_{t}_{method}.csv"));
                if !file.exists() {
                    continue;
                }
                let rows: Vec<ModelRow> = read_csv(&file)?;
                let mut col = BTreeMap::new();
                for r in rows {
                    if !order.contains(&r.predictor) {
                        order.push(r.predictor.clone());
                    }
                    col.insert(r.predictor, format!("{:.4}{}", r.coefficient, r.significance));
                }
                if let Some(s) = summary.iter().find(|s| s.target == *t && s.selection == method) {
                    col.insert("R²".into(), format!("{:.4}", s.r2));
                    col.insert("adj. R²".into(), format!("{:.4}", s.adj_r2));
                    col.insert("n".into(), s.n.to_string());
                }
                columns.push((format!("{t} ({})", method.to_uppercase()), col));
            }
        }
        order.extend(["R²", "adj. R²", "n"].map(String::from));
        let mut records = vec![std::iter::once("predictor".to_owned())
            .chain(columns.iter().map(|c| c.0.clone()))
            .collect::<Vec<_>>()];
        for p in &order {
            let mut rec = vec![p.clone()];
            rec.extend(columns.iter().map(|(_, c)| c.get(p).cloned().unwrap_or_default()));
            records.push(rec);
        }
        io::write_records(&self.out(path), records)
    }
}

fn stat(name: &str, v: Result<f64>) -> StatRow {
    if let Err(e) = &v {
        log::warn!("{name} undefined: {e}");
    }
    StatRow {
        statistic: name.into(),
        value: v.ok(),
    }
}

/// Header-only file when `rows` is empty, so downstream readers still find
/// the columns.
fn write_csv_with_header<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    if rows.is_empty() {
        return io::write_text(path, &format!("{}\n", header.join(",")));
    }
    io::write_csv(path, rows)
}

/// Raters who pick the intruder with probability `accuracy` and otherwise a
/// random cluster member.
pub fn simulate_answers(
    bundles: &[IntrusionBundle],
    raters: usize,
    accuracy: f64,
    seed: u64,
) -> BTreeMap<String, BTreeMap<String, String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BTreeMap::new();
    for r in 0..raters {
        let mut m = BTreeMap::new();
        for b in bundles {
            let pick = if rng.gen_bool(accuracy) {
                b.intruder.clone()
            } else {
                b.in_cluster
                    .choose(&mut rng)
                    .cloned()
                    .unwrap_or_else(|| b.intruder.clone())
            };
            m.insert(b.cluster_id.to_string(), pick);
        }
        out.insert(format!("rater{}", r + 1), m);
    }
    out
}
