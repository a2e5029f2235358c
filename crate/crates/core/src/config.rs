//! Pipeline configuration: a flat `section.key = value` text file, with
//! environment overrides of the form `NEWSYNC_SECTION__KEY=value`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::events::EventParams;
use crate::pairgen::{EntityCap, PairParams};
use crate::regress::{DEMOCRACY_CUTOFF, GDP_CUTOFF};
use crate::simgraph::{BackboneParams, RetentionRule};

pub const ENV_PREFIX: &str = "NEWSYNC_";

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub corpus: Option<PathBuf>,
    /// JSONL with a `dim=D` header, or a little-endian f32 matrix paired
    /// with `embedding_ids`.
    pub embeddings: Option<PathBuf>,
    pub embedding_ids: Option<PathBuf>,
    /// Vector dimension of the binary format.
    pub embedding_dim: usize,
    pub length_factors: Option<PathBuf>,
    pub predictors: Option<PathBuf>,
    pub populations: Option<PathBuf>,
    pub answers: Option<PathBuf>,
    pub output: PathBuf,

    pub min_entities: usize,
    pub min_eq_words: f64,
    pub jaccard_min: f64,
    pub window_days: u32,
    pub min_edge_weight: f64,
    pub significance_threshold: f64,
    pub backbone_alpha: f64,
    pub vif_max: f64,

    pub rng_seed: u64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,

    pub label_propagation: bool,
    pub entity_cap: bool,
    pub entity_cap_fraction: f64,
    pub entity_cap_min_postings: usize,

    pub max_iterations: usize,
    pub dedup_overlap: f64,
    pub backbone_rule: RetentionRule,
    pub keep_degree_one: bool,
    pub n_largest: usize,
    pub n_random: usize,
    pub top_by_population: usize,
    /// Articles drawn per country before pairing; 0 keeps everything.
    pub subsample_per_country: usize,
    pub cutoffs: BTreeMap<String, f64>,
    pub simulated_raters: usize,
    pub simulated_accuracy: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let pairs = PairParams::default();
        let cap = EntityCap::default();
        let events = EventParams::default();
        let bb = BackboneParams::default();
        Self {
            corpus: None,
            embeddings: None,
            embedding_ids: None,
            embedding_dim: 0,
            length_factors: None,
            predictors: None,
            populations: None,
            answers: None,
            output: PathBuf::from("out"),
            min_entities: 10,
            min_eq_words: 100.0,
            jaccard_min: pairs.jaccard_min,
            window_days: pairs.window_days,
            min_edge_weight: 0.5,
            significance_threshold: events.significance_threshold,
            backbone_alpha: bb.alpha,
            vif_max: crate::regress::DEFAULT_MAX_VIF,
            rng_seed: 0,
            threads: 0,
            label_propagation: events.label_propagation,
            entity_cap: pairs.entity_cap.is_some(),
            entity_cap_fraction: cap.fraction,
            entity_cap_min_postings: cap.min_postings,
            max_iterations: events.max_iterations,
            dedup_overlap: events.dedup_overlap,
            backbone_rule: bb.rule,
            keep_degree_one: bb.keep_degree_one,
            n_largest: 20,
            n_random: 20,
            top_by_population: 100,
            subsample_per_country: 0,
            cutoffs: BTreeMap::from([
                ("gdp".to_owned(), GDP_CUTOFF),
                ("democracy_index".to_owned(), DEMOCRACY_CUTOFF),
            ]),
            simulated_raters: 3,
            simulated_accuracy: 0.9,
        }
    }
}

fn bad(key: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_owned(),
        reason: reason.into(),
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, format!("cannot parse {value:?}")))
}

fn path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl PipelineConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "paths.corpus" => self.corpus = path(v),
            "paths.embeddings" => self.embeddings = path(v),
            "paths.embedding_ids" => self.embedding_ids = path(v),
            "embeddings.dim" => self.embedding_dim = parse(key, v)?,
            "paths.length_factors" => self.length_factors = path(v),
            "paths.predictors" => self.predictors = path(v),
            "paths.populations" => self.populations = path(v),
            "paths.answers" => self.answers = path(v),
            "paths.output" => self.output = PathBuf::from(v),
            "thresholds.min_entities" => self.min_entities = parse(key, v)?,
            "thresholds.min_eq_words" => self.min_eq_words = parse(key, v)?,
            "thresholds.jaccard_min" => self.jaccard_min = parse(key, v)?,
            "thresholds.window_days" => self.window_days = parse(key, v)?,
            "thresholds.min_edge_weight" => self.min_edge_weight = parse(key, v)?,
            "thresholds.significance_threshold" => self.significance_threshold = parse(key, v)?,
            "thresholds.backbone_alpha" => self.backbone_alpha = parse(key, v)?,
            "thresholds.vif_max" => self.vif_max = parse(key, v)?,
            "run.rng_seed" => self.rng_seed = parse(key, v)?,
            "run.threads" => self.threads = parse(key, v)?,
            "flags.label_propagation" => self.label_propagation = parse(key, v)?,
            "flags.entity_cap" => self.entity_cap = parse(key, v)?,
            "pairs.entity_cap_fraction" => self.entity_cap_fraction = parse(key, v)?,
            "pairs.entity_cap_min_postings" => self.entity_cap_min_postings = parse(key, v)?,
            "events.max_iterations" => self.max_iterations = parse(key, v)?,
            "events.dedup_overlap" => self.dedup_overlap = parse(key, v)?,
            "backbone.rule" => {
                self.backbone_rule = match v {
                    "either" => RetentionRule::Either,
                    "both" => RetentionRule::Both,
                    _ => return Err(bad(key, "expected `either` or `both`")),
                }
            }
            "backbone.keep_degree_one" => self.keep_degree_one = parse(key, v)?,
            "bundles.n_largest" => self.n_largest = parse(key, v)?,
            "bundles.n_random" => self.n_random = parse(key, v)?,
            "measures.top_by_population" => self.top_by_population = parse(key, v)?,
            "measures.subsample_per_country" => self.subsample_per_country = parse(key, v)?,
            "agreement.simulated_raters" => self.simulated_raters = parse(key, v)?,
            "agreement.simulated_accuracy" => self.simulated_accuracy = parse(key, v)?,
            _ => match key.strip_prefix("regress.cutoff.") {
                Some(pred) if !pred.is_empty() => {
                    self.cutoffs.insert(pred.to_owned(), parse(key, v)?);
                }
                _ => return Err(bad(key, "unknown key")),
            },
        }
        Ok(())
    }

    /// Applies every line of a config file on top of `self`. Blank lines
    /// and `#` comments are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(&format!("line {}", i + 1), "expected key = value"))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        // paths in the file are relative to the file
        let base = path.parent().unwrap_or(Path::new(""));
        let defaults = Self::default();
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut cfg.corpus,
            &mut cfg.embeddings,
            &mut cfg.embedding_ids,
            &mut cfg.length_factors,
            &mut cfg.predictors,
            &mut cfg.populations,
            &mut cfg.answers,
        ]
        .into_iter()
        .flatten()
        {
            rebase(p);
        }
        if cfg.output != defaults.output {
            rebase(&mut cfg.output);
        }
        Ok(cfg)
    }

    /// Applies `NEWSYNC_SECTION__KEY` variables. Variables without the
    /// double underscore belong to the command line and are ignored here.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<()> {
        let mut sorted: Vec<(String, String)> = vars
            .into_iter()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX) && k.contains("__"))
            .collect();
        sorted.sort();
        for (k, v) in sorted {
            let key = k[ENV_PREFIX.len()..].to_lowercase().replace("__", ".");
            self.set(&key, &v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, key: &str, reason: &str| if ok { Ok(()) } else { Err(bad(key, reason)) };
        check(
            (0.0..1.0).contains(&self.jaccard_min),
            "thresholds.jaccard_min",
            "must lie in [0, 1)",
        )?;
        check(
            self.min_eq_words >= 0.0,
            "thresholds.min_eq_words",
            "must be nonnegative",
        )?;
        check(
            self.min_edge_weight > 0.0 && self.min_edge_weight <= 1.0,
            "thresholds.min_edge_weight",
            "must lie in (0, 1]",
        )?;
        check(
            self.significance_threshold > 0.0 && self.significance_threshold < 1.0,
            "thresholds.significance_threshold",
            "must lie in (0, 1)",
        )?;
        check(
            self.backbone_alpha > 0.0 && self.backbone_alpha < 1.0,
            "thresholds.backbone_alpha",
            "must lie in (0, 1)",
        )?;
        check(self.vif_max > 1.0, "thresholds.vif_max", "must exceed 1")?;
        check(
            self.entity_cap_fraction > 0.0 && self.entity_cap_fraction <= 1.0,
            "pairs.entity_cap_fraction",
            "must lie in (0, 1]",
        )?;
        check(self.max_iterations > 0, "events.max_iterations", "must be positive")?;
        check(
            self.dedup_overlap > 0.0 && self.dedup_overlap <= 1.0,
            "events.dedup_overlap",
            "must lie in (0, 1]",
        )?;
        check(
            self.simulated_raters >= 2,
            "agreement.simulated_raters",
            "need at least two",
        )?;
        check(
            (0.0..=1.0).contains(&self.simulated_accuracy),
            "agreement.simulated_accuracy",
            "must lie in [0, 1]",
        )?;
        Ok(())
    }

    /// Every setting as sorted `key = value` lines; loading the text back
    /// reproduces the config.
    pub fn to_text(&self) -> String {
        let p = |o: &Option<PathBuf>| o.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut kv: BTreeMap<String, String> = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            kv.insert(k.to_owned(), v);
        };
        put("paths.corpus", p(&self.corpus));
        put("paths.embeddings", p(&self.embeddings));
        put("paths.embedding_ids", p(&self.embedding_ids));
        put("embeddings.dim", self.embedding_dim.to_string());
        put("paths.length_factors", p(&self.length_factors));
        put("paths.predictors", p(&self.predictors));
        put("paths.populations", p(&self.populations));
        put("paths.answers", p(&self.answers));
        put("paths.output", self.output.display().to_string());
        put("thresholds.min_entities", self.min_entities.to_string());
        put("thresholds.min_eq_words", self.min_eq_words.to_string());
        put("thresholds.jaccard_min", self.jaccard_min.to_string());
        put("thresholds.window_days", self.window_days.to_string());
        put("thresholds.min_edge_weight", self.min_edge_weight.to_string());
        put(
            "thresholds.significance_threshold",
            self.significance_threshold.to_string(),
        );
        put("thresholds.backbone_alpha", self.backbone_alpha.to_string());
        put("thresholds.vif_max", self.vif_max.to_string());
        put("run.rng_seed", self.rng_seed.to_string());
        put("run.threads", self.threads.to_string());
        put("flags.label_propagation", self.label_propagation.to_string());
        put("flags.entity_cap", self.entity_cap.to_string());
        put("pairs.entity_cap_fraction", self.entity_cap_fraction.to_string());
        put(
            "pairs.entity_cap_min_postings",
            self.entity_cap_min_postings.to_string(),
        );
        put("events.max_iterations", self.max_iterations.to_string());
        put("events.dedup_overlap", self.dedup_overlap.to_string());
        put(
            "backbone.rule",
            match self.backbone_rule {
                RetentionRule::Either => "either",
                RetentionRule::Both => "both",
            }
            .to_owned(),
        );
        put("backbone.keep_degree_one", self.keep_degree_one.to_string());
        put("bundles.n_largest", self.n_largest.to_string());
        put("bundles.n_random", self.n_random.to_string());
        put("measures.top_by_population", self.top_by_population.to_string());
        put("measures.subsample_per_country", self.subsample_per_country.to_string());
        put("agreement.simulated_raters", self.simulated_raters.to_string());
        put("agreement.simulated_accuracy", self.simulated_accuracy.to_string());
        for (k, v) in &self.cutoffs {
            put(&format!("regress.cutoff.{k}"), v.to_string());
        }
        let mut s = String::new();
        for (k, v) in kv {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn pair_params(&self) -> PairParams {
        PairParams {
            jaccard_min: self.jaccard_min,
            window_days: self.window_days,
            entity_cap: self.entity_cap.then_some(EntityCap {
                fraction: self.entity_cap_fraction,
                min_postings: self.entity_cap_min_postings,
            }),
        }
    }

    pub fn event_params(&self) -> EventParams {
        EventParams {
            significance_threshold: self.significance_threshold,
            max_iterations: self.max_iterations,
            rng_seed: stage_seed(self.rng_seed, "events"),
            dedup_overlap: self.dedup_overlap,
            label_propagation: self.label_propagation,
        }
    }

    pub fn backbone_params(&self) -> BackboneParams {
        BackboneParams {
            alpha: self.backbone_alpha,
            rule: self.backbone_rule,
            keep_degree_one: self.keep_degree_one,
        }
    }
}

/// Sub-seed for a stage: FNV-1a over the master seed bytes and the stage
/// name.
pub fn stage_seed(seed: u64, stage: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    seed.to_le_bytes()
        .iter()
        .chain(stage.as_bytes())
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}
