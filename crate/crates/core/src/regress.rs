//! OLS regression of diversity and synchrony on country traits, with 0–1
//! rescaling, dummy encoding, pairwise categories, and VIF or stepwise AIC
//! feature selection.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_VIF: f64 = 5.0;
pub const GDP_CUTOFF: f64 = 500e9;
pub const DEMOCRACY_CUTOFF: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub values: Vec<f64>,
    /// Where the column came from, e.g. `numeric:gdp` or `dummy:region`.
    pub source: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub ids: Vec<String>,
    pub columns: Vec<Column>,
    pub target_name: String,
    pub target: Vec<f64>,
}

impl FeatureTable {
    pub fn new(ids: Vec<String>, target_name: impl Into<String>, target: Vec<f64>) -> Result<Self> {
        if ids.len() != target.len() {
            return Err(Error::InvalidInput(format!(
                "{} ids but {} target values",
                ids.len(),
                target.len()
            )));
        }
        if let Some(v) = target.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite target value {v}")));
        }
        Ok(Self {
            ids,
            columns: Vec::new(),
            target_name: target_name.into(),
            target,
        })
    }

    pub fn push(&mut self, name: impl Into<String>, values: Vec<f64>, source: impl Into<String>) -> Result<()> {
        let name = name.into();
        if values.len() != self.n_rows() {
            return Err(Error::InvalidInput(format!(
                "column {name} has {} values, expected {}",
                values.len(),
                self.n_rows()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("column {name} has non-finite values")));
        }
        if self.column(&name).is_some() {
            return Err(Error::InvalidInput(format!("duplicate column {name}")));
        }
        self.columns.push(Column {
            name,
            values,
            source: source.into(),
        });
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.target.len()
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    /// Copy restricted to `names`, in the given order.
    pub fn select(&self, names: &[String]) -> Result<FeatureTable> {
        let columns = names
            .iter()
            .map(|n| {
                self.column(n)
                    .cloned()
                    .ok_or_else(|| Error::InvalidInput(format!("no column {n}")))
            })
            .collect::<Result<_>>()?;
        Ok(FeatureTable {
            columns,
            ..self.clone_without_columns()
        })
    }

    fn clone_without_columns(&self) -> FeatureTable {
        FeatureTable {
            ids: self.ids.clone(),
            columns: Vec::new(),
            target_name: self.target_name.clone(),
            target: self.target.clone(),
        }
    }
}

/// Min-max rescaling onto [0, 1].
pub fn rescale01(column: &[f64]) -> Result<Vec<f64>> {
    let (lo, hi) = column.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
        (lo.min(x), hi.max(x))
    });
    if column.is_empty() || hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::InvalidInput("cannot rescale a constant column".into()));
    }
    Ok(column
        .iter()
        .map(|&x| {
            if x == lo {
                0.0
            } else if x == hi {
                1.0
            } else {
                (x - lo) / (hi - lo)
            }
        })
        .collect())
}

/// One {0,1} column per non-reference level; the first level is the
/// reference. Columns are named `name[level]`.
pub fn dummy_encode(name: &str, values: &[String], levels: &[String]) -> Result<Vec<Column>> {
    if levels.len() < 2 {
        return Err(Error::InvalidInput(format!("{name} needs at least two levels")));
    }
    if let Some(v) = values.iter().find(|v| !levels.contains(v)) {
        return Err(Error::UnseenLevel(format!("{name}: {v}")));
    }
    Ok(levels[1..]
        .iter()
        .map(|level| Column {
            name: format!("{name}[{level}]"),
            values: values.iter().map(|v| f64::from(u8::from(v == level))).collect(),
            source: format!("dummy:{name}"),
        })
        .collect())
}

/// Unordered combination of two levels, written in level order with an en
/// dash. Values outside `levels` sort after known ones, alphabetically.
pub fn pairwise_category(a: &str, b: &str, levels: &[String]) -> String {
    let rank = |x: &str| levels.iter().position(|l| l == x).unwrap_or(levels.len());
    let (x, y) = if (rank(a), a) <= (rank(b), b) { (a, b) } else { (b, a) };
    format!("{x}–{y}")
}

/// All pairwise categories over `levels`, in level order.
pub fn pairwise_levels(levels: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    for (i, a) in levels.iter().enumerate() {
        for b in &levels[i..] {
            out.push(pairwise_category(a, b, levels));
        }
    }
    out
}

/// `high` when strictly above `cutoff`, otherwise `low`.
pub fn binarize(values: &[f64], cutoff: f64) -> Vec<String> {
    values
        .iter()
        .map(|&v| if v > cutoff { "high" } else { "low" }.to_owned())
        .collect()
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

const DEPENDENCE_TOL: f64 = 1e-9;

/// Modified Gram-Schmidt over `basis`. Returns the residual of `y` after
/// projecting out the span, plus indices of basis columns that were
/// numerically dependent on earlier ones.
fn residual(y: &[f64], basis: &[&[f64]]) -> (Vec<f64>, Vec<usize>) {
    let mut qs: Vec<Vec<f64>> = Vec::with_capacity(basis.len());
    let mut dependent = Vec::new();
    for (i, b) in basis.iter().enumerate() {
        let scale = norm(b);
        let mut v = b.to_vec();
        // two passes keep the basis orthogonal to working precision
        for _ in 0..2 {
            for q in &qs {
                let c = dot(q, &v);
                v.iter_mut().zip(q).for_each(|(x, qx)| *x -= c * qx);
            }
        }
        let nv = norm(&v);
        if scale == 0.0 || nv <= DEPENDENCE_TOL * scale {
            dependent.push(i);
        } else {
            v.iter_mut().for_each(|x| *x /= nv);
            qs.push(v);
        }
    }
    let mut r = y.to_vec();
    for _ in 0..2 {
        for q in &qs {
            let c = dot(q, &r);
            r.iter_mut().zip(q).for_each(|(x, qx)| *x -= c * qx);
        }
    }
    (r, dependent)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub std_err: f64,
    pub t: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionModel {
    pub target: String,
    pub intercept: Coefficient,
    pub coefficients: Vec<Coefficient>,
    pub r2: f64,
    pub adj_r2: f64,
    pub n: usize,
    pub k: usize,
    pub rss: f64,
    pub residuals: Vec<f64>,
}

impl RegressionModel {
    pub fn coefficient(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }
}

pub fn ols_fit(table: &FeatureTable) -> Result<RegressionModel> {
    let n = table.n_rows();
    let k = table.columns.len();
    if n <= k + 1 {
        return Err(Error::InvalidInput(format!("{n} rows are too few for {k} predictors")));
    }
    let ones = vec![1.0; n];
    let mut basis: Vec<&[f64]> = vec![&ones];
    basis.extend(table.columns.iter().map(|c| c.values.as_slice()));
    let (_, dependent) = residual(&table.target, &basis);
    if !dependent.is_empty() {
        return Err(Error::RankDeficient(
            dependent
                .into_iter()
                .map(|i| table.columns[i - 1].name.clone())
                .collect(),
        ));
    }

    let x = DMatrix::from_fn(n, k + 1, |i, j| basis[j][i]);
    let y = DVector::from_column_slice(&table.target);
    let qr = x.clone().qr();
    let r = qr.r();
    let qty = qr.q().transpose() * &y;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::RankDeficient(table.column_names()))?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k + 1, k + 1))
        .ok_or_else(|| Error::RankDeficient(table.column_names()))?;
    let resid = &y - &x * &beta;
    let rss = resid.norm_squared();
    let mean = y.mean();
    let tss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if tss == 0.0 {
        return Err(Error::Undefined(format!("target {} is constant", table.target_name)));
    }
    let df = (n - k - 1) as f64;
    let sigma2 = rss / df;
    let r2 = 1.0 - rss / tss;
    let adj_r2 = 1.0 - (1.0 - r2) * (n as f64 - 1.0) / df;
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Undefined(e.to_string()))?;

    let coef = |j: usize, name: &str| {
        let var = sigma2 * r_inv.row(j).norm_squared();
        let se = var.sqrt();
        let est = beta[j];
        let (t, p) = if se > 0.0 {
            let t = est / se;
            (t, (2.0 * dist.sf(t.abs())).min(1.0))
        } else if est == 0.0 {
            (f64::NAN, 1.0)
        } else {
            (est.signum() * f64::INFINITY, 0.0)
        };
        Coefficient {
            name: name.to_owned(),
            estimate: est,
            std_err: se,
            t,
            p,
        }
    };
    Ok(RegressionModel {
        target: table.target_name.clone(),
        intercept: coef(0, "intercept"),
        coefficients: table
            .columns
            .iter()
            .enumerate()
            .map(|(j, c)| coef(j + 1, &c.name))
            .collect(),
        r2,
        adj_r2,
        n,
        k,
        rss,
        residuals: resid.iter().copied().collect(),
    })
}

/// Variance inflation factor of every predictor; perfectly collinear
/// columns get infinity.
pub fn vif(table: &FeatureTable) -> Result<BTreeMap<String, f64>> {
    if table.columns.len() < 2 {
        return Err(Error::InvalidInput("VIF needs at least two predictors".into()));
    }
    let n = table.n_rows();
    let ones = vec![1.0; n];
    let mut out = BTreeMap::new();
    for (j, col) in table.columns.iter().enumerate() {
        let mut basis: Vec<&[f64]> = vec![&ones];
        basis.extend(
            table
                .columns
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != j)
                .map(|(_, c)| c.values.as_slice()),
        );
        let (r, _) = residual(&col.values, &basis);
        let mean = col.values.iter().sum::<f64>() / n as f64;
        let tss: f64 = col.values.iter().map(|v| (v - mean).powi(2)).sum();
        let rss = dot(&r, &r);
        let v = if tss == 0.0 || (rss / tss).sqrt() <= DEPENDENCE_TOL {
            f64::INFINITY
        } else {
            (tss / rss).max(1.0)
        };
        out.insert(col.name.clone(), v);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMethod {
    Vif,
    Aic,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Move {
    Add(String),
    Remove(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepDiagnostic {
    Vif {
        values: BTreeMap<String, f64>,
        dropped: Option<String>,
    },
    Aic {
        aic: f64,
        applied: Option<Move>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionReport {
    pub method: SelectionMethod,
    pub retained: Vec<String>,
    pub steps: Vec<StepDiagnostic>,
}

impl SelectionReport {
    pub fn to_log(&self) -> String {
        let mut s = format!("method: {:?}\n", self.method);
        for (i, step) in self.steps.iter().enumerate() {
            match step {
                StepDiagnostic::Vif { values, dropped } => {
                    let vals: Vec<String> = values.iter().map(|(k, v)| format!("{k}={v:.4}")).collect();
                    let _ = writeln!(
                        s,
                        "step {i}: {} -> drop {}",
                        vals.join(" "),
                        dropped.as_deref().unwrap_or("none")
                    );
                }
                StepDiagnostic::Aic { aic, applied } => {
                    let mv = match applied {
                        Some(Move::Add(c)) => format!("+{c}"),
                        Some(Move::Remove(c)) => format!("-{c}"),
                        None => "start".into(),
                    };
                    let _ = writeln!(s, "step {i}: {mv} aic={aic:.6}");
                }
            }
        }
        let _ = writeln!(s, "retained: {}", self.retained.join(", "));
        s
    }
}

/// Drops the highest-VIF column while any exceeds `max_vif`. Ties go to the
/// alphabetically last name.
pub fn vif_select(table: &FeatureTable, max_vif: f64) -> SelectionReport {
    let mut retained = table.column_names();
    let mut steps = Vec::new();
    while retained.len() >= 2 {
        let values = vif(&table.select(&retained).expect("subset of own columns")).expect("two or more columns");
        let worst = values
            .iter()
            .filter(|(_, &v)| v > max_vif)
            .max_by(|a, b| a.1.total_cmp(b.1).then_with(|| a.0.cmp(b.0)))
            .map(|(k, _)| k.clone());
        steps.push(StepDiagnostic::Vif {
            values,
            dropped: worst.clone(),
        });
        match worst {
            Some(w) => retained.retain(|c| *c != w),
            None => break,
        }
    }
    SelectionReport {
        method: SelectionMethod::Vif,
        retained,
        steps,
    }
}

/// Gaussian OLS AIC, counting the intercept: `n ln(RSS/n) + 2(k + 1)`.
pub fn aic(model: &RegressionModel) -> Result<f64> {
    if model.rss <= 0.0 {
        return Err(Error::Undefined("AIC of a perfect fit".into()));
    }
    let n = model.n as f64;
    Ok(n * (model.rss / n).ln() + 2.0 * (model.k as f64 + 1.0))
}

fn subset_aic(table: &FeatureTable, cols: &[String]) -> Option<f64> {
    let sub = table.select(cols).ok()?;
    ols_fit(&sub).ok().and_then(|m| aic(&m).ok())
}

/// Bidirectional greedy search from the intercept-only model. Each step
/// applies the single add or remove with the lowest AIC, stopping once no
/// move lowers it. Ties go to the alphabetically first column.
pub fn aic_stepwise_select(table: &FeatureTable) -> SelectionReport {
    let all = table.column_names();
    let mut current: Vec<String> = Vec::new();
    let mut steps = Vec::new();
    let Some(mut best) = subset_aic(table, &current) else {
        return SelectionReport {
            method: SelectionMethod::Aic,
            retained: current,
            steps,
        };
    };
    steps.push(StepDiagnostic::Aic {
        aic: best,
        applied: None,
    });
    loop {
        let mut candidates: Vec<(f64, String, Move)> = Vec::new();
        for c in &all {
            let (trial, mv) = if current.contains(c) {
                (
                    current.iter().filter(|x| *x != c).cloned().collect::<Vec<_>>(),
                    Move::Remove(c.clone()),
                )
            } else {
                let mut t = current.clone();
                t.push(c.clone());
                (t, Move::Add(c.clone()))
            };
            if let Some(a) = subset_aic(table, &trial) {
                candidates.push((a, c.clone(), mv));
            }
        }
        let Some((a, _, mv)) = candidates
            .into_iter()
            .min_by(|x, y| x.0.total_cmp(&y.0).then_with(|| x.1.cmp(&y.1)))
        else {
            break;
        };
        if a >= best {
            break;
        }
        match &mv {
            Move::Add(c) => current.push(c.clone()),
            Move::Remove(c) => current.retain(|x| x != c),
        }
        best = a;
        steps.push(StepDiagnostic::Aic {
            aic: a,
            applied: Some(mv),
        });
    }
    // report in table order
    let retained = all.into_iter().filter(|c| current.contains(c)).collect();
    SelectionReport {
        method: SelectionMethod::Aic,
        retained,
        steps,
    }
}

pub fn significance_marker(p: f64) -> &'static str {
    if p < 0.005 {
        "**"
    } else if p < 0.01 {
        "*"
    } else {
        ""
    }
}

/// CSV `predictor,coefficient,std_err,t,p,significance`, intercept first.
pub fn write_model_report(model: &RegressionModel, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["predictor", "coefficient", "std_err", "t", "p", "significance"])?;
    for c in std::iter::once(&model.intercept).chain(&model.coefficients) {
        w.write_record([
            c.name.clone(),
            format!("{}", c.estimate),
            format!("{}", c.std_err),
            format!("{}", c.t),
            format!("{}", c.p),
            significance_marker(c.p).to_owned(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("model report", e))?;
    Ok(())
}

/// Country trait values in long form, `country,predictor,value`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Predictors {
    values: BTreeMap<String, BTreeMap<String, String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictorKind {
    Numeric,
    Categorical,
}

impl Predictors {
    pub fn insert(&mut self, country: &str, predictor: &str, value: &str) {
        self.values
            .entry(predictor.to_owned())
            .or_default()
            .insert(country.to_owned(), value.trim().to_owned());
    }

    pub fn names(&self) -> Vec<String> {
        self.values.keys().cloned().collect()
    }

    /// Numeric when every value parses as a number.
    pub fn kind(&self, predictor: &str) -> Option<PredictorKind> {
        let vals = self.values.get(predictor)?;
        Some(if vals.values().all(|v| v.parse::<f64>().is_ok()) {
            PredictorKind::Numeric
        } else {
            PredictorKind::Categorical
        })
    }

    pub fn get(&self, country: &str, predictor: &str) -> Option<&str> {
        self.values.get(predictor)?.get(country).map(String::as_str)
    }

    pub fn numeric(&self, country: &str, predictor: &str) -> Option<f64> {
        self.get(country, predictor)?.parse().ok()
    }

    pub fn countries(&self) -> BTreeSet<String> {
        self.values.values().flat_map(|m| m.keys().cloned()).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::InvalidInput(format!("{}: {other:?}", path.display())),
        })?;
        let mut p = Predictors::default();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != 3 {
                return Err(Error::InvalidInput(format!(
                    "{}: expected country,predictor,value rows",
                    path.display()
                )));
            }
            p.insert(&rec[0], &rec[1], &rec[2]);
        }
        Ok(p)
    }
}

fn has_all(preds: &Predictors, country: &str) -> bool {
    preds.names().iter().all(|p| preds.get(country, p).is_some())
}

fn sorted_levels<'a>(vals: impl IntoIterator<Item = &'a String>) -> Vec<String> {
    vals.into_iter().cloned().collect::<BTreeSet<_>>().into_iter().collect()
}

/// One row per country: numeric traits rescaled to [0, 1], categorical
/// traits dummy-encoded, and the target rescaled. Countries missing any
/// trait are dropped. Constant or single-level traits are left out.
pub fn country_table(target_name: &str, target: &BTreeMap<String, f64>, preds: &Predictors) -> Result<FeatureTable> {
    let rows: Vec<&String> = target.keys().filter(|c| has_all(preds, c)).collect();
    for c in target.keys().filter(|c| !has_all(preds, c)) {
        log::warn!("{c} lacks predictor values; left out of the {target_name} regression");
    }
    let y: Vec<f64> = rows.iter().map(|c| target[*c]).collect();
    let mut table = FeatureTable::new(rows.iter().map(|c| (*c).clone()).collect(), target_name, rescale01(&y)?)?;
    for name in preds.names() {
        match preds.kind(&name) {
            Some(PredictorKind::Numeric) => {
                let vals: Vec<f64> = rows.iter().map(|c| preds.numeric(c, &name).expect("checked")).collect();
                match rescale01(&vals) {
                    Ok(v) => table.push(&name, v, format!("numeric:{name}"))?,
                    Err(_) => log::warn!("{name} is constant over the sample; skipped"),
                }
            }
            _ => {
                let vals: Vec<String> = rows
                    .iter()
                    .map(|c| preds.get(c, &name).expect("checked").to_owned())
                    .collect();
                push_dummies(&mut table, &name, &vals, sorted_levels(&vals))?;
            }
        }
    }
    Ok(table)
}

fn push_dummies(table: &mut FeatureTable, name: &str, vals: &[String], levels: Vec<String>) -> Result<()> {
    if levels.len() < 2 {
        log::warn!("{name} has a single level over the sample; skipped");
        return Ok(());
    }
    for col in dummy_encode(name, vals, &levels)? {
        table.push(col.name, col.values, col.source)?;
    }
    Ok(())
}

/// One row per country pair. Numeric traits are binarized at `cutoffs` (or
/// the median across countries when absent) and every trait becomes a
/// dummy-encoded pairwise category.
pub fn pair_table(
    target_name: &str,
    target: &BTreeMap<(String, String), f64>,
    preds: &Predictors,
    cutoffs: &BTreeMap<String, f64>,
) -> Result<FeatureTable> {
    let rows: Vec<&(String, String)> = target
        .keys()
        .filter(|(a, b)| has_all(preds, a) && has_all(preds, b))
        .collect();
    let y: Vec<f64> = rows.iter().map(|k| target[*k]).collect();
    let mut table = FeatureTable::new(
        rows.iter().map(|(a, b)| format!("{a}|{b}")).collect(),
        target_name,
        rescale01(&y)?,
    )?;
    let countries: BTreeSet<&String> = rows.iter().flat_map(|(a, b)| [a, b]).collect();
    for name in preds.names() {
        let (per_country, levels): (BTreeMap<&String, String>, Vec<String>) = match preds.kind(&name) {
            Some(PredictorKind::Numeric) => {
                let vals: Vec<f64> = countries
                    .iter()
                    .map(|c| preds.numeric(c, &name).expect("checked"))
                    .collect();
                let cut = cutoffs.get(&name).copied().unwrap_or_else(|| median(&vals));
                let cats = binarize(&vals, cut);
                (
                    countries.iter().copied().zip(cats).collect(),
                    vec!["low".into(), "high".into()],
                )
            }
            _ => {
                let m: BTreeMap<&String, String> = countries
                    .iter()
                    .map(|c| (*c, preds.get(c, &name).expect("checked").to_owned()))
                    .collect();
                let levels = sorted_levels(m.values());
                (m, levels)
            }
        };
        let vals: Vec<String> = rows
            .iter()
            .map(|(a, b)| pairwise_category(&per_country[a], &per_country[b], &levels))
            .collect();
        let present: BTreeSet<&String> = vals.iter().collect();
        let pair_levels: Vec<String> = pairwise_levels(&levels)
            .into_iter()
            .filter(|l| present.contains(l))
            .collect();
        push_dummies(&mut table, &name, &vals, pair_levels)?;
    }
    Ok(table)
}

/// Wide CSV: `id,<target>,<predictors...>`.
pub fn write_feature_csv(table: &FeatureTable, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id".to_owned(), table.target_name.clone()];
    header.extend(table.column_names());
    w.write_record(&header)?;
    for i in 0..table.n_rows() {
        let mut rec = vec![table.ids[i].clone(), format!("{}", table.target[i])];
        rec.extend(table.columns.iter().map(|c| format!("{}", c.values[i])));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("feature table", e))?;
    Ok(())
}

pub fn read_feature_csv(input: impl std::io::Read) -> Result<FeatureTable> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header.len() < 2 {
        return Err(Error::InvalidInput("feature table needs id and target columns".into()));
    }
    let mut ids = Vec::new();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); header.len() - 1];
    for rec in r.records() {
        let rec = rec?;
        ids.push(rec[0].to_owned());
        for (j, col) in cols.iter_mut().enumerate() {
            let v: f64 = rec[j + 1]
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad number {:?} in {}", &rec[j + 1], header[j + 1])))?;
            col.push(v);
        }
    }
    let mut it = cols.into_iter();
    let mut table = FeatureTable::new(ids, header[1].clone(), it.next().expect("target column"))?;
    for (name, values) in header[2..].iter().zip(it) {
        table.push(name.clone(), values, "csv")?;
    }
    Ok(table)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn normal(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
        Normal::new(0.0, sd).unwrap().sample(rng)
    }

    pub(crate) fn table(cols: &[(&str, Vec<f64>)], y: Vec<f64>) -> FeatureTable {
        let ids = (0..y.len()).map(|i| format!("r{i}")).collect();
        let mut t = FeatureTable::new(ids, "y", y).unwrap();
        for (n, v) in cols {
            t.push(*n, v.clone(), "test").unwrap();
        }
        t
    }

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn rescale_examples() {
        assert_eq!(rescale01(&[0.0, 5.0, 10.0]).unwrap(), vec![0.0, 0.5, 1.0]);
        let v = vec![0.0, 0.3, 1.0, 0.7];
        assert_eq!(rescale01(&v).unwrap(), v);
        assert!(rescale01(&[2.0, 2.0]).is_err());
    }

    #[test]
    fn dummy_examples() {
        let levels = s(&["A", "B", "C"]);
        let cols = dummy_encode("g", &s(&["B", "A", "C"]), &levels).unwrap();
        assert_eq!(cols[0].name, "g[B]");
        assert_eq!((cols[0].values[0], cols[1].values[0]), (1.0, 0.0));
        assert_eq!((cols[0].values[1], cols[1].values[1]), (0.0, 0.0));
        assert!(matches!(
            dummy_encode("g", &s(&["D"]), &levels),
            Err(Error::UnseenLevel(_))
        ));
        assert!(dummy_encode("g", &s(&["A"]), &s(&["A"])).is_err());
    }

    #[test]
    fn pairwise_examples() {
        let lv = s(&["low", "high"]);
        assert_eq!(pairwise_category("high", "low", &lv), "low–high");
        assert_eq!(pairwise_category("low", "high", &lv), "low–high");
        assert_eq!(pairwise_category("high", "high", &lv), "high–high");
        let mut all = BTreeSet::new();
        for a in &lv {
            for b in &lv {
                all.insert(pairwise_category(a, b, &lv));
            }
        }
        assert_eq!(all.len(), 3);
        assert_eq!(pairwise_levels(&lv), s(&["low–low", "low–high", "high–high"]));
        assert_eq!(binarize(&[600e9, 500e9, 1e9], GDP_CUTOFF), s(&["high", "low", "low"]));
    }

    #[test]
    fn ols_noiseless_line() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let y = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let m = ols_fit(&table(&[("x", x)], y)).unwrap();
        assert!((m.coefficients[0].estimate - 2.0).abs() < 1e-12);
        assert!((m.intercept.estimate - 1.0).abs() < 1e-12);
        assert!((m.r2 - 1.0).abs() < 1e-12);
        assert!(aic(&RegressionModel { rss: 0.0, ..m }).is_err());
    }

    #[test]
    fn ols_null_and_rank_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..2000).map(|_| rng.gen()).collect();
        let y: Vec<f64> = (0..2000).map(|_| normal(&mut rng, 1.0)).collect();
        let m = ols_fit(&table(&[("x", x.clone())], y.clone())).unwrap();
        assert!(m.coefficients[0].p > 0.05);
        assert!(m.adj_r2 <= m.r2);
        let err = ols_fit(&table(&[("x", x.clone()), ("dup", x.clone())], y.clone())).unwrap_err();
        assert!(matches!(err, Error::RankDeficient(ref c) if c == &["dup"]));
        assert!(ols_fit(&table(&[("x", x[..2].to_vec())], y[..2].to_vec())).is_err());
    }

    #[test]
    fn ols_recovers_planted_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 400;
        let a: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let y = (0..n)
            .map(|i| 0.3 * a[i] + 0.7 * b[i] + normal(&mut rng, 0.1))
            .collect();
        let m = ols_fit(&table(&[("a", a), ("b", b)], y)).unwrap();
        for (c, truth) in m.coefficients.iter().zip([0.3, 0.7]) {
            assert!((c.estimate - truth).abs() < 3.0 * c.std_err, "{c:?}");
        }
    }

    #[test]
    fn residuals_orthogonal_and_rescaling_predictable() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 80;
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(10.0..50.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let y: Vec<f64> = (0..n).map(|i| 0.1 * a[i] - b[i] + normal(&mut rng, 0.5)).collect();
        let m = ols_fit(&table(&[("a", a.clone()), ("b", b.clone())], y.clone())).unwrap();
        for col in [&a, &b] {
            let d = dot(&m.residuals, col) / (norm(&m.residuals) * norm(col));
            assert!(d.abs() < 1e-8);
        }
        let ra = rescale01(&a).unwrap();
        let m2 = ols_fit(&table(&[("a", ra), ("b", b)], y)).unwrap();
        let (lo, hi) = a.iter().fold((f64::MAX, f64::MIN), |(l, h), &x| (l.min(x), h.max(x)));
        let expect = m.coefficients[0].estimate * (hi - lo);
        assert!((m2.coefficients[0].estimate - expect).abs() < 1e-9 * expect.abs().max(1.0));
        for (r1, r2) in m.residuals.iter().zip(&m2.residuals) {
            assert!((r1 - r2).abs() < 1e-9);
        }
    }

    /// R² of `y` on `xs` through normal equations, independent of the
    /// Gram-Schmidt path.
    fn r2_oracle(y: &[f64], xs: &[&[f64]]) -> f64 {
        let n = y.len();
        let x = DMatrix::from_fn(n, xs.len() + 1, |i, j| if j == 0 { 1.0 } else { xs[j - 1][i] });
        let yv = DVector::from_column_slice(y);
        let beta = (x.transpose() * &x).lu().solve(&(x.transpose() * &yv)).unwrap();
        let r = &yv - &x * beta;
        let mean = yv.mean();
        1.0 - r.norm_squared() / yv.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
    }

    #[test]
    fn vif_examples() {
        // centered orthogonal columns
        let a = vec![1.0, -1.0, 1.0, -1.0];
        let b = vec![1.0, 1.0, -1.0, -1.0];
        let t = table(&[("a", a.clone()), ("b", b)], vec![0.0, 1.0, 2.0, 4.0]);
        assert!(vif(&t).unwrap().values().all(|v| (v - 1.0).abs() < 1e-12));
        let t = table(&[("a", a.clone()), ("a2", a)], vec![0.0; 4]);
        assert!(vif(&t).unwrap().values().all(|v| v.is_infinite()));

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x1: Vec<f64> = (0..200).map(|_| rng.gen()).collect();
        let x2: Vec<f64> = x1.iter().map(|v| v + normal(&mut rng, 0.05)).collect();
        let x3: Vec<f64> = (0..200).map(|_| rng.gen()).collect();
        let t = table(
            &[("x1", x1.clone()), ("x2", x2.clone()), ("x3", x3.clone())],
            vec![0.0; 200],
        );
        let v = vif(&t).unwrap();
        let oracle = 1.0 / (1.0 - r2_oracle(&x1, &[&x2, &x3]));
        assert!((v["x1"] - oracle).abs() < 1e-6 * oracle);
        assert!(v["x1"] > 5.0);
    }

    #[test]
    fn vif_select_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cols: Vec<(String, Vec<f64>)> = (0..3)
            .map(|i| (format!("c{i}"), (0..50).map(|_| rng.gen()).collect()))
            .collect();
        let mut t = table(&[], (0..50).map(|_| rng.gen()).collect());
        for (n, v) in &cols {
            t.push(n.clone(), v.clone(), "t").unwrap();
        }
        assert_eq!(vif_select(&t, 5.0).retained, t.column_names());
        t.push("c0_copy", cols[0].1.clone(), "t").unwrap();
        let rep = vif_select(&t, 5.0);
        assert_eq!(rep.retained.len(), 3);
        assert_eq!(rep.retained, s(&["c0", "c1", "c2"]));
    }

    #[test]
    fn aic_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 100;
        let a: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let y: Vec<f64> = a.iter().map(|v| v + normal(&mut rng, 0.1)).collect();
        let m = ols_fit(&table(&[("a", a.clone())], y.clone())).unwrap();
        let m_again = ols_fit(&table(&[("a", a.clone())], y.clone())).unwrap();
        assert_eq!(aic(&m).unwrap(), aic(&m_again).unwrap());
        let mut bigger = m.clone();
        bigger.k += 1;
        assert!((aic(&bigger).unwrap() - aic(&m).unwrap() - 2.0).abs() < 1e-12);

        let mut worse = 0;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let noise: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
            let m2 = ols_fit(&table(&[("a", a.clone()), ("noise", noise)], y.clone())).unwrap();
            if aic(&m2).unwrap() > aic(&m).unwrap() {
                worse += 1;
            }
        }
        assert!(worse > 50, "{worse}");
    }

    #[test]
    fn stepwise_examples() {
        let mut signal = 0;
        let mut empty = 0;
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 200;
            let cols: Vec<Vec<f64>> = (0..3).map(|_| (0..n).map(|_| rng.gen()).collect()).collect();
            let y: Vec<f64> = cols[0].iter().map(|v| v + normal(&mut rng, 0.1)).collect();
            let t = table(
                &[
                    ("a", cols[0].clone()),
                    ("noise1", cols[1].clone()),
                    ("noise2", cols[2].clone()),
                ],
                y,
            );
            let rep = aic_stepwise_select(&t);
            if rep.retained == s(&["a"]) {
                signal += 1;
            }
            let sel_aic = subset_aic(&t, &rep.retained).unwrap();
            assert!(sel_aic <= subset_aic(&t, &t.column_names()).unwrap() + 1e-9);

            let yn: Vec<f64> = (0..n).map(|_| normal(&mut rng, 1.0)).collect();
            let tn = table(&[("n1", cols[1].clone()), ("n2", cols[2].clone())], yn);
            if aic_stepwise_select(&tn).retained.is_empty() {
                empty += 1;
            }
        }
        assert!(signal > 10, "{signal}");
        assert!(empty > 10, "{empty}");
    }

    #[test]
    fn report_and_markers() {
        assert_eq!(significance_marker(0.001), "**");
        assert_eq!(significance_marker(0.007), "*");
        assert_eq!(significance_marker(0.01), "");
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let y = x
            .iter()
            .enumerate()
            .map(|(i, v)| v + if i % 2 == 0 { 0.1 } else { -0.1 })
            .collect();
        let m = ols_fit(&table(&[("x", x)], y)).unwrap();
        let mut buf = Vec::new();
        write_model_report(&m, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("predictor,coefficient,std_err,t,p,significance\nintercept,"));
        assert!(text.contains("\nx,") && text.trim_end().ends_with("**"));
    }

    fn demo_predictors() -> Predictors {
        let mut p = Predictors::default();
        for (c, gdp, dem, region) in [
            ("US", 2e13, 8.0, "am"),
            ("DE", 4e12, 8.5, "eu"),
            ("FR", 2.7e12, 7.9, "eu"),
            ("BR", 1.8e12, 6.9, "am"),
            ("KE", 1e11, 5.1, "af"),
            ("NG", 4.4e11, 4.1, "af"),
        ] {
            p.insert(c, "gdp", &gdp.to_string());
            p.insert(c, "democracy_index", &dem.to_string());
            p.insert(c, "region", region);
        }
        p
    }

    #[test]
    fn country_and_pair_tables() {
        let p = demo_predictors();
        let target: BTreeMap<String, f64> = ["US", "DE", "FR", "BR", "KE", "NG", "XX"]
            .iter()
            .enumerate()
            .map(|(i, c)| (c.to_string(), i as f64))
            .collect();
        let t = country_table("diversity", &target, &p).unwrap();
        assert_eq!(t.n_rows(), 6);
        assert_eq!(
            t.column_names(),
            s(&["democracy_index", "gdp", "region[am]", "region[eu]"])
        );
        assert!(t
            .columns
            .iter()
            .all(|c| c.values.iter().all(|v| (0.0..=1.0).contains(v))));

        let mut pairs = BTreeMap::new();
        let cs = ["BR", "DE", "FR", "KE", "NG", "US"];
        for (i, a) in cs.iter().enumerate() {
            for b in &cs[i + 1..] {
                pairs.insert(
                    (a.to_string(), b.to_string()),
                    (i * 7 % 5) as f64 + b.len() as f64 * 0.1 + i as f64,
                );
            }
        }
        let cut = BTreeMap::from([
            ("gdp".to_string(), GDP_CUTOFF),
            ("democracy_index".to_string(), DEMOCRACY_CUTOFF),
        ]);
        let t = pair_table("synchrony", &pairs, &p, &cut).unwrap();
        assert_eq!(t.n_rows(), 15);
        assert!(t.column("gdp[low–high]").is_some());
        assert!(t.column("gdp[high–high]").is_some());
        assert!(t.column("gdp[low–low]").is_none());

        let mut buf = Vec::new();
        write_feature_csv(&t, &mut buf).unwrap();
        let back = read_feature_csv(buf.as_slice()).unwrap();
        assert_eq!(back.column_names(), t.column_names());
        assert_eq!(back.target, t.target);
    }

    proptest! {
        #[test]
        fn rescale_preserves_order(v in proptest::collection::vec(-1e6f64..1e6, 2..40)) {
            prop_assume!(v.iter().any(|x| *x != v[0]));
            let r = rescale01(&v).unwrap();
            prop_assert_eq!(r.iter().cloned().fold(f64::MAX, f64::min), 0.0);
            prop_assert_eq!(r.iter().cloned().fold(f64::MIN, f64::max), 1.0);
            for i in 0..v.len() {
                for j in 0..v.len() {
                    if v[i] < v[j] { prop_assert!(r[i] <= r[j]); }
                }
            }
        }

        #[test]
        fn dummy_round_trip(idx in proptest::collection::vec(0usize..4, 1..50)) {
            let levels = s(&["w", "x", "y", "z"]);
            let vals: Vec<String> = idx.iter().map(|&i| levels[i].clone()).collect();
            let cols = dummy_encode("f", &vals, &levels).unwrap();
            for (row, v) in vals.iter().enumerate() {
                let ones: Vec<usize> = (0..3).filter(|&j| cols[j].values[row] == 1.0).collect();
                prop_assert!(ones.len() <= 1);
                let back = ones.first().map_or(&levels[0], |&j| &levels[j + 1]);
                prop_assert_eq!(back, v);
            }
        }

        #[test]
        fn pairwise_symmetric(a in 0usize..5, b in 0usize..5) {
            let lv = s(&["q", "r", "s", "t", "u"]);
            prop_assert_eq!(pairwise_category(&lv[a], &lv[b], &lv), pairwise_category(&lv[b], &lv[a], &lv));
        }

        #[test]
        fn vif_select_postcondition(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let base: Vec<f64> = (0..60).map(|_| rng.gen()).collect();
            let mut t = table(&[], (0..60).map(|_| rng.gen()).collect());
            for j in 0..5 {
                let mix = rng.gen_range(0.0..1.0);
                let v: Vec<f64> = base.iter().map(|b| mix * b + (1.0 - mix) * rng.gen::<f64>() * 0.2).collect();
                t.push(format!("c{j}"), v, "t").unwrap();
            }
            let rep = vif_select(&t, DEFAULT_MAX_VIF);
            if rep.retained.len() >= 2 {
                let v = vif(&t.select(&rep.retained).unwrap()).unwrap();
                prop_assert!(v.values().all(|x| *x <= DEFAULT_MAX_VIF));
            }
            prop_assert!(rep.retained.iter().all(|c| t.column(c).is_some()));
        }
    }
}
