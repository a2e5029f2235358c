//! Inter-rater agreement for the intrusion task: Gwet's AC1, nominal
//! Krippendorff's alpha, and intrusion precision.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::error::{Error, Result};

/// Items × raters matrix of nominal labels; `None` marks a missing rating.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RatingsTable {
    pub items: Vec<String>,
    pub raters: Vec<String>,
    cells: Vec<Vec<Option<String>>>,
}

impl RatingsTable {
    pub fn new(items: Vec<String>, raters: Vec<String>, cells: Vec<Vec<Option<String>>>) -> Result<Self> {
        if raters.len() < 2 {
            return Err(Error::InvalidInput("need at least two raters".into()));
        }
        if items.is_empty() || items.len() != cells.len() {
            return Err(Error::InvalidInput("need one row of ratings per item".into()));
        }
        if let Some(row) = cells.iter().find(|r| r.len() != raters.len()) {
            return Err(Error::InvalidInput(format!(
                "row has {} ratings for {} raters",
                row.len(),
                raters.len()
            )));
        }
        Ok(Self { items, raters, cells })
    }

    /// Unnamed table from label rows; raters and items get index names.
    pub fn from_rows<S: AsRef<str>>(rows: &[Vec<Option<S>>]) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        Self::new(
            (0..rows.len()).map(|i| format!("item{i}")).collect(),
            (0..width).map(|i| format!("rater{i}")).collect(),
            rows.iter()
                .map(|r| r.iter().map(|c| c.as_ref().map(|s| s.as_ref().to_owned())).collect())
                .collect(),
        )
    }

    pub fn rows(&self) -> &[Vec<Option<String>>] {
        &self.cells
    }

    pub fn categories(&self) -> BTreeSet<&str> {
        self.cells.iter().flatten().flatten().map(String::as_str).collect()
    }

    /// CSV with a header `item,<rater...>`; blank cells are missing.
    pub fn load(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::InvalidInput(format!("{}: {other:?}", path.display())),
        })?;
        let raters: Vec<String> = rdr.headers()?.iter().skip(1).map(str::to_owned).collect();
        let mut items = Vec::new();
        let mut cells = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            items.push(rec[0].to_owned());
            cells.push(
                rec.iter()
                    .skip(1)
                    .map(|c| (!c.trim().is_empty()).then(|| c.trim().to_owned()))
                    .collect(),
            );
        }
        Self::new(items, raters, cells)
    }

    pub fn write_csv(&self, out: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["item".to_owned()];
        header.extend(self.raters.iter().cloned());
        w.write_record(&header)?;
        for (item, row) in self.items.iter().zip(&self.cells) {
            let mut rec = vec![item.clone()];
            rec.extend(row.iter().map(|c| c.clone().unwrap_or_default()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("ratings", e))?;
        Ok(())
    }
}

/// Multi-rater Gwet AC1 over the categories observed in the table.
pub fn gwet_ac1(table: &RatingsTable) -> Result<f64> {
    if table.cells.iter().flatten().any(Option::is_none) {
        return Err(Error::InvalidInput("AC1 needs a complete table".into()));
    }
    let cats: Vec<&str> = table.categories().into_iter().collect();
    let q = cats.len();
    if q < 2 {
        return Err(Error::Undefined("AC1 with a single category".into()));
    }
    let r = table.raters.len() as f64;
    let n = table.items.len() as f64;
    let mut pa = 0.0;
    let mut pi = vec![0.0; q];
    for row in &table.cells {
        let mut counts = vec![0.0f64; q];
        for c in row.iter().flatten() {
            counts[cats.binary_search(&c.as_str()).expect("observed")] += 1.0;
        }
        pa += counts.iter().map(|k| k * (k - 1.0)).sum::<f64>() / (r * (r - 1.0));
        for (p, k) in pi.iter_mut().zip(&counts) {
            *p += k / r;
        }
    }
    pa /= n;
    let pe = pi.iter().map(|p| (p / n) * (1.0 - p / n)).sum::<f64>() / (q as f64 - 1.0);
    Ok((pa - pe) / (1.0 - pe))
}

/// Krippendorff's alpha with the nominal metric, via the coincidence
/// matrix. Items with fewer than two ratings contribute nothing.
pub fn krippendorff_alpha(table: &RatingsTable) -> Result<f64> {
    let cats: Vec<&str> = table.categories().into_iter().collect();
    let q = cats.len();
    let mut o = vec![vec![0.0f64; q]; q];
    for row in &table.cells {
        let vals: Vec<usize> = row
            .iter()
            .flatten()
            .map(|c| cats.binary_search(&c.as_str()).expect("observed"))
            .collect();
        let m = vals.len();
        if m < 2 {
            continue;
        }
        let w = 1.0 / (m as f64 - 1.0);
        for (i, &a) in vals.iter().enumerate() {
            for (j, &b) in vals.iter().enumerate() {
                if i != j {
                    o[a][b] += w;
                }
            }
        }
    }
    let nc: Vec<f64> = o.iter().map(|r| r.iter().sum()).collect();
    let n: f64 = nc.iter().sum();
    if n < 2.0 {
        return Err(Error::InsufficientCoverage("alpha needs two pairable values".into()));
    }
    let mut disagree = 0.0;
    let mut expected = 0.0;
    for c in 0..q {
        for k in 0..q {
            if c != k {
                disagree += o[c][k];
                expected += nc[c] * nc[k];
            }
        }
    }
    if expected == 0.0 {
        return Err(Error::Undefined("alpha with a single category".into()));
    }
    Ok(1.0 - (n - 1.0) * disagree / expected)
}

/// Fraction of answered bundles where the chosen article is the intruder.
pub fn intrusion_precision(answers: &BTreeMap<String, String>, truth: &BTreeMap<String, String>) -> Result<f64> {
    if answers.is_empty() {
        return Err(Error::InvalidInput("no answers".into()));
    }
    let mut correct = 0usize;
    for (bundle, chosen) in answers {
        let intruder = truth
            .get(bundle)
            .ok_or_else(|| Error::InvalidInput(format!("answer for unknown bundle {bundle}")))?;
        correct += usize::from(chosen == intruder);
    }
    Ok(correct as f64 / answers.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionSummary {
    pub per_rater: BTreeMap<String, f64>,
    pub average: f64,
}

/// Per-rater precision and its mean. `answers` maps rater → bundle → choice.
pub fn precision_summary(
    answers: &BTreeMap<String, BTreeMap<String, String>>,
    truth: &BTreeMap<String, String>,
) -> Result<PrecisionSummary> {
    if answers.is_empty() {
        return Err(Error::InvalidInput("no raters".into()));
    }
    let per_rater = answers
        .iter()
        .map(|(r, a)| Ok((r.clone(), intrusion_precision(a, truth)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let average = per_rater.values().sum::<f64>() / per_rater.len() as f64;
    Ok(PrecisionSummary { per_rater, average })
}

/// Long-form answers CSV `rater,bundle,chosen` into rater → bundle → choice.
pub fn load_answers(path: &Path) -> Result<BTreeMap<String, BTreeMap<String, String>>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidInput(format!("{}: {other:?}", path.display())),
    })?;
    let mut out: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(Error::InvalidInput(format!(
                "{}: expected rater,bundle,chosen rows",
                path.display()
            )));
        }
        out.entry(rec[0].to_owned())
            .or_default()
            .insert(rec[1].to_owned(), rec[2].to_owned());
    }
    Ok(out)
}

/// Ratings table over bundles with each rater's choice as the label.
pub fn ratings_from_answers(answers: &BTreeMap<String, BTreeMap<String, String>>) -> Result<RatingsTable> {
    let bundles: BTreeSet<&String> = answers.values().flat_map(BTreeMap::keys).collect();
    let raters: Vec<String> = answers.keys().cloned().collect();
    let cells = bundles
        .iter()
        .map(|b| raters.iter().map(|r| answers[r].get(*b).cloned()).collect())
        .collect();
    RatingsTable::new(bundles.into_iter().cloned().collect(), raters, cells)
}
