use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use log::warn;
use rand::Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{AnalysisError, AtcScore};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub r: f64,
    /// Two-sided p-value for the null of no correlation.
    pub p_value: f64,
    pub slope: f64,
    pub intercept: f64,
    pub n: usize,
}

/// Pearson correlation, its t-test p-value, and the least-squares line of
/// `y` on `x`.
pub fn pearson_linreg(x: &[f64], y: &[f64]) -> Result<Correlation, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::InvalidArgument(format!(
            "series lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 3 {
        return Err(AnalysisError::InvalidArgument(format!("need at least 3 points, got {n}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(AnalysisError::InvalidArgument("series contain non-finite values".into()));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 {
        return Err(AnalysisError::Degenerate("x".into(), "zero variance".into()));
    }
    if syy == 0.0 {
        return Err(AnalysisError::Degenerate("y".into(), "zero variance".into()));
    }
    let mut r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    if 1.0 - r.abs() <= 4.0 * f64::EPSILON {
        r = r.signum();
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let df = nf - 2.0;
    let p_value = if r.abs() == 1.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| AnalysisError::InvalidArgument(e.to_string()))?;
        (2.0 * dist.sf(t.abs())).min(1.0)
    };
    Ok(Correlation {
        r,
        p_value,
        slope,
        intercept,
        n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bootstrap {
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for Bootstrap {
    fn default() -> Self {
        Bootstrap {
            resamples: 1000,
            level: 0.95,
            seed: 0,
        }
    }
}

impl Bootstrap {
    fn validate(&self) -> Result<(), AnalysisError> {
        if self.resamples < 100 {
            return Err(AnalysisError::InvalidArgument(format!(
                "bootstrap needs at least 100 resamples, got {}",
                self.resamples
            )));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(AnalysisError::InvalidArgument(format!("level must be in (0, 1), got {}", self.level)));
        }
        Ok(())
    }
}

/// Percentile bootstrap of the mean: returns `(mean, ci_low, ci_high)`.
/// Resample `b` draws from its own sub-seed of `config.seed`.
pub fn percentile_bootstrap(values: &[f64], config: &Bootstrap) -> Result<(f64, f64, f64), AnalysisError> {
    config.validate()?;
    if values.is_empty() {
        return Err(AnalysisError::InvalidArgument("cannot bootstrap an empty sample".into()));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let mut means: Vec<f64> = (0..config.resamples)
        .map(|b| {
            let mut rng = seed::rng_from(seed::derive_indexed(config.seed, "bootstrap", b as u64));
            (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - config.level) / 2.0;
    let b = config.resamples as f64;
    let lo = (tail * b).floor() as usize;
    let hi = (((1.0 - tail) * b).ceil() as usize).saturating_sub(1).max(lo);
    Ok((mean, means[lo], means[hi.min(config.resamples - 1)]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryStat {
    pub category: String,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_actions: usize,
}

/// Mean score per category with a percentile bootstrap CI. `categories` maps
/// raw action labels to category names; uses `r_std` when present. Each
/// category's resamples are seeded from its name, so adding a category
/// leaves the others unchanged.
pub fn category_mean_ci(
    scores: &[AtcScore],
    categories: &HashMap<String, String>,
    config: &Bootstrap,
) -> Result<Vec<CategoryStat>, AnalysisError> {
    config.validate()?;
    let mut members: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for cat in categories.values() {
        members.entry(cat.as_str()).or_default();
    }
    for s in scores {
        if let Some(cat) = categories.get(&s.label()) {
            members.get_mut(cat.as_str()).unwrap().push(s.r_std.unwrap_or(s.r));
        }
    }
    let mut out = Vec::new();
    for (category, values) in members {
        if values.is_empty() {
            warn!("category {category:?} has no scored actions; omitted");
            continue;
        }
        let sub = Bootstrap {
            seed: seed::derive_seed(config.seed, category),
            ..*config
        };
        let (mean, ci_low, ci_high) = percentile_bootstrap(&values, &sub)?;
        out.push(CategoryStat {
            category: category.to_string(),
            mean,
            ci_low,
            ci_high,
            n_actions: values.len(),
        });
    }
    Ok(out)
}

/// CSV with header `category,mean,ci_low,ci_high,n_actions`.
pub fn write_category_csv<W: Write>(stats: &[CategoryStat], out: W) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| malformed("category table", e);
    w.write_record(["category", "mean", "ci_low", "ci_high", "n_actions"]).map_err(err)?;
    for s in stats {
        w.write_record([
            s.category.clone(),
            s.mean.to_string(),
            s.ci_low.to_string(),
            s.ci_high.to_string(),
            s.n_actions.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

fn malformed(what: &str, e: impl std::fmt::Display) -> AnalysisError {
    AnalysisError::Malformed {
        what: what.into(),
        message: e.to_string(),
    }
}

fn two_columns<R: Read>(input: R, what: &str, first: &str, second: &str) -> Result<Vec<(String, String)>, AnalysisError> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers().map_err(|e| malformed(what, e))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| malformed(what, format!("missing column {name:?}")))
    };
    let (a, b) = (col(first)?, col(second)?);
    rdr.records()
        .map(|rec| {
            let rec = rec.map_err(|e| malformed(what, e))?;
            Ok((rec.get(a).unwrap_or("").to_string(), rec.get(b).unwrap_or("").trim().to_string()))
        })
        .collect()
}

/// Category map CSV with header `action,category`.
pub fn read_category_map<R: Read>(input: R) -> Result<HashMap<String, String>, AnalysisError> {
    let rows = two_columns(input, "category map", "action", "category")?;
    let mut map = HashMap::with_capacity(rows.len());
    for (action, category) in rows {
        if let Some(prev) = map.insert(action.clone(), category.clone()) {
            if prev != category {
                return Err(malformed("category map", format!("action {action:?} listed under two categories")));
            }
        }
    }
    Ok(map)
}

/// Covariate CSV with header `window_index,value`, sorted by window.
pub fn read_covariate<R: Read>(input: R) -> Result<Vec<(usize, f64)>, AnalysisError> {
    let rows = two_columns(input, "covariate", "window_index", "value")?;
    let mut out = Vec::with_capacity(rows.len());
    for (i, (w, v)) in rows.into_iter().enumerate() {
        let bad = |field: &str, text: &str| malformed("covariate", format!("row {}: bad {field} {text:?}", i + 2));
        let w: usize = w.trim().parse().map_err(|_| bad("window_index", &w))?;
        let v: f64 = v.parse().map_err(|_| bad("value", &v))?;
        out.push((w, v));
    }
    out.sort_by_key(|&(w, _)| w);
    if out.windows(2).any(|p| p[0].0 == p[1].0) {
        return Err(malformed("covariate", "duplicate window_index"));
    }
    Ok(out)
}
