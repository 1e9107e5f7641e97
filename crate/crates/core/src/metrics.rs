//! Model evaluation and comparison metrics.
//!
//! Covers the zero-inflated unit deviance, mean absolute deviation, the
//! Vuong statistic for non-nested likelihood comparison, the rank-based
//! Gini index, and the ordered-Lorenz pairwise Gini with min-max model
//! selection. Undefined or infinite outcomes are first-class values, never
//! silent NaNs.

use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("input arrays must be non-empty and of equal length")]
    BadShape,
    #[error("need at least {needed} observations, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("metric undefined: {0}")]
    Undefined(&'static str),
    #[error("base predictions must be strictly positive (row {0})")]
    NonPositiveBase(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
}

/// Outcome of a deviance evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Deviance {
    Value(f64),
    /// q = 1 with a positive observation has zero likelihood.
    Infinite,
}

impl Deviance {
    pub fn value(self) -> Option<f64> {
        match self {
            Deviance::Value(v) => Some(v),
            Deviance::Infinite => None,
        }
    }
}

/// Per-observation unit deviance of the zero-inflated Tweedie fit.
///
/// The y = 0 branch is -2 ln(q + (1-q) exp(-mu^(2-p)/(phi(2-p)))). The
/// y > 0 branch compares against the saturated fit (mu = y, q = 0):
///
/// ```text
/// 2 [ (y^(2-p)/(1-p) - y^(2-p)/(2-p))/phi - ln(1-q)
///     - (y mu^(1-p)/(1-p) - mu^(2-p)/(2-p))/phi ]
/// ```
///
/// It vanishes exactly at mu = y, q = 0 and is otherwise treated as a
/// comparative quantity.
pub fn unit_deviance(y: f64, mu: f64, phi: f64, p: f64, q: f64) -> Result<Deviance, MetricError> {
    if !(mu > 0.0 && phi > 0.0) {
        return Err(MetricError::InvalidParameter("mu and phi must be positive"));
    }
    if !(1.0 < p && p < 2.0) {
        return Err(MetricError::InvalidParameter("p must lie in (1, 2)"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(MetricError::InvalidParameter("q must lie in [0, 1]"));
    }
    if y == 0.0 {
        let lam = mu.powf(2.0 - p) / (phi * (2.0 - p));
        let zero_mass = q + (1.0 - q) * (-lam).exp();
        return Ok(Deviance::Value(-2.0 * zero_mass.ln()));
    }
    if q >= 1.0 {
        return Ok(Deviance::Infinite);
    }
    let y2p = y.powf(2.0 - p);
    let saturated = (y2p / (1.0 - p) - y2p / (2.0 - p)) / phi;
    let fitted = (y * mu.powf(1.0 - p) / (1.0 - p) - mu.powf(2.0 - p) / (2.0 - p)) / phi;
    // ln(1 - q) via ln_1p keeps q near 1 accurate
    Ok(Deviance::Value(2.0 * (saturated - (-q).ln_1p() - fitted)))
}

/// Mean of unit deviances across aligned arrays; `Infinite` dominates.
pub fn mean_deviance(
    y: &[f64],
    mu: &[f64],
    q: &[f64],
    phi: f64,
    p: f64,
) -> Result<Deviance, MetricError> {
    if y.is_empty() || y.len() != mu.len() || y.len() != q.len() {
        return Err(MetricError::BadShape);
    }
    let mut sum = 0.0;
    for i in 0..y.len() {
        match unit_deviance(y[i], mu[i], phi, p, q[i])? {
            Deviance::Value(v) => sum += v,
            Deviance::Infinite => return Ok(Deviance::Infinite),
        }
    }
    Ok(Deviance::Value(sum / y.len() as f64))
}

/// Mean absolute deviation (1/n) sum |y_i - yhat_i|.
pub fn mad(y: &[f64], y_hat: &[f64]) -> Result<f64, MetricError> {
    if y.is_empty() || y.len() != y_hat.len() {
        return Err(MetricError::BadShape);
    }
    let sum: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum();
    Ok(sum / y.len() as f64)
}

/// Result of the Vuong test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VuongOutcome {
    Defined { statistic: f64, p_value: f64 },
    /// Per-observation log-likelihood differences have zero variance.
    Undefined,
}

/// Vuong statistic for two non-nested models from per-row log-likelihoods.
///
/// V = sqrt(n) * mean(m) / sd(m) with m_i = ll1_i - ll2_i and the
/// population (1/n) variance; two-sided p-value from the standard normal.
pub fn vuong_test(loglik_1: &[f64], loglik_2: &[f64]) -> Result<VuongOutcome, MetricError> {
    if loglik_1.len() != loglik_2.len() {
        return Err(MetricError::BadShape);
    }
    let n = loglik_1.len();
    if n < 2 {
        return Err(MetricError::TooFew { needed: 2, got: n });
    }
    let m: Vec<f64> = loglik_1.iter().zip(loglik_2).map(|(a, b)| a - b).collect();
    let mean = m.iter().sum::<f64>() / n as f64;
    let var = m.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    if var == 0.0 {
        return Ok(VuongOutcome::Undefined);
    }
    let statistic = (n as f64).sqrt() * mean / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let p_value = 2.0 * (1.0 - normal.cdf(statistic.abs()));
    Ok(VuongOutcome::Defined { statistic, p_value })
}

/// Average ranks (1-based), ties receive the mean of their rank span.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 averaged
        let avg = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Rank-based discrimination index.
///
/// Ratio of the prediction-ranked lift over the perfectly-ranked lift;
/// equals 1 when predicted ranks reproduce the actual ranks.
pub fn gini_a(y: &[f64], y_hat: &[f64]) -> Result<f64, MetricError> {
    if y.is_empty() || y.len() != y_hat.len() {
        return Err(MetricError::BadShape);
    }
    let n = y.len();
    if n < 2 {
        return Err(MetricError::TooFew { needed: 2, got: n });
    }
    let total: f64 = y.iter().sum();
    if total == 0.0 {
        return Err(MetricError::Undefined("sum of observed values is zero"));
    }
    let first = y[0];
    if y.iter().all(|&v| v == first) {
        return Err(MetricError::Undefined("all observed values equal"));
    }
    // sum_i (n - i + 1)/n over i = 1..n is (n+1)/2
    let base = (n as f64 + 1.0) / 2.0;
    let rank_hat = average_ranks(y_hat);
    let rank_y = average_ranks(y);
    let lift = |ranks: &[f64]| -> f64 {
        y.iter().zip(ranks).map(|(yi, r)| yi * r).sum::<f64>() / total
    };
    Ok((lift(&rank_hat) - base) / (lift(&rank_y) - base))
}

/// Ordered-Lorenz pairwise Gini of a competing model against a base model.
///
/// Rows are sorted by the prediction ratio R_i = competing/base; rows with
/// equal R advance the curve as one block, so two proportional prediction
/// vectors yield exactly the diagonal. Returns twice the signed area
/// between the diagonal and the curve.
pub fn gini_b(y: &[f64], y_hat_base: &[f64], y_hat_competing: &[f64]) -> Result<f64, MetricError> {
    let n = y.len();
    if n == 0 || y_hat_base.len() != n || y_hat_competing.len() != n {
        return Err(MetricError::BadShape);
    }
    for (i, &b) in y_hat_base.iter().enumerate() {
        if !(b > 0.0) {
            return Err(MetricError::NonPositiveBase(i));
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let ratio = |i: usize| y_hat_competing[i] / y_hat_base[i];
    order.sort_by(|&a, &b| {
        ratio(a)
            .partial_cmp(&ratio(b))
            .expect("finite prediction ratios")
            .then(a.cmp(&b))
    });
    let total_base: f64 = y_hat_base.iter().sum();
    let total_y: f64 = y.iter().sum();
    if total_y == 0.0 {
        return Err(MetricError::Undefined("sum of observed values is zero"));
    }

    // Walk groups of equal R, accumulating trapezoids of (x - L(x)).
    let mut area = 0.0;
    let mut x_prev = 0.0;
    let mut yc_prev = 0.0;
    let mut cum_base = 0.0;
    let mut cum_y = 0.0;
    let mut i = 0;
    while i < n {
        let r = ratio(order[i]);
        let mut j = i;
        while j < n && ratio(order[j]) == r {
            cum_base += y_hat_base[order[j]];
            cum_y += y[order[j]];
            j += 1;
        }
        let x = cum_base / total_base;
        let yc = cum_y / total_y;
        area += (x - x_prev) * ((x_prev - yc_prev) + (x - yc)) / 2.0;
        x_prev = x;
        yc_prev = yc;
        i = j;
    }
    Ok(2.0 * area)
}

/// Pick the base model least exposed to competitors: smallest row-maximum
/// of the pairwise Gini matrix, ties broken by label order.
///
/// `matrix[i][j]` holds gini_b with base i against competing j; diagonal
/// entries are `None`.
pub fn minmax_select<'a>(
    labels: &'a [String],
    matrix: &[Vec<Option<f64>>],
) -> Result<&'a str, MetricError> {
    let k = labels.len();
    if k == 0 || matrix.len() != k || matrix.iter().any(|row| row.len() != k) {
        return Err(MetricError::BadShape);
    }
    let mut best: Option<(f64, usize)> = None;
    for (i, row) in matrix.iter().enumerate() {
        let row_max = row
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .filter_map(|(_, v)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        if row_max == f64::NEG_INFINITY {
            return Err(MetricError::Undefined("empty off-diagonal row"));
        }
        match best {
            Some((cur, _)) if row_max >= cur => {}
            _ => best = Some((row_max, i)),
        }
    }
    Ok(&labels[best.expect("k > 0").1])
}

/// Per-model inputs for a comparison report.
#[derive(Debug, Clone)]
pub struct ModelScores {
    pub label: String,
    /// Full per-row log-likelihoods (including the normalizing series).
    pub log_likelihood: Vec<f64>,
    /// Predicted expected claim amounts (1-q) mu.
    pub expected: Vec<f64>,
}

/// Entry of the pairwise Vuong matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VuongCell {
    Stat { statistic: f64, p_value: f64 },
    Undefined,
}

/// Evaluation and comparison summary for a set of models on one dataset.
#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub labels: Vec<String>,
    pub vuong: Vec<Vec<Option<VuongCell>>>,
    pub gini_b: Vec<Vec<Option<f64>>>,
    pub minmax_choice: String,
}

/// Build the pairwise comparison report for two or more models.
pub fn compare_models(y: &[f64], models: &[ModelScores]) -> Result<ComparisonReport, MetricError> {
    if models.len() < 2 {
        return Err(MetricError::TooFew {
            needed: 2,
            got: models.len(),
        });
    }
    for m in models {
        if m.log_likelihood.len() != y.len() || m.expected.len() != y.len() {
            return Err(MetricError::BadShape);
        }
    }
    let k = models.len();
    let mut vuong = vec![vec![None; k]; k];
    let mut ginib = vec![vec![None; k]; k];
    for i in 0..k {
        for j in 0..k {
            if i == j {
                continue;
            }
            vuong[i][j] = Some(
                match vuong_test(&models[i].log_likelihood, &models[j].log_likelihood)? {
                    VuongOutcome::Defined { statistic, p_value } => VuongCell::Stat {
                        statistic,
                        p_value,
                    },
                    VuongOutcome::Undefined => VuongCell::Undefined,
                },
            );
            ginib[i][j] = Some(gini_b(y, &models[i].expected, &models[j].expected)?);
        }
    }
    let labels: Vec<String> = models.iter().map(|m| m.label.clone()).collect();
    let minmax_choice = minmax_select(&labels, &ginib)?.to_string();
    Ok(ComparisonReport {
        labels,
        vuong,
        gini_b: ginib,
        minmax_choice,
    })
}

/// Scalar metric that may be undefined or infinite; statuses are explicit
/// values, never NaNs.
#[derive(Debug, Clone, PartialEq)]
pub enum MetricValue {
    Value(f64),
    Infinite,
    Undefined(String),
}

impl MetricValue {
    fn to_field(&self) -> String {
        match self {
            MetricValue::Value(v) => format!("{v:?}"),
            MetricValue::Infinite => "infinite".to_string(),
            MetricValue::Undefined(reason) => format!("undefined:{reason}"),
        }
    }

    fn from_field(s: &str) -> Result<Self, MetricError> {
        if s == "infinite" {
            return Ok(MetricValue::Infinite);
        }
        if let Some(reason) = s.strip_prefix("undefined:") {
            return Ok(MetricValue::Undefined(reason.to_string()));
        }
        s.parse::<f64>()
            .map(MetricValue::Value)
            .map_err(|_| MetricError::Undefined("unparsable metric field"))
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            MetricValue::Value(v) => Some(*v),
            _ => None,
        }
    }
}

impl From<Deviance> for MetricValue {
    fn from(d: Deviance) -> Self {
        match d {
            Deviance::Value(v) => MetricValue::Value(v),
            Deviance::Infinite => MetricValue::Infinite,
        }
    }
}

/// Per-model evaluation summary emitted by the CLI.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationSummary {
    pub n_rows: usize,
    pub mad: f64,
    pub mean_deviance: MetricValue,
    pub gini_a: MetricValue,
}

impl EvaluationSummary {
    /// Machine-readable form: `metric,value` lines, shortest round-trip
    /// floats, statuses spelled out.
    pub fn to_csv(&self) -> String {
        format!(
            "metric,value\nn_rows,{}\nmad,{:?}\nmean_deviance,{}\ngini_a,{}\n",
            self.n_rows,
            self.mad,
            self.mean_deviance.to_field(),
            self.gini_a.to_field()
        )
    }

    pub fn from_csv(text: &str) -> Result<Self, MetricError> {
        let mut n_rows = None;
        let mut mad = None;
        let mut mean_deviance = None;
        let mut gini_a = None;
        for line in text.lines().skip(1) {
            let (key, value) = line
                .split_once(',')
                .ok_or(MetricError::Undefined("malformed summary line"))?;
            match key {
                "n_rows" => {
                    n_rows = Some(
                        value
                            .parse()
                            .map_err(|_| MetricError::Undefined("bad n_rows"))?,
                    )
                }
                "mad" => {
                    mad = Some(
                        value
                            .parse()
                            .map_err(|_| MetricError::Undefined("bad mad"))?,
                    )
                }
                "mean_deviance" => mean_deviance = Some(MetricValue::from_field(value)?),
                "gini_a" => gini_a = Some(MetricValue::from_field(value)?),
                _ => {}
            }
        }
        Ok(Self {
            n_rows: n_rows.ok_or(MetricError::Undefined("missing n_rows"))?,
            mad: mad.ok_or(MetricError::Undefined("missing mad"))?,
            mean_deviance: mean_deviance.ok_or(MetricError::Undefined("missing mean_deviance"))?,
            gini_a: gini_a.ok_or(MetricError::Undefined("missing gini_a"))?,
        })
    }

    /// Human-readable block.
    pub fn to_text(&self, label: &str) -> String {
        let show = |m: &MetricValue| match m {
            MetricValue::Value(v) => format!("{v:.6}"),
            MetricValue::Infinite => "infinite".to_string(),
            MetricValue::Undefined(reason) => format!("undefined ({reason})"),
        };
        format!(
            "model: {label}\nrows: {}\nMAD: {:.6}\nmean deviance: {}\nGini_a: {}\n",
            self.n_rows,
            self.mad,
            show(&self.mean_deviance),
            show(&self.gini_a)
        )
    }
}
