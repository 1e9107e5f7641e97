//! Training loops for the three boosting objectives.
//!
//! Every trainer runs the same skeleton: encode categorical features with
//! ordered target statistics, start all scores at zero with phi = 1, then
//! per iteration fit one second-order tree per score, advance the scores by
//! the shrunk tree, and re-estimate the dispersion (and, for the linked
//! family, the inflation shape gamma) between iterations.
//!
//! The dual-score family alternates a mean tree and an inflation tree per
//! iteration, splitting the total tree budget evenly, and evaluates the
//! inflation derivatives at the already-advanced mean score.
//!
//! Dispersion updates minimize the mean negative log-likelihood over phi by
//! golden section on ln phi. The likelihood view is what makes the update
//! well-posed: the deviance alone decreases monotonically in phi on both
//! branches (the zero mass rises toward one and the positive branch scales
//! as 1/phi), so its minimizer always sits at the upper search bound,
//! while the series term restores the interior optimum. The gamma update
//! minimizes the same objective, where dropping the gamma-free series and
//! saturated terms leaves exactly the mean-deviance criterion.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compositional::{CompositionError, FittedTransforms};
use crate::dataset::{ColumnData, DataError, Dataset};
use crate::encoder::{EncoderError, OrderedTsEncoder};
use crate::loss::{
    self, linked_q, sigmoid, LossError, LossMode, ScoreState,
};
use crate::metrics::{self, Deviance, MetricError};
use crate::seeding;
use crate::tree::{
    self, BoostConfig, DecisionTree, FeatureMatrix, TreeError,
};
use crate::tweedie::{SeriesEvaluator, TweedieError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Composition(#[from] CompositionError),
    #[error(transparent)]
    Tweedie(#[from] TweedieError),
    #[error("training aborted at iteration {iteration}: {reason}")]
    Aborted { iteration: usize, reason: String },
    #[error("objective not finite anywhere inside the search bracket")]
    DegenerateObjective,
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("invalid setting: {0}")]
    BadSetting(String),
}

/// Objective family of a boosted model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    /// Plain Tweedie.
    Tweedie,
    /// Zero-inflated Tweedie, separate ensembles for mean and inflation.
    ZitwDual,
    /// Zero-inflated Tweedie with q = 1/(1 + mu^gamma).
    ZitwLinked,
}

impl Family {
    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Tweedie => "tweedie",
            Family::ZitwDual => "zitw-dual",
            Family::ZitwLinked => "zitw-linked",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tweedie" => Some(Family::Tweedie),
            "zitw-dual" => Some(Family::ZitwDual),
            "zitw-linked" => Some(Family::ZitwLinked),
            _ => None,
        }
    }
}

/// Everything a single training run needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub family: Family,
    /// Tweedie power parameter, fixed during training.
    pub p: f64,
    pub boost: BoostConfig,
    /// Re-estimate phi/gamma every this many iterations.
    pub update_interval: usize,
    /// Pin gamma to a constant instead of estimating it (linked family).
    pub fixed_gamma: Option<f64>,
    /// Multiplicative trust region for each gamma update. Unrestricted
    /// jumps let the first updates read the transient score ordering as a
    /// hard zero-classifier and race gamma to the search bound, a
    /// self-consistent but badly overfit fixed point of the coordinate
    /// descent; bounding each move keeps gamma near its running value
    /// until the mean surface carries real signal.
    pub gamma_step_limit: f64,
    /// Ordered-TS bucket count for categorical encoding.
    pub ts_buckets: usize,
    /// Ordered-TS smoothing prior.
    pub ts_prior: f64,
    /// Optional early stopping on a held-out fold; off by default.
    pub early_stopping: Option<EarlyStopping>,
    pub seed: u64,
}

/// Early-stopping policy: carve off a stratified validation fold, track its
/// mean deviance each iteration, stop after `patience` iterations without
/// improvement, and truncate the ensembles to the best iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
    pub validation_fraction: f64,
}

impl Default for EarlyStopping {
    fn default() -> Self {
        Self {
            patience: 20,
            validation_fraction: 0.2,
        }
    }
}

impl TrainSettings {
    pub fn new(family: Family) -> Self {
        Self {
            family,
            p: 1.5,
            boost: BoostConfig::default(),
            update_interval: 1,
            fixed_gamma: None,
            gamma_step_limit: 1.02,
            ts_buckets: 10,
            ts_prior: 0.5,
            early_stopping: None,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<(), TrainError> {
        self.boost.validate()?;
        if !(self.p > 1.0 && self.p < 2.0) {
            return Err(TrainError::BadSetting(format!(
                "power parameter must lie in (1, 2), got {}",
                self.p
            )));
        }
        if self.update_interval == 0 {
            return Err(TrainError::BadSetting(
                "update_interval must be at least 1".into(),
            ));
        }
        if self.family == Family::ZitwDual && self.boost.n_trees < 2 {
            return Err(TrainError::BadSetting(
                "dual family needs a tree budget of at least 2".into(),
            ));
        }
        if let Some(g) = self.fixed_gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(TrainError::BadSetting(format!(
                    "fixed gamma must be positive, got {g}"
                )));
            }
        }
        if !(self.gamma_step_limit > 1.0) {
            return Err(TrainError::BadSetting(format!(
                "gamma_step_limit must exceed 1, got {}",
                self.gamma_step_limit
            )));
        }
        if let Some(es) = &self.early_stopping {
            if es.patience == 0 {
                return Err(TrainError::BadSetting("patience must be at least 1".into()));
            }
            if !(es.validation_fraction > 0.0 && es.validation_fraction < 1.0) {
                return Err(TrainError::BadSetting(
                    "validation_fraction must lie in (0, 1)".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Search bounds used by the between-iteration phi updates.
pub const PHI_BOUNDS: (f64, f64) = (1e-4, 1e4);
/// Search bounds used by the between-iteration gamma updates.
pub const GAMMA_BOUNDS: (f64, f64) = (0.01, 10.0);

/// Feature slot of a trained model's schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub categorical: bool,
}

/// A trained ensemble with its distributional parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BoostedModel {
    pub family: Family,
    pub p: f64,
    pub phi: f64,
    /// Inflation shape; present only for the linked family.
    pub gamma_infl: Option<f64>,
    pub config: BoostConfig,
    pub features: Vec<FeatureSpec>,
    /// Ordered-TS state per feature; `None` for numeric slots.
    pub encoders: Vec<Option<OrderedTsEncoder>>,
    pub mean_trees: Vec<DecisionTree>,
    /// Inflation ensemble; present only for the dual family.
    pub prob_trees: Option<Vec<DecisionTree>>,
    /// Composition treatment fitted at training time, reapplied on new data.
    pub transforms: Option<FittedTransforms>,
}

/// Per-row model outputs.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub mu: Vec<f64>,
    pub q: Vec<f64>,
    pub expected: Vec<f64>,
}

/// One training iteration's bookkeeping.
///
/// `loss_before` and the `loss_after_*` fields are all evaluated at the
/// parameters (phi, gamma) the iteration's trees were fitted under, so the
/// pair states exactly what the tree step did to its own objective.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub loss_before: f64,
    pub loss_after_mean: f64,
    pub loss_after_prob: Option<f64>,
    pub phi: f64,
    pub gamma_infl: Option<f64>,
    pub mean_deviance: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub iterations: Vec<IterationRecord>,
}

/// Trainer output: the model plus its per-iteration log.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: BoostedModel,
    pub log: TrainingLog,
}

// ---------------------------------------------------------------------------
// Feature encoding
// ---------------------------------------------------------------------------

/// Encoded training view: numeric matrix, schema, and per-column encoders.
type EncodedFeatures = (FeatureMatrix, Vec<FeatureSpec>, Vec<Option<OrderedTsEncoder>>);

fn encode_training(
    dataset: &Dataset,
    settings: &TrainSettings,
) -> Result<EncodedFeatures, TrainError> {
    let mut names = Vec::new();
    let mut columns = Vec::new();
    let mut specs = Vec::new();
    let mut encoders = Vec::new();
    for (index, col) in dataset.columns().iter().enumerate() {
        names.push(col.name.clone());
        match &col.data {
            ColumnData::Numeric(values) => {
                columns.push(values.clone());
                specs.push(FeatureSpec {
                    name: col.name.clone(),
                    categorical: false,
                });
                encoders.push(None);
            }
            ColumnData::Categorical { codes, labels } => {
                let seed = seeding::stage_seed(settings.seed, "ordered-ts", index as u64);
                let (enc, values) = OrderedTsEncoder::fit(
                    codes,
                    labels,
                    dataset.target(),
                    seed,
                    settings.ts_buckets,
                    settings.ts_prior,
                )?;
                columns.push(values);
                specs.push(FeatureSpec {
                    name: col.name.clone(),
                    categorical: true,
                });
                encoders.push(Some(enc));
            }
        }
    }
    Ok((FeatureMatrix::new(names, columns), specs, encoders))
}

/// Encode a dataset against a trained schema using full-training-set
/// statistics for categorical features.
fn encode_inference(
    dataset: &Dataset,
    features: &[FeatureSpec],
    encoders: &[Option<OrderedTsEncoder>],
) -> Result<FeatureMatrix, TrainError> {
    let mut names = Vec::new();
    let mut columns = Vec::new();
    for (spec, enc) in features.iter().zip(encoders) {
        let col = dataset
            .column(&spec.name)
            .map_err(|_| TrainError::SchemaMismatch(format!("missing column {:?}", spec.name)))?;
        let values = match (&col.data, spec.categorical, enc) {
            (ColumnData::Numeric(v), false, None) => v.clone(),
            (ColumnData::Categorical { codes, labels }, true, Some(enc)) => {
                // per distinct code, one table lookup
                let lut: Vec<f64> = labels.iter().map(|l| enc.encode_label(l)).collect();
                codes.iter().map(|&c| lut[c as usize]).collect()
            }
            _ => {
                return Err(TrainError::SchemaMismatch(format!(
                    "column {:?} kind does not match the trained schema",
                    spec.name
                )))
            }
        };
        names.push(spec.name.clone());
        columns.push(values);
    }
    Ok(FeatureMatrix::new(names, columns))
}

// ---------------------------------------------------------------------------
// Mean losses (gradient-equivalent mode) used for logging and monotonicity
// ---------------------------------------------------------------------------

fn mean_loss_tweedie(
    y: &[f64],
    exposure: &[f64],
    scores: &[f64],
    phi: f64,
    p: f64,
) -> Result<f64, TrainError> {
    let mut sum = 0.0;
    for i in 0..y.len() {
        let st = ScoreState::mean_only(scores[i], exposure[i])?;
        sum += loss::tweedie_loss(y[i], &st, phi, p, LossMode::GradientEquivalent)?;
    }
    Ok(sum / y.len() as f64)
}

fn mean_loss_dual(
    y: &[f64],
    exposure: &[f64],
    mean_scores: &[f64],
    prob_scores: &[f64],
    phi: f64,
    p: f64,
) -> Result<f64, TrainError> {
    let mut sum = 0.0;
    for i in 0..y.len() {
        let st = ScoreState::dual(mean_scores[i], prob_scores[i], exposure[i])?;
        sum += loss::s1_loss(y[i], &st, phi, p, LossMode::GradientEquivalent)?;
    }
    Ok(sum / y.len() as f64)
}

fn mean_loss_linked(
    y: &[f64],
    exposure: &[f64],
    scores: &[f64],
    phi: f64,
    p: f64,
    gamma: f64,
) -> Result<f64, TrainError> {
    let mut sum = 0.0;
    for i in 0..y.len() {
        let st = ScoreState::mean_only(scores[i], exposure[i])?;
        sum += loss::s2_loss(y[i], &st, phi, p, gamma, LossMode::GradientEquivalent)?;
    }
    Ok(sum / y.len() as f64)
}

fn mu_from_scores(exposure: &[f64], scores: &[f64]) -> Vec<f64> {
    exposure
        .iter()
        .zip(scores)
        .map(|(e, w)| e * w.exp())
        .collect()
}

fn deviance_to_f64(d: Deviance) -> f64 {
    match d {
        Deviance::Value(v) => v,
        Deviance::Infinite => f64::INFINITY,
    }
}

// ---------------------------------------------------------------------------
// Golden-section minimizers for phi and gamma
// ---------------------------------------------------------------------------

/// Golden-section minimum of a unimodal objective on [lo, hi] to absolute
/// tolerance `tol` on the argument. Non-finite evaluations count as +inf.
fn golden_min(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let guard = |v: f64| if v.is_finite() { v } else { f64::INFINITY };
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = guard(f(x1));
    let mut f2 = guard(f(x2));
    while b - a > tol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = guard(f(x1));
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = guard(f(x2));
        }
    }
    let mid = (a + b) / 2.0;
    (mid, guard(f(mid)))
}

/// Per-row constants of the phi objective, split by branch.
struct PhiObjective {
    /// (ln q, ln(1-q), mu^(2-p)/(2-p)) for zero rows.
    zeros: Vec<(f64, f64, f64)>,
    /// Positive observations.
    pos_y: Vec<f64>,
    /// Sum over positive rows of the phi-free exponent pieces.
    pos_fit_sum: f64,
    pos_ln1mq_sum: f64,
    n: usize,
    series: SeriesEvaluator,
}

impl PhiObjective {
    fn new(y: &[f64], mu: &[f64], q: &[f64], p: f64) -> Self {
        let mut zeros = Vec::new();
        let mut pos_y = Vec::new();
        let mut pos_fit_sum = 0.0;
        let mut pos_ln1mq_sum = 0.0;
        for i in 0..y.len() {
            let e = mu[i].powf(2.0 - p) / (2.0 - p);
            if y[i] == 0.0 {
                zeros.push((q[i].ln(), (-q[i]).ln_1p(), e));
            } else {
                pos_y.push(y[i]);
                pos_fit_sum += y[i] * mu[i].powf(1.0 - p) / (1.0 - p) - e;
                pos_ln1mq_sum += (-q[i]).ln_1p();
            }
        }
        Self {
            zeros,
            pos_y,
            pos_fit_sum,
            pos_ln1mq_sum,
            n: y.len(),
            series: SeriesEvaluator::new(p),
        }
    }

    /// Mean negative log-likelihood at dispersion phi.
    fn eval(&mut self, phi: f64) -> f64 {
        let mut total = -self.pos_ln1mq_sum - self.pos_fit_sum / phi;
        for &(ln_q, ln_1mq, e) in &self.zeros {
            total -= crate::tweedie::log_sum_exp(ln_q, ln_1mq - e / phi);
        }
        for &y in &self.pos_y {
            match self.series.ln_a(y, phi) {
                Ok(v) => total -= v,
                Err(_) => return f64::INFINITY,
            }
        }
        total / self.n as f64
    }
}

/// Dispersion estimate: argmin over phi of the mean negative
/// log-likelihood at fixed per-row (mu, q), by golden section on ln phi to
/// relative tolerance 1e-6.
pub fn minimize_phi(
    y: &[f64],
    mu: &[f64],
    q: &[f64],
    p: f64,
    bounds: (f64, f64),
) -> Result<f64, TrainError> {
    if y.is_empty() || y.len() != mu.len() || y.len() != q.len() {
        return Err(MetricError::BadShape.into());
    }
    let mut objective = PhiObjective::new(y, mu, q, p);
    let (t, value) = golden_min(
        |t| objective.eval(t.exp()),
        bounds.0.ln(),
        bounds.1.ln(),
        1e-6,
    );
    if !value.is_finite() {
        return Err(TrainError::DegenerateObjective);
    }
    Ok(t.exp())
}

/// Gamma estimate with boundary and flatness diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaEstimate {
    pub value: f64,
    pub boundary_hit: bool,
    pub flat: bool,
}

/// Inflation-shape estimate: argmin over gamma of the mean negative
/// log-likelihood with q = 1/(1 + mu^gamma) at fixed phi. The gamma-free
/// series and saturated terms drop out, leaving exactly the mean-deviance
/// criterion; golden section runs on gamma itself to tolerance 1e-6.
pub fn minimize_gamma(
    y: &[f64],
    mu: &[f64],
    phi: f64,
    p: f64,
    bounds: (f64, f64),
) -> Result<GammaEstimate, TrainError> {
    if y.is_empty() || y.len() != mu.len() {
        return Err(MetricError::BadShape.into());
    }
    // (ln mu, e = mu^(2-p)/(2-p)/phi, is_zero)
    let rows: Vec<(f64, f64, bool)> = y
        .iter()
        .zip(mu)
        .map(|(&yi, &mi)| (mi.ln(), mi.powf(2.0 - p) / ((2.0 - p) * phi), yi == 0.0))
        .collect();
    let n = y.len() as f64;
    let objective = |gamma: f64| -> f64 {
        let mut total = 0.0;
        for &(ln_mu, e, is_zero) in &rows {
            let g = gamma * ln_mu;
            if is_zero {
                // -ln(q + (1-q) e^{-e}) with ln q = -softplus(g)
                total -= crate::tweedie::log_sum_exp(
                    -loss::softplus(g),
                    -loss::softplus(-g) - e,
                );
            } else {
                // -ln(1 - q) = softplus(-g)
                total += loss::softplus(-g);
            }
        }
        total / n
    };
    let (value, f_mid) = golden_min(objective, bounds.0, bounds.1, 1e-6);
    if !f_mid.is_finite() {
        return Err(TrainError::DegenerateObjective);
    }
    let span = bounds.1 - bounds.0;
    let f_lo = objective(bounds.0);
    let f_hi = objective(bounds.1);
    let spread = (f_lo - f_mid).abs().max((f_hi - f_mid).abs());
    let flat = spread <= 1e-12 * (1.0 + f_mid.abs());
    let boundary_hit =
        value - bounds.0 <= 1e-3 * span || bounds.1 - value <= 1e-3 * span;
    Ok(GammaEstimate {
        value,
        boundary_hit,
        flat,
    })
}

// ---------------------------------------------------------------------------
// Trainers
// ---------------------------------------------------------------------------

/// Dispatch on the configured family.
pub fn train(dataset: &Dataset, settings: &TrainSettings) -> Result<TrainOutcome, TrainError> {
    match settings.family {
        Family::Tweedie => train_tweedie(dataset, settings),
        Family::ZitwDual => train_zitw_dual(dataset, settings),
        Family::ZitwLinked => train_zitw_linked(dataset, settings),
    }
}

/// Validation fold state for optional early stopping.
struct ValidationFold {
    data: Dataset,
    features: FeatureMatrix,
    mean_scores: Vec<f64>,
    prob_scores: Vec<f64>,
    patience: usize,
    best: f64,
    best_iter: usize,
    since: usize,
}

impl ValidationFold {
    /// Carve off a stratified fold when early stopping is enabled. The
    /// feature matrix is filled in by the caller once encoders exist.
    fn split(dataset: &Dataset, settings: &TrainSettings) -> (Dataset, Option<ValidationFold>) {
        match &settings.early_stopping {
            None => (dataset.clone(), None),
            Some(es) => {
                let (fit_rows, valid_rows) = crate::cv::stratified_split(
                    dataset.target(),
                    es.validation_fraction,
                    seeding::stage_seed(settings.seed, "early-stop", 0),
                );
                let valid = dataset.select_rows(&valid_rows);
                let n = valid.n_rows();
                (
                    dataset.select_rows(&fit_rows),
                    Some(ValidationFold {
                        data: valid,
                        features: FeatureMatrix::new(Vec::new(), Vec::new()),
                        mean_scores: vec![0.0; n],
                        prob_scores: vec![0.0; n],
                        patience: es.patience,
                        best: f64::INFINITY,
                        best_iter: 0,
                        since: 0,
                    }),
                )
            }
        }
    }

    fn advance_mean(&mut self, tree: &DecisionTree, learning_rate: f64) {
        for (i, s) in self.mean_scores.iter_mut().enumerate() {
            *s += learning_rate * tree.predict_row(&self.features, i);
        }
    }

    fn advance_prob(&mut self, tree: &DecisionTree, learning_rate: f64) {
        for (i, s) in self.prob_scores.iter_mut().enumerate() {
            *s += learning_rate * tree.predict_row(&self.features, i);
        }
    }

    /// Record this iteration's validation deviance; true means stop.
    fn observe(&mut self, iter: usize, q: &[f64], phi: f64, p: f64) -> Result<bool, TrainError> {
        let mu = mu_from_scores(self.data.exposure(), &self.mean_scores);
        let value = deviance_to_f64(metrics::mean_deviance(
            self.data.target(),
            &mu,
            q,
            phi,
            p,
        )?);
        if value < self.best {
            self.best = value;
            self.best_iter = iter;
            self.since = 0;
        } else {
            self.since += 1;
        }
        Ok(self.since >= self.patience)
    }
}

fn abort(iteration: usize, err: impl std::fmt::Display) -> TrainError {
    TrainError::Aborted {
        iteration,
        reason: err.to_string(),
    }
}

/// Plain Tweedie boosted trees.
pub fn train_tweedie(dataset: &Dataset, settings: &TrainSettings) -> Result<TrainOutcome, TrainError> {
    settings.validate()?;
    let (fit_data, mut valid) = ValidationFold::split(dataset, settings);
    let dataset = &fit_data;
    let (features, specs, encoders) = encode_training(dataset, settings)?;
    if let Some(v) = valid.as_mut() {
        v.features = encode_inference(&v.data, &specs, &encoders)?;
    }
    let y = dataset.target();
    let exposure = dataset.exposure();
    let n = dataset.n_rows();
    let rows: Vec<usize> = (0..n).collect();
    let cfg = settings.boost;
    let p = settings.p;

    let mut scores = vec![0.0; n];
    let mut phi = 1.0;
    let mut trees = Vec::with_capacity(cfg.n_trees);
    let mut log = TrainingLog::default();
    let zeros_q = vec![0.0; n];

    for t in 0..cfg.n_trees {
        let loss_before =
            mean_loss_tweedie(y, exposure, &scores, phi, p).map_err(|e| abort(t, e))?;
        let mut grads = Vec::with_capacity(n);
        for i in 0..n {
            let st = ScoreState::mean_only(scores[i], exposure[i]).map_err(|e| abort(t, e))?;
            grads.push(loss::tweedie_grad_hess(y[i], &st, phi, p));
        }
        let tree = tree::fit_tree(&grads, &features, &rows, &cfg)?;
        for (i, s) in scores.iter_mut().enumerate() {
            *s += cfg.learning_rate * tree.predict_row(&features, i);
        }
        if let Some(v) = valid.as_mut() {
            v.advance_mean(&tree, cfg.learning_rate);
        }
        trees.push(tree);
        let loss_after =
            mean_loss_tweedie(y, exposure, &scores, phi, p).map_err(|e| abort(t, e))?;

        let mu = mu_from_scores(exposure, &scores);
        if (t + 1) % settings.update_interval == 0 {
            phi = minimize_phi(y, &mu, &zeros_q, p, PHI_BOUNDS)?;
        }
        let dev = metrics::mean_deviance(y, &mu, &zeros_q, phi, p)?;
        log.iterations.push(IterationRecord {
            iteration: t + 1,
            loss_before,
            loss_after_mean: loss_after,
            loss_after_prob: None,
            phi,
            gamma_infl: None,
            mean_deviance: deviance_to_f64(dev),
        });
        if let Some(v) = valid.as_mut() {
            let vq = vec![0.0; v.data.n_rows()];
            if v.observe(t, &vq, phi, p)? {
                break;
            }
        }
    }

    if let Some(v) = &valid {
        trees.truncate(v.best_iter + 1);
        phi = log.iterations[v.best_iter].phi;
    }

    Ok(TrainOutcome {
        model: BoostedModel {
            family: Family::Tweedie,
            p,
            phi,
            gamma_infl: None,
            config: cfg,
            features: specs,
            encoders,
            mean_trees: trees,
            prob_trees: None,
            transforms: None,
        },
        log,
    })
}

/// Dual-ensemble zero-inflated trainer: per iteration one mean tree, then
/// one inflation tree at the advanced mean score, then a phi update.
pub fn train_zitw_dual(
    dataset: &Dataset,
    settings: &TrainSettings,
) -> Result<TrainOutcome, TrainError> {
    settings.validate()?;
    let (fit_data, mut valid) = ValidationFold::split(dataset, settings);
    let dataset = &fit_data;
    let (features, specs, encoders) = encode_training(dataset, settings)?;
    if let Some(v) = valid.as_mut() {
        v.features = encode_inference(&v.data, &specs, &encoders)?;
    }
    let y = dataset.target();
    let exposure = dataset.exposure();
    let n = dataset.n_rows();
    let rows: Vec<usize> = (0..n).collect();
    let cfg = settings.boost;
    let p = settings.p;

    let iterations = cfg.n_trees / 2;
    let mut mean_scores = vec![0.0; n];
    let mut prob_scores = vec![0.0; n];
    let mut phi = 1.0;
    let mut mean_trees = Vec::with_capacity(iterations);
    let mut prob_trees = Vec::with_capacity(iterations);
    let mut log = TrainingLog::default();

    for t in 0..iterations {
        let loss_before = mean_loss_dual(y, exposure, &mean_scores, &prob_scores, phi, p)
            .map_err(|e| abort(t, e))?;

        // mean step at the current inflation scores
        let mut grads = Vec::with_capacity(n);
        for i in 0..n {
            let st = ScoreState::dual(mean_scores[i], prob_scores[i], exposure[i])
                .map_err(|e| abort(t, e))?;
            grads.push(loss::s1_grad_hess_mean(y[i], &st, phi, p).map_err(|e| abort(t, e))?);
        }
        let tree = tree::fit_tree(&grads, &features, &rows, &cfg)?;
        for (i, s) in mean_scores.iter_mut().enumerate() {
            *s += cfg.learning_rate * tree.predict_row(&features, i);
        }
        if let Some(v) = valid.as_mut() {
            v.advance_mean(&tree, cfg.learning_rate);
        }
        mean_trees.push(tree);
        let loss_after_mean = mean_loss_dual(y, exposure, &mean_scores, &prob_scores, phi, p)
            .map_err(|e| abort(t, e))?;

        // inflation step at the advanced mean score
        let mut grads = Vec::with_capacity(n);
        for i in 0..n {
            let st = ScoreState::dual(mean_scores[i], prob_scores[i], exposure[i])
                .map_err(|e| abort(t, e))?;
            grads.push(loss::s1_grad_hess_prob(y[i], &st, phi, p).map_err(|e| abort(t, e))?);
        }
        let tree = tree::fit_tree(&grads, &features, &rows, &cfg)?;
        for (i, s) in prob_scores.iter_mut().enumerate() {
            *s += cfg.learning_rate * tree.predict_row(&features, i);
        }
        if let Some(v) = valid.as_mut() {
            v.advance_prob(&tree, cfg.learning_rate);
        }
        prob_trees.push(tree);
        let loss_after_prob = mean_loss_dual(y, exposure, &mean_scores, &prob_scores, phi, p)
            .map_err(|e| abort(t, e))?;

        let mu = mu_from_scores(exposure, &mean_scores);
        let q: Vec<f64> = prob_scores.iter().map(|&w| sigmoid(w)).collect();
        if (t + 1) % settings.update_interval == 0 {
            phi = minimize_phi(y, &mu, &q, p, PHI_BOUNDS)?;
        }
        let dev = metrics::mean_deviance(y, &mu, &q, phi, p)?;
        log.iterations.push(IterationRecord {
            iteration: t + 1,
            loss_before,
            loss_after_mean,
            loss_after_prob: Some(loss_after_prob),
            phi,
            gamma_infl: None,
            mean_deviance: deviance_to_f64(dev),
        });
        if let Some(v) = valid.as_mut() {
            let vq: Vec<f64> = v.prob_scores.iter().map(|&w| sigmoid(w)).collect();
            if v.observe(t, &vq, phi, p)? {
                break;
            }
        }
    }

    if let Some(v) = &valid {
        mean_trees.truncate(v.best_iter + 1);
        prob_trees.truncate(v.best_iter + 1);
        phi = log.iterations[v.best_iter].phi;
    }

    Ok(TrainOutcome {
        model: BoostedModel {
            family: Family::ZitwDual,
            p,
            phi,
            gamma_infl: None,
            config: cfg,
            features: specs,
            encoders,
            mean_trees,
            prob_trees: Some(prob_trees),
            transforms: None,
        },
        log,
    })
}

/// Linked zero-inflated trainer: single ensemble, then phi and gamma
/// updates in that order each iteration.
pub fn train_zitw_linked(
    dataset: &Dataset,
    settings: &TrainSettings,
) -> Result<TrainOutcome, TrainError> {
    settings.validate()?;
    let (fit_data, mut valid) = ValidationFold::split(dataset, settings);
    let dataset = &fit_data;
    let (features, specs, encoders) = encode_training(dataset, settings)?;
    if let Some(v) = valid.as_mut() {
        v.features = encode_inference(&v.data, &specs, &encoders)?;
    }
    let y = dataset.target();
    let exposure = dataset.exposure();
    let n = dataset.n_rows();
    let rows: Vec<usize> = (0..n).collect();
    let cfg = settings.boost;
    let p = settings.p;

    let mut scores = vec![0.0; n];
    let mut phi = 1.0;
    let mut gamma = settings.fixed_gamma.unwrap_or(1.0);
    let mut trees = Vec::with_capacity(cfg.n_trees);
    let mut log = TrainingLog::default();

    for t in 0..cfg.n_trees {
        let loss_before = mean_loss_linked(y, exposure, &scores, phi, p, gamma)
            .map_err(|e| abort(t, e))?;
        let mut grads = Vec::with_capacity(n);
        for i in 0..n {
            let st = ScoreState::mean_only(scores[i], exposure[i]).map_err(|e| abort(t, e))?;
            grads.push(loss::s2_grad_hess(y[i], &st, phi, p, gamma).map_err(|e| abort(t, e))?);
        }
        let tree = tree::fit_tree(&grads, &features, &rows, &cfg)?;
        for (i, s) in scores.iter_mut().enumerate() {
            *s += cfg.learning_rate * tree.predict_row(&features, i);
        }
        if let Some(v) = valid.as_mut() {
            v.advance_mean(&tree, cfg.learning_rate);
        }
        trees.push(tree);
        let loss_after = mean_loss_linked(y, exposure, &scores, phi, p, gamma)
            .map_err(|e| abort(t, e))?;

        let mu = mu_from_scores(exposure, &scores);
        let q: Vec<f64> = mu.iter().map(|&m| linked_q(m, gamma)).collect();
        if (t + 1) % settings.update_interval == 0 {
            phi = minimize_phi(y, &mu, &q, p, PHI_BOUNDS)?;
            if settings.fixed_gamma.is_none() {
                let est = minimize_gamma(y, &mu, phi, p, GAMMA_BOUNDS)?;
                if !est.flat {
                    let limit = settings.gamma_step_limit;
                    gamma = est.value.clamp(gamma / limit, gamma * limit);
                }
            }
        }
        let q: Vec<f64> = mu.iter().map(|&m| linked_q(m, gamma)).collect();
        let dev = metrics::mean_deviance(y, &mu, &q, phi, p)?;
        log.iterations.push(IterationRecord {
            iteration: t + 1,
            loss_before,
            loss_after_mean: loss_after,
            loss_after_prob: None,
            phi,
            gamma_infl: Some(gamma),
            mean_deviance: deviance_to_f64(dev),
        });
        if let Some(v) = valid.as_mut() {
            let v_mu = mu_from_scores(v.data.exposure(), &v.mean_scores);
            let vq: Vec<f64> = v_mu.iter().map(|&m| linked_q(m, gamma)).collect();
            if v.observe(t, &vq, phi, p)? {
                break;
            }
        }
    }

    if let Some(v) = &valid {
        trees.truncate(v.best_iter + 1);
        let rec = &log.iterations[v.best_iter];
        phi = rec.phi;
        gamma = rec.gamma_infl.expect("linked records carry gamma");
    }

    Ok(TrainOutcome {
        model: BoostedModel {
            family: Family::ZitwLinked,
            p,
            phi,
            gamma_infl: Some(gamma),
            config: cfg,
            features: specs,
            encoders,
            mean_trees: trees,
            prob_trees: None,
            transforms: None,
        },
        log,
    })
}

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

impl BoostedModel {
    /// Apply stored transforms (if any) and encode against the schema.
    fn prepared_features(&self, dataset: &Dataset) -> Result<FeatureMatrix, TrainError> {
        match &self.transforms {
            Some(t) if !t.is_identity() => {
                let transformed = crate::compositional::apply_transforms(dataset, t)?;
                encode_inference(&transformed, &self.features, &self.encoders)
            }
            _ => encode_inference(dataset, &self.features, &self.encoders),
        }
    }

    /// Predicted (mu, q, expected) for every row.
    pub fn predict(&self, dataset: &Dataset) -> Result<Prediction, TrainError> {
        let features = self.prepared_features(dataset)?;
        let rows: Vec<usize> = (0..dataset.n_rows()).collect();
        let scores = tree::predict_score(
            &self.mean_trees,
            self.config.learning_rate,
            &features,
            &rows,
        );
        let mu = mu_from_scores(dataset.exposure(), &scores);
        let q = match self.family {
            Family::Tweedie => vec![0.0; mu.len()],
            Family::ZitwDual => {
                let prob_trees = self.prob_trees.as_ref().expect("dual model has prob trees");
                tree::predict_score(prob_trees, self.config.learning_rate, &features, &rows)
                    .into_iter()
                    .map(sigmoid)
                    .collect()
            }
            Family::ZitwLinked => {
                let gamma = self.gamma_infl.expect("linked model has gamma");
                mu.iter().map(|&m| linked_q(m, gamma)).collect()
            }
        };
        let expected = mu.iter().zip(&q).map(|(m, qq)| (1.0 - qq) * m).collect();
        Ok(Prediction { mu, q, expected })
    }

    /// Full per-row log-likelihoods (including the normalizing series).
    pub fn log_likelihoods(&self, dataset: &Dataset) -> Result<Vec<f64>, TrainError> {
        let pred = self.predict(dataset)?;
        dataset
            .target()
            .iter()
            .zip(pred.mu.iter().zip(&pred.q))
            .map(|(&yi, (&mu, &q))| Ok(-loss::full_nll(yi, mu, self.phi, self.p, q)?))
            .collect()
    }

    /// Mean deviance of this model's fit on a dataset.
    pub fn mean_deviance_on(&self, dataset: &Dataset) -> Result<Deviance, TrainError> {
        let pred = self.predict(dataset)?;
        Ok(metrics::mean_deviance(
            dataset.target(),
            &pred.mu,
            &pred.q,
            self.phi,
            self.p,
        )?)
    }

    /// Gain importance of the mean ensemble, normalized to sum to 100.
    pub fn feature_importance(&self) -> (Vec<(String, f64)>, bool) {
        let (values, has_splits) =
            tree::feature_importance(&self.mean_trees, self.features.len());
        let named = self
            .features
            .iter()
            .map(|f| f.name.clone())
            .zip(values)
            .collect();
        (named, has_splits)
    }

    /// Gain importance of the inflation ensemble, if one exists.
    pub fn prob_feature_importance(&self) -> Option<(Vec<(String, f64)>, bool)> {
        self.prob_trees.as_ref().map(|trees| {
            let (values, has) = tree::feature_importance(trees, self.features.len());
            let named = self
                .features
                .iter()
                .map(|f| f.name.clone())
                .zip(values)
                .collect();
            (named, has)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Column;

    fn constant_target_dataset(c: f64, n: usize) -> Dataset {
        let x: Vec<f64> = (0..n).map(|i| (i % 7) as f64).collect();
        Dataset::new(
            vec![Column::numeric("x", x)],
            vec![1.0; n],
            vec![c; n],
        )
        .unwrap()
    }

    fn settings(family: Family) -> TrainSettings {
        let mut s = TrainSettings::new(family);
        s.boost = BoostConfig {
            n_trees: 40,
            learning_rate: 0.1,
            l2_lambda: 1.0,
            max_depth: 2,
            min_samples_leaf: 1,
            hessian_floor: 1e-16,
            max_leaf: 20.0,
        };
        s.seed = 11;
        s
    }

    #[test]
    fn tweedie_converges_to_constant_target() {
        let data = constant_target_dataset(3.0, 60);
        let mut s = settings(Family::Tweedie);
        s.boost.n_trees = 200;
        s.boost.l2_lambda = 0.0;
        let out = train_tweedie(&data, &s).unwrap();
        let pred = out.model.predict(&data).unwrap();
        for m in &pred.mu {
            assert!((m - 3.0).abs() / 3.0 < 0.01, "mu {m}");
        }
        assert_eq!(pred.q, vec![0.0; 60]);
        assert_eq!(pred.expected, pred.mu);
    }

    #[test]
    fn tweedie_all_zero_target_drives_mu_down() {
        // With lambda = 0 the Newton leaf is -1/(2-p) regardless of the
        // dispersion, so the score walks down at a constant rate.
        let data = constant_target_dataset(0.0, 40);
        let mut s = settings(Family::Tweedie);
        s.boost.l2_lambda = 0.0;
        let out = train_tweedie(&data, &s).unwrap();
        let pred = out.model.predict(&data).unwrap();
        assert!(pred.mu.iter().all(|&m| m < 0.01), "mu should shrink: {:?}", &pred.mu[..3]);
        let devs: Vec<f64> = out.log.iterations.iter().map(|r| r.mean_deviance).collect();
        assert!(devs.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    }

    #[test]
    fn trainers_are_deterministic() {
        let data = simulated(600, 5);
        for family in [Family::Tweedie, Family::ZitwDual, Family::ZitwLinked] {
            let s = settings(family);
            let a = train(&data, &s).unwrap();
            let b = train(&data, &s).unwrap();
            assert_eq!(a.model, b.model);
            assert_eq!(a.log, b.log);
        }
    }

    #[test]
    fn dual_budget_splits_evenly() {
        let data = simulated(300, 3);
        let mut s = settings(Family::ZitwDual);
        s.boost.n_trees = 25;
        let out = train_zitw_dual(&data, &s).unwrap();
        assert_eq!(out.model.mean_trees.len(), 12);
        assert_eq!(out.model.prob_trees.as_ref().unwrap().len(), 12);
    }

    #[test]
    fn dual_all_zero_target_raises_inflation() {
        let data = constant_target_dataset(0.0, 50);
        let mut s = settings(Family::ZitwDual);
        s.boost.n_trees = 60;
        let out = train_zitw_dual(&data, &s).unwrap();
        let pred = out.model.predict(&data).unwrap();
        let mean_q: f64 = pred.q.iter().sum::<f64>() / pred.q.len() as f64;
        assert!(mean_q > 0.5, "q should rise toward 1, got {mean_q}");
        for r in &out.log.iterations {
            assert!(r.loss_after_mean <= r.loss_before + 1e-9);
            assert!(r.loss_after_prob.unwrap() <= r.loss_after_mean + 1e-9);
        }
    }

    #[test]
    fn linked_collapses_to_tweedie_when_inflation_vanishes() {
        // q = 1/(1 + mu^gamma) reaches 0 only for large gamma with mu > 1
        // (gamma -> 0 instead pins q at 1/2), so the Tweedie reduction is
        // exercised by pinning gamma high on a mu > 1 surface.
        use crate::tweedie::{sample_aggregate_claim, TweedieParams, ZitwParams};
        let n = 800;
        let mut x = Vec::with_capacity(n);
        let mut target = Vec::with_capacity(n);
        for i in 0..n {
            let v = (((i * 37 + 11) % 101) as f64) / 50.0 - 1.0;
            let m = (1.2 + 0.4 * v).exp();
            let params = ZitwParams::new(TweedieParams::new(m, 1.0, 1.5).unwrap(), 0.0).unwrap();
            target.push(sample_aggregate_claim(
                &params,
                1.0,
                crate::seeding::child_seed(4321, i as u64),
            ));
            x.push(v);
        }
        let data = Dataset::new(
            vec![Column::numeric("x", x)],
            vec![1.0; n],
            target,
        )
        .unwrap();
        let mut s2 = settings(Family::ZitwLinked);
        s2.fixed_gamma = Some(30.0);
        s2.boost.n_trees = 150;
        let linked = train_zitw_linked(&data, &s2).unwrap();
        let mut st = settings(Family::Tweedie);
        st.boost.n_trees = 150;
        let tweedie = train_tweedie(&data, &st).unwrap();
        let pl = linked.model.predict(&data).unwrap();
        let pt = tweedie.model.predict(&data).unwrap();
        let rel: f64 = pl
            .mu
            .iter()
            .zip(&pt.mu)
            .map(|(a, b)| (a - b).abs() / b)
            .sum::<f64>()
            / pl.mu.len() as f64;
        assert!(rel < 0.05, "mean relative mu gap {rel}");
    }

    #[test]
    fn phi_recovery_on_oracle_parameters() {
        // Draws at phi* = 1 with known mu and q supplied to the estimator.
        use crate::tweedie::{sample_aggregate_claim, TweedieParams, ZitwParams};
        let n = 100_000;
        let mut y = Vec::with_capacity(n);
        let mut mu = Vec::with_capacity(n);
        let mut q = Vec::with_capacity(n);
        for i in 0..n {
            let m = 0.5 + 2.0 * ((i % 17) as f64) / 16.0;
            let qi = 0.3;
            let params = ZitwParams::new(TweedieParams::new(m, 1.0, 1.5).unwrap(), qi).unwrap();
            y.push(sample_aggregate_claim(&params, 1.0, crate::seeding::child_seed(77, i as u64)));
            mu.push(m);
            q.push(qi);
        }
        let phi = minimize_phi(&y, &mu, &q, 1.5, PHI_BOUNDS).unwrap();
        assert!((0.9..=1.1).contains(&phi), "phi {phi}");
    }

    #[test]
    fn phi_golden_section_matches_grid_scan() {
        let y = vec![0.0, 1.2, 0.0, 3.4, 0.6, 0.0, 2.2, 0.0, 0.9, 5.0];
        let mu = vec![0.8, 1.5, 0.4, 2.5, 0.7, 1.1, 2.0, 0.5, 1.0, 3.0];
        let q = vec![0.3; 10];
        let phi = minimize_phi(&y, &mu, &q, 1.5, PHI_BOUNDS).unwrap();
        let mut objective = PhiObjective::new(&y, &mu, &q, 1.5);
        let mut best = (f64::INFINITY, 0.0);
        let (lo, hi) = (PHI_BOUNDS.0.ln(), PHI_BOUNDS.1.ln());
        let cells = 10_000;
        for k in 0..=cells {
            let t = lo + (hi - lo) * k as f64 / cells as f64;
            let v = objective.eval(t.exp());
            if v < best.0 {
                best = (v, t.exp());
            }
        }
        let cell = ((hi - lo) / cells as f64).exp();
        assert!(
            phi / best.1 < cell * cell && best.1 / phi < cell * cell,
            "golden {phi} vs grid {}",
            best.1
        );
    }

    #[test]
    fn phi_scales_with_joint_target_mean_scaling() {
        // Tweedie scale family: scaling y and mu by k rescales phi by k^(2-p).
        let y = vec![0.0, 1.5, 2.0, 0.0, 0.7, 4.0, 0.0, 1.1];
        let mu = vec![1.0, 1.4, 1.8, 0.6, 0.9, 3.0, 0.8, 1.2];
        let q = vec![0.2; 8];
        let p = 1.5;
        let phi1 = minimize_phi(&y, &mu, &q, p, PHI_BOUNDS).unwrap();
        let k = 4.0;
        let yk: Vec<f64> = y.iter().map(|v| v * k).collect();
        let muk: Vec<f64> = mu.iter().map(|v| v * k).collect();
        let phik = minimize_phi(&yk, &muk, &q, p, PHI_BOUNDS).unwrap();
        let expect = phi1 * k.powf(2.0 - p);
        assert!(
            (phik - expect).abs() / expect < 1e-3,
            "phi {phik} vs {expect}"
        );
    }

    #[test]
    fn gamma_boundary_hit_without_excess_zeros() {
        // No zeros at all: the objective is strictly decreasing in gamma
        // for mu > 1, so the estimate must report the upper bound.
        let n = 200;
        let y: Vec<f64> = (0..n).map(|i| 1.0 + ((i % 13) as f64) / 4.0).collect();
        let mu: Vec<f64> = (0..n).map(|i| 2.0 + ((i % 10) as f64) / 5.0).collect();
        let est = minimize_gamma(&y, &mu, 1.0, 1.5, GAMMA_BOUNDS).unwrap();
        assert!(est.boundary_hit, "expected boundary hit, got {est:?}");
    }

    #[test]
    fn gamma_golden_section_matches_grid_scan() {
        use crate::tweedie::{sample_aggregate_claim, TweedieParams, ZitwParams};
        let n = 4000;
        let gamma_true = 1.5;
        let mut y = Vec::with_capacity(n);
        let mut mu = Vec::with_capacity(n);
        for i in 0..n {
            let m = (0.5 + 1.5 * ((i % 20) as f64) / 19.0f64).exp() / 1.6;
            let qi = linked_q(m, gamma_true);
            let params = ZitwParams::new(TweedieParams::new(m, 1.0, 1.5).unwrap(), qi).unwrap();
            y.push(sample_aggregate_claim(&params, 1.0, crate::seeding::child_seed(5, i as u64)));
            mu.push(m);
        }
        let est = minimize_gamma(&y, &mu, 1.0, 1.5, GAMMA_BOUNDS).unwrap();
        // dense grid oracle over the same objective
        let rows: Vec<(f64, f64, bool)> = y
            .iter()
            .zip(&mu)
            .map(|(&yi, &mi)| (mi.ln(), mi.powf(0.5) / 0.5, yi == 0.0))
            .collect();
        let objective = |gamma: f64| -> f64 {
            let mut total = 0.0;
            for &(ln_mu, e, is_zero) in &rows {
                let g = gamma * ln_mu;
                if is_zero {
                    total -= crate::tweedie::log_sum_exp(
                        -loss::softplus(g),
                        -loss::softplus(-g) - e,
                    );
                } else {
                    total += loss::softplus(-g);
                }
            }
            total / n as f64
        };
        let cells = 10_000;
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..=cells {
            let g = GAMMA_BOUNDS.0 + (GAMMA_BOUNDS.1 - GAMMA_BOUNDS.0) * k as f64 / cells as f64;
            let v = objective(g);
            if v < best.0 {
                best = (v, g);
            }
        }
        let cell = (GAMMA_BOUNDS.1 - GAMMA_BOUNDS.0) / cells as f64;
        assert!(
            (est.value - best.1).abs() <= cell,
            "golden {} vs grid {}",
            est.value,
            best.1
        );
        assert!(
            (est.value - gamma_true).abs() < 0.4,
            "gamma {} should sit near {gamma_true}",
            est.value
        );
    }

    #[test]
    fn gamma_flat_at_unit_mu() {
        let y = vec![0.0, 1.0, 0.0, 2.0];
        let mu = vec![1.0; 4];
        let est = minimize_gamma(&y, &mu, 1.0, 1.5, GAMMA_BOUNDS).unwrap();
        assert!(est.flat, "objective must be flat at mu = 1: {est:?}");
    }

    #[test]
    fn predict_matches_hand_built_stumps() {
        use crate::tree::TreeNode;
        let data = Dataset::new(
            vec![Column::numeric("x", vec![0.0, 1.0, 2.0, 3.0, 4.0])],
            vec![1.0, 1.0, 1.0, 2.0, 2.0],
            vec![0.0; 5],
        )
        .unwrap();
        let stump = |thr: f64, l: f64, r: f64| {
            DecisionTree::from_nodes(vec![
                TreeNode::Split {
                    feature: 0,
                    threshold: thr,
                    left: 1,
                    right: 2,
                    gain: 1.0,
                },
                TreeNode::Leaf { value: l },
                TreeNode::Leaf { value: r },
            ])
        };
        let model = BoostedModel {
            family: Family::ZitwDual,
            p: 1.5,
            phi: 1.0,
            gamma_infl: None,
            config: BoostConfig {
                learning_rate: 0.5,
                ..BoostConfig::default()
            },
            features: vec![FeatureSpec {
                name: "x".into(),
                categorical: false,
            }],
            encoders: vec![None],
            mean_trees: vec![stump(1.5, 0.2, 0.8), stump(2.5, -0.4, 0.6)],
            prob_trees: Some(vec![stump(0.5, -2.0, 2.0)]),
            transforms: None,
        };
        let pred = model.predict(&data).unwrap();
        // row 0: mean score 0.5*(0.2 - 0.4) = -0.1; prob score 0.5*(-2) = -1
        let mu0 = (-0.1f64).exp();
        let q0 = sigmoid(-1.0);
        assert!((pred.mu[0] - mu0).abs() < 1e-12);
        assert!((pred.q[0] - q0).abs() < 1e-12);
        assert!((pred.expected[0] - (1.0 - q0) * mu0).abs() < 1e-12);
        // row 4: exposure 2, mean score 0.5*(0.8+0.6) = 0.7, prob +1
        let mu4 = 2.0 * 0.7f64.exp();
        let q4 = sigmoid(1.0);
        assert!((pred.mu[4] - mu4).abs() < 1e-12);
        assert!((pred.q[4] - q4).abs() < 1e-12);
    }

    #[test]
    fn schema_mismatch_is_reported() {
        let data = simulated(50, 2);
        let out = train_tweedie(&data, &settings(Family::Tweedie)).unwrap();
        let other = Dataset::new(
            vec![Column::numeric("unrelated", vec![1.0; 10])],
            vec![1.0; 10],
            vec![0.0; 10],
        )
        .unwrap();
        assert!(matches!(
            out.model.predict(&other),
            Err(TrainError::SchemaMismatch(_))
        ));
    }

    #[test]
    fn early_stopping_truncates_to_best_iteration() {
        let data = simulated(900, 5);
        let mut s = settings(Family::ZitwLinked);
        s.boost.n_trees = 120;
        s.boost.max_depth = 5;
        s.boost.learning_rate = 0.3;
        s.boost.l2_lambda = 0.0;
        s.boost.min_samples_leaf = 1;
        s.early_stopping = Some(EarlyStopping {
            patience: 10,
            validation_fraction: 0.25,
        });
        let out = train_zitw_linked(&data, &s).unwrap();
        assert!(
            out.model.mean_trees.len() < 120,
            "aggressive overfitting run should stop early, kept {}",
            out.model.mean_trees.len()
        );
        // deterministic under reruns
        let again = train_zitw_linked(&data, &s).unwrap();
        assert_eq!(out.model, again.model);
        // phi/gamma snapshot matches the kept iteration
        let kept = out.model.mean_trees.len();
        let rec = &out.log.iterations[kept - 1];
        assert_eq!(out.model.phi, rec.phi);
        assert_eq!(out.model.gamma_infl, rec.gamma_infl);
    }

    /// Small zero-inflated synthetic set with one categorical column.
    fn simulated(n: usize, n_features: usize) -> Dataset {
        use crate::tweedie::{sample_aggregate_claim, TweedieParams, ZitwParams};
        let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(n); n_features];
        let mut labels = Vec::with_capacity(n);
        let mut target = Vec::with_capacity(n);
        for i in 0..n {
            let mut z = 0.0;
            for (f, col) in cols.iter_mut().enumerate() {
                let v = (((i * 31 + f * 17 + 7) % 101) as f64) / 50.0 - 1.0;
                col.push(v);
                if f < 2 {
                    z += if f == 0 { 0.8 * v } else { -0.5 * v };
                }
            }
            labels.push(["north", "south", "east"][i % 3].to_string());
            let m = (0.2 + z).exp();
            let qi = 1.0 / (1.0 + m.powf(1.5));
            let params = ZitwParams::new(TweedieParams::new(m, 1.0, 1.5).unwrap(), qi).unwrap();
            target.push(sample_aggregate_claim(
                &params,
                1.0,
                crate::seeding::child_seed(1234, i as u64),
            ));
        }
        let mut columns: Vec<Column> = cols
            .into_iter()
            .enumerate()
            .map(|(f, v)| Column::numeric(format!("x{f}"), v))
            .collect();
        columns.push(Column::categorical("region", &labels));
        Dataset::new(columns, vec![1.0; n], target).unwrap()
    }
}
