//! Train/test protocol: stratified splitting, k-fold cross-validation,
//! and hyperparameter grid search.
//!
//! Splits stratify on zero-versus-positive target so the zero fraction
//! stays stable across folds. Grid cells run independent trainers (in
//! parallel, results collected in grid order, so outputs stay byte-stable)
//! and the winner is the argmin of the emitted CV table.

use rayon::prelude::*;
use thiserror::Error;

use crate::compositional::{self, CompositionBlock, FittedTransforms};
use crate::config::{SchemaConfig, SelectBy};
use crate::csvio::format_float;
use crate::dataset::Dataset;
use crate::metrics::{self, Deviance};
use crate::seeding;
use crate::train::{self, BoostedModel, TrainError, TrainingLog};

#[derive(Debug, Error)]
pub enum CvError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Composition(#[from] crate::compositional::CompositionError),
    #[error(transparent)]
    Metric(#[from] crate::metrics::MetricError),
    #[error("not enough rows: {rows} rows cannot support {folds}-fold CV plus a test split")]
    TooFewRows { rows: usize, folds: usize },
}

/// Deterministic shuffle of indices under a stage seed.
fn shuffled(mut indices: Vec<usize>, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    indices
}

/// Split rows into train and test, stratified on zero-vs-positive target.
/// Both outputs are sorted ascending.
pub fn stratified_split(target: &[f64], test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let zeros: Vec<usize> = (0..target.len()).filter(|&i| target[i] == 0.0).collect();
    let positives: Vec<usize> = (0..target.len()).filter(|&i| target[i] > 0.0).collect();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (stream, group) in [(0u64, zeros), (1u64, positives)] {
        let n_test = (group.len() as f64 * test_fraction).round() as usize;
        let shuffled = shuffled(group, seeding::child_seed(seed, stream));
        test.extend_from_slice(&shuffled[..n_test]);
        train.extend_from_slice(&shuffled[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Stratified k-fold assignment over `rows`; returns per-fold
/// (train, validation) index lists, all sorted.
pub fn stratified_kfold(
    target: &[f64],
    rows: &[usize],
    folds: usize,
    seed: u64,
) -> Vec<(Vec<usize>, Vec<usize>)> {
    let zeros: Vec<usize> = rows.iter().copied().filter(|&i| target[i] == 0.0).collect();
    let positives: Vec<usize> = rows.iter().copied().filter(|&i| target[i] > 0.0).collect();
    let mut assignment: Vec<Vec<usize>> = vec![Vec::new(); folds];
    for (stream, group) in [(0u64, zeros), (1u64, positives)] {
        let shuffled = shuffled(group, seeding::child_seed(seed, stream));
        for (k, &row) in shuffled.iter().enumerate() {
            assignment[k % folds].push(row);
        }
    }
    (0..folds)
        .map(|f| {
            let mut valid = assignment[f].clone();
            let mut train: Vec<usize> = assignment
                .iter()
                .enumerate()
                .filter(|&(g, _)| g != f)
                .flat_map(|(_, v)| v.iter().copied())
                .collect();
            valid.sort_unstable();
            train.sort_unstable();
            (train, valid)
        })
        .collect()
}

/// One grid cell's cross-validation outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct CvCell {
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub fold_deviance: Vec<f64>,
    pub mean_deviance: f64,
    pub mean_mad: f64,
}

/// The audit trail of a grid search.
#[derive(Debug, Clone, PartialEq)]
pub struct CvTable {
    pub cells: Vec<CvCell>,
    pub winner: usize,
    pub select_by: SelectBy,
}

impl CvTable {
    /// Machine-readable table, one row per cell, winner flagged.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("learning_rate,l2_lambda,mean_cv_deviance,mean_cv_mad,winner");
        let folds = self.cells.first().map_or(0, |c| c.fold_deviance.len());
        for f in 0..folds {
            out.push_str(&format!(",fold{}_deviance", f + 1));
        }
        out.push('\n');
        for (i, c) in self.cells.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{}",
                format_float(c.learning_rate),
                format_float(c.l2_lambda),
                format_float(c.mean_deviance),
                format_float(c.mean_mad),
                if i == self.winner { 1 } else { 0 }
            ));
            for d in &c.fold_deviance {
                out.push(',');
                out.push_str(&format_float(*d));
            }
            out.push('\n');
        }
        out
    }
}

/// Full protocol outcome.
#[derive(Debug)]
pub struct ProtocolOutcome {
    pub model: BoostedModel,
    pub log: TrainingLog,
    pub cv_table: CvTable,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
}

fn deviance_value(d: Deviance) -> f64 {
    match d {
        Deviance::Value(v) => v,
        Deviance::Infinite => f64::INFINITY,
    }
}

/// Run the full training protocol from a schema config:
/// stratified 80/20 split, transform fit on the training portion, k-fold
/// grid search selecting by mean CV deviance (or MAD), and a final retrain
/// on the whole training portion with the winning cell.
pub fn run_protocol(dataset: &Dataset, config: &SchemaConfig) -> Result<ProtocolOutcome, CvError> {
    let seed = config.tuning.seed;
    let folds = config.tuning.folds;
    if dataset.n_rows() < folds * 2 + 2 {
        return Err(CvError::TooFewRows {
            rows: dataset.n_rows(),
            folds,
        });
    }
    let (train_rows, test_rows) = stratified_split(
        dataset.target(),
        config.tuning.test_fraction,
        seeding::stage_seed(seed, "split", 0),
    );
    let train_data = dataset.select_rows(&train_rows);

    let blocks: Vec<CompositionBlock> = config.composition_blocks()?;
    let transforms: Option<FittedTransforms> = if blocks.is_empty() {
        None
    } else {
        Some(compositional::fit_transforms(&train_data, &blocks)?)
    };
    let train_t = match &transforms {
        Some(t) => compositional::apply_transforms(&train_data, t)?,
        None => train_data.clone(),
    };

    let local_rows: Vec<usize> = (0..train_t.n_rows()).collect();
    let fold_sets = stratified_kfold(
        train_t.target(),
        &local_rows,
        folds,
        seeding::stage_seed(seed, "folds", 0),
    );

    let mut grid: Vec<(f64, f64)> = Vec::new();
    for &alpha in &config.tuning.learning_rate_grid {
        for &lambda in &config.tuning.l2_grid {
            grid.push((alpha, lambda));
        }
    }

    // Each (cell, fold) is an independent training run.
    let mut jobs: Vec<(usize, usize)> = Vec::new();
    for c in 0..grid.len() {
        for f in 0..folds {
            jobs.push((c, f));
        }
    }
    let fold_metrics: Vec<Result<(usize, usize, f64, f64), CvError>> = jobs
        .par_iter()
        .map(|&(c, f)| {
            let (alpha, lambda) = grid[c];
            let settings =
                config.train_settings(alpha, lambda, seeding::stage_seed(seed, "fold", f as u64))?;
            let (fold_train, fold_valid) = &fold_sets[f];
            let sub_train = train_t.select_rows(fold_train);
            let sub_valid = train_t.select_rows(fold_valid);
            let outcome = train::train(&sub_train, &settings)?;
            let dev = deviance_value(outcome.model.mean_deviance_on(&sub_valid)?);
            let pred = outcome.model.predict(&sub_valid)?;
            let mad = metrics::mad(sub_valid.target(), &pred.expected)?;
            Ok((c, f, dev, mad))
        })
        .collect();

    let mut cells: Vec<CvCell> = grid
        .iter()
        .map(|&(alpha, lambda)| CvCell {
            learning_rate: alpha,
            l2_lambda: lambda,
            fold_deviance: vec![0.0; folds],
            mean_deviance: 0.0,
            mean_mad: 0.0,
        })
        .collect();
    for r in fold_metrics {
        let (c, f, dev, mad) = r?;
        cells[c].fold_deviance[f] = dev;
        cells[c].mean_deviance += dev / folds as f64;
        cells[c].mean_mad += mad / folds as f64;
    }

    let winner = select_winner(&cells, config.tuning.select_by);
    let (alpha, lambda) = grid[winner];
    let settings =
        config.train_settings(alpha, lambda, seeding::stage_seed(seed, "final-train", 0))?;
    let outcome = train::train(&train_t, &settings)?;
    let mut model = outcome.model;
    model.transforms = transforms;

    Ok(ProtocolOutcome {
        model,
        log: outcome.log,
        cv_table: CvTable {
            cells,
            winner,
            select_by: config.tuning.select_by,
        },
        train_rows,
        test_rows,
    })
}

fn select_winner(cells: &[CvCell], select_by: SelectBy) -> usize {
    let score = |c: &CvCell| match select_by {
        SelectBy::Deviance => c.mean_deviance,
        SelectBy::Mad => c.mean_mad,
    };
    let mut best = 0;
    for (i, c) in cells.iter().enumerate() {
        if score(c) < score(&cells[best]) {
            best = i;
        }
    }
    best
}
