//! Synthetic claim-data generation from a simulation spec.
//!
//! Features are drawn first (one sequential stream), then each row's claim
//! is sampled from a zero-inflated compound Poisson-gamma with its own
//! derived seed, so the targets do not depend on feature draw order. The
//! generator also returns the per-row ground truth (mu including exposure,
//! and q) for parameter-recovery checks.

use std::collections::HashMap;

use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, Gamma, Normal, Uniform, weighted::WeightedIndex};
use thiserror::Error;

use crate::config::{ExposureSpec, FeatureSpecSim, InflationSpec, SimSpec};
use crate::dataset::{Column, DataError, Dataset};
use crate::expr::{Expr, ExprError};
use crate::loss::linked_q;
use crate::seeding;
use crate::tweedie::{sample_aggregate_claim_with, TweedieError, TweedieParams, ZitwParams};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Tweedie(#[from] TweedieError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("row {row}: mu surface produced {value} (must be positive and finite)")]
    BadMu { row: usize, value: f64 },
    #[error("row {row}: q surface produced {value} (must lie in [0, 1])")]
    BadQ { row: usize, value: f64 },
}

/// Per-row generating truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthRow {
    /// Model-scale mean: exposure times the mu surface.
    pub mu: f64,
    pub q: f64,
}

/// Simulation output; `dataset` is `None` for n = 0 (header-only files).
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub dataset: Option<Dataset>,
    pub truth: Vec<TruthRow>,
}

/// Generate a dataset and its ground truth from a validated spec.
pub fn generate(spec: &SimSpec) -> Result<SimOutput, SimError> {
    let n = spec.n;
    let mut rng = StdRng::seed_from_u64(seeding::stage_seed(spec.seed, "sim-features", 0));

    // numeric columns by name plus optional categorical columns
    let mut numeric: Vec<(String, Vec<f64>)> = Vec::new();
    let mut categorical: Vec<(String, Vec<String>)> = Vec::new();
    for f in &spec.features {
        match f {
            FeatureSpecSim::Uniform { name, low, high } => {
                let d = Uniform::new(*low, *high).expect("validated bounds");
                numeric.push((name.clone(), (0..n).map(|_| d.sample(&mut rng)).collect()));
            }
            FeatureSpecSim::Normal { name, mean, sd } => {
                let d = Normal::new(*mean, *sd).expect("validated sd");
                numeric.push((name.clone(), (0..n).map(|_| d.sample(&mut rng)).collect()));
            }
            FeatureSpecSim::Dirichlet { prefix, parts, alpha } => {
                let d = Gamma::new(*alpha, 1.0).expect("validated alpha");
                let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(n); *parts];
                for _ in 0..n {
                    let draws: Vec<f64> = (0..*parts).map(|_| d.sample(&mut rng)).collect();
                    let total: f64 = draws.iter().sum();
                    for (c, v) in cols.iter_mut().zip(&draws) {
                        c.push(v / total);
                    }
                }
                for (i, c) in cols.into_iter().enumerate() {
                    numeric.push((format!("{prefix}_{}", i + 1), c));
                }
            }
            FeatureSpecSim::Categorical { name, labels, weights } => {
                let d = WeightedIndex::new(weights).expect("validated weights");
                categorical.push((
                    name.clone(),
                    (0..n).map(|_| labels[d.sample(&mut rng)].clone()).collect(),
                ));
            }
        }
    }

    let exposure: Vec<f64> = match &spec.exposure {
        ExposureSpec::Fixed { value } => vec![*value; n],
        ExposureSpec::Uniform { low, high } => {
            let d = Uniform::new(*low, *high).expect("validated bounds");
            (0..n).map(|_| d.sample(&mut rng)).collect()
        }
    };

    let mu_expr = Expr::parse(&spec.mu.expr)?;
    let q_expr = match &spec.inflation {
        InflationSpec::QExpr { expr } => Some(Expr::parse(expr)?),
        _ => None,
    };

    let mut target = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for row in 0..n {
        let mut vars: HashMap<&str, f64> = HashMap::new();
        for (name, values) in &numeric {
            vars.insert(name.as_str(), values[row]);
        }
        vars.insert("exposure", exposure[row]);
        let mu_rate = mu_expr.eval(&vars)?;
        if !(mu_rate.is_finite() && mu_rate > 0.0) {
            return Err(SimError::BadMu {
                row,
                value: mu_rate,
            });
        }
        let mu_full = exposure[row] * mu_rate;
        let q = match &spec.inflation {
            InflationSpec::None => 0.0,
            InflationSpec::Gamma { value } => linked_q(mu_full, *value),
            InflationSpec::QExpr { .. } => {
                let v = q_expr.as_ref().expect("parsed above").eval(&vars)?;
                if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
                    return Err(SimError::BadQ { row, value: v });
                }
                v
            }
        };
        let mut row_rng =
            StdRng::seed_from_u64(seeding::stage_seed(spec.seed, "sim-claims", row as u64));
        let y = if q >= 1.0 {
            0.0
        } else {
            let params =
                ZitwParams::new(TweedieParams::new(mu_rate, spec.params.phi, spec.params.p)?, q)?;
            sample_aggregate_claim_with(&params, exposure[row], &mut row_rng)
        };
        target.push(y);
        truth.push(TruthRow { mu: mu_full, q });
    }

    if n == 0 {
        return Ok(SimOutput {
            dataset: None,
            truth,
        });
    }

    let mut columns: Vec<Column> = numeric
        .into_iter()
        .map(|(name, values)| Column::numeric(name, values))
        .collect();
    for (name, values) in categorical {
        columns.push(Column::categorical(name, &values));
    }
    Ok(SimOutput {
        dataset: Some(Dataset::new(columns, exposure, target)?),
        truth,
    })
}

/// Ground-truth sidecar CSV (one row per data row).
pub fn truth_to_csv(truth: &[TruthRow]) -> String {
    let mut out = String::from("mu,q\n");
    for t in truth {
        out.push_str(&crate::csvio::format_float(t.mu));
        out.push(',');
        out.push_str(&crate::csvio::format_float(t.q));
        out.push('\n');
    }
    out
}
