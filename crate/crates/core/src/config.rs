//! TOML configuration files for the CLI.
//!
//! Two documents exist: the schema/training config consumed by `train`,
//! `evaluate`, and `transform`, and the simulation spec consumed by
//! `simulate`. All randomness is seeded explicitly through these files (or
//! the `--seed` override); nothing reads the environment.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compositional::{CompositionBlock, Treatment};
use crate::csvio::DataRoles;
use crate::train::{EarlyStopping, Family, TrainSettings};
use crate::tree::BoostConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn default_p() -> f64 {
    1.5
}
fn default_n_trees() -> usize {
    500
}
fn default_max_depth() -> usize {
    10
}
fn default_min_samples_leaf() -> usize {
    1
}
fn default_hessian_floor() -> f64 {
    1e-16
}
fn default_max_leaf() -> f64 {
    20.0
}
fn default_gamma_step_limit() -> f64 {
    1.02
}
fn default_es_fraction() -> f64 {
    0.2
}
fn default_update_interval() -> usize {
    1
}
fn default_ts_buckets() -> usize {
    10
}
fn default_ts_prior() -> f64 {
    0.5
}
fn default_folds() -> usize {
    3
}
fn default_test_fraction() -> f64 {
    0.2
}
fn default_alpha_grid() -> Vec<f64> {
    vec![0.01, 0.05, 0.10]
}
fn default_lambda_grid() -> Vec<f64> {
    (0..=10).map(|k| 10.0 * k as f64).collect()
}
fn default_closure() -> f64 {
    1.0
}
fn default_epsilon() -> f64 {
    1e-6
}

/// `[data]` section: column roles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSection {
    pub target: String,
    pub exposure: String,
    #[serde(default)]
    pub categorical: Vec<String>,
    #[serde(default)]
    pub ignore: Vec<String>,
}

/// `[model]` section: objective family and tree parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSection {
    pub family: String,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "default_n_trees")]
    pub n_trees: usize,
    #[serde(default = "default_max_depth")]
    pub max_depth: usize,
    #[serde(default = "default_min_samples_leaf")]
    pub min_samples_leaf: usize,
    #[serde(default = "default_hessian_floor")]
    pub hessian_floor: f64,
    #[serde(default = "default_max_leaf")]
    pub max_leaf: f64,
    #[serde(default = "default_update_interval")]
    pub update_interval: usize,
    #[serde(default)]
    pub fixed_gamma: Option<f64>,
    #[serde(default = "default_gamma_step_limit")]
    pub gamma_step_limit: f64,
    /// Early stopping patience; absent means fixed-budget training.
    #[serde(default)]
    pub early_stopping_patience: Option<usize>,
    #[serde(default = "default_es_fraction")]
    pub early_stopping_fraction: f64,
    #[serde(default = "default_ts_buckets")]
    pub ts_buckets: usize,
    #[serde(default = "default_ts_prior")]
    pub ts_prior: f64,
}

/// How the cross-validation winner is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SelectBy {
    #[default]
    Deviance,
    Mad,
}

/// `[tuning]` section: split, folds, and hyperparameter grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningSection {
    pub seed: u64,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_alpha_grid")]
    pub learning_rate_grid: Vec<f64>,
    #[serde(default = "default_lambda_grid")]
    pub l2_grid: Vec<f64>,
    #[serde(default)]
    pub select_by: SelectBy,
}

/// `[[composition]]` block declaration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionSection {
    pub name: String,
    pub columns: Vec<String>,
    #[serde(default = "default_closure")]
    pub closure: f64,
    pub treatment: String,
    #[serde(default)]
    pub alr_reference: Option<String>,
    #[serde(default)]
    pub ppca_components: Option<usize>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

/// Full schema/training configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub tuning: TuningSection,
    #[serde(default, rename = "composition")]
    pub compositions: Vec<CompositionSection>,
}

impl SchemaConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: SchemaConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.family()?;
        if self.tuning.learning_rate_grid.is_empty() || self.tuning.l2_grid.is_empty() {
            return Err(ConfigError::Invalid("hyperparameter grids must be non-empty".into()));
        }
        if self.tuning.folds < 2 {
            return Err(ConfigError::Invalid("folds must be at least 2".into()));
        }
        if !(self.tuning.test_fraction > 0.0 && self.tuning.test_fraction < 1.0) {
            return Err(ConfigError::Invalid("test_fraction must lie in (0, 1)".into()));
        }
        for c in &self.compositions {
            self.block_for(c)?;
        }
        Ok(())
    }

    pub fn family(&self) -> Result<Family, ConfigError> {
        Family::parse(&self.model.family).ok_or_else(|| {
            ConfigError::Invalid(format!(
                "unknown family {:?} (expected tweedie, zitw-dual, or zitw-linked)",
                self.model.family
            ))
        })
    }

    pub fn roles(&self) -> DataRoles {
        DataRoles {
            target: self.data.target.clone(),
            exposure: self.data.exposure.clone(),
            categorical: self.data.categorical.clone(),
            ignore: self.data.ignore.clone(),
        }
    }

    fn block_for(&self, section: &CompositionSection) -> Result<CompositionBlock, ConfigError> {
        let j = section.columns.len();
        if j < 2 {
            return Err(ConfigError::Invalid(format!(
                "composition {:?} needs at least 2 columns",
                section.name
            )));
        }
        let treatment = match section.treatment.as_str() {
            "none" => Treatment::None,
            "alr" => {
                let reference = match &section.alr_reference {
                    None => j - 1,
                    Some(name) => section.columns.iter().position(|c| c == name).ok_or_else(|| {
                        ConfigError::Invalid(format!(
                            "alr_reference {:?} is not a member of composition {:?}",
                            name, section.name
                        ))
                    })?,
                };
                Treatment::Alr { reference }
            }
            "clr" => Treatment::Clr,
            "ilr" => Treatment::Ilr,
            "clr-ppca" => Treatment::ClrPpca {
                components: section.ppca_components.unwrap_or(j.saturating_sub(2).max(1)),
            },
            other => {
                return Err(ConfigError::Invalid(format!(
                    "unknown treatment {other:?} (expected none, alr, clr, ilr, clr-ppca)"
                )))
            }
        };
        Ok(CompositionBlock {
            name: section.name.clone(),
            columns: section.columns.clone(),
            closure: section.closure,
            treatment,
            epsilon: section.epsilon,
        })
    }

    pub fn composition_blocks(&self) -> Result<Vec<CompositionBlock>, ConfigError> {
        self.compositions.iter().map(|c| self.block_for(c)).collect()
    }

    /// Trainer settings for one grid cell.
    pub fn train_settings(&self, learning_rate: f64, l2_lambda: f64, seed: u64)
        -> Result<TrainSettings, ConfigError> {
        Ok(TrainSettings {
            family: self.family()?,
            p: self.model.p,
            boost: BoostConfig {
                n_trees: self.model.n_trees,
                learning_rate,
                l2_lambda,
                max_depth: self.model.max_depth,
                min_samples_leaf: self.model.min_samples_leaf,
                hessian_floor: self.model.hessian_floor,
                max_leaf: self.model.max_leaf,
            },
            update_interval: self.model.update_interval,
            fixed_gamma: self.model.fixed_gamma,
            gamma_step_limit: self.model.gamma_step_limit,
            early_stopping: self.model.early_stopping_patience.map(|patience| EarlyStopping {
                patience,
                validation_fraction: self.model.early_stopping_fraction,
            }),
            ts_buckets: self.model.ts_buckets,
            ts_prior: self.model.ts_prior,
            seed,
        })
    }
}

// ---------------------------------------------------------------------------
// Simulation spec
// ---------------------------------------------------------------------------

/// Feature generator declaration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FeatureSpecSim {
    Uniform { name: String, low: f64, high: f64 },
    Normal { name: String, mean: f64, sd: f64 },
    /// J-part composition sampled from a symmetric Dirichlet; emits columns
    /// `{prefix}_1 ..= {prefix}_{parts}` summing to 1.
    Dirichlet { prefix: String, parts: usize, alpha: f64 },
    Categorical {
        name: String,
        labels: Vec<String>,
        weights: Vec<f64>,
    },
}

/// Exposure generator declaration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ExposureSpec {
    Fixed { value: f64 },
    Uniform { low: f64, high: f64 },
}

/// Inflation declaration: a gamma shape linking q to mu, a free q formula,
/// or none (plain Tweedie draws).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InflationSpec {
    Gamma { value: f64 },
    QExpr { expr: String },
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    #[serde(default = "default_p")]
    pub p: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuSection {
    /// Per-unit-exposure mean surface over the declared features.
    pub expr: String,
}

fn default_exposure_name() -> String {
    "exposure".into()
}
fn default_target_name() -> String {
    "claim".into()
}

/// Full simulation specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub n: usize,
    pub seed: u64,
    #[serde(default = "default_exposure_name")]
    pub exposure_name: String,
    #[serde(default = "default_target_name")]
    pub target_name: String,
    pub params: SimParams,
    pub exposure: ExposureSpec,
    pub inflation: InflationSpec,
    pub mu: MuSection,
    #[serde(rename = "feature")]
    pub features: Vec<FeatureSpecSim>,
}

impl SimSpec {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let spec: SimSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.params.p > 1.0 && self.params.p < 2.0) {
            return Err(ConfigError::Invalid("p must lie in (1, 2)".into()));
        }
        if !(self.params.phi > 0.0) {
            return Err(ConfigError::Invalid("phi must be positive".into()));
        }
        match &self.exposure {
            ExposureSpec::Fixed { value } if *value <= 0.0 => {
                return Err(ConfigError::Invalid("exposure must be positive".into()))
            }
            ExposureSpec::Uniform { low, high } if !(0.0 < *low && low < high) => {
                return Err(ConfigError::Invalid("exposure range must be 0 < low < high".into()))
            }
            _ => {}
        }
        if let InflationSpec::Gamma { value } = self.inflation {
            if value <= 0.0 {
                return Err(ConfigError::Invalid("inflation gamma must be positive".into()));
            }
        }
        let mut names = Vec::new();
        for f in &self.features {
            match f {
                FeatureSpecSim::Uniform { name, low, high } => {
                    if low >= high {
                        return Err(ConfigError::Invalid(format!(
                            "uniform feature {name:?} needs low < high"
                        )));
                    }
                    names.push(name.clone());
                }
                FeatureSpecSim::Normal { name, sd, .. } => {
                    if *sd <= 0.0 {
                        return Err(ConfigError::Invalid(format!(
                            "normal feature {name:?} needs positive sd"
                        )));
                    }
                    names.push(name.clone());
                }
                FeatureSpecSim::Dirichlet { prefix, parts, alpha } => {
                    if *parts < 2 || *alpha <= 0.0 {
                        return Err(ConfigError::Invalid(format!(
                            "dirichlet block {prefix:?} needs parts >= 2 and alpha > 0"
                        )));
                    }
                    for i in 1..=*parts {
                        names.push(format!("{prefix}_{i}"));
                    }
                }
                FeatureSpecSim::Categorical { name, labels, weights } => {
                    if labels.is_empty() || labels.len() != weights.len() {
                        return Err(ConfigError::Invalid(format!(
                            "categorical feature {name:?} needs matching labels and weights"
                        )));
                    }
                    if weights.iter().any(|w| *w < 0.0) || weights.iter().sum::<f64>() <= 0.0 {
                        return Err(ConfigError::Invalid(format!(
                            "categorical feature {name:?} needs non-negative weights with a positive sum"
                        )));
                    }
                    names.push(name.clone());
                }
            }
        }
        let mut unique = names.clone();
        unique.sort();
        unique.dedup();
        if unique.len() != names.len() {
            return Err(ConfigError::Invalid("duplicate feature names".into()));
        }
        crate::expr::Expr::parse(&self.mu.expr)
            .map_err(|e| ConfigError::Invalid(format!("mu expr: {e}")))?;
        if let InflationSpec::QExpr { expr } = &self.inflation {
            crate::expr::Expr::parse(expr)
                .map_err(|e| ConfigError::Invalid(format!("q expr: {e}")))?;
        }
        Ok(())
    }

    /// Feature column names in emission order.
    pub fn feature_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for f in &self.features {
            match f {
                FeatureSpecSim::Uniform { name, .. }
                | FeatureSpecSim::Normal { name, .. }
                | FeatureSpecSim::Categorical { name, .. } => names.push(name.clone()),
                FeatureSpecSim::Dirichlet { prefix, parts, .. } => {
                    for i in 1..=*parts {
                        names.push(format!("{prefix}_{i}"));
                    }
                }
            }
        }
        names
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCHEMA: &str = r#"
        [data]
        target = "claim"
        exposure = "expo"
        categorical = ["region"]

        [model]
        family = "zitw-linked"
        n_trees = 40
        max_depth = 3

        [tuning]
        seed = 42
        learning_rate_grid = [0.05]
        l2_grid = [10.0]

        [[composition]]
        name = "wk"
        columns = ["mon", "tue", "wed"]
        treatment = "clr"
    "#;

    #[test]
    fn parses_schema_with_defaults() {
        let cfg = SchemaConfig::parse(SCHEMA).unwrap();
        assert_eq!(cfg.family().unwrap(), Family::ZitwLinked);
        assert_eq!(cfg.model.p, 1.5);
        assert_eq!(cfg.tuning.folds, 3);
        assert_eq!(cfg.tuning.test_fraction, 0.2);
        let blocks = cfg.composition_blocks().unwrap();
        assert_eq!(blocks.len(), 1);
        let settings = cfg.train_settings(0.05, 10.0, 7).unwrap();
        assert_eq!(settings.boost.n_trees, 40);
        assert_eq!(settings.boost.learning_rate, 0.05);
    }

    #[test]
    fn rejects_unknown_family_and_treatment() {
        let bad = SCHEMA.replace("zitw-linked", "boostzilla");
        assert!(SchemaConfig::parse(&bad).is_err());
        let bad = SCHEMA.replace("\"clr\"", "\"spiral\"");
        assert!(SchemaConfig::parse(&bad).is_err());
    }

    const SIM: &str = r#"
        n = 100
        seed = 9

        [params]
        phi = 1.0

        [exposure]
        kind = "fixed"
        value = 1.0

        [inflation]
        kind = "gamma"
        value = 1.5

        [mu]
        expr = "exp(0.3 + 0.9*x1 - 0.7*x2)"

        [[feature]]
        kind = "uniform"
        name = "x1"
        low = -1.0
        high = 1.0

        [[feature]]
        kind = "normal"
        name = "x2"
        mean = 0.0
        sd = 1.0

        [[feature]]
        kind = "dirichlet"
        prefix = "pct"
        parts = 3
        alpha = 2.0
    "#;

    #[test]
    fn parses_sim_spec() {
        let spec = SimSpec::parse(SIM).unwrap();
        assert_eq!(spec.n, 100);
        assert_eq!(
            spec.feature_names(),
            vec!["x1", "x2", "pct_1", "pct_2", "pct_3"]
        );
        assert_eq!(spec.exposure_name, "exposure");
        assert_eq!(spec.target_name, "claim");
    }

    #[test]
    fn sim_validation_catches_bad_mu_expr() {
        let bad = SIM.replace("exp(0.3 + 0.9*x1 - 0.7*x2)", "exp(");
        assert!(SimSpec::parse(&bad).is_err());
    }
}
