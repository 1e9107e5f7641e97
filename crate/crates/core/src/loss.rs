//! Loss values, gradients, and Hessians for the boosting objectives.
//!
//! Three objective families share the same score convention: the mean is
//! mu = E * exp(w_mean) with exposure E as an offset, and for the dual-score
//! family the inflation probability is q = sigmoid(w_prob).
//!
//! * `tweedie_*`: plain Tweedie negative log-likelihood.
//! * `s1_*`: zero-inflated Tweedie with a free inflation score (dual
//!   ensembles, one per parameter).
//! * `s2_*`: zero-inflated Tweedie with q = 1/(1 + mu^gamma), a single score.
//!
//! Losses are evaluated in "gradient-equivalent" mode by default: the
//! score-independent ln a(y, phi, p) series term is dropped because no
//! gradient or Hessian touches it. Full mode adds it back for likelihood
//! comparisons.
//!
//! Everything here is branch-exact: the y = 0 and y > 0 cases follow the
//! closed forms, rearranged where needed so that extreme mu, q, or gamma
//! stay inside f64 range (powers go through exp(k ln mu), mixtures through
//! log-sum-exp, ratios through sigmoids).

use thiserror::Error;

use crate::tweedie::{self, TweedieError, TweedieParams, ZitwParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("non-finite score state (w_mean={w_mean}, w_prob={w_prob:?}, exposure={exposure})")]
    InvalidState {
        w_mean: f64,
        w_prob: Option<f64>,
        exposure: f64,
    },
    #[error("observation must be non-negative and finite, got {0}")]
    InvalidObservation(f64),
    #[error("w_prob required for the dual-score objective but absent")]
    MissingProbScore,
    #[error("w_prob present but the objective does not use one")]
    UnexpectedProbScore,
    #[error("non-finite {quantity} on the {branch} branch")]
    NonFinite {
        quantity: &'static str,
        branch: &'static str,
    },
    #[error(transparent)]
    Tweedie(#[from] TweedieError),
}

/// Whether to include the score-independent ln a(y, phi, p) term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    /// Drop ln a: identical gradients, no series evaluation.
    GradientEquivalent,
    /// Full negative log-likelihood.
    Full,
}

/// Boosting scores for a single observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreState {
    w_mean: f64,
    w_prob: Option<f64>,
    exposure: f64,
}

impl ScoreState {
    pub fn new(w_mean: f64, w_prob: Option<f64>, exposure: f64) -> Result<Self, LossError> {
        let ok = w_mean.is_finite()
            && exposure.is_finite()
            && exposure > 0.0
            && w_prob.is_none_or(f64::is_finite)
            && (exposure * w_mean.exp()).is_finite();
        if !ok {
            return Err(LossError::InvalidState {
                w_mean,
                w_prob,
                exposure,
            });
        }
        Ok(Self {
            w_mean,
            w_prob,
            exposure,
        })
    }

    /// Mean-only state (Tweedie and linked objectives).
    pub fn mean_only(w_mean: f64, exposure: f64) -> Result<Self, LossError> {
        Self::new(w_mean, None, exposure)
    }

    /// Dual state (mean score plus inflation logit).
    pub fn dual(w_mean: f64, w_prob: f64, exposure: f64) -> Result<Self, LossError> {
        Self::new(w_mean, Some(w_prob), exposure)
    }

    pub fn w_mean(&self) -> f64 {
        self.w_mean
    }

    pub fn w_prob(&self) -> Option<f64> {
        self.w_prob
    }

    pub fn exposure(&self) -> f64 {
        self.exposure
    }

    /// mu = E * exp(w_mean)
    pub fn mu(&self) -> f64 {
        self.exposure * self.w_mean.exp()
    }

    /// q = sigmoid(w_prob), if a probability score is present.
    pub fn q(&self) -> Option<f64> {
        self.w_prob.map(sigmoid)
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^x) without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 36.0 {
        x
    } else if x < -36.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// logit(q) = ln(q / (1 - q)).
#[inline]
pub fn logit(q: f64) -> f64 {
    (q / (1.0 - q)).ln()
}

/// Per-observation powers of mu shared by every objective.
#[derive(Debug, Clone, Copy)]
struct MuTerms {
    mu: f64,
    ln_mu: f64,
    /// mu^(1-p)
    mu_1p: f64,
    /// mu^(2-p) / phi (the paper's beta)
    beta: f64,
    /// mu^(2-p) / (phi (2-p)) (the paper's delta)
    delta: f64,
}

impl MuTerms {
    fn new(mu: f64, phi: f64, p: f64) -> Self {
        let ln_mu = mu.ln();
        let mu_1p = ((1.0 - p) * ln_mu).exp();
        let mu_2p = ((2.0 - p) * ln_mu).exp();
        Self {
            mu,
            ln_mu,
            mu_1p,
            beta: mu_2p / phi,
            delta: mu_2p / (phi * (2.0 - p)),
        }
    }
}

/// Auxiliary quantities of the dual-score objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct S1Intermediates {
    /// (1-q) exp(-mu^(2-p)/(phi(2-p))), in (0, 1]
    pub alpha_aux: f64,
    /// mu^(2-p)/phi
    pub beta_aux: f64,
    /// mu^(2-p)/(phi(2-p))
    pub delta_aux: f64,
}

impl S1Intermediates {
    pub fn new(mu: f64, q: f64, phi: f64, p: f64) -> Self {
        let t = MuTerms::new(mu, phi, p);
        Self {
            alpha_aux: (1.0 - q) * (-t.delta).exp(),
            beta_aux: t.beta,
            delta_aux: t.delta,
        }
    }
}

/// Auxiliary quantities of the linked objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct S2Intermediates {
    /// mu^gamma exp(-mu^(2-p)/(phi(2-p)))
    pub zeta: f64,
    /// gamma - mu^(2-p)/phi
    pub eta: f64,
    /// gamma mu^gamma / (1 + mu^gamma), in [0, gamma)
    pub kappa: f64,
    pub gamma_infl: f64,
}

impl S2Intermediates {
    pub fn new(mu: f64, phi: f64, p: f64, gamma_infl: f64) -> Self {
        let t = MuTerms::new(mu, phi, p);
        let sig = sigmoid(gamma_infl * t.ln_mu);
        Self {
            zeta: (gamma_infl * t.ln_mu - t.delta).exp(),
            eta: gamma_infl - t.beta,
            kappa: gamma_infl * sig,
            gamma_infl,
        }
    }
}

fn check_obs(y: f64) -> Result<(), LossError> {
    if !y.is_finite() || y < 0.0 {
        return Err(LossError::InvalidObservation(y));
    }
    Ok(())
}

fn finite(value: f64, quantity: &'static str, y: f64) -> Result<f64, LossError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(LossError::NonFinite {
            quantity,
            branch: if y == 0.0 { "y=0" } else { "y>0" },
        })
    }
}

// ---------------------------------------------------------------------------
// Plain Tweedie
// ---------------------------------------------------------------------------

/// Tweedie negative log-likelihood; gradient-equivalent mode drops ln a.
pub fn tweedie_loss(
    y: f64,
    state: &ScoreState,
    phi: f64,
    p: f64,
    mode: LossMode,
) -> Result<f64, LossError> {
    check_obs(y)?;
    let mu = state.mu();
    let ge = -tweedie::canonical_exponent(y, mu, phi, p);
    match mode {
        LossMode::GradientEquivalent => finite(ge, "loss", y),
        LossMode::Full => {
            if y == 0.0 {
                return finite(ge, "loss", y);
            }
            let ln_a = tweedie::ln_normalizing_series(y, phi, p)?;
            finite(ge - ln_a, "loss", y)
        }
    }
}

/// Tweedie gradient and Hessian with respect to the mean score.
///
/// g = (-y mu^(1-p) + mu^(2-p))/phi,
/// h = (-(1-p) y mu^(1-p) + (2-p) mu^(2-p))/phi; h > 0 on the whole domain.
pub fn tweedie_grad_hess(y: f64, state: &ScoreState, phi: f64, p: f64) -> (f64, f64) {
    let t = MuTerms::new(state.mu(), phi, p);
    let g = -y * t.mu_1p / phi + t.beta;
    let h = -(1.0 - p) * y * t.mu_1p / phi + (2.0 - p) * t.beta;
    (g, h)
}

// ---------------------------------------------------------------------------
// Dual-score objective (separate mean and inflation ensembles)
// ---------------------------------------------------------------------------

/// Two-branch negative log-likelihood with mu = E e^{w_mean},
/// q = sigmoid(w_prob).
pub fn s1_loss(
    y: f64,
    state: &ScoreState,
    phi: f64,
    p: f64,
    mode: LossMode,
) -> Result<f64, LossError> {
    check_obs(y)?;
    let w_prob = state.w_prob.ok_or(LossError::MissingProbScore)?;
    let t = MuTerms::new(state.mu(), phi, p);
    if y == 0.0 {
        // -ln(q + (1-q) e^{-delta}), via log-sum-exp of the mixture parts
        let ln_q = -softplus(-w_prob);
        let ln_1mq = -softplus(w_prob);
        let value = -tweedie::log_sum_exp(ln_q, ln_1mq - t.delta);
        return finite(value, "loss", y);
    }
    let ln_1mq = -softplus(w_prob);
    let ge = -ln_1mq - tweedie::canonical_exponent(y, t.mu, phi, p);
    match mode {
        LossMode::GradientEquivalent => finite(ge, "loss", y),
        LossMode::Full => {
            let ln_a = tweedie::ln_normalizing_series(y, phi, p)?;
            finite(ge - ln_a, "loss", y)
        }
    }
}

/// Gradient and Hessian of the dual-score loss with respect to the mean
/// score. The y = 0 branch uses the ratio r = alpha/(q + alpha) evaluated
/// as a sigmoid of log terms so that vanishing alpha or q stays exact.
pub fn s1_grad_hess_mean(
    y: f64,
    state: &ScoreState,
    phi: f64,
    p: f64,
) -> Result<(f64, f64), LossError> {
    check_obs(y)?;
    let w_prob = state.w_prob.ok_or(LossError::MissingProbScore)?;
    let t = MuTerms::new(state.mu(), phi, p);
    if y == 0.0 {
        // ln alpha = ln(1-q) - delta; r = alpha/(q+alpha) = sigmoid(ln alpha - ln q)
        let ln_q = -softplus(-w_prob);
        let ln_alpha = -softplus(w_prob) - t.delta;
        let r = sigmoid(ln_alpha - ln_q);
        let g = r * t.beta;
        // h = beta r (2 - p - beta + r beta)
        let h = t.beta * r * (2.0 - p - t.beta + r * t.beta);
        return Ok((finite(g, "gradient", y)?, finite(h, "hessian", y)?));
    }
    let g = -y * t.mu_1p / phi + t.beta;
    let h = -(1.0 - p) * y * t.mu_1p / phi + (2.0 - p) * t.beta;
    Ok((finite(g, "gradient", y)?, finite(h, "hessian", y)?))
}

/// Gradient and Hessian of the dual-score loss with respect to the
/// inflation score. The mean score inside `state` must already hold the
/// value used for the current iteration's delta.
pub fn s1_grad_hess_prob(
    y: f64,
    state: &ScoreState,
    phi: f64,
    p: f64,
) -> Result<(f64, f64), LossError> {
    check_obs(y)?;
    let w = state.w_prob.ok_or(LossError::MissingProbScore)?;
    if y > 0.0 {
        let q = sigmoid(w);
        let g = q;
        let h = q * sigmoid(-w);
        return Ok((finite(g, "gradient", y)?, finite(h, "hessian", y)?));
    }
    let t = MuTerms::new(state.mu(), phi, p);
    // g = sigmoid(-(delta + w)) - sigmoid(-w)
    let g = sigmoid(-(t.delta + w)) - sigmoid(-w);
    // h = sig'(w) - sig'(delta + w), each sig'(x) = sigmoid(x) sigmoid(-x)
    let h = sigmoid(w) * sigmoid(-w) - sigmoid(t.delta + w) * sigmoid(-(t.delta + w));
    Ok((finite(g, "gradient", y)?, finite(h, "hessian", y)?))
}

// ---------------------------------------------------------------------------
// Linked objective (q tied to mu through gamma)
// ---------------------------------------------------------------------------

/// Two-branch loss with the implied inflation q = 1/(1 + mu^gamma).
pub fn s2_loss(
    y: f64,
    state: &ScoreState,
    phi: f64,
    p: f64,
    gamma_infl: f64,
    mode: LossMode,
) -> Result<f64, LossError> {
    check_obs(y)?;
    if state.w_prob.is_some() {
        return Err(LossError::UnexpectedProbScore);
    }
    let t = MuTerms::new(state.mu(), phi, p);
    let g_ln_mu = gamma_infl * t.ln_mu;
    if y == 0.0 {
        // -ln(1 + mu^gamma e^{-delta}) + ln(1 + mu^gamma)
        let value = -softplus(g_ln_mu - t.delta) + softplus(g_ln_mu);
        return finite(value, "loss", y);
    }
    let ge = -g_ln_mu + softplus(g_ln_mu) - tweedie::canonical_exponent(y, t.mu, phi, p);
    match mode {
        LossMode::GradientEquivalent => finite(ge, "loss", y),
        LossMode::Full => {
            let ln_a = tweedie::ln_normalizing_series(y, phi, p)?;
            finite(ge - ln_a, "loss", y)
        }
    }
}

/// Gradient and Hessian of the linked loss with respect to the single
/// score. Ratios zeta/(1+zeta) and mu^gamma/(1+mu^gamma) are evaluated as
/// sigmoids of logs, and kappa^2 mu^-gamma contracts to
/// gamma^2 sig (1 - sig), keeping every branch finite for extreme mu.
pub fn s2_grad_hess(
    y: f64,
    state: &ScoreState,
    phi: f64,
    p: f64,
    gamma_infl: f64,
) -> Result<(f64, f64), LossError> {
    check_obs(y)?;
    let t = MuTerms::new(state.mu(), phi, p);
    let g_ln_mu = gamma_infl * t.ln_mu;
    let sig = sigmoid(g_ln_mu); // mu^gamma / (1 + mu^gamma)
    let kappa = gamma_infl * sig;
    // kappa^2 mu^-gamma = gamma^2 sig (1 - sig)
    let kappa_term = gamma_infl * gamma_infl * sig * sigmoid(-g_ln_mu);
    if y == 0.0 {
        let eta = gamma_infl - t.beta;
        let u = sigmoid(g_ln_mu - t.delta); // zeta / (1 + zeta)
        let g = -u * eta + kappa;
        let h = ((2.0 - p) * t.beta - eta * eta) * u + u * u * eta * eta + kappa_term;
        return Ok((finite(g, "gradient", y)?, finite(h, "hessian", y)?));
    }
    let g = -gamma_infl + kappa - y * t.mu_1p / phi + t.beta;
    let h = kappa_term - (1.0 - p) * y * t.mu_1p / phi + (2.0 - p) * t.beta;
    Ok((finite(g, "gradient", y)?, finite(h, "hessian", y)?))
}

/// Implied inflation probability of the linked objective.
#[inline]
pub fn linked_q(mu: f64, gamma_infl: f64) -> f64 {
    // 1/(1 + mu^gamma) = sigmoid(-gamma ln mu)
    sigmoid(-gamma_infl * mu.ln())
}

/// Full negative log-likelihood under explicit distribution parameters;
/// convenience for likelihood-based metrics.
pub fn full_nll(y: f64, mu: f64, phi: f64, p: f64, q: f64) -> Result<f64, LossError> {
    let base = TweedieParams::new(mu, phi, p)?;
    let z = ZitwParams::new(base, q)?;
    Ok(-tweedie::zitw_log_density(y, &z)?)
}
