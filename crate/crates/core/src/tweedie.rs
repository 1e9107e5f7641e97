//! Tweedie and zero-inflated Tweedie distributions.
//!
//! For power parameter 1 < p < 2 the Tweedie distribution coincides with a
//! compound Poisson-gamma: a Poisson number of claims, each with an
//! independent gamma severity. That equivalence gives the exact point mass
//! at zero, a simulator, and the series expansion of the normalizing
//! function needed for full log-likelihoods.
//!
//! The density is
//!
//! ```text
//! f(y | mu, phi, p) = a(y, phi, p) * exp((1/phi) * (y*mu^(1-p)/(1-p) - mu^(2-p)/(2-p)))
//! ```
//!
//! where `a` has no closed form and is evaluated here by summing the
//! compound Poisson-gamma index series around its dominant term.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand::rngs::StdRng;
use rand::{Rng, RngExt, SeedableRng};
use rand_distr::{Distribution, Gamma, Poisson};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

/// Relative size at which outward series summation stops.
const SERIES_REL_CUTOFF: f64 = 1e-17;
/// Hard cap on the number of series terms summed for one evaluation.
pub const SERIES_MAX_TERMS: usize = 20_000;
/// Largest index cached in the log-gamma term table; larger indices fall
/// back to direct `ln_gamma` evaluation.
const TERM_TABLE_CAP: usize = 1 << 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TweedieError {
    #[error("mu must be positive and finite, got {0}")]
    InvalidMu(f64),
    #[error("phi must be positive and finite, got {0}")]
    InvalidPhi(f64),
    #[error("power parameter must lie in the open interval (1, 2), got {0}")]
    InvalidPower(f64),
    #[error("inflation probability must lie in [0, 1), got {0}")]
    InvalidInflation(f64),
    #[error("y must be non-negative and finite, got {0}")]
    InvalidObservation(f64),
    #[error(
        "normalizing series did not converge within {max_terms} terms \
         (attempted index window [{low}, {high}])"
    )]
    SeriesTruncated {
        low: usize,
        high: usize,
        max_terms: usize,
    },
}

/// Parameters of a Tweedie distribution with 1 < p < 2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TweedieParams {
    mu: f64,
    phi: f64,
    p: f64,
}

impl TweedieParams {
    pub fn new(mu: f64, phi: f64, p: f64) -> Result<Self, TweedieError> {
        if !(mu.is_finite() && mu > 0.0) {
            return Err(TweedieError::InvalidMu(mu));
        }
        if !(phi.is_finite() && phi > 0.0) {
            return Err(TweedieError::InvalidPhi(phi));
        }
        if !(p.is_finite() && p > 1.0 && p < 2.0) {
            return Err(TweedieError::InvalidPower(p));
        }
        Ok(Self { mu, phi, p })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// Variance phi * mu^p.
    pub fn variance(&self) -> f64 {
        self.phi * self.mu.powf(self.p)
    }
}

/// Zero-inflated Tweedie parameters: extra mass `q` at exactly zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZitwParams {
    base: TweedieParams,
    q: f64,
}

impl ZitwParams {
    pub fn new(base: TweedieParams, q: f64) -> Result<Self, TweedieError> {
        if !(q.is_finite() && (0.0..1.0).contains(&q)) {
            return Err(TweedieError::InvalidInflation(q));
        }
        Ok(Self { base, q })
    }

    pub fn base(&self) -> &TweedieParams {
        &self.base
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// Expected value (1 - q) * mu.
    pub fn mean(&self) -> f64 {
        (1.0 - self.q) * self.base.mu
    }
}

/// Compound Poisson-gamma parameters equivalent to a Tweedie distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpgParams {
    pub lambda: f64,
    pub gamma_shape: f64,
    pub gamma_scale: f64,
}

impl CpgParams {
    /// Mean lambda * shape * scale of the compound sum.
    pub fn mean(&self) -> f64 {
        self.lambda * self.gamma_shape * self.gamma_scale
    }

    /// Variance lambda * shape * (shape + 1) * scale^2.
    pub fn variance(&self) -> f64 {
        self.lambda * self.gamma_shape * (self.gamma_shape + 1.0) * self.gamma_scale.powi(2)
    }
}

/// Map Tweedie parameters to the equivalent compound Poisson-gamma triplet.
///
/// lambda = mu^(2-p) / (phi (2-p)), shape = (2-p)/(p-1),
/// scale = phi (p-1) mu^(p-1).
pub fn cpg_from_tweedie(params: &TweedieParams) -> CpgParams {
    let (mu, phi, p) = (params.mu, params.phi, params.p);
    CpgParams {
        lambda: mu.powf(2.0 - p) / (phi * (2.0 - p)),
        gamma_shape: (2.0 - p) / (p - 1.0),
        gamma_scale: phi * (p - 1.0) * mu.powf(p - 1.0),
    }
}

// ---------------------------------------------------------------------------
// Series evaluation of the normalizing function
// ---------------------------------------------------------------------------

/// Cached ln(n!) + ln(Gamma(n * alpha)) tables, one per alpha.
///
/// The index series is summed thousands of times per training run with the
/// same alpha, so the log-gamma factors are tabled once and shared.
fn term_table(alpha: f64, needed: usize) -> Arc<Vec<f64>> {
    static TABLES: OnceLock<Mutex<HashMap<u64, Arc<Vec<f64>>>>> = OnceLock::new();
    let tables = TABLES.get_or_init(|| Mutex::new(HashMap::new()));
    let key = alpha.to_bits();
    let mut guard = tables.lock().expect("term table lock poisoned");
    let current = guard.get(&key).cloned();
    let have = current.as_ref().map_or(0, |t| t.len());
    if have > needed {
        return current.unwrap();
    }
    let target = (needed + 1).next_power_of_two().clamp(256, TERM_TABLE_CAP);
    let mut table = Vec::with_capacity(target);
    table.push(f64::INFINITY); // index 0 is never a valid series term
    for n in 1..target {
        table.push(ln_gamma(n as f64 + 1.0) + ln_gamma(n as f64 * alpha));
    }
    let table = Arc::new(table);
    guard.insert(key, Arc::clone(&table));
    table
}

/// ln(n!) + ln(Gamma(n * alpha)), table-backed with a direct fallback.
#[inline]
fn ln_term_denominator(table: &[f64], alpha: f64, n: usize) -> f64 {
    if n < table.len() {
        table[n]
    } else {
        ln_gamma(n as f64 + 1.0) + ln_gamma(n as f64 * alpha)
    }
}

/// Series summation around the dominant index against a prefetched table.
fn ln_a_with_table(y: f64, phi: f64, p: f64, alpha: f64, table: &[f64]) -> Result<f64, TweedieError> {
    debug_assert!(y > 0.0);
    // ln z; z = y^alpha / (phi^(1+alpha) (p-1)^alpha (2-p))
    let ln_z = alpha * y.ln()
        - (1.0 + alpha) * phi.ln()
        - alpha * (p - 1.0).ln()
        - (2.0 - p).ln();

    // Dominant index, then a short hill climb to the exact peak.
    let j_max = y.powf(2.0 - p) / (phi * (2.0 - p));
    let mut peak = j_max.round().max(1.0) as usize;
    let ln_term = |n: usize| n as f64 * ln_z - ln_term_denominator(table, alpha, n);
    let mut peak_val = ln_term(peak);
    loop {
        let up = ln_term(peak + 1);
        if up > peak_val {
            peak += 1;
            peak_val = up;
            continue;
        }
        if peak > 1 {
            let down = ln_term(peak - 1);
            if down > peak_val {
                peak -= 1;
                peak_val = down;
                continue;
            }
        }
        break;
    }

    let ln_cutoff = peak_val + SERIES_REL_CUTOFF.ln();
    let mut sum = 1.0; // the peak term, scaled to exp(0)
    let mut terms = 1usize;
    let mut low = peak;
    let mut high = peak;

    // Upward sweep.
    let mut n = peak + 1;
    loop {
        let lt = ln_term(n);
        if lt < ln_cutoff {
            break;
        }
        sum += (lt - peak_val).exp();
        terms += 1;
        high = n;
        if terms >= SERIES_MAX_TERMS {
            return Err(TweedieError::SeriesTruncated {
                low,
                high,
                max_terms: SERIES_MAX_TERMS,
            });
        }
        n += 1;
    }
    // Downward sweep.
    let mut n = peak.saturating_sub(1);
    while n >= 1 {
        let lt = ln_term(n);
        if lt < ln_cutoff {
            break;
        }
        sum += (lt - peak_val).exp();
        terms += 1;
        low = n;
        if terms >= SERIES_MAX_TERMS {
            return Err(TweedieError::SeriesTruncated {
                low,
                high,
                max_terms: SERIES_MAX_TERMS,
            });
        }
        n -= 1;
    }

    Ok(peak_val + sum.ln() - y.ln())
}

/// ln a(y, phi, p) for y > 0 via the index series.
///
/// The terms t_n = z^n / (n! Gamma(n alpha)) are unimodal in n; summation
/// starts at the dominant index and extends outward until terms drop below
/// `SERIES_REL_CUTOFF` relative to the peak.
pub fn ln_normalizing_series(y: f64, phi: f64, p: f64) -> Result<f64, TweedieError> {
    let alpha = (2.0 - p) / (p - 1.0);
    let j_max = y.powf(2.0 - p) / (phi * (2.0 - p));
    let table = term_table(alpha, j_max.round().max(1.0) as usize + 64);
    ln_a_with_table(y, phi, p, alpha, &table)
}

/// Reusable series evaluator that keeps the log-gamma table checked out.
///
/// Dispersion estimation sums the series over every positive row dozens of
/// times per boosting iteration; holding the table here skips the global
/// cache lookup on each call.
pub struct SeriesEvaluator {
    p: f64,
    alpha: f64,
    table: Arc<Vec<f64>>,
}

impl SeriesEvaluator {
    pub fn new(p: f64) -> Self {
        let alpha = (2.0 - p) / (p - 1.0);
        Self {
            p,
            alpha,
            table: term_table(alpha, 512),
        }
    }

    pub fn ln_a(&mut self, y: f64, phi: f64) -> Result<f64, TweedieError> {
        let j_max = y.powf(2.0 - self.p) / (phi * (2.0 - self.p));
        let needed = j_max.round().max(1.0) as usize + 64;
        if needed > self.table.len() && needed <= TERM_TABLE_CAP {
            self.table = term_table(self.alpha, needed);
        }
        ln_a_with_table(y, phi, self.p, self.alpha, &self.table)
    }
}

/// Exponential-family exponent (1/phi)(y mu^(1-p)/(1-p) - mu^(2-p)/(2-p)).
#[inline]
pub fn canonical_exponent(y: f64, mu: f64, phi: f64, p: f64) -> f64 {
    (y * mu.powf(1.0 - p) / (1.0 - p) - mu.powf(2.0 - p) / (2.0 - p)) / phi
}

/// Log-density of the Tweedie distribution.
///
/// At y = 0 the density reduces to the compound-Poisson zero mass, exactly
/// exp(-lambda); for y > 0 the normalizing function is evaluated by series.
pub fn tweedie_log_density(y: f64, params: &TweedieParams) -> Result<f64, TweedieError> {
    if !y.is_finite() || y < 0.0 {
        return Err(TweedieError::InvalidObservation(y));
    }
    if y == 0.0 {
        return Ok(-cpg_from_tweedie(params).lambda);
    }
    let ln_a = ln_normalizing_series(y, params.phi, params.p)?;
    Ok(ln_a + canonical_exponent(y, params.mu, params.phi, params.p))
}

/// Log-density of the zero-inflated Tweedie distribution.
///
/// The zero branch mixes in log space: ln(q + (1-q) exp(-lambda)) is
/// computed by log-sum-exp so q near 0 or 1 cannot underflow.
pub fn zitw_log_density(y: f64, params: &ZitwParams) -> Result<f64, TweedieError> {
    if !y.is_finite() || y < 0.0 {
        return Err(TweedieError::InvalidObservation(y));
    }
    let q = params.q;
    if y == 0.0 {
        let ln_tweedie_zero = -cpg_from_tweedie(&params.base).lambda;
        if q == 0.0 {
            return Ok(ln_tweedie_zero);
        }
        return Ok(log_sum_exp(q.ln(), (1.0 - q).ln() + ln_tweedie_zero));
    }
    let base = tweedie_log_density(y, &params.base)?;
    Ok((1.0 - q).ln() + base)
}

/// ln(exp(a) + exp(b)) without overflow.
#[inline]
pub fn log_sum_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    hi + (lo - hi).exp().ln_1p()
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

/// Draw one aggregate claim amount from a zero-inflated Tweedie.
///
/// Exposure scales the Poisson claim rate; severities are unaffected. The
/// draw is a pure function of the seed.
pub fn sample_aggregate_claim(params: &ZitwParams, exposure: f64, rng_seed: u64) -> f64 {
    assert!(exposure > 0.0, "exposure must be positive");
    let mut rng = StdRng::seed_from_u64(rng_seed);
    sample_aggregate_claim_with(params, exposure, &mut rng)
}

/// Same as [`sample_aggregate_claim`] but drawing from a caller-owned RNG.
pub fn sample_aggregate_claim_with<R: Rng>(params: &ZitwParams, exposure: f64, rng: &mut R) -> f64 {
    if params.q > 0.0 && rng.random::<f64>() < params.q {
        return 0.0;
    }
    let cpg = cpg_from_tweedie(&params.base);
    let poisson =
        Poisson::new(cpg.lambda * exposure).expect("valid Poisson rate from valid parameters");
    let n = poisson.sample(rng) as u64;
    if n == 0 {
        return 0.0;
    }
    let gamma =
        Gamma::new(cpg.gamma_shape, cpg.gamma_scale).expect("valid gamma shape and scale");
    (0..n).map(|_| gamma.sample(rng)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params(mu: f64, phi: f64, p: f64) -> TweedieParams {
        TweedieParams::new(mu, phi, p).unwrap()
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(TweedieParams::new(0.0, 1.0, 1.5).is_err());
        assert!(TweedieParams::new(1.0, -1.0, 1.5).is_err());
        assert!(TweedieParams::new(1.0, 1.0, 1.0).is_err());
        assert!(TweedieParams::new(1.0, 1.0, 2.0).is_err());
        assert!(TweedieParams::new(f64::NAN, 1.0, 1.5).is_err());
        assert!(ZitwParams::new(params(1.0, 1.0, 1.5), 1.0).is_err());
        assert!(ZitwParams::new(params(1.0, 1.0, 1.5), -0.1).is_err());
    }

    #[test]
    fn zero_density_is_closed_form() {
        // mu^(2-p)/(phi(2-p)) = 1/0.5 = 2
        let lp = tweedie_log_density(0.0, &params(1.0, 1.0, 1.5)).unwrap();
        assert_relative_eq!(lp, -2.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_density_matches_cpg_lambda_exactly() {
        for &(mu, phi, p) in &[(0.5, 0.5, 1.2), (1.0, 1.0, 1.5), (5.0, 2.0, 1.8)] {
            let pr = params(mu, phi, p);
            let lambda = cpg_from_tweedie(&pr).lambda;
            assert_eq!(tweedie_log_density(0.0, &pr).unwrap(), -lambda);
        }
    }

    #[test]
    fn cpg_mapping_preserves_moments() {
        let pr = params(1.0, 1.0, 1.5);
        let cpg = cpg_from_tweedie(&pr);
        assert_relative_eq!(cpg.lambda, 2.0, epsilon = 1e-14);
        assert_relative_eq!(cpg.gamma_shape, 1.0, epsilon = 1e-14);
        assert_relative_eq!(cpg.gamma_scale, 0.5, epsilon = 1e-14);
        assert_relative_eq!(cpg.mean(), 1.0, epsilon = 1e-14);
        assert_relative_eq!(cpg.variance(), pr.variance(), epsilon = 1e-14);

        for &(mu, phi, p) in &[(0.3, 2.0, 1.2), (4.0, 0.7, 1.7), (10.0, 1.3, 1.55)] {
            let pr = params(mu, phi, p);
            let cpg = cpg_from_tweedie(&pr);
            assert_relative_eq!(cpg.mean(), mu, epsilon = 1e-12);
            assert_relative_eq!(cpg.variance(), pr.variance(), max_relative = 1e-12);
        }
    }

    #[test]
    fn zitw_mean_identity() {
        let z = ZitwParams::new(params(3.0, 1.0, 1.5), 0.25).unwrap();
        assert_relative_eq!(z.mean(), 0.75 * 3.0, epsilon = 1e-14);
    }

    #[test]
    fn zitw_reduces_to_tweedie_at_zero_inflation() {
        let base = params(1.3, 0.8, 1.4);
        let z = ZitwParams::new(base, 0.0).unwrap();
        for &y in &[0.0, 0.2, 1.0, 4.5] {
            assert_eq!(
                zitw_log_density(y, &z).unwrap(),
                tweedie_log_density(y, &base).unwrap()
            );
        }
    }

    #[test]
    fn zitw_zero_mass_approaches_one_as_q_grows() {
        let base = params(1.0, 1.0, 1.5);
        let lp = zitw_log_density(0.0, &ZitwParams::new(base, 1.0 - 1e-12).unwrap()).unwrap();
        assert!(lp.abs() < 1e-11, "ln density {lp} should be near 0");
    }

    #[test]
    fn zitw_zero_branch_direct_value() {
        // q=0.3, mu=1, phi=1, p=1.5 -> ln(0.3 + 0.7 e^-2)
        let z = ZitwParams::new(params(1.0, 1.0, 1.5), 0.3).unwrap();
        let expect = (0.3f64 + 0.7 * (-2.0f64).exp()).ln();
        assert_relative_eq!(zitw_log_density(0.0, &z).unwrap(), expect, epsilon = 1e-14);
    }

    #[test]
    fn log_density_continuous_in_mu() {
        // The series factor is mu-free, so after removing the smooth
        // exponential-family exponent nothing may jump between adjacent mu.
        let y = 2.5;
        let mut prev: Option<f64> = None;
        for k in 0..=20 {
            let mu = 1.0 + 1e-6 * k as f64;
            let lp = tweedie_log_density(y, &params(mu, 1.0, 1.5)).unwrap();
            let ln_a = lp - canonical_exponent(y, mu, 1.0, 1.5);
            if let Some(p0) = prev {
                assert!(
                    (ln_a - p0).abs() <= 1e-8,
                    "series jump {} at mu={}",
                    (ln_a - p0).abs(),
                    mu
                );
            }
            prev = Some(ln_a);
        }
    }

    #[test]
    fn sampler_is_deterministic() {
        let z = ZitwParams::new(params(1.0, 1.0, 1.5), 0.2).unwrap();
        let a = sample_aggregate_claim(&z, 1.0, 99);
        let b = sample_aggregate_claim(&z, 1.0, 99);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn sampler_certain_zero_at_q_one_minus_eps() {
        // q = 1 is rejected by ZitwParams; the simulator layer handles it.
        let z = ZitwParams::new(params(1.0, 1.0, 1.5), 1.0 - 1e-9).unwrap();
        for seed in 0..50 {
            assert_eq!(sample_aggregate_claim(&z, 1.0, seed), 0.0);
        }
    }

    #[test]
    fn log_sum_exp_handles_extremes() {
        assert_eq!(log_sum_exp(f64::NEG_INFINITY, f64::NEG_INFINITY), f64::NEG_INFINITY);
        assert_relative_eq!(log_sum_exp(0.0, f64::NEG_INFINITY), 0.0);
        assert_relative_eq!(log_sum_exp(-1000.0, -1001.0), -1000.0 + (1.0 + (-1.0f64).exp()).ln());
    }
}
