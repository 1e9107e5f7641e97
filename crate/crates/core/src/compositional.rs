//! Log-ratio transforms for compositional feature blocks.
//!
//! A composition is a group of non-negative columns that sum to a constant
//! (shares of driving time per weekday, say). The parts carry only relative
//! information, so before feeding them to models that assume unconstrained
//! inputs they can be mapped to log-ratio coordinates:
//!
//! * CLR - log of each part over the geometric mean (zero-sum outputs),
//! * ALR - log of each part over a reference part,
//! * ILR - an orthonormal contrast of the CLR coordinates (an isometry),
//! * CLR followed by probabilistic PCA for decorrelated scores.
//!
//! Exact zeros are handled first by multiplicative replacement.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Column, DataError, Dataset};
use crate::linalg::{solve, symmetric_eigen, SquareMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompositionError {
    #[error("composition needs at least 2 parts, got {0}")]
    TooFewParts(usize),
    #[error("part {index} is not positive ({value}); zero-replace first")]
    NonPositivePart { index: usize, value: f64 },
    #[error("all parts of a row are zero")]
    AllZero,
    #[error("reference index {0} out of range")]
    BadReference(usize),
    #[error("contrast matrix invalid: {0}")]
    BadContrast(&'static str),
    #[error("component count {k} exceeds the CLR rank {rank}")]
    RankExceeded { k: usize, rank: usize },
    #[error("need more rows than components: n={n}, k={k}")]
    TooFewRows { n: usize, k: usize },
    #[error("covariance solve failed (degenerate fit)")]
    DegenerateFit,
    #[error("block {block:?} row {row}: {source}")]
    BlockRow {
        block: String,
        row: usize,
        source: Box<CompositionError>,
    },
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Treatment applied to a composition block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Treatment {
    None,
    Alr {
        /// Reference part index within the block (default: last part).
        reference: usize,
    },
    Clr,
    Ilr,
    ClrPpca {
        components: usize,
    },
}

/// A named group of columns declared to sum to a constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionBlock {
    pub name: String,
    pub columns: Vec<String>,
    pub closure: f64,
    pub treatment: Treatment,
    /// Zero-replacement size as a fraction of the closure constant.
    pub epsilon: f64,
}

/// Multiplicative zero replacement.
///
/// Zeros become `epsilon * closure`; the remaining parts shrink
/// proportionally so the row still sums to the closure constant.
pub fn zero_replace(parts: &[f64], epsilon: f64, closure: f64) -> Result<Vec<f64>, CompositionError> {
    if parts.len() < 2 {
        return Err(CompositionError::TooFewParts(parts.len()));
    }
    let zero_count = parts.iter().filter(|&&v| v == 0.0).count();
    if zero_count == parts.len() {
        return Err(CompositionError::AllZero);
    }
    if zero_count == 0 {
        return Ok(parts.to_vec());
    }
    let fill = epsilon * closure;
    let positive_sum: f64 = parts.iter().filter(|&&v| v > 0.0).sum();
    let shrink = (closure - fill * zero_count as f64) / positive_sum;
    Ok(parts
        .iter()
        .map(|&v| if v == 0.0 { fill } else { v * shrink })
        .collect())
}

/// Centered log-ratio: ln(x_j / geometric_mean(x)). Outputs sum to zero.
pub fn clr(parts: &[f64]) -> Result<Vec<f64>, CompositionError> {
    if parts.len() < 2 {
        return Err(CompositionError::TooFewParts(parts.len()));
    }
    let mut logs = Vec::with_capacity(parts.len());
    for (index, &v) in parts.iter().enumerate() {
        if !(v > 0.0) {
            return Err(CompositionError::NonPositivePart { index, value: v });
        }
        logs.push(v.ln());
    }
    let mean = logs.iter().sum::<f64>() / logs.len() as f64;
    Ok(logs.into_iter().map(|l| l - mean).collect())
}

/// Additive log-ratio against reference part `d`: ln(x_j / x_d), j != d.
pub fn alr(parts: &[f64], d: usize) -> Result<Vec<f64>, CompositionError> {
    if parts.len() < 2 {
        return Err(CompositionError::TooFewParts(parts.len()));
    }
    if d >= parts.len() {
        return Err(CompositionError::BadReference(d));
    }
    for (index, &v) in parts.iter().enumerate() {
        if !(v > 0.0) {
            return Err(CompositionError::NonPositivePart { index, value: v });
        }
    }
    let ln_d = parts[d].ln();
    Ok(parts
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != d)
        .map(|(_, &v)| v.ln() - ln_d)
        .collect())
}

/// Inverse ALR: rebuild the closed composition from log-ratios.
pub fn alr_inverse(coords: &[f64], d: usize, closure: f64) -> Vec<f64> {
    let j = coords.len() + 1;
    let mut raw = Vec::with_capacity(j);
    let mut it = coords.iter();
    for idx in 0..j {
        if idx == d {
            raw.push(1.0);
        } else {
            raw.push(it.next().expect("coords length J-1").exp());
        }
    }
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v * closure / total).collect()
}

/// Orthonormal contrast matrix: (J-1) x J, rows orthonormal and zero-sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastMatrix {
    rows: Vec<Vec<f64>>,
}

impl ContrastMatrix {
    /// Validate R R^T = I and zero row sums before accepting the matrix.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, CompositionError> {
        let jm1 = rows.len();
        if jm1 == 0 {
            return Err(CompositionError::BadContrast("empty matrix"));
        }
        let j = rows[0].len();
        if j != jm1 + 1 || rows.iter().any(|r| r.len() != j) {
            return Err(CompositionError::BadContrast("shape must be (J-1) x J"));
        }
        for r in &rows {
            if r.iter().sum::<f64>().abs() > 1e-12 {
                return Err(CompositionError::BadContrast("row sums must be zero"));
            }
        }
        for a in 0..jm1 {
            for b in 0..jm1 {
                let dot: f64 = (0..j).map(|c| rows[a][c] * rows[b][c]).sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                if (dot - expect).abs() > 1e-12 {
                    return Err(CompositionError::BadContrast("rows must be orthonormal"));
                }
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn parts(&self) -> usize {
        self.rows[0].len()
    }
}

/// Normalized Helmert contrast: row i is (1,...,1,-i,0,...)/sqrt(i(i+1)).
pub fn build_helmert_contrast(j: usize) -> Result<ContrastMatrix, CompositionError> {
    if j < 2 {
        return Err(CompositionError::TooFewParts(j));
    }
    let mut rows = Vec::with_capacity(j - 1);
    for i in 1..j {
        let norm = (i as f64 * (i as f64 + 1.0)).sqrt();
        let mut row = vec![0.0; j];
        for item in row.iter_mut().take(i) {
            *item = 1.0 / norm;
        }
        row[i] = -(i as f64) / norm;
        rows.push(row);
    }
    ContrastMatrix::new(rows)
}

/// Isometric log-ratio: R * CLR(x).
pub fn ilr(parts: &[f64], contrast: &ContrastMatrix) -> Result<Vec<f64>, CompositionError> {
    if contrast.parts() != parts.len() {
        return Err(CompositionError::BadContrast(
            "contrast size does not match part count",
        ));
    }
    let c = clr(parts)?;
    Ok(contrast
        .rows
        .iter()
        .map(|row| row.iter().zip(&c).map(|(r, x)| r * x).sum())
        .collect())
}

/// Probabilistic PCA fit on CLR coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ppca {
    /// Column means of the fitted data (length J).
    pub mean: Vec<f64>,
    /// Loading matrix W, J x k, stored row-major by original dimension.
    pub loadings: Vec<Vec<f64>>,
    /// Isotropic noise variance: mean of the discarded eigenvalues.
    pub noise_variance: f64,
}

impl Ppca {
    pub fn components(&self) -> usize {
        self.loadings.first().map_or(0, Vec::len)
    }

    /// Posterior-mean scores z = (W^T W + sigma^2 I)^-1 W^T (x - mean).
    pub fn transform_row(&self, row: &[f64]) -> Result<Vec<f64>, CompositionError> {
        let j = self.mean.len();
        let k = self.components();
        assert_eq!(row.len(), j);
        let mut m = SquareMatrix::zeros(k);
        for a in 0..k {
            for b in 0..k {
                let mut s = 0.0;
                for d in 0..j {
                    s += self.loadings[d][a] * self.loadings[d][b];
                }
                if a == b {
                    s += self.noise_variance;
                }
                m.set(a, b, s);
            }
        }
        let mut rhs = vec![0.0; k];
        for (a, r) in rhs.iter_mut().enumerate() {
            *r = (0..j)
                .map(|d| self.loadings[d][a] * (row[d] - self.mean[d]))
                .sum();
        }
        solve(&m, &rhs).ok_or(CompositionError::DegenerateFit)
    }
}

/// Closed-form maximum-likelihood PPCA on an n x J matrix of CLR rows.
///
/// The loadings span the top-k principal subspace of the covariance:
/// W = U_k (L_k - sigma^2 I)^(1/2), with sigma^2 the mean of the remaining
/// eigenvalues. CLR data is rank-deficient by one, so k must stay below J.
pub fn ppca_fit(clr_rows: &[Vec<f64>], k: usize) -> Result<Ppca, CompositionError> {
    let n = clr_rows.len();
    if n == 0 {
        return Err(CompositionError::TooFewRows { n, k });
    }
    let j = clr_rows[0].len();
    if k == 0 || k > j.saturating_sub(1) {
        return Err(CompositionError::RankExceeded {
            k,
            rank: j.saturating_sub(1),
        });
    }
    if n <= k {
        return Err(CompositionError::TooFewRows { n, k });
    }
    let mut mean = vec![0.0; j];
    for row in clr_rows {
        assert_eq!(row.len(), j, "ragged CLR matrix");
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut cov = SquareMatrix::zeros(j);
    for row in clr_rows {
        for a in 0..j {
            let da = row[a] - mean[a];
            for b in a..j {
                let v = cov.get(a, b) + da * (row[b] - mean[b]);
                cov.set(a, b, v);
            }
        }
    }
    for a in 0..j {
        for b in a..j {
            let v = cov.get(a, b) / n as f64;
            cov.set(a, b, v);
            cov.set(b, a, v);
        }
    }
    let eig = symmetric_eigen(&cov);
    let discarded = &eig.values[k..];
    let noise_variance = (discarded.iter().sum::<f64>() / discarded.len() as f64).max(0.0);
    let mut loadings = vec![vec![0.0; k]; j];
    for (c, loading_col) in eig.vectors.iter().take(k).enumerate() {
        let scale = (eig.values[c] - noise_variance).max(0.0).sqrt();
        for d in 0..j {
            loadings[d][c] = loading_col[d] * scale;
        }
    }
    Ok(Ppca {
        mean,
        loadings,
        noise_variance,
    })
}

// ---------------------------------------------------------------------------
// Dataset-level application
// ---------------------------------------------------------------------------

/// One block's fitted transform state, reusable on new data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedBlock {
    pub block: CompositionBlock,
    pub contrast: Option<ContrastMatrix>,
    pub ppca: Option<Ppca>,
    pub derived_names: Vec<String>,
}

/// Fitted transforms for every declared block of a dataset schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct FittedTransforms {
    pub blocks: Vec<FittedBlock>,
}

impl FittedTransforms {
    pub fn is_identity(&self) -> bool {
        self.blocks
            .iter()
            .all(|b| matches!(b.block.treatment, Treatment::None))
    }
}

/// Closed, zero-replaced parts of one block row.
fn block_row(dataset: &Dataset, cols: &[&[f64]], row: usize, block: &CompositionBlock)
    -> Result<Vec<f64>, CompositionError> {
    let _ = dataset;
    let raw: Vec<f64> = cols.iter().map(|c| c[row]).collect();
    zero_replace(&raw, block.epsilon, block.closure).map_err(|e| CompositionError::BlockRow {
        block: block.name.clone(),
        row,
        source: Box::new(e),
    })
}

/// Fit transform state on a dataset (PPCA sees exactly these rows).
pub fn fit_transforms(
    dataset: &Dataset,
    blocks: &[CompositionBlock],
) -> Result<FittedTransforms, CompositionError> {
    let mut fitted = Vec::with_capacity(blocks.len());
    for block in blocks {
        let cols: Vec<&[f64]> = block
            .columns
            .iter()
            .map(|name| dataset.numeric(name))
            .collect::<Result<_, _>>()?;
        let j = cols.len();
        if j < 2 {
            return Err(CompositionError::TooFewParts(j));
        }
        let (contrast, ppca, derived_names) = match &block.treatment {
            Treatment::None => (None, None, block.columns.clone()),
            Treatment::Alr { reference } => {
                if *reference >= j {
                    return Err(CompositionError::BadReference(*reference));
                }
                let names = block
                    .columns
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| i != reference)
                    .map(|(_, c)| format!("{}_alr_{c}", block.name))
                    .collect();
                (None, None, names)
            }
            Treatment::Clr => {
                let names = block
                    .columns
                    .iter()
                    .map(|c| format!("{}_clr_{c}", block.name))
                    .collect();
                (None, None, names)
            }
            Treatment::Ilr => {
                let contrast = build_helmert_contrast(j)?;
                let names = (1..j).map(|i| format!("{}_ilr_{i}", block.name)).collect();
                (Some(contrast), None, names)
            }
            Treatment::ClrPpca { components } => {
                let mut clr_rows = Vec::with_capacity(dataset.n_rows());
                for row in 0..dataset.n_rows() {
                    clr_rows.push(clr(&block_row(dataset, &cols, row, block)?)?);
                }
                let ppca = ppca_fit(&clr_rows, *components)?;
                let names = (1..=*components)
                    .map(|i| format!("{}_ppca_{i}", block.name))
                    .collect();
                (None, Some(ppca), names)
            }
        };
        fitted.push(FittedBlock {
            block: block.clone(),
            contrast,
            ppca,
            derived_names,
        });
    }
    Ok(FittedTransforms { blocks: fitted })
}

/// Apply fitted transforms: block columns are replaced by their derived
/// columns in place; every other column passes through untouched.
pub fn apply_transforms(
    dataset: &Dataset,
    fitted: &FittedTransforms,
) -> Result<Dataset, CompositionError> {
    // map column name -> (block index, position within block)
    let mut member: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
    for (bi, fb) in fitted.blocks.iter().enumerate() {
        for name in &fb.block.columns {
            member.insert(name.as_str(), bi);
        }
    }
    let n = dataset.n_rows();
    let mut out: Vec<Column> = Vec::new();
    let mut emitted = vec![false; fitted.blocks.len()];
    for col in dataset.columns() {
        match member.get(col.name.as_str()) {
            None => out.push(col.clone()),
            Some(&bi) => {
                let fb = &fitted.blocks[bi];
                if matches!(fb.block.treatment, Treatment::None) {
                    out.push(col.clone());
                    continue;
                }
                if emitted[bi] {
                    continue; // later members collapse into the first position
                }
                emitted[bi] = true;
                let cols: Vec<&[f64]> = fb
                    .block
                    .columns
                    .iter()
                    .map(|name| dataset.numeric(name))
                    .collect::<Result<_, _>>()?;
                let mut derived: Vec<Vec<f64>> =
                    vec![Vec::with_capacity(n); fb.derived_names.len()];
                for row in 0..n {
                    let parts = block_row(dataset, &cols, row, &fb.block)?;
                    let values = match &fb.block.treatment {
                        Treatment::None => unreachable!("handled above"),
                        Treatment::Alr { reference } => alr(&parts, *reference)?,
                        Treatment::Clr => clr(&parts)?,
                        Treatment::Ilr => {
                            ilr(&parts, fb.contrast.as_ref().expect("fitted contrast"))?
                        }
                        Treatment::ClrPpca { .. } => fb
                            .ppca
                            .as_ref()
                            .expect("fitted ppca")
                            .transform_row(&clr(&parts)?)?,
                    };
                    for (d, v) in derived.iter_mut().zip(values) {
                        d.push(v);
                    }
                }
                for (name, values) in fb.derived_names.iter().zip(derived) {
                    out.push(Column::numeric(name.clone(), values));
                }
            }
        }
    }
    Ok(Dataset::new(
        out,
        dataset.exposure().to_vec(),
        dataset.target().to_vec(),
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn clr_of_uniform_composition_is_zero() {
        let out = clr(&[0.25, 0.25, 0.25, 0.25]).unwrap();
        for v in out {
            assert!(v.abs() < 1e-15);
        }
    }

    #[test]
    fn clr_direct_value_and_zero_sum() {
        let out = clr(&[0.5, 0.25, 0.25]).unwrap();
        let g = (0.5f64 * 0.25 * 0.25).powf(1.0 / 3.0);
        assert_relative_eq!(out[0], (0.5f64 / g).ln(), epsilon = 1e-14);
        assert_relative_eq!(out[1], (0.25f64 / g).ln(), epsilon = 1e-14);
        assert!(out.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn clr_is_permutation_equivariant() {
        let parts = [0.1, 0.3, 0.6];
        let out = clr(&parts).unwrap();
        let perm = [0.6, 0.1, 0.3];
        let out_p = clr(&perm).unwrap();
        assert_relative_eq!(out_p[0], out[2], epsilon = 1e-14);
        assert_relative_eq!(out_p[1], out[0], epsilon = 1e-14);
        assert_relative_eq!(out_p[2], out[1], epsilon = 1e-14);
    }

    #[test]
    fn alr_two_part_case() {
        let out = alr(&[0.8, 0.2], 1).unwrap();
        assert_eq!(out.len(), 1);
        assert_relative_eq!(out[0], 4f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn alr_round_trips() {
        let parts = [0.1, 0.25, 0.4, 0.25];
        for d in 0..parts.len() {
            let coords = alr(&parts, d).unwrap();
            let back = alr_inverse(&coords, d, 1.0);
            for (a, b) in parts.iter().zip(&back) {
                assert_relative_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn helmert_contrast_invariants() {
        for j in 2..=8 {
            let c = build_helmert_contrast(j).unwrap();
            assert_eq!(c.rows().len(), j - 1);
        }
        let c = build_helmert_contrast(2).unwrap();
        assert_relative_eq!(c.rows()[0][0], (0.5f64).sqrt(), epsilon = 1e-14);
        assert_relative_eq!(c.rows()[0][1], -(0.5f64).sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn ilr_two_parts_closed_form() {
        let c = build_helmert_contrast(2).unwrap();
        let out = ilr(&[0.7, 0.3], &c).unwrap();
        let expect = (0.7f64 / 0.3).ln() / 2f64.sqrt();
        assert_relative_eq!(out[0], expect, epsilon = 1e-14);
    }

    #[test]
    fn ilr_preserves_clr_distances() {
        let c = build_helmert_contrast(5).unwrap();
        let rows = [
            vec![0.1, 0.2, 0.3, 0.25, 0.15],
            vec![0.3, 0.1, 0.2, 0.15, 0.25],
            vec![0.05, 0.45, 0.2, 0.2, 0.1],
        ];
        for a in 0..rows.len() {
            for b in (a + 1)..rows.len() {
                let ca = clr(&rows[a]).unwrap();
                let cb = clr(&rows[b]).unwrap();
                let ia = ilr(&rows[a], &c).unwrap();
                let ib = ilr(&rows[b], &c).unwrap();
                let d_clr: f64 = ca.iter().zip(&cb).map(|(x, y)| (x - y) * (x - y)).sum();
                let d_ilr: f64 = ia.iter().zip(&ib).map(|(x, y)| (x - y) * (x - y)).sum();
                assert_relative_eq!(d_clr.sqrt(), d_ilr.sqrt(), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn transforms_are_scale_invariant() {
        let raw = [2.0, 6.0, 12.0];
        let closed: Vec<f64> = raw.iter().map(|v| v / 20.0).collect();
        let scaled: Vec<f64> = raw.iter().map(|v| v * 7.5 / 150.0).collect();
        let c = build_helmert_contrast(3).unwrap();
        for (a, b) in clr(&closed).unwrap().iter().zip(clr(&scaled).unwrap()) {
            assert_relative_eq!(a, &b, epsilon = 1e-12);
        }
        for (a, b) in ilr(&closed, &c).unwrap().iter().zip(ilr(&scaled, &c).unwrap()) {
            assert_relative_eq!(a, &b, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_replace_rules() {
        let same = zero_replace(&[0.4, 0.6], 1e-6, 1.0).unwrap();
        assert_eq!(same, vec![0.4, 0.6]);

        let out = zero_replace(&[0.0, 1.0], 1e-6, 1.0).unwrap();
        assert_relative_eq!(out[0], 1e-6, epsilon = 1e-18);
        assert_relative_eq!(out[1], 1.0 - 1e-6, epsilon = 1e-15);

        for parts in [[0.0, 0.3, 0.7], [0.5, 0.0, 0.5]] {
            let out = zero_replace(&parts, 1e-5, 1.0).unwrap();
            assert!(out.iter().all(|&v| v > 0.0));
            assert_relative_eq!(out.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
        assert!(matches!(
            zero_replace(&[0.0, 0.0], 1e-6, 1.0),
            Err(CompositionError::AllZero)
        ));
    }

    #[test]
    fn ppca_recovers_planted_subspace() {
        // Rank-2 signal inside the zero-sum subspace of J = 5, plus small
        // isotropic in-subspace noise; fitted loadings must span the plant.
        use rand::rngs::StdRng;
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let j = 5;
        let k = 2;
        let n = 4000;
        let mut rng = StdRng::seed_from_u64(20240601);
        let normal = Normal::new(0.0, 1.0).unwrap();
        // two fixed orthogonal zero-sum directions
        let w1 = center_unit(&[3.0, -1.0, -1.0, -0.5, -0.5]);
        let w2 = center_unit(&[0.0, 1.0, -1.0, 1.0, -1.0]);
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let z1 = 3.0 * normal.sample(&mut rng);
            let z2 = 2.0 * normal.sample(&mut rng);
            let mut row: Vec<f64> = (0..j)
                .map(|d| z1 * w1[d] + z2 * w2[d] + 0.3 * normal.sample(&mut rng))
                .collect();
            // project noise into the zero-sum subspace like CLR data
            let m = row.iter().sum::<f64>() / j as f64;
            for v in row.iter_mut() {
                *v -= m;
            }
            rows.push(row);
        }
        let fit = ppca_fit(&rows, k).unwrap();
        // principal angles between span(loadings) and span(w1, w2)
        let basis = orthonormal_columns(&fit.loadings);
        for w in [&w1, &w2] {
            let mut proj = 0.0;
            for col in &basis {
                let d: f64 = col.iter().zip(w.iter()).map(|(a, b)| a * b).sum();
                proj += d * d;
            }
            let angle = proj.min(1.0).sqrt().acos().to_degrees();
            assert!(angle < 5.0, "principal angle {angle} deg");
        }
    }

    #[test]
    fn ppca_full_rank_limit_has_tiny_noise() {
        let rows = vec![
            clr(&[0.2, 0.3, 0.5]).unwrap(),
            clr(&[0.4, 0.4, 0.2]).unwrap(),
            clr(&[0.1, 0.6, 0.3]).unwrap(),
            clr(&[0.3, 0.2, 0.5]).unwrap(),
        ];
        let fit = ppca_fit(&rows, 2).unwrap();
        assert!(fit.noise_variance < 1e-12, "sigma2 {}", fit.noise_variance);
    }

    #[test]
    fn ppca_scores_centered() {
        let rows = vec![
            clr(&[0.2, 0.3, 0.5]).unwrap(),
            clr(&[0.4, 0.4, 0.2]).unwrap(),
            clr(&[0.1, 0.6, 0.3]).unwrap(),
            clr(&[0.3, 0.2, 0.5]).unwrap(),
            clr(&[0.25, 0.3, 0.45]).unwrap(),
        ];
        let fit = ppca_fit(&rows, 2).unwrap();
        let mut sums = vec![0.0; 2];
        for row in &rows {
            let z = fit.transform_row(row).unwrap();
            for (s, v) in sums.iter_mut().zip(z) {
                *s += v;
            }
        }
        for s in sums {
            assert!(s.abs() / (rows.len() as f64) < 1e-10, "score mean {s}");
        }
    }

    #[test]
    fn ppca_rejects_bad_shapes() {
        let rows = vec![vec![0.0; 4]; 3];
        assert!(matches!(
            ppca_fit(&rows, 4),
            Err(CompositionError::RankExceeded { .. })
        ));
        assert!(matches!(
            ppca_fit(&rows, 3),
            Err(CompositionError::TooFewRows { .. })
        ));
    }

    fn weekday_dataset() -> Dataset {
        Dataset::new(
            vec![
                Column::numeric("age", vec![30.0, 40.0, 50.0]),
                Column::numeric("mon", vec![0.5, 0.2, 0.0]),
                Column::numeric("tue", vec![0.25, 0.5, 0.6]),
                Column::numeric("wed", vec![0.25, 0.3, 0.4]),
            ],
            vec![1.0; 3],
            vec![0.0, 1.0, 2.0],
        )
        .unwrap()
    }

    fn weekday_block(treatment: Treatment) -> CompositionBlock {
        CompositionBlock {
            name: "wk".into(),
            columns: vec!["mon".into(), "tue".into(), "wed".into()],
            closure: 1.0,
            treatment,
            epsilon: 1e-6,
        }
    }

    #[test]
    fn dataset_clr_replaces_block_and_keeps_rest() {
        let d = weekday_dataset();
        let fitted = fit_transforms(&d, &[weekday_block(Treatment::Clr)]).unwrap();
        let t = apply_transforms(&d, &fitted).unwrap();
        assert_eq!(
            t.feature_names(),
            vec!["age", "wk_clr_mon", "wk_clr_tue", "wk_clr_wed"]
        );
        assert_eq!(t.numeric("age").unwrap(), d.numeric("age").unwrap());
        for row in 0..3 {
            let sum: f64 = ["wk_clr_mon", "wk_clr_tue", "wk_clr_wed"]
                .iter()
                .map(|c| t.numeric(c).unwrap()[row])
                .sum();
            assert!(sum.abs() < 1e-12);
        }
        assert_eq!(t.target(), d.target());
    }

    #[test]
    fn dataset_none_treatment_is_identity() {
        let d = weekday_dataset();
        let fitted = fit_transforms(&d, &[weekday_block(Treatment::None)]).unwrap();
        assert!(fitted.is_identity());
        let t = apply_transforms(&d, &fitted).unwrap();
        assert_eq!(t, d);
    }

    #[test]
    fn dataset_ilr_column_count() {
        let d = weekday_dataset();
        let fitted = fit_transforms(&d, &[weekday_block(Treatment::Ilr)]).unwrap();
        let t = apply_transforms(&d, &fitted).unwrap();
        assert_eq!(t.feature_names(), vec!["age", "wk_ilr_1", "wk_ilr_2"]);
    }

    #[test]
    fn dataset_fit_rejects_missing_column() {
        let d = weekday_dataset();
        let mut block = weekday_block(Treatment::Clr);
        block.columns.push("missing".into());
        assert!(fit_transforms(&d, &[block]).is_err());
    }

    fn center_unit(v: &[f64]) -> Vec<f64> {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let centered: Vec<f64> = v.iter().map(|x| x - m).collect();
        let norm: f64 = centered.iter().map(|x| x * x).sum::<f64>().sqrt();
        centered.into_iter().map(|x| x / norm).collect()
    }

    /// Gram-Schmidt over the k columns of a J x k loading matrix.
    fn orthonormal_columns(loadings: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let j = loadings.len();
        let k = loadings[0].len();
        let mut cols: Vec<Vec<f64>> = (0..k)
            .map(|c| (0..j).map(|d| loadings[d][c]).collect())
            .collect();
        for c in 0..k {
            for prev in 0..c {
                let d: f64 = cols[c].iter().zip(&cols[prev]).map(|(a, b)| a * b).sum();
                let prev_col = cols[prev].clone();
                for (x, p) in cols[c].iter_mut().zip(prev_col) {
                    *x -= d * p;
                }
            }
            let norm: f64 = cols[c].iter().map(|x| x * x).sum::<f64>().sqrt();
            for x in cols[c].iter_mut() {
                *x /= norm;
            }
        }
        cols
    }
}
