//! Finite population, covariate moments, standardization and trimming.
//!
//! All randomness in the toolkit is conditional on the objects here: the
//! units, their covariates and (in simulation mode) both potential
//! outcomes are fixed. Everything is immutable after construction.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::Error;
use crate::stats::quantile_sorted;
use crate::Result;

/// Condition-number proxy above which covariates are declared collinear.
pub const COND_LIMIT: f64 = 1e12;

#[derive(Debug, Clone)]
pub struct FinitePopulation {
    pub n: usize,
    pub k: usize,
    /// n x K, rows are units.
    pub covariates: DMatrix<f64>,
    pub y1: Option<Vec<f64>>,
    pub y0: Option<Vec<f64>>,
    pub unit_ids: Vec<String>,
}

impl FinitePopulation {
    pub fn new(
        covariates: DMatrix<f64>,
        y1: Option<Vec<f64>>,
        y0: Option<Vec<f64>>,
        unit_ids: Vec<String>,
    ) -> Result<Self> {
        let n = covariates.nrows();
        let k = covariates.ncols();
        if n < 4 {
            return Err(Error::Invalid(format!("need n >= 4 units, got {n}")));
        }
        if k < 1 {
            return Err(Error::Invalid("need at least one covariate".into()));
        }
        if unit_ids.len() != n {
            return Err(Error::Invalid(format!(
                "unit_ids length {} does not match n={n}",
                unit_ids.len()
            )));
        }
        if covariates.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite covariate entry".into()));
        }
        match (&y1, &y0) {
            (Some(a), Some(b)) => {
                if a.len() != n || b.len() != n {
                    return Err(Error::Invalid("potential outcome length mismatch".into()));
                }
                if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
                    return Err(Error::Invalid("non-finite potential outcome".into()));
                }
            }
            (None, None) => {}
            _ => {
                return Err(Error::Invalid(
                    "y1 and y0 must both be present or both absent".into(),
                ))
            }
        }
        Ok(Self { n, k, covariates, y1, y0, unit_ids })
    }

    /// Convenience constructor for tests and synthetic data: ids "u1".."un".
    pub fn from_covariates(covariates: DMatrix<f64>) -> Result<Self> {
        let ids = (1..=covariates.nrows()).map(|i| format!("u{i}")).collect();
        Self::new(covariates, None, None, ids)
    }

    pub fn has_outcomes(&self) -> bool {
        self.y1.is_some()
    }

    /// Copy with potential outcomes attached.
    pub fn with_outcomes(&self, y1: Vec<f64>, y0: Vec<f64>) -> Result<Self> {
        Self::new(self.covariates.clone(), Some(y1), Some(y0), self.unit_ids.clone())
    }

    /// Copy keeping only the first `k_used` covariate columns.
    pub fn first_covariates(&self, k_used: usize) -> Result<Self> {
        if k_used == 0 || k_used > self.k {
            return Err(Error::Invalid(format!(
                "K_used={k_used} out of range 1..={}",
                self.k
            )));
        }
        Self::new(
            self.covariates.columns(0, k_used).into_owned(),
            self.y1.clone(),
            self.y0.clone(),
            self.unit_ids.clone(),
        )
    }
}

/// Covariate moments plus the factorization used for quadratic forms.
#[derive(Debug, Clone)]
pub struct MomentSummary {
    pub n: usize,
    pub n1: usize,
    pub xbar: DVector<f64>,
    /// Finite-population covariance, divisor n - 1.
    pub s2x: DMatrix<f64>,
    /// n / (n1 n0) * S2x.
    pub vxx: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    pub cond_estimate: f64,
    /// True when a ridge term was added before factorizing.
    pub ridged: bool,
}

impl MomentSummary {
    /// Lower-triangular factor L with L L^T = S2x.
    pub fn chol_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// Solve S2x * out = rhs.
    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }

    /// Quadratic form d^T (S2x)^{-1} d.
    pub fn quad_form(&self, d: &DVector<f64>) -> f64 {
        d.dot(&self.chol.solve(d))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrimSpec {
    pub lo_q: f64,
    pub hi_q: f64,
}

impl Default for TrimSpec {
    fn default() -> Self {
        Self { lo_q: 0.025, hi_q: 0.975 }
    }
}

impl TrimSpec {
    pub fn new(lo_q: f64, hi_q: f64) -> Result<Self> {
        if !(lo_q > 0.0 && lo_q < hi_q && hi_q < 1.0) {
            return Err(Error::Invalid(format!(
                "trim quantiles must satisfy 0 < lo ({lo_q}) < hi ({hi_q}) < 1"
            )));
        }
        Ok(Self { lo_q, hi_q })
    }
}

fn check_arm(n: usize, n1: usize) -> Result<()> {
    if n1 < 2 || n1 + 2 > n {
        return Err(Error::InvalidArm { n, n1 });
    }
    Ok(())
}

/// Covariate mean, covariance and the factorization backing Mahalanobis
/// distances. Fails on collinear or constant covariates.
pub fn compute_moments(pop: &FinitePopulation, n1: usize) -> Result<MomentSummary> {
    compute_moments_impl(pop, n1, None)
}

/// Like [`compute_moments`] but adds `ridge * I` to S2x before factorizing.
/// `ridge = None` picks 1e-8 * trace / K. For exploratory use only; the
/// result is flagged via [`MomentSummary::ridged`].
pub fn compute_moments_ridged(
    pop: &FinitePopulation,
    n1: usize,
    ridge: Option<f64>,
) -> Result<MomentSummary> {
    compute_moments_impl(pop, n1, Some(ridge))
}

fn compute_moments_impl(
    pop: &FinitePopulation,
    n1: usize,
    ridge: Option<Option<f64>>,
) -> Result<MomentSummary> {
    check_arm(pop.n, n1)?;
    let n = pop.n;
    let n0 = n - n1;
    let k = pop.k;

    let xbar = pop.covariates.row_mean().transpose();
    let mut s2x = DMatrix::zeros(k, k);
    for i in 0..n {
        let d = pop.covariates.row(i).transpose() - &xbar;
        s2x += &d * d.transpose();
    }
    s2x /= (n - 1) as f64;

    let mut factor_target = s2x.clone();
    let mut ridged = false;
    if let Some(eps) = ridge {
        let eps = eps.unwrap_or(1e-8 * s2x.trace() / k as f64);
        for i in 0..k {
            factor_target[(i, i)] += eps;
        }
        ridged = true;
    }

    let chol = Cholesky::new(factor_target.clone()).ok_or_else(|| {
        Error::SingularCovariates("covariance factorization failed (collinear or constant column)".into())
    })?;

    let eig = factor_target.symmetric_eigenvalues();
    let lam_max = eig.iter().cloned().fold(f64::MIN, f64::max);
    let lam_min = eig.iter().cloned().fold(f64::MAX, f64::min);
    let cond_estimate = if lam_min > 0.0 { lam_max / lam_min } else { f64::INFINITY };
    if cond_estimate > COND_LIMIT {
        return Err(Error::SingularCovariates(format!(
            "condition estimate {cond_estimate:.3e} exceeds {COND_LIMIT:.0e}"
        )));
    }

    let vxx = &s2x * (n as f64 / (n1 as f64 * n0 as f64));
    Ok(MomentSummary { n, n1, xbar, s2x, vxx, chol, cond_estimate, ridged })
}

/// Rows w_i = L^{-1}(x_i - xbar) with L the Cholesky factor of S2x, so the
/// output has zero mean and identity covariance (divisor n - 1).
pub fn standardize(pop: &FinitePopulation, moments: &MomentSummary) -> DMatrix<f64> {
    let n = pop.n;
    let k = pop.k;
    let mut out = DMatrix::zeros(n, k);
    let l = moments.chol_factor();
    for i in 0..n {
        let d = pop.covariates.row(i).transpose() - &moments.xbar;
        let w = l.solve_lower_triangular(&d).expect("factor is nonsingular");
        out.set_row(i, &w.transpose());
    }
    out
}

/// Winsorize each covariate column at the spec's empirical quantiles.
/// Outcomes and unit ids are untouched; the input population is not
/// modified.
pub fn trim(pop: &FinitePopulation, spec: &TrimSpec) -> FinitePopulation {
    let mut covs = pop.covariates.clone();
    for j in 0..pop.k {
        let mut col: Vec<f64> = covs.column(j).iter().cloned().collect();
        col.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let lo = quantile_sorted(&col, spec.lo_q);
        let hi = quantile_sorted(&col, spec.hi_q);
        for i in 0..pop.n {
            covs[(i, j)] = covs[(i, j)].clamp(lo, hi);
        }
    }
    FinitePopulation {
        n: pop.n,
        k: pop.k,
        covariates: covs,
        y1: pop.y1.clone(),
        y0: pop.y0.clone(),
        unit_ids: pop.unit_ids.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn pop_1to6() -> FinitePopulation {
        FinitePopulation::from_covariates(DMatrix::from_column_slice(
            6,
            1,
            &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        ))
        .unwrap()
    }

    #[test]
    fn moments_match_hand_values() {
        let pop = pop_1to6();
        let m = compute_moments(&pop, 3).unwrap();
        assert_relative_eq!(m.xbar[0], 3.5);
        assert_relative_eq!(m.s2x[(0, 0)], 3.5);
        assert_relative_eq!(m.vxx[(0, 0)], (6.0 / 9.0) * 3.5, epsilon = 1e-14);
        // chol * chol^T reconstructs S2x
        let l = m.chol_factor();
        let rec = &l * l.transpose();
        assert_relative_eq!(rec[(0, 0)], 3.5, max_relative = 1e-10);
    }

    #[test]
    fn constant_column_is_singular() {
        let pop = FinitePopulation::from_covariates(DMatrix::from_column_slice(
            4,
            2,
            &[1.0, 2.0, 3.0, 4.0, 7.0, 7.0, 7.0, 7.0],
        ))
        .unwrap();
        assert!(matches!(
            compute_moments(&pop, 2),
            Err(Error::SingularCovariates(_))
        ));
    }

    #[test]
    fn ridge_rescues_constant_column() {
        let pop = FinitePopulation::from_covariates(DMatrix::from_column_slice(
            4,
            2,
            &[1.0, 2.0, 3.0, 4.0, 7.0, 7.0, 7.0, 7.0],
        ))
        .unwrap();
        let m = compute_moments_ridged(&pop, 2, None).unwrap();
        assert!(m.ridged);
    }

    #[test]
    fn invalid_arm_rejected() {
        let pop = pop_1to6();
        assert!(matches!(compute_moments(&pop, 1), Err(Error::InvalidArm { .. })));
        assert!(matches!(compute_moments(&pop, 5), Err(Error::InvalidArm { .. })));
    }

    #[test]
    fn standardize_k1_hand_value() {
        let pop = pop_1to6();
        let m = compute_moments(&pop, 3).unwrap();
        let w = standardize(&pop, &m);
        for i in 0..6 {
            let expect = ((i + 1) as f64 - 3.5) / 3.5f64.sqrt();
            assert_relative_eq!(w[(i, 0)], expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn standardize_gives_identity_covariance_and_is_idempotent() {
        let data: Vec<f64> = (0..30)
            .map(|i| ((i * 37 + 11) % 17) as f64 + 0.25 * ((i * 13) % 5) as f64)
            .collect();
        let mut covs = DMatrix::zeros(10, 3);
        for (idx, v) in data.iter().enumerate() {
            covs[(idx % 10, idx / 10)] = *v + if idx / 10 == 2 { 0.1 * (idx % 10) as f64 } else { 0.0 };
        }
        let pop = FinitePopulation::from_covariates(covs).unwrap();
        let m = compute_moments(&pop, 5).unwrap();
        let w = standardize(&pop, &m);

        let wpop = FinitePopulation::from_covariates(w.clone()).unwrap();
        let wm = compute_moments(&wpop, 5).unwrap();
        for i in 0..3 {
            assert_relative_eq!(wm.xbar[i], 0.0, epsilon = 1e-8);
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(wm.s2x[(i, j)], expect, epsilon = 1e-8);
            }
        }
        // idempotence
        let w2 = standardize(&wpop, &wm);
        for (a, b) in w.iter().zip(w2.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-8);
        }
    }

    #[test]
    fn trim_pulls_extremes_to_quantiles() {
        let pop = FinitePopulation::from_covariates(DMatrix::from_column_slice(
            4,
            1,
            &[1.0, 2.0, 3.0, 100.0],
        ))
        .unwrap();
        let spec = TrimSpec::new(0.25, 0.75).unwrap();
        let trimmed = trim(&pop, &spec);
        // type-7 quantiles of (1,2,3,100): q25 = 1.75, q75 = 27.25
        assert_relative_eq!(trimmed.covariates[(0, 0)], 1.75);
        assert_relative_eq!(trimmed.covariates[(3, 0)], 27.25);
        assert_relative_eq!(trimmed.covariates[(1, 0)], 2.0);
        // original untouched
        assert_relative_eq!(pop.covariates[(3, 0)], 100.0);
    }

    #[test]
    fn trim_noop_when_window_covers_all() {
        let pop = pop_1to6();
        let spec = TrimSpec::new(1e-9, 1.0 - 1e-9).unwrap();
        let trimmed = trim(&pop, &spec);
        for (a, b) in pop.covariates.iter().zip(trimmed.covariates.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-6);
        }
    }

    #[test]
    fn trim_constant_column_unchanged() {
        let covs = DMatrix::from_fn(6, 2, |i, j| if j == 0 { i as f64 } else { 5.0 });
        let pop = FinitePopulation::from_covariates(covs).unwrap();
        let trimmed = trim(&pop, &TrimSpec::default());
        for i in 0..6 {
            assert_relative_eq!(trimmed.covariates[(i, 1)], 5.0);
        }
    }

    #[test]
    fn outcomes_must_come_in_pairs() {
        let covs = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        let ids = vec!["a".into(), "b".into(), "c".into(), "d".into()];
        assert!(FinitePopulation::new(covs, Some(vec![0.0; 4]), None, ids).is_err());
    }

    proptest! {
        // Affine closure of the moments: x -> a*x + b maps xbar and S2x
        // the same way.
        #[test]
        fn affine_closure_k1(a in 0.1f64..5.0, b in -10.0f64..10.0) {
            let pop = pop_1to6();
            let mapped = FinitePopulation::from_covariates(
                pop.covariates.map(|x| a * x + b)
            ).unwrap();
            let m0 = compute_moments(&pop, 3).unwrap();
            let m1 = compute_moments(&mapped, 3).unwrap();
            prop_assert!((m1.xbar[0] - (a * m0.xbar[0] + b)).abs() < 1e-8 * (1.0 + m1.xbar[0].abs()));
            prop_assert!((m1.s2x[(0,0)] - a * a * m0.s2x[(0,0)]).abs() < 1e-8 * (1.0 + m1.s2x[(0,0)].abs()));
        }

        // Trimming preserves the order of untied values within a column.
        #[test]
        fn trim_is_monotone(values in proptest::collection::vec(-100.0f64..100.0, 8..20)) {
            let n = values.len();
            let pop = FinitePopulation::from_covariates(
                DMatrix::from_column_slice(n, 1, &values)
            ).unwrap();
            let trimmed = trim(&pop, &TrimSpec::new(0.1, 0.9).unwrap());
            for i in 0..n {
                for j in 0..n {
                    if values[i] < values[j] {
                        prop_assert!(trimmed.covariates[(i,0)] <= trimmed.covariates[(j,0)]);
                    }
                }
            }
        }
    }
}
