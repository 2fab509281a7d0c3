//! Treatment-effect estimation, variance / R^2 estimators with HC
//! finite-sample adjustments, and the three confidence intervals
//! (constrained, Wald, Neyman).

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::Assignment;
use crate::dist::{quantile_nu, std_normal_quantile, AsymParams, McConfig, NuTable};
use crate::error::Error;
use crate::population::MomentSummary;
use crate::Result;

#[derive(Debug, Clone)]
pub struct ObservedData {
    pub z: Assignment,
    pub y_obs: Vec<f64>,
    pub covariates: DMatrix<f64>,
}

impl ObservedData {
    pub fn new(z: Assignment, y_obs: Vec<f64>, covariates: DMatrix<f64>) -> Result<Self> {
        let n = z.n();
        if y_obs.len() != n || covariates.nrows() != n {
            return Err(Error::Invalid("outcome/covariate length mismatch".into()));
        }
        if y_obs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite observed outcome".into()));
        }
        Ok(Self { z, y_obs, covariates })
    }

    pub fn n(&self) -> usize {
        self.z.n()
    }

    pub fn k(&self) -> usize {
        self.covariates.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HcVariant {
    Hc0,
    Hc1,
    Hc2,
    Hc3,
}

impl HcVariant {
    pub const ALL: [HcVariant; 4] = [HcVariant::Hc0, HcVariant::Hc1, HcVariant::Hc2, HcVariant::Hc3];
}

impl std::str::FromStr for HcVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hc0" => Ok(HcVariant::Hc0),
            "hc1" => Ok(HcVariant::Hc1),
            "hc2" => Ok(HcVariant::Hc2),
            "hc3" => Ok(HcVariant::Hc3),
            other => Err(Error::Invalid(format!("unknown HC variant '{other}'"))),
        }
    }
}

impl std::fmt::Display for HcVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            HcVariant::Hc0 => "hc0",
            HcVariant::Hc1 => "hc1",
            HcVariant::Hc2 => "hc2",
            HcVariant::Hc3 => "hc3",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VarComponents {
    pub s2_1: f64,
    pub s2_0: f64,
    pub s2_1_given_x: f64,
    pub s2_0_given_x: f64,
    pub s2_tau_given_x: f64,
    /// Residual variances s2_{z \ x}, after HC rescaling and flooring.
    pub s2_1_resid: f64,
    pub s2_0_resid: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub vtt_hat: f64,
    pub r2_hat: f64,
    pub hc: HcVariant,
    pub components: VarComponents,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CiMethod {
    Constrained,
    Wald,
    Neyman,
}

impl std::str::FromStr for CiMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "constrained" => Ok(CiMethod::Constrained),
            "wald" => Ok(CiMethod::Wald),
            "neyman" => Ok(CiMethod::Neyman),
            other => Err(Error::Invalid(format!("unknown CI method '{other}'"))),
        }
    }
}

impl std::fmt::Display for CiMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            CiMethod::Constrained => "constrained",
            CiMethod::Wald => "wald",
            CiMethod::Neyman => "neyman",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct McMeta {
    pub seed: u64,
    pub draws: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferenceResult {
    pub tau_hat: f64,
    pub vtt_hat: f64,
    pub r2_hat: f64,
    pub hc: HcVariant,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub method: CiMethod,
    pub alpha: f64,
    pub mc_meta: Option<McMeta>,
}

impl InferenceResult {
    pub fn half_width(&self) -> f64 {
        (self.ci_hi - self.ci_lo) / 2.0
    }
}

/// Difference-in-means estimator: treated mean minus control mean.
pub fn diff_in_means(data: &ObservedData) -> f64 {
    let mut sum1 = 0.0;
    let mut sum0 = 0.0;
    for (i, &zi) in data.z.z.iter().enumerate() {
        if zi == 1 {
            sum1 += data.y_obs[i];
        } else {
            sum0 += data.y_obs[i];
        }
    }
    let n1 = data.z.n1 as f64;
    let n0 = (data.n() - data.z.n1) as f64;
    sum1 / n1 - sum0 / n0
}

struct ArmFit {
    s2: f64,
    /// Sample covariance vector between outcome and covariates.
    s_yx: DVector<f64>,
    /// Residual sum of squares from the within-arm OLS of y on (1, x),
    /// per HC weighting: [plain, /(1-h), /(1-h)^2].
    rss: [f64; 3],
    n_arm: usize,
}

fn fit_arm(ys: &[f64], xs: &DMatrix<f64>) -> Result<ArmFit> {
    let n_arm = ys.len();
    let k = xs.ncols();
    let ybar = ys.iter().sum::<f64>() / n_arm as f64;
    let s2 = ys.iter().map(|y| (y - ybar) * (y - ybar)).sum::<f64>() / (n_arm - 1) as f64;

    let xbar = xs.row_mean();
    let mut s_yx = DVector::zeros(k);
    for i in 0..n_arm {
        let dy = ys[i] - ybar;
        for j in 0..k {
            s_yx[j] += dy * (xs[(i, j)] - xbar[j]);
        }
    }
    s_yx /= (n_arm - 1) as f64;

    // Within-arm OLS of y on (1, x) for residuals and leverages.
    let mut design = DMatrix::zeros(n_arm, k + 1);
    for i in 0..n_arm {
        design[(i, 0)] = 1.0;
        for j in 0..k {
            design[(i, j + 1)] = xs[(i, j)];
        }
    }
    let xtx = design.transpose() * &design;
    let xty = design.transpose() * DVector::from_column_slice(ys);
    let chol = Cholesky::new(xtx).ok_or_else(|| {
        Error::SingularCovariates("within-arm regression design is rank deficient".into())
    })?;
    let beta = chol.solve(&xty);
    let fitted = &design * &beta;

    let mut rss = [0.0f64; 3];
    for i in 0..n_arm {
        let e = ys[i] - fitted[i];
        let xi = design.row(i).transpose();
        let h = xi.dot(&chol.solve(&xi));
        let omh = (1.0 - h).max(1e-12);
        rss[0] += e * e;
        rss[1] += e * e / omh;
        rss[2] += e * e / (omh * omh);
    }
    Ok(ArmFit { s2, s_yx, rss, n_arm })
}

/// Sample-analogue estimators of V_tau_tau and R^2 from Eq-style explicit
/// components, with the requested HC residual rescaling. Projections use
/// the full-population covariate covariance held by `moments`.
pub fn estimate_variance(
    data: &ObservedData,
    moments: &MomentSummary,
    hc: HcVariant,
) -> Result<VarianceEstimate> {
    let n = data.n();
    let k = data.k();
    let n1 = data.z.n1;
    let n0 = n - n1;
    if n1 < k + 2 || n0 < k + 2 {
        return Err(Error::ArmTooSmall { n1, n0, min: k + 2 });
    }

    let mut y1 = Vec::with_capacity(n1);
    let mut y0 = Vec::with_capacity(n0);
    let mut x1 = DMatrix::zeros(n1, k);
    let mut x0 = DMatrix::zeros(n0, k);
    let (mut i1, mut i0) = (0, 0);
    for (i, &zi) in data.z.z.iter().enumerate() {
        if zi == 1 {
            y1.push(data.y_obs[i]);
            x1.set_row(i1, &data.covariates.row(i));
            i1 += 1;
        } else {
            y0.push(data.y_obs[i]);
            x0.set_row(i0, &data.covariates.row(i));
            i0 += 1;
        }
    }

    let f1 = fit_arm(&y1, &x1)?;
    let f0 = fit_arm(&y0, &x0)?;

    let s2_1_given_x = f1.s_yx.dot(&moments.solve(&f1.s_yx));
    let s2_0_given_x = f0.s_yx.dot(&moments.solve(&f0.s_yx));
    let d = &f1.s_yx - &f0.s_yx;
    let s2_tau_given_x = d.dot(&moments.solve(&d));

    let resid = |f: &ArmFit, given_x: f64| -> f64 {
        let base = f.s2 - given_x;
        let nz = f.n_arm as f64;
        let val = match hc {
            HcVariant::Hc0 => base,
            HcVariant::Hc1 => base * nz / (nz - (k as f64 + 1.0)),
            HcVariant::Hc2 => f.rss[1] / (nz - 1.0),
            HcVariant::Hc3 => f.rss[2] / (nz - 1.0),
        };
        val.max(0.0)
    };
    let s2_1_resid = resid(&f1, s2_1_given_x);
    let s2_0_resid = resid(&f0, s2_0_given_x);

    let vtt_raw = f1.s2 / n1 as f64 + f0.s2 / n0 as f64 - s2_tau_given_x / n as f64;
    let floor = 1e-12 * (f1.s2 + f0.s2);
    let vtt_hat = vtt_raw.max(floor);

    let r2_raw = 1.0 - (s2_1_resid / n1 as f64 + s2_0_resid / n0 as f64) / vtt_hat;
    let r2_hat = r2_raw.clamp(0.0, 1.0);

    Ok(VarianceEstimate {
        vtt_hat,
        r2_hat,
        hc,
        components: VarComponents {
            s2_1: f1.s2,
            s2_0: f0.s2,
            s2_1_given_x,
            s2_0_given_x,
            s2_tau_given_x,
            s2_1_resid,
            s2_0_resid,
        },
    })
}

fn symmetric_interval(
    tau_hat: f64,
    half: f64,
    variance: &VarianceEstimate,
    method: CiMethod,
    alpha: f64,
    mc_meta: Option<McMeta>,
) -> InferenceResult {
    InferenceResult {
        tau_hat,
        vtt_hat: variance.vtt_hat,
        r2_hat: variance.r2_hat,
        hc: variance.hc,
        ci_lo: tau_hat - half,
        ci_hi: tau_hat + half,
        method,
        alpha,
        mc_meta,
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0,1), got {alpha}")));
    }
    Ok(())
}

/// Constrained CI: tau_hat +/- sqrt(V_hat) * nu_{1-alpha/2,K,T}(R2_hat),
/// the quantile estimated by Monte Carlo with the given budget.
pub fn ci_constrained(
    tau_hat: f64,
    variance: &VarianceEstimate,
    k: usize,
    t: usize,
    alpha: f64,
    mc: &McConfig,
) -> Result<InferenceResult> {
    check_alpha(alpha)?;
    let params = AsymParams::new(k, t, variance.r2_hat)?;
    let nu = quantile_nu(1.0 - alpha / 2.0, &params, mc)?;
    let half = variance.vtt_hat.sqrt() * nu;
    Ok(symmetric_interval(
        tau_hat,
        half,
        variance,
        CiMethod::Constrained,
        alpha,
        Some(McMeta { seed: mc.seed, draws: mc.draws }),
    ))
}

/// Constrained CI using a precomputed quantile table (simulation inner
/// loops). The table must match (alpha, K, T).
pub fn ci_constrained_with_table(
    tau_hat: f64,
    variance: &VarianceEstimate,
    table: &NuTable,
    alpha: f64,
) -> Result<InferenceResult> {
    check_alpha(alpha)?;
    if (table.alpha - (1.0 - alpha / 2.0)).abs() > 1e-12 {
        return Err(Error::Invalid("nu table level does not match alpha".into()));
    }
    let half = variance.vtt_hat.sqrt() * table.nu(variance.r2_hat);
    Ok(symmetric_interval(tau_hat, half, variance, CiMethod::Constrained, alpha, None))
}

/// Wald CI: tau_hat +/- sqrt(V_hat (1 - R2_hat)) * z_{1-alpha/2}.
pub fn ci_wald(tau_hat: f64, variance: &VarianceEstimate, alpha: f64) -> Result<InferenceResult> {
    check_alpha(alpha)?;
    let z = std_normal_quantile(1.0 - alpha / 2.0)?;
    let half = (variance.vtt_hat * (1.0 - variance.r2_hat)).sqrt() * z;
    Ok(symmetric_interval(tau_hat, half, variance, CiMethod::Wald, alpha, None))
}

/// Neyman's classical interval: tau_hat +/- z * sqrt(s2_1/n1 + s2_0/n0),
/// no covariate use.
pub fn ci_neyman(data: &ObservedData, alpha: f64) -> Result<InferenceResult> {
    check_alpha(alpha)?;
    let n = data.n();
    let n1 = data.z.n1;
    let n0 = n - n1;
    if n1 < 2 || n0 < 2 {
        return Err(Error::ArmTooSmall { n1, n0, min: 2 });
    }
    let tau_hat = diff_in_means(data);
    let (mut y1, mut y0) = (Vec::new(), Vec::new());
    for (i, &zi) in data.z.z.iter().enumerate() {
        if zi == 1 {
            y1.push(data.y_obs[i]);
        } else {
            y0.push(data.y_obs[i]);
        }
    }
    let s2_1 = crate::stats::sample_variance(&y1);
    let s2_0 = crate::stats::sample_variance(&y0);
    let vtt = s2_1 / n1 as f64 + s2_0 / n0 as f64;
    let z = std_normal_quantile(1.0 - alpha / 2.0)?;
    let variance = VarianceEstimate {
        vtt_hat: vtt,
        r2_hat: 0.0,
        hc: HcVariant::Hc0,
        components: VarComponents {
            s2_1,
            s2_0,
            s2_1_given_x: 0.0,
            s2_0_given_x: 0.0,
            s2_tau_given_x: 0.0,
            s2_1_resid: s2_1,
            s2_0_resid: s2_0,
        },
    };
    Ok(symmetric_interval(tau_hat, z * vtt.sqrt(), &variance, CiMethod::Neyman, alpha, None))
}
