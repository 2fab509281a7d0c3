//! Repeated-sampling evaluation of the design + inference pipeline:
//! constant-effect imputation, exact finite-population truth values,
//! replication loops, and the worst-case / gamma diagnostics.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::design::{best_choice_with_retention, estimate_propensities, Assignment};
use crate::dist::{std_normal_quantile, McConfig, NuTable};
use crate::error::Error;
use crate::inference::{
    ci_constrained_with_table, ci_neyman, ci_wald, diff_in_means, estimate_variance, CiMethod,
    HcVariant, ObservedData,
};
use crate::par::map_indexed;
use crate::population::{compute_moments, FinitePopulation};
use crate::rng::{derive_seed, substream};
use crate::Result;

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub pop: FinitePopulation,
    pub n1: usize,
    pub k_used: usize,
    pub tries: usize,
    pub reps: usize,
    pub alpha: f64,
    pub methods: Vec<CiMethod>,
    pub hc_variants: Vec<HcVariant>,
    pub master_seed: u64,
    pub mc: McConfig,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.pop.has_outcomes() {
            return Err(Error::Config {
                field: "population".into(),
                msg: "simulation needs y1 and y0 columns".into(),
            });
        }
        if self.reps < 100 {
            return Err(Error::Config {
                field: "reps".into(),
                msg: format!("need reps >= 100, got {}", self.reps),
            });
        }
        if self.k_used == 0 || self.k_used > self.pop.k {
            return Err(Error::Config {
                field: "K_used".into(),
                msg: format!("K_used={} out of range 1..={}", self.k_used, self.pop.k),
            });
        }
        if !(0.0 < self.alpha && self.alpha < 1.0) {
            return Err(Error::Config {
                field: "alpha".into(),
                msg: format!("alpha must lie in (0,1), got {}", self.alpha),
            });
        }
        if self.methods.is_empty() {
            return Err(Error::Config { field: "methods".into(), msg: "no CI methods requested".into() });
        }
        if self.hc_variants.is_empty() {
            return Err(Error::Config { field: "hc".into(), msg: "no HC variants requested".into() });
        }
        Ok(())
    }
}

/// Exact finite-population quantities for a population with both
/// potential outcomes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthSummary {
    pub tau: f64,
    pub vtt: f64,
    pub r2: f64,
    pub s2_tau_res: f64,
    pub gamma_n: f64,
    /// 174 gamma + 7 gamma^{1/3}, the Gaussian-approximation error bound.
    pub delta_bound: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellReport {
    pub method: CiMethod,
    pub hc: HcVariant,
    pub bias: f64,
    pub bias_se: f64,
    pub rmse: f64,
    pub coverage: f64,
    pub coverage_se: f64,
    pub mean_length: f64,
    pub length_se: f64,
    /// 1 - mean length / mean Neyman length, when Neyman was run.
    pub pct_length_vs_neyman: Option<f64>,
    /// Empirical variance of tau_hat across replicates.
    pub var_tau_hat: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationReport {
    pub n: usize,
    pub n1: usize,
    pub k_used: usize,
    pub tries: usize,
    pub alpha: f64,
    pub reps: usize,
    pub master_seed: u64,
    pub truth: TruthSummary,
    pub cells: Vec<CellReport>,
}

/// Impute both potential outcomes from observed data under a constant
/// treatment effect equal to the difference-in-means estimate.
pub fn impute_constant_effect(data: &ObservedData) -> Result<FinitePopulation> {
    let tau_hat = diff_in_means(data);
    let n = data.n();
    let mut y1 = vec![0.0; n];
    let mut y0 = vec![0.0; n];
    for i in 0..n {
        if data.z.z[i] == 1 {
            y1[i] = data.y_obs[i];
            y0[i] = data.y_obs[i] - tau_hat;
        } else {
            y0[i] = data.y_obs[i];
            y1[i] = data.y_obs[i] + tau_hat;
        }
    }
    let ids = (1..=n).map(|i| format!("u{i}")).collect();
    FinitePopulation::new(data.covariates.clone(), Some(y1), Some(y0), ids)
}

/// Exact truth values via explicit sums and factorized solves, using the
/// first `k_used` covariates.
pub fn compute_truth(pop: &FinitePopulation, n1: usize, k_used: usize) -> Result<TruthSummary> {
    let popk = pop.first_covariates(k_used)?;
    let (y1, y0) = match (&popk.y1, &popk.y0) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::Invalid("compute_truth needs both potential outcomes".into())),
    };
    let n = popk.n;
    let n0 = n - n1;
    let moments = compute_moments(&popk, n1)?;

    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let ybar1 = mean(y1);
    let ybar0 = mean(y0);
    let tau_vec: Vec<f64> = y1.iter().zip(y0).map(|(a, b)| a - b).collect();
    let tau = mean(&tau_vec);

    let div = (n - 1) as f64;
    let s2 = |v: &[f64], m: f64| v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / div;
    let s2_1 = s2(y1, ybar1);
    let s2_0 = s2(y0, ybar0);
    let s2_tau = s2(&tau_vec, tau);

    let cov_with_x = |v: &[f64], m: f64| -> DVector<f64> {
        let mut out = DVector::zeros(k_used);
        for i in 0..n {
            let d = v[i] - m;
            for j in 0..k_used {
                out[j] += d * (popk.covariates[(i, j)] - moments.xbar[j]);
            }
        }
        out / div
    };
    let s1x = cov_with_x(y1, ybar1);
    let s0x = cov_with_x(y0, ybar0);
    let stx = &s1x - &s0x;

    let proj = |v: &DVector<f64>| v.dot(&moments.solve(v));
    let s2_1gx = proj(&s1x);
    let s2_0gx = proj(&s0x);
    let s2_tgx = proj(&stx);

    let vtt = s2_1 / n1 as f64 + s2_0 / n0 as f64 - s2_tau / n as f64;
    if vtt <= 0.0 {
        return Err(Error::Invalid("true V_tau_tau is not positive".into()));
    }
    let r2 = (s2_1gx / n1 as f64 + s2_0gx / n0 as f64 - s2_tgx / n as f64) / vtt;
    let s2_tau_res = s2_tau - s2_tgx;

    let gamma_n = gamma_diagnostic(&popk, n1)?;
    let delta_bound = 174.0 * gamma_n + 7.0 * gamma_n.powf(1.0 / 3.0);

    Ok(TruthSummary { tau, vtt, r2: r2.clamp(0.0, 1.0), s2_tau_res, gamma_n, delta_bound })
}

/// Berry-Esseen-type diagnostic gamma_n built from
/// u_i = (r1^{-1} Y_i(1) + r0^{-1} Y_i(0), x_i')'. The inverse symmetric
/// square root of S2_u comes from an eigendecomposition with eigenvalues
/// floored at 1e-12 * lambda_max.
pub fn gamma_diagnostic(pop: &FinitePopulation, n1: usize) -> Result<f64> {
    let (y1, y0) = match (&pop.y1, &pop.y0) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::Invalid("gamma diagnostic needs both potential outcomes".into())),
    };
    let n = pop.n;
    let k = pop.k;
    let dim = k + 1;
    let r1 = n1 as f64 / n as f64;
    let r0 = 1.0 - r1;

    let mut u = DMatrix::zeros(n, dim);
    for i in 0..n {
        u[(i, 0)] = y1[i] / r1 + y0[i] / r0;
        for j in 0..k {
            u[(i, j + 1)] = pop.covariates[(i, j)];
        }
    }
    let ubar = u.row_mean();
    let mut s2u = DMatrix::zeros(dim, dim);
    for i in 0..n {
        let d = (u.row(i) - &ubar).transpose();
        s2u += &d * d.transpose();
    }
    s2u /= (n - 1) as f64;

    let eig = nalgebra::SymmetricEigen::new(s2u);
    let lam_max = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    if !(lam_max > 0.0) {
        return Err(Error::SingularCovariates("S2_u has no positive eigenvalue".into()));
    }
    // inverse symmetric square root; eigenvalues floored so populations
    // whose outcomes are exactly linear in x still get a finite diagnostic
    let floor = 1e-12 * lam_max;
    let mut inv_sqrt = DMatrix::zeros(dim, dim);
    for (j, &l) in eig.eigenvalues.iter().enumerate() {
        let col = eig.eigenvectors.column(j);
        inv_sqrt += col * col.transpose() / l.max(floor).sqrt();
    }

    let mut sum = 0.0;
    for i in 0..n {
        let d = (u.row(i) - &ubar).transpose();
        let w = &inv_sqrt * d;
        sum += w.norm().powi(3);
    }
    Ok((dim as f64).powf(0.25) / (n as f64 * r1 * r0).sqrt() * sum / n as f64)
}

struct CellAccum {
    sum_err: f64,
    sum_err2: f64,
    covered: u64,
    sum_len: f64,
    sum_len2: f64,
    sum_tau: f64,
    sum_tau2: f64,
}

impl CellAccum {
    fn zero() -> Self {
        Self {
            sum_err: 0.0,
            sum_err2: 0.0,
            covered: 0,
            sum_len: 0.0,
            sum_len2: 0.0,
            sum_tau: 0.0,
            sum_tau2: 0.0,
        }
    }

    fn add(&mut self, tau_hat: f64, tau: f64, lo: f64, hi: f64) {
        let err = tau_hat - tau;
        self.sum_err += err;
        self.sum_err2 += err * err;
        if lo <= tau && tau <= hi {
            self.covered += 1;
        }
        let len = hi - lo;
        self.sum_len += len;
        self.sum_len2 += len * len;
        self.sum_tau += tau_hat;
        self.sum_tau2 += tau_hat * tau_hat;
    }

    fn merge(&mut self, other: &CellAccum) {
        self.sum_err += other.sum_err;
        self.sum_err2 += other.sum_err2;
        self.covered += other.covered;
        self.sum_len += other.sum_len;
        self.sum_len2 += other.sum_len2;
        self.sum_tau += other.sum_tau;
        self.sum_tau2 += other.sum_tau2;
    }
}

/// Replay the full design + inference pipeline `reps` times. Replicate r's
/// randomness is a pure function of (master_seed, r), so the report does
/// not depend on thread count or execution order.
pub fn run_replications(cfg: &SimConfig) -> Result<SimulationReport> {
    cfg.validate()?;
    let popk = cfg.pop.first_covariates(cfg.k_used)?;
    let moments = compute_moments(&popk, cfg.n1)?;
    let truth = compute_truth(&cfg.pop, cfg.n1, cfg.k_used)?;
    let (y1, y0) = (popk.y1.clone().unwrap(), popk.y0.clone().unwrap());

    let want_constrained = cfg.methods.contains(&CiMethod::Constrained);
    let nu_table = if want_constrained {
        Some(NuTable::build(1.0 - cfg.alpha / 2.0, cfg.k_used, cfg.tries, &cfg.mc)?)
    } else {
        None
    };

    // cell layout: per-hc cells for constrained/wald, one cell for neyman
    let mut layout: Vec<(CiMethod, HcVariant)> = Vec::new();
    for &m in &cfg.methods {
        match m {
            CiMethod::Neyman => layout.push((m, HcVariant::Hc0)),
            _ => {
                for &hc in &cfg.hc_variants {
                    layout.push((m, hc));
                }
            }
        }
    }

    let chunk = 64usize;
    let n_chunks = cfg.reps.div_ceil(chunk);
    let partials: Vec<Result<Vec<CellAccum>>> = map_indexed(n_chunks, |c| {
        let lo = c * chunk;
        let hi = ((c + 1) * chunk).min(cfg.reps);
        let mut accums: Vec<CellAccum> = layout.iter().map(|_| CellAccum::zero()).collect();
        for r in lo..hi {
            let seed = derive_seed(cfg.master_seed, r as u64);
            let bc = best_choice_with_retention(&popk, &moments, cfg.tries, seed, Some(false))?;
            let y_obs: Vec<f64> = bc
                .chosen
                .z
                .iter()
                .enumerate()
                .map(|(i, &zi)| if zi == 1 { y1[i] } else { y0[i] })
                .collect();
            let data = ObservedData::new(bc.chosen, y_obs, popk.covariates.clone())?;
            let tau_hat = diff_in_means(&data);

            let mut var_cache: Vec<Option<crate::inference::VarianceEstimate>> =
                vec![None; HcVariant::ALL.len()];
            for (slot, &(method, hc)) in layout.iter().enumerate() {
                let (lo_ci, hi_ci) = match method {
                    CiMethod::Neyman => {
                        let res = ci_neyman(&data, cfg.alpha)?;
                        (res.ci_lo, res.ci_hi)
                    }
                    CiMethod::Wald | CiMethod::Constrained => {
                        let idx = HcVariant::ALL.iter().position(|&h| h == hc).unwrap();
                        if var_cache[idx].is_none() {
                            var_cache[idx] = Some(estimate_variance(&data, &moments, hc)?);
                        }
                        let v = var_cache[idx].as_ref().unwrap();
                        let res = match method {
                            CiMethod::Wald => ci_wald(tau_hat, v, cfg.alpha)?,
                            _ => ci_constrained_with_table(
                                tau_hat,
                                v,
                                nu_table.as_ref().unwrap(),
                                cfg.alpha,
                            )?,
                        };
                        (res.ci_lo, res.ci_hi)
                    }
                };
                accums[slot].add(tau_hat, truth.tau, lo_ci, hi_ci);
            }
        }
        Ok(accums)
    });

    let mut totals: Vec<CellAccum> = layout.iter().map(|_| CellAccum::zero()).collect();
    for p in partials {
        for (acc, part) in totals.iter_mut().zip(p?.iter()) {
            acc.merge(part);
        }
    }

    let reps = cfg.reps as f64;
    let neyman_mean_len = layout
        .iter()
        .position(|&(m, _)| m == CiMethod::Neyman)
        .map(|i| totals[i].sum_len / reps);

    let cells = layout
        .iter()
        .zip(&totals)
        .map(|(&(method, hc), acc)| {
            let bias = acc.sum_err / reps;
            let err_var = (acc.sum_err2 / reps - bias * bias).max(0.0);
            let rmse = (acc.sum_err2 / reps).sqrt();
            let coverage = acc.covered as f64 / reps;
            let mean_length = acc.sum_len / reps;
            let len_var = (acc.sum_len2 / reps - mean_length * mean_length).max(0.0);
            let tau_mean = acc.sum_tau / reps;
            let var_tau_hat = (acc.sum_tau2 / reps - tau_mean * tau_mean).max(0.0);
            CellReport {
                method,
                hc,
                bias,
                bias_se: (err_var / reps).sqrt(),
                rmse,
                coverage,
                coverage_se: (coverage * (1.0 - coverage) / reps).sqrt(),
                mean_length,
                length_se: (len_var / reps).sqrt(),
                pct_length_vs_neyman: match (neyman_mean_len, method) {
                    (Some(nl), m) if m != CiMethod::Neyman && nl > 0.0 => {
                        Some(1.0 - mean_length / nl)
                    }
                    _ => None,
                },
                var_tau_hat,
            }
        })
        .collect();

    Ok(SimulationReport {
        n: cfg.pop.n,
        n1: cfg.n1,
        k_used: cfg.k_used,
        tries: cfg.tries,
        alpha: cfg.alpha,
        reps: cfg.reps,
        master_seed: cfg.master_seed,
        truth,
        cells,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WorstCase {
    /// Scaled so the CRE worst-case RMSE is 1 and its worst-case bias 0.
    pub worst_bias: f64,
    pub worst_rmse: f64,
    pub reps: usize,
}

/// Monte-Carlo worst-case bias and RMSE of the difference-in-means
/// estimator over unit-norm centered outcome vectors, under the
/// best-choice design with `tries` candidates.
///
/// tau_hat - tau is linear in the centered outcomes with weights
/// w_i = Z_i/n1 - (1-Z_i)/n0, so the worst-case MSE is the largest
/// eigenvalue of E[w w'] and the worst-case bias the norm of E[w]; both
/// are reported relative to the CRE scale n/(n1 n0 (n-1)).
pub fn worst_case_mse(
    pop: &FinitePopulation,
    n1: usize,
    tries: usize,
    reps: usize,
    master_seed: u64,
) -> Result<WorstCase> {
    if reps < 10_000 {
        return Err(Error::Invalid(format!("worst-case estimation needs reps >= 10000, got {reps}")));
    }
    let moments = compute_moments(pop, n1)?;
    let n = pop.n;
    let n0 = n - n1;
    let w1 = 1.0 / n1 as f64;
    let w0 = -1.0 / n0 as f64;

    let chunk = 512usize;
    let n_chunks = reps.div_ceil(chunk);
    let partials: Vec<Result<(DVector<f64>, DMatrix<f64>)>> = map_indexed(n_chunks, |c| {
        let lo = c * chunk;
        let hi = ((c + 1) * chunk).min(reps);
        let mut mean_w = DVector::zeros(n);
        let mut second = DMatrix::zeros(n, n);
        let mut w = DVector::zeros(n);
        for r in lo..hi {
            let seed = derive_seed(master_seed, r as u64);
            let bc = best_choice_with_retention(pop, &moments, tries, seed, Some(false))?;
            for (i, &zi) in bc.chosen.z.iter().enumerate() {
                w[i] = if zi == 1 { w1 } else { w0 };
            }
            mean_w += &w;
            second.syger(1.0, &w, &w, 1.0);
        }
        Ok((mean_w, second))
    });

    let mut mean_w = DVector::zeros(n);
    let mut second = DMatrix::zeros(n, n);
    for p in partials {
        let (m, s) = p?;
        mean_w += m;
        second += s;
    }
    mean_w /= reps as f64;
    second /= reps as f64;

    let scale = n as f64 / (n1 as f64 * n0 as f64 * (n - 1) as f64);
    let lam_max = second
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::MIN, f64::max);
    Ok(WorstCase {
        worst_bias: mean_w.norm() / scale.sqrt(),
        worst_rmse: (lam_max.max(0.0) / scale).sqrt(),
        reps,
    })
}

/// Implied relative increase in effective sample size from a CI length
/// reduction: 1/(1-reduction)^2 - 1.
pub fn percent_effective_sample_size(length_reduction: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&length_reduction) {
        return Err(Error::Domain(format!(
            "length reduction must lie in [0,1), got {length_reduction}"
        )));
    }
    Ok(1.0 / ((1.0 - length_reduction) * (1.0 - length_reduction)) - 1.0)
}

/// Synthetic population with iid standard normal covariates.
pub fn gaussian_population(n: usize, k: usize, seed: u64) -> FinitePopulation {
    let mut rng = substream(seed, 0);
    let covs = DMatrix::from_fn(n, k, |_, _| StandardNormal.sample(&mut rng));
    FinitePopulation::from_covariates(covs).expect("valid synthetic population")
}

/// Synthetic population with heavy-tailed (t with 2 degrees of freedom)
/// covariates.
pub fn heavy_tailed_population(n: usize, k: usize, seed: u64) -> FinitePopulation {
    let mut rng = substream(seed, 0);
    let covs = DMatrix::from_fn(n, k, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        let g1: f64 = StandardNormal.sample(&mut rng);
        let g2: f64 = StandardNormal.sample(&mut rng);
        z / ((g1 * g1 + g2 * g2) / 2.0).sqrt()
    });
    FinitePopulation::from_covariates(covs).expect("valid synthetic population")
}

/// Attach constant-effect potential outcomes y0 = x'beta + noise,
/// y1 = y0 + tau. Choosing noise_sd against |beta| sets the R^2 level.
pub fn constant_effect_outcomes(
    pop: &FinitePopulation,
    beta: &[f64],
    tau: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<FinitePopulation> {
    if beta.len() != pop.k {
        return Err(Error::Invalid("beta length must match covariate count".into()));
    }
    let mut rng = substream(seed, 1);
    let mut y0 = Vec::with_capacity(pop.n);
    for i in 0..pop.n {
        let mut v = 0.0;
        for (j, b) in beta.iter().enumerate() {
            v += b * pop.covariates[(i, j)];
        }
        let e: f64 = StandardNormal.sample(&mut rng);
        y0.push(v + noise_sd * e);
    }
    let y1 = y0.iter().map(|v| v + tau).collect();
    pop.with_outcomes(y1, y0)
}

/// Adversarial potential outcomes: estimate per-unit propensities under
/// the design by Monte Carlo, then map their ranks through the standard
/// normal quantile (y1 = y0 = transformed score). This is an
/// interpretation of a rank-based Gaussianization; the exact transform
/// parameters are a pinned choice.
pub fn propensity_transformed_outcomes(
    pop: &FinitePopulation,
    n1: usize,
    tries: usize,
    prop_reps: usize,
    seed: u64,
) -> Result<FinitePopulation> {
    let moments = compute_moments(pop, n1)?;
    let props = estimate_propensities(pop, &moments, tries, prop_reps, seed)?;
    let n = pop.n;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| props[a].partial_cmp(&props[b]).unwrap());
    let mut y = vec![0.0; n];
    for (rank, &i) in order.iter().enumerate() {
        y[i] = std_normal_quantile((rank as f64 + 0.5) / n as f64)?;
    }
    pop.with_outcomes(y.clone(), y)
}

/// Reveal observed outcomes of a stored population under an assignment.
pub fn reveal(pop: &FinitePopulation, assignment: &Assignment) -> Result<ObservedData> {
    let (y1, y0) = match (&pop.y1, &pop.y0) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::Invalid("population has no potential outcomes".into())),
    };
    let y_obs = assignment
        .z
        .iter()
        .enumerate()
        .map(|(i, &zi)| if zi == 1 { y1[i] } else { y0[i] })
        .collect();
    ObservedData::new(assignment.clone(), y_obs, pop.covariates.clone())
}
