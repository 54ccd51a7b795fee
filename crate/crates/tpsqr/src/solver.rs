//! L1-penalized Poisson pseudo-likelihood solver: proximal Newton outer
//! iterations with cyclic soft-threshold coordinate descent on the quadratic
//! approximation, warm-started regularization paths, and AIC selection.
//!
//! The objective is `(1/M) sum_rows [-eta*y + exp(eta)] + lambda * sum |w|`
//! with `eta = intercept(group) + covariates . w`. Intercepts are never
//! penalized; in fixed-effects mode they are profiled in closed form at the
//! start of every outer iteration.

use serde::Serialize;

use crate::design::{lambda_max, DesignProblem};
use crate::error::{Result, TpsqrError};

/// Linear predictors beyond this magnitude are clamped before `exp`.
pub const ETA_BOUND: f64 = 30.0;

/// `exp(clamp(eta))` and its derivative (zero outside the clamp).
fn mu_and_dmu(eta: f64) -> (f64, f64) {
    if eta.abs() <= ETA_BOUND {
        let mu = eta.exp();
        (mu, mu)
    } else {
        (eta.clamp(-ETA_BOUND, ETA_BOUND).exp(), 0.0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FitConfig {
    pub lambda: f64,
    pub tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            lambda: 0.0,
            tol: 1e-7,
            max_outer: 200,
            max_inner: 500,
        }
    }
}

impl FitConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        FitConfig { lambda, ..Default::default() }
    }
}

/// A fitted model: per-group intercepts, pair coefficients, and diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub lambda: f64,
    pub intercepts: Vec<f64>,
    pub coefs: Vec<f64>,
    /// Unpenalized Poisson log pseudo-likelihood at the solution, up to the
    /// data-only constant `-sum log(y!)`.
    pub loglik: f64,
    /// Penalized log pseudo-likelihood `loglik - M*lambda*||W||_1`, i.e.
    /// `-M` times the objective actually minimized.
    pub penalized_loglik: f64,
    pub active_set: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_residual: f64,
}

impl FitResult {
    /// Free parameter count: nonzero pair coefficients plus free intercepts.
    pub fn n_parameters(&self) -> usize {
        self.active_set.len() + self.intercepts.len()
    }

    /// `2k - 2*M*(-F)` on the full fitted objective, penalty included.
    pub fn aic(&self) -> f64 {
        2.0 * self.n_parameters() as f64 - 2.0 * self.penalized_loglik
    }
}

/// Warm-started regularization path with per-fit AIC.
#[derive(Debug, Clone, Serialize)]
pub struct PathResult {
    pub lambdas: Vec<f64>,
    pub fits: Vec<FitResult>,
    pub aic: Vec<f64>,
}

fn compute_eta(problem: &DesignProblem, intercepts: &[f64], coefs: &[f64]) -> Vec<f64> {
    problem
        .rows
        .iter()
        .map(|row| {
            let mut eta = intercepts[row.group];
            for &(c, v) in &row.covariates {
                eta += v * coefs[c];
            }
            eta
        })
        .collect()
}

/// Exact value and gradient of the smooth part
/// `F = (1/M) sum [-eta*y + exp(eta)]`. The gradient covers intercepts
/// first (one per group), then the pair coefficients.
pub fn objective_and_gradient(
    problem: &DesignProblem,
    intercepts: &[f64],
    coefs: &[f64],
) -> (f64, Vec<f64>) {
    let m = problem.n_rows() as f64;
    let eta = compute_eta(problem, intercepts, coefs);
    let mut value = 0.0;
    let mut row_grad = vec![0.0; problem.n_rows()];
    for (r, row) in problem.rows.iter().enumerate() {
        let (mu, dmu) = mu_and_dmu(eta[r]);
        value += -eta[r] * row.y + mu;
        row_grad[r] = dmu - row.y;
    }
    value /= m;
    let mut grad = vec![0.0; problem.n_groups + problem.n_cols];
    for (r, row) in problem.rows.iter().enumerate() {
        grad[row.group] += row_grad[r] / m;
    }
    for c in 0..problem.n_cols {
        let mut g = 0.0;
        for &(r, v) in problem.column(c) {
            g += v * row_grad[r as usize];
        }
        grad[problem.n_groups + c] = g / m;
    }
    (value, grad)
}

fn penalized_objective(
    problem: &DesignProblem,
    intercepts: &[f64],
    coefs: &[f64],
    lambda: f64,
) -> f64 {
    let m = problem.n_rows() as f64;
    let eta = compute_eta(problem, intercepts, coefs);
    let mut value = 0.0;
    for (r, row) in problem.rows.iter().enumerate() {
        let (mu, _) = mu_and_dmu(eta[r]);
        value += -eta[r] * row.y + mu;
    }
    value / m + lambda * coefs.iter().map(|w| w.abs()).sum::<f64>()
}

/// Independent KKT audit from the analytic gradient: for active coefficients
/// `|g_j + lambda*sign(w_j)|`, for inactive `max(0, |g_j| - lambda)`, plus
/// intercept stationarity (fixed-effects intercepts with zero-sum groups are
/// pinned at the clamp and skipped).
pub fn kkt_residual(
    problem: &DesignProblem,
    intercepts: &[f64],
    coefs: &[f64],
    lambda: f64,
) -> f64 {
    let (_, grad) = objective_and_gradient(problem, intercepts, coefs);
    let mut worst = 0.0f64;
    for (g, &b) in intercepts.iter().enumerate() {
        if b <= -ETA_BOUND {
            continue; // zero-response group pinned at the bound
        }
        worst = worst.max(grad[g].abs());
    }
    for c in 0..problem.n_cols {
        let g = grad[problem.n_groups + c];
        let w = coefs[c];
        let violation = if w != 0.0 {
            (g + lambda * w.signum()).abs()
        } else {
            (g.abs() - lambda).max(0.0)
        };
        worst = worst.max(violation);
    }
    worst
}

fn soft_threshold(u: f64, lambda: f64) -> f64 {
    if u > lambda {
        u - lambda
    } else if u < -lambda {
        u + lambda
    } else {
        0.0
    }
}

/// Closed-form profile of fixed-effect intercepts:
/// `alpha_g = log(sum_g y / sum_g exp(eta - alpha_g))`.
fn profile_intercepts(problem: &DesignProblem, intercepts: &mut [f64], coefs: &[f64]) {
    let mut y_sums = vec![0.0; problem.n_groups];
    let mut exp_sums = vec![0.0; problem.n_groups];
    for row in &problem.rows {
        let mut eta_rest = 0.0;
        for &(c, v) in &row.covariates {
            eta_rest += v * coefs[c];
        }
        y_sums[row.group] += row.y;
        exp_sums[row.group] += eta_rest.clamp(-ETA_BOUND, ETA_BOUND).exp();
    }
    for g in 0..problem.n_groups {
        intercepts[g] = if y_sums[g] > 0.0 && exp_sums[g] > 0.0 {
            (y_sums[g] / exp_sums[g]).ln().clamp(-ETA_BOUND, ETA_BOUND)
        } else {
            -ETA_BOUND
        };
    }
}

/// Fit the penalized problem, optionally warm-starting from a previous
/// solution's `(intercepts, coefs)`.
pub fn fit(
    problem: &DesignProblem,
    config: &FitConfig,
    warm_start: Option<(&[f64], &[f64])>,
) -> Result<FitResult> {
    assert!(config.lambda >= 0.0, "lambda must be nonnegative");
    assert!(config.tol > 0.0 && config.max_outer >= 1 && config.max_inner >= 1);
    if problem.n_rows() == 0 {
        return Err(TpsqrError::Validation("empty design problem".into()));
    }
    let lambda = config.lambda;
    let m = problem.n_rows() as f64;

    let (mut intercepts, mut coefs) = match warm_start {
        Some((b, w)) => (b.to_vec(), w.to_vec()),
        None => (problem.null_intercepts(), vec![0.0; problem.n_cols]),
    };
    if problem.fixed_effects {
        profile_intercepts(problem, &mut intercepts, &coefs);
    }

    let active_cols: Vec<usize> = (0..problem.n_cols)
        .filter(|&c| !problem.column(c).is_empty())
        .collect();
    let mut rows_by_group: Vec<Vec<u32>> = vec![Vec::new(); problem.n_groups];
    for (r, row) in problem.rows.iter().enumerate() {
        rows_by_group[row.group].push(r as u32);
    }

    let mut objective = penalized_objective(problem, &intercepts, &coefs, lambda);
    let mut converged = false;
    let mut iterations = 0;

    for outer in 1..=config.max_outer {
        iterations = outer;
        if problem.fixed_effects {
            profile_intercepts(problem, &mut intercepts, &coefs);
        }
        let prev_intercepts = intercepts.clone();
        let prev_coefs = coefs.clone();

        // quadratic approximation at the current point
        let eta0 = compute_eta(problem, &intercepts, &coefs);
        let mut weights = vec![0.0; problem.n_rows()];
        let mut work_resid = vec![0.0; problem.n_rows()];
        for (r, row) in problem.rows.iter().enumerate() {
            let (mu, dmu) = mu_and_dmu(eta0[r]);
            weights[r] = dmu.max(1e-10);
            work_resid[r] = row.y - mu;
        }
        let curvature: Vec<f64> = active_cols
            .iter()
            .map(|&c| {
                problem
                    .column(c)
                    .iter()
                    .map(|&(r, v)| v * v * weights[r as usize])
                    .sum::<f64>()
                    / m
            })
            .collect();

        for _sweep in 1..=config.max_inner {
            let mut max_delta = 0.0f64;
            for (ci, &c) in active_cols.iter().enumerate() {
                let d = curvature[ci];
                if d <= 0.0 {
                    continue;
                }
                let g: f64 = problem
                    .column(c)
                    .iter()
                    .map(|&(r, v)| v * work_resid[r as usize])
                    .sum::<f64>()
                    / m;
                let w_new = soft_threshold(g + d * coefs[c], lambda) / d;
                let delta = w_new - coefs[c];
                if delta != 0.0 {
                    for &(r, v) in problem.column(c) {
                        work_resid[r as usize] -= weights[r as usize] * v * delta;
                    }
                    coefs[c] = w_new;
                    max_delta = max_delta.max(delta.abs() / (1.0 + w_new.abs()));
                }
            }
            for g in 0..problem.n_groups {
                let rows = &rows_by_group[g];
                if rows.is_empty() {
                    continue;
                }
                let num: f64 = rows.iter().map(|&r| work_resid[r as usize]).sum();
                let den: f64 = rows.iter().map(|&r| weights[r as usize]).sum();
                let proposed =
                    (intercepts[g] + num / den).clamp(-ETA_BOUND, ETA_BOUND);
                let delta = proposed - intercepts[g];
                if delta != 0.0 {
                    intercepts[g] = proposed;
                    for &r in rows {
                        work_resid[r as usize] -= weights[r as usize] * delta;
                    }
                    max_delta = max_delta.max(delta.abs() / (1.0 + intercepts[g].abs()));
                }
            }
            if max_delta < config.tol {
                break;
            }
        }

        // accept the proximal Newton step with step-halving on divergence
        let mut new_objective = penalized_objective(problem, &intercepts, &coefs, lambda);
        if !new_objective.is_finite() || new_objective > objective + 1e-12 * (1.0 + objective.abs())
        {
            let proposed_intercepts = intercepts.clone();
            let proposed_coefs = coefs.clone();
            let mut step = 1.0;
            let mut recovered = false;
            for _ in 0..30 {
                step *= 0.5;
                for i in 0..intercepts.len() {
                    intercepts[i] =
                        prev_intercepts[i] + step * (proposed_intercepts[i] - prev_intercepts[i]);
                }
                for i in 0..coefs.len() {
                    coefs[i] = prev_coefs[i] + step * (proposed_coefs[i] - prev_coefs[i]);
                }
                new_objective = penalized_objective(problem, &intercepts, &coefs, lambda);
                if new_objective.is_finite() && new_objective <= objective {
                    recovered = true;
                    break;
                }
            }
            if !recovered {
                return Err(TpsqrError::NonConvergence {
                    iterations: outer,
                    objective: new_objective,
                });
            }
        }

        let mut max_change = 0.0f64;
        for (w, &w0) in coefs.iter().zip(&prev_coefs) {
            max_change = max_change.max((w - w0).abs() / (1.0 + w.abs()));
        }
        for (b, &b0) in intercepts.iter().zip(&prev_intercepts) {
            max_change = max_change.max((b - b0).abs() / (1.0 + b.abs()));
        }
        let rel_change = (objective - new_objective).abs() / (1.0 + objective.abs());
        objective = new_objective;
        if rel_change < config.tol && max_change < config.tol {
            converged = true;
            break;
        }
    }

    let eta = compute_eta(problem, &intercepts, &coefs);
    let loglik: f64 = problem
        .rows
        .iter()
        .zip(&eta)
        .map(|(row, &e)| row.y * e - mu_and_dmu(e).0)
        .sum();
    let active_set: Vec<usize> = (0..problem.n_cols).filter(|&c| coefs[c] != 0.0).collect();
    let kkt = kkt_residual(problem, &intercepts, &coefs, lambda);
    let penalty: f64 = m * lambda * coefs.iter().map(|w| w.abs()).sum::<f64>();
    Ok(FitResult {
        lambda,
        intercepts,
        coefs,
        loglik,
        penalized_loglik: loglik - penalty,
        active_set,
        iterations,
        converged,
        kkt_residual: kkt,
    })
}

/// Log-spaced grid from `lambda_max` down to `lambda_max * lambda_min_ratio`.
pub fn lambda_grid(lambda_max: f64, n_lambdas: usize, lambda_min_ratio: f64) -> Vec<f64> {
    assert!(n_lambdas >= 2 && lambda_min_ratio > 0.0 && lambda_min_ratio < 1.0);
    if lambda_max <= 0.0 {
        return vec![0.0];
    }
    (0..n_lambdas)
        .map(|i| lambda_max * lambda_min_ratio.powf(i as f64 / (n_lambdas - 1) as f64))
        .collect()
}

/// Fit a warm-started path over a log-spaced grid.
pub fn fit_path(
    problem: &DesignProblem,
    n_lambdas: usize,
    lambda_min_ratio: f64,
    config: &FitConfig,
) -> Result<PathResult> {
    let lmax = lambda_max(problem);
    let lambdas = lambda_grid(lmax, n_lambdas, lambda_min_ratio);
    let mut fits: Vec<FitResult> = Vec::with_capacity(lambdas.len());
    for (i, &lambda) in lambdas.iter().enumerate() {
        let fit_config = FitConfig { lambda, ..*config };
        let warm = fits
            .last()
            .map(|f: &FitResult| (f.intercepts.as_slice(), f.coefs.as_slice()));
        let result = fit(problem, &fit_config, warm).map_err(|e| match e {
            TpsqrError::NonConvergence { iterations, objective } => TpsqrError::Validation(
                format!("path point {i} (lambda={lambda:.6e}) failed to converge after {iterations} iterations (objective {objective})"),
            ),
            other => other,
        })?;
        fits.push(result);
    }
    let aic = fits.iter().map(|f| f.aic()).collect();
    Ok(PathResult { lambdas, fits, aic })
}

/// The fit with minimal AIC; ties break toward larger lambda.
pub fn select_aic(path: &PathResult) -> Result<&FitResult> {
    if path.fits.is_empty() {
        return Err(TpsqrError::Validation("empty path".into()));
    }
    let mut best = 0;
    for i in 1..path.fits.len() {
        if path.aic[i] < path.aic[best] {
            best = i;
        }
    }
    Ok(&path.fits[best])
}
