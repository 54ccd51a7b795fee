//! Shared helpers for the integration suites: an independently coded
//! proximal-gradient reference for the penalized Poisson objective, plus
//! small random problem generators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tpsqr::design::{DesignProblem, DesignRow};

const ETA_CAP: f64 = 30.0;

/// Smooth part `(1/M) sum [-eta*y + exp(eta)]` and its gradient over
/// `[intercepts..., coefficients...]`, written from scratch against the
/// row-wise problem view.
pub fn smooth_value_grad(
    problem: &DesignProblem,
    intercepts: &[f64],
    coefs: &[f64],
) -> (f64, Vec<f64>) {
    let m = problem.n_rows() as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; intercepts.len() + coefs.len()];
    for row in &problem.rows {
        let mut eta = intercepts[row.group];
        for &(c, v) in &row.covariates {
            eta += v * coefs[c];
        }
        let mu = eta.clamp(-ETA_CAP, ETA_CAP).exp();
        let dmu = if eta.abs() > ETA_CAP { 0.0 } else { mu };
        value += -eta * row.y + mu;
        let resid = dmu - row.y;
        grad[row.group] += resid;
        for &(c, v) in &row.covariates {
            grad[intercepts.len() + c] += v * resid;
        }
    }
    for g in grad.iter_mut() {
        *g /= m;
    }
    (value / m, grad)
}

fn penalized_value(problem: &DesignProblem, b: &[f64], w: &[f64], lambda: f64) -> f64 {
    let (smooth, _) = smooth_value_grad(problem, b, w);
    smooth + lambda * w.iter().map(|v| v.abs()).sum::<f64>()
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

fn kkt_worst(problem: &DesignProblem, b: &[f64], w: &[f64], lambda: f64) -> f64 {
    let (_, grad) = smooth_value_grad(problem, b, w);
    let mut worst = 0.0f64;
    for (g, &bi) in b.iter().enumerate() {
        if bi <= -ETA_CAP {
            continue;
        }
        worst = worst.max(grad[g].abs());
    }
    for (c, &wc) in w.iter().enumerate() {
        let g = grad[b.len() + c];
        let violation = if wc != 0.0 {
            (g + lambda * wc.signum()).abs()
        } else {
            (g.abs() - lambda).max(0.0)
        };
        worst = worst.max(violation);
    }
    worst
}

/// FISTA-style proximal gradient on the identical penalized objective:
/// backtracking line search on the smooth part, soft-threshold prox on the
/// coefficient block only. Returns `(intercepts, coefficients)`.
pub fn prox_grad_reference(
    problem: &DesignProblem,
    lambda: f64,
    kkt_tol: f64,
    max_iter: usize,
) -> (Vec<f64>, Vec<f64>) {
    let n_b = problem.n_groups;
    let n_w = problem.n_cols;
    let mut b = problem.null_intercepts();
    let mut w = vec![0.0; n_w];
    let mut yb = b.clone();
    let mut yw = w.clone();
    let mut momentum = 1.0f64;
    let mut step = 1.0f64;
    let mut best_obj = penalized_value(problem, &b, &w, lambda);

    for iter in 0..max_iter {
        let (fy, grad) = smooth_value_grad(problem, &yb, &yw);
        // backtracking: f(x+) <= f(y) + <g, x+-y> + ||x+-y||^2 / (2 step)
        let (nb, nw, fx) = loop {
            let nb: Vec<f64> = (0..n_b).map(|g| yb[g] - step * grad[g]).collect();
            let nw: Vec<f64> = (0..n_w)
                .map(|c| soft_threshold(yw[c] - step * grad[n_b + c], step * lambda))
                .collect();
            let (fx, _) = smooth_value_grad(problem, &nb, &nw);
            let mut inner = 0.0;
            let mut sq = 0.0;
            for g in 0..n_b {
                let d = nb[g] - yb[g];
                inner += grad[g] * d;
                sq += d * d;
            }
            for c in 0..n_w {
                let d = nw[c] - yw[c];
                inner += grad[n_b + c] * d;
                sq += d * d;
            }
            if fx <= fy + inner + sq / (2.0 * step) + 1e-18 || step < 1e-14 {
                break (nb, nw, fx);
            }
            step *= 0.5;
        };

        let next_momentum = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let beta = (momentum - 1.0) / next_momentum;
        let obj = fx + lambda * nw.iter().map(|v| v.abs()).sum::<f64>();
        if obj > best_obj {
            // monotone restart: drop the momentum, take the plain step
            momentum = 1.0;
            yb = nb.clone();
            yw = nw.clone();
        } else {
            best_obj = obj;
            momentum = next_momentum;
            for g in 0..n_b {
                yb[g] = nb[g] + beta * (nb[g] - b[g]);
            }
            for c in 0..n_w {
                yw[c] = nw[c] + beta * (nw[c] - w[c]);
            }
        }
        b = nb;
        w = nw;
        step *= 1.5;

        if iter % 20 == 19 && kkt_worst(problem, &b, &w, lambda) < kkt_tol {
            break;
        }
    }
    (b, w)
}

pub fn poisson_draw(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    let limit = (-mean).exp();
    let mut product: f64 = rng.gen();
    let mut count = 0;
    while product > limit {
        product *= rng.gen::<f64>();
        count += 1;
    }
    count
}

/// Random penalized Poisson problem: sparse covariates, a handful of
/// intercept groups, responses drawn from a ground-truth linear predictor
/// so the design carries real signal.
pub fn random_problem(seed: u64, max_rows: usize, max_cols: usize) -> DesignProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_rows = rng.gen_range(max_rows / 2..=max_rows);
    let n_cols = rng.gen_range(2..=max_cols);
    let n_groups = rng.gen_range(1..=4usize);

    let true_b: Vec<f64> = (0..n_groups).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let true_w: Vec<f64> = (0..n_cols)
        .map(|_| {
            if rng.gen_bool(0.3) {
                rng.gen_range(-0.6..0.6)
            } else {
                0.0
            }
        })
        .collect();

    let mut rows = Vec::with_capacity(n_rows);
    for r in 0..n_rows {
        let group = r % n_groups;
        let mut covariates = Vec::new();
        for c in 0..n_cols {
            if rng.gen_bool(0.4) {
                covariates.push((c, rng.gen_range(0.0..1.5)));
            }
        }
        let mut eta = true_b[group];
        for &(c, v) in &covariates {
            eta += v * true_w[c];
        }
        let y = poisson_draw(&mut rng, eta.clamp(-4.0, 3.0).exp()) as f64;
        rows.push(DesignRow { y, group, covariates });
    }
    let group_type = (1..=n_groups).collect();
    DesignProblem::new(rows, n_cols, n_groups, group_type, false)
}
