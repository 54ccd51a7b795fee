//! Exact small-scale PSQR machinery: truncated log-partition, exact
//! conditional PMFs, and a systematic-scan Gibbs sampler. These serve as
//! ground truth for the recovery experiments and as the brute-force oracle
//! in tests; the exact operations are guarded to desk scale.

use std::io::Write;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TpsqrError};

/// Hard cap on enumerable state spaces for the exact operations.
const STATE_GUARD: u64 = 10_000_000;
/// Tail-mass fraction allowed in the last truncation shell.
const TAIL_LIMIT: f64 = 1e-10;
/// Stricter bound applied when constructing models for sampling.
const MODEL_TAIL_LIMIT: f64 = 1e-12;

/// A PSQR over `p` count variables: symmetric `p x p` matrix with node
/// potentials on the diagonal and pairwise square-root interactions off it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsqrModel {
    p: usize,
    theta: Vec<Vec<f64>>,
}

impl PsqrModel {
    pub fn new(theta: Vec<Vec<f64>>) -> Result<Self> {
        let p = theta.len();
        if p == 0 || theta.iter().any(|row| row.len() != p) {
            return Err(TpsqrError::Dimension("theta must be square and nonempty".into()));
        }
        for j in 0..p {
            for k in 0..p {
                if !theta[j][k].is_finite() {
                    return Err(TpsqrError::Validation("theta entries must be finite".into()));
                }
                if theta[j][k] != theta[k][j] {
                    return Err(TpsqrError::Validation(format!(
                        "theta not symmetric at ({j},{k})"
                    )));
                }
            }
        }
        Ok(PsqrModel { p, theta })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn theta(&self) -> &[Vec<f64>] {
        &self.theta
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.theta[j][k]
    }

    /// Nonzero off-diagonal support as unordered index pairs.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges = Vec::new();
        for j in 0..self.p {
            for k in (j + 1)..self.p {
                if self.theta[j][k] != 0.0 {
                    edges.push((j, k));
                }
            }
        }
        edges
    }

    /// Worst-case conditional tail check: for every coordinate, the largest
    /// achievable conditional weight at `x_max` must be a negligible
    /// fraction of the conditional's total mass. Negative couplings can
    /// only shrink the conditional natural parameter, so only positive
    /// entries enter the worst case.
    pub fn tail_ok(&self, trunc: &TruncationConfig, limit: f64) -> bool {
        for j in 0..self.p {
            let s_max: f64 = self.theta[j][j]
                + (0..self.p)
                    .filter(|&k| k != j)
                    .map(|k| self.theta[j][k].max(0.0) * (trunc.x_max as f64).sqrt())
                    .sum::<f64>();
            if univariate_tail_fraction(s_max, trunc.x_max) >= limit {
                return false;
            }
        }
        true
    }
}

/// Per-coordinate support cap: counts live on `{0..x_max}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationConfig {
    pub x_max: usize,
}

impl TruncationConfig {
    pub fn new(x_max: usize) -> Result<Self> {
        if x_max < 1 {
            return Err(TpsqrError::Validation("x_max must be >= 1".into()));
        }
        Ok(TruncationConfig { x_max })
    }
}

impl Default for TruncationConfig {
    fn default() -> Self {
        TruncationConfig { x_max: 30 }
    }
}

fn log_factorial_table(x_max: usize) -> Vec<f64> {
    let mut table = vec![0.0; x_max + 1];
    for x in 1..=x_max {
        table[x] = table[x - 1] + (x as f64).ln();
    }
    table
}

fn sqrt_table(x_max: usize) -> Vec<f64> {
    (0..=x_max).map(|x| (x as f64).sqrt()).collect()
}

/// Fraction of the univariate weight `exp(s*sqrt(x) - log x!)` sitting at
/// `x = x_max`.
fn univariate_tail_fraction(s: f64, x_max: usize) -> f64 {
    let lfact = log_factorial_table(x_max);
    let sq = sqrt_table(x_max);
    let logs: Vec<f64> = (0..=x_max).map(|x| s * sq[x] - lfact[x]).collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logs.iter().map(|lw| (lw - max).exp()).sum();
    (logs[x_max] - max).exp() / total
}

/// Log weight of one state under the PSQR joint (without the partition).
fn log_joint_weight(model: &PsqrModel, x: &[usize], sq: &[f64], lfact: &[f64]) -> f64 {
    let p = model.p();
    let mut lw = 0.0;
    for j in 0..p {
        lw += model.get(j, j) * sq[x[j]] - lfact[x[j]];
        for k in (j + 1)..p {
            lw += model.get(j, k) * sq[x[j]] * sq[x[k]];
        }
    }
    lw
}

/// Truncated log-partition: log of the weight sum over `{0..x_max}^p`.
///
/// Errors when the state space exceeds the guard or when the last shell
/// (states with some coordinate at `x_max`) carries a tail-mass fraction of
/// `1e-10` or more.
pub fn log_partition(model: &PsqrModel, trunc: &TruncationConfig) -> Result<f64> {
    let p = model.p();
    let base = trunc.x_max as u64 + 1;
    let states = base.checked_pow(p as u32).unwrap_or(u64::MAX);
    if states > STATE_GUARD {
        return Err(TpsqrError::StateSpaceGuard { states, limit: STATE_GUARD });
    }
    let sq = sqrt_table(trunc.x_max);
    let lfact = log_factorial_table(trunc.x_max);

    // online log-sum-exp over all states, tracking the boundary shell
    let mut max_lw = f64::NEG_INFINITY;
    let mut total = 0.0f64;
    let mut shell = 0.0f64;
    let mut x = vec![0usize; p];
    loop {
        let lw = log_joint_weight(model, &x, &sq, &lfact);
        if lw > max_lw {
            let rescale = (max_lw - lw).exp();
            total *= rescale;
            shell *= rescale;
            max_lw = lw;
        }
        let term = (lw - max_lw).exp();
        total += term;
        if x.iter().any(|&v| v == trunc.x_max) {
            shell += term;
        }
        // mixed-radix increment
        let mut carry = true;
        for digit in x.iter_mut() {
            if *digit < trunc.x_max {
                *digit += 1;
                carry = false;
                break;
            }
            *digit = 0;
        }
        if carry {
            break;
        }
    }
    let fraction = shell / total;
    if fraction >= TAIL_LIMIT {
        return Err(TpsqrError::TailMass { fraction, limit: TAIL_LIMIT });
    }
    Ok(max_lw + total.ln())
}

/// Exact conditional PMF of coordinate `j` given the other coordinates,
/// normalized over the truncated support.
///
/// `x_others` has length `p - 1`: the remaining coordinates in order with
/// `j` removed.
pub fn conditional_pmf(
    model: &PsqrModel,
    j: usize,
    x_others: &[usize],
    trunc: &TruncationConfig,
) -> Result<Vec<f64>> {
    let p = model.p();
    assert!(j < p, "coordinate {j} outside 0..{p}");
    assert_eq!(x_others.len(), p - 1, "expected {} conditioning values", p - 1);
    let sq = sqrt_table(trunc.x_max.max(x_others.iter().copied().max().unwrap_or(0)));
    let lfact = log_factorial_table(trunc.x_max);

    let mut s = model.get(j, j);
    let mut others = x_others.iter();
    for k in 0..p {
        if k == j {
            continue;
        }
        s += model.get(j, k) * sq[*others.next().unwrap()];
    }
    let logs: Vec<f64> = (0..=trunc.x_max).map(|x| s * sq[x] - lfact[x]).collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|lw| (lw - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let fraction = weights[trunc.x_max] / total;
    if fraction >= TAIL_LIMIT {
        return Err(TpsqrError::TailMass { fraction, limit: TAIL_LIMIT });
    }
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// Systematic-scan Gibbs sampler, reproducible under `seed`. Returns
/// `n_samples` count vectors collected after `burn_in` sweeps, spaced by
/// `thin` sweeps.
pub fn gibbs_sample(
    model: &PsqrModel,
    n_samples: usize,
    burn_in: usize,
    thin: usize,
    trunc: &TruncationConfig,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    assert!(thin >= 1, "thin must be >= 1");
    let p = model.p();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = vec![0usize; p];
    let mut samples = Vec::with_capacity(n_samples);
    let mut others = vec![0usize; p.saturating_sub(1)];
    let total_sweeps = burn_in + n_samples * thin;
    for sweep in 0..total_sweeps {
        for j in 0..p {
            let mut idx = 0;
            for k in 0..p {
                if k != j {
                    others[idx] = state[k];
                    idx += 1;
                }
            }
            let pmf = conditional_pmf(model, j, &others, trunc)?;
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut drawn = trunc.x_max;
            for (x, &prob) in pmf.iter().enumerate() {
                acc += prob;
                if u < acc {
                    drawn = x;
                    break;
                }
            }
            state[j] = drawn;
        }
        if sweep >= burn_in && (sweep - burn_in) % thin == 0 {
            samples.push(state.clone());
        }
    }
    Ok(samples)
}

/// Random sparse ground-truth generator for recovery experiments: the given
/// number of distinct unordered edges with magnitudes in `[0.2, 0.5]` and
/// random signs, diagonals in `[-0.5, 0.5]`; candidates failing the tail
/// check are rejected and redrawn.
pub fn generate_sparse_model(
    p: usize,
    edge_count: usize,
    trunc: &TruncationConfig,
    seed: u64,
) -> Result<PsqrModel> {
    let all_pairs: Vec<(usize, usize)> = (0..p)
        .flat_map(|j| ((j + 1)..p).map(move |k| (j, k)))
        .collect();
    if edge_count > all_pairs.len() {
        return Err(TpsqrError::Validation(format!(
            "edge_count {edge_count} exceeds {} available pairs",
            all_pairs.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _attempt in 0..1000 {
        let mut theta = vec![vec![0.0; p]; p];
        for j in 0..p {
            theta[j][j] = rng.gen_range(-0.5..0.5);
        }
        let mut pairs = all_pairs.clone();
        for i in 0..edge_count {
            let pick = rng.gen_range(i..pairs.len());
            pairs.swap(i, pick);
            let (j, k) = pairs[i];
            let magnitude = rng.gen_range(0.2..0.5);
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            theta[j][k] = sign * magnitude;
            theta[k][j] = sign * magnitude;
        }
        let model = PsqrModel::new(theta)?;
        if model.tail_ok(trunc, MODEL_TAIL_LIMIT) {
            return Ok(model);
        }
    }
    Err(TpsqrError::Validation(
        "could not generate a model passing the tail check".into(),
    ))
}

/// Lag-k autocorrelation of one coordinate of a sample chain, for mixing
/// diagnostics.
pub fn autocorrelation(samples: &[Vec<usize>], coord: usize, max_lag: usize) -> Vec<f64> {
    let n = samples.len();
    let series: Vec<f64> = samples.iter().map(|s| s[coord] as f64).collect();
    let mean = series.iter().sum::<f64>() / n as f64;
    let var: f64 = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    (1..=max_lag)
        .map(|lag| {
            if var == 0.0 || lag >= n {
                return 0.0;
            }
            let cov: f64 = (0..n - lag)
                .map(|i| (series[i] - mean) * (series[i + lag] - mean))
                .sum::<f64>()
                / n as f64;
            cov / var
        })
        .collect()
}

/// Write samples as CSV: one row per sample, `p` count columns `x1..xp`.
pub fn write_samples_csv<W: Write>(writer: W, samples: &[Vec<usize>], p: usize) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record((1..=p).map(|j| format!("x{j}")))?;
    for sample in samples {
        out.write_record(sample.iter().map(|x| x.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decoupled(diag: &[f64]) -> PsqrModel {
        let p = diag.len();
        let mut theta = vec![vec![0.0; p]; p];
        for j in 0..p {
            theta[j][j] = diag[j];
        }
        PsqrModel::new(theta).unwrap()
    }

    #[test]
    fn univariate_zero_potential_partition_tends_to_one() {
        // sum_{x} 1/x! -> e, so the log-partition tends to 1
        let model = decoupled(&[0.0]);
        let lp = log_partition(&model, &TruncationConfig::new(20).unwrap()).unwrap();
        assert!((lp - 1.0).abs() < 1e-12, "{lp}");
    }

    #[test]
    fn independence_factorizes_partition() {
        let trunc = TruncationConfig::new(15).unwrap();
        let joint = decoupled(&[0.1, -0.4]);
        let lp = log_partition(&joint, &trunc).unwrap();
        let lp1 = log_partition(&decoupled(&[0.1]), &trunc).unwrap();
        let lp2 = log_partition(&decoupled(&[-0.4]), &trunc).unwrap();
        assert!((lp - (lp1 + lp2)).abs() < 1e-12);
    }

    #[test]
    fn coupled_partition_matches_double_loop() {
        // independently coded double-loop summation for p = 2
        let theta = vec![vec![0.1, -0.3], vec![-0.3, 0.2]];
        let model = PsqrModel::new(theta).unwrap();
        let x_max = 15;
        let lfact = |x: usize| (1..=x).map(|v| (v as f64).ln()).sum::<f64>();
        let mut total = 0.0f64;
        for x1 in 0..=x_max {
            for x2 in 0..=x_max {
                let lw = 0.1 * (x1 as f64).sqrt() + 0.2 * (x2 as f64).sqrt()
                    - 0.3 * (x1 as f64).sqrt() * (x2 as f64).sqrt()
                    - lfact(x1)
                    - lfact(x2);
                total += lw.exp();
            }
        }
        let lp = log_partition(&model, &TruncationConfig::new(x_max).unwrap()).unwrap();
        assert!((lp - total.ln()).abs() < 1e-10, "{lp} vs {}", total.ln());
    }

    #[test]
    fn state_space_guard_trips() {
        let model = decoupled(&[0.0; 8]);
        let err = log_partition(&model, &TruncationConfig::new(30).unwrap()).unwrap_err();
        assert!(matches!(err, TpsqrError::StateSpaceGuard { .. }));
    }

    #[test]
    fn tail_violation_reported() {
        // strongly excitatory univariate model at a tiny truncation
        let model = decoupled(&[3.0]);
        let err = log_partition(&model, &TruncationConfig::new(5).unwrap()).unwrap_err();
        assert!(matches!(err, TpsqrError::TailMass { .. }));
    }

    #[test]
    fn decoupled_conditional_ignores_others() {
        let model = decoupled(&[-3.0, -3.0]);
        let trunc = TruncationConfig::new(10).unwrap();
        let a = conditional_pmf(&model, 0, &[0], &trunc).unwrap();
        let b = conditional_pmf(&model, 0, &[7], &trunc).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn conditional_sums_to_one() {
        let theta = vec![vec![-1.0, -0.3], vec![-0.3, -0.5]];
        let model = PsqrModel::new(theta).unwrap();
        let trunc = TruncationConfig::new(12).unwrap();
        let pmf = conditional_pmf(&model, 1, &[4], &trunc).unwrap();
        let total: f64 = pmf.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gibbs_reproducible_under_seed() {
        let model = decoupled(&[-0.5, 0.2]);
        let trunc = TruncationConfig::default();
        let a = gibbs_sample(&model, 50, 10, 2, &trunc, 42).unwrap();
        let b = gibbs_sample(&model, 50, 10, 2, &trunc, 42).unwrap();
        assert_eq!(a, b);
        let c = gibbs_sample(&model, 50, 10, 2, &trunc, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn gibbs_univariate_matches_exact_pmf() {
        let model = decoupled(&[0.3]);
        let trunc = TruncationConfig::default();
        let samples = gibbs_sample(&model, 100_000, 100, 1, &trunc, 7).unwrap();
        let exact = conditional_pmf(&model, 0, &[], &trunc).unwrap();
        let mut counts = vec![0usize; trunc.x_max + 1];
        for s in &samples {
            counts[s[0]] += 1;
        }
        let tv: f64 = exact
            .iter()
            .enumerate()
            .map(|(x, &p)| (p - counts[x] as f64 / samples.len() as f64).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.02, "total variation {tv}");
    }

    #[test]
    fn gibbs_decoupled_coordinates_uncorrelated() {
        let model = decoupled(&[0.2, -0.3]);
        let trunc = TruncationConfig::default();
        let samples = gibbs_sample(&model, 100_000, 100, 1, &trunc, 11).unwrap();
        let n = samples.len() as f64;
        let mean0 = samples.iter().map(|s| s[0] as f64).sum::<f64>() / n;
        let mean1 = samples.iter().map(|s| s[1] as f64).sum::<f64>() / n;
        let cov = samples
            .iter()
            .map(|s| (s[0] as f64 - mean0) * (s[1] as f64 - mean1))
            .sum::<f64>()
            / n;
        let sd0 = (samples.iter().map(|s| (s[0] as f64 - mean0).powi(2)).sum::<f64>() / n).sqrt();
        let sd1 = (samples.iter().map(|s| (s[1] as f64 - mean1).powi(2)).sum::<f64>() / n).sqrt();
        let r = cov / (sd0 * sd1);
        assert!(r.abs() < 0.01, "correlation {r}");
    }

    #[test]
    fn negative_couplings_admissible() {
        let mut theta = vec![vec![0.0; 4]; 4];
        for j in 0..4 {
            theta[j][j] = 0.3;
            for k in (j + 1)..4 {
                theta[j][k] = -1.5;
                theta[k][j] = -1.5;
            }
        }
        let model = PsqrModel::new(theta).unwrap();
        assert!(model.tail_ok(&TruncationConfig::default(), 1e-12));
    }

    #[test]
    fn generator_is_deterministic_and_sized() {
        let trunc = TruncationConfig::default();
        let a = generate_sparse_model(6, 5, &trunc, 99).unwrap();
        let b = generate_sparse_model(6, 5, &trunc, 99).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.edges().len(), 5);
    }

    #[test]
    fn gibbs_sweep_preserves_exact_joint() {
        // matrix fixed-point check at p = 2, x_max = 6: pi P = pi
        // diagonals must be strongly negative so the conditional tail at
        // x_max = 6 clears the 1e-10 mass criterion
        let theta = vec![vec![-8.0, -0.25], vec![-0.25, -7.5]];
        let model = PsqrModel::new(theta).unwrap();
        let x_max = 6;
        let trunc = TruncationConfig::new(x_max).unwrap();
        let states: Vec<(usize, usize)> = (0..=x_max)
            .flat_map(|a| (0..=x_max).map(move |b| (a, b)))
            .collect();
        // exact joint by enumeration
        let sq = |x: usize| (x as f64).sqrt();
        let lfact = |x: usize| (1..=x).map(|v| (v as f64).ln()).sum::<f64>();
        let weights: Vec<f64> = states
            .iter()
            .map(|&(a, b)| {
                (-8.0 * sq(a) - 7.5 * sq(b) - 0.25 * sq(a) * sq(b) - lfact(a) - lfact(b)).exp()
            })
            .collect();
        let z: f64 = weights.iter().sum();
        let pi: Vec<f64> = weights.iter().map(|w| w / z).collect();
        // one systematic sweep: resample coord 0 given b, then coord 1 given a
        let mut after = vec![0.0; states.len()];
        for (s, &(a0, b0)) in states.iter().enumerate() {
            let pmf0 = conditional_pmf(&model, 0, &[b0], &trunc).unwrap();
            for a1 in 0..=x_max {
                let pmf1 = conditional_pmf(&model, 1, &[a1], &trunc).unwrap();
                for b1 in 0..=x_max {
                    let target = a1 * (x_max + 1) + b1;
                    after[target] += pi[s] * pmf0[a1] * pmf1[b1];
                }
            }
            let _ = (a0, s);
        }
        for (s, &(a, b)) in states.iter().enumerate() {
            let idx = a * (x_max + 1) + b;
            assert!(
                (after[idx] - pi[s]).abs() < 1e-8,
                "state ({a},{b}): {} vs {}",
                after[idx],
                pi[s]
            );
        }
    }
}
