//! Compilation of aggregated sequences into the stacked sparse Poisson
//! regression problem: one row per (subject, span), one penalized column per
//! directed pair and lag window.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TpsqrError};
use crate::event_data::{LagWindows, SubjectSequence};
use crate::template::pair_index;

/// Future-effects discount and count preprocessing.
///
/// `lambda1` scales the lag thresholds applied to future events, `lambda2`
/// multiplies their covariate contributions, and `count_offset` is added to
/// every aggregated count when forming responses and covariates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscountConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub count_offset: u64,
}

impl DiscountConfig {
    pub fn new(lambda1: f64, lambda2: f64, count_offset: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda1) || !(0.0..=1.0).contains(&lambda2) {
            return Err(TpsqrError::Validation(
                "discount factors must lie in [0, 1]".into(),
            ));
        }
        Ok(DiscountConfig { lambda1, lambda2, count_offset })
    }

    /// Faithful to the base objective: no discount, no count offset.
    pub fn plain() -> Self {
        DiscountConfig { lambda1: 1.0, lambda2: 1.0, count_offset: 0 }
    }

    /// The ADR preset: future discount 0.1/0.1 and count offset 1.
    pub fn adr_preset() -> Self {
        DiscountConfig { lambda1: 0.1, lambda2: 0.1, count_offset: 1 }
    }
}

impl Default for DiscountConfig {
    fn default() -> Self {
        DiscountConfig::plain()
    }
}

/// One Poisson regression row: response, intercept group, sparse covariates
/// sorted by column.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignRow {
    pub y: f64,
    pub group: usize,
    pub covariates: Vec<(usize, f64)>,
}

/// The stacked regression problem handed to the solver. Covariates are kept
/// both row-wise and column-wise; intercepts are realized as groups, never
/// as columns.
#[derive(Debug, Clone)]
pub struct DesignProblem {
    pub rows: Vec<DesignRow>,
    pub n_cols: usize,
    pub n_groups: usize,
    /// 1-based event type of each intercept group (for reporting).
    pub group_type: Vec<usize>,
    pub fixed_effects: bool,
    cols: Vec<Vec<(u32, f64)>>,
}

impl DesignProblem {
    pub fn new(
        rows: Vec<DesignRow>,
        n_cols: usize,
        n_groups: usize,
        group_type: Vec<usize>,
        fixed_effects: bool,
    ) -> Self {
        let mut cols: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n_cols];
        for (r, row) in rows.iter().enumerate() {
            for &(c, v) in &row.covariates {
                cols[c].push((r as u32, v));
            }
        }
        DesignProblem { rows, n_cols, n_groups, group_type, fixed_effects, cols }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Column-wise view: (row index, value) pairs for one covariate column.
    pub fn column(&self, c: usize) -> &[(u32, f64)] {
        &self.cols[c]
    }

    /// Intercepts of the null model (no pair coefficients): per-group
    /// log-mean response, clamped to the linear-predictor bound.
    pub fn null_intercepts(&self) -> Vec<f64> {
        let mut sums = vec![0.0f64; self.n_groups];
        let mut counts = vec![0usize; self.n_groups];
        for row in &self.rows {
            sums[row.group] += row.y;
            counts[row.group] += 1;
        }
        sums.iter()
            .zip(&counts)
            .map(|(&s, &c)| {
                if c == 0 || s == 0.0 {
                    -crate::solver::ETA_BOUND
                } else {
                    (s / c as f64).ln().clamp(-crate::solver::ETA_BOUND, crate::solver::ETA_BOUND)
                }
            })
            .collect()
    }

    /// Dump the sparse structure as `row col value` triplet lines.
    pub fn write_triplets<W: Write>(&self, mut writer: W) -> Result<()> {
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, v) in &row.covariates {
                writeln!(writer, "{r} {c} {v}")?;
            }
        }
        Ok(())
    }
}

/// Build the stacked design for the temporal model.
///
/// For the row of span `j`, past spans `j' < j` contribute
/// `(x_j' + offset) * phi_l(t_j - t_j')` into the column of the directed
/// pair `(o_j', o_j, l)`; future spans contribute `lambda2` times their
/// count against thresholds scaled by `lambda1`, into `(o_j, o_j', l)` —
/// the earlier type is always the source.
pub fn build_design(
    p: usize,
    sequences: &[SubjectSequence],
    windows: &LagWindows,
    discount: &DiscountConfig,
    fixed_effects: bool,
    include_self_pairs: bool,
) -> Result<DesignProblem> {
    let n_windows = windows.len();
    let n_cols = p * p * n_windows;
    let future_windows = if discount.lambda1 > 0.0 {
        Some(windows.scaled(discount.lambda1)?)
    } else {
        None
    };
    let offset = discount.count_offset as f64;

    let mut rows = Vec::new();
    let mut group_type = Vec::new();
    let mut group_index: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    if !fixed_effects {
        group_type = (1..=p).collect();
    }

    for (subject, seq) in sequences.iter().enumerate() {
        for span in &seq.spans {
            if span.o < 1 || span.o > p {
                return Err(TpsqrError::Dimension(format!(
                    "subject {}: event type {} outside 1..={p}",
                    seq.subject_id, span.o
                )));
            }
        }
        for (j, span) in seq.spans.iter().enumerate() {
            let group = if fixed_effects {
                let next = group_index.len();
                *group_index.entry((subject, span.o)).or_insert(next)
            } else {
                span.o - 1
            };
            let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
            for (j_prime, other) in seq.spans.iter().enumerate() {
                if j_prime == j {
                    continue;
                }
                if !include_self_pairs && other.o == span.o {
                    continue;
                }
                let count = other.x as f64 + offset;
                if count == 0.0 {
                    continue;
                }
                if j_prime < j {
                    let lag = span.t - other.t;
                    if let Some(l) = windows.window_of(lag) {
                        let col = pair_index(p, n_windows, other.o, span.o, l + 1);
                        *acc.entry(col).or_insert(0.0) += count;
                    }
                } else if discount.lambda2 > 0.0 {
                    let lag = other.t - span.t;
                    if let Some(fw) = &future_windows {
                        if let Some(l) = fw.window_of(lag) {
                            let col = pair_index(p, n_windows, span.o, other.o, l + 1);
                            *acc.entry(col).or_insert(0.0) += discount.lambda2 * count;
                        }
                    }
                }
            }
            rows.push(DesignRow {
                y: span.x as f64 + offset,
                group,
                covariates: acc.into_iter().collect(),
            });
        }
    }

    let n_groups = if fixed_effects { group_index.len() } else { p };
    if fixed_effects {
        group_type = vec![0; n_groups];
        for (&(_, o), &g) in &group_index {
            group_type[g] = o;
        }
    }
    Ok(DesignProblem::new(rows, n_cols, n_groups, group_type, fixed_effects))
}

/// Smallest penalty for which all pair coefficients are zero: with the null
/// model's intercepts, `(1/M) * max_col |sum covariate * (y - mu)|`.
/// Returns 0 when all responses are zero (the caller should warn).
pub fn lambda_max(problem: &DesignProblem) -> f64 {
    if problem.n_rows() == 0 {
        return 0.0;
    }
    let intercepts = problem.null_intercepts();
    let residuals: Vec<f64> = problem
        .rows
        .iter()
        .map(|row| row.y - intercepts[row.group].exp())
        .collect();
    let m = problem.n_rows() as f64;
    let mut best = 0.0f64;
    for c in 0..problem.n_cols {
        let dot: f64 = problem
            .column(c)
            .iter()
            .map(|&(r, v)| v * residuals[r as usize])
            .sum();
        best = best.max(dot.abs() / m);
    }
    best
}
