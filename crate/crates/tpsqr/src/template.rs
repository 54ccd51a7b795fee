//! Template parameterization: shared intercepts `omega` plus the directed
//! pair-by-lag coefficient table `w`, and the per-subject symmetric matrices
//! generated from them.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TpsqrError};
use crate::event_data::{LagWindows, SubjectSequence};

/// Stable zero-based ordinal for coefficient `(k, k', l)` with 1-based
/// arguments. Layout is k-major, then k', then l; self-pairs included.
pub fn pair_index(p: usize, n_windows: usize, k: usize, k_prime: usize, l: usize) -> usize {
    assert!(k >= 1 && k <= p, "source type {k} outside 1..={p}");
    assert!(k_prime >= 1 && k_prime <= p, "target type {k_prime} outside 1..={p}");
    assert!(l >= 1 && l <= n_windows, "window {l} outside 1..={n_windows}");
    ((k - 1) * p + (k_prime - 1)) * n_windows + (l - 1)
}

/// Inverse of [`pair_index`]: ordinal back to 1-based `(k, k', l)`.
pub fn pair_from_index(p: usize, n_windows: usize, idx: usize) -> (usize, usize, usize) {
    assert!(idx < p * p * n_windows);
    let l = idx % n_windows;
    let kk = idx / n_windows;
    (kk / p + 1, kk % p + 1, l + 1)
}

/// The template `(omega, W)`: `p` intrinsic-prevalence intercepts plus a
/// directed `p*p x L` lag-coefficient table stored flat in [`pair_index`]
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    p: usize,
    windows: LagWindows,
    omega: Vec<f64>,
    w: Vec<f64>,
}

impl Template {
    pub fn new(p: usize, windows: LagWindows, omega: Vec<f64>, w: Vec<f64>) -> Result<Self> {
        let n_windows = windows.len();
        if omega.len() != p {
            return Err(TpsqrError::Dimension(format!(
                "omega has {} entries, expected p = {p}",
                omega.len()
            )));
        }
        if w.len() != p * p * n_windows {
            return Err(TpsqrError::Dimension(format!(
                "w has {} entries, expected p*p*L = {}",
                w.len(),
                p * p * n_windows
            )));
        }
        if omega.iter().chain(w.iter()).any(|v| !v.is_finite()) {
            return Err(TpsqrError::Validation("template entries must be finite".into()));
        }
        Ok(Template { p, windows, omega, w })
    }

    pub fn zeros(p: usize, windows: LagWindows) -> Self {
        let n_windows = windows.len();
        Template {
            p,
            windows,
            omega: vec![0.0; p],
            w: vec![0.0; p * p * n_windows],
        }
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n_windows(&self) -> usize {
        self.windows.len()
    }

    pub fn windows(&self) -> &LagWindows {
        &self.windows
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.w
    }

    /// Coefficient `w_{k,k',l}` (1-based indices).
    pub fn coefficient(&self, k: usize, k_prime: usize, l: usize) -> f64 {
        self.w[pair_index(self.p, self.n_windows(), k, k_prime, l)]
    }

    pub fn set_coefficient(&mut self, k: usize, k_prime: usize, l: usize, value: f64) {
        let idx = pair_index(self.p, self.n_windows(), k, k_prime, l);
        self.w[idx] = value;
    }

    pub fn set_omega(&mut self, k: usize, value: f64) {
        self.omega[k - 1] = value;
    }

    /// The directed-pair lag vector `w_{kk'}` of length `L`.
    pub fn pair_coefficients(&self, k: usize, k_prime: usize) -> &[f64] {
        let start = pair_index(self.p, self.n_windows(), k, k_prime, 1);
        &self.w[start..start + self.n_windows()]
    }

    pub fn to_json(&self) -> TemplateJson {
        let n_windows = self.n_windows();
        let mut entries = Vec::new();
        for (idx, &value) in self.w.iter().enumerate() {
            if value != 0.0 {
                let (k, k_prime, l) = pair_from_index(self.p, n_windows, idx);
                entries.push((k, k_prime, l, value));
            }
        }
        TemplateJson {
            p: self.p,
            l: n_windows,
            thresholds: self.windows.thresholds().to_vec(),
            omega: self.omega.clone(),
            w: entries,
        }
    }

    pub fn from_json(json: &TemplateJson) -> Result<Self> {
        let windows = LagWindows::new(json.thresholds.clone())?;
        if windows.len() != json.l {
            return Err(TpsqrError::Dimension(format!(
                "declared L = {} but thresholds give {}",
                json.l,
                windows.len()
            )));
        }
        let mut template = Template::zeros(json.p, windows);
        if json.omega.len() != json.p {
            return Err(TpsqrError::Dimension("omega length mismatch".into()));
        }
        template.omega = json.omega.clone();
        for &(k, k_prime, l, value) in &json.w {
            if k < 1 || k > json.p || k_prime < 1 || k_prime > json.p || l < 1 || l > json.l {
                return Err(TpsqrError::Dimension(format!(
                    "coefficient index ({k},{k_prime},{l}) out of range"
                )));
            }
            template.set_coefficient(k, k_prime, l, value);
        }
        Ok(template)
    }
}

/// Serialized template: zero coefficients omitted, layout frozen by
/// [`pair_index`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemplateJson {
    pub p: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub thresholds: Vec<f64>,
    pub omega: Vec<f64>,
    pub w: Vec<(usize, usize, usize, f64)>,
}

/// The symmetric per-subject parameter matrix generated from the template.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectTheta {
    n: usize,
    theta: Vec<f64>,
}

impl SubjectTheta {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, j: usize, j_prime: usize) -> f64 {
        self.theta[j * self.n + j_prime]
    }
}

/// Materialize `Theta^(i)`: diagonal `omega_{o_j}`, off-diagonal
/// `w_{o_j o_j'} . phi(|t_j' - t_j|)` for `j < j'`, symmetric fill above.
pub fn build_theta(template: &Template, seq: &SubjectSequence) -> Result<SubjectTheta> {
    let n = seq.len();
    let p = template.p();
    for span in &seq.spans {
        if span.o < 1 || span.o > p {
            return Err(TpsqrError::Dimension(format!(
                "event type {} outside 1..={p}",
                span.o
            )));
        }
    }
    let mut theta = vec![0.0; n * n];
    for j in 0..n {
        theta[j * n + j] = template.omega()[seq.spans[j].o - 1];
        for j_prime in (j + 1)..n {
            let lag = (seq.spans[j_prime].t - seq.spans[j].t).abs();
            let value = match template.windows().window_of(lag) {
                Some(l) => template.coefficient(seq.spans[j].o, seq.spans[j_prime].o, l + 1),
                None => 0.0,
            };
            theta[j * n + j_prime] = value;
            theta[j_prime * n + j] = value;
        }
    }
    Ok(SubjectTheta { n, theta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_data::Timespan;

    fn windows() -> LagWindows {
        LagWindows::new(vec![0.0, 100.0, 200.0, 300.0]).unwrap()
    }

    fn seq(spans: Vec<(f64, usize)>) -> SubjectSequence {
        SubjectSequence {
            subject_id: "s".into(),
            spans: spans.into_iter().map(|(t, o)| Timespan { t, o, x: 0 }).collect(),
        }
    }

    #[test]
    fn pair_index_layout() {
        assert_eq!(pair_index(3, 2, 1, 1, 1), 0);
        assert_eq!(pair_index(3, 2, 1, 2, 1), 2);
        assert_eq!(pair_index(3, 2, 3, 3, 2), 3 * 3 * 2 - 1);
    }

    #[test]
    fn pair_index_bijection() {
        let (p, n_windows) = (4, 3);
        for k in 1..=p {
            for k_prime in 1..=p {
                for l in 1..=n_windows {
                    let idx = pair_index(p, n_windows, k, k_prime, l);
                    assert_eq!(pair_from_index(p, n_windows, idx), (k, k_prime, l));
                }
            }
        }
    }

    #[test]
    fn single_span_theta_is_omega() {
        let mut template = Template::zeros(3, windows());
        template.set_omega(2, 0.7);
        let theta = build_theta(&template, &seq(vec![(5.0, 2)])).unwrap();
        assert_eq!(theta.n(), 1);
        assert_eq!(theta.get(0, 0), 0.7);
    }

    #[test]
    fn distant_spans_give_diagonal_theta() {
        let mut template = Template::zeros(2, windows());
        template.set_coefficient(1, 2, 1, 0.5);
        let theta = build_theta(&template, &seq(vec![(0.0, 1), (400.0, 2)])).unwrap();
        assert_eq!(theta.get(0, 1), 0.0);
        assert_eq!(theta.get(1, 0), 0.0);
    }

    #[test]
    fn figure_one_lag_window_membership() {
        // spans at t = 1, 121: lag 120 falls in window 2 of (0,100,200,300)
        let mut template = Template::zeros(3, windows());
        template.set_coefficient(1, 2, 2, 0.9);
        let theta = build_theta(&template, &seq(vec![(1.0, 1), (121.0, 2)])).unwrap();
        assert_eq!(theta.get(0, 1), 0.9);
    }

    #[test]
    fn theta_is_exactly_symmetric() {
        let mut template = Template::zeros(3, windows());
        for k in 1..=3 {
            for k_prime in 1..=3 {
                for l in 1..=3 {
                    let v = (k * 7 + k_prime * 3 + l) as f64 * 0.01;
                    template.set_coefficient(k, k_prime, l, v);
                }
            }
        }
        let s = seq(vec![(0.0, 1), (50.0, 2), (120.0, 3), (250.0, 1)]);
        let theta = build_theta(&template, &s).unwrap();
        for j in 0..theta.n() {
            for j_prime in 0..theta.n() {
                assert_eq!(theta.get(j, j_prime).to_bits(), theta.get(j_prime, j).to_bits());
            }
        }
    }

    #[test]
    fn directionality_matters() {
        let s = seq(vec![(0.0, 1), (50.0, 2)]);
        let mut forward = Template::zeros(2, windows());
        forward.set_coefficient(1, 2, 1, 0.8);
        let mut backward = Template::zeros(2, windows());
        backward.set_coefficient(2, 1, 1, 0.8);
        let theta_f = build_theta(&forward, &s).unwrap();
        let theta_b = build_theta(&backward, &s).unwrap();
        assert_ne!(theta_f.get(0, 1), theta_b.get(0, 1));
    }

    #[test]
    fn out_of_range_type_rejected() {
        let template = Template::zeros(2, windows());
        assert!(build_theta(&template, &seq(vec![(0.0, 3)])).is_err());
    }

    #[test]
    fn json_round_trip_omits_zeros() {
        let mut template = Template::zeros(3, windows());
        template.set_omega(1, -0.2);
        template.set_coefficient(2, 3, 1, 0.4);
        let json = template.to_json();
        assert_eq!(json.w.len(), 1);
        let text = serde_json::to_string(&json).unwrap();
        let parsed: TemplateJson = serde_json::from_str(&text).unwrap();
        assert_eq!(Template::from_json(&parsed).unwrap(), template);
    }
}
