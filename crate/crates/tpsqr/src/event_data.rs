//! Ingestion and aggregation of longitudinal event data.
//!
//! Raw time-stamped typed events are summarized per subject into timespans
//! `(t, o, x)`: the first-occurrence time, the event type, and the count of
//! subsequent same-type occurrences. Lags between timespans are mapped onto
//! predefined windows by the one-hot influence function.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Result, TpsqrError};

/// A single raw event: one subject, one timestamp, one type in `1..=p`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub subject_id: String,
    pub timestamp: f64,
    pub event_type: usize,
}

/// A maximal run of same-type events: first time `t`, type `o`, and the
/// number `x` of occurrences after the first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timespan {
    pub t: f64,
    pub o: usize,
    pub x: u64,
}

/// The aggregated sequence of timespans for one subject, ordered by `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectSequence {
    pub subject_id: String,
    pub spans: Vec<Timespan>,
}

impl SubjectSequence {
    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    /// Observed duration: last first-occurrence time minus the first.
    pub fn duration(&self) -> f64 {
        match (self.spans.first(), self.spans.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }
}

/// Lag-window thresholds `0 = tau_0 < tau_1 < ... < tau_L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagWindows {
    thresholds: Vec<f64>,
}

impl LagWindows {
    pub fn new(thresholds: Vec<f64>) -> Result<Self> {
        if thresholds.len() < 2 {
            return Err(TpsqrError::Windows(
                "need at least two thresholds (tau_0 = 0 and tau_L)".into(),
            ));
        }
        if thresholds[0] != 0.0 {
            return Err(TpsqrError::Windows("thresholds must start at 0".into()));
        }
        for pair in thresholds.windows(2) {
            if !(pair[0] < pair[1]) || !pair[1].is_finite() {
                return Err(TpsqrError::Windows(
                    "thresholds must be finite and strictly increasing".into(),
                ));
            }
        }
        Ok(LagWindows { thresholds })
    }

    /// Number of windows `L`.
    pub fn len(&self) -> usize {
        self.thresholds.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    /// Largest threshold `tau_L`; lags at or beyond it have no influence.
    pub fn max_lag(&self) -> f64 {
        *self.thresholds.last().unwrap()
    }

    /// Zero-based window index of `tau`, or `None` when `tau >= tau_L`.
    /// Windows are left-closed: window `l` covers `[tau_{l-1}, tau_l)`.
    pub fn window_of(&self, tau: f64) -> Option<usize> {
        assert!(tau >= 0.0, "lag must be nonnegative, got {tau}");
        if tau >= self.max_lag() {
            return None;
        }
        // thresholds are sorted; partition_point finds the first tau_l > tau
        let idx = self.thresholds.partition_point(|&th| th <= tau);
        Some(idx - 1)
    }

    /// Thresholds scaled by `factor`, used for the future-effects discount.
    pub fn scaled(&self, factor: f64) -> Result<LagWindows> {
        if factor <= 0.0 {
            return Err(TpsqrError::Windows("scale factor must be positive".into()));
        }
        LagWindows::new(self.thresholds.iter().map(|t| t * factor).collect())
    }
}

/// One-hot influence vector of length `L`: component `l` is 1 iff
/// `tau_{l-1} <= tau < tau_l`, all zeros when `tau >= tau_L`.
pub fn influence(tau: f64, windows: &LagWindows) -> Vec<f64> {
    let mut v = vec![0.0; windows.len()];
    if let Some(l) = windows.window_of(tau) {
        v[l] = 1.0;
    }
    v
}

/// Aggregate one subject's events into timespans.
///
/// Maximal runs of same-type events merge into one span. With a positive
/// `t_ambiguity`, a run of type A interrupted by other-type events still
/// absorbs later A occurrences when the first interrupting timestamp is
/// within `t_ambiguity` of the run's start.
pub fn aggregate(events: &[EventRecord], t_ambiguity: f64) -> Result<SubjectSequence> {
    assert!(t_ambiguity >= 0.0, "t_ambiguity must be nonnegative");
    let subject_id = events
        .first()
        .map(|e| e.subject_id.clone())
        .unwrap_or_default();

    let mut spans: Vec<Timespan> = Vec::new();
    let mut prev_t = f64::NEG_INFINITY;
    let mut prev_type = 0usize;
    for ev in events {
        if ev.timestamp < prev_t {
            return Err(TpsqrError::UnsortedEvents {
                subject: subject_id,
                timestamp: ev.timestamp,
            });
        }
        if ev.timestamp == prev_t && ev.event_type != prev_type {
            return Err(TpsqrError::DuplicateTimestamp {
                subject: subject_id,
                timestamp: ev.timestamp,
            });
        }
        prev_t = ev.timestamp;
        prev_type = ev.event_type;

        match spans.last_mut() {
            Some(last) if last.o == ev.event_type => {
                // same-type run continues (identical timestamps collapse too)
                last.x += 1;
            }
            _ => {
                let merged = merge_target(&spans, ev.event_type, t_ambiguity);
                match merged {
                    Some(k) => spans[k].x += 1,
                    None => spans.push(Timespan {
                        t: ev.timestamp,
                        o: ev.event_type,
                        x: 0,
                    }),
                }
            }
        }
    }
    Ok(SubjectSequence { subject_id, spans })
}

/// Ambiguity rule: the most recent span of this type absorbs the event when
/// its first interruption started within `t_ambiguity` of the span's start.
fn merge_target(spans: &[Timespan], event_type: usize, t_ambiguity: f64) -> Option<usize> {
    if t_ambiguity <= 0.0 {
        return None;
    }
    let k = spans.iter().rposition(|s| s.o == event_type)?;
    let first_interrupt = spans.get(k + 1)?;
    if first_interrupt.t - spans[k].t < t_ambiguity {
        Some(k)
    } else {
        None
    }
}

/// Dataset header sidecar: number of event types and the (opaque) time unit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub p: usize,
    pub time_unit: String,
}

/// Read raw events from `subject_id,timestamp,event_type` CSV. Returns
/// records grouped by subject in first-appearance order; within a subject,
/// rows must already be sorted by timestamp. Malformed rows are rejected
/// with their line number.
pub fn read_events_csv<R: Read>(reader: R, p: usize) -> Result<Vec<Vec<EventRecord>>> {
    let mut csv_reader = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let mut by_subject: Vec<Vec<EventRecord>> = Vec::new();
    let mut index: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
    for (i, row) in csv_reader.records().enumerate() {
        let line = i + 2; // 1-based, after the header
        let row = row?;
        if row.len() != 3 {
            return Err(TpsqrError::Validation(format!(
                "line {line}: expected 3 fields, got {}",
                row.len()
            )));
        }
        let subject_id = row[0].to_string();
        let timestamp: f64 = row[1].parse().map_err(|_| {
            TpsqrError::Validation(format!("line {line}: bad timestamp {:?}", &row[1]))
        })?;
        let event_type: usize = row[2].parse().map_err(|_| {
            TpsqrError::Validation(format!("line {line}: bad event_type {:?}", &row[2]))
        })?;
        if !timestamp.is_finite() || timestamp < 0.0 {
            return Err(TpsqrError::Validation(format!(
                "line {line}: timestamp must be finite and >= 0"
            )));
        }
        if event_type < 1 || event_type > p {
            return Err(TpsqrError::Validation(format!(
                "line {line}: event_type {event_type} outside 1..={p}"
            )));
        }
        let slot = *index.entry(subject_id.clone()).or_insert_with(|| {
            by_subject.push(Vec::new());
            by_subject.len() - 1
        });
        by_subject[slot].push(EventRecord {
            subject_id,
            timestamp,
            event_type,
        });
    }
    Ok(by_subject)
}

/// Write aggregated sequences as `subject_id,span_index,t,o,x` CSV.
pub fn write_aggregated_csv<W: Write>(writer: W, sequences: &[SubjectSequence]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["subject_id", "span_index", "t", "o", "x"])?;
    for seq in sequences {
        for (j, span) in seq.spans.iter().enumerate() {
            out.write_record([
                seq.subject_id.as_str(),
                &j.to_string(),
                &format!("{}", span.t),
                &span.o.to_string(),
                &span.x.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Read back sequences written by [`write_aggregated_csv`].
pub fn read_aggregated_csv<R: Read>(reader: R) -> Result<Vec<SubjectSequence>> {
    let mut csv_reader = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let mut sequences: Vec<SubjectSequence> = Vec::new();
    let mut index: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
    for row in csv_reader.records() {
        let row = row?;
        let subject_id = row[0].to_string();
        let t: f64 = row[2]
            .parse()
            .map_err(|_| TpsqrError::Validation(format!("bad t {:?}", &row[2])))?;
        let o: usize = row[3]
            .parse()
            .map_err(|_| TpsqrError::Validation(format!("bad o {:?}", &row[3])))?;
        let x: u64 = row[4]
            .parse()
            .map_err(|_| TpsqrError::Validation(format!("bad x {:?}", &row[4])))?;
        let slot = *index.entry(subject_id.clone()).or_insert_with(|| {
            sequences.push(SubjectSequence {
                subject_id,
                spans: Vec::new(),
            });
            sequences.len() - 1
        });
        sequences[slot].spans.push(Timespan { t, o, x });
    }
    Ok(sequences)
}
