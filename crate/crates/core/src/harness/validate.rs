use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, read_events, DailyRow, EventRecord, Summary};
use crate::abm::{DiseaseState, StateCounts};
use crate::error::Result;
use crate::Day;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub days_checked: usize,
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Replay a finished run directory and check it against the simulator's
/// invariants: conservation, absorbing states, monotone R and D, test budget
/// and test outcomes, plus agreement of `daily.csv` and `summary.json` with
/// the event log. A missing or truncated event log is an error.
pub fn validate_run(dir: &Path) -> Result<ValidationReport> {
    let events = read_events(&dir.join("events.jsonl"))?;
    let metrics = compute_metrics(&events)?;
    let EventRecord::Start { population_size, tests_per_day, .. } = events[0] else {
        unreachable!("checked by compute_metrics")
    };
    let mut report = ValidationReport::default();
    let mut v = |day: Day, msg: String| report.violations.push(format!("day {day}: {msg}"));

    let mut state = vec![DiseaseState::S; population_size];
    let mut prev: Option<StateCounts> = None;
    let mut days = 0;
    for e in &events[1..events.len() - 1] {
        let EventRecord::Day(log) = e else { continue };
        days += 1;
        let d = log.day;
        for &a in &log.new_exposed {
            match state.get_mut(a as usize) {
                Some(s) if *s == DiseaseState::S => *s = DiseaseState::E,
                Some(s) => v(d, format!("agent {a} exposed while {}", s.label())),
                None => v(d, format!("agent {a} out of range")),
            }
        }
        for t in &log.transitions {
            let Some(s) = state.get_mut(t.agent as usize) else {
                v(d, format!("agent {} out of range", t.agent));
                continue;
            };
            if *s != t.from {
                v(d, format!("agent {} moves from {} but is {}", t.agent, t.from.label(), s.label()));
            }
            if t.from.is_absorbing() {
                v(d, format!("agent {} leaves absorbing state {}", t.agent, t.from.label()));
            }
            *s = t.to;
        }
        let mut c = [0usize; 7];
        for s in &state {
            c[s.index()] += 1;
        }
        if c != log.counts.as_array() {
            v(d, format!("counts {:?} do not match replayed {:?}", log.counts.as_array(), c));
        }
        if log.counts.total() != population_size {
            v(d, format!("counts sum to {} instead of {population_size}", log.counts.total()));
        }
        if let Some(p) = prev {
            if log.counts.r < p.r || log.counts.d < p.d {
                v(d, "recoveries or deaths decreased".into());
            }
        }
        prev = Some(log.counts);
        if log.tests.len() > tests_per_day {
            v(d, format!("{} tests exceed the budget of {tests_per_day}", log.tests.len()));
        }
        for t in &log.tests {
            match state.get(t.agent as usize) {
                Some(DiseaseState::D) => v(d, format!("dead agent {} tested", t.agent)),
                Some(s) if s.is_infectious() != t.positive => {
                    v(d, format!("agent {} in {} tested {}", t.agent, s.label(), t.positive))
                }
                Some(_) => {}
                None => v(d, format!("tested agent {} out of range", t.agent)),
            }
        }
    }
    report.days_checked = days;

    let csv_path = dir.join("daily.csv");
    if csv_path.exists() {
        let rows: Vec<DailyRow> =
            csv::Reader::from_path(&csv_path)?.deserialize().collect::<std::result::Result<_, _>>()?;
        if rows != metrics.series {
            report.violations.push("daily.csv does not match the event log".into());
        }
    }
    let summary_path = dir.join("summary.json");
    if summary_path.exists() {
        let stored: Summary = serde_json::from_slice(&std::fs::read(&summary_path)?)?;
        if let Some(msg) = summary_mismatch(&stored, &metrics.summary) {
            report.violations.push(format!("summary.json: {msg}"));
        }
    }
    Ok(report)
}

fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() <= 1e-12,
        (None, None) => true,
        _ => false,
    }
}

fn summary_mismatch(stored: &Summary, recomputed: &Summary) -> Option<String> {
    let ints = |s: &Summary| {
        (
            s.seed,
            s.population_size,
            s.last_day,
            s.total_infected,
            s.total_deaths,
            s.peak_infections,
            s.tests_used,
            s.positives_found,
            s.detected,
        )
    };
    if ints(stored) != ints(recomputed) {
        return Some("counts differ from the event log".into());
    }
    if !close(stored.precision, recomputed.precision) {
        return Some("precision differs from the event log".into());
    }
    if !close(stored.mean_detection_lag, recomputed.mean_detection_lag) {
        return Some("detection lag differs from the event log".into());
    }
    if !close(Some(stored.fraction_detected), Some(recomputed.fraction_detected)) {
        return Some("detected fraction differs from the event log".into());
    }
    None
}
