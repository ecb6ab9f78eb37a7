use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::abm::DayLog;
use crate::error::{Error, Result};
use crate::sampler::PolicyKind;
use crate::{AgentId, Day};

/// One line of `events.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventRecord {
    Start {
        seed: u64,
        policy: PolicyKind,
        population_size: usize,
        tests_per_day: usize,
        horizon_days: Day,
        day0_hash: String,
    },
    Day(DayLog),
    End {
        last_day: Day,
        extinct: bool,
    },
}

pub fn read_events(path: &Path) -> Result<Vec<EventRecord>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(std::fs::File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Log(format!("{}:{}: {e}", path.display(), i + 1)))?);
    }
    Ok(out)
}

/// A row of `daily.csv`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DailyRow {
    pub day: Day,
    #[serde(rename = "S")]
    pub s: usize,
    #[serde(rename = "E")]
    pub e: usize,
    #[serde(rename = "Ia")]
    pub ia: usize,
    #[serde(rename = "Is")]
    pub is: usize,
    #[serde(rename = "Ic")]
    pub ic: usize,
    #[serde(rename = "R")]
    pub r: usize,
    #[serde(rename = "D")]
    pub d: usize,
    pub new_exposed: usize,
    pub tests_used: usize,
    pub positives_found: usize,
    pub in_quarantine: usize,
}

impl DailyRow {
    pub fn from_log(log: &DayLog) -> Self {
        let c = log.counts;
        Self {
            day: log.day,
            s: c.s,
            e: c.e,
            ia: c.ia,
            is: c.is,
            ic: c.ic,
            r: c.r,
            d: c.d,
            new_exposed: log.new_exposed.len(),
            tests_used: log.tests.len(),
            positives_found: log.positives_found(),
            in_quarantine: log.in_quarantine,
        }
    }

    /// Currently infected: E, Ia, Is and Ic.
    pub fn infected(&self) -> usize {
        self.e + self.ia + self.is + self.ic
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub seed: u64,
    pub policy: PolicyKind,
    pub population_size: usize,
    pub last_day: Day,
    pub extinct: bool,
    /// Seeds plus every exposure.
    pub total_infected: usize,
    pub total_deaths: usize,
    pub peak_infections: usize,
    pub peak_day: Day,
    pub tests_used: usize,
    pub positives_found: usize,
    /// Positives over tests; `None` when no test was run.
    pub precision: Option<f64>,
    /// Agents with at least one positive test.
    pub detected: usize,
    /// Mean days from infection to first positive test, over detected agents.
    pub mean_detection_lag: Option<f64>,
    pub fraction_detected: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub series: Vec<DailyRow>,
    pub summary: Summary,
}

/// Series and summary from a complete event stream: a start record, day
/// records numbered 0, 1, 2, ... and an end record.
pub fn compute_metrics(events: &[EventRecord]) -> Result<Metrics> {
    let Some(EventRecord::Start { seed, policy, population_size, .. }) = events.first() else {
        return Err(Error::Log("event log does not begin with a start record".into()));
    };
    let Some(EventRecord::End { last_day, extinct }) = events.last() else {
        return Err(Error::Log("event log is truncated: no end record".into()));
    };
    if events.len() < 3 {
        return Err(Error::Log("event log has no day records".into()));
    }
    let mut series = Vec::with_capacity(events.len() - 2);
    let mut infected_on: HashMap<AgentId, Day> = HashMap::new();
    let mut first_positive: HashMap<AgentId, Day> = HashMap::new();
    for (i, e) in events[1..events.len() - 1].iter().enumerate() {
        let EventRecord::Day(log) = e else {
            return Err(Error::Log(format!("unexpected record at position {}", i + 1)));
        };
        if log.day as usize != i {
            return Err(Error::Log(format!("expected day {i}, found day {}", log.day)));
        }
        if log.day == 0 {
            for t in &log.transitions {
                infected_on.entry(t.agent).or_insert(0);
            }
        }
        for &a in &log.new_exposed {
            infected_on.entry(a).or_insert(log.day);
        }
        for t in log.tests.iter().filter(|t| t.positive) {
            first_positive.entry(t.agent).or_insert(t.day);
        }
        series.push(DailyRow::from_log(log));
    }
    let last = series.last().expect("non-empty");
    if last.day != *last_day {
        return Err(Error::Log(format!("end record names day {last_day} but the last day record is {}", last.day)));
    }

    let (peak_day, peak_infections) =
        series.iter().map(|r| (r.day, r.infected())).fold((0, 0), |best, x| if x.1 > best.1 { x } else { best });
    let tests_used: usize = series.iter().map(|r| r.tests_used).sum();
    let positives_found: usize = series.iter().map(|r| r.positives_found).sum();
    let mut lag_sum = 0u64;
    for (agent, &day) in &first_positive {
        let start = infected_on
            .get(agent)
            .ok_or_else(|| Error::Log(format!("agent {agent} tested positive but was never infected")))?;
        lag_sum += (day - start) as u64;
    }
    let detected = first_positive.len();
    let total_infected = infected_on.len();
    let summary = Summary {
        seed: *seed,
        policy: *policy,
        population_size: *population_size,
        last_day: *last_day,
        extinct: *extinct,
        total_infected,
        total_deaths: last.d,
        peak_infections,
        peak_day,
        tests_used,
        positives_found,
        precision: (tests_used > 0).then(|| positives_found as f64 / tests_used as f64),
        detected,
        mean_detection_lag: (detected > 0).then(|| lag_sum as f64 / detected as f64),
        fraction_detected: if total_infected == 0 { 0.0 } else { detected as f64 / total_infected as f64 },
    };
    Ok(Metrics { series, summary })
}
