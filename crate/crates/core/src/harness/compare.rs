use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use super::metrics::Summary;
use super::RunOutput;
use crate::error::{config_err, Error, Result};

/// Replications of one arm of a comparison, in seed order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSet {
    pub label: String,
    pub runs: Vec<RunOutput>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyStats {
    pub label: String,
    pub n: usize,
    pub mean: Option<f64>,
    /// Sample standard deviation; `None` below two values.
    pub std: Option<f64>,
}

/// `b - a` over seeds where both values exist.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedDifference {
    pub a: String,
    pub b: String,
    pub n: usize,
    pub mean_diff: Option<f64>,
    pub std_diff: Option<f64>,
    /// Mean of per-seed `b / a`, over seeds with `a > 0`.
    pub mean_ratio: Option<f64>,
    pub ratio_n: usize,
    pub b_lower: usize,
    pub b_higher: usize,
    pub ties: usize,
    /// One-sided sign-test p-values, ties dropped.
    pub p_b_lower: f64,
    pub p_b_higher: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricComparison {
    pub metric: String,
    pub policies: Vec<PolicyStats>,
    pub paired: Vec<PairedDifference>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub seeds: Vec<u64>,
    pub replications: usize,
    /// Only one replication: standard deviations are undefined.
    pub dispersion_undefined: bool,
    pub metrics: Vec<MetricComparison>,
}

impl ComparisonTable {
    pub fn metric(&self, name: &str) -> Option<&MetricComparison> {
        self.metrics.iter().find(|m| m.metric == name)
    }
}

impl MetricComparison {
    pub fn pair(&self, a: &str, b: &str) -> Option<&PairedDifference> {
        self.paired.iter().find(|p| p.a == a && p.b == b)
    }
}

type Extract = fn(&Summary) -> Option<f64>;

const METRICS: [(&str, Extract); 8] = [
    ("total_deaths", |s| Some(s.total_deaths as f64)),
    ("total_infected", |s| Some(s.total_infected as f64)),
    ("peak_infections", |s| Some(s.peak_infections as f64)),
    ("precision", |s| s.precision),
    ("mean_detection_lag", |s| s.mean_detection_lag),
    ("fraction_detected", |s| Some(s.fraction_detected)),
    ("tests_used", |s| Some(s.tests_used as f64)),
    ("positives_found", |s| Some(s.positives_found as f64)),
];

/// P(X >= wins) for X ~ Binomial(wins + losses, 1/2).
pub fn sign_test_p(wins: usize, losses: usize) -> f64 {
    let n = (wins + losses) as u64;
    if n == 0 || wins == 0 {
        return 1.0;
    }
    let b = Binomial::new(0.5, n).expect("valid binomial");
    1.0 - b.cdf(wins as u64 - 1)
}

fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = (xs.len() > 1).then(|| (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (Some(mean), std)
}

fn check_pairing(sets: &[RunSet]) -> Result<Vec<u64>> {
    let first = &sets[0];
    let seeds: Vec<u64> = first.runs.iter().map(|r| r.seed).collect();
    for s in &sets[1..] {
        if s.runs.len() != first.runs.len() {
            return Err(Error::Contract(format!(
                "{} has {} runs, {} has {}",
                s.label,
                s.runs.len(),
                first.label,
                first.runs.len()
            )));
        }
        for (x, y) in first.runs.iter().zip(&s.runs) {
            if x.seed != y.seed {
                return Err(Error::Contract(format!(
                    "seed {} of {} is paired with seed {} of {}",
                    x.seed, first.label, y.seed, s.label
                )));
            }
            if x.day0_hash != y.day0_hash {
                return Err(Error::Contract(format!(
                    "day-0 state differs between {} and {} for seed {}",
                    first.label, s.label, x.seed
                )));
            }
        }
    }
    Ok(seeds)
}

/// Per-arm means and dispersion plus paired differences for every pair of arms.
pub fn compare_runs(sets: &[RunSet]) -> Result<ComparisonTable> {
    if sets.len() < 2 {
        return Err(config_err("comparison needs at least two policies"));
    }
    if sets[0].runs.is_empty() {
        return Err(config_err("comparison needs at least one replication"));
    }
    let seeds = check_pairing(sets)?;
    let mut metrics = Vec::with_capacity(METRICS.len());
    for (name, get) in METRICS {
        let values: Vec<Vec<Option<f64>>> =
            sets.iter().map(|s| s.runs.iter().map(|r| get(&r.metrics.summary)).collect()).collect();
        let policies = sets
            .iter()
            .zip(&values)
            .map(|(s, v)| {
                let xs: Vec<f64> = v.iter().flatten().copied().collect();
                let (mean, std) = mean_std(&xs);
                PolicyStats { label: s.label.clone(), n: xs.len(), mean, std }
            })
            .collect();
        let mut paired = Vec::new();
        for i in 0..sets.len() {
            for j in i + 1..sets.len() {
                paired.push(paired_difference(&sets[i].label, &sets[j].label, &values[i], &values[j]));
            }
        }
        metrics.push(MetricComparison { metric: name.to_string(), policies, paired });
    }
    Ok(ComparisonTable { replications: seeds.len(), dispersion_undefined: seeds.len() < 2, seeds, metrics })
}

fn paired_difference(a: &str, b: &str, va: &[Option<f64>], vb: &[Option<f64>]) -> PairedDifference {
    let pairs: Vec<(f64, f64)> = va.iter().zip(vb).filter_map(|(x, y)| Some(((*x)?, (*y)?))).collect();
    let diffs: Vec<f64> = pairs.iter().map(|(x, y)| y - x).collect();
    let ratios: Vec<f64> = pairs.iter().filter(|(x, _)| *x > 0.0).map(|(x, y)| y / x).collect();
    let (mean_diff, std_diff) = mean_std(&diffs);
    let b_lower = diffs.iter().filter(|&&d| d < 0.0).count();
    let b_higher = diffs.iter().filter(|&&d| d > 0.0).count();
    PairedDifference {
        a: a.to_string(),
        b: b.to_string(),
        n: pairs.len(),
        mean_diff,
        std_diff,
        mean_ratio: mean_std(&ratios).0,
        ratio_n: ratios.len(),
        b_lower,
        b_higher,
        ties: diffs.len() - b_lower - b_higher,
        p_b_lower: sign_test_p(b_lower, b_higher),
        p_b_higher: sign_test_p(b_higher, b_lower),
    }
}
