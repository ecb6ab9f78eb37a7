//! Seeded, replicated experiments: population, epidemic, observed graph and
//! testing policy wired together, with CSV / JSONL / JSON outputs.

mod compare;
mod metrics;
mod validate;

pub use compare::{
    compare_runs, sign_test_p, ComparisonTable, MetricComparison, PairedDifference, PolicyStats, RunSet,
};
pub use metrics::{compute_metrics, read_events, DailyRow, EventRecord, Metrics, Summary};
pub use validate::{validate_run, ValidationReport};

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::abm::{DiseaseParams, QuarantinePolicy, SimConfig, Simulation};
use crate::error::{config_err, Result};
use crate::observed::{make_report, ObservedGraph};
use crate::population::{generate, Population, PopulationConfig};
use crate::rng::{SeedTree, Stream};
use crate::sampler::{make_policy, PolicyInput, PolicyKind, SamplerConfig};
use crate::Day;

pub const SEED_ENV: &str = "EPITEST_SEED";
pub const OUT_ENV: &str = "EPITEST_OUT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Base seed; replication `r` runs with `seed + r`.
    pub seed: u64,
    pub replications: u32,
    pub horizon_days: Day,
    pub policy: PolicyKind,
    /// Fixed daily budget. When unset, `tests_fraction` of the population.
    pub tests_per_day: Option<usize>,
    pub tests_fraction: f64,
    pub initial_infected: usize,
    /// Probability that a positive person reports a given non-household contact.
    pub reporting_rate: f64,
    /// Population seed; defaults to `seed`. One population serves every replication.
    pub population_seed: Option<u64>,
    /// Load this population file instead of generating one.
    pub population_file: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// Run replications one after another on the calling thread.
    pub deterministic: bool,
    pub population: PopulationConfig,
    pub disease: DiseaseParams,
    pub quarantine: QuarantinePolicy,
    pub sampler: SamplerConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            replications: 1,
            horizon_days: 120,
            policy: PolicyKind::ActiveBandit,
            tests_per_day: None,
            tests_fraction: 0.005,
            initial_infected: 50,
            reporting_rate: 0.8,
            population_seed: None,
            population_file: None,
            out_dir: None,
            deterministic: false,
            population: PopulationConfig::default(),
            disease: DiseaseParams::default(),
            quarantine: QuarantinePolicy::default(),
            sampler: SamplerConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| config_err(e.to_string()))
    }

    /// Apply `EPITEST_SEED` and `EPITEST_OUT` if set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(s) = std::env::var(SEED_ENV) {
            self.seed = s.trim().parse().map_err(|_| config_err(format!("{SEED_ENV}={s:?} is not an integer")))?;
        }
        if let Ok(dir) = std::env::var(OUT_ENV) {
            self.out_dir = Some(dir.into());
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon_days < 1 {
            return Err(config_err("horizon_days must be at least 1"));
        }
        if self.replications < 1 {
            return Err(config_err("replications must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.tests_fraction) {
            return Err(config_err("tests_fraction must be in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.reporting_rate) {
            return Err(config_err("reporting_rate must be in [0, 1]"));
        }
        self.disease.validate()?;
        self.sampler.validate()
    }

    pub fn budget(&self, population_size: usize) -> usize {
        self.tests_per_day.unwrap_or_else(|| (self.tests_fraction * population_size as f64).round() as usize)
    }

    pub fn replication_seeds(&self) -> Vec<u64> {
        (0..self.replications as u64).map(|r| self.seed.wrapping_add(r)).collect()
    }

    pub fn load_population(&self) -> Result<Population> {
        match &self.population_file {
            Some(path) => {
                let pop = Population::read_json(std::io::BufReader::new(File::open(path)?))?;
                pop.validate()?;
                Ok(pop)
            }
            None => generate(&self.population, self.population_seed.unwrap_or(self.seed)),
        }
    }

    fn sim_config(&self, population_size: usize) -> SimConfig {
        SimConfig {
            disease: self.disease.clone(),
            quarantine: self.quarantine.clone(),
            initial_infected: self.initial_infected,
            tests_per_day: self.budget(population_size),
            history_days: Some(self.sampler.window_days),
        }
    }
}

/// One finished replication.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub seed: u64,
    pub policy: PolicyKind,
    /// Hash of the population, seed and seeded state; equal across policies for one seed.
    pub day0_hash: String,
    pub metrics: Metrics,
}

/// Directory holding the files of one replication.
pub fn run_dir(out: &Path, policy: PolicyKind, seed: u64) -> PathBuf {
    out.join(policy.name()).join(format!("seed_{seed}"))
}

fn population_digest(pop: &Population) -> [u8; 32] {
    Sha256::digest(pop.to_json_bytes()).into()
}

struct RunFiles {
    daily: csv::Writer<File>,
    events: BufWriter<File>,
    decisions: BufWriter<File>,
}

impl RunFiles {
    fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            daily: csv::Writer::from_path(dir.join("daily.csv"))?,
            events: BufWriter::new(File::create(dir.join("events.jsonl"))?),
            decisions: BufWriter::new(File::create(dir.join("decisions.jsonl"))?),
        })
    }

    fn event(&mut self, e: &EventRecord) -> Result<()> {
        if let EventRecord::Day(log) = e {
            self.daily.serialize(DailyRow::from_log(log))?;
        }
        serde_json::to_writer(&mut self.events, e)?;
        self.events.write_all(b"\n")?;
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        self.daily.flush()?;
        self.events.flush()?;
        self.decisions.flush()?;
        Ok(())
    }
}

/// Run one replication of `policy`. With `out` set, writes `daily.csv`,
/// `events.jsonl`, `decisions.jsonl` and `summary.json` there. Logs are
/// flushed even when the run fails part way.
pub fn run_replication(
    pop: &Population,
    cfg: &ExperimentConfig,
    policy: PolicyKind,
    seed: u64,
    out: Option<&Path>,
) -> Result<RunOutput> {
    run_with_digest(pop, &population_digest(pop), cfg, policy, seed, out)
}

fn run_with_digest(
    pop: &Population,
    pop_digest: &[u8; 32],
    cfg: &ExperimentConfig,
    policy_kind: PolicyKind,
    seed: u64,
    out: Option<&Path>,
) -> Result<RunOutput> {
    cfg.validate()?;
    let mut files = out.map(RunFiles::create).transpose()?;
    let result = simulate(pop, pop_digest, cfg, policy_kind, seed, &mut files);
    if let Some(f) = files.as_mut() {
        f.flush()?;
    }
    let events = result?;
    let metrics = compute_metrics(&events)?;
    let EventRecord::Start { day0_hash, .. } = &events[0] else { unreachable!("checked by compute_metrics") };
    let run = RunOutput { seed, policy: policy_kind, day0_hash: day0_hash.clone(), metrics };
    if let Some(dir) = out {
        let summary = serde_json::to_vec_pretty(&run.metrics.summary)?;
        fs::write(dir.join("summary.json"), summary)?;
    }
    Ok(run)
}

fn simulate(
    pop: &Population,
    pop_digest: &[u8; 32],
    cfg: &ExperimentConfig,
    policy_kind: PolicyKind,
    seed: u64,
    files: &mut Option<RunFiles>,
) -> Result<Vec<EventRecord>> {
    let sim_cfg = cfg.sim_config(pop.len());
    let budget = sim_cfg.tests_per_day;
    let mut sim = Simulation::new(pop, sim_cfg, seed)?;
    sim.seed_infections(cfg.initial_infected)?;

    let mut h = Sha256::new();
    h.update(pop_digest);
    h.update(seed.to_le_bytes());
    h.update(sim.states().iter().map(|s| s.state.index() as u8).collect::<Vec<u8>>());
    let day0_hash = hex::encode(h.finalize());

    let mut events = vec![EventRecord::Start {
        seed,
        policy: policy_kind,
        population_size: pop.len(),
        tests_per_day: budget,
        horizon_days: cfg.horizon_days,
        day0_hash,
    }];
    events.push(EventRecord::Day(sim.initial_log()));
    if let Some(f) = files.as_mut() {
        f.event(&events[0])?;
        f.event(&events[1])?;
    }

    let seeds = SeedTree::new(seed);
    let mut policy = make_policy(policy_kind, &cfg.sampler, seed)?;
    let mut graph = ObservedGraph::new();
    let window = cfg.sampler.window_days;
    let positive_quarantine_days = cfg.quarantine.quarantine_on_positive.then_some(cfg.quarantine.duration_days);

    while sim.day() < cfg.horizon_days && sim.is_active() {
        let obs = sim.begin_day()?;
        let input = PolicyInput { obs: &obs, graph: &graph, locations: &pop.locations, positive_quarantine_days };
        let decision = policy.select(&input)?;
        let log = sim.end_day(&decision.tests())?;
        for r in &log.tests {
            let report = r.positive.then(|| {
                let mut rng = seeds.substream(Stream::Reporting, ((r.day as u64) << 24) | r.agent as u64);
                make_report(sim.meetings(), &pop.locations, r.agent, r.day, window, cfg.reporting_rate, &mut rng)
            });
            graph.record_test(r, report.as_ref());
        }
        if log.day > window {
            graph.prune_before(log.day - window);
        }
        policy.observe(&log.tests)?;
        if let Some(f) = files.as_mut() {
            serde_json::to_writer(&mut f.decisions, &decision)?;
            f.decisions.write_all(b"\n")?;
            f.event(&EventRecord::Day(log.clone()))?;
        }
        events.push(EventRecord::Day(log));
    }

    let end = EventRecord::End { last_day: sim.day(), extinct: !sim.is_active() };
    if let Some(f) = files.as_mut() {
        f.event(&end)?;
    }
    events.push(end);
    Ok(events)
}

fn run_seeds(pop: &Population, cfg: &ExperimentConfig, policy: PolicyKind, seeds: &[u64]) -> Result<Vec<RunOutput>> {
    let digest = population_digest(pop);
    let one = |&seed: &u64| {
        let dir = cfg.out_dir.as_deref().map(|o| run_dir(o, policy, seed));
        run_with_digest(pop, &digest, cfg, policy, seed, dir.as_deref())
    };
    if cfg.deterministic {
        seeds.iter().map(one).collect()
    } else {
        seeds.par_iter().map(one).collect()
    }
}

/// All replications of `cfg.policy`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunOutput>> {
    cfg.validate()?;
    let pop = cfg.load_population()?;
    run_experiment_on(&pop, cfg)
}

pub fn run_experiment_on(pop: &Population, cfg: &ExperimentConfig) -> Result<Vec<RunOutput>> {
    cfg.validate()?;
    run_seeds(pop, cfg, cfg.policy, &cfg.replication_seeds())
}

/// Every policy on the same population and seeds, then the paired comparison.
/// With an output directory, writes `comparison.json` there.
pub fn compare_policies(cfg: &ExperimentConfig, policies: &[PolicyKind]) -> Result<(Vec<RunSet>, ComparisonTable)> {
    cfg.validate()?;
    if policies.len() < 2 {
        return Err(config_err("comparison needs at least two policies"));
    }
    let pop = cfg.load_population()?;
    let seeds = cfg.replication_seeds();
    let mut sets = Vec::with_capacity(policies.len());
    for &p in policies {
        sets.push(RunSet { label: p.name().to_string(), runs: run_seeds(&pop, cfg, p, &seeds)? });
    }
    let table = compare_runs(&sets)?;
    if let Some(out) = &cfg.out_dir {
        fs::create_dir_all(out)?;
        fs::write(out.join("comparison.json"), serde_json::to_vec_pretty(&table)?)?;
    }
    Ok((sets, table))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            population: PopulationConfig { scale: 0.002, ..Default::default() },
            horizon_days: 30,
            initial_infected: 10,
            policy: PolicyKind::Random,
            ..Default::default()
        }
    }

    #[test]
    fn config_round_trips_and_validates() {
        let cfg = small();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
        let partial =
            ExperimentConfig::from_toml_str("seed = 9\npolicy = \"contact_tracing\"\n[sampler.ucb]\nk = 4\n").unwrap();
        assert_eq!((partial.seed, partial.policy, partial.sampler.ucb.k), (9, PolicyKind::ContactTracing, 4));
        assert!(ExperimentConfig::from_toml_str("bogus = 1").is_err());
        assert!(ExperimentConfig { horizon_days: 0, ..cfg.clone() }.validate().is_err());
        assert!(ExperimentConfig { replications: 0, ..cfg }.validate().is_err());
    }

    #[test]
    fn default_budget_is_half_a_percent() {
        assert_eq!(ExperimentConfig::default().budget(20_000), 100);
        assert_eq!(ExperimentConfig { tests_per_day: Some(7), ..Default::default() }.budget(20_000), 7);
    }

    #[test]
    fn zero_transmission_keeps_only_seeds() {
        let cfg = ExperimentConfig { disease: DiseaseParams { beta_contact: 0.0, ..Default::default() }, ..small() };
        let pop = cfg.load_population().unwrap();
        let run = run_replication(&pop, &cfg, PolicyKind::Random, 3, None).unwrap();
        assert_eq!(run.metrics.summary.total_infected, 10);
    }

    #[test]
    fn writes_outputs_deterministically() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small();
        let pop = cfg.load_population().unwrap();
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        let ra = run_replication(&pop, &cfg, PolicyKind::ContactTracing, 5, Some(&a)).unwrap();
        let rb = run_replication(&pop, &cfg, PolicyKind::ContactTracing, 5, Some(&b)).unwrap();
        assert_eq!(ra, rb);
        for f in ["daily.csv", "events.jsonl", "decisions.jsonl", "summary.json"] {
            assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
        }
        let header = fs::read_to_string(a.join("daily.csv")).unwrap();
        assert!(header.starts_with("day,S,E,Ia,Is,Ic,R,D,new_exposed,tests_used,positives_found,in_quarantine\n"));
        let report = validate_run(&a).unwrap();
        assert!(report.violations.is_empty(), "{:?}", report.violations);
    }
}
