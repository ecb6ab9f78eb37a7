//! The daily loop: visits, transmission, progression, self-quarantine, then
//! the testing hook and enforced quarantine.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use super::contacts::{is_clique, Csr, DayContacts, MeetingsLog};
use super::disease::{progress_except, AgentDisease, DiseaseParams, DiseaseState, Transition};
use crate::error::{config_err, Error, Result};
use crate::population::Population;
use crate::rng::{SeedTree, Stream};
use crate::{AgentId, Day, LocationId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuarantinePolicy {
    pub duration_days: u32,
    pub self_quarantine_states: Vec<DiseaseState>,
    pub quarantine_on_positive: bool,
}

impl Default for QuarantinePolicy {
    fn default() -> Self {
        Self {
            duration_days: 14,
            self_quarantine_states: vec![DiseaseState::Is, DiseaseState::Ic],
            quarantine_on_positive: true,
        }
    }
}

impl QuarantinePolicy {
    /// No isolation of any kind.
    pub fn none() -> Self {
        Self { duration_days: 0, self_quarantine_states: Vec::new(), quarantine_on_positive: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub disease: DiseaseParams,
    pub quarantine: QuarantinePolicy,
    pub initial_infected: usize,
    /// Daily test budget handed to the testing hook.
    pub tests_per_day: usize,
    /// Days of contact history kept in memory; `None` keeps all of it.
    pub history_days: Option<u32>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            disease: DiseaseParams::default(),
            quarantine: QuarantinePolicy::default(),
            initial_infected: 50,
            tests_per_day: 100,
            history_days: Some(14),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateCounts {
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
}

impl StateCounts {
    fn from_array(c: [usize; 7]) -> Self {
        Self { s: c[0], e: c[1], ia: c[2], is: c[3], ic: c[4], r: c[5], d: c[6] }
    }

    pub fn as_array(&self) -> [usize; 7] {
        [self.s, self.e, self.ia, self.is, self.ic, self.r, self.d]
    }

    pub fn get(&self, state: DiseaseState) -> usize {
        self.as_array()[state.index()]
    }

    pub fn total(&self) -> usize {
        self.as_array().iter().sum()
    }

    pub fn infectious(&self) -> usize {
        self.ia + self.is + self.ic
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestResult {
    pub agent: AgentId,
    pub day: Day,
    pub positive: bool,
}

/// Immutable record of one simulated day.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DayLog {
    pub day: Day,
    /// State counts at the end of the day.
    pub counts: StateCounts,
    pub new_exposed: Vec<AgentId>,
    pub transitions: Vec<Transition>,
    pub tests: Vec<TestResult>,
    /// Agents isolated going into the next day.
    pub in_quarantine: usize,
    pub visits: usize,
    pub meetings: usize,
}

impl DayLog {
    fn entered(&self, state: DiseaseState) -> impl Iterator<Item = AgentId> + '_ {
        self.transitions.iter().filter(move |t| t.to == state).map(|t| t.agent)
    }

    /// Agents that became infectious (entered Ia) today; on day 0 the seeds.
    pub fn new_infections(&self) -> Vec<AgentId> {
        self.entered(DiseaseState::Ia).collect()
    }

    pub fn new_symptomatic(&self) -> Vec<AgentId> {
        self.entered(DiseaseState::Is).collect()
    }

    pub fn new_deaths(&self) -> Vec<AgentId> {
        self.entered(DiseaseState::D).collect()
    }

    pub fn positives_found(&self) -> usize {
        self.tests.iter().filter(|t| t.positive).count()
    }
}

/// What the policy maker sees before choosing the day's tests. Deaths and new
/// symptomatic cases are public; disease states are not.
#[derive(Clone, Copy, Debug)]
pub struct DayObservation<'a> {
    pub day: Day,
    pub budget: usize,
    pub population_size: usize,
    pub new_symptomatic: &'a [AgentId],
    pub new_deaths: &'a [AgentId],
    pub deceased: &'a [bool],
}

pub trait TestSelector {
    fn select(&mut self, obs: &DayObservation<'_>) -> Result<Vec<AgentId>>;
}

impl<F> TestSelector for F
where
    F: FnMut(&DayObservation<'_>) -> Result<Vec<AgentId>>,
{
    fn select(&mut self, obs: &DayObservation<'_>) -> Result<Vec<AgentId>> {
        self(obs)
    }
}

struct PendingDay {
    day: Day,
    new_exposed: Vec<AgentId>,
    transitions: Vec<Transition>,
    new_symptomatic: Vec<AgentId>,
    new_deaths: Vec<AgentId>,
    visits: usize,
    meetings: usize,
}

pub struct Simulation<'p> {
    pop: &'p Population,
    cfg: SimConfig,
    seeds: SeedTree,
    /// Last completed day.
    day: Day,
    disease: Vec<AgentDisease>,
    counts: [usize; 7],
    /// Isolated on day `d` iff `release[a] > d`.
    release: Vec<Day>,
    dead: Vec<bool>,
    propensities: Csr<(LocationId, f64)>,
    meetings: MeetingsLog,
    pending: Option<PendingDay>,
    seeded: Vec<AgentId>,
}

impl<'p> Simulation<'p> {
    /// Everyone starts susceptible; call [`Simulation::seed_infections`] next.
    pub fn new(pop: &'p Population, cfg: SimConfig, seed: u64) -> Result<Self> {
        cfg.disease.validate()?;
        let n = pop.len();
        let items: Vec<(u32, (LocationId, f64))> =
            pop.propensities.iter().map(|p| (p.agent_id, (p.location_id, p.visit_probability))).collect();
        let propensities = Csr::from_items(n, &items);
        let mut counts = [0; 7];
        counts[DiseaseState::S.index()] = n;
        Ok(Self {
            pop,
            meetings: MeetingsLog::new(cfg.history_days),
            cfg,
            seeds: SeedTree::new(seed),
            day: 0,
            disease: vec![AgentDisease::new(DiseaseState::S); n],
            counts,
            release: vec![0; n],
            dead: vec![false; n],
            propensities,
            pending: None,
            seeded: Vec::new(),
        })
    }

    /// Put `n_tilde` uniformly chosen agents in Ia. Only valid on day 0.
    pub fn seed_infections(&mut self, n_tilde: usize) -> Result<()> {
        let n = self.pop.len();
        if n_tilde > n {
            return Err(config_err(format!("cannot seed {n_tilde} infections in {n} agents")));
        }
        if self.day != 0 || !self.seeded.is_empty() {
            return Err(Error::Contract("infections can only be seeded once, before day 1".into()));
        }
        let mut rng = self.seeds.stream(Stream::Seeding);
        let mut chosen: Vec<AgentId> = sample_indices(&mut rng, n, n_tilde).into_iter().map(|i| i as AgentId).collect();
        chosen.sort_unstable();
        for &a in &chosen {
            self.set_state(a, DiseaseState::Ia);
        }
        self.seeded = chosen;
        Ok(())
    }

    pub fn population(&self) -> &'p Population {
        self.pop
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn seed(&self) -> u64 {
        self.seeds.root()
    }

    /// Last completed day (0 before the first step).
    pub fn day(&self) -> Day {
        self.day
    }

    pub fn state(&self, agent: AgentId) -> AgentDisease {
        self.disease[agent as usize]
    }

    pub fn states(&self) -> &[AgentDisease] {
        &self.disease
    }

    pub fn counts(&self) -> StateCounts {
        StateCounts::from_array(self.counts)
    }

    pub fn deceased(&self) -> &[bool] {
        &self.dead
    }

    pub fn meetings(&self) -> &MeetingsLog {
        &self.meetings
    }

    /// Isolated on day `day`.
    pub fn in_quarantine(&self, agent: AgentId, day: Day) -> bool {
        self.release[agent as usize] > day
    }

    /// The loop continues while anyone is exposed or infectious.
    pub fn is_active(&self) -> bool {
        use DiseaseState::*;
        [E, Ia, Is, Ic].iter().any(|s| self.counts[s.index()] > 0)
    }

    /// Record of the seeding day.
    pub fn initial_log(&self) -> DayLog {
        DayLog {
            day: 0,
            counts: self.counts(),
            new_exposed: Vec::new(),
            transitions: self
                .seeded
                .iter()
                .map(|&agent| Transition { agent, from: DiseaseState::S, to: DiseaseState::Ia })
                .collect(),
            tests: Vec::new(),
            in_quarantine: self.quarantined_on(1),
            visits: 0,
            meetings: 0,
        }
    }

    fn quarantined_on(&self, day: Day) -> usize {
        self.release.iter().filter(|&&r| r > day).count()
    }

    fn set_state(&mut self, agent: AgentId, to: DiseaseState) {
        let cur = &mut self.disease[agent as usize];
        self.counts[cur.state.index()] -= 1;
        self.counts[to.index()] += 1;
        *cur = AgentDisease::new(to);
    }

    fn isolate(&mut self, agent: AgentId, from_day: Day) {
        let until = from_day + 1 + self.cfg.quarantine.duration_days;
        let r = &mut self.release[agent as usize];
        *r = (*r).max(until);
    }

    /// Positive iff infectious. Exposed agents test negative.
    pub fn test_agent(&self, agent: AgentId) -> Result<TestResult> {
        let st = self
            .disease
            .get(agent as usize)
            .ok_or_else(|| Error::InvalidInput(format!("agent {agent} does not exist")))?;
        if st.state == DiseaseState::D {
            return Err(Error::InvalidInput(format!("agent {agent} is dead and cannot be tested")));
        }
        let day = self.pending.as_ref().map_or(self.day, |p| p.day);
        Ok(TestResult { agent, day, positive: st.state.is_infectious() })
    }

    /// Visit draws for `day`. One uniform per fractional propensity row is
    /// consumed for every agent, active or not.
    fn draw_daily_visits(&self, day: Day) -> Vec<(AgentId, LocationId)> {
        let mut rng = self.seeds.substream(Stream::Visits, day as u64);
        let mut visits = Vec::with_capacity(self.propensities.nnz());
        for a in 0..self.pop.len() {
            let active = !self.dead[a] && self.release[a] <= day;
            for &(loc, p) in self.propensities.row(a) {
                let fires = if p >= 1.0 {
                    true
                } else {
                    let u: f64 = rng.random();
                    u < p
                };
                if active && fires {
                    visits.push((a as AgentId, loc));
                }
            }
        }
        visits
    }

    /// Realise meetings for the day and return newly exposed agents.
    fn resolve_transmissions(&self, day: Day, visits: &[(AgentId, LocationId)]) -> (DayContacts, Vec<AgentId>) {
        let n = self.pop.len();
        let locations = &self.pop.locations;
        let infectious = |a: AgentId| self.disease[a as usize].state.is_infectious();
        let susceptible = |a: AgentId| self.disease[a as usize].state == DiseaseState::S;

        let mut by_loc: Vec<(u32, AgentId)> = visits.iter().map(|&(a, l)| (l, a)).collect();
        by_loc.sort_unstable();
        let mut hazard = vec![0u32; n];
        let mut pairs = Vec::new();
        for group in by_loc.chunk_by(|x, y| x.0 == y.0) {
            let loc = &locations[group[0].0 as usize];
            let p = loc.meeting_probability;
            if p <= 0.0 || group.len() < 2 {
                continue;
            }
            if is_clique(loc) {
                let k = group.iter().filter(|&&(_, a)| infectious(a)).count() as u32;
                if k > 0 {
                    for &(_, a) in group {
                        if susceptible(a) {
                            hazard[a as usize] += k;
                        }
                    }
                }
                continue;
            }
            let mut rng = self.seeds.substream(Stream::Meetings, ((day as u64) << 32) | loc.id as u64);
            let m = group.len();
            let all_pairs = (m as u64) * (m as u64 - 1) / 2;
            let n_meet = Binomial::new(all_pairs, p).expect("valid binomial").sample(&mut rng);
            for _ in 0..n_meet {
                let i = rng.random_range(0..m);
                let mut j = rng.random_range(0..m - 1);
                if j >= i {
                    j += 1;
                }
                let (a, b) = (group[i].1, group[j].1);
                pairs.push((a, b, loc.id));
                if infectious(a) && susceptible(b) {
                    hazard[b as usize] += 1;
                } else if infectious(b) && susceptible(a) {
                    hazard[a as usize] += 1;
                }
            }
        }

        let beta = self.cfg.disease.beta_contact;
        let mut rng = self.seeds.substream(Stream::Transmission, day as u64);
        let mut exposed = Vec::new();
        for (a, &k) in hazard.iter().enumerate() {
            let u: f64 = rng.random();
            if k > 0 && u < 1.0 - (1.0 - beta).powi(k as i32) {
                exposed.push(a as AgentId);
            }
        }
        (DayContacts::from_parts(day, n, locations.len(), visits, pairs), exposed)
    }

    /// First half of a day: everything up to the testing decision.
    pub fn begin_day(&mut self) -> Result<DayObservation<'_>> {
        if self.pending.is_some() {
            return Err(Error::Contract("begin_day called twice without end_day".into()));
        }
        let day = self.day + 1;
        let visits = self.draw_daily_visits(day);
        let (contacts, new_exposed) = self.resolve_transmissions(day, &visits);
        let meetings = contacts.meeting_count(&self.pop.locations);
        self.meetings.push(contacts);

        let mut fresh = vec![false; self.pop.len()];
        for &a in &new_exposed {
            self.set_state(a, DiseaseState::E);
            fresh[a as usize] = true;
        }
        let mut rng = self.seeds.substream(Stream::Progression, day as u64);
        let transitions = progress_except(&mut self.disease, &self.cfg.disease, &mut rng, |i| fresh[i]);
        let mut new_symptomatic = Vec::new();
        let mut new_deaths = Vec::new();
        for t in &transitions {
            self.counts[t.from.index()] -= 1;
            self.counts[t.to.index()] += 1;
            match t.to {
                DiseaseState::R | DiseaseState::D => {
                    self.release[t.agent as usize] = 0;
                    if t.to == DiseaseState::D {
                        self.dead[t.agent as usize] = true;
                        new_deaths.push(t.agent);
                    }
                }
                s => {
                    if s == DiseaseState::Is {
                        new_symptomatic.push(t.agent);
                    }
                    if self.cfg.quarantine.self_quarantine_states.contains(&s) {
                        self.isolate(t.agent, day);
                    }
                }
            }
        }

        self.pending = Some(PendingDay {
            day,
            new_exposed,
            transitions,
            new_symptomatic,
            new_deaths,
            visits: visits.len(),
            meetings,
        });
        let p = self.pending.as_ref().expect("just set");
        Ok(DayObservation {
            day,
            budget: self.cfg.tests_per_day,
            population_size: self.pop.len(),
            new_symptomatic: &p.new_symptomatic,
            new_deaths: &p.new_deaths,
            deceased: &self.dead,
        })
    }

    /// Second half: run the requested tests, isolate positives, close the day.
    pub fn end_day(&mut self, tests: &[AgentId]) -> Result<DayLog> {
        let Some(pending) = self.pending.as_ref() else {
            return Err(Error::Contract("end_day called without begin_day".into()));
        };
        let day = pending.day;
        if tests.len() > self.cfg.tests_per_day {
            return Err(Error::Contract(format!(
                "{} tests requested on day {day}, budget is {}",
                tests.len(),
                self.cfg.tests_per_day
            )));
        }
        let mut seen = std::collections::HashSet::with_capacity(tests.len());
        if let Some(dup) = tests.iter().find(|a| !seen.insert(**a)) {
            return Err(Error::Contract(format!("agent {dup} requested twice on day {day}")));
        }
        let results = tests.iter().map(|&a| self.test_agent(a)).collect::<Result<Vec<_>>>()?;
        if self.cfg.quarantine.quarantine_on_positive {
            for r in results.iter().filter(|r| r.positive) {
                self.isolate(r.agent, day);
            }
        }
        let p = self.pending.take().expect("checked above");
        self.day = day;
        Ok(DayLog {
            day,
            counts: self.counts(),
            new_exposed: p.new_exposed,
            transitions: p.transitions,
            tests: results,
            in_quarantine: self.quarantined_on(day + 1),
            visits: p.visits,
            meetings: p.meetings,
        })
    }

    pub fn step_day(&mut self, selector: &mut dyn TestSelector) -> Result<DayLog> {
        let obs = self.begin_day()?;
        let tests = selector.select(&obs)?;
        self.end_day(&tests)
    }

    /// Run until nobody is exposed or infectious, or `max_days` have passed.
    pub fn run(&mut self, selector: &mut dyn TestSelector, max_days: Option<Day>) -> Result<Vec<DayLog>> {
        let mut logs = vec![self.initial_log()];
        while self.is_active() && max_days.is_none_or(|m| self.day < m) {
            logs.push(self.step_day(selector)?);
        }
        Ok(logs)
    }
}

/// A selector that never tests anyone.
pub fn no_tests(_: &DayObservation<'_>) -> Result<Vec<AgentId>> {
    Ok(Vec::new())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::{generate, LocationKind, LocationRecord, PopulationConfig, VisitPropensity};
    use DiseaseState::*;

    fn small_pop() -> Population {
        generate(&PopulationConfig { scale: 0.002, ..Default::default() }, 11).unwrap()
    }

    fn toy_location(id: u32, p: f64) -> LocationRecord {
        LocationRecord {
            id,
            kind: if p >= 1.0 { LocationKind::Household } else { LocationKind::Supermarket },
            nta_id: 0,
            longitude: 0.0,
            latitude: 0.0,
            meeting_probability: p,
            parent: None,
            large: false,
        }
    }

    /// Agents all attached to one location with the given probabilities.
    fn toy_pop(n: usize, meeting: f64, visit: f64) -> Population {
        use crate::population::{AgentRecord, Gender, Household};
        let agents = (0..n as u32)
            .map(|id| AgentRecord {
                id,
                age: 30,
                age_band: 6,
                gender: Gender::Female,
                household_id: 0,
                school_class_id: None,
                workgroup_id: None,
                supermarket_id: None,
                station_ids: None,
            })
            .collect();
        Population {
            seed: 0,
            ntas: Vec::new(),
            age_bands: Vec::new(),
            household_structures: Vec::new(),
            agents,
            locations: vec![toy_location(0, meeting)],
            households: vec![Household { location_id: 0, structure: 0, members: (0..n as u32).collect() }],
            propensities: (0..n as u32)
                .map(|a| VisitPropensity { agent_id: a, location_id: 0, visit_probability: visit })
                .collect(),
        }
    }

    #[test]
    fn seeding_counts() {
        let pop = small_pop();
        let n = pop.len();
        let mut sim = Simulation::new(&pop, SimConfig::default(), 1).unwrap();
        sim.seed_infections(50).unwrap();
        assert_eq!(sim.counts().ia, 50);
        assert_eq!(sim.counts().s, n - 50);
        assert!(Simulation::new(&pop, SimConfig::default(), 1).unwrap().seed_infections(n + 1).is_err());

        let mut all = Simulation::new(&pop, SimConfig::default(), 1).unwrap();
        all.seed_infections(n).unwrap();
        assert_eq!(all.counts().ia, n);

        let mut none = Simulation::new(&pop, SimConfig::default(), 1).unwrap();
        none.seed_infections(0).unwrap();
        assert!(!none.is_active());
        assert_eq!(none.run(&mut no_tests, None).unwrap().len(), 1);
    }

    #[test]
    fn household_pair_with_certain_transmission() {
        let pop = toy_pop(2, 1.0, 1.0);
        let cfg = SimConfig {
            disease: DiseaseParams { beta_contact: 1.0, ..Default::default() },
            quarantine: QuarantinePolicy::none(),
            ..Default::default()
        };
        let mut sim = Simulation::new(&pop, cfg, 3).unwrap();
        sim.seed_infections(1).unwrap();
        let log = sim.step_day(&mut no_tests).unwrap();
        assert_eq!(log.new_exposed.len(), 1);
        assert_eq!(log.meetings, 1);
    }

    #[test]
    fn no_infectious_means_no_exposure() {
        let pop = small_pop();
        let mut sim = Simulation::new(&pop, SimConfig::default(), 3).unwrap();
        let log = sim.step_day(&mut no_tests).unwrap();
        assert!(log.new_exposed.is_empty());
        assert!(!sim.is_active());
    }

    #[test]
    fn quarantined_agents_do_not_visit() {
        let pop = toy_pop(3, 1.0, 1.0);
        let cfg =
            SimConfig { disease: DiseaseParams { beta_contact: 0.0, ..Default::default() }, ..Default::default() };
        let mut sim = Simulation::new(&pop, cfg, 5).unwrap();
        sim.seed_infections(1).unwrap();
        let seed = sim.initial_log().new_infections()[0];
        sim.begin_day().unwrap();
        let log = sim.end_day(&[seed]).unwrap();
        assert!(log.tests[0].positive);
        assert!(sim.in_quarantine(seed, 2));
        sim.begin_day().unwrap();
        let day2 = sim.meetings().get(2).unwrap();
        assert!(day2.visits_of(seed).is_empty());
        assert_eq!(day2.visitors(0).len(), 2);
    }

    #[test]
    fn self_quarantine_and_release() {
        let pop = toy_pop(1, 1.0, 1.0);
        let cfg = SimConfig {
            disease: DiseaseParams { p_is_given_ia: 1.0, lambda_ia: 1.0, lambda_is: 1.0, ..Default::default() },
            ..Default::default()
        };
        let mut sim = Simulation::new(&pop, cfg, 9).unwrap();
        sim.seed_infections(1).unwrap();
        let log = sim.step_day(&mut no_tests).unwrap();
        assert_eq!(log.new_symptomatic(), vec![0]);
        for d in 2..=15 {
            assert!(sim.in_quarantine(0, d), "day {d}");
        }
        assert!(!sim.in_quarantine(0, 16));
        // Exits Is the next day to R or Ic.
        sim.step_day(&mut no_tests).unwrap();
        if sim.state(0).state == R {
            assert!(!sim.in_quarantine(0, 3));
        }
    }

    #[test]
    fn zero_duration_quarantine_is_empty_next_day() {
        let pop = toy_pop(20, 1.0, 1.0);
        let cfg = SimConfig {
            quarantine: QuarantinePolicy { duration_days: 0, ..Default::default() },
            disease: DiseaseParams { p_is_given_ia: 1.0, lambda_ia: 1.0, ..Default::default() },
            ..Default::default()
        };
        let mut sim = Simulation::new(&pop, cfg, 2).unwrap();
        sim.seed_infections(10).unwrap();
        let log = sim.step_day(&mut no_tests).unwrap();
        assert!(!log.new_symptomatic().is_empty());
        assert_eq!(log.in_quarantine, 0);
    }

    #[test]
    fn budget_and_dead_agents_are_contract_errors() {
        let pop = toy_pop(10, 1.0, 1.0);
        let cfg = SimConfig { tests_per_day: 2, ..Default::default() };
        let mut sim = Simulation::new(&pop, cfg.clone(), 1).unwrap();
        sim.seed_infections(1).unwrap();
        let mut greedy = |_: &DayObservation<'_>| Ok(vec![0, 1, 2]);
        assert!(matches!(sim.step_day(&mut greedy), Err(Error::Contract(_))));

        let cfg = SimConfig {
            disease: DiseaseParams {
                p_is_given_ia: 1.0,
                p_ic_given_is: 1.0,
                p_d_given_ic: 1.0,
                lambda_ia: 1.0,
                lambda_is: 1.0,
                lambda_ic: 1.0,
                beta_contact: 0.0,
                ..Default::default()
            },
            ..cfg
        };
        let mut sim = Simulation::new(&pop, cfg, 1).unwrap();
        sim.seed_infections(1).unwrap();
        let seed = sim.initial_log().new_infections()[0];
        for _ in 0..3 {
            sim.step_day(&mut no_tests).unwrap();
        }
        assert_eq!(sim.state(seed).state, D);
        assert!(sim.test_agent(seed).is_err());
    }

    #[test]
    fn test_results_follow_state() {
        let pop = toy_pop(3, 1.0, 1.0);
        let mut sim = Simulation::new(&pop, SimConfig::default(), 1).unwrap();
        sim.disease[0] = AgentDisease::new(E);
        sim.disease[1] = AgentDisease::new(Ia);
        sim.disease[2] = AgentDisease::new(R);
        assert!(!sim.test_agent(0).unwrap().positive);
        assert!(sim.test_agent(1).unwrap().positive);
        assert!(!sim.test_agent(2).unwrap().positive);
        assert!(sim.test_agent(3).is_err());
    }

    #[test]
    fn supermarket_visits_are_binomial() {
        let pop = toy_pop(1, 1.0, 2.0 / 7.0);
        let cfg = SimConfig { history_days: None, ..Default::default() };
        let mut sim = Simulation::new(&pop, cfg, 17).unwrap();
        let mut visits = 0;
        for _ in 0..700 {
            visits += sim.step_day(&mut no_tests).unwrap().visits;
        }
        let sd = (700.0f64 * (2.0 / 7.0) * (5.0 / 7.0)).sqrt();
        assert!((visits as f64 - 200.0).abs() < 3.0 * sd, "{visits}");
    }

    #[test]
    fn large_location_contact_mean() {
        let pop = toy_pop(45_000, 6.70e-4, 1.0);
        let cfg =
            SimConfig { disease: DiseaseParams { beta_contact: 0.0, ..Default::default() }, ..Default::default() };
        let mut sim = Simulation::new(&pop, cfg, 23).unwrap();
        let log = sim.step_day(&mut no_tests).unwrap();
        let mean = 2.0 * log.meetings as f64 / 45_000.0;
        let expected = 44_999.0 * 6.70e-4;
        assert!((mean - expected).abs() < 0.1 * expected, "{mean}");
        assert!((mean - 30.0).abs() < 3.0);
    }

    #[test]
    fn zero_beta_never_exposes() {
        let pop = small_pop();
        let cfg =
            SimConfig { disease: DiseaseParams { beta_contact: 0.0, ..Default::default() }, ..Default::default() };
        let mut sim = Simulation::new(&pop, cfg, 4).unwrap();
        sim.seed_infections(20).unwrap();
        let logs = sim.run(&mut no_tests, Some(60)).unwrap();
        assert!(logs.iter().all(|l| l.new_exposed.is_empty() && l.counts.e == 0));
        let infected: usize = logs.iter().map(|l| l.new_infections().len()).sum();
        assert_eq!(infected, 20);
    }

    #[test]
    fn deterministic_logs() {
        let pop = small_pop();
        let run = || {
            let mut sim = Simulation::new(&pop, SimConfig::default(), 77).unwrap();
            sim.seed_infections(10).unwrap();
            sim.run(&mut no_tests, Some(30)).unwrap()
        };
        assert_eq!(run(), run());
    }
}
