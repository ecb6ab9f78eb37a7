//! Property tests for the simulator, observed graph, walks and sampler invariants.

use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

use crate::abm::{DiseaseParams, DiseaseState, QuarantinePolicy, SimConfig, Simulation, TestResult};
use crate::embedding::{metapath_walks, EmbeddingTable, HeteroGraph, MetaPath, NodeKey, NodeType};
use crate::harness::{run_replication, validate_run, ExperimentConfig};
use crate::observed::{ContactReport, ObservedGraph, ReportedContact};
use crate::population::{generate, LocationKind, Population, PopulationConfig};
use crate::sampler::{oracle_select, ucb_scores, update_posteriors, Arm, ArmPosteriors, PolicyKind, UcbParams};
use crate::AgentId;
use proptest::prelude::*;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_population() -> &'static Population {
    static POP: OnceLock<Population> = OnceLock::new();
    POP.get_or_init(|| generate(&PopulationConfig { scale: 0.002, ..Default::default() }, 11).unwrap())
}

fn sim_config(beta: f64, quarantine: bool, tests: usize) -> SimConfig {
    SimConfig {
        disease: DiseaseParams { beta_contact: beta, ..Default::default() },
        quarantine: if quarantine { QuarantinePolicy::default() } else { QuarantinePolicy::none() },
        initial_infected: 20,
        tests_per_day: tests,
        history_days: Some(14),
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn epidemic_invariants(seed in any::<u64>(), beta in 0.0f64..0.3, quarantine in any::<bool>(), tests in 0usize..30) {
        let pop = small_population();
        let mut sim = Simulation::new(pop, sim_config(beta, quarantine, tests), seed).unwrap();
        sim.seed_infections(20).unwrap();
        let n = pop.len();
        let mut prev = sim.counts();
        let mut states: Vec<DiseaseState> = sim.states().iter().map(|s| s.state).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..40 {
            let before = states.clone();
            let obs = sim.begin_day().unwrap();
            let day = obs.day;
            let alive: Vec<AgentId> = (0..n as AgentId).filter(|&a| !obs.deceased[a as usize]).collect();
            let pick: Vec<AgentId> = alive.choose_multiple(&mut rng, obs.budget).copied().collect();
            let log = sim.end_day(&pick).unwrap();
            // Conservation.
            prop_assert_eq!(log.counts.total(), n);
            // Monotone absorbing compartments.
            prop_assert!(log.counts.r >= prev.r && log.counts.d >= prev.d);
            // Absorption: no transition out of R or D, and transitions start where the agent was.
            for &a in &log.new_exposed {
                prop_assert_eq!(states[a as usize], DiseaseState::S);
                states[a as usize] = DiseaseState::E;
            }
            for t in &log.transitions {
                prop_assert!(!t.from.is_absorbing());
                prop_assert_eq!(states[t.agent as usize], t.from);
                states[t.agent as usize] = t.to;
            }
            // Budget.
            prop_assert!(log.tests.len() <= tests);
            // Agents dead before today draw no visits.
            let contacts = sim.meetings().get(day).unwrap();
            for (a, s) in before.iter().enumerate() {
                if *s == DiseaseState::D {
                    prop_assert!(contacts.visits_of(a as AgentId).is_empty());
                }
            }
            // Zero transmission.
            if beta == 0.0 {
                prop_assert_eq!(log.counts.e, 0);
            }
            prev = log.counts;
        }
    }

    #[test]
    fn quarantined_agents_do_not_visit(seed in any::<u64>()) {
        let pop = small_population();
        let mut sim = Simulation::new(pop, sim_config(0.2, true, 0), seed).unwrap();
        sim.seed_infections(20).unwrap();
        for _ in 0..30 {
            let day = sim.day() + 1;
            let isolated: Vec<AgentId> = (0..pop.len() as AgentId).filter(|&a| sim.in_quarantine(a, day)).collect();
            sim.begin_day().unwrap();
            let contacts = sim.meetings().get(day).unwrap();
            for &a in &isolated {
                prop_assert!(contacts.visits_of(a).is_empty());
            }
            sim.end_day(&[]).unwrap();
        }
    }

    #[test]
    fn zero_transmission_never_exposes(seed in any::<u64>()) {
        let pop = small_population();
        let mut sim = Simulation::new(pop, sim_config(0.0, false, 0), seed).unwrap();
        sim.seed_infections(20).unwrap();
        for _ in 0..40 {
            sim.begin_day().unwrap();
            let log = sim.end_day(&[]).unwrap();
            prop_assert_eq!(log.counts.e, 0);
            prop_assert!(log.new_exposed.is_empty());
        }
    }

    #[test]
    fn snapshot_stays_in_window(
        records in proptest::collection::vec((0u32..60, 0u32..40, proptest::collection::vec((0u32..40, 0u32..10, 0u32..60), 0..8)), 1..30),
        day in 0u32..60,
        window in 1u32..20,
    ) {
        let mut g = ObservedGraph::new();
        for (tday, agent, contacts) in &records {
            let report = ContactReport {
                subject: *agent,
                contacts: contacts
                    .iter()
                    .filter(|(p, _, _)| p != agent)
                    .map(|&(person, location, d)| ReportedContact { person, location, day: d.min(*tday), intensity: 1 })
                    .collect(),
            };
            g.record_test(&TestResult { agent: *agent, day: *tday, positive: true }, Some(&report));
        }
        let snap = g.window_snapshot(day, window);
        let in_window = |d: u32| d + window > day && d <= day;
        for (d, _, _) in snap.visit_edges() {
            prop_assert!(in_window(d));
        }
        for (d, _, _, _) in snap.meetings() {
            prop_assert!(in_window(d));
        }
        for l in snap.labels().values() {
            prop_assert!(in_window(l.day));
        }
    }

    #[test]
    fn metapath_walks_follow_edges_and_types(seed in any::<u64>(), n_people in 2u32..30, n_locs in 1u32..8, density in 0.1f64..0.9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut nodes: Vec<NodeKey> = (0..n_people).map(NodeKey::person).collect();
        nodes.extend((0..n_locs).map(NodeKey::location));
        nodes.push(NodeKey::new(NodeType::Neighborhood, 0));
        let mut edges = Vec::new();
        for p in 0..n_people {
            for l in 0..n_locs {
                if rng.random::<f64>() < density {
                    edges.push((NodeKey::person(p), NodeKey::location(l), rng.random_range(1..4) as f64));
                }
            }
        }
        for l in 0..n_locs {
            edges.push((NodeKey::location(l), NodeKey::new(NodeType::Neighborhood, 0), 1.0));
        }
        let g = HeteroGraph::from_edges(nodes, &edges).unwrap();
        let mps = MetaPath::defaults();
        let corpus = metapath_walks(&g, &mps, 12, 4, &mut rng).unwrap();
        for w in &corpus.walks {
            prop_assert!(!w.is_empty() && w.len() <= 12);
            for pair in w.windows(2) {
                prop_assert!(g.neighbors(pair[0]).0.contains(&pair[1]));
            }
            let follows = |mp: &MetaPath| w.iter().enumerate().all(|(i, &v)| g.node_type(v) == mp.type_at(i));
            prop_assert!(mps.iter().any(follows));
        }
    }

    #[test]
    fn posteriors_ignore_result_order(outcomes in proptest::collection::vec((any::<bool>(), any::<bool>()), 0..60), seed in any::<u64>()) {
        let results: Vec<TestResult> =
            outcomes.iter().enumerate().map(|(i, &(_, p))| TestResult { agent: i as AgentId, day: 1, positive: p }).collect();
        let attribution: HashMap<AgentId, Arm> = outcomes
            .iter()
            .enumerate()
            .map(|(i, &(d, _))| (i as AgentId, if d { Arm::Densification } else { Arm::Expansion }))
            .collect();
        let mut shuffled = results.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut a = ArmPosteriors::new(1.0, 1.0).unwrap();
        let mut b = a;
        update_posteriors(&mut a, &results, &attribution).unwrap();
        // Split into two days as well.
        let (first, second) = shuffled.split_at(shuffled.len() / 2);
        update_posteriors(&mut b, first, &attribution).unwrap();
        update_posteriors(&mut b, second, &attribution).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn ucb_is_monotone_in_eta(seed in any::<u64>(), k in 1usize..8, eta_lo in 0.0f64..2.0, bump in 0.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 40u32;
        let keys: Vec<NodeKey> = (0..n).map(NodeKey::person).collect();
        let vectors: Vec<f32> = (0..n * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let table = EmbeddingTable::from_vectors(keys, 3, vectors).unwrap();
        let labels: BTreeMap<AgentId, bool> = (0..15).map(|a| (a, rng.random::<bool>())).collect();
        let cands: Vec<AgentId> = (15..n).collect();
        let lo = ucb_scores(&labels, &table, &cands, &UcbParams { k, eta: eta_lo, epsilon_dist: 1e-3 }).unwrap();
        let hi = ucb_scores(&labels, &table, &cands, &UcbParams { k, eta: eta_lo + bump, epsilon_dist: 1e-3 }).unwrap();
        for (a, b) in lo.iter().zip(&hi) {
            prop_assert!(b.score >= a.score);
        }
        let zero = ucb_scores(&labels, &table, &cands, &UcbParams { k, eta: 0.0, epsilon_dist: 1e-3 }).unwrap();
        let by_score = oracle_select(&zero.iter().map(|s| (s.agent, s.score)).collect::<Vec<_>>(), cands.len());
        let by_f = oracle_select(&zero.iter().map(|s| (s.agent, s.f_hat)).collect::<Vec<_>>(), cands.len());
        prop_assert_eq!(by_score, by_f);
    }

    #[test]
    fn oracle_matches_exhaustive_search(scores in proptest::collection::vec(0.0f64..1.0, 0..12), budget in 0usize..13) {
        let items: Vec<(AgentId, f64)> = scores.iter().enumerate().map(|(i, &s)| (i as AgentId, s)).collect();
        let chosen = oracle_select(&items, budget);
        let value = |set: &[AgentId]| set.iter().map(|&a| scores[a as usize]).sum::<f64>();
        let n = items.len();
        let mut best = f64::NEG_INFINITY;
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize == budget.min(n) {
                let set: Vec<AgentId> = (0..n as AgentId).filter(|&i| mask >> i & 1 == 1).collect();
                best = best.max(value(&set));
            }
        }
        prop_assert_eq!(chosen.len(), budget.min(n));
        prop_assert!((value(&chosen) - best).abs() < 1e-12);
    }
}

#[test]
fn every_policy_respects_the_budget_and_validates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        population: PopulationConfig { scale: 0.002, ..Default::default() },
        horizon_days: 25,
        initial_infected: 20,
        tests_per_day: Some(15),
        ..Default::default()
    };
    let pop = cfg.load_population().unwrap();
    for policy in PolicyKind::ALL {
        let out = dir.path().join(policy.name());
        let run = run_replication(&pop, &cfg, policy, 4, Some(&out)).unwrap();
        assert!(run.metrics.series.iter().all(|r| r.tests_used <= 15), "{policy}");
        let report = validate_run(&out).unwrap();
        assert!(report.is_ok(), "{policy}: {:?}", report.violations);
    }
}

#[test]
fn household_locations_have_certain_meetings() {
    let pop = small_population();
    assert!(pop.locations.iter().filter(|l| l.kind == LocationKind::Household).all(|l| l.meeting_probability == 1.0));
}
