//! Test allocation policies.
//!
//! The active policy splits each day's budget between expansion (people not
//! yet in the observed graph, sampled uniformly) and densification (people in
//! the graph, ranked by a kNN-UCB score over node embeddings). The split is a
//! per-slot Thompson draw between two Beta posteriors over the positive rate
//! of each arm.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::abm::{DayObservation, TestResult};
use crate::embedding::{
    metapath_walks, random_walks, train_skipgram, EmbeddingTable, KnnIndex, MetaPath, NodeKey, SkipGramParams,
};
use crate::error::{config_err, Error, Result};
use crate::observed::{ObservedGraph, DEFAULT_WINDOW_DAYS};
use crate::population::LocationRecord;
use crate::rng::{SeedTree, Stream};
use crate::{AgentId, Day};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Expansion,
    Densification,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaPosterior {
    pub alpha: f64,
    pub beta: f64,
    pub successes: u64,
    pub failures: u64,
}

impl BetaPosterior {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(config_err(format!("Beta prior ({alpha}, {beta}) must be positive")));
        }
        Ok(Self { alpha, beta, successes: 0, failures: 0 })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        Beta::new(self.successes as f64 + self.alpha, self.failures as f64 + self.beta)
            .expect("positive parameters")
            .sample(rng)
    }

    pub fn mean(&self) -> f64 {
        let a = self.successes as f64 + self.alpha;
        a / (a + self.failures as f64 + self.beta)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmPosteriors {
    pub expansion: BetaPosterior,
    pub densification: BetaPosterior,
}

impl ArmPosteriors {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let p = BetaPosterior::new(alpha, beta)?;
        Ok(Self { expansion: p, densification: p })
    }

    pub fn get(&self, arm: Arm) -> &BetaPosterior {
        match arm {
            Arm::Expansion => &self.expansion,
            Arm::Densification => &self.densification,
        }
    }

    fn get_mut(&mut self, arm: Arm) -> &mut BetaPosterior {
        match arm {
            Arm::Expansion => &mut self.expansion,
            Arm::Densification => &mut self.densification,
        }
    }
}

/// Slot counts `(expansion, densification)`: each of the `d_max` slots goes to
/// the arm with the larger posterior draw, ties to expansion.
pub fn thompson_split<R: Rng + ?Sized>(post: &ArmPosteriors, d_max: usize, rng: &mut R) -> (usize, usize) {
    let mut dens = 0;
    for _ in 0..d_max {
        let t_exp = post.expansion.draw(rng);
        let t_den = post.densification.draw(rng);
        if t_den > t_exp {
            dens += 1;
        }
    }
    (d_max - dens, dens)
}

/// Add each result to the arm that selected it.
pub fn update_posteriors(
    post: &mut ArmPosteriors,
    results: &[TestResult],
    attribution: &HashMap<AgentId, Arm>,
) -> Result<()> {
    let mut next = *post;
    for r in results {
        let arm = attribution
            .get(&r.agent)
            .ok_or_else(|| Error::Contract(format!("test of agent {} is not attributed to an arm", r.agent)))?;
        let p = next.get_mut(*arm);
        if r.positive {
            p.successes += 1;
        } else {
            p.failures += 1;
        }
    }
    *post = next;
    Ok(())
}

/// Up to `n` distinct living agents outside the observed graph, uniformly
/// without replacement. Fewer are returned when the pool is smaller.
pub fn expansion_sample<R: Rng + ?Sized>(
    deceased: &[bool],
    in_graph: impl Fn(AgentId) -> bool,
    n: usize,
    rng: &mut R,
) -> Vec<AgentId> {
    let pool: Vec<AgentId> =
        (0..deceased.len() as AgentId).filter(|&a| !deceased[a as usize] && !in_graph(a)).collect();
    let take = n.min(pool.len());
    sample_indices(rng, pool.len(), take).into_iter().map(|i| pool[i]).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UcbParams {
    pub k: usize,
    pub eta: f64,
    pub epsilon_dist: f64,
}

impl Default for UcbParams {
    fn default() -> Self {
        Self { k: 10, eta: 0.5, epsilon_dist: 1e-3 }
    }
}

impl UcbParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(config_err("k must be at least 1"));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(config_err("eta must be non-negative"));
        }
        if self.epsilon_dist.is_nan() || self.epsilon_dist <= 0.0 {
            return Err(config_err("epsilon_dist must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UcbScore {
    pub agent: AgentId,
    pub f_hat: f64,
    pub sigma: f64,
    pub score: f64,
}

/// Score each candidate from its labelled k-neighborhood:
/// `f = mean(y / max(dist, eps))`, `sigma = mean(dist)`, `score = f + eta * sigma`.
/// Both sums are divided by `k` even when fewer than `k` labelled nodes exist.
pub fn ucb_scores(
    labels: &BTreeMap<AgentId, bool>,
    table: &EmbeddingTable,
    candidates: &[AgentId],
    params: &UcbParams,
) -> Result<Vec<UcbScore>> {
    params.validate()?;
    let index = KnnIndex::new(table, labels.keys().map(|&a| NodeKey::person(a)));
    if index.is_empty() {
        return Err(Error::InvalidInput("no labelled nodes to score against; expand instead".into()));
    }
    candidates
        .iter()
        .map(|&agent| {
            let key = NodeKey::person(agent);
            let x =
                table.vector(key).ok_or_else(|| Error::InvalidInput(format!("candidate {agent} has no embedding")))?;
            let nn = index.query(x, params.k, Some(key));
            let m = params.k as f64;
            let mut f_hat = 0.0;
            let mut sigma = 0.0;
            for n in &nn.neighbors {
                if labels[&n.key.id] {
                    f_hat += 1.0 / n.dist.max(params.epsilon_dist);
                }
                sigma += n.dist;
            }
            f_hat /= m;
            sigma /= m;
            Ok(UcbScore { agent, f_hat, sigma, score: f_hat + params.eta * sigma })
        })
        .collect()
}

/// The `budget` highest scores, ties by ascending id. Exact for an additive objective.
pub fn oracle_select(scores: &[(AgentId, f64)], budget: usize) -> Vec<AgentId> {
    let mut ranked = scores.to_vec();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.into_iter().take(budget).map(|(a, _)| a).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    ActiveBandit,
    Random,
    SymptomaticOnly,
    ContactTracing,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [Self::ActiveBandit, Self::Random, Self::SymptomaticOnly, Self::ContactTracing];

    pub fn name(self) -> &'static str {
        match self {
            Self::ActiveBandit => "active_bandit",
            Self::Random => "random",
            Self::SymptomaticOnly => "symptomatic_only",
            Self::ContactTracing => "contact_tracing",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Self::ALL.into_iter().find(|k| k.name() == norm).ok_or_else(|| config_err(format!("unknown policy {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub walk_len: usize,
    pub walks_per_node: usize,
    /// Empty means uniform walks over all node types.
    pub metapaths: Vec<MetaPath>,
    pub skipgram: SkipGramParams,
    pub warm_start: bool,
}

/// Smaller than the standalone skip-gram defaults so a 20k-agent, 120-day run
/// stays around a minute on one core.
impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            walk_len: 10,
            walks_per_node: 2,
            metapaths: MetaPath::defaults(),
            skipgram: SkipGramParams { dim: 16, epochs: 1, ..SkipGramParams::default() },
            warm_start: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub alpha: f64,
    pub beta: f64,
    pub ucb: UcbParams,
    /// Agents tested within this many days are not densification candidates.
    pub retest_cooldown_days: u32,
    pub window_days: u32,
    pub embedding: EmbeddingConfig,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            ucb: UcbParams::default(),
            retest_cooldown_days: 3,
            window_days: DEFAULT_WINDOW_DAYS,
            embedding: EmbeddingConfig::default(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        BetaPosterior::new(self.alpha, self.beta)?;
        self.ucb.validate()?;
        self.embedding.skipgram.validate()?;
        if self.embedding.walk_len == 0 {
            return Err(config_err("walk_len must be at least 1"));
        }
        if self.window_days == 0 {
            return Err(config_err("window_days must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectedTest {
    pub agent: AgentId,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub arm: Option<Arm>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

/// One line of the decisions log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub day: Day,
    pub policy: PolicyKind,
    /// Thompson split before any reallocation.
    pub expansion_slots: usize,
    pub densification_slots: usize,
    pub candidates: usize,
    pub selected: Vec<SelectedTest>,
}

impl Decision {
    pub fn tests(&self) -> Vec<AgentId> {
        self.selected.iter().map(|s| s.agent).collect()
    }
}

/// Everything a policy may look at when choosing tests.
pub struct PolicyInput<'a> {
    pub obs: &'a DayObservation<'a>,
    pub graph: &'a ObservedGraph,
    pub locations: &'a [LocationRecord],
    /// Isolation length after a positive test, or `None` if positives are not isolated.
    pub positive_quarantine_days: Option<u32>,
}

pub trait TestingPolicy {
    fn kind(&self) -> PolicyKind;
    fn select(&mut self, input: &PolicyInput<'_>) -> Result<Decision>;
    /// Results of the tests chosen by the last `select`.
    fn observe(&mut self, results: &[TestResult]) -> Result<()>;
}

/// Build the policy named by `kind`. `seed` is the replication root seed.
pub fn make_policy(kind: PolicyKind, cfg: &SamplerConfig, seed: u64) -> Result<Box<dyn TestingPolicy>> {
    cfg.validate()?;
    Ok(match kind {
        PolicyKind::ActiveBandit => Box::new(ActiveBandit::new(cfg.clone(), seed)?),
        k => Box::new(Baseline::new(k, cfg.window_days, seed)),
    })
}

/// Uniform over living agents.
pub fn random_select<R: Rng + ?Sized>(deceased: &[bool], d_max: usize, rng: &mut R) -> Vec<AgentId> {
    expansion_sample(deceased, |_| false, d_max, rng)
}

/// Contacts of positives in `snapshot` that carry no label, most recent
/// contact day first, then ascending id.
pub fn traced_contacts(snapshot: &ObservedGraph, deceased: &[bool]) -> Vec<AgentId> {
    let labels = snapshot.labels();
    let positive = |a: AgentId| labels.get(&a).is_some_and(|l| l.positive);
    let mut latest: HashMap<AgentId, Day> = HashMap::new();
    for (day, a, b, _) in snapshot.meetings() {
        for (src, dst) in [(a, b), (b, a)] {
            if positive(src) && !labels.contains_key(&dst) && !deceased[dst as usize] {
                let e = latest.entry(dst).or_insert(day);
                *e = (*e).max(day);
            }
        }
    }
    let mut out: Vec<(Day, AgentId)> = latest.into_iter().map(|(a, d)| (d, a)).collect();
    out.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)));
    out.into_iter().map(|(_, a)| a).collect()
}

/// Baseline policies: random, symptomatic-only and symptomatic plus contact tracing.
pub struct Baseline {
    kind: PolicyKind,
    window_days: u32,
    queue: VecDeque<AgentId>,
    rng: ChaCha8Rng,
}

impl Baseline {
    pub fn new(kind: PolicyKind, window_days: u32, seed: u64) -> Self {
        Self { kind, window_days, queue: VecDeque::new(), rng: SeedTree::new(seed).stream(Stream::Sampler) }
    }

    fn pop_symptomatic(&mut self, deceased: &[bool], budget: usize, out: &mut Vec<AgentId>) {
        while out.len() < budget {
            let Some(a) = self.queue.pop_front() else { break };
            if !deceased[a as usize] && !out.contains(&a) {
                out.push(a);
            }
        }
    }
}

impl TestingPolicy for Baseline {
    fn kind(&self) -> PolicyKind {
        self.kind
    }

    fn select(&mut self, input: &PolicyInput<'_>) -> Result<Decision> {
        let obs = input.obs;
        let budget = obs.budget;
        let mut tests = Vec::new();
        match self.kind {
            PolicyKind::Random => tests = random_select(obs.deceased, budget, &mut self.rng),
            PolicyKind::SymptomaticOnly => {
                self.queue.extend(obs.new_symptomatic);
                self.pop_symptomatic(obs.deceased, budget, &mut tests);
            }
            PolicyKind::ContactTracing => {
                self.queue.extend(obs.new_symptomatic);
                self.pop_symptomatic(obs.deceased, budget, &mut tests);
                if tests.len() < budget {
                    let snap = input.graph.window_snapshot(obs.day.saturating_sub(1), self.window_days);
                    let chosen: HashSet<AgentId> = tests.iter().copied().collect();
                    let extra = traced_contacts(&snap, obs.deceased).into_iter().filter(|a| !chosen.contains(a));
                    tests.extend(extra.take(budget - tests.len()));
                }
            }
            PolicyKind::ActiveBandit => return Err(Error::Contract("baseline cannot run the active policy".into())),
        }
        Ok(Decision {
            day: obs.day,
            policy: self.kind,
            expansion_slots: 0,
            densification_slots: 0,
            candidates: 0,
            selected: tests.into_iter().map(|agent| SelectedTest { agent, arm: None, score: None }).collect(),
        })
    }

    fn observe(&mut self, _results: &[TestResult]) -> Result<()> {
        Ok(())
    }
}

/// Thompson-split expansion / kNN-UCB densification.
pub struct ActiveBandit {
    cfg: SamplerConfig,
    seeds: SeedTree,
    rng: ChaCha8Rng,
    posteriors: ArmPosteriors,
    attribution: HashMap<AgentId, Arm>,
    previous: Option<EmbeddingTable>,
}

impl ActiveBandit {
    pub fn new(cfg: SamplerConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let seeds = SeedTree::new(seed);
        Ok(Self {
            posteriors: ArmPosteriors::new(cfg.alpha, cfg.beta)?,
            rng: seeds.stream(Stream::Sampler),
            seeds,
            cfg,
            attribution: HashMap::new(),
            previous: None,
        })
    }

    pub fn posteriors(&self) -> &ArmPosteriors {
        &self.posteriors
    }

    /// Densification candidates: persons in the snapshot who are alive, not
    /// isolated after a positive test, and not tested within the cooldown.
    pub fn candidates(
        &self,
        snapshot: &ObservedGraph,
        day: Day,
        deceased: &[bool],
        positive_quarantine: Option<u32>,
    ) -> Vec<AgentId> {
        snapshot
            .persons()
            .filter(|&a| {
                if deceased[a as usize] {
                    return false;
                }
                match snapshot.label(a) {
                    None => true,
                    Some(l) => {
                        let isolated = l.positive && positive_quarantine.is_some_and(|q| l.day + 1 + q > day);
                        let cooling = l.day + self.cfg.retest_cooldown_days >= day;
                        !isolated && !cooling
                    }
                }
            })
            .collect()
    }

    fn embed(&mut self, snapshot: &ObservedGraph, locations: &[LocationRecord], day: Day) -> Result<EmbeddingTable> {
        let g = snapshot.hetero_view(locations);
        let mut rng = self.seeds.substream(Stream::Embedding, day as u64);
        let e = &self.cfg.embedding;
        let corpus = if e.metapaths.is_empty() {
            random_walks(&g, e.walk_len, e.walks_per_node, &mut rng)?
        } else {
            metapath_walks(&g, &e.metapaths, e.walk_len, e.walks_per_node, &mut rng)?
        };
        let warm = if e.warm_start { self.previous.as_ref() } else { None };
        let table = train_skipgram(&corpus, &e.skipgram, rng.random(), warm)?;
        Ok(table)
    }
}

impl TestingPolicy for ActiveBandit {
    fn kind(&self) -> PolicyKind {
        PolicyKind::ActiveBandit
    }

    fn select(&mut self, input: &PolicyInput<'_>) -> Result<Decision> {
        let obs = input.obs;
        let day = obs.day;
        let budget = obs.budget;
        let snapshot = input.graph.window_snapshot(day.saturating_sub(1), self.cfg.window_days);
        let labels: BTreeMap<AgentId, bool> = snapshot.labels().iter().map(|(&a, l)| (a, l.positive)).collect();
        let candidates = self.candidates(&snapshot, day, obs.deceased, input.positive_quarantine_days);

        let (exp_slots, den_slots) = if labels.is_empty() || candidates.is_empty() {
            // Cold start: nothing to score against yet.
            (budget, 0)
        } else {
            thompson_split(&self.posteriors, budget, &mut self.rng)
        };

        let mut ranked: Vec<UcbScore> = Vec::new();
        if den_slots > 0 {
            let table = self.embed(&snapshot, input.locations, day)?;
            ranked = ucb_scores(&labels, &table, &candidates, &self.cfg.ucb)?;
            ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.agent.cmp(&b.agent)));
            self.previous = Some(table);
        }

        let mut selected = Vec::with_capacity(budget);
        let dens_now = den_slots.min(ranked.len());
        for s in &ranked[..dens_now] {
            selected.push(SelectedTest { agent: s.agent, arm: Some(Arm::Densification), score: Some(s.score) });
        }
        // Unused densification slots fall back to expansion and vice versa.
        let want_exp = exp_slots + (den_slots - dens_now);
        let expanded = expansion_sample(obs.deceased, |a| snapshot.contains_person(a), want_exp, &mut self.rng);
        let short = want_exp - expanded.len();
        selected.extend(expanded.into_iter().map(|agent| SelectedTest {
            agent,
            arm: Some(Arm::Expansion),
            score: None,
        }));
        for s in ranked.iter().skip(dens_now).take(short) {
            selected.push(SelectedTest { agent: s.agent, arm: Some(Arm::Densification), score: Some(s.score) });
        }

        self.attribution = selected.iter().map(|s| (s.agent, s.arm.expect("set above"))).collect();
        Ok(Decision {
            day,
            policy: PolicyKind::ActiveBandit,
            expansion_slots: exp_slots,
            densification_slots: den_slots,
            candidates: candidates.len(),
            selected,
        })
    }

    fn observe(&mut self, results: &[TestResult]) -> Result<()> {
        update_posteriors(&mut self.posteriors, results, &self.attribution)?;
        self.attribution.clear();
        Ok(())
    }
}
