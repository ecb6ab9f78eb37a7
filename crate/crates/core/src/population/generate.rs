use std::f64::consts::TAU;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use super::tables::{AgeGenderDist, HouseholdStructureDist, InteractionTable, NtaSpec, TablePaths, Tables};
use super::{AgentRecord, Gender, Household, LocationKind, LocationRecord, Population, VisitPropensity};
use crate::error::{config_err, Error, Result};
use crate::rng::{SeedTree, Stream};
use crate::{AgentId, LocationId, NtaId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationConfig {
    /// Multiplies every layout count and the full-city population.
    pub scale: f64,
    pub full_population: u32,
    /// Locations are scattered uniformly within this radius (degrees) of the NTA centre.
    pub nta_radius_deg: f64,
    pub mixing_locations_per_nta: u32,
    pub mixing_visit_probability: f64,
    /// Mean random contacts per visit to a mixing location.
    pub mixing_contacts: f64,
    pub employment_rate: f64,
    pub working_ages: (u8, u8),
    pub school_ages: (u8, u8),
    pub adult_age: u8,
    /// Relative odds of a worker landing in a large workplace rather than a small one.
    pub large_workplace_weight: f64,
    pub tables: TablePaths,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            scale: 0.01,
            full_population: 2_000_000,
            nta_radius_deg: 0.01,
            mixing_locations_per_nta: 1,
            mixing_visit_probability: 0.05,
            mixing_contacts: 10.0,
            employment_rate: 0.959,
            working_ages: (20, 60),
            school_ages: (6, 18),
            adult_age: 18,
            large_workplace_weight: 5.0,
            tables: TablePaths::default(),
        }
    }
}

impl PopulationConfig {
    pub fn agent_count(&self) -> usize {
        (self.full_population as f64 * self.scale).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale <= 1.0) {
            return Err(config_err(format!("population scale {} must be in (0, 1]", self.scale)));
        }
        for (name, p) in
            [("mixing_visit_probability", self.mixing_visit_probability), ("employment_rate", self.employment_rate)]
        {
            if !(0.0..=1.0).contains(&p) {
                return Err(config_err(format!("{name} must be in [0, 1]")));
            }
        }
        if self.nta_radius_deg < 0.0 || self.mixing_contacts < 0.0 || self.large_workplace_weight <= 0.0 {
            return Err(config_err("negative radius/contacts or non-positive workplace weight"));
        }
        Ok(())
    }
}

/// Draw one (age band, exact age, gender) triple. Age is uniform within the band.
pub fn sample_age_gender<R: Rng + ?Sized>(dist: &AgeGenderDist, rng: &mut R) -> (usize, u8, Gender) {
    let band = dist.age.sample(rng);
    let spec = &dist.bands[band];
    let age = rng.random_range(spec.min_age..=spec.max_age);
    let gender = if rng.random::<f64>() < dist.female_share { Gender::Female } else { Gender::Male };
    (band, age, gender)
}

#[derive(Clone, Debug)]
pub struct GridOptions {
    pub radius_deg: f64,
    pub mixing_per_nta: u32,
}

fn scatter<R: Rng + ?Sized>(nta: &NtaSpec, radius: f64, rng: &mut R) -> (f64, f64) {
    let r = radius * rng.random::<f64>().sqrt();
    let theta = TAU * rng.random::<f64>();
    (nta.longitude + r * theta.cos(), nta.latitude + r * theta.sin())
}

/// One record per counted unit of every NTA, plus the mixing locations.
///
/// Records are emitted NTA by NTA, in the order households, schools, stations,
/// supermarkets, workplaces, mixing. Mixing locations start with a meeting
/// probability of 0; [`generate`] calibrates them once the population is known.
pub fn build_location_grid<R: Rng + ?Sized>(
    ntas: &[NtaSpec],
    interactions: &InteractionTable,
    opts: &GridOptions,
    rng: &mut R,
) -> Vec<LocationRecord> {
    let mut out = Vec::new();
    for (nta_idx, nta) in ntas.iter().enumerate() {
        let groups = [
            (LocationKind::Household, nta.households, interactions.household_meeting),
            (LocationKind::School, nta.schools, 0.0),
            (LocationKind::Station, nta.stations, interactions.station_meeting),
            (LocationKind::Supermarket, nta.supermarkets, interactions.supermarket_meeting),
            (LocationKind::Workplace, nta.workplaces, 0.0),
            (LocationKind::Mixing, opts.mixing_per_nta, 0.0),
        ];
        for (kind, count, meeting_probability) in groups {
            for _ in 0..count {
                let (longitude, latitude) = scatter(nta, opts.radius_deg, rng);
                out.push(LocationRecord {
                    id: out.len() as LocationId,
                    kind,
                    nta_id: nta_idx as NtaId,
                    longitude,
                    latitude,
                    meeting_probability,
                    parent: None,
                    large: false,
                });
            }
        }
    }
    out
}

/// Largest-remainder apportionment of `total` units over `shares`.
fn apportion(shares: &[f64], total: usize) -> Vec<usize> {
    let raw: Vec<f64> = shares.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut remaining = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        counts[i] += 1;
        remaining -= 1;
    }
    counts
}

/// Partition agents into households following the structure mix.
///
/// Household counts per structure are apportioned exactly from the shares. Heads
/// (the single adult or the couple) are adults; everyone else is a dependent of a
/// with-children household. Minors are always dependents; when there are more
/// agents than heads plus minors, randomly chosen adults fill in as adult
/// dependents. Couples pair opposite-gender heads by age rank.
pub fn assign_households<R: Rng + ?Sized>(
    agents: &mut [AgentRecord],
    household_locations: &[LocationId],
    dist: &HouseholdStructureDist,
    adult_age: u8,
    rng: &mut R,
) -> Result<Vec<Household>> {
    let n = agents.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let minors: Vec<AgentId> = agents.iter().filter(|a| a.age < adult_age).map(|a| a.id).collect();
    let mut adults: Vec<AgentId> = agents.iter().filter(|a| a.age >= adult_age).map(|a| a.id).collect();
    if adults.is_empty() {
        return Err(Error::Generation(format!("{n} agents but no adults to head a household")));
    }
    let heads_per = dist.heads_per_household();
    let wc_share = dist.with_children_share();
    if !minors.is_empty() && wc_share == 0.0 {
        return Err(Error::Generation(format!(
            "{} minors but the structure mix has no with-children households",
            minors.len()
        )));
    }
    let mut h = (adults.len() as f64 / heads_per).floor() as usize;
    if wc_share > 0.0 {
        h = h.min((n as f64 / (heads_per + wc_share)).floor() as usize);
    }
    h = h.min(household_locations.len());

    let counts = loop {
        if h == 0 {
            return Err(Error::Generation(format!(
                "cannot partition {n} agents ({} adults, {} minors) into at most {} households with this structure mix",
                adults.len(),
                minors.len(),
                household_locations.len()
            )));
        }
        let counts = apportion(&dist.shares, h);
        let heads: usize = counts.iter().zip(&dist.structures).map(|(c, s)| c * s.adults as usize).sum();
        let with_children: usize =
            counts.iter().zip(&dist.structures).filter(|(_, s)| s.with_children).map(|(c, _)| c).sum();
        if heads <= adults.len() {
            let deps = n - heads;
            if deps >= with_children && (deps == 0 || with_children > 0) {
                break counts;
            }
        }
        h -= 1;
    };
    let heads_needed: usize = counts.iter().zip(&dist.structures).map(|(c, s)| c * s.adults as usize).sum();

    adults.shuffle(rng);
    let adult_dependents = adults.len() - heads_needed;
    let mut dependents: Vec<AgentId> = minors;
    dependents.extend(adults.drain(..adult_dependents));
    let heads = adults;

    let couples_needed: usize =
        counts.iter().zip(&dist.structures).filter(|(_, s)| s.adults == 2).map(|(c, _)| c).sum();
    let (mut males, mut females): (Vec<AgentId>, Vec<AgentId>) =
        heads.iter().partition(|&&id| agents[id as usize].gender == Gender::Male);
    let opposite = couples_needed.min(males.len()).min(females.len());
    let by_age = |v: &mut Vec<AgentId>| v.sort_by_key(|&id| (agents[id as usize].age, id));
    let mut couple_m: Vec<AgentId> = males.drain(..opposite).collect();
    let mut couple_f: Vec<AgentId> = females.drain(..opposite).collect();
    by_age(&mut couple_m);
    by_age(&mut couple_f);
    let mut couples: Vec<[AgentId; 2]> = couple_m.into_iter().zip(couple_f).map(|(m, f)| [m, f]).collect();
    let mut rest: Vec<AgentId> = males.into_iter().chain(females).collect();
    let same = couples_needed - opposite;
    let mut same_gender: Vec<AgentId> = rest.drain(..2 * same).collect();
    by_age(&mut same_gender);
    couples.extend(same_gender.chunks_exact(2).map(|c| [c[0], c[1]]));
    let mut singles = rest;
    couples.shuffle(rng);
    singles.shuffle(rng);

    let mut kinds: Vec<usize> = counts.iter().enumerate().flat_map(|(t, &c)| std::iter::repeat_n(t, c)).collect();
    kinds.shuffle(rng);
    let mut locs = household_locations.to_vec();
    locs.shuffle(rng);

    let mut households = Vec::with_capacity(kinds.len());
    let mut with_children = Vec::new();
    for (i, &t) in kinds.iter().enumerate() {
        let s = &dist.structures[t];
        let members = if s.adults == 2 {
            couples.pop().expect("couple count apportioned").to_vec()
        } else {
            vec![singles.pop().expect("single count apportioned")]
        };
        if s.with_children {
            with_children.push(i);
        }
        households.push(Household { location_id: locs[i], structure: t as u8, members });
    }
    debug_assert!(couples.is_empty() && singles.is_empty());

    dependents.shuffle(rng);
    for (j, dep) in dependents.into_iter().enumerate() {
        let hh = if j < with_children.len() {
            with_children[j]
        } else {
            with_children[rng.random_range(0..with_children.len())]
        };
        households[hh].members.push(dep);
    }
    for h in &households {
        for &m in &h.members {
            agents[m as usize].household_id = h.location_id;
        }
    }
    Ok(households)
}

fn dist2(a: (f64, f64), b: (f64, f64)) -> f64 {
    let dx = a.0 - b.0;
    let dy = a.1 - b.1;
    dx * dx + dy * dy
}

fn nearest_by<F: Fn(&LocationRecord) -> f64>(
    candidates: &[LocationId],
    locations: &[LocationRecord],
    cost: F,
) -> Option<LocationId> {
    candidates
        .iter()
        .map(|&id| (cost(&locations[id as usize]), id))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, id)| id)
}

fn ids_of(locations: &[LocationRecord], kind: LocationKind) -> Vec<LocationId> {
    locations.iter().filter(|l| l.kind == kind).map(|l| l.id).collect()
}

/// Split `members` into `n` contiguous chunks whose sizes differ by at most one.
fn even_chunks<T: Copy>(members: &[T], n: usize) -> Vec<Vec<T>> {
    let base = members.len() / n;
    let extra = members.len() % n;
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    for i in 0..n {
        let len = base + usize::from(i < extra);
        out.push(members[start..start + len].to_vec());
        start += len;
    }
    out
}

fn group_count(members: usize, mean_size: f64) -> usize {
    ((members as f64 / mean_size).round() as usize).max(1)
}

/// Attach school-age agents to the school nearest their household and cut each
/// school's roster, sorted by age, into classes of about `class_size`.
/// Returns the number of classes created.
pub fn assign_schools(
    agents: &mut [AgentRecord],
    locations: &mut Vec<LocationRecord>,
    class_size: f64,
    class_meeting: f64,
    ages: (u8, u8),
) -> usize {
    let schools = ids_of(locations, LocationKind::School);
    if schools.is_empty() {
        return 0;
    }
    let mut rosters: Vec<Vec<AgentId>> = vec![Vec::new(); locations.len()];
    for a in agents.iter() {
        if !(ages.0..=ages.1).contains(&a.age) {
            continue;
        }
        let home = locations[a.household_id as usize].coords();
        let school = nearest_by(&schools, locations, |l| dist2(l.coords(), home)).expect("schools non-empty");
        rosters[school as usize].push(a.id);
    }
    let mut created = 0;
    for school in schools {
        let mut roster = std::mem::take(&mut rosters[school as usize]);
        if roster.is_empty() {
            continue;
        }
        roster.sort_by_key(|&id| (agents[id as usize].age, id));
        let parent = locations[school as usize].clone();
        for class in even_chunks(&roster, group_count(roster.len(), class_size)) {
            let id = locations.len() as LocationId;
            locations.push(LocationRecord {
                id,
                kind: LocationKind::SchoolClass,
                meeting_probability: class_meeting,
                parent: Some(school),
                ..parent.clone()
            });
            for m in class {
                agents[m as usize].school_class_id = Some(id);
            }
            created += 1;
        }
    }
    created
}

#[derive(Clone, Debug)]
pub struct WorkOptions {
    pub employment_rate: f64,
    pub working_ages: (u8, u8),
    pub small_share: f64,
    pub small_group_size: f64,
    pub large_group_size: f64,
    pub large_weight: f64,
    pub work_meeting: f64,
}

/// Employ working-age agents, scatter them over workplaces (not geo-dependent)
/// and split each workplace into workgroups. Returns the number of workgroups.
pub fn assign_work<R: Rng + ?Sized>(
    agents: &mut [AgentRecord],
    locations: &mut Vec<LocationRecord>,
    opts: &WorkOptions,
    rng: &mut R,
) -> usize {
    let workplaces = ids_of(locations, LocationKind::Workplace);
    if workplaces.is_empty() || opts.employment_rate <= 0.0 {
        return 0;
    }
    for &w in &workplaces {
        locations[w as usize].large = rng.random::<f64>() >= opts.small_share;
    }
    let weights: Vec<f64> =
        workplaces.iter().map(|&w| if locations[w as usize].large { opts.large_weight } else { 1.0 }).collect();
    let pick = WeightedIndex::new(&weights).expect("positive workplace weights");
    let mut staff: Vec<Vec<AgentId>> = vec![Vec::new(); workplaces.len()];
    for a in agents.iter() {
        if (opts.working_ages.0..=opts.working_ages.1).contains(&a.age) && rng.random::<f64>() < opts.employment_rate {
            staff[pick.sample(rng)].push(a.id);
        }
    }
    let mut created = 0;
    for (slot, &w) in workplaces.iter().enumerate() {
        let mut members = std::mem::take(&mut staff[slot]);
        if members.is_empty() {
            continue;
        }
        members.shuffle(rng);
        let parent = locations[w as usize].clone();
        let size = if parent.large { opts.large_group_size } else { opts.small_group_size };
        for group in even_chunks(&members, group_count(members.len(), size)) {
            let id = locations.len() as LocationId;
            locations.push(LocationRecord {
                id,
                kind: LocationKind::Workgroup,
                meeting_probability: opts.work_meeting,
                parent: Some(w),
                ..parent.clone()
            });
            for m in group {
                agents[m as usize].workgroup_id = Some(id);
            }
            created += 1;
        }
    }
    created
}

/// Choose supermarkets and stations for adults and emit every agent's visit
/// propensities: household, class, workgroup, supermarket, stations, mixing.
pub fn assign_supermarkets_stations(
    agents: &mut [AgentRecord],
    locations: &[LocationRecord],
    interactions: &InteractionTable,
    mixing_visit_probability: f64,
    adult_age: u8,
) -> Vec<VisitPropensity> {
    let markets = ids_of(locations, LocationKind::Supermarket);
    let stations = ids_of(locations, LocationKind::Station);
    let n_nta = locations.iter().map(|l| l.nta_id as usize + 1).max().unwrap_or(0);
    let mut mixing: Vec<Vec<LocationId>> = vec![Vec::new(); n_nta];
    for l in locations.iter().filter(|l| l.kind == LocationKind::Mixing) {
        mixing[l.nta_id as usize].push(l.id);
    }

    let mut out = Vec::new();
    for a in agents.iter_mut() {
        let mut push = |loc: LocationId, p: f64| {
            out.push(VisitPropensity { agent_id: a.id, location_id: loc, visit_probability: p });
        };
        let home_loc = &locations[a.household_id as usize];
        let home = home_loc.coords();
        push(a.household_id, 1.0);
        if let Some(c) = a.school_class_id {
            push(c, 1.0);
        }
        if let Some(w) = a.workgroup_id {
            push(w, 1.0);
        }
        if a.age >= adult_age {
            match a.workgroup_id {
                Some(w) => {
                    let work = locations[w as usize].coords();
                    a.supermarket_id = nearest_by(&markets, locations, |l| {
                        dist2(l.coords(), home).sqrt() + dist2(l.coords(), work).sqrt()
                    });
                    let near_home = nearest_by(&stations, locations, |l| dist2(l.coords(), home));
                    let near_work = nearest_by(&stations, locations, |l| dist2(l.coords(), work));
                    a.station_ids = near_home.zip(near_work);
                }
                None => {
                    a.supermarket_id = nearest_by(&markets, locations, |l| dist2(l.coords(), home));
                }
            }
            if let Some(m) = a.supermarket_id {
                push(m, interactions.supermarket_visit);
            }
            if let Some((s_home, s_work)) = a.station_ids {
                push(s_home, interactions.station_visit);
                if s_work != s_home {
                    push(s_work, interactions.station_visit);
                }
            }
        }
        if mixing_visit_probability > 0.0 {
            let local = &mixing[home_loc.nta_id as usize];
            if !local.is_empty() {
                push(local[a.id as usize % local.len()], mixing_visit_probability);
            }
        }
    }
    out
}

/// Generate the full population for `seed`.
pub fn generate(cfg: &PopulationConfig, seed: u64) -> Result<Population> {
    cfg.validate()?;
    let tables = Tables::load(&cfg.tables)?;
    let mut rng = SeedTree::new(seed).stream(Stream::Population);
    let ntas: Vec<NtaSpec> = tables.ntas.iter().map(|n| n.scaled(cfg.scale)).collect();
    let n = cfg.agent_count();

    let mut agents: Vec<AgentRecord> = (0..n)
        .map(|i| {
            let (band, age, gender) = sample_age_gender(&tables.age_gender, &mut rng);
            AgentRecord {
                id: i as AgentId,
                age,
                age_band: band as u8,
                gender,
                household_id: 0,
                school_class_id: None,
                workgroup_id: None,
                supermarket_id: None,
                station_ids: None,
            }
        })
        .collect();

    let grid_opts = GridOptions { radius_deg: cfg.nta_radius_deg, mixing_per_nta: cfg.mixing_locations_per_nta };
    let mut locations = build_location_grid(&ntas, &tables.interactions, &grid_opts, &mut rng);
    let household_locs = ids_of(&locations, LocationKind::Household);
    let households = assign_households(&mut agents, &household_locs, &tables.households, cfg.adult_age, &mut rng)?;
    let it = &tables.interactions;
    assign_schools(&mut agents, &mut locations, it.class_size, it.class_meeting, cfg.school_ages);
    let work = WorkOptions {
        employment_rate: cfg.employment_rate,
        working_ages: cfg.working_ages,
        small_share: it.small_workplace_share,
        small_group_size: it.small_group_size,
        large_group_size: it.large_group_size,
        large_weight: cfg.large_workplace_weight,
        work_meeting: it.work_meeting,
    };
    assign_work(&mut agents, &mut locations, &work, &mut rng);
    let propensities =
        assign_supermarkets_stations(&mut agents, &locations, it, cfg.mixing_visit_probability, cfg.adult_age);

    // Calibrate mixing locations so a visit yields `mixing_contacts` meetings on average.
    let mut expected_visitors = vec![0.0f64; locations.len()];
    for p in &propensities {
        if locations[p.location_id as usize].kind == LocationKind::Mixing {
            expected_visitors[p.location_id as usize] += p.visit_probability;
        }
    }
    for loc in locations.iter_mut().filter(|l| l.kind == LocationKind::Mixing) {
        let others = expected_visitors[loc.id as usize] - 1.0;
        loc.meeting_probability = if others > 0.0 { (cfg.mixing_contacts / others).min(1.0) } else { 1.0 };
    }

    let pop = Population {
        seed,
        ntas,
        age_bands: tables.age_gender.bands.clone(),
        household_structures: tables.households.structures.clone(),
        agents,
        locations,
        households,
        propensities,
    };
    pop.validate()?;
    Ok(pop)
}
