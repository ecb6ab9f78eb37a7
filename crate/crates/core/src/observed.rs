//! The policy maker's partial view of the contact history.
//!
//! Nothing enters this graph except through a test: a tested person becomes a
//! labelled node, and a positive test reveals the person's reported meetings
//! as person-location edges stamped with the meeting day.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::abm::{MeetingsLog, TestResult};
use crate::embedding::{HeteroGraph, NodeKey, NodeType};
use crate::error::Result;
use crate::population::{LocationKind, LocationRecord};
use crate::{AgentId, Day, LocationId};

pub const DEFAULT_WINDOW_DAYS: u32 = 14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub positive: bool,
    pub day: Day,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportedContact {
    pub person: AgentId,
    pub location: LocationId,
    pub day: Day,
    pub intensity: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContactReport {
    pub subject: AgentId,
    pub contacts: Vec<ReportedContact>,
}

/// True meetings of `agent` over `(day - window, day]`, each kept with
/// probability `reporting_rate`. Household meetings are always kept.
pub fn make_report<R: Rng + ?Sized>(
    log: &MeetingsLog,
    locations: &[LocationRecord],
    agent: AgentId,
    day: Day,
    window: u32,
    reporting_rate: f64,
    rng: &mut R,
) -> ContactReport {
    let mut contacts = Vec::new();
    for dc in log.window(day, window) {
        for (person, location) in dc.meetings_of(agent, locations) {
            let u: f64 = rng.random();
            let household = locations[location as usize].kind == LocationKind::Household;
            if household || u < reporting_rate {
                contacts.push(ReportedContact { person, location, day: dc.day, intensity: 1 });
            }
        }
    }
    ContactReport { subject: agent, contacts }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ObservedGraph {
    /// (day, person, location)
    visits: BTreeSet<(Day, AgentId, LocationId)>,
    /// (day, a, b, location) with a < b
    meetings: BTreeSet<(Day, AgentId, AgentId, LocationId)>,
    labels: BTreeMap<AgentId, Label>,
    persons: BTreeSet<AgentId>,
}

impl ObservedGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Label the tested person and, for a positive, merge the report.
    /// Re-adding an identical (pair, location, day) meeting changes nothing.
    pub fn record_test(&mut self, result: &TestResult, report: Option<&ContactReport>) {
        self.persons.insert(result.agent);
        self.labels.insert(result.agent, Label { positive: result.positive, day: result.day });
        if !result.positive {
            return;
        }
        let Some(report) = report else { return };
        let s = report.subject;
        for c in &report.contacts {
            self.persons.insert(c.person);
            self.visits.insert((c.day, s, c.location));
            self.visits.insert((c.day, c.person, c.location));
            let (a, b) = if s < c.person { (s, c.person) } else { (c.person, s) };
            self.meetings.insert((c.day, a, b, c.location));
        }
    }

    pub fn label(&self, person: AgentId) -> Option<Label> {
        self.labels.get(&person).copied()
    }

    pub fn labels(&self) -> &BTreeMap<AgentId, Label> {
        &self.labels
    }

    pub fn contains_person(&self, person: AgentId) -> bool {
        self.persons.contains(&person)
    }

    /// Person nodes in ascending id order.
    pub fn persons(&self) -> impl Iterator<Item = AgentId> + '_ {
        self.persons.iter().copied()
    }

    pub fn person_count(&self) -> usize {
        self.persons.len()
    }

    /// Day-stamped person-location edges as (day, person, location).
    pub fn visit_edges(&self) -> impl Iterator<Item = (Day, AgentId, LocationId)> + '_ {
        self.visits.iter().copied()
    }

    /// Revealed meetings as (day, a, b, location), `a < b`.
    pub fn meetings(&self) -> impl Iterator<Item = (Day, AgentId, AgentId, LocationId)> + '_ {
        self.meetings.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.visits.len()
    }

    /// Only edges and labels stamped in `(day - window, day]`. Persons with
    /// such a label stay in as isolated nodes if they have no edge.
    pub fn window_snapshot(&self, day: Day, window: u32) -> ObservedGraph {
        let lo = (day + 1).saturating_sub(window);
        let visits: BTreeSet<_> =
            self.visits.range((lo, 0, 0)..=(day, AgentId::MAX, LocationId::MAX)).copied().collect();
        let meetings: BTreeSet<_> =
            self.meetings.range((lo, 0, 0, 0)..=(day, AgentId::MAX, AgentId::MAX, LocationId::MAX)).copied().collect();
        let labels: BTreeMap<_, _> =
            self.labels.iter().filter(|(_, l)| l.day >= lo && l.day <= day).map(|(&p, &l)| (p, l)).collect();
        let mut persons: BTreeSet<AgentId> = visits.iter().map(|&(_, p, _)| p).collect();
        persons.extend(labels.keys().copied());
        ObservedGraph { visits, meetings, labels, persons }
    }

    /// Drop edges and labels stamped before `day`. Keeps memory bounded in long runs.
    pub fn prune_before(&mut self, day: Day) {
        self.visits = self.visits.split_off(&(day, 0, 0));
        self.meetings = self.meetings.split_off(&(day, 0, 0, 0));
        self.labels.retain(|_, l| l.day >= day);
        let mut persons: BTreeSet<AgentId> = self.visits.iter().map(|&(_, p, _)| p).collect();
        persons.extend(self.labels.keys().copied());
        self.persons = persons;
    }

    /// Heterogeneous P/L/N graph. Person-location weight is the number of
    /// distinct days the pair appears; every revealed location links to its
    /// neighborhood with weight 1.
    pub fn hetero_view(&self, locations: &[LocationRecord]) -> HeteroGraph {
        let mut pl: BTreeMap<(AgentId, LocationId), u32> = BTreeMap::new();
        for &(_, p, l) in &self.visits {
            *pl.entry((p, l)).or_default() += 1;
        }
        let revealed: BTreeSet<LocationId> = pl.keys().map(|&(_, l)| l).collect();
        let mut nodes: Vec<NodeKey> = self.persons.iter().map(|&p| NodeKey::person(p)).collect();
        nodes.extend(revealed.iter().map(|&l| NodeKey::location(l)));
        let ntas: BTreeSet<u32> = revealed.iter().map(|&l| locations[l as usize].nta_id as u32).collect();
        nodes.extend(ntas.iter().map(|&n| NodeKey::new(NodeType::Neighborhood, n)));
        let mut edges: Vec<(NodeKey, NodeKey, f64)> =
            pl.iter().map(|(&(p, l), &w)| (NodeKey::person(p), NodeKey::location(l), w as f64)).collect();
        edges.extend(revealed.iter().map(|&l| {
            let n = locations[l as usize].nta_id as u32;
            (NodeKey::location(l), NodeKey::new(NodeType::Neighborhood, n), 1.0)
        }));
        HeteroGraph::from_edges(nodes, &edges).expect("edge endpoints are nodes")
    }

    /// Edge list with header `node_type,node_id,node_type,node_id,weight,day`.
    /// Person-location rows carry their day; location-neighborhood rows leave it empty.
    pub fn write_edge_list<W: Write>(&self, w: W, locations: Option<&[LocationRecord]>) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["node_type", "node_id", "node_type", "node_id", "weight", "day"])?;
        for &(d, p, l) in &self.visits {
            out.write_record(["P", &p.to_string(), "L", &l.to_string(), "1", &d.to_string()])?;
        }
        if let Some(locs) = locations {
            let revealed: BTreeSet<LocationId> = self.visits.iter().map(|&(_, _, l)| l).collect();
            for l in revealed {
                let n = locs[l as usize].nta_id;
                out.write_record(["L", &l.to_string(), "N", &n.to_string(), "1", ""])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}
