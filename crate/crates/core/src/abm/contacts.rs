//! Per-day visit and meeting records.
//!
//! Locations where every co-visitor meets every other (households, classes,
//! workgroups) are stored implicitly as their visitor list. Everywhere else the
//! realised meetings are stored as explicit pairs.

use std::collections::VecDeque;

use crate::population::LocationRecord;
use crate::{AgentId, Day, LocationId};

/// Whether a location's visitors all meet each other.
pub(crate) fn is_clique(loc: &LocationRecord) -> bool {
    loc.meeting_probability >= 1.0
}

/// Compressed rows: `offsets[i]..offsets[i + 1]` indexes `data`.
#[derive(Clone, Debug, Default)]
pub(crate) struct Csr<T> {
    offsets: Vec<u32>,
    data: Vec<T>,
}

impl<T: Copy + Default> Csr<T> {
    /// Build from (row, value) items; rows keep the item order.
    pub(crate) fn from_items(rows: usize, items: &[(u32, T)]) -> Self {
        let mut offsets = vec![0u32; rows + 1];
        for &(r, _) in items {
            offsets[r as usize + 1] += 1;
        }
        for i in 0..rows {
            offsets[i + 1] += offsets[i];
        }
        let mut cursor = offsets.clone();
        let mut data = vec![T::default(); items.len()];
        for &(r, v) in items {
            data[cursor[r as usize] as usize] = v;
            cursor[r as usize] += 1;
        }
        Self { offsets, data }
    }

    pub(crate) fn row(&self, r: usize) -> &[T] {
        match (self.offsets.get(r), self.offsets.get(r + 1)) {
            (Some(&a), Some(&b)) => &self.data[a as usize..b as usize],
            _ => &[],
        }
    }

    pub(crate) fn rows(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub(crate) fn nnz(&self) -> usize {
        self.data.len()
    }
}

/// Everything that physically happened on one day.
#[derive(Clone, Debug)]
pub struct DayContacts {
    pub day: Day,
    visits_by_agent: Csr<LocationId>,
    visitors_by_location: Csr<AgentId>,
    pairs: Vec<(AgentId, AgentId, LocationId)>,
    partners: Csr<(AgentId, LocationId)>,
}

impl DayContacts {
    /// Build a day from its visits and the explicitly sampled meetings.
    pub fn from_parts(
        day: Day,
        n_agents: usize,
        n_locations: usize,
        visits: &[(AgentId, LocationId)],
        pairs: Vec<(AgentId, AgentId, LocationId)>,
    ) -> Self {
        let visits_by_agent = Csr::from_items(n_agents, visits);
        let flipped: Vec<(u32, AgentId)> = visits.iter().map(|&(a, l)| (l, a)).collect();
        let visitors_by_location = Csr::from_items(n_locations, &flipped);
        let mut ends = Vec::with_capacity(pairs.len() * 2);
        for &(a, b, l) in &pairs {
            ends.push((a, (b, l)));
            ends.push((b, (a, l)));
        }
        let partners = Csr::from_items(n_agents, &ends);
        Self { day, visits_by_agent, visitors_by_location, pairs, partners }
    }

    pub fn visits_of(&self, agent: AgentId) -> &[LocationId] {
        self.visits_by_agent.row(agent as usize)
    }

    pub fn visitors(&self, location: LocationId) -> &[AgentId] {
        self.visitors_by_location.row(location as usize)
    }

    pub fn visit_count(&self) -> usize {
        self.visits_by_agent.nnz()
    }

    /// Explicitly sampled meetings at non-clique locations.
    pub fn sampled_pairs(&self) -> &[(AgentId, AgentId, LocationId)] {
        &self.pairs
    }

    /// Every (partner, location) the agent met today, clique locations first in
    /// visit order, then sampled meetings in draw order.
    pub fn meetings_of(&self, agent: AgentId, locations: &[LocationRecord]) -> Vec<(AgentId, LocationId)> {
        let mut out = Vec::new();
        for &l in self.visits_of(agent) {
            if is_clique(&locations[l as usize]) {
                out.extend(self.visitors(l).iter().filter(|&&b| b != agent).map(|&b| (b, l)));
            }
        }
        out.extend_from_slice(self.partners.row(agent as usize));
        out
    }

    /// Every meeting of the day as (a, b, location) with `a < b` for clique
    /// meetings; sampled pairs keep their draw order.
    pub fn all_meetings(&self, locations: &[LocationRecord]) -> Vec<(AgentId, AgentId, LocationId)> {
        let mut out = Vec::new();
        for (l, loc) in locations.iter().enumerate().take(self.visitors_by_location.rows()) {
            if !is_clique(loc) {
                continue;
            }
            let v = self.visitors_by_location.row(l);
            for i in 0..v.len() {
                for j in i + 1..v.len() {
                    out.push((v[i], v[j], l as LocationId));
                }
            }
        }
        out.extend_from_slice(&self.pairs);
        out
    }

    pub fn meeting_count(&self, locations: &[LocationRecord]) -> usize {
        let mut n = self.pairs.len();
        for (l, loc) in locations.iter().enumerate().take(self.visitors_by_location.rows()) {
            if is_clique(loc) {
                let m = self.visitors_by_location.row(l).len();
                n += m * m.saturating_sub(1) / 2;
            }
        }
        n
    }
}

/// Rolling history of [`DayContacts`], oldest first.
#[derive(Clone, Debug, Default)]
pub struct MeetingsLog {
    days: VecDeque<DayContacts>,
    retention: Option<u32>,
}

impl MeetingsLog {
    /// `retention = None` keeps every day.
    pub fn new(retention: Option<u32>) -> Self {
        Self { days: VecDeque::new(), retention }
    }

    /// A log holding exactly these days (oldest first), with no retention limit.
    pub fn from_days(days: Vec<DayContacts>) -> Self {
        Self { days: days.into(), retention: None }
    }

    pub(crate) fn push(&mut self, day: DayContacts) {
        let latest = day.day;
        self.days.push_back(day);
        if let Some(keep) = self.retention {
            while self.days.front().is_some_and(|d| d.day + keep <= latest) {
                self.days.pop_front();
            }
        }
    }

    pub fn get(&self, day: Day) -> Option<&DayContacts> {
        let first = self.days.front()?.day;
        let d = self.days.get(day.checked_sub(first)? as usize)?;
        (d.day == day).then_some(d)
    }

    pub fn iter(&self) -> impl Iterator<Item = &DayContacts> {
        self.days.iter()
    }

    /// Days in `(end - len, end]` that are still retained, oldest first.
    pub fn window(&self, end: Day, len: u32) -> impl Iterator<Item = &DayContacts> {
        self.days.iter().filter(move |d| d.day <= end && d.day + len > end)
    }
}
