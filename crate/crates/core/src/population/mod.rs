//! Synthetic population: agents, the location grid, and agent-location visit
//! propensities.

mod generate;
pub mod tables;

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::{AgentId, LocationId, NtaId};

pub use generate::{
    assign_households, assign_schools, assign_supermarkets_stations, assign_work, build_location_grid, generate,
    sample_age_gender, GridOptions, PopulationConfig, WorkOptions,
};
pub use tables::{AgeGenderDist, CategoricalDist, HouseholdStructureDist, InteractionTable, NtaSpec, Tables};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub id: AgentId,
    pub age: u8,
    /// Index into the age-band table.
    pub age_band: u8,
    pub gender: Gender,
    pub household_id: LocationId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub school_class_id: Option<LocationId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workgroup_id: Option<LocationId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supermarket_id: Option<LocationId>,
    /// (near home, near work)
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub station_ids: Option<(LocationId, LocationId)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocationKind {
    Household,
    /// Container for classes; nobody visits the school itself.
    School,
    SchoolClass,
    /// Container for workgroups.
    Workplace,
    Workgroup,
    Supermarket,
    Station,
    Mixing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocationRecord {
    pub id: LocationId,
    pub kind: LocationKind,
    pub nta_id: NtaId,
    pub longitude: f64,
    pub latitude: f64,
    pub meeting_probability: f64,
    /// School of a class, workplace of a workgroup.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<LocationId>,
    /// Workplace size flag (workplaces and their workgroups).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub large: bool,
}

impl LocationRecord {
    pub(crate) fn coords(&self) -> (f64, f64) {
        (self.longitude, self.latitude)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisitPropensity {
    pub agent_id: AgentId,
    pub location_id: LocationId,
    pub visit_probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Household {
    pub location_id: LocationId,
    /// Index into the household-structure table.
    pub structure: u8,
    pub members: Vec<AgentId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub seed: u64,
    pub ntas: Vec<NtaSpec>,
    pub age_bands: Vec<tables::AgeBandSpec>,
    pub household_structures: Vec<tables::HouseholdStructure>,
    pub agents: Vec<AgentRecord>,
    pub locations: Vec<LocationRecord>,
    pub households: Vec<Household>,
    pub propensities: Vec<VisitPropensity>,
}

impl Population {
    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn location(&self, id: LocationId) -> &LocationRecord {
        &self.locations[id as usize]
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer(w, self)?;
        Ok(())
    }

    pub fn read_json<R: Read>(r: R) -> Result<Self> {
        let pop: Self = serde_json::from_reader(r)?;
        pop.validate()?;
        Ok(pop)
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("population serialises")
    }

    /// Structural checks: ids dense, references valid, households partition the agents.
    pub fn validate(&self) -> Result<()> {
        let n_loc = self.locations.len() as u32;
        for (i, loc) in self.locations.iter().enumerate() {
            if loc.id as usize != i {
                return Err(config_err(format!("location {i} has id {}", loc.id)));
            }
            if !(0.0..=1.0).contains(&loc.meeting_probability) {
                return Err(config_err(format!("location {i} meeting probability out of range")));
            }
        }
        let mut seen = vec![false; self.agents.len()];
        for h in &self.households {
            for &m in &h.members {
                let slot =
                    seen.get_mut(m as usize).ok_or_else(|| config_err(format!("household member {m} out of range")))?;
                if *slot {
                    return Err(config_err(format!("agent {m} in more than one household")));
                }
                *slot = true;
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(config_err(format!("agent {missing} has no household")));
        }
        for (i, a) in self.agents.iter().enumerate() {
            if a.id as usize != i {
                return Err(config_err(format!("agent {i} has id {}", a.id)));
            }
            let refs = [Some(a.household_id), a.school_class_id, a.workgroup_id, a.supermarket_id];
            if refs.iter().flatten().any(|&l| l >= n_loc) {
                return Err(config_err(format!("agent {i} references a missing location")));
            }
        }
        for p in &self.propensities {
            if p.agent_id as usize >= self.agents.len() || p.location_id >= n_loc {
                return Err(config_err("propensity references a missing agent or location"));
            }
            if !(0.0..=1.0).contains(&p.visit_probability) {
                return Err(config_err("visit probability out of range"));
            }
        }
        Ok(())
    }
}
