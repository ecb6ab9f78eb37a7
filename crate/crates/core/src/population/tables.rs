//! Bundled demographic and layout tables, loadable from CSV overrides.
//!
//! | file                       | columns                                                                    |
//! |----------------------------|----------------------------------------------------------------------------|
//! | `age_gender.csv`           | `attribute,level,min_age,max_age,share` (`attribute` is `age` or `gender`) |
//! | `ntas.csv`                 | `name,longitude,latitude,households,schools,stations,supermarkets,workplaces` |
//! | `interactions.csv`         | `location_type,cluster_by,share,average_interactions,visit_probability,meeting_probability` |
//! | `household_structures.csv` | `structure,share,adults,with_children`                                     |
//!
//! Probabilities may be written as decimals or as fractions (`2/7`).

use std::path::Path;

use rand::Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

const AGE_GENDER_CSV: &str = include_str!("../../data/age_gender.csv");
const NTAS_CSV: &str = include_str!("../../data/ntas.csv");
const INTERACTIONS_CSV: &str = include_str!("../../data/interactions.csv");
const HOUSEHOLD_STRUCTURES_CSV: &str = include_str!("../../data/household_structures.csv");

/// Tolerance within which a distribution is silently renormalised.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

/// A validated categorical distribution over labelled outcomes.
#[derive(Clone, Debug)]
pub struct CategoricalDist {
    labels: Vec<String>,
    probs: Vec<f64>,
    sampler: WeightedIndex<f64>,
}

impl CategoricalDist {
    pub fn new(entries: Vec<(String, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(config_err("distribution has no categories"));
        }
        if let Some((label, w)) = entries.iter().find(|(_, w)| !w.is_finite() || *w < 0.0) {
            return Err(config_err(format!("category {label:?} has invalid weight {w}")));
        }
        let total: f64 = entries.iter().map(|(_, w)| w).sum();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(config_err(format!(
                "distribution sums to {total}, expected 1 (tolerance {NORMALIZATION_TOLERANCE})"
            )));
        }
        let (labels, weights): (Vec<_>, Vec<_>) = entries.into_iter().unzip();
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let sampler = WeightedIndex::new(&probs).map_err(|e| config_err(e.to_string()))?;
        Ok(Self { labels, probs, sampler })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.sampler.sample(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgeBandSpec {
    pub label: String,
    pub min_age: u8,
    pub max_age: u8,
}

/// Age-band and gender marginals (sampled independently).
#[derive(Clone, Debug)]
pub struct AgeGenderDist {
    pub bands: Vec<AgeBandSpec>,
    pub age: CategoricalDist,
    pub female_share: f64,
}

impl AgeGenderDist {
    pub fn from_csv_str(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            attribute: String,
            level: String,
            min_age: Option<u8>,
            max_age: Option<u8>,
            share: f64,
        }
        let mut bands = Vec::new();
        let mut age_entries = Vec::new();
        let mut gender_entries = Vec::new();
        for row in csv::Reader::from_reader(text.as_bytes()).deserialize::<Row>() {
            let row = row?;
            match row.attribute.as_str() {
                "age" => {
                    let (Some(min_age), Some(max_age)) = (row.min_age, row.max_age) else {
                        return Err(config_err(format!("age band {:?} lacks bounds", row.level)));
                    };
                    if min_age > max_age {
                        return Err(config_err(format!("age band {:?} has min > max", row.level)));
                    }
                    bands.push(AgeBandSpec { label: row.level.clone(), min_age, max_age });
                    age_entries.push((row.level, row.share));
                }
                "gender" => gender_entries.push((row.level.to_lowercase(), row.share)),
                other => return Err(config_err(format!("unknown attribute {other:?}"))),
            }
        }
        let age = CategoricalDist::new(age_entries)?;
        let gender = CategoricalDist::new(gender_entries)?;
        let female_share = gender.labels().iter().position(|l| l == "female").map(|i| gender.probs()[i]).unwrap_or(0.0);
        Ok(Self { bands, age, female_share })
    }

    pub fn band_of_age(&self, age: u8) -> Option<usize> {
        self.bands.iter().position(|b| (b.min_age..=b.max_age).contains(&age))
    }
}

/// One row of the neighborhood layout table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NtaSpec {
    pub name: String,
    pub longitude: f64,
    pub latitude: f64,
    pub households: u32,
    pub schools: u32,
    pub stations: u32,
    pub supermarkets: u32,
    pub workplaces: u32,
}

impl NtaSpec {
    /// Multiply every count by `scale`, rounding, but keep at least one unit of
    /// any location type the full-size row has.
    pub fn scaled(&self, scale: f64) -> Self {
        let s = |c: u32| -> u32 {
            if c == 0 {
                0
            } else {
                ((c as f64 * scale).round() as u32).max(1)
            }
        };
        Self {
            name: self.name.clone(),
            longitude: self.longitude,
            latitude: self.latitude,
            households: s(self.households),
            schools: s(self.schools),
            stations: s(self.stations),
            supermarkets: s(self.supermarkets),
            workplaces: s(self.workplaces),
        }
    }
}

pub fn ntas_from_csv_str(text: &str) -> Result<Vec<NtaSpec>> {
    let mut out = Vec::new();
    for row in csv::Reader::from_reader(text.as_bytes()).deserialize::<NtaSpec>() {
        out.push(row?);
    }
    Ok(out)
}

/// Location-type interaction parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionTable {
    pub household_meeting: f64,
    pub class_size: f64,
    pub class_meeting: f64,
    pub small_workplace_share: f64,
    pub small_group_size: f64,
    pub large_group_size: f64,
    pub work_meeting: f64,
    pub supermarket_visit: f64,
    pub supermarket_meeting: f64,
    pub station_visit: f64,
    pub station_meeting: f64,
}

fn parse_probability(text: &str) -> Result<f64> {
    let text = text.trim();
    let value = match text.split_once('/') {
        Some((num, den)) => {
            let num: f64 = num.trim().parse().map_err(|_| config_err(format!("bad number {text:?}")))?;
            let den: f64 = den.trim().parse().map_err(|_| config_err(format!("bad number {text:?}")))?;
            num / den
        }
        None => text.parse().map_err(|_| config_err(format!("bad number {text:?}")))?,
    };
    if !(0.0..=1.0).contains(&value) {
        return Err(config_err(format!("probability {text:?} outside [0, 1]")));
    }
    Ok(value)
}

impl InteractionTable {
    pub fn from_csv_str(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            location_type: String,
            #[allow(dead_code)]
            cluster_by: String,
            share: Option<f64>,
            average_interactions: Option<f64>,
            visit_probability: String,
            meeting_probability: String,
        }
        let mut rows = std::collections::BTreeMap::new();
        for row in csv::Reader::from_reader(text.as_bytes()).deserialize::<Row>() {
            let row = row?;
            rows.insert(row.location_type.clone(), row);
        }
        let get = |key: &str| rows.get(key).ok_or_else(|| config_err(format!("interaction table lacks {key:?}")));
        let household = get("household")?;
        let class = get("school_class")?;
        let small = get("workgroup_small")?;
        let large = get("workgroup_large")?;
        let market = get("supermarket")?;
        let station = get("station")?;
        let need = |v: Option<f64>, what: &str| v.ok_or_else(|| config_err(format!("interaction table lacks {what}")));
        let small_share = need(small.share, "workgroup_small share")?;
        let large_share = need(large.share, "workgroup_large share")?;
        if ((small_share + large_share) - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(config_err("workplace size shares must sum to 1"));
        }
        Ok(Self {
            household_meeting: parse_probability(&household.meeting_probability)?,
            class_size: need(class.average_interactions, "class size")?,
            class_meeting: parse_probability(&class.meeting_probability)?,
            small_workplace_share: small_share / (small_share + large_share),
            small_group_size: need(small.average_interactions, "small group size")?,
            large_group_size: need(large.average_interactions, "large group size")?,
            work_meeting: parse_probability(&small.meeting_probability)?,
            supermarket_visit: parse_probability(&market.visit_probability)?,
            supermarket_meeting: parse_probability(&market.meeting_probability)?,
            station_visit: parse_probability(&station.visit_probability)?,
            station_meeting: parse_probability(&station.meeting_probability)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HouseholdStructure {
    pub name: String,
    pub adults: u8,
    pub with_children: bool,
}

/// Mix of household types, as shares of households.
#[derive(Clone, Debug)]
pub struct HouseholdStructureDist {
    pub structures: Vec<HouseholdStructure>,
    pub shares: Vec<f64>,
}

impl HouseholdStructureDist {
    pub fn new(entries: Vec<(HouseholdStructure, f64)>) -> Result<Self> {
        for (s, _) in &entries {
            if !(1..=2).contains(&s.adults) {
                return Err(config_err(format!("household structure {:?} must have 1 or 2 adults", s.name)));
            }
        }
        let dist = CategoricalDist::new(entries.iter().map(|(s, w)| (s.name.clone(), *w)).collect())?;
        Ok(Self { structures: entries.into_iter().map(|(s, _)| s).collect(), shares: dist.probs().to_vec() })
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            structure: String,
            share: f64,
            adults: u8,
            with_children: bool,
        }
        let mut entries = Vec::new();
        for row in csv::Reader::from_reader(text.as_bytes()).deserialize::<Row>() {
            let row = row?;
            entries.push((
                HouseholdStructure { name: row.structure, adults: row.adults, with_children: row.with_children },
                row.share,
            ));
        }
        Self::new(entries)
    }

    /// Expected number of heads (adults forming the couple / single) per household.
    pub fn heads_per_household(&self) -> f64 {
        self.structures.iter().zip(&self.shares).map(|(s, p)| s.adults as f64 * p).sum()
    }

    pub fn with_children_share(&self) -> f64 {
        self.structures.iter().zip(&self.shares).filter(|(s, _)| s.with_children).map(|(_, p)| p).sum()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TablePaths {
    pub age_gender: Option<std::path::PathBuf>,
    pub ntas: Option<std::path::PathBuf>,
    pub interactions: Option<std::path::PathBuf>,
    pub household_structures: Option<std::path::PathBuf>,
}

#[derive(Clone, Debug)]
pub struct Tables {
    pub age_gender: AgeGenderDist,
    pub ntas: Vec<NtaSpec>,
    pub interactions: InteractionTable,
    pub households: HouseholdStructureDist,
}

fn read_or(path: Option<&Path>, bundled: &str) -> Result<String> {
    match path {
        Some(p) => Ok(std::fs::read_to_string(p)?),
        None => Ok(bundled.to_owned()),
    }
}

impl Tables {
    pub fn bundled() -> Self {
        Self::load(&TablePaths::default()).expect("bundled tables are valid")
    }

    pub fn load(paths: &TablePaths) -> Result<Self> {
        Ok(Self {
            age_gender: AgeGenderDist::from_csv_str(&read_or(paths.age_gender.as_deref(), AGE_GENDER_CSV)?)?,
            ntas: ntas_from_csv_str(&read_or(paths.ntas.as_deref(), NTAS_CSV)?)?,
            interactions: InteractionTable::from_csv_str(&read_or(paths.interactions.as_deref(), INTERACTIONS_CSV)?)?,
            households: HouseholdStructureDist::from_csv_str(&read_or(
                paths.household_structures.as_deref(),
                HOUSEHOLD_STRUCTURES_CSV,
            )?)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_tables_parse() {
        let t = Tables::bundled();
        assert_eq!(t.age_gender.bands.len(), 13);
        assert!((t.age_gender.female_share - 0.5262).abs() < 1e-12);
        assert_eq!(t.ntas.len(), 10);
        assert!((t.interactions.supermarket_visit - 2.0 / 7.0).abs() < 1e-15);
        assert_eq!(t.interactions.supermarket_meeting, 6.70e-4);
        assert_eq!(t.interactions.station_meeting, 4.09e-3);
        assert_eq!(t.households.structures.len(), 4);
    }

    #[test]
    fn supermarket_column_sums_to_376() {
        // Independent sum of the published column, not read through the loader.
        let published = [35u32, 28, 34, 39, 28, 30, 36, 53, 46, 47];
        let expected: u32 = published.iter().sum();
        assert_eq!(expected, 376);
        let loaded: u32 = Tables::bundled().ntas.iter().map(|n| n.supermarkets).sum();
        assert_eq!(loaded, expected);
    }

    #[test]
    fn rejects_malformed_distributions() {
        assert!(CategoricalDist::new(vec![("a".into(), 0.5), ("b".into(), 0.4)]).is_err());
        assert!(CategoricalDist::new(vec![("a".into(), 1.2), ("b".into(), -0.2)]).is_err());
        assert!(CategoricalDist::new(vec![]).is_err());
        let d = CategoricalDist::new(vec![("a".into(), 0.5), ("b".into(), 0.5000004)]).unwrap();
        assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn fraction_probabilities() {
        assert_eq!(parse_probability("1/2").unwrap(), 0.5);
        assert!(parse_probability("3/2").is_err());
        assert!(parse_probability("x").is_err());
    }
}
