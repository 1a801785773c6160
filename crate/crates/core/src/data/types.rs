//! Core record and specification types.

use std::collections::{BTreeMap, BTreeSet};

use num_rational::BigRational;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sex {
    Male,
    Female,
}

impl Sex {
    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Male => "male",
            Sex::Female => "female",
        }
    }

    pub fn parse(s: &str) -> Option<Sex> {
        match s {
            "Male" => Some(Sex::Male),
            "Female" => Some(Sex::Female),
            _ => None,
        }
    }

    pub fn both() -> [Sex; 2] {
        [Sex::Male, Sex::Female]
    }
}

/// Geographic summary levels, most to least aggregated. The derive order is
/// the canonical output sort order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GeoLevel {
    Nation,
    State,
    County,
    Tract,
    Place,
    Aiannh,
}

impl GeoLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            GeoLevel::Nation => "Nation",
            GeoLevel::State => "State",
            GeoLevel::County => "County",
            GeoLevel::Tract => "Tract",
            GeoLevel::Place => "Place",
            GeoLevel::Aiannh => "AIANNH",
        }
    }

    pub fn parse(s: &str) -> Option<GeoLevel> {
        match s {
            "Nation" => Some(GeoLevel::Nation),
            "State" => Some(GeoLevel::State),
            "County" => Some(GeoLevel::County),
            "Tract" => Some(GeoLevel::Tract),
            "Place" => Some(GeoLevel::Place),
            "AIANNH" => Some(GeoLevel::Aiannh),
            _ => None,
        }
    }

    pub fn all() -> [GeoLevel; 6] {
        [
            GeoLevel::Nation,
            GeoLevel::State,
            GeoLevel::County,
            GeoLevel::Tract,
            GeoLevel::Place,
            GeoLevel::Aiannh,
        ]
    }

    /// Nation and state totals are always released; suppression applies
    /// strictly below state.
    pub fn is_sub_state(self) -> bool {
        !matches!(self, GeoLevel::Nation | GeoLevel::State)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum IterationLevel {
    Detailed,
    Regional,
}

impl IterationLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            IterationLevel::Detailed => "Detailed",
            IterationLevel::Regional => "Regional",
        }
    }

    pub fn parse(s: &str) -> Option<IterationLevel> {
        match s {
            "Detailed" => Some(IterationLevel::Detailed),
            "Regional" => Some(IterationLevel::Regional),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AloneFlag {
    Alone,
    AloneOrInAnyCombination,
}

impl AloneFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            AloneFlag::Alone => "Alone",
            AloneFlag::AloneOrInAnyCombination => "AloneOrInAnyCombination",
        }
    }

    pub fn parse(s: &str) -> Option<AloneFlag> {
        match s {
            "Alone" => Some(AloneFlag::Alone),
            "AloneOrInAnyCombination" => Some(AloneFlag::AloneOrInAnyCombination),
            _ => None,
        }
    }
}

/// One respondent row. `race_codes` is a nonempty set of at most the
/// configured race multiplicity cap; exactly one ethnicity code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PersonRecord {
    pub block_id: String,
    pub race_codes: BTreeSet<String>,
    pub ethnicity_code: String,
    pub sex: Sex,
    pub age: u32,
}

/// Race or ethnicity group plus its qualifier. Membership of a record:
/// alone-or-in-any-combination holds when any of the record's race codes is
/// a member code; alone holds when all race codes are member codes, or when
/// the ethnicity code is (ethnicity iterations are always alone-qualified).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharacteristicIteration {
    pub iteration_id: String,
    pub level: IterationLevel,
    pub alone: AloneFlag,
    pub member_codes: BTreeSet<String>,
    /// Geo levels at which this iteration is not tabulated.
    pub excluded_geo_levels: BTreeSet<GeoLevel>,
}

impl CharacteristicIteration {
    pub fn matches(&self, record: &PersonRecord) -> bool {
        match self.alone {
            AloneFlag::AloneOrInAnyCombination => record
                .race_codes
                .iter()
                .any(|c| self.member_codes.contains(c)),
            AloneFlag::Alone => {
                record
                    .race_codes
                    .iter()
                    .all(|c| self.member_codes.contains(c))
                    || self.member_codes.contains(&record.ethnicity_code)
            }
        }
    }
}

/// Per-block geography assignment. A block always sits in a state, county,
/// and tract; place and AIANNH coverage is partial.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockGeo {
    pub state: String,
    pub county: String,
    pub tract: String,
    pub place: Option<String>,
    pub aiannh: Option<String>,
}

/// A (geographic entity, characteristic iteration) pair.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PopulationGroup {
    pub geo_level: GeoLevel,
    pub entity_id: String,
    pub iteration_id: String,
}

impl PopulationGroup {
    pub fn label(&self) -> String {
        format!(
            "{}:{}:{}",
            self.geo_level.as_str(),
            self.entity_id,
            self.iteration_id
        )
    }
}

/// One population-group level: a (geo level, iteration level) pair with its
/// privacy-loss allocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelSpec {
    pub level_id: String,
    pub geo_level: GeoLevel,
    pub iteration_level: IterationLevel,
    pub rho: BigRational,
}

/// (iteration, geo level) pairs that receive only a total count. Restricted
/// to nation and state geography.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TotalOnlySet {
    pairs: BTreeSet<(String, GeoLevel)>,
}

impl TotalOnlySet {
    pub fn new() -> Self {
        TotalOnlySet::default()
    }

    /// Returns false when the pair was already present.
    pub fn insert(&mut self, iteration_id: &str, geo_level: GeoLevel) -> bool {
        self.pairs.insert((iteration_id.to_string(), geo_level))
    }

    pub fn contains(&self, iteration_id: &str, geo_level: GeoLevel) -> bool {
        self.pairs
            .contains(&(iteration_id.to_string(), geo_level))
    }

    pub fn iter(&self) -> impl Iterator<Item = &(String, GeoLevel)> {
        self.pairs.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Geographic entities at different summary levels declared to share
/// boundaries, reconciled after suppression by donor overwrite.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoterminousSpec {
    /// Donor preference order over summary levels, best first.
    pub order: Vec<GeoLevel>,
    pub sets: Vec<CoterminousSet>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoterminousSet {
    pub set_id: String,
    pub members: Vec<(GeoLevel, String)>,
}

/// The geographic universe for one tabulation pass: blocks in scope and the
/// distinct entities they roll up to per summary level.
#[derive(Debug, Clone)]
pub struct GeoUniverse {
    nation_id: String,
    blocks: BTreeMap<String, BlockGeo>,
    entities: BTreeMap<GeoLevel, BTreeSet<String>>,
}

impl GeoUniverse {
    pub fn new(nation_id: &str, blocks: BTreeMap<String, BlockGeo>) -> Self {
        let mut entities: BTreeMap<GeoLevel, BTreeSet<String>> = BTreeMap::new();
        entities.insert(
            GeoLevel::Nation,
            BTreeSet::from([nation_id.to_string()]),
        );
        for geo in blocks.values() {
            entities
                .entry(GeoLevel::State)
                .or_default()
                .insert(geo.state.clone());
            entities
                .entry(GeoLevel::County)
                .or_default()
                .insert(geo.county.clone());
            entities
                .entry(GeoLevel::Tract)
                .or_default()
                .insert(geo.tract.clone());
            if let Some(place) = &geo.place {
                entities
                    .entry(GeoLevel::Place)
                    .or_default()
                    .insert(place.clone());
            }
            if let Some(aiannh) = &geo.aiannh {
                entities
                    .entry(GeoLevel::Aiannh)
                    .or_default()
                    .insert(aiannh.clone());
            }
        }
        GeoUniverse {
            nation_id: nation_id.to_string(),
            blocks,
            entities,
        }
    }

    pub fn nation_id(&self) -> &str {
        &self.nation_id
    }

    pub fn contains_block(&self, block_id: &str) -> bool {
        self.blocks.contains_key(block_id)
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    /// The entity covering a block at a summary level, if any. Each block
    /// maps to at most one entity per level, so geographic disjointness
    /// holds by construction.
    pub fn entity_for(&self, block_id: &str, level: GeoLevel) -> Option<&str> {
        let geo = self.blocks.get(block_id)?;
        match level {
            GeoLevel::Nation => Some(&self.nation_id),
            GeoLevel::State => Some(&geo.state),
            GeoLevel::County => Some(&geo.county),
            GeoLevel::Tract => Some(&geo.tract),
            GeoLevel::Place => geo.place.as_deref(),
            GeoLevel::Aiannh => geo.aiannh.as_deref(),
        }
    }

    pub fn entities(&self, level: GeoLevel) -> impl Iterator<Item = &str> {
        self.entities
            .get(&level)
            .into_iter()
            .flat_map(|set| set.iter().map(String::as_str))
    }

    pub fn has_entity(&self, level: GeoLevel, entity_id: &str) -> bool {
        self.entities
            .get(&level)
            .is_some_and(|set| set.contains(entity_id))
    }
}
