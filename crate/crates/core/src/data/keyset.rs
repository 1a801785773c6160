//! Keyset enumeration and record-to-group mapping.
//!
//! A keyset lists every population group tabulated at one level, built as
//! the cross product of the level's geographic entities and its
//! characteristic iterations. It is a pure function of public configuration:
//! confidential records never influence which groups exist, only the counts
//! inside them.

use super::types::{
    CharacteristicIteration, GeoLevel, GeoUniverse, IterationLevel, LevelSpec, PersonRecord,
    PopulationGroup, TotalOnlySet,
};
use super::DataError;
use std::collections::BTreeSet;

/// One enumerated group plus its cell-domain marker: total-only groups get a
/// single total cell, everything else the full adaptive table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeysetGroup {
    pub group: PopulationGroup,
    pub total_only: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeySet {
    pub level_id: String,
    pub groups: Vec<KeysetGroup>,
}

fn iteration_applies(it: &CharacteristicIteration, level: &LevelSpec) -> bool {
    it.level == level.iteration_level && !it.excluded_geo_levels.contains(&level.geo_level)
}

/// All population groups at `level` containing `record`. Empty when the
/// record's block has no entity at the level's geography (e.g. outside every
/// AIANNH area) or no iteration matches.
pub fn map_to_groups(
    record: &PersonRecord,
    level: &LevelSpec,
    iterations: &[CharacteristicIteration],
    universe: &GeoUniverse,
) -> Vec<PopulationGroup> {
    let Some(entity) = universe.entity_for(&record.block_id, level.geo_level) else {
        return Vec::new();
    };
    iterations
        .iter()
        .filter(|it| iteration_applies(it, level) && it.matches(record))
        .map(|it| PopulationGroup {
            geo_level: level.geo_level,
            entity_id: entity.to_string(),
            iteration_id: it.iteration_id.clone(),
        })
        .collect()
}

/// Enumerates the keyset for one level: every configured entity crossed with
/// every applicable iteration, in canonical sorted order.
pub fn build_keyset(
    level: &LevelSpec,
    universe: &GeoUniverse,
    iterations: &[CharacteristicIteration],
    total_only: &TotalOnlySet,
) -> Result<KeySet, DataError> {
    if level.geo_level == GeoLevel::Aiannh && level.iteration_level == IterationLevel::Regional {
        return Err(DataError::AiannhRegional {
            level_id: level.level_id.clone(),
        });
    }
    let mut seen = BTreeSet::new();
    let mut groups = Vec::new();
    for entity in universe.entities(level.geo_level) {
        for it in iterations.iter().filter(|it| iteration_applies(it, level)) {
            let group = PopulationGroup {
                geo_level: level.geo_level,
                entity_id: entity.to_string(),
                iteration_id: it.iteration_id.clone(),
            };
            if !seen.insert((entity, it.iteration_id.as_str())) {
                return Err(DataError::DuplicateGroup(group.label()));
            }
            let total_only = total_only.contains(&it.iteration_id, level.geo_level);
            groups.push(KeysetGroup { group, total_only });
        }
    }
    groups.sort_by(|a, b| a.group.cmp(&b.group));
    Ok(KeySet {
        level_id: level.level_id.clone(),
        groups,
    })
}
