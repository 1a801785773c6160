//! Published-row assembly and CSV rendering.
//!
//! The public release is one flat CSV per table id plus a combined file,
//! sorted by (region, geo_level, entity_id, iteration_id, cell_key) so
//! reruns diff cleanly. Rows carry only released values: tier-consistent
//! noisy cells and their derived marginals, never stage-1 totals or true
//! counts.

use safetab_core::data::GeoLevel;
use safetab_core::engine::NoisyTable;

use crate::config::Region;

pub const TABLE_IDS: [&str; 4] = ["T01001", "T02001", "T02002", "T02003"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputRow {
    pub region: Region,
    pub geo_level: GeoLevel,
    pub entity_id: String,
    pub iteration_id: String,
    pub table_id: &'static str,
    pub cell_key: String,
    pub count: i64,
}

impl OutputRow {
    fn sort_key(&self) -> (Region, GeoLevel, &str, &str, &str) {
        (
            self.region,
            self.geo_level,
            &self.entity_id,
            &self.iteration_id,
            &self.cell_key,
        )
    }

    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}\n",
            self.region.as_str(),
            self.geo_level.as_str(),
            self.entity_id,
            self.iteration_id,
            self.table_id,
            self.cell_key,
            self.count,
        )
    }
}

pub const CSV_HEADER: &str = "region,geo_level,entity_id,iteration_id,table_id,cell_key,count\n";

/// Flattens released tables into rows. Cell iteration order is the table's
/// sorted map, so output is deterministic for a given table set.
pub fn rows_from_tables(region: Region, tables: &[NoisyTable]) -> Vec<OutputRow> {
    let mut rows = Vec::new();
    for table in tables {
        let table_id = table.tier.table_id();
        for (cell_key, &count) in &table.cells {
            rows.push(OutputRow {
                region,
                geo_level: table.group.geo_level,
                entity_id: table.group.entity_id.clone(),
                iteration_id: table.group.iteration_id.clone(),
                table_id,
                cell_key: cell_key.clone(),
                count,
            });
        }
    }
    rows
}

pub fn sort_rows(rows: &mut [OutputRow]) {
    rows.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
}

pub fn render_csv<'a>(rows: impl Iterator<Item = &'a OutputRow>) -> String {
    let mut out = String::from(CSV_HEADER);
    for row in rows {
        out.push_str(&row.to_csv_line());
    }
    out
}
