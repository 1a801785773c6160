//! Spec-file and microdata parsing with line-level validation.
//!
//! All input files are UTF-8, pipe-delimited, one header row, `#` comment
//! lines and blank lines allowed anywhere. Malformed rows are recorded as
//! validation errors, never silently dropped. Validation runs to completion
//! so the report lists every violation; any error aborts the pipeline before
//! noise is drawn.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use num_rational::BigRational;
use num_traits::Zero;

use super::types::{
    AloneFlag, BlockGeo, CharacteristicIteration, CoterminousSet, CoterminousSpec, GeoLevel,
    GeoUniverse, IterationLevel, LevelSpec, PersonRecord, Sex, TotalOnlySet,
};
use crate::rational;

/// Ages above this are accepted with a warning; top age bins are open-ended
/// so any value tabulates correctly.
const AGE_WARN_LIMIT: u32 = 115;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationIssue {
    pub file: String,
    pub line: Option<usize>,
    pub message: String,
}

impl ValidationIssue {
    fn context(&self) -> String {
        match self.line {
            Some(n) => format!("{}:{}", self.file, n),
            None => self.file.clone(),
        }
    }
}

/// Accumulated validation outcome. Errors block the run; warnings do not.
#[derive(Debug, Default)]
pub struct ValidationReport {
    errors: Vec<ValidationIssue>,
    warnings: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn new() -> Self {
        ValidationReport::default()
    }

    pub fn error(&mut self, file: &str, line: Option<usize>, message: impl Into<String>) {
        self.errors.push(ValidationIssue {
            file: file.to_string(),
            line,
            message: message.into(),
        });
    }

    pub fn warning(&mut self, file: &str, line: Option<usize>, message: impl Into<String>) {
        self.warnings.push(ValidationIssue {
            file: file.to_string(),
            line,
            message: message.into(),
        });
    }

    pub fn passed(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn errors(&self) -> &[ValidationIssue] {
        &self.errors
    }

    pub fn warnings(&self) -> &[ValidationIssue] {
        &self.warnings
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for issue in &self.errors {
            let _ = writeln!(out, "error {}: {}", issue.context(), issue.message);
        }
        for issue in &self.warnings {
            let _ = writeln!(out, "warning {}: {}", issue.context(), issue.message);
        }
        let verdict = if self.passed() { "passed" } else { "failed" };
        let _ = writeln!(
            out,
            "validation {verdict}: {} error(s), {} warning(s)",
            self.errors.len(),
            self.warnings.len()
        );
        out
    }
}

/// One input file's name (for issue context) and full contents.
#[derive(Debug, Clone, Default)]
pub struct InputFile {
    pub name: String,
    pub text: String,
}

impl InputFile {
    pub fn new(name: impl Into<String>, text: impl Into<String>) -> Self {
        InputFile {
            name: name.into(),
            text: text.into(),
        }
    }
}

/// The raw file set for one run. `coterminous` is optional; everything else
/// is required (an empty file with a valid header is still valid input).
#[derive(Debug, Clone, Default)]
pub struct RawInputs {
    pub persons: InputFile,
    pub geography: InputFile,
    pub iterations: InputFile,
    pub levels: InputFile,
    pub total_only: InputFile,
    pub coterminous: Option<InputFile>,
}

/// Fully parsed inputs. Populated best-effort even when validation fails, so
/// callers must consult the report before using the data.
#[derive(Debug, Clone, Default)]
pub struct ParsedInputs {
    pub persons: Vec<PersonRecord>,
    pub blocks: BTreeMap<String, BlockGeo>,
    pub iterations: Vec<CharacteristicIteration>,
    pub levels: Vec<LevelSpec>,
    pub total_only: TotalOnlySet,
    pub coterminous: Option<CoterminousSpec>,
}

/// Pipe-split rows with 1-based line numbers, header checked against the
/// accepted variants (e.g. with and without an optional trailing column).
struct Table<'a> {
    variant: usize,
    rows: Vec<(usize, Vec<&'a str>)>,
}

fn scan_rows<'a>(
    text: &'a str,
    file: &str,
    variants: &[&str],
    report: &mut ValidationReport,
) -> Table<'a> {
    let mut variant: Option<usize> = None;
    let mut rows = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('|').map(str::trim).collect();
        match variant {
            None => {
                match variants
                    .iter()
                    .position(|v| v.split('|').collect::<Vec<_>>() == fields)
                {
                    Some(i) => variant = Some(i),
                    None => {
                        report.error(
                            file,
                            Some(line_no),
                            format!("unexpected header {line:?}; expected {:?}", variants[0]),
                        );
                        return Table {
                            variant: 0,
                            rows: Vec::new(),
                        };
                    }
                }
            }
            Some(v) => {
                let want = variants[v].split('|').count();
                if fields.len() == want {
                    rows.push((line_no, fields));
                } else {
                    report.error(
                        file,
                        Some(line_no),
                        format!("expected {} field(s), found {}", want, fields.len()),
                    );
                }
            }
        }
    }
    if variant.is_none() {
        report.error(file, None, "missing header row");
    }
    Table {
        variant: variant.unwrap_or(0),
        rows,
    }
}

fn require<'a>(
    value: &'a str,
    what: &str,
    file: &str,
    line: usize,
    report: &mut ValidationReport,
) -> Option<&'a str> {
    if value.is_empty() {
        report.error(file, Some(line), format!("empty {what}"));
        None
    } else {
        Some(value)
    }
}

fn split_codes(field: &str) -> BTreeSet<String> {
    field
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

fn parse_persons_rows(
    text: &str,
    file: &str,
    report: &mut ValidationReport,
) -> Vec<(usize, PersonRecord)> {
    let table = scan_rows(text, file, &["block|race_codes|ethnicity|sex|age"], report);
    let mut out = Vec::new();
    for (line, fields) in table.rows {
        let block = require(fields[0], "block id", file, line, report);
        let race_codes = split_codes(fields[1]);
        if race_codes.is_empty() {
            report.error(file, Some(line), "at least one race code is required");
            continue;
        }
        let ethnicity = require(fields[2], "ethnicity code", file, line, report);
        let sex = Sex::parse(fields[3]);
        if sex.is_none() {
            report.error(
                file,
                Some(line),
                format!("unrecognized sex {:?} (expected Male or Female)", fields[3]),
            );
        }
        let age = fields[4].parse::<u32>();
        if age.is_err() {
            report.error(file, Some(line), format!("invalid age {:?}", fields[4]));
        }
        if let (Some(block), Some(ethnicity), Some(sex), Ok(age)) = (block, ethnicity, sex, age) {
            out.push((
                line,
                PersonRecord {
                    block_id: block.to_string(),
                    race_codes,
                    ethnicity_code: ethnicity.to_string(),
                    sex,
                    age,
                },
            ));
        }
    }
    out
}

pub fn parse_persons(text: &str, file: &str, report: &mut ValidationReport) -> Vec<PersonRecord> {
    parse_persons_rows(text, file, report)
        .into_iter()
        .map(|(_, r)| r)
        .collect()
}

pub fn parse_geography(
    text: &str,
    file: &str,
    report: &mut ValidationReport,
) -> BTreeMap<String, BlockGeo> {
    let table = scan_rows(
        text,
        file,
        &["block|state|county|tract|place|aiannh"],
        report,
    );
    let mut blocks = BTreeMap::new();
    for (line, fields) in table.rows {
        let block = require(fields[0], "block id", file, line, report);
        let state = require(fields[1], "state", file, line, report);
        let county = require(fields[2], "county", file, line, report);
        let tract = require(fields[3], "tract", file, line, report);
        let (Some(block), Some(state), Some(county), Some(tract)) = (block, state, county, tract)
        else {
            continue;
        };
        let geo = BlockGeo {
            state: state.to_string(),
            county: county.to_string(),
            tract: tract.to_string(),
            place: (!fields[4].is_empty()).then(|| fields[4].to_string()),
            aiannh: (!fields[5].is_empty()).then(|| fields[5].to_string()),
        };
        if blocks.insert(block.to_string(), geo).is_some() {
            report.error(file, Some(line), format!("duplicate block {block:?}"));
        }
    }
    blocks
}

pub fn parse_iterations(
    text: &str,
    file: &str,
    report: &mut ValidationReport,
) -> Vec<CharacteristicIteration> {
    let table = scan_rows(
        text,
        file,
        &[
            "iteration_id|level|alone_flag|codes",
            "iteration_id|level|alone_flag|codes|exclude_geo_levels",
        ],
        report,
    );
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (line, fields) in table.rows {
        let id = require(fields[0], "iteration id", file, line, report);
        let level = IterationLevel::parse(fields[1]);
        if level.is_none() {
            report.error(
                file,
                Some(line),
                format!(
                    "unrecognized iteration level {:?} (expected Detailed or Regional)",
                    fields[1]
                ),
            );
        }
        let alone = AloneFlag::parse(fields[2]);
        if alone.is_none() {
            report.error(
                file,
                Some(line),
                format!(
                    "unrecognized qualifier {:?} (expected Alone or AloneOrInAnyCombination)",
                    fields[2]
                ),
            );
        }
        let member_codes = split_codes(fields[3]);
        if member_codes.is_empty() {
            report.error(file, Some(line), "at least one member code is required");
            continue;
        }
        let mut excluded_geo_levels = BTreeSet::new();
        if table.variant == 1 {
            for name in fields[4].split(',').map(str::trim).filter(|s| !s.is_empty()) {
                match GeoLevel::parse(name) {
                    Some(g) => {
                        excluded_geo_levels.insert(g);
                    }
                    None => report.error(
                        file,
                        Some(line),
                        format!("unrecognized geo level {name:?} in exclusions"),
                    ),
                }
            }
        }
        let (Some(id), Some(level), Some(alone)) = (id, level, alone) else {
            continue;
        };
        if !seen.insert(id.to_string()) {
            report.error(file, Some(line), format!("duplicate iteration id {id:?}"));
            continue;
        }
        out.push(CharacteristicIteration {
            iteration_id: id.to_string(),
            level,
            alone,
            member_codes,
            excluded_geo_levels,
        });
    }
    out
}

pub fn parse_levels(text: &str, file: &str, report: &mut ValidationReport) -> Vec<LevelSpec> {
    let table = scan_rows(
        text,
        file,
        &["level_id|geo_level|iteration_level|rho"],
        report,
    );
    let mut seen_ids = BTreeSet::new();
    let mut seen_pairs = BTreeSet::new();
    let mut out = Vec::new();
    for (line, fields) in table.rows {
        let id = require(fields[0], "level id", file, line, report);
        let geo_level = GeoLevel::parse(fields[1]);
        if geo_level.is_none() {
            report.error(
                file,
                Some(line),
                format!("unrecognized geo level {:?}", fields[1]),
            );
        }
        let iteration_level = IterationLevel::parse(fields[2]);
        if iteration_level.is_none() {
            report.error(
                file,
                Some(line),
                format!("unrecognized iteration level {:?}", fields[2]),
            );
        }
        let rho = match rational::parse_decimal(fields[3]) {
            Ok(r) if r > BigRational::zero() => Some(r),
            Ok(_) => {
                report.error(
                    file,
                    Some(line),
                    format!("budget must be positive, got {:?}", fields[3]),
                );
                None
            }
            Err(e) => {
                report.error(file, Some(line), format!("invalid budget {:?}: {e}", fields[3]));
                None
            }
        };
        let (Some(id), Some(geo_level), Some(iteration_level), Some(rho)) =
            (id, geo_level, iteration_level, rho)
        else {
            continue;
        };
        if !seen_ids.insert(id.to_string()) {
            report.error(file, Some(line), format!("duplicate level id {id:?}"));
            continue;
        }
        if !seen_pairs.insert((geo_level, iteration_level)) {
            report.error(
                file,
                Some(line),
                format!(
                    "duplicate level ({}, {})",
                    geo_level.as_str(),
                    iteration_level.as_str()
                ),
            );
            continue;
        }
        if geo_level == GeoLevel::Aiannh && iteration_level == IterationLevel::Regional {
            report.error(
                file,
                Some(line),
                "AIANNH geography is not tabulated for regional iterations",
            );
            continue;
        }
        out.push(LevelSpec {
            level_id: id.to_string(),
            geo_level,
            iteration_level,
            rho,
        });
    }
    out
}

pub fn parse_total_only(text: &str, file: &str, report: &mut ValidationReport) -> TotalOnlySet {
    let table = scan_rows(text, file, &["iteration_id|geo_level"], report);
    let mut set = TotalOnlySet::new();
    for (line, fields) in table.rows {
        let id = require(fields[0], "iteration id", file, line, report);
        let geo_level = GeoLevel::parse(fields[1]);
        if geo_level.is_none() {
            report.error(
                file,
                Some(line),
                format!("unrecognized geo level {:?}", fields[1]),
            );
        }
        let (Some(id), Some(geo_level)) = (id, geo_level) else {
            continue;
        };
        if geo_level.is_sub_state() {
            report.error(
                file,
                Some(line),
                format!(
                    "total-only designation applies to Nation or State geography, got {}",
                    geo_level.as_str()
                ),
            );
            continue;
        }
        if !set.insert(id, geo_level) {
            report.error(
                file,
                Some(line),
                format!("duplicate total-only pair ({id}, {})", geo_level.as_str()),
            );
        }
    }
    set
}

pub fn parse_coterminous(
    text: &str,
    file: &str,
    report: &mut ValidationReport,
) -> Option<CoterminousSpec> {
    // The donor preference order rides in a pragma comment so the row schema
    // stays uniform: `# order: State,County,Place` (most preferred first).
    let mut order: Option<Vec<GeoLevel>> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let Some(rest) = line.strip_prefix('#') else {
            continue;
        };
        let Some(spec) = rest.trim().strip_prefix("order:") else {
            continue;
        };
        if order.is_some() {
            report.error(file, Some(idx + 1), "duplicate order declaration");
            continue;
        }
        let mut levels = Vec::new();
        for name in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match GeoLevel::parse(name) {
                Some(g) if levels.contains(&g) => {
                    report.error(
                        file,
                        Some(idx + 1),
                        format!("geo level {name:?} repeated in order declaration"),
                    );
                }
                Some(g) => levels.push(g),
                None => report.error(
                    file,
                    Some(idx + 1),
                    format!("unrecognized geo level {name:?} in order declaration"),
                ),
            }
        }
        order = Some(levels);
    }

    let table = scan_rows(text, file, &["set_id|geo_level|entity_id"], report);
    let Some(order) = order else {
        report.error(
            file,
            None,
            "missing order declaration (e.g. \"# order: State,County,Place\")",
        );
        return None;
    };

    let mut sets: Vec<CoterminousSet> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    for (line, fields) in table.rows {
        let set_id = require(fields[0], "set id", file, line, report);
        let geo_level = GeoLevel::parse(fields[1]);
        if geo_level.is_none() {
            report.error(
                file,
                Some(line),
                format!("unrecognized geo level {:?}", fields[1]),
            );
        }
        let entity = require(fields[2], "entity id", file, line, report);
        let (Some(set_id), Some(geo_level), Some(entity)) = (set_id, geo_level, entity) else {
            continue;
        };
        if geo_level == GeoLevel::Nation {
            report.error(
                file,
                Some(line),
                "coterminous reconciliation applies below the nation",
            );
            continue;
        }
        if !order.contains(&geo_level) {
            report.error(
                file,
                Some(line),
                format!(
                    "geo level {} is not listed in the order declaration",
                    geo_level.as_str()
                ),
            );
            continue;
        }
        let member = (geo_level, entity.to_string());
        let slot = *index.entry(set_id.to_string()).or_insert_with(|| {
            sets.push(CoterminousSet {
                set_id: set_id.to_string(),
                members: Vec::new(),
            });
            sets.len() - 1
        });
        if sets[slot].members.contains(&member) {
            report.error(
                file,
                Some(line),
                format!("duplicate member ({}, {entity}) in set {set_id}", geo_level.as_str()),
            );
            continue;
        }
        sets[slot].members.push(member);
    }
    for set in &sets {
        if set.members.len() < 2 {
            report.warning(
                file,
                None,
                format!("set {} has a single member; reconciliation is a no-op", set.set_id),
            );
        }
    }
    Some(CoterminousSpec { order, sets })
}

/// Parses every input file and runs all cross-file checks. The report is
/// authoritative: callers proceed only when `report.passed()`.
pub fn validate_inputs(raw: &RawInputs, race_cap: usize) -> (ParsedInputs, ValidationReport) {
    let mut report = ValidationReport::new();
    let blocks = parse_geography(&raw.geography.text, &raw.geography.name, &mut report);
    let iterations = parse_iterations(&raw.iterations.text, &raw.iterations.name, &mut report);
    let levels = parse_levels(&raw.levels.text, &raw.levels.name, &mut report);
    let person_rows = parse_persons_rows(&raw.persons.text, &raw.persons.name, &mut report);
    let total_only = parse_total_only(&raw.total_only.text, &raw.total_only.name, &mut report);
    let coterminous = raw
        .coterminous
        .as_ref()
        .and_then(|f| parse_coterminous(&f.text, &f.name, &mut report));

    // Code domains are defined by the iteration spec: a race code is known if
    // any iteration tabulates it, an ethnicity code if an alone-qualified
    // iteration does (ethnicity iterations are always alone-qualified).
    let mut race_domain: BTreeSet<&str> = BTreeSet::new();
    let mut ethnicity_domain: BTreeSet<&str> = BTreeSet::new();
    for it in &iterations {
        race_domain.extend(it.member_codes.iter().map(String::as_str));
        if it.alone == AloneFlag::Alone {
            ethnicity_domain.extend(it.member_codes.iter().map(String::as_str));
        }
    }

    let persons_file = &raw.persons.name;
    for (line, record) in &person_rows {
        if !blocks.contains_key(&record.block_id) {
            report.error(
                persons_file,
                Some(*line),
                format!("block {:?} not present in the geography file", record.block_id),
            );
        }
        if record.race_codes.len() > race_cap {
            report.error(
                persons_file,
                Some(*line),
                format!(
                    "race multiplicity exceeded: {} codes, cap {race_cap}",
                    record.race_codes.len()
                ),
            );
        }
        for code in &record.race_codes {
            if !race_domain.contains(code.as_str()) {
                report.error(
                    persons_file,
                    Some(*line),
                    format!("race code {code:?} does not appear in any iteration"),
                );
            }
        }
        if !ethnicity_domain.contains(record.ethnicity_code.as_str()) {
            report.error(
                persons_file,
                Some(*line),
                format!(
                    "ethnicity code {:?} does not appear in any alone-qualified iteration",
                    record.ethnicity_code
                ),
            );
        }
        if record.age > AGE_WARN_LIMIT {
            report.warning(
                persons_file,
                Some(*line),
                format!("age {} exceeds {AGE_WARN_LIMIT}; record accepted", record.age),
            );
        }
    }

    let iteration_ids: BTreeMap<&str, IterationLevel> = iterations
        .iter()
        .map(|it| (it.iteration_id.as_str(), it.level))
        .collect();
    let to_file = &raw.total_only.name;
    for (id, geo_level) in total_only.iter() {
        match iteration_ids.get(id.as_str()) {
            None => report.error(
                to_file,
                None,
                format!("total-only pair ({id}, {}) names an unknown iteration", geo_level.as_str()),
            ),
            Some(it_level) => {
                let tabulated = levels
                    .iter()
                    .any(|l| l.geo_level == *geo_level && l.iteration_level == *it_level);
                if !tabulated {
                    report.warning(
                        to_file,
                        None,
                        format!(
                            "total-only pair ({id}, {}) matches no configured level",
                            geo_level.as_str()
                        ),
                    );
                }
            }
        }
    }

    for level in &levels {
        let any = iterations.iter().any(|it| it.level == level.iteration_level);
        if !any {
            report.warning(
                &raw.levels.name,
                None,
                format!(
                    "level {}: no {} iterations configured",
                    level.level_id,
                    level.iteration_level.as_str()
                ),
            );
        }
    }

    // Coterminous members must name real entities somewhere in the full
    // geography; region scoping at run time may still exclude whole sets.
    if let (Some(spec), Some(f)) = (&coterminous, &raw.coterminous) {
        let universe = GeoUniverse::new("US", blocks.clone());
        for set in &spec.sets {
            for (geo_level, entity) in &set.members {
                if *geo_level != GeoLevel::Nation && !universe.has_entity(*geo_level, entity) {
                    report.error(
                        &f.name,
                        None,
                        format!(
                            "set {}: no {} entity {entity:?} in the geography file",
                            set.set_id,
                            geo_level.as_str()
                        ),
                    );
                }
            }
        }
    }

    let parsed = ParsedInputs {
        persons: person_rows.into_iter().map(|(_, r)| r).collect(),
        blocks,
        iterations,
        levels,
        total_only,
        coterminous,
    };
    (parsed, report)
}
