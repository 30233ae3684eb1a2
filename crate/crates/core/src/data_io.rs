//! CSV ingestion with per-dataset schemas, and result serialization.
//!
//! Result files come in two flavours: CSV tables and flat `key = value`
//! summaries. Floats are written with 17 significant digits so that reading
//! a file back reproduces every value bit for bit.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::regression::{AgentId, DataPoint, Dataset};

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Cell {
    pub fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format_float(*v),
            Cell::Text(s) => s.clone(),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Int(v) => Some(*v as f64),
            Cell::Float(v) => Some(*v),
            Cell::Text(s) => s.trim().parse().ok(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

/// 17 significant digits in scientific notation.
pub fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

/// Rows of cells under a fixed column order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl ResultTable {
    pub fn new(columns: &[&str]) -> Self {
        ResultTable {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    /// Panics if the row width does not match the header.
    pub fn push_row(&mut self, row: Vec<Cell>) {
        assert_eq!(
            row.len(),
            self.columns.len(),
            "row width differs from header"
        );
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    /// Two-column `key, value` table written as `key = value` lines.
    KeyValue,
}

pub fn write_results(table: &ResultTable, path: &Path, format: OutputFormat) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    match format {
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_path(path)?;
            w.write_record(&table.columns)?;
            for row in &table.rows {
                w.write_record(row.iter().map(Cell::render))?;
            }
            w.flush()?;
        }
        OutputFormat::KeyValue => {
            if table.columns.len() != 2 {
                return Err(Error::InvalidTable(format!(
                    "key-value output needs 2 columns, table has {}",
                    table.columns.len()
                )));
            }
            let mut f = fs::File::create(path)?;
            for row in &table.rows {
                let key = row[0].render();
                if key.contains('=') || key.contains('\n') {
                    return Err(Error::InvalidTable(format!("bad key {key:?}")));
                }
                writeln!(f, "{key} = {}", row[1].render())?;
            }
        }
    }
    Ok(())
}

/// Reads a CSV table back; every cell comes back as text.
pub fn read_csv_table(path: &Path) -> Result<ResultTable> {
    let mut r = csv::Reader::from_path(path)?;
    let columns = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec?.iter().map(|s| Cell::Text(s.to_string())).collect());
    }
    Ok(ResultTable { columns, rows })
}

/// Parses `key = value` lines, skipping blanks and `#` comments.
pub fn parse_key_values<R: Read>(reader: R) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (k, v) = trimmed.split_once('=').ok_or_else(|| Error::Schema {
            line: i + 1,
            message: format!("expected `key = value`, got {trimmed:?}"),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn read_key_values(path: &Path) -> Result<Vec<(String, String)>> {
    parse_key_values(fs::File::open(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NaPolicy {
    DropRow,
    Error,
}

/// How to turn one CSV file into a numeric dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSchema {
    pub name: String,
    pub target_column: String,
    pub dropped_columns: Vec<String>,
    pub delimiter: u8,
    pub standardize: bool,
    pub na_policy: NaPolicy,
    /// Cell contents treated as missing, in addition to the empty cell.
    pub missing_values: Vec<String>,
    /// Parse `2,6` as 2.6.
    pub decimal_comma: bool,
    /// Column names for files without a header row.
    pub column_names: Option<Vec<String>>,
}

impl DatasetSchema {
    pub fn new(name: &str, target: &str) -> Self {
        DatasetSchema {
            name: name.into(),
            target_column: target.into(),
            dropped_columns: Vec::new(),
            delimiter: b',',
            standardize: true,
            na_policy: NaPolicy::DropRow,
            missing_values: vec!["?".into(), "NA".into(), "NaN".into()],
            decimal_comma: false,
            column_names: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dropped_columns.contains(&self.target_column) {
            return Err(Error::InvalidConfig(format!(
                "target column `{}` is also dropped",
                self.target_column
            )));
        }
        Ok(())
    }

    /// Number of predictors implied by `column_names`, when they are known.
    pub fn predictor_count(&self) -> Option<usize> {
        self.column_names.as_ref().map(|names| {
            names
                .iter()
                .filter(|c| **c != self.target_column && !self.dropped_columns.contains(c))
                .count()
        })
    }

    /// Parses the flat `key = value` schema format written by [`DatasetSchema::to_text`].
    pub fn parse<R: Read>(reader: R) -> Result<Self> {
        let pairs = parse_key_values(reader)?;
        let map: HashMap<_, _> = pairs.into_iter().collect();
        let get = |k: &str| map.get(k).map(String::as_str);
        let err = |message: String| Error::Schema { line: 0, message };
        let list = |v: &str| -> Vec<String> {
            v.split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect()
        };
        let flag = |k: &str, default: bool| -> Result<bool> {
            match get(k) {
                None => Ok(default),
                Some("true") => Ok(true),
                Some("false") => Ok(false),
                Some(other) => Err(err(format!("{k} must be true or false, got {other:?}"))),
            }
        };

        let name = get("name").ok_or_else(|| err("missing `name`".into()))?;
        let target = get("target_column").ok_or_else(|| err("missing `target_column`".into()))?;
        let mut schema = DatasetSchema::new(name, target);
        if let Some(v) = get("dropped_columns") {
            schema.dropped_columns = list(v);
        }
        if let Some(v) = get("delimiter") {
            schema.delimiter = match v {
                "tab" => b'\t',
                "comma" => b',',
                "semicolon" => b';',
                s if s.len() == 1 => s.as_bytes()[0],
                s => return Err(err(format!("delimiter must be one character, got {s:?}"))),
            };
        }
        schema.standardize = flag("standardize", true)?;
        schema.decimal_comma = flag("decimal_comma", false)?;
        if let Some(v) = get("na_policy") {
            schema.na_policy = match v {
                "drop-row" => NaPolicy::DropRow,
                "error" => NaPolicy::Error,
                s => return Err(err(format!("unknown na_policy {s:?}"))),
            };
        }
        if let Some(v) = get("missing_values") {
            schema.missing_values = list(v);
        }
        if let Some(v) = get("column_names") {
            schema.column_names = Some(list(v));
        }
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        DatasetSchema::parse(fs::File::open(path)?)
    }

    pub fn to_text(&self) -> String {
        let delimiter = match self.delimiter {
            b'\t' => "tab".to_string(),
            b',' => "comma".to_string(),
            b';' => "semicolon".to_string(),
            c => (c as char).to_string(),
        };
        let mut s = format!(
            "name = {}\ntarget_column = {}\ndropped_columns = {}\ndelimiter = {}\nstandardize = {}\nna_policy = {}\nmissing_values = {}\ndecimal_comma = {}\n",
            self.name,
            self.target_column,
            self.dropped_columns.join(", "),
            delimiter,
            self.standardize,
            match self.na_policy {
                NaPolicy::DropRow => "drop-row",
                NaPolicy::Error => "error",
            },
            self.missing_values.join(", "),
            self.decimal_comma,
        );
        if let Some(names) = &self.column_names {
            s.push_str(&format!("column_names = {}\n", names.join(", ")));
        }
        s
    }
}

/// Per-feature z-score statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardization {
    /// Zero-variance columns get a unit scale so they are only centred.
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows.first().map_or(0, Vec::len);
        let n = rows.len().max(1) as f64;
        let mut means = vec![0.0; d];
        for r in rows {
            for (m, v) in means.iter_mut().zip(r) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut stds = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in stds.iter_mut().zip(r).zip(&means) {
                *s += (v - m) * (v - m);
            }
        }
        for s in &mut stds {
            *s = (*s / n).sqrt();
            if !(*s > 0.0) {
                *s = 1.0;
            }
        }
        Standardization { means, stds }
    }

    pub fn apply(&self, x: &mut [f64]) {
        for ((v, m), s) in x.iter_mut().zip(&self.means).zip(&self.stds) {
            *v = (*v - m) / s;
        }
    }

    pub fn invert(&self, x: &mut [f64]) {
        for ((v, m), s) in x.iter_mut().zip(&self.means).zip(&self.stds) {
            *v = *v * s + m;
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub dataset: Dataset,
    pub feature_names: Vec<String>,
    pub standardization: Option<Standardization>,
    /// Rows removed because of missing values.
    pub dropped_rows: usize,
}

pub fn load_csv(path: &Path, schema: &DatasetSchema) -> Result<LoadedDataset> {
    load_csv_from_reader(fs::File::open(path)?, schema)
}

pub fn load_csv_from_reader<R: Read>(reader: R, schema: &DatasetSchema) -> Result<LoadedDataset> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .has_headers(schema.column_names.is_none())
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = match &schema.column_names {
        Some(names) => names.clone(),
        None => rdr.headers()?.iter().map(str::to_string).collect(),
    };

    let target = header
        .iter()
        .position(|c| *c == schema.target_column)
        .ok_or_else(|| Error::MissingColumn(schema.target_column.clone()))?;
    for dropped in &schema.dropped_columns {
        if !header.contains(dropped) {
            return Err(Error::MissingColumn(dropped.clone()));
        }
    }
    // unnamed trailing columns (e.g. from a trailing delimiter) are ignored
    let features: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|&(i, c)| i != target && !c.is_empty() && !schema.dropped_columns.contains(c))
        .map(|(i, _)| i)
        .collect();
    let feature_names = features.iter().map(|&i| header[i].clone()).collect();

    let missing_numeric: Vec<f64> = schema
        .missing_values
        .iter()
        .filter_map(|m| m.replace(',', ".").parse().ok())
        .collect();
    let parse = |row: usize, col: usize, raw: &str| -> Result<Option<f64>> {
        if raw.is_empty() || schema.missing_values.iter().any(|m| m == raw) {
            return Ok(None);
        }
        let owned;
        let text = if schema.decimal_comma {
            owned = raw.replace(',', ".");
            owned.as_str()
        } else {
            raw
        };
        match text.parse::<f64>() {
            // numeric sentinels also match when formatted differently, e.g. `-200,0`
            Ok(v) if missing_numeric.contains(&v) => Ok(None),
            Ok(v) if v.is_finite() => Ok(Some(v)),
            _ => Err(Error::NonNumericCell {
                row,
                column: header[col].clone(),
                value: raw.to_string(),
            }),
        }
    };

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut dropped_rows = 0;
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let mut x = Vec::with_capacity(features.len());
        let mut missing = None;
        for &col in features.iter().chain(std::iter::once(&target)) {
            let raw = rec.get(col).unwrap_or("");
            match parse(row, col, raw)? {
                Some(v) => x.push(v),
                None => {
                    missing = Some(col);
                    break;
                }
            }
        }
        if let Some(col) = missing {
            match schema.na_policy {
                NaPolicy::DropRow => {
                    dropped_rows += 1;
                    continue;
                }
                NaPolicy::Error => {
                    return Err(Error::MissingValue {
                        row,
                        column: header[col].clone(),
                    })
                }
            }
        }
        ys.push(x.pop().expect("target value present"));
        xs.push(x);
    }
    if xs.is_empty() {
        return Err(Error::EmptyAfterFiltering);
    }

    let standardization = schema.standardize.then(|| Standardization::fit(&xs));
    let mut data = Dataset::new(features.len());
    for (i, (mut x, y)) in xs.into_iter().zip(ys).enumerate() {
        if let Some(s) = &standardization {
            s.apply(&mut x);
        }
        data.push(DataPoint::new(x, y).with_agent(AgentId(i as u64), i))?;
    }
    Ok(LoadedDataset {
        dataset: data,
        feature_names,
        standardization,
        dropped_rows,
    })
}

const CRIME_COLUMNS: &str =
    "state, county, community, communityname, fold, population, householdsize, \
racepctblack, racePctWhite, racePctAsian, racePctHisp, agePct12t21, agePct12t29, agePct16t24, \
agePct65up, numbUrban, pctUrban, medIncome, pctWWage, pctWFarmSelf, pctWInvInc, pctWSocSec, \
pctWPubAsst, pctWRetire, medFamInc, perCapInc, whitePerCap, blackPerCap, indianPerCap, \
AsianPerCap, OtherPerCap, HispPerCap, NumUnderPov, PctPopUnderPov, PctLess9thGrade, \
PctNotHSGrad, PctBSorMore, PctUnemployed, PctEmploy, PctEmplManu, PctEmplProfServ, \
PctOccupManu, PctOccupMgmtProf, MalePctDivorce, MalePctNevMarr, FemalePctDiv, TotalPctDiv, \
PersPerFam, PctFam2Par, PctKids2Par, PctYoungKids2Par, PctTeen2Par, PctWorkMomYoungKids, \
PctWorkMom, NumIlleg, PctIlleg, NumImmig, PctImmigRecent, PctImmigRec5, PctImmigRec8, \
PctImmigRec10, PctRecentImmig, PctRecImmig5, PctRecImmig8, PctRecImmig10, PctSpeakEnglOnly, \
PctNotSpeakEnglWell, PctLargHouseFam, PctLargHouseOccup, PersPerOccupHous, PersPerOwnOccHous, \
PersPerRentOccHous, PctPersOwnOccup, PctPersDenseHous, PctHousLess3BR, MedNumBR, HousVacant, \
PctHousOccup, PctHousOwnOcc, PctVacantBoarded, PctVacMore6Mos, MedYrHousBuilt, PctHousNoPhone, \
PctWOFullPlumb, OwnOccLowQuart, OwnOccMedVal, OwnOccHiQuart, RentLowQ, RentMedian, RentHighQ, \
MedRent, MedRentPctHousInc, MedOwnCostPctInc, MedOwnCostPctIncNoMtg, NumInShelters, NumStreet, \
PctForeignBorn, PctBornSameState, PctSameHouse85, PctSameCity85, PctSameState85, LemasSwornFT, \
LemasSwFTPerPop, LemasSwFTFieldOps, LemasSwFTFieldPerPop, LemasTotalReq, LemasTotReqPerPop, \
PolicReqPerOffic, PolicPerPop, RacialMatchCommPol, PctPolicWhite, PctPolicBlack, PctPolicHisp, \
PctPolicAsian, PctPolicMinor, OfficAssgnDrugUnits, NumKindsDrugsSeiz, PolicAveOTWorked, \
LandArea, PopDens, PctUsePubTrans, PolicCars, PolicOperBudg, LemasPctPolicOnPatr, \
LemasGangUnitDeploy, LemasPctOfficDrugUn, PolicBudgPerPop, ViolentCrimesPerPop";

/// Identifier columns plus the police statistics that are missing for most communities.
const CRIME_DROPPED: &str = "state, county, community, communityname, fold, LemasSwornFT, \
LemasSwFTPerPop, LemasSwFTFieldOps, LemasSwFTFieldPerPop, LemasTotalReq, LemasTotReqPerPop, \
PolicReqPerOffic, PolicPerPop, RacialMatchCommPol, PctPolicWhite, PctPolicBlack, PctPolicHisp, \
PctPolicAsian, PctPolicMinor, OfficAssgnDrugUnits, NumKindsDrugsSeiz, PolicAveOTWorked, \
PolicCars, PolicOperBudg, LemasPctPolicOnPatr, LemasGangUnitDeploy, PolicBudgPerPop";

fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(|c| c.trim().to_string()).collect()
}

/// Schemas for the five UCI regression datasets.
pub fn builtin_schemas() -> Vec<DatasetSchema> {
    let wine = |name: &str| DatasetSchema {
        delimiter: b';',
        ..DatasetSchema::new(name, "quality")
    };

    let air = DatasetSchema {
        delimiter: b';',
        decimal_comma: true,
        // the file marks missing readings with -200
        missing_values: vec!["-200".into()],
        dropped_columns: split_list("Date, Time, CO(GT), NMHC(GT), NOx(GT), NO2(GT)"),
        ..DatasetSchema::new("air-quality", "C6H6(GT)")
    };

    let crime = DatasetSchema {
        dropped_columns: split_list(CRIME_DROPPED),
        column_names: Some(split_list(CRIME_COLUMNS)),
        ..DatasetSchema::new("crime", "ViolentCrimesPerPop")
    };

    let parkinsons = DatasetSchema {
        dropped_columns: split_list("subject#, sex, test_time, motor_UPDRS"),
        ..DatasetSchema::new("parkinsons", "total_UPDRS")
    };

    vec![wine("red-wine"), wine("white-wine"), air, crime, parkinsons]
}

pub fn builtin_schema(name: &str) -> Option<DatasetSchema> {
    builtin_schemas().into_iter().find(|s| s.name == name)
}
