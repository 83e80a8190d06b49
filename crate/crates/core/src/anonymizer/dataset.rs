//! Delimited-text ingestion, grouped by patient.

use std::collections::HashMap;
use std::io::Read;

use super::schema::{RecordSchema, Role};
use crate::{Error, Result};

/// One patient's admissions, raw values in header order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patient {
    pub key: String,
    pub records: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub header: Vec<String>,
    /// In order of first appearance.
    pub patients: Vec<Patient>,
}

impl Dataset {
    pub fn record_count(&self) -> usize {
        self.patients.iter().map(|p| p.records.len()).sum()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

/// Reads a header row plus records. Every header column must be in the
/// schema and vice versa; fields are trimmed.
pub fn parse_dataset<R: Read>(input: R, schema: &RecordSchema, delimiter: u8) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if header.iter().all(String::is_empty) {
        return Err(Error::EmptyInput);
    }
    for name in &header {
        if schema.column(name).is_none() {
            return Err(Error::UnknownColumn(name.clone()));
        }
    }
    for (name, _) in schema.columns() {
        if !header.iter().any(|h| h == name) {
            return Err(Error::Schema(format!("column `{name}` missing from input header")));
        }
    }
    let key_col = header
        .iter()
        .position(|h| schema.column(h).is_some_and(|c| c.role == Role::PatientKey))
        .expect("schema has a patient key present in the header");

    let mut patients: Vec<Patient> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != header.len() {
            return Err(Error::MalformedRow {
                row: line,
                message: format!("expected {} fields, found {}", header.len(), row.len()),
            });
        }
        let key = &row[key_col];
        if key.is_empty() {
            return Err(Error::MalformedRow {
                row: line,
                message: format!("empty patient key `{}`", header[key_col]),
            });
        }
        let values: Vec<String> = row.iter().map(str::to_owned).collect();
        let slot = *index.entry(key.to_owned()).or_insert_with(|| {
            patients.push(Patient {
                key: key.to_owned(),
                records: Vec::new(),
            });
            patients.len() - 1
        });
        patients[slot].records.push(values);
    }
    if patients.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(Dataset { header, patients })
}
