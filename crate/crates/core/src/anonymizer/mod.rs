//! Rule-driven k-anonymisation of patient admission tables.
//!
//! Quasi-identifiers are generalized by per-column rules and patients are
//! grouped by their generalized tuple. Classes are counted in patients, not
//! records. No search over generalizations is attempted: classes smaller
//! than `k` are repaired by suppression (or dropped, or rejected).

mod dataset;
mod schema;

use std::collections::HashMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use dataset::{parse_dataset, Dataset, Patient};
pub use schema::{ColumnSpec, GeneralizationRule, RecordSchema, Role, Scope, SUPPRESSED};

use crate::scenario::ClassSizeDistribution;
use crate::{Error, Result};

/// Name of the class-label column appended to the output table.
pub const CLASS_COLUMN: &str = "equivalence_class";

/// What to do with patients whose class is smaller than `k`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum UndersizedPolicy {
    /// Suppress their quasi-identifiers into one residual class. If the
    /// residual is still below `k`, the smallest other classes join it.
    #[default]
    Suppress,
    /// Remove their records from the output.
    Drop,
    /// Fail.
    Strict,
}

/// The generalized patient-scope quasi-identifiers of `record`, in header order.
pub fn generalize(dataset: &Dataset, schema: &RecordSchema, record: &[String]) -> Result<Vec<String>> {
    dataset
        .header
        .iter()
        .zip(record)
        .filter_map(|(name, value)| {
            let spec = schema.column(name)?;
            (spec.role == Role::QuasiIdentifier && spec.scope == Scope::Patient).then(|| rule_of(spec).apply(name, value))
        })
        .collect()
}

fn rule_of(spec: &ColumnSpec) -> &GeneralizationRule {
    spec.rule.as_ref().expect("validated schema: quasi-identifiers carry a rule")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AnonymizedRecord {
    pub patient: u64,
    pub class: String,
    /// Generalized patient-scope quasi-identifiers (the class key).
    pub key: Vec<String>,
    /// Output values in [`AnonymizedDataset::header`] order, excluding the class column.
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EquivalenceClass {
    pub id: String,
    pub key: Vec<String>,
    pub patients: Vec<u64>,
    /// True for the residual class built from suppressed patients.
    pub suppressed: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Audit {
    pub patients: usize,
    pub records: usize,
    pub attributes: usize,
    pub classes: usize,
    pub suppressed_patients: usize,
    pub dropped_patients: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AnonymizedDataset {
    /// Output columns: direct identifiers removed, patient key pseudonymized.
    pub header: Vec<String>,
    /// Names of the patient-scope quasi-identifiers forming the class key.
    pub key_columns: Vec<String>,
    pub records: Vec<AnonymizedRecord>,
    pub classes: Vec<EquivalenceClass>,
    pub audit: Audit,
}

impl AnonymizedDataset {
    /// Writes the table with a trailing class column, records grouped by class.
    pub fn write_table<W: Write>(&self, out: W, delimiter: u8) -> Result<()> {
        let mut writer = csv::WriterBuilder::new().delimiter(delimiter).from_writer(out);
        writer.write_record(self.header.iter().map(String::as_str).chain([CLASS_COLUMN]))?;
        for record in &self.records {
            writer.write_record(record.values.iter().map(String::as_str).chain([record.class.as_str()]))?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Generalizes, groups and repairs `dataset` so every class holds at least
/// `k` patients. Pseudonyms `1..=P` are handed out in an order shuffled by `seed`.
pub fn k_anonymize(
    dataset: &Dataset,
    schema: &RecordSchema,
    k: usize,
    policy: UndersizedPolicy,
    seed: u64,
) -> Result<AnonymizedDataset> {
    if k == 0 {
        return Err(Error::domain("k must be at least 1"));
    }
    if dataset.patients.len() < k {
        return Err(Error::domain(format!(
            "{} patients cannot form a class of {k}",
            dataset.patients.len()
        )));
    }

    let mut keys = Vec::with_capacity(dataset.patients.len());
    for patient in &dataset.patients {
        let mut records = patient.records.iter();
        let first = generalize(dataset, schema, records.next().expect("patients have records"))?;
        for record in records {
            let other = generalize(dataset, schema, record)?;
            if let Some(i) = first.iter().zip(&other).position(|(a, b)| a != b) {
                return Err(Error::Generalize {
                    column: key_columns(dataset, schema)[i].clone(),
                    value: other[i].clone(),
                    reason: format!("patient `{}` has conflicting values across records", patient.key),
                });
            }
        }
        keys.push(first);
    }

    // Group patients (by index) in first-appearance order.
    let mut groups: Vec<(Vec<String>, Vec<usize>)> = Vec::new();
    let mut lookup: HashMap<&[String], usize> = HashMap::new();
    for (p, key) in keys.iter().enumerate() {
        let g = *lookup.entry(key.as_slice()).or_insert_with(|| {
            groups.push((key.clone(), Vec::new()));
            groups.len() - 1
        });
        groups[g].1.push(p);
    }

    let width = keys[0].len();
    let sentinel = vec![SUPPRESSED.to_owned(); width];
    let mut residual: Vec<usize> = Vec::new();
    let mut dropped = 0;
    let undersized: Vec<usize> = (0..groups.len()).filter(|&g| groups[g].1.len() < k).collect();
    match policy {
        UndersizedPolicy::Strict if !undersized.is_empty() => {
            let sizes: Vec<String> = undersized.iter().map(|&g| groups[g].1.len().to_string()).collect();
            return Err(Error::domain(format!(
                "{} classes below k={k} (patient counts {})",
                undersized.len(),
                sizes.join(", ")
            )));
        }
        UndersizedPolicy::Drop => {
            for &g in &undersized {
                dropped += groups[g].1.len();
                groups[g].1.clear();
            }
        }
        UndersizedPolicy::Suppress if !undersized.is_empty() => {
            for &g in &undersized {
                residual.append(&mut groups[g].1);
            }
            // A natural class whose key is already fully suppressed joins the residual.
            if let Some(g) = groups.iter().position(|(key, ps)| *key == sentinel && !ps.is_empty()) {
                residual.append(&mut groups[g].1);
            }
            while residual.len() < k {
                let g = (0..groups.len())
                    .filter(|&g| !groups[g].1.is_empty())
                    .min_by_key(|&g| groups[g].1.len())
                    .expect("total patients >= k");
                residual.append(&mut groups[g].1);
            }
            residual.sort_unstable();
        }
        _ => {}
    }

    let mut order: Vec<usize> = (0..dataset.patients.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut pseudonym = vec![0u64; order.len()];
    for (i, &p) in order.iter().enumerate() {
        pseudonym[p] = i as u64 + 1;
    }

    let mut classes: Vec<(Vec<String>, Vec<usize>, bool)> = groups
        .into_iter()
        .filter(|(_, ps)| !ps.is_empty())
        .map(|(key, ps)| (key, ps, false))
        .collect();
    let suppressed_patients = residual.len();
    if !residual.is_empty() {
        classes.push((sentinel, residual, true));
    }

    let mut header = Vec::new();
    let mut columns = Vec::new();
    for (i, name) in dataset.header.iter().enumerate() {
        let spec = schema.column(name).expect("parsed against this schema");
        if spec.role != Role::DirectIdentifier {
            header.push(name.clone());
            columns.push((i, spec));
        }
    }

    let mut records = Vec::with_capacity(dataset.record_count());
    let mut out_classes = Vec::with_capacity(classes.len());
    for (c, (key, patients, suppressed)) in classes.into_iter().enumerate() {
        let id = format!("C{}", c + 1);
        for &p in &patients {
            for raw in &dataset.patients[p].records {
                let mut key_values = key.iter();
                let mut values = Vec::with_capacity(columns.len());
                for &(i, spec) in &columns {
                    values.push(match (spec.role, spec.scope) {
                        (Role::PatientKey, _) => pseudonym[p].to_string(),
                        (Role::QuasiIdentifier, Scope::Patient) => key_values.next().expect("key width").clone(),
                        (Role::QuasiIdentifier, Scope::Record) => rule_of(spec).apply(&dataset.header[i], &raw[i])?,
                        _ => raw[i].clone(),
                    });
                }
                records.push(AnonymizedRecord {
                    patient: pseudonym[p],
                    class: id.clone(),
                    key: key.clone(),
                    values,
                });
            }
        }
        out_classes.push(EquivalenceClass {
            id,
            key,
            patients: patients.iter().map(|&p| pseudonym[p]).collect(),
            suppressed,
        });
    }

    let audit = Audit {
        patients: out_classes.iter().map(|c| c.patients.len()).sum(),
        records: records.len(),
        attributes: header.len(),
        classes: out_classes.len(),
        suppressed_patients,
        dropped_patients: dropped,
    };
    Ok(AnonymizedDataset {
        header,
        key_columns: key_columns(dataset, schema),
        records,
        classes: out_classes,
        audit,
    })
}

fn key_columns(dataset: &Dataset, schema: &RecordSchema) -> Vec<String> {
    dataset
        .header
        .iter()
        .filter(|name| {
            schema
                .column(name)
                .is_some_and(|c| c.role == Role::QuasiIdentifier && c.scope == Scope::Patient)
        })
        .cloned()
        .collect()
}

/// `a_i` = number of classes with exactly `i` patients.
pub fn class_histogram(anonymized: &AnonymizedDataset) -> ClassSizeDistribution {
    ClassSizeDistribution::from_class_sizes(anonymized.classes.iter().map(|c| c.patients.len() as u64))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Violation {
    Undersized { class: String, patients: usize },
    MismatchedTuple { class: String, patient: u64 },
}

/// Empty iff every class has at least `k` patients and all its records
/// carry the class key.
pub fn verify_k_anonymity(anonymized: &AnonymizedDataset, k: usize) -> Vec<Violation> {
    let mut violations = Vec::new();
    let keys: HashMap<&str, &[String]> = anonymized.classes.iter().map(|c| (c.id.as_str(), c.key.as_slice())).collect();
    for class in &anonymized.classes {
        if class.patients.len() < k {
            violations.push(Violation::Undersized {
                class: class.id.clone(),
                patients: class.patients.len(),
            });
        }
    }
    for record in &anonymized.records {
        if keys.get(record.class.as_str()) != Some(&record.key.as_slice()) {
            violations.push(Violation::MismatchedTuple {
                class: record.class.clone(),
                patient: record.patient,
            });
        }
    }
    violations
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCHEMA: &str = r#"{
        "id": {"role": "patient_key"},
        "name": {"role": "direct_identifier"},
        "zip": {"role": "quasi_identifier", "rule": {"kind": "string_prefix", "length": 2}},
        "stay": {"role": "quasi_identifier", "scope": "record", "rule": {"kind": "numeric_bin", "width": 10}},
        "dx": {"role": "sensitive"}
    }"#;

    const ROWS: &str = "id,name,zip,stay,dx
1,Ann,AB1,3,flu
1,Ann,AB1,14,cold
2,Bob,AB2,5,flu
3,Cy,AB3,7,ulcer
4,Di,CD1,1,flu
5,Ed,CD2,2,cold
6,Flo,EF1,8,flu
";

    fn load() -> (Dataset, RecordSchema) {
        let schema = RecordSchema::from_json(SCHEMA).unwrap();
        (parse_dataset(ROWS.as_bytes(), &schema, b',').unwrap(), schema)
    }

    #[test]
    fn suppression_merges_small_classes() {
        let (ds, schema) = load();
        let out = k_anonymize(&ds, &schema, 2, UndersizedPolicy::Suppress, 7).unwrap();
        let sizes: Vec<usize> = out.classes.iter().map(|c| c.patients.len()).collect();
        // EF alone is undersized; CD (the smallest remaining) joins it.
        assert_eq!(sizes, vec![3, 3]);
        assert_eq!(out.classes.len(), 2);
        assert_eq!(out.classes[0].key, vec!["AB"]);
        assert_eq!(out.classes[1].key, vec![SUPPRESSED]);
        assert!(out.classes[1].suppressed);
        assert_eq!(out.audit.suppressed_patients, 3);
        assert!(verify_k_anonymity(&out, 2).is_empty());
        assert_eq!(class_histogram(&out).counts(), &[0, 0, 0, 2]);
    }

    #[test]
    fn direct_identifiers_removed_and_pseudonyms_unique() {
        let (ds, schema) = load();
        let out = k_anonymize(&ds, &schema, 1, UndersizedPolicy::Suppress, 1).unwrap();
        assert!(!out.header.iter().any(|h| h == "name"));
        assert_eq!(out.records.len(), 7);
        let mut ids: Vec<u64> = out.classes.iter().flat_map(|c| c.patients.clone()).collect();
        ids.sort_unstable();
        assert_eq!(ids, (1..=6).collect::<Vec<_>>());
        assert_eq!(out.audit.suppressed_patients, 0);
        // Record-scope values are generalized per record.
        let stays: Vec<&str> = out.records.iter().filter(|r| r.patient == out.classes[0].patients[0]).map(|r| r.values[2].as_str()).collect();
        assert_eq!(stays, vec!["[0,10)", "[10,20)"]);
        let again = k_anonymize(&ds, &schema, 1, UndersizedPolicy::Suppress, 1).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn k1_is_identity_partition() {
        let (ds, schema) = load();
        let out = k_anonymize(&ds, &schema, 1, UndersizedPolicy::Strict, 0).unwrap();
        assert_eq!(out.classes.len(), 3);
        assert_eq!(class_histogram(&out).counts(), &[0, 1, 1, 1]);
    }

    #[test]
    fn drop_and_strict() {
        let (ds, schema) = load();
        let dropped = k_anonymize(&ds, &schema, 3, UndersizedPolicy::Drop, 0).unwrap();
        assert_eq!(dropped.audit.dropped_patients, 3);
        assert_eq!(dropped.classes.len(), 1);
        assert!(k_anonymize(&ds, &schema, 3, UndersizedPolicy::Strict, 0).unwrap_err().is_domain_violation());
        assert!(k_anonymize(&ds, &schema, 7, UndersizedPolicy::Suppress, 0).is_err());
        assert!(k_anonymize(&ds, &schema, 0, UndersizedPolicy::Suppress, 0).is_err());
    }

    #[test]
    fn residual_grows_to_k() {
        let (ds, schema) = load();
        // Classes AB:3, CD:2, EF:1 at k=3: residual {EF, CD} holds 3.
        let out = k_anonymize(&ds, &schema, 3, UndersizedPolicy::Suppress, 0).unwrap();
        assert_eq!(class_histogram(&out).counts(), &[0, 0, 0, 2]);
        // At k=4 every class is undersized.
        let all = k_anonymize(&ds, &schema, 4, UndersizedPolicy::Suppress, 0).unwrap();
        assert_eq!(all.classes.len(), 1);
        assert!(verify_k_anonymity(&all, 4).is_empty());
    }

    #[test]
    fn conflicting_patient_values_rejected() {
        let schema = RecordSchema::from_json(SCHEMA).unwrap();
        let ds = parse_dataset("id,name,zip,stay,dx\n1,A,AB,1,x\n1,A,CD,2,y\n".as_bytes(), &schema, b',').unwrap();
        assert!(matches!(k_anonymize(&ds, &schema, 1, UndersizedPolicy::Suppress, 0), Err(Error::Generalize { .. })));
    }

    #[test]
    fn tampering_is_detected() {
        let (ds, schema) = load();
        let mut out = k_anonymize(&ds, &schema, 2, UndersizedPolicy::Suppress, 3).unwrap();
        out.records[0].key = vec!["ZZ".into()];
        assert_eq!(verify_k_anonymity(&out, 2).len(), 1);
        assert_eq!(verify_k_anonymity(&out, 4).len(), 3);
    }

    #[test]
    fn table_output_has_class_column() {
        let (ds, schema) = load();
        let out = k_anonymize(&ds, &schema, 2, UndersizedPolicy::Suppress, 3).unwrap();
        let mut buf = Vec::new();
        out.write_table(&mut buf, b',').unwrap();
        let text = String::from_utf8(buf).unwrap();
        let first = text.lines().next().unwrap();
        assert!(first.ends_with(CLASS_COLUMN));
        assert_eq!(text.lines().count(), 8);
        assert!(class_histogram(&AnonymizedDataset {
            header: vec![],
            key_columns: vec![],
            records: vec![],
            classes: vec![],
            audit: Audit::default(),
        })
        .counts()
        .is_empty());
    }
}
