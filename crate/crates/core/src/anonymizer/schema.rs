//! Column roles and generalization rules.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Label written for suppressed values.
pub const SUPPRESSED: &str = "*";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    DirectIdentifier,
    QuasiIdentifier,
    Sensitive,
    PatientKey,
}

/// Whether a quasi-identifier describes the patient (same on every record,
/// part of the class key) or a single admission (generalized in the output
/// but not used for grouping).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    #[default]
    Patient,
    Record,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GeneralizationRule {
    /// `v -> [anchor + w*floor((v - anchor)/w), +w)`.
    NumericBin {
        width: f64,
        #[serde(default)]
        anchor: f64,
    },
    StringPrefix { length: usize },
    /// Explicit value -> group label; must cover every observed value.
    CategoryMap { groups: BTreeMap<String, String> },
    Suppress,
}

impl GeneralizationRule {
    fn validate(&self, column: &str) -> Result<()> {
        match self {
            GeneralizationRule::NumericBin { width, anchor } if !(*width > 0.0 && width.is_finite() && anchor.is_finite()) => {
                Err(Error::Schema(format!("column `{column}`: numeric_bin needs a finite positive width")))
            }
            _ => Ok(()),
        }
    }

    /// Generalizes one raw value. Already-generalized labels map to themselves.
    pub fn apply(&self, column: &str, value: &str) -> Result<String> {
        let fail = |reason: &str| Error::Generalize {
            column: column.to_owned(),
            value: value.to_owned(),
            reason: reason.to_owned(),
        };
        match self {
            GeneralizationRule::Suppress => Ok(SUPPRESSED.to_owned()),
            GeneralizationRule::StringPrefix { length } => Ok(value.chars().take(*length).collect()),
            GeneralizationRule::CategoryMap { groups } => {
                if let Some(group) = groups.get(value) {
                    Ok(group.clone())
                } else if groups.values().any(|g| g == value) {
                    Ok(value.to_owned())
                } else {
                    Err(fail("value not covered by category_map"))
                }
            }
            GeneralizationRule::NumericBin { width, anchor } => {
                if let Some(label) = parse_bin_label(value) {
                    return if label.1 - label.0 == *width && ((label.0 - anchor) / width).fract() == 0.0 {
                        Ok(value.to_owned())
                    } else {
                        Err(fail("bin label does not match the rule's bins"))
                    };
                }
                let v: f64 = value.parse().map_err(|_| fail("not a number"))?;
                if !v.is_finite() {
                    return Err(fail("not a finite number"));
                }
                let low = anchor + width * ((v - anchor) / width).floor();
                Ok(format!("[{},{})", format_number(low), format_number(low + width)))
            }
        }
    }
}

fn parse_bin_label(value: &str) -> Option<(f64, f64)> {
    let inner = value.strip_prefix('[')?.strip_suffix(')')?;
    let (lo, hi) = inner.split_once(',')?;
    Some((lo.trim().parse().ok()?, hi.trim().parse().ok()?))
}

fn format_number(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<GeneralizationRule>,
    #[serde(default)]
    pub scope: Scope,
}

/// Column name -> role and rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, ColumnSpec>", into = "BTreeMap<String, ColumnSpec>")]
pub struct RecordSchema {
    columns: BTreeMap<String, ColumnSpec>,
}

impl TryFrom<BTreeMap<String, ColumnSpec>> for RecordSchema {
    type Error = Error;

    fn try_from(columns: BTreeMap<String, ColumnSpec>) -> Result<Self> {
        RecordSchema::new(columns)
    }
}

impl From<RecordSchema> for BTreeMap<String, ColumnSpec> {
    fn from(schema: RecordSchema) -> Self {
        schema.columns
    }
}

impl RecordSchema {
    /// Requires exactly one patient key, at least one quasi-identifier, and a
    /// rule on every quasi-identifier.
    pub fn new(columns: BTreeMap<String, ColumnSpec>) -> Result<Self> {
        let keys = columns.values().filter(|c| c.role == Role::PatientKey).count();
        if keys != 1 {
            return Err(Error::Schema(format!("expected exactly one patient_key column, found {keys}")));
        }
        if !columns.values().any(|c| c.role == Role::QuasiIdentifier) {
            return Err(Error::Schema("at least one quasi_identifier column is required".into()));
        }
        for (name, spec) in &columns {
            match (&spec.role, &spec.rule) {
                (Role::QuasiIdentifier, None) => {
                    return Err(Error::Schema(format!("quasi-identifier `{name}` has no rule")));
                }
                (Role::QuasiIdentifier, Some(rule)) => rule.validate(name)?,
                (_, Some(_)) => {
                    return Err(Error::Schema(format!("column `{name}` has a rule but is not a quasi-identifier")));
                }
                _ => {}
            }
        }
        Ok(Self { columns })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn column(&self, name: &str) -> Option<&ColumnSpec> {
        self.columns.get(name)
    }

    pub fn columns(&self) -> impl Iterator<Item = (&str, &ColumnSpec)> {
        self.columns.iter().map(|(n, c)| (n.as_str(), c))
    }
}
