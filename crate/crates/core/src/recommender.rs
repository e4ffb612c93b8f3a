//! Method recommendation by intersecting modality and architecture sets.
//!
//! The mapping table is plain data. A method is recommended when it supports
//! every declared modality, shares at least one layer family with the model,
//! and is implemented.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::detector::{ArchTag, ArchitectureProfile};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "V", alias = "vision")]
    Vision,
    #[serde(rename = "L", alias = "language")]
    Language,
    #[serde(rename = "SD", alias = "structured")]
    Structured,
    #[serde(rename = "TS", alias = "time_series")]
    TimeSeries,
}

impl Modality {
    pub const ALL: [Modality; 4] = [Modality::Vision, Modality::Language, Modality::Structured, Modality::TimeSeries];

    pub fn code(self) -> &'static str {
        match self {
            Modality::Vision => "V",
            Modality::Language => "L",
            Modality::Structured => "SD",
            Modality::TimeSeries => "TS",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Vision => "vision",
            Modality::Language => "language",
            Modality::Structured => "structured",
            Modality::TimeSeries => "time_series",
        })
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vision" | "V" => Ok(Modality::Vision),
            "language" | "L" => Ok(Modality::Language),
            "structured" | "SD" => Ok(Modality::Structured),
            "time_series" | "TS" => Ok(Modality::TimeSeries),
            _ => Err(Error::InvalidArgument(format!(
                "unknown modality {s:?} (expected vision, language, structured or time_series)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MappingEntry {
    pub method_id: String,
    pub supported_modalities: BTreeSet<Modality>,
    pub supported_architectures: BTreeSet<ArchTag>,
    pub implemented: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    ModalityMiss,
    ArchitectureMiss,
    NotImplemented,
}

impl fmt::Display for ExclusionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExclusionReason::ModalityMiss => "modality_miss",
            ExclusionReason::ArchitectureMiss => "architecture_miss",
            ExclusionReason::NotImplemented => "not_implemented",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub method_id: String,
    pub reasons: Vec<ExclusionReason>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recommendation {
    pub recommended: Vec<String>,
    pub rejected: Vec<Rejection>,
}

const DEFAULT_TABLE: &str = include_str!("../data/mapping_table.json");

/// The shipped mapping table.
pub fn default_table() -> Vec<MappingEntry> {
    parse_table(DEFAULT_TABLE).expect("shipped mapping table is valid")
}

pub fn parse_table(text: &str) -> Result<Vec<MappingEntry>> {
    let table: Vec<MappingEntry> =
        serde_json::from_str(text).map_err(|e| Error::parse("<mapping table>", e.to_string()))?;
    validate_table(&table)?;
    Ok(table)
}

pub fn load_table(path: &Path) -> Result<Vec<MappingEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_table(&text).map_err(|e| match e {
        Error::Parse { message, .. } => Error::parse(path, message),
        other => other,
    })
}

fn validate_table(table: &[MappingEntry]) -> Result<()> {
    let mut seen = HashSet::new();
    for entry in table {
        if !seen.insert(entry.method_id.as_str()) {
            return Err(Error::InvalidArgument(format!("duplicate method {:?} in mapping table", entry.method_id)));
        }
        if entry.supported_modalities.is_empty() || entry.supported_architectures.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "mapping entry {:?} needs at least one modality and one architecture",
                entry.method_id
            )));
        }
    }
    Ok(())
}

pub fn recommend(
    profile: &ArchitectureProfile,
    modalities: &BTreeSet<Modality>,
    table: &[MappingEntry],
) -> Result<Recommendation> {
    if modalities.is_empty() {
        return Err(Error::InvalidArgument("at least one modality must be declared".into()));
    }
    let mut recommended = Vec::new();
    let mut rejected = Vec::new();
    for entry in table {
        let mut reasons = Vec::new();
        if !modalities.is_subset(&entry.supported_modalities) {
            reasons.push(ExclusionReason::ModalityMiss);
        }
        if profile.tags.is_disjoint(&entry.supported_architectures) {
            reasons.push(ExclusionReason::ArchitectureMiss);
        }
        if !entry.implemented {
            reasons.push(ExclusionReason::NotImplemented);
        }
        if reasons.is_empty() {
            recommended.push(entry.method_id.clone());
        } else {
            rejected.push(Rejection { method_id: entry.method_id.clone(), reasons });
        }
    }
    Ok(Recommendation { recommended, rejected })
}
