use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// The two binary tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LabelScheme {
    /// Rumour vs non-rumour; class 0 is non-rumour.
    #[serde(rename = "R/NR")]
    RumourNonRumour,
    /// True vs false; class 0 is true.
    #[serde(rename = "T/F")]
    TrueFalse,
}

impl LabelScheme {
    pub fn name(self) -> &'static str {
        match self {
            LabelScheme::RumourNonRumour => "R/NR",
            LabelScheme::TrueFalse => "T/F",
        }
    }

    pub fn labels(self) -> [Label; 2] {
        match self {
            LabelScheme::RumourNonRumour => [Label::NonRumour, Label::Rumour],
            LabelScheme::TrueFalse => [Label::True, Label::False],
        }
    }

    pub fn class_name(self, class: usize) -> &'static str {
        self.labels()[class].as_str()
    }
}

impl fmt::Display for LabelScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LabelScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_uppercase().as_str() {
            "R/NR" | "RNR" => Ok(LabelScheme::RumourNonRumour),
            "T/F" | "TF" => Ok(LabelScheme::TrueFalse),
            _ => Err(Error::Config(format!("unknown label scheme `{s}` (expected R/NR or T/F)"))),
        }
    }
}

/// A binary label. "Unverified" has no variant: it is filtered at ingest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    NonRumour,
    Rumour,
    True,
    False,
}

impl Label {
    pub fn scheme(self) -> LabelScheme {
        match self {
            Label::NonRumour | Label::Rumour => LabelScheme::RumourNonRumour,
            Label::True | Label::False => LabelScheme::TrueFalse,
        }
    }

    pub fn class(self) -> usize {
        match self {
            Label::NonRumour | Label::True => 0,
            Label::Rumour | Label::False => 1,
        }
    }

    pub fn from_class(scheme: LabelScheme, class: usize) -> Label {
        scheme.labels()[class.min(1)]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::NonRumour => "non-rumour",
            Label::Rumour => "rumour",
            Label::True => "true",
            Label::False => "false",
        }
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "non-rumour" => Ok(Label::NonRumour),
            "rumour" => Ok(Label::Rumour),
            "true" => Ok(Label::True),
            "false" => Ok(Label::False),
            other => Err(format!("unknown label `{other}`")),
        }
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One labelled text item in canonical form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub text: String,
    pub label: Label,
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event: Option<String>,
}

/// Label distribution of a loaded dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub scheme: LabelScheme,
    pub total: usize,
    /// Keyed by label name.
    pub counts: BTreeMap<String, usize>,
    #[serde(default)]
    pub dropped_unverified: usize,
    pub provenance: String,
}

impl DatasetManifest {
    pub fn from_records(name: &str, scheme: LabelScheme, records: &[Record], provenance: impl Into<String>) -> Self {
        let mut counts: BTreeMap<String, usize> = scheme.labels().iter().map(|l| (l.as_str().to_string(), 0)).collect();
        for r in records {
            *counts.entry(r.label.as_str().to_string()).or_default() += 1;
        }
        Self {
            name: name.to_string(),
            scheme,
            total: records.len(),
            counts,
            dropped_unverified: 0,
            provenance: provenance.into(),
        }
    }

    pub fn count(&self, label: Label) -> usize {
        self.counts.get(label.as_str()).copied().unwrap_or(0)
    }
}

/// A named collection of records sharing one scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub scheme: LabelScheme,
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn manifest(&self, provenance: impl Into<String>) -> DatasetManifest {
        DatasetManifest::from_records(&self.name, self.scheme, &self.records, provenance)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label.class()).collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Majority-class accuracy.
    pub fn majority_baseline(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        let ones = self.records.iter().filter(|r| r.label.class() == 1).count();
        ones.max(self.records.len() - ones) as f64 / self.records.len() as f64
    }
}
