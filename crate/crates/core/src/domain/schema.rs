use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Device a feature is collected from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Ring,
    Watch,
    Phone,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Ring, Modality::Watch, Modality::Phone];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Ring => "ring",
            Modality::Watch => "watch",
            Modality::Phone => "phone",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ring" => Ok(Modality::Ring),
            "watch" => Ok(Modality::Watch),
            "phone" => Ok(Modality::Phone),
            other => Err(Error::InvalidInput(format!("unknown modality `{other}`"))),
        }
    }
}

/// Parses a comma-separated modality list; `all` expands to every modality.
pub fn parse_modalities(s: &str) -> Result<Vec<Modality>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if part.eq_ignore_ascii_case("all") {
            out.extend(Modality::ALL);
        } else {
            out.push(part.parse()?);
        }
    }
    out.sort();
    out.dedup();
    if out.is_empty() {
        return Err(Error::InvalidInput("empty modality list".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Continuous,
    /// Intraday on/off indicator; aggregates to the fraction of the day it was on.
    Boolean,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureDef {
    pub id: String,
    pub modality: Modality,
    pub kind: FeatureKind,
    pub units: String,
}

/// Registry of the daily features a pipeline run knows about.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSchema")]
pub struct FeatureSchema {
    entries: Vec<FeatureDef>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchema {
    entries: Vec<FeatureDef>,
}

impl TryFrom<RawSchema> for FeatureSchema {
    type Error = Error;

    fn try_from(raw: RawSchema) -> Result<Self> {
        FeatureSchema::new(raw.entries)
    }
}

impl FeatureSchema {
    pub fn new(entries: Vec<FeatureDef>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Schema("schema has no entries".into()));
        }
        let mut seen = HashSet::new();
        for e in &entries {
            if e.id.trim().is_empty() {
                return Err(Error::Schema("empty feature id".into()));
            }
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Schema(format!("duplicate feature id `{}`", e.id)));
            }
        }
        Ok(FeatureSchema { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn entries(&self) -> &[FeatureDef] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&FeatureDef> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.get(id).is_some()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }

    /// Features of the given modalities, in schema order.
    pub fn features_for(&self, modalities: &[Modality]) -> Vec<&FeatureDef> {
        self.entries
            .iter()
            .filter(|e| modalities.contains(&e.modality))
            .collect()
    }

    /// Built-in feature set: 29 ring, 7 watch and 3 phone features. Longer
    /// feature lists can be loaded from JSON instead.
    pub fn default_schema() -> Self {
        use FeatureKind::{Boolean, Continuous};
        use Modality::{Phone, Ring, Watch};
        const DEFAULT: &[(&str, Modality, FeatureKind, &str)] = &[
            // ring: sleep
            ("sleep_awake", Ring, Continuous, "min"),
            ("sleep_rem", Ring, Continuous, "min"),
            ("sleep_light", Ring, Continuous, "min"),
            ("sleep_deep", Ring, Continuous, "min"),
            ("sleep_total", Ring, Continuous, "min"),
            // ring: activity
            ("stay_active", Ring, Continuous, "score"),
            ("move_every_hour", Ring, Continuous, "score"),
            ("training_volume", Ring, Continuous, "score"),
            ("daily_movement", Ring, Continuous, "m"),
            ("meet_daily_activity_target", Ring, Continuous, "score"),
            ("training_frequency", Ring, Continuous, "score"),
            ("recovery_time", Ring, Continuous, "score"),
            ("inactivity_alerts", Ring, Continuous, "count"),
            // ring: metabolic
            ("avg_met", Ring, Continuous, "MET"),
            ("minutes_low_activity", Ring, Continuous, "min"),
            ("minutes_med_activity", Ring, Continuous, "min"),
            ("minutes_high_activity", Ring, Continuous, "min"),
            ("met_inactive", Ring, Continuous, "MET-min"),
            ("met_low", Ring, Continuous, "MET-min"),
            ("met_medium", Ring, Continuous, "MET-min"),
            ("met_high", Ring, Continuous, "MET-min"),
            // ring: calorie
            ("calorie_active", Ring, Continuous, "kcal"),
            ("calorie_total", Ring, Continuous, "kcal"),
            ("target_calories", Ring, Continuous, "kcal"),
            ("target_miles", Ring, Continuous, "mi"),
            // ring: heart
            ("heart_rate", Ring, Continuous, "bpm"),
            ("heart_rate_std", Ring, Continuous, "bpm"),
            ("heart_rate_variability", Ring, Continuous, "ms"),
            ("heart_rate_variability_std", Ring, Continuous, "ms"),
            // watch: distance
            ("distance", Watch, Continuous, "m"),
            ("runsteps", Watch, Continuous, "steps"),
            ("remains", Watch, Continuous, "steps"),
            ("walk_steps", Watch, Continuous, "steps"),
            // watch: environment
            ("pressure", Watch, Continuous, "hPa"),
            ("pressure_min", Watch, Continuous, "hPa"),
            ("pressure_max", Watch, Continuous, "hPa"),
            // phone: detected activity
            ("main_activity", Phone, Boolean, "fraction"),
            ("key_activity", Phone, Boolean, "fraction"),
            ("location_change", Phone, Boolean, "fraction"),
        ];
        let entries = DEFAULT
            .iter()
            .map(|&(id, modality, kind, units)| FeatureDef {
                id: id.to_string(),
                modality,
                kind,
                units: units.to_string(),
            })
            .collect();
        FeatureSchema::new(entries).expect("default schema is valid")
    }
}

impl Default for FeatureSchema {
    fn default() -> Self {
        Self::default_schema()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schema_counts() {
        let s = FeatureSchema::default_schema();
        assert_eq!(s.len(), 39);
        assert_eq!(s.features_for(&[Modality::Ring]).len(), 29);
        assert_eq!(s.features_for(&[Modality::Watch]).len(), 7);
        assert_eq!(s.features_for(&[Modality::Phone]).len(), 3);
        assert!(s
            .features_for(&[Modality::Phone])
            .iter()
            .all(|f| f.kind == FeatureKind::Boolean));
    }

    #[test]
    fn json_round_trip() {
        let s = FeatureSchema::default_schema();
        assert_eq!(FeatureSchema::from_json(&s.to_json()).unwrap(), s);
    }

    #[test]
    fn rejects_duplicates() {
        let json = r#"{"entries":[
            {"id":"a","modality":"ring","kind":"continuous","units":"x"},
            {"id":"a","modality":"watch","kind":"continuous","units":"x"}]}"#;
        assert!(matches!(FeatureSchema::from_json(json), Err(Error::Schema(_))));
    }

    #[test]
    fn modality_lists() {
        assert_eq!(parse_modalities("all").unwrap(), Modality::ALL.to_vec());
        assert_eq!(
            parse_modalities("phone, ring").unwrap(),
            vec![Modality::Ring, Modality::Phone]
        );
        assert!(parse_modalities("ring,toaster").is_err());
    }
}
