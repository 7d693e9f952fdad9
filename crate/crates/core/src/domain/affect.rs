use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ITEMS_PER_POLARITY: usize = 10;
pub const RATING_MIN: f64 = 0.0;
pub const RATING_MAX: f64 = 100.0;

/// Which emotion items count toward positive and negative affect.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawPolarity")]
pub struct AffectPolarity {
    positive: Vec<String>,
    negative: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolarity {
    positive: Vec<String>,
    negative: Vec<String>,
}

impl TryFrom<RawPolarity> for AffectPolarity {
    type Error = Error;

    fn try_from(raw: RawPolarity) -> Result<Self> {
        AffectPolarity::new(raw.positive, raw.negative)
    }
}

impl AffectPolarity {
    pub fn new(positive: Vec<String>, negative: Vec<String>) -> Result<Self> {
        for (name, list) in [("positive", &positive), ("negative", &negative)] {
            if list.len() != ITEMS_PER_POLARITY {
                return Err(Error::Polarity(format!(
                    "{name} list has {} items, expected {ITEMS_PER_POLARITY}",
                    list.len()
                )));
            }
        }
        let mut seen = HashSet::new();
        for id in positive.iter().chain(&negative) {
            if !seen.insert(id.as_str()) {
                return Err(Error::Polarity(format!("item `{id}` listed twice")));
            }
        }
        Ok(AffectPolarity { positive, negative })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Polarity(e.to_string()))
    }

    pub fn positive(&self) -> &[String] {
        &self.positive
    }

    pub fn negative(&self) -> &[String] {
        &self.negative
    }

    pub fn contains(&self, item: &str) -> bool {
        self.positive.iter().chain(&self.negative).any(|i| i == item)
    }

    pub fn item_ids(&self) -> impl Iterator<Item = &str> {
        self.positive.iter().chain(&self.negative).map(String::as_str)
    }

    /// PANAS-style placeholder items. "inspired", "enthusiastic", "nervous"
    /// and "upset" are fixed; the rest are stand-ins.
    pub fn default_items() -> Self {
        let pos = [
            "inspired", "enthusiastic", "interested", "excited", "strong", "proud", "alert",
            "determined", "attentive", "active",
        ];
        let neg = [
            "nervous", "upset", "distressed", "guilty", "scared", "hostile", "irritable",
            "ashamed", "jittery", "afraid",
        ];
        AffectPolarity::new(
            pos.iter().map(|s| s.to_string()).collect(),
            neg.iter().map(|s| s.to_string()).collect(),
        )
        .expect("default polarity is valid")
    }
}

impl Default for AffectPolarity {
    fn default() -> Self {
        Self::default_items()
    }
}

/// One day's emotion ratings plus the PA/NA composites.
///
/// `items` always holds every configured item id; an unanswered item is
/// `None`. A composite is `None` unless all ten of its items are present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffectReport {
    pub day: NaiveDate,
    pub items: BTreeMap<String, Option<f64>>,
    pub pa: Option<f64>,
    pub na: Option<f64>,
}

impl AffectReport {
    pub fn new(
        day: NaiveDate,
        ratings: &BTreeMap<String, f64>,
        polarity: &AffectPolarity,
    ) -> Result<Self> {
        for (item, &value) in ratings {
            if !polarity.contains(item) {
                return Err(Error::InvalidInput(format!("unknown affect item `{item}`")));
            }
            if !(RATING_MIN..=RATING_MAX).contains(&value) {
                return Err(Error::RatingOutOfRange {
                    item: item.clone(),
                    date: day.to_string(),
                    value,
                });
            }
        }
        let items = polarity
            .item_ids()
            .map(|id| (id.to_string(), ratings.get(id).copied()))
            .collect();
        let mut report = AffectReport {
            day,
            items,
            pa: None,
            na: None,
        };
        let (pa, na) = report.composites(polarity);
        report.pa = pa;
        report.na = na;
        Ok(report)
    }

    /// All items answered.
    pub fn is_complete(&self) -> bool {
        !self.items.is_empty() && self.items.values().all(Option::is_some)
    }

    pub fn item(&self, id: &str) -> Option<f64> {
        self.items.get(id).copied().flatten()
    }

    /// Recomputes (PA, NA) from the item ratings.
    pub fn composites(&self, polarity: &AffectPolarity) -> (Option<f64>, Option<f64>) {
        let mean_of = |ids: &[String]| -> Option<f64> {
            let mut sum = 0.0;
            for id in ids {
                sum += self.item(id)?;
            }
            Some(sum / ids.len() as f64)
        };
        (mean_of(polarity.positive()), mean_of(polarity.negative()))
    }
}
