//! Cow identities and the closed set of behaviour labels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Identity of an animal. Doubles as the detection category id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CowId(pub u32);

impl CowId {
    pub fn get(self) -> u32 {
        self.0
    }
}

impl fmt::Display for CowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for CowId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.parse::<u32>() {
            Ok(0) => Err("cow id must be positive".to_string()),
            Ok(v) => Ok(CowId(v)),
            Err(e) => Err(format!("invalid cow id {s:?}: {e}")),
        }
    }
}

/// A behaviour label, e.g. `Drinking`.
///
/// Labels are plain names; membership in a [`LabelSet`] is checked where
/// labels enter the system (parsing, config, score records).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionLabel(String);

impl ActionLabel {
    pub fn new(name: impl Into<String>) -> Self {
        ActionLabel(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ActionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub const DRINKING: &str = "Drinking";
pub const GRAZING: &str = "Grazing";
pub const OTHER: &str = "Other";

/// Ordered closed set of behaviour labels.
///
/// The order fixes confusion-matrix rows/columns and argmax tie-breaking.
/// `fallback` is the label unknown names collapse to in lenient parsing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    labels: Vec<ActionLabel>,
    fallback: Option<usize>,
}

impl Default for LabelSet {
    fn default() -> Self {
        LabelSet::new([DRINKING, GRAZING, OTHER], Some(OTHER)).expect("default label set")
    }
}

impl LabelSet {
    pub fn new<I, S>(names: I, fallback: Option<&str>) -> Result<Self, String>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: Vec<ActionLabel> = names.into_iter().map(|n| ActionLabel(n.into())).collect();
        if labels.is_empty() {
            return Err("label set is empty".to_string());
        }
        for (i, l) in labels.iter().enumerate() {
            if l.0.is_empty() || l.0.chars().any(char::is_whitespace) {
                return Err(format!("label {:?} must be a single non-empty word", l.0));
            }
            if labels[..i].contains(l) {
                return Err(format!("duplicate label {:?}", l.0));
            }
        }
        let fallback = match fallback {
            Some(name) => Some(
                labels
                    .iter()
                    .position(|l| l.0 == name)
                    .ok_or_else(|| format!("fallback label {name:?} is not in the label set"))?,
            ),
            None => None,
        };
        Ok(LabelSet { labels, fallback })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[ActionLabel] {
        &self.labels
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.labels.iter().position(|l| l.0 == name)
    }

    pub fn get(&self, name: &str) -> Option<&ActionLabel> {
        self.labels.iter().find(|l| l.0 == name)
    }

    pub fn fallback(&self) -> Option<&ActionLabel> {
        self.fallback.map(|i| &self.labels[i])
    }

    pub fn contains(&self, label: &ActionLabel) -> bool {
        self.labels.contains(label)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_set_has_three_labels_in_order() {
        let set = LabelSet::default();
        let names: Vec<_> = set.labels().iter().map(|l| l.as_str()).collect();
        assert_eq!(names, vec!["Drinking", "Grazing", "Other"]);
        assert_eq!(set.fallback().unwrap().as_str(), "Other");
    }

    #[test]
    fn rejects_duplicates_and_bad_fallback() {
        assert!(LabelSet::new(["A", "A"], None).is_err());
        assert!(LabelSet::new(["A", "B"], Some("C")).is_err());
        assert!(LabelSet::new(["two words"], None).is_err());
        assert!(LabelSet::new(Vec::<String>::new(), None).is_err());
    }

    #[test]
    fn cow_id_parse() {
        assert_eq!("7".parse::<CowId>().unwrap(), CowId(7));
        assert!("0".parse::<CowId>().is_err());
        assert!("x".parse::<CowId>().is_err());
    }
}
