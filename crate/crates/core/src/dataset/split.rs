//! Deterministic train/val/test assignment.
//!
//! Split sizes use largest-remainder apportionment: each split gets the floor
//! of its quota `ratio * n`, and leftover items go to the largest fractional
//! remainders, ties resolved train before val before test.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Name of the shuffling PRNG, recorded next to seeds in output files.
pub const PRNG_NAME: &str = "chacha8";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SplitError {
    #[error("nothing to split")]
    Empty,
    #[error("split ratios must be positive and sum to 1, got {0:?}")]
    BadRatios([f64; 3]),
    #[error("item {0:?} appears more than once")]
    Duplicate(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios(pub [f64; 3]);

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios([0.70, 0.05, 0.25])
    }
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self, SplitError> {
        let r = SplitRatios([train, val, test]);
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), SplitError> {
        let ok = self.0.iter().all(|v| v.is_finite() && *v > 0.0) && (self.0.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
        if ok { Ok(()) } else { Err(SplitError::BadRatios(self.0)) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitOrder {
    /// Sort, then shuffle with the seeded PRNG.
    #[default]
    Random,
    /// Keep the given order: earliest items train, latest test.
    Chronological,
}

/// Largest-remainder split sizes for `n` items.
pub fn split_sizes(n: usize, ratios: &SplitRatios) -> Result<[usize; 3], SplitError> {
    ratios.validate()?;
    let quotas = ratios.0.map(|r| r * n as f64);
    // quotas within 1e-9 of an integer count as that integer, so e.g.
    // 20 * 0.7 = 13.999999999999998 floors to 14
    let mut sizes = quotas.map(|q| (q + 1e-9).floor() as usize);
    let remainders: Vec<f64> = quotas.iter().zip(&sizes).map(|(q, s)| (q - *s as f64).max(0.0)).collect();
    let mut leftover = n.saturating_sub(sizes.iter().sum());
    let mut order = [0usize, 1, 2];
    // stable sort keeps train < val < test among equal remainders
    order.sort_by(|&a, &b| remainders[b].partial_cmp(&remainders[a]).expect("finite remainders"));
    for &i in order.iter().cycle() {
        if leftover == 0 {
            break;
        }
        sizes[i] += 1;
        leftover -= 1;
    }
    Ok(sizes)
}

/// Assignment of every item to exactly one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub ratios: SplitRatios,
    pub order: SplitOrder,
    pub assignments: BTreeMap<String, Split>,
}

impl SplitAssignment {
    pub fn get(&self, item: &str) -> Option<Split> {
        self.assignments.get(item).copied()
    }

    pub fn sizes(&self) -> [usize; 3] {
        let mut sizes = [0; 3];
        for s in self.assignments.values() {
            sizes[*s as usize] += 1;
        }
        sizes
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    /// CSV `item_id,split`, sorted by item id.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("item_id,split\n");
        for (item, split) in &self.assignments {
            out.push_str(&csv_field(item));
            out.push(',');
            out.push_str(split.as_str());
            out.push('\n');
        }
        out
    }

    /// Read a CSV written by [`SplitAssignment::to_csv`].
    pub fn from_csv(text: &str) -> Result<BTreeMap<String, Split>, String> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let mut map = BTreeMap::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| e.to_string())?;
            if rec.len() != 2 {
                return Err(format!("expected item_id,split, got {} fields", rec.len()));
            }
            let split: Split = rec[1].trim().parse()?;
            if map.insert(rec[0].to_string(), split).is_some() {
                return Err(format!("item {:?} listed twice", &rec[0]));
            }
        }
        Ok(map)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Order units for assignment. Random order does not depend on input order.
fn arrange(mut units: Vec<String>, seed: u64, order: SplitOrder) -> Vec<String> {
    if order == SplitOrder::Random {
        units.sort();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        units.shuffle(&mut rng);
    }
    units
}

fn assign<'a>(units: &'a [String], ratios: &SplitRatios) -> Result<BTreeMap<&'a str, Split>, SplitError> {
    let [train, val, _] = split_sizes(units.len(), ratios)?;
    Ok(units
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let s = if i < train {
                Split::Train
            } else if i < train + val {
                Split::Val
            } else {
                Split::Test
            };
            (u.as_str(), s)
        })
        .collect())
}

/// Split individual items.
pub fn split<S: AsRef<str>>(
    items: &[S],
    ratios: SplitRatios,
    seed: u64,
    order: SplitOrder,
) -> Result<SplitAssignment, SplitError> {
    ratios.validate()?;
    if items.is_empty() {
        return Err(SplitError::Empty);
    }
    let mut seen = BTreeSet::new();
    for item in items {
        if !seen.insert(item.as_ref()) {
            return Err(SplitError::Duplicate(item.as_ref().to_string()));
        }
    }
    let units = arrange(items.iter().map(|s| s.as_ref().to_string()).collect(), seed, order);
    let assignments = assign(&units, &ratios)?.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    Ok(SplitAssignment { seed, ratios, order, assignments })
}

/// Split whole groups (e.g. all clips cut from one cue) so near-duplicate
/// items never straddle splits. Sizes apply to groups, not items.
pub fn split_grouped<S: AsRef<str>, G: AsRef<str>>(
    items: &[(S, G)],
    ratios: SplitRatios,
    seed: u64,
    order: SplitOrder,
) -> Result<SplitAssignment, SplitError> {
    ratios.validate()?;
    if items.is_empty() {
        return Err(SplitError::Empty);
    }
    let mut seen = BTreeSet::new();
    let mut groups: Vec<String> = Vec::new();
    let mut group_set = BTreeSet::new();
    for (item, group) in items {
        if !seen.insert(item.as_ref()) {
            return Err(SplitError::Duplicate(item.as_ref().to_string()));
        }
        if group_set.insert(group.as_ref()) {
            groups.push(group.as_ref().to_string());
        }
    }
    let units = arrange(groups, seed, order);
    let by_group = assign(&units, &ratios)?;
    let assignments = items
        .iter()
        .map(|(item, group)| (item.as_ref().to_string(), by_group[group.as_ref()]))
        .collect();
    Ok(SplitAssignment { seed, ratios, order, assignments })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("clip{i:05}")).collect()
    }

    #[test]
    fn largest_remainder_sizes() {
        let r = SplitRatios::default();
        assert_eq!(split_sizes(1715, &r).unwrap(), [1200, 86, 429]);
        assert_eq!(split_sizes(20, &r).unwrap(), [14, 1, 5]);
        assert_eq!(split_sizes(1, &r).unwrap(), [1, 0, 0]);
        assert_eq!(split_sizes(2, &r).unwrap(), [1, 0, 1]);
        assert_eq!(split_sizes(0, &r).unwrap(), [0, 0, 0]);
        // equal thirds: one leftover goes to train
        let thirds = SplitRatios::new(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0).unwrap();
        assert_eq!(split_sizes(4, &thirds).unwrap(), [2, 1, 1]);
        assert_eq!(split_sizes(5, &thirds).unwrap(), [2, 2, 1]);
    }

    #[test]
    fn ratio_validation() {
        assert!(SplitRatios::new(0.7, 0.05, 0.2).is_err());
        assert!(SplitRatios::new(1.0, 0.0, 0.0).is_err());
        assert!(SplitRatios::new(0.5, 0.25, 0.25).is_ok());
    }

    #[test]
    fn deterministic_and_order_invariant() {
        let items = ids(100);
        let a = split(&items, SplitRatios::default(), 7, SplitOrder::Random).unwrap();
        let mut reversed = items.clone();
        reversed.reverse();
        let b = split(&reversed, SplitRatios::default(), 7, SplitOrder::Random).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.sizes(), [70, 5, 25]);
        let c = split(&items, SplitRatios::default(), 8, SplitOrder::Random).unwrap();
        assert_ne!(a.assignments, c.assignments);
    }

    #[test]
    fn chronological_keeps_order() {
        let items = ids(20);
        let a = split(&items, SplitRatios::default(), 0, SplitOrder::Chronological).unwrap();
        assert!(items[..14].iter().all(|i| a.get(i) == Some(Split::Train)));
        assert_eq!(a.get(&items[14]), Some(Split::Val));
        assert!(items[15..].iter().all(|i| a.get(i) == Some(Split::Test)));
    }

    #[test]
    fn errors() {
        assert_eq!(split::<String>(&[], SplitRatios::default(), 1, SplitOrder::Random), Err(SplitError::Empty));
        assert_eq!(
            split(&["a", "b", "a"], SplitRatios::default(), 1, SplitOrder::Random),
            Err(SplitError::Duplicate("a".into()))
        );
    }

    #[test]
    fn grouped_split_keeps_groups_together() {
        let items: Vec<(String, String)> = (0..60).map(|i| (format!("clip{i}"), format!("cue{}", i / 3))).collect();
        let a = split_grouped(&items, SplitRatios::default(), 3, SplitOrder::Random).unwrap();
        for chunk in items.chunks(3) {
            let s = a.get(&chunk[0].0);
            assert!(chunk.iter().all(|(i, _)| a.get(i) == s));
        }
        // 20 groups -> 14 / 1 / 5 groups of 3
        assert_eq!(a.sizes(), [42, 3, 15]);
    }

    #[test]
    fn csv_round_trip() {
        let a = split(&["x,1", "y", "z"], SplitRatios::default(), 2, SplitOrder::Random).unwrap();
        let back = SplitAssignment::from_csv(&a.to_csv()).unwrap();
        assert_eq!(back, a.assignments);
    }
}
