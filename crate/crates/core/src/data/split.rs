//! Deterministic train/test partitions.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sample ids of each partition.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl Split {
    /// Indices of `ids` in each partition, preserving `ids` order.
    pub fn indices(&self, ids: &[String]) -> Result<(Vec<usize>, Vec<usize>)> {
        let pick = |names: &[String], which: &str| -> Result<Vec<usize>> {
            let wanted: HashSet<&str> = names.iter().map(String::as_str).collect();
            if let Some(missing) = names.iter().find(|n| !ids.contains(n)) {
                return Err(Error::Config(format!("split {which} id `{missing}` is not in the dataset")));
            }
            Ok(ids.iter().enumerate().filter(|(_, id)| wanted.contains(id.as_str())).map(|(i, _)| i).collect())
        };
        Ok((pick(&self.train, "train")?, pick(&self.test, "test")?))
    }
}

/// Shuffle with `seed` and take `round(train_fraction · n)` ids for
/// training; the rest form the test set. Both keep `ids` order.
pub fn split_fractions(ids: &[String], train_fraction: f64, seed: u64) -> Result<Split> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::Config(format!("train fraction {train_fraction} outside [0, 1]")));
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (train_fraction * ids.len() as f64).round() as usize;
    let mut train_idx = order[..n_train].to_vec();
    let mut test_idx = order[n_train..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok(Split {
        train: train_idx.into_iter().map(|i| ids[i].clone()).collect(),
        test: test_idx.into_iter().map(|i| ids[i].clone()).collect(),
    })
}

/// Read `<root>/split.json` if it exists.
pub fn load_split(root: &Path) -> Result<Option<Split>> {
    let path = root.join("split.json");
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map(Some).map_err(|e| Error::Data {
        path,
        reason: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i:02}")).collect()
    }

    #[test]
    fn fractions_and_seed() {
        let all = ids(10);
        let a = split_fractions(&all, 0.6, 3).unwrap();
        assert_eq!((a.train.len(), a.test.len()), (6, 4));
        assert_eq!(a, split_fractions(&all, 0.6, 3).unwrap());
        let mut joined: Vec<_> = a.train.iter().chain(&a.test).cloned().collect();
        joined.sort();
        assert_eq!(joined, all);
        assert!(split_fractions(&all, 1.5, 0).is_err());
    }

    #[test]
    fn explicit_split_file() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("split.json"), r#"{"train":["s03","s01"],"test":["s02"]}"#).unwrap();
        let s = load_split(dir.path()).unwrap().unwrap();
        let (tr, te) = s.indices(&ids(5)).unwrap();
        assert_eq!(tr, vec![1, 3]);
        assert_eq!(te, vec![2]);
        let bad = Split { train: vec!["zz".into()], test: vec![] };
        assert!(bad.indices(&ids(5)).is_err());
        assert!(load_split(&dir.path().join("none")).unwrap().is_none());
    }
}
