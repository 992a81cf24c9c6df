//! Rare-level collapse for the multinomial estimator: the highest remaining
//! exposure level is merged downward until every level holds at least the
//! threshold share of rows.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Order-preserving map from observed exposure values to bin labels 1..=K.
#[derive(Debug, Clone)]
pub struct CollapseMap {
    map: BTreeMap<u32, usize>,
    pub n_bins: usize,
}

impl CollapseMap {
    pub fn bin_of(&self, a: u32) -> Option<usize> {
        self.map.get(&a).copied()
    }

    pub fn assignments(&self) -> &BTreeMap<u32, usize> {
        &self.map
    }
}

/// Collapse levels of `a` with prevalence below `threshold`, merging from
/// the top of the distribution downward. Returns per-row bin labels (1..=K)
/// and the mapping. Errors if fewer than two bins survive.
pub fn collapse_rare_levels(a: &[u32], threshold: f64) -> Result<(Vec<usize>, CollapseMap)> {
    if a.is_empty() {
        return Err(Error::InvalidParameter("collapse of empty exposure".into()));
    }
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::InvalidParameter(format!(
            "collapse threshold {threshold} outside [0,1)"
        )));
    }
    let n = a.len() as f64;
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for &v in a {
        *counts.entry(v).or_insert(0) += 1;
    }
    // groups of consecutive levels, merged from the top until every group's
    // prevalence clears the threshold
    let mut groups: Vec<(Vec<u32>, usize)> = counts
        .iter()
        .map(|(&level, &cnt)| (vec![level], cnt))
        .collect();
    loop {
        let all_ok = groups
            .iter()
            .all(|(_, cnt)| *cnt as f64 / n >= threshold);
        if all_ok {
            break;
        }
        if groups.len() < 2 {
            return Err(Error::InvalidParameter(
                "exposure collapses to fewer than 2 levels".into(),
            ));
        }
        let (top_levels, top_count) = groups.pop().unwrap();
        let last = groups.last_mut().unwrap();
        last.0.extend(top_levels);
        last.1 += top_count;
    }
    if groups.len() < 2 {
        return Err(Error::InvalidParameter(
            "exposure collapses to fewer than 2 levels".into(),
        ));
    }
    let mut map = BTreeMap::new();
    for (bin_idx, (levels, _)) in groups.iter().enumerate() {
        for &level in levels {
            map.insert(level, bin_idx + 1);
        }
    }
    let collapse = CollapseMap {
        n_bins: groups.len(),
        map,
    };
    let labels = a.iter().map(|v| collapse.bin_of(*v).unwrap()).collect();
    Ok((labels, collapse))
}
