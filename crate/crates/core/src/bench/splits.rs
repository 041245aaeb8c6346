//! Patient-wise train/val/test assignment.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::dataset_store::{LabelTable, Subset, TaskConfig};
use crate::rng::{derive_seed, SplitMix64};

const SPLIT_STREAM: u64 = 0x5B117_0001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: u32,
    pub val: u32,
    pub test: u32,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 7, val: 1, test: 2 }
    }
}

impl SplitRatios {
    fn weights(&self) -> [u64; 3] {
        [self.train as u64, self.val as u64, self.test as u64]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub slides: BTreeMap<String, Subset>,
    pub seed: u64,
    pub ratios: SplitRatios,
}

impl SplitAssignment {
    pub fn slides_in(&self, subset: Subset) -> Vec<&str> {
        self.slides.iter().filter(|(_, &s)| s == subset).map(|(id, _)| id.as_str()).collect()
    }
}

/// Patient counts per subset for `p` patients: largest-remainder
/// apportionment of `p` by the ratios (remainder ties favour train, then
/// val), then val and test are raised to at least one patient by taking from
/// the largest subset.
pub fn subset_sizes(p: usize, ratios: SplitRatios) -> [usize; 3] {
    let w = ratios.weights();
    let total: u64 = w.iter().sum();
    let p64 = p as u64;
    let mut sizes = [0usize; 3];
    let mut rems = [(0u64, 0usize); 3];
    for i in 0..3 {
        sizes[i] = (p64 * w[i] / total) as usize;
        rems[i] = (p64 * w[i] % total, i);
    }
    let assigned: usize = sizes.iter().sum();
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in rems.iter().take(p - assigned) {
        sizes[i] += 1;
    }
    for need in [1, 2] {
        if sizes[need] == 0 {
            let donor = (0..3).filter(|&i| i != need).max_by_key(|&i| (sizes[i], std::cmp::Reverse(i))).unwrap();
            sizes[donor] -= 1;
            sizes[need] += 1;
        }
    }
    sizes
}

/// Options beyond the default unstratified split.
#[derive(Debug, Clone, Default)]
pub struct SplitOptions {
    pub ratios: SplitRatios,
    /// Apportion each label group of this classification task separately.
    pub stratify_by: Option<TaskConfig>,
}

/// Shuffles the sorted patient list with a seeded generator and cuts it by
/// [`subset_sizes`]; each slide follows its patient.
pub fn make_splits(labels: &LabelTable, seed: u64, opts: &SplitOptions) -> Result<SplitAssignment, BenchError> {
    let mut by_patient: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in &labels.rows {
        by_patient.entry(r.patient_id.as_str()).or_default().push(r.slide_id.as_str());
    }
    if by_patient.len() < 3 {
        return Err(BenchError::TooFewPatients(by_patient.len()));
    }

    let groups: BTreeMap<String, Vec<&str>> = match &opts.stratify_by {
        None => [(String::new(), by_patient.keys().copied().collect())].into_iter().collect(),
        Some(task) => {
            let lab = labels.labels_for(task)?;
            let mut g: BTreeMap<String, Vec<&str>> = BTreeMap::new();
            for (patient, slides) in &by_patient {
                let key = slides
                    .iter()
                    .filter_map(|s| lab.get(*s))
                    .map(|l| format!("{l:?}"))
                    .min()
                    .unwrap_or_default();
                g.entry(key).or_default().push(patient);
            }
            g
        }
    };

    let mut rng = SplitMix64::new(derive_seed(seed, SPLIT_STREAM));
    let mut slides = BTreeMap::new();
    for patients in groups.values() {
        let mut order = patients.clone();
        rng.shuffle(&mut order);
        let sizes = if groups.len() == 1 {
            subset_sizes(order.len(), opts.ratios)
        } else {
            group_sizes(order.len(), opts.ratios)
        };
        let mut it = order.into_iter();
        for (subset, &n) in Subset::ALL.iter().zip(&sizes) {
            for patient in it.by_ref().take(n) {
                for s in &by_patient[patient] {
                    slides.insert(s.to_string(), *subset);
                }
            }
        }
    }
    Ok(SplitAssignment { slides, seed, ratios: opts.ratios })
}

/// Stratum sizes without the at-least-one rule, which only applies overall.
fn group_sizes(p: usize, ratios: SplitRatios) -> [usize; 3] {
    if p >= 3 {
        return subset_sizes(p, ratios);
    }
    let mut sizes = [0; 3];
    sizes[0] = p;
    sizes
}

/// Patients per subset.
pub fn patient_counts(labels: &LabelTable, split: &SplitAssignment) -> [usize; 3] {
    let mut sets: [BTreeSet<&str>; 3] = Default::default();
    for r in &labels.rows {
        if let Some(s) = split.slides.get(&r.slide_id) {
            sets[*s as usize].insert(&r.patient_id);
        }
    }
    [sets[0].len(), sets[1].len(), sets[2].len()]
}
