use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{DataError, SampleRecord};
use crate::signnet::ATTRIBUTE_COUNT;
use crate::tensorad::Rng;

/// Size of the hold-out subject set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Holdout {
    /// Rounded share of all subjects.
    Fraction(f64),
    Count(usize),
}

/// Subject-disjoint folds plus a hold-out set with one image per subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub seed: u64,
    pub folds: Vec<Vec<String>>,
    pub holdout: Vec<String>,
    /// Image chosen for each hold-out subject, parallel to `holdout`.
    pub holdout_images: Vec<String>,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// Index of the fold holding `subject`, `None` for hold-out or unknown.
    pub fn fold_of(&self, subject: &str) -> Option<usize> {
        self.folds.iter().position(|f| f.iter().any(|s| s == subject))
    }

    /// Training and validation records for cross-validation round `fold`.
    pub fn round<'a>(&self, records: &'a [SampleRecord], fold: usize) -> (Vec<&'a SampleRecord>, Vec<&'a SampleRecord>) {
        let val: HashSet<&str> = self.folds[fold].iter().map(String::as_str).collect();
        let train: HashSet<&str> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != fold)
            .flat_map(|(_, f)| f.iter().map(String::as_str))
            .collect();
        let pick = |set: &HashSet<&str>| {
            records
                .iter()
                .filter(|r| set.contains(r.subject_id.as_str()))
                .collect::<Vec<_>>()
        };
        (pick(&train), pick(&val))
    }

    /// The one record kept per hold-out subject.
    pub fn holdout_records<'a>(&self, records: &'a [SampleRecord]) -> Vec<&'a SampleRecord> {
        let keep: HashSet<&str> = self.holdout_images.iter().map(String::as_str).collect();
        records.iter().filter(|r| keep.contains(r.image_path.as_str())).collect()
    }
}

/// Chooses the hold-out subjects (and one image for each) by seeded draw,
/// then shuffles the remaining subjects and deals them round-robin into `k`
/// folds.
pub fn split_folds(records: &[SampleRecord], k: usize, holdout: Holdout, seed: u64) -> Result<FoldPlan, DataError> {
    if k < 2 {
        return Err(DataError::Config(format!("k must be at least 2, got {k}")));
    }
    let mut images: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in records {
        images.entry(&r.subject_id).or_default().push(&r.image_path);
    }
    let n = images.len();
    let h = match holdout {
        Holdout::Count(c) => c,
        Holdout::Fraction(f) if (0.0..1.0).contains(&f) => (n as f64 * f).round() as usize,
        Holdout::Fraction(f) => return Err(DataError::Config(format!("hold-out fraction {f} outside [0, 1)"))),
    };
    if h > n || n - h < k {
        return Err(DataError::TooFewSubjects {
            subjects: n,
            needed: format!("{h} hold-out subjects and {k} non-empty folds"),
        });
    }
    let root = Rng::new(seed);
    let mut subjects: Vec<&str> = images.keys().copied().collect();
    root.derive(0).shuffle(&mut subjects);
    let (held, rest) = subjects.split_at(h);

    let mut held: Vec<&str> = held.to_vec();
    held.sort_unstable();
    let mut pick = root.derive(1);
    let holdout_images = held
        .iter()
        .map(|s| {
            let imgs = &images[s];
            imgs[pick.below(imgs.len())].to_string()
        })
        .collect();

    let mut rest = rest.to_vec();
    root.derive(2).shuffle(&mut rest);
    let mut folds = vec![Vec::new(); k];
    for (i, s) in rest.iter().enumerate() {
        folds[i % k].push(s.to_string());
    }
    Ok(FoldPlan {
        seed,
        folds,
        holdout: held.iter().map(|s| s.to_string()).collect(),
        holdout_images,
    })
}

/// Positive attribute counts per fold and in the hold-out set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldCounts {
    pub subjects: Vec<usize>,
    pub images: Vec<usize>,
    pub positives: Vec<[u64; ATTRIBUTE_COUNT]>,
    pub holdout_images: usize,
    pub holdout_positives: [u64; ATTRIBUTE_COUNT],
}

pub fn fold_attribute_counts(records: &[SampleRecord], plan: &FoldPlan) -> FoldCounts {
    let fold_of: HashMap<&str, usize> = plan
        .folds
        .iter()
        .enumerate()
        .flat_map(|(i, f)| f.iter().map(move |s| (s.as_str(), i)))
        .collect();
    let kept: HashSet<&str> = plan.holdout_images.iter().map(String::as_str).collect();
    let mut c = FoldCounts {
        subjects: plan.folds.iter().map(Vec::len).collect(),
        images: vec![0; plan.k()],
        positives: vec![[0; ATTRIBUTE_COUNT]; plan.k()],
        holdout_images: 0,
        holdout_positives: [0; ATTRIBUTE_COUNT],
    };
    let add = |acc: &mut [u64; ATTRIBUTE_COUNT], r: &SampleRecord| {
        for (a, &b) in acc.iter_mut().zip(r.attrs.bits()) {
            *a += b as u64;
        }
    };
    for r in records {
        if let Some(&i) = fold_of.get(r.subject_id.as_str()) {
            c.images[i] += 1;
            add(&mut c.positives[i], r);
        } else if kept.contains(r.image_path.as_str()) {
            c.holdout_images += 1;
            add(&mut c.holdout_positives, r);
        }
    }
    c
}
