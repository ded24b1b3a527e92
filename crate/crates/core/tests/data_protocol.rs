use std::collections::{BTreeMap, HashSet};

use proptest::prelude::*;
use tongue_core::data::{
    fold_attribute_counts, load_manifest, read_manifest, split_folds, synth_generate, synth_sample, write_manifest, Gender, Holdout,
    SampleRecord, SynthConfig,
};
use tongue_core::orientation::{upright_orient, OrientationParams};
use tongue_core::signnet::AttributeVector;

fn records(subjects: usize, doubles: usize) -> Vec<SampleRecord> {
    let mut out = Vec::new();
    for s in 0..subjects {
        let copies = if s < doubles { 2 } else { 1 };
        for c in 0..copies {
            out.push(SampleRecord {
                image_path: format!("img/{s:05}_{c}.png"),
                mask_path: None,
                subject_id: format!("s{s:05}"),
                attrs: AttributeVector::from_mask((s * 29 + c) as u8),
                age: None,
                gender: None,
            });
        }
    }
    out
}

#[test]
fn synthetic_samples_depend_only_on_seed_and_index() {
    let cfg = SynthConfig {
        count: 4,
        side: 96,
        seed: 12,
        ..SynthConfig::default()
    };
    let all = synth_generate(&cfg).unwrap();
    for (i, s) in all.iter().enumerate() {
        let again = synth_sample(&cfg, i);
        assert_eq!(s.image.as_raw(), again.image.as_raw());
        assert_eq!(s.mask.as_raw(), again.mask.as_raw());
        assert_eq!(s.labels, again.labels);
    }
    let other = synth_sample(&SynthConfig { seed: 13, ..cfg.clone() }, 0);
    assert_ne!(other.image.as_raw(), all[0].image.as_raw());
}

#[test]
fn zero_probabilities_give_unlabelled_tongues() {
    let cfg = SynthConfig {
        count: 8,
        side: 96,
        probabilities: [0.0; 8],
        ..SynthConfig::default()
    };
    for s in synth_generate(&cfg).unwrap() {
        assert_eq!(s.labels.count(), 0);
        assert!(s.crack.is_empty());
        assert!(!s.mask.is_empty());
    }
}

#[test]
fn upright_tongue_needs_no_rotation() {
    let cfg = SynthConfig {
        count: 6,
        side: 256,
        rotation_range: (0.0, 0.0),
        ..SynthConfig::default()
    };
    for s in synth_generate(&cfg).unwrap() {
        let r = upright_orient(&s.image, &s.mask, &OrientationParams::default()).unwrap();
        assert!(r.applied_rotation.abs() < 3.0, "rotation {}", r.applied_rotation);
        assert!((r.theta - 90.0).abs() < 3.0, "theta {}", r.theta);
    }
}

#[test]
fn cracks_are_drawn_inside_the_tongue() {
    let mut p = [0.0; 8];
    p[4] = 1.0;
    let cfg = SynthConfig {
        count: 20,
        side: 128,
        probabilities: p,
        ..SynthConfig::default()
    };
    let (mut inside, mut total) = (0usize, 0usize);
    for s in synth_generate(&cfg).unwrap() {
        assert!(!s.crack.is_empty());
        for q in &s.crack {
            total += 1;
            let (x, y) = (q.x.round() as usize, q.y.round() as usize);
            if x < s.mask.width() && y < s.mask.height() && s.mask.get(x, y) {
                inside += 1;
            }
        }
    }
    assert!(inside as f64 >= 0.99 * total as f64, "{inside} of {total} crack points inside");
}

#[test]
fn invalid_synth_configs_are_rejected() {
    for cfg in [
        SynthConfig { side: 16, ..SynthConfig::default() },
        SynthConfig { rotation_range: (30.0, -30.0), ..SynthConfig::default() },
        SynthConfig { noise: -1.0, ..SynthConfig::default() },
    ] {
        assert!(synth_generate(&cfg).is_err());
    }
}

#[test]
fn manifest_round_trips_through_a_file() {
    let mut recs = records(5, 2);
    recs[0].mask_path = Some("mask/0.png".into());
    recs[1].age = Some(47.0);
    recs[2].gender = Some(Gender::Female);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.csv");
    write_manifest(std::fs::File::create(&path).unwrap(), &recs).unwrap();
    assert_eq!(load_manifest(&path).unwrap(), recs);
}

#[test]
fn manifest_errors_name_the_row() {
    let text = "image_path,mask_path,subject_id,pale,tipsidered,redspot,ecchymosis,crack,toothmark,furthick,furyellow,age,gender\n\
                a.png,,s1,0,0,0,0,0,0,0,0,,\n\
                b.png,,s2,0,0,2,0,0,0,0,0,,\n";
    let err = read_manifest(text.as_bytes()).unwrap_err().to_string();
    assert!(err.contains("row 2"), "{err}");
}

#[test]
fn fold_counts_cover_the_pool() {
    let recs = records(60, 10);
    let plan = split_folds(&recs, 5, Holdout::Count(8), 3).unwrap();
    let counts = fold_attribute_counts(&recs, &plan);
    let pooled: usize = counts.images.iter().sum();
    assert_eq!(counts.holdout_images, 8);
    assert_eq!(pooled + counts.holdout_images + count_dropped(&recs, &plan), recs.len());
    assert_eq!(counts.subjects.iter().sum::<usize>(), 52);
}

fn count_dropped(recs: &[SampleRecord], plan: &tongue_core::data::FoldPlan) -> usize {
    // second images of held-out subjects belong to no split
    let held: HashSet<&str> = plan.holdout_records(recs).iter().map(|r| r.subject_id.as_str()).collect();
    recs.iter().filter(|r| held.contains(r.subject_id.as_str())).count() - held.len()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn folds_partition_subjects(subjects in 12usize..80, doubles in 0usize..12, k in 2usize..6, seed in any::<u64>(), hold in 0usize..6) {
        let recs = records(subjects, doubles.min(subjects));
        let plan = split_folds(&recs, k, Holdout::Count(hold), seed).unwrap();
        let held: HashSet<String> = plan.holdout_records(&recs).iter().map(|r| r.subject_id.clone()).collect();
        prop_assert_eq!(held.len(), hold);
        prop_assert_eq!(plan.holdout_records(&recs).len(), hold);

        let mut sizes = BTreeMap::new();
        for r in &recs {
            match plan.fold_of(&r.subject_id) {
                Some(f) => {
                    prop_assert!(!held.contains(&r.subject_id));
                    prop_assert!(f < k);
                    sizes.entry(f).or_insert_with(HashSet::new).insert(r.subject_id.clone());
                }
                None => prop_assert!(held.contains(&r.subject_id)),
            }
        }
        let n: Vec<usize> = sizes.values().map(HashSet::len).collect();
        prop_assert!(n.iter().max().unwrap() - n.iter().min().unwrap() <= 1);

        for fold in 0..k {
            let (train, val) = plan.round(&recs, fold);
            let ts: HashSet<&str> = train.iter().map(|r| r.subject_id.as_str()).collect();
            prop_assert!(val.iter().all(|r| !ts.contains(r.subject_id.as_str())));
            prop_assert_eq!(train.len() + val.len() + held.len() + count_dropped(&recs, &plan), recs.len());
        }

        let again = split_folds(&recs, k, Holdout::Count(hold), seed).unwrap();
        prop_assert_eq!(again, plan);
    }
}
