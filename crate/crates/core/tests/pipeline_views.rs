use tongue_core::data::{synth_sample, SynthConfig};
use tongue_core::imgcore::Mask;
use tongue_core::pipeline::{prepare, views_sample, PipelineParams};
use tongue_core::regions::{separate_regions, RegionParams};

fn cfg() -> SynthConfig {
    SynthConfig {
        count: 3,
        side: 160,
        seed: 21,
        ..SynthConfig::default()
    }
}

#[test]
fn views_are_square_and_undo_the_rotation() {
    let c = cfg();
    for i in 0..3 {
        let s = synth_sample(&c, i);
        let v = prepare(&s.image, &s.mask, &PipelineParams::default(), 48).unwrap();
        for img in [&v.whole, &v.body, &v.edge] {
            assert_eq!((img.width(), img.height()), (48, 48));
        }
        let err = (v.applied_rotation + s.phi() + 90.0).rem_euclid(180.0) - 90.0;
        assert!(err.abs() < 3.0, "sample {i}: rotation {} for phi {}", v.applied_rotation, s.phi());

        let sample = views_sample::<f64>(&v, s.labels);
        assert_eq!(sample.whole.shape(), &[3, 48, 48]);
        assert!(sample.edge.data().iter().all(|x| (-1.0..=1.0).contains(x)));
        assert_eq!(sample.labels, s.labels);
    }
}

#[test]
fn body_and_edge_split_the_tongue() {
    let s = synth_sample(&cfg(), 0);
    let whole = s.image.masked(&s.mask).unwrap();
    let pair = separate_regions(&whole, &s.mask, &RegionParams::default()).unwrap();
    assert!(pair.body_mask.and(&pair.edge_mask).is_empty());
    assert_eq!(pair.body_mask.or(&pair.edge_mask), s.mask);
    assert!(!pair.edge_mask.is_empty() && !pair.body_mask.is_empty());
    let outside = Mask::full(s.mask.width(), s.mask.height()).minus(&pair.edge_mask);
    for y in 0..s.mask.height() {
        for x in 0..s.mask.width() {
            if outside.get(x, y) {
                assert_eq!(pair.edge.get(x, y), [0, 0, 0]);
            }
        }
    }
}
