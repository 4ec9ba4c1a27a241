use dcnv3_core::erf::{erf_map, static_receptive_field, synthetic_image};
use dcnv3_core::model::{build_model, Depth, ModelConfig, StackConfig};
use dcnv3_core::Error;

fn tiny() -> ModelConfig {
    ModelConfig::new(StackConfig::new(16, 16, 1, 1))
}

#[test]
fn support_stays_inside_static_field() {
    let model = build_model(&tiny()).unwrap();
    let img = synthetic_image(64, 64, 3);
    for depth in [Depth::Stem, Depth::Stage(1), Depth::Stage(2)] {
        for pixel in [(32, 32), (0, 0), (63, 17), (5, 50)] {
            let map = erf_map(&model, &img, depth, pixel).unwrap();
            assert_eq!((map.height, map.width), (64, 64));
            assert!(map.values.iter().all(|&v| v >= 0.0));
            let (sy, sx) = static_receptive_field(&tiny(), depth, map.feature.0, map.feature.1).unwrap();
            let mut support = 0;
            for (y, x) in map.support() {
                support += 1;
                assert!(sy.contains(y as i64) && sx.contains(x as i64), "{depth:?} {pixel:?}: ({y},{x}) outside {sy:?}×{sx:?}");
            }
            assert!(support > 0, "{depth:?} {pixel:?}: empty support");
            assert!(map.max() > 1e-6, "{depth:?} {pixel:?}: peak {} is rounding noise", map.max());
        }
    }
}

#[test]
fn deeper_stages_see_more() {
    let cfg = tiny();
    let (stem, _) = static_receptive_field(&cfg, Depth::Stem, 4, 4).unwrap();
    let (s1, _) = static_receptive_field(&cfg, Depth::Stage(1), 4, 4).unwrap();
    let (s2, _) = static_receptive_field(&cfg, Depth::Stage(2), 2, 2).unwrap();
    assert!(s1.hi - s1.lo > stem.hi - stem.lo);
    assert!(s2.hi - s2.lo > s1.hi - s1.lo);
}

#[test]
fn rejects_bad_probes() {
    let model = build_model(&tiny()).unwrap();
    let img = synthetic_image(32, 32, 3);
    assert!(matches!(erf_map(&model, &img, Depth::Stage(1), (32, 0)), Err(Error::Input(_))));
    assert!(erf_map(&model, &img, Depth::Logits, (0, 0)).is_err());
}
