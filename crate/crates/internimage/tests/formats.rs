use dcnv3_core::dcn::Ablation;
use dcnv3_core::model::{variant_registry, Model, ModelConfig, StackConfig};
use dcnv3_core::ops::LinearWeights;
use dcnv3_core::params::Parameters;
use internimage::{config_file, weights};
use proptest::prelude::*;

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn registry_configs_round_trip() {
    for v in variant_registry() {
        let cfg = v.model_config();
        assert_eq!(config_file::from_str(&config_file::to_string(&cfg).unwrap()).unwrap(), cfg);
    }
}

#[test]
fn model_weights_round_trip_through_a_file() {
    let mut cfg = ModelConfig::new(StackConfig::new(16, 16, 1, 1));
    cfg.layer_scale = true;
    cfg.seed = 11;
    let model = Model::build(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.bin");
    weights::save(&path, &model).unwrap();
    let mut back = Model::build(&ModelConfig { seed: 12, ..cfg.clone() }).unwrap();
    assert_ne!(bits(&back.flatten()), bits(&model.flatten()));
    weights::load_into(&path, &mut back).unwrap();
    assert_eq!(bits(&back.flatten()), bits(&model.flatten()));

    // A differently shaped model refuses the file.
    let mut other = Model::build(&ModelConfig { stack: StackConfig::new(32, 16, 1, 1), ..cfg.clone() }).unwrap();
    let err = weights::load_into(&path, &mut other).unwrap_err();
    assert!(matches!(err, weights::WeightsError::Mismatch { .. }), "{err:?}");
    // So does one with a different tensor count.
    let mut plain = Model::build(&ModelConfig { layer_scale: false, ..cfg.clone() }).unwrap();
    let err = weights::load_into(&path, &mut plain).unwrap_err();
    assert!(matches!(err, weights::WeightsError::Count { .. }), "{err:?}");
}

fn arb_config() -> impl Strategy<Value = ModelConfig> {
    (
        "[A-Za-z0-9_.-]{1,16}",
        (1usize..512, 1usize..64, prop::array::uniform4(0usize..40)),
        (1usize..9, any::<bool>(), 1usize..5000, any::<u64>()),
        (prop::sample::select(vec![1usize, 3, 5, 7]), 0usize..4, 1usize..5),
    )
        .prop_map(|(name, (c1, cprime, depths), (ffn_ratio, layer_scale, num_classes, seed), (kernel, row, inc))| {
            ModelConfig {
                name,
                stack: StackConfig { c1, cprime, depths },
                ffn_ratio,
                layer_scale,
                num_classes,
                seed,
                kernel,
                ablation: Ablation::ALL[row],
                in_channels: inc,
            }
        })
}

proptest! {
    #[test]
    fn any_config_round_trips(cfg in arb_config()) {
        let text = config_file::to_string(&cfg).unwrap();
        prop_assert_eq!(config_file::from_str(&text).unwrap(), cfg);
    }

    #[test]
    fn any_tensor_round_trips_bitwise(
        (i, o, raw) in (1usize..6, 1usize..6).prop_flat_map(|(i, o)| (Just(i), Just(o), prop::collection::vec(any::<u64>(), i * o + o)))
    ) {
        let vals: Vec<f64> = raw.iter().map(|&b| f64::from_bits(b)).collect();
        let w = LinearWeights::from_matrix(i, o, vals[..i * o].to_vec(), Some(vals[i * o..].to_vec())).unwrap();
        let mut buf = Vec::new();
        weights::write_weights(&mut buf, &w).unwrap();
        let records = weights::read_records(&mut buf.as_slice()).unwrap();
        let mut back = LinearWeights::zeros(i, o, true);
        weights::assign_records(&mut back, &records).unwrap();
        prop_assert_eq!(bits(&back.flatten()), raw);
    }

    #[test]
    fn truncation_never_panics(cut in 0usize..200) {
        let w = LinearWeights::identity(3, true);
        let mut buf = Vec::new();
        weights::write_weights(&mut buf, &w).unwrap();
        let cut = cut.min(buf.len());
        let r = weights::read_records(&mut &buf[..cut]);
        prop_assert_eq!(r.is_ok(), cut == buf.len() || cut == 9 || cut == 9 + 4 + 6 + 1 + 16 + 72);
    }
}
