mod common;

use common::{fixture, random_bn_model, random_snn};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spikeconv::*;

fn snn_roundtrip(snn: &SnnModel) -> SnnModel {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("snn");
    save_snn_model(snn, &path).unwrap();
    load_snn_model(&path).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn float_snn_survives_save_and_load(seed in any::<u64>()) {
        let snn = random_snn(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(snn_roundtrip(&snn), snn);
    }

    #[test]
    fn fixed_snn_survives_save_and_load(seed in any::<u64>(), bits in 2u32..=20) {
        let snn = quantize(&random_snn(&mut ChaCha8Rng::seed_from_u64(seed)), bits).unwrap();
        prop_assert_eq!(snn_roundtrip(&snn), snn);
    }

    #[test]
    fn cnn_survives_save_and_load(seed in any::<u64>()) {
        let model = random_bn_model(&mut ChaCha8Rng::seed_from_u64(seed), 1e-3);
        let dir = tempfile::tempdir().unwrap();
        save_model(&model, dir.path().join("m")).unwrap();
        prop_assert_eq!(load_model(dir.path().join("m")).unwrap(), model);
    }
}

#[test]
fn fixture_snn_roundtrip_keeps_provenance_and_predictions() {
    let f = fixture();
    let snn = f.snn(&ConversionConfig::default());
    let loaded = snn_roundtrip(&snn);
    assert_eq!(loaded, snn);
    let data = f.test.take(8);
    let a = Simulator::new(&snn)
        .unwrap()
        .run_batch(&data, 64, RecordFlags::default())
        .unwrap();
    let b = Simulator::new(&loaded)
        .unwrap()
        .run_batch(&data, 64, RecordFlags::default())
        .unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.output_potential_per_step, y.output_potential_per_step);
    }
}

#[test]
fn dataset_survives_save_and_load() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&f.calib, dir.path().join("calib")).unwrap();
    let loaded = load_dataset(dir.path().join("calib")).unwrap();
    assert_eq!(loaded.labels(), f.calib.labels());
    assert_eq!(loaded.inputs(), f.calib.inputs());
    assert_eq!(loaded.split, f.calib.split);
}

#[test]
fn folded_model_survives_save_and_load() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    save_model(&f.folded, dir.path().join("folded")).unwrap();
    assert_eq!(load_model(dir.path().join("folded")).unwrap(), f.folded);
}

#[test]
fn loading_missing_directory_names_the_path() {
    let err = load_snn_model("/nonexistent/snn-dir").unwrap_err();
    assert!(err.to_string().contains("/nonexistent/snn-dir"), "{err}");
    assert!(!err.is_invariant_violation());
}
