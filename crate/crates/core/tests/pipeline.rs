use contesta_core::extract::{default_demographics_path, extract_cohort};
use contesta_core::io::{read_cohort, write_cohort};
use contesta_core::signals::DEFAULT_MAX_LAG_S;
use contesta_core::synth::{generate_cohort, SynthConfig};
use contesta_core::vif::prune_multicollinearity;

#[test]
fn written_synthetic_cohort_extracts_to_the_in_memory_features() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        n_per_class: 5,
        ..SynthConfig::with_seed(9)
    };
    let synth = generate_cohort(&cfg).unwrap();
    synth.write_dir(dir.path()).unwrap();
    let manifest = dir.path().join("manifest.csv");
    let extracted = extract_cohort(&manifest, &default_demographics_path(&manifest), DEFAULT_MAX_LAG_S).unwrap();
    let direct = synth.to_cohort(DEFAULT_MAX_LAG_S).unwrap();
    assert_eq!(extracted.len(), 10);
    for r in direct.records() {
        let e = extracted.get(&r.record_id).unwrap();
        assert_eq!(e.label, r.label);
        for (a, b) in e.features.to_array().iter().zip(r.features.to_array()) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{a} vs {b}");
        }
    }
}

#[test]
fn pruned_cohort_round_trips_with_its_active_features() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = generate_cohort(&SynthConfig::with_seed(2)).unwrap().to_cohort(DEFAULT_MAX_LAG_S).unwrap();
    let (pruned, log) = prune_multicollinearity(&cohort, 2.5).unwrap();
    assert!(!log.removed().is_empty());
    let path = dir.path().join("pruned.csv");
    write_cohort(&path, &pruned).unwrap();
    let back = read_cohort(&path).unwrap();
    assert_eq!(back.active_features(), pruned.active_features());
    assert_eq!(back.records(), pruned.records());
}

#[test]
fn reloaded_models_score_bit_identically() {
    use contesta_core::models::{fit, Algorithm, ClassifierSpec, TrainedModel};
    let synth = generate_cohort(&SynthConfig::with_seed(4)).unwrap();
    let cohort = synth.to_cohort(DEFAULT_MAX_LAG_S).unwrap();
    for algorithm in [Algorithm::RandomForest, Algorithm::RbfSvm] {
        let spec = ClassifierSpec {
            cv_repeats: 1,
            cv_folds: 3,
            search_draws: 3,
            ..ClassifierSpec::new(algorithm, 4)
        };
        let model = fit(&spec, &cohort).unwrap();
        let text = model.to_json();
        let back = TrainedModel::from_json(&text).unwrap();
        assert_eq!(back.to_json(), text);
        for r in cohort.records() {
            assert_eq!(back.predict_proba(r).to_bits(), model.predict_proba(r).to_bits());
        }
    }
}
