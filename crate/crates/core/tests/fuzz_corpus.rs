//! Replays the fuzz corpus so the seeds stay valid inputs on stable builds.

use std::path::PathBuf;

use gtm_core::fuzzing;

const TARGETS: [(&str, fn(&[u8])); 7] = [
    ("dataset_tables", fuzzing::dataset_tables),
    ("feature_vector", fuzzing::feature_vector),
    ("param_store", fuzzing::param_store),
    ("model_meta", fuzzing::model_meta),
    ("configs", fuzzing::configs),
    ("forecast_csv", fuzzing::forecast_csv),
    ("knn_index", fuzzing::knn_index),
];

fn corpus(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut files: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    files.into_iter().map(|p| (p.clone(), std::fs::read(p).unwrap())).collect()
}

#[test]
fn every_target_has_seeds_and_none_panic() {
    for (name, run) in TARGETS {
        let seeds = corpus(name);
        assert!(!seeds.is_empty(), "{name} has no corpus");
        for (path, bytes) in seeds {
            let r = std::panic::catch_unwind(|| run(&bytes));
            assert!(r.is_ok(), "{} panicked", path.display());
        }
    }
}

#[test]
fn shipped_seeds_parse() {
    let ok = |name: &str, file: &str| {
        corpus(name).into_iter().find(|(p, _)| p.ends_with(file)).unwrap().1
    };
    let tables = ok("dataset_tables", "synthetic");
    let mut parts = tables.split(|&b| b == fuzzing::TABLE_SEPARATOR);
    let (p, s, t) = (parts.next().unwrap(), parts.next().unwrap(), parts.next().unwrap());
    let d = gtm_core::dataset::ingest(p, s, t, &Default::default()).unwrap();
    assert_eq!(d.dataset.len(), 4);
    assert!(d.rejections.is_empty());
    gtm_autodiff::ParamStore::from_json_slice(&ok("param_store", "trained")).unwrap();
    gtm_core::model::ModelMeta::from_json_slice(&ok("model_meta", "trained")).unwrap();
    gtm_core::forecasts::ForecastTable::read_csv(&ok("forecast_csv", "trained")[..]).unwrap();
    gtm_core::baselines::NeighborIndex::read_json(&ok("knn_index", "synthetic")[..]).unwrap();
    assert_eq!(gtm_core::dataset::decode_features(&ok("feature_vector", "synthetic")).unwrap().len(), 4);
}
