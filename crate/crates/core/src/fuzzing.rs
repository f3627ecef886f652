//! Entry points shared by the cargo-fuzz targets and the corpus replay test.
//! Each takes arbitrary bytes; errors are fine, panics are bugs.

use crate::baselines::NeighborIndex;
use crate::dataset::{decode_features, emit, ingest, IngestOptions, SynthConfig};
use crate::forecasts::ForecastTable;
use crate::model::{ModelConfig, ModelMeta};
use crate::training::TrainConfig;
use gtm_autodiff::ParamStore;

/// Separates the products, sales and trends tables in a dataset input.
pub const TABLE_SEPARATOR: u8 = 0x1e;

fn utf8(data: &[u8]) -> Option<&str> {
    std::str::from_utf8(data).ok()
}

/// Three CSV tables separated by [`TABLE_SEPARATOR`]. Anything accepted must
/// survive emit and re-ingest, and a second cycle must change nothing.
pub fn dataset_tables(data: &[u8]) {
    let mut parts = data.splitn(3, |&b| b == TABLE_SEPARATOR);
    let (Some(p), Some(s), Some(t)) = (parts.next(), parts.next(), parts.next()) else {
        return;
    };
    let opts = IngestOptions::default();
    let Ok(first) = ingest(p, s, t, &opts) else {
        return;
    };
    let cycle = |d: &crate::dataset::Dataset| {
        let (mut p, mut s, mut t) = (Vec::new(), Vec::new(), Vec::new());
        emit(d, &mut p, &mut s, &mut t).expect("emit to memory");
        let back = ingest(&p[..], &s[..], &t[..], &opts).expect("emitted tables ingest");
        assert!(back.rejections.is_empty(), "{:?}", back.rejections);
        back.dataset
    };
    let once = cycle(&first.dataset);
    assert_eq!(once.len(), first.dataset.len());
    assert_eq!(cycle(&once), once);
}

pub fn feature_vector(data: &[u8]) {
    if let Ok(v) = decode_features(data) {
        assert_eq!(v.len() * 4, data.len());
        assert!(v.iter().all(|x| x.is_finite()));
    }
}

pub fn param_store(data: &[u8]) {
    if let Ok(store) = ParamStore::from_json_slice(data) {
        let mut out = Vec::new();
        store.write_json(&mut out).expect("write to memory");
        assert_eq!(ParamStore::from_json_slice(&out).expect("reparse"), store);
    }
}

pub fn model_meta(data: &[u8]) {
    let _ = ModelMeta::from_json_slice(data);
}

pub fn configs(data: &[u8]) {
    if let Ok(c) = serde_json::from_slice::<ModelConfig>(data) {
        if c.validate().is_ok() {
            assert!(c.d_model % c.num_heads == 0);
        }
    }
    if let Ok(c) = serde_json::from_slice::<TrainConfig>(data) {
        let _ = c.validate();
    }
    if let Ok(c) = serde_json::from_slice::<SynthConfig>(data) {
        let _ = c.validate();
    }
}

pub fn forecast_csv(data: &[u8]) {
    let Ok(table) = ForecastTable::read_csv(data) else {
        return;
    };
    if let Some(h) = table.horizon() {
        assert!(table.series.values().all(|s| s.len() == h));
    }
    if table.series.values().flatten().all(|v| v.is_finite()) {
        let mut out = Vec::new();
        table.write_csv(&mut out).expect("write to memory");
        assert_eq!(ForecastTable::read_csv(&out[..]).expect("reparse"), table);
    }
}

pub fn knn_index(data: &[u8]) {
    let Some(text) = utf8(data) else {
        return;
    };
    if let Ok(index) = NeighborIndex::read_json(text.as_bytes()) {
        let mut out = Vec::new();
        index.write_json(&mut out).expect("write to memory");
        NeighborIndex::read_json(&out[..]).expect("reparse");
    }
}
