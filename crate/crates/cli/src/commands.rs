//! Command bodies. `prepare` validates arguments and configuration before a
//! run directory exists, so usage errors never leave half-made runs.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use gtm_core::baselines::{previous_season_products, sixty_percent_policy, Featurizer, KnnMode, NeighborIndex, Weighting};
use gtm_core::dataset::{emit_to_dir, generate_synthetic, ingest_dir, Dataset, IngestOptions, SynthConfig, SALES_WEEKS};
use gtm_core::first_order::{first_order_error, method_report, FirstOrderReport, OrderCase};
use gtm_core::forecasts::ForecastTable;
use gtm_core::metrics::{ErpOptions, MetricsReport};
use gtm_core::model::{GtmModel, ProviderSpec};
use gtm_core::stats::{analyze_correlations, argmax_time, write_records_csv, LagBucketReport};
use gtm_core::training::Trainer;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::convert::convert_visuelle;
use crate::error::{CliError, CliResult};
use crate::run::RunDir;
use crate::svg::{line_chart, Series};
use crate::{Command, DataArgs};

pub const DATASET_DIR: &str = "dataset";
pub const MODEL_DIR: &str = "model";
pub const FORECASTS_FILE: &str = "forecasts.csv";
pub const POLICY_METHOD: &str = "60% policy";

type Exec = Box<dyn FnOnce(&mut RunDir) -> CliResult<()>>;

pub struct Prepared {
    pub name: &'static str,
    pub seed: Option<u64>,
    pub config: Value,
    pub exec: Exec,
}

fn prepared(name: &'static str, seed: Option<u64>, config: Value, exec: Exec) -> CliResult<Prepared> {
    Ok(Prepared {
        name,
        seed,
        config,
        exec,
    })
}

fn data_dir(d: &DataArgs) -> CliResult<PathBuf> {
    let dir = d
        .data
        .clone()
        .ok_or_else(|| CliError::usage("no dataset: pass --data or set GTM_DATA_ROOT"))?;
    if !dir.is_dir() {
        return Err(CliError::usage(format!("dataset directory {} does not exist", dir.display())));
    }
    Ok(dir)
}

fn existing(p: &Path, what: &str) -> CliResult<PathBuf> {
    if !p.exists() {
        return Err(CliError::usage(format!("{what} {} does not exist", p.display())));
    }
    Ok(p.to_path_buf())
}

fn load_dataset(dir: &Path, run: &mut RunDir) -> CliResult<Dataset> {
    run.input(dir);
    let features = dir.join("features");
    let opts = IngestOptions {
        vocabulary: None,
        features_dir: features.is_dir().then_some(features),
    };
    let ingested = ingest_dir(dir, &opts).map_err(|e| CliError::from(e).context(dir.display()))?;
    for r in ingested.rejections.iter().take(20) {
        log::warn!("{r}");
    }
    if ingested.rejections.len() > 20 {
        log::warn!("... {} rejections in total", ingested.rejections.len());
    }
    if ingested.dataset.is_empty() {
        return Err(CliError::data(format!("{} holds no usable products", dir.display())));
    }
    log::info!("loaded {} products from {}", ingested.dataset.len(), dir.display());
    Ok(ingested.dataset)
}

/// The `test_size` most recent products, or everything for 0.
fn select(dataset: Dataset, test_size: usize) -> CliResult<Dataset> {
    if test_size == 0 {
        return Ok(dataset);
    }
    Ok(dataset.split(test_size).map_err(|e| CliError::usage(e.to_string()))?.1)
}

fn load_model(dir: &Path, run: &mut RunDir) -> CliResult<GtmModel> {
    run.input(dir);
    GtmModel::load(dir).map_err(|e| CliError::from(e).context(format!("model {}", dir.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    std::fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn prepare(command: Command) -> CliResult<Prepared> {
    match command {
        Command::Synth {
            config,
            n_products,
            seed,
        } => {
            let mut cfg = match &config {
                Some(p) => {
                    let text = std::fs::read_to_string(p)
                        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", p.display())))?;
                    serde_json::from_str::<SynthConfig>(&text)
                        .map_err(|e| CliError::usage(format!("invalid synth config {}: {e}", p.display())))?
                }
                None => SynthConfig::default(),
            };
            if let Some(n) = n_products {
                cfg.n_products = n;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let snapshot = serde_json::to_value(&cfg)?;
            prepared("synth", Some(cfg.seed), snapshot, Box::new(move |run| synth(cfg, run)))
        }
        Command::Convert {
            visuelle,
            sales_scale,
        } => {
            let dir = existing(&visuelle, "VISUELLE directory")?;
            let snapshot = json!({ "visuelle": dir, "sales_scale": sales_scale });
            prepared("convert", None, snapshot, Box::new(move |run| convert(&dir, sales_scale, run)))
        }
        Command::Train {
            config,
            data,
            test_size,
            epochs,
            batch_size,
            seed,
            no_encoder,
        } => {
            let mut cfg = match &config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::default(),
            };
            if data.data.is_some() || cfg.data.is_none() {
                cfg.data = data.data.clone();
            }
            cfg.data = Some(data_dir(&DataArgs { data: cfg.data.clone() })?);
            if let Some(t) = test_size {
                cfg.test_size = t;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(b) = batch_size {
                cfg.train.batch_size = b;
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            if no_encoder {
                cfg.model.use_encoder = false;
            }
            cfg.validate()?;
            let snapshot = serde_json::to_value(&cfg)?;
            prepared("train", Some(cfg.train.seed), snapshot, Box::new(move |run| train(cfg, run)))
        }
        Command::Evaluate {
            model,
            forecasts,
            data,
            test_size,
            horizons,
        } => {
            let dir = data_dir(&data)?;
            if horizons.is_empty() {
                return Err(CliError::usage("the horizon list is empty"));
            }
            if let Some(h) = horizons.iter().find(|&&h| h == 0 || h > SALES_WEEKS) {
                return Err(CliError::usage(format!("horizon {h} outside 1..={SALES_WEEKS}")));
            }
            let source = match (&model, &forecasts) {
                (Some(m), None) => Source::Model(existing(m, "model")?),
                (None, Some(f)) => Source::File(existing(f, "forecast file")?),
                _ => return Err(CliError::usage("pass exactly one of --model and --forecasts")),
            };
            let snapshot = json!({
                "data": dir, "model": model, "forecasts": forecasts,
                "test_size": test_size, "horizons": horizons,
            });
            prepared(
                "evaluate",
                None,
                snapshot,
                Box::new(move |run| evaluate(&dir, source, test_size, horizons, run)),
            )
        }
        Command::Forecast {
            model,
            data,
            test_size,
        } => {
            let dir = data_dir(&data)?;
            let model = existing(&model, "model")?;
            let snapshot = json!({ "data": dir, "model": model, "test_size": test_size });
            prepared(
                "forecast",
                None,
                snapshot,
                Box::new(move |run| forecast(&dir, &model, test_size, run)),
            )
        }
        Command::Analyze {
            data,
            model,
            trend_len,
            test_size,
        } => {
            let dir = data_dir(&data)?;
            if !(SALES_WEEKS..=gtm_core::dataset::TREND_WEEKS).contains(&trend_len) {
                return Err(CliError::usage(format!(
                    "trend_len {trend_len} outside {SALES_WEEKS}..={}",
                    gtm_core::dataset::TREND_WEEKS
                )));
            }
            let model = model.map(|m| existing(&m, "model")).transpose()?;
            let snapshot = json!({
                "data": dir, "model": model, "trend_len": trend_len, "test_size": test_size,
            });
            prepared(
                "analyze",
                None,
                snapshot,
                Box::new(move |run| analyze(&dir, model.as_deref(), trend_len, test_size, run)),
            )
        }
        Command::FirstOrder {
            data,
            forecasts,
            unit_cost,
            weeks,
        } => {
            let dir = data_dir(&data)?;
            if weeks == 0 || weeks > SALES_WEEKS {
                return Err(CliError::usage(format!("weeks {weeks} outside 1..={SALES_WEEKS}")));
            }
            if !(unit_cost.is_finite() && unit_cost >= 0.0) {
                return Err(CliError::usage(format!("unit cost {unit_cost} must be nonnegative")));
            }
            let mut methods: Vec<(String, PathBuf)> = Vec::new();
            for spec in &forecasts {
                let (name, path) = match spec.split_once('=') {
                    Some((n, p)) => (n.to_string(), PathBuf::from(p)),
                    None => {
                        let p = PathBuf::from(spec);
                        let stem = p
                            .file_stem()
                            .map(|s| s.to_string_lossy().into_owned())
                            .unwrap_or_else(|| spec.clone());
                        (stem, p)
                    }
                };
                if name.is_empty() || name == POLICY_METHOD || methods.iter().any(|(n, _)| *n == name) {
                    return Err(CliError::usage(format!("forecast name {name:?} is empty, reserved or repeated")));
                }
                methods.push((name, existing(&path, "forecast file")?));
            }
            let snapshot = json!({
                "data": dir, "forecasts": methods, "unit_cost": unit_cost, "weeks": weeks,
            });
            prepared(
                "first-order",
                None,
                snapshot,
                Box::new(move |run| first_order(&dir, methods, unit_cost, weeks, run)),
            )
        }
        Command::Knn {
            data,
            test_size,
            mode,
            k,
            distance_weighting,
        } => {
            let dir = data_dir(&data)?;
            if test_size == 0 {
                return Err(CliError::usage("--test-size must be positive: the index holds the older products"));
            }
            if k == 0 {
                return Err(CliError::usage("k must be at least 1"));
            }
            let weighting = if distance_weighting {
                Weighting::Distance
            } else {
                Weighting::Similarity
            };
            let snapshot = json!({
                "data": dir, "test_size": test_size, "mode": mode.as_str(), "k": k, "weighting": weighting,
            });
            prepared(
                "knn",
                None,
                snapshot,
                Box::new(move |run| knn(&dir, test_size, mode, k, weighting, run)),
            )
        }
    }
}

fn synth(cfg: SynthConfig, run: &mut RunDir) -> CliResult<()> {
    let data = generate_synthetic(&cfg)?;
    emit_to_dir(&data.dataset, &run.output(DATASET_DIR))?;
    let mut w = csv::Writer::from_writer(create(&run.output("planted_lags.csv"))?);
    w.write_record(["product_id", "planted_lag", "popularity"])?;
    for ((p, lag), pop) in data.dataset.products.iter().zip(&data.planted_lags).zip(&data.popularity) {
        w.write_record([p.id.clone(), lag.to_string(), pop.to_string()])?;
    }
    w.flush()?;
    write_json(&run.output("synth_config.json"), &cfg)?;
    log::info!("generated {} products", data.dataset.len());
    Ok(())
}

fn convert(dir: &Path, sales_scale: f64, run: &mut RunDir) -> CliResult<()> {
    run.input(dir);
    let c = convert_visuelle(dir, sales_scale)?;
    let mut w = csv::Writer::from_writer(create(&run.output("skipped.csv"))?);
    w.write_record(["location", "reason"])?;
    for (at, reason) in &c.skipped {
        w.write_record([at, reason])?;
    }
    w.flush()?;
    if !c.skipped.is_empty() {
        log::warn!("skipped {} products (see skipped.csv)", c.skipped.len());
    }
    if c.dataset.is_empty() {
        return Err(CliError::data("no product could be converted"));
    }
    emit_to_dir(&c.dataset, &run.output(DATASET_DIR))?;
    log::info!("converted {} products", c.dataset.len());
    Ok(())
}

fn train(mut cfg: RunConfig, run: &mut RunDir) -> CliResult<()> {
    let dir = cfg.data.clone().expect("resolved in prepare");
    let dataset = load_dataset(&dir, run)?;
    if cfg.fit_years {
        cfg.model.fit_years(&dataset);
    }
    let train_set = if cfg.test_size > 0 {
        dataset.split(cfg.test_size).map_err(|e| CliError::usage(e.to_string()))?.0
    } else {
        dataset
    };
    let seed = cfg.model_seed.unwrap_or(cfg.train.seed);
    let mut model = GtmModel::new(
        cfg.model.clone(),
        seed,
        cfg.image_provider.clone(),
        cfg.text_provider.clone(),
    )?;
    let mut trainer = Trainer::new(&mut model, &train_set.products, &cfg.train)?;
    for epoch in 1..=cfg.train.epochs {
        let loss = trainer.run_epoch(&mut model)?;
        log::info!("epoch {epoch}/{} loss {loss:.6}", cfg.train.epochs);
    }
    let report = trainer.report(&model);
    model.save(&run.output(MODEL_DIR))?;
    report.write_loss_csv(create(&run.output("loss.csv"))?)?;
    write_json(&run.output("train_report.json"), &report)?;
    write_json(&run.output("config.json"), &cfg)?;
    run.config = serde_json::to_value(&cfg)?;
    Ok(())
}

pub enum Source {
    Model(PathBuf),
    File(PathBuf),
}

fn model_forecasts(model: &GtmModel, dataset: &Dataset) -> CliResult<Vec<gtm_core::model::ForecastResult>> {
    let inputs = model.input_builder()?.build_all(&dataset.products)?;
    let ids: Vec<&str> = dataset.products.iter().map(|p| p.id.as_str()).collect();
    Ok(model.predict(&ids, &inputs, 64)?)
}

fn table_of(results: &[gtm_core::model::ForecastResult]) -> ForecastTable {
    let mut t = ForecastTable::default();
    for r in results {
        t.insert(r.product_id.clone(), r.clamped());
    }
    t
}

fn read_table(path: &Path, run: &mut RunDir) -> CliResult<ForecastTable> {
    run.input(path);
    let t = ForecastTable::read_csv(File::open(path)?).map_err(|e| CliError::from(e).context(path.display()))?;
    if t.series.is_empty() {
        return Err(CliError::data(format!("{} holds no forecasts", path.display())));
    }
    Ok(t)
}

fn evaluate(dir: &Path, source: Source, test_size: usize, horizons: Vec<usize>, run: &mut RunDir) -> CliResult<()> {
    let dataset = select(load_dataset(dir, run)?, test_size)?;
    let table = match source {
        Source::Model(m) => {
            let model = load_model(&m, run)?;
            let t = table_of(&model_forecasts(&model, &dataset)?);
            t.write_csv(create(&run.output(FORECASTS_FILE))?)?;
            t
        }
        Source::File(f) => read_table(&f, run)?,
    };
    let available = table.horizon().unwrap_or(0);
    if let Some(h) = horizons.iter().find(|&&h| h > available) {
        return Err(CliError::usage(format!("horizon {h} exceeds the {available}-week forecasts")));
    }
    let mut actual = Vec::new();
    let mut predicted = Vec::new();
    let mut categories = Vec::new();
    for (id, f) in &table.series {
        let p = dataset
            .get(id)
            .ok_or_else(|| CliError::data(format!("forecast for {id:?}, which is not in the evaluated products")))?;
        actual.push(p.sales.to_vec());
        predicted.push(f.clone());
        categories.push(p.category.as_str());
    }
    if table.series.len() < dataset.len() {
        log::warn!(
            "evaluating {} of {} products (the rest have no forecast)",
            table.series.len(),
            dataset.len()
        );
    }
    let mut points = Vec::new();
    let mut summary = csv::Writer::from_writer(create(&run.output("metrics_summary.csv"))?);
    summary.write_record(["horizon", "n_products", "wape", "mae", "ts", "erp"])?;
    for &h in &horizons {
        let report = MetricsReport::compute(&actual, &predicted, &categories, h, &ErpOptions::default())?;
        report.write_csv(create(&run.output(&format!("metrics_h{h}.csv")))?)?;
        write_json(&run.output(&format!("metrics_h{h}.json")), &report)?;
        let m = &report.overall;
        summary.write_record([
            h.to_string(),
            m.n_products.to_string(),
            m.wape.map(|w| w.to_string()).unwrap_or_default(),
            m.mae.to_string(),
            m.ts.to_string(),
            m.erp.to_string(),
        ])?;
        if let Some(w) = m.wape {
            points.push((h as f64, w));
            log::info!("horizon {h}: WAPE {w:.4} MAE {:.3} TS {:.3} ERP {:.3}", m.mae, m.ts, m.erp);
        }
    }
    summary.flush()?;
    let svg = line_chart(
        "WAPE by forecast horizon",
        "horizon (weeks)",
        "WAPE",
        &[Series {
            label: "forecast",
            points,
        }],
    );
    std::fs::write(run.output("wape_vs_horizon.svg"), svg)?;
    Ok(())
}

fn forecast(dir: &Path, model_dir: &Path, test_size: usize, run: &mut RunDir) -> CliResult<()> {
    let dataset = select(load_dataset(dir, run)?, test_size)?;
    let model = load_model(model_dir, run)?;
    let results = model_forecasts(&model, &dataset)?;
    table_of(&results).write_csv(create(&run.output(FORECASTS_FILE))?)?;
    write_json(&run.output("forecasts.json"), &results)?;
    log::info!("forecast {} products", results.len());
    Ok(())
}

fn analyze(dir: &Path, model_dir: Option<&Path>, trend_len: usize, test_size: usize, run: &mut RunDir) -> CliResult<()> {
    let dataset = load_dataset(dir, run)?;
    let analysis = analyze_correlations(&dataset, trend_len)?;
    write_records_csv(&analysis.records, create(&run.output("correlations.csv"))?)?;
    write_json(&run.output("correlation_summary.json"), &analysis.summary)?;
    analysis
        .summary
        .strongest_lag_buckets
        .write_csv(create(&run.output("correlation_lag_buckets.csv"))?)?;
    log::info!(
        "{} of {} products stationary; {:.1}% of coefficients significant; modal lag bucket {:?}",
        analysis.summary.n_stationary,
        analysis.summary.n_products,
        100.0 * analysis.summary.fraction_significant,
        analysis.summary.strongest_lag_buckets.modal_bucket
    );
    let Some(model_dir) = model_dir else {
        return Ok(());
    };
    let model = load_model(model_dir, run)?;
    if !model.config().use_encoder {
        return Err(CliError::usage("the model has no trend encoder, so no attention to analyze"));
    }
    let subset = select(dataset, test_size)?;
    let results = model_forecasts(&model, &subset)?;
    let mut w = csv::Writer::from_writer(create(&run.output("attention_lags.csv"))?);
    w.write_record(["product_id", "lag"])?;
    let mut lags = Vec::with_capacity(results.len());
    for r in &results {
        let att = r.cross_attention.as_ref().expect("encoder models return attention");
        let lag = argmax_time(&att.weights, att.trend_len)? as i32 - att.trend_len as i32;
        lags.push(lag);
        w.write_record([r.product_id.clone(), lag.to_string()])?;
    }
    w.flush()?;
    let report = LagBucketReport::from_lags(&lags);
    report.write_csv(create(&run.output("attention_lag_buckets.csv"))?)?;
    write_json(&run.output("attention_lag_buckets.json"), &report)?;
    log::info!("attention modal lag bucket {:?}", report.modal_bucket);
    Ok(())
}

fn first_order(dir: &Path, methods: Vec<(String, PathBuf)>, unit_cost: f64, weeks: usize, run: &mut RunDir) -> CliResult<()> {
    let dataset = load_dataset(dir, run)?;
    let mut tables = Vec::new();
    for (name, path) in &methods {
        tables.push((name.clone(), read_table(path, run)?));
    }
    let ids: BTreeSet<&String> = tables[0].1.series.keys().collect();
    for (name, t) in &tables {
        if t.series.keys().collect::<BTreeSet<_>>() != ids {
            return Err(CliError::data(format!(
                "{name} forecasts a different product set than {}",
                tables[0].0
            )));
        }
        if t.horizon().unwrap_or(0) < weeks {
            return Err(CliError::data(format!("{name} forecasts fewer than {weeks} weeks")));
        }
    }
    // the policy needs a previous season; products without one drop out of every row
    let mut policy: BTreeMap<&str, f64> = BTreeMap::new();
    for id in &ids {
        let p = dataset
            .get(id)
            .ok_or_else(|| CliError::data(format!("forecast for unknown product {id:?}")))?;
        let history = previous_season_products(&dataset.products, &p.season);
        if history.is_empty() {
            log::warn!("{id}: no previous-season products, excluded from the comparison");
            continue;
        }
        policy.insert(id.as_str(), sixty_percent_policy(p, &history)?.quantity);
    }
    if policy.is_empty() {
        return Err(CliError::data("no forecast product has a previous season to compare against"));
    }
    let kept: Vec<&str> = policy.keys().copied().collect();
    let actuals: Vec<Vec<f64>> = kept
        .iter()
        .map(|id| dataset.get(id).expect("checked above").sales.to_vec())
        .collect();
    let mut reports = Vec::new();
    for (name, t) in &tables {
        let f: Vec<Vec<f64>> = kept.iter().map(|id| t.get(id).expect("same ids").to_vec()).collect();
        reports.push(first_order_error(name, &kept, &f, &actuals, weeks, unit_cost)?);
    }
    let cases: Vec<OrderCase> = kept
        .iter()
        .zip(&actuals)
        .map(|(id, a)| OrderCase {
            product_id: id,
            ordered: policy[id],
            actual: a,
        })
        .collect();
    reports.push(method_report(POLICY_METHOD, &cases, weeks, unit_cost)?);
    let report = FirstOrderReport {
        weeks,
        unit_cost,
        methods: reports,
    };
    report.write_json(create(&run.output("first_order.json"))?)?;
    report.write_summary_csv(create(&run.output("first_order_summary.csv"))?)?;
    report.write_products_csv(create(&run.output("first_order_products.csv"))?)?;
    for m in &report.methods {
        log::info!(
            "{}: mean error {:.2} units, ${:.0} total",
            m.method,
            m.mean_abs_error,
            m.dollar_discrepancy
        );
    }
    Ok(())
}

fn knn(dir: &Path, test_size: usize, mode: KnnMode, k: usize, weighting: Weighting, run: &mut RunDir) -> CliResult<()> {
    let dataset = load_dataset(dir, run)?;
    let (history, queries) = dataset.split(test_size).map_err(|e| CliError::usage(e.to_string()))?;
    if k > history.len() {
        return Err(CliError::usage(format!("k = {k} exceeds the {} indexed products", history.len())));
    }
    let image_dim = match mode {
        KnnMode::Attribute => 0,
        _ => history.products[0]
            .image_features
            .as_ref()
            .map(Vec::len)
            .ok_or_else(|| CliError::data("image kNN needs image features (features/<id>.bin)"))?,
    };
    let featurizer = Featurizer {
        mode,
        vocabulary: dataset.vocabulary.clone(),
        image_provider: ProviderSpec::Product,
        image_dim,
    };
    let index = NeighborIndex::build(&history.products, featurizer)?;
    index.write_json(create(&run.output("knn_index.json"))?)?;
    let forecasts = index.forecast_all(&queries.products, k, weighting)?;
    let mut table = ForecastTable::default();
    let mut w = csv::Writer::from_writer(create(&run.output("neighbors.csv"))?);
    w.write_record(["product_id", "rank", "neighbor_id", "distance", "weight"])?;
    for (p, f) in queries.products.iter().zip(&forecasts) {
        table.insert(p.id.clone(), f.forecast.clone());
        for (rank, n) in f.neighbors.iter().enumerate() {
            w.write_record([
                p.id.clone(),
                (rank + 1).to_string(),
                n.id.clone(),
                n.distance.to_string(),
                n.weight.to_string(),
            ])?;
        }
    }
    w.flush()?;
    table.write_csv(create(&run.output(FORECASTS_FILE))?)?;
    log::info!("{} kNN forecasts from {} indexed products", forecasts.len(), index.len());
    Ok(())
}
