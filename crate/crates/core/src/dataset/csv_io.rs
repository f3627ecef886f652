//! CSV ingestion and emission.
//!
//! * `products.csv`: `id,category,color,fabric,release_date,season`
//!   (`release_date` is ISO-8601 `YYYY-MM-DD`)
//! * `sales.csv`: `id,week_index,quantity` with `week_index` in 0..=11
//! * `trends.csv`: `id,attribute,week_index,value,sample_index` with
//!   `attribute` one of `category|color|fabric`, `week_index` in 0..=51
//!   (0 is 52 weeks before release), `value` on the 0..100 scale. Rows sharing
//!   `(id, attribute)` but differing in `sample_index` are averaged.
//!
//! Image features live in an optional directory as `<id>.bin`, a raw
//! little-endian `f32` array.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{
    average_trend_samples, Attribute, Dataset, Product, TrendSeries, Vocabulary, SALES_WEEKS,
    TREND_WEEKS,
};
use crate::error::{Error, Result};

pub const PRODUCTS_FILE: &str = "products.csv";
pub const SALES_FILE: &str = "sales.csv";
pub const TRENDS_FILE: &str = "trends.csv";
pub const FEATURES_DIR: &str = "features";

#[derive(Debug, Clone, Default)]
pub struct IngestOptions {
    /// Closed vocabulary; values outside it are rejected. Inferred when `None`.
    pub vocabulary: Option<Vocabulary>,
    pub features_dir: Option<PathBuf>,
}

/// A product (or orphan row) dropped during ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub product_id: String,
    pub file: &'static str,
    /// 1-based line number in `file`.
    pub line: u64,
    pub reason: String,
}

impl std::fmt::Display for Rejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}:{}: product {:?} rejected: {}",
            self.file, self.line, self.product_id, self.reason
        )
    }
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub dataset: Dataset,
    pub rejections: Vec<Rejection>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ProductRow {
    id: String,
    category: String,
    color: String,
    fabric: String,
    release_date: String,
    season: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct SalesRow {
    id: String,
    week_index: i64,
    quantity: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct TrendRow {
    id: String,
    attribute: String,
    week_index: i64,
    value: f64,
    sample_index: i64,
}

fn rows<R: Read, T: for<'de> Deserialize<'de>>(
    reader: R,
    file: &'static str,
) -> Result<Vec<(u64, T)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let row: T = rec
            .deserialize(Some(&headers))
            .map_err(|e| Error::Schema(format!("{file}:{line}: {e}")))?;
        out.push((line, row));
    }
    Ok(out)
}

struct Pending {
    line: u64,
    row: ProductRow,
    date: NaiveDate,
    sales: [Option<f64>; SALES_WEEKS],
    // attribute -> sample_index -> week values
    trends: [BTreeMap<i64, Vec<Option<f64>>>; 3],
    problem: Option<(&'static str, u64, String)>,
}

impl Pending {
    fn reject(&mut self, file: &'static str, line: u64, reason: String) {
        if self.problem.is_none() {
            self.problem = Some((file, line, reason));
        }
    }
}

/// Parses and validates the three CSV tables. Malformed CSV (unparseable
/// fields) is an error; rows that parse but violate a product invariant cause
/// that product to be rejected and reported.
pub fn ingest<P: Read, S: Read, T: Read>(
    products: P,
    sales: S,
    trends: T,
    opts: &IngestOptions,
) -> Result<Ingested> {
    let mut rejections = Vec::new();
    let mut pending: Vec<Pending> = Vec::new();
    let mut by_id: HashMap<String, usize> = HashMap::new();

    for (line, row) in rows::<_, ProductRow>(products, PRODUCTS_FILE)? {
        let reject = |reason: String| Rejection {
            product_id: row.id.clone(),
            file: PRODUCTS_FILE,
            line,
            reason,
        };
        if row.id.is_empty() {
            rejections.push(reject("empty id".into()));
            continue;
        }
        if by_id.contains_key(&row.id) {
            rejections.push(reject("duplicate id".into()));
            continue;
        }
        let date = match NaiveDate::parse_from_str(&row.release_date, "%Y-%m-%d") {
            Ok(d) => d,
            Err(e) => {
                rejections.push(reject(format!(
                    "release_date {:?} is not ISO-8601: {e}",
                    row.release_date
                )));
                continue;
            }
        };
        if let Some(vocab) = &opts.vocabulary {
            let unknown = Attribute::ALL.iter().find_map(|&a| {
                let value = match a {
                    Attribute::Category => &row.category,
                    Attribute::Color => &row.color,
                    Attribute::Fabric => &row.fabric,
                };
                (!vocab.values(a).contains(value)).then(|| {
                    let hint = vocab
                        .nearest(a, value)
                        .map(|n| format!(" (did you mean {n:?}?)"))
                        .unwrap_or_default();
                    format!("unknown {a} {value:?}{hint}")
                })
            });
            if let Some(reason) = unknown {
                rejections.push(reject(reason));
                continue;
            }
        }
        by_id.insert(row.id.clone(), pending.len());
        pending.push(Pending {
            line,
            row,
            date,
            sales: [None; SALES_WEEKS],
            trends: Default::default(),
            problem: None,
        });
    }

    for (line, row) in rows::<_, SalesRow>(sales, SALES_FILE)? {
        let Some(&idx) = by_id.get(&row.id) else {
            rejections.push(Rejection {
                product_id: row.id,
                file: SALES_FILE,
                line,
                reason: "no such product in products.csv".into(),
            });
            continue;
        };
        let p = &mut pending[idx];
        if !(0..SALES_WEEKS as i64).contains(&row.week_index) {
            p.reject(
                SALES_FILE,
                line,
                format!("week_index {} outside 0..={}", row.week_index, SALES_WEEKS - 1),
            );
            continue;
        }
        if !row.quantity.is_finite() || row.quantity < 0.0 {
            p.reject(
                SALES_FILE,
                line,
                format!("quantity {} must be finite and nonnegative", row.quantity),
            );
            continue;
        }
        let slot = &mut p.sales[row.week_index as usize];
        if slot.is_some() {
            p.reject(
                SALES_FILE,
                line,
                format!("duplicate sales week {}", row.week_index),
            );
            continue;
        }
        *slot = Some(row.quantity);
    }

    for (line, row) in rows::<_, TrendRow>(trends, TRENDS_FILE)? {
        let Some(&idx) = by_id.get(&row.id) else {
            rejections.push(Rejection {
                product_id: row.id,
                file: TRENDS_FILE,
                line,
                reason: "no such product in products.csv".into(),
            });
            continue;
        };
        let p = &mut pending[idx];
        let Some(attr) = Attribute::parse(&row.attribute) else {
            p.reject(
                TRENDS_FILE,
                line,
                format!("unknown trend attribute {:?}", row.attribute),
            );
            continue;
        };
        if !(0..TREND_WEEKS as i64).contains(&row.week_index) {
            p.reject(
                TRENDS_FILE,
                line,
                format!("week_index {} outside 0..={}", row.week_index, TREND_WEEKS - 1),
            );
            continue;
        }
        if !(0.0..=100.0).contains(&row.value) {
            p.reject(
                TRENDS_FILE,
                line,
                format!("trend value {} outside [0, 100]", row.value),
            );
            continue;
        }
        if row.sample_index < 0 {
            p.reject(
                TRENDS_FILE,
                line,
                format!("negative sample_index {}", row.sample_index),
            );
            continue;
        }
        let sample = p.trends[attr.index()]
            .entry(row.sample_index)
            .or_insert_with(|| vec![None; TREND_WEEKS]);
        let slot = &mut sample[row.week_index as usize];
        if slot.is_some() {
            p.reject(
                TRENDS_FILE,
                line,
                format!(
                    "duplicate {attr} trend week {} sample {}",
                    row.week_index, row.sample_index
                ),
            );
            continue;
        }
        *slot = Some(row.value);
    }

    let mut products = Vec::with_capacity(pending.len());
    let mut feature_dim: Option<usize> = None;
    for p in pending {
        match finish(p, opts, &mut feature_dim) {
            Ok(product) => products.push(product),
            Err(r) => rejections.push(r),
        }
    }

    let vocabulary = match &opts.vocabulary {
        Some(v) => v.clone(),
        None => Vocabulary::from_products(&products),
    };
    Ok(Ingested {
        dataset: Dataset {
            products,
            vocabulary,
        },
        rejections,
    })
}

fn finish(
    p: Pending,
    opts: &IngestOptions,
    feature_dim: &mut Option<usize>,
) -> std::result::Result<Product, Rejection> {
    let reject = |file, line, reason| Rejection {
        product_id: p.row.id.clone(),
        file,
        line,
        reason,
    };
    if let Some((file, line, reason)) = &p.problem {
        return Err(reject(file, *line, reason.clone()));
    }
    let present = p.sales.iter().filter(|s| s.is_some()).count();
    if present != SALES_WEEKS {
        let missing: Vec<usize> = (0..SALES_WEEKS).filter(|&w| p.sales[w].is_none()).collect();
        return Err(reject(
            PRODUCTS_FILE,
            p.line,
            format!("has {present} of {SALES_WEEKS} sales weeks (missing {missing:?})"),
        ));
    }
    let sales = p.sales.map(|s| s.expect("checked"));

    let mut trends = Vec::with_capacity(3);
    for attr in Attribute::ALL {
        let samples = &p.trends[attr.index()];
        if samples.is_empty() {
            return Err(reject(
                PRODUCTS_FILE,
                p.line,
                format!("no {attr} trend rows"),
            ));
        }
        let mut full = Vec::with_capacity(samples.len());
        for (sample_idx, weeks) in samples {
            let missing: Vec<usize> = (0..TREND_WEEKS).filter(|&w| weeks[w].is_none()).collect();
            if !missing.is_empty() {
                return Err(reject(
                    PRODUCTS_FILE,
                    p.line,
                    format!("{attr} trend sample {sample_idx} is missing weeks {missing:?}"),
                ));
            }
            full.push(weeks.iter().map(|w| w.expect("checked")).collect::<Vec<_>>());
        }
        let series = average_trend_samples(attr, &full)
            .map_err(|e| reject(PRODUCTS_FILE, p.line, e.to_string()))?;
        trends.push(series);
    }
    let trends: [TrendSeries; 3] = trends.try_into().expect("three attributes");

    let image_features = match &opts.features_dir {
        None => None,
        Some(dir) => {
            let path = dir.join(format!("{}.bin", p.row.id));
            let feats = read_feature_file(&path)
                .map_err(|e| reject(PRODUCTS_FILE, p.line, format!("{}: {e}", path.display())))?;
            match feature_dim {
                Some(d) if *d != feats.len() => {
                    return Err(reject(
                        PRODUCTS_FILE,
                        p.line,
                        format!("feature vector has {} values, expected {d}", feats.len()),
                    ))
                }
                _ => *feature_dim = Some(feats.len()),
            }
            Some(feats)
        }
    };

    Ok(Product {
        id: p.row.id,
        category: p.row.category,
        color: p.row.color,
        fabric: p.row.fabric,
        release_date: p.date,
        season: p.row.season,
        sales,
        trends,
        image_features,
    })
}

/// Ingests `products.csv`, `sales.csv` and `trends.csv` from `dir`.
pub fn ingest_dir(dir: &Path, opts: &IngestOptions) -> Result<Ingested> {
    let open = |name: &str| {
        let path = dir.join(name);
        std::fs::File::open(&path)
            .map(std::io::BufReader::new)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
    };
    ingest(open(PRODUCTS_FILE)?, open(SALES_FILE)?, open(TRENDS_FILE)?, opts)
}

/// Decodes a raw little-endian `f32` vector.
pub fn decode_features(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.is_empty() || bytes.len() % 4 != 0 {
        return Err(Error::Schema(format!(
            "feature file of {} bytes is not a nonempty f32 array",
            bytes.len()
        )));
    }
    let v: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Schema("non-finite feature value".into()));
    }
    Ok(v)
}

pub fn read_feature_file(path: &Path) -> Result<Vec<f64>> {
    decode_features(&std::fs::read(path)?)
}

/// Values are narrowed to `f32`.
pub fn write_feature_file(path: &Path, values: &[f64]) -> Result<()> {
    let bytes: Vec<u8> = values
        .iter()
        .flat_map(|&v| (v as f32).to_le_bytes())
        .collect();
    std::fs::write(path, bytes)?;
    Ok(())
}

/// A 0..100 value whose ingestion (`value / 100`) reproduces `x` exactly.
/// Every value produced by ingestion has one; others get the nearest guess.
fn percent_value(x: f64) -> f64 {
    let y = x * 100.0;
    if y / 100.0 == x {
        return y;
    }
    let (mut lo, mut hi) = (y, y);
    for _ in 0..8 {
        lo = lo.next_down();
        hi = hi.next_up();
        if lo / 100.0 == x {
            return lo;
        }
        if hi / 100.0 == x {
            return hi;
        }
    }
    y
}

/// Writes the three tables. Each trend is written as a single sample.
pub fn emit<P: Write, S: Write, T: Write>(
    dataset: &Dataset,
    products: P,
    sales: S,
    trends: T,
) -> Result<()> {
    let mut pw = csv::Writer::from_writer(products);
    let mut sw = csv::Writer::from_writer(sales);
    let mut tw = csv::Writer::from_writer(trends);
    // headers must exist even with zero rows
    pw.write_record(["id", "category", "color", "fabric", "release_date", "season"])?;
    sw.write_record(["id", "week_index", "quantity"])?;
    tw.write_record(["id", "attribute", "week_index", "value", "sample_index"])?;
    for p in &dataset.products {
        pw.write_record([
            p.id.as_str(),
            &p.category,
            &p.color,
            &p.fabric,
            &p.release_date.format("%Y-%m-%d").to_string(),
            &p.season,
        ])?;
        for (w, q) in p.sales.iter().enumerate() {
            sw.write_record([p.id.clone(), w.to_string(), q.to_string()])?;
        }
        for t in &p.trends {
            for (w, &v) in t.values().iter().enumerate() {
                tw.write_record([
                    p.id.clone(),
                    t.attribute.to_string(),
                    w.to_string(),
                    percent_value(v).to_string(),
                    "0".to_string(),
                ])?;
            }
        }
    }
    pw.flush()?;
    sw.flush()?;
    tw.flush()?;
    Ok(())
}

/// Writes the tables into `dir`, plus `features/<id>.bin` for products with
/// image features.
pub fn emit_to_dir(dataset: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let create = |name: &str| std::fs::File::create(dir.join(name)).map(std::io::BufWriter::new);
    emit(
        dataset,
        create(PRODUCTS_FILE)?,
        create(SALES_FILE)?,
        create(TRENDS_FILE)?,
    )?;
    if dataset.products.iter().any(|p| p.image_features.is_some()) {
        let fdir = dir.join(FEATURES_DIR);
        std::fs::create_dir_all(&fdir)?;
        for p in &dataset.products {
            if let Some(f) = &p.image_features {
                write_feature_file(&fdir.join(format!("{}.bin", p.id)), f)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::tests::toy_product;

    const PRODUCTS: &str = "id,category,color,fabric,release_date,season\n\
        p1,culottes,blue,cotton,2019-02-04,SS19\n\
        p2,long sleeve,red,lace,2018-09-10,AW18\n";

    fn sales_csv(weeks_p2: usize) -> String {
        let mut s = String::from("id,week_index,quantity\n");
        for w in 0..12 {
            s += &format!("p1,{w},{}\n", 10 + w);
        }
        for w in 0..weeks_p2 {
            s += &format!("p2,{w},{}.5\n", w);
        }
        s
    }

    fn trends_csv() -> String {
        let mut s = String::from("id,attribute,week_index,value,sample_index\n");
        for id in ["p1", "p2"] {
            for a in ["category", "color", "fabric"] {
                for w in 0..52 {
                    s += &format!("{id},{a},{w},{},0\n", w % 10 * 10);
                    s += &format!("{id},{a},{w},{},1\n", w % 10 * 10 + 10);
                }
            }
        }
        s
    }

    fn run(products: &str, sales: &str, trends: &str, opts: &IngestOptions) -> Result<Ingested> {
        ingest(products.as_bytes(), sales.as_bytes(), trends.as_bytes(), opts)
    }

    #[test]
    fn empty_files_give_empty_dataset() {
        let out = run("", "", "", &IngestOptions::default()).unwrap();
        assert!(out.dataset.is_empty());
        assert!(out.rejections.is_empty());
    }

    #[test]
    fn two_product_fixture_parses_exactly() {
        let out = run(PRODUCTS, &sales_csv(12), &trends_csv(), &IngestOptions::default()).unwrap();
        assert!(out.rejections.is_empty(), "{:?}", out.rejections);
        let ds = out.dataset;
        assert_eq!(ds.len(), 2);
        let p1 = &ds.products[0];
        assert_eq!(p1.id, "p1");
        assert_eq!(p1.category, "culottes");
        assert_eq!(p1.release_date, NaiveDate::from_ymd_opt(2019, 2, 4).unwrap());
        assert_eq!(p1.season, "SS19");
        let expected: Vec<f64> = (0..12).map(|w| f64::from(10 + w)).collect();
        assert_eq!(p1.sales.to_vec(), expected);
        let p2 = &ds.products[1];
        assert_eq!(p2.sales[3], 3.5);
        // two samples at v and v+10 average to (v+5)/100
        let t = p2.trend(Attribute::Color);
        assert_eq!(t.source_samples, 2);
        assert_eq!(t.values()[13], 0.35);
        assert!(ds.vocabulary.fabrics.contains("lace"));
    }

    #[test]
    fn eleven_sales_weeks_rejected_with_line() {
        let out = run(PRODUCTS, &sales_csv(11), &trends_csv(), &IngestOptions::default()).unwrap();
        assert_eq!(out.dataset.len(), 1);
        assert_eq!(out.rejections.len(), 1);
        let r = &out.rejections[0];
        assert_eq!(r.product_id, "p2");
        assert_eq!(r.line, 3);
        assert!(r.reason.contains("11 of 12"), "{r}");
    }

    #[test]
    fn missing_trend_week_rejects_product() {
        let trends: String = trends_csv()
            .lines()
            .filter(|l| !l.starts_with("p1,fabric,7,"))
            .map(|l| format!("{l}\n"))
            .collect();
        let out = run(PRODUCTS, &sales_csv(12), &trends, &IngestOptions::default()).unwrap();
        assert_eq!(out.dataset.len(), 1);
        assert!(out.rejections[0].reason.contains("missing weeks [7]"));
    }

    #[test]
    fn unknown_vocab_gets_hint() {
        let mut vocab = Vocabulary::default();
        for (a, v) in [
            (Attribute::Category, "culottes"),
            (Attribute::Category, "long sleeve"),
            (Attribute::Color, "blue"),
            (Attribute::Color, "red"),
            (Attribute::Fabric, "cotton"),
            (Attribute::Fabric, "lace"),
        ] {
            vocab.insert(a, v);
        }
        let products = PRODUCTS.replace("p2,long sleeve", "p2,long sleeves");
        let opts = IngestOptions {
            vocabulary: Some(vocab),
            ..Default::default()
        };
        let out = run(&products, &sales_csv(12), &trends_csv(), &opts).unwrap();
        assert_eq!(out.dataset.len(), 1);
        let r = &out.rejections[0];
        assert!(r.reason.contains("did you mean \"long sleeve\""), "{r}");
    }

    #[test]
    fn duplicate_trend_row_rejected() {
        let mut trends = trends_csv();
        trends += "p1,color,0,5,0\n";
        let out = run(PRODUCTS, &sales_csv(12), &trends, &IngestOptions::default()).unwrap();
        assert_eq!(out.dataset.len(), 1);
        assert!(out.rejections[0].reason.contains("duplicate"));
    }

    #[test]
    fn malformed_number_is_an_error() {
        let sales = sales_csv(12).replace("p1,3,13", "p1,3,thirteen");
        let err = run(PRODUCTS, &sales, &trends_csv(), &IngestOptions::default()).unwrap_err();
        assert!(err.to_string().contains("sales.csv:5"), "{err}");
    }

    #[test]
    fn percent_value_round_trips() {
        for y in [0.0, 100.0, 7.0, 29.0, 57.0, 100.0 / 3.0, 12.345_678_9] {
            let x = y / 100.0;
            assert_eq!(percent_value(x) / 100.0, x, "{x}");
        }
    }

    #[test]
    fn emit_then_ingest_is_identity() {
        let mut p = toy_product("x", "2019-03-01");
        p.sales = [0.1, 2.5, 1e-7, 3.0, 4.25, 1.0 / 3.0, 0.0, 7.0, 8.0, 9.0, 10.0, 11.0];
        let ds = Dataset::new(vec![p]);
        let (mut a, mut b, mut c) = (Vec::new(), Vec::new(), Vec::new());
        emit(&ds, &mut a, &mut b, &mut c).unwrap();
        let back = ingest(&a[..], &b[..], &c[..], &IngestOptions::default()).unwrap();
        assert!(back.rejections.is_empty());
        assert_eq!(back.dataset, ds);
    }

    #[test]
    fn feature_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.bin");
        let v = vec![0.5, -1.25, 3.0];
        write_feature_file(&path, &v).unwrap();
        assert_eq!(read_feature_file(&path).unwrap(), v);
        assert!(decode_features(&[0, 0, 0]).is_err());
    }
}
