//! Record ingestion: CSV parsing, deterministic splitting, text
//! serialization, a line-delimited JSON cache, and synthetic toy corpora.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One structured address record. Strings are kept exactly as read;
/// coordinates are required (rows without them are dropped at ingest).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AddressRecord {
    pub lat: f64,
    pub long: f64,
    #[serde(default)]
    pub number: String,
    #[serde(default)]
    pub street: String,
    #[serde(default)]
    pub unit: String,
    #[serde(default)]
    pub city: String,
    #[serde(default)]
    pub district: String,
    #[serde(default)]
    pub region: String,
    #[serde(default)]
    pub postcode: String,
}

impl AddressRecord {
    /// String field accessor by schema field name.
    pub fn string_field(&self, name: &str) -> Result<&str> {
        Ok(match name {
            "number" => &self.number,
            "street" => &self.street,
            "unit" => &self.unit,
            "city" => &self.city,
            "district" => &self.district,
            "region" => &self.region,
            "postcode" => &self.postcode,
            _ => {
                return Err(Error::UnknownField {
                    field: name.to_string(),
                })
            }
        })
    }

    pub fn set_string_field(&mut self, name: &str, value: String) -> Result<()> {
        match name {
            "number" => self.number = value,
            "street" => self.street = value,
            "unit" => self.unit = value,
            "city" => self.city = value,
            "district" => self.district = value,
            "region" => self.region = value,
            "postcode" => self.postcode = value,
            _ => {
                return Err(Error::UnknownField {
                    field: name.to_string(),
                })
            }
        }
        Ok(())
    }

    /// Scalar field accessor by schema field name.
    pub fn scalar_field(&self, name: &str) -> Result<f64> {
        Ok(match name {
            "lat" => self.lat,
            "long" => self.long,
            _ => {
                return Err(Error::UnknownField {
                    field: name.to_string(),
                })
            }
        })
    }

    pub fn set_scalar_field(&mut self, name: &str, value: f64) -> Result<()> {
        match name {
            "lat" => self.lat = value,
            "long" => self.long = value,
            _ => {
                return Err(Error::UnknownField {
                    field: name.to_string(),
                })
            }
        }
        Ok(())
    }
}

/// Maps schema field names to CSV header names. Defaults follow the
/// OpenAddresses statewide layout.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMap {
    pub lat: String,
    pub long: String,
    pub number: String,
    pub street: String,
    pub unit: String,
    pub city: String,
    pub district: String,
    pub region: String,
    pub postcode: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            lat: "LAT".into(),
            long: "LON".into(),
            number: "NUMBER".into(),
            street: "STREET".into(),
            unit: "UNIT".into(),
            city: "CITY".into(),
            district: "DISTRICT".into(),
            region: "REGION".into(),
            postcode: "POSTCODE".into(),
        }
    }
}

/// Ingest outcome: retained records plus a count of rows skipped for
/// unparseable coordinates.
#[derive(Debug)]
pub struct ParsedCsv {
    pub records: Vec<AddressRecord>,
    pub skipped_rows: usize,
}

/// Parses an OpenAddresses-style CSV. Rows whose coordinate columns do
/// not parse are skipped and counted.
pub fn parse_csv(path: &Path, columns: &ColumnMap) -> Result<ParsedCsv> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let idx = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let lat_i = idx(&columns.lat)?;
    let long_i = idx(&columns.long)?;
    let string_cols: Vec<(&'static str, usize)> = vec![
        ("number", idx(&columns.number)?),
        ("street", idx(&columns.street)?),
        ("unit", idx(&columns.unit)?),
        ("city", idx(&columns.city)?),
        ("district", idx(&columns.district)?),
        ("region", idx(&columns.region)?),
        ("postcode", idx(&columns.postcode)?),
    ];

    let mut records = Vec::new();
    let mut skipped = 0usize;
    for row in reader.records() {
        let row = row?;
        let lat = row.get(lat_i).and_then(|s| s.trim().parse::<f64>().ok());
        let long = row.get(long_i).and_then(|s| s.trim().parse::<f64>().ok());
        let (Some(lat), Some(long)) = (lat, long) else {
            skipped += 1;
            continue;
        };
        if !lat.is_finite() || !long.is_finite() {
            skipped += 1;
            continue;
        }
        let mut rec = AddressRecord {
            lat,
            long,
            ..Default::default()
        };
        for (field, i) in &string_cols {
            rec.set_string_field(field, row.get(*i).unwrap_or("").to_string())?;
        }
        records.push(rec);
    }
    Ok(ParsedCsv {
        records,
        skipped_rows: skipped,
    })
}

/// Train/test/validation partition of a record list.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<AddressRecord>,
    pub test: Vec<AddressRecord>,
    pub validation: Vec<AddressRecord>,
    pub seed: u64,
}

// SplitMix64: platform-stable mixing for the split assignment.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Assigns each record independently to train/test/validation with
/// probabilities 0.8/0.1/0.1, keyed by `(record index, seed)`.
pub fn split_8_1_1(records: Vec<AddressRecord>, seed: u64) -> DatasetSplit {
    let mut split = DatasetSplit {
        train: Vec::new(),
        test: Vec::new(),
        validation: Vec::new(),
        seed,
    };
    for (i, rec) in records.into_iter().enumerate() {
        let h = splitmix64(seed ^ splitmix64(i as u64));
        let u = (h >> 11) as f64 / (1u64 << 53) as f64;
        if u < 0.8 {
            split.train.push(rec);
        } else if u < 0.9 {
            split.test.push(rec);
        } else {
            split.validation.push(rec);
        }
    }
    split
}

/// Comma-separated text form used by the text-variant model: six values
/// `number,street,city,postcode,lat,long`, coordinates fixed to five
/// decimal places. Always-empty fields are omitted from the layout.
pub fn serialize_text(record: &AddressRecord) -> Result<String> {
    for (name, value) in [
        ("number", &record.number),
        ("street", &record.street),
        ("city", &record.city),
        ("postcode", &record.postcode),
    ] {
        if value.contains(',') {
            return Err(Error::CommaInField {
                field: name.to_string(),
            });
        }
    }
    Ok(format!(
        "{},{},{},{},{:.5},{:.5}",
        record.number, record.street, record.city, record.postcode, record.lat, record.long
    ))
}

/// Lexicon used by the toy generator.
const TOY_STREETS: &[&str] = &[
    "MAIN ST", "SECOND ST", "HARTS RD", "MAPLE AVE", "LIME KILN RD", "RIVER RD", "CHURCH ST",
    "SCHOOL ST", "HILL RD", "PARK AVE", "FOREST DR", "LAKE VIEW RD", "MILL ST", "PLEASANT ST",
    "HIGH ST", "DEPOT ST", "ELM ST", "PINE DR", "SPRING ST", "VALLEY RD",
];

const TOY_CITIES: &[&str] = &[
    "BARRE", "GROTON", "TOPSHAM", "CALAIS", "MONTPELIER", "NEWPORT", "RUTLAND", "STOWE",
    "HARTFORD", "WINOOSKI", "BRANDON", "MILTON",
];

/// Synthetic desk-scale corpus: per-zip 2-D Gaussian coordinate clouds
/// plus street names drawn from a small per-zip lexicon.
pub fn make_toy_dataset(n_records: usize, n_zips: usize, seed: u64) -> Result<Vec<AddressRecord>> {
    if n_zips < 2 {
        return Err(Error::Config("toy dataset needs at least 2 zips".into()));
    }
    if n_records < 10 * n_zips {
        return Err(Error::Config(format!(
            "toy dataset needs at least 10 records per zip ({} < {})",
            n_records,
            10 * n_zips
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    struct Zip {
        code: String,
        city: &'static str,
        streets: Vec<&'static str>,
        mean: [f64; 2],
        // lower-triangular factor of the coordinate covariance
        chol: [[f64; 2]; 2],
    }

    let mut zips = Vec::with_capacity(n_zips);
    for z in 0..n_zips {
        let code = format!("{:05}", 5000 + z * 7 + 1);
        let city = TOY_CITIES[z % TOY_CITIES.len()];
        // 4-6 streets per zip, overlapping across zips
        let n_streets = 4 + (z % 3);
        let start = (z * 3) % TOY_STREETS.len();
        let streets: Vec<&'static str> = (0..n_streets)
            .map(|k| TOY_STREETS[(start + k) % TOY_STREETS.len()])
            .collect();
        let mean = [
            43.0 + rng.gen::<f64>() * 2.0,
            -73.4 + rng.gen::<f64>() * 1.6,
        ];
        // random SPD covariance via a lower-triangular factor; clouds are
        // kept wide enough relative to the state-level spread that a
        // desk-scale model can land inside them
        let sx = 0.05 + rng.gen::<f64>() * 0.10;
        let sy = 0.05 + rng.gen::<f64>() * 0.10;
        let corr: f64 = rng.gen::<f64>() * 1.2 - 0.6;
        let chol = [[sx, 0.0], [corr * sy, sy * (1.0 - corr * corr).sqrt()]];
        zips.push(Zip {
            code,
            city,
            streets,
            mean,
            chol,
        });
    }

    let mut records = Vec::with_capacity(n_records);
    for i in 0..n_records {
        let zip = &zips[i % n_zips];
        let e0: f64 = rng.sample(StandardNormal);
        let e1: f64 = rng.sample(StandardNormal);
        let lat = zip.mean[0] + zip.chol[0][0] * e0;
        let long = zip.mean[1] + zip.chol[1][0] * e0 + zip.chol[1][1] * e1;
        let street = zip.streets[rng.gen_range(0..zip.streets.len())];
        let number = format!("{}", rng.gen_range(1..400));
        records.push(AddressRecord {
            lat,
            long,
            number,
            street: street.to_string(),
            unit: String::new(),
            city: zip.city.to_string(),
            district: String::new(),
            region: String::new(),
            postcode: zip.code.clone(),
        });
    }
    Ok(records)
}

/// Writes records as line-delimited JSON.
pub fn write_ldjson(path: &Path, records: &[AddressRecord]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for rec in records {
        serde_json::to_writer(&mut out, rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads records from line-delimited JSON.
pub fn read_ldjson(path: &Path) -> Result<Vec<AddressRecord>> {
    let file = std::fs::File::open(path)?;
    let mut records = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    Ok(records)
}

/// Writes records back to CSV with the given column mapping (used by the
/// parse/write round-trip checks and the ingest command).
pub fn write_csv(path: &Path, columns: &ColumnMap, records: &[AddressRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        columns.long.as_str(),
        columns.lat.as_str(),
        columns.number.as_str(),
        columns.street.as_str(),
        columns.unit.as_str(),
        columns.city.as_str(),
        columns.district.as_str(),
        columns.region.as_str(),
        columns.postcode.as_str(),
    ])?;
    for r in records {
        w.write_record([
            format!("{}", r.long),
            format!("{}", r.lat),
            r.number.clone(),
            r.street.clone(),
            r.unit.clone(),
            r.city.clone(),
            r.district.clone(),
            r.region.clone(),
            r.postcode.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Distinct street names of a record set.
pub fn street_name_set(records: &[AddressRecord]) -> std::collections::HashSet<String> {
    records.iter().map(|r| r.street.clone()).collect()
}

/// Records grouped by zip code.
pub fn by_zip(records: &[AddressRecord]) -> HashMap<&str, Vec<&AddressRecord>> {
    let mut map: HashMap<&str, Vec<&AddressRecord>> = HashMap::new();
    for r in records {
        map.entry(r.postcode.as_str()).or_default().push(r);
    }
    map
}
