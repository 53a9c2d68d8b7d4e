//! Report-file writers and the matching readers. Every file carries the
//! resolved-config hash: CSVs in a leading `# config_hash=...` comment
//! line, JSON in a `config_hash` field.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::nn::Sample;
use crate::vae::{InterpolationPoint, MetricsRow, Split};

pub fn write_metrics_csv(path: &Path, config_hash: &str, rows: &[MetricsRow]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "# config_hash={config_hash}")?;
    writeln!(out, "step,split,loss,bpc,kl,beta,p_gt,level")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.step, r.split, r.loss, r.bpc, r.kl, r.beta, r.p_gt, r.level
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<(String, Vec<MetricsRow>)> {
    let file = std::fs::File::open(path)?;
    let mut hash = String::new();
    let mut rows = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if let Some(rest) = line.strip_prefix("# config_hash=") {
            hash = rest.to_string();
            continue;
        }
        if line.starts_with('#') || line.starts_with("step,") || line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 8 {
            return Err(Error::Config(format!(
                "metrics csv line {} has {} fields",
                lineno + 1,
                parts.len()
            )));
        }
        let split = match parts[1] {
            "train" => Split::Train,
            "test" => Split::Test,
            "generated" => Split::Generated,
            other => return Err(Error::Config(format!("unknown split `{other}`"))),
        };
        let f = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| Error::Config(format!("bad float `{s}`: {e}")))
        };
        rows.push(MetricsRow {
            step: parts[0]
                .parse()
                .map_err(|e| Error::Config(format!("bad step: {e}")))?,
            split,
            loss: f(parts[2])?,
            bpc: f(parts[3])?,
            kl: f(parts[4])?,
            beta: f(parts[5])?,
            p_gt: f(parts[6])?,
            level: parts[7]
                .parse()
                .map_err(|e| Error::Config(format!("bad level: {e}")))?,
        });
    }
    Ok((hash, rows))
}

/// JSON report with the config hash injected at the top level.
pub fn write_json_report<T: Serialize>(path: &Path, config_hash: &str, body: &T) -> Result<()> {
    let mut value = serde_json::to_value(body)?;
    match value.as_object_mut() {
        Some(map) => {
            map.insert("config_hash".into(), json!(config_hash));
        }
        None => {
            value = json!({ "config_hash": config_hash, "value": value });
        }
    }
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &value)?;
    Ok(())
}

pub fn read_json_report(path: &Path) -> Result<serde_json::Value> {
    let file = std::fs::File::open(path)?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

/// Linear-interpolation quantile of an ascending-sorted slice.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
    }
}

/// Five-number summary plus mean of one round's p-values.
#[derive(Clone, Debug, Serialize)]
pub struct BoxplotRow {
    pub source: String,
    pub round: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

impl BoxplotRow {
    pub fn from_pvalues(source: &str, round: usize, pvalues: &[f64]) -> BoxplotRow {
        let mut sorted = pvalues.to_vec();
        sorted.sort_by(f64::total_cmp);
        BoxplotRow {
            source: source.to_string(),
            round,
            min: sorted[0],
            q1: quantile(&sorted, 0.25),
            median: quantile(&sorted, 0.5),
            q3: quantile(&sorted, 0.75),
            max: *sorted.last().unwrap(),
            mean: pvalues.iter().sum::<f64>() / pvalues.len() as f64,
        }
    }
}

pub fn write_boxplot_csv(path: &Path, config_hash: &str, rows: &[BoxplotRow]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "# config_hash={config_hash}")?;
    writeln!(out, "source,round,min,q1,median,q3,max,mean")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.source, r.round, r.min, r.q1, r.median, r.q3, r.max, r.mean
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_boxplot_csv(path: &Path) -> Result<(String, Vec<(String, usize, Vec<f64>)>)> {
    let file = std::fs::File::open(path)?;
    let mut hash = String::new();
    let mut rows = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if let Some(rest) = line.strip_prefix("# config_hash=") {
            hash = rest.to_string();
            continue;
        }
        if line.starts_with('#') || line.starts_with("source,") || line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        let stats: Vec<f64> = parts[2..]
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| Error::Config(e.to_string())))
            .collect::<Result<_>>()?;
        rows.push((
            parts[0].to_string(),
            parts[1]
                .parse()
                .map_err(|e| Error::Config(format!("bad round: {e}")))?,
            stats,
        ));
    }
    Ok((hash, rows))
}

pub fn write_pvalues_csv(
    path: &Path,
    config_hash: &str,
    rows: &[(String, usize, usize, f64)],
) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "# config_hash={config_hash}")?;
    writeln!(out, "source,round,index,pvalue")?;
    for (source, round, index, p) in rows {
        writeln!(out, "{source},{round},{index},{p}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_membership_csv(
    path: &Path,
    config_hash: &str,
    rows: &[(String, usize, usize, f64)],
) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "# config_hash={config_hash}")?;
    writeln!(out, "source,round,count,proportion")?;
    for (source, round, count, prop) in rows {
        writeln!(out, "{source},{round},{count},{prop}")?;
    }
    out.flush()?;
    Ok(())
}

/// Interpolations as a GeoJSON FeatureCollection: one Point feature per
/// step with the decoded fields as properties.
pub fn write_interpolation_geojson(
    path: &Path,
    config_hash: &str,
    points: &[InterpolationPoint],
) -> Result<()> {
    let features: Vec<serde_json::Value> = points
        .iter()
        .map(|p| match &p.sample {
            Sample::Record(r) => json!({
                "type": "Feature",
                "geometry": {
                    "type": "Point",
                    "coordinates": [r.long, r.lat],
                },
                "properties": {
                    "lambda": p.lambda,
                    "number": r.number,
                    "street": r.street,
                    "unit": r.unit,
                    "city": r.city,
                    "district": r.district,
                    "region": r.region,
                    "postcode": r.postcode,
                },
            }),
            Sample::Line(line) => match crate::metrics::malformed_check(line) {
                crate::metrics::TextLine::Record(r) => json!({
                    "type": "Feature",
                    "geometry": {
                        "type": "Point",
                        "coordinates": [r.long, r.lat],
                    },
                    "properties": {
                        "lambda": p.lambda,
                        "line": line,
                        "number": r.number,
                        "street": r.street,
                        "city": r.city,
                        "postcode": r.postcode,
                    },
                }),
                crate::metrics::TextLine::Malformed(reason) => json!({
                    "type": "Feature",
                    "geometry": serde_json::Value::Null,
                    "properties": {
                        "lambda": p.lambda,
                        "line": line,
                        "malformed": format!("{reason:?}"),
                    },
                }),
            },
        })
        .collect();
    let collection = json!({
        "type": "FeatureCollection",
        "config_hash": config_hash,
        "features": features,
    });
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &collection)?;
    Ok(())
}

/// Samples as line-delimited JSON: records directly, text lines wrapped
/// as `{"line": ...}`.
pub fn write_samples_ldjson(path: &Path, samples: &[Sample]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in samples {
        match s {
            Sample::Record(r) => serde_json::to_writer(&mut out, r)?,
            Sample::Line(l) => serde_json::to_writer(&mut out, &json!({ "line": l }))?,
        }
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_samples_ldjson(path: &Path) -> Result<Vec<Sample>> {
    let file = std::fs::File::open(path)?;
    let mut samples = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)?;
        if let Some(l) = value.get("line").and_then(|v| v.as_str()) {
            samples.push(Sample::Line(l.to_string()));
        } else {
            samples.push(Sample::Record(serde_json::from_value(value)?));
        }
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let rows = vec![
            MetricsRow {
                step: 0,
                split: Split::Train,
                loss: 1.25,
                bpc: 3.5,
                kl: 0.75,
                beta: 0.1,
                p_gt: 1.0,
                level: 0,
            },
            MetricsRow {
                step: 10,
                split: Split::Generated,
                loss: 2.5,
                bpc: 4.0,
                kl: 1.5,
                beta: 0.2,
                p_gt: 0.5,
                level: 3,
            },
        ];
        write_metrics_csv(&path, "abc123", &rows).unwrap();
        let (hash, back) = read_metrics_csv(&path).unwrap();
        assert_eq!(hash, "abc123");
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].loss, 1.25);
        assert_eq!(back[1].split, Split::Generated);
        assert_eq!(back[1].level, 3);
    }

    #[test]
    fn quantiles_and_boxplot() {
        let sorted: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        assert_eq!(quantile(&sorted, 0.0), 0.0);
        assert_eq!(quantile(&sorted, 1.0), 1.0);
        assert!((quantile(&sorted, 0.5) - 0.5).abs() < 1e-12);
        let row = BoxplotRow::from_pvalues("generated", 3, &sorted);
        assert_eq!(row.round, 3);
        assert!((row.q1 - 0.25).abs() < 1e-12);
        assert!((row.q3 - 0.75).abs() < 1e-12);
    }

    #[test]
    fn boxplot_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("box.csv");
        let rows = vec![BoxplotRow::from_pvalues("train", 0, &[0.1, 0.2, 0.9])];
        write_boxplot_csv(&path, "h", &rows).unwrap();
        let (hash, back) = read_boxplot_csv(&path).unwrap();
        assert_eq!(hash, "h");
        assert_eq!(back[0].0, "train");
        assert_eq!(back[0].2.len(), 6);
    }

    #[test]
    fn samples_ldjson_round_trip_handles_both_kinds() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.ldjson");
        let samples = vec![
            Sample::Record(crate::data::AddressRecord {
                lat: 44.0,
                long: -72.0,
                street: "MAIN ST".into(),
                ..Default::default()
            }),
            Sample::Line("12,MAIN ST,BARRE,05641,44.2,-72.5".into()),
        ];
        write_samples_ldjson(&path, &samples).unwrap();
        assert_eq!(read_samples_ldjson(&path).unwrap(), samples);
    }

    #[test]
    fn json_report_carries_config_hash() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        write_json_report(&path, "cafe", &serde_json::json!({"x": 1})).unwrap();
        let v = read_json_report(&path).unwrap();
        assert_eq!(v["config_hash"], "cafe");
        assert_eq!(v["x"], 1);
    }
}
