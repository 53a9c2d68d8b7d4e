//! Generation-quality metrics: per-zip coordinate p-values, Levenshtein
//! distance per character, street-name membership, and malformed-text
//! detection for the comma-separated variant.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::data::AddressRecord;

/// Per-zip coordinate statistics fitted on training data.
///
/// `mean` and `cov` are the sample mean and unbiased sample covariance of
/// `(lat, long)`; zips with fewer than two records are dropped so the
/// covariance stays defined, and their p-values evaluate to 0 like any
/// unseen zip.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ZipStatsTable {
    pub entries: BTreeMap<String, ZipEntry>,
    /// Zips dropped for having fewer than two records.
    pub dropped_small: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ZipEntry {
    pub count: usize,
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

/// Fits per-zip mean and unbiased covariance of the coordinates.
pub fn fit_zip_stats(records: &[AddressRecord]) -> ZipStatsTable {
    let mut groups: BTreeMap<&str, Vec<[f64; 2]>> = BTreeMap::new();
    for r in records {
        groups.entry(r.postcode.as_str()).or_default().push([r.lat, r.long]);
    }
    let mut table = ZipStatsTable::default();
    for (zip, pts) in groups {
        let n = pts.len();
        if n < 2 {
            table.dropped_small += 1;
            continue;
        }
        let nf = n as f64;
        let mut mean = [0.0; 2];
        for p in &pts {
            mean[0] += p[0];
            mean[1] += p[1];
        }
        mean[0] /= nf;
        mean[1] /= nf;
        let mut cov = [[0.0; 2]; 2];
        for p in &pts {
            let d = [p[0] - mean[0], p[1] - mean[1]];
            cov[0][0] += d[0] * d[0];
            cov[0][1] += d[0] * d[1];
            cov[1][1] += d[1] * d[1];
        }
        let denom = nf - 1.0;
        cov[0][0] /= denom;
        cov[0][1] /= denom;
        cov[1][1] /= denom;
        cov[1][0] = cov[0][1];
        table.entries.insert(
            zip.to_string(),
            ZipEntry {
                count: n,
                mean,
                cov,
            },
        );
    }
    table
}

/// Squared Mahalanobis distance `(x - mu)^T Sigma^{-1} (x - mu)` for the
/// 2-D case, with a small ridge added before inversion.
///
/// Returns `None` when the covariance stays singular even after the
/// ridge; callers treat that zip as unseen.
pub fn mahalanobis_sq(x: [f64; 2], mean: [f64; 2], cov: [[f64; 2]; 2]) -> Option<f64> {
    let ridge = 1e-9 * (cov[0][0] + cov[1][1]) / 2.0;
    let a = cov[0][0] + ridge;
    let b = cov[0][1];
    let c = cov[1][1] + ridge;
    let det = a * c - b * b;
    if !det.is_finite() || det <= 0.0 {
        return None;
    }
    let d = [x[0] - mean[0], x[1] - mean[1]];
    // inverse of [[a, b], [b, c]] is [[c, -b], [-b, a]] / det
    let dsq = (c * d[0] * d[0] - 2.0 * b * d[0] * d[1] + a * d[1] * d[1]) / det;
    if dsq.is_finite() {
        Some(dsq.max(0.0))
    } else {
        None
    }
}

/// Upper-tail p-value of the chi-squared distribution with 2 degrees of
/// freedom: `p = 1 - CDF(d_sq) = exp(-d_sq / 2)`.
pub fn chi2_pvalue(d_sq: f64) -> f64 {
    assert!(d_sq >= 0.0, "squared distance must be non-negative");
    (-d_sq / 2.0).exp()
}

/// P-value of one record's coordinates under the fitted table; unseen or
/// degenerate zips give 0.
pub fn record_pvalue(record: &AddressRecord, table: &ZipStatsTable) -> f64 {
    match table.entries.get(&record.postcode) {
        Some(entry) => match mahalanobis_sq([record.lat, record.long], entry.mean, entry.cov) {
            Some(dsq) => chi2_pvalue(dsq),
            None => 0.0,
        },
        None => 0.0,
    }
}

/// Summary statistics over a sample of p-values. A perfect generator
/// gives the uniform reference: mean = median = 0.5, stddev = 1/sqrt(12).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PValueStats {
    pub mean: f64,
    pub median: f64,
    pub stddev: f64,
    pub count: usize,
}

/// Mean/median/population-stddev over per-record p-values.
pub fn pvalue_stats(records: &[AddressRecord], table: &ZipStatsTable) -> PValueStats {
    let pvalues: Vec<f64> = records.iter().map(|r| record_pvalue(r, table)).collect();
    summarize_pvalues(&pvalues)
}

/// Summary of an explicit p-value sample.
pub fn summarize_pvalues(pvalues: &[f64]) -> PValueStats {
    let n = pvalues.len();
    if n == 0 {
        return PValueStats::default();
    }
    let nf = n as f64;
    let mean = pvalues.iter().sum::<f64>() / nf;
    let var = pvalues.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / nf;
    let mut sorted = pvalues.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    PValueStats {
        mean,
        median,
        stddev: var.sqrt(),
        count: n,
    }
}

/// Levenshtein edit distance via the classic two-row dynamic program,
/// over `char`s.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance divided by the length of the original string. Callers
/// must skip empty originals (see [`mean_levenshtein_per_char`]).
pub fn levenshtein_per_char(original: &str, reconstruction: &str) -> f64 {
    let len = original.chars().count();
    assert!(len > 0, "levenshtein_per_char needs a non-empty original");
    levenshtein(original, reconstruction) as f64 / len as f64
}

/// Average Levenshtein-per-character over pairs, skipping empty
/// originals. Returns `(mean, pairs used, pairs skipped)`.
pub fn mean_levenshtein_per_char<'a>(
    pairs: impl Iterator<Item = (&'a str, &'a str)>,
) -> (f64, usize, usize) {
    let mut sum = 0.0;
    let mut used = 0usize;
    let mut skipped = 0usize;
    for (orig, recon) in pairs {
        if orig.is_empty() {
            skipped += 1;
            continue;
        }
        sum += levenshtein_per_char(orig, recon);
        used += 1;
    }
    let mean = if used > 0 { sum / used as f64 } else { 0.0 };
    (mean, used, skipped)
}

/// Exact-match count and proportion of generated street names found in
/// the training street-name set.
pub fn street_name_membership(
    generated: &[AddressRecord],
    training_streets: &HashSet<String>,
) -> (usize, f64) {
    let count = generated
        .iter()
        .filter(|r| training_streets.contains(&r.street))
        .count();
    let proportion = if generated.is_empty() {
        0.0
    } else {
        count as f64 / generated.len() as f64
    };
    (count, proportion)
}

/// Why a comma-separated line failed to parse back into a record.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MalformedReason {
    TooFewFields,
    BadFloat,
}

/// Classification of one generated text line.
#[derive(Clone, Debug, PartialEq)]
pub enum TextLine {
    Record(AddressRecord),
    Malformed(MalformedReason),
}

/// Parses a comma-separated line back into a record. A line is malformed
/// when it has fewer than six comma-separated values or when the last two
/// do not parse as decimal floating-point literals; malformed samples
/// score p-value 0 downstream.
pub fn malformed_check(line: &str) -> TextLine {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() < 6 {
        return TextLine::Malformed(MalformedReason::TooFewFields);
    }
    let n = fields.len();
    let parse = |s: &str| -> Option<f64> {
        let t = s.trim();
        if t.is_empty() {
            return None;
        }
        t.parse::<f64>().ok()
    };
    let (Some(lat), Some(long)) = (parse(fields[n - 2]), parse(fields[n - 1])) else {
        return TextLine::Malformed(MalformedReason::BadFloat);
    };
    TextLine::Record(AddressRecord {
        lat,
        long,
        number: fields[0].to_string(),
        street: fields[1].to_string(),
        city: fields[2].to_string(),
        postcode: fields[3].to_string(),
        ..Default::default()
    })
}
