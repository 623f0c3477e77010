//! CSV ingestion, partitioning and the synthetic generator.
//!
//! Files are comma-separated UTF-8 with a mandatory header; the first column
//! is an integer label in `[0, c)`, the remaining columns are decimal
//! features.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use dpmpc_core::numeric::FixedPoint;
use dpmpc_core::train::{synthetic_blobs, Dataset};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, PartitionScheme};
use crate::CliError;

/// Reads a labelled CSV and rounds its features to the fixed-point grid.
pub fn ingest_csv(path: &Path, classes: usize, fp: &FixedPoint) -> Result<Dataset, CliError> {
    let file = File::open(path).map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
    read_csv(file, classes, fp, &path.display().to_string())
}

pub fn read_csv<R: Read>(reader: R, classes: usize, fp: &FixedPoint, source: &str) -> Result<Dataset, CliError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| CliError::Data(format!("{source}: unreadable header: {e}")))?.clone();
    if headers.len() < 2 {
        return Err(CliError::Data(format!("{source}: header needs a label column and at least one feature")));
    }
    let dim = headers.len() - 1;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Data(format!("{source}: {e}")))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != dim + 1 {
            return Err(CliError::Data(format!("{source}:{line}: expected {} fields, found {}", dim + 1, rec.len())));
        }
        let label: usize = rec[0]
            .parse()
            .map_err(|_| CliError::Data(format!("{source}:{line}: label `{}` is not a non-negative integer", &rec[0])))?;
        if label >= classes {
            return Err(CliError::Data(format!("{source}:{line}: label {label} outside [0, {classes})")));
        }
        for (col, field) in rec.iter().skip(1).enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| CliError::Data(format!("{source}:{line}: feature {col} `{field}` is not a decimal")))?;
            let raw = fp
                .to_raw(v)
                .map_err(|e| CliError::Data(format!("{source}:{line}: feature {col}: {e}")))?;
            features.push(fp.raw_to_f64(raw));
        }
        labels.push(label);
    }
    Dataset::new(features, labels, dim, classes).map_err(|e| CliError::Data(format!("{source}: {e}")))
}

pub fn write_csv<W: Write>(writer: W, data: &Dataset) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(writer);
    let out = |e: csv::Error| CliError::Output(e.to_string());
    let mut header = vec!["label".to_string()];
    header.extend((0..data.dim).map(|i| format!("x{i}")));
    w.write_record(&header).map_err(out)?;
    for i in 0..data.len() {
        let mut rec = vec![data.labels[i].to_string()];
        rec.extend(data.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(out)?;
    }
    w.flush().map_err(|e| CliError::Output(e.to_string()))
}

pub fn write_csv_file(path: &Path, data: &Dataset) -> Result<(), CliError> {
    let f = File::create(path).map_err(|e| CliError::Output(format!("cannot create {}: {e}", path.display())))?;
    write_csv(f, data)
}

/// Splits rows into `m` disjoint parts of near-equal size: `iid` after a
/// seeded shuffle, `label_sorted` after a stable sort by label.
pub fn partition(data: &Dataset, scheme: PartitionScheme, m: usize, seed: u64) -> Result<Vec<Dataset>, CliError> {
    if m == 0 || m > data.len() {
        return Err(CliError::Data(format!("cannot split {} rows into {m} parts", data.len())));
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    match scheme {
        PartitionScheme::Iid => idx.shuffle(&mut ChaCha20Rng::seed_from_u64(seed)),
        PartitionScheme::LabelSorted => idx.sort_by_key(|&i| data.labels[i]),
    }
    let n = data.len();
    Ok((0..m).map(|p| data.select(&idx[p * n / m..(p + 1) * n / m])).collect())
}

/// Seeded hold-out split: `(train, test)`.
pub fn split_test(data: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset), CliError> {
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
    let n_test = (data.len() as f64 * fraction).round() as usize;
    if n_test == 0 || n_test >= data.len() {
        return Err(CliError::Data(format!("test fraction {fraction} leaves an empty split of {} rows", data.len())));
    }
    Ok((data.select(&idx[n_test..]), data.select(&idx[..n_test])))
}

/// SHA-256 over the little-endian field encoding of `[x | one-hot y]` rows.
pub fn checksum(data: &Dataset, fp: &FixedPoint) -> Result<String, CliError> {
    let rows = data.encode_rows(fp)?;
    let mut h = Sha256::new();
    for e in rows {
        h.update(e.to_le_bytes());
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

pub fn class_counts(data: &Dataset) -> Vec<usize> {
    let mut c = vec![0; data.classes];
    for &l in &data.labels {
        c[l] += 1;
    }
    c
}

/// Per-party training and test parts, identical on every party.
pub struct PreparedData {
    pub train_parts: Vec<Dataset>,
    pub test_parts: Vec<Dataset>,
}

impl PreparedData {
    pub fn train_counts(&self) -> Vec<usize> {
        self.train_parts.iter().map(|d| d.len()).collect()
    }

    pub fn test_counts(&self) -> Vec<usize> {
        self.test_parts.iter().map(|d| d.len()).collect()
    }

    pub fn train_rows(&self) -> usize {
        self.train_parts.iter().map(|d| d.len()).sum()
    }
}

/// Loads or generates the data and splits it deterministically from the seed.
pub fn prepare(cfg: &ExperimentConfig, fp: &FixedPoint) -> Result<PreparedData, CliError> {
    let classes = cfg.data.classes;
    let all = match (&cfg.data.synthetic, &cfg.data.train) {
        (Some(s), _) => {
            let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ 0x5eed_da7a);
            synthetic_blobs(s.n, s.dim, classes, s.separation, s.spread, &mut rng)
                .and_then(|d| d.quantize(fp))
                .map_err(|e| CliError::Data(e.to_string()))?
        }
        (None, Some(path)) => ingest_csv(path, classes, fp)?,
        (None, None) => return Err(CliError::Config("no data source".into())),
    };
    let (train, test) = match &cfg.data.test {
        Some(path) => {
            let test = ingest_csv(path, classes, fp)?;
            if test.dim != all.dim {
                return Err(CliError::Data(format!("test file has {} features, training data {}", test.dim, all.dim)));
            }
            (all, test)
        }
        None => split_test(&all, cfg.data.test_fraction, cfg.seed)?,
    };
    let m = cfg.parties;
    Ok(PreparedData {
        train_parts: partition(&train, cfg.data.partition, m, cfg.seed.wrapping_add(1))?,
        test_parts: partition(&test, PartitionScheme::Iid, m, cfg.seed.wrapping_add(2))?,
    })
}
