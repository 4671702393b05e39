//! Sparse depth samples as CSV with a `row,col,depth` header.

use std::path::Path;

use crate::depth::{DepthSample, SparseDepthSamples};
use crate::{Error, Result};

pub fn write_samples_csv(path: &Path, samples: &SparseDepthSamples) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["row", "col", "depth"])?;
    for s in samples.iter() {
        writer.write_record([s.row.to_string(), s.col.to_string(), format!("{:?}", s.depth)])?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_samples_csv(path: &Path) -> Result<SparseDepthSamples> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["row", "col", "depth"] {
        return Err(Error::Validation(format!(
            "sparse sample CSV must have header row,col,depth, got {headers:?}"
        )));
    }
    let mut samples = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let parse = |field: usize, name: &str| -> Result<f64> {
            record
                .get(field)
                .ok_or_else(|| Error::Validation(format!("record {i}: missing {name}")))?
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::Validation(format!("record {i}: bad {name}")))
        };
        let row = parse(0, "row")?;
        let col = parse(1, "col")?;
        if row < 0.0 || col < 0.0 || row.fract() != 0.0 || col.fract() != 0.0 {
            return Err(Error::Validation(format!(
                "record {i}: pixel ({row}, {col}) is not a non-negative integer pair"
            )));
        }
        samples.push(DepthSample {
            row: row as usize,
            col: col as usize,
            depth: parse(2, "depth")?,
        });
    }
    SparseDepthSamples::new(samples)
}
