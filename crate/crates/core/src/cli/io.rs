//! Dataset CSV and JSON output.

use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{BrbError, Result};
use crate::sim::{Acquisition, CircuitRecord, FidelityDataset};

pub const COLUMNS: [&str; 6] = ["length_L", "circuit_index", "fidelity_mean", "fidelity_stderr", "M", "shots"];

fn csv_err(e: csv::Error) -> BrbError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => BrbError::Io(io),
        other => BrbError::Schema { row: 0, column: String::new(), message: format!("{other:?}") },
    }
}

/// One row per (L, circuit). Floats use the shortest representation that
/// parses back to the same value.
pub fn write_dataset<W: Write>(ds: &FidelityDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COLUMNS).map_err(csv_err)?;
    for r in &ds.records {
        w.write_record([
            r.length.to_string(),
            r.circuit_index.to_string(),
            r.fidelity_mean.to_string(),
            r.fidelity_stderr.to_string(),
            r.noise_averages.to_string(),
            r.acquisition.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn dataset_to_string(ds: &FidelityDataset) -> Result<String> {
    let mut buf = Vec::new();
    write_dataset(ds, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

pub fn write_dataset_file(ds: &FidelityDataset, path: &Path) -> Result<()> {
    write_dataset(ds, std::fs::File::create(path)?)
}

/// Parses the dataset schema. Errors name the 1-based row (the header is
/// row 1) and the column.
pub fn read_dataset<R: Read>(input: R) -> Result<FidelityDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let mut index = [0usize; 6];
    for (slot, name) in index.iter_mut().zip(COLUMNS) {
        *slot = headers.iter().position(|h| h == name).ok_or_else(|| BrbError::Schema {
            row: 1,
            column: name.to_string(),
            message: "missing column".into(),
        })?;
    }
    if let Some(extra) = headers.iter().find(|h| !COLUMNS.contains(h)) {
        return Err(BrbError::Schema { row: 1, column: extra.to_string(), message: "unknown column".into() });
    }
    let mut records = Vec::new();
    let mut m_first: Option<usize> = None;
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| BrbError::Schema { row, column: String::new(), message: e.to_string() })?;
        let field = |k: usize| rec.get(index[k]).unwrap_or("");
        let bad = |k: usize, msg: String| BrbError::Schema { row, column: COLUMNS[k].to_string(), message: msg };
        let float = |k: usize| -> Result<f64> {
            let v: f64 = field(k).parse().map_err(|_| bad(k, format!("not a number: {:?}", field(k))))?;
            if v.is_finite() { Ok(v) } else { Err(bad(k, format!("not finite: {v}"))) }
        };
        let int = |k: usize| -> Result<usize> {
            field(k)
                .parse()
                .map_err(|_| bad(k, format!("not a non-negative integer: {:?}", field(k))))
        };
        let length = float(0)?;
        if length < 0.0 {
            return Err(bad(0, format!("negative length {length}")));
        }
        let circuit_index = int(1)?;
        let fidelity_mean = float(2)?;
        if !(0.0..=1.0).contains(&fidelity_mean) {
            return Err(bad(2, format!("fidelity {fidelity_mean} outside [0, 1]")));
        }
        let fidelity_stderr = float(3)?;
        if fidelity_stderr < 0.0 {
            return Err(bad(3, format!("negative standard error {fidelity_stderr}")));
        }
        let noise_averages = int(4)?;
        if noise_averages == 0 {
            return Err(bad(4, "M must be at least 1".into()));
        }
        match m_first {
            None => m_first = Some(noise_averages),
            Some(m) if m != noise_averages => {
                return Err(bad(4, format!("M = {noise_averages} differs from M = {m} in earlier rows")));
            }
            _ => {}
        }
        let acquisition: Acquisition = field(5).parse().map_err(|e: BrbError| bad(5, e.to_string()))?;
        records.push(CircuitRecord {
            length,
            circuit_index,
            fidelity_mean,
            fidelity_stderr,
            noise_averages,
            acquisition,
        });
    }
    FidelityDataset::new(records)
}

pub fn read_dataset_file(path: &Path) -> Result<FidelityDataset> {
    read_dataset(std::fs::File::open(path)?)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Counts of F̃ per length in `bins` equal bins over [0, 1].
pub fn histograms(ds: &FidelityDataset, bins: usize) -> Vec<(f64, Vec<usize>)> {
    ds.lengths()
        .into_iter()
        .map(|l| {
            let mut counts = vec![0usize; bins];
            for v in ds.values_at(l) {
                let b = ((v * bins as f64) as usize).min(bins - 1);
                counts[b] += 1;
            }
            (l, counts)
        })
        .collect()
}

pub fn write_histograms<W: Write>(ds: &FidelityDataset, bins: usize, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["length_L", "bin_low", "bin_high", "count"]).map_err(csv_err)?;
    for (l, counts) in histograms(ds, bins) {
        for (b, c) in counts.iter().enumerate() {
            w.write_record([
                l.to_string(),
                (b as f64 / bins as f64).to_string(),
                ((b + 1) as f64 / bins as f64).to_string(),
                c.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::readout::Shots;
    use proptest::prelude::*;

    fn record(length: f64, c: usize, f: f64) -> CircuitRecord {
        CircuitRecord {
            length,
            circuit_index: c,
            fidelity_mean: f,
            fidelity_stderr: 0.01,
            noise_averages: 50,
            acquisition: Acquisition::Readout(Shots::Count(100)),
        }
    }

    #[test]
    fn header_and_row() {
        let ds = FidelityDataset::new(vec![record(0.4, 0, 0.95)]).unwrap();
        let s = dataset_to_string(&ds).unwrap();
        assert_eq!(s, "length_L,circuit_index,fidelity_mean,fidelity_stderr,M,shots\n0.4,0,0.95,0.01,50,100\n");
    }

    fn schema_error(text: &str) -> (usize, String) {
        match read_dataset(text.as_bytes()).unwrap_err() {
            BrbError::Schema { row, column, .. } => (row, column),
            other => panic!("expected schema error, got {other}"),
        }
    }

    #[test]
    fn malformed_rows_name_row_and_column() {
        let head = "length_L,circuit_index,fidelity_mean,fidelity_stderr,M,shots\n";
        assert_eq!(schema_error(&format!("{head}0.4,0,abc,0.01,50,exact\n")), (2, "fidelity_mean".into()));
        assert_eq!(
            schema_error(&format!("{head}0.4,0,0.9,0.01,50,exact\n0.8,0,0.9,0.01,40,exact\n")),
            (3, "M".into())
        );
        assert_eq!(schema_error(&format!("{head}0.4,0,1.2,0.01,50,exact\n")), (2, "fidelity_mean".into()));
        assert_eq!(schema_error(&format!("{head}0.4,0,0.9,0.01,50,lots\n")), (2, "shots".into()));
        assert_eq!(schema_error("length_L,circuit_index,fidelity_mean\n"), (1, "fidelity_stderr".into()));
    }

    #[test]
    fn histogram_counts() {
        let ds = FidelityDataset::new(vec![record(1.0, 0, 1.0), record(1.0, 1, 0.0), record(1.0, 2, 0.55)]).unwrap();
        let h = histograms(&ds, 10);
        assert_eq!(h[0].1[0], 1);
        assert_eq!(h[0].1[5], 1);
        assert_eq!(h[0].1[9], 1);
    }

    proptest! {
        #[test]
        fn csv_round_trip(rows in prop::collection::vec((0.0f64..10.0, 0usize..1000, 0.0f64..=1.0, 0.0f64..0.5), 1..40),
                          m in 1usize..1000, shots in prop_oneof![Just(None), Just(Some(0u32)), (1u32..10_000).prop_map(Some)]) {
            let acquisition = match shots {
                None => Acquisition::Exact,
                Some(0) => Acquisition::Readout(Shots::Oracle),
                Some(n) => Acquisition::Readout(Shots::Count(n)),
            };
            let records: Vec<CircuitRecord> = rows
                .into_iter()
                .map(|(length, circuit_index, fidelity_mean, fidelity_stderr)| CircuitRecord {
                    length, circuit_index, fidelity_mean, fidelity_stderr, noise_averages: m, acquisition,
                })
                .collect();
            let ds = FidelityDataset::new(records).unwrap();
            let text = dataset_to_string(&ds).unwrap();
            prop_assert_eq!(read_dataset(text.as_bytes()).unwrap(), ds);
        }
    }
}
