//! Dataset loading (CSV, IDX) and CSV output.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::estimator::SampleBatch;

const IDX_U8_3D: u32 = 0x0000_0803;

/// Loads a numeric dataset, one sample per row. IDX files are recognised by
/// their magic number, everything else is parsed as CSV.
pub fn load_dataset(path: &Path) -> Result<SampleBatch> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() >= 4 && u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) == IDX_U8_3D
    {
        parse_idx(&bytes).map_err(|msg| data_err(path, msg))
    } else {
        parse_csv(&bytes).map_err(|msg| data_err(path, msg))
    }
}

fn data_err(path: &Path, msg: String) -> Error {
    Error::DataFormat {
        path: path.to_path_buf(),
        msg,
    }
}

/// Unsigned-byte image file: `n × rows × cols`, pixels scaled to `[0, 1]`.
fn parse_idx(bytes: &[u8]) -> std::result::Result<SampleBatch, String> {
    if bytes.len() < 16 {
        return Err("truncated IDX header".into());
    }
    let word = |i: usize| u32::from_be_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (n, rows, cols) = (word(4), word(8), word(12));
    let d = rows * cols;
    let body = &bytes[16..];
    if n == 0 || d < 2 {
        return Err(format!("IDX file has {n} items of dimension {d}"));
    }
    if body.len() != n * d {
        return Err(format!(
            "IDX payload is {} bytes, header implies {}",
            body.len(),
            n * d
        ));
    }
    let data = body.iter().map(|&b| f64::from(b) / 255.0).collect();
    SampleBatch::from_flat(d, data).map_err(|e| e.to_string())
}

/// CSV with an optional header row (detected by a non-numeric first field).
fn parse_csv(bytes: &[u8]) -> std::result::Result<SampleBatch, String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(bytes);
    let mut dim = None;
    let mut data = Vec::new();
    let mut first = true;
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| e.to_string())?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        if first {
            first = false;
            let head = record.get(0).unwrap_or("");
            if head.parse::<f64>().is_err() {
                continue;
            }
        }
        let line = record.position().map_or(idx as u64 + 1, |p| p.line());
        match dim {
            None => dim = Some(record.len()),
            Some(d) if d != record.len() => {
                return Err(format!(
                    "line {line}: expected {d} fields, found {}",
                    record.len()
                ))
            }
            _ => {}
        }
        for field in record.iter() {
            let x: f64 = field
                .parse()
                .map_err(|_| format!("line {line}: non-numeric field {field:?}"))?;
            if !x.is_finite() {
                return Err(format!("line {line}: non-finite value {field:?}"));
            }
            data.push(x);
        }
    }
    let d = dim.ok_or_else(|| "no data rows".to_string())?;
    if d < 2 {
        return Err(format!("dimension {d} < 2"));
    }
    SampleBatch::from_flat(d, data).map_err(|e| e.to_string())
}

/// Writes samples as headerless CSV, full round-trip precision.
pub fn write_samples_csv<W: Write>(out: W, samples: &SampleBatch) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut buf = Vec::with_capacity(samples.dim());
    for row in samples.rows() {
        buf.clear();
        buf.extend(row.iter().map(|x| format!("{x:?}")));
        w.write_record(&buf).map_err(csv_io)?;
    }
    w.flush().map_err(|e| Error::io(Path::new("<csv>"), e))?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::io(Path::new("<csv>"), std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_with_and_without_header() {
        let a = parse_csv(b"x,y\n1,2\n3,4\n").unwrap();
        let b = parse_csv(b"1,2\n3,4\n").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        assert!(parse_csv(b"1,2\n3\n").unwrap_err().contains("line 2"));
        assert!(parse_csv(b"1\n2\n").is_err());
    }

    #[test]
    fn idx_roundtrip() {
        let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 2];
        bytes.extend([0u8, 255, 51, 102]);
        let s = parse_idx(&bytes).unwrap();
        assert_eq!(s.as_flat(), &[0.0, 1.0, 0.2, 0.4]);
        bytes.pop();
        assert!(parse_idx(&bytes).is_err());
    }

    #[test]
    fn write_then_read() {
        let s = SampleBatch::from_rows(&[[0.1, -2.5e-17], [3.0, 4.0]]).unwrap();
        let mut buf = Vec::new();
        write_samples_csv(&mut buf, &s).unwrap();
        assert_eq!(parse_csv(&buf).unwrap(), s);
    }
}
