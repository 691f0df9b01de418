//! CSV input and output.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

use super::MetricsRecord;

/// Numeric table with an optional header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Option<Vec<String>>,
    pub data: Matrix<f64>,
}

fn io_err(e: impl std::fmt::Display) -> Error {
    Error::InvalidArgument(e.to_string())
}

/// Reads comma-separated rows of numbers. The first line is taken as a
/// header when any of its fields does not parse as a number.
pub fn read_table<R: Read>(reader: R) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
    let mut header: Option<Vec<String>> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(io_err)?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) => rows.push(v),
            Err(_) if line == 0 => header = Some(rec.iter().map(str::to_owned).collect()),
            Err(e) => return Err(Error::InvalidArgument(format!("line {}: {e}", line + 1))),
        }
    }
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no numeric rows".into()));
    }
    let data = Matrix::from_rows(&rows)?;
    if let Some(h) = &header {
        if h.len() != data.ncols() {
            return Err(Error::DimensionMismatch(format!("header has {} fields, rows have {}", h.len(), data.ncols())));
        }
    }
    Ok(Table { header, data })
}

pub fn read_table_path(path: impl AsRef<Path>) -> Result<Table> {
    let f = std::fs::File::open(path.as_ref()).map_err(|e| io_err(format!("{}: {e}", path.as_ref().display())))?;
    read_table(std::io::BufReader::new(f))
}

/// Response vector from a one-column table.
pub fn read_vector_path(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let t = read_table_path(path)?;
    if t.data.ncols() != 1 {
        return Err(Error::DimensionMismatch(format!("expected one column, found {}", t.data.ncols())));
    }
    Ok(t.data.col(0).to_vec())
}

pub fn write_matrix<W: Write>(w: W, x: &Matrix<f64>, header: Option<&[String]>) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    if let Some(h) = header {
        wtr.write_record(h).map_err(io_err)?;
    }
    for i in 0..x.nrows() {
        wtr.write_record(x.row(i).iter().map(|v| v.to_string())).map_err(io_err)?;
    }
    wtr.flush().map_err(io_err)
}

pub const RECORD_HEADER: [&str; 7] = ["rep", "fdp", "power", "n_selected", "cutoff", "wall_time_ms", "status"];

/// Per-replication metrics, one row per record in the given order.
pub fn write_records<W: Write>(w: W, records: &[MetricsRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(RECORD_HEADER).map_err(io_err)?;
    for r in records {
        wtr.write_record([
            r.rep.to_string(),
            r.fdp.to_string(),
            r.power.to_string(),
            r.n_selected.to_string(),
            r.cutoff.to_string(),
            format!("{:.3}", r.wall_time_ms),
            r.status.clone(),
        ])
        .map_err(io_err)?;
    }
    wtr.flush().map_err(io_err)
}

pub fn records_to_string(records: &[MetricsRecord]) -> Result<String> {
    let mut buf = Vec::new();
    write_records(&mut buf, records)?;
    String::from_utf8(buf).map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_detected() {
        let t = read_table("a,b\n1,2\n3,4\n".as_bytes()).unwrap();
        assert_eq!(t.header, Some(vec!["a".to_string(), "b".to_string()]));
        assert_eq!(t.data.row(1), vec![3.0, 4.0]);
        let t = read_table("1, 2\n3,4e-1\n".as_bytes()).unwrap();
        assert!(t.header.is_none());
        assert_eq!(t.data.row(1), vec![3.0, 0.4]);
    }

    #[test]
    fn bad_rows_rejected() {
        assert!(read_table("1,2\nx,4\n".as_bytes()).is_err());
        assert!(read_table("1,2\n3\n".as_bytes()).is_err());
        assert!(read_table("a,b\n".as_bytes()).is_err());
    }

    #[test]
    fn matrix_round_trip() {
        let x = Matrix::from_rows(&[vec![0.1, -2.5], vec![1e-9, 3.0]]).unwrap();
        let mut buf = Vec::new();
        write_matrix(&mut buf, &x, Some(&["u".into(), "v".into()])).unwrap();
        let t = read_table(buf.as_slice()).unwrap();
        assert_eq!(t.data, x);
    }
}
