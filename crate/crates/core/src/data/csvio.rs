//! Comma-separated feature matrices.
//!
//! Dialect: `,` delimiter, `.` decimal point, no thousands separators, and an
//! optional single header row, recognized when any cell of the first line does
//! not parse as a number. Error positions are 1-based file line and column.

use std::path::{Path, PathBuf};

use super::{PairedDataset, Provenance};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// A numeric matrix read from CSV, with its header if one was present.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvMatrix {
    pub header: Option<Vec<String>>,
    pub values: Tensor<f64>,
}

fn parse_cell(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok()
}

pub fn read_matrix_csv(path: &Path) -> Result<CsvMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut header = None;
    let mut cols: Option<usize> = None;
    let mut data = Vec::new();
    let mut rows = 0;
    for (k, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(k as u64 + 1, |p| p.line()) as usize;
        if k == 0 && rec.iter().any(|c| parse_cell(c).is_none()) {
            header = Some(rec.iter().map(|c| c.trim().to_string()).collect());
            cols = Some(rec.len());
            continue;
        }
        let width = *cols.get_or_insert(rec.len());
        if rec.len() != width {
            return Err(Error::Alignment { what: format!("{} line {line} column count", path.display()), left: width, right: rec.len() });
        }
        for (j, cell) in rec.iter().enumerate() {
            let x = parse_cell(cell).ok_or_else(|| Error::Parse { path: path.to_path_buf(), row: line, col: j + 1, cell: cell.to_string() })?;
            data.push(x);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::EmptyInput("csv file has no data rows"));
    }
    Ok(CsvMatrix { header, values: Tensor::new(rows, cols.unwrap_or(0), data)? })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse { path: path.to_path_buf(), row: 0, col: 0, cell: format!("{other:?}") },
    }
}

/// Class ids, one per row (first column), optional header.
pub fn read_labels_csv(path: &Path) -> Result<Vec<usize>> {
    let m = read_matrix_csv(path)?;
    let offset = if m.header.is_some() { 2 } else { 1 };
    (0..m.values.rows())
        .map(|i| {
            let x = m.values.get(i, 0);
            if x >= 0.0 && x.fract() == 0.0 {
                Ok(x as usize)
            } else {
                Err(Error::Parse { path: path.to_path_buf(), row: i + offset, col: 1, cell: x.to_string() })
            }
        })
        .collect()
}

/// Loads row-aligned modality files (and optional labels) into a dataset.
pub fn load_paired_csv(path_v: &Path, path_t: &Path, path_labels: Option<&Path>) -> Result<PairedDataset> {
    let xv = read_matrix_csv(path_v)?.values;
    let xt = read_matrix_csv(path_t)?.values;
    if xv.rows() != xt.rows() {
        return Err(Error::Alignment { what: format!("{} vs {} rows", path_v.display(), path_t.display()), left: xv.rows(), right: xt.rows() });
    }
    let labels = match path_labels {
        Some(p) => {
            let l = read_labels_csv(p)?;
            if l.len() != xv.rows() {
                return Err(Error::Alignment { what: format!("{} rows", p.display()), left: xv.rows(), right: l.len() });
            }
            Some(l)
        }
        None => None,
    };
    let provenance = Provenance::Files { v: path_v.to_path_buf(), t: path_t.to_path_buf(), labels: path_labels.map(PathBuf::from) };
    Ok(PairedDataset { xv, xt, labels, provenance })
}

/// Writes `dim_0..dim_{d-1}[,label]` with 17 significant digits per value.
pub fn write_matrix_csv(path: &Path, z: &Tensor<f64>, labels: Option<&[usize]>) -> Result<()> {
    if let Some(l) = labels {
        if l.len() != z.rows() {
            return Err(Error::Alignment { what: "labels vs embedding rows".into(), left: z.rows(), right: l.len() });
        }
    }
    let mut out = String::new();
    let mut head: Vec<String> = (0..z.cols()).map(|j| format!("dim_{j}")).collect();
    if labels.is_some() {
        head.push("label".into());
    }
    out.push_str(&head.join(","));
    out.push('\n');
    for (i, row) in z.iter_rows().enumerate() {
        let mut cells: Vec<String> = row.iter().map(|x| format!("{x:.16e}")).collect();
        if let Some(l) = labels {
            cells.push(l[i].to_string());
        }
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn happy_path_with_and_without_header() {
        let dir = tempfile::tempdir().unwrap();
        let v = dir.path().join("v.csv");
        let t = dir.path().join("t.csv");
        fs::write(&v, "a,b\n1,2\n3,4\n5,6\n").unwrap();
        fs::write(&t, "0.5\n-1e-3\n2\n").unwrap();
        let d = load_paired_csv(&v, &t, None).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.xv.data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(d.xt.data(), &[0.5, -1e-3, 2.0]);
    }

    #[test]
    fn row_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let v = dir.path().join("v.csv");
        let t = dir.path().join("t.csv");
        fs::write(&v, "1\n2\n3\n").unwrap();
        fs::write(&t, "1\n2\n3\n4\n").unwrap();
        let err = load_paired_csv(&v, &t, None).unwrap_err();
        assert!(matches!(err, Error::Alignment { left: 3, right: 4, .. }), "{err}");
    }

    #[test]
    fn bad_cell_position() {
        let dir = tempfile::tempdir().unwrap();
        let v = dir.path().join("v.csv");
        fs::write(&v, "1,2\nabc,3\n4,5\n").unwrap();
        let err = read_matrix_csv(&v).unwrap_err();
        assert!(matches!(&err, Error::Parse { row: 2, col: 1, cell, .. } if cell == "abc"), "{err}");
    }

    #[test]
    fn labels_file() {
        let dir = tempfile::tempdir().unwrap();
        let (v, t, l) = (dir.path().join("v.csv"), dir.path().join("t.csv"), dir.path().join("l.csv"));
        fs::write(&v, "1\n2\n").unwrap();
        fs::write(&t, "1\n2\n").unwrap();
        fs::write(&l, "label\n0\n3\n").unwrap();
        assert_eq!(load_paired_csv(&v, &t, Some(&l)).unwrap().labels, Some(vec![0, 3]));
        fs::write(&l, "0\n1.5\n").unwrap();
        assert!(matches!(load_paired_csv(&v, &t, Some(&l)), Err(Error::Parse { row: 2, .. })));
    }

    #[test]
    fn export_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.csv");
        let z = Tensor::from_fn(3, 2, |i, j| (i as f64 + 0.1) / (j as f64 + 3.0) * std::f64::consts::PI);
        write_matrix_csv(&p, &z, None).unwrap();
        let back = read_matrix_csv(&p).unwrap();
        assert_eq!(back.values, z);
        assert_eq!(back.header.unwrap(), vec!["dim_0", "dim_1"]);
    }
}
