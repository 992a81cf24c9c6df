use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

use super::Dataset;

const COLUMNS: [&str; 5] = ["c1", "c2", "c3", "a", "y"];

/// Read a dataset from CSV. The header must name a subset of
/// {c1,c2,c3,a,y}; empty cells become missing-marked entries. c1 must be
/// fully observed.
pub fn read_dataset_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    read_dataset_str(&text, &path.display().to_string())
}

pub fn read_dataset_str(text: &str, path: &str) -> Result<Dataset> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Validation(format!("{path}: empty file")))?;
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    for name in &names {
        if !COLUMNS.contains(name) {
            return Err(Error::Validation(format!(
                "{path}: unknown column '{name}' in header"
            )));
        }
    }
    let col_idx = |c: &str| names.iter().position(|&n| n == c);
    let (i_c1, i_c2, i_c3, i_a, i_y) = (
        col_idx("c1"),
        col_idx("c2"),
        col_idx("c3"),
        col_idx("a"),
        col_idx("y"),
    );

    let mut ds = Dataset::with_capacity(16);
    for (line_no, line) in lines.enumerate() {
        let row_no = line_no + 2; // 1-based, after header
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != names.len() {
            return Err(Error::Parse {
                path: path.into(),
                line: row_no,
                column: "<row>".into(),
                message: format!("expected {} cells, found {}", names.len(), cells.len()),
            });
        }
        let cell = |idx: Option<usize>| idx.map(|i| cells[i].trim()).filter(|s| !s.is_empty());

        // c1: required everywhere
        let c1 = match cell(i_c1) {
            Some(s) => parse_binary(s, path, row_no, "c1")?,
            None => {
                return Err(Error::Validation(format!(
                    "{path}:{row_no}: c1 is missing; c1 must be fully observed"
                )))
            }
        };
        ds.c1.push(c1);

        match cell(i_c2) {
            Some(s) => {
                ds.c2.push(parse_f64(s, path, row_no, "c2")?);
                ds.miss_c2.push(false);
            }
            None => {
                ds.c2.push(0.0);
                ds.miss_c2.push(true);
            }
        }
        match cell(i_c3) {
            Some(s) => {
                ds.c3.push(parse_f64(s, path, row_no, "c3")?);
                ds.miss_c3.push(false);
            }
            None => {
                ds.c3.push(0.0);
                ds.miss_c3.push(true);
            }
        }
        match cell(i_a) {
            Some(s) => {
                ds.a.push(parse_count(s, path, row_no, "a")?);
                ds.miss_a.push(false);
            }
            None => {
                ds.a.push(0);
                ds.miss_a.push(true);
            }
        }
        match cell(i_y) {
            Some(s) => {
                ds.y.push(parse_binary(s, path, row_no, "y")?);
                ds.miss_y.push(false);
            }
            None => {
                ds.y.push(0);
                ds.miss_y.push(true);
            }
        }
        ds.n += 1;
    }
    ds.validate(None)?;
    Ok(ds)
}

fn parse_f64(s: &str, path: &str, line: usize, column: &str) -> Result<f64> {
    s.parse::<f64>().map_err(|_| Error::Parse {
        path: path.into(),
        line,
        column: column.into(),
        message: format!("malformed numeric cell '{s}'"),
    })
}

fn parse_binary(s: &str, path: &str, line: usize, column: &str) -> Result<u8> {
    match s {
        "0" => Ok(0),
        "1" => Ok(1),
        _ => Err(Error::Validation(format!(
            "{path}:{line}: {column} must be 0 or 1, found '{s}'"
        ))),
    }
}

fn parse_count(s: &str, path: &str, line: usize, column: &str) -> Result<u32> {
    let v = parse_f64(s, path, line, column)?;
    if v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
        return Err(Error::Validation(format!(
            "{path}:{line}: {column} must be a non-negative integer, found '{s}'"
        )));
    }
    Ok(v as u32)
}

/// Write a dataset as CSV with column order c1,c2,c3,a,y; missing cells are
/// written empty. Floats use the shortest representation that round-trips.
pub fn write_dataset_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = dataset_to_csv_string(ds);
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn dataset_to_csv_string(ds: &Dataset) -> String {
    let mut out = String::with_capacity(ds.n * 24 + 16);
    out.push_str("c1,c2,c3,a,y\n");
    for i in 0..ds.n {
        let _ = write!(out, "{}", ds.c1[i]);
        out.push(',');
        if !ds.miss_c2[i] {
            let _ = write!(out, "{}", ds.c2[i]);
        }
        out.push(',');
        if !ds.miss_c3[i] {
            let _ = write!(out, "{}", ds.c3[i]);
        }
        out.push(',');
        if !ds.miss_a[i] {
            let _ = write!(out, "{}", ds.a[i]);
        }
        out.push(',');
        if !ds.miss_y[i] {
            let _ = write!(out, "{}", ds.y[i]);
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_missing_cells() {
        let ds = read_dataset_str("c1,a,y\n1,3,0\n0,,1\n", "test").unwrap();
        assert_eq!(ds.n, 2);
        assert_eq!(ds.a[0], 3);
        assert!(!ds.miss_a[0]);
        assert!(ds.miss_a[1]);
        // columns absent from the header are fully missing
        assert!(ds.miss_c2.iter().all(|&m| m));
    }

    #[test]
    fn rejects_negative_count() {
        let err = read_dataset_str("c1,a\n1,-1\n", "test").unwrap_err();
        assert!(err.to_string().contains("non-negative integer"), "{err}");
    }

    #[test]
    fn rejects_missing_c1() {
        assert!(read_dataset_str("c1,a\n,2\n", "test").is_err());
    }

    #[test]
    fn rejects_unknown_column() {
        assert!(read_dataset_str("c1,zzz\n1,2\n", "test").is_err());
    }

    #[test]
    fn rejects_malformed_numeric_with_location() {
        let err = read_dataset_str("c1,c2\n1,abc\n", "test").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("c2") && msg.contains(":2"), "{msg}");
    }

    #[test]
    fn empty_dataset_writes_header_only() {
        let ds = Dataset::complete(vec![], vec![], vec![], vec![], vec![]);
        assert_eq!(dataset_to_csv_string(&ds), "c1,c2,c3,a,y\n");
    }

    #[test]
    fn missing_cell_written_empty() {
        let mut ds = Dataset::complete(vec![1, 0], vec![0.5, 1.5], vec![2.0, 3.0], vec![1, 2], vec![0, 1]);
        ds.miss_a[0] = true;
        let text = dataset_to_csv_string(&ds);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[1], "1,0.5,2,,0");
    }
}
