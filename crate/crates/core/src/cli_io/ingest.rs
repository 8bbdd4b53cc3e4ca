use std::io::Read;
use std::path::Path;

use crate::dynamics::{Trajectory, UNIFORM_STEP_RTOL};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Reads a trajectory from a headed CSV file. `value_columns` selects and
/// orders the state columns; by default every column except the time
/// column is used. Errors carry the 1-based file line.
pub fn ingest_csv(path: &Path, time_column: &str, value_columns: Option<&[String]>) -> Result<Trajectory> {
    let file = std::fs::File::open(path)?;
    read_trajectory(file, time_column, value_columns)
}

pub fn read_trajectory<R: Read>(reader: R, time_column: &str, value_columns: Option<&[String]>) -> Result<Trajectory> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| csv_err(1, e.to_string()))?
        .clone();
    let width = header.len();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| csv_err(1, format!("no column `{name}`")))
    };
    let t_col = find(time_column)?;
    let cols: Vec<usize> = match value_columns {
        Some(names) => names.iter().map(|n| find(n)).collect::<Result<_>>()?,
        None => (0..width).filter(|&i| i != t_col).collect(),
    };
    if cols.is_empty() {
        return Err(csv_err(1, "no value columns".into()));
    }
    let labels: Vec<String> = cols.iter().map(|&i| header[i].to_string()).collect();

    let mut times: Vec<f64> = Vec::new();
    let mut data = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let row = e.position().map_or(0, |p| p.line() as usize);
            csv_err(row, e.to_string())
        })?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != width {
            return Err(csv_err(row, format!("expected {width} fields, found {}", record.len())));
        }
        let cell = |i: usize| -> Result<f64> {
            let text = &record[i];
            match text.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(csv_err(row, format!("column `{}` holds `{text}`, not a finite number", &header[i]))),
            }
        };
        let t = cell(t_col)?;
        if let [.., a, b] = times[..] {
            let step = b - a;
            let h = t - b;
            if !(h > 0.0) || ((h - step) / step).abs() > UNIFORM_STEP_RTOL {
                return Err(csv_err(row, format!("time {t} breaks the uniform step {step}")));
            }
        } else if let [b] = times[..] {
            if !(t > b) {
                return Err(csv_err(row, "times must be strictly increasing".into()));
            }
        }
        times.push(t);
        for &c in &cols {
            data.push(cell(c)?);
        }
    }
    let n = times.len();
    if n < 2 {
        return Err(csv_err(n + 1, "need at least two data rows".into()));
    }
    let states = Matrix::from_vec(n, cols.len(), data)?;
    Trajectory::new(times, states, labels)
}

fn csv_err(row: usize, message: String) -> Error {
    Error::Csv { row, message }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(text: &str) -> Result<Trajectory> {
        read_trajectory(text.as_bytes(), "t", None)
    }

    fn row_of(e: Error) -> usize {
        match e {
            Error::Csv { row, .. } => row,
            other => panic!("expected a CSV error, got {other}"),
        }
    }

    #[test]
    fn round_trip_with_writer() {
        let tr = Trajectory::new(
            vec![0.0, 0.1, 0.2],
            Matrix::from_rows(&[[1.0, -2.5], [0.1 + 0.2, 1e-300], [3.0, 4.0]]).unwrap(),
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let back = read(&tr.to_csv_string()).unwrap();
        assert_eq!(back, tr);
    }

    #[test]
    fn column_selection() {
        let text = "x,t,y\n1,0,2\n3,1,4\n";
        let tr = read_trajectory(text.as_bytes(), "t", Some(&["y".into(), "x".into()])).unwrap();
        assert_eq!(tr.dim_labels(), ["y", "x"]);
        assert_eq!(tr.state(1), [4.0, 3.0]);
        let all = read(text).unwrap();
        assert_eq!(all.dim_labels(), ["x", "y"]);
        assert!(matches!(read_trajectory(text.as_bytes(), "time", None), Err(Error::Csv { row: 1, .. })));
    }

    #[test]
    fn malformed_rows_report_line() {
        assert_eq!(row_of(read("t,x\n0,1\n1,2,3\n").unwrap_err()), 3);
        assert_eq!(row_of(read("t,x\n0,1\n1,abc\n").unwrap_err()), 3);
        assert_eq!(row_of(read("t,x\n0,1\n1,2\n2,NaN\n").unwrap_err()), 4);
        assert_eq!(row_of(read("t,x\n0,1\n1,2\n2.5,3\n").unwrap_err()), 4);
        assert_eq!(row_of(read("t,x\n0,1\n0,2\n").unwrap_err()), 3);
        assert!(matches!(read("t,x\n0,1\n"), Err(Error::Csv { .. })));
    }
}
