//! CSV datasets and covariance files.

use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use robust_si::model::Dataset;

use crate::CliError;

/// Reads a headed CSV. Features default to every column except the response.
/// Rows are numbered from 1, not counting the header.
pub fn ingest_csv<R: Read>(
    reader: R,
    response: &str,
    features: &[String],
    add_intercept: bool,
    sigma2: f64,
) -> Result<Dataset, CliError> {
    let (x, y) = read_table(reader, response, features, add_intercept)?;
    Ok(Dataset::with_isotropic_noise(x, y, sigma2)?)
}

pub fn ingest_csv_path(
    path: &Path,
    response: &str,
    features: &[String],
    add_intercept: bool,
    sigma2: f64,
) -> Result<Dataset, CliError> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::Io(format!("cannot open {}: {e}", path.display())))?;
    ingest_csv(file, response, features, add_intercept, sigma2)
}

/// Design matrix and response from a headed CSV.
pub fn read_table<R: Read>(
    reader: R,
    response: &str,
    features: &[String],
    add_intercept: bool,
) -> Result<(DMatrix<f64>, DVector<f64>), CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::Io(format!("cannot read header: {e}")))?
        .iter()
        .map(str::to_owned)
        .collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::MissingColumn(name.to_owned()))
    };
    let y_col = find(response)?;
    let f_cols: Vec<usize> = if features.is_empty() {
        (0..header.len()).filter(|&c| c != y_col).collect()
    } else {
        features.iter().map(|f| find(f)).collect::<Result<_, _>>()?
    };

    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 1;
        let rec = rec.map_err(|e| CliError::Parse {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        let cell = |c: usize| -> Result<f64, CliError> {
            let raw = rec.get(c).ok_or_else(|| CliError::Parse {
                row,
                column: header[c].clone(),
                message: "missing cell".into(),
            })?;
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(CliError::Parse {
                    row,
                    column: header[c].clone(),
                    message: format!("\"{raw}\" is not a finite number"),
                }),
            }
        };
        if add_intercept {
            xs.push(1.0);
        }
        for &c in &f_cols {
            xs.push(cell(c)?);
        }
        ys.push(cell(y_col)?);
    }
    let n = ys.len();
    let d = f_cols.len() + usize::from(add_intercept);
    if n == 0 {
        return Err(CliError::Core(robust_si::Error::InvalidInput(
            "no data rows".into(),
        )));
    }
    Ok((DMatrix::from_row_slice(n, d, &xs), DVector::from_vec(ys)))
}

/// Writes `x` (without a leading intercept column when `has_intercept`) and
/// `y` as a headed CSV whose cells round-trip exactly.
pub fn emit_dataset_csv(dataset: &Dataset, has_intercept: bool) -> Vec<u8> {
    let skip = usize::from(has_intercept);
    let d = dataset.d();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (skip..d).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    w.write_record(&header).expect("in-memory write");
    for i in 0..dataset.n() {
        let mut rec: Vec<String> = (skip..d)
            .map(|j| format!("{:.16e}", dataset.x()[(i, j)]))
            .collect();
        rec.push(format!("{:.16e}", dataset.y()[i]));
        w.write_record(&rec).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Parses a square covariance matrix, one row per line, cells separated by
/// commas or whitespace. Lines starting with `#` are ignored.
pub fn parse_sigma(text: &str) -> Result<DMatrix<f64>, CliError> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .enumerate()
            .map(|(c, t)| match t.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(CliError::Parse {
                    row: k + 1,
                    column: (c + 1).to_string(),
                    message: format!("\"{t}\" is not a finite number"),
                }),
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 {
        return Err(CliError::Core(robust_si::Error::InvalidInput(
            "covariance file is empty".into(),
        )));
    }
    if let Some((k, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
        return Err(CliError::Core(robust_si::Error::DimensionMismatch(
            format!(
                "covariance row {} has {} entries, expected {n}",
                k + 1,
                r.len()
            ),
        )));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

pub fn read_sigma_file(path: &Path) -> Result<DMatrix<f64>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    parse_sigma(&text)
}
