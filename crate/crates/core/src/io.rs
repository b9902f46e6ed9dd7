//! File formats: numeric CSV, the binary matrix container, and panel CSV.
//!
//! The binary container holds one matrix: an eight-byte magic, row and
//! column counts as little-endian `u64`, then the entries as little-endian
//! `f64` in row-major order, then an optional column-name table. Round trips
//! are bit exact, including negative zero. Other persisted objects (factor
//! models) reuse the same primitives with their own magic.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Magic bytes opening a plain matrix container.
pub const MATRIX_MAGIC: &[u8; 8] = b"FARMAUG1";

/// Loads a numeric CSV into a matrix. With `has_header` the first record
/// becomes the column names.
pub fn load_csv(path: &Path, has_header: bool) -> Result<Matrix> {
    let file = File::open(path).map_err(|e| open_err(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(false)
        .from_reader(BufReader::new(file));
    let names: Option<Vec<String>> = if has_header {
        Some(
            rdr.headers()
                .map_err(|e| Error::data(format!("{}: {}", path.display(), e)))?
                .iter()
                .map(str::to_string)
                .collect(),
        )
    } else {
        None
    };
    let mut data = Vec::new();
    let mut p = None;
    let mut n = 0usize;
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::data(format!("{}: {}", path.display(), e)))?;
        let width = record.len();
        match p {
            None => p = Some(width),
            Some(w) if w != width => {
                return Err(Error::data(format!(
                    "{}: row {} has {} fields, expected {}",
                    path.display(),
                    i,
                    width,
                    w
                )))
            }
            _ => {}
        }
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::data(format!(
                    "{}: row {}, column {}: cannot parse {:?} as a number",
                    path.display(),
                    i,
                    j,
                    field
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::data(format!(
                    "{}: row {}, column {}: non-finite value",
                    path.display(),
                    i,
                    j
                )));
            }
            data.push(v);
        }
        n += 1;
    }
    let p = p.ok_or_else(|| Error::data(format!("{}: no data rows", path.display())))?;
    let mut m = Matrix::new(n, p, data)?;
    if let Some(names) = names {
        m.set_col_names(names)?;
    }
    Ok(m)
}

/// Writes a matrix as CSV. Column names become a header row when present.
pub fn save_csv(m: &Matrix, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| open_err(path, e))?;
    let mut w = BufWriter::new(file);
    if let Some(names) = m.col_names() {
        writeln!(w, "{}", names.join(","))?;
    }
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a single-column CSV (or the first column of a wider one errors).
pub fn load_vector_csv(path: &Path, has_header: bool) -> Result<Vec<f64>> {
    let m = load_csv(path, has_header)?;
    if m.ncols() != 1 {
        return Err(Error::data(format!(
            "{}: expected a single column, found {}",
            path.display(),
            m.ncols()
        )));
    }
    Ok(m.col(0))
}

/// Saves a matrix in the binary container format.
pub fn save_bin(m: &Matrix, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| open_err(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(MATRIX_MAGIC)?;
    write_matrix(&mut w, m)?;
    w.flush()?;
    Ok(())
}

/// Loads a matrix from the binary container format.
pub fn load_bin(path: &Path) -> Result<Matrix> {
    let file = File::open(path).map_err(|e| open_err(path, e))?;
    let mut r = BufReader::new(file);
    expect_magic(&mut r, MATRIX_MAGIC, path)?;
    read_matrix(&mut r).map_err(|e| locate(e, path))
}

fn open_err(path: &Path, e: std::io::Error) -> Error {
    Error::data(format!("{}: {}", path.display(), e))
}

fn locate(e: Error, path: &Path) -> Error {
    match e {
        Error::Data(msg) => Error::data(format!("{}: {}", path.display(), msg)),
        Error::Io(io) => Error::data(format!("{}: {}", path.display(), io)),
        other => other,
    }
}

pub(crate) fn expect_magic(r: &mut impl Read, magic: &[u8; 8], path: &Path) -> Result<()> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| Error::data(format!("{}: truncated header", path.display())))?;
    if &buf != magic {
        return Err(Error::data(format!(
            "{}: bad magic {:?}, expected {:?}",
            path.display(),
            String::from_utf8_lossy(&buf),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

pub(crate) fn write_u8(w: &mut impl Write, v: u8) -> Result<()> {
    w.write_all(&[v])?;
    Ok(())
}

pub(crate) fn read_u8(r: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(b[0])
}

pub(crate) fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn write_f64_vec(w: &mut impl Write, v: &[f64]) -> Result<()> {
    write_u64(w, v.len() as u64)?;
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_f64_vec(r: &mut impl Read) -> Result<Vec<f64>> {
    let len = read_u64(r)? as usize;
    let mut out = Vec::with_capacity(len.min(1 << 24));
    let mut b = [0u8; 8];
    for _ in 0..len {
        r.read_exact(&mut b).map_err(truncated)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

pub(crate) fn write_string(w: &mut impl Write, s: &str) -> Result<()> {
    let bytes = s.as_bytes();
    w.write_all(&(bytes.len() as u32).to_le_bytes())?;
    w.write_all(bytes)?;
    Ok(())
}

pub(crate) fn read_string(r: &mut impl Read) -> Result<String> {
    let mut lb = [0u8; 4];
    r.read_exact(&mut lb).map_err(truncated)?;
    let len = u32::from_le_bytes(lb) as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(truncated)?;
    String::from_utf8(buf).map_err(|_| Error::data("invalid UTF-8 in name table".to_string()))
}

/// Writes the dimension/data/name-table payload shared by all containers.
pub(crate) fn write_matrix(w: &mut impl Write, m: &Matrix) -> Result<()> {
    write_u64(w, m.nrows() as u64)?;
    write_u64(w, m.ncols() as u64)?;
    for i in 0..m.nrows() {
        for v in m.row(i) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    match m.col_names() {
        None => write_u8(w, 0)?,
        Some(names) => {
            write_u8(w, 1)?;
            for name in names {
                write_string(w, name)?;
            }
        }
    }
    Ok(())
}

pub(crate) fn read_matrix(r: &mut impl Read) -> Result<Matrix> {
    let n = read_u64(r)? as usize;
    let p = read_u64(r)? as usize;
    let total = n.checked_mul(p).ok_or_else(|| Error::data("dimension overflow".to_string()))?;
    let mut data = Vec::with_capacity(total.min(1 << 26));
    let mut b = [0u8; 8];
    for _ in 0..total {
        r.read_exact(&mut b).map_err(truncated)?;
        data.push(f64::from_le_bytes(b));
    }
    let mut m = Matrix::new(n, p, data)?;
    match read_u8(r)? {
        0 => {}
        1 => {
            let mut names = Vec::with_capacity(p);
            for _ in 0..p {
                names.push(read_string(r)?);
            }
            m.set_col_names(names)?;
        }
        flag => return Err(Error::data(format!("bad name-table flag {flag}"))),
    }
    Ok(m)
}

fn truncated(_: std::io::Error) -> Error {
    Error::data("truncated file".to_string())
}

/// One observation of a panel: an asset on a date with a label and optional
/// market capitalization. Features live in the companion matrix, aligned by
/// row index.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelRecord {
    pub asset_id: String,
    pub date: i64,
    pub y: f64,
    pub market_cap: Option<f64>,
}

/// A loaded panel: records plus the feature matrix, row `i` of `features`
/// belonging to `records[i]`. Rows are sorted by date, then asset id, so
/// rolling windows over row ranges never look into the future.
#[derive(Debug, Clone)]
pub struct Panel {
    pub records: Vec<PanelRecord>,
    pub features: Matrix,
}

/// Loads a panel CSV. The header is mandatory and must contain `asset_id`,
/// `date`, and `y`; `market_cap` is optional; every remaining column is a
/// feature. Dates are integers or ISO `YYYY-MM-DD`, stored as day numbers.
pub fn load_panel_csv(path: &Path) -> Result<Panel> {
    let file = File::open(path).map_err(|e| open_err(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(BufReader::new(file));
    let headers = rdr
        .headers()
        .map_err(|e| Error::data(format!("{}: {}", path.display(), e)))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let asset_col = col("asset_id")
        .ok_or_else(|| Error::data(format!("{}: missing asset_id column", path.display())))?;
    let date_col = col("date")
        .ok_or_else(|| Error::data(format!("{}: missing date column", path.display())))?;
    let y_col =
        col("y").ok_or_else(|| Error::data(format!("{}: missing y column", path.display())))?;
    let cap_col = col("market_cap");
    let reserved = [Some(asset_col), Some(date_col), Some(y_col), cap_col];
    let feature_cols: Vec<usize> =
        (0..headers.len()).filter(|j| !reserved.contains(&Some(*j))).collect();
    let feature_names: Vec<String> =
        feature_cols.iter().map(|&j| headers[j].to_string()).collect();

    let mut rows: Vec<(PanelRecord, Vec<f64>)> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::data(format!("{}: {}", path.display(), e)))?;
        let field = |j: usize| record.get(j).unwrap_or("");
        let parse_num = |j: usize, what: &str| -> Result<f64> {
            let v: f64 = field(j).trim().parse().map_err(|_| {
                Error::data(format!(
                    "{}: row {}: cannot parse {} value {:?}",
                    path.display(),
                    i,
                    what,
                    field(j)
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::data(format!(
                    "{}: row {}: non-finite {} value",
                    path.display(),
                    i,
                    what
                )));
            }
            Ok(v)
        };
        let date = parse_date(field(date_col).trim()).map_err(|e| locate(e, path))?;
        let market_cap = match cap_col {
            Some(j) if !field(j).trim().is_empty() => Some(parse_num(j, "market_cap")?),
            _ => None,
        };
        let mut feats = Vec::with_capacity(feature_cols.len());
        for &j in &feature_cols {
            feats.push(parse_num(j, &headers[j])?);
        }
        rows.push((
            PanelRecord {
                asset_id: field(asset_col).trim().to_string(),
                date,
                y: parse_num(y_col, "y")?,
                market_cap,
            },
            feats,
        ));
    }
    if rows.is_empty() {
        return Err(Error::data(format!("{}: no data rows", path.display())));
    }
    rows.sort_by(|a, b| (a.0.date, &a.0.asset_id).cmp(&(b.0.date, &b.0.asset_id)));
    let records: Vec<PanelRecord> = rows.iter().map(|(r, _)| r.clone()).collect();
    let feats: Vec<Vec<f64>> = rows.into_iter().map(|(_, f)| f).collect();
    let mut features = Matrix::from_rows(&feats)?;
    features.set_col_names(feature_names)?;
    Ok(Panel { records, features })
}

/// Parses a date as either a plain integer day number or ISO `YYYY-MM-DD`,
/// the latter converted to days since 1970-01-01 so that adding an offset
/// means adding calendar days.
pub fn parse_date(s: &str) -> Result<i64> {
    if let Ok(v) = s.parse::<i64>() {
        return Ok(v);
    }
    let parts: Vec<&str> = s.split('-').collect();
    if parts.len() == 3 {
        let y: i64 = parts[0].parse().map_err(|_| bad_date(s))?;
        let m: u32 = parts[1].parse().map_err(|_| bad_date(s))?;
        let d: u32 = parts[2].parse().map_err(|_| bad_date(s))?;
        if (1..=12).contains(&m) && (1..=31).contains(&d) {
            return Ok(days_from_civil(y, m, d));
        }
    }
    Err(bad_date(s))
}

fn bad_date(s: &str) -> Error {
    Error::data(format!("cannot parse date {s:?} (expected an integer or YYYY-MM-DD)"))
}

/// Days since 1970-01-01 for a proleptic Gregorian date.
fn days_from_civil(y: i64, m: u32, d: u32) -> i64 {
    let y = if m <= 2 { y - 1 } else { y };
    let era = if y >= 0 { y } else { y - 399 } / 400;
    let yoe = y - era * 400;
    let mp = (m as i64 + 9) % 12;
    let doy = (153 * mp + 2) / 5 + d as i64 - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146097 + doe - 719468
}
