//! Delimited-text and JSON file formats.
//!
//! Triangles are read from long-form tables with the header
//! `experience_period,development_period,cumulative_loss`; lines starting
//! with `#` are comments. Every written artifact starts with the resolved
//! run configuration: a `# run: {...}` line in tables, a `run` field in JSON.

use std::fs;
use std::io::Write;
use std::path::Path;

use lossdev_core::{Cell, Triangle};
use serde::Serialize;

use crate::error::{Error, Result};

pub const LONG_HEADER: [&str; 3] = ["experience_period", "development_period", "cumulative_loss"];

fn reader(comment: bool) -> csv::ReaderBuilder {
    let mut b = csv::ReaderBuilder::new();
    b.trim(csv::Trim::All).comment(comment.then_some(b'#'));
    b
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

fn parse_field<T: std::str::FromStr>(path: &Path, record: &csv::StringRecord, k: usize, name: &str) -> Result<T> {
    let raw = record.get(k).unwrap_or("");
    raw.parse()
        .map_err(|_| Error::parse(path, format!("line {}: {name} must be a number, got {raw:?}", line_of(record))))
}

/// Parses long-form cells from any reader. `path` only labels errors.
pub fn parse_cells<R: std::io::Read>(input: R, path: &Path) -> Result<Vec<Cell>> {
    let mut rdr = reader(true).has_headers(true).from_reader(input);
    let headers = rdr.headers().map_err(|e| Error::parse(path, e.to_string()))?.clone();
    if headers.iter().ne(LONG_HEADER) {
        return Err(Error::parse(
            path,
            format!("expected header {}, got {}", LONG_HEADER.join(","), headers.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let mut cells = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::parse(path, e.to_string()))?;
        cells.push(Cell {
            i: parse_field(path, &record, 0, LONG_HEADER[0])?,
            j: parse_field(path, &record, 1, LONG_HEADER[1])?,
            loss: parse_field(path, &record, 2, LONG_HEADER[2])?,
        });
    }
    Ok(cells)
}

pub fn read_cells(path: &Path) -> Result<Vec<Cell>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_cells(file, path)
}

/// Loads a long-form triangle; `N` and `M` are the largest indices present.
pub fn read_triangle(path: &Path) -> Result<Triangle> {
    let cells = read_cells(path)?;
    Triangle::from_cells(&cells).map_err(|e| Error::parse(path, e.to_string()))
}

/// Parses a wide matrix: one line per experience period, one column per
/// development period. Empty or `NA` fields end a row's observed prefix.
/// A first line that does not parse as numbers is taken as a header.
pub fn parse_wide<R: std::io::Read>(input: R, path: &Path) -> Result<Triangle> {
    let mut rdr = reader(true).has_headers(false).flexible(true).from_reader(input);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = 0;
    for (k, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::parse(path, e.to_string()))?;
        let missing = |s: &str| s.is_empty() || s.eq_ignore_ascii_case("na");
        let parsed: Vec<Option<f64>> = record.iter().map(|s| s.parse().ok()).collect();
        if k == 0 && record.iter().zip(&parsed).any(|(s, p)| p.is_none() && !missing(s)) {
            continue;
        }
        let mut row = Vec::new();
        let mut ended = false;
        for (j, (raw, value)) in record.iter().zip(parsed).enumerate() {
            match value {
                Some(v) if !ended => row.push(v),
                None if missing(raw) => ended = true,
                _ => {
                    let i = rows.len() + 1;
                    return Err(Error::parse(
                        path,
                        format!("line {}: cell ({i}, {}) {raw:?} is not part of a contiguous numeric prefix", line_of(&record), j + 1),
                    ));
                }
            }
        }
        width = width.max(record.len());
        rows.push(row);
    }
    Triangle::from_rows(rows, width).map_err(|e| Error::parse(path, e.to_string()))
}

pub fn read_wide(path: &Path) -> Result<Triangle> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_wide(file, path)
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut builder = tempfile::Builder::new();
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        builder.permissions(fs::Permissions::from_mode(0o644));
    }
    let mut tmp = builder.tempfile_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// A delimited table under construction, headed by the run record.
pub struct Table {
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new<I, S>(run: &str, header: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        let mut buf = Vec::new();
        writeln!(buf, "# run: {run}").expect("writing to memory");
        let mut writer = csv::Writer::from_writer(buf);
        writer.write_record(header).expect("writing to memory");
        Self { writer }
    }

    pub fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).expect("writing to memory");
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.writer.into_inner().expect("writing to memory")
    }

    pub fn write(self, path: &Path) -> Result<()> {
        write_atomic(path, &self.into_bytes())
    }
}

#[derive(Serialize)]
struct Stamped<'a, R: Serialize, T: Serialize> {
    run: &'a R,
    #[serde(flatten)]
    body: &'a T,
}

/// Pretty JSON of `body` (a struct or map) with a leading `run` field.
pub fn write_json<R: Serialize, T: Serialize>(path: &Path, run: &R, body: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(&Stamped { run, body })?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Long-form table of cells.
pub fn cells_table<'a>(run: &str, cells: impl IntoIterator<Item = &'a Cell>) -> Table {
    let mut t = Table::new(run, LONG_HEADER);
    for c in cells {
        t.row([c.i.to_string(), c.j.to_string(), c.loss.to_string()]);
    }
    t
}

pub fn num(x: f64) -> String {
    x.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("t.csv")
    }

    #[test]
    fn long_form_round_trip() {
        let text = "# note\nexperience_period,development_period,cumulative_loss\n1,1,100\n1,2,150\n2,1,120\n";
        let t = Triangle::from_cells(&parse_cells(text.as_bytes(), p()).unwrap()).unwrap();
        assert_eq!((t.n_experience(), t.n_development()), (2, 2));
        assert_eq!(t.row(1), &[100.0, 150.0]);
        let cells: Vec<Cell> = t.cells().collect();
        let bytes = cells_table("{}", &cells).into_bytes();
        let back = parse_cells(bytes.as_slice(), p()).unwrap();
        assert_eq!(back, cells);
    }

    #[test]
    fn long_form_rejects_bad_header_and_values() {
        let err = parse_cells("i,j,loss\n1,1,1\n".as_bytes(), p()).unwrap_err();
        assert!(err.to_string().contains("expected header"));
        let err = parse_cells("experience_period,development_period,cumulative_loss\n1,x,1\n".as_bytes(), p()).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn wide_matrix_with_header_and_blanks() {
        let text = "dev1,dev2,dev3\n1,2,3\n4,5,\n6,NA,NA\n";
        let t = parse_wide(text.as_bytes(), p()).unwrap();
        assert_eq!(t.n_development(), 3);
        assert_eq!(t.rows(), &[vec![1.0, 2.0, 3.0], vec![4.0, 5.0], vec![6.0]]);
    }

    #[test]
    fn wide_matrix_rejects_interior_gap() {
        assert!(parse_wide("1,,3\n4,5,6\n".as_bytes(), p()).is_err());
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/out.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"two");
    }

    #[test]
    fn json_carries_run_first() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.json");
        #[derive(Serialize)]
        struct Body {
            value: u32,
        }
        write_json(&path, &serde_json::json!({"seed": 7}), &Body { value: 3 }).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("{\n  \"run\": {\n    \"seed\": 7\n  },\n  \"value\": 3"), "{text}");
    }
}
