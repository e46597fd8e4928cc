//! CSV input of training data and atomic file output.

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::forest::TrainingSample;
use crate::points::PointSet;

/// Reads `x1,...,xp,y` rows. The header is required and fixes `p`.
pub fn read_training_csv<R: Read>(reader: R) -> Result<TrainingSample> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(|e| csv_error(e, 1))?.clone();
    let cols = header.len();
    let expected: Vec<String> = (1..cols).map(|l| format!("x{l}")).chain(["y".to_string()]).collect();
    if cols < 2 || header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`, got `{}`", expected.join(","), header.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let p = cols - 1;
    let mut coords = Vec::new();
    let mut y = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(e, 0))?;
        let line = record.position().map_or(0, |pos| pos.line());
        if record.len() != cols {
            return Err(Error::Parse { line, message: format!("expected {cols} fields, found {}", record.len()) });
        }
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::Parse { line, message: format!("field {} is not a number: `{field}`", j + 1) })?;
            if !v.is_finite() {
                return Err(Error::Parse { line, message: format!("field {} is not finite", j + 1) });
            }
            if j < p {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Parse { line, message: format!("x{} = {v} lies outside [0, 1]", j + 1) });
                }
                coords.push(v);
            } else {
                y.push(v);
            }
        }
    }
    if y.is_empty() {
        return Err(Error::Parse { line: 2, message: "no data rows".into() });
    }
    TrainingSample::new(PointSet::new(p, coords)?, y)
}

fn csv_error(e: csv::Error, fallback_line: u64) -> Error {
    let line = e.position().map_or(fallback_line, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
            Error::Parse { line, message: format!("expected {expected_len} fields, found {len}") }
        }
        other => Error::Parse { line, message: format!("{other:?}") },
    }
}

pub fn write_training_csv<W: Write>(mut w: W, sample: &TrainingSample) -> Result<()> {
    let p = sample.dim();
    let header: Vec<String> = (1..=p).map(|l| format!("x{l}")).chain(["y".to_string()]).collect();
    writeln!(w, "{}", header.join(","))?;
    for (x, y) in sample.x().rows().zip(sample.y()) {
        let row: Vec<String> = x.iter().chain(std::iter::once(y)).map(f64::to_string).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so `path` is either untouched or complete.
pub fn write_atomic<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<&mut std::fs::File>) -> Result<()>,
{
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        write(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let x = PointSet::new(2, vec![0.1, 0.2, 0.3, 1.0]).unwrap();
        let s = TrainingSample::new(x, vec![-1.5, 2.0]).unwrap();
        let mut buf = Vec::new();
        write_training_csv(&mut buf, &s).unwrap();
        let back = read_training_csv(buf.as_slice()).unwrap();
        assert_eq!(back.x(), s.x());
        assert_eq!(back.y(), s.y());
    }

    fn parse_line(text: &str) -> u64 {
        match read_training_csv(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => line,
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert_eq!(parse_line("x1,x2,y\n0.1,0.2,1\n0.1,abc,1\n"), 3);
        assert_eq!(parse_line("x1,x2,y\n0.1,0.2,1\n0.5,0.5,1\n0.1,1.5,1\n"), 4);
        assert_eq!(parse_line("x1,x2,y\n0.1,0.2\n"), 2);
        assert_eq!(parse_line("a,b\n0.1,0.2\n"), 1);
    }
}
