//! Matrix Market I/O: real `array` and `coordinate` matrices, with
//! `general`, `symmetric` and `skew-symmetric` storage.

use std::path::Path;

use crate::error::{MorError, Result};
use crate::linalg::Mat;

#[derive(Clone, Copy, PartialEq)]
enum Layout {
    Array,
    Coordinate,
}

#[derive(Clone, Copy, PartialEq)]
enum Symmetry {
    General,
    Symmetric,
    Skew,
}

struct Cursor<'a> {
    path: &'a str,
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Cursor<'a> {
    fn err(&self, line: usize, column: usize, message: impl Into<String>) -> MorError {
        MorError::Parse {
            path: self.path.to_string(),
            line,
            column,
            message: message.into(),
        }
    }

    /// Next non-comment, non-blank line as (1-based line number, text).
    fn next_data(&mut self) -> Option<(usize, &'a str)> {
        for (i, l) in self.lines.by_ref() {
            let t = l.trim();
            if t.is_empty() || t.starts_with('%') {
                continue;
            }
            return Some((i + 1, l));
        }
        None
    }
}

/// Whitespace-separated tokens with their 1-based columns.
fn tokens(line: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                out.push((s + 1, &line[s..i]));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push((s + 1, &line[s..]));
    }
    out
}

pub fn parse(text: &str, path: &str) -> Result<Mat> {
    let mut cur = Cursor {
        path,
        lines: text.lines().enumerate(),
    };
    let (_, header) = cur
        .lines
        .next()
        .ok_or_else(|| MorError::Parse {
            path: path.into(),
            line: 1,
            column: 1,
            message: "empty file".into(),
        })?;
    let words: Vec<String> = header.split_whitespace().map(|w| w.to_ascii_lowercase()).collect();
    if words.len() != 5 || words[0] != "%%matrixmarket" || words[1] != "matrix" {
        return Err(cur.err(1, 1, "expected '%%MatrixMarket matrix <layout> <field> <symmetry>'"));
    }
    let layout = match words[2].as_str() {
        "array" => Layout::Array,
        "coordinate" => Layout::Coordinate,
        other => return Err(cur.err(1, col_of(header, 2), format!("unsupported layout '{other}'"))),
    };
    match words[3].as_str() {
        "real" | "integer" | "double" => {}
        other => return Err(cur.err(1, col_of(header, 3), format!("unsupported field '{other}', entries must be real"))),
    }
    let sym = match words[4].as_str() {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        "skew-symmetric" => Symmetry::Skew,
        other => return Err(cur.err(1, col_of(header, 4), format!("unsupported symmetry '{other}'"))),
    };

    let (ln, size_line) = cur.next_data().ok_or_else(|| cur.err(2, 1, "missing size line"))?;
    let size = tokens(size_line);
    let want = if layout == Layout::Array { 2 } else { 3 };
    if size.len() != want {
        return Err(cur.err(ln, 1, format!("size line needs {want} integers")));
    }
    let mut dims = [0usize; 3];
    for (k, (col, tok)) in size.iter().enumerate() {
        dims[k] = tok
            .parse()
            .map_err(|_| cur.err(ln, *col, format!("'{tok}' is not a nonnegative integer")))?;
    }
    let (rows, cols) = (dims[0], dims[1]);
    if sym != Symmetry::General && rows != cols {
        return Err(cur.err(ln, 1, "symmetric storage needs a square matrix"));
    }
    let mut m = Mat::zeros(rows, cols);

    let value = |cur: &Cursor, line: usize, col: usize, tok: &str| -> Result<f64> {
        let v: f64 = tok
            .parse()
            .map_err(|_| cur.err(line, col, format!("'{tok}' is not a real number")))?;
        if !v.is_finite() {
            return Err(cur.err(line, col, "non-finite entry"));
        }
        Ok(v)
    };

    match layout {
        Layout::Array => {
            // column-major; symmetric forms store the lower triangle only
            let mut slots = Vec::new();
            for j in 0..cols {
                let first = match sym {
                    Symmetry::General => 0,
                    Symmetry::Symmetric => j,
                    Symmetry::Skew => j + 1,
                };
                for i in first..rows {
                    slots.push((i, j));
                }
            }
            let mut k = 0;
            while k < slots.len() {
                let (line, text) = cur
                    .next_data()
                    .ok_or_else(|| cur.err(ln + 1, 1, format!("expected {} entries, found {k}", slots.len())))?;
                for (col, tok) in tokens(text) {
                    if k >= slots.len() {
                        return Err(cur.err(line, col, "more entries than the declared size"));
                    }
                    let v = value(&cur, line, col, tok)?;
                    let (i, j) = slots[k];
                    place(&mut m, i, j, v, sym);
                    k += 1;
                }
            }
        }
        Layout::Coordinate => {
            let nnz = dims[2];
            for k in 0..nnz {
                let (line, text) = cur
                    .next_data()
                    .ok_or_else(|| cur.err(ln + 1, 1, format!("expected {nnz} entries, found {k}")))?;
                let t = tokens(text);
                if t.len() != 3 {
                    return Err(cur.err(line, 1, "coordinate entry needs 'row col value'"));
                }
                let idx = |n: usize, (col, tok): (usize, &str), bound: usize| -> Result<usize> {
                    let i: usize = tok
                        .parse()
                        .map_err(|_| cur.err(line, col, format!("'{tok}' is not an index")))?;
                    if i == 0 || i > bound {
                        return Err(cur.err(line, col, format!("index {i} outside 1..={bound} ({})", if n == 0 { "row" } else { "column" })));
                    }
                    Ok(i - 1)
                };
                let i = idx(0, t[0], rows)?;
                let j = idx(1, t[1], cols)?;
                let v = value(&cur, line, t[2].0, t[2].1)?;
                if sym != Symmetry::General && j > i {
                    return Err(cur.err(line, t[1].0, "symmetric storage uses the lower triangle"));
                }
                if sym == Symmetry::Skew && i == j {
                    return Err(cur.err(line, t[1].0, "skew-symmetric storage has no diagonal"));
                }
                m[(i, j)] += v;
                if i != j {
                    match sym {
                        Symmetry::General => {}
                        Symmetry::Symmetric => m[(j, i)] += v,
                        Symmetry::Skew => m[(j, i)] -= v,
                    }
                }
            }
        }
    }
    if let Some((line, text)) = cur.next_data() {
        let col = tokens(text).first().map_or(1, |t| t.0);
        return Err(cur.err(line, col, "trailing data after the declared entries"));
    }
    Ok(m)
}

fn place(m: &mut Mat, i: usize, j: usize, v: f64, sym: Symmetry) {
    m[(i, j)] = v;
    if i != j {
        match sym {
            Symmetry::General => {}
            Symmetry::Symmetric => m[(j, i)] = v,
            Symmetry::Skew => m[(j, i)] = -v,
        }
    }
}

fn col_of(line: &str, word: usize) -> usize {
    tokens(line).get(word).map_or(1, |t| t.0)
}

pub fn read(path: &Path) -> Result<Mat> {
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| MorError::Io {
        path: shown.clone(),
        message: e.to_string(),
    })?;
    parse(&text, &shown)
}

/// Dense `array general` text; 17 significant digits round-trip every
/// double.
pub fn format(m: &Mat) -> String {
    let mut s = String::from("%%MatrixMarket matrix array real general\n");
    s.push_str(&format!("{} {}\n", m.nrows(), m.ncols()));
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            s.push_str(&format!("{:.16e}\n", m[(i, j)]));
        }
    }
    s
}

pub fn write(path: &Path, m: &Mat) -> Result<()> {
    super::write_atomic(path, format(m).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn array_round_trip_is_exact() {
        let m = Mat::from_row_slice(2, 3, &[1.0 / 3.0, -2e-300, 7.0, 0.1, f64::MAX, -0.0]);
        assert_eq!(parse(&format(&m), "x").unwrap(), m);
    }

    #[test]
    fn coordinate_and_symmetric() {
        let t = "%%MatrixMarket matrix coordinate real symmetric\n% c\n2 2 2\n1 1 4\n2 1 -1.5\n";
        let m = parse(t, "x").unwrap();
        assert_eq!(m, Mat::from_row_slice(2, 2, &[4.0, -1.5, -1.5, 0.0]));
        let t = "%%MatrixMarket matrix array real skew-symmetric\n2 2\n3\n";
        assert_eq!(parse(t, "x").unwrap(), Mat::from_row_slice(2, 2, &[0.0, -3.0, 3.0, 0.0]));
    }

    #[test]
    fn errors_carry_position() {
        let t = "%%MatrixMarket matrix array real general\n2 1\n1.0\n  abc\n";
        match parse(t, "f.mtx").unwrap_err() {
            MorError::Parse { line, column, .. } => assert_eq!((line, column), (4, 3)),
            e => panic!("{e:?}"),
        }
        let t = "%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1.0\n";
        match parse(t, "f.mtx").unwrap_err() {
            MorError::Parse { line, column, .. } => assert_eq!((line, column), (3, 1)),
            e => panic!("{e:?}"),
        }
        let t = "%%MatrixMarket matrix array complex general\n1 1\n1 0\n";
        assert!(matches!(parse(t, "f").unwrap_err(), MorError::Parse { line: 1, .. }));
    }

    #[test]
    fn empty_matrices() {
        let m = Mat::zeros(0, 3);
        assert_eq!(parse(&format(&m), "x").unwrap().shape(), (0, 3));
    }
}
