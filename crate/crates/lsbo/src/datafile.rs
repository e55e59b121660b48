//! Dataset files: a header line `n dims`, then `n` rows of `dims`
//! space-separated values. Lines starting with `#` are comments.

use std::path::Path;

use lsbo_core::ndcore::Mat;

use crate::error::{io_err, Error, Result};

pub fn render(data: &Mat) -> String {
    let mut out = format!("{} {}\n", data.rows(), data.cols());
    for i in 0..data.rows() {
        let row: Vec<String> = data.row_slice(i).iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

/// Parses and checks that every value lies in `[lo, hi]`.
pub fn parse(text: &str, (lo, hi): (f64, f64)) -> Result<Mat> {
    let fail = |line: usize, message: String| Error::Format {
        what: "dataset",
        line,
        message,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (n, head) = lines.next().ok_or_else(|| fail(1, "missing `n dims` header".into()))?;
    let dims: Vec<usize> = head
        .split_whitespace()
        .map(|v| v.parse().map_err(|_| fail(n, format!("bad header value `{v}`"))))
        .collect::<Result<_>>()?;
    let [rows, cols] = dims[..] else {
        return Err(fail(n, "header must be `n dims`".into()));
    };
    if rows == 0 || cols == 0 {
        return Err(fail(n, "empty dataset".into()));
    }
    let mut data = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    for (n, line) in lines {
        if seen == rows {
            return Err(fail(n, format!("more than {rows} rows")));
        }
        let before = data.len();
        for v in line.split_whitespace() {
            let x: f64 = v.parse().map_err(|_| fail(n, format!("bad number `{v}`")))?;
            if !(x >= lo && x <= hi) {
                return Err(fail(n, format!("value {x} outside [{lo}, {hi}]")));
            }
            data.push(x);
        }
        if data.len() - before != cols {
            return Err(fail(n, format!("{} values, expected {cols}", data.len() - before)));
        }
        seen += 1;
    }
    if seen != rows {
        return Err(fail(0, format!("{seen} rows, header promises {rows}")));
    }
    Ok(Mat::from_fn(rows, cols, |i, j| data[i * cols + j]))
}

pub fn save(data: &Mat, path: &Path) -> Result<()> {
    std::fs::write(path, render(data)).map_err(io_err(path))
}

pub fn load(path: &Path, range: (f64, f64)) -> Result<Mat> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse(&text, range)
}
