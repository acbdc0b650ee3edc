//! Plain-text instance files: a header line `n m`, then `m` lines of three
//! integers. Blank lines and lines starting with `c` or `#` are skipped, and
//! a trailing `0` on a row is accepted.

use crate::error::{Error, Result};

pub(crate) struct RawInstance {
    pub n: usize,
    pub rows: Vec<[i64; 3]>,
}

fn parse_ints(line: &str, lineno: usize) -> Result<Vec<i64>> {
    line.split_whitespace()
        .map(|t| {
            t.parse::<i64>()
                .map_err(|_| Error::Parse(format!("line {lineno}: {t:?} is not an integer")))
        })
        .collect()
}

pub(crate) fn parse(text: &str) -> Result<RawInstance> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('c') && !l.starts_with('#'));
    let (hl, header) = lines.next().ok_or_else(|| Error::Parse("empty instance file".into()))?;
    let head = parse_ints(header, hl)?;
    let [n, m] = head[..] else {
        return Err(Error::Parse(format!("line {hl}: header must be `n m`")));
    };
    if n < 0 || m < 0 {
        return Err(Error::Parse(format!("line {hl}: negative size")));
    }
    let mut rows = Vec::with_capacity(m as usize);
    for (lineno, line) in lines {
        let mut ints = parse_ints(line, lineno)?;
        if ints.len() == 4 && ints[3] == 0 {
            ints.pop();
        }
        let [a, b, c] = ints[..] else {
            return Err(Error::Parse(format!("line {lineno}: expected three integers")));
        };
        rows.push([a, b, c]);
    }
    if rows.len() != m as usize {
        return Err(Error::Parse(format!("header announces {m} rows, found {}", rows.len())));
    }
    Ok(RawInstance { n: n as usize, rows })
}

pub(crate) fn render(n: usize, rows: impl Iterator<Item = [i64; 3]>) -> String {
    let rows: Vec<_> = rows.collect();
    let mut out = format!("{n} {}\n", rows.len());
    for [a, b, c] in rows {
        out.push_str(&format!("{a} {b} {c}\n"));
    }
    out
}
