//! Upper-triangular QUBO matrices and their sparse text format.
//!
//! The text format is a header line `n offset` followed by one `i j value`
//! triple per stored coefficient, with `i <= j < n`. Blank lines and lines
//! starting with `#` are ignored when parsing.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{ensure_len, Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct QuboMatrix {
    n: usize,
    coefficients: BTreeMap<(usize, usize), f64>,
    offset: f64,
}

impl QuboMatrix {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            coefficients: BTreeMap::new(),
            offset: 0.0,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn set_offset(&mut self, offset: f64) {
        self.offset = offset;
    }

    pub fn add_offset(&mut self, delta: f64) {
        self.offset += delta;
    }

    /// Accumulates `value` into `Q_ij`; mirror entries `(j, i)` fold onto `(i, j)`.
    pub fn add(&mut self, i: usize, j: usize, value: f64) -> Result<()> {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        if j >= self.n {
            return Err(Error::IndexOutOfRange {
                index: j,
                limit: self.n,
            });
        }
        *self.coefficients.entry((i, j)).or_insert(0.0) += value;
        Ok(())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let key = if i <= j { (i, j) } else { (j, i) };
        self.coefficients.get(&key).copied().unwrap_or(0.0)
    }

    /// Stored coefficients in `(i, j)` order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.coefficients.iter().map(|(&(i, j), &q)| (i, j, q))
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    /// Mean absolute value over the nonzero coefficients, or 1 if there are none.
    pub fn mean_abs_coefficient(&self) -> f64 {
        let (sum, count) = self
            .coefficients
            .values()
            .filter(|q| **q != 0.0)
            .fold((0.0, 0usize), |(s, c), q| (s + q.abs(), c + 1));
        if count == 0 {
            1.0
        } else {
            sum / count as f64
        }
    }

    /// `offset + sum_{i<=j} Q_ij x_i x_j`.
    pub fn energy(&self, x: &[bool]) -> Result<f64> {
        ensure_len(self.n, x.len())?;
        Ok(self.offset
            + self
                .coefficients
                .iter()
                .filter(|((i, j), _)| x[*i] && x[*j])
                .map(|(_, q)| q)
                .sum::<f64>())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.n, self.offset);
        for (i, j, q) in self.iter() {
            writeln!(out, "{i} {j} {q}").expect("writing to a String");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(k, l)| (k + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (line_no, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "missing header `n offset`".into(),
        })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected `n offset`, found {} fields", fields.len()),
            });
        }
        let n = parse_field::<usize>(fields[0], line_no, "n")?;
        let offset = parse_field::<f64>(fields[1], line_no, "offset")?;
        let mut q = QuboMatrix::new(n);
        q.offset = offset;
        for (line_no, line) in lines {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected `i j value`, found {} fields", fields.len()),
                });
            }
            let i = parse_field::<usize>(fields[0], line_no, "i")?;
            let j = parse_field::<usize>(fields[1], line_no, "j")?;
            let value = parse_field::<f64>(fields[2], line_no, "value")?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    line: line_no,
                    message: "non-finite coefficient".into(),
                });
            }
            q.add(i, j, value).map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        }
        Ok(q)
    }
}

fn parse_field<T: std::str::FromStr>(s: &str, line: usize, name: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Parse {
        line,
        message: format!("cannot parse {name} from `{s}`"),
    })
}

/// Free-function form of [`QuboMatrix::energy`].
pub fn qubo_energy(q: &QuboMatrix, x: &[bool]) -> Result<f64> {
    q.energy(x)
}
