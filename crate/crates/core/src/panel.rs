//! Return and factor panels, plus their CSV representations.
//!
//! Returns file: header `entity_id,t1,t2,...`, one row per entity.
//! Factors file: header `period,f1,...,f{r}`, one row per period.

use std::cmp::Ordering;
use std::fs::File;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use ndarray::{s, Array2};

use crate::error::{Error, Result};
use crate::linalg::{self, Settings};

/// Orders period labels numerically when both parse as integers, lexically otherwise
/// (ISO dates such as `2010-01` sort correctly either way).
pub fn compare_periods(a: &str, b: &str) -> Ordering {
    match (a.trim().parse::<i64>(), b.trim().parse::<i64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        _ => a.cmp(b),
    }
}

fn check_increasing(time_index: &[String]) -> Result<()> {
    for w in time_index.windows(2) {
        if compare_periods(&w[0], &w[1]) != Ordering::Less {
            return Err(Error::Contract(format!(
                "time index must be strictly increasing, found {:?} before {:?}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

fn check_finite(values: &Array2<f64>, what: &str) -> Result<()> {
    if let Some(((i, j), v)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Contract(format!("{what} entry ({i}, {j}) is not finite: {v}")));
    }
    Ok(())
}

fn default_periods(n: usize) -> Vec<String> {
    (1..=n).map(|t| t.to_string()).collect()
}

/// `p×n` matrix of entity excess returns.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    values: Array2<f64>,
    entity_ids: Vec<String>,
    time_index: Vec<String>,
}

impl ReturnPanel {
    pub const MIN_PERIODS: usize = 4;

    pub fn new(values: Array2<f64>, entity_ids: Vec<String>, time_index: Vec<String>) -> Result<Self> {
        let (p, n) = values.dim();
        if p < 1 || n < Self::MIN_PERIODS {
            return Err(Error::Dimension(format!(
                "return panel needs p >= 1 and n >= {}, got p={p}, n={n}",
                Self::MIN_PERIODS
            )));
        }
        if entity_ids.len() != p || time_index.len() != n {
            return Err(Error::Dimension(format!(
                "labels do not match a {p}x{n} panel ({} ids, {} periods)",
                entity_ids.len(),
                time_index.len()
            )));
        }
        check_increasing(&time_index)?;
        check_finite(&values, "return")?;
        Ok(Self {
            values,
            entity_ids,
            time_index,
        })
    }

    /// Panel with generated labels `E0001..` and periods `1..=n`.
    pub fn from_values(values: Array2<f64>) -> Result<Self> {
        let (p, n) = values.dim();
        let ids = (1..=p).map(|i| format!("E{i:04}")).collect();
        Self::new(values, ids, default_periods(n))
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn entity_ids(&self) -> &[String] {
        &self.entity_ids
    }

    pub fn time_index(&self) -> &[String] {
        &self.time_index
    }

    pub fn p(&self) -> usize {
        self.values.nrows()
    }

    pub fn n(&self) -> usize {
        self.values.ncols()
    }

    pub fn slice_periods(&self, range: Range<usize>) -> Result<Self> {
        Self::new(
            self.values.slice(s![.., range.clone()]).to_owned(),
            self.entity_ids.clone(),
            self.time_index[range].to_vec(),
        )
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut text = String::new();
        File::open(path)?.read_to_string(&mut text)?;
        Self::parse_csv(&text, &path.display().to_string())
    }

    pub fn parse_csv(text: &str, source: &str) -> Result<Self> {
        let table = parse_table(text, source)?;
        let n = table.header.len() - 1;
        let p = table.rows.len();
        let mut values = Array2::zeros((p, n));
        let mut ids = Vec::with_capacity(p);
        for (i, (label, row)) in table.rows.into_iter().enumerate() {
            ids.push(label);
            for (t, v) in row.into_iter().enumerate() {
                values[[i, t]] = v;
            }
        }
        Self::new(values, ids, table.header[1..].to_vec())
    }

    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(&mut out);
        let mut header = vec!["entity_id".to_string()];
        header.extend(self.time_index.iter().cloned());
        w.write_record(&header)?;
        for (i, id) in self.entity_ids.iter().enumerate() {
            let mut rec = vec![id.clone()];
            rec.extend(self.values.row(i).iter().map(|v| format!("{v:?}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `n×r` matrix of observed factor realizations.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPanel {
    values: Array2<f64>,
    names: Vec<String>,
    time_index: Vec<String>,
}

impl FactorPanel {
    pub fn new(values: Array2<f64>, names: Vec<String>, time_index: Vec<String>) -> Result<Self> {
        let (n, r) = values.dim();
        if r == 0 {
            return Err(Error::Dimension("factor panel needs at least one factor".into()));
        }
        if n <= r + 1 {
            return Err(Error::Dimension(format!(
                "factor panel needs n > r + 1, got n={n}, r={r}"
            )));
        }
        if names.len() != r || time_index.len() != n {
            return Err(Error::Dimension(format!(
                "labels do not match a {n}x{r} factor panel ({} names, {} periods)",
                names.len(),
                time_index.len()
            )));
        }
        check_increasing(&time_index)?;
        check_finite(&values, "factor")?;
        let demeaned = linalg::demean_columns(values.view())?;
        // Full column rank after demeaning; solving against a dummy response runs the rank check.
        linalg::least_squares_with(&Settings::default(), demeaned.view(), Array2::zeros((n, 1)).view())?;
        Ok(Self {
            values,
            names,
            time_index,
        })
    }

    pub fn from_values(values: Array2<f64>) -> Result<Self> {
        let (n, r) = values.dim();
        let names = (1..=r).map(|j| format!("f{j}")).collect();
        Self::new(values, names, default_periods(n))
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn time_index(&self) -> &[String] {
        &self.time_index
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn r(&self) -> usize {
        self.values.ncols()
    }

    pub fn slice_periods(&self, range: Range<usize>) -> Result<Self> {
        Self::new(
            self.values.slice(s![range.clone(), ..]).to_owned(),
            self.names.clone(),
            self.time_index[range].to_vec(),
        )
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut text = String::new();
        File::open(path)?.read_to_string(&mut text)?;
        Self::parse_csv(&text, &path.display().to_string())
    }

    pub fn parse_csv(text: &str, source: &str) -> Result<Self> {
        let table = parse_table(text, source)?;
        let r = table.header.len() - 1;
        let n = table.rows.len();
        let mut values = Array2::zeros((n, r));
        let mut periods = Vec::with_capacity(n);
        for (t, (label, row)) in table.rows.into_iter().enumerate() {
            periods.push(label);
            for (j, v) in row.into_iter().enumerate() {
                values[[t, j]] = v;
            }
        }
        Self::new(values, table.header[1..].to_vec(), periods)
    }

    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(&mut out);
        let mut header = vec!["period".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for (t, period) in self.time_index.iter().enumerate() {
            let mut rec = vec![period.clone()];
            rec.extend(self.values.row(t).iter().map(|v| format!("{v:?}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Checks that both panels cover exactly the same periods, naming the first mismatch.
pub fn check_alignment(returns: &ReturnPanel, factors: &FactorPanel) -> Result<()> {
    let a = returns.time_index();
    let b = factors.time_index();
    for (x, y) in a.iter().zip(b) {
        if x != y {
            // Report whichever period is missing from the other side.
            let missing = if compare_periods(x, y) == Ordering::Less { x } else { y };
            return Err(Error::Misaligned {
                period: missing.clone(),
            });
        }
    }
    match a.len().cmp(&b.len()) {
        Ordering::Equal => Ok(()),
        Ordering::Greater => Err(Error::Misaligned {
            period: a[b.len()].clone(),
        }),
        Ordering::Less => Err(Error::Misaligned {
            period: b[a.len()].clone(),
        }),
    }
}

struct Table {
    header: Vec<String>,
    rows: Vec<(String, Vec<f64>)>,
}

fn parse_table(text: &str, source: &str) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let header: Vec<String> = match records.next() {
        Some(rec) => rec?.iter().map(str::to_string).collect(),
        None => {
            return Err(Error::Parse {
                path: source.into(),
                row: 1,
                column: 1,
                message: "empty file".into(),
            })
        }
    };
    if header.len() < 2 {
        return Err(Error::Parse {
            path: source.into(),
            row: 1,
            column: header.len().max(1),
            message: "header needs a label column and at least one value column".into(),
        });
    }
    let width = header.len();
    let mut rows = Vec::new();
    for (k, rec) in records.enumerate() {
        let line = k + 2;
        let rec = rec?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let mut values = Vec::with_capacity(width - 1);
        for col in 0..width {
            let cell = rec.get(col).unwrap_or("");
            if cell.is_empty() {
                return Err(Error::Parse {
                    path: source.into(),
                    row: line,
                    column: col + 1,
                    message: format!("missing value for {:?}", header[col]),
                });
            }
            if col > 0 {
                let v: f64 = cell.parse().map_err(|_| Error::Parse {
                    path: source.into(),
                    row: line,
                    column: col + 1,
                    message: format!("cannot parse {cell:?} as a number"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        path: source.into(),
                        row: line,
                        column: col + 1,
                        message: format!("non-finite value {cell:?}"),
                    });
                }
                values.push(v);
            }
        }
        if rec.len() > width {
            return Err(Error::Parse {
                path: source.into(),
                row: line,
                column: width + 1,
                message: "more cells than header columns".into(),
            });
        }
        rows.push((rec[0].to_string(), values));
    }
    Ok(Table { header, rows })
}
