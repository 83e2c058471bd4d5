//! Daily close CSVs into [`PriceSeries`].
//!
//! Rows map to trading-period indices `1..=n` in file order; calendar gaps are
//! ignored, so `T` and `omega` are expressed in trading periods.

use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use crate::error::{LpplError, Result};
use crate::model::PriceSeries;
use crate::weights::{build_weights, WeightScheme};

/// Header names tried, in order, when no column is given.
const CLOSE_NAMES: [&str; 5] = ["close", "adj close", "adj_close", "price", "value"];
const DATE_NAMES: [&str; 3] = ["date", "timestamp", "time"];

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum ColumnSpec {
    /// A close-like header name, or the last column.
    #[default]
    Auto,
    Name(String),
    /// 0-based position.
    Index(usize),
}

impl FromStr for ColumnSpec {
    type Err = LpplError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Ok(ColumnSpec::Auto);
        }
        Ok(match s.parse::<usize>() {
            Ok(i) => ColumnSpec::Index(i),
            Err(_) => ColumnSpec::Name(s.to_string()),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub dates: Option<Vec<String>>,
    pub closes: Vec<f64>,
    pub source: String,
    /// Non-fatal findings such as out-of-order dates.
    pub warnings: Vec<String>,
}

impl RawSeries {
    pub fn len(&self) -> usize {
        self.closes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.closes.is_empty()
    }

    pub fn log_closes(&self) -> Vec<f64> {
        self.closes.iter().map(|c| c.ln()).collect()
    }
}

pub fn load_csv(path: &Path, column: &ColumnSpec) -> Result<RawSeries> {
    let file = std::fs::File::open(path)
        .map_err(|e| LpplError::Io(format!("{}: {e}", path.display())))?;
    load_csv_reader(file, &path.display().to_string(), column)
}

fn is_number(field: &str) -> bool {
    field.trim().parse::<f64>().is_ok()
}

fn find(header: &csv::StringRecord, names: &[&str]) -> Option<usize> {
    names.iter().find_map(|name| {
        header
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name))
    })
}

pub fn load_csv_reader<R: Read>(reader: R, source: &str, column: &ColumnSpec) -> Result<RawSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut rows: Vec<(usize, csv::StringRecord)> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| LpplError::Row {
            row: k + 1,
            reason: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(k + 1);
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        rows.push((line, rec));
    }
    let Some((_, first)) = rows.first() else {
        return Err(LpplError::InvalidSeries(format!("{source}: no rows")));
    };
    let first = first.clone();

    let (has_header, col) = match column {
        ColumnSpec::Name(name) => {
            let col = first
                .iter()
                .position(|h| h.eq_ignore_ascii_case(name))
                .ok_or_else(|| {
                    LpplError::InvalidSeries(format!("{source}: no column named {name:?}"))
                })?;
            (true, col)
        }
        ColumnSpec::Index(i) => {
            let field = first.get(*i).ok_or_else(|| {
                LpplError::InvalidSeries(format!("{source}: no column at position {i}"))
            })?;
            (!is_number(field), *i)
        }
        ColumnSpec::Auto => {
            let header = !first.iter().all(is_number);
            let col = if header { find(&first, &CLOSE_NAMES) } else { None };
            (header, col.unwrap_or(first.len() - 1))
        }
    };
    let date_col = if has_header { find(&first, &DATE_NAMES) } else { None };

    let mut closes = Vec::new();
    let mut dates = date_col.map(|_| Vec::new());
    for (line, rec) in rows.iter().skip(usize::from(has_header)) {
        let field = rec.get(col).ok_or_else(|| LpplError::Row {
            row: *line,
            reason: format!("missing column {col}"),
        })?;
        let close: f64 = field.parse().map_err(|_| LpplError::Row {
            row: *line,
            reason: format!("cannot parse close {field:?}"),
        })?;
        if !(close.is_finite() && close > 0.0) {
            return Err(LpplError::Row {
                row: *line,
                reason: format!("close {close} must be positive"),
            });
        }
        closes.push(close);
        if let (Some(d), Some(dc)) = (dates.as_mut(), date_col) {
            d.push(rec.get(dc).unwrap_or("").to_string());
        }
    }
    if closes.is_empty() {
        return Err(LpplError::InvalidSeries(format!("{source}: no data rows")));
    }

    let mut warnings = Vec::new();
    if let Some(d) = &dates {
        if let Some(k) = d.windows(2).position(|w| w[1] < w[0]) {
            let msg = format!(
                "{source}: dates out of order at data row {} ({} after {})",
                k + 2,
                d[k + 1],
                d[k]
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    Ok(RawSeries {
        dates,
        closes,
        source: source.to_string(),
        warnings,
    })
}

/// Log transform plus weights.
pub fn to_series(raw: &RawSeries, scheme: &WeightScheme) -> Result<PriceSeries> {
    let weights = build_weights(scheme, raw.len())?;
    PriceSeries::new(raw.log_closes(), weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str, col: ColumnSpec) -> Result<RawSeries> {
        load_csv_reader(text.as_bytes(), "test", &col)
    }

    #[test]
    fn three_rows_without_header() {
        let raw = load("100\n101\n102\n", ColumnSpec::Auto).unwrap();
        assert_eq!(raw.len(), 3);
        assert_eq!(raw.log_closes(), vec![100f64.ln(), 101f64.ln(), 102f64.ln()]);
        assert!(raw.dates.is_none());
    }

    #[test]
    fn header_and_named_columns() {
        let text = "Date,Open,Close\n2007-01-02,1,10\n2007-01-03,2,11\n";
        let raw = load(text, ColumnSpec::Auto).unwrap();
        assert_eq!(raw.closes, vec![10.0, 11.0]);
        assert_eq!(raw.dates.as_deref().unwrap(), ["2007-01-02", "2007-01-03"]);
        let raw = load(text, ColumnSpec::Name("open".into())).unwrap();
        assert_eq!(raw.closes, vec![1.0, 2.0]);
        let raw = load(text, ColumnSpec::Index(1)).unwrap();
        assert_eq!(raw.closes, vec![1.0, 2.0]);
        assert!(load(text, ColumnSpec::Name("volume".into())).is_err());
    }

    #[test]
    fn zero_close_names_the_row() {
        match load("close\n5\n0\n7\n", ColumnSpec::Auto) {
            Err(LpplError::Row { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
        match load("close\n5\nabc\n", ColumnSpec::Auto) {
            Err(LpplError::Row { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_input_rejected() {
        assert!(load("", ColumnSpec::Auto).is_err());
        assert!(load("close\n", ColumnSpec::Auto).is_err());
    }

    #[test]
    fn out_of_order_dates_warn() {
        let raw = load("date,close\n2007-01-03,1\n2007-01-02,2\n", ColumnSpec::Auto).unwrap();
        assert_eq!(raw.warnings.len(), 1);
        assert_eq!(raw.closes, vec![1.0, 2.0]);
    }

    #[test]
    fn weights_attached() {
        let text: String = (1..=1000).map(|i| format!("{}\n", 100.0 + i as f64)).collect();
        let raw = load(&text, ColumnSpec::Auto).unwrap();
        let s = to_series(&raw, &WeightScheme::Quadratic { w: 100.0 }).unwrap();
        let expected = (100.0f64 / 1099.0).powi(2);
        assert!((s.weights()[0] - expected).abs() < 1e-17);
        let s = to_series(&raw, &WeightScheme::Step { start: 500, end: 1000 }).unwrap();
        assert!(s.weights()[..499].iter().all(|w| *w == 0.0));
        assert_eq!(s.weights()[499], 1.0);
        let s = to_series(&raw, &WeightScheme::Uniform).unwrap();
        assert!(s.weights().iter().all(|w| *w == 1.0));
        assert!(to_series(&raw, &WeightScheme::Step { start: 1, end: 1001 }).is_err());
    }
}
