//! In-memory CSV tables with a fixed number format.

use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn file_name(&self) -> String {
        format!("{}.csv", self.name)
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        Ok(w.into_inner()
            .map_err(|e| csv::Error::from(e.into_error()))?)
    }

    /// Values of the named column.
    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let k = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[k].as_str()).collect())
    }
}

/// Shortest round-trip decimal, switching to exponent form for very small
/// or very large magnitudes.
pub fn num(v: f64) -> String {
    let a = v.abs();
    if v != 0.0 && (a < 1e-4 || a >= 1e15) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

/// A summary statistic with its standard error or an exactness flag.
#[derive(Debug, Clone, PartialEq)]
pub struct Stat {
    pub quantity: String,
    pub value: String,
    pub se: Option<f64>,
    pub exact: bool,
}

impl Stat {
    /// Sampled value; exact when the standard error vanishes.
    pub fn sampled(quantity: &str, value: f64, se: f64) -> Self {
        Self {
            quantity: quantity.into(),
            value: num(value),
            se: Some(se),
            exact: se == 0.0,
        }
    }

    /// Count, label or value computed without sampling.
    pub fn exact(quantity: &str, value: impl ToString) -> Self {
        Self {
            quantity: quantity.into(),
            value: value.to_string(),
            se: None,
            exact: true,
        }
    }

    pub fn exact_num(quantity: &str, value: f64) -> Self {
        Self {
            quantity: quantity.into(),
            value: num(value),
            se: None,
            exact: true,
        }
    }

    /// Derived from samples without an attached error estimate.
    pub fn derived(quantity: &str, value: impl ToString) -> Self {
        Self {
            quantity: quantity.into(),
            value: value.to_string(),
            se: None,
            exact: false,
        }
    }
}

pub fn summary_table(stats: &[Stat]) -> Table {
    let mut t = Table::new("summary", &["quantity", "value", "se", "exact"]);
    for s in stats {
        t.push(vec![
            s.quantity.clone(),
            s.value.clone(),
            s.se.map(num).unwrap_or_default(),
            s.exact.to_string(),
        ]);
    }
    t
}
