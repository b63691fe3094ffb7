//! Line-oriented run report: `key: value` lines followed by aligned tables.
//!
//! ```text
//! command: score --data d.csv --dag g.txt
//! total_log_score: -412.093481232
//!
//! [table local]
//! node  parents  l  score
//! a     -        0  -140.110203411
//! ```
//!
//! Numbers are rounded to 12 significant digits when stored, so a parsed
//! report compares equal to the original.

use std::fmt;

use crate::CliError;

/// Formats `x` with 12 significant digits.
pub fn fmt_num(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".into();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..15).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        // rounding can carry into a new leading digit
        let again: f64 = s.parse().expect("formatted float");
        if (again.abs().log10().floor() as i32) != exp {
            let decimals = (10 - exp).max(0) as usize;
            return format!("{x:.decimals$}");
        }
        s
    } else {
        format!("{x:.11e}")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Table {
            name: name.into(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Cell parsed as a number.
    pub fn num(&self, row: usize, col: &str) -> Option<f64> {
        self.rows.get(row)?.get(self.column(col)?)?.parse().ok()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunReport {
    pub entries: Vec<(String, String)>,
    pub tables: Vec<Table>,
}

fn check_cell(s: &str) -> String {
    if s.is_empty() || s.chars().any(char::is_whitespace) {
        panic!("table cell `{s}` must be nonempty without whitespace");
    }
    s.to_string()
}

impl RunReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: impl fmt::Display) -> &mut Self {
        assert!(
            !key.contains(':') && !key.contains(char::is_whitespace),
            "bad key `{key}`"
        );
        let value = value.to_string();
        assert!(!value.contains('\n'), "multi-line value");
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.into(), value)),
        }
        self
    }

    pub fn set_num(&mut self, key: &str, x: f64) -> &mut Self {
        self.set(key, fmt_num(x))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn get_num(&self, key: &str) -> Option<f64> {
        self.get(key)?.parse().ok()
    }

    pub fn add_table(&mut self, mut t: Table) {
        t.header = t.header.iter().map(|c| check_cell(c)).collect();
        for row in &mut t.rows {
            *row = row.iter().map(|c| check_cell(c)).collect();
        }
        self.tables.push(t);
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn parse(text: &str) -> Result<RunReport, CliError> {
        let mut report = RunReport::new();
        let mut current: Option<Table> = None;
        for (i, line) in text.lines().enumerate() {
            let bad = |m: &str| CliError::Parse(format!("report line {}: {m}", i + 1));
            if let Some(name) = line
                .strip_prefix("[table ")
                .and_then(|r| r.strip_suffix(']'))
            {
                if let Some(t) = current.take() {
                    report.tables.push(t);
                }
                current = Some(Table {
                    name: name.into(),
                    header: Vec::new(),
                    rows: Vec::new(),
                });
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            match current.as_mut() {
                Some(t) => {
                    let cells: Vec<String> = line.split_whitespace().map(String::from).collect();
                    if t.header.is_empty() {
                        t.header = cells;
                    } else if cells.len() != t.header.len() {
                        return Err(bad("row width differs from header"));
                    } else {
                        t.rows.push(cells);
                    }
                }
                None => {
                    let (k, v) = line
                        .split_once(": ")
                        .ok_or_else(|| bad("expected `key: value`"))?;
                    report.entries.push((k.into(), v.into()));
                }
            }
        }
        if let Some(t) = current {
            report.tables.push(t);
        }
        Ok(report)
    }
}

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k}: {v}")?;
        }
        for t in &self.tables {
            writeln!(f)?;
            writeln!(f, "[table {}]", t.name)?;
            let mut width: Vec<usize> = t.header.iter().map(String::len).collect();
            for row in &t.rows {
                for (w, c) in width.iter_mut().zip(row) {
                    *w = (*w).max(c.len());
                }
            }
            for row in std::iter::once(&t.header).chain(&t.rows) {
                let last = row.len() - 1;
                for (j, c) in row.iter().enumerate() {
                    if j == last {
                        writeln!(f, "{c}")?;
                    } else {
                        write!(f, "{c:<w$}  ", w = width[j])?;
                    }
                }
            }
        }
        Ok(())
    }
}
