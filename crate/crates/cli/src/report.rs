//! Human tables and machine output routing.

use std::fmt::Write as _;
use std::path::PathBuf;

use serde_json::Value;
use timelike_surfaces::io::{to_stable_string, write_text};
use timelike_surfaces::{ResidualReport, Result};

use crate::Format;

/// Where tables and machine output go.
///
/// Machine output goes to `--output` when given, otherwise to standard
/// output when `--format` is given. Tables go to standard output unless
/// machine output has claimed it, in which case they move to standard
/// error.
pub struct Sink {
    pub output: Option<PathBuf>,
    pub format: Option<Format>,
}

impl Sink {
    fn machine_on_stdout(&self) -> bool {
        self.output.is_none() && self.format.is_some()
    }

    pub fn format(&self) -> Format {
        self.format.unwrap_or(Format::Json)
    }

    pub fn table(&self, text: &str) {
        if self.machine_on_stdout() {
            eprint!("{text}");
        } else {
            print!("{text}");
        }
    }

    /// `csv` is used when CSV was requested and the document has a CSV form.
    pub fn machine(&self, json: &Value, csv: Option<String>) -> Result<()> {
        let text = match (self.format(), csv) {
            (Format::Csv, Some(c)) => c,
            (Format::Csv, None) => {
                log::warn!("no CSV form for this output; writing JSON");
                to_stable_string(json)?
            }
            (Format::Json, _) => to_stable_string(json)?,
        };
        match &self.output {
            Some(p) => write_text(p, &text),
            None if self.format.is_some() => {
                print!("{text}");
                Ok(())
            }
            None => Ok(()),
        }
    }
}

pub fn residual_table(title: &str, report: &ResidualReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{title}");
    let _ = writeln!(s, "  {:<20} {:>12} {:>12} {:>7}", "condition", "max", "l2", "order");
    for c in &report.conditions {
        let order = c
            .convergence_order
            .map(|q| format!("{q:.2}"))
            .unwrap_or_else(|| "-".into());
        let _ = writeln!(
            s,
            "  {:<20} {:>12.4e} {:>12.4e} {:>7}",
            c.name, c.max_norm, c.l2_norm, order
        );
    }
    s
}

pub fn kv_table(rows: &[(&str, String)]) -> String {
    let w = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut s = String::new();
    for (k, v) in rows {
        let _ = writeln!(s, "{k:<w$}  {v}");
    }
    s
}
