use std::fmt;
use std::io::Write;
use std::path::Path;

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub iteration: u64,
    pub split: Split,
    pub loss: f64,
    pub accuracy: f64,
}

pub const CSV_HEADER: &str = "iteration,split,loss,accuracy";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn push(&mut self, row: MetricsRow) {
        debug_assert!(self
            .rows
            .iter()
            .rev()
            .find(|r| r.split == row.split)
            .is_none_or(|r| r.iteration < row.iteration));
        self.rows.push(row);
    }

    pub fn extend(&mut self, other: MetricsLog) {
        other.rows.into_iter().for_each(|r| self.push(r));
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &MetricsRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    /// Header plus one LF-terminated line per row.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.iteration, r.split, r.loss, r.accuracy));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}
