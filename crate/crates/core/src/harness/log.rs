use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const CSV_HEADER: &str =
    "step,episode_return,tr_f_actor,tr_f_critic,dormant_actor,dormant_critic,kl_actor,kl_critic,alpha,wall_ms";

/// One logging point. `episode_return` is NaN until an episode completes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    /// Environment steps taken.
    pub step: u64,
    pub episode_return: f64,
    pub tr_f_actor: f64,
    pub tr_f_critic: f64,
    pub dormant_actor: f64,
    pub dormant_critic: f64,
    pub kl_actor: f64,
    pub kl_critic: f64,
    pub alpha: f64,
    /// Cumulative training time.
    pub wall_ms: f64,
}

impl LogRow {
    pub fn fields(&self) -> [f64; 9] {
        [
            self.episode_return,
            self.tr_f_actor,
            self.tr_f_critic,
            self.dormant_actor,
            self.dormant_critic,
            self.kl_actor,
            self.kl_critic,
            self.alpha,
            self.wall_ms,
        ]
    }

    pub(crate) fn from_fields(step: u64, f: [f64; 9]) -> Self {
        Self {
            step,
            episode_return: f[0],
            tr_f_actor: f[1],
            tr_f_critic: f[2],
            dormant_actor: f[3],
            dormant_critic: f[4],
            kl_actor: f[5],
            kl_critic: f[6],
            alpha: f[7],
            wall_ms: f[8],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub rows: Vec<LogRow>,
}

impl RunLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{}", r.step);
            for v in r.fields() {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    /// Parses a log, rejecting any header other than [`CSV_HEADER`] and
    /// steps that do not strictly increase.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim_end() == CSV_HEADER => {}
            Some(h) => return Err(Error::MalformedLog(format!("unexpected header {h:?}"))),
            None => return Err(Error::MalformedLog("empty log".into())),
        }
        let mut rows: Vec<LogRow> = Vec::new();
        for (n, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let line_no = n + 2;
            let cells: Vec<&str> = line.trim_end().split(',').collect();
            if cells.len() != 10 {
                return Err(Error::MalformedLog(format!(
                    "line {line_no}: expected 10 fields, found {}",
                    cells.len()
                )));
            }
            let step: u64 = cells[0]
                .parse()
                .map_err(|_| Error::MalformedLog(format!("line {line_no}: bad step")))?;
            let mut f = [0.0; 9];
            for (slot, cell) in f.iter_mut().zip(&cells[1..]) {
                *slot = cell
                    .parse()
                    .map_err(|_| Error::MalformedLog(format!("line {line_no}: bad value {cell:?}")))?;
            }
            if rows.last().is_some_and(|r| r.step >= step) {
                return Err(Error::MalformedLog(format!(
                    "line {line_no}: step {step} not increasing"
                )));
            }
            rows.push(LogRow::from_fields(step, f));
        }
        Ok(Self { rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn write_atomic(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
