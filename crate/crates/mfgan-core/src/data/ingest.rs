//! Tab-separated interaction file parsing.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// One user-item interaction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InteractionRecord {
    pub user: String,
    pub item: String,
    pub timestamp: i64,
}

/// Counters from one ingestion pass.
#[derive(Clone, Copy, Debug, Default)]
pub struct IngestReport {
    pub parsed: usize,
    pub malformed: usize,
    pub header_skipped: bool,
}

fn parse_line(line: &str) -> Option<InteractionRecord> {
    let mut parts = line.split('\t');
    let user = parts.next()?.trim();
    let item = parts.next()?.trim();
    let ts = parts.next()?.trim();
    if parts.next().is_some() || user.is_empty() || item.is_empty() {
        return None;
    }
    let timestamp: i64 = ts.parse().ok()?;
    Some(InteractionRecord { user: user.to_string(), item: item.to_string(), timestamp })
}

/// Parse `user\titem\ttimestamp` lines. A header row is detected by its
/// unparsable timestamp field and skipped. More than 1% malformed data lines
/// is a hard error; fewer are counted and reported.
pub fn ingest_interactions(path: &Path) -> Result<(Vec<InteractionRecord>, IngestReport)> {
    let file = std::fs::File::open(path).map_err(|e| {
        Error::Data(format!("cannot open interactions file {}: {e}", path.display()))
    })?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut report = IngestReport::default();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(&line) {
            Some(rec) => records.push(rec),
            None if lineno == 0 => report.header_skipped = true,
            None => report.malformed += 1,
        }
    }
    report.parsed = records.len();
    let data_lines = report.parsed + report.malformed;
    if data_lines > 0 && report.malformed * 100 > data_lines {
        return Err(Error::Data(format!(
            "{} of {} data lines malformed in {}",
            report.malformed,
            data_lines,
            path.display()
        )));
    }
    Ok((records, report))
}

/// Export records in the ingestible format (used by round-trip checks and
/// the synthetic-data writer).
pub fn write_interactions(path: &Path, records: &[InteractionRecord]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        writeln!(out, "{}\t{}\t{}", r.user, r.item, r.timestamp)?;
    }
    Ok(())
}
