//! Delimited event files: header `row,col,month_id,sb,ns,os`, `#` comment lines.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::ops::RangeInclusive;
use std::path::Path;

use hydranet_core::volume::{build_volume, EventRecord, GridSpec, ZStackVolume};

use crate::error::{Error, Result};

pub const HEADER: [&str; 6] = ["row", "col", "month_id", "sb", "ns", "os"];

/// Parsed records with the 1-based line number each came from.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventTable {
    pub records: Vec<EventRecord>,
    pub lines: Vec<u64>,
}

impl EventTable {
    pub fn max_month_id(&self) -> Option<u32> {
        self.records.iter().map(|r| r.month_id).max()
    }
}

fn count(field: &str, name: &str) -> std::result::Result<u64, String> {
    field.parse::<u64>().map_err(|_| format!("{name}: expected a non-negative integer, got {field:?}"))
}

/// Non-empty, non-comment lines of a delimited file, split on commas and trimmed, with 1-based line numbers.
pub(crate) fn data_lines(text: &str) -> impl Iterator<Item = (u64, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let t = line.trim();
        (!t.is_empty() && !t.starts_with('#')).then(|| (i as u64 + 1, t.split(',').map(str::trim).collect()))
    })
}

/// Reads events from `reader`; `path` only labels errors.
pub fn parse_events<R: Read>(mut reader: R, path: &Path) -> Result<EventTable> {
    let parse_err = |line: u64, message: String| Error::Parse { path: path.to_path_buf(), line, message };
    let mut text = String::new();
    reader.read_to_string(&mut text).map_err(|e| Error::io(path, e))?;
    let mut lines = data_lines(&text);
    match lines.next() {
        Some((_, header)) if header == HEADER => {}
        Some((line, header)) => {
            return Err(parse_err(line, format!("expected header {}, got {}", HEADER.join(","), header.join(","))))
        }
        None => return Err(parse_err(1, format!("missing header {}", HEADER.join(",")))),
    }
    let mut table = EventTable::default();
    for (line, row) in lines {
        if row.len() != HEADER.len() {
            return Err(parse_err(line, format!("expected {} fields, found {}", HEADER.len(), row.len())));
        }
        let fields: Vec<u64> = row
            .iter()
            .zip(HEADER)
            .map(|(f, name)| count(f, name))
            .collect::<std::result::Result<_, _>>()
            .map_err(|m| parse_err(line, m))?;
        let month_id = u32::try_from(fields[2]).map_err(|_| parse_err(line, format!("month_id {} too large", fields[2])))?;
        table.records.push(EventRecord {
            row: fields[0] as usize,
            col: fields[1] as usize,
            month_id,
            fatalities_sb: fields[3],
            fatalities_ns: fields[4],
            fatalities_os: fields[5],
        });
        table.lines.push(line);
    }
    Ok(table)
}

pub fn read_events(path: &Path) -> Result<EventTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_events(file, path)
}

pub fn write_events(path: &Path, records: &[EventRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", HEADER.join(",")).map_err(io)?;
    for r in records {
        writeln!(w, "{},{},{},{},{},{}", r.row, r.col, r.month_id, r.fatalities_sb, r.fatalities_ns, r.fatalities_os)
            .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Builds a volume, reporting record-level failures with their source line.
pub fn tensorize(table: &EventTable, path: &Path, grid: &GridSpec, months: RangeInclusive<u32>) -> Result<ZStackVolume> {
    build_volume(&table.records, grid, months).map_err(|e| match e {
        hydranet_core::Error::InvalidRecord { index, reason } => {
            Error::Parse { path: path.to_path_buf(), line: table.lines[index], message: reason }
        }
        hydranet_core::Error::CountOverflow { row, col, month_id } => Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("fatality counts overflow when summing cell ({row}, {col}) month {month_id}"),
        },
        other => other.into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<EventTable> {
        parse_events(text.as_bytes(), Path::new("events.csv"))
    }

    #[test]
    fn comments_and_whitespace() {
        let t = parse("# exported\nrow,col,month_id,sb,ns,os\n1, 2, 5, 1, 0, 0\n# note\n0,0,0,3,4,5\n").unwrap();
        assert_eq!(t.records.len(), 2);
        assert_eq!(t.records[0].counts(), [1, 0, 0]);
        assert_eq!(t.lines, vec![3, 5]);
    }

    #[test]
    fn bad_rows_name_their_line() {
        for (text, line) in [
            ("row,col,month_id,sb,ns,os\n0,0,0,1,1,1\n0,0,0,-1,0,0\n", 3),
            ("row,col,month_id,sb,ns,os\n0,0,0,1.5,0,0\n", 2),
            ("row,col,month_id,sb,ns,os\n0,0,0,1,0\n", 2),
        ] {
            match parse(text) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
        assert!(matches!(parse("a,b\n1,2\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn out_of_grid_record_reports_line() {
        let t = parse("row,col,month_id,sb,ns,os\n0,0,0,1,0,0\n9,0,0,1,0,0\n").unwrap();
        let err = tensorize(&t, Path::new("e.csv"), &GridSpec::with_size(4, 4), 0..=0).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        assert_eq!(err.exit_code(), 2);
    }
}
