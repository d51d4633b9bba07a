//! Region masks as a `row,col` include-list with a header line.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use hydranet_core::metrics::RegionMask;

use crate::error::{Error, Result};
use crate::events::data_lines;

pub fn read_mask(path: &Path, height: usize, width: usize) -> Result<RegionMask> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: u64, message: String| Error::Parse { path: path.to_path_buf(), line, message };
    let mut lines = data_lines(&text);
    match lines.next() {
        Some((_, h)) if h == ["row", "col"] => {}
        Some((line, h)) => return Err(parse_err(line, format!("expected header row,col, got {}", h.join(",")))),
        None => return Err(parse_err(1, "missing header row,col".into())),
    }
    let mut cells = Vec::new();
    for (line, rec) in lines {
        if rec.len() != 2 {
            return Err(parse_err(line, format!("expected 2 fields, found {}", rec.len())));
        }
        let idx = |s: &str| s.parse::<usize>().map_err(|_| parse_err(line, format!("expected a cell index, got {s:?}")));
        let (row, col) = (idx(rec[0])?, idx(rec[1])?);
        if row >= height || col >= width {
            return Err(parse_err(line, format!("cell ({row}, {col}) outside the {height}x{width} grid")));
        }
        cells.push((row, col));
    }
    let name = path.file_stem().map_or_else(|| "mask".into(), |s| s.to_string_lossy().into_owned());
    RegionMask::from_cells(name, height, width, &cells).map_err(|e| parse_err(0, e.to_string()))
}

pub fn write_mask(path: &Path, mask: &RegionMask) -> Result<()> {
    let mut out = String::from("row,col\n");
    for (i, _) in mask.cells().iter().enumerate().filter(|(_, inc)| **inc) {
        out.push_str(&format!("{},{}\n", i / mask.width(), i % mask.width()));
    }
    File::create(path).and_then(|mut f| f.write_all(out.as_bytes())).map_err(|e| Error::io(path, e))
}
