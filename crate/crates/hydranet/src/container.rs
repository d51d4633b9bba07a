//! The ZSTK1 array container: `ZSTK1\n`, a little-endian `u64` header length,
//! a JSON header, then row-major little-endian `f32` data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use hydranet_core::forecast::{ForecastCube, ForecastSummary};
use hydranet_core::volume::{GridSpec, ZStackVolume};
use hydranet_core::HEAD_NAMES;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"ZSTK1\n";
const DTYPE: &str = "f32le";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Volume,
    ForecastCube,
    ForecastSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub kind: Kind,
    pub shape: Vec<usize>,
    pub dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub month_ids: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_forecast_month_id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stat_names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantiles: Option<Vec<f64>>,
}

impl Header {
    fn new(kind: Kind, shape: Vec<usize>) -> Self {
        Header {
            kind,
            shape,
            dtype: DTYPE.into(),
            channel_names: None,
            month_ids: None,
            grid: None,
            head_names: None,
            first_forecast_month_id: None,
            stat_names: None,
            quantiles: None,
        }
    }

    fn require<'a, T>(field: &'a Option<T>, name: &str, path: &Path) -> Result<&'a T> {
        field.as_ref().ok_or_else(|| Error::corrupt(path, format!("header lacks {name}")))
    }
}

/// Writes `magic`, the header length, the JSON header and the payload, via a temporary file and rename.
pub(crate) fn write_framed(path: &Path, magic: &[u8], header: &[u8], data: &[&[f32]]) -> Result<()> {
    let tmp = path.with_extension("partial");
    let io = |e| Error::io(path, e);
    {
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(magic).map_err(io)?;
        w.write_all(&(header.len() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(header).map_err(io)?;
        for chunk in data {
            for v in *chunk {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        w.into_inner().map_err(|e| Error::io(path, e.into_error()))?.sync_all().map_err(io)?;
    }
    std::fs::rename(&tmp, path).map_err(io)
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file).read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}

/// Splits framed bytes into the JSON header and the raw payload.
pub(crate) fn unframe<'a>(bytes: &'a [u8], magic: &[u8], name: &'static str, path: &Path) -> Result<(&'a [u8], &'a [u8])> {
    let truncated = |detail: &str| Error::Truncated { path: path.to_path_buf(), detail: detail.into() };
    if bytes.len() < magic.len() || &bytes[..magic.len()] != magic {
        return Err(Error::Magic { path: path.to_path_buf(), expected: name });
    }
    let rest = &bytes[magic.len()..];
    let len_bytes: [u8; 8] = rest.get(..8).ok_or_else(|| truncated("missing header length"))?.try_into().unwrap();
    let len = usize::try_from(u64::from_le_bytes(len_bytes)).map_err(|_| truncated("header length out of range"))?;
    let json = rest.get(8..8usize.saturating_add(len)).ok_or_else(|| truncated("header shorter than declared"))?;
    Ok((json, &rest[8 + len..]))
}

pub(crate) fn payload_f32(payload: &[u8], count: usize, path: &Path) -> Result<Vec<f32>> {
    if Some(payload.len()) != count.checked_mul(4) {
        return Err(Error::corrupt(path, format!("expected {count} values ({} bytes), found {} bytes", count.saturating_mul(4), payload.len())));
    }
    Ok(payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
}

pub fn write_container(path: &Path, header: &Header, data: &[f32]) -> Result<()> {
    let expected: usize = header.shape.iter().product();
    assert_eq!(expected, data.len(), "container shape does not match payload");
    let json = serde_json::to_vec(header).expect("header serializes");
    write_framed(path, MAGIC, &json, &[data])
}

pub fn read_container(path: &Path) -> Result<(Header, Vec<f32>)> {
    decode(&read_bytes(path)?, path)
}

/// Parses container bytes; `path` only labels errors.
pub fn decode(bytes: &[u8], path: &Path) -> Result<(Header, Vec<f32>)> {
    let (json, payload) = unframe(bytes, MAGIC, "ZSTK1", path)?;
    let header: Header =
        serde_json::from_slice(json).map_err(|e| Error::corrupt(path, format!("unreadable header: {e}")))?;
    if header.dtype != DTYPE {
        return Err(Error::corrupt(path, format!("unsupported dtype {:?}", header.dtype)));
    }
    let count = header
        .shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::corrupt(path, "shape overflows"))?;
    let data = payload_f32(payload, count, path)
        .map_err(|_| Error::corrupt(path, format!("shape {:?} disagrees with the payload length {}", header.shape, payload.len())))?;
    Ok((header, data))
}

fn expect_kind(header: &Header, kind: Kind, path: &Path) -> Result<()> {
    if header.kind != kind {
        return Err(Error::corrupt(path, format!("expected a {kind:?} container, found {:?}", header.kind)));
    }
    Ok(())
}

fn expect_rank(header: &Header, rank: usize, path: &Path) -> Result<()> {
    if header.shape.len() != rank {
        return Err(Error::corrupt(path, format!("expected rank {rank}, found shape {:?}", header.shape)));
    }
    Ok(())
}

pub fn write_volume(path: &Path, v: &ZStackVolume) -> Result<()> {
    let mut h = Header::new(Kind::Volume, v.shape().to_vec());
    h.channel_names = Some(v.channel_names().to_vec());
    h.month_ids = Some(v.month_ids().to_vec());
    h.grid = Some(*v.grid());
    write_container(path, &h, v.data())
}

pub fn read_volume(path: &Path) -> Result<ZStackVolume> {
    let (h, data) = read_container(path)?;
    expect_kind(&h, Kind::Volume, path)?;
    expect_rank(&h, 4, path)?;
    let names = Header::require(&h.channel_names, "channel_names", path)?.clone();
    let months = Header::require(&h.month_ids, "month_ids", path)?.clone();
    let grid = *Header::require(&h.grid, "grid", path)?;
    if h.shape != [months.len(), names.len(), grid.height, grid.width] {
        return Err(Error::corrupt(path, format!("shape {:?} disagrees with the metadata", h.shape)));
    }
    ZStackVolume::new(data, names, months, grid).map_err(|e| Error::corrupt(path, e.to_string()))
}

fn head_names() -> Vec<String> {
    HEAD_NAMES.iter().map(|s| s.to_string()).collect()
}

fn check_heads(h: &Header, path: &Path) -> Result<()> {
    if Header::require(&h.head_names, "head_names", path)? != &head_names() {
        return Err(Error::corrupt(path, format!("unexpected head order {:?}", h.head_names)));
    }
    Ok(())
}

pub fn write_cube(path: &Path, c: &ForecastCube) -> Result<()> {
    let mut h = Header::new(Kind::ForecastCube, vec![c.n_samples, c.horizon, HEAD_NAMES.len(), c.height, c.width]);
    h.head_names = Some(head_names());
    h.first_forecast_month_id = Some(c.first_forecast_month_id);
    write_container(path, &h, &c.samples)
}

pub fn read_cube(path: &Path) -> Result<ForecastCube> {
    let (h, samples) = read_container(path)?;
    expect_kind(&h, Kind::ForecastCube, path)?;
    expect_rank(&h, 5, path)?;
    check_heads(&h, path)?;
    let s = &h.shape;
    Ok(ForecastCube {
        samples,
        n_samples: s[0],
        horizon: s[1],
        height: s[3],
        width: s[4],
        first_forecast_month_id: *Header::require(&h.first_forecast_month_id, "first_forecast_month_id", path)?,
    })
}

fn quantile_name(q: f64) -> String {
    format!("q{q}")
}

pub fn write_summary(path: &Path, s: &ForecastSummary) -> Result<()> {
    let mut stats = vec!["mean".to_string(), "std".to_string()];
    stats.extend(s.quantiles.iter().map(|(q, _)| quantile_name(*q)));
    let mut h = Header::new(Kind::ForecastSummary, vec![stats.len(), s.horizon, HEAD_NAMES.len(), s.height, s.width]);
    h.head_names = Some(head_names());
    h.first_forecast_month_id = Some(s.first_forecast_month_id);
    h.quantiles = Some(s.quantiles.iter().map(|(q, _)| *q).collect());
    h.stat_names = Some(stats);
    let mut data = Vec::with_capacity(s.mean.len() * (2 + s.quantiles.len()));
    data.extend_from_slice(&s.mean);
    data.extend_from_slice(&s.std);
    for (_, q) in &s.quantiles {
        data.extend_from_slice(q);
    }
    write_container(path, &h, &data)
}

pub fn read_summary(path: &Path) -> Result<ForecastSummary> {
    let (h, data) = read_container(path)?;
    expect_kind(&h, Kind::ForecastSummary, path)?;
    expect_rank(&h, 5, path)?;
    check_heads(&h, path)?;
    let quantiles = Header::require(&h.quantiles, "quantiles", path)?;
    if h.shape[0] != 2 + quantiles.len() {
        return Err(Error::corrupt(path, "stat axis does not match the quantile list"));
    }
    let len = data.len() / h.shape[0];
    let chunk = |i: usize| data[i * len..(i + 1) * len].to_vec();
    Ok(ForecastSummary {
        horizon: h.shape[1],
        height: h.shape[3],
        width: h.shape[4],
        first_forecast_month_id: *Header::require(&h.first_forecast_month_id, "first_forecast_month_id", path)?,
        mean: chunk(0),
        std: chunk(1),
        quantiles: quantiles.iter().enumerate().map(|(i, &q)| (q, chunk(2 + i))).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn volume() -> ZStackVolume {
        let grid = GridSpec::with_size(2, 3);
        let data = (0..2 * 3 * 6).map(|i| i as f32 * 0.25).collect();
        ZStackVolume::new(data, hydranet_core::volume::default_channels(), vec![7, 8], grid).unwrap()
    }

    #[test]
    fn volume_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.zstk");
        write_volume(&path, &volume()).unwrap();
        assert_eq!(read_volume(&path).unwrap(), volume());
    }

    #[test]
    fn damaged_files_fail_distinctly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.zstk");
        write_volume(&path, &volume()).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        assert!(matches!(decode(&wrong_magic, &path), Err(Error::Magic { .. })));
        assert!(matches!(decode(&bytes[..10], &path), Err(Error::Truncated { .. })));
        assert!(matches!(decode(&bytes[..bytes.len() - 4], &path), Err(Error::Corrupt { .. })));
        let mut extra = bytes.clone();
        extra.extend_from_slice(&[0; 4]);
        assert!(matches!(decode(&extra, &path), Err(Error::Corrupt { .. })));
    }
}
