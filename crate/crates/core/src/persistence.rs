//! Checkpoints and target images.
//!
//! A checkpoint is five text lines: a format tag, a header of scalar
//! settings, then one base64 blob of little-endian `f32` values per weight
//! tensor.
//!
//! ```text
//! nca-checkpoint v1
//! channels=16 hidden=128 fire_rate=0.5 alive_threshold=0.1
//! w1=<hidden x 48, row-major>
//! b1=<hidden>
//! w2=<16 x hidden, row-major>
//! ```

use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;

use crate::grid::{CellGrid, CHANNELS};
use crate::model::{UpdateRule, PERCEPTION_SIZE};
use crate::{Error, Result};

pub const FORMAT_TAG: &str = "nca-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

fn io_error(path: &Path, source: std::io::Error) -> Error {
    if source.kind() == ErrorKind::NotFound {
        Error::NotFound {
            path: path.to_path_buf(),
        }
    } else {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

fn encode_blob(values: &[f32]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

/// Renders `rule` in the checkpoint text format.
pub fn encode_checkpoint(rule: &UpdateRule) -> String {
    // `Display` for f32 prints the shortest string that parses back to the
    // same bits.
    format!(
        "{FORMAT_TAG} v{FORMAT_VERSION}\nchannels={CHANNELS} hidden={} fire_rate={} alive_threshold={}\nw1={}\nb1={}\nw2={}\n",
        rule.hidden_size(),
        rule.fire_rate(),
        rule.alive_threshold(),
        encode_blob(rule.w1()),
        encode_blob(rule.b1()),
        encode_blob(rule.w2()),
    )
}

fn decode_blob(line: Option<&str>, field: &'static str, expected_len: usize) -> Result<Vec<f32>> {
    let line = line.ok_or_else(|| Error::Format(format!("missing {field} line")))?;
    let body = line
        .strip_prefix(field)
        .and_then(|rest| rest.strip_prefix('='))
        .ok_or_else(|| Error::Format(format!("expected a {field}= line")))?;
    let bytes = STANDARD
        .decode(body.trim_end())
        .map_err(|e| Error::Format(format!("{field}: {e}")))?;
    if bytes.len() != expected_len * 4 {
        return Err(Error::BlobLength {
            field,
            expected: expected_len * 4,
            found: bytes.len(),
        });
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { field, index });
    }
    Ok(values)
}

struct Header {
    hidden: usize,
    fire_rate: f32,
    alive_threshold: f32,
}

fn parse_header(line: &str) -> Result<Header> {
    let (mut channels, mut hidden, mut fire_rate, mut alive_threshold) = (None, None, None, None);
    for token in line.split_whitespace() {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("header token {token:?} is not key=value")))?;
        let bad = |_| Error::Format(format!("header value {token:?} does not parse"));
        match key {
            "channels" => channels = Some(value.parse::<usize>().map_err(|e| bad(e.to_string()))?),
            "hidden" => hidden = Some(value.parse::<usize>().map_err(|e| bad(e.to_string()))?),
            "fire_rate" => fire_rate = Some(value.parse::<f32>().map_err(|e| bad(e.to_string()))?),
            "alive_threshold" => alive_threshold = Some(value.parse::<f32>().map_err(|e| bad(e.to_string()))?),
            _ => return Err(Error::Format(format!("unknown header key {key:?}"))),
        }
    }
    let missing = |k: &str| Error::Format(format!("header lacks {k}"));
    let channels = channels.ok_or_else(|| missing("channels"))?;
    if channels != CHANNELS {
        return Err(Error::Format(format!(
            "channels={channels}, only {CHANNELS} is supported"
        )));
    }
    Ok(Header {
        hidden: hidden.ok_or_else(|| missing("hidden"))?,
        fire_rate: fire_rate.ok_or_else(|| missing("fire_rate"))?,
        alive_threshold: alive_threshold.ok_or_else(|| missing("alive_threshold"))?,
    })
}

/// Parses the checkpoint text format.
pub fn decode_checkpoint(text: &str) -> Result<UpdateRule> {
    let mut lines = text.lines();
    let tag = lines.next().unwrap_or("");
    let version = tag
        .strip_prefix(FORMAT_TAG)
        .and_then(|rest| rest.strip_prefix(" v"))
        .ok_or_else(|| Error::Format(format!("first line {tag:?} is not a checkpoint tag")))?;
    if version.trim_end().parse::<u32>().ok() != Some(FORMAT_VERSION) {
        return Err(Error::Version {
            found: version.trim_end().to_string(),
            expected: FORMAT_VERSION,
        });
    }
    let header = parse_header(
        lines
            .next()
            .ok_or_else(|| Error::Format("missing header line".into()))?,
    )?;
    let h = header.hidden;
    let w1 = decode_blob(lines.next(), "w1", h * PERCEPTION_SIZE)?;
    let b1 = decode_blob(lines.next(), "b1", h)?;
    let w2 = decode_blob(lines.next(), "w2", CHANNELS * h)?;
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(Error::Format("trailing content after w2".into()));
    }
    UpdateRule::from_parts(h, w1, b1, w2, header.fire_rate, header.alive_threshold)
        .map_err(|e| Error::Format(e.to_string()))
}

/// Writes `rule` to `path` through a temporary file in the same directory,
/// renamed into place once fully written.
pub fn save_checkpoint(rule: &UpdateRule, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut builder = tempfile::Builder::new();
    // Temporary files are private by default; a checkpoint is not.
    #[cfg(unix)]
    builder.permissions(std::os::unix::fs::PermissionsExt::from_mode(0o644));
    let mut tmp = builder.tempfile_in(&dir).map_err(|e| io_error(path, e))?;
    tmp.write_all(encode_checkpoint(rule).as_bytes())
        .and_then(|_| tmp.as_file().sync_all())
        .map_err(|e| io_error(path, e))?;
    tmp.persist(path).map_err(|e| io_error(path, e.error))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<UpdateRule> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    decode_checkpoint(&text)
}

/// Centers an RGBA image on a `size`×`size` grid with premultiplied color.
/// Hidden channels are zero.
pub fn target_from_image(img: &image::RgbaImage, size: usize) -> Result<CellGrid> {
    let (w, h) = img.dimensions();
    if w as usize > size || h as usize > size {
        return Err(Error::TargetTooLarge {
            width: w,
            height: h,
            size,
        });
    }
    let mut grid = CellGrid::zeros(size, size);
    let (ox, oy) = ((size - w as usize) / 2, (size - h as usize) / 2);
    for (x, y, px) in img.enumerate_pixels() {
        let a = px[3] as f32 / 255.0;
        let cell = grid.cell_mut(ox + x as usize, oy + y as usize);
        for c in 0..3 {
            cell[c] = px[c] as f32 / 255.0 * a;
        }
        cell[3] = a;
    }
    Ok(grid)
}

/// Loads a PNG target; see [`target_from_image`].
pub fn load_target(path: impl AsRef<Path>, size: usize) -> Result<CellGrid> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::NotFound {
            path: path.to_path_buf(),
        });
    }
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    target_from_image(&img.to_rgba8(), size)
}
