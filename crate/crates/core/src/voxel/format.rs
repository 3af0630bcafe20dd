//! Two-file volume storage: a text header and a raw little-endian `f64` blob.
//!
//! ```text
//! meshrecon-volume 1
//! dims 32 32 32
//! spacing 1.0000000000000000e0 1.0000000000000000e0 1.0000000000000000e0
//! origin 0.0000000000000000e0 0.0000000000000000e0 0.0000000000000000e0
//! kind mask
//! scalar f64
//! byte_order little
//! data case.raw
//! ```
//!
//! The `data` path is relative to the header's directory.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::{Grid, Volume, VolumeKind};

const MAGIC: &str = "meshrecon-volume 1";

/// Path of the raw blob that accompanies `header`.
pub fn raw_path_for(header: &Path) -> PathBuf {
    header.with_extension("raw")
}

fn fmt3(v: [f64; 3]) -> String {
    format!("{:.16e} {:.16e} {:.16e}", v[0], v[1], v[2])
}

/// Writes `header` and its sibling `.raw` file.
pub fn write_volume(header: impl AsRef<Path>, v: &Volume) -> Result<()> {
    let header = header.as_ref();
    let raw = raw_path_for(header);
    let g = v.grid();
    let raw_name = raw.file_name().and_then(|s| s.to_str()).unwrap_or("volume.raw");
    let text = format!(
        "{MAGIC}\ndims {} {} {}\nspacing {}\norigin {}\nkind {}\nscalar f64\nbyte_order little\ndata {raw_name}\n",
        g.dims[0],
        g.dims[1],
        g.dims[2],
        fmt3(g.spacing),
        fmt3(g.origin),
        v.kind().as_str(),
    );
    let mut bytes = Vec::with_capacity(8 * v.data().len());
    for x in v.data() {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(header, text).map_err(|e| Error::io(header, e))?;
    fs::write(&raw, bytes).map_err(|e| Error::io(&raw, e))
}

fn parse_n<T: std::str::FromStr, const N: usize>(rest: &[&str], path: &Path, line: usize) -> Result<[T; N]> {
    if rest.len() != N {
        return Err(Error::parse(path, line, format!("expected {N} values, found {}", rest.len())));
    }
    let mut out = Vec::with_capacity(N);
    for s in rest {
        out.push(s.parse::<T>().map_err(|_| Error::parse(path, line, format!("cannot parse `{s}`")))?);
    }
    out.try_into().map_err(|_| Error::parse(path, line, "wrong arity"))
}

pub fn read_volume(header: impl AsRef<Path>) -> Result<Volume> {
    let header = header.as_ref();
    let text = fs::read_to_string(header).map_err(|e| Error::io(header, e))?;
    let mut dims = None;
    let mut spacing = None;
    let mut origin = None;
    let mut kind = None;
    let mut data = None;
    let mut saw_magic = false;
    for (n, raw_line) in text.lines().enumerate() {
        let line = n + 1;
        let t = raw_line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        if !saw_magic {
            if t != MAGIC {
                return Err(Error::parse(header, line, format!("expected `{MAGIC}`")));
            }
            saw_magic = true;
            continue;
        }
        let toks: Vec<&str> = t.split_whitespace().collect();
        let (key, rest) = (toks[0], &toks[1..]);
        match key {
            "dims" => dims = Some(parse_n::<usize, 3>(rest, header, line)?),
            "spacing" => spacing = Some(parse_n::<f64, 3>(rest, header, line)?),
            "origin" => origin = Some(parse_n::<f64, 3>(rest, header, line)?),
            "kind" => {
                let [s] = parse_n::<String, 1>(rest, header, line)?;
                kind = Some(
                    VolumeKind::parse(&s).ok_or_else(|| Error::parse(header, line, format!("unknown kind `{s}`")))?,
                );
            }
            "scalar" => {
                if rest != ["f64"] {
                    return Err(Error::parse(header, line, "only f64 scalars are supported"));
                }
            }
            "byte_order" => {
                if rest != ["little"] {
                    return Err(Error::parse(header, line, "only little-endian data is supported"));
                }
            }
            "data" => {
                let [s] = parse_n::<String, 1>(rest, header, line)?;
                data = Some(s);
            }
            other => return Err(Error::parse(header, line, format!("unknown key `{other}`"))),
        }
    }
    let missing = |k: &str| Error::parse(header, text.lines().count(), format!("missing `{k}`"));
    let grid = Grid::new(
        dims.ok_or_else(|| missing("dims"))?,
        spacing.ok_or_else(|| missing("spacing"))?,
        origin.ok_or_else(|| missing("origin"))?,
    )?;
    let kind = kind.ok_or_else(|| missing("kind"))?;
    let raw = match data {
        Some(name) => header.parent().unwrap_or(Path::new(".")).join(name),
        None => raw_path_for(header),
    };
    let bytes = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
    if bytes.len() != 8 * grid.len() {
        return Err(Error::InvalidVolume(format!(
            "{}: expected {} bytes, found {}",
            raw.display(),
            8 * grid.len(),
            bytes.len()
        )));
    }
    let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Volume::new(grid, values, kind)
}
