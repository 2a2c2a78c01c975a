//! `.pas` assignment file: little-endian, magic `PAS1`, u32 length of the
//! library JSON document followed by the document bytes, then one block per
//! conv layer until end of file: F u32, C u32, and F*C kernel records of
//! (kept flag u8, pattern index u8), kernels filter-major.

use super::{Assignment, ConnectivityMask};
use crate::pattern::PatternLibrary;
use crate::wire::{put_u32, Cursor};
use crate::{Error, Result};
use std::io::Write;
use std::path::Path;

const MAGIC: &[u8; 4] = b"PAS1";

/// In-memory form of a `.pas` file.
#[derive(Clone, Debug, PartialEq)]
pub struct PasFile {
    pub library: PatternLibrary,
    pub layers: Vec<PasLayer>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PasLayer {
    pub filters: usize,
    pub channels: usize,
    pub kept: Vec<bool>,
    pub pattern: Vec<u8>,
}

impl PasFile {
    pub fn new(
        library: PatternLibrary,
        assignment: &Assignment,
        connectivity: Option<&ConnectivityMask>,
    ) -> Result<Self> {
        if let Some(conn) = connectivity {
            if conn.per_layer.len() != assignment.per_layer.len() {
                return Err(Error::ShapeMismatch {
                    context: ".pas assignment vs connectivity layers",
                    left: vec![assignment.per_layer.len()],
                    right: vec![conn.per_layer.len()],
                });
            }
        }
        let mut layers = Vec::new();
        for (i, pattern) in assignment.per_layer.iter().enumerate() {
            let (filters, channels, kept) = match connectivity {
                Some(conn) => {
                    let l = &conn.per_layer[i];
                    if l.kept.len() != pattern.len() {
                        return Err(Error::ShapeMismatch {
                            context: ".pas kernel counts",
                            left: vec![pattern.len()],
                            right: vec![l.kept.len()],
                        });
                    }
                    (l.filters, l.channels, l.kept.clone())
                }
                // without connectivity info the layer geometry is opaque;
                // fold it into a single row
                None => (pattern.len(), 1, vec![true; pattern.len()]),
            };
            for &p in pattern {
                if p as usize >= library.k() {
                    return Err(Error::IndexOutOfRange(format!(
                        "pattern index {p} for K={}",
                        library.k()
                    )));
                }
            }
            layers.push(PasLayer {
                filters,
                channels,
                kept,
                pattern: pattern.clone(),
            });
        }
        Ok(PasFile { library, layers })
    }

    pub fn with_geometry(
        library: PatternLibrary,
        assignment: &Assignment,
        geometry: &[(usize, usize)],
    ) -> Result<Self> {
        let mut file = PasFile::new(library, assignment, None)?;
        if geometry.len() != file.layers.len() {
            return Err(Error::ShapeMismatch {
                context: ".pas geometry layers",
                left: vec![geometry.len()],
                right: vec![file.layers.len()],
            });
        }
        for (layer, &(f, c)) in file.layers.iter_mut().zip(geometry) {
            if f * c != layer.pattern.len() {
                return Err(Error::ShapeMismatch {
                    context: ".pas geometry kernel count",
                    left: vec![f, c],
                    right: vec![layer.pattern.len()],
                });
            }
            layer.filters = f;
            layer.channels = c;
        }
        Ok(file)
    }

    pub fn assignment(&self) -> Assignment {
        Assignment {
            per_layer: self.layers.iter().map(|l| l.pattern.clone()).collect(),
        }
    }

    pub fn kept_flags(&self) -> Vec<Vec<bool>> {
        self.layers.iter().map(|l| l.kept.clone()).collect()
    }
}

pub fn write_pas(file: &PasFile, path: &Path) -> Result<()> {
    let mut body = Vec::new();
    body.extend_from_slice(MAGIC);
    let json = file.library.to_json();
    put_u32(&mut body, json.len() as u32);
    body.extend_from_slice(json.as_bytes());
    for layer in &file.layers {
        put_u32(&mut body, layer.filters as u32);
        put_u32(&mut body, layer.channels as u32);
        for n in 0..layer.kept.len() {
            body.push(layer.kept[n] as u8);
            body.push(layer.pattern[n]);
        }
    }
    let mut out = std::fs::File::create(path).map_err(|e| Error::File {
        path: path.to_path_buf(),
        source: e,
    })?;
    out.write_all(&body)?;
    Ok(())
}

pub fn read_pas(path: &Path) -> Result<PasFile> {
    let bytes = std::fs::read(path).map_err(|e| Error::File {
        path: path.to_path_buf(),
        source: e,
    })?;
    let total = bytes.len() as u64;
    let mut cur = Cursor::new(bytes.as_slice());
    cur.expect_magic(MAGIC)?;
    let json_len = cur.read_u32()? as usize;
    let mut json = vec![0u8; json_len];
    cur.read_exact(&mut json)?;
    let library = PatternLibrary::from_json(
        std::str::from_utf8(&json)
            .map_err(|_| Error::format(8, "library JSON is not valid UTF-8"))?,
    )?;

    let mut layers = Vec::new();
    while cur.offset() < total {
        let filters = cur.read_u32()? as usize;
        let channels = cur.read_u32()? as usize;
        let kernels = filters
            .checked_mul(channels)
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::format(cur.offset(), "degenerate layer geometry"))?;
        let mut kept = Vec::with_capacity(kernels);
        let mut pattern = Vec::with_capacity(kernels);
        for _ in 0..kernels {
            let at = cur.offset();
            let flag = cur.read_u8()?;
            if flag > 1 {
                return Err(Error::format(at, format!("kept flag must be 0/1, got {flag}")));
            }
            let idx = cur.read_u8()?;
            if idx as usize >= library.k() {
                return Err(Error::format(
                    at + 1,
                    format!("pattern index {idx} out of range for K={}", library.k()),
                ));
            }
            kept.push(flag == 1);
            pattern.push(idx);
        }
        layers.push(PasLayer {
            filters,
            channels,
            kept,
            pattern,
        });
    }
    if layers.is_empty() {
        return Err(Error::format(cur.offset(), "no layers in .pas file"));
    }
    Ok(PasFile { library, layers })
}
