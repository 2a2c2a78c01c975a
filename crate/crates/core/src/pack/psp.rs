//! `.psp` packed model file, little-endian throughout:
//!
//! ```text
//! magic "PSP1" (4B), version u16, layer count u16
//! per layer:
//!   F u32, C u32, stride u8, pad u8, K u8
//!   masks          K x u16   (9-bit bitmaps)
//!   filter_perm    F x u32
//!   record count   u32
//!   filter records F x u32   (records per packed filter; sums to count)
//!   records        count x (channel u16, pattern u8), grouped by pattern
//!   weights        4*count x f32, ascending mask-bit order per record
//!   bias           F x f32
//! classifier: out u32, in u32, out*in weight f32s, out bias f32s
//! trailing CRC32 (IEEE) of every preceding byte, u32
//! ```

use super::{KernelRecord, PackedLayer, PackedModel};
use crate::pattern::{PatternLibrary, PatternMask};
use crate::wire::{put_f32, put_u16, put_u32, Cursor};
use crate::{Error, Result};
use std::io::Write;
use std::path::Path;

const MAGIC: &[u8; 4] = b"PSP1";
const VERSION: u16 = 1;

pub fn write_psp(model: &PackedModel, path: &Path) -> Result<()> {
    model.validate()?;
    let body = encode(model);
    let mut file = std::fs::File::create(path).map_err(|e| Error::File {
        path: path.to_path_buf(),
        source: e,
    })?;
    file.write_all(&body)?;
    Ok(())
}

/// Serializes to the on-disk byte layout (including the trailing CRC).
pub fn encode(model: &PackedModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u16(&mut out, VERSION);
    put_u16(&mut out, model.layers.len() as u16);
    for layer in &model.layers {
        put_u32(&mut out, layer.filters as u32);
        put_u32(&mut out, layer.channels as u32);
        out.push(layer.stride as u8);
        out.push(layer.pad as u8);
        out.push(layer.library.k() as u8);
        for mask in layer.library.masks() {
            put_u16(&mut out, mask.bits());
        }
        for &p in &layer.filter_perm {
            put_u32(&mut out, p);
        }
        put_u32(&mut out, layer.records.len() as u32);
        for &n in &layer.filter_records {
            put_u32(&mut out, n);
        }
        for r in &layer.records {
            put_u16(&mut out, r.channel);
            out.push(r.pattern);
        }
        for &w in &layer.weights {
            put_f32(&mut out, w);
        }
        for &b in &layer.bias {
            put_f32(&mut out, b);
        }
    }
    let (cout, cin) = model.classifier_dims;
    put_u32(&mut out, cout as u32);
    put_u32(&mut out, cin as u32);
    for &w in &model.classifier_weights {
        put_f32(&mut out, w);
    }
    for &b in &model.classifier_bias {
        put_f32(&mut out, b);
    }
    let crc = crc32fast::hash(&out);
    put_u32(&mut out, crc);
    out
}

pub fn read_psp(path: &Path) -> Result<PackedModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::File {
        path: path.to_path_buf(),
        source: e,
    })?;
    decode(&bytes)
}

pub fn decode(bytes: &[u8]) -> Result<PackedModel> {
    if bytes.len() < 4 {
        return Err(Error::format(
            0,
            format!("truncated: expected at least 12 bytes, got {}", bytes.len()),
        ));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored_crc = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let actual_crc = crc32fast::hash(body);
    if stored_crc != actual_crc {
        return Err(Error::format(
            (bytes.len() - 4) as u64,
            format!("CRC mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}"),
        ));
    }

    let mut cur = Cursor::new(body);
    cur.expect_magic(MAGIC)?;
    let version = cur.read_u16()?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let layer_count = cur.read_u16()? as usize;

    let mut layers = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let filters = cur.read_u32()? as usize;
        let channels = cur.read_u32()? as usize;
        let stride = cur.read_u8()? as usize;
        let pad = cur.read_u8()? as usize;
        let k = cur.read_u8()? as usize;
        let mut masks = Vec::with_capacity(k);
        for _ in 0..k {
            let at = cur.offset();
            let bits = cur.read_u16()?;
            masks.push(
                PatternMask::from_bits(bits)
                    .map_err(|e| Error::format(at, e.to_string()))?,
            );
        }
        let library = PatternLibrary::new(masks)
            .map_err(|e| Error::format(cur.offset(), e.to_string()))?;
        let mut filter_perm = Vec::with_capacity(filters);
        for _ in 0..filters {
            filter_perm.push(cur.read_u32()?);
        }
        let record_count = cur.read_u32()? as usize;
        let mut filter_records = Vec::with_capacity(filters);
        for _ in 0..filters {
            filter_records.push(cur.read_u32()?);
        }
        let mut records = Vec::with_capacity(record_count);
        for _ in 0..record_count {
            let channel = cur.read_u16()?;
            let pattern = cur.read_u8()?;
            records.push(KernelRecord { channel, pattern });
        }
        let weights = cur.read_f32_vec(4 * record_count)?;
        let bias = cur.read_f32_vec(filters)?;
        layers.push(PackedLayer {
            filters,
            channels,
            stride,
            pad,
            library,
            filter_perm,
            filter_records,
            records,
            weights,
            bias,
        });
    }

    let cout = cur.read_u32()? as usize;
    let cin = cur.read_u32()? as usize;
    let classifier_weights = cur.read_f32_vec(cout * cin)?;
    let classifier_bias = cur.read_f32_vec(cout)?;
    cur.expect_eof()?;

    let model = PackedModel {
        layers,
        classifier_dims: (cout, cin),
        classifier_weights,
        classifier_bias,
    };
    model.validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::admm::ConnectivityMask;
    use crate::nn::Network;

    fn sample_model(seed: u64, keep: f64) -> PackedModel {
        let (net, library, assignment, connectivity) =
            super::super::tests::random_pruned_model(seed, keep);
        let _ = ConnectivityMask::dense(&Network::toy(1, 2, (8, 8), 0));
        super::super::pack(&net, &library, &assignment, &connectivity).unwrap()
    }

    #[test]
    fn roundtrip_is_identity() {
        let model = sample_model(21, 0.5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.psp");
        write_psp(&model, &path).unwrap();
        let back = read_psp(&path).unwrap();
        assert_eq!(back, model);
        // byte-for-byte stable across writes
        let path2 = dir.path().join("m2.psp");
        write_psp(&back, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn empty_layer_model_has_documented_size() {
        let model = PackedModel {
            layers: vec![],
            classifier_dims: (2, 3),
            classifier_weights: vec![0.5; 6],
            classifier_bias: vec![0.0; 2],
        };
        let bytes = encode(&model);
        // magic(4) + version(2) + count(2) + dims(8) + weights(24) + bias(8) + crc(4)
        assert_eq!(bytes.len(), 4 + 2 + 2 + 8 + 6 * 4 + 2 * 4 + 4);
        let back = decode(&bytes).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn version_bump_is_rejected_as_unsupported() {
        let model = sample_model(22, 1.0);
        let mut bytes = encode(&model);
        bytes[4] = 9; // version low byte
        let crc = crc32fast::hash(&bytes[..bytes.len() - 4]);
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&crc.to_le_bytes());
        let err = decode(&bytes).unwrap_err();
        assert!(err.to_string().contains("unsupported version"), "{err}");
    }

    #[test]
    fn corruption_is_caught_by_crc() {
        let model = sample_model(23, 0.5);
        let mut bytes = encode(&model);
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xFF;
        let err = decode(&bytes).unwrap_err();
        assert!(err.to_string().contains("CRC mismatch"), "{err}");
    }

    #[test]
    fn truncation_names_expected_length() {
        let model = sample_model(24, 0.5);
        let bytes = encode(&model);
        let err = decode(&bytes[..bytes.len() / 3]).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
    }
}
