//! `.pnm` dense model file: little-endian, magic `PNM1`, layer count u32,
//! then one record per layer. Record layout by kind byte:
//!
//! * `0` conv — dims F, C, KH, KW, stride, pad (u32 each), then F*C*KH*KW
//!   weight f32s followed by F bias f32s
//! * `1` relu — no payload
//! * `2` 2x2 max pool — no payload
//! * `3` linear — dims out, in (u32 each), then out*in weight f32s followed
//!   by out bias f32s
//!
//! The final record must be the linear classifier. Weights are stored in
//! f32; training values are cast on write.

use super::{ConvLayer, Layer, Linear, Network, Tensor};
use crate::wire::{put_u32, Cursor};
use crate::{Error, Result};
use std::io::Write;
use std::path::Path;

const MAGIC: &[u8; 4] = b"PNM1";

const KIND_CONV: u8 = 0;
const KIND_RELU: u8 = 1;
const KIND_MAXPOOL2: u8 = 2;
const KIND_LINEAR: u8 = 3;

pub fn write_pnm(net: &Network, path: &Path) -> Result<()> {
    let mut body = Vec::new();
    body.extend_from_slice(MAGIC);
    put_u32(&mut body, (net.layers.len() + 1) as u32);
    for layer in &net.layers {
        match layer {
            Layer::Conv(conv) => {
                body.push(KIND_CONV);
                let s = conv.weights.shape();
                for &d in s {
                    put_u32(&mut body, d as u32);
                }
                put_u32(&mut body, conv.stride as u32);
                put_u32(&mut body, conv.pad as u32);
                push_f32s(&mut body, conv.weights.data());
                push_f32s(&mut body, conv.bias.data());
            }
            Layer::Relu => body.push(KIND_RELU),
            Layer::MaxPool2 => body.push(KIND_MAXPOOL2),
        }
    }
    body.push(KIND_LINEAR);
    put_u32(&mut body, net.classifier.outputs() as u32);
    put_u32(&mut body, net.classifier.inputs() as u32);
    push_f32s(&mut body, net.classifier.weights.data());
    push_f32s(&mut body, net.classifier.bias.data());

    let mut file = std::fs::File::create(path).map_err(|e| Error::File {
        path: path.to_path_buf(),
        source: e,
    })?;
    file.write_all(&body)?;
    Ok(())
}

fn push_f32s(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn read_pnm(path: &Path) -> Result<Network> {
    let file = std::fs::File::open(path).map_err(|e| Error::File {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut cur = Cursor::new(std::io::BufReader::new(file));
    cur.expect_magic(MAGIC)?;
    let count = cur.read_u32()? as usize;
    if count == 0 {
        return Err(Error::format(cur.offset(), "empty model"));
    }

    let mut layers = Vec::new();
    let mut classifier: Option<Linear> = None;
    for i in 0..count {
        let at = cur.offset();
        let kind = cur.read_u8()?;
        match kind {
            KIND_CONV => {
                let f = cur.read_u32()? as usize;
                let c = cur.read_u32()? as usize;
                let kh = cur.read_u32()? as usize;
                let kw = cur.read_u32()? as usize;
                let stride = cur.read_u32()? as usize;
                let pad = cur.read_u32()? as usize;
                let weights = read_tensor(&mut cur, &[f, c, kh, kw])?;
                let bias = read_tensor(&mut cur, &[f])?;
                layers.push(Layer::Conv(ConvLayer::new(weights, bias, stride, pad)?));
            }
            KIND_RELU => layers.push(Layer::Relu),
            KIND_MAXPOOL2 => layers.push(Layer::MaxPool2),
            KIND_LINEAR => {
                let out = cur.read_u32()? as usize;
                let inp = cur.read_u32()? as usize;
                let weights = read_tensor(&mut cur, &[out, inp])?;
                let bias = read_tensor(&mut cur, &[out])?;
                if i + 1 != count {
                    return Err(Error::format(at, "linear classifier must be the last layer"));
                }
                classifier = Some(Linear::new(weights, bias)?);
            }
            other => {
                return Err(Error::format(at, format!("unknown layer kind {other}")));
            }
        }
    }
    cur.expect_eof()?;
    let classifier =
        classifier.ok_or_else(|| Error::format(cur.offset(), "model has no classifier"))?;
    Network::new(layers, classifier)
}

fn read_tensor(cur: &mut Cursor<impl std::io::Read>, shape: &[usize]) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let raw = cur.read_f32_vec(n)?;
    Tensor::from_vec(shape, raw.iter().map(|&v| v as f64).collect())
}
