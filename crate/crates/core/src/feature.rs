//! Dense channel-major feature grids and their on-disk forms.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// `channels x height x width` grid stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        FeatureMap {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::shape(format!("degenerate shape {channels}x{height}x{width}")));
        }
        if data.len() != channels * height * width {
            return Err(Error::shape(format!(
                "data length {} does not match {channels}x{height}x{width}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation {
                index: i,
                msg: "non-finite feature value".into(),
            });
        }
        Ok(FeatureMap {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let i = self.index(c, y, x);
        self.data[i] = v;
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let p = self.plane();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let p = self.plane();
        &mut self.data[c * p..(c + 1) * p]
    }

    /// Values of every channel at one pixel.
    pub fn pixel(&self, y: usize, x: usize) -> Vec<f64> {
        (0..self.channels).map(|c| self.get(c, y, x)).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Channel concatenation; all maps must share height and width.
    pub fn concat(maps: &[&FeatureMap]) -> Result<FeatureMap> {
        let first = maps.first().ok_or_else(|| Error::shape("nothing to concatenate"))?;
        let (h, w) = (first.height, first.width);
        let mut data = Vec::new();
        let mut channels = 0;
        for m in maps {
            if (m.height, m.width) != (h, w) {
                return Err(Error::shape(format!(
                    "cannot concatenate {}x{} with {h}x{w}",
                    m.height, m.width
                )));
            }
            channels += m.channels;
            data.extend_from_slice(&m.data);
        }
        Ok(FeatureMap {
            channels,
            height: h,
            width: w,
            data,
        })
    }

    /// Channels `start..end` as a new map.
    pub fn slice_channels(&self, start: usize, end: usize) -> Result<FeatureMap> {
        if start >= end || end > self.channels {
            return Err(Error::shape(format!("channel range {start}..{end} of {}", self.channels)));
        }
        let p = self.plane();
        Ok(FeatureMap {
            channels: end - start,
            height: self.height,
            width: self.width,
            data: self.data[start * p..end * p].to_vec(),
        })
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.shape() == other.shape()
    }

    /// Elementwise `self + other`.
    pub fn add(&self, other: &FeatureMap) -> Result<FeatureMap> {
        if !self.same_shape(other) {
            return Err(Error::shape(format!("{:?} + {:?}", self.shape(), other.shape())));
        }
        Ok(FeatureMap {
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
            ..self.clone()
        })
    }

    pub fn scaled(&self, s: f64) -> FeatureMap {
        FeatureMap {
            data: self.data.iter().map(|v| v * s).collect(),
            ..self.clone()
        }
    }

    pub fn max_abs_diff(&self, other: &FeatureMap) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Writes the map as a rank-3 tensor file.
    pub fn save_tensor(&self, path: &Path) -> Result<()> {
        Tensor {
            dims: vec![self.channels, self.height, self.width],
            data: self.data.clone(),
        }
        .save(path)
    }

    /// Reads a tensor file of rank 3 (or rank 2, read as one channel).
    pub fn load_tensor(path: &Path) -> Result<FeatureMap> {
        let t = Tensor::load(path)?;
        t.into_feature_map()
    }

    /// Writes one channel as an 8-bit grayscale PNG, min-max normalized.
    pub fn save_channel_png(&self, c: usize, path: &Path) -> Result<()> {
        let ch = self.channel(c);
        let lo = ch.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ch.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let bytes: Vec<u8> = ch
            .iter()
            .map(|v| (((v - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        write_png(path, self.width, self.height, png::ColorType::Grayscale, &bytes)
    }

    /// Writes a 3-channel map in `[0, 1]` as an RGB PNG (values clamped).
    pub fn save_rgb_png(&self, path: &Path) -> Result<()> {
        if self.channels != 3 {
            return Err(Error::shape(format!("rgb png needs 3 channels, got {}", self.channels)));
        }
        write_png(path, self.width, self.height, png::ColorType::Rgb, &self.to_rgb8())
    }

    /// Interleaved 8-bit RGB of a 3-channel or 1-channel map in `[0, 1]`.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.plane() * 3);
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..3 {
                    let v = self.get(c.min(self.channels - 1), y, x);
                    out.push(to_u8(v));
                }
            }
        }
        out
    }

    /// Loads an 8- or 16-bit PNG into a map with values in `[0, 1]`. Gray
    /// images are expanded to 3 channels; alpha is dropped.
    pub fn load_png(path: &Path) -> Result<FeatureMap> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut decoder = png::Decoder::new(std::io::BufReader::new(file));
        decoder.set_transformations(png::Transformations::EXPAND);
        let mut reader = decoder
            .read_info()
            .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
        let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
        let (w, h) = (info.width as usize, info.height as usize);
        let samples = info.color_type.samples();
        let sixteen = info.bit_depth == png::BitDepth::Sixteen;
        let value = |i: usize| -> f64 {
            if sixteen {
                u16::from_be_bytes([buf[2 * i], buf[2 * i + 1]]) as f64 / 65535.0
            } else {
                buf[i] as f64 / 255.0
            }
        };
        let mut map = FeatureMap::zeros(3, h, w);
        for y in 0..h {
            for x in 0..w {
                let base = (y * w + x) * samples;
                for c in 0..3 {
                    let src = if samples < 3 { 0 } else { c };
                    map.set(c, y, x, value(base + src));
                }
            }
        }
        Ok(map)
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub(crate) fn write_png(path: &Path, w: usize, h: usize, color: png::ColorType, bytes: &[u8]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), w as u32, h as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::format(format!("png header: {e}")))?;
    writer
        .write_image_data(bytes)
        .map_err(|e| Error::format(format!("png data: {e}")))?;
    writer.finish().map_err(|e| Error::format(format!("png finish: {e}")))?;
    Ok(())
}

/// Magic bytes of the flat tensor format.
pub const TENSOR_MAGIC: &[u8; 4] = b"SRTN";
const DTYPE_F32: u8 = 1;
const DTYPE_F64: u8 = 2;

/// Flat n-d tensor file: magic `SRTN`, dtype byte (1 = f32, 2 = f64), three
/// zero bytes, u32 rank, u32 dims, then little-endian values in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn from_maps(maps: &[FeatureMap]) -> Result<Tensor> {
        let first = maps.first().ok_or_else(|| Error::shape("no maps"))?;
        if maps.iter().any(|m| !m.same_shape(first)) {
            return Err(Error::shape("maps differ in shape"));
        }
        let (c, h, w) = first.shape();
        Ok(Tensor {
            dims: vec![maps.len(), c, h, w],
            data: maps.iter().flat_map(|m| m.data.iter().copied()).collect(),
        })
    }

    /// Splits a rank-4 tensor into its leading-axis maps.
    pub fn into_maps(self) -> Result<Vec<FeatureMap>> {
        if self.dims.len() != 4 {
            return Err(Error::shape(format!("expected rank-4 tensor, got rank {}", self.dims.len())));
        }
        let (n, c, h, w) = (self.dims[0], self.dims[1], self.dims[2], self.dims[3]);
        let step = c * h * w;
        (0..n)
            .map(|i| FeatureMap::from_vec(c, h, w, self.data[i * step..(i + 1) * step].to_vec()))
            .collect()
    }

    pub fn into_feature_map(self) -> Result<FeatureMap> {
        match self.dims.as_slice() {
            &[c, h, w] => FeatureMap::from_vec(c, h, w, self.data),
            &[h, w] => FeatureMap::from_vec(1, h, w, self.data),
            other => Err(Error::shape(format!("expected rank-3 tensor, got dims {other:?}"))),
        }
    }

    pub fn encode(&self, double: bool) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.dims.len() + self.data.len() * 8);
        out.extend_from_slice(TENSOR_MAGIC);
        out.push(if double { DTYPE_F64 } else { DTYPE_F32 });
        out.extend_from_slice(&[0, 0, 0]);
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for d in &self.dims {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in &self.data {
            if double {
                out.extend_from_slice(&v.to_le_bytes());
            } else {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn decode(mut bytes: &[u8]) -> Result<Tensor> {
        let mut head = [0u8; 12];
        bytes
            .read_exact(&mut head)
            .map_err(|_| Error::format("tensor file truncated in header"))?;
        if &head[..4] != TENSOR_MAGIC {
            return Err(Error::format("bad tensor magic"));
        }
        let width = match head[4] {
            DTYPE_F32 => 4,
            DTYPE_F64 => 8,
            d => return Err(Error::format(format!("unknown tensor dtype {d}"))),
        };
        let rank = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
        if rank > 8 {
            return Err(Error::format(format!("tensor rank {rank} too large")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 4];
            bytes
                .read_exact(&mut b)
                .map_err(|_| Error::format("tensor file truncated in dims"))?;
            dims.push(u32::from_le_bytes(b) as usize);
        }
        let count: usize = dims.iter().product();
        if bytes.len() != count * width {
            return Err(Error::format(format!(
                "tensor payload has {} bytes, expected {}",
                bytes.len(),
                count * width
            )));
        }
        let data = bytes
            .chunks_exact(width)
            .map(|c| {
                if width == 4 {
                    f32::from_le_bytes(c.try_into().unwrap()) as f64
                } else {
                    f64::from_le_bytes(c.try_into().unwrap())
                }
            })
            .collect();
        Ok(Tensor { dims, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.encode(false)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Tensor> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Tensor::decode(&bytes)
    }
}
