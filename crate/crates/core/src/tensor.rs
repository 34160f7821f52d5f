//! Dense `H x W x C` feature maps and the `.rsft` on-disk format.
//!
//! Layout is row-major with the channel index varying fastest, so the vector
//! of one pixel is a contiguous slice. Element `(row, col, ch)` lives at
//! `ch + channels * (col + width * row)`; every kernel in the crate goes
//! through [`FeatureMap::offset`] or [`FeatureMap::pixel`].
//!
//! `.rsft` layout (all integers little-endian):
//!
//! ```text
//! 0..4    magic "RSFT"
//! 4       version = 1
//! 5       dtype   = 0 (f32 LE)
//! 6..8    reserved, zero
//! 8..12   ndim    = 3
//! 12..24  H, W, C as u32
//! 24..    H*W*C f32 values
//! ```

use crate::error::{Error, Result};

pub const RSFT_MAGIC: [u8; 4] = *b"RSFT";
pub const RSFT_VERSION: u8 = 1;
pub const RSFT_HEADER_LEN: usize = 24;
const DTYPE_F32: u8 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T = f32> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

/// Double-precision map used by the oracles and gradient checks.
pub type FeatureMap64 = FeatureMap<f64>;

impl<T: Copy> FeatureMap<T> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::ShapeMismatch(format!(
                "feature map dims must be positive, got {height}x{width}x{channels}"
            )));
        }
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width}x{channels} map needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "empty feature map");
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    /// Builds a map by evaluating `f(row, col, ch)` in storage order.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "empty feature map");
        let mut data = Vec::with_capacity(height * width * channels);
        for row in 0..height {
            for col in 0..width {
                for ch in 0..channels {
                    data.push(f(row, col, ch));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    #[inline]
    pub fn offset(&self, row: usize, col: usize, ch: usize) -> usize {
        debug_assert!(row < self.height && col < self.width && ch < self.channels);
        ch + self.channels * (col + self.width * row)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> T {
        self.data[self.offset(row, col, ch)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: T) {
        let o = self.offset(row, col, ch);
        self.data[o] = value;
    }

    /// Channel vector of the pixel with flat index `p = col + width * row`.
    #[inline]
    pub fn pixel(&self, p: usize) -> &[T] {
        &self.data[p * self.channels..(p + 1) * self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, p: usize) -> &mut [T] {
        &mut self.data[p * self.channels..(p + 1) * self.channels]
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> FeatureMap<U> {
        FeatureMap {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn same_dims<U>(&self, other: &FeatureMap<U>) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub(crate) fn ensure_same_dims<U>(&self, other: &FeatureMap<U>, what: &str) -> Result<()> {
        if self.same_dims(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.height, self.width, self.channels, other.height, other.width, other.channels
            )))
        }
    }
}

impl FeatureMap<f32> {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn to_f64(&self) -> FeatureMap64 {
        self.map(f64::from)
    }

    /// Encodes the map as an `.rsft` byte stream.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(RSFT_HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(&RSFT_MAGIC);
        out.push(RSFT_VERSION);
        out.push(DTYPE_F32);
        out.extend_from_slice(&[0, 0]);
        out.extend_from_slice(&3u32.to_le_bytes());
        for dim in [self.height, self.width, self.channels] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Decodes a complete `.rsft` byte stream; trailing data is rejected.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (map, used) = Self::read_prefix(bytes)?;
        if used != bytes.len() {
            return Err(Error::TrailingBytes(bytes.len() - used));
        }
        Ok(map)
    }

    /// Decodes one `.rsft` record from the front of `bytes`, returning the map
    /// and the number of bytes it occupied.
    pub fn read_prefix(bytes: &[u8]) -> Result<(Self, usize)> {
        if bytes.len() < 4 {
            return Err(Error::TruncatedPayload {
                expected: RSFT_HEADER_LEN,
                found: bytes.len(),
            });
        }
        let found: [u8; 4] = bytes[..4].try_into().unwrap();
        if found != RSFT_MAGIC {
            return Err(Error::BadMagic {
                expected: RSFT_MAGIC,
                found,
            });
        }
        if bytes.len() < RSFT_HEADER_LEN {
            return Err(Error::TruncatedPayload {
                expected: RSFT_HEADER_LEN,
                found: bytes.len(),
            });
        }
        if bytes[4] != RSFT_VERSION {
            return Err(Error::UnsupportedVersion(bytes[4]));
        }
        if bytes[5] != DTYPE_F32 {
            return Err(Error::UnsupportedDtype(bytes[5]));
        }
        if bytes[6] != 0 || bytes[7] != 0 {
            return Err(Error::InvalidHeader("reserved bytes must be zero".into()));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        let ndim = word(8);
        if ndim != 3 {
            return Err(Error::InvalidHeader(format!("ndim must be 3, got {ndim}")));
        }
        let (h, w, c) = (word(12), word(16), word(20));
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::InvalidHeader(format!("zero-sized dims {h}x{w}x{c}")));
        }
        let count = h
            .checked_mul(w)
            .and_then(|n| n.checked_mul(c))
            .ok_or_else(|| Error::InvalidHeader(format!("dims {h}x{w}x{c} overflow")))?;
        let payload = &bytes[RSFT_HEADER_LEN..];
        let need = count
            .checked_mul(4)
            .ok_or_else(|| Error::InvalidHeader(format!("dims {h}x{w}x{c} overflow")))?;
        if payload.len() < need {
            return Err(Error::TruncatedPayload {
                expected: need,
                found: payload.len(),
            });
        }
        let data = payload[..need]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok((Self::new(h, w, c, data)?, RSFT_HEADER_LEN + need))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> std::io::Result<Result<Self>> {
        std::fs::read(path).map(|bytes| Self::from_bytes(&bytes))
    }
}

impl FeatureMap<f64> {
    /// Rounds to single precision.
    pub fn to_f32(&self) -> FeatureMap<f32> {
        self.map(|v| v as f32)
    }
}

pub fn serialize_feature_map(map: &FeatureMap) -> Vec<u8> {
    map.to_bytes()
}

pub fn deserialize_feature_map(bytes: &[u8]) -> Result<FeatureMap> {
    FeatureMap::from_bytes(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_value_file_is_28_bytes() {
        let map = FeatureMap::new(1, 1, 1, vec![1.0]).unwrap();
        let bytes = map.to_bytes();
        assert_eq!(bytes.len(), 28);
        assert_eq!(&bytes[24..], &1.0f32.to_le_bytes());
    }

    #[test]
    fn header_layout() {
        let map = FeatureMap::new(1, 2, 1, vec![1.0, 2.0]).unwrap();
        let bytes = map.to_bytes();
        assert_eq!(&bytes[..4], b"RSFT");
        assert_eq!(bytes[4], 1);
        assert_eq!(bytes[5], 0);
        assert_eq!(&bytes[6..8], &[0, 0]);
        assert_eq!(&bytes[8..12], &3u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &1u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &2u32.to_le_bytes());
        assert_eq!(&bytes[20..24], &1u32.to_le_bytes());
        assert_eq!(&bytes[24..28], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[28..32], &2.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 32);
    }

    #[test]
    fn payload_size() {
        let map = FeatureMap::zeros(2, 2, 3);
        assert_eq!(map.to_bytes().len() - RSFT_HEADER_LEN, 48);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = FeatureMap::zeros(1, 1, 1).to_bytes();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            FeatureMap::from_bytes(&bytes),
            Err(Error::BadMagic { found, .. }) if &found == b"XXXX"
        ));
    }

    #[test]
    fn version_and_truncation() {
        let mut bytes = FeatureMap::zeros(2, 2, 2).to_bytes();
        let short = &bytes[..bytes.len() - 1];
        assert!(matches!(
            FeatureMap::from_bytes(short),
            Err(Error::TruncatedPayload { expected: 32, found: 31 })
        ));
        bytes[4] = 2;
        assert_eq!(FeatureMap::from_bytes(&bytes), Err(Error::UnsupportedVersion(2)));
    }

    #[test]
    fn trailing_bytes_rejected_but_prefix_reads() {
        let mut bytes = FeatureMap::zeros(1, 1, 2).to_bytes();
        let len = bytes.len();
        bytes.push(7);
        assert_eq!(FeatureMap::from_bytes(&bytes), Err(Error::TrailingBytes(1)));
        let (_, used) = FeatureMap::read_prefix(&bytes).unwrap();
        assert_eq!(used, len);
    }

    #[test]
    fn indexing_convention() {
        let map = FeatureMap::from_fn(3, 4, 2, |r, c, ch| (100 * r + 10 * c + ch) as f32);
        assert_eq!(map.offset(2, 1, 1), 1 + 2 * (1 + 4 * 2));
        assert_eq!(map.get(2, 1, 1), 211.0);
        assert_eq!(map.pixel(4 * 2 + 1), &[210.0, 211.0]);
    }

    #[test]
    fn rejects_bad_dims() {
        assert!(FeatureMap::new(0, 1, 1, Vec::<f32>::new()).is_err());
        assert!(FeatureMap::new(1, 1, 2, vec![0.0f32]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(h in 1usize..6, w in 1usize..6, c in 1usize..5, seed in any::<u64>()) {
            let mut rng = crate::rng::SplitMix64::new(seed);
            let map = FeatureMap::from_fn(h, w, c, |_, _, _| f32::from_bits(rng.next_u64() as u32 & 0x7f7f_ffff));
            let bytes = serialize_feature_map(&map);
            let back = deserialize_feature_map(&bytes).unwrap();
            prop_assert_eq!(back.dims(), map.dims());
            prop_assert!(back.data().iter().zip(map.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
            prop_assert_eq!(serialize_feature_map(&back), bytes);
        }
    }
}
