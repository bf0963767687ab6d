use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ModelError;

/// An RGB raster observation.
///
/// Frames compare by `(width, height, hash)`. The raster itself is optional so that a
/// frame can be carried around as a reference (for example after being read back from
/// JSONL) and hydrated from a [`crate::store::FrameStore`] when pixels are needed.
#[derive(Clone, Debug)]
pub struct Frame {
    width: u32,
    height: u32,
    hash: String,
    pixels: Option<Arc<Vec<u8>>>,
}

impl Frame {
    pub fn from_pixels(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, ModelError> {
        let expected = 3 * width as usize * height as usize;
        if pixels.len() != expected {
            return Err(ModelError::RasterSize {
                expected,
                actual: pixels.len(),
            });
        }
        let hash = raster_digest(width, height, &pixels);
        Ok(Self {
            width,
            height,
            hash,
            pixels: Some(Arc::new(pixels)),
        })
    }

    /// A frame known only by its digest.
    pub fn reference(width: u32, height: u32, hash: impl Into<String>) -> Self {
        Self {
            width,
            height,
            hash: hash.into(),
            pixels: None,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn pixels(&self) -> Option<&[u8]> {
        self.pixels.as_deref().map(Vec::as_slice)
    }

    pub fn is_loaded(&self) -> bool {
        self.pixels.is_some()
    }

    /// Relative path used when the raster is persisted next to a JSONL record.
    pub fn relative_path(&self) -> String {
        format!("frames/{}.png", self.hash)
    }

    pub fn pixel(&self, x: u32, y: u32) -> Option<[u8; 3]> {
        let px = self.pixels()?;
        if x >= self.width || y >= self.height {
            return None;
        }
        let i = 3 * (y as usize * self.width as usize + x as usize);
        Some([px[i], px[i + 1], px[i + 2]])
    }
}

pub fn raster_digest(width: u32, height: u32, pixels: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(width.to_le_bytes());
    hasher.update(height.to_le_bytes());
    hasher.update(pixels);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl PartialEq for Frame {
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height && self.hash == other.hash
    }
}

impl Eq for Frame {}

#[derive(Serialize, Deserialize)]
struct FrameRecord {
    width: u32,
    height: u32,
    hash: String,
    #[serde(default, skip_deserializing)]
    path: String,
}

impl Serialize for Frame {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        FrameRecord {
            width: self.width,
            height: self.height,
            hash: self.hash.clone(),
            path: self.relative_path(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Frame {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let rec = FrameRecord::deserialize(deserializer)?;
        Ok(Frame::reference(rec.width, rec.height, rec.hash))
    }
}
