//! PNG persistence for frames. Records reference frames by `frames/<hash>.png`.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use crate::model::{Frame, ModelError};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("frame {0} has no pixels loaded")]
    NotLoaded(String),
    #[error("frame {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("png encoding: {0}")]
    Encode(#[from] png::EncodingError),
    #[error("png decoding {path}: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("frame {expected} on disk hashes to {actual}")]
    HashMismatch { expected: String, actual: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// RGB8 PNG bytes of a loaded frame.
pub fn encode_png(frame: &Frame) -> Result<Vec<u8>, StoreError> {
    let pixels = frame.pixels().ok_or_else(|| StoreError::NotLoaded(frame.hash().to_string()))?;
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(BufWriter::new(&mut out), frame.width(), frame.height());
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(pixels)?;
    }
    Ok(out)
}

pub fn decode_png(bytes: &[u8], path: &Path) -> Result<Frame, StoreError> {
    let err = |m: String| StoreError::Decode {
        path: path.to_path_buf(),
        message: m,
    };
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| err(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| err("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| err(e.to_string()))?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(err(format!("expected RGB8, found {:?}/{:?}", info.color_type, info.bit_depth)));
    }
    buf.truncate(info.buffer_size());
    Ok(Frame::from_pixels(info.width, info.height, buf)?)
}

/// A directory holding `frames/<hash>.png`.
#[derive(Clone, Debug)]
pub struct FrameStore {
    root: PathBuf,
}

impl FrameStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_of(&self, frame: &Frame) -> PathBuf {
        self.root.join(frame.relative_path())
    }

    /// Writes the frame unless a file with its hash already exists.
    pub fn save(&self, frame: &Frame) -> Result<(), StoreError> {
        let path = self.path_of(frame);
        if path.exists() {
            return Ok(());
        }
        let io = |source| StoreError::Io {
            path: path.clone(),
            source,
        };
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io)?;
        }
        let bytes = encode_png(frame)?;
        // Write-then-rename so concurrent writers of the same frame never expose a partial file.
        let tmp = path.with_extension(format!("png.{}.tmp", std::process::id()));
        fs::write(&tmp, bytes).map_err(io)?;
        fs::rename(&tmp, &path).map_err(io)?;
        Ok(())
    }

    /// Loads the pixels behind a frame reference and checks the digest.
    pub fn load(&self, frame: &Frame) -> Result<Frame, StoreError> {
        if frame.is_loaded() {
            return Ok(frame.clone());
        }
        let path = self.path_of(frame);
        let bytes = fs::read(&path).map_err(|source| StoreError::Io {
            path: path.clone(),
            source,
        })?;
        let loaded = decode_png(&bytes, &path)?;
        if loaded.hash() != frame.hash() {
            return Err(StoreError::HashMismatch {
                expected: frame.hash().to_string(),
                actual: loaded.hash().to_string(),
            });
        }
        Ok(loaded)
    }
}
