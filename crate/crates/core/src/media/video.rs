use image::codecs::jpeg::JpegEncoder;
use image::ExtendedColorType;

use super::{MediaError, MediaMode, PipelineConfig};

/// Packed 8-bit RGB pixels, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbRaster {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl RgbRaster {
    pub fn solid(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let n = width as usize * height as usize;
        Self { width, height, pixels: rgb.iter().copied().cycle().take(n * 3).collect() }
    }
}

/// A camera frame before gating and compression.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CapturedFrame {
    pub capture_ts: u64,
    pub raster: RgbRaster,
}

/// A gated, JPEG-compressed frame ready for uplink.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoFrame {
    pub jpeg_bytes: Vec<u8>,
    pub capture_ts: u64,
    pub width: u32,
    pub height: u32,
    pub quality: u8,
}

impl VideoFrame {
    pub fn has_jpeg_markers(&self) -> bool {
        self.jpeg_bytes.starts_with(&[0xFF, 0xD8]) && self.jpeg_bytes.ends_with(&[0xFF, 0xD9])
    }
}

pub fn encode_jpeg(raster: &RgbRaster, capture_ts: u64, cfg: &PipelineConfig) -> Result<VideoFrame, MediaError> {
    if raster.width == 0 || raster.height == 0 {
        return Err(MediaError::InvalidImage(format!(
            "zero-sized image {}x{}",
            raster.width, raster.height
        )));
    }
    let expected = raster.width as usize * raster.height as usize * 3;
    if raster.pixels.len() != expected {
        return Err(MediaError::InvalidImage(format!(
            "expected {expected} bytes of RGB data, got {}",
            raster.pixels.len()
        )));
    }
    if !(1..=100).contains(&cfg.jpeg_quality) {
        return Err(MediaError::InvalidConfig(format!("jpeg quality {}", cfg.jpeg_quality)));
    }
    let mut jpeg_bytes = Vec::new();
    JpegEncoder::new_with_quality(&mut jpeg_bytes, cfg.jpeg_quality)
        .encode(&raster.pixels, raster.width, raster.height, ExtendedColorType::Rgb8)
        .map_err(|e| MediaError::Encode(e.to_string()))?;
    Ok(VideoFrame {
        jpeg_bytes,
        capture_ts,
        width: raster.width,
        height: raster.height,
        quality: cfg.jpeg_quality,
    })
}

/// Timestamp gate: a frame passes iff at least `interval_ms` elapsed since the
/// last one that passed. The first frame always passes. Frames offered while in
/// audio-only mode are dropped outright.
#[derive(Debug, Clone)]
pub struct FrameThrottle {
    interval_ms: u64,
    mode: MediaMode,
    last_emitted: Option<u64>,
    last_seen: Option<u64>,
}

impl FrameThrottle {
    pub fn new(interval_ms: u64, mode: MediaMode) -> Self {
        Self { interval_ms, mode, last_emitted: None, last_seen: None }
    }

    pub fn mode(&self) -> MediaMode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: MediaMode) {
        self.mode = mode;
    }

    pub fn admit(&mut self, ts: u64) -> Result<bool, MediaError> {
        if let Some(previous) = self.last_seen {
            if ts < previous {
                return Err(MediaError::OutOfOrder { previous, got: ts });
            }
        }
        self.last_seen = Some(ts);
        if self.mode == MediaMode::AudioOnly {
            return Ok(false);
        }
        let pass = match self.last_emitted {
            None => true,
            Some(last) => ts - last >= self.interval_ms,
        };
        if pass {
            self.last_emitted = Some(ts);
        }
        Ok(pass)
    }
}

/// Gate then compress a whole frame sequence.
pub fn throttle_frames(
    frames: &[CapturedFrame],
    cfg: &PipelineConfig,
    mode: MediaMode,
) -> Result<Vec<VideoFrame>, MediaError> {
    let mut gate = FrameThrottle::new(cfg.frame_interval_ms, mode);
    let mut out = Vec::new();
    for f in frames {
        if gate.admit(f.capture_ts)? {
            out.push(encode_jpeg(&f.raster, f.capture_ts, cfg)?);
        }
    }
    Ok(out)
}
