//! Capture-side media pipeline.
//!
//! Raw microphone audio (any rate, mono or stereo) becomes 16 kHz mono PCM16
//! in fixed 100 ms chunks; camera frames arriving at the source rate are gated
//! down to roughly one per second and compressed to JPEG. Mode changes travel
//! on the same ordered event stream as the media itself.

mod audio;
mod io;
mod video;

pub use audio::{resample_to_wire, AudioChunk, AudioChunker, FlushedChunk, RawAudio, Resampler};
pub use io::{read_frame_dir, read_wav, write_png, write_wav};
pub use video::{encode_jpeg, throttle_frames, CapturedFrame, FrameThrottle, RgbRaster, VideoFrame};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MediaError {
    #[error("invalid audio: {0}")]
    InvalidAudio(String),
    #[error("unsupported channel count {0}: only mono and stereo input can be downmixed")]
    UnsupportedChannels(u16),
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
    #[error("frame timestamp {got} ms precedes previous frame at {previous} ms")]
    OutOfOrder { previous: u64, got: u64 },
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("jpeg encoding failed: {0}")]
    Encode(String),
    #[error("i/o error on {path}: {detail}")]
    Io { path: String, detail: String },
}

/// Whether frames are uplinked at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MediaMode {
    #[default]
    AudioAndVideo,
    AudioOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub target_audio_rate: u32,
    pub chunk_ms: u32,
    pub frame_interval_ms: u64,
    pub jpeg_quality: u8,
    pub source_fps: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            target_audio_rate: 16_000,
            chunk_ms: 100,
            frame_interval_ms: 1_000,
            jpeg_quality: 50,
            source_fps: 24,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), MediaError> {
        if self.target_audio_rate == 0
            || self.chunk_ms == 0
            || self.frame_interval_ms == 0
            || self.jpeg_quality == 0
            || self.source_fps == 0
        {
            return Err(MediaError::InvalidConfig(
                "all pipeline parameters must be strictly positive".into(),
            ));
        }
        if self.jpeg_quality > 100 {
            return Err(MediaError::InvalidConfig(format!(
                "jpeg quality {} outside 1..=100",
                self.jpeg_quality
            )));
        }
        if (u64::from(self.chunk_ms) * u64::from(self.target_audio_rate)) % 1000 != 0 {
            return Err(MediaError::InvalidConfig(format!(
                "{} ms at {} Hz is not a whole number of samples",
                self.chunk_ms, self.target_audio_rate
            )));
        }
        Ok(())
    }

    pub fn samples_per_chunk(&self) -> usize {
        (u64::from(self.chunk_ms) * u64::from(self.target_audio_rate) / 1000) as usize
    }
}

/// One unit ready for the session uplink.
#[derive(Debug, Clone, PartialEq)]
pub enum MediaItem {
    Audio(AudioChunk),
    Frame(VideoFrame),
}

/// Ordered input to [`MediaPipeline`].
#[derive(Debug, Clone)]
pub enum MediaEvent {
    Audio(RawAudio),
    Frame(CapturedFrame),
    SetMode(MediaMode),
}

/// Streaming composition of resampler, chunker, frame gate and encoder.
///
/// Frames are gated before compression, so dropped frames are never encoded.
pub struct MediaPipeline {
    cfg: PipelineConfig,
    resampler: Option<Resampler>,
    chunker: AudioChunker,
    throttle: FrameThrottle,
}

impl MediaPipeline {
    pub fn new(cfg: PipelineConfig, mode: MediaMode) -> Result<Self, MediaError> {
        cfg.validate()?;
        Ok(Self {
            chunker: AudioChunker::new(&cfg),
            throttle: FrameThrottle::new(cfg.frame_interval_ms, mode),
            resampler: None,
            cfg,
        })
    }

    pub fn mode(&self) -> MediaMode {
        self.throttle.mode()
    }

    pub fn process(&mut self, event: MediaEvent) -> Result<Vec<MediaItem>, MediaError> {
        match event {
            MediaEvent::SetMode(mode) => {
                self.throttle.set_mode(mode);
                Ok(Vec::new())
            }
            MediaEvent::Frame(frame) => {
                if self.throttle.admit(frame.capture_ts)? {
                    let encoded = encode_jpeg(&frame.raster, frame.capture_ts, &self.cfg)?;
                    Ok(vec![MediaItem::Frame(encoded)])
                } else {
                    Ok(Vec::new())
                }
            }
            MediaEvent::Audio(raw) => {
                let mono = raw.downmix()?;
                let mut wire = Vec::new();
                if self.resampler.as_ref().map(Resampler::input_rate) != Some(raw.sample_rate) {
                    // A rate change closes the previous interpolation run.
                    if let Some(mut old) = self.resampler.take() {
                        wire.extend(old.finish());
                    }
                    self.resampler =
                        Some(Resampler::new(raw.sample_rate, self.cfg.target_audio_rate)?);
                }
                if let Some(r) = self.resampler.as_mut() {
                    wire.extend(r.push(&mono));
                }
                Ok(self.chunker.push(&wire).into_iter().map(MediaItem::Audio).collect())
            }
        }
    }

    /// Drain everything at session end, zero-padding the final partial chunk.
    pub fn finish(&mut self) -> Vec<MediaItem> {
        let mut out = Vec::new();
        if let Some(r) = self.resampler.as_mut() {
            let tail = r.finish();
            out.extend(self.chunker.push(&tail).into_iter().map(MediaItem::Audio));
        }
        if let Some(flushed) = self.chunker.flush() {
            out.push(MediaItem::Audio(flushed.chunk));
        }
        out
    }
}
