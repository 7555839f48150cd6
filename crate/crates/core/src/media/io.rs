//! File adapters used for simulation runs in place of live capture.

use std::path::{Path, PathBuf};

use super::{CapturedFrame, MediaError, RawAudio, RgbRaster};

fn io_err(path: &Path, e: impl std::fmt::Display) -> MediaError {
    MediaError::Io { path: path.display().to_string(), detail: e.to_string() }
}

/// Read a PCM16 WAV file at any rate.
pub fn read_wav(path: &Path) -> Result<RawAudio, MediaError> {
    let mut reader = hound::WavReader::open(path).map_err(|e| io_err(path, e))?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(MediaError::InvalidAudio(format!(
            "{}: only 16-bit integer PCM is supported",
            path.display()
        )));
    }
    let samples = reader
        .samples::<i16>()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| io_err(path, e))?;
    RawAudio::new(samples, spec.sample_rate, spec.channels)
}

pub fn write_wav(path: &Path, audio: &RawAudio) -> Result<(), MediaError> {
    let spec = hound::WavSpec {
        channels: audio.channels,
        sample_rate: audio.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| io_err(path, e))?;
    for &s in &audio.samples {
        w.write_sample(s).map_err(|e| io_err(path, e))?;
    }
    w.finalize().map_err(|e| io_err(path, e))
}

/// Load every image in `dir` (sorted by file name) as a frame stream.
/// Frame `i` is stamped `i * 1000 / source_fps` ms.
pub fn read_frame_dir(dir: &Path, source_fps: u32) -> Result<Vec<CapturedFrame>, MediaError> {
    if source_fps == 0 {
        return Err(MediaError::InvalidConfig("source fps must be positive".into()));
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|x| x.to_str())
                .map(|x| matches!(x.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg" | "ppm" | "bmp"))
                .unwrap_or(false)
        })
        .collect();
    paths.sort();
    paths
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let img = image::open(p).map_err(|e| io_err(p, e))?.to_rgb8();
            Ok(CapturedFrame {
                capture_ts: i as u64 * 1000 / u64::from(source_fps),
                raster: RgbRaster { width: img.width(), height: img.height(), pixels: img.into_raw() },
            })
        })
        .collect()
}

/// Write a raster as PNG, the format [`read_frame_dir`] reads back losslessly.
pub fn write_png(path: &Path, raster: &RgbRaster) -> Result<(), MediaError> {
    image::save_buffer(path, &raster.pixels, raster.width, raster.height, image::ExtendedColorType::Rgb8)
        .map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let audio = RawAudio::new(vec![1, -1, 300, -300, 0, 7], 48_000, 2).unwrap();
        write_wav(&path, &audio).unwrap();
        assert_eq!(read_wav(&path).unwrap(), audio);
    }

    #[test]
    fn frame_dir_timestamps() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..3 {
            image::RgbImage::from_pixel(4, 2, image::Rgb([i * 40, 0, 0]))
                .save(dir.path().join(format!("f{i:03}.png")))
                .unwrap();
        }
        std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let frames = read_frame_dir(dir.path(), 24).unwrap();
        assert_eq!(frames.iter().map(|f| f.capture_ts).collect::<Vec<_>>(), vec![0, 41, 83]);
        assert_eq!(frames[2].raster.pixels[0], 80);
    }
}
