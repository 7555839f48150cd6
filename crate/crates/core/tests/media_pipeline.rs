//! Capture pipeline: chunk accounting, spectral fidelity, frame gating.

use agentloop_core::media::{
    AudioChunk, CapturedFrame, MediaEvent, MediaItem, MediaMode, MediaPipeline, PipelineConfig, RawAudio, RgbRaster,
};
use proptest::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

fn stereo_sine(freq: f64, rate: u32, secs: f64, amp: f64) -> Vec<i16> {
    let n = (f64::from(rate) * secs).round() as usize;
    (0..n)
        .flat_map(|i| {
            let v = (amp * (2.0 * std::f64::consts::PI * freq * i as f64 / f64::from(rate)).sin()).round() as i16;
            [v, v]
        })
        .collect()
}

/// Feed interleaved stereo in `piece_ms` slices, then drain.
fn run_audio(samples: &[i16], rate: u32, piece_ms: u32) -> Vec<AudioChunk> {
    let mut p = MediaPipeline::new(PipelineConfig::default(), MediaMode::AudioAndVideo).unwrap();
    let piece = (rate * piece_ms / 1000) as usize * 2;
    let mut items = Vec::new();
    for s in samples.chunks(piece) {
        items.extend(p.process(MediaEvent::Audio(RawAudio::new(s.to_vec(), rate, 2).unwrap())).unwrap());
    }
    items.extend(p.finish());
    items
        .into_iter()
        .map(|i| match i {
            MediaItem::Audio(a) => a,
            MediaItem::Frame(_) => panic!("no frames were fed"),
        })
        .collect()
}

fn peak_bin(samples: &[i16]) -> usize {
    let mut buf: Vec<Complex<f64>> = samples.iter().map(|&s| Complex::new(f64::from(s), 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    (1..buf.len() / 2).max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm())).unwrap()
}

#[test]
fn ten_seconds_of_48k_stereo_is_one_hundred_chunks() {
    let chunks = run_audio(&stereo_sine(440.0, 48_000, 10.0, 8000.0), 48_000, 20);
    assert_eq!(chunks.len(), 100);
    assert!(chunks.iter().all(|c| c.to_le_bytes().len() == 3200));
    let seqs: Vec<u64> = chunks.iter().map(|c| c.seq).collect();
    assert_eq!(seqs, (0..100).collect::<Vec<u64>>());
}

#[test]
fn sine_survives_resampling() {
    for (freq, rate) in [(440.0, 48_000), (440.0, 44_100), (1000.0, 22_050), (3000.0, 48_000)] {
        let chunks = run_audio(&stereo_sine(freq, rate, 2.0, 12_000.0), rate, 20);
        let wire: Vec<i16> = chunks.iter().flat_map(|c| c.samples.iter().copied()).take(32_000).collect();
        assert_eq!(wire.len(), 32_000);
        let expected = freq * wire.len() as f64 / 16_000.0;
        let got = peak_bin(&wire) as f64;
        assert!((got - expected).abs() <= 1.0, "{freq} Hz at {rate}: bin {got}, expected {expected}");
    }
}

fn frames(n: u64, fps: u64) -> Vec<CapturedFrame> {
    (0..n)
        .map(|i| CapturedFrame { capture_ts: i * 1000 / fps, raster: RgbRaster::solid(32, 24, [200, 120, 40]) })
        .collect()
}

fn count_frames(mode: MediaMode, input: Vec<CapturedFrame>) -> usize {
    let mut p = MediaPipeline::new(PipelineConfig::default(), mode).unwrap();
    input
        .into_iter()
        .flat_map(|f| p.process(MediaEvent::Frame(f)).unwrap())
        .filter(|i| matches!(i, MediaItem::Frame(f) if f.has_jpeg_markers()))
        .count()
}

#[test]
fn frame_gate_keeps_about_one_per_second() {
    let n = count_frames(MediaMode::AudioAndVideo, frames(240, 24));
    assert!((9..=11).contains(&n), "{n} frames");
    assert_eq!(count_frames(MediaMode::AudioOnly, frames(240, 24)), 0);
}

#[test]
fn mode_switch_applies_in_stream_order() {
    let mut p = MediaPipeline::new(PipelineConfig::default(), MediaMode::AudioAndVideo).unwrap();
    let mut emitted = Vec::new();
    for (i, f) in frames(240, 24).into_iter().enumerate() {
        if i == 120 {
            p.process(MediaEvent::SetMode(MediaMode::AudioOnly)).unwrap();
        }
        for item in p.process(MediaEvent::Frame(f)).unwrap() {
            if let MediaItem::Frame(v) = item {
                emitted.push(v.capture_ts);
            }
        }
    }
    assert!(!emitted.is_empty());
    assert!(emitted.iter().all(|&ts| ts < 5000), "{emitted:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn slicing_does_not_change_the_output(ms in 1u32..3000, a in 1u32..200, b in 1u32..200, rate in prop::sample::select(vec![8_000u32, 16_000, 44_100, 48_000])) {
        let samples = stereo_sine(523.25, rate, f64::from(ms) / 1000.0, 9000.0);
        let x: Vec<Vec<i16>> = run_audio(&samples, rate, a).into_iter().map(|c| c.samples).collect();
        let y: Vec<Vec<i16>> = run_audio(&samples, rate, b).into_iter().map(|c| c.samples).collect();
        prop_assert_eq!(&x, &y);
        prop_assert!(x.iter().all(|c| c.len() == 1600));
        // Total output covers the input duration and overshoots by less than a chunk.
        let wire_ms = x.len() as u64 * 100;
        prop_assert!(wire_ms + 1 >= u64::from(ms) && wire_ms < u64::from(ms) + 100, "{} chunks for {} ms", x.len(), ms);
    }

    #[test]
    fn gate_intervals_never_shrink(fps in 1u64..120, secs in 1u64..20, interval in 100u64..3000) {
        let cfg = PipelineConfig { frame_interval_ms: interval, ..PipelineConfig::default() };
        let mut p = MediaPipeline::new(cfg, MediaMode::AudioAndVideo).unwrap();
        let mut kept = Vec::new();
        for f in frames(fps * secs, fps) {
            for item in p.process(MediaEvent::Frame(f)).unwrap() {
                if let MediaItem::Frame(v) = item {
                    kept.push(v.capture_ts);
                }
            }
        }
        prop_assert_eq!(kept.first().copied(), Some(0));
        prop_assert!(kept.windows(2).all(|w| w[1] - w[0] >= interval));
    }
}
