use serde::{Deserialize, Serialize};

use super::{MediaError, PipelineConfig};

/// Interleaved PCM16 as it comes off a capture device or WAV file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawAudio {
    pub samples: Vec<i16>,
    pub sample_rate: u32,
    pub channels: u16,
}

impl RawAudio {
    pub fn new(samples: Vec<i16>, sample_rate: u32, channels: u16) -> Result<Self, MediaError> {
        if sample_rate == 0 {
            return Err(MediaError::InvalidAudio("sample rate must be positive".into()));
        }
        if channels == 0 {
            return Err(MediaError::InvalidAudio("channel count must be positive".into()));
        }
        if !samples.len().is_multiple_of(usize::from(channels)) {
            return Err(MediaError::InvalidAudio(format!(
                "{} samples is not a whole number of {}-channel frames",
                samples.len(),
                channels
            )));
        }
        Ok(Self { samples, sample_rate, channels })
    }

    pub fn mono(samples: Vec<i16>, sample_rate: u32) -> Result<Self, MediaError> {
        Self::new(samples, sample_rate, 1)
    }

    pub fn frames(&self) -> usize {
        self.samples.len() / usize::from(self.channels.max(1))
    }

    pub fn duration_secs(&self) -> f64 {
        self.frames() as f64 / f64::from(self.sample_rate)
    }

    /// Average the channels of each frame, rounding half away from zero.
    pub(crate) fn downmix(&self) -> Result<Vec<i16>, MediaError> {
        match self.channels {
            1 => Ok(self.samples.clone()),
            2 => Ok(self
                .samples
                .chunks_exact(2)
                .map(|lr| {
                    let mean = (f64::from(lr[0]) + f64::from(lr[1])) / 2.0;
                    mean.round() as i16
                })
                .collect()),
            n => Err(MediaError::UnsupportedChannels(n)),
        }
    }
}

/// Downmix to mono and convert to the wire sample rate.
pub fn resample_to_wire(raw: &RawAudio, cfg: &PipelineConfig) -> Result<RawAudio, MediaError> {
    let mono = raw.downmix()?;
    let mut resampler = Resampler::new(raw.sample_rate, cfg.target_audio_rate)?;
    let mut out = resampler.push(&mono);
    out.extend(resampler.finish());
    RawAudio::mono(out, cfg.target_audio_rate)
}

/// Streaming linear-interpolation rate converter for mono PCM16.
///
/// Output sample `k` sits at source position `k * in_rate / out_rate`. Splitting
/// the input across calls yields the same samples as one batch conversion.
#[derive(Debug, Clone)]
pub struct Resampler {
    in_rate: u64,
    out_rate: u64,
    /// Samples not yet consumed; `buf[0]` has global index `base`.
    buf: Vec<i16>,
    base: u64,
    total_in: u64,
    next_out: u64,
}

impl Resampler {
    pub fn new(in_rate: u32, out_rate: u32) -> Result<Self, MediaError> {
        if in_rate == 0 || out_rate == 0 {
            return Err(MediaError::InvalidAudio("sample rates must be positive".into()));
        }
        Ok(Self {
            in_rate: u64::from(in_rate),
            out_rate: u64::from(out_rate),
            buf: Vec::new(),
            base: 0,
            total_in: 0,
            next_out: 0,
        })
    }

    pub fn input_rate(&self) -> u32 {
        self.in_rate as u32
    }

    fn sample_at(&self, idx: u64) -> i16 {
        self.buf[(idx - self.base) as usize]
    }

    fn interpolate(&self, k: u64) -> i16 {
        let num = k * self.in_rate;
        let last = self.total_in - 1;
        let idx = (num / self.out_rate).min(last);
        let next = (idx + 1).min(last);
        let frac = (num % self.out_rate) as f64 / self.out_rate as f64;
        let a = f64::from(self.sample_at(idx));
        let b = f64::from(self.sample_at(next));
        let v = (a + (b - a) * frac).round();
        v.clamp(f64::from(i16::MIN), f64::from(i16::MAX)) as i16
    }

    pub fn push(&mut self, samples: &[i16]) -> Vec<i16> {
        self.buf.extend_from_slice(samples);
        self.total_in += samples.len() as u64;
        let mut out = Vec::new();
        loop {
            let idx = self.next_out * self.in_rate / self.out_rate;
            if idx + 1 >= self.total_in {
                break;
            }
            out.push(self.interpolate(self.next_out));
            self.next_out += 1;
        }
        // Keep only what the next output can still reference.
        let keep_from = (self.next_out * self.in_rate / self.out_rate).min(self.total_in);
        if keep_from > self.base {
            self.buf.drain(..(keep_from - self.base) as usize);
            self.base = keep_from;
        }
        out
    }

    /// Emit the tail so total output length is `round(n_in * out / in)`.
    pub fn finish(&mut self) -> Vec<i16> {
        let mut out = Vec::new();
        if self.total_in == 0 {
            return out;
        }
        let target = (self.total_in * self.out_rate + self.in_rate / 2) / self.in_rate;
        while self.next_out < target {
            out.push(self.interpolate(self.next_out));
            self.next_out += 1;
        }
        out
    }
}

/// 100 ms of wire audio.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AudioChunk {
    pub samples: Vec<i16>,
    pub seq: u64,
    /// Milliseconds since session start of the first sample.
    pub capture_ts: u64,
}

impl AudioChunk {
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.samples.iter().flat_map(|s| s.to_le_bytes()).collect()
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let sum: f64 = self.samples.iter().map(|&s| f64::from(s) * f64::from(s)).sum();
        (sum / self.samples.len() as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlushedChunk {
    pub chunk: AudioChunk,
    /// Number of trailing zero samples added to fill the chunk.
    pub padding: usize,
}

/// Accumulates wire-format samples and cuts fixed-size chunks.
#[derive(Debug, Clone)]
pub struct AudioChunker {
    chunk_len: usize,
    rate: u64,
    buf: Vec<i16>,
    next_seq: u64,
    emitted_samples: u64,
}

impl AudioChunker {
    pub fn new(cfg: &PipelineConfig) -> Self {
        Self {
            chunk_len: cfg.samples_per_chunk(),
            rate: u64::from(cfg.target_audio_rate),
            buf: Vec::with_capacity(cfg.samples_per_chunk()),
            next_seq: 0,
            emitted_samples: 0,
        }
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    fn cut(&mut self, samples: Vec<i16>) -> AudioChunk {
        let chunk = AudioChunk {
            samples,
            seq: self.next_seq,
            capture_ts: self.emitted_samples * 1000 / self.rate,
        };
        self.next_seq += 1;
        self.emitted_samples += self.chunk_len as u64;
        chunk
    }

    pub fn push(&mut self, samples: &[i16]) -> Vec<AudioChunk> {
        let mut out = Vec::new();
        let mut rest = samples;
        while !rest.is_empty() {
            let take = (self.chunk_len - self.buf.len()).min(rest.len());
            self.buf.extend_from_slice(&rest[..take]);
            rest = &rest[take..];
            if self.buf.len() == self.chunk_len {
                let full = std::mem::replace(&mut self.buf, Vec::with_capacity(self.chunk_len));
                out.push(self.cut(full));
            }
        }
        out
    }

    /// Zero-pad and emit the buffered remainder. Only for session end.
    pub fn flush(&mut self) -> Option<FlushedChunk> {
        if self.buf.is_empty() {
            return None;
        }
        let padding = self.chunk_len - self.buf.len();
        let mut samples = std::mem::take(&mut self.buf);
        samples.resize(self.chunk_len, 0);
        Some(FlushedChunk { chunk: self.cut(samples), padding })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> PipelineConfig {
        PipelineConfig::default()
    }

    #[test]
    fn identity_at_wire_rate() {
        let samples: Vec<i16> = (0..1600).map(|i| (i * 7 % 3000) as i16 - 1500).collect();
        let raw = RawAudio::mono(samples.clone(), 16_000).unwrap();
        let out = resample_to_wire(&raw, &cfg()).unwrap();
        assert_eq!(out.samples, samples);
        assert_eq!(out.sample_rate, 16_000);
        assert_eq!(out.channels, 1);
    }

    #[test]
    fn antiphase_stereo_cancels() {
        let half = i16::MAX / 2 + 1;
        let samples: Vec<i16> = (0..48_000).flat_map(|_| [half, -half]).collect();
        let raw = RawAudio::new(samples, 48_000, 2).unwrap();
        let out = resample_to_wire(&raw, &cfg()).unwrap();
        assert_eq!(out.samples.len(), 16_000);
        assert!(out.samples.iter().all(|&s| s == 0));
    }

    #[test]
    fn downmix_rounds_half_away_from_zero() {
        let raw = RawAudio::new(vec![1, 2, -1, -2, i16::MAX, i16::MAX, i16::MIN, i16::MIN], 8000, 2)
            .unwrap();
        assert_eq!(raw.downmix().unwrap(), vec![2, -2, i16::MAX, i16::MIN]);
    }

    #[test]
    fn more_than_two_channels_rejected() {
        let raw = RawAudio::new(vec![0; 6], 16_000, 3).unwrap();
        let err = resample_to_wire(&raw, &cfg()).unwrap_err();
        assert!(matches!(err, MediaError::UnsupportedChannels(3)));
        assert!(err.to_string().contains("channel"));
    }

    #[test]
    fn ragged_interleaving_rejected() {
        assert!(RawAudio::new(vec![0; 5], 16_000, 2).is_err());
        assert!(RawAudio::new(vec![0; 4], 0, 1).is_err());
    }

    #[test]
    fn chunking_one_second() {
        let mut c = AudioChunker::new(&cfg());
        let chunks = c.push(&vec![1i16; 16_000]);
        assert_eq!(chunks.len(), 10);
        assert!(chunks.iter().all(|ch| ch.samples.len() == 1600));
        assert_eq!(chunks.iter().map(|ch| ch.seq).collect::<Vec<_>>(), (0..10).collect::<Vec<_>>());
        assert_eq!(chunks[3].capture_ts, 300);
        assert_eq!(c.buffered(), 0);
    }

    #[test]
    fn chunking_empty_input() {
        let mut c = AudioChunker::new(&cfg());
        c.push(&[5; 10]);
        assert!(c.push(&[]).is_empty());
        assert_eq!(c.buffered(), 10);
    }

    #[test]
    fn chunking_carries_remainder() {
        // Cumulative-count simulation: 4000 -> floor(4000/1600)=2 chunks, 800 left;
        // 800 + 800 = 1600 -> one more chunk, 0 left.
        let mut c = AudioChunker::new(&cfg());
        assert_eq!(c.push(&vec![0; 4000]).len(), 2);
        assert_eq!(c.buffered(), 800);
        let third = c.push(&vec![0; 800]);
        assert_eq!(third.len(), 1);
        assert_eq!(third[0].seq, 2);
        assert_eq!(c.buffered(), 0);
    }

    #[test]
    fn flush_pads_and_records_padding() {
        let mut c = AudioChunker::new(&cfg());
        c.push(&vec![9; 1700]);
        let f = c.flush().unwrap();
        assert_eq!(f.padding, 1500);
        assert_eq!(f.chunk.samples.len(), 1600);
        assert_eq!(&f.chunk.samples[..100], &[9; 100][..]);
        assert!(f.chunk.samples[100..].iter().all(|&s| s == 0));
        assert!(c.flush().is_none());
    }

    #[test]
    fn chunk_bytes_are_little_endian() {
        let ch = AudioChunk { samples: vec![0x0102, -1], seq: 0, capture_ts: 0 };
        assert_eq!(ch.to_le_bytes(), vec![0x02, 0x01, 0xff, 0xff]);
    }

    proptest! {
        #[test]
        fn chunk_conservation(pushes in proptest::collection::vec(0usize..5000, 0..12)) {
            let mut c = AudioChunker::new(&cfg());
            let mut total = 0usize;
            let mut emitted = 0usize;
            let mut last_seq = None;
            for n in pushes {
                total += n;
                for ch in c.push(&vec![1; n]) {
                    prop_assert_eq!(ch.samples.len(), 1600);
                    if let Some(prev) = last_seq { prop_assert!(ch.seq > prev); }
                    last_seq = Some(ch.seq);
                    emitted += 1;
                }
            }
            prop_assert!(c.buffered() < 1600);
            prop_assert_eq!(total, 1600 * emitted + c.buffered());
        }

        #[test]
        fn resampler_duration_preserved(len in 0usize..20_000, in_rate in prop::sample::select(vec![8_000u32, 11_025, 16_000, 22_050, 44_100, 48_000])) {
            let raw = RawAudio::mono(vec![100; len], in_rate).unwrap();
            let out = resample_to_wire(&raw, &cfg()).unwrap();
            let diff = (out.samples.len() as f64 / 16_000.0 - len as f64 / f64::from(in_rate)).abs();
            prop_assert!(diff <= 1.0 / 16_000.0 + 1e-12);
        }

        #[test]
        fn streaming_matches_batch(
            samples in proptest::collection::vec(any::<i16>(), 0..3000),
            cuts in proptest::collection::vec(0usize..3000, 0..6),
            in_rate in prop::sample::select(vec![8_000u32, 24_000, 44_100, 48_000]),
        ) {
            let batch = resample_to_wire(&RawAudio::mono(samples.clone(), in_rate).unwrap(), &cfg()).unwrap();
            let mut r = Resampler::new(in_rate, 16_000).unwrap();
            let mut cuts: Vec<usize> = cuts.into_iter().map(|c| c.min(samples.len())).collect();
            cuts.sort_unstable();
            let mut out = Vec::new();
            let mut start = 0;
            for c in cuts {
                out.extend(r.push(&samples[start..c]));
                start = c;
            }
            out.extend(r.push(&samples[start..]));
            out.extend(r.finish());
            prop_assert_eq!(out, batch.samples);
        }
    }
}
