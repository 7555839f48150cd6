//! Tone voice: each character is a fixed-frequency sine held for 60 ms.
//!
//! The mock model speaks with it, and the same table doubles as the
//! "speech recognizer" for user audio, so utterance fixtures are tone renders
//! of their text.

use crate::protocol::OUTPUT_AUDIO_RATE;

pub const CHAR_MS: u32 = 60;
pub const MAX_CHARS: usize = 4096;
const AMPLITUDE: f64 = 8000.0;
const BASE_HZ: f64 = 300.0;
const STEP_HZ: f64 = 60.0;
/// Characters with their own tone. Letters are case-folded; anything else
/// sounds like `?`.
const CHARSET: &str = " abcdefghijklmnopqrstuvwxyz0123456789.,?!'-:/$";
/// RMS below this means the slot is silent.
const SILENCE_RMS: f64 = 1000.0;
/// First sample above this starts an utterance.
const ONSET: i32 = 2000;

fn tone_index(c: char) -> usize {
    let c = c.to_ascii_lowercase();
    CHARSET
        .chars()
        .position(|x| x == c)
        .unwrap_or_else(|| CHARSET.find('?').expect("charset has ?"))
}

fn tone_hz(index: usize) -> f64 {
    BASE_HZ + STEP_HZ * index as f64
}

pub fn samples_per_char(rate: u32) -> usize {
    (rate as usize * CHAR_MS as usize) / 1000
}

/// Render `text` at any sample rate. No truncation.
pub fn render_tones(text: &str, rate: u32) -> Vec<i16> {
    let n = samples_per_char(rate);
    let mut out = Vec::with_capacity(n * text.chars().count());
    for c in text.chars() {
        let w = 2.0 * std::f64::consts::PI * tone_hz(tone_index(c)) / rate as f64;
        out.extend((0..n).map(|i| (AMPLITUDE * (w * i as f64).sin()).round() as i16));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Speech {
    /// PCM16 little-endian at 24 kHz.
    pub pcm: Vec<u8>,
    /// Characters dropped past [`MAX_CHARS`].
    pub truncated: usize,
}

/// Synthesize at the output rate, truncating over-long text.
pub fn synthesize(text: &str) -> Speech {
    let total = text.chars().count();
    let kept: String = text.chars().take(MAX_CHARS).collect();
    let truncated = total.saturating_sub(MAX_CHARS);
    if truncated > 0 {
        tracing::warn!(chars = total, kept = MAX_CHARS, "speech text truncated");
    }
    let pcm = render_tones(&kept, OUTPUT_AUDIO_RATE).into_iter().flat_map(i16::to_le_bytes).collect();
    Speech { pcm, truncated }
}

fn goertzel_power(x: &[i16], hz: f64, rate: u32) -> f64 {
    let coeff = 2.0 * (2.0 * std::f64::consts::PI * hz / rate as f64).cos();
    let (mut s1, mut s2) = (0.0, 0.0);
    for &v in x {
        let s0 = v as f64 + coeff * s1 - s2;
        s2 = s1;
        s1 = s0;
    }
    s1 * s1 + s2 * s2 - coeff * s1 * s2
}

/// Streaming tone recognizer. An utterance ends at the first silent slot.
#[derive(Debug, Clone)]
pub struct ToneDecoder {
    rate: u32,
    buf: Vec<i16>,
    /// Start of the current utterance in `buf`.
    start: Option<usize>,
    text: String,
}

impl ToneDecoder {
    pub fn new(rate: u32) -> Self {
        Self { rate, buf: Vec::new(), start: None, text: String::new() }
    }

    /// True while an utterance is being heard.
    pub fn in_utterance(&self) -> bool {
        self.start.is_some()
    }

    pub fn push(&mut self, samples: &[i16]) -> Vec<String> {
        self.buf.extend_from_slice(samples);
        let slot = samples_per_char(self.rate);
        let edge = slot / 10;
        let mut done = Vec::new();
        loop {
            let Some(start) = self.start else {
                match self.buf.iter().position(|&s| i32::from(s).abs() > ONSET) {
                    Some(i) => {
                        self.buf.drain(..i);
                        self.start = Some(0);
                        continue;
                    }
                    None => {
                        self.buf.clear();
                        break;
                    }
                }
            };
            let k = self.text.chars().count();
            let from = start + k * slot;
            if from + slot > self.buf.len() {
                break;
            }
            let mid = &self.buf[from + edge..from + slot - edge];
            let rms = (mid.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / mid.len() as f64).sqrt();
            if rms < SILENCE_RMS {
                done.push(std::mem::take(&mut self.text).trim().to_string());
                self.buf.drain(..from + slot);
                self.start = None;
                continue;
            }
            let best = (0..CHARSET.chars().count())
                .max_by(|&a, &b| {
                    goertzel_power(mid, tone_hz(a), self.rate).total_cmp(&goertzel_power(mid, tone_hz(b), self.rate))
                })
                .expect("charset not empty");
            self.text.push(CHARSET.chars().nth(best).expect("index in charset"));
        }
        done.retain(|t| !t.is_empty());
        done
    }
}
