use std::collections::VecDeque;

use super::message::AudioPayload;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduledChunk {
    pub index: usize,
    pub start_us: u64,
    pub duration_us: u64,
}

impl ScheduledChunk {
    pub fn end_us(&self) -> u64 {
        self.start_us + self.duration_us
    }
}

/// Lay chunks end to end in arrival order.
pub fn playback_schedule(chunks: &[AudioPayload]) -> Vec<ScheduledChunk> {
    let mut t = 0;
    chunks
        .iter()
        .enumerate()
        .map(|(index, c)| {
            let s = ScheduledChunk { index, start_us: t, duration_us: c.duration_us() };
            t += s.duration_us;
            s
        })
        .collect()
}

/// Sequential playback buffer with barge-in cancellation.
#[derive(Debug, Default)]
pub struct PlaybackQueue {
    pending: VecDeque<AudioPayload>,
    playing: bool,
    played: usize,
    dropped: usize,
    barge_in_rms: f64,
}

impl PlaybackQueue {
    /// `barge_in_rms` is the RMS level of user audio that counts as speech.
    pub fn new(barge_in_rms: f64) -> Self {
        Self { barge_in_rms, ..Default::default() }
    }

    pub fn enqueue(&mut self, chunk: AudioPayload) {
        self.pending.push_back(chunk);
    }

    /// Next chunk to hand to the audio sink.
    pub fn pop_chunk(&mut self) -> Option<AudioPayload> {
        let c = self.pending.pop_front();
        self.playing = c.is_some();
        if c.is_some() {
            self.played += 1;
        }
        c
    }

    /// Drop everything not yet started. Returns the number dropped.
    pub fn cancel(&mut self) -> usize {
        let n = self.pending.len();
        self.dropped += n;
        self.pending.clear();
        self.playing = false;
        n
    }

    pub fn drain(&mut self) -> Vec<AudioPayload> {
        self.playing = false;
        let out: Vec<_> = self.pending.drain(..).collect();
        self.played += out.len();
        out
    }

    /// Feed outbound user audio; cancels playback if it is loud enough while
    /// something is playing.
    pub fn on_user_audio(&mut self, rms: f64) -> usize {
        if self.playing && rms >= self.barge_in_rms {
            self.cancel()
        } else {
            0
        }
    }

    pub fn is_playing(&self) -> bool {
        self.playing
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn played(&self) -> usize {
        self.played
    }

    pub fn dropped(&self) -> usize {
        self.dropped
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chunk_ms(ms: usize, tag: i16) -> AudioPayload {
        AudioPayload::from_samples(&vec![tag; ms * 24], 24_000)
    }

    #[test]
    fn three_chunks_total_720ms() {
        let chunks: Vec<_> = (0..3).map(|i| chunk_ms(240, i)).collect();
        let s = playback_schedule(&chunks);
        assert_eq!(s.last().unwrap().end_us(), 720_000);
        assert!(s.windows(2).all(|w| w[0].end_us() == w[1].start_us && w[0].index < w[1].index));
    }

    #[test]
    fn barge_in_after_first_chunk() {
        let mut q = PlaybackQueue::new(500.0);
        for i in 0..3 {
            q.enqueue(chunk_ms(240, i));
        }
        let first = q.pop_chunk().unwrap();
        assert_eq!(first.samples()[0], 0);
        assert_eq!(q.on_user_audio(100.0), 0);
        assert_eq!(q.on_user_audio(2000.0), 2);
        assert!(q.pop_chunk().is_none());

        // Queue simulation oracle.
        let mut model: Vec<i16> = vec![0, 1, 2];
        model.remove(0);
        model.clear();
        assert_eq!(q.len(), model.len());
        assert_eq!((q.played(), q.dropped()), (1, 2));
    }

    #[test]
    fn silence_does_not_barge_in_and_idle_queue_ignores_speech() {
        let mut q = PlaybackQueue::new(500.0);
        q.enqueue(chunk_ms(10, 1));
        assert_eq!(q.on_user_audio(9000.0), 0);
        assert_eq!(q.len(), 1);
    }

    #[test]
    fn empty_drain_is_noop() {
        let mut q = PlaybackQueue::new(500.0);
        assert!(q.drain().is_empty());
        assert!(q.pop_chunk().is_none());
        assert_eq!(q.cancel(), 0);
    }
}
