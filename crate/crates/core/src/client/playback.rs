use serde::{Deserialize, Serialize};

use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlayerState {
    Startup,
    Playing,
    Stalled,
    Ended,
    Abandoned,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum PlayerEvent {
    Started { at: SimTime },
    RebufferBegin { at: SimTime, position: f64 },
    RebufferEnd { at: SimTime, stalled: f64 },
    Ended { at: SimTime },
    Abandoned { at: SimTime, position: f64 },
}

/// Playback of one video against a growing prefix of downloaded media.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaybackState {
    pub state: PlayerState,
    pub duration: f64,
    /// Seconds of media played.
    pub position: f64,
    /// Seconds of contiguous media downloaded from the start.
    pub available: f64,
    pub requested_at: SimTime,
    pub started_at: Option<SimTime>,
    pub rebuffer_events: u32,
    pub rebuffer_time: f64,
    /// Longest single stall, seconds.
    pub longest_stall: f64,
    /// Play position at which the viewer leaves, if before the end.
    pub watch_target: Option<f64>,
    startup_buffer: f64,
    resume_buffer: f64,
    last_update: SimTime,
    stall_since: Option<SimTime>,
}

impl PlaybackState {
    pub fn new(duration: f64, requested_at: SimTime, startup_buffer: f64, resume_buffer: f64, watch_target: Option<f64>) -> Self {
        Self {
            state: PlayerState::Startup,
            duration,
            position: 0.0,
            available: 0.0,
            requested_at,
            started_at: None,
            rebuffer_events: 0,
            rebuffer_time: 0.0,
            longest_stall: 0.0,
            watch_target: watch_target.filter(|&w| w < duration),
            startup_buffer,
            resume_buffer,
            last_update: requested_at,
            stall_since: None,
        }
    }

    pub fn buffer_level(&self) -> f64 {
        (self.available - self.position).max(0.0)
    }

    pub fn is_finished(&self) -> bool {
        matches!(self.state, PlayerState::Ended | PlayerState::Abandoned)
    }

    pub fn startup_latency(&self) -> Option<f64> {
        self.started_at.map(|s| s.since(self.requested_at).as_secs_f64())
    }

    fn end_point(&self) -> f64 {
        self.watch_target.unwrap_or(self.duration)
    }

    /// Plays forward to `now` with the media available so far.
    pub fn advance(&mut self, now: SimTime, out: &mut Vec<PlayerEvent>) {
        if now < self.last_update {
            return;
        }
        if self.state == PlayerState::Playing {
            let elapsed = now.since(self.last_update).as_secs_f64();
            let end = self.end_point();
            let room = self.available.min(end) - self.position;
            if elapsed < room {
                self.position += elapsed;
            } else {
                let at = self.last_update + crate::time::SimDuration::from_secs_f64(room.max(0.0));
                self.position = self.available.min(end);
                if self.position >= end - 1e-9 {
                    self.position = end;
                    self.finish(at, out);
                } else {
                    self.state = PlayerState::Stalled;
                    self.stall_since = Some(at);
                    self.rebuffer_events += 1;
                    out.push(PlayerEvent::RebufferBegin { at, position: self.position });
                }
            }
        }
        self.last_update = now;
        self.try_start(now, out);
    }

    fn finish(&mut self, at: SimTime, out: &mut Vec<PlayerEvent>) {
        if self.watch_target.is_some_and(|w| self.position >= w - 1e-9) && self.position < self.duration {
            self.state = PlayerState::Abandoned;
            out.push(PlayerEvent::Abandoned { at, position: self.position });
        } else {
            self.state = PlayerState::Ended;
            out.push(PlayerEvent::Ended { at });
        }
    }

    fn try_start(&mut self, now: SimTime, out: &mut Vec<PlayerEvent>) {
        let left = self.duration - self.position;
        match self.state {
            PlayerState::Startup if self.available >= self.startup_buffer.min(self.duration) => {
                self.state = PlayerState::Playing;
                self.started_at = Some(now);
                out.push(PlayerEvent::Started { at: now });
            }
            PlayerState::Stalled if self.buffer_level() >= self.resume_buffer.min(left) - 1e-9 => {
                let since = self.stall_since.take().unwrap_or(now);
                let stalled = now.since(since).as_secs_f64();
                self.rebuffer_time += stalled;
                self.longest_stall = self.longest_stall.max(stalled);
                self.state = PlayerState::Playing;
                out.push(PlayerEvent::RebufferEnd { at: now, stalled });
            }
            _ => {}
        }
    }

    /// New contiguous media arrived at `now`. Playback is brought up to
    /// `now` first so earlier stalls are not hidden by the new data.
    pub fn add_media(&mut self, now: SimTime, available: f64, out: &mut Vec<PlayerEvent>) {
        self.advance(now, out);
        self.available = self.available.max(available.min(self.duration));
        self.try_start(now, out);
    }

    /// The viewer leaves at `now` regardless of position.
    pub fn stop(&mut self, now: SimTime, out: &mut Vec<PlayerEvent>) {
        self.advance(now, out);
        if !self.is_finished() {
            if let Some(since) = self.stall_since.take() {
                let stalled = now.since(since).as_secs_f64();
                self.rebuffer_time += stalled;
                self.longest_stall = self.longest_stall.max(stalled);
            }
            self.state = PlayerState::Abandoned;
            out.push(PlayerEvent::Abandoned { at: now, position: self.position });
        }
    }

    /// Time at which playback would next change state with no new data.
    pub fn next_transition(&self) -> Option<SimTime> {
        (self.state == PlayerState::Playing).then(|| {
            let room = self.available.min(self.end_point()) - self.position;
            self.last_update + crate::time::SimDuration::from_secs_f64(room.max(0.0))
        })
    }
}

/// Index of the next segment to download under prefetch depth one: the
/// segment after the last downloaded one, provided it is no further than
/// one past the segment being played.
pub fn next_download(playing_segment: u32, downloaded: u32, segment_count: u32) -> Option<u32> {
    (downloaded < segment_count && downloaded <= playing_segment + 1).then_some(downloaded)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: f64) -> SimTime {
        SimTime::from_secs_f64(s)
    }

    #[test]
    fn prefetch_depth_is_one() {
        assert_eq!(next_download(3, 4, 10), Some(4));
        assert_eq!(next_download(3, 5, 10), None);
        assert_eq!(next_download(0, 0, 10), Some(0));
        assert_eq!(next_download(9, 10, 10), None);
    }

    #[test]
    fn stall_and_resume_are_timed_exactly() {
        let mut p = PlaybackState::new(30.0, t(0.0), 1.0, 1.0, None);
        let mut ev = Vec::new();
        p.add_media(t(0.5), 2.0, &mut ev);
        assert_eq!(p.startup_latency(), Some(0.5));
        p.add_media(t(4.0), 5.0, &mut ev);
        assert_eq!(p.state, PlayerState::Playing);
        assert_eq!(p.rebuffer_events, 1);
        assert!((p.rebuffer_time - 1.5).abs() < 1e-6);
        assert!(matches!(ev[1], PlayerEvent::RebufferBegin { at, .. } if at == t(2.5)));
    }

    #[test]
    fn abandonment_stops_at_the_watch_target() {
        let mut p = PlaybackState::new(30.0, t(0.0), 1.0, 1.0, Some(12.0));
        let mut ev = Vec::new();
        p.add_media(t(0.0), 20.0, &mut ev);
        p.advance(t(15.0), &mut ev);
        assert_eq!(p.state, PlayerState::Abandoned);
        assert_eq!(p.position, 12.0);
        assert!(matches!(ev.last(), Some(PlayerEvent::Abandoned { at, .. }) if *at == t(12.0)));
    }

    #[test]
    fn plays_to_the_end() {
        let mut p = PlaybackState::new(10.0, t(0.0), 1.0, 1.0, None);
        let mut ev = Vec::new();
        p.add_media(t(0.0), 10.0, &mut ev);
        assert_eq!(p.next_transition(), Some(t(10.0)));
        p.advance(t(11.0), &mut ev);
        assert_eq!(p.state, PlayerState::Ended);
        assert_eq!(p.rebuffer_events, 0);
    }
}
