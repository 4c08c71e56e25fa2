use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::{SimDuration, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchMode {
    CdnStartup,
    Pcdn,
    CdnFallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwitchThresholds {
    /// Segments that must remain to be worth switching to PCDN.
    pub min_remaining_segments: u32,
    /// Access bandwidth needed, as a multiple of the video bitrate.
    pub min_bandwidth_factor: f64,
    pub connect_timeout: SimDuration,
    /// Buffer (seconds) required to enter PCDN.
    pub min_buffer_enter: f64,
    /// Buffer (seconds) below which PCDN is abandoned.
    pub min_buffer_stay: f64,
    /// In-order delivery rate below this multiple of the bitrate, measured
    /// over a full window of active download, triggers fallback.
    pub min_rate_factor: f64,
    pub rate_window: SimDuration,
    pub eval_tick: SimDuration,
}

impl Default for SwitchThresholds {
    fn default() -> Self {
        Self {
            min_remaining_segments: 2,
            min_bandwidth_factor: 1.0,
            connect_timeout: SimDuration::from_secs(3),
            min_buffer_enter: 2.0,
            min_buffer_stay: 1.0,
            min_rate_factor: 0.8,
            rate_window: SimDuration::from_secs(2),
            eval_tick: SimDuration::from_millis(100),
        }
    }
}

impl SwitchThresholds {
    pub fn validate(&self) -> Result<()> {
        if self.min_buffer_stay < 0.0 || self.min_buffer_enter < self.min_buffer_stay {
            return Err(Error::invalid("thresholds.min_buffer_enter", "must be at least min_buffer_stay, both non-negative"));
        }
        if self.eval_tick.as_micros() == 0 || self.rate_window < self.eval_tick {
            return Err(Error::invalid("thresholds.eval_tick", "must be positive and no longer than rate_window"));
        }
        if !(self.min_rate_factor >= 0.0) || !(self.min_bandwidth_factor >= 0.0) {
            return Err(Error::invalid("thresholds.min_rate_factor", "factors must be non-negative"));
        }
        Ok(())
    }
}

/// What the client knows when deciding whether to use PCDN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionFacts {
    pub pcdn_error: bool,
    pub remaining_bytes: u64,
    /// Bytes of `min_remaining_segments` segments of this video.
    pub min_remaining_bytes: u64,
    pub user_bandwidth_bps: f64,
    pub bitrate_bps: f64,
    /// When PCDN connections became usable, if they have.
    pub connected_at: Option<SimTime>,
    pub connect_deadline: SimTime,
    pub buffer_level: f64,
    /// In-order PCDN delivery rate over the last full window, bits/s.
    pub download_rate_bps: Option<f64>,
}

/// The entry check that blocked switching to PCDN.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryCheck {
    PcdnError,
    TooLittleData,
    UserBandwidth,
    NotConnected,
    LowBuffer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackCause {
    LowBuffer,
    LowRate,
    PcdnError,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchState {
    pub mode: SwitchMode,
    pub thresholds: SwitchThresholds,
    pub jumps_to_cdn: u32,
}

impl SwitchState {
    pub fn new(thresholds: SwitchThresholds) -> Self {
        Self { mode: SwitchMode::CdnStartup, thresholds, jumps_to_cdn: 0 }
    }
}

/// The five entry questions in order. `None` means PCDN may be entered.
pub fn entry_blocker(state: &SwitchState, facts: &SessionFacts, now: SimTime) -> Option<EntryCheck> {
    let t = &state.thresholds;
    if facts.pcdn_error {
        return Some(EntryCheck::PcdnError);
    }
    if facts.remaining_bytes < facts.min_remaining_bytes {
        return Some(EntryCheck::TooLittleData);
    }
    if facts.user_bandwidth_bps < t.min_bandwidth_factor * facts.bitrate_bps {
        return Some(EntryCheck::UserBandwidth);
    }
    match facts.connected_at {
        Some(at) if at <= facts.connect_deadline && at <= now => {}
        _ => return Some(EntryCheck::NotConnected),
    }
    if facts.buffer_level < t.min_buffer_enter {
        return Some(EntryCheck::LowBuffer);
    }
    None
}

/// Whether to start downloading the next segment from PCDN. Switches the
/// state to PCDN when it does.
pub fn evaluate_entry(state: &mut SwitchState, facts: &SessionFacts, now: SimTime) -> bool {
    if state.mode != SwitchMode::CdnStartup {
        return false;
    }
    let enter = entry_blocker(state, facts, now).is_none();
    if enter {
        state.mode = SwitchMode::Pcdn;
    }
    enter
}

/// Why PCDN should be abandoned right now, if it should.
pub fn fallback_cause(state: &SwitchState, facts: &SessionFacts) -> Option<FallbackCause> {
    let t = &state.thresholds;
    if facts.pcdn_error {
        Some(FallbackCause::PcdnError)
    } else if facts.buffer_level < t.min_buffer_stay {
        Some(FallbackCause::LowBuffer)
    } else if facts.download_rate_bps.is_some_and(|r| r < t.min_rate_factor * facts.bitrate_bps) {
        Some(FallbackCause::LowRate)
    } else {
        None
    }
}

/// Checks a PCDN session. On fallback the mode becomes CDN for the rest of
/// the video and the jump is counted.
pub fn evaluate_fallback(state: &mut SwitchState, facts: &SessionFacts) -> Option<FallbackCause> {
    if state.mode != SwitchMode::Pcdn {
        return None;
    }
    let cause = fallback_cause(state, facts)?;
    state.mode = SwitchMode::CdnFallback;
    state.jumps_to_cdn += 1;
    Some(cause)
}

/// Delivered bytes over the most recent ticks of active download.
#[derive(Debug, Clone, Default)]
pub struct RateWindow {
    samples: std::collections::VecDeque<(SimDuration, u64)>,
    span: SimDuration,
    bytes: u64,
}

impl RateWindow {
    /// Adds one tick. Idle ticks (no download in progress) are skipped by
    /// the caller so that waiting for a prefetch slot never reads as slow.
    pub fn push(&mut self, dt: SimDuration, bytes: u64, window: SimDuration) {
        self.samples.push_back((dt, bytes));
        self.span += dt;
        self.bytes += bytes;
        while let Some(&(d, b)) = self.samples.front() {
            if self.span - d >= window {
                self.samples.pop_front();
                self.span = self.span - d;
                self.bytes -= b;
            } else {
                break;
            }
        }
    }

    /// Rate in bits/s once a full window has been observed.
    pub fn rate_bps(&self, window: SimDuration) -> Option<f64> {
        (self.span >= window && self.span.as_micros() > 0).then(|| self.bytes as f64 * 8.0 / self.span.as_secs_f64())
    }

    pub fn clear(&mut self) {
        *self = Self::default();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn healthy() -> SessionFacts {
        SessionFacts {
            pcdn_error: false,
            remaining_bytes: 10_000_000,
            min_remaining_bytes: 2_500_000,
            user_bandwidth_bps: 50e6,
            bitrate_bps: 1e6,
            connected_at: Some(SimTime::from_secs_f64(0.4)),
            connect_deadline: SimTime::from_secs_f64(3.0),
            buffer_level: 8.0,
            download_rate_bps: Some(5e6),
        }
    }

    const NOW: SimTime = SimTime(1_000_000);

    #[test]
    fn all_checks_pass_enters_pcdn() {
        let mut s = SwitchState::new(SwitchThresholds::default());
        assert!(evaluate_entry(&mut s, &healthy(), NOW));
        assert_eq!(s.mode, SwitchMode::Pcdn);
    }

    #[test]
    fn each_failed_check_keeps_cdn() {
        let s = SwitchState::new(SwitchThresholds::default());
        let cases: [(fn(&mut SessionFacts), EntryCheck); 5] = [
            (|f| f.pcdn_error = true, EntryCheck::PcdnError),
            (|f| f.remaining_bytes = 1_000_000, EntryCheck::TooLittleData),
            (|f| f.user_bandwidth_bps = 0.5e6, EntryCheck::UserBandwidth),
            (|f| f.connected_at = Some(SimTime::from_secs_f64(3.5)), EntryCheck::NotConnected),
            (|f| f.buffer_level = 1.5, EntryCheck::LowBuffer),
        ];
        for (tweak, expect) in cases {
            let mut f = healthy();
            tweak(&mut f);
            assert_eq!(entry_blocker(&s, &f, SimTime::from_secs_f64(4.0)), Some(expect));
        }
    }

    #[test]
    fn low_buffer_triggers_fallback_once() {
        let mut s = SwitchState::new(SwitchThresholds::default());
        s.mode = SwitchMode::Pcdn;
        let mut f = healthy();
        assert_eq!(evaluate_fallback(&mut s, &f), None);
        f.buffer_level = 0.8;
        assert_eq!(evaluate_fallback(&mut s, &f), Some(FallbackCause::LowBuffer));
        assert_eq!(s.mode, SwitchMode::CdnFallback);
        assert_eq!(s.jumps_to_cdn, 1);
        assert_eq!(evaluate_fallback(&mut s, &f), None);
    }

    #[test]
    fn rate_needs_a_full_window() {
        let w = SimDuration::from_secs(2);
        let mut r = RateWindow::default();
        for _ in 0..19 {
            r.push(SimDuration::from_millis(100), 1000, w);
        }
        assert_eq!(r.rate_bps(w), None);
        r.push(SimDuration::from_millis(100), 1000, w);
        assert!((r.rate_bps(w).unwrap() - 80_000.0).abs() < 1e-6);
        for _ in 0..20 {
            r.push(SimDuration::from_millis(100), 0, w);
        }
        assert_eq!(r.rate_bps(w), Some(0.0));
    }
}
