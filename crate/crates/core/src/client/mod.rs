//! Client library pieces: the CDN/PCDN switching state machine, playback
//! and rebuffer accounting under prefetch depth one, peer filtering and
//! connection reuse, and the event log schema.

mod connections;
mod events;
mod playback;
mod switching;

pub use connections::{
    acquire_connections, filter_peers, Acquired, ConnectionPool, FilterLimits, PeerConnection, PunchResult, Puncher, TrackerClient,
};
pub use events::{ClientEvent, EventKind};
pub use playback::{next_download, PlaybackState, PlayerEvent, PlayerState};
pub use switching::{
    entry_blocker, evaluate_entry, evaluate_fallback, fallback_cause, EntryCheck, FallbackCause, RateWindow, SessionFacts, SwitchMode,
    SwitchState, SwitchThresholds,
};
