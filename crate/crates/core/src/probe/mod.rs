//! RTT measurement from the audited machine to landmarks.
//!
//! Three interchangeable backends implement [`ProbeBackend`]: live ICMP echo
//! ([`icmp::IcmpBackend`]), recorded fixtures ([`replay::ReplayBackend`]) and a
//! seeded network model ([`sim::SimBackend`]).
//!
//! Every measurement carries a `query_index` assigned by the caller. The
//! simulator derives its jitter from it, which makes a whole audit a pure
//! function of its inputs even when measurements fan out across threads.

pub mod icmp;
pub mod replay;
pub mod sim;

use std::net::Ipv4Addr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::Landmark;
use crate::error::ProbeError;

/// Smallest RTT any backend reports, in milliseconds.
pub const RTT_FLOOR_MS: f64 = 0.01;

/// Echo requests per measurement.
pub const PINGS_PER_MEASUREMENT: u32 = 3;

/// ICMP payload size in bytes.
pub const PING_PAYLOAD_BYTES: usize = 64;

/// One RTT observation towards a landmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelaySample {
    pub landmark_id: String,
    pub rtt_ms: f64,
    /// Echo requests sent to obtain `rtt_ms`.
    pub attempts: u32,
    /// Backend clock reading when the measurement started, in milliseconds.
    pub timestamp_ms: f64,
}

/// RTTs that stay inside the provider: to our own loopback and to the public
/// address (or proxy) the provider exposes for us.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InCloudReading {
    pub loopback_rtt_ms: f64,
    pub proxy_rtt_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proxy_error: Option<String>,
}

pub trait ProbeBackend: Send + Sync {
    fn name(&self) -> &'static str;

    /// Measures the RTT to `target`. `query_index` identifies the query
    /// within an audit; backends that replay or simulate key off it.
    fn measure(&self, target: &Landmark, query_index: u64) -> Result<DelaySample, ProbeError>;

    /// Loopback RTT plus, when `proxy` is given, the RTT to that address. An
    /// unreachable proxy is reported in `proxy_error`, not as an `Err`.
    fn measure_in_cloud(&self, proxy: Option<Ipv4Addr>, query_index: u64) -> Result<InCloudReading, ProbeError>;
}

/// Measures every target, possibly in parallel. Query indices are handed out
/// in ascending id order starting at `first_query`, and results come back in
/// that same order regardless of scheduling.
pub fn measure_all(
    backend: &dyn ProbeBackend,
    targets: &[Landmark],
    first_query: u64,
) -> Vec<(String, Result<DelaySample, ProbeError>)> {
    let mut sorted: Vec<&Landmark> = targets.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    sorted.dedup_by(|a, b| a.id == b.id);
    sorted
        .par_iter()
        .enumerate()
        .map(|(i, lm)| (lm.id.clone(), backend.measure(lm, first_query + i as u64)))
        .collect()
}

/// Minimum of the successful replies, floored at [`RTT_FLOOR_MS`].
pub(crate) fn aggregate_replies(replies: &[f64]) -> Option<f64> {
    replies
        .iter()
        .copied()
        .filter(|r| r.is_finite() && *r >= 0.0)
        .min_by(f64::total_cmp)
        .map(|r| r.max(RTT_FLOOR_MS))
}
