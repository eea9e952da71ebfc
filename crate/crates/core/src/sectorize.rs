//! Finding the landmarks whose delay behaviour resembles the VM's.
//!
//! For every audit landmark `a` the VM measured a delay `δ`. Any landmark `L`
//! whose mesh RTT to `a` lies within `δ ± p%` behaves, as seen from `a`, like
//! the VM. Counting these hits over all audit landmarks and keeping the most
//! frequent ones yields the similar set used for estimation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, Landmark, MeshMatrix};

/// Closed RTT interval `[lo, hi]` in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayInterval {
    pub lo: f64,
    pub hi: f64,
}

impl DelayInterval {
    /// `measured ± percent%`, with the lower bound clamped at 0.
    pub fn around(measured_ms: f64, percent: f64) -> Self {
        let f = percent / 100.0;
        DelayInterval {
            lo: (measured_ms * (1.0 - f)).max(0.0),
            hi: measured_ms * (1.0 + f),
        }
    }

    pub fn contains(&self, rtt_ms: f64) -> bool {
        self.lo <= rtt_ms && rtt_ms <= self.hi
    }
}

/// Landmarks other than `audit_id` whose mesh RTT to it falls inside the
/// interval. The `(audit → other)` entry is preferred, the reverse one is used
/// when it is missing.
pub fn similar_for_one(mesh: &MeshMatrix, audit_id: &str, measured_delay_ms: f64, interval_percent: f64) -> BTreeSet<String> {
    let window = DelayInterval::around(measured_delay_ms, interval_percent);
    mesh.nodes()
        .filter(|id| *id != audit_id)
        .filter(|id| mesh.rtt_between(audit_id, id).is_some_and(|rtt| window.contains(rtt)))
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTally {
    pub occurrences: BTreeMap<String, usize>,
    /// Audit landmarks whose interval matched at least one landmark.
    pub contributing_audits: usize,
    /// Audit landmarks considered, matched or not.
    pub audits: usize,
}

impl SimilarityTally {
    pub fn add(&mut self, similar: &BTreeSet<String>) {
        self.audits += 1;
        if similar.is_empty() {
            return;
        }
        self.contributing_audits += 1;
        for id in similar {
            *self.occurrences.entry(id.clone()).or_insert(0) += 1;
        }
    }

    pub fn merge(&mut self, other: &SimilarityTally) {
        self.audits += other.audits;
        self.contributing_audits += other.contributing_audits;
        for (id, n) in &other.occurrences {
            *self.occurrences.entry(id.clone()).or_insert(0) += n;
        }
    }

    pub fn is_empty(&self) -> bool {
        self.occurrences.is_empty()
    }

    pub fn max_count(&self) -> usize {
        self.occurrences.values().copied().max().unwrap_or(0)
    }
}

/// Tallies similar landmarks over every `(audit landmark id, measured delay)`.
pub fn tally(mesh: &MeshMatrix, measurements: &[(String, f64)], interval_percent: f64) -> SimilarityTally {
    let mut t = SimilarityTally::default();
    for (id, delay) in measurements {
        t.add(&similar_for_one(mesh, id, *delay, interval_percent));
    }
    t
}

/// Ids reaching the highest occurrence count, ascending. Empty iff the tally is.
pub fn select_lms_ids(tally: &SimilarityTally) -> Vec<String> {
    let best = tally.max_count();
    tally
        .occurrences
        .iter()
        .filter(|(_, n)| **n == best && best > 0)
        .map(|(id, _)| id.clone())
        .collect()
}

/// The similar set as landmarks from `catalog`, ordered by id. Ids unknown to
/// the catalog are skipped.
pub fn select_lms(tally: &SimilarityTally, catalog: &Catalog) -> Vec<Landmark> {
    select_lms_ids(tally)
        .iter()
        .filter_map(|id| catalog.get(id).cloned())
        .collect()
}
