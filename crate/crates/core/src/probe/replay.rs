//! Plays back previously recorded RTTs.
//!
//! Fixture format is CSV `landmark_id,rtt_ms`. A landmark may appear several
//! times; successive queries cycle through its rows in file order. The
//! reserved ids `@loopback` and `@proxy` feed the in-cloud readings.

use std::collections::HashMap;
use std::io::Read;
use std::net::Ipv4Addr;
use std::path::Path;
use std::sync::Mutex;

use serde::Deserialize;

use super::{DelaySample, InCloudReading, ProbeBackend};
use crate::catalog::Landmark;
use crate::error::{CatalogError, ProbeError};

const LOOPBACK_ID: &str = "@loopback";
const PROXY_ID: &str = "@proxy";

#[derive(Debug, Deserialize)]
struct Row {
    landmark_id: String,
    rtt_ms: f64,
}

pub struct ReplayBackend {
    samples: HashMap<String, Vec<f64>>,
    cursors: Mutex<HashMap<String, usize>>,
}

impl ReplayBackend {
    pub fn from_reader<R: Read>(input: R) -> Result<Self, CatalogError> {
        let mut samples: HashMap<String, Vec<f64>> = HashMap::new();
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        for row in reader.deserialize::<Row>() {
            let row = row?;
            if row.rtt_ms.is_finite() && row.rtt_ms > 0.0 {
                samples.entry(row.landmark_id).or_default().push(row.rtt_ms);
            } else {
                log::warn!("replay: ignoring non-positive rtt for {}", row.landmark_id);
            }
        }
        Ok(ReplayBackend {
            samples,
            cursors: Mutex::new(HashMap::new()),
        })
    }

    pub fn from_path(path: &Path) -> Result<Self, CatalogError> {
        let f = std::fs::File::open(path).map_err(|source| CatalogError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_reader(f)
    }

    fn next(&self, id: &str) -> Option<f64> {
        let list = self.samples.get(id)?;
        let mut cursors = self.cursors.lock().expect("cursor lock poisoned");
        let cursor = cursors.entry(id.to_string()).or_insert(0);
        let v = list[*cursor % list.len()];
        *cursor += 1;
        Some(v)
    }
}

impl ProbeBackend for ReplayBackend {
    fn name(&self) -> &'static str {
        "replay"
    }

    fn measure(&self, target: &Landmark, query_index: u64) -> Result<DelaySample, ProbeError> {
        let rtt_ms = self
            .next(&target.id)
            .ok_or_else(|| ProbeError::UnknownTarget(target.id.clone()))?;
        Ok(DelaySample {
            landmark_id: target.id.clone(),
            rtt_ms,
            attempts: 1,
            timestamp_ms: query_index as f64,
        })
    }

    fn measure_in_cloud(&self, proxy: Option<Ipv4Addr>, _query_index: u64) -> Result<InCloudReading, ProbeError> {
        let loopback_rtt_ms = self.next(LOOPBACK_ID).unwrap_or(0.0);
        let (proxy_rtt_ms, proxy_error) = match proxy {
            None => (None, None),
            Some(addr) => match self.next(PROXY_ID) {
                Some(v) => (Some(v), None),
                None => (None, Some(format!("no recorded reply from proxy {addr}"))),
            },
        };
        Ok(InCloudReading {
            loopback_rtt_ms,
            proxy_rtt_ms,
            proxy_error,
        })
    }
}
