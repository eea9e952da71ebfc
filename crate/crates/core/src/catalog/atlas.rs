//! Minimal client for the RIPE Atlas REST API.
//!
//! Landmarks are anchors, identified by their probe id so that mesh results
//! (keyed by `prb_id`) map onto them directly. Mesh targets are resolved
//! through the result's `dst_addr`.

use std::collections::{BTreeMap, HashMap};
use std::net::Ipv4Addr;
use std::time::Duration;

use serde::Deserialize;

use super::{Catalog, Landmark, LoadStats, MeshMatrix, SourceKind};
use crate::error::CatalogError;
use crate::geodesy::GeoPoint;

pub const DEFAULT_ATLAS_URL: &str = "https://atlas.ripe.net";
pub const ATLAS_URL_ENV: &str = "GEOFINDR_ATLAS_URL";

/// Base URL from `GEOFINDR_ATLAS_URL`, or the public RIPE Atlas endpoint.
pub fn base_url_from_env() -> String {
    std::env::var(ATLAS_URL_ENV).unwrap_or_else(|_| DEFAULT_ATLAS_URL.to_string())
}

#[derive(Debug, Deserialize)]
struct Page<T> {
    next: Option<String>,
    results: Vec<T>,
}

#[derive(Debug, Deserialize)]
struct Anchor {
    probe: Option<u64>,
    ip_v4: Option<String>,
    geometry: Option<Geometry>,
    #[serde(default)]
    is_disabled: bool,
}

#[derive(Debug, Deserialize)]
struct Geometry {
    coordinates: Vec<f64>,
}

#[derive(Debug, Deserialize)]
struct AnchorMeasurement {
    measurement: String,
    #[serde(rename = "type", default)]
    kind: Option<String>,
    #[serde(default)]
    is_mesh: Option<bool>,
}

#[derive(Debug, Deserialize)]
struct PingResult {
    af: Option<u8>,
    prb_id: u64,
    dst_addr: Option<String>,
    min: Option<f64>,
    #[serde(default)]
    result: Vec<serde_json::Value>,
}

impl PingResult {
    /// Smallest successful RTT in the result set.
    fn min_rtt(&self) -> Option<f64> {
        let from_replies = self
            .result
            .iter()
            .filter_map(|r| r.get("rtt").and_then(serde_json::Value::as_f64))
            .filter(|r| *r > 0.0)
            .min_by(f64::total_cmp);
        from_replies.or(self.min.filter(|m| *m > 0.0))
    }
}

pub struct AtlasClient {
    base_url: String,
    agent: ureq::Agent,
    page_size: usize,
    max_measurements: Option<usize>,
}

impl AtlasClient {
    pub fn new(base_url: impl Into<String>) -> Self {
        AtlasClient {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(30)).build(),
            page_size: 500,
            max_measurements: None,
        }
    }

    /// Caps the number of mesh measurements fetched (useful for quick snapshots).
    pub fn with_max_measurements(mut self, limit: Option<usize>) -> Self {
        self.max_measurements = limit;
        self
    }

    fn get_json<T: for<'de> Deserialize<'de>>(&self, url: &str) -> Result<T, CatalogError> {
        log::debug!("GET {url}");
        let body = self
            .agent
            .get(url)
            .call()
            .map_err(|e| CatalogError::Http(format!("{url}: {e}")))?
            .into_string()
            .map_err(|e| CatalogError::Http(format!("{url}: {e}")))?;
        serde_json::from_str(&body).map_err(|e| CatalogError::Decode(format!("{url}: {e}")))
    }

    fn get_paged<T: for<'de> Deserialize<'de>>(&self, first: String) -> Result<Vec<T>, CatalogError> {
        let mut out = Vec::new();
        let mut next = Some(first);
        while let Some(url) = next {
            let page: Page<T> = self.get_json(&url)?;
            out.extend(page.results);
            next = page.next;
        }
        Ok(out)
    }

    pub fn fetch_catalog(&self) -> Result<(Catalog, LoadStats), CatalogError> {
        let url = format!("{}/api/v2/anchors/?format=json&page_size={}", self.base_url, self.page_size);
        let anchors: Vec<Anchor> = self.get_paged(url)?;
        let mut stats = LoadStats::default();
        let mut by_id = BTreeMap::new();
        for (i, a) in anchors.into_iter().enumerate() {
            match anchor_to_landmark(a) {
                Ok(Some(lm)) => {
                    by_id.insert(lm.id.clone(), lm);
                }
                Ok(None) => {}
                Err(why) => stats.reject(format!("anchor #{i}: {why}")),
            }
        }
        if by_id.is_empty() {
            return Err(CatalogError::NoLandmarks {
                rejected: stats.rejected,
            });
        }
        stats.accepted = by_id.len();
        Ok((Catalog::from_sorted(by_id.into_values().collect(), SourceKind::RipeAtlas), stats))
    }

    /// Latest anchor-mesh IPv4 ping results between catalog members. Each
    /// directed pair keeps the minimum RTT of its most recent result set.
    pub fn fetch_mesh(&self, catalog: &Catalog) -> Result<(MeshMatrix, LoadStats), CatalogError> {
        let url = format!(
            "{}/api/v2/anchor-measurements/?format=json&is_mesh=true&type=ping&page_size={}",
            self.base_url, self.page_size
        );
        let listing: Vec<AnchorMeasurement> = self.get_paged(url)?;
        let mut msm_ids: Vec<u64> = listing
            .iter()
            .filter(|m| m.kind.as_deref().is_none_or(|k| k == "ping") && m.is_mesh != Some(false))
            .filter_map(|m| trailing_id(&m.measurement))
            .collect();
        msm_ids.sort_unstable();
        msm_ids.dedup();
        if let Some(limit) = self.max_measurements {
            msm_ids.truncate(limit);
        }

        let by_addr: HashMap<Ipv4Addr, &str> = catalog
            .iter()
            .filter_map(|l| l.address.map(|a| (a, l.id.as_str())))
            .collect();
        let mut stats = LoadStats::default();
        let mut mesh = MeshMatrix::new();
        for id in msm_ids {
            let url = format!("{}/api/v2/measurements/{id}/latest/?format=json", self.base_url);
            let results: Vec<PingResult> = match self.get_json(&url) {
                Ok(r) => r,
                Err(e) => {
                    stats.reject(format!("measurement {id}: {e}"));
                    continue;
                }
            };
            for r in results.iter().filter(|r| r.af.unwrap_or(4) == 4) {
                let src = r.prb_id.to_string();
                let dst = r
                    .dst_addr
                    .as_deref()
                    .and_then(|a| a.parse::<Ipv4Addr>().ok())
                    .and_then(|a| by_addr.get(&a).copied());
                let (Some(dst), true) = (dst, catalog.contains(&src)) else {
                    stats.reject(format!("measurement {id}: result from {src} not between known anchors"));
                    continue;
                };
                match r.min_rtt() {
                    Some(rtt) => {
                        mesh.insert(&src, dst, rtt);
                    }
                    None => stats.reject(format!("measurement {id}: no reply {src} -> {dst}")),
                }
            }
        }
        if mesh.is_empty() {
            return Err(CatalogError::EmptyMesh {
                rejected: stats.rejected,
            });
        }
        stats.accepted = mesh.len();
        Ok((mesh, stats))
    }
}

fn anchor_to_landmark(a: Anchor) -> Result<Option<Landmark>, String> {
    if a.is_disabled {
        return Ok(None);
    }
    let probe = a.probe.ok_or("no probe id")?;
    let coords = a.geometry.ok_or("no geometry")?.coordinates;
    let [lon, lat] = coords[..] else {
        return Err(format!("bad coordinates {coords:?}"));
    };
    let position = GeoPoint::new(lat, lon).map_err(|e| e.to_string())?;
    let address = a.ip_v4.as_deref().and_then(|s| s.parse::<Ipv4Addr>().ok());
    let Some(address) = address else {
        return Err(format!("probe {probe} has no IPv4 address"));
    };
    Ok(Some(Landmark::new(probe.to_string(), position).with_address(address)))
}

/// `https://.../measurements/1234/` -> 1234
fn trailing_id(url: &str) -> Option<u64> {
    url.trim_end_matches('/').rsplit('/').next()?.parse().ok()
}
