//! Landmark sets and the landmark-to-landmark RTT mesh.
//!
//! Landmark files are JSON lines (`{"id": "...", "lat": .., "lon": .., "ip": ".."}`),
//! mesh files are CSV with header `src_id,dst_id,rtt_ms`. Both can also be pulled
//! from a RIPE Atlas compatible API, see [`atlas`].

pub mod atlas;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::CatalogError;
use crate::geodesy::{great_circle_km, GeoPoint};

/// A network endpoint with a verified position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub id: String,
    pub position: GeoPoint,
    pub address: Option<Ipv4Addr>,
}

impl Landmark {
    pub fn new(id: impl Into<String>, position: GeoPoint) -> Self {
        Landmark {
            id: id.into(),
            position,
            address: None,
        }
    }

    pub fn with_address(mut self, address: Ipv4Addr) -> Self {
        self.address = Some(address);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    RipeAtlas,
    File,
    Synthetic,
}

/// An immutable set of landmarks, always iterated in ascending id order.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    landmarks: Vec<Landmark>,
    source: SourceKind,
}

impl Catalog {
    pub fn new(mut landmarks: Vec<Landmark>, source: SourceKind) -> Result<Self, CatalogError> {
        landmarks.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = landmarks.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(CatalogError::DuplicateId(w[0].id.clone()));
        }
        Ok(Catalog { landmarks, source })
    }

    /// Keeps landmarks that are already sorted and unique.
    fn from_sorted(landmarks: Vec<Landmark>, source: SourceKind) -> Self {
        Catalog { landmarks, source }
    }

    pub fn landmarks(&self) -> &[Landmark] {
        &self.landmarks
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Landmark> {
        self.landmarks.iter()
    }

    pub fn len(&self) -> usize {
        self.landmarks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.landmarks.is_empty()
    }

    pub fn source(&self) -> SourceKind {
        self.source
    }

    pub fn get(&self, id: &str) -> Option<&Landmark> {
        self.landmarks
            .binary_search_by(|l| l.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.landmarks[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.get(id).is_some()
    }

    /// Landmarks strictly closer than `radius_km` to `center`.
    pub fn near(&self, center: GeoPoint, radius_km: f64) -> Catalog {
        self.partition(center, radius_km).0
    }

    /// Everything `near` would not return.
    pub fn exclude_zone(&self, center: GeoPoint, radius_km: f64) -> Catalog {
        self.partition(center, radius_km).1
    }

    fn partition(&self, center: GeoPoint, radius_km: f64) -> (Catalog, Catalog) {
        let (inside, outside): (Vec<_>, Vec<_>) = self
            .landmarks
            .iter()
            .cloned()
            .partition(|l| great_circle_km(center, l.position) < radius_km);
        (
            Catalog::from_sorted(inside, self.source),
            Catalog::from_sorted(outside, self.source),
        )
    }

    /// Distance from `center` to the closest landmark, if any.
    pub fn nearest_km(&self, center: GeoPoint) -> Option<f64> {
        self.landmarks
            .iter()
            .map(|l| great_circle_km(center, l.position))
            .min_by(f64::total_cmp)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for l in &self.landmarks {
            let rec = LandmarkRecord {
                id: Some(l.id.clone()),
                lat: Some(l.position.lat()),
                lon: Some(l.position.lon()),
                ip: l.address.map(|a| a.to_string()),
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

impl<'a> IntoIterator for &'a Catalog {
    type Item = &'a Landmark;
    type IntoIter = std::slice::Iter<'a, Landmark>;

    fn into_iter(self) -> Self::IntoIter {
        self.landmarks.iter()
    }
}

/// Outcome of a load: how many records made it and why the others did not.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadStats {
    pub accepted: usize,
    pub rejected: usize,
    pub warnings: Vec<String>,
}

impl LoadStats {
    fn reject(&mut self, why: String) {
        log::warn!("{why}");
        self.rejected += 1;
        self.warnings.push(why);
    }
}

/// Where landmarks and mesh data come from.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    File(PathBuf),
    Atlas { base_url: String },
}

#[derive(Debug, Serialize, Deserialize)]
struct LandmarkRecord {
    id: Option<String>,
    lat: Option<f64>,
    lon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ip: Option<String>,
}

pub fn load_catalog(source: &Source) -> Result<(Catalog, LoadStats), CatalogError> {
    match source {
        Source::File(path) => read_catalog_jsonl(open(path)?, SourceKind::File),
        Source::Atlas { base_url } => atlas::AtlasClient::new(base_url.clone()).fetch_catalog(),
    }
}

pub fn load_mesh(source: &Source, catalog: &Catalog) -> Result<(MeshMatrix, LoadStats), CatalogError> {
    match source {
        Source::File(path) => read_mesh_csv(open(path)?, catalog),
        Source::Atlas { base_url } => atlas::AtlasClient::new(base_url.clone()).fetch_mesh(catalog),
    }
}

fn open(path: &Path) -> Result<File, CatalogError> {
    File::open(path).map_err(|source| CatalogError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads one landmark per line. Bad lines are counted in the stats; a source
/// without a single usable landmark is an error.
pub fn read_catalog_jsonl<R: Read>(input: R, kind: SourceKind) -> Result<(Catalog, LoadStats), CatalogError> {
    let mut stats = LoadStats::default();
    let mut by_id: BTreeMap<String, Landmark> = BTreeMap::new();
    for (n, line) in BufReader::new(input).lines().enumerate() {
        let line = line.map_err(|source| CatalogError::Io {
            path: PathBuf::from("<catalog>"),
            source,
        })?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match parse_landmark(line) {
            Ok(lm) => {
                if by_id.contains_key(&lm.id) {
                    stats.reject(format!("line {}: duplicate id {:?}", n + 1, lm.id));
                } else {
                    by_id.insert(lm.id.clone(), lm);
                }
            }
            Err(why) => stats.reject(format!("line {}: {why}", n + 1)),
        }
    }
    if by_id.is_empty() {
        return Err(CatalogError::NoLandmarks {
            rejected: stats.rejected,
        });
    }
    stats.accepted = by_id.len();
    Ok((Catalog::from_sorted(by_id.into_values().collect(), kind), stats))
}

fn parse_landmark(line: &str) -> Result<Landmark, String> {
    let rec: LandmarkRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let id = rec.id.filter(|s| !s.is_empty()).ok_or("missing id")?;
    let lat = rec.lat.ok_or("missing lat")?;
    let lon = rec.lon.ok_or("missing lon")?;
    let position = GeoPoint::new(lat, lon).map_err(|e| e.to_string())?;
    let address = match rec.ip.as_deref() {
        None | Some("") => None,
        Some(s) => Some(s.parse::<Ipv4Addr>().map_err(|_| format!("bad ip {s:?}"))?),
    };
    Ok(Landmark { id, position, address })
}

/// Directed landmark-to-landmark RTTs in milliseconds. Entries are strictly
/// positive; the matrix may be asymmetric or have holes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MeshMatrix {
    rows: BTreeMap<String, BTreeMap<String, f64>>,
    nodes: BTreeSet<String>,
    entries: usize,
}

impl MeshMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or overwrites an entry. Non-positive or non-finite RTTs are
    /// refused and self-loops ignored; returns whether the entry was stored.
    pub fn insert(&mut self, src: &str, dst: &str, rtt_ms: f64) -> bool {
        if !(rtt_ms.is_finite() && rtt_ms > 0.0) || src == dst {
            return false;
        }
        let row = self.rows.entry(src.to_string()).or_default();
        if row.insert(dst.to_string(), rtt_ms).is_none() {
            self.entries += 1;
        }
        self.nodes.insert(src.to_string());
        self.nodes.insert(dst.to_string());
        true
    }

    pub fn get(&self, src: &str, dst: &str) -> Option<f64> {
        self.rows.get(src).and_then(|r| r.get(dst)).copied()
    }

    /// RTT from `src` to `dst`, falling back to the reverse direction.
    pub fn rtt_between(&self, src: &str, dst: &str) -> Option<f64> {
        self.get(src, dst).or_else(|| self.get(dst, src))
    }

    pub fn len(&self) -> usize {
        self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries == 0
    }

    /// Every id that appears at either end of some entry, ascending.
    pub fn nodes(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, f64)> {
        self.rows
            .iter()
            .flat_map(|(s, row)| row.iter().map(move |(d, r)| (s.as_str(), d.as_str(), *r)))
    }

    /// Keeps only entries whose both endpoints are in `catalog`.
    pub fn restricted_to(&self, catalog: &Catalog) -> MeshMatrix {
        let mut out = MeshMatrix::new();
        for (s, d, r) in self.iter() {
            if catalog.contains(s) && catalog.contains(d) {
                out.insert(s, d, r);
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), CatalogError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["src_id", "dst_id", "rtt_ms"])?;
        for (s, d, r) in self.iter() {
            w.write_record([s, d, &r.to_string()])?;
        }
        w.flush().map_err(|source| CatalogError::Io {
            path: PathBuf::from("<mesh>"),
            source,
        })?;
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct MeshRow {
    src_id: String,
    dst_id: String,
    rtt_ms: String,
}

/// Reads `src_id,dst_id,rtt_ms` rows, keeping entries between known landmarks.
/// Repeated pairs keep the smallest RTT.
pub fn read_mesh_csv<R: Read>(input: R, catalog: &Catalog) -> Result<(MeshMatrix, LoadStats), CatalogError> {
    let mut stats = LoadStats::default();
    let mut mesh = MeshMatrix::new();
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    for (n, row) in reader.deserialize::<MeshRow>().enumerate() {
        let line = n + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                stats.reject(format!("line {line}: {e}"));
                continue;
            }
        };
        let rtt: f64 = match row.rtt_ms.parse() {
            Ok(v) => v,
            Err(_) => {
                stats.reject(format!("line {line}: bad rtt {:?}", row.rtt_ms));
                continue;
            }
        };
        if !(rtt.is_finite() && rtt > 0.0) {
            stats.reject(format!("line {line}: non-positive rtt {rtt}"));
            continue;
        }
        let unknown: Vec<&str> = [&row.src_id, &row.dst_id]
            .into_iter()
            .filter(|id| !catalog.contains(id))
            .map(String::as_str)
            .collect();
        if !unknown.is_empty() {
            stats.reject(format!("line {line}: unknown landmark(s) {unknown:?}"));
            continue;
        }
        if row.src_id == row.dst_id {
            stats.reject(format!("line {line}: self loop on {:?}", row.src_id));
            continue;
        }
        let best = mesh.get(&row.src_id, &row.dst_id).map_or(rtt, |old| old.min(rtt));
        mesh.insert(&row.src_id, &row.dst_id, best);
    }
    if mesh.is_empty() {
        return Err(CatalogError::EmptyMesh {
            rejected: stats.rejected,
        });
    }
    stats.accepted = mesh.len();
    Ok((mesh, stats))
}
