//! Deterministic network model standing in for the Internet.
//!
//! The RTT between two nodes is
//!
//! ```text
//! rtt = offset(a) + offset(b) + distance_km / speed_km_per_ms
//! rtt = max(rtt * (1 + u), 0.01)      u ~ U(-jitter, +jitter)
//! ```
//!
//! where `u` is drawn from a ChaCha stream keyed by the world seed and the
//! query identity, so the same question always gets the same answer.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::net::Ipv4Addr;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DelaySample, InCloudReading, ProbeBackend, RTT_FLOOR_MS};
use crate::catalog::{Catalog, Landmark, MeshMatrix, SourceKind};
use crate::error::{ProbeError, ScenarioError};
use crate::geodesy::{destination_point, great_circle_km, GeoPoint};

pub const DEFAULT_SPEED_KM_PER_MS: f64 = 100.0;
pub const DEFAULT_JITTER_FRACTION: f64 = 0.10;
pub const SIM_LOOPBACK_RTT_MS: f64 = 0.05;
pub const SIM_PROXY_RTT_MS: f64 = 0.5;

/// Virtual spacing between successive queries on the simulated clock.
const SIM_QUERY_SPACING_MS: f64 = 1000.0;

/// Scenario file: everything about a world except its landmarks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub true_vm_position: GeoPoint,
    #[serde(default = "default_speed")]
    pub speed_km_per_ms: f64,
    #[serde(default = "default_jitter")]
    pub jitter_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub vm_offset_ms: f64,
    /// Per-landmark access delay; landmarks not listed get 0.
    #[serde(default)]
    pub per_node_offset_ms: BTreeMap<String, f64>,
}

fn default_speed() -> f64 {
    DEFAULT_SPEED_KM_PER_MS
}

fn default_jitter() -> f64 {
    DEFAULT_JITTER_FRACTION
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let f = File::open(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(serde_json::from_reader(BufReader::new(f))?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimWorld {
    pub true_vm_position: GeoPoint,
    pub landmarks: Catalog,
    pub speed_km_per_ms: f64,
    pub vm_offset_ms: f64,
    pub per_node_offset_ms: BTreeMap<String, f64>,
    pub jitter_fraction: f64,
    pub seed: u64,
}

impl SimWorld {
    pub fn from_scenario(scenario: Scenario, landmarks: Catalog) -> Result<Self, ScenarioError> {
        let world = SimWorld {
            true_vm_position: scenario.true_vm_position,
            landmarks,
            speed_km_per_ms: scenario.speed_km_per_ms,
            vm_offset_ms: scenario.vm_offset_ms,
            per_node_offset_ms: scenario.per_node_offset_ms,
            jitter_fraction: scenario.jitter_fraction,
            seed: scenario.seed,
        };
        world.validate()?;
        Ok(world)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if !(self.speed_km_per_ms.is_finite() && self.speed_km_per_ms > 0.0) {
            return bad(format!("speed_km_per_ms must be positive, got {}", self.speed_km_per_ms));
        }
        if !(0.0..1.0).contains(&self.jitter_fraction) {
            return bad(format!("jitter_fraction must be in [0, 1), got {}", self.jitter_fraction));
        }
        if !(self.vm_offset_ms.is_finite() && self.vm_offset_ms >= 0.0) {
            return bad(format!("vm_offset_ms must be non-negative, got {}", self.vm_offset_ms));
        }
        if let Some((id, v)) = self.per_node_offset_ms.iter().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return bad(format!("offset for {id} must be non-negative, got {v}"));
        }
        Ok(())
    }

    pub fn scenario(&self) -> Scenario {
        Scenario {
            true_vm_position: self.true_vm_position,
            speed_km_per_ms: self.speed_km_per_ms,
            jitter_fraction: self.jitter_fraction,
            seed: self.seed,
            vm_offset_ms: self.vm_offset_ms,
            per_node_offset_ms: self.per_node_offset_ms.clone(),
        }
    }

    pub fn offset_of(&self, id: &str) -> f64 {
        self.per_node_offset_ms.get(id).copied().unwrap_or(0.0)
    }

    fn rtt(&self, distance_km: f64, offsets_ms: f64, stream: &[&[u8]]) -> f64 {
        let base = offsets_ms + distance_km / self.speed_km_per_ms;
        let noisy = if self.jitter_fraction > 0.0 {
            let mut rng = stream_rng(self.seed, stream);
            let u: f64 = rng.gen_range(-self.jitter_fraction..=self.jitter_fraction);
            base * (1.0 + u)
        } else {
            base
        };
        noisy.max(RTT_FLOOR_MS)
    }

    /// RTT the VM observes towards `landmark_id` on query `query_index`.
    pub fn vm_rtt(&self, landmark_id: &str, query_index: u64) -> Option<f64> {
        let lm = self.landmarks.get(landmark_id)?;
        let d = great_circle_km(self.true_vm_position, lm.position);
        let q = query_index.to_le_bytes();
        Some(self.rtt(
            d,
            self.vm_offset_ms + self.offset_of(landmark_id),
            &[b"vm", landmark_id.as_bytes(), &q],
        ))
    }

    /// Full directed landmark mesh, one draw per ordered pair.
    pub fn mesh(&self) -> MeshMatrix {
        let lms = self.landmarks.landmarks();
        let mut mesh = MeshMatrix::new();
        for a in lms {
            for b in lms {
                if a.id == b.id {
                    continue;
                }
                let d = great_circle_km(a.position, b.position);
                let rtt = self.rtt(
                    d,
                    self.offset_of(&a.id) + self.offset_of(&b.id),
                    &[b"mesh", a.id.as_bytes(), b"\0", b.id.as_bytes()],
                );
                mesh.insert(&a.id, &b.id, rtt);
            }
        }
        mesh
    }

    /// The same world with some landmarks removed.
    pub fn with_landmarks(&self, landmarks: Catalog) -> SimWorld {
        SimWorld {
            landmarks,
            ..self.clone()
        }
    }
}

/// FNV-1a over the stream parts, mixed into the world seed.
fn stream_rng(seed: u64, parts: &[&[u8]]) -> ChaCha8Rng {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &byte in *part {
            h ^= u64::from(byte);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(seed ^ h)
}

pub struct SimBackend {
    world: SimWorld,
}

impl SimBackend {
    pub fn new(world: SimWorld) -> Self {
        SimBackend { world }
    }

    pub fn world(&self) -> &SimWorld {
        &self.world
    }
}

impl ProbeBackend for SimBackend {
    fn name(&self) -> &'static str {
        "sim"
    }

    fn measure(&self, target: &Landmark, query_index: u64) -> Result<DelaySample, ProbeError> {
        let rtt_ms = self
            .world
            .vm_rtt(&target.id, query_index)
            .ok_or_else(|| ProbeError::UnknownTarget(target.id.clone()))?;
        Ok(DelaySample {
            landmark_id: target.id.clone(),
            rtt_ms,
            attempts: 1,
            timestamp_ms: query_index as f64 * SIM_QUERY_SPACING_MS,
        })
    }

    fn measure_in_cloud(&self, proxy: Option<Ipv4Addr>, _query_index: u64) -> Result<InCloudReading, ProbeError> {
        Ok(InCloudReading {
            loopback_rtt_ms: SIM_LOOPBACK_RTT_MS,
            proxy_rtt_ms: proxy.map(|_| SIM_PROXY_RTT_MS),
            proxy_error: None,
        })
    }
}

/// How per-node access offsets are assigned by [`WorldSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OffsetModel {
    /// Every node, the VM included, gets the same offset.
    Homogeneous { ms: f64 },
    /// Each node draws its own offset uniformly in `[min_ms, max_ms]`.
    Uniform { min_ms: f64, max_ms: f64 },
}

/// A disk of densely packed landmarks, e.g. a metropolitan area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub center: GeoPoint,
    pub radius_km: f64,
    pub count: usize,
    /// Offsets for this cluster's nodes; the world-wide model when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offsets: Option<OffsetModel>,
}

/// Density description from which a [`SimWorld`] is generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub true_vm_position: GeoPoint,
    /// Center of the square region holding the background landmarks.
    pub box_center: GeoPoint,
    pub box_side_km: f64,
    pub background_count: usize,
    /// No background landmark is placed closer than this to the VM.
    #[serde(default)]
    pub background_clearance_km: f64,
    #[serde(default)]
    pub clusters: Vec<ClusterSpec>,
    pub speed_km_per_ms: f64,
    pub jitter_fraction: f64,
    pub offsets: OffsetModel,
    /// Offset model of the VM itself; the world-wide model when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vm_offsets: Option<OffsetModel>,
    pub seed: u64,
}

/// Telecom SudParis campus, Evry.
pub fn evry() -> GeoPoint {
    GeoPoint::new(48.6245, 2.4445).expect("valid")
}

pub fn paris() -> GeoPoint {
    GeoPoint::new(48.8566, 2.3522).expect("valid")
}

impl WorldSpec {
    /// 300 landmarks over a 2000 km square centred on the VM at Evry: a dense
    /// Paris cluster of 24, and 276 background landmarks kept at least 135 km
    /// from the VM, mirroring the nearest non-Paris anchors (Reims, Tours).
    pub fn paris_dense(jitter_fraction: f64, offsets: OffsetModel, seed: u64) -> Self {
        WorldSpec {
            true_vm_position: evry(),
            box_center: evry(),
            box_side_km: 2000.0,
            background_count: 276,
            background_clearance_km: 135.0,
            clusters: vec![ClusterSpec {
                center: paris(),
                radius_km: 35.0,
                count: 24,
                offsets: None,
            }],
            speed_km_per_ms: DEFAULT_SPEED_KM_PER_MS,
            jitter_fraction,
            offsets,
            vm_offsets: None,
            seed,
        }
    }

    /// Gives the VM and every cluster node their own offset model, leaving
    /// the background on the world-wide one.
    pub fn with_metro_offsets(mut self, metro: OffsetModel) -> Self {
        self.vm_offsets = Some(metro);
        for c in &mut self.clusters {
            c.offsets = Some(metro);
        }
        self
    }

    pub fn generate(&self) -> Result<SimWorld, ScenarioError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut landmarks = Vec::new();
        let mut next_id = 0usize;
        let mut models: BTreeMap<String, OffsetModel> = BTreeMap::new();
        let mut push = |pos: GeoPoint, model: OffsetModel, landmarks: &mut Vec<Landmark>| {
            let n = next_id;
            next_id += 1;
            let addr = Ipv4Addr::new(10, (n >> 16) as u8, (n >> 8) as u8, n as u8);
            let id = format!("lm{n:04}");
            models.insert(id.clone(), model);
            landmarks.push(Landmark::new(id, pos).with_address(addr));
        };

        for cluster in &self.clusters {
            let model = cluster.offsets.unwrap_or(self.offsets);
            for _ in 0..cluster.count {
                let r = cluster.radius_km * rng.gen::<f64>().sqrt();
                let bearing = rng.gen_range(0.0..360.0);
                push(destination_point(cluster.center, bearing, r), model, &mut landmarks);
            }
        }

        let half = self.box_side_km / 2.0;
        let mut placed = 0;
        let mut tries = 0usize;
        while placed < self.background_count {
            tries += 1;
            if tries > 1000 * (self.background_count + 1) {
                return Err(ScenarioError::Invalid(
                    "background clearance leaves no room in the box".into(),
                ));
            }
            let dx: f64 = rng.gen_range(-half..half);
            let dy: f64 = rng.gen_range(-half..half);
            let bearing = dx.atan2(dy).to_degrees();
            let pos = destination_point(self.box_center, bearing, dx.hypot(dy));
            if great_circle_km(pos, self.true_vm_position) < self.background_clearance_km {
                continue;
            }
            push(pos, self.offsets, &mut landmarks);
            placed += 1;
        }

        let catalog = Catalog::new(landmarks, SourceKind::Synthetic).map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        let mut draw = |model: OffsetModel| match model {
            OffsetModel::Homogeneous { ms } => ms,
            OffsetModel::Uniform { min_ms, max_ms } if max_ms > min_ms => rng.gen_range(min_ms..=max_ms),
            OffsetModel::Uniform { min_ms, .. } => min_ms,
        };
        let vm_offset_ms = draw(self.vm_offsets.unwrap_or(self.offsets));
        let per_node_offset_ms: BTreeMap<String, f64> = catalog.iter().map(|l| (l.id.clone(), draw(models[&l.id]))).collect();
        let world = SimWorld {
            true_vm_position: self.true_vm_position,
            landmarks: catalog,
            speed_km_per_ms: self.speed_km_per_ms,
            vm_offset_ms,
            per_node_offset_ms,
            jitter_fraction: self.jitter_fraction,
            seed: self.seed,
        };
        world.validate()?;
        Ok(world)
    }
}
