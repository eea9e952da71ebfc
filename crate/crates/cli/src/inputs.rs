//! Turns resolved flags into a catalog, a mesh and a probe backend.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use anyhow::{bail, Context, Result};

use geofindr::catalog::atlas::{base_url_from_env, AtlasClient};
use geofindr::catalog::{read_catalog_jsonl, read_mesh_csv, Catalog, MeshMatrix, SourceKind};
use geofindr::positions::by_name;
use geofindr::probe::icmp::{IcmpBackend, IcmpConfig};
use geofindr::probe::replay::ReplayBackend;
use geofindr::probe::sim::{OffsetModel, Scenario, SimBackend, SimWorld, WorldSpec};
use geofindr::{GeoPoint, ProbeBackend};

use crate::args::{Backend, CommonFlags};
use crate::UsageError;

/// Seed of the default simulated world.
pub const DEFAULT_SEED: u64 = 7;

/// Accepts `"lat,lon"` or a bundled city name.
pub fn parse_position(s: &str) -> Result<GeoPoint, UsageError> {
    if let Ok(p) = s.parse::<GeoPoint>() {
        return Ok(p);
    }
    by_name(s.trim())
        .map(|n| n.position)
        .ok_or_else(|| UsageError(format!("{s:?} is neither \"lat,lon\" nor a known city")))
}

/// The Paris-dense preset with per-node offsets drawn from `[min, max]` ms.
pub fn preset_world(jitter: f64, offset_min: f64, offset_max: f64, seed: u64) -> WorldSpec {
    WorldSpec::paris_dense(
        jitter,
        OffsetModel::Uniform {
            min_ms: offset_min,
            max_ms: offset_max,
        },
        seed,
    )
}

pub struct Inputs {
    pub catalog: Catalog,
    pub mesh: MeshMatrix,
    /// Set for the simulated backend; sweeps reseed it per run.
    pub world: Option<SimWorld>,
    pub backend: Option<Box<dyn ProbeBackend>>,
    pub truth: Option<GeoPoint>,
}

impl Inputs {
    pub fn load(flags: &CommonFlags) -> Result<Self> {
        let truth = flags.truth.as_deref().map(parse_position).transpose()?;
        match flags.backend.unwrap_or(Backend::Sim) {
            Backend::Sim => {
                let world = sim_world(flags)?;
                let mesh = match &flags.mesh {
                    Some(path) => read_mesh(path, &world.landmarks)?,
                    None => world.mesh(),
                };
                Ok(Inputs {
                    catalog: world.landmarks.clone(),
                    mesh,
                    truth: truth.or(Some(world.true_vm_position)),
                    world: Some(world),
                    backend: None,
                })
            }
            Backend::Replay => {
                let (Some(catalog), Some(mesh), Some(replay)) = (&flags.catalog, &flags.mesh, &flags.replay) else {
                    return Err(UsageError("the replay backend needs --catalog, --mesh and --replay".into()).into());
                };
                let catalog = read_catalog(catalog)?;
                let mesh = read_mesh(mesh, &catalog)?;
                let backend = ReplayBackend::from_path(replay)?;
                Ok(Inputs {
                    catalog,
                    mesh,
                    world: None,
                    backend: Some(Box::new(backend)),
                    truth,
                })
            }
            Backend::Icmp => {
                let (catalog, mesh) = match (&flags.catalog, &flags.mesh) {
                    (Some(c), Some(m)) => {
                        let catalog = read_catalog(c)?;
                        let mesh = read_mesh(m, &catalog)?;
                        (catalog, mesh)
                    }
                    (None, None) => {
                        let url = flags.atlas_url.clone().unwrap_or_else(base_url_from_env);
                        log::info!("fetching landmarks and mesh from {url}");
                        let client = AtlasClient::new(url);
                        let (catalog, _) = client.fetch_catalog()?;
                        let (mesh, _) = client.fetch_mesh(&catalog)?;
                        (catalog, mesh)
                    }
                    _ => return Err(UsageError("give both --catalog and --mesh, or neither".into()).into()),
                };
                let backend = IcmpBackend::new(IcmpConfig::default());
                Ok(Inputs {
                    catalog,
                    mesh,
                    world: None,
                    backend: Some(Box::new(backend)),
                    truth,
                })
            }
        }
    }
}

fn sim_world(flags: &CommonFlags) -> Result<SimWorld> {
    let Some(path) = &flags.scenario else {
        if flags.catalog.is_some() {
            return Err(UsageError("--catalog with the sim backend needs --scenario".into()).into());
        }
        let seed = flags.seed.unwrap_or(DEFAULT_SEED);
        return Ok(preset_world(0.1, 0.0, 0.2, seed).generate()?);
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    if let Ok(mut spec) = serde_json::from_str::<WorldSpec>(&text) {
        if let Some(seed) = flags.seed {
            spec.seed = seed;
        }
        let world = spec.generate()?;
        return match &flags.catalog {
            Some(c) => Ok(world.with_landmarks(read_catalog(c)?)),
            None => Ok(world),
        };
    }
    let mut scenario: Scenario = serde_json::from_str(&text)
        .with_context(|| format!("{} is neither a world spec nor a scenario", path.display()))?;
    if let Some(seed) = flags.seed {
        scenario.seed = seed;
    }
    let Some(catalog) = &flags.catalog else {
        return Err(UsageError("a scenario file needs --catalog".into()).into());
    };
    Ok(SimWorld::from_scenario(scenario, read_catalog(catalog)?)?)
}

pub fn read_catalog(path: &Path) -> Result<Catalog> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let (catalog, stats) = read_catalog_jsonl(BufReader::new(f), SourceKind::File)?;
    if stats.rejected > 0 {
        log::warn!("{}: {} landmark records rejected", path.display(), stats.rejected);
    }
    Ok(catalog)
}

pub fn read_mesh(path: &Path, catalog: &Catalog) -> Result<MeshMatrix> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let (mesh, stats) = read_mesh_csv(BufReader::new(f), catalog)?;
    if stats.rejected > 0 {
        log::warn!("{}: {} mesh rows rejected", path.display(), stats.rejected);
    }
    if mesh.is_empty() {
        bail!("{}: no usable mesh entries", path.display());
    }
    Ok(mesh)
}

pub fn sim_backend(world: &SimWorld) -> SimBackend {
    SimBackend::new(world.clone())
}
