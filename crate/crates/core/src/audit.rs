//! The audit loop.
//!
//! Starting from the declared position, each iteration
//!
//! 1. gathers landmarks closer than `zone_size_km` to the current position,
//!    doubling the zone until at least `nb_lm` are found,
//! 2. picks `nb_lm` dispersed audit landmarks among them and measures them,
//! 3. tallies mesh-similar landmarks and keeps the most frequent ones,
//! 4. measures those and fits the position estimate.
//!
//! The loop ends once an iteration moves the estimate by less than
//! `tolerance_km`, or after `max_iterations`.

use std::net::Ipv4Addr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, Landmark, MeshMatrix};
use crate::dispoints::dispoints;
use crate::estimate::{fit, normalize_delays, PositionEstimate, WeightedPoint};
use crate::geodesy::{great_circle_km, GeoPoint, MAX_DISTANCE_KM};
use crate::probe::{measure_all, DelaySample, InCloudReading, ProbeBackend};
use crate::sectorize::{select_lms, tally};

/// Accuracy bar for a "satisfactory" estimate, in km.
pub const SATISFACTORY_KM: f64 = 50.0;
/// Percentage points added to the interval when no similar landmark is found.
pub const INTERVAL_WIDEN_STEP: f64 = 10.0;
pub const MAX_INTERVAL_WIDENINGS: usize = 3;
/// Successful audit measurements needed to go on (capped by `nb_lm`).
pub const MIN_AUDIT_MEASUREMENTS: usize = 3;
pub const ZONE_GROWTH_FACTOR: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Sim,
    Replay,
    Icmp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub declared_position: GeoPoint,
    pub tolerance_km: f64,
    pub zone_size_km: f64,
    pub nb_lm: usize,
    pub interval_percent: f64,
    pub max_iterations: usize,
    pub backend: BackendKind,
    pub proxy_address: Option<Ipv4Addr>,
}

impl AuditConfig {
    pub const DEFAULT_TOLERANCE_KM: f64 = 100.0;
    pub const DEFAULT_ZONE_SIZE_KM: f64 = 1000.0;
    pub const DEFAULT_NB_LM: usize = 16;
    pub const DEFAULT_INTERVAL_PERCENT: f64 = 35.0;
    pub const DEFAULT_MAX_ITERATIONS: usize = 20;

    pub fn new(declared_position: GeoPoint, backend: BackendKind) -> Self {
        AuditConfig {
            declared_position,
            tolerance_km: Self::DEFAULT_TOLERANCE_KM,
            zone_size_km: Self::DEFAULT_ZONE_SIZE_KM,
            nb_lm: Self::DEFAULT_NB_LM,
            interval_percent: Self::DEFAULT_INTERVAL_PERCENT,
            max_iterations: Self::DEFAULT_MAX_ITERATIONS,
            backend,
            proxy_address: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(format!("{name} must be positive, got {v}"))
            }
        };
        positive("tolerance_km", self.tolerance_km)?;
        positive("zone_size_km", self.zone_size_km)?;
        positive("interval_percent", self.interval_percent)?;
        if self.nb_lm < 1 {
            return Err("nb_lm must be at least 1".into());
        }
        if self.max_iterations < 1 {
            return Err("max_iterations must be at least 1".into());
        }
        Ok(())
    }
}

/// Everything that happened in one pass of the loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub index: usize,
    pub initial_position: GeoPoint,
    /// Zone radii tried, in order; the last one is the effective zone.
    pub zone_steps_km: Vec<f64>,
    pub effective_zone_km: f64,
    pub lm_a_ids: Vec<String>,
    pub lm_a_samples: Vec<DelaySample>,
    pub lm_a_failures: Vec<(String, String)>,
    pub interval_percent_used: f64,
    pub lm_s_ids: Vec<String>,
    pub lm_s_samples: Vec<DelaySample>,
    pub estimate: PositionEstimate,
    pub step_km: f64,
    pub in_cloud: Option<InCloudReading>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditStatus {
    Converged,
    NotConverged,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AuditFailure {
    InvalidConfig { reason: String },
    LandmarkStarvation { available: usize, needed: usize },
    EmptyMesh,
    MeasurementPrivilege { reason: String },
    InsufficientMeasurements { succeeded: usize, needed: usize },
    SectorizationFailed { last_interval_percent: f64 },
    Estimation { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InCloudSummary {
    pub samples: usize,
    pub loopback_rtt_ms: Option<f64>,
    pub proxy_rtt_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub config: AuditConfig,
    pub status: AuditStatus,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<AuditFailure>,
    /// Last sector coordinates; the declared position if no iteration finished.
    pub estimated_position: GeoPoint,
    pub nb_iterations: usize,
    pub audit_time_s: f64,
    /// Sum over all measurements of `rtt × attempts`: time spent waiting on the network.
    pub probe_time_ms: f64,
    pub measurements: usize,
    pub distance_estimated_declared_km: f64,
    pub lie_detected: bool,
    pub smre_km: Option<f64>,
    pub in_cloud: InCloudSummary,
    pub traces: Vec<IterationTrace>,
    pub diagnostics: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance_real_estimated_km: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance_real_declared_km: Option<f64>,
}

impl AuditReport {
    /// Fills the ground-truth distances (controlled experiments only).
    pub fn attach_truth(&mut self, truth: GeoPoint) -> AccuracyRecord {
        let rec = evaluate_against_truth(self, truth);
        self.distance_real_estimated_km = Some(rec.distance_real_estimated_km);
        self.distance_real_declared_km = Some(rec.distance_real_declared_km);
        rec
    }

    /// Process exit code: 0 converged and honest, 2 lie detected, 3 not
    /// converged, 4 fatal error.
    pub fn exit_code(&self) -> i32 {
        match self.status {
            AuditStatus::Failed => 4,
            AuditStatus::NotConverged => 3,
            AuditStatus::Converged if self.lie_detected => 2,
            AuditStatus::Converged => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRecord {
    /// Accuracy.
    pub distance_real_estimated_km: f64,
    /// Lie extent.
    pub distance_real_declared_km: f64,
    /// Lie estimation.
    pub distance_estimated_declared_km: f64,
    pub satisfactory: bool,
    pub lie_detected: bool,
}

pub fn evaluate_against_truth(report: &AuditReport, true_position: GeoPoint) -> AccuracyRecord {
    let real_est = great_circle_km(true_position, report.estimated_position);
    let est_decl = great_circle_km(report.estimated_position, report.config.declared_position);
    AccuracyRecord {
        distance_real_estimated_km: real_est,
        distance_real_declared_km: great_circle_km(true_position, report.config.declared_position),
        distance_estimated_declared_km: est_decl,
        satisfactory: real_est < SATISFACTORY_KM,
        lie_detected: est_decl > report.config.tolerance_km,
    }
}

struct Run<'a> {
    config: &'a AuditConfig,
    catalog: &'a Catalog,
    mesh: &'a MeshMatrix,
    backend: &'a dyn ProbeBackend,
    next_query: u64,
    diagnostics: Vec<String>,
    in_cloud: Vec<InCloudReading>,
}

enum Step {
    Done(Box<IterationTrace>),
    Fail(AuditFailure),
}

pub fn run_audit(config: &AuditConfig, catalog: &Catalog, mesh: &MeshMatrix, backend: &dyn ProbeBackend) -> AuditReport {
    let mut run = Run {
        config,
        catalog,
        mesh,
        backend,
        next_query: 0,
        diagnostics: Vec::new(),
        in_cloud: Vec::new(),
    };
    let started = Instant::now();
    let mut traces: Vec<IterationTrace> = Vec::new();
    let mut sector = config.declared_position;

    let precheck = if let Err(reason) = config.validate() {
        Some(AuditFailure::InvalidConfig { reason })
    } else if catalog.len() < config.nb_lm {
        Some(AuditFailure::LandmarkStarvation {
            available: catalog.len(),
            needed: config.nb_lm,
        })
    } else if mesh.is_empty() {
        Some(AuditFailure::EmptyMesh)
    } else {
        None
    };

    let mut failure = precheck;
    let mut converged = false;
    if failure.is_none() {
        for index in 0..config.max_iterations {
            match run.iteration(index, sector) {
                Step::Done(trace) => {
                    sector = trace.estimate.position;
                    let step = trace.step_km;
                    traces.push(*trace);
                    if step < config.tolerance_km {
                        converged = true;
                        break;
                    }
                }
                Step::Fail(f) => {
                    failure = Some(f);
                    break;
                }
            }
        }
        if !converged && failure.is_none() {
            run.diagnostics
                .push(format!("no convergence after {} iterations", config.max_iterations));
        }
    }
    let audit_time_s = started.elapsed().as_secs_f64();

    let status = match (&failure, converged) {
        (Some(_), _) => AuditStatus::Failed,
        (None, true) => AuditStatus::Converged,
        (None, false) => AuditStatus::NotConverged,
    };
    if let Some(f) = &failure {
        run.diagnostics.push(format!("audit failed: {f:?}"));
    }
    let samples = traces.iter().flat_map(|t| t.lm_a_samples.iter().chain(&t.lm_s_samples));
    let (measurements, probe_time_ms) = samples.fold((0, 0.0), |(n, t), s| (n + 1, t + s.rtt_ms * f64::from(s.attempts)));
    let distance_estimated_declared_km = great_circle_km(sector, config.declared_position);

    AuditReport {
        config: config.clone(),
        status,
        converged,
        failure,
        estimated_position: sector,
        nb_iterations: traces.len(),
        audit_time_s,
        probe_time_ms,
        measurements,
        distance_estimated_declared_km,
        lie_detected: !traces.is_empty() && distance_estimated_declared_km > config.tolerance_km,
        smre_km: traces.last().map(|t| t.estimate.smre_km),
        in_cloud: summarize_in_cloud(&run.in_cloud),
        traces,
        diagnostics: run.diagnostics,
        distance_real_estimated_km: None,
        distance_real_declared_km: None,
    }
}

impl Run<'_> {
    fn take_queries(&mut self, n: usize) -> u64 {
        let first = self.next_query;
        self.next_query += n as u64;
        first
    }

    fn iteration(&mut self, index: usize, initial_position: GeoPoint) -> Step {
        let cfg = self.config;

        let mut zone = cfg.zone_size_km;
        let mut zone_steps_km = vec![zone];
        let mut near = self.catalog.near(initial_position, zone);
        while near.len() < cfg.nb_lm {
            if zone > MAX_DISTANCE_KM {
                return Step::Fail(AuditFailure::LandmarkStarvation {
                    available: near.len(),
                    needed: cfg.nb_lm,
                });
            }
            zone *= ZONE_GROWTH_FACTOR;
            zone_steps_km.push(zone);
            near = self.catalog.near(initial_position, zone);
        }

        let lm_a = match dispoints(&near, cfg.nb_lm) {
            Ok(sel) => sel.selected,
            Err(e) => {
                self.diagnostics.push(e.to_string());
                return Step::Fail(AuditFailure::LandmarkStarvation {
                    available: near.len(),
                    needed: cfg.nb_lm,
                });
            }
        };
        let mut lm_a_ids: Vec<String> = lm_a.iter().map(|l| l.id.clone()).collect();
        lm_a_ids.sort();

        let (lm_a_samples, lm_a_failures) = match self.measure(&lm_a) {
            Ok(r) => r,
            Err(f) => return Step::Fail(f),
        };
        let needed = MIN_AUDIT_MEASUREMENTS.min(cfg.nb_lm);
        if lm_a_samples.len() < needed {
            return Step::Fail(AuditFailure::InsufficientMeasurements {
                succeeded: lm_a_samples.len(),
                needed,
            });
        }

        let delays: Vec<(String, f64)> = lm_a_samples.iter().map(|s| (s.landmark_id.clone(), s.rtt_ms)).collect();
        let mut interval = cfg.interval_percent;
        let mut similar = Vec::new();
        for attempt in 0..=MAX_INTERVAL_WIDENINGS {
            if attempt > 0 {
                interval += INTERVAL_WIDEN_STEP;
                self.diagnostics.push(format!(
                    "iteration {index}: no similar landmark, widening interval to {interval}%"
                ));
            }
            similar = select_lms(&tally(self.mesh, &delays, interval), self.catalog);
            if !similar.is_empty() {
                break;
            }
        }
        if similar.is_empty() {
            return Step::Fail(AuditFailure::SectorizationFailed {
                last_interval_percent: interval,
            });
        }
        let lm_s_ids: Vec<String> = similar.iter().map(|l| l.id.clone()).collect();

        let (lm_s_samples, lm_s_failures) = match self.measure(&similar) {
            Ok(r) => r,
            Err(f) => return Step::Fail(f),
        };
        for (id, why) in &lm_s_failures {
            self.diagnostics.push(format!("iteration {index}: similar landmark {id} unreachable: {why}"));
        }
        if lm_s_samples.is_empty() {
            return Step::Fail(AuditFailure::InsufficientMeasurements { succeeded: 0, needed: 1 });
        }

        let estimate = match self.estimate(&lm_s_samples, initial_position) {
            Ok(e) => e,
            Err(f) => return Step::Fail(f),
        };
        if !estimate.converged {
            self.diagnostics
                .push(format!("iteration {index}: position fit stopped on its evaluation budget"));
        }
        if estimate.low_confidence {
            self.diagnostics.push(format!(
                "iteration {index}: only {} similar landmark(s), low-confidence estimate",
                estimate.contributing.len()
            ));
        }

        let in_cloud = self.in_cloud();
        if let Err(f) = &in_cloud {
            return Step::Fail(f.clone());
        }

        let step_km = great_circle_km(initial_position, estimate.position);
        Step::Done(Box::new(IterationTrace {
            index,
            initial_position,
            effective_zone_km: zone,
            zone_steps_km,
            lm_a_ids,
            lm_a_samples,
            lm_a_failures,
            interval_percent_used: interval,
            lm_s_ids,
            lm_s_samples,
            estimate,
            step_km,
            in_cloud: in_cloud.ok().flatten(),
        }))
    }

    #[allow(clippy::type_complexity)]
    fn measure(&mut self, targets: &[Landmark]) -> Result<(Vec<DelaySample>, Vec<(String, String)>), AuditFailure> {
        let first = self.take_queries(targets.len());
        let mut ok = Vec::new();
        let mut failed = Vec::new();
        for (id, result) in measure_all(self.backend, targets, first) {
            match result {
                Ok(s) => ok.push(s),
                Err(e) if e.is_fatal() => {
                    return Err(AuditFailure::MeasurementPrivilege { reason: e.to_string() });
                }
                Err(e) => failed.push((id, e.to_string())),
            }
        }
        Ok((ok, failed))
    }

    fn estimate(&self, samples: &[DelaySample], initial: GeoPoint) -> Result<PositionEstimate, AuditFailure> {
        let delays: Vec<(String, f64)> = samples.iter().map(|s| (s.landmark_id.clone(), s.rtt_ms)).collect();
        let weights = normalize_delays(&delays).map_err(|e| AuditFailure::Estimation { reason: e.to_string() })?;
        let points: Vec<WeightedPoint> = weights
            .into_iter()
            .filter_map(|(id, weight)| {
                self.catalog.get(&id).map(|lm| WeightedPoint {
                    id,
                    position: lm.position,
                    weight,
                })
            })
            .collect();
        fit(&points, initial).map_err(|e| AuditFailure::Estimation { reason: e.to_string() })
    }

    fn in_cloud(&mut self) -> Result<Option<InCloudReading>, AuditFailure> {
        let q = self.take_queries(1);
        match self.backend.measure_in_cloud(self.config.proxy_address, q) {
            Ok(r) => {
                if let Some(w) = &r.proxy_error {
                    self.diagnostics.push(w.clone());
                }
                self.in_cloud.push(r.clone());
                Ok(Some(r))
            }
            Err(e) if e.is_fatal() => Err(AuditFailure::MeasurementPrivilege { reason: e.to_string() }),
            Err(e) => {
                self.diagnostics.push(format!("in-cloud measurement failed: {e}"));
                Ok(None)
            }
        }
    }
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

fn summarize_in_cloud(readings: &[InCloudReading]) -> InCloudSummary {
    InCloudSummary {
        samples: readings.len(),
        loopback_rtt_ms: median(readings.iter().map(|r| r.loopback_rtt_ms).collect()),
        proxy_rtt_ms: median(readings.iter().filter_map(|r| r.proxy_rtt_ms).collect()),
    }
}
