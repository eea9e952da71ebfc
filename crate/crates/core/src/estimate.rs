//! Position estimation from the similar landmarks.
//!
//! Delays to the similar landmarks are normalized into weights `w_i ∈ (0, 1]`.
//! The estimate is the point `p` and distance scale `s ≥ 0` minimizing
//!
//! ```text
//! J(p, s) = Σ_i (d(p, lm_i) − s·w_i)²
//! ```
//!
//! i.e. the point closest, in the least-squares sense, to the circles of radius
//! `s·w_i` around each landmark. `smre = sqrt(J / n)` is zero for a perfect
//! intersection. The search runs over `(lat, lon, ln s)` with a multi-start
//! Nelder-Mead simplex, and `s` is finally set to its closed-form optimum for
//! the returned position.

use serde::{Deserialize, Serialize};

use crate::error::EstimateError;
use crate::geodesy::{great_circle_km, interpolate, spherical_centroid, GeoPoint};
use crate::simplex::{self, SimplexOptions};

/// A landmark position with its normalized delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedPoint {
    pub id: String,
    pub position: GeoPoint,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionEstimate {
    pub position: GeoPoint,
    pub smre_km: f64,
    /// Kilometers per unit of normalized delay. Zero only in the
    /// single-landmark fallback, where no distance information exists.
    pub scale_km_per_unit: f64,
    pub contributing: Vec<(String, f64)>,
    /// The local search met its stationarity test within budget.
    pub converged: bool,
    /// Fewer than three distinct landmarks were available.
    pub low_confidence: bool,
    pub evaluations: usize,
}

/// `weight_i = rtt_i / max_j rtt_j`, ordered by id.
pub fn normalize_delays(delays: &[(String, f64)]) -> Result<Vec<(String, f64)>, EstimateError> {
    if delays.is_empty() {
        return Err(EstimateError::Empty);
    }
    if let Some((id, _)) = delays.iter().find(|(_, r)| !(r.is_finite() && *r > 0.0)) {
        return Err(EstimateError::NonPositiveDelay(id.clone()));
    }
    let max = delays.iter().map(|(_, r)| *r).fold(f64::MIN, f64::max);
    let mut out: Vec<(String, f64)> = delays.iter().map(|(id, r)| (id.clone(), r / max)).collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

/// `J(p, s)` for the given points.
pub fn objective(points: &[WeightedPoint], position: GeoPoint, scale: f64) -> f64 {
    points
        .iter()
        .map(|lm| {
            let r = great_circle_km(position, lm.position) - scale * lm.weight;
            r * r
        })
        .sum()
}

/// Scale minimizing `J(position, ·)`.
pub fn best_scale(points: &[WeightedPoint], position: GeoPoint) -> f64 {
    let (num, den) = points.iter().fold((0.0, 0.0), |(n, d), lm| {
        (n + great_circle_km(position, lm.position) * lm.weight, d + lm.weight * lm.weight)
    });
    if den > 0.0 {
        (num / den).max(0.0)
    } else {
        0.0
    }
}

pub fn smre_km(points: &[WeightedPoint], position: GeoPoint, scale: f64) -> f64 {
    (objective(points, position, scale) / points.len() as f64).sqrt()
}

/// Total evaluation budget for one fit.
const EVAL_BUDGET: usize = 10_000;
/// Landmark positions tried as extra starting points.
const MAX_LANDMARK_STARTS: usize = 8;
/// Nodes per side of the coarse lattice scanned for starting points.
const LATTICE_SIDE: usize = 16;
const LATTICE_STARTS: usize = 3;

pub fn fit(points: &[WeightedPoint], initial_guess: GeoPoint) -> Result<PositionEstimate, EstimateError> {
    if points.is_empty() {
        return Err(EstimateError::Empty);
    }
    if let Some(lm) = points.iter().find(|lm| !(lm.weight.is_finite() && lm.weight > 0.0)) {
        return Err(EstimateError::NonPositiveDelay(lm.id.clone()));
    }
    let contributing: Vec<(String, f64)> = points.iter().map(|lm| (lm.id.clone(), lm.weight)).collect();
    let first = points[0].position;
    let distinct = points.iter().any(|lm| lm.position != first);

    if points.len() == 1 || !distinct {
        return Ok(degenerate(points, first, 0.0, contributing));
    }
    if points.len() == 2 {
        let (a, b) = (&points[0], &points[1]);
        let d = great_circle_km(a.position, b.position);
        let t = a.weight / (a.weight + b.weight);
        let scale = d / (a.weight + b.weight);
        return Ok(degenerate(points, interpolate(a.position, b.position, t), scale, contributing));
    }

    let mut starts = vec![initial_guess];
    starts.extend(spherical_centroid(points.iter().map(|lm| (lm.position, 1.0))));
    starts.extend(spherical_centroid(points.iter().map(|lm| (lm.position, 1.0 / lm.weight))));
    let mut by_weight: Vec<&WeightedPoint> = points.iter().collect();
    by_weight.sort_by(|a, b| a.weight.total_cmp(&b.weight).then_with(|| a.id.cmp(&b.id)));
    starts.extend(by_weight.iter().take(MAX_LANDMARK_STARTS).map(|lm| lm.position));
    starts.extend(lattice_starts(points));

    let spread_deg = points
        .iter()
        .map(|lm| great_circle_km(lm.position, first))
        .fold(0.0, f64::max)
        / 111.2;
    let step_deg = (spread_deg * 0.25).clamp(0.02, 20.0);

    let j = |x: &[f64; 3]| objective(points, GeoPoint::clamped(x[0], x[1]), x[2].exp());
    let per_start = SimplexOptions {
        max_evals: EVAL_BUDGET / (starts.len() + 2),
        f_tol: 1e-12,
        x_tol: 1e-10,
    };

    let mut evaluations = 0;
    let mut best: Option<simplex::SimplexResult<3>> = None;
    for start in &starts {
        let s0 = initial_scale(points, *start);
        let r = simplex::minimize(j, [start.lat(), start.lon(), s0.ln()], [step_deg, step_deg, 0.2], per_start);
        evaluations += r.evals;
        if best.as_ref().is_none_or(|b| r.fx < b.fx) {
            best = Some(r);
        }
    }
    // Restart from the winner to get past a collapsed simplex.
    let mut best = best.expect("at least one start");
    let polish_opts = SimplexOptions {
        max_evals: EVAL_BUDGET.saturating_sub(evaluations).max(per_start.max_evals),
        ..per_start
    };
    let polished = simplex::minimize(j, best.x, [step_deg * 0.01, step_deg * 0.01, 0.01], polish_opts);
    evaluations += polished.evals;
    if polished.fx <= best.fx {
        best = polished;
    }

    let position = GeoPoint::clamped(best.x[0], best.x[1]);
    let mut scale = best.x[2].exp();
    let refined = best_scale(points, position);
    if objective(points, position, refined) <= objective(points, position, scale) {
        scale = refined;
    }
    Ok(PositionEstimate {
        position,
        smre_km: smre_km(points, position, scale),
        scale_km_per_unit: scale,
        contributing,
        converged: polished.converged,
        low_confidence: false,
        evaluations,
    })
}

/// Best nodes of a coarse lattice over the landmarks' bounding box, widened
/// by half its span on each side, with the scale profiled out.
fn lattice_starts(points: &[WeightedPoint]) -> Vec<GeoPoint> {
    let lats = points.iter().map(|lm| lm.position.lat());
    let (lat_lo, lat_hi) = lats.fold((f64::MAX, f64::MIN), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let lons: Vec<f64> = points.iter().map(|lm| lm.position.lon()).collect();
    let (lon_lo, lon_hi) = lons.iter().fold((f64::MAX, f64::MIN), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    // Longitude spans over 180° are treated as the whole circle.
    let (lon_lo, lon_span) = if lon_hi - lon_lo > 180.0 { (-180.0, 360.0) } else { (lon_lo, lon_hi - lon_lo) };
    let lat_pad = ((lat_hi - lat_lo) * 0.5).max(0.5);
    let lon_pad = (lon_span * 0.5).max(0.5);
    let (lat_a, lat_b) = ((lat_lo - lat_pad).max(-90.0), (lat_hi + lat_pad).min(90.0));
    let (lon_a, lon_b) = (lon_lo - lon_pad, lon_lo + lon_span + lon_pad);

    let step = |a: f64, b: f64, i: usize| a + (b - a) * i as f64 / (LATTICE_SIDE - 1) as f64;
    let mut scored: Vec<(f64, GeoPoint)> = Vec::with_capacity(LATTICE_SIDE * LATTICE_SIDE);
    for i in 0..LATTICE_SIDE {
        for j in 0..LATTICE_SIDE {
            let p = GeoPoint::clamped(step(lat_a, lat_b, i), step(lon_a, lon_b, j));
            scored.push((objective(points, p, best_scale(points, p)), p));
        }
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    scored.into_iter().take(LATTICE_STARTS).map(|(_, p)| p).collect()
}

/// `s₀ = mean_i d(start, lm_i) / w_i`, kept strictly positive.
fn initial_scale(points: &[WeightedPoint], start: GeoPoint) -> f64 {
    let s0 = points
        .iter()
        .map(|lm| great_circle_km(start, lm.position) / lm.weight)
        .sum::<f64>()
        / points.len() as f64;
    if s0 > 1e-9 {
        s0
    } else {
        1.0
    }
}

fn degenerate(points: &[WeightedPoint], position: GeoPoint, scale: f64, contributing: Vec<(String, f64)>) -> PositionEstimate {
    PositionEstimate {
        position,
        smre_km: smre_km(points, position, scale),
        scale_km_per_unit: scale,
        contributing,
        converged: true,
        low_confidence: true,
        evaluations: 0,
    }
}
