//! One-parameter sweeps: every (value, declared position, repetition) triple is
//! an independent audit, written as one CSV row, followed by mean and standard
//! deviation rows per value.

use std::io::Write;

use anyhow::Result;
use rayon::prelude::*;

use geofindr::audit::{AuditConfig, AuditReport, AuditStatus};
use geofindr::{run_audit, GeoPoint};

use crate::args::SweepParameter;
use crate::inputs::{sim_backend, Inputs};
use crate::UsageError;

pub const COLUMNS: [&str; 15] = [
    "row_kind",
    "parameter",
    "value",
    "position",
    "declared_lat",
    "declared_lon",
    "repetition",
    "runs",
    "accuracy_km",
    "distance_estimated_declared_km",
    "audit_time_s",
    "nb_iterations",
    "converged",
    "lie_detected",
    "status",
];

/// Parses `"1,10,25"` or the inclusive range `"5..105:10"`.
pub fn parse_values(s: &str) -> Result<Vec<f64>, UsageError> {
    let bad = || UsageError(format!("cannot parse value list {s:?}"));
    let s = s.trim();
    let values = if let Some((range, step)) = s.split_once(':') {
        let (start, end) = range.split_once("..").ok_or_else(bad)?;
        let start: f64 = start.trim().parse().map_err(|_| bad())?;
        let end: f64 = end.trim().parse().map_err(|_| bad())?;
        let step: f64 = step.trim().parse().map_err(|_| bad())?;
        if !(step.is_finite() && step > 0.0) {
            return Err(UsageError(format!("step must be positive in {s:?}")));
        }
        // Counting steps avoids accumulating rounding error over long ranges.
        let n = ((end - start) / step + 1e-9).floor();
        if n < 0.0 {
            Vec::new()
        } else {
            (0..=n as usize).map(|i| start + i as f64 * step).collect()
        }
    } else {
        s.split(',')
            .map(str::trim)
            .filter(|v| !v.is_empty())
            .map(|v| v.parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_, _>>()?
    };
    if values.is_empty() {
        return Err(UsageError("the sweep value list is empty".into()));
    }
    Ok(values)
}

pub fn apply(parameter: SweepParameter, value: f64, cfg: &mut AuditConfig) -> Result<(), UsageError> {
    match parameter {
        SweepParameter::Tolerance => cfg.tolerance_km = value,
        SweepParameter::ZoneSize => cfg.zone_size_km = value,
        SweepParameter::IntervalPercent => cfg.interval_percent = value,
        SweepParameter::NbLm => {
            if value.fract() != 0.0 || value < 1.0 {
                return Err(UsageError(format!("nb_lm values must be positive integers, got {value}")));
            }
            cfg.nb_lm = value as usize;
        }
    }
    cfg.validate().map_err(UsageError)
}

pub struct Plan {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    pub positions: Vec<(String, GeoPoint)>,
    pub repetitions: usize,
    pub base: AuditConfig,
    pub parallel: usize,
}

struct Run {
    value: f64,
    position: usize,
    repetition: usize,
    config: AuditConfig,
}

struct Outcome {
    report: AuditReport,
    accuracy_km: Option<f64>,
    audit_time_s: f64,
}

pub fn run(plan: &Plan, inputs: &Inputs, out: impl Write) -> Result<()> {
    let mut runs = Vec::new();
    for &value in &plan.values {
        for (p, (_, declared)) in plan.positions.iter().enumerate() {
            for repetition in 0..plan.repetitions {
                let mut config = plan.base.clone();
                config.declared_position = *declared;
                apply(plan.parameter, value, &mut config)?;
                runs.push(Run {
                    value,
                    position: p,
                    repetition,
                    config,
                });
            }
        }
    }
    let execute = |(index, run): (usize, &Run)| -> Outcome {
        let mut report = match (&inputs.world, &inputs.backend) {
            (Some(world), _) => {
                let mut world = world.clone();
                world.seed = world.seed.wrapping_add(index as u64);
                run_audit(&run.config, &inputs.catalog, &inputs.mesh, &sim_backend(&world))
            }
            (None, Some(backend)) => run_audit(&run.config, &inputs.catalog, &inputs.mesh, backend.as_ref()),
            (None, None) => unreachable!("inputs always carry a world or a backend"),
        };
        let accuracy_km = inputs.truth.map(|t| report.attach_truth(t).distance_real_estimated_km);
        // Simulated audits report their virtual probing time so reruns match.
        let audit_time_s = if inputs.world.is_some() {
            report.probe_time_ms / 1000.0
        } else {
            report.audit_time_s
        };
        log::info!("run {index}: {:?} after {} iterations", report.status, report.nb_iterations);
        Outcome {
            report,
            accuracy_km,
            audit_time_s,
        }
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(plan.parallel.max(1)).build()?;
    let outcomes: Vec<Outcome> = pool.install(|| runs.par_iter().enumerate().map(execute).collect());

    let mut w = csv::Writer::from_writer(out);
    w.write_record(COLUMNS)?;
    let name = plan.parameter.name();
    let per_value = plan.positions.len() * plan.repetitions;
    for (group_runs, group) in runs.chunks(per_value).zip(outcomes.chunks(per_value)) {
        let value = group_runs[0].value;
        for (run, o) in group_runs.iter().zip(group) {
            let (label, declared) = &plan.positions[run.position];
            let r = &o.report;
            w.write_record([
                "run".to_string(),
                name.to_string(),
                value.to_string(),
                label.clone(),
                declared.lat().to_string(),
                declared.lon().to_string(),
                run.repetition.to_string(),
                "1".to_string(),
                opt(o.accuracy_km),
                r.distance_estimated_declared_km.to_string(),
                o.audit_time_s.to_string(),
                r.nb_iterations.to_string(),
                r.converged.to_string(),
                r.lie_detected.to_string(),
                status(r),
            ])?;
        }
        // Failed runs carry no estimate worth averaging.
        let ok: Vec<&Outcome> = group.iter().filter(|o| o.report.status != AuditStatus::Failed).collect();
        let column = |f: &dyn Fn(&Outcome) -> Option<f64>| -> Vec<f64> { ok.iter().filter_map(|o| f(o)).collect() };
        let stats = [
            column(&|o| o.accuracy_km),
            column(&|o| Some(o.report.distance_estimated_declared_km)),
            column(&|o| Some(o.audit_time_s)),
            column(&|o| Some(o.report.nb_iterations as f64)),
            column(&|o| Some(f64::from(u8::from(o.report.converged)))),
            column(&|o| Some(f64::from(u8::from(o.report.lie_detected)))),
        ];
        for (kind, summarize) in [("mean", mean as fn(&[f64]) -> Option<f64>), ("stddev", stddev)] {
            let mut record = vec![
                kind.to_string(),
                name.to_string(),
                value.to_string(),
                "*".to_string(),
                String::new(),
                String::new(),
                String::new(),
                ok.len().to_string(),
            ];
            record.extend(stats.iter().map(|s| opt(summarize(s))));
            record.push(String::new());
            w.write_record(&record)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn status(r: &AuditReport) -> String {
    match (&r.status, &r.failure) {
        (AuditStatus::Converged, _) => "converged".into(),
        (AuditStatus::NotConverged, _) => "not_converged".into(),
        (AuditStatus::Failed, Some(f)) => {
            let v = serde_json::to_value(f).unwrap_or_default();
            format!("failed:{}", v["kind"].as_str().unwrap_or("unknown"))
        }
        (AuditStatus::Failed, None) => "failed".into(),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Sample standard deviation; 0 for a single value.
fn stddev(xs: &[f64]) -> Option<f64> {
    let m = mean(xs)?;
    if xs.len() < 2 {
        return Some(0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    Some((ss / (xs.len() - 1) as f64).sqrt())
}
