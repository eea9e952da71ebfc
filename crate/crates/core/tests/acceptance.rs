//! Acceptance criteria. Every test prints one `acceptance` line (PASS, FAIL
//! or NOT RUN) on stderr, bypassing the test harness capture, then asserts.
//!
//! Run with `cargo test -p geofindr-core --test acceptance`.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use geofindr::audit::{run_audit, AccuracyRecord, AuditConfig, AuditReport, BackendKind};
use geofindr::catalog::{Catalog, Landmark, MeshMatrix, SourceKind};
use geofindr::dispoints::{dispoints, pairwise_sum};
use geofindr::estimate::{fit, WeightedPoint};
use geofindr::geodesy::{great_circle_km, GeoPoint};
use geofindr::positions::declared_positions;
use geofindr::probe::sim::{evry, OffsetModel, SimBackend, SimWorld, WorldSpec};

const SEED: u64 = 7;

const C2_MAX_KM: f64 = 25.0;
const C2_MAX_RUNTIME: Duration = Duration::from_secs(10);
const C3_MEDIAN_KM: f64 = 50.0;
const C3_MIN_SATISFACTORY: usize = 20;
const C4_LIE_TRACKING: f64 = 0.05;
const C5_DEADZONE_RADIUS_KM: f64 = 100.0;
const C5_NEAREST_SURVIVOR_KM: f64 = 135.0;
const C5_MEDIAN_KM: f64 = 50.0;
const C5_LIE_TRACKING: f64 = 0.10;
const C6_INSTANCES: usize = 100;
const C6_N: usize = 200;
const C6_M: usize = 10;
const C6_MIN_WINS: usize = 95;
const C6_MC_SUBSETS: usize = 1000;
const C6_MAX_TIME_RATIO: f64 = 3.0;
const C7_INSTANCES: usize = 50;
const C7_GRID_DEG: f64 = 0.02;
const C7_J_RATIO: f64 = 1.0001;
const C7_ZERO_NOISE_SMRE_KM: f64 = 1e-3;
const C8_MIN_ANCHORS: usize = 500;
const C8_MAX_AUDIT: Duration = Duration::from_secs(600);

fn line(criterion: u32, title: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "acceptance C{criterion} {verdict} {title}: {detail}");
}

/// Homogeneous 0.1 ms offsets, no jitter.
fn quiet_world() -> SimWorld {
    WorldSpec::paris_dense(0.0, OffsetModel::Homogeneous { ms: 0.1 }, SEED)
        .generate()
        .unwrap()
}

/// 10% jitter, per-node offsets uniform in [0, 0.2] ms.
fn noisy_world() -> SimWorld {
    WorldSpec::paris_dense(0.1, OffsetModel::Uniform { min_ms: 0.0, max_ms: 0.2 }, SEED)
        .generate()
        .unwrap()
}

struct Run {
    name: String,
    report: AuditReport,
    truth: AccuracyRecord,
}

fn audit_all(world: SimWorld) -> Vec<Run> {
    let catalog = world.landmarks.clone();
    let mesh = world.mesh();
    let truth = world.true_vm_position;
    let backend = SimBackend::new(world);
    declared_positions()
        .into_iter()
        .map(|p| {
            let cfg = AuditConfig::new(p.position, BackendKind::Sim);
            let mut report = run_audit(&cfg, &catalog, &mesh, &backend);
            let truth = report.attach_truth(truth);
            Run {
                name: p.name,
                report,
                truth,
            }
        })
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn accuracies(runs: &[Run]) -> Vec<f64> {
    runs.iter().map(|r| r.truth.distance_real_estimated_km).collect()
}

/// `|mean lie estimation − mean lie extent| / mean lie extent` over the false declarations.
fn lie_tracking(runs: &[Run]) -> f64 {
    let lies: Vec<&Run> = runs.iter().filter(|r| r.truth.distance_real_declared_km > 0.0).collect();
    let n = lies.len() as f64;
    let extent = lies.iter().map(|r| r.truth.distance_real_declared_km).sum::<f64>() / n;
    let estimation = lies.iter().map(|r| r.truth.distance_estimated_declared_km).sum::<f64>() / n;
    (estimation - extent).abs() / extent
}

#[test]
fn c1_feasibility_statement() {
    // Headline live-network accuracies need real anchors and a real VM; they
    // are covered by the simulated criteria below and the manual live smoke.
    let positions = declared_positions();
    let pass = positions.len() == 24 && positions[0].position == evry();
    line(
        1,
        "feasibility",
        pass,
        "live-network accuracy figures are not reproducible offline; replaced by simulated C2-C7, C9 and manual C8",
    );
    assert!(pass);
}

#[test]
fn c2_zero_noise_recovery() {
    let started = Instant::now();
    let runs = audit_all(quiet_world());
    let elapsed = started.elapsed();
    let worst = runs
        .iter()
        .max_by(|a, b| a.truth.distance_real_estimated_km.total_cmp(&b.truth.distance_real_estimated_km))
        .unwrap();
    let pass = worst.truth.distance_real_estimated_km <= C2_MAX_KM && elapsed < C2_MAX_RUNTIME;
    line(
        2,
        "zero-noise recovery",
        pass,
        &format!(
            "worst {:.2} km ({}) <= {C2_MAX_KM} km over {} runs, total {:.2?} < {C2_MAX_RUNTIME:?}",
            worst.truth.distance_real_estimated_km,
            worst.name,
            runs.len(),
            elapsed
        ),
    );
    assert!(pass);
}

#[test]
fn c3_noisy_recovery() {
    let runs = audit_all(noisy_world());
    let acc = accuracies(&runs);
    let med = median(acc.clone());
    let satisfactory = runs.iter().filter(|r| r.truth.satisfactory).count();
    let pass = med <= C3_MEDIAN_KM && satisfactory >= C3_MIN_SATISFACTORY;
    line(
        3,
        "noisy recovery",
        pass,
        &format!("median {med:.2} km <= {C3_MEDIAN_KM} km, satisfactory {satisfactory}/24 >= {C3_MIN_SATISFACTORY}"),
    );
    assert!(pass);
}

#[test]
fn c4_lie_estimation_tracks_extent() {
    let runs = audit_all(noisy_world());
    let lies: Vec<&Run> = runs.iter().filter(|r| r.truth.distance_real_declared_km > 0.0).collect();
    assert_eq!(lies.len(), 23);
    let tracking = lie_tracking(&runs);
    let missed: Vec<String> = lies
        .iter()
        .filter(|r| !r.truth.lie_detected)
        .map(|r| {
            format!(
                "{} (extent {:.1} km, estimation {:.1} km)",
                r.name, r.truth.distance_real_declared_km, r.truth.distance_estimated_declared_km
            )
        })
        .collect();
    let detected = lies.len() - missed.len();
    let pass = tracking <= C4_LIE_TRACKING && missed.is_empty();
    line(
        4,
        "lie tracking",
        pass,
        &format!(
            "relative gap {:.3}% <= {}%, lie_detected {detected}/23; missed: [{}]",
            tracking * 100.0,
            C4_LIE_TRACKING * 100.0,
            missed.join(", ")
        ),
    );
    assert!(pass);
}

#[test]
fn c5_dead_zone_degradation() {
    let dense = noisy_world();
    let truth = dense.true_vm_position;
    let survivors = dense.landmarks.exclude_zone(truth, C5_DEADZONE_RADIUS_KM);
    let dead = dense.with_landmarks(survivors);
    let nearest = dead.landmarks.nearest_km(truth).unwrap();

    let dense_runs = audit_all(dense);
    let dead_runs = audit_all(dead);
    let med = median(accuracies(&dead_runs));
    let tracking = lie_tracking(&dead_runs);
    let iterations = |runs: &[Run]| runs.iter().map(|r| r.report.nb_iterations).sum::<usize>();
    // Simulated audits finish in CPU time; the network time they would have
    // waited on is the comparable duration.
    let probe_time = |runs: &[Run]| runs.iter().map(|r| r.report.probe_time_ms).sum::<f64>();
    let (it_dense, it_dead) = (iterations(&dense_runs), iterations(&dead_runs));
    let (t_dense, t_dead) = (probe_time(&dense_runs), probe_time(&dead_runs));

    let checks = [
        ("nearest survivor", nearest >= C5_NEAREST_SURVIVOR_KM),
        ("median accuracy", med > C5_MEDIAN_KM),
        ("lie tracking", tracking <= C5_LIE_TRACKING),
        ("iterations", it_dead > it_dense),
        ("audit time", t_dead > t_dense),
    ];
    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    let pass = failed.is_empty();
    line(
        5,
        "dead-zone degradation",
        pass,
        &format!(
            "nearest survivor {nearest:.1} km >= {C5_NEAREST_SURVIVOR_KM}; median {med:.2} km > {C5_MEDIAN_KM}; \
             lie gap {:.3}% <= {}%; iterations {it_dense} -> {it_dead}; probe time {:.1} s -> {:.1} s; failing: {failed:?}",
            tracking * 100.0,
            C5_LIE_TRACKING * 100.0,
            t_dense / 1000.0,
            t_dead / 1000.0
        ),
    );
    assert!(pass);
}

fn random_catalog(rng: &mut ChaCha8Rng, n: usize) -> Catalog {
    let lms = (0..n)
        .map(|i| {
            let p = GeoPoint::new(rng.gen_range(35.0..65.0), rng.gen_range(-10.0..30.0)).unwrap();
            Landmark::new(format!("p{i:06}"), p)
        })
        .collect();
    Catalog::new(lms, SourceKind::Synthetic).unwrap()
}

fn best_of<F: FnMut()>(reps: usize, mut f: F) -> Duration {
    (0..reps)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed()
        })
        .min()
        .unwrap()
}

#[test]
fn c6_dispoints_quality_and_complexity() {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut wins = 0;
    for _ in 0..C6_INSTANCES {
        let catalog = random_catalog(&mut rng, C6_N);
        let greedy = dispoints(&catalog, C6_M).unwrap().dispersion_score;
        let lms = catalog.landmarks();
        let mc_mean = (0..C6_MC_SUBSETS)
            .map(|_| {
                let idx = rand::seq::index::sample(&mut rng, C6_N, C6_M);
                let subset: Vec<GeoPoint> = idx.iter().map(|i| lms[i].position).collect();
                pairwise_sum(&subset, |a, b| great_circle_km(*a, *b))
            })
            .sum::<f64>()
            / C6_MC_SUBSETS as f64;
        if greedy >= mc_mean {
            wins += 1;
        }
    }

    let small = random_catalog(&mut rng, 20_000);
    let large = random_catalog(&mut rng, 40_000);
    let t_small = best_of(5, || {
        dispoints(&small, C6_M).unwrap();
    });
    let t_large = best_of(5, || {
        dispoints(&large, C6_M).unwrap();
    });
    let ratio = t_large.as_secs_f64() / t_small.as_secs_f64();

    let pass = wins >= C6_MIN_WINS && ratio < C6_MAX_TIME_RATIO;
    line(
        6,
        "dispoints quality and complexity",
        pass,
        &format!(
            "greedy >= random-subset mean in {wins}/{C6_INSTANCES} (need {C6_MIN_WINS}); \
             time n=40000 / n=20000 = {ratio:.2} < {C6_MAX_TIME_RATIO} ({t_large:.2?} / {t_small:.2?})"
        ),
    );
    assert!(pass);
}

/// Independent haversine for the grid oracle.
fn oracle_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (la1, lo1, la2, lo2) = (a.0.to_radians(), a.1.to_radians(), b.0.to_radians(), b.1.to_radians());
    let h = ((la2 - la1) / 2.0).sin().powi(2) + la1.cos() * la2.cos() * ((lo2 - lo1) / 2.0).sin().powi(2);
    2.0 * 6371.0 * h.sqrt().min(1.0).asin()
}

/// Exhaustive minimum of J over the box on a `step`-degree lattice, with the
/// scale profiled out by least squares at each node.
fn grid_min_j(lms: &[((f64, f64), f64)], lat0: f64, lon0: f64, side: f64, step: f64) -> f64 {
    let cells = (side / step).round() as usize;
    let mut best = f64::INFINITY;
    let mut d = vec![0.0; lms.len()];
    for i in 0..=cells {
        let lat = lat0 + i as f64 * step;
        for j in 0..=cells {
            let lon = lon0 + j as f64 * step;
            for (k, (p, _)) in lms.iter().enumerate() {
                d[k] = oracle_km((lat, lon), *p);
            }
            let dw: f64 = lms.iter().zip(&d).map(|((_, w), d)| d * w).sum();
            let ww: f64 = lms.iter().map(|(_, w)| w * w).sum();
            let s = (dw / ww).max(0.0);
            let j_val: f64 = lms.iter().zip(&d).map(|((_, w), d)| (d - s * w).powi(2)).sum();
            best = best.min(j_val);
        }
    }
    best
}

#[test]
fn c7_estimator_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (lat0, lon0, side) = (40.0, 0.0, 10.0);
    let mut worst_ratio: f64 = 0.0;
    let mut worst_smre: f64 = 0.0;
    let mut bad = 0;
    for instance in 0..C7_INSTANCES {
        let zero_noise = instance % 2 == 0;
        let n = rng.gen_range(3..=6);
        let planted = (rng.gen_range(lat0 + 2.0..lat0 + side - 2.0), rng.gen_range(lon0 + 2.0..lon0 + side - 2.0));
        let raw: Vec<((f64, f64), f64)> = (0..n)
            .map(|_| {
                let p = (rng.gen_range(lat0..lat0 + side), rng.gen_range(lon0..lon0 + side));
                let d = oracle_km(planted, p).max(1.0);
                let noise = if zero_noise { 1.0 } else { rng.gen_range(0.7..1.3) };
                (p, d * noise)
            })
            .collect();
        let max = raw.iter().map(|(_, d)| *d).fold(0.0, f64::max);
        let lms: Vec<((f64, f64), f64)> = raw.iter().map(|(p, d)| (*p, d / max)).collect();
        let points: Vec<WeightedPoint> = lms
            .iter()
            .enumerate()
            .map(|(i, (p, w))| WeightedPoint {
                id: format!("l{i}"),
                position: GeoPoint::new(p.0, p.1).unwrap(),
                weight: *w,
            })
            .collect();
        let guess = GeoPoint::new(lat0 + side / 2.0, lon0 + side / 2.0).unwrap();
        let est = fit(&points, guess).unwrap();
        let j_fit = est.smre_km.powi(2) * n as f64;
        let j_grid = grid_min_j(&lms, lat0, lon0, side, C7_GRID_DEG);
        let ok_j = j_fit <= C7_J_RATIO * j_grid;
        let ok_smre = !zero_noise || est.smre_km < C7_ZERO_NOISE_SMRE_KM;
        if j_grid > 0.0 {
            worst_ratio = worst_ratio.max(j_fit / j_grid);
        }
        if zero_noise {
            worst_smre = worst_smre.max(est.smre_km);
        }
        if !(ok_j && ok_smre) {
            bad += 1;
        }
    }
    let pass = bad == 0;
    line(
        7,
        "estimator oracle equivalence",
        pass,
        &format!(
            "{bad} of {C7_INSTANCES} instances off; worst J/J_grid {worst_ratio:.6} <= {C7_J_RATIO}; \
             worst zero-noise smre {worst_smre:.2e} km < {C7_ZERO_NOISE_SMRE_KM}"
        ),
    );
    assert!(pass);
}

#[test]
fn c8_live_smoke_status() {
    let _ = writeln!(
        std::io::stderr(),
        "acceptance C8 NOT RUN live smoke: manual, needs network and ICMP privileges; \
         run `cargo test -p geofindr-core --test acceptance -- --ignored c8_live_smoke`"
    );
}

#[test]
#[ignore = "live network: RIPE Atlas API and ICMP privileges"]
fn c8_live_smoke() {
    use geofindr::catalog::atlas::{base_url_from_env, AtlasClient};
    use geofindr::probe::icmp::{IcmpBackend, IcmpConfig};

    let client = AtlasClient::new(base_url_from_env());
    let (catalog, _) = client.fetch_catalog().expect("anchor list");
    let (mesh, _) = client.fetch_mesh(&catalog).expect("anchor mesh");
    let declared = std::env::var("GEOFINDR_DECLARED")
        .ok()
        .map(|s| s.parse().expect("GEOFINDR_DECLARED as lat,lon"))
        .unwrap_or_else(evry);
    let backend = IcmpBackend::new(IcmpConfig::default());
    let started = Instant::now();
    let report = run_audit(&AuditConfig::new(declared, BackendKind::Icmp), &catalog, &mesh, &backend);
    let elapsed = started.elapsed();
    let pass = catalog.len() >= C8_MIN_ANCHORS && report.converged && elapsed < C8_MAX_AUDIT;
    line(
        8,
        "live smoke",
        pass,
        &format!(
            "{} anchors >= {C8_MIN_ANCHORS}; converged {}; audit {elapsed:.1?} < {C8_MAX_AUDIT:?}",
            catalog.len(),
            report.converged
        ),
    );
    assert!(pass);
}

fn canonical_json(mut report: AuditReport) -> Vec<u8> {
    report.audit_time_s = 0.0;
    serde_json::to_vec(&report).unwrap()
}

fn audit_in_pool(threads: usize, world: &SimWorld, catalog: &Catalog, mesh: &MeshMatrix, declared: GeoPoint) -> Vec<u8> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    let backend = SimBackend::new(world.clone());
    let cfg = AuditConfig::new(declared, BackendKind::Sim);
    canonical_json(pool.install(|| run_audit(&cfg, catalog, mesh, &backend)))
}

#[test]
fn c9_determinism() {
    let mut mismatches = Vec::new();
    let positions = declared_positions();
    for p in positions.iter().filter(|p| ["Evry", "Madrid", "Tokyo"].contains(&p.name.as_str())) {
        // Each run regenerates the world from its seed.
        let outputs: Vec<Vec<u8>> = [1, 4, 4]
            .iter()
            .map(|&threads| {
                let world = noisy_world();
                let mesh = world.mesh();
                audit_in_pool(threads, &world, &world.landmarks, &mesh, p.position)
            })
            .collect();
        if outputs.windows(2).any(|w| w[0] != w[1]) {
            mismatches.push(p.name.clone());
        }
    }
    let pass = mismatches.is_empty();
    line(
        9,
        "determinism",
        pass,
        &format!("3 declared positions x 3 re-runs (1 and 4 threads) byte-identical; mismatches: {mismatches:?}"),
    );
    assert!(pass);
}
