use std::collections::BTreeSet;

use proptest::prelude::*;

use geofindr::catalog::{read_catalog_jsonl, Catalog, Landmark, MeshMatrix, SourceKind};
use geofindr::dispoints::dispoints;
use geofindr::estimate::{fit, normalize_delays, WeightedPoint};
use geofindr::geodesy::{destination_point, great_circle_km, GeoPoint};
use geofindr::probe::sim::{SimBackend, SimWorld};
use geofindr::probe::{measure_all, ProbeBackend};
use geofindr::sectorize::{select_lms_ids, similar_for_one, tally, SimilarityTally};

fn point() -> impl Strategy<Value = GeoPoint> {
    (-80.0f64..80.0, -180.0f64..180.0).prop_map(|(lat, lon)| GeoPoint::new(lat, lon).unwrap())
}

fn catalog_of(points: &[GeoPoint]) -> Catalog {
    let lms = points
        .iter()
        .enumerate()
        .map(|(i, p)| Landmark::new(format!("lm{i:03}"), *p))
        .collect();
    Catalog::new(lms, SourceKind::Synthetic).unwrap()
}

fn sim_world(landmarks: Catalog, vm: GeoPoint, offset: f64, jitter: f64) -> SimWorld {
    SimWorld {
        true_vm_position: vm,
        per_node_offset_ms: landmarks.iter().map(|l| (l.id.clone(), offset)).collect(),
        landmarks,
        speed_km_per_ms: 100.0,
        vm_offset_ms: offset,
        jitter_fraction: jitter,
        seed: 1,
    }
}

proptest! {
    #[test]
    fn near_and_exclude_partition(points in prop::collection::vec(point(), 1..60), center in point(), radius in 0.0f64..5000.0) {
        let catalog = catalog_of(&points);
        let near: BTreeSet<String> = catalog.near(center, radius).iter().map(|l| l.id.clone()).collect();
        let far: BTreeSet<String> = catalog.exclude_zone(center, radius).iter().map(|l| l.id.clone()).collect();
        prop_assert!(near.is_disjoint(&far));
        prop_assert_eq!(near.len() + far.len(), catalog.len());
    }

    #[test]
    fn catalog_loading_is_deterministic(points in prop::collection::vec(point(), 1..30)) {
        let mut jsonl = Vec::new();
        catalog_of(&points).write_jsonl(&mut jsonl).unwrap();
        let (a, _) = read_catalog_jsonl(jsonl.as_slice(), SourceKind::File).unwrap();
        let (b, _) = read_catalog_jsonl(jsonl.as_slice(), SourceKind::File).unwrap();
        prop_assert_eq!(a.landmarks(), b.landmarks());
    }

    #[test]
    fn mesh_holds_only_positive_rtts(entries in prop::collection::vec((0u8..8, 0u8..8, -10.0f64..50.0), 0..80)) {
        let mut mesh = MeshMatrix::new();
        for (a, b, rtt) in &entries {
            mesh.insert(&format!("n{a}"), &format!("n{b}"), *rtt);
        }
        prop_assert!(mesh.iter().all(|(_, _, rtt)| rtt > 0.0 && rtt.is_finite()));
    }

    #[test]
    fn dispoints_subset_and_deterministic(points in prop::collection::vec(point(), 1..80), m in 1usize..12) {
        let catalog = catalog_of(&points);
        prop_assume!(m <= catalog.len());
        let a = dispoints(&catalog, m).unwrap();
        let b = dispoints(&catalog, m).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.selected.len(), m);
        let ids: BTreeSet<&str> = a.selected.iter().map(|l| l.id.as_str()).collect();
        prop_assert_eq!(ids.len(), m);
        prop_assert!(a.selected.iter().all(|l| catalog.get(&l.id) == Some(l)));
    }

    #[test]
    fn quiet_sim_rtt_grows_with_distance(d1 in 0.5f64..5000.0, extra in 0.5f64..5000.0, bearing in 0.0f64..360.0) {
        let vm = GeoPoint::new(10.0, 10.0).unwrap();
        let near = Landmark::new("a", destination_point(vm, bearing, d1));
        let far = Landmark::new("b", destination_point(vm, bearing, d1 + extra));
        let world = sim_world(Catalog::new(vec![near.clone(), far.clone()], SourceKind::Synthetic).unwrap(), vm, 0.0, 0.0);
        let backend = SimBackend::new(world);
        prop_assert!(backend.measure(&near, 0).unwrap().rtt_ms < backend.measure(&far, 1).unwrap().rtt_ms);
    }

    #[test]
    fn measure_all_is_order_independent(points in prop::collection::vec(point(), 1..40), seed in 0u64..1000) {
        let catalog = catalog_of(&points);
        let mut world = sim_world(catalog.clone(), GeoPoint::new(0.0, 0.0).unwrap(), 0.3, 0.1);
        world.seed = seed;
        let backend = SimBackend::new(world);
        let forward = measure_all(&backend, catalog.landmarks(), 5);
        let mut reversed: Vec<Landmark> = catalog.landmarks().to_vec();
        reversed.reverse();
        let backward = measure_all(&backend, &reversed, 5);
        prop_assert_eq!(forward, backward);
    }

    #[test]
    fn wider_interval_never_loses_landmarks(rtts in prop::collection::vec(0.1f64..80.0, 1..30), delay in 0.1f64..80.0, p in 0.0f64..100.0, more in 0.0f64..100.0) {
        let mut mesh = MeshMatrix::new();
        for (i, rtt) in rtts.iter().enumerate() {
            mesh.insert("audit", &format!("x{i}"), *rtt);
        }
        let narrow = similar_for_one(&mesh, "audit", delay, p);
        let wide = similar_for_one(&mesh, "audit", delay, p + more);
        prop_assert!(narrow.is_subset(&wide));
    }

    #[test]
    fn lms_ignores_tally_order(counts in prop::collection::vec((0u8..30, 1usize..6), 0..30)) {
        let mut forward = SimilarityTally::default();
        let mut backward = SimilarityTally::default();
        for (id, n) in &counts {
            let set: BTreeSet<String> = [format!("l{id}")].into();
            for _ in 0..*n {
                forward.add(&set);
            }
        }
        for (id, n) in counts.iter().rev() {
            let set: BTreeSet<String> = [format!("l{id}")].into();
            for _ in 0..*n {
                backward.add(&set);
            }
        }
        prop_assert_eq!(select_lms_ids(&forward), select_lms_ids(&backward));
    }

    #[test]
    fn colocated_landmark_is_similar(points in prop::collection::vec(point(), 4..25), offset in 0.0f64..2.0, p in 1.0f64..50.0) {
        let vm = GeoPoint::new(20.0, 20.0).unwrap();
        let mut all = points.clone();
        all.push(vm);
        let catalog = catalog_of(&all);
        let twin = format!("lm{:03}", all.len() - 1);
        let world = sim_world(catalog.clone(), vm, offset, 0.0);
        let mesh = world.mesh();
        let backend = SimBackend::new(world);
        let audits: Vec<Landmark> = catalog.iter().filter(|l| l.id != twin).cloned().collect();
        let delays: Vec<(String, f64)> = measure_all(&backend, &audits, 0)
            .into_iter()
            .map(|(id, r)| (id, r.unwrap().rtt_ms))
            .collect();
        let lms = select_lms_ids(&tally(&mesh, &delays, p));
        prop_assert!(lms.contains(&twin), "{:?}", lms);
    }

    #[test]
    fn zero_noise_fit_recovers_planted_point(
        bearings in prop::collection::vec(0.0f64..360.0, 3..8),
        radii in prop::collection::vec(20.0f64..600.0, 7),
        planted in (30.0f64..60.0, -10.0f64..30.0),
    ) {
        let p = GeoPoint::new(planted.0, planted.1).unwrap();
        // Spread the bearings so the planted point sits inside the hull.
        let n = bearings.len();
        let lms: Vec<GeoPoint> = bearings
            .iter()
            .enumerate()
            .map(|(i, b)| destination_point(p, (i as f64 * 360.0 / n as f64 + b / 8.0) % 360.0, radii[i]))
            .collect();
        let delays: Vec<(String, f64)> = lms
            .iter()
            .enumerate()
            .map(|(i, lm)| (format!("l{i}"), great_circle_km(p, *lm) / 100.0))
            .collect();
        let points: Vec<WeightedPoint> = normalize_delays(&delays)
            .unwrap()
            .into_iter()
            .map(|(id, weight)| {
                let i: usize = id[1..].parse().unwrap();
                WeightedPoint { id, position: lms[i], weight }
            })
            .collect();
        let start = destination_point(p, 45.0, 150.0);
        let est = fit(&points, start).unwrap();
        prop_assert!(est.smre_km < 1e-3, "{}", est.smre_km);
        // With three landmarks and a free scale, the two delay-ratio circles
        // generally cross twice: both crossings are exact solutions.
        if n >= 4 {
            prop_assert!(great_circle_km(est.position, p) < 1.0, "{} vs {}", est.position, p);
        }
    }
}
