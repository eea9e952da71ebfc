//! RIPE Atlas client against a local fixture server.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::thread;

use geofindr::catalog::atlas::AtlasClient;
use geofindr::catalog::{load_catalog, load_mesh, Source, SourceKind};
use geofindr::error::CatalogError;

fn respond(stream: &mut TcpStream, status: &str, body: &str) {
    let _ = write!(
        stream,
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
}

/// Serves fixtures until the process exits; returns the base URL.
fn serve(route: fn(&str, &str) -> Option<String>) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let base_for_thread = base.clone();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            if reader.read_line(&mut request_line).is_err() {
                continue;
            }
            let mut header = String::new();
            while reader.read_line(&mut header).map(|n| n > 2).unwrap_or(false) {
                header.clear();
            }
            let target = request_line.split_whitespace().nth(1).unwrap_or("/").to_string();
            match route(&base_for_thread, &target) {
                Some(body) => respond(&mut stream, "200 OK", &body),
                None => respond(&mut stream, "500 Internal Server Error", "{}"),
            }
        }
    });
    base
}

fn atlas_fixtures(base: &str, target: &str) -> Option<String> {
    let (path, query) = target.split_once('?').unwrap_or((target, ""));
    match path {
        "/api/v2/anchors/" if query.contains("page=2") => Some(
            r#"{"next": null, "results": [
                {"probe": 1003, "ip_v4": "192.0.2.3", "geometry": {"type": "Point", "coordinates": [4.9, 52.37]}},
                {"probe": 1004, "ip_v4": "192.0.2.4", "geometry": {"type": "Point", "coordinates": [2.0, 95.0]}},
                {"probe": 1005, "ip_v4": "192.0.2.5", "is_disabled": true, "geometry": {"type": "Point", "coordinates": [2.0, 45.0]}}
            ]}"#
            .to_string(),
        ),
        "/api/v2/anchors/" => Some(format!(
            r#"{{"next": "{base}/api/v2/anchors/?format=json&page=2", "results": [
                {{"probe": 1001, "ip_v4": "192.0.2.1", "geometry": {{"type": "Point", "coordinates": [2.35, 48.85]}}}},
                {{"probe": 1002, "ip_v4": "192.0.2.2", "geometry": {{"type": "Point", "coordinates": [-0.13, 51.51]}}}}
            ]}}"#
        )),
        "/api/v2/anchor-measurements/" => Some(format!(
            r#"{{"next": null, "results": [
                {{"measurement": "{base}/api/v2/measurements/5001/", "type": "ping", "is_mesh": true}},
                {{"measurement": "{base}/api/v2/measurements/5002/", "type": "ping", "is_mesh": true}},
                {{"measurement": "{base}/api/v2/measurements/5003/", "type": "traceroute", "is_mesh": true}}
            ]}}"#
        )),
        "/api/v2/measurements/5001/latest/" => Some(
            r#"[
                {"af": 4, "prb_id": 1001, "dst_addr": "192.0.2.2", "min": 11.0,
                 "result": [{"rtt": 12.5}, {"rtt": 11.0}, {"x": "*"}]},
                {"af": 4, "prb_id": 1002, "dst_addr": "192.0.2.1", "min": 10.75, "result": [{"x": "*"}]},
                {"af": 4, "prb_id": 1003, "dst_addr": "192.0.2.1", "min": -1, "result": [{"x": "*"}]},
                {"af": 6, "prb_id": 1003, "dst_addr": "2001:db8::1", "min": 3.0, "result": [{"rtt": 3.0}]},
                {"af": 4, "prb_id": 9999, "dst_addr": "192.0.2.1", "min": 7.0, "result": [{"rtt": 7.0}]}
            ]"#
            .to_string(),
        ),
        _ => None,
    }
}

#[test]
fn catalog_follows_pages_and_filters_anchors() {
    let base = serve(atlas_fixtures);
    let (catalog, stats) = AtlasClient::new(&base).fetch_catalog().unwrap();
    let ids: Vec<&str> = catalog.iter().map(|l| l.id.as_str()).collect();
    assert_eq!(ids, ["1001", "1002", "1003"]);
    assert_eq!(catalog.source(), SourceKind::RipeAtlas);
    assert_eq!(stats.accepted, 3);
    assert_eq!(stats.rejected, 1);
    let paris = catalog.get("1001").unwrap();
    assert_eq!((paris.position.lat(), paris.position.lon()), (48.85, 2.35));
    assert_eq!(paris.address, Some("192.0.2.1".parse().unwrap()));
}

#[test]
fn mesh_keeps_ipv4_results_between_known_anchors() {
    let base = serve(atlas_fixtures);
    let client = AtlasClient::new(&base);
    let (catalog, _) = client.fetch_catalog().unwrap();
    let (mesh, stats) = client.fetch_mesh(&catalog).unwrap();
    assert_eq!(mesh.get("1001", "1002"), Some(11.0));
    assert_eq!(mesh.get("1002", "1001"), Some(10.75));
    assert_eq!(mesh.len(), 2);
    // 5002 errors, 1003 has no reply, 9999 is unknown.
    assert_eq!(stats.rejected, 3);
}

#[test]
fn generic_loaders_use_the_atlas_source() {
    let base = serve(atlas_fixtures);
    let source = Source::Atlas { base_url: base };
    let (catalog, _) = load_catalog(&source).unwrap();
    let (mesh, _) = load_mesh(&source, &catalog).unwrap();
    assert_eq!(catalog.len(), 3);
    assert!(!mesh.is_empty());
}

#[test]
fn server_errors_surface_as_http_errors() {
    let base = serve(|_, _| None);
    match AtlasClient::new(&base).fetch_catalog() {
        Err(CatalogError::Http(msg)) => assert!(msg.contains("/api/v2/anchors/"), "{msg}"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn malformed_json_is_a_decode_error() {
    let base = serve(|_, _| Some("{not json".to_string()));
    assert!(matches!(AtlasClient::new(&base).fetch_catalog(), Err(CatalogError::Decode(_))));
}
