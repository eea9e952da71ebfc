//! The fixed set of declared positions used by controlled experiments: the
//! true VM site first, then 23 cities spread from 25 km to over 16 000 km away.

use serde::Deserialize;

use crate::geodesy::GeoPoint;

const DATA: &str = include_str!("../data/declared_positions.csv");

#[derive(Debug, Clone, PartialEq)]
pub struct NamedPosition {
    pub name: String,
    pub position: GeoPoint,
}

#[derive(Deserialize)]
struct Row {
    name: String,
    lat: f64,
    lon: f64,
}

pub fn declared_positions() -> Vec<NamedPosition> {
    csv::Reader::from_reader(DATA.as_bytes())
        .deserialize::<Row>()
        .map(|r| {
            let r = r.expect("bundled positions parse");
            NamedPosition {
                position: GeoPoint::new(r.lat, r.lon).expect("bundled positions are valid"),
                name: r.name,
            }
        })
        .collect()
}

/// Case-insensitive lookup by city name.
pub fn by_name(name: &str) -> Option<NamedPosition> {
    declared_positions().into_iter().find(|p| p.name.eq_ignore_ascii_case(name))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesy::great_circle_km;

    #[test]
    fn twenty_four_positions_truth_first() {
        let all = declared_positions();
        assert_eq!(all.len(), 24);
        assert_eq!(all[0].name, "Evry");
        let mut names: Vec<_> = all.iter().map(|p| p.name.as_str()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 24);
    }

    #[test]
    fn paris_is_closest_to_evry() {
        let all = declared_positions();
        let evry = all[0].position;
        let paris = by_name("paris").unwrap().position;
        let d = great_circle_km(evry, paris);
        assert!((20.0..35.0).contains(&d), "{d}");
        assert!(all[1..].iter().all(|p| great_circle_km(evry, p.position) >= d - 1e-9));
    }
}
