use std::path::{Path, PathBuf};

use smtj_ising::tsplib::{self, EdgeWeightType};
use smtj_ising::Error;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("data")
        .join(name)
}

const ST70_OPTIMAL: [usize; 70] = [
    52, 5, 40, 42, 16, 8, 39, 60, 38, 24, 44, 45, 26, 67, 43, 29, 19, 13, 27, 48, 54, 25, 7, 2, 31,
    41, 17, 3, 1, 6, 18, 23, 14, 56, 62, 65, 21, 58, 37, 30, 68, 34, 69, 12, 28, 35, 0, 22, 15, 46,
    36, 57, 49, 50, 55, 64, 63, 10, 66, 47, 53, 61, 32, 33, 20, 11, 59, 51, 9, 4,
];

const BERLIN52_OPTIMAL: [usize; 52] = [
    47, 37, 36, 39, 38, 35, 34, 33, 43, 45, 15, 28, 49, 19, 22, 29, 1, 6, 41, 20, 16, 2, 17, 30,
    21, 0, 48, 31, 44, 18, 40, 7, 8, 9, 42, 32, 50, 10, 51, 13, 12, 46, 25, 26, 27, 11, 24, 3, 5,
    14, 4, 23,
];

#[test]
fn bundled_instances_parse() {
    for (name, n, kind) in [
        ("burma14", 14, EdgeWeightType::Geo),
        ("berlin52", 52, EdgeWeightType::Euc2d),
        ("st70", 70, EdgeWeightType::Euc2d),
        ("eil76", 76, EdgeWeightType::Euc2d),
        ("eil101", 101, EdgeWeightType::Euc2d),
    ] {
        let file = tsplib::load(&data(&format!("{name}.tsp"))).unwrap();
        assert_eq!(file.name, name);
        assert_eq!(file.dimension, n);
        assert_eq!(file.node_coords.len(), n);
        assert_eq!(file.edge_weight_type, kind);
    }
}

#[test]
fn known_optimal_tours() {
    let st70 = tsplib::load(&data("st70.tsp"))
        .unwrap()
        .to_instance()
        .unwrap();
    assert_eq!(st70.tour_length(&ST70_OPTIMAL).unwrap(), 675.0);
    let berlin = tsplib::load(&data("berlin52.tsp"))
        .unwrap()
        .to_instance()
        .unwrap();
    assert_eq!(berlin.tour_length(&BERLIN52_OPTIMAL).unwrap(), 7542.0);
}

#[test]
fn geo_instances_are_rejected_for_solving() {
    let burma = tsplib::load(&data("burma14.tsp")).unwrap();
    assert!(matches!(
        burma.to_instance(),
        Err(Error::UnsupportedFormat(_))
    ));
}

#[test]
fn missing_file_is_an_io_error() {
    let err = tsplib::load(&data("nope.tsp")).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
}
