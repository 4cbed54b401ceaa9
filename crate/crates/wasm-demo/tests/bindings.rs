use patchgt_wasm::{bottleneck_json, segment_json, wl_json};
use serde_json::Value;

const TWO_TRIANGLES: &str = r#"{"num_nodes":6,"edges":[[0,1],[1,2],[2,0],[3,4],[4,5],[5,3]]}"#;
const HEXAGON: &str = r#"{"num_nodes":6,"edges":[[0,1],[1,2],[2,3],[3,4],[4,5],[5,0]]}"#;

fn parse(s: String) -> Value {
    serde_json::from_str(&s).unwrap()
}

#[test]
fn segments_two_triangles() {
    let v = parse(segment_json(TWO_TRIANGLES, 0.1).unwrap());
    assert_eq!(v["k"], 2);
    assert_eq!(v["assignment"], serde_json::json!([0, 0, 0, 1, 1, 1]));
    assert_eq!(v["patch_edges"], serde_json::json!([]));
    assert_eq!(v["eigenvalues"].as_array().unwrap().len(), 6);
}

#[test]
fn hexagon_patches_are_linked() {
    let v = parse(segment_json(HEXAGON, 1.0).unwrap());
    let k = v["k"].as_u64().unwrap();
    assert!(k >= 2);
    assert!(!v["patch_edges"].as_array().unwrap().is_empty());
}

#[test]
fn wl_cannot_split_cycle_pair() {
    let v = parse(wl_json(HEXAGON, TWO_TRIANGLES).unwrap());
    assert_eq!(v["distinguishable"], false);
    assert_eq!(v["colors_a"], v["colors_b"]);
}

#[test]
fn bottleneck_ratio_respects_bound() {
    let v = parse(bottleneck_json(3, 10, 2, 2).unwrap());
    assert!(v["node_ratio"].as_f64().unwrap() <= v["bound"].as_f64().unwrap());
    assert_eq!(v["violations"], 0);
    assert!((v["patch_ratio"].as_f64().unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn errors_are_messages() {
    assert!(segment_json("not json", 0.1)
        .unwrap_err()
        .contains("bad graph JSON"));
    assert!(segment_json(r#"{"num_nodes":2,"edges":[[0,9]]}"#, 0.1).is_err());
    assert!(bottleneck_json(3, 10, 1, 2).is_err());
}
