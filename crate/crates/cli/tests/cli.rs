use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output};

fn patchgt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_patchgt"))
        .args(args)
        .current_dir(dir)
        .env("PATCHGT_DATA_DIR", dir.join("data"))
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const TWO_TRIANGLES: &str =
    r#"[{"num_nodes":6,"edges":[[0,1],[1,2],[2,0],[3,4],[4,5],[5,3]],"labels":[1]}]"#;
const HEXAGON: &str =
    r#"[{"num_nodes":6,"edges":[[0,1],[1,2],[2,3],[3,4],[4,5],[5,0]],"labels":[0]}]"#;

#[test]
fn segment_two_triangles() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("g.json"), TWO_TRIANGLES).unwrap();
    let o = patchgt(
        dir.path(),
        &[
            "segment", "--input", "g.json", "--gamma", "0.1", "--out", "seg.json",
        ],
    );
    assert!(o.status.success(), "{o:?}");
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("seg.json")).unwrap()).unwrap();
    assert_eq!(v["graphs"][0]["k"], 2);
    assert_eq!(
        v["graphs"][0]["assignment"],
        serde_json::json!([0, 0, 0, 1, 1, 1])
    );
    assert!(dir.path().join("seg.json.manifest.json").exists());

    let printed = patchgt(
        dir.path(),
        &["segment", "--input", "g.json", "--gamma", "0.1"],
    );
    let v: serde_json::Value = serde_json::from_str(&stdout(&printed)).unwrap();
    assert_eq!(v["graphs"][0]["k"], 2);
}

#[test]
fn wl_compare_cycle_pair() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("a.json"), HEXAGON).unwrap();
    fs::write(dir.path().join("b.json"), TWO_TRIANGLES).unwrap();
    let o = patchgt(
        dir.path(),
        &["wl-compare", "--a", "a.json", "--b", "b.json"],
    );
    assert!(o.status.success());
    assert!(stdout(&o).contains("distinguishable: false"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(patchgt(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        patchgt(dir.path(), &["segment", "--gamma", "0.1", "--bogus"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        patchgt(
            dir.path(),
            &["segment", "--input", "missing.json", "--gamma", "0.1"]
        )
        .status
        .code(),
        Some(1)
    );
    fs::write(
        dir.path().join("bad.json"),
        r#"[{"num_nodes":2,"edges":[[0,5]]}]"#,
    )
    .unwrap();
    let o = patchgt(
        dir.path(),
        &["segment", "--input", "bad.json", "--gamma", "0.1"],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
}

#[test]
fn bottleneck_replays_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let grid = r#"{"taus":[3],"ms":[2],"layers":[2],"sizes":[10],"epsilon":0.001,"trials":20,"feature_dim":2,"seed":4}"#;
    fs::write(dir.path().join("grid.json"), grid).unwrap();
    let o = patchgt(
        dir.path(),
        &["bottleneck", "--grid", "grid.json", "--out", "report.json"],
    );
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("0 violations"));
    let before = fs::read(dir.path().join("report.json")).unwrap();
    let r = patchgt(dir.path(), &["replay", "report.json.manifest.json"]);
    assert!(r.status.success(), "{r:?}");
    assert!(stdout(&r).contains("bit-identical"));
    assert_eq!(before, fs::read(dir.path().join("report.json")).unwrap());

    // A tampered output is reported and fails the replay.
    let manifest = dir.path().join("report.json.manifest.json");
    let text = fs::read_to_string(&manifest).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let outputs = v["outputs"].as_object_mut().unwrap();
    for h in outputs.values_mut() {
        *h = serde_json::json!("0".repeat(64));
    }
    fs::write(&manifest, v.to_string()).unwrap();
    assert_eq!(
        patchgt(dir.path(), &["replay", "report.json.manifest.json"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn fetch_unpacks_a_local_archive() {
    let dir = tempfile::tempdir().unwrap();
    let files = [
        ("TINY/TINY_A.txt", "1, 2\n2, 1\n3, 4\n4, 3\n4, 5\n5, 4\n"),
        ("TINY/TINY_graph_indicator.txt", "1\n1\n2\n2\n2\n"),
        ("TINY/TINY_graph_labels.txt", "1\n-1\n"),
    ];
    let zip_path = dir.path().join("TINY.zip");
    {
        let mut w = zip::ZipWriter::new(fs::File::create(&zip_path).unwrap());
        let opts = zip::write::SimpleFileOptions::default();
        for (name, body) in files {
            w.start_file(name, opts).unwrap();
            w.write_all(body.as_bytes()).unwrap();
        }
        w.finish().unwrap();
    }
    let o = patchgt(dir.path(), &["fetch", "TINY", "--from", "TINY.zip"]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("TINY: 2 graphs"));
    let seg = patchgt(
        dir.path(),
        &["segment", "--dataset", "TINY", "--gamma", "2.0"],
    );
    let v: serde_json::Value = serde_json::from_str(&stdout(&seg)).unwrap();
    assert_eq!(v["graphs"][1]["k"], 3);
}
