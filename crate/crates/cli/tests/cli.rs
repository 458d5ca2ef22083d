use std::path::Path;
use std::process::{Command, Output};

const E2: &str = r#"{"dim":2,"descriptor":{"kind":"lp","p":2}}"#;

fn lipforge(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lipforge"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn lipforge")
}

fn put(dir: &Path, name: &str, body: &str) {
    std::fs::write(dir.join(name), body).unwrap();
}

fn json(bytes: &[u8]) -> serde_json::Value {
    serde_json::from_slice(bytes).expect("json output")
}

#[test]
fn cyl_of_euclidean_identity_is_one() {
    let d = tempfile::tempdir().unwrap();
    put(
        d.path(),
        "id2.json",
        &format!(r#"{{"space":{E2},"matrix":[[1,0],[0,1]]}}"#),
    );
    let out = lipforge(d.path(), &["cyl", "--op", "id2.json"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v = json(&out.stdout)["value"].as_f64().unwrap();
    assert!((v - 1.0).abs() <= 1e-6, "{v}");
}

#[test]
fn cantor_level_two_has_sixteen_boxes() {
    let d = tempfile::tempdir().unwrap();
    let out = lipforge(d.path(), &["cantor", "--level", "2", "--out", "e.json"]);
    assert!(out.status.success());
    let r = json(&std::fs::read(d.path().join("e.json")).unwrap());
    assert_eq!(r["kind"], "boxes");
    assert_eq!(r["lo"].as_array().unwrap().len(), 16);
    assert_eq!(r["hi"].as_array().unwrap().len(), 16);
    let out = lipforge(d.path(), &["cantor", "--level", "3", "--descriptor"]);
    assert_eq!(json(&out.stdout)["kind"], "cantor");
}

fn prescribe_run(dir: &Path, out: &str) -> Output {
    lipforge(
        dir,
        &[
            "prescribe",
            "--op",
            "L.json",
            "--gamma",
            "gamma.csv",
            "--r",
            "0.5",
            "--s",
            "0.1",
            "--pairs",
            "2000",
            "--out",
            out,
            "--seed",
            "3",
        ],
    )
}

#[test]
fn prescribe_then_verify_and_determinism() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    put(
        p,
        "L.json",
        &format!(r#"{{"space":{E2},"matrix":[[0.4,0],[0,0.2]]}}"#),
    );
    put(p, "gamma.csv", "x,y\n0.5,0.5\n0.1,0.9\n");
    let a = prescribe_run(p, "a");
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert!(prescribe_run(p, "b").status.success());
    let ca = std::fs::read(p.join("a/certificate.json")).unwrap();
    assert_eq!(ca, std::fs::read(p.join("b/certificate.json")).unwrap());
    assert_eq!(
        std::fs::read(p.join("a/g.json")).unwrap(),
        std::fs::read(p.join("b/g.json")).unwrap()
    );
    assert!(json(&ca)["affinity_err"].as_f64().unwrap() <= 1e-12);

    put(
        p,
        "fam.json",
        &format!(r#"{{"space":{E2},"ops":[[[0.4,0],[0,0.2]]]}}"#),
    );
    let out = lipforge(
        p,
        &[
            "verify", "--fn", "a/g.json", "--point", "0.5,0.5", "--ops", "fam.json", "--scales",
            "8:12", "--dirs", "16", "--out", "scan",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let rep = json(&out.stdout);
    assert_eq!(rep["verdicts"].as_array().unwrap().len(), 1);
    assert_eq!(rep["verdicts"][0]["pass"], true);
    assert!(std::fs::read_to_string(p.join("scan/errors.csv"))
        .unwrap()
        .starts_with("op,scale,error"));

    // A wrong operator is reported with exit 3.
    put(
        p,
        "bad.json",
        &format!(r#"{{"space":{E2},"ops":[[[1,0],[0,1]]]}}"#),
    );
    let out = lipforge(
        p,
        &[
            "verify", "--fn", "a/g.json", "--point", "0.5,0.5", "--ops", "bad.json", "--scales",
            "8:10", "--dirs", "8",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn config_errors_exit_two() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    assert_eq!(
        lipforge(p, &["cyl", "--op", "missing.json"]).status.code(),
        Some(2)
    );
    put(p, "junk.json", "{not json");
    assert_eq!(
        lipforge(p, &["cyl", "--op", "junk.json"]).status.code(),
        Some(2)
    );
    assert_eq!(lipforge(p, &["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        lipforge(p, &["cantor", "--level", "2", "--ratio", "0.9"])
            .status
            .code(),
        Some(2)
    );
    let out = Command::new(env!("CARGO_BIN_EXE_lipforge"))
        .current_dir(p)
        .env("LIPFORGE_THREADS", "zero")
        .args(["cantor", "--level", "1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn prescription_premise_violation_exits_two() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    // ‖L‖ > 1 − r.
    put(
        p,
        "L.json",
        &format!(r#"{{"space":{E2},"matrix":[[0.9,0],[0,0]]}}"#),
    );
    put(p, "gamma.csv", "0.5,0.5\n");
    assert_eq!(prescribe_run(p, "x").status.code(), Some(2));
}

#[test]
fn plot_grid_round_trip() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    put(
        p,
        "f.json",
        &format!(
            r#"{{"din":2,"dout":1,"root":0,"nodes":[{{"op":"norm","space":{E2},"center":[0.5,0.5],"coef":1.0,"dir":[1.0]}}]}}"#
        ),
    );
    let out = lipforge(
        p,
        &[
            "plot",
            "--fn",
            "f.json",
            "--bbox",
            "0,0,1,1",
            "--n",
            "16",
            "--grid-out",
            "f.lfgf",
            "--out",
            "a.svg",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let bytes = std::fs::read(p.join("f.lfgf")).unwrap();
    assert_eq!(&bytes[..4], b"LFGF");
    assert!(lipforge(p, &["plot", "--grid", "f.lfgf", "--out", "b.svg"])
        .status
        .success());
    let a = std::fs::read_to_string(p.join("a.svg")).unwrap();
    assert_eq!(a, std::fs::read_to_string(p.join("b.svg")).unwrap());
    assert_eq!(a.matches("<rect").count(), 256);
    put(p, "bad.lfgf", "LFGF\u{1}");
    assert_eq!(
        lipforge(p, &["plot", "--grid", "bad.lfgf", "--out", "c.svg"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn steep_writes_dag_and_certificate() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    put(
        p,
        "g.json",
        r#"{"kind":"boxes","lo":[[0.3,0.0]],"hi":[[0.7,1.0]]}"#,
    );
    let out = lipforge(
        p,
        &[
            "steep",
            "--region",
            "g.json",
            "--functional",
            "0,1",
            "--alpha",
            "0.5",
            "--h",
            "0.05",
            "--samples",
            "2000",
            "--svg",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in ["g.json", "steep.json", "certificate.json", "g.svg"] {
        assert!(p.join(f).exists(), "{f}");
    }
    assert_eq!(
        json(&std::fs::read(p.join("certificate.json")).unwrap())["pass"],
        true
    );
}

#[test]
fn resolution_errors_exit_four() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    put(
        p,
        "e.json",
        r#"{"kind":"cantor","level":3,"ratio":"0x1p-2","origin":[0,0],"side":1}"#,
    );
    put(
        p,
        "u.json",
        &format!(r#"{{"kind":"balls","space":{E2},"centers":[[0.5,0.5]],"radii":[4]}}"#),
    );
    put(
        p,
        "T.json",
        &format!(r#"{{"space":{E2},"matrix":[[0.5,0],[0,0]]}}"#),
    );
    // θ far below what level ≤ 1 covers can reach.
    let out = lipforge(
        p,
        &[
            "pumap",
            "--e",
            "e.json",
            "--u",
            "u.json",
            "--op",
            "T.json",
            "--theta",
            "1e-6",
            "--max-level",
            "1",
        ],
    );
    assert_eq!(
        out.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
