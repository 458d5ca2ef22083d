use lipforge::formats::{parse_points_csv, GridFile};
use lipforge::func::parse_dag_json;
use lipforge::operator::{parse_op_json, FamilyDoc};
use lipforge::region::parse_region_json;
use lipforge::NormedSpace;
use std::path::PathBuf;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn text(b: &[u8]) -> &str {
    std::str::from_utf8(b).unwrap()
}

#[test]
fn dag_seeds_parse_and_evaluate() {
    for (name, b) in seeds("dag_json") {
        let f = parse_dag_json(text(&b)).unwrap_or_else(|e| panic!("{name}: {e}"));
        let v = f.eval_f(&vec![0.5; f.din()]);
        assert!(v.iter().all(|x| x.is_finite()), "{name}");
    }
}

#[test]
fn region_seeds_parse() {
    for (name, b) in seeds("region_json") {
        let r = parse_region_json(text(&b)).unwrap_or_else(|e| panic!("{name}: {e}"));
        if let Some(d) = r.dim() {
            let _ = r.contains(&vec![0.5; d]);
        }
    }
}

#[test]
fn space_and_operator_seeds_parse() {
    for (name, b) in seeds("space_op_json") {
        let s = text(&b);
        let ok = serde_json::from_str::<NormedSpace>(s).is_ok()
            || parse_op_json(s).is_ok()
            || serde_json::from_str::<FamilyDoc>(s)
                .map(|d| d.to_family().is_ok())
                .unwrap_or(false);
        assert!(ok, "{name}");
    }
}

#[test]
fn grid_seeds_round_trip() {
    for (name, b) in seeds("grid_file") {
        let g = GridFile::from_bytes(&b).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(g.to_bytes().unwrap(), b, "{name}");
        g.to_lipfn().unwrap();
    }
}

#[test]
fn csv_seeds_parse() {
    for (name, b) in seeds("points_csv") {
        let pts = parse_points_csv(text(&b)).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(!pts.is_empty(), "{name}");
    }
}

#[test]
fn truncated_seeds_never_panic() {
    for target in [
        "dag_json",
        "region_json",
        "space_op_json",
        "grid_file",
        "points_csv",
    ] {
        for (_, b) in seeds(target) {
            for cut in (0..b.len()).step_by((b.len() / 64).max(1)) {
                let part = &b[..cut];
                let _ = GridFile::from_bytes(part);
                if let Ok(s) = std::str::from_utf8(part) {
                    let _ = parse_dag_json(s);
                    let _ = parse_region_json(s);
                    let _ = parse_op_json(s);
                    let _ = parse_points_csv(s);
                }
            }
        }
    }
}

fn feed(b: &[u8]) {
    let _ = GridFile::from_bytes(b);
    if let Ok(s) = std::str::from_utf8(b) {
        if let Ok(f) = parse_dag_json(s) {
            let _ = f.eval_f(&vec![0.25; f.din()]);
        }
        if let Ok(r) = parse_region_json(s) {
            if let Some(d) = r.dim() {
                let _ = r.contains(&vec![0.5; d]);
            }
        }
        let _ = parse_op_json(s);
        let _ = serde_json::from_str::<NormedSpace>(s);
        let _ = parse_points_csv(s);
    }
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(512))]

        #[test]
        fn arbitrary_bytes_never_panic(data in proptest::collection::vec(any::<u8>(), 0..256)) {
            feed(&data);
        }

        #[test]
        fn mutated_seeds_never_panic(
            target in 0usize..5,
            pick in any::<prop::sample::Index>(),
            flips in proptest::collection::vec((any::<prop::sample::Index>(), any::<u8>()), 1..6),
        ) {
            let t = ["dag_json", "region_json", "space_op_json", "grid_file", "points_csv"][target];
            let all = seeds(t);
            let mut b = all[pick.index(all.len())].1.clone();
            for (at, v) in flips {
                let i = at.index(b.len());
                b[i] = v;
            }
            feed(&b);
        }
    }
}
