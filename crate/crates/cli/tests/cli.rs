use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nightfield::demo::{lake_scenario, LAKE_LAMPS};
use nightfield::fieldmap::Scenario;
use nightfield::geo::GeoPoint;
use nightfield::lightmodel::LightSource;
use nightfield::scenario_io::ScenarioStore;
use serde_json::{json, Value};

fn nightfield(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nightfield")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

fn write_json(dir: &Path, name: &str, v: &impl serde::Serialize) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_vec_pretty(v).unwrap()).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// The lake lamps with the state-road profile, so c1 is fixed at 0.03.
fn state_road_lake() -> Scenario {
    let lamps = LAKE_LAMPS
        .iter()
        .enumerate()
        .map(|(i, (lat, lon))| LightSource::with_profile((i + 1).to_string(), GeoPoint::new(*lat, *lon).unwrap(), 2, 0.1).unwrap())
        .collect();
    let mut sc = lake_scenario();
    sc.set_sources(lamps).unwrap();
    sc
}

#[test]
fn render_writes_png_and_refuses_to_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let scen = write_json(dir.path(), "lake.json", &lake_scenario());
    let png = dir.path().join("map.png");
    let first = nightfield(&["render", s(&scen), "-o", s(&png), "--cell-size", "2", "--threshold", "17"]);
    assert_eq!(code(&first), 0, "{}", String::from_utf8_lossy(&first.stderr));
    let summary = stdout_json(&first);
    let img = image::open(&png).unwrap().to_rgb8();
    assert_eq!(img.width() as u64, summary["width"].as_u64().unwrap());
    assert!(!summary["hotspots"].as_array().unwrap().is_empty());

    // the brightest cell holds a lamp: its center is within half a cell diagonal of one
    let b = &summary["brightest"];
    let p = GeoPoint::new(b["lat"].as_f64().unwrap(), b["lon"].as_f64().unwrap()).unwrap();
    let sc = lake_scenario();
    let q = sc.frame().project(&p).unwrap();
    let nearest = sc.sources().iter().map(|l| sc.frame().project(&l.position).unwrap().dist(&q)).fold(f64::INFINITY, f64::min);
    assert!(nearest <= 2.0 * std::f64::consts::SQRT_2 / 2.0 + 1e-6, "{nearest}");
    let [r, g, bl] = img.get_pixel(b["col"].as_u64().unwrap() as u32, b["row"].as_u64().unwrap() as u32).0;
    assert!(r as u32 + g as u32 + bl as u32 >= 3 * 200);

    let before = std::fs::read(&png).unwrap();
    let again = nightfield(&["render", s(&scen), "-o", s(&png)]);
    assert_eq!(code(&again), 1);
    assert!(again.stdout.is_empty());
    assert_eq!(std::fs::read(&png).unwrap(), before);

    let forced = nightfield(&["render", s(&scen), "-o", s(&png), "--cell-size", "2", "--threshold", "17", "--force"]);
    assert_eq!(code(&forced), 0);
    assert_eq!(std::fs::read(&png).unwrap(), before, "identical inputs give identical bytes");
    assert_eq!(forced.stdout, first.stdout);
}

#[test]
fn optimize_tune_c2_reaches_the_floor() {
    let dir = tempfile::tempdir().unwrap();
    let scen = write_json(dir.path(), "state.json", &state_road_lake());
    let spec = write_json(dir.path(), "spec.json", &json!({ "mode": "tune_c2", "slack_R_m": 50, "omega": 0.2, "target": { "area": "lake" } }));
    let out = dir.path().join("result.json");
    let o = nightfield(&["optimize", s(&scen), "--spec", s(&spec), "-o", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let result: Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(result["converged"], json!(true));
    for src in result["sources"].as_array().unwrap() {
        let c2 = src["params"]["c2"].as_f64().unwrap();
        assert!((c2 - 0.154).abs() <= 1e-3, "{c2}");
    }
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.contains("0.154"), "full precision numbers in the output");
}

#[test]
fn optimize_exit_three_when_iterations_run_out() {
    let dir = tempfile::tempdir().unwrap();
    let scen = write_json(dir.path(), "lake.json", &lake_scenario());
    let spec = write_json(dir.path(), "spec.json", &json!({ "mode": "placement", "max_iters": 1, "target": { "area": "lake" } }));
    let o = nightfield(&["optimize", s(&scen), "--spec", s(&spec)]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let result = stdout_json(&o);
    assert_eq!(result["converged"], json!(false));
    assert_eq!(result["iterations"], json!(1));
}

#[test]
fn optimize_rejects_invalid_specs() {
    let dir = tempfile::tempdir().unwrap();
    let scen = write_json(dir.path(), "lake.json", &lake_scenario());
    let spec = write_json(dir.path(), "spec.json", &json!({ "mode": "tune_c1", "omega": 1.5, "target": { "area": "lake" } }));
    assert_eq!(code(&nightfield(&["optimize", s(&scen), "--spec", s(&spec)])), 4);
    let garbled = dir.path().join("bad.json");
    std::fs::write(&garbled, "{").unwrap();
    assert_eq!(code(&nightfield(&["optimize", s(&scen), "--spec", s(&garbled)])), 4);
    assert_eq!(code(&nightfield(&["optimize", s(&scen), "--spec", "/nonexistent/spec.json"])), 2);
}

#[test]
fn footprint_ledger_from_a_store_document() {
    let dir = tempfile::tempdir().unwrap();
    let store = ScenarioStore::open(dir.path().join("store")).unwrap();
    store.create(&lake_scenario()).unwrap();
    let doc = dir.path().join("store").join("lake.json");
    let o = nightfield(&["footprint", s(&doc), "--area", "lake"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = String::from_utf8(o.stdout).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("source_id,footprint"));
    let rows: Vec<(String, f64)> = lines
        .map(|l| {
            let (id, v) = l.split_once(',').unwrap();
            (id.to_string(), v.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[0].0, "5");
    assert!(rows.windows(2).all(|w| w[0].1 >= w[1].1));

    let out = dir.path().join("ledger.csv");
    let inv = nightfield(&["footprint", s(&doc), "--area", "lake", "--kernel", "inverse_square", "--mount-height", "8", "-o", s(&out)]);
    assert_eq!(code(&inv), 0);
    assert!(std::fs::read_to_string(&out).unwrap().starts_with("source_id,footprint\n"));
    assert_eq!(code(&nightfield(&["footprint", s(&doc), "--area", "lake", "-o", s(&out)])), 1);

    assert_eq!(code(&nightfield(&["footprint", s(&doc), "--area", "pond"])), 4);
    assert_eq!(code(&nightfield(&["footprint", s(&doc), "--area", "lake", "--kernel", "laser"])), 1);
    assert_eq!(code(&nightfield(&["footprint", s(&doc), "--area", "lake", "--mount-height", "8"])), 1);
}

#[test]
fn interp_eval_on_constant_samples_has_zero_error() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("samples.csv");
    let mut text = String::from("lat,lon,sqm\n");
    for (i, (lat, lon)) in LAKE_LAMPS.iter().enumerate() {
        text.push_str(&format!("{},{},19.0\n", lat + 0.0001 * i as f64, lon));
    }
    std::fs::write(&csv, text).unwrap();
    for method in ["idw", "shepard", "kriging", "rbf", "idw-vp", "nni"] {
        let o = nightfield(&["interp-eval", s(&csv), "--method", method]);
        assert_eq!(code(&o), 0, "{method}: {}", String::from_utf8_lossy(&o.stderr));
        let r = stdout_json(&o);
        assert!(r["mean_abs_error"].as_f64().unwrap().abs() <= 1e-8, "{method}: {r}");
        assert_eq!(r["folds"].as_array().unwrap().len(), 6);
    }
    let with_baseline = stdout_json(&nightfield(&["interp-eval", s(&csv), "--method", "idw-vp", "--power", "3", "--baseline", "20"]));
    assert_eq!(with_baseline["method"], json!("idw-vp(p=3)"));
    assert!((with_baseline["mean_error_variance_pct"].as_f64().unwrap() - 5.0).abs() < 1e-9);

    assert_eq!(code(&nightfield(&["interp-eval", s(&csv), "--method", "cubic"])), 1);
    assert_eq!(code(&nightfield(&["interp-eval", s(&csv), "--method", "idw", "--power", "3"])), 1);
    assert_eq!(code(&nightfield(&["interp-eval", s(&csv), "--method", "idw-vp", "--power", "9"])), 4);
    std::fs::write(&csv, "lat,lon\n1,2\n").unwrap();
    assert_eq!(code(&nightfield(&["interp-eval", s(&csv), "--method", "idw"])), 4);
}

#[test]
fn usage_and_io_exit_codes() {
    assert_eq!(code(&nightfield(&[])), 1);
    assert_eq!(code(&nightfield(&["frobnicate"])), 1);
    let help = nightfield(&["--help"]);
    assert_eq!(code(&help), 0);
    assert!(String::from_utf8_lossy(&help.stdout).contains("interp-eval"));
    assert_eq!(code(&nightfield(&["render", "/nonexistent/lake.json", "-o", "/tmp/nf-never.png"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, json!({ "id": "x", "bbox": { "min": { "lat": 1, "lon": 1 }, "max": { "lat": 0, "lon": 0 } } }).to_string()).unwrap();
    assert_eq!(code(&nightfield(&["render", s(&bad), "-o", s(&dir.path().join("m.png"))])), 4);
}

#[test]
fn serve_help_lists_the_service_flags() {
    let o = nightfield(&["serve", "--help"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    for flag in ["--root", "--bind", "--jobs", "--log-level"] {
        assert!(text.contains(flag), "{flag}");
    }
}
