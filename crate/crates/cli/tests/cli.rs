use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn vbtrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vbtrack")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn simulate(preset: &str, out: &Path) {
    let o = vbtrack(&["simulate", "--preset", preset, "--out", s(out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn simulate_writes_csvs_and_checksums() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    simulate("two_cross", &a);
    simulate("two_cross", &b);
    assert!(a.join("measurements.csv").is_file() && a.join("ground_truth.csv").is_file());
    let m = manifest(&a);
    for (name, sum) in m["checksums"].as_object().unwrap() {
        let bytes = fs::read(a.join(name)).unwrap();
        assert_eq!(sum.as_str().unwrap(), hex::encode(Sha256::digest(&bytes)), "{name}");
    }
    assert_eq!(m["checksums"], manifest(&b)["checksums"]);
    assert!(!a.join("manifest.json.tmp").exists());
}

#[test]
fn unknown_preset_lists_choices() {
    let tmp = tempfile::tempdir().unwrap();
    let o = vbtrack(&["simulate", "--preset", "nope", "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    for p in ["single_walk", "two_cross", "three_cross_reentry", "five_corridor"] {
        assert!(err.contains(p), "{err}");
    }
}

#[test]
fn missing_calibration_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    simulate("single_walk", tmp.path());
    let o = vbtrack(&[
        "track",
        "--measurements",
        s(&tmp.path().join("measurements.csv")),
        "--calibration",
        s(&tmp.path().join("nope.csv")),
        "--out",
        s(&tmp.path().join("t")),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn malformed_measurements_report_the_row() {
    let tmp = tempfile::tempdir().unwrap();
    simulate("single_walk", tmp.path());
    let bad = tmp.path().join("bad.csv");
    fs::write(&bad, "frame,x,y,r,g,b\n0,1,2,3,4,5\n0,1,oops,3,4,5\n").unwrap();
    let o = vbtrack(&[
        "track",
        "--measurements",
        s(&bad),
        "--calibration",
        s(&tmp.path().join("calibration.csv")),
        "--out",
        s(&tmp.path().join("t")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("row 3"));
}

#[test]
fn single_walk_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    let trk = tmp.path().join("trk");
    let ev = tmp.path().join("ev");
    let plot = tmp.path().join("plot");
    simulate("single_walk", &sim);
    let o = vbtrack(&[
        "track",
        "--measurements",
        s(&sim.join("measurements.csv")),
        "--calibration",
        s(&sim.join("calibration.csv")),
        "--config",
        s(&sim.join("tracker.toml")),
        "--out",
        s(&trk),
        "--dump-clusters",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(trk.join("clusters.csv").is_file());
    assert!(!trk.join("assoc.csv").exists());

    let tracks = fs::read_to_string(trk.join("tracks.csv")).unwrap();
    let ids: std::collections::BTreeSet<&str> = tracks.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(ids.len(), 1);

    let o = vbtrack(&[
        "evaluate",
        "--tracks",
        s(&trk.join("tracks.csv")),
        "--ground-truth",
        s(&sim.join("ground_truth.csv")),
        "--out",
        s(&ev),
    ]);
    assert!(o.status.success());
    let summary = fs::read_to_string(ev.join("summary.txt")).unwrap();
    assert!(summary.contains("ospamt_variant_loc_mean_cm"));

    let o = vbtrack(&[
        "plot",
        "--frames",
        s(&trk.join("frames.csv")),
        "--ground-truth",
        s(&sim.join("ground_truth.csv")),
        "--metrics",
        s(&ev.join("metrics.csv")),
        "--out",
        s(&plot),
    ]);
    assert!(o.status.success());
    let count = fs::read_to_string(plot.join("count.svg")).unwrap();
    assert_eq!(count.matches("<polyline").count(), 3);
    assert!(plot.join("motp.svg").is_file() && plot.join("ospamt.svg").is_file());
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn gt_text(frames: u64) -> String {
    let mut t = String::from("frame,id,gx,gy\n");
    for k in 0..frames {
        t += &format!("{k},1,{:.2},1.0\n{k},2,{:.2},3.0\n", 0.05 * k as f64, 0.05 * k as f64);
    }
    t
}

fn tracks_text(frames: impl Iterator<Item = u64>, ids: (u64, u64), keep: impl Fn(u64, u64) -> bool) -> String {
    let mut t = String::from("frame,target_id,gx,gy,px,py\n");
    for k in frames {
        for (id, y) in [(ids.0, 1.0), (ids.1, 3.0)] {
            if keep(k, id) {
                t += &format!("{k},{id},{:.2},{y},0,0\n", 0.05 * k as f64);
            }
        }
    }
    t
}

fn summary_value(summary: &str, key: &str) -> f64 {
    summary
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}: ")))
        .unwrap()
        .parse()
        .unwrap()
}

fn evaluate(dir: &Path, tracks: &str, gt: &str) -> (Output, String) {
    let out = dir.join("ev");
    let o = vbtrack(&["evaluate", "--tracks", tracks, "--ground-truth", gt, "--out", s(&out)]);
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap_or_default();
    (o, summary)
}

#[test]
fn evaluate_examples() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let gt = write(d, "gt.csv", &gt_text(20));

    let same = write(d, "same.csv", &tracks_text(0..20, (1, 2), |_, _| true));
    let (o, sum) = evaluate(d, &same, &gt);
    assert!(o.status.success());
    for key in ["miss_rate", "mismatch_rate", "false_positive_rate", "motp_cm", "ospamt_variant_loc_mean_cm", "ospamt_variant_card_mean_cm"] {
        assert_eq!(summary_value(&sum, key), 0.0, "{key}");
    }

    let shifted = write(d, "shifted.csv", &tracks_text(0..20, (41, 42), |_, _| true));
    let (_, sum) = evaluate(d, &shifted, &gt);
    assert_eq!(summary_value(&sum, "mismatch_rate"), 0.0);
    assert_eq!(summary_value(&sum, "miss_rate"), 0.0);

    let half = write(d, "half.csv", &tracks_text(0..20, (1, 2), |k, _| k % 2 == 0));
    let (_, sum) = evaluate(d, &half, &gt);
    assert_eq!(summary_value(&sum, "miss_rate"), 0.5);

    let late = write(d, "late.csv", &tracks_text(100..110, (1, 2), |_, _| true));
    let (o, _) = evaluate(d, &late, &gt);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn plot_empty_and_malformed() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let header = "frame,measurements,clustered,downsampled,vb_iterations,lower_bound,clusters,targets,hypotheses,p_birth,p_death,count_change,degraded\n";
    let empty = write(d, "frames.csv", header);
    let o = vbtrack(&["plot", "--frames", &empty, "--out", s(&d.join("p"))]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
    let svg = fs::read_to_string(d.join("p/count.svg")).unwrap();
    assert!(svg.contains("class=\"axes\"") && !svg.contains("<polyline"));

    let bad = write(d, "bad.csv", &format!("{header}0,1,2,maybe\n"));
    let o = vbtrack(&["plot", "--frames", &bad, "--out", s(&d.join("q"))]);
    assert_eq!(o.status.code(), Some(2));
}
