use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn fgrefine(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fgrefine"))
        .args(args)
        .output()
        .expect("spawn fgrefine")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn emit(dir: &Path, scene: &str) {
    let o = fgrefine(&["synth", "emit", scene, s(dir)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

fn value(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(key)?.trim().strip_prefix('=').map(|v| v.trim().parse().unwrap()))
        .unwrap_or_else(|| panic!("{key} missing in\n{text}"))
}

fn boxes_per_frame(csv: &Path) -> std::collections::BTreeMap<u64, usize> {
    let mut counts = std::collections::BTreeMap::new();
    for line in fs::read_to_string(csv).unwrap().lines().skip(1) {
        let frame: u64 = line.split(',').next().unwrap().parse().unwrap();
        *counts.entry(frame).or_insert(0) += 1;
    }
    counts
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn emit_run_and_evaluate() {
    let tmp = TempDir::new().unwrap();
    let scene = tmp.path().join("scene");
    let out = tmp.path().join("out");
    emit(&scene, "opposite_cross");
    assert!(scene.join("frames").read_dir().unwrap().count() > 0);
    assert!(scene.join("gt.csv").is_file() && scene.join("scene.txt").is_file());

    let gt = scene.join("gt.csv");
    let o = fgrefine(&["run", "--frames", s(&scene.join("frames")), "--gt", s(&gt), "--output", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(value(&text, "refined.recall") >= value(&text, "raw.recall"));
    for f in ["raw_boxes.csv", "refined_boxes.csv", "report.txt", "report.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    assert!(out.join("refined").read_dir().unwrap().count() > 0);

    // somewhere in the crossing one raw blob becomes two refined boxes
    let raw = boxes_per_frame(&out.join("raw_boxes.csv"));
    let refined = boxes_per_frame(&out.join("refined_boxes.csv"));
    assert!(raw.iter().any(|(f, &n)| n == 1 && refined.get(f) == Some(&2)));

    let dets = out.join("refined_boxes.csv");
    let o = fgrefine(&["eval", "--dets", s(&dets), "--gt", s(&gt)]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(value(&text, "detections.recall"), value(&fs::read_to_string(out.join("report.txt")).unwrap(), "refined.recall"));
    assert!(out.join("refined_boxes.csv.eval.txt").is_file());
    assert!(out.join("refined_boxes.csv.eval.json").is_file());
}

#[test]
fn ground_truth_scores_perfectly_against_itself() {
    let tmp = TempDir::new().unwrap();
    emit(tmp.path(), "same_direction_pair");
    let gt = tmp.path().join("gt.csv");

    let o = fgrefine(&["mot-eval", "--tracks", s(&gt), "--gt", s(&gt)]);
    assert!(o.status.success());
    assert_eq!(value(&stdout(&o), "mota"), 1.0);
    assert_eq!(value(&stdout(&o), "id_switches"), 0.0);
    assert!(tmp.path().join("gt.csv.mot.txt").is_file());

    let o = fgrefine(&["eval", "--dets", s(&gt), "--gt", s(&gt)]);
    assert!(o.status.success());
    assert_eq!(value(&stdout(&o), "detections.precision"), 1.0);
    assert_eq!(value(&stdout(&o), "detections.recall"), 1.0);
}

#[test]
fn empty_detections_have_zero_recall() {
    let tmp = TempDir::new().unwrap();
    let gt = tmp.path().join("gt.csv");
    let dets = tmp.path().join("dets.csv");
    fs::write(&gt, "frame,id,x,y,w,h\n0,1,0,0,10,10\n").unwrap();
    fs::write(&dets, "frame,source,x,y,w,h\n").unwrap();
    let o = fgrefine(&["eval", "--dets", s(&dets), "--gt", s(&gt)]);
    assert!(o.status.success());
    assert_eq!(value(&stdout(&o), "detections.recall"), 0.0);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let scene = tmp.path().join("scene");
    emit(&scene, "fragmentation");
    let run = |name: &str| {
        let out = tmp.path().join(name);
        let o = fgrefine(&["run", "--frames", s(&scene.join("frames")), "--output", s(&out)]);
        assert!(o.status.success());
        tree(&out)
    };
    let a = run("a");
    assert!(!a.is_empty());
    assert!(a == run("b"));
}

#[test]
fn dump_config_applies_overrides() {
    let o = fgrefine(&["dump-config", "--set", "merge.t_m=5"]);
    assert!(o.status.success());
    assert_eq!(value(&stdout(&o), "merge.t_m"), 5.0);

    let tmp = TempDir::new().unwrap();
    let file = tmp.path().join("cfg.txt");
    fs::write(&file, "# tighter split\nsplit.t_int = 0.1\n").unwrap();
    let o = fgrefine(&["dump-config", "--config", s(&file)]);
    assert!(o.status.success());
    assert_eq!(value(&stdout(&o), "split.t_int"), 0.1);
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(fgrefine(&["dump-config", "--set", "merge.nope=1"]).status.code(), Some(1));
    assert_eq!(fgrefine(&["dump-config", "--set", "merge.t_m=-3"]).status.code(), Some(1));
    assert_eq!(fgrefine(&["synth", "emit", "no_such_preset", "/nonexistent"]).status.code(), Some(1));
    assert_eq!(fgrefine(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn io_errors_exit_2() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("missing");
    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let out = tmp.path().join("out");
    assert_eq!(fgrefine(&["run", "--frames", s(&missing), "--output", s(&out)]).status.code(), Some(2));
    assert_eq!(fgrefine(&["run", "--frames", s(&empty), "--output", s(&out)]).status.code(), Some(2));
}

#[test]
fn malformed_input_exits_3() {
    let tmp = TempDir::new().unwrap();
    let gt = tmp.path().join("gt.csv");
    fs::write(&gt, "frame,id,x,y,w,h\n0,1,0,0,10,10\n1,one,0,0,10,10\n").unwrap();
    let o = fgrefine(&["eval", "--dets", s(&gt), "--gt", s(&gt)]);
    assert_eq!(o.status.code(), Some(3));
    // the message points at the offending line
    assert!(String::from_utf8_lossy(&o.stderr).contains(":3:"));
}
