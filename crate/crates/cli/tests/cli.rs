use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gridloc::world_map::write_map;
use gridloc::{Occupancy, OccupancyGrid};
use tempfile::TempDir;

const SIM: &str = r#"
start = [0.6, 0.6, 0.0]
beam_count = 16
seed = 1

[sensor]
sigma = 0.03
c_r = 0.002
c_d = 0.98
max_range = 4.0
n = 40

[noise]
trans_variance_per_meter = 0.002
rot_variance_per_meter = 0.002

[[path]]
cmd = "goto"
x = 3.4
y = 0.6

[[path]]
cmd = "goto"
x = 3.4
y = 2.4

[[path]]
cmd = "goto"
x = 0.6
y = 2.4

[[path]]
cmd = "goto"
x = 0.6
y = 0.6
"#;

const LOCALIZER: &str = r#"
cell_size = 0.2
theta_bins = 16
beam_stride = 2

[sensor]
n = 40
max_range = 4.0
sigma = 0.15
c_r = 0.01
c_d = 0.9
"#;

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        let ws = Workspace { dir: tempfile::tempdir().unwrap() };
        let mut map = OccupancyGrid::new(40, 30, 0.1, (0.0, 0.0), Occupancy::Free).unwrap();
        map.fill_rect(0.0, 0.0, 4.0, 0.2, Occupancy::Occupied);
        map.fill_rect(0.0, 2.8, 4.0, 3.0, Occupancy::Occupied);
        map.fill_rect(0.0, 0.0, 0.2, 3.0, Occupancy::Occupied);
        map.fill_rect(3.8, 0.0, 4.0, 3.0, Occupancy::Occupied);
        map.fill_rect(1.4, 1.2, 2.4, 1.8, Occupancy::Occupied);
        map.fill_rect(2.8, 0.8, 3.0, 1.0, Occupancy::Occupied);
        let mut text = Vec::new();
        write_map(&map, &mut text).unwrap();
        fs::write(ws.path("map.txt"), text).unwrap();
        fs::write(ws.path("sim.toml"), SIM).unwrap();
        fs::write(ws.path("loc.toml"), LOCALIZER).unwrap();
        ws
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_gridloc")).current_dir(self.dir.path()).args(args).output().unwrap()
    }

    fn ok(&self, args: &[&str]) -> serde_json::Value {
        let out = self.run(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        let stdout = String::from_utf8(out.stdout).unwrap();
        serde_json::from_str(stdout.trim()).unwrap_or(serde_json::Value::String(stdout))
    }

    fn simulate(&self, tag: &str, seed: &str) -> serde_json::Value {
        let (log, truth, corr) = (format!("{tag}.log"), format!("{tag}_truth.csv"), format!("{tag}_corr.csv"));
        self.ok(&[
            "simulate", "--map", "map.txt", "--config", "sim.toml", "--seed", seed, "--log", &log, "--truth", &truth,
            "--corruption", &corr,
        ])
    }
}

fn read(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let ws = Workspace::new();
    let a = ws.simulate("a", "3");
    let b = ws.simulate("b", "3");
    ws.simulate("c", "4");
    assert_eq!(a, b);
    assert!(a["scans"].as_u64().unwrap() > 20);
    for suffix in [".log", "_truth.csv", "_corr.csv"] {
        assert_eq!(read(&ws.path(&format!("a{suffix}"))), read(&ws.path(&format!("b{suffix}"))));
    }
    assert_ne!(read(&ws.path("a.log")), read(&ws.path("c.log")));
}

#[test]
fn simulate_localize_eval_pipeline() {
    let ws = Workspace::new();
    ws.simulate("run", "0");
    let table = ws.ok(&["build-table", "--map", "map.txt", "--config", "loc.toml", "--out", "table.bin"]);
    assert_eq!(table["table_bins"], 16);
    assert_eq!(&read(&ws.path("table.bin"))[..4], b"MLST");

    let summary = ws.ok(&[
        "localize", "--map", "map.txt", "--log", "run.log", "--config", "loc.toml", "--table", "table.bin", "--out",
        "traj.csv", "--decisions", "dec.csv", "--truth", "run_truth.csv", "--snapshot", "final", "--top-k", "5",
    ]);
    assert!(read(&ws.path("final.pgm")).starts_with(b"P2\n20 15\n255\n"));
    let top = String::from_utf8(read(&ws.path("final_top.csv"))).unwrap();
    assert_eq!(top.lines().count(), 6);
    assert!(top.starts_with("rank,x,y,theta,prob\n"));
    let direct = ws.ok(&[
        "localize", "--map", "map.txt", "--log", "run.log", "--config", "loc.toml", "--out", "traj2.csv",
    ]);
    assert_eq!(read(&ws.path("traj.csv")), read(&ws.path("traj2.csv")));
    assert_eq!(summary["estimates"], direct["estimates"]);

    let eval = ws.ok(&["eval", "--trajectory", "traj.csv", "--truth", "run_truth.csv"]);
    assert_eq!(eval["mean_error"], summary["mean_error"]);
    assert!(eval["mean_error"].as_f64().unwrap() < 0.5, "{eval}");
    let header = String::from_utf8(read(&ws.path("dec.csv"))).unwrap();
    assert!(header.starts_with("t,bearing,measured,decision,score\n"));
}

#[test]
fn eval_of_truth_against_itself_is_zero() {
    let ws = Workspace::new();
    ws.simulate("run", "0");
    let truth = String::from_utf8(read(&ws.path("run_truth.csv"))).unwrap();
    let mut traj = String::from("t,x,y,theta,prob,entropy,active_fraction\n");
    for line in truth.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        traj.push_str(&format!("{},{},{},{},1,0,1\n", f[0], f[1], f[2], f[3]));
    }
    fs::write(ws.path("perfect.csv"), traj).unwrap();
    let eval = ws.ok(&["eval", "--trajectory", "perfect.csv", "--truth", "run_truth.csv"]);
    assert_eq!(eval["mean_error"], 0.0);
    assert_eq!(eval["failure_fraction"], 0.0);
}

#[test]
fn fit_sensor_reads_corruption_pairs() {
    let ws = Workspace::new();
    ws.simulate("run", "0");
    let corr = String::from_utf8(read(&ws.path("run_corr.csv"))).unwrap();
    let mut pairs = String::from("expected_m,measured_m\n");
    for line in corr.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        pairs.push_str(&format!("{},{}\n", f[4], f[3]));
    }
    fs::write(ws.path("pairs.csv"), pairs).unwrap();
    let fit = ws.ok(&["fit-sensor", "--pairs", "pairs.csv", "--n", "40", "--max-range", "4.0"]);
    let sigma = fit["sigma"].as_f64().unwrap();
    assert!(sigma > 0.0 && sigma < 0.2, "{fit}");
}

#[test]
fn sweep_writes_one_row_per_cell_size() {
    let ws = Workspace::new();
    let out = ws.ok(&["sweep", "--map", "map.txt", "--sim", "sim.toml", "--config", "loc.toml", "--cells", "0.2,0.4"]);
    let text = out.as_str().unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "cell_size,runs,mean_error,error_ci,convergence_time");
    assert_eq!(lines.len(), 3);
}

#[test]
fn exit_codes() {
    let ws = Workspace::new();
    assert_eq!(code(&ws.run(&[])), 1);
    assert_eq!(code(&ws.run(&["simulate", "--bogus"])), 1);
    assert_eq!(code(&ws.run(&["sweep", "--map", "map.txt", "--sim", "sim.toml", "--cells", "-1"])), 1);

    assert_eq!(code(&ws.run(&["eval", "--trajectory", "missing.csv", "--truth", "missing.csv"])), 2);
    fs::write(ws.path("bad_map.txt"), "MAP 2 2 0.5 0 0\n..\n.x\n").unwrap();
    assert_eq!(code(&ws.run(&["build-table", "--map", "bad_map.txt", "--out", "t.bin"])), 2);
    fs::write(ws.path("bad.log"), "ODOM 1 0.1 0\nODOM 0.5 0.1 0\n").unwrap();
    assert_eq!(code(&ws.run(&["localize", "--map", "map.txt", "--log", "bad.log", "--config", "loc.toml", "--out", "o.csv"])), 2);
    fs::write(ws.path("bad_sim.toml"), "speed = -2.0\n").unwrap();
    let out = ws.run(&["simulate", "--map", "map.txt", "--config", "bad_sim.toml", "--log", "l", "--truth", "t"]);
    assert_eq!(code(&out), 2);

    fs::write(ws.path("wall.toml"), "start = [0.6, 0.6, 0.0]\n[[path]]\ncmd = \"forward\"\ndistance = 10.0\n").unwrap();
    let out = ws.run(&["simulate", "--map", "map.txt", "--config", "wall.toml", "--log", "l", "--truth", "t"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
