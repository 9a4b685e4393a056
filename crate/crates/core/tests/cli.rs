//! End-to-end runs of the `nncert` binary against the library.

use std::path::Path;
use std::process::{Command, Output};

use nalgebra::DMatrix;
use nncert::fixtures::{example, Integrator};
use nncert::reach::{verify_safety, Dynamics, ReachOptions};
use nncert::sdp::{import_sdpa, solve, Settings, SolveStatus};
use nncert::sectors::SectorData;
use nncert::stability::{verify_stability, StabilityOptions};

fn nncert(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nncert"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("NNCERT_SOLVER")
        .output()
        .expect("binary runs")
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&read(p)).unwrap()
}

#[test]
fn contraction_stability_certifies_and_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let o = nncert(&["--mode", "stability", "--example", "contraction", "--seed", "4"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&dir.path().join("verdict.json"));
    assert_eq!(v["verdict"], "certified");
    assert_eq!(v["exit_code"], 0);
    assert_eq!(v["metadata"]["version"], env!("CARGO_PKG_VERSION"));

    let ex = example("contraction").unwrap();
    let data = ex.data(5, 4, Integrator::Euler).unwrap();
    let lib = verify_stability(
        &ex.controller,
        &SectorData::default_for(&ex.controller).unwrap(),
        &data,
        &StabilityOptions::default(),
    )
    .unwrap();
    assert!(lib.verdict.is_certified());
    assert_eq!(read(&dir.path().join("certificate.json")), lib.to_json_string().unwrap() + "\n");

    // The dumped certificate is a valid one: Q1 symmetric positive definite
    // and the ROA slice lies on its level set.
    let cert = json(&dir.path().join("certificate.json"));
    let rows: Vec<Vec<f64>> = serde_json::from_value(cert["Q1"].clone()).unwrap();
    let q1 = DMatrix::from_fn(2, 2, |i, j| rows[i][j]);
    assert!(q1.clone().cholesky().is_some());
    let p = q1.try_inverse().unwrap();
    let csv = read(&dir.path().join("roa_0_1.csv"));
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("x_0,x_1"));
    let mut count = 0;
    for l in lines {
        let xy: Vec<f64> = l.split(',').map(|s| s.parse().unwrap()).collect();
        let x = nalgebra::DVector::from_vec(xy);
        assert!((x.dot(&(&p * &x)) - 1.0).abs() <= 1e-9);
        count += 1;
    }
    assert!(count > 100);
    assert!(read(&dir.path().join("roa.svg")).contains("<polygon"));
}

#[test]
fn short_vehicle_data_fails_the_rank_check() {
    let dir = tempfile::tempdir().unwrap();
    let o = nncert(&["--mode", "collect", "--example", "vehicle", "--samples", "4"], &dir.path().join("c"));
    assert_eq!(o.status.code(), Some(0));
    let data = dir.path().join("c/data.csv");
    let o = nncert(&["--mode", "check-data", "--data", data.to_str().unwrap()], &dir.path().join("k"));
    assert_eq!(o.status.code(), Some(2));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("rank([U0;X0]) = 4 < 5"), "{stdout}");
    let v = json(&dir.path().join("k/verdict.json"));
    assert_eq!(v["verdict"], "fail");
    assert!(read(&dir.path().join("k/report.txt")).contains("rank([U0;X0]) = 4 (need 5)"));

    // The verifiers refuse such data outright.
    let o = nncert(&["--mode", "stability", "--example", "vehicle", "--samples", "4"], &dir.path().join("s"));
    assert_eq!(o.status.code(), Some(1));
    let diag: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(diag["error"]["kind"], "excitation");

    for k in ["5", "10", "55"] {
        let o = nncert(&["--mode", "stability", "--example", "vehicle", "--samples", k], &dir.path().join(k));
        assert_eq!(o.status.code(), Some(0), "K = {k}");
    }
}

#[test]
fn two_state_safety_matches_library_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let o = nncert(&["--mode", "safety", "--example", "two-state", "--horizon", "3", "--seed", "2"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let ex = example("two-state").unwrap();
    let data = ex.data(5, 2, Integrator::Euler).unwrap();
    let lib = verify_safety(
        &ex.controller,
        &SectorData::default_for(&ex.controller).unwrap(),
        Dynamics::Data(&data),
        ex.sets.input_set.as_ref().unwrap(),
        ex.sets.safe_set.as_ref().unwrap(),
        3,
        &ReachOptions::default(),
    )
    .unwrap();
    assert_eq!(json(&dir.path().join("verdict.json"))["verdict"], "safe");
    assert_eq!(read(&dir.path().join("certificate.json")), lib.to_json_string().unwrap() + "\n");

    let csv = read(&dir.path().join("gamma.csv"));
    let table: Vec<Vec<f64>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').skip(1).map(|s| s.parse().unwrap()).collect())
        .collect();
    assert_eq!(table.len(), 3);
    for (row, lib_row) in table.iter().zip(lib.gamma_table()) {
        for (g, l) in row.iter().zip(lib_row) {
            assert_eq!(g.to_bits(), l.unwrap().to_bits());
        }
    }
    for k in 1..table.len() {
        for i in 0..table[k].len() {
            assert!(table[k][i] >= table[k - 1][i], "facet {i} shrinks at step {}", k + 1);
        }
    }
    assert!(read(&dir.path().join("gamma.svg")).contains("<rect"));
}

#[test]
fn runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for mode in ["stability", "safety", "invariance", "collect", "check-data"] {
        let (a, b) = (dir.path().join(format!("{mode}-a")), dir.path().join(format!("{mode}-b")));
        let args = ["--mode", mode, "--example", "contraction", "--seed", "11"];
        let (oa, ob) = (nncert(&args, &a), nncert(&args, &b));
        assert_eq!(oa.status.code(), ob.status.code());
        assert_eq!(oa.stdout, ob.stdout);
        let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        assert!(names.len() >= 2, "{mode}: {names:?}");
        for n in names {
            assert_eq!(std::fs::read(a.join(&n)).unwrap(), std::fs::read(b.join(&n)).unwrap(), "{mode}: {n:?}");
        }
    }
}

#[test]
fn collected_files_reproduce_the_example_run() {
    let dir = tempfile::tempdir().unwrap();
    let c = dir.path().join("collect");
    assert_eq!(nncert(&["--mode", "collect", "--example", "contraction", "--seed", "5"], &c).status.code(), Some(0));
    for f in ["data.csv", "nn.json", "sets.json", "plant.json", "verdict.json", "report.txt"] {
        assert!(c.join(f).exists(), "{f}");
    }
    let p = |f: &str| c.join(f).to_str().unwrap().to_owned();
    let from_files = dir.path().join("files");
    let o = nncert(
        &["--mode", "invariance", "--nn", &p("nn.json"), "--data", &p("data.csv"), "--sets", &p("sets.json")],
        &from_files,
    );
    let from_example = dir.path().join("example");
    let o2 = nncert(&["--mode", "invariance", "--example", "contraction", "--seed", "5"], &from_example);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(o2.status.code(), Some(0));
    assert_eq!(
        read(&from_files.join("certificate.json")),
        read(&from_example.join("certificate.json"))
    );

    // Known-plant path from the same files agrees on the verdict.
    let model = dir.path().join("model");
    let o3 = nncert(
        &["--mode", "invariance", "--nn", &p("nn.json"), "--plant", &p("plant.json"), "--sets", &p("sets.json")],
        &model,
    );
    assert_eq!(o3.status.code(), Some(0));
}

#[test]
fn exported_program_solves_to_the_same_objective() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("stab.dat-s");
    let o = nncert(
        &["--mode", "stability", "--example", "contraction", "--export-sdpa", path.to_str().unwrap()],
        &dir.path().join("out"),
    );
    assert_eq!(o.status.code(), Some(0));
    let prog = import_sdpa(&read(&path)).unwrap();
    let sol = solve(&prog, &Settings::default());
    assert_eq!(sol.status, SolveStatus::Optimal);
    let cert = json(&dir.path().join("out/certificate.json"));
    let obj = cert["objective_value"].as_f64().unwrap();
    assert!((sol.primal_objective - obj).abs() <= 1e-6 * (1.0 + obj.abs()), "{} vs {obj}", sol.primal_objective);

    let prefix = dir.path().join("reach.dat-s");
    let o = nncert(
        &["--mode", "safety", "--example", "two-state", "--export-sdpa", prefix.to_str().unwrap()],
        &dir.path().join("out2"),
    );
    assert_eq!(o.status.code(), Some(0));
    for k in 1..=3 {
        for i in 0..4 {
            assert!(dir.path().join(format!("reach_k{k}_f{i}.dat-s")).exists());
        }
    }
}

#[test]
fn errors_exit_one_with_a_json_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [&[&str]; 4] = [
        &["--mode", "stability", "--nn", "/no/such/file.json", "--example", "contraction"],
        &["--mode", "safety"],
        &["--mode", "whatever"],
        &["--mode", "stability", "--example", "nope"],
    ];
    for args in cases {
        let o = nncert(args, dir.path());
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        let diag: serde_json::Value = serde_json::from_slice(&o.stderr)
            .unwrap_or_else(|e| panic!("{args:?}: {e}: {}", String::from_utf8_lossy(&o.stderr)));
        assert!(diag["error"]["kind"].is_string());
        assert!(diag["error"]["message"].is_string());
    }
    let o = Command::new(env!("CARGO_BIN_EXE_nncert"))
        .args(["--mode", "check-data", "--example", "vehicle", "--out"])
        .arg(dir.path())
        .env("NNCERT_SOLVER", "mosek")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn pendulum_stability_certifies() {
    let dir = tempfile::tempdir().unwrap();
    let o = nncert(&["--mode", "stability", "--example", "pendulum", "--samples", "5", "--seed", "1"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let cert = json(&dir.path().join("certificate.json"));
    assert_eq!(cert["Q1"].as_array().unwrap().len(), 2);
    let o = nncert(
        &["--mode", "stability", "--example", "pendulum", "--integrator", "rk4", "--objective", "trace_max"],
        &dir.path().join("rk4"),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn noisy_runs_are_not_certificates() {
    let dir = tempfile::tempdir().unwrap();
    let o = nncert(&["--mode", "stability", "--example", "contraction", "--noise", "1e-4"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let v = json(&dir.path().join("verdict.json"));
    assert_eq!(v["certifying"], false);
    assert!(read(&dir.path().join("report.txt")).contains("Nothing above is a certificate"));
}
