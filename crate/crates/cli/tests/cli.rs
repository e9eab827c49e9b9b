use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn windgmm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_windgmm"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Small bundled scenario so fits finish quickly.
fn small_config(dir: &Path, extra: &str) -> String {
    let text = format!("components = 5\n{extra}\n[data]\nkind = \"bundled\"\nn_points = 96\n");
    fs::write(dir.join("small.toml"), text).unwrap();
    "small.toml".into()
}

#[test]
fn distributed_fit_reports_every_node() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let out = windgmm(tmp.path(), &["--config", &cfg, "fit-dmap"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let doc: Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("out/fit_dmap.json")).unwrap())
            .unwrap();
    let nodes = doc["nodes"].as_array().unwrap();
    assert_eq!(nodes.len(), 11);
    assert_eq!(
        nodes
            .iter()
            .filter(|n| n["decision_output"] == true)
            .count(),
        1
    );

    let eval = windgmm(
        tmp.path(),
        &[
            "--config",
            &cfg,
            "eval-rmse",
            "--params",
            "out/fit_dmap.json",
        ],
    );
    assert_eq!(code(&eval), 0, "{}", stderr(&eval));
    let csv = fs::read_to_string(tmp.path().join("out/rmse.csv")).unwrap();
    assert!(csv.starts_with("model,rmse\n"));
    assert_eq!(csv.lines().count(), 12);
}

#[test]
fn cutting_a_bridge_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let ok = windgmm(tmp.path(), &["topology", "--cut-link", "1,2"]);
    assert_eq!(code(&ok), 0, "{}", stderr(&ok));
    let toml = fs::read_to_string(tmp.path().join("out/topology.toml")).unwrap();
    assert!(toml.contains("cut_links = [[1, 2]]"), "{toml}");

    let out = windgmm(
        tmp.path(),
        &["topology", "--cut-link", "1,2", "--cut-link", "1,4"],
    );
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("disconnects"), "{}", stderr(&out));
}

#[test]
fn bad_arguments_and_configs_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&windgmm(tmp.path(), &["fit-map", "--bogus"])), 1);
    assert_eq!(
        code(&windgmm(tmp.path(), &["topology", "--cut-link", "0,3"])),
        1
    );
    assert_eq!(
        code(&windgmm(
            tmp.path(),
            &["--config", "missing.toml", "fit-em"]
        )),
        1
    );
    fs::write(
        tmp.path().join("bad.toml"),
        "components = 0\n[data]\nkind = \"bundled\"\nn_points = 24\n",
    )
    .unwrap();
    let out = windgmm(tmp.path(), &["--config", "bad.toml", "fit-em"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("components must be positive"));
    assert_eq!(code(&windgmm(tmp.path(), &["--help"])), 0);
}

#[test]
fn hitting_the_iteration_cap_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "[fit]\nmax_iter = 2\n");
    let out = windgmm(tmp.path(), &["--config", &cfg, "fit-map"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(tmp.path().join("out/fit_map.json").is_file());
}

#[test]
fn same_seed_gives_identical_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let run = |seed: &str, out: &str| {
        let o = windgmm(
            tmp.path(),
            &["--config", &cfg, "--seed", seed, "--out", out, "fit-map"],
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        fs::read(tmp.path().join(out).join("fit_map.json")).unwrap()
    };
    let a = run("7", "a");
    let b = run("7", "b");
    let c = run("8", "c");
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn synthetic_csv_scenario_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let synth = windgmm(tmp.path(), &["--out", "scen", "synth", "--points", "96"]);
    assert_eq!(code(&synth), 0, "{}", stderr(&synth));
    let files = fs::read_dir(tmp.path().join("scen/data")).unwrap().count();
    assert_eq!(files, 10);
    let mut scenario = fs::read_to_string(tmp.path().join("scen/scenario.toml")).unwrap();
    scenario = scenario.replace("components = 20", "components = 5");
    fs::write(tmp.path().join("scen/scenario.toml"), scenario).unwrap();

    let cfg = ["--config", "scen/scenario.toml"];
    for fit in ["fit-em", "fit-map"] {
        let out = windgmm(tmp.path(), &[&cfg[..], &[fit]].concat());
        assert_eq!(code(&out), 0, "{fit}: {}", stderr(&out));
    }
    let out = windgmm(
        tmp.path(),
        &[
            &cfg[..],
            &[
                "eval-conditional",
                "--params",
                "out/fit_map.json",
                "--params",
                "out/fit_em.json",
            ],
        ]
        .concat(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let bins = fs::read_to_string(tmp.path().join("out/conditional_fit_map.csv")).unwrap();
    assert!(bins.starts_with("bin,rmse\n"));
    assert_eq!(bins.lines().count(), 10);

    // Bare parameter sets are accepted as well as fit reports.
    let report: Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("out/fit_map.json")).unwrap())
            .unwrap();
    fs::write(tmp.path().join("bare.json"), report["params"].to_string()).unwrap();
    let out = windgmm(
        tmp.path(),
        &[
            &cfg[..],
            &[
                "eval-rmse",
                "--params",
                "bare.json",
                "--against",
                "out/fit_map.json",
            ],
        ]
        .concat(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = fs::read_to_string(tmp.path().join("out/rmse.csv")).unwrap();
    let rmse: f64 = csv
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert!(rmse < 1e-12, "{csv}");
}
