use std::path::Path;
use std::process::{Command, Output};

fn invquad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_invquad"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn design_then_check_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for crit in ["D", "E", "D1", "ce"] {
        let file = dir.path().join(format!("{crit}.json"));
        let out = invquad(&[
            "design",
            "--preset",
            "landete",
            "--criterion",
            crit,
            "--out",
            path(&file),
        ]);
        assert!(out.status.success(), "{crit}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(stdout(&out).contains("passed"));

        let report = json(&invquad(&["check", path(&file)]));
        assert_eq!(report["passed"], true, "{crit}: {report}");
    }
}

#[test]
fn design_json_matches_file_format() {
    let v = json(&invquad(&[
        "design",
        "--preset",
        "landete",
        "--criterion",
        "D",
        "--json",
    ]));
    assert_eq!(v["model"]["kind"], "P1");
    assert_eq!(v["space"]["s"], 1.0);
    assert_eq!(v["space"]["t"], 14.0);
    let pts: Vec<f64> = serde_json::from_value(v["points"].clone()).unwrap();
    assert!((pts[1] - 3.4089).abs() < 1e-3, "{pts:?}");
    let w: Vec<f64> = serde_json::from_value(v["weights"].clone()).unwrap();
    assert!(w.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-9));
}

#[test]
fn unbounded_d_design_is_geometric() {
    let v = json(&invquad(&[
        "design",
        "--model",
        "P1",
        "--theta",
        "1,0,1",
        "--space",
        "0:inf",
        "--criterion",
        "D",
        "--json",
    ]));
    assert_eq!(v["space"]["t"], "inf");
    let pts: Vec<f64> = serde_json::from_value(v["points"].clone()).unwrap();
    assert!((pts[1] - 1.0).abs() < 1e-9);
    assert!((pts[2] - 3.043738).abs() < 1e-6, "{pts:?}");
    assert!((pts[0] * pts[2] - 1.0).abs() < 1e-9);
}

#[test]
fn negative_theta_is_accepted_as_a_value() {
    let out = invquad(&["chebpoints", "--model", "P1", "--theta", "1,-0.5,1", "--space", "0:inf"]);
    let v = json(&out);
    assert_eq!(v["points"].as_array().unwrap().len(), 3);
}

#[test]
fn validation_errors_exit_2() {
    // extrapolation point inside the design space
    let out = invquad(&["design", "--preset", "landete", "--criterion", "ce", "--xe", "5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());

    let out = invquad(&[
        "design",
        "--model",
        "P1",
        "--theta",
        "1,-3,1",
        "--space",
        "0:inf",
        "--criterion",
        "D",
    ]);
    assert_eq!(out.status.code(), Some(2));

    let out = invquad(&["design", "--preset", "nowhere", "--criterion", "D"]);
    assert_eq!(out.status.code(), Some(2));

    let out = invquad(&["design", "--preset", "landete", "--criterion", "A"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_design_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bad.json");
    std::fs::write(
        &file,
        r#"{"model": {"kind": "P1", "theta": [1, 0, 1]}, "space": {"s": 0, "t": "inf"},
            "points": [0.5, 1, 3], "weights": [0.3, 0.3, 0.3]}"#,
    )
    .unwrap();
    let out = invquad(&["check", path(&file), "--criterion", "D"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn check_reports_suboptimal_design() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("u.json");
    std::fs::write(
        &file,
        r#"{"model": {"kind": "P1", "theta": [0.0002865, 0.0002117, 0.0000301]},
            "space": {"s": 1, "t": 14}, "points": [1, 7, 14], "weights": [0.3, 0.3, 0.4]}"#,
    )
    .unwrap();
    let report = json(&invquad(&["check", path(&file), "--criterion", "D"]));
    assert_eq!(report["passed"], false);
    assert!(report["violation"].as_f64().unwrap() > 0.0);
}

#[test]
fn simulate_requires_seed() {
    let out = invquad(&[
        "simulate",
        "--preset",
        "landete",
        "--criterion",
        "D",
        "--sigma-rel",
        "0.05",
        "--n",
        "30",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
}

#[test]
fn simulate_is_deterministic() {
    let args = [
        "simulate",
        "--preset",
        "landete",
        "--criterion",
        "D",
        "--sigma-rel",
        "0.05",
        "--n",
        "60",
        "--replicates",
        "200",
        "--seed",
        "11",
    ];
    let a = invquad(&args);
    let b = invquad(&args);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let v = json(&a);
    assert_eq!(v["replicates"], 200);
    assert_eq!(v["counts"], serde_json::json!([20, 20, 20]));
}

#[test]
fn round_design_file() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("d1.json");
    let out = invquad(&[
        "design",
        "--preset",
        "landete",
        "--criterion",
        "D1",
        "--out",
        path(&file),
    ]);
    assert!(out.status.success());
    let out = invquad(&["round", path(&file), "--n", "100"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let counts: Vec<usize> = text
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(counts.iter().sum::<usize>(), 100);
    for (k, nw) in counts.iter().zip([12.39, 28.84, 58.77]) {
        assert!((*k as f64 - nw).abs() <= 1.0, "{counts:?}");
    }

    let out = invquad(&["round", path(&file), "--n", "2"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn table_csv_layout() {
    let dir = tempfile::tempdir().unwrap();
    let out = invquad(&["table", "--preset", "landete", "--out-dir", path(dir.path())]);
    assert!(out.status.success());
    let t51 = std::fs::read_to_string(dir.path().join("table51.csv")).unwrap();
    let t52 = std::fs::read_to_string(dir.path().join("table52.csv")).unwrap();
    assert!(!t51.contains('\r') && !t52.contains('\r'));
    assert_eq!(t51.lines().next(), Some("criterion,u0,u1,u2,w0,w1,w2"));
    assert!(
        t51.contains("\nD,1.0000,3.4090,14.0000,0.3333,0.3333,0.3333\n"),
        "{t51}"
    );
    let rows: Vec<&str> = t52.lines().collect();
    assert_eq!(rows[0], "design,D,E,D1,ce");
    assert_eq!(rows[1], "xi_u,69.92,50.33,45.85,33.82");
    for (i, row) in rows[2..].iter().enumerate() {
        assert_eq!(row.split(',').nth(i + 1), Some("100.00"), "{row}");
    }
}

#[test]
fn table_layouts_are_transposes() {
    let dir = tempfile::tempdir().unwrap();
    let read = |layout: &str| -> Vec<Vec<String>> {
        let out = invquad(&[
            "table",
            "--preset",
            "landete",
            "--layout",
            layout,
            "--out-dir",
            path(dir.path()),
        ]);
        assert!(out.status.success());
        std::fs::read_to_string(dir.path().join("table52.csv"))
            .unwrap()
            .lines()
            .skip(2)
            .map(|l| l.split(',').skip(1).map(String::from).collect())
            .collect()
    };
    let by_criterion = read("by-criterion");
    let by_design = read("by-design");
    for i in 0..4 {
        for j in 0..4 {
            assert_eq!(by_criterion[i][j], by_design[j][i]);
        }
    }
}

#[test]
fn efficiency_rows_are_designs() {
    let out = invquad(&["efficiency", "--preset", "landete"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("xi_D,100.00,93.96,74.63,51.23"), "{text}");
}

#[test]
fn unbounded_extrapolation_design() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("ce.json");
    let out = invquad(&[
        "design",
        "--model",
        "P1",
        "--theta",
        "1,0,1",
        "--space",
        "0:inf",
        "--criterion",
        "ce",
        "--xe",
        "20",
        "--out",
        path(&file),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&invquad(&["check", path(&file)]))["passed"], true);

    // between the outer Chebyshev points no three-point design exists
    let out = invquad(&[
        "design",
        "--model",
        "P1",
        "--theta",
        "1,0,1",
        "--space",
        "0:inf",
        "--criterion",
        "ce",
        "--xe",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(2));
}
