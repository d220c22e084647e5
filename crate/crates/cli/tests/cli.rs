use std::process::{Command, Output};

use ballpiston::geometry::{derive_geometry, reference_rho, GeometryParams};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ballpiston"));
    c.env_remove("BALLPISTON_OUTPUT_DIR");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn body(text: &str) -> String {
    text.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n")
}

#[test]
fn geometry_json_has_every_summary_field() {
    let o = run(&["geometry", "--rho", "0.52955", "--delta", "0.1", "--format", "json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let g = derive_geometry(&GeometryParams::new(0.52955, 0.1).unwrap());
    let expected = serde_json::to_value(g).unwrap();
    for (k, x) in expected.as_object().unwrap() {
        let (a, b) = (v[k].as_f64().unwrap(), x.as_f64().unwrap());
        // the default JSON float parser may miss by an ulp
        assert!((a - b).abs() <= 4.0 * f64::EPSILON * b.abs(), "field {k}");
    }
    assert_eq!(v["meta"]["command"], "geometry");
}

#[test]
fn csv_starts_with_metadata() {
    let o = run(&["geometry", "--delta", "0.05,0.1"]);
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("# version: ballpiston "));
    assert!(text.contains("# seed: null"));
    let header = lines.iter().find(|l| !l.starts_with('#')).unwrap();
    assert!(header.starts_with("rho,delta,lambda,"));
    assert_eq!(body(&text).lines().count(), 3);
}

#[test]
fn reruns_are_byte_identical() {
    let args = ["phi-scan", "--delta", "0.2", "--ep", "0.05,0.3", "--samples", "1000", "--seed", "7"];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let c = run(&[&args[..], &["--threads", "1"]].concat());
    assert_eq!(body(&stdout(&a)), body(&stdout(&c)));
    let d = run(&["phi-scan", "--delta", "0.2", "--ep", "0.05,0.3", "--samples", "1000", "--seed", "8"]);
    assert_ne!(body(&stdout(&a)), body(&stdout(&d)));
}

#[test]
fn exit_codes() {
    // seed missing
    assert_eq!(run(&["mft", "--delta", "0.1"]).status.code(), Some(1));
    assert_eq!(run(&["geometry", "--delta", "0.1", "--nonsense"]).status.code(), Some(1));
    assert_eq!(run(&["geometry"]).status.code(), Some(1));
    let o = run(&["geometry", "--delta", "0.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("penetration length"));
    assert_eq!(run(&["geometry", "--rho", "0.8", "--delta", "0.1"]).status.code(), Some(2));
    assert_eq!(run(&["kernel", "--mode", "moments", "--eb=-1", "--ep", "0.1"]).status.code(), Some(2));
    assert!(run(&["--help"]).status.success());
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "delta = 0.2\nformat = \"json\"\n").unwrap();
    let path = cfg.to_str().unwrap();

    let o = run(&["geometry", "--config", path]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["delta"], 0.2);

    let o = run(&["geometry", "--config", path, "--delta", "0.1"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["delta"], 0.1);

    std::fs::write(&cfg, "delta = 0.2\ndleta = 0.1\n").unwrap();
    assert_eq!(run(&["geometry", "--config", path]).status.code(), Some(1));
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .args(["kernel", "--mode", "canonical", "--beta", "1"])
        .env("BALLPISTON_OUTPUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
    let text = std::fs::read_to_string(dir.path().join("kernel.csv")).unwrap();
    assert!(body(&text).starts_with("beta,rate,current,spread,target,max_relative_spread"));

    let explicit = dir.path().join("k.json");
    let o = run(&["kernel", "--mode", "canonical", "--format", "json", "--output", explicit.to_str().unwrap()]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(explicit).unwrap()).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 1);
}

#[test]
fn named_grids_expand() {
    let o = run(&["geometry", "--delta-grid", "paper"]);
    assert_eq!(body(&stdout(&o)).lines().count(), 7);
    let o = run(&["cond-mft", "--delta", "0.2", "--ep-grid", "paper", "--samples", "999", "--seed", "1"]);
    // the sample floor is checked before any trajectory runs
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn master_and_gillespie_outputs() {
    let o = run(&["master", "--cells", "20", "--time", "1", "--initial-ep", "0.3"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let total: f64 = body(&text)
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-12);

    let o = run(&["gillespie", "--eb", "0.25", "--ep", "0.25", "--jumps", "50", "--seed", "3"]);
    let rows: Vec<Vec<f64>> = body(&stdout(&o))
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 50);
    for r in rows {
        assert!((r[2] + r[3] - 0.5).abs() < 1e-12);
    }
    assert_eq!(run(&["gillespie", "--eb", "0.25", "--ep", "0.25", "--seed", "3"]).status.code(), Some(1));
}

#[test]
fn reference_radius_is_the_default() {
    let o = run(&["geometry", "--delta", "0.1", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((v["rho"].as_f64().unwrap() - reference_rho()).abs() < 1e-15);
}
