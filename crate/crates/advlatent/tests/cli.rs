//! End-to-end runs of the `advlatent` binary: theory campaigns, the
//! split/attack pipeline, and the three wire-protocol roles talking over
//! real sockets.

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStderr, Command, Stdio};

use advlatent::splitnet::{mnist_cnn, save_package_set, split_model, ArchId};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_advlatent"))
}

/// Split an untrained classifier and write the package trio, skipping the
/// training loop the `split` subcommand would run.
fn untrained_package(dir: &Path) -> PathBuf {
    let model = split_model(ArchId::MnistCnn, mnist_cnn(5), 2, 5).unwrap();
    let path = dir.join("model.pkg");
    save_package_set(&model, &path).unwrap();
    path
}

/// Spawn a listening subcommand with port 0 and recover the port the OS
/// picked from its "listening on" stderr line.
fn spawn_listener(mut cmd: Command) -> (Child, u16, BufReader<ChildStderr>) {
    let mut child = cmd.stderr(Stdio::piped()).stdout(Stdio::piped()).spawn().unwrap();
    let mut stderr = BufReader::new(child.stderr.take().unwrap());
    let mut line = String::new();
    loop {
        line.clear();
        assert!(stderr.read_line(&mut line).unwrap() > 0, "listener exited before binding");
        if line.contains("listening on") {
            let port = line.trim().rsplit(':').next().unwrap().parse().unwrap();
            return (child, port, stderr);
        }
    }
}

#[test]
fn theory_campaigns_emit_json_reports() {
    let out = bin()
        .args(["theory", "--campaign", "dpi", "--trials", "64", "--seed", "7", "--max-support", "6"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["campaign"], "dpi");
    assert_eq!(report["trials"], 64);
    assert_eq!(report["violations"], 0);
}

#[test]
fn split_then_attack_round_trips_through_packages() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("train.toml");
    std::fs::write(&config, "epochs = 1\nbatch_size = 64\nlr = 3e-3\n").unwrap();
    let pkg = dir.path().join("model.pkg");

    let out = bin()
        .args(["split", "--arch", "mnist-cnn", "--split-index", "2", "--seed", "3"])
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&pkg)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for suffix in ["model.pkg", "model.mobile.pkg", "model.local.pkg", "model.manifest.json"] {
        assert!(dir.path().join(suffix).exists(), "missing {suffix}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(manifest["arch"], "mnist-cnn");
    assert_eq!(manifest["split_index"], 2);
    assert!(manifest["accuracy"].as_f64().unwrap() > 0.5);

    let csv_path = dir.path().join("results.csv");
    let out = bin()
        .args([
            "attack", "--space", "latent", "--algo", "pgd", "--eps", "0.1", "--steps", "5",
            "--queries", "200", "--n", "16", "--seed", "1",
        ])
        .arg("--model")
        .arg(&pkg)
        .arg("--out")
        .arg(&csv_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "sample_id,algo,space,norm,eps,success,queries,achieved_norm"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 16);
    for row in rows {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields[1], "pgd");
        assert_eq!(fields[2], "latent");
        assert!(fields[5] == "true" || fields[5] == "false");
        assert!(fields[7].parse::<f64>().unwrap() <= 0.1 + 1e-5);
    }
}

#[test]
fn edge_and_mobile_speak_the_wire_protocol() {
    let dir = tempfile::tempdir().unwrap();
    untrained_package(dir.path());

    let mut edge_cmd = bin();
    edge_cmd
        .args(["serve-edge", "--port", "0", "--once"])
        .arg("--model")
        .arg(dir.path().join("model.local.pkg"));
    let (mut edge, port, _edge_err) = spawn_listener(edge_cmd);

    let out = bin()
        .args(["serve-mobile", "--data", "mnist-test", "--n", "4"])
        .arg("--model")
        .arg(dir.path().join("model.mobile.pkg"))
        .arg("--connect")
        .arg(format!("127.0.0.1:{port}"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let json_start = stdout.find('{').unwrap();
    let summary: serde_json::Value = serde_json::from_str(&stdout[json_start..]).unwrap();
    assert_eq!(summary["sent"], 4);
    assert_eq!(summary["answered"], 4);
    assert!(summary["aborted"].is_null());

    assert!(edge.wait().unwrap().success());
}

#[test]
fn interceptors_perturb_traffic_between_the_halves() {
    let dir = tempfile::tempdir().unwrap();
    untrained_package(dir.path());

    let mut edge_cmd = bin();
    edge_cmd
        .args(["serve-edge", "--port", "0", "--once"])
        .arg("--model")
        .arg(dir.path().join("model.local.pkg"));
    let (mut edge, edge_port, _edge_err) = spawn_listener(edge_cmd);

    let mut mitm_cmd = bin();
    mitm_cmd
        .args([
            "intercept", "--listen", "0", "--algo", "square", "--eps", "0.3", "--queries", "48",
            "--steps", "5", "--once",
        ])
        .arg("--connect")
        .arg(format!("127.0.0.1:{edge_port}"));
    let (mut mitm, mitm_port, _mitm_err) = spawn_listener(mitm_cmd);

    let out = bin()
        .args(["serve-mobile", "--data", "mnist-test", "--n", "3"])
        .arg("--model")
        .arg(dir.path().join("model.mobile.pkg"))
        .arg("--connect")
        .arg(format!("127.0.0.1:{mitm_port}"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    assert!(mitm.wait().unwrap().success());
    let mut mitm_stdout = String::new();
    std::io::Read::read_to_string(mitm.stdout.as_mut().unwrap(), &mut mitm_stdout).unwrap();
    let report: serde_json::Value = serde_json::from_str(&mitm_stdout).unwrap();
    assert_eq!(report["samples"], 3);
    assert_eq!(report["attacked"], 3);
    assert_eq!(report["success"].as_array().unwrap().len(), 3);

    assert!(edge.wait().unwrap().success());
}

#[test]
fn report_subcommand_writes_a_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let pkg = untrained_package(dir.path());
    let out_dir = dir.path().join("report");
    let config = dir.path().join("exp.toml");
    std::fs::write(
        &config,
        format!(
            "package = {:?}\ndataset = \"mnist-test\"\neval_n = 4\neps = [0.05]\n\
             algorithms = [\"pgd\"]\nsteps = 2\nsplit_indices = [1]\n",
            pkg
        ),
    )
    .unwrap();

    let out = bin()
        .args(["report", "--template", "depth"])
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for file in ["results.csv", "manifest.json", "curves.svg", "bars.svg"] {
        assert!(out_dir.join(file).exists(), "missing {file}");
    }
    let csv = std::fs::read_to_string(out_dir.join("results.csv")).unwrap();
    assert!(csv.starts_with("variant,clean_acc,space,algorithm,norm,epsilon,asr,n,"));
}
