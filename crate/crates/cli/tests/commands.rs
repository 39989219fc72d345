use std::fs;
use std::path::{Path, PathBuf};

use assert_cmd::Command;
use serde_json::Value;
use tempfile::TempDir;
use toast_core::archive::{encode_archive, Tensor};
use toast_core::fixture::random_matrix;

fn toast() -> Command {
    Command::cargo_bin("toast").unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    /// Small DeiT-Tiny-width model: `layers` blocks on 17 tokens.
    fn new(layers: usize) -> Self {
        let dir = TempDir::new().unwrap();
        let f = Fixture { dir };
        toast()
            .args(["--seed", "3", "synth"])
            .arg(f.path("model.json"))
            .arg(f.path("weights.toast"))
            .arg(f.path("inputs.toast"))
            .args(["--layers", &layers.to_string(), "--tokens", "17", "--batches", "2"])
            .assert()
            .success();
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn json(&self, name: &str) -> Value {
        serde_json::from_slice(&fs::read(self.path(name)).unwrap()).unwrap()
    }

    fn write_policy(&self, name: &str, fc1: f64, fc2: f64) -> PathBuf {
        let out = self.path(name);
        toast()
            .arg("policy")
            .arg(self.path("model.json"))
            .arg(&out)
            .args(["--fc1-keep", &fc1.to_string(), "--fc2-keep", &fc2.to_string()])
            .assert()
            .success();
        out
    }
}

fn stdout_json(cmd: &mut Command) -> Value {
    let out = cmd.assert().success().get_output().stdout.clone();
    serde_json::from_slice(&out).unwrap()
}

fn digest(paths: &[&Path]) -> Vec<Vec<u8>> {
    paths.iter().map(|p| fs::read(p).unwrap()).collect()
}

#[test]
fn analyze_writes_one_record_per_layer() {
    let f = Fixture::new(2);
    let before = digest(&[&f.path("model.json"), &f.path("weights.toast"), &f.path("inputs.toast")]);
    toast()
        .arg("analyze")
        .arg(f.path("model.json"))
        .arg(f.path("weights.toast"))
        .arg(f.path("inputs.toast"))
        .arg(f.path("report.json"))
        .arg("--csv")
        .arg(f.path("report.csv"))
        .assert()
        .success();
    let report = f.json("report.json");
    let layers = report.as_array().unwrap();
    assert_eq!(layers.len(), 2);
    for (l, rec) in layers.iter().enumerate() {
        assert_eq!(rec["layer"], l);
        let s = rec["sparsity"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&s));
    }
    let csv = fs::read_to_string(f.path("report.csv")).unwrap();
    assert!(csv.starts_with("layer,sparsity,mean_r2,eff_rank\n"));
    assert_eq!(csv.lines().count(), 3);
    let manifest = f.json("report.run.json");
    assert_eq!(manifest["command"], "analyze");
    assert_eq!(manifest["config_digest"].as_str().unwrap().len(), 64);
    let after = digest(&[&f.path("model.json"), &f.path("weights.toast"), &f.path("inputs.toast")]);
    assert_eq!(before, after);
}

#[test]
fn wrong_magic_exits_2() {
    let f = Fixture::new(1);
    let mut bytes = fs::read(f.path("weights.toast")).unwrap();
    bytes[0] = b'X';
    fs::write(f.path("bad.toast"), bytes).unwrap();
    toast()
        .arg("analyze")
        .arg(f.path("model.json"))
        .arg(f.path("bad.toast"))
        .arg(f.path("inputs.toast"))
        .arg(f.path("report.json"))
        .assert()
        .code(2);
    assert!(!f.path("report.json").exists());
}

#[test]
fn calibration_width_mismatch_exits_3_and_names_tensor() {
    let f = Fixture::new(1);
    let wrong = vec![("calib0".to_string(), Tensor::from(random_matrix(17, 100, 1)))];
    fs::write(f.path("calib.toast"), encode_archive(&wrong).unwrap()).unwrap();
    let out = toast()
        .arg("analyze")
        .arg(f.path("model.json"))
        .arg(f.path("weights.toast"))
        .arg(f.path("calib.toast"))
        .arg(f.path("report.json"))
        .assert()
        .code(3)
        .get_output()
        .stderr
        .clone();
    assert!(String::from_utf8_lossy(&out).contains("calib0"));
}

#[test]
fn weight_shape_mismatch_names_tensor() {
    let f = Fixture::new(1);
    let mut model = f.json("model.json");
    model["mlp_dim"] = Value::from(512);
    fs::write(f.path("other.json"), serde_json::to_vec(&model).unwrap()).unwrap();
    let out = toast()
        .arg("eval")
        .arg(f.path("other.json"))
        .arg(f.path("weights.toast"))
        .arg(f.path("inputs.toast"))
        .arg(f.path("y.toast"))
        .assert()
        .code(3)
        .get_output()
        .stderr
        .clone();
    assert!(String::from_utf8_lossy(&out).contains("layer0.fc1"));
}

#[test]
fn prune_schedule_on_twelve_layers() {
    let f = Fixture::new(12);
    toast()
        .arg("prune")
        .arg(f.path("model.json"))
        .arg(f.path("weights.toast"))
        .arg(f.path("pruned.toast"))
        .arg(f.path("plan.json"))
        .args(["--ratio", "0.9", "--skip-first"])
        .assert()
        .success();
    let plan = f.json("plan.json");
    let layers = plan["layers"].as_array().unwrap();
    assert_eq!(layers.len(), 12);
    let dk = 64usize;
    let want = ((0.1 * dk as f64).round() as usize).max(1);
    for (l, lp) in layers.iter().enumerate() {
        let expect = if l == 0 { dk } else { want };
        assert_eq!(lp["dk_prime"], expect, "layer {l}");
        for head in lp["heads"].as_array().unwrap() {
            assert_eq!(head["qk_keep"].as_array().unwrap().len(), expect);
            assert_eq!(head["vo_keep"].as_array().unwrap().len(), expect);
        }
    }
    let config = f.json("pruned.model.json");
    let live: Vec<usize> = config["per_layer_head_dim"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap() as usize)
        .collect();
    assert_eq!(live[0], dk);
    assert!(live[1..].iter().all(|&d| d == want));

    // the pruned pair runs
    toast()
        .arg("eval")
        .arg(f.path("pruned.model.json"))
        .arg(f.path("pruned.toast"))
        .arg(f.path("inputs.toast"))
        .arg(f.path("y.toast"))
        .assert()
        .success();
}

#[test]
fn ratio_of_one_is_rejected() {
    let f = Fixture::new(1);
    let err = toast()
        .arg("prune")
        .arg(f.path("model.json"))
        .arg(f.path("weights.toast"))
        .arg(f.path("pruned.toast"))
        .arg(f.path("plan.json"))
        .args(["--ratio", "1.0"])
        .assert()
        .code(2)
        .get_output()
        .stderr
        .clone();
    assert!(String::from_utf8_lossy(&err).contains("ratio must be < 1"));
    assert!(!f.path("plan.json").exists());
}

#[test]
fn flops_reduction_recomputes_from_layer_fields() {
    let f = Fixture::new(2);
    toast()
        .arg("prune")
        .arg(f.path("model.json"))
        .arg(f.path("weights.toast"))
        .arg(f.path("pruned.toast"))
        .arg(f.path("plan.json"))
        .args(["--ratio", "0.5"])
        .assert()
        .success();
    let policy = f.write_policy("policy.json", 0.8, 0.3);
    let dense = stdout_json(toast().arg("flops").arg(f.path("model.json")));
    assert_eq!(dense["reduction_percent"].as_f64().unwrap(), 0.0);
    let report = stdout_json(
        toast()
            .arg("flops")
            .arg(f.path("model.json"))
            .arg("--plan")
            .arg(f.path("plan.json"))
            .arg("--policy")
            .arg(&policy),
    );
    let layer_sum: u64 = report["layers"]
        .as_array()
        .unwrap()
        .iter()
        .map(|l| l["mhsa_flops"].as_u64().unwrap() + l["ffn_flops"].as_u64().unwrap())
        .sum();
    assert_eq!(layer_sum, report["total"].as_u64().unwrap());
    let dense_total = dense["total"].as_u64().unwrap();
    assert_eq!(report["dense_total"].as_u64().unwrap(), dense_total);
    let want = 100.0 * (1.0 - layer_sum as f64 / dense_total as f64);
    let got = report["reduction_percent"].as_f64().unwrap();
    assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    assert!(got > 0.0);

    // the pruned config gives the same numbers as dense config + plan
    let pruned = stdout_json(
        toast()
            .arg("flops")
            .arg(f.path("pruned.model.json"))
            .arg("--policy")
            .arg(&policy),
    );
    assert_eq!(pruned["total"], report["total"]);
}

#[test]
fn identity_plan_reports_no_reduction() {
    let f = Fixture::new(2);
    toast()
        .arg("prune")
        .arg(f.path("model.json"))
        .arg(f.path("weights.toast"))
        .arg(f.path("pruned.toast"))
        .arg(f.path("plan.json"))
        .args(["--ratio", "0.0"])
        .assert()
        .success();
    let report = stdout_json(
        toast()
            .arg("flops")
            .arg(f.path("model.json"))
            .arg("--plan")
            .arg(f.path("plan.json")),
    );
    assert_eq!(report["reduction_percent"].as_f64().unwrap(), 0.0);
}

#[test]
fn deit_base_flops_from_cli() {
    let dir = TempDir::new().unwrap();
    let model = dir.path().join("base.json");
    let cfg = toast_core::engine::ModelConfig::deit_base();
    fs::write(&model, serde_json::to_vec(&cfg).unwrap()).unwrap();
    let report = stdout_json(toast().arg("flops").arg(&model));
    let g = report["total"].as_u64().unwrap() as f64 / 1e9;
    assert!((g - 17.6).abs() / 17.6 < 0.05, "{g}");
}

#[test]
fn flops_parse_failure_exits_2() {
    let dir = TempDir::new().unwrap();
    let model = dir.path().join("m.json");
    fs::write(&model, b"{ not json").unwrap();
    toast().arg("flops").arg(&model).assert().code(2);
}

fn eval(f: &Fixture, out: &str, policy: Option<&Path>) -> Vec<u8> {
    let mut cmd = toast();
    cmd.arg("eval")
        .arg(f.path("model.json"))
        .arg(f.path("weights.toast"))
        .arg(f.path("inputs.toast"))
        .arg(f.path(out));
    if let Some(p) = policy {
        cmd.arg("--policy").arg(p);
    }
    cmd.assert().success();
    fs::read(f.path(out)).unwrap()
}

#[test]
fn noop_policy_output_is_byte_identical() {
    let f = Fixture::new(2);
    let policy = f.write_policy("noop.json", 1.0, 1.0);
    assert_eq!(eval(&f, "dense.toast", None), eval(&f, "noop.toast", Some(&policy)));
}

#[test]
fn eval_is_deterministic() {
    let f = Fixture::new(2);
    let policy = f.write_policy("p.json", 0.75, 0.5);
    let a = eval(&f, "a.toast", Some(&policy));
    let b = eval(&f, "b.toast", Some(&policy));
    assert_eq!(a, b);
    assert_eq!(fs::read(f.path("a.stats.json")).unwrap(), fs::read(f.path("b.stats.json")).unwrap());
    // re-running onto the same path is idempotent
    let again = eval(&f, "a.toast", Some(&policy));
    assert_eq!(a, again);
}

#[test]
fn measured_ops_match_flops_report() {
    let f = Fixture::new(2);
    let half = f.write_policy("half.json", 1.0, 0.5);
    for (name, policy) in [("dense.toast", None), ("half.toast", Some(half.as_path()))] {
        eval(&f, name, policy);
        let stats = f.json(&name.replace(".toast", ".stats.json"));
        let mut cmd = toast();
        cmd.arg("flops").arg(f.path("model.json"));
        if let Some(p) = policy {
            cmd.arg("--policy").arg(p);
        }
        let report = stdout_json(&mut cmd);
        for batch in stats["batches"].as_array().unwrap() {
            assert_eq!(batch["total"], report["total"], "{name}");
            let ffn: Vec<u64> = batch["ops"]["ffn"]
                .as_array()
                .unwrap()
                .iter()
                .map(|v| v.as_u64().unwrap())
                .collect();
            let want: Vec<u64> = report["layers"]
                .as_array()
                .unwrap()
                .iter()
                .map(|l| l["ffn_flops"].as_u64().unwrap())
                .collect();
            assert_eq!(ffn, want);
        }
    }
}

#[test]
fn static_policy_runs() {
    let f = Fixture::new(2);
    let out = f.path("static.json");
    toast()
        .arg("policy")
        .arg(f.path("model.json"))
        .arg(&out)
        .arg("--static")
        .assert()
        .success();
    assert_eq!(f.json("static.json")["mode"], "static");
    eval(&f, "s.toast", Some(&out));
    assert_eq!(f.json("s.stats.json")["selection_total"], 0);
}

#[test]
fn refuses_to_overwrite_inputs() {
    let f = Fixture::new(1);
    let before = fs::read(f.path("inputs.toast")).unwrap();
    toast()
        .arg("eval")
        .arg(f.path("model.json"))
        .arg(f.path("weights.toast"))
        .arg(f.path("inputs.toast"))
        .arg(f.path("inputs.toast"))
        .assert()
        .code(2);
    assert_eq!(fs::read(f.path("inputs.toast")).unwrap(), before);
}

#[test]
fn report_converts_to_csv() {
    let f = Fixture::new(1);
    toast()
        .arg("analyze")
        .arg(f.path("model.json"))
        .arg(f.path("weights.toast"))
        .arg(f.path("inputs.toast"))
        .arg(f.path("report.json"))
        .arg("--csv")
        .arg(f.path("direct.csv"))
        .assert()
        .success();
    let out = toast()
        .arg("report")
        .arg(f.path("report.json"))
        .assert()
        .success()
        .get_output()
        .stdout
        .clone();
    assert_eq!(out, fs::read(f.path("direct.csv")).unwrap());
}

#[test]
fn synth_is_reproducible() {
    let a = Fixture::new(1);
    let b = Fixture::new(1);
    for name in ["model.json", "weights.toast", "inputs.toast"] {
        assert_eq!(fs::read(a.path(name)).unwrap(), fs::read(b.path(name)).unwrap(), "{name}");
    }
}
