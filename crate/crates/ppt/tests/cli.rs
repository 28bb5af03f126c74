//! CLI behavior: exit codes, output formats, and the sweep grid.

use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_ppt")
}

fn tmp(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name)
}

const TINY_MODEL: &str = r#""model": {"image_size": 64, "patch_size": 8, "channels": 3, "dim": 16, "depth": 6, "heads": 2, "num_classes": 4}"#;

fn write_tmp(name: &str, contents: &str) -> PathBuf {
    let path = tmp(name);
    std::fs::write(&path, contents).unwrap();
    path
}

fn tiny_image(name: &str) -> PathBuf {
    let mut data = b"P6\n64 64\n255\n".to_vec();
    data.extend((0..64 * 64 * 3).map(|i| (i * 31 % 256) as u8));
    let path = tmp(name);
    std::fs::write(&path, data).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().unwrap()
}

#[test]
fn bad_config_exits_2() {
    let config = write_tmp("bad_config.json", r#"{"model": {"image_size": 63}}"#);
    let image = tiny_image("ec_img1.ppm");
    let out = Command::new(bin())
        .args(["run", "--config"])
        .arg(&config)
        .args(["--synthetic", "1", "--image"])
        .arg(&image)
        .arg("--out")
        .arg(tmp("ec1.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    let missing = run(&["flops", "--config", "/nonexistent/config.json"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn bad_weights_exits_3() {
    let config = write_tmp("w_config.json", &format!("{{{TINY_MODEL}}}"));
    let weights = write_tmp("bad.pptw", "not a weight file");
    let image = tiny_image("ec_img2.ppm");
    let out = Command::new(bin())
        .args(["run", "--config"])
        .arg(&config)
        .arg("--weights")
        .arg(&weights)
        .arg("--image")
        .arg(&image)
        .arg("--out")
        .arg(tmp("ec2.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bad_image_exits_4() {
    let config = write_tmp("i_config.json", &format!("{{{TINY_MODEL}}}"));
    let image = write_tmp("bad.ppm", "P5\n64 64\n255\n");
    let out = Command::new(bin())
        .args(["run", "--config"])
        .arg(&config)
        .args(["--synthetic", "1", "--image"])
        .arg(&image)
        .arg("--out")
        .arg(tmp("ec3.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn schedule_violation_exits_5() {
    // 64 image tokens; removing 70 exceeds the budget
    let config = write_tmp(
        "s_config.json",
        &format!(r#"{{{TINY_MODEL}, "schedule": {{"stages": [{{"layer": 2, "r": 70}}]}}}}"#),
    );
    let image = tiny_image("ec_img3.ppm");
    let out = Command::new(bin())
        .args(["run", "--config"])
        .arg(&config)
        .args(["--synthetic", "1", "--image"])
        .arg(&image)
        .arg("--out")
        .arg(tmp("ec4.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(5), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn run_summary_and_trace_shape() {
    let config = write_tmp(
        "r_config.json",
        &format!(r#"{{{TINY_MODEL}, "schedule": {{"stages": [{{"layer": 3, "r": 10}}]}}}}"#),
    );
    let image = tiny_image("ec_img4.ppm");
    let trace = tmp("run_trace.json");
    let out = Command::new(bin())
        .args(["run", "--config"])
        .arg(&config)
        .args(["--synthetic", "5", "--image"])
        .arg(&image)
        .arg("--out")
        .arg(&trace)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = String::from_utf8(out.stdout).unwrap();
    assert!(summary.starts_with("top1="), "{summary}");
    assert!(summary.contains("flops=") && summary.contains("policies=layer3:"), "{summary}");

    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&trace).unwrap()).unwrap();
    assert_eq!(json["layers"].as_array().unwrap().len(), 6);
    assert_eq!(json["layers"][2]["tokens_in"], 65);
    assert_eq!(json["layers"][2]["tokens_out"], 55);
    assert_eq!(json["logits"].as_array().unwrap().len(), 4);
}

#[test]
fn weight_file_round_trip_through_cli() {
    let config = write_tmp("g_config.json", &format!("{{{TINY_MODEL}}}"));
    let weights = tmp("gen.pptw");
    let image = tiny_image("ec_img5.ppm");
    let gen = Command::new(bin())
        .args(["gen-weights", "--config"])
        .arg(&config)
        .args(["--seed", "5", "--out"])
        .arg(&weights)
        .output()
        .unwrap();
    assert!(gen.status.success(), "{}", String::from_utf8_lossy(&gen.stderr));

    let run_with = |args: Vec<&std::ffi::OsStr>| {
        let out = Command::new(bin()).args(args).output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    let t1 = tmp("wf1.json");
    let t2 = tmp("wf2.json");
    let s1 = run_with(vec![
        "run".as_ref(), "--config".as_ref(), config.as_os_str(),
        "--weights".as_ref(), weights.as_os_str(),
        "--image".as_ref(), image.as_os_str(),
        "--out".as_ref(), t1.as_os_str(),
    ]);
    let s2 = run_with(vec![
        "run".as_ref(), "--config".as_ref(), config.as_os_str(),
        "--synthetic".as_ref(), "5".as_ref(),
        "--image".as_ref(), image.as_os_str(),
        "--out".as_ref(), t2.as_os_str(),
    ]);
    assert_eq!(s1, s2, "file-backed and synthetic seed 5 runs must agree");
    assert_eq!(std::fs::read(&t1).unwrap(), std::fs::read(&t2).unwrap());
}

#[test]
fn flops_empty_schedule_reduction_zero() {
    let config = write_tmp("f_config.json", &format!("{{{TINY_MODEL}}}"));
    let out = Command::new(bin()).args(["flops", "--config"]).arg(&config).output().unwrap();
    assert!(out.status.success());
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["reduction_percent"], 0.0);
    assert_eq!(json["total"], json["baseline_total"]);
}

#[test]
fn sweep_grid_and_policy_boundaries() {
    let config = write_tmp(
        "sw_config.json",
        &format!(r#"{{{TINY_MODEL}, "schedule": {{"stages": [{{"layer": 2, "r": 1}}, {{"layer": 4, "r": 1}}]}}, "seed": 9}}"#),
    );
    let out_csv = tmp("sweep.csv");
    let out = Command::new(bin())
        .args(["sweep", "--config"])
        .arg(&config)
        .args(["--r-list", "4,8,12", "--tau-list", "0,inf", "--out"])
        .arg(&out_csv)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(&out_csv).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "r,tau,flops,prune_count,pool_count");
    assert_eq!(lines.len(), 1 + 3 * 2, "3 r values x 2 tau values");
    let mut last_flops_at_tau0 = u64::MAX;
    for line in &lines[1..] {
        let fields: Vec<&str> = line.split(',').collect();
        let flops: u64 = fields[2].parse().unwrap();
        let prune: usize = fields[3].parse().unwrap();
        let pool: usize = fields[4].parse().unwrap();
        match fields[1] {
            "0" => {
                assert_eq!((prune, pool), (2, 0), "tau=0 must prune everywhere: {line}");
                assert!(flops < last_flops_at_tau0, "flops must decrease with r: {line}");
                last_flops_at_tau0 = flops;
            }
            "inf" => assert_eq!((prune, pool), (0, 2), "tau=inf must pool everywhere: {line}"),
            other => panic!("unexpected tau {other}"),
        }
    }
}

#[test]
fn selftest_exits_zero() {
    let out = run(&["selftest"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.matches("PASS").count(), 4, "{text}");
    assert!(!text.contains("FAIL"));
}
