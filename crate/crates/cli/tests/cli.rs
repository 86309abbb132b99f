use std::path::PathBuf;
use std::process::{Command, Output};

use otfs_core::harness::ResultTable;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_otfs-lab"));
    c.env_remove("OTFS_LAB_JOBS");
    c
}

fn scratch(name: &str, contents: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("otfs-lab-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let p = dir.join(name);
    std::fs::write(&p, contents).unwrap();
    p
}

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn stdout(o: &Output) -> String {
    assert!(
        o.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout.clone()).unwrap()
}

const SMALL: &str = "kind = \"ber\"\nsnr_db = [4.0, 8.0]\nconstellation = \"qpsk\"\n[frame]\nm = 8\nn = 4\n[channel]\nkind = \"random\"\npaths = 2\nl_max = 2\nk_max = 1.0\n[detector]\nkind = \"map_spa\"\n[stop]\ntrials = 30\nchunk = 4\n";

#[test]
fn run_is_byte_identical_across_jobs() {
    let cfg = scratch("small.toml", SMALL);
    let a = stdout(
        &bin()
            .arg("run")
            .arg(&cfg)
            .args(["--jobs", "1"])
            .output()
            .unwrap(),
    );
    let b = stdout(
        &bin()
            .arg("run")
            .arg(&cfg)
            .args(["--jobs", "3"])
            .output()
            .unwrap(),
    );
    let c = stdout(
        &bin()
            .arg("run")
            .arg(&cfg)
            .env("OTFS_LAB_JOBS", "2")
            .output()
            .unwrap(),
    );
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert!(a
        .lines()
        .any(|l| l == "sweep,metric,value,ci95,trials,events,seconds"));
    let t = ResultTable::from_csv(&a).unwrap();
    assert_eq!(t.rows.len(), 6);
    let other = stdout(
        &bin()
            .arg("run")
            .arg(&cfg)
            .args(["--seed", "99"])
            .output()
            .unwrap(),
    );
    assert_ne!(a, other);
}

#[test]
fn json_output_file_roundtrips() {
    let cfg = scratch("json.toml", SMALL);
    let out = cfg.with_extension("json");
    let o = bin()
        .arg("run")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    stdout(&o);
    let text = std::fs::read_to_string(&out).unwrap();
    let t = ResultTable::from_json(&text).unwrap();
    assert_eq!(t.to_json().unwrap(), text);
    assert_eq!(t.config.seed, 1);
}

#[test]
fn config_errors_exit_2_and_name_the_field() {
    let cfg = scratch(
        "bad.toml",
        "kind = \"ber\"\nsnr_db = [1.0]\n[stop]\ntrials = -3\n",
    );
    let o = bin().arg("run").arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("stop.trials"));
    let o = bin()
        .arg("run")
        .arg("/nonexistent/x.toml")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn complexity_failure_exits_3() {
    let cfg = scratch(
        "big.toml",
        "kind = \"ber\"\nsnr_db = [10.0]\nconstellation = \"qam16\"\n[frame]\nm = 16\nn = 8\n[channel]\nkind = \"random\"\npaths = 6\nl_max = 5\nk_max = 2.0\n[detector]\nkind = \"map_spa\"\n[stop]\ntrials = 1\n",
    );
    let o = bin().arg("run").arg(&cfg).output().unwrap();
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn analyze_bounds_and_coding_gain() {
    let text = stdout(
        &bin()
            .args(["analyze", "bounds", "--p", "3", "--instances", "5"])
            .output()
            .unwrap(),
    );
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "instance,d_e2,p,rank,product,product_lb_exact,det,det_ub"
    );
    assert_eq!(lines.len(), 6);
    for l in &lines[1..] {
        let v: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
        assert!(v[5] <= v[4] * (1.0 + 1e-9) + 1e-12, "{l}");
        assert!(v[6] <= v[7] * (1.0 + 1e-9), "{l}");
    }
    let text = stdout(
        &bin()
            .args([
                "analyze",
                "coding-gain",
                "--p",
                "1,3",
                "--trials",
                "200",
                "--format",
                "json",
            ])
            .output()
            .unwrap(),
    );
    let t = ResultTable::from_json(&text).unwrap();
    let g = t.metric("coding_gain_db");
    assert_eq!(g.len(), 2);
    assert!(g[1].value < g[0].value);
}

#[test]
fn isac_subcommands() {
    let scenario = configs().join("isac_k4_p2.json");
    let text = stdout(
        &bin()
            .args(["isac", "sense"])
            .arg(&scenario)
            .args(["--snr-db", "5", "--trials", "20"])
            .output()
            .unwrap(),
    );
    let t = ResultTable::from_csv(&text).unwrap();
    assert_eq!(t.value("miss", 5.0), Some(0.0));
    let text = stdout(
        &bin()
            .args(["isac", "fer"])
            .arg(&scenario)
            .args([
                "--snr-db",
                "20",
                "--trials",
                "5",
                "--precoded",
                "--user",
                "1",
            ])
            .output()
            .unwrap(),
    );
    let t = ResultTable::from_csv(&text).unwrap();
    assert!(t.value("ber", 20.0).unwrap() < 0.05);
    let o = bin()
        .args(["isac", "sense", "/nonexistent.json"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn shipped_configs_parse() {
    for entry in std::fs::read_dir(configs()).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().and_then(|e| e.to_str()) == Some("toml") {
            otfs_core::harness::ExperimentConfig::load(&p)
                .unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        }
    }
}
