use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use streampower::harness::ExperimentConfig;

const BIN: &str = env!("CARGO_BIN_EXE_streampower");

fn tiny_config(dir: &Path, extra: &str) -> PathBuf {
    let text = format!(
        r#"seed = 3
episodes = 4
algo = "pds_ddpg"
output_dir = "{}"
checkpoint_every = 2

[video]
n_segments = 4

[agent]
batch = 32
hidden_pds = 16
hidden_ddpg = 16
virtual_k = 1
dynamics = "idealized"
{extra}
"#,
        dir.join("runs").display()
    );
    let path = dir.join("cfg.toml");
    fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for e in fs::read_dir(root).unwrap() {
        let p = e.unwrap().path();
        ExperimentConfig::load(&p, &[]).unwrap_or_else(|err| panic!("{}: {err}", p.display()));
        n += 1;
    }
    assert!(n >= 3);
}

#[test]
fn missing_field_is_named() {
    let err = ExperimentConfig::from_toml_str("seed = 1\nepisodes = 3\n", &[]).unwrap_err();
    assert!(err.to_string().contains("algo"), "{err}");
    let err = ExperimentConfig::from_toml_str("algo = \"ddpg\"\nepisodes = 3\n", &[]).unwrap_err();
    assert!(err.to_string().contains("seed"), "{err}");
}

#[test]
fn unknown_and_mistyped_fields_report_their_path() {
    let base = "seed = 1\nepisodes = 3\nalgo = \"ddpg\"\n";
    let err = ExperimentConfig::from_toml_str(&format!("{base}[agent]\nbatchh = 3\n"), &[]).unwrap_err();
    assert!(err.to_string().contains("batchh"), "{err}");
    let err = ExperimentConfig::from_toml_str(base, &["agent.batch=lots".into()]).unwrap_err();
    assert!(err.to_string().contains("agent.batch"), "{err}");
    let err = ExperimentConfig::from_toml_str(base, &["agent.gamma=2.0".into()]).unwrap_err();
    assert!(err.to_string().contains("gamma"), "{err}");
}

#[test]
fn overrides_apply_over_file_and_defaults() {
    let base = "seed = 1\nepisodes = 3\nalgo = \"ddpg\"\n[agent]\nbatch = 8\n";
    let cfg = ExperimentConfig::from_toml_str(
        base,
        &["agent.batch=256".into(), "scenario.kind=traffic_light".into(), "seed=9".into()],
    )
    .unwrap();
    assert_eq!(cfg.agent.batch, 256);
    assert_eq!(cfg.seed, 9);
    assert_eq!(cfg.scenario.kind, streampower::mobility::ScenarioKind::TrafficLight);
    // untouched fields keep their paper defaults
    assert_eq!(cfg.agent.lr_actor, 1e-4);
    assert_eq!(cfg.radio.p_max_dbm, 46.0);
    assert_eq!(cfg.video.n_segments, 15);
    assert!(ExperimentConfig::from_toml_str(base, &["nokey".into()]).is_err());
}

#[test]
fn scenario_kind_fills_its_preset() {
    let cfg = ExperimentConfig::from_toml_str(
        "seed = 1\nepisodes = 3\nalgo = \"ddpg\"\n[scenario]\nkind = \"random_accel_multiroad\"\n",
        &[],
    )
    .unwrap();
    assert_eq!(cfg.scenario.accel_std, 0.3);
    assert_eq!(cfg.scenario.speed_init_range, [10.0, 20.0]);
}

#[test]
fn snapshot_round_trips() {
    let cfg = ExperimentConfig::from_toml_str("seed = 5\nepisodes = 7\nalgo = \"pds_ddpg\"\n", &["agent.virtual_k=2".into()]).unwrap();
    let back = ExperimentConfig::from_toml_str(&cfg.to_toml().unwrap(), &[]).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn train_is_byte_reproducible_and_writes_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), "");
    let cfg_s = cfg.to_str().unwrap();
    let a = run(&["train", "--config", cfg_s]);
    assert!(a.status.success(), "{}", stderr(&a));
    let dir = PathBuf::from(String::from_utf8(a.stdout).unwrap().trim());
    let log_a = fs::read(dir.join("train_log.csv")).unwrap();
    for f in ["config.toml", "timing.csv", "actor.csv", "critic.csv", "checkpoints/actor_ep000002.csv", "checkpoints/critic_ep000004.csv"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let text = String::from_utf8(log_a.clone()).unwrap();
    assert_eq!(text.lines().count(), 2 + 4, "{text}");

    let snap = ExperimentConfig::load(&dir.join("config.toml"), &[]).unwrap();
    assert_eq!(snap, ExperimentConfig::load(&cfg, &[]).unwrap());

    let b = run(&["train", "--config", cfg_s]);
    assert!(b.status.success());
    assert_eq!(fs::read(dir.join("train_log.csv")).unwrap(), log_a);

    // the learned checkpoint evaluates
    let out = tmp.path().join("eval.csv");
    let dump = tmp.path().join("dump.csv");
    let ckpt = dir.join("actor.csv");
    let e = run(&[
        "eval", "--config", cfg_s, "--checkpoint", ckpt.to_str().unwrap(), "--episodes", "5", "--out", out.to_str().unwrap(), "--dump",
        dump.to_str().unwrap(),
    ]);
    assert!(e.status.success(), "{}", stderr(&e));
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 2 + 5);
    assert!(fs::read_to_string(&dump).unwrap().lines().count() > 2 + 5);
}

#[test]
fn seed_override_changes_the_log() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), "");
    let cfg_s = cfg.to_str().unwrap();
    let a = run(&["train", "--config", cfg_s, "--set", "episodes=2"]);
    let b = run(&["train", "--config", cfg_s, "--set", "episodes=2", "--set", "seed=4"]);
    let da = PathBuf::from(String::from_utf8(a.stdout).unwrap().trim());
    let db = PathBuf::from(String::from_utf8(b.stdout).unwrap().trim());
    assert_ne!(da, db);
    assert_ne!(fs::read(da.join("train_log.csv")).unwrap(), fs::read(db.join("train_log.csv")).unwrap());
}

#[test]
fn eval_baselines_and_checkpoint_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), "");
    let cfg_s = cfg.to_str().unwrap();
    let out = tmp.path().join("np.csv");
    let o = run(&["eval", "--config", cfg_s, "--policy", "non_predictive", "--episodes", "12", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 2 + 12);
    assert!(text.lines().skip(2).all(|l| l.split(',').nth(2) == Some("0")));

    let no_ckpt = run(&["eval", "--config", cfg_s, "--out", out.to_str().unwrap()]);
    assert_eq!(no_ckpt.status.code(), Some(1));
    let missing = run(&["eval", "--config", cfg_s, "--checkpoint", "/nonexistent/actor.csv", "--out", out.to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(stderr(&missing).contains("actor.csv"), "{}", stderr(&missing));

    let bdir = tmp.path().join("base");
    let b = run(&["baseline", "--config", cfg_s, "--episodes", "3", "--out", bdir.to_str().unwrap()]);
    assert!(b.status.success(), "{}", stderr(&b));
    let csv = fs::read_to_string(bdir.join("baselines.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2 + 3);
    for l in csv.lines().skip(2) {
        let f: Vec<&str> = l.split(',').collect();
        let (o, n): (f64, f64) = (f[1].parse().unwrap(), f[2].parse().unwrap());
        assert!(o <= n);
    }
    assert!(bdir.join("plans/oracle_00003.csv").exists());
}

#[test]
fn trace_gen_writes_readable_traces() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), "");
    let out = tmp.path().join("traces");
    let o = run(&["trace-gen", "--config", cfg.to_str().unwrap(), "--count", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for k in 1..=3 {
        let f = fs::File::open(out.join(format!("trace_{k:05}.csv"))).unwrap();
        let tr = streampower::mobility::ChannelTrace::read_csv(std::io::BufReader::new(f)).unwrap();
        assert!(tr.horizon() >= 30);
    }
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "seed = 1\nepisodes = 2\n").unwrap();
    let o = run(&["train", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("algo"));
    let o = run(&["verify", "nosuch"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["verify", "oracle"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("PASS"));
}
