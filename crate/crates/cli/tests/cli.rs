use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use handrift_cli::MotionFile;
use handrift_core::bundle::ModelBundle;
use handrift_core::hand::HandModelSpec;
use handrift_core::motion::Normalizer;
use handrift_core::trainer::TrainConfig;
use handrift_tensor::ParamStore;
use serde_json::Value;
use tempfile::TempDir;

const TINY: &str = r#"
epochs = 2
batch_size = 4
frames = 8
eval_every = 1
eval_sequences = 2
[denoiser]
width = 16
heads = 2
encoder_layers = 1
decoder_layers = 1
ffn_width = 32
mesh_widths = [4, 8]
step_features = 8
[schedule]
steps = 4
"#;

fn handrift(args: &[&str]) -> Output {
    handrift_env(args, &[])
}

fn handrift_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_handrift"));
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn corpus(dir: &Path, name: &str, count: usize, seed: u64) -> PathBuf {
    let out = dir.join(name);
    let o = handrift(&["generate", "--out", s(&out), "--count", &count.to_string(), "--seed", &seed.to_string()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}

fn tiny_config(dir: &Path, extra: &str) -> PathBuf {
    let p = dir.join("tiny.toml");
    std::fs::write(&p, format!("{extra}\n{TINY}")).unwrap();
    p
}

fn read_tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn generate_is_seeded_and_handles_an_empty_request() {
    let tmp = TempDir::new().unwrap();
    let a = corpus(tmp.path(), "a", 3, 7);
    let b = corpus(tmp.path(), "b", 3, 7);
    let c = corpus(tmp.path(), "c", 3, 8);
    assert_eq!(read_tree(&a), read_tree(&b));
    assert_ne!(read_tree(&a), read_tree(&c));
    assert_eq!(read_tree(&a).len(), 7);

    let empty = corpus(tmp.path(), "empty", 0, 1);
    let m: Value = serde_json::from_slice(&std::fs::read(empty.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["entries"].as_array().unwrap().len(), 0);
    assert_eq!(m["count"], 0);
}

#[test]
fn usage_errors_exit_with_one() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&handrift(&["frobnicate"])), 1);
    assert_eq!(code(&handrift(&["train", "--corpus", "x"])), 1);
    assert_eq!(code(&handrift(&["--help"])), 0);

    let missing = tmp.path().join("absent.toml");
    let o = handrift(&["train", "--corpus", s(tmp.path()), "--config", s(&missing), "--out", "m.ckpt"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains(&format!("config not found: {}", missing.display())), "{}", stderr(&o));

    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "epochz = 1").unwrap();
    let o = handrift(&["train", "--corpus", s(tmp.path()), "--config", s(&bad), "--out", "m.ckpt"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("epochz"));

    let o = handrift(&["refine", "--ckpt", s(&tmp.path().join("none.ckpt")), "--in", "x.hrm", "--out", "y.hrm"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn train_logs_epochs_and_records_the_ablation() {
    let tmp = TempDir::new().unwrap();
    let data = corpus(tmp.path(), "data", 6, 0);
    let cfg = tiny_config(tmp.path(), "");
    let ckpt = tmp.path().join("m.ckpt");
    let o = handrift(&["train", "--corpus", s(&data), "--config", s(&cfg), "--out", s(&ckpt), "--ablation", "no-physics"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.contains("epoch") && table.contains("mje"), "{table}");

    let bundle = ModelBundle::load(&ckpt).unwrap();
    assert_eq!(bundle.meta.ablation, "no-physics");
    assert!(!bundle.meta.train.ablation.use_kin && !bundle.meta.train.ablation.use_sta);
    assert_eq!(bundle.meta.epochs_completed, 2);

    let log = std::fs::read_to_string(ckpt.with_extension("log.jsonl")).unwrap();
    let lines: Vec<Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    for (i, l) in lines.iter().enumerate() {
        assert_eq!(l["epoch"], i + 1);
        assert!(l["lr"].as_f64().unwrap() > 0.0);
        assert!(l["loss"]["terms"]["data"].is_number());
        assert!(l["eval"]["mje"].is_number());
    }
}

#[test]
fn divergence_exits_with_two_and_keeps_a_checkpoint() {
    let tmp = TempDir::new().unwrap();
    let data = corpus(tmp.path(), "data", 6, 0);
    let cfg = tiny_config(tmp.path(), "divergence_threshold = 1e-9");
    let ckpt = tmp.path().join("m.ckpt");
    let o = handrift(&["train", "--corpus", s(&data), "--config", s(&cfg), "--out", s(&ckpt)]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged"));
    let bundle = ModelBundle::load(&ckpt).unwrap();
    assert!(bundle.meta.diverged);
    assert_eq!(bundle.meta.epochs_completed, 0);
}

#[test]
fn refine_rejects_foreign_normalization_and_broken_checkpoints() {
    let tmp = TempDir::new().unwrap();
    let data = corpus(tmp.path(), "data", 6, 0);
    let cfg = tiny_config(tmp.path(), "");
    let ckpt = tmp.path().join("m.ckpt");
    assert_eq!(code(&handrift(&["train", "--corpus", s(&data), "--config", s(&cfg), "--out", s(&ckpt), "--epochs", "1"])), 0);

    let mut foreign = MotionFile::load(&data.join("noisy/seq_00000.hrm")).unwrap();
    foreign.normalization_id = Some("0123456789abcdef".into());
    let input = tmp.path().join("foreign.hrm");
    foreign.save(&input).unwrap();
    let o = handrift(&["refine", "--ckpt", s(&ckpt), "--in", s(&input), "--out", s(&tmp.path().join("o.hrm"))]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));

    let broken = tmp.path().join("broken.ckpt");
    let mut bytes = std::fs::read(&ckpt).unwrap();
    bytes.truncate(bytes.len() / 2);
    std::fs::write(&broken, bytes).unwrap();
    let o = handrift(&["refine", "--ckpt", s(&broken), "--in", s(&data.join("noisy/seq_00000.hrm")), "--out", s(&tmp.path().join("o.hrm"))]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn oracle_checkpoint_returns_clean_long_inputs() {
    let tmp = TempDir::new().unwrap();
    let spec = tmp.path().join("long.toml");
    std::fs::write(&spec, "frames = 53\n").unwrap();
    let data = tmp.path().join("long");
    assert_eq!(code(&handrift(&["generate", "--spec", s(&spec), "--out", s(&data), "--count", "2"])), 0);
    let clean = MotionFile::load(&data.join("clean/seq_00001.hrm")).unwrap();

    let cfg = TrainConfig { frames: 16, ..TrainConfig::desk() };
    let normalizer = Normalizer::fit(&[clean.motion.clone()]).unwrap();
    let bundle = ModelBundle::new("oracle", cfg, normalizer, HandModelSpec::default(), ParamStore::new());
    let ckpt = tmp.path().join("oracle.ckpt");
    bundle.save(&ckpt).unwrap();

    let input = data.join("clean/seq_00001.hrm");
    for extra in [&[][..], &["--stochastic", "--seed", "4"][..], &["--steps", "3"][..]] {
        let out = tmp.path().join("refined.hrm");
        let mut args = vec!["refine", "--ckpt", s(&ckpt), "--in", s(&input), "--out", s(&out)];
        args.extend_from_slice(extra);
        let o = handrift(&args);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let refined = MotionFile::load(&out).unwrap();
        assert_eq!(refined.len(), 53);
        assert_eq!(refined.normalization_id.as_deref(), Some(bundle.meta.normalization_id.as_str()));
        let worst = refined.motion.data().iter().zip(clean.motion.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-9, "{extra:?}: {worst}");
    }
}

#[test]
fn evaluate_pairs_by_name_and_reports_row_means() {
    let tmp = TempDir::new().unwrap();
    let data = corpus(tmp.path(), "data", 4, 2);
    let report = tmp.path().join("self.json");
    let plots = tmp.path().join("plots");
    let clean = data.join("clean");
    let o = handrift(&["evaluate", "--pred", s(&clean), "--gt", s(&clean), "--report", s(&report), "--plots", s(&plots)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    for k in ["mje", "p_mje", "p_mve", "accl", "kin", "sta"] {
        assert_eq!(r[k].as_f64().unwrap(), 0.0, "{k}");
    }
    assert_eq!(r["f5"].as_f64().unwrap(), 1.0);
    assert_eq!(r["f15"].as_f64().unwrap(), 1.0);
    assert_eq!(std::fs::read_dir(&plots).unwrap().count(), 12);

    let noisy_report = tmp.path().join("noisy.json");
    let o = handrift(&["evaluate", "--pred", s(&data.join("noisy")), "--gt", s(&clean), "--report", s(&noisy_report)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: Value = serde_json::from_slice(&std::fs::read(&noisy_report).unwrap()).unwrap();
    let rows = r["sequences"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    for k in ["mje", "p_mje", "p_mve", "accl", "kin", "sta", "f5", "f15"] {
        let mean = rows.iter().map(|row| row[k].as_f64().unwrap()).sum::<f64>() / rows.len() as f64;
        assert!((mean - r[k].as_f64().unwrap()).abs() <= 1e-12, "{k}");
    }
    assert!(r["mje"].as_f64().unwrap() > 0.0);

    let partial = tmp.path().join("partial");
    std::fs::create_dir(&partial).unwrap();
    std::fs::copy(clean.join("seq_00001.hrm"), partial.join("seq_00001.hrm")).unwrap();
    std::fs::copy(clean.join("seq_00001.hrm"), partial.join("extra.hrm")).unwrap();
    let o = handrift(&["evaluate", "--pred", s(&partial), "--gt", s(&clean)]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("extra") && err.contains("seq_00000") && err.contains("seq_00003"), "{err}");
}

#[test]
fn annotate_reproduces_generated_labels() {
    let tmp = TempDir::new().unwrap();
    let data = corpus(tmp.path(), "data", 3, 5);
    let out = tmp.path().join("labelled");
    let o = handrift(&["annotate", "--in", s(&data.join("clean")), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("agreement"));
    for name in ["seq_00000", "seq_00001", "seq_00002"] {
        let labelled = MotionFile::load(&out.join(format!("{name}.hrm"))).unwrap();
        assert!(labelled.states.is_some() && labelled.contact.is_some());
    }
    let o = handrift(&["annotate", "--in", s(&data.join("noisy/seq_00000.hrm")), "--out", s(&tmp.path().join("n.hrm"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn thread_count_does_not_change_results() {
    let tmp = TempDir::new().unwrap();
    let data = corpus(tmp.path(), "data", 6, 0);
    let cfg = tiny_config(tmp.path(), "");
    let run = |threads: &str, tag: &str| {
        let ckpt = tmp.path().join(format!("{tag}.ckpt"));
        let o = handrift_env(&["train", "--corpus", s(&data), "--config", s(&cfg), "--out", s(&ckpt), "--seed", "9"], &[("HANDRIFT_THREADS", threads)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let refined = tmp.path().join(format!("{tag}.hrm"));
        let o = handrift_env(
            &["refine", "--ckpt", s(&ckpt), "--in", s(&data.join("noisy/seq_00005.hrm")), "--out", s(&refined), "--stochastic", "--seed", "3"],
            &[("HANDRIFT_THREADS", threads)],
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        (std::fs::read(&ckpt).unwrap(), std::fs::read(ckpt.with_extension("log.jsonl")).unwrap(), std::fs::read(&refined).unwrap())
    };
    assert_eq!(run("1", "one"), run("3", "three"));
}
