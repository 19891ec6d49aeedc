use std::path::Path;
use std::process::{Command, Output};

fn bpdec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bpdec"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn help_on_every_subcommand() {
    for sub in [
        "pretrain",
        "finetune",
        "export-encoder",
        "eval-cloze",
        "flops",
        "gradcheck",
        "mask-stats",
        "attn-dump",
        "gen-corpus",
        "preset",
    ] {
        let o = bpdec(&[sub, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{sub}");
        assert!(stdout(&o).contains("Usage"), "{sub}");
    }
}

#[test]
fn usage_errors_exit_one_and_name_the_flag() {
    let o = bpdec(&["flops", "--preset", "base", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--bogus"));
    assert_eq!(bpdec(&["no-such-command"]).status.code(), Some(1));
}

#[test]
fn runtime_failures_exit_two() {
    let o = bpdec(&["flops", "--config", "/nonexistent/base.cfg"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn flops_report_from_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("base.cfg");
    assert!(bpdec(&["preset", "base", "--out", p(&cfg)]).status.success());
    let o = bpdec(&["flops", "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let ratio: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("pretrain.ratio: "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((1.14..=1.18).contains(&ratio), "{ratio}");
    assert!(text.contains("finetune.decoder_dropped.ratio: 1.000000"));
}

#[test]
fn gradcheck_on_tiny_config_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.cfg");
    assert!(bpdec(&["preset", "tiny", "--out", p(&cfg)]).status.success());
    let o = bpdec(&["gradcheck", "--config", p(&cfg), "--seed", "7"]);
    let text = stdout(&o);
    assert_eq!(o.status.code(), Some(0), "{text}");
    let err: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("max_rel_error="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(err < 1e-4);
    assert!(text.contains("result=PASS"));
}

#[test]
fn mask_stats_on_generated_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.txt");
    assert!(bpdec(&["gen-corpus", "--seed", "1", "--lines", "6000", "--out", p(&corpus)]).status.success());
    let o = bpdec(&["mask-stats", "--corpus", p(&corpus), "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0));
    let rate: f64 = stdout(&o)
        .lines()
        .find_map(|l| l.strip_prefix("select_rate="))
        .unwrap()
        .parse()
        .unwrap();
    assert!((rate - 0.15).abs() < 0.005);
}

/// Pretrain a few steps, export, finetune, evaluate and dump attention.
#[test]
fn end_to_end_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let corpus = d.join("corpus.txt");
    let task = d.join("task.tsv");
    let cfg = d.join("desk.cfg");
    let run = d.join("run");
    assert!(bpdec(&["gen-corpus", "--seed", "1", "--lines", "300", "--out", p(&corpus)]).status.success());
    assert!(bpdec(&["gen-corpus", "--seed", "2", "--lines", "60", "--marker", "7", "--out", p(&task)]).status.success());
    assert!(bpdec(&["preset", "desk", "--out", p(&cfg)]).status.success());

    let o = bpdec(&[
        "pretrain", "--config", p(&cfg), "--corpus", p(&corpus), "--seed", "4", "--steps", "4", "--out", p(&run),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = std::fs::read_to_string(run.join("metrics.txt")).unwrap();
    assert_eq!(metrics.lines().count(), 4);
    assert!(metrics.lines().all(|l| l.contains(" unmask_l1=")));

    // resuming from the final checkpoint with more steps appends to the same metrics
    let o = bpdec(&[
        "pretrain",
        "--corpus",
        p(&corpus),
        "--resume",
        p(&run.join("final.ckpt")),
        "--out",
        p(&run),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("already at step 4"));

    let vocab = run.join("vocab.txt");
    let encoder = d.join("encoder.ckpt");
    let o = bpdec(&["export-encoder", "--checkpoint", p(&run.join("final.ckpt")), "--out", p(&encoder)]);
    assert_eq!(o.status.code(), Some(0));

    // finetuning the unexported checkpoint is a runtime error
    let o = bpdec(&[
        "finetune", "--checkpoint", p(&run.join("final.ckpt")), "--vocab", p(&vocab), "--task", p(&task),
    ]);
    assert_eq!(o.status.code(), Some(2));

    let ft = d.join("ft");
    let o = bpdec(&[
        "finetune", "--checkpoint", p(&encoder), "--vocab", p(&vocab), "--task", p(&task), "--epochs", "1", "--out",
        p(&ft),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("dev_accuracy="));
    assert!(ft.join("report.txt").exists() && ft.join("finetuned.ckpt").exists());

    let o = bpdec(&["eval-cloze", "--checkpoint", p(&encoder), "--vocab", p(&vocab), "--corpus", p(&corpus)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("accuracy="));

    let line = std::fs::read_to_string(&corpus).unwrap().lines().next().unwrap().to_string();
    let csv = d.join("attn.csv");
    let dump = |ckpt: &Path, stack: &str| {
        bpdec(&[
            "attn-dump", "--checkpoint", p(ckpt), "--vocab", p(&vocab), "--line", &line, "--stack", stack, "--seed", "5",
            "--out", p(&csv),
        ])
    };
    assert_eq!(dump(&run.join("final.ckpt"), "decoder").status.code(), Some(0));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 32 + 2);
    assert_eq!(dump(&encoder, "decoder").status.code(), Some(2));
}
