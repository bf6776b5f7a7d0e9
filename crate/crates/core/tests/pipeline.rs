use maskworld::{checkpoint, cli, data, formats, tokenizer};
use std::path::{Path, PathBuf};
use std::process::Command;

const SMALL: &str = r#"{
  "tokenizer": {"vocab": 64},
  "model": {
    "stpt": {"layers": 1, "channels": 16, "heads": 2},
    "prompt": {"text_len": 4, "text_vocab": 64, "text_channels": 8}
  },
  "train": {"batch_size": 2, "iterations": 3, "lr": 0.001, "checkpoint_interval": 2}
}"#;

fn run(args: &[&str]) -> i32 {
    cli::run(std::iter::once("maskworld").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let config = root.join("run.json");
        std::fs::write(&config, SMALL).unwrap();
        Fixture { _dir: dir, root, config }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// gen-data, fit-tokenizer and encode-data into `<tag>_*`.
    fn encode(&self, tag: &str) -> PathBuf {
        let raw = self.path(&format!("{tag}_raw"));
        let cb = self.path(&format!("{tag}.dcbk"));
        let enc = self.path(&format!("{tag}_enc"));
        let c = s(&self.config);
        assert_eq!(run(&["gen-data", "--config", c, "--out", s(&raw), "--episodes", "8"]), 0);
        assert_eq!(run(&["fit-tokenizer", "--config", c, "--data", s(&raw), "--out", s(&cb)]), 0);
        assert_eq!(run(&["encode-data", "--data", s(&raw), "--codebook", s(&cb), "--out", s(&enc)]), 0);
        enc
    }
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn data_pipeline_is_reproducible() {
    let fx = Fixture::new();
    let a = fx.encode("a");
    let b = fx.encode("b");
    let manifest = data::read_manifest(&a.join("manifest.json")).unwrap();
    assert_eq!(manifest.entries.len(), 8);
    assert_eq!((manifest.frames, manifest.grid, manifest.vocab), (8, [8, 8], 64));
    let fa = files(&a);
    assert_eq!(fa.len(), 2 + 4 * 8);
    assert_eq!(fa, files(&b));

    let (_, cb, items) = data::load_dataset(&a).unwrap();
    for (i, item) in items.iter().enumerate() {
        let stored = formats::read_tokens(&a.join(format!("episode_{i:04}.dtok"))).unwrap();
        assert_eq!(stored, item.tokens);
        let video = tokenizer::decode_tokens(&stored, &cb).unwrap();
        assert_eq!(tokenizer::encode_video(&video, &cb).unwrap(), stored);
        let caption = item.caption.as_deref().unwrap();
        assert!(data::parse_caption(caption).is_ok(), "{caption}");
    }
}

#[test]
fn train_and_generate_end_to_end() {
    let fx = Fixture::new();
    let enc = fx.encode("d");
    let ck = fx.path("m.dckp");
    let c = s(&fx.config);
    assert_eq!(run(&["train", "--config", c, "--data", s(&enc), "--out", s(&ck), "--eval-every", "3"]), 0);
    let log = std::fs::read_to_string(fx.path("m.dckp.log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    let last: serde_json::Value = serde_json::from_str(log.lines().last().unwrap()).unwrap();
    assert!(last["accuracy"].as_f64().is_some());
    let loaded = checkpoint::load(&ck).unwrap();
    assert_eq!(loaded.step, 3);
    assert_eq!(loaded.model.config.stpt.vocab, 64);

    assert_eq!(run(&["train", "--config", c, "--data", s(&enc), "--out", s(&fx.path("r.dckp")), "--resume", s(&ck), "--iterations", "5"]), 0);
    let resumed = checkpoint::load(&fx.path("r.dckp")).unwrap();
    assert_eq!((resumed.step, resumed.optimizer.unwrap().step), (5, 5));
    assert_eq!(std::fs::read_to_string(fx.path("r.dckp.log.jsonl")).unwrap().lines().count(), 2);

    let cb = fx.path("d.dcbk");
    let source = fx.path("d_raw/episode_0002.dvid");
    let gen = |task: &str, out: &Path, extra: &[&str]| {
        let mut args = vec!["generate", "--task", task, "--checkpoint", s(&ck), "--codebook", s(&cb), "--out", s(out)];
        args.extend_from_slice(extra);
        run(&args)
    };
    let first = fx.path("t1.dvid");
    let second = fx.path("t2.dvid");
    let prompt = ["--prompt", "a red square moving east", "--seed", "4", "--guidance", "1.5"];
    assert_eq!(gen("t2v", &first, &prompt), 0);
    assert_eq!(gen("t2v", &second, &prompt), 0);
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(fx.path("t1.json")).unwrap()).unwrap();
    assert_eq!(report["forward_passes"], 20);

    let toks = fx.path("i.dtok");
    assert_eq!(gen("i2v", &fx.path("i.dvid"), &["--source", s(&source), "--tokens-out", s(&toks)]), 0);
    let src = tokenizer::encode_video(&formats::read_video(&source).unwrap(), &formats::read_codebook(&cb).unwrap()).unwrap();
    assert_eq!(formats::read_tokens(&toks).unwrap().tokens[..64], src.tokens[..64]);
    assert_eq!(gen("a2v", &fx.path("a.dvid"), &["--source", s(&source), "--yaw", "-0.3", "--speed", "0.5"]), 0);
    assert_eq!(gen("inpaint", &fx.path("p.dvid"), &["--source", s(&source), "--region", "8,8,16,16", "--steps", "4"]), 0);
    assert_eq!(gen("stylize", &fx.path("s.dvid"), &["--source", s(&source), "--ratio", "0.5"]), 0);

    assert_eq!(gen("i2v", &fx.path("x.dvid"), &[]), 1);
    assert_eq!(gen("inpaint", &fx.path("x.dvid"), &["--source", s(&source)]), 1);
}

#[test]
fn exit_codes() {
    let bin = env!("CARGO_BIN_EXE_maskworld");
    let help = Command::new(bin).arg("--help").output().unwrap();
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("bench-decode"));
    assert_eq!(Command::new(bin).arg("nonsense").output().unwrap().status.code(), Some(1));

    let fx = Fixture::new();
    let bad = fx.path("bad.json");
    std::fs::write(&bad, r#"{"train": {"lr": -0.5}}"#).unwrap();
    let out = Command::new(bin)
        .args(["train", "--config", s(&bad), "--data", s(&fx.path("none")), "--out", s(&fx.path("m.dckp"))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.lr"));

    let typo = fx.path("typo.json");
    std::fs::write(&typo, r#"{"train": {"learning_rate": 0.1}}"#).unwrap();
    assert_eq!(run(&["train", "--config", s(&typo), "--data", "x", "--out", "y"]), 1);

    let missing = fx.path("missing");
    let out = Command::new(bin)
        .args(["encode-data", "--data", s(&missing), "--codebook", s(&missing), "--out", s(&fx.path("o"))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let report = fx.path("g.json");
    assert_eq!(run(&["gradcheck", "--coords", "100", "--out", s(&report)]), 0);
    let g: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert!(g["max_rel_error"].as_f64().unwrap() < 1e-4);
    let bench = fx.path("b.json");
    assert_eq!(run(&["bench-decode", "--grid", "2x4x4", "--steps", "4", "--out", s(&bench)]), 0);
    let b: serde_json::Value = serde_json::from_slice(&std::fs::read(&bench).unwrap()).unwrap();
    assert_eq!(b["autoregressive"]["forward_passes"], 32);
    assert_eq!(run(&["bench-decode", "--grid", "1x2x2", "--steps", "5"]), 1);
}
