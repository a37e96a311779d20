use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = "# small enough for tests\nembed_dim = 8\nhidden = 8\nlayers = 3\nepochs = 2\nbatch_size = 4\n";

struct Workspace {
    dir: tempfile::TempDir,
}

/// Sentences where each persona prefers its own words.
fn persona_lines(name: &str, count: usize, offset: usize) -> String {
    let function = ["i", "you", "it", "is", "and", "so"];
    (0..count)
        .map(|i| {
            let k = i + offset;
            format!(
                "{} {name}{} {} {name}{} .\n",
                function[k % function.len()],
                k % 5,
                function[(k / 2) % function.len()],
                (k * 3) % 5
            )
        })
        .collect()
}

fn script_lines(count: usize) -> String {
    let speakers = ["ann", "bob", "cat"];
    (0..count)
        .map(|i| {
            let who = speakers[(i * 7 / 3) % 3];
            let who = if i > 0 && who == speakers[((i - 1) * 7 / 3) % 3] { speakers[(i + 1) % 3] } else { who };
            format!("{who}\t{}", persona_lines(who, 1, i))
        })
        .collect()
}

impl Workspace {
    fn new() -> Self {
        let ws = Self {
            dir: tempfile::tempdir().unwrap(),
        };
        ws.write("tiny.conf", TINY);
        ws.write("general.txt", &(persona_lines("gen", 120, 0) + &persona_lines("ann", 20, 7)));
        ws.write("ann.txt", &persona_lines("ann", 60, 3));
        ws.write("ann-valid.txt", &persona_lines("ann", 20, 100));
        ws.write("bob.txt", &persona_lines("bob", 60, 5));
        ws.write("prefixes.txt", "i ann1\nyou gen2\n");
        ws.write("script.tsv", &script_lines(150));
        ws
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write(&self, name: &str, text: &str) {
        fs::write(self.path(name), text).unwrap();
    }

    fn run(&self, out: &str, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_perslm"))
            .current_dir(self.dir.path())
            .env_remove("PERSLM_OUT")
            .args(args)
            .args(["--config", "tiny.conf", "--out", out])
            .output()
            .unwrap()
    }

    fn ok(&self, out: &str, args: &[&str]) {
        let o = self.run(out, args);
        assert!(
            o.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }

    fn read(&self, rel: &str) -> String {
        fs::read_to_string(self.path(rel)).unwrap()
    }

    /// Vocabulary and general checkpoint in `out`.
    fn pretrained(&self, out: &str) {
        self.ok(out, &["build-vocab", "--corpus", "general.txt", "--corpus", "ann.txt", "--corpus", "bob.txt"]);
        let vocab = format!("{out}/vocab.txt");
        self.ok(out, &["pretrain", "--vocab", &vocab, "--data", "general.txt"]);
    }
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut all: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap()))
        .collect();
    all.sort();
    all
}

#[test]
fn sentence_pipeline_writes_declared_outputs() {
    let ws = Workspace::new();
    ws.pretrained("out");
    let model = ["--checkpoint", "out/general.ckpt", "--vocab", "out/vocab.txt"];
    for scheme in [&["--scheme", "relearn"][..], &["--scheme", "surplus"], &["--scheme", "fixed-n", "--fixed-n", "2"]] {
        let mut args = vec!["finetune"];
        args.extend(model);
        args.extend(["--data", "ann.txt", "--valid", "ann-valid.txt"]);
        args.extend(scheme);
        ws.ok("out", &args);
    }
    for label in ["relearn", "surplus-affine", "fixed-2"] {
        let curve = ws.read(&format!("out/curve-{label}.csv"));
        assert!(curve.starts_with("epoch,split,nll,perplexity\n"));
        assert_eq!(curve.lines().count(), 1 + 2 * 2);
        assert!(ws.path(&format!("out/finetune-{label}.ckpt")).exists());
    }

    let mut args = vec!["generate"];
    args.extend(model);
    args.extend(["--input", "prefixes.txt", "--max-len", "6"]);
    ws.ok("out", &args);
    let generated = ws.read("out/generated.txt");
    assert_eq!(generated.lines().count(), 2);
    assert!(generated.starts_with("i ann1"));

    let mut args = vec!["eval-ppl"];
    args.extend(model);
    args.extend(["--data", "ann-valid.txt"]);
    ws.ok("out", &args);
    assert!(ws.read("out/perplexity.csv").starts_with("data,examples,nll,perplexity\nann-valid.txt,20,"));

    let mut args = vec!["size-sweep"];
    args.extend(model);
    args.extend(["--data", "ann.txt", "--valid", "ann-valid.txt", "--sizes", "0,20,40"]);
    ws.ok("out", &args);
    assert_eq!(ws.read("out/size-sweep-surplus-affine.csv").lines().count(), 4);

    ws.ok(
        "out",
        &["eval-style", "--vocab", "out/vocab.txt", "--generated", "out/generated.txt", "--target", "ann=ann.txt", "--target", "bob=bob.txt"],
    );
    assert!(ws.read("out/style.csv").starts_with("target,cross_entropy\nann,"));

    ws.ok(
        "out",
        &["similarity-matrix", "--vocab", "out/vocab.txt", "--corpus", "ann=ann.txt", "--corpus", "bob=bob.txt"],
    );
    assert!(ws.read("out/similarity.csv").starts_with("corpus,ann,bob\n"));

    ws.ok("out", &["ngram-train", "--vocab", "out/vocab.txt", "--data", "general.txt", "--order", "3"]);
    assert!(ws.read("out/ngram-3.arpa").starts_with("\\data\\"));
    ws.ok("out", &["ngram-ppl", "--vocab", "out/vocab.txt", "--model", "out/ngram-3.arpa", "--data", "ann-valid.txt"]);
    assert!(ws.read("out/ngram-perplexity.csv").starts_with("data,order,perplexity\nann-valid.txt,3,"));

    let manifest = ws.read("out/finetune.manifest");
    assert!(manifest.contains("command = finetune\n"));
    assert!(manifest.contains("seed = 1234\n"));
    assert!(manifest.contains("config_hash = sha256:"));
    assert!(manifest.contains("curve-fixed-2.csv sha256:"));
}

#[test]
fn identical_runs_produce_identical_files() {
    let ws = Workspace::new();
    for out in ["a", "b"] {
        ws.pretrained(out);
        let ck = format!("{out}/general.ckpt");
        let vocab = format!("{out}/vocab.txt");
        ws.ok(out, &["finetune", "--checkpoint", &ck, "--vocab", &vocab, "--data", "ann.txt", "--scheme", "fixed-n"]);
    }
    let (a, b) = (files(&ws.path("a")), files(&ws.path("b")));
    assert_eq!(a.len(), 8);
    for ((na, ba), (nb, bb)) in a.iter().zip(&b) {
        assert_eq!(na, nb);
        if na.ends_with(".manifest") {
            // Manifests name the per-run checkpoint and vocabulary paths.
            let strip = |bytes: &[u8]| String::from_utf8_lossy(bytes).replace("a/", "").replace("b/", "");
            assert_eq!(strip(ba), strip(bb), "{na}");
        } else {
            assert_eq!(ba, bb, "{na} differs");
        }
    }
}

#[test]
fn message_reply_pipeline() {
    let ws = Workspace::new();
    ws.ok("out", &["build-vocab", "--script", "script.tsv"]);
    ws.ok("out", &["pretrain", "--vocab", "out/vocab.txt", "--data", "script.tsv", "--task", "message-reply"]);
    ws.write("messages.txt", "bob\tyou bob1 is bob2 .\ni cat3\n");
    ws.write("ann-target.txt", &persona_lines("ann", 30, 0));
    ws.write("cat-target.txt", &persona_lines("cat", 30, 0));
    ws.ok(
        "out",
        &[
            "style-convergence", "--checkpoint", "out/general.ckpt", "--vocab", "out/vocab.txt", "--data", "script.tsv",
            "--speaker", "ann", "--inputs", "messages.txt", "--target", "ann=ann-target.txt", "--target",
            "cat=cat-target.txt", "--probe-epochs", "0,1,2", "--scheme", "relearn", "--temperature", "1.0",
        ],
    );
    let table = ws.read("out/style-convergence-relearn.csv");
    assert!(table.starts_with("target,scheme,epoch,cross_entropy\n"));
    assert_eq!(table.lines().count(), 1 + 2 * 3);

    ws.ok(
        "out",
        &["generate", "--checkpoint", "out/general.ckpt", "--vocab", "out/vocab.txt", "--input", "messages.txt"],
    );
    assert_eq!(ws.read("out/generated.txt").lines().count(), 2);
}

#[test]
fn exit_codes_follow_error_classes() {
    let ws = Workspace::new();
    let code = |args: &[&str]| ws.run("out", args).status.code();
    assert_eq!(code(&["no-such-command"]), Some(2));
    assert_eq!(code(&["build-vocab", "--no-such-flag"]), Some(2));
    assert_eq!(code(&["build-vocab", "--corpus", "general.txt", "--set", "colour=blue"]), Some(2));
    assert_eq!(code(&["build-vocab", "--corpus", "missing.txt"]), Some(3));

    ws.pretrained("out");
    let broken = fs::read(ws.path("out/general.ckpt")).unwrap();
    fs::write(ws.path("out/broken.ckpt"), &broken[..broken.len() / 2]).unwrap();
    let o = ws.run("out", &["eval-ppl", "--checkpoint", "out/broken.ckpt", "--vocab", "out/vocab.txt", "--data", "ann.txt"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("truncated"));

    ws.write("diverge.conf", "embed_dim = 8\nhidden = 8\nlayers = 1\nepochs = 3\nlr = 1e300\nclip = 1e300\n");
    let o = Command::new(env!("CARGO_BIN_EXE_perslm"))
        .current_dir(ws.dir.path())
        .args(["pretrain", "--vocab", "out/vocab.txt", "--data", "general.txt", "--config", "diverge.conf", "--out", "d"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn precision_mismatch_needs_cast() {
    let ws = Workspace::new();
    ws.pretrained("out");
    let base = ["finetune", "--checkpoint", "out/general.ckpt", "--vocab", "out/vocab.txt", "--data", "ann.txt", "--set", "precision=32"];
    let o = ws.run("out", &base);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("precision"));
    let mut cast = base.to_vec();
    cast.push("--cast");
    ws.ok("out", &cast);
}

#[test]
fn output_directory_comes_from_environment() {
    let ws = Workspace::new();
    let o = Command::new(env!("CARGO_BIN_EXE_perslm"))
        .current_dir(ws.dir.path())
        .env("PERSLM_OUT", "from-env")
        .args(["build-vocab", "--corpus", "ann.txt"])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(ws.path("from-env/vocab.txt").exists());
    assert!(ws.path("from-env/build-vocab.manifest").exists());

    let o = ws.run("out", &["pretrain", "--vocab", "from-env/vocab.txt", "--data", "ann.txt", "--name", "../escape.ckpt"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!ws.path("escape.ckpt").exists());
}
