use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn grnp(workdir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grnp"))
        .arg("--workdir")
        .arg(workdir)
        .args(args)
        .env_remove("GRNP_SEED")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

const TINY: [&str; 4] = ["--set", "size=tiny", "--set", "train.epochs=2"];

/// A workdir holding the desk dataset and tiny generator and prompter
/// checkpoints, shared by the tests that only read it.
fn trained() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        ok(&grnp(&dir, &["ingest", "--desk"]));
        ok(&grnp(&dir, &[&TINY[..], &["train", "gen"]].concat()));
        ok(&grnp(&dir, &[&TINY[..], &["train", "prompter"]].concat()));
        dir
    })
}

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for e in fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        let target = to.join(e.file_name());
        if e.file_type().unwrap().is_dir() {
            copy_dir(&e.path(), &target);
        } else {
            fs::copy(e.path(), target).unwrap();
        }
    }
}

/// A private copy of the trained workdir.
fn trained_copy() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    copy_dir(trained(), dir.path());
    dir
}

#[test]
fn help_succeeds_and_usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(grnp(dir.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(grnp(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(grnp(dir.path(), &["--set", "rl.no_such_key=1", "gradcheck"]).status.code(), Some(1));
    assert_eq!(grnp(dir.path(), &["--set", "rl.gamma=abc", "gradcheck"]).status.code(), Some(1));
    assert_eq!(grnp(dir.path(), &["--set", "gen.hidden", "gradcheck"]).status.code(), Some(1));
}

#[test]
fn missing_corpus_file_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = grnp(dir.path(), &["ingest", "--corpus", "absent.txt"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.txt"));
}

fn stat(stats: &str, key: &str) -> usize {
    stats
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}\t")))
        .unwrap_or_else(|| panic!("no {key} line"))
        .parse()
        .unwrap()
}

#[test]
fn ingest_counts_and_discards() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = "#author: ann\n\
                  The evening air is growing chill,\n\
                  I wander slowly up the hill.\n\
                  The children laugh and run to play,\n\
                  and all the birds have flown away.\n\
                  \n\
                  #author: bo\n\
                  The night is dark, the moon is bright,\n\
                  a lantern hangs beside the door.\n\
                  We walk along the river road,\n\
                  and never speak of it again.\n\
                  \n\
                  The stars are falling through the night,\n\
                  the sea is calling from the shore.\n\
                  I hold the candle burning bright\n\
                  and wait for you forevermore.\n";
    fs::write(dir.path().join("corpus.txt"), corpus).unwrap();
    let args = ["--set", "ingest.split=counts:3,0,0", "ingest", "--corpus", "corpus.txt"];
    let first = ok(&grnp(dir.path(), &args));
    assert_eq!(stat(&first, "quatrains"), 3);
    assert_eq!(stat(&first, "kept"), 2);
    assert_eq!(stat(&first, "discarded_unrhymed"), 1);
    let stats_file = fs::read(dir.path().join("data/stats.tsv")).unwrap();
    let second = ok(&grnp(dir.path(), &args));
    assert_eq!(first, second);
    assert_eq!(stats_file, fs::read(dir.path().join("data/stats.tsv")).unwrap());
}

#[test]
fn scheme_histogram_matches_dataset_files() {
    let dir = trained();
    let stats = fs::read_to_string(dir.join("data/stats.tsv")).unwrap();
    let kept = stat(&stats, "kept");
    let mut hist = std::collections::BTreeMap::new();
    for l in stats.lines().filter_map(|l| l.strip_prefix("scheme\t")) {
        let (s, n) = l.split_once('\t').unwrap();
        hist.insert(s.to_string(), n.parse::<usize>().unwrap());
    }
    assert_eq!(hist.values().sum::<usize>(), kept);
    // Recount from the written splits.
    let mut recount = std::collections::BTreeMap::new();
    for split in ["train.tsv", "val.tsv", "test.tsv"] {
        for line in fs::read_to_string(dir.join("data").join(split)).unwrap().lines() {
            if line.is_empty() {
                continue;
            }
            let scheme = line.split('\t').nth(1).unwrap();
            *recount.entry(scheme.to_string()).or_insert(0usize) += 1;
        }
    }
    assert_eq!(hist, recount);
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect()
}

#[test]
fn train_writes_one_row_per_epoch_and_resume_continues_steps() {
    let dir = trained_copy();
    let first = csv_rows(&dir.path().join("logs/train_gen.csv"));
    assert_eq!(first.len(), 2);
    let last_steps: u64 = first[1][1].parse().unwrap();
    ok(&grnp(dir.path(), &["--set", "size=tiny", "train", "gen", "--resume", "--epochs", "1"]));
    let resumed = csv_rows(&dir.path().join("logs/train_gen.csv"));
    assert_eq!(resumed.len(), 1);
    let steps: u64 = resumed[0][1].parse().unwrap();
    let per_epoch: u64 = first[0][1].parse().unwrap();
    assert_eq!(steps, last_steps + per_epoch);
    let sidecar = fs::read_to_string(dir.path().join("checkpoints/gen.cfg")).unwrap();
    assert!(sidecar.contains(&format!("steps={steps}")));
}

#[test]
fn vanilla_variant_drops_both_features() {
    let dir = trained_copy();
    let args = [&TINY[..], &["--set", "train.epochs=1", "train", "prompter", "--no-author", "--no-scheme"]].concat();
    ok(&grnp(dir.path(), &args));
    let cfg = fs::read_to_string(dir.path().join("checkpoints/vanilla/pro.cfg")).unwrap();
    assert!(cfg.contains("use_author=false") && cfg.contains("use_scheme=false"));
    assert!(dir.path().join("logs/train_prompter_vanilla.csv").exists());
    let out = ok(&grnp(dir.path(), &["eval", "prompter", "--no-author", "--no-scheme", "--split", "val"]));
    let ppl: f64 = out.trim().strip_prefix("perplexity\t").unwrap().parse().unwrap();
    assert!(ppl.is_finite() && ppl > 1.0);
}

#[test]
fn rl_flag_validation() {
    let dir = trained();
    let out = grnp(dir, &["rl", "--env", "rhyme", "--dynamic", "--poems", "3"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--poems"));
    assert_eq!(grnp(dir, &["rl", "--env", "reconstruction", "--dynamic"]).status.code(), Some(1));
    assert_eq!(grnp(dir, &["rl", "--env", "maze"]).status.code(), Some(1));
}

#[test]
fn rhyme_rl_needs_a_prompter_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    ok(&grnp(dir.path(), &["ingest", "--desk"]));
    let out = grnp(dir.path(), &["rl", "--env", "rhyme", "--poems", "2"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("prompter"));
}

const RL_SMALL: [&str; 10] = [
    "--set", "size=tiny", "rl", "--env", "reconstruction", "--poems", "1", "--corrupt", "1", "--volleys",
];

#[test]
fn reconstruction_rl_is_bitwise_reproducible() {
    let runs: Vec<_> = (0..2)
        .map(|_| {
            let dir = trained_copy();
            let out = ok(&grnp(dir.path(), &[&RL_SMALL[..], &["2", "--episodes", "40"]].concat()));
            (dir, out)
        })
        .collect();
    let (a, b) = (runs[0].0.path(), runs[1].0.path());
    for f in ["logs/rl_reconstruction_ppo.csv", "logs/rl_reconstruction_ppo_episodes.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(
        fs::read(a.join("checkpoints/det_reconstruction_ppo.ckpt")).unwrap(),
        fs::read(b.join("checkpoints/det_reconstruction_ppo.ckpt")).unwrap()
    );
    assert_eq!(csv_rows(&a.join("logs/rl_reconstruction_ppo.csv")).len(), 2);
    assert!(a.join("checkpoints/rl/reconstruction_ppo/volley_1/det.ckpt").exists());
    let table = runs[0].1.lines().rev().take(2).collect::<Vec<_>>();
    assert!(table[1].starts_with("env\talgo\tpoems\tR_first\tR_last"));
    assert!(table[0].starts_with("reconstruction\tppo\t1\t"));
}

#[test]
fn seed_precedence_is_file_then_env_then_flag() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.cfg"), "seed=5\nrl.gamma=0.9\n").unwrap();
    let run = |env_seed: Option<&str>, flag: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_grnp"));
        c.arg("--workdir").arg(dir.path()).args(["--config", "run.cfg"]);
        if let Some(s) = flag {
            c.args(["--seed", s]);
        }
        match env_seed {
            Some(s) => c.env("GRNP_SEED", s),
            None => c.env_remove("GRNP_SEED"),
        };
        let out = c.args(["--set", "draft.retries=2", "ingest", "--desk"]).output().unwrap();
        ok(&out);
        fs::read_to_string(dir.path().join("logs/ingest.config")).unwrap()
    };
    let cfg = run(None, None);
    assert!(cfg.contains("\nseed=5\n") || cfg.starts_with("seed=5\n"));
    assert!(cfg.contains("rl.gamma=0.9\n") && cfg.contains("draft.retries=2\n"));
    assert!(cfg.contains("ingest.seed=5\n") && cfg.contains("train.seed=5\n"));
    assert!(run(Some("7"), None).starts_with("seed=7\n"));
    assert!(run(Some("7"), Some("9")).starts_with("seed=9\n"));
}

#[test]
fn gradcheck_passes_and_names_an_injected_fault() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&grnp(dir.path(), &["gradcheck"]));
    assert!(out.lines().filter(|l| l.contains(" PASS ")).count() >= 23);
    assert!(!out.contains(" FAIL "));
    let bad = grnp(dir.path(), &["gradcheck", "--inject-fault", "sigmoid"]);
    assert_eq!(bad.status.code(), Some(2));
    let text = String::from_utf8_lossy(&bad.stdout);
    let verdict = |name: &str| {
        text.lines()
            .map(|l| l.split_whitespace().collect::<Vec<_>>())
            .find(|w| w.first() == Some(&name))
            .map(|w| w[1].to_string())
    };
    assert_eq!(verdict("sigmoid").as_deref(), Some("FAIL"), "{text}");
    assert_eq!(verdict("tanh").as_deref(), Some("PASS"));
    assert_eq!(grnp(dir.path(), &["gradcheck", "--inject-fault", "nonsense"]).status.code(), Some(1));
}

/// A workdir with a tiny rhyme-trained detector.
fn with_detector() -> tempfile::TempDir {
    let dir = trained_copy();
    let args = ["--set", "size=tiny", "rl", "--env", "rhyme", "--poems", "2", "--volleys", "1", "--steps", "60"];
    ok(&grnp(dir.path(), &args));
    dir
}

#[test]
fn revise_matching_draft_takes_no_steps_and_traces_replay() {
    let dir = with_detector();
    fs::write(
        dir.path().join("draft.txt"),
        "the evening air is growing chill\nI wander slowly up the hill\nthe children laugh and run to play\nand all the birds have flown away\n",
    )
    .unwrap();
    let out = ok(&grnp(dir.path(), &["revise", "--draft", "draft.txt", "--scheme", "AABB"]));
    assert!(out.contains("steps\t0\n"), "{out}");
    assert!(out.contains("verdict\tmatched"));

    let args = ["--seed", "4", "revise", "--generate", "--scheme", "ABAB", "--author", "nobody"];
    let a = ok(&grnp(dir.path(), &args));
    let b = ok(&grnp(dir.path(), &args));
    assert_eq!(a, b);
    let steps: usize = a.lines().find_map(|l| l.strip_prefix("steps\t")).unwrap().parse().unwrap();
    assert!(steps <= 30);
    let trace_lines = a.lines().skip_while(|l| !l.starts_with("step\t")).skip(1).take_while(|l| !l.is_empty()).count();
    assert_eq!(trace_lines, steps);
}

#[test]
fn generate_prints_four_verses_per_draft() {
    let out = ok(&grnp(trained(), &["generate", "-n", "2", "--scheme", "ABAB"]));
    let blocks: Vec<&str> = out.trim_end().split("\n\n").collect();
    assert_eq!(blocks.len(), 2);
    assert!(blocks.iter().all(|b| b.lines().count() == 4));
}
