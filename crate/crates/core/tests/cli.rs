use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use scarf::eval::read_runs;

fn scarf(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scarf")).args(args).current_dir(cwd).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut csv = String::from("width,height,colour,blank,kind\n");
        for i in 0..120 {
            let y = i % 2;
            let w = (i * 37 % 17) as f64 / 4.0 + 3.0 * y as f64;
            let h = (i * 11 % 13) as f64 / 3.0 - y as f64;
            let colour = if i % 9 == 0 { "" } else { ["red", "green", "blue"][i % 3] };
            csv.push_str(&format!("{w},{h},{colour},,{}\n", if y == 1 { "yes" } else { "no" }));
        }
        std::fs::write(dir.path().join("data.csv"), csv).unwrap();
        std::fs::write(
            dir.path().join("schema.toml"),
            "[columns]\nwidth = \"numerical\"\nheight = \"numerical\"\ncolour = \"categorical\"\nblank = \"numerical\"\nkind = \"label\"\n",
        )
        .unwrap();
        std::fs::write(
            dir.path().join("small.toml"),
            "dataset = \"data.csv\"\nschema = \"schema.toml\"\nbatch_size = 32\nhidden_width = 16\nembedding_width = 8\nencoder_layers = 2\nhead_layers = 1\npretrain_max_epochs = 4\nfinetune_max_epochs = 4\nval_build_epochs = 2\n",
        )
        .unwrap();
        Self { dir }
    }

    fn path(&self) -> &Path {
        self.dir.path()
    }

    fn run(&self, extra: &[&str]) -> Output {
        let mut args = vec!["run", "--config", "small.toml"];
        args.extend_from_slice(extra);
        scarf(&args, self.path())
    }

    fn results(&self, out: &str) -> PathBuf {
        self.path().join(out).join("results.jsonl")
    }
}

#[test]
fn validate_reports_kinds_missing_and_dropped() {
    let fx = Fixture::new();
    let o = scarf(&["validate", "--dataset", "data.csv", "--schema", "schema.toml"], fx.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let s = stdout(&o);
    assert!(s.contains("rows: 120"));
    assert!(s.contains("colour") && s.contains("categorical") && s.contains("missing 14"));
    assert!(s.contains("dropped: blank"));
    assert!(s.contains("yes") && s.contains("60"));
}

#[test]
fn validate_fails_on_schema_problems() {
    let fx = Fixture::new();
    std::fs::write(
        fx.path().join("nolabel.toml"),
        "[columns]\nwidth = \"numerical\"\nheight = \"numerical\"\n",
    )
    .unwrap();
    let o = scarf(&["validate", "--dataset", "data.csv", "--schema", "nolabel.toml"], fx.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("label"));
    std::fs::write(
        fx.path().join("wrong.toml"),
        "[columns]\nwidth = \"numerical\"\nheight = \"numerical\"\ncolour = \"categorical\"\nblank = \"numerical\"\nclass = \"label\"\n",
    )
    .unwrap();
    let o = scarf(&["validate", "--dataset", "data.csv", "--schema", "wrong.toml"], fx.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("kind"), "{}", stderr(&o));
}

#[test]
fn run_writes_records_curves_and_config_then_resumes() {
    let fx = Fixture::new();
    let o = fx.run(&["--method", "control,scarf", "--trials", "1", "--out", "out"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let runs = read_runs(fx.results("out")).unwrap();
    assert_eq!(runs.len(), 2);
    assert_eq!(runs[0].method, "control");
    assert!(runs[0].pretrain_epochs.is_none());
    assert!(runs[1].pretrain_epochs.unwrap() >= 1);
    let curves = fx.path().join("out/curves");
    assert!(curves.join("data__scarf__full__0__pretrain.csv").exists());
    let ft = std::fs::read_to_string(curves.join("data__control__full__0__finetune.csv")).unwrap();
    assert!(ft.starts_with("epoch,train,validation\n"));

    let again = fx.run(&["--method", "control,scarf", "--trials", "2", "--out", "out"]);
    assert!(again.status.success());
    assert!(stdout(&again).contains("skipped 2 completed trials"));
    let runs = read_runs(fx.results("out")).unwrap();
    assert_eq!(runs.len(), 4);
    assert_eq!(runs.iter().filter(|r| r.trial == 0).count(), 2);
}

#[test]
fn echoed_config_reproduces_results() {
    let fx = Fixture::new();
    let o = fx.run(&["--method", "control", "--trials", "2", "--seed", "11", "--setting", "semi25", "--out", "a"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = scarf(&["run", "--config", "a/config.toml", "--out", "b"], fx.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let a = std::fs::read(fx.results("a")).unwrap();
    let b = std::fs::read(fx.results("b")).unwrap();
    assert_eq!(a, b);
    let echoed = std::fs::read_to_string(fx.path().join("a/config.toml")).unwrap();
    assert!(echoed.contains("seed = 11") && echoed.contains("setting = \"semi25\""));
}

#[test]
fn run_rejects_unknown_methods_and_fails_when_every_trial_fails() {
    let fx = Fixture::new();
    let o = fx.run(&["--method", "supervised_magic", "--out", "x"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("supervised_magic"));
    // 1 labeled row per trial cannot train
    std::fs::write(fx.path().join("tiny.toml"), "labeled_fraction = 0.001\nbatch_size = 0\n").unwrap();
    let o = scarf(
        &["run", "--config", "tiny.toml", "--dataset", "data.csv", "--schema", "schema.toml", "--out", "y"],
        fx.path(),
    );
    assert!(!o.status.success());
}

#[test]
fn report_writes_matrix_tables_and_wellformed_svg() {
    let fx = Fixture::new();
    let o = fx.run(&["--method", "control,label_smoothing", "--trials", "3", "--jobs", "2", "--out", "out"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = scarf(&["report", "--results", "out", "--svg", "out/wins.svg"], fx.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(fx.path().join("out/win_matrix.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "method,control,label_smoothing,min_ratio");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("control,,"));
    assert!(fx.path().join("out/relative_improvement.csv").exists());
    let svg = std::fs::read_to_string(fx.path().join("out/wins.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    assert!(svg.contains("label_smoothing"));

    let o = scarf(&["report", "--results", "out", "--methods", "control,mixup"], fx.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("mixup"));
    let o = scarf(&["report", "--results", "out", "--methods", "control,nonsense"], fx.path());
    assert!(!o.status.success());
}

#[test]
fn help_lists_the_commands() {
    let o = scarf(&["--help"], Path::new("."));
    let s = stdout(&o);
    assert!(s.contains("validate") && s.contains("run") && s.contains("report"));
}
