use std::path::{Path, PathBuf};
use std::process::Command;

use megsim_cli::run;
use megsim_cli::rundir::open_verified;

const SMALL: &[&str] = &[
    "--set",
    "pipeline.prior_tasks=32",
    "--set",
    "pipeline.distill_steps=30",
    "--set",
    "pipeline.pool_tasks=8",
    "--set",
    "pipeline.finetune_steps=30",
];

const TINY_SOLVERS: &str =
    "cvpo.iterations = 2, cvpo.steps_per_iter = 32, cvpo.critic_steps = 4, cvpo.critic_batch = 32
cvpo.batch_states = 8, cvpo.particles = 8
ppo.iterations = 2, ppo.steps_per_iter = 64, ppo.epochs = 2";

fn cli(args: &[&str]) -> i32 {
    let mut argv = vec!["megsim"];
    argv.extend_from_slice(args);
    run(argv)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// distill → finetune → sweep in `root`.
fn upstream_chain(root: &Path, grid: &str, seeds: &str) -> (PathBuf, PathBuf, PathBuf) {
    let (d, f, s) = (
        root.join("distill"),
        root.join("finetune"),
        root.join("sweep"),
    );
    let mut args = vec!["distill", "--seed", "3", "--out", p(&d)];
    args.extend_from_slice(SMALL);
    assert_eq!(cli(&args), 0);
    assert_eq!(
        cli(&["finetune", "--seed", "3", "--from", p(&d), "--out", p(&f)]),
        0
    );
    assert_eq!(
        cli(&[
            "sweep",
            "--seed",
            "4",
            "--from",
            p(&f),
            "--grid",
            grid,
            "--seeds",
            seeds,
            "--out",
            p(&s)
        ]),
        0
    );
    (d, f, s)
}

fn csv_rows(path: &Path) -> usize {
    csv::Reader::from_path(path).unwrap().records().count()
}

#[test]
fn sweep_writes_one_row_per_cell_and_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (_, _, sa) = upstream_chain(a.path(), "5x5", "10");
    let (_, _, sb) = upstream_chain(b.path(), "5x5", "10");
    assert_eq!(csv_rows(&sa.join("quality_table.csv")), 25);
    for stage in ["distill", "finetune", "sweep"] {
        let ma = open_verified(&a.path().join(stage)).unwrap();
        let mb = open_verified(&b.path().join(stage)).unwrap();
        assert_eq!(ma.files, mb.files, "{stage}");
        assert_eq!(ma.config_sha256, mb.config_sha256);
    }
    assert_eq!(
        std::fs::read(sa.join("quality_table.csv")).unwrap(),
        std::fs::read(sb.join("quality_table.csv")).unwrap()
    );
}

#[test]
fn train_eval_report_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let (_, _, sweep) = upstream_chain(root, "3x3", "4");
    let solvers = root.join("solvers.txt");
    std::fs::write(&solvers, TINY_SOLVERS).unwrap();

    let mut evals = Vec::new();
    for d_max in ["3", "5", "7"] {
        let train = root.join(format!("cvpo_{d_max}"));
        let set = format!("D_max={d_max}");
        let code = cli(&[
            "train-cvpo",
            "--from",
            p(&sweep),
            "--config",
            p(&solvers),
            "--set",
            &set,
            "--out",
            p(&train),
        ]);
        assert_eq!(code, 0);
        let eval = root.join(format!("eval_{d_max}"));
        assert_eq!(
            cli(&[
                "eval",
                "--policy",
                p(&train),
                "--steps",
                "100",
                "--out",
                p(&eval)
            ]),
            0
        );
        assert_eq!(csv_rows(&eval.join("trajectory.csv")), 100);
        evals.push(eval);
    }
    let ppol = root.join("ppol");
    assert_eq!(
        cli(&[
            "train-ppol",
            "--from",
            p(&sweep),
            "--config",
            p(&solvers),
            "--out",
            p(&ppol)
        ]),
        0
    );
    let ppol_eval = root.join("ppol_eval");
    assert_eq!(
        cli(&[
            "eval",
            "--policy",
            p(&ppol),
            "--steps",
            "50",
            "--out",
            p(&ppol_eval)
        ]),
        0
    );
    let fixed = root.join("fixed");
    assert_eq!(
        cli(&[
            "eval",
            "--fixed",
            "1,0",
            "--from",
            p(&sweep),
            "--steps",
            "50",
            "--out",
            p(&fixed)
        ]),
        0
    );

    let report = root.join("report");
    let mut args = vec!["report", "--out", p(&report)];
    args.extend(evals.iter().map(|e| p(e)));
    args.extend([p(&ppol_eval), p(&fixed)]);
    assert_eq!(cli(&args), 0);
    let mut r = csv::Reader::from_path(report.join("report.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 5);
    let d_max: Vec<&str> = rows[..3].iter().map(|r| &r[3]).collect();
    assert_eq!(d_max, ["3", "5", "7"]);
    assert_eq!(&rows[3][1], "ppol");
    assert_eq!(&rows[4][1], "fixed(1,0)");
    assert!(csv_rows(&report.join("claims.csv")) >= 2);

    // identical inputs give zero differences
    let twice = root.join("twice");
    assert_eq!(
        cli(&["report", "--out", p(&twice), p(&evals[0]), p(&evals[0])]),
        0
    );
    let mut r = csv::Reader::from_path(twice.join("report.csv")).unwrap();
    for rec in r.records() {
        let rec = rec.unwrap();
        for col in 16..20 {
            assert_eq!(rec[col].parse::<f64>().unwrap(), 0.0);
        }
    }
}

#[test]
fn existing_output_needs_force() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("d");
    let mut args = vec![
        "distill",
        "--out",
        p(&out),
        "--set",
        "pipeline.distill_steps=5",
        "--set",
        "pipeline.prior_tasks=16",
    ];
    assert_eq!(cli(&args), 0);
    let before = std::fs::read(out.join("manifest.json")).unwrap();
    assert_eq!(cli(&args), 2);
    assert_eq!(std::fs::read(out.join("manifest.json")).unwrap(), before);
    args.push("--force");
    assert_eq!(cli(&args), 0);
}

#[test]
fn report_refuses_unmanifested_or_tampered_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let bare = tmp.path().join("bare");
    std::fs::create_dir(&bare).unwrap();
    std::fs::write(bare.join("eval_summary.csv"), "method\nx\n").unwrap();
    assert_eq!(
        cli(&["report", "--out", p(&tmp.path().join("r")), p(&bare)]),
        2
    );

    let d = tmp.path().join("d");
    assert_eq!(
        cli(&[
            "distill",
            "--out",
            p(&d),
            "--set",
            "pipeline.distill_steps=5",
            "--set",
            "pipeline.prior_tasks=16"
        ]),
        0
    );
    // a valid run without an eval summary
    assert_eq!(
        cli(&["report", "--out", p(&tmp.path().join("r")), p(&d)]),
        2
    );
    std::fs::write(d.join("distill_loss.csv"), "step,loss\n").unwrap();
    assert_eq!(
        cli(&[
            "finetune",
            "--from",
            p(&d),
            "--out",
            p(&tmp.path().join("f"))
        ]),
        2
    );
    assert!(!tmp.path().join("r").exists());
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(cli(&["frobnicate"]), 1);
    assert_eq!(cli(&[]), 1);
    assert_eq!(cli(&["report", "--out", "/tmp/never"]), 1);
    assert_eq!(
        cli(&["sweep", "--from", "x", "--out", "y", "--grid", "5by5"]),
        1
    );
    assert_eq!(
        cli(&["eval", "--out", "y", "--fixed", "2,0", "--from", "x"]),
        1
    );
    assert_eq!(cli(&["--help"]), 0);
}

#[test]
fn binary_reports_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_megsim");
    let out = Command::new(bin).arg("bogus").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("SCHEMAS.md"));
    let out = Command::new(bin)
        .args([
            "finetune",
            "--from",
            "/nonexistent",
            "--out",
            "/tmp/megsim-never",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
