use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use hemscast_core::forecaster::{init_model, load_weights, ModelConfig};
use hemscast_core::seed::derive_seed;
use quick_xml::events::Event;
use quick_xml::Reader;

const TOY: &str = r#"
seed = 5

[data]
cohort_dir = "cohort"
pretrain_households = 3
heldout_households = 2
days = 53

[model]
input_window = 192
hidden_size = 8
attention_heads = 2

[pretrain]
epochs = 4
batch_size = 8
early_stopping_patience = 4

[split]
test_weeks = 1
validation_days = 2
training_days = 14

[evaluation]
sizes = [14, 21]

[paths]
global_weights = "pretrain/global.hmw"
"#;

fn hemscast(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hemscast")).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails_with(out: Output, code: i32) -> String {
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(out.status.code(), Some(code), "stderr: {stderr}");
    stderr
}

/// Temp dir with `run.toml` holding `config`.
fn workspace(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), config).unwrap();
    dir
}

fn with_cohort(config: &str) -> tempfile::TempDir {
    let dir = workspace(config);
    ok(hemscast(dir.path(), &["gen-data", "--config", "run.toml", "--out", "cohort"]));
    dir
}

fn pretrained(config: &str) -> tempfile::TempDir {
    let dir = with_cohort(config);
    ok(hemscast(dir.path(), &["pretrain", "--config", "run.toml", "--out", "pretrain"]));
    dir
}

fn sorted_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path).unwrap().lines().map(|l| l.split(',').map(String::from).collect()).collect()
}

fn summary_field(path: &Path, name: &str) -> f64 {
    let rows = csv_rows(path);
    let col = rows[0].iter().position(|h| h == name).unwrap();
    rows[1][col].parse().unwrap()
}

#[test]
fn default_cohort_has_thirty_households() {
    let dir = workspace("");
    ok(hemscast(dir.path(), &["gen-data", "--out", "cohort", "--seed", "1"]));
    let csvs = sorted_files(&dir.path().join("cohort")).into_iter().filter(|p| p.extension().unwrap() == "csv").count();
    assert_eq!(csvs, 30);
    let manifest = fs::read_to_string(dir.path().join("cohort/manifest.json")).unwrap();
    assert_eq!(manifest.matches("\"role\": \"pretrain\"").count(), 25);
    assert_eq!(manifest.matches("\"role\": \"heldout\"").count(), 5);
}

#[test]
fn gen_data_is_reproducible_and_guarded() {
    let dir = with_cohort(TOY);
    let first: Vec<_> = sorted_files(&dir.path().join("cohort")).iter().map(|p| fs::read(p).unwrap()).collect();
    assert_eq!(first.len(), 6);

    let err = fails_with(hemscast(dir.path(), &["gen-data", "--config", "run.toml", "--out", "cohort"]), 7);
    assert!(err.contains("--force"), "{err}");

    ok(hemscast(dir.path(), &["gen-data", "--config", "run.toml", "--out", "again"]));
    ok(hemscast(dir.path(), &["gen-data", "--config", "run.toml", "--out", "cohort", "--force"]));
    for d in ["cohort", "again"] {
        let files: Vec<_> = sorted_files(&dir.path().join(d)).iter().map(|p| fs::read(p).unwrap()).collect();
        assert_eq!(files, first, "{d}");
    }

    ok(hemscast(dir.path(), &["gen-data", "--config", "run.toml", "--out", "other", "--seed", "6"]));
    let other = fs::read(dir.path().join("other/heldout-00.csv")).unwrap();
    assert_ne!(other, fs::read(dir.path().join("cohort/heldout-00.csv")).unwrap());
}

#[test]
fn toy_pretrain_is_quick_and_learns() {
    let config = r#"
[data]
cohort_dir = "cohort"
pretrain_households = 3
heldout_households = 0
days = 30
[model]
hidden_size = 8
attention_heads = 2
"#;
    let dir = with_cohort(config);
    let t = Instant::now();
    ok(hemscast(dir.path(), &["pretrain", "--config", "run.toml", "--out", "pretrain"]));
    assert!(t.elapsed() < Duration::from_secs(120), "took {:?}", t.elapsed());
    let rows = csv_rows(&dir.path().join("pretrain/pretrain_history.csv"));
    assert_eq!(rows[0], ["epoch", "train_loss", "val_loss", "lr"]);
    assert!(rows.len() > 2);
    let first: f64 = rows[1][1].parse().unwrap();
    let last: f64 = rows.last().unwrap()[1].parse().unwrap();
    assert!(last < first, "train loss {first} -> {last}");
}

#[test]
fn zero_epochs_keeps_the_initialization() {
    let dir = with_cohort(TOY);
    ok(hemscast(dir.path(), &["pretrain", "--config", "run.toml", "--out", "pretrain", "--epochs", "0"]));
    let w = load_weights(&dir.path().join("pretrain/global.hmw")).unwrap();
    let config: ModelConfig =
        ModelConfig { input_window: 192, hidden_size: 8, attention_heads: 2, ..ModelConfig::default() };
    let init = init_model(&config, derive_seed(5, "pretrain/init")).unwrap();
    assert!(w.bitwise_eq(&init));
    assert_eq!(fs::read_to_string(dir.path().join("pretrain/pretrain_history.csv")).unwrap().lines().count(), 1);
}

#[test]
fn missing_cohort_fails_without_output() {
    let dir = workspace(TOY);
    let err = fails_with(hemscast(dir.path(), &["pretrain", "--config", "run.toml", "--out", "pretrain"]), 4);
    assert!(err.contains("cohort"), "{err}");
    assert!(!dir.path().join("pretrain").exists());
}

#[test]
fn config_errors_have_their_own_code_and_write_nothing() {
    let dir = workspace(&format!("{TOY}\n[simulation]\npoint_quantile = 1.5\n"));
    fails_with(hemscast(dir.path(), &["gen-data", "--config", "run.toml", "--out", "cohort"]), 3);
    assert!(!dir.path().join("cohort").exists());

    let dir = workspace("[model]\nhidden = 8\n");
    let err = fails_with(hemscast(dir.path(), &["gen-data", "--config", "run.toml", "--out", "cohort"]), 3);
    assert!(err.contains("hidden"), "{err}");

    let dir = workspace("");
    fails_with(hemscast(dir.path(), &["gen-data", "--config", "missing.toml", "--out", "cohort"]), 3);
    fails_with(hemscast(dir.path(), &["simulate", "--out", "s", "--household", "h"]), 2);
}

#[test]
fn household_training_commands() {
    let dir = pretrained(TOY);
    let p = dir.path();
    let global = load_weights(&p.join("pretrain/global.hmw")).unwrap();

    ok(hemscast(p, &["finetune", "--config", "run.toml", "--out", "zero", "--household", "heldout-00", "--lr", "0"]));
    assert!(load_weights(&p.join("zero/finetuned-heldout-00-14.hmw")).unwrap().bitwise_eq(&global));

    let run = |cmd: &str, days: &str| {
        ok(hemscast(p, &[cmd, "--config", "run.toml", "--out", "models", "--household", "heldout-01", "--training-days", days]));
    };
    run("finetune", "42");
    run("train-local", "42");
    run("train-local", "21");
    let info = |stem: &str| -> serde_json::Value {
        serde_json::from_str(&fs::read_to_string(p.join(format!("models/{stem}.json"))).unwrap()).unwrap()
    };
    let (ft, lo, lo21) = (info("finetuned-heldout-01-42"), info("local-heldout-01-42"), info("local-heldout-01-21"));
    for other in [&lo, &lo21] {
        assert_eq!(ft["test_start"], other["test_start"]);
        assert_eq!(ft["test_days"], other["test_days"]);
    }
    assert_ne!(ft["train_start"], lo21["train_start"]);
    assert_eq!(ft["training_days"], 42);
    assert!(p.join("models/local-heldout-01-42.history.csv").exists());

    fails_with(hemscast(p, &["train-local", "--config", "run.toml", "--out", "models", "--household", "heldout-01", "--training-days", "21"]), 7);
    let err = fails_with(
        hemscast(p, &["train-local", "--config", "run.toml", "--out", "models", "--household", "heldout-01", "--training-days", "60"]),
        4,
    );
    assert!(err.contains("required"), "{err}");
    fails_with(hemscast(p, &["finetune", "--config", "run.toml", "--out", "models", "--household", "nobody"]), 4);
    fails_with(
        hemscast(p, &["finetune", "--config", "run.toml", "--out", "models", "--household", "heldout-01", "--lr", "1.0"]),
        3,
    );
}

#[test]
fn simulate_variants() {
    let dir = pretrained(TOY);
    let p = dir.path();
    let sim = |args: &[&str]| {
        let mut full = vec!["simulate", "--config", "run.toml", "--household", "heldout-00"];
        full.extend_from_slice(args);
        ok(hemscast(p, &full));
    };
    sim(&["--out", "week", "--no-battery"]);
    sim(&["--out", "week", "--persistence"]);
    let idle = p.join("week/sim-heldout-00-no-battery-summary.csv");
    assert_eq!(summary_field(&idle, "cost_eur"), summary_field(&idle, "no_battery_eur"));
    let log = fs::read_to_string(p.join("week/sim-heldout-00-persistence.csv")).unwrap();
    assert_eq!(log.lines().next().unwrap(), "timestamp,forecast_kw,actual_kw,pv_kw,u_kw,grid_kw,energy_kwh,cost_eur");
    assert_eq!(log.lines().count(), 1 + 672);
    let pers = p.join("week/sim-heldout-00-persistence-summary.csv");
    assert_eq!(summary_field(&pers, "records"), 672.0);
    assert!(summary_field(&pers, "perfect_foresight_eur") <= summary_field(&pers, "cost_eur") + 1e-9);

    fs::write(p.join("day.toml"), format!("{TOY}\n[simulation]\ndays = 1\n")).unwrap();
    ok(hemscast(p, &["simulate", "--config", "day.toml", "--household", "heldout-00", "--out", "day", "--oracle"]));
    let oracle = p.join("day/sim-heldout-00-oracle-summary.csv");
    let (cost, best) = (summary_field(&oracle, "cost_eur"), summary_field(&oracle, "perfect_foresight_eur"));
    assert!((cost - best).abs() < 1e-9, "{cost} vs {best}");

    ok(hemscast(p, &["train-local", "--config", "run.toml", "--out", "models", "--household", "heldout-00", "--epochs", "1"]));
    sim(&["--out", "week", "--weights", "models/local-heldout-00-14.hmw"]);
    let model = p.join("week/sim-heldout-00-local-heldout-00-14-summary.csv");
    assert_eq!(summary_field(&model, "records"), 672.0);
    let err = fails_with(
        hemscast(p, &["simulate", "--config", "run.toml", "--household", "heldout-01", "--out", "x", "--weights", "models/local-heldout-00-14.hmw"]),
        3,
    );
    assert!(err.contains("heldout-00"), "{err}");
}

/// `(group index, y1, y2)` of every error bar in an SVG, checking it parses.
fn error_bars(svg: &str) -> Vec<(usize, f64, f64)> {
    let mut reader = Reader::from_str(svg);
    let mut group = None;
    let mut groups = 0;
    let mut bars = Vec::new();
    loop {
        match reader.read_event().expect("well-formed XML") {
            Event::Eof => break,
            Event::Start(e) if e.name().as_ref() == b"g" => {
                group = Some(groups);
                groups += 1;
            }
            Event::End(e) if e.name().as_ref() == b"g" => group = None,
            Event::Empty(e) if e.name().as_ref() == b"line" => {
                let attr = |k: &[u8]| {
                    e.attributes().flatten().find(|a| a.key.as_ref() == k).map(|a| String::from_utf8(a.value.to_vec()).unwrap())
                };
                if attr(b"class").as_deref() == Some("errorbar") {
                    let y = |k: &[u8]| attr(k).unwrap().parse::<f64>().unwrap();
                    bars.push((group.expect("bars sit inside a series group"), y(b"y1"), y(b"y2")));
                }
            }
            _ => {}
        }
    }
    bars
}

#[test]
fn report_over_identical_households() {
    let config = format!("{TOY}\n[finetune]\nepochs = 0\n[simulation]\npv_peak_kw = 0.0\n");
    let dir = pretrained(&config);
    let p = dir.path();
    fs::copy(p.join("cohort/heldout-00.csv"), p.join("cohort/heldout-01.csv")).unwrap();
    ok(hemscast(p, &["report", "--config", "run.toml", "--out", "report"]));

    let rows = csv_rows(&p.join("report/cohort_report.csv"));
    assert_eq!(rows[0].join(","), "household,model_kind,training_days,mae_kw,cost_eur,no_battery_eur,perfect_foresight_eur,savings_pct");
    assert_eq!(rows.len(), 1 + 2 * 3 * 2);
    let mut cells: Vec<_> = rows[1..].iter().map(|r| (r[0].clone(), r[1].clone(), r[2].clone())).collect();
    cells.sort();
    cells.dedup();
    assert_eq!(cells.len(), 12);
    assert_eq!(csv_rows(&p.join("report/failures.csv")).len(), 1);

    for chart in ["mae.svg", "cost.svg"] {
        let bars = error_bars(&fs::read_to_string(p.join("report").join(chart)).unwrap());
        assert_eq!(bars.len(), 3 * 2, "{chart}");
        // series order: finetuned, local, persistence
        for (g, y1, y2) in bars {
            if g != 1 {
                assert_eq!(y1, y2, "{chart} series {g}");
            }
        }
    }
    fails_with(hemscast(p, &["report", "--config", "run.toml", "--out", "report"]), 7);
}

#[test]
fn report_without_heldout_households() {
    let config = TOY.replace("heldout_households = 2", "heldout_households = 0");
    let dir = pretrained(&config);
    let err = fails_with(hemscast(dir.path(), &["report", "--config", "run.toml", "--out", "report"]), 4);
    assert!(err.contains("nothing to report"), "{err}");
}

#[test]
fn report_needs_global_weights() {
    let dir = with_cohort(TOY);
    let err = fails_with(hemscast(dir.path(), &["report", "--config", "run.toml", "--out", "report"]), 4);
    assert!(err.contains("global_weights"), "{err}");
    assert!(!dir.path().join("report").exists());
}
