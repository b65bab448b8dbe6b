use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use hemscast_core::datagen::{
    format_timestamp, read_cohort, read_csv, split_dataset, synthetic_cohort, write_cohort, HouseholdRole, ScalerParams,
};
use hemscast_core::forecaster::{
    finetune, init_model, load_weights, pooled_pretrain_windows, save_weights, split_windows, train, write_history_csv,
    ModelWeights, TrainHistory,
};
use hemscast_core::mpc::step_cost;
use hemscast_core::seed::derive_seed;
use hemscast_core::simulator::{
    control_inputs, evaluate_cohort, no_battery_cost, perfect_foresight, simulate_mpc, test_mae, write_log_csv,
    write_report_csv, CohortProtocol, CohortReport, ControlSetup, DemandForecaster, ModelForecaster, ModelKind,
    OracleForecaster, PersistenceForecaster, SimulationResult, StepRecord,
};
use hemscast_core::timeseries::{QuarterSeries, Tariff, Unit, DEFAULT_INJECTION_RATIO, DT_HOURS, STEPS_PER_DAY};

use crate::config::{Needs, RunConfig};
use crate::error::{CliError, ErrorKind};
use crate::svg::{Chart, Point, Series};

pub const GLOBAL_WEIGHTS_FILE: &str = "global.hmw";
pub const PRETRAIN_HISTORY_FILE: &str = "pretrain_history.csv";
pub const REPORT_FILE: &str = "cohort_report.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const FAILURES_FILE: &str = "failures.csv";
pub const MAE_CHART_FILE: &str = "mae.svg";
pub const COST_CHART_FILE: &str = "cost.svg";

/// What a household weight file was trained on, written next to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsInfo {
    pub household: String,
    pub model_kind: ModelKind,
    pub training_days: usize,
    pub train_start: String,
    pub validation_start: String,
    pub test_start: String,
    pub test_days: usize,
    pub scaler: ScalerParams,
    pub test_mae_kw: f64,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
}

/// Base name of the files `finetune` and `train-local` write.
pub fn weights_stem(kind: ModelKind, household: &str, training_days: usize) -> String {
    format!("{kind}-{household}-{training_days}")
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::new(ErrorKind::Io, e).context(format!("{}", path.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

/// Refuses to overwrite any of `files` unless `force`, then creates `out`.
fn claim_outputs(out: &Path, files: &[PathBuf], force: bool) -> Result<(), CliError> {
    if !force {
        if let Some(f) = files.iter().find(|f| f.exists()) {
            return Err(CliError::msg(
                ErrorKind::OutputExists,
                format!("{} already exists; pass --force to overwrite", f.display()),
            ));
        }
    }
    fs::create_dir_all(out).map_err(|e| io_err(out, e))
}

fn cohort_dir(cfg: &RunConfig) -> &Path {
    cfg.data.cohort_dir.as_deref().expect("validated")
}

fn household<'a>(cohort: &'a BTreeMap<String, QuarterSeries>, id: &str) -> Result<&'a QuarterSeries, CliError> {
    cohort.get(id).ok_or_else(|| CliError::msg(ErrorKind::Data, format!("household {id} is not in the cohort")))
}

fn load_global(cfg: &RunConfig) -> Result<ModelWeights, CliError> {
    let path = cfg.paths.global_weights.as_deref().expect("validated");
    load_weights(path).map_err(|e| CliError::from(e).context(format!("loading {}", path.display())))
}

pub fn gen_data(cfg: &RunConfig, out: &Path, force: bool) -> Result<(), CliError> {
    cfg.validate(Needs { cohort: false, global_weights: false, prices: false })?;
    let nonempty = out.is_dir() && fs::read_dir(out).map_err(|e| io_err(out, e))?.next().is_some();
    if (nonempty || out.is_file()) && !force {
        return Err(CliError::msg(
            ErrorKind::OutputExists,
            format!("{} is not empty; pass --force to overwrite", out.display()),
        ));
    }
    let (manifest, cohort) = synthetic_cohort(&cfg.cohort_spec())?;
    write_cohort(out, &manifest, &cohort)?;
    println!(
        "wrote {} pretraining and {} held-out households, {} days each, to {}",
        manifest.ids(HouseholdRole::Pretrain).len(),
        manifest.ids(HouseholdRole::Heldout).len(),
        manifest.days,
        out.display()
    );
    Ok(())
}

fn print_history(name: &str, history: &TrainHistory) {
    for e in &history.epochs {
        println!("{name} epoch {:>3}  train {:.6}  val {:.6}  lr {:.6}", e.epoch, e.train_loss, e.val_loss, e.lr);
    }
    match history.best_epoch {
        Some(b) => println!("{name}: kept epoch {b}{}", if history.stopped_early { " (stopped early)" } else { "" }),
        None => println!("{name}: kept the starting weights"),
    }
}

pub fn pretrain(cfg: &RunConfig, out: &Path, force: bool) -> Result<(), CliError> {
    cfg.validate(Needs { cohort: true, global_weights: false, prices: false })?;
    let weights_path = out.join(GLOBAL_WEIGHTS_FILE);
    let history_path = out.join(PRETRAIN_HISTORY_FILE);
    let (manifest, cohort) = read_cohort(cohort_dir(cfg))?;
    let ids = manifest.ids(HouseholdRole::Pretrain);
    if ids.is_empty() {
        return Err(CliError::msg(ErrorKind::Data, "the cohort has no pretraining households"));
    }
    let series = ids.iter().map(|id| household(&cohort, id)).collect::<Result<Vec<_>, _>>()?;
    let (train_set, val_set) = pooled_pretrain_windows(series, &cfg.model, cfg.evaluation.window_stride)?;
    claim_outputs(out, &[weights_path.clone(), history_path.clone()], force)?;
    println!("pretraining on {} households: {} training and {} validation windows", ids.len(), train_set.len(), val_set.len());
    let init = init_model(&cfg.model, derive_seed(cfg.seed, "pretrain/init"))?;
    let tcfg = cfg.pretrain.with_seed(derive_seed(cfg.seed, "pretrain/train"));
    let (weights, history) = train(&init, &train_set, &val_set, &tcfg)?;
    print_history("pretrain", &history);
    save_weights(&weights, &weights_path)?;
    write_history_csv(&history, &history_path)?;
    println!("wrote {}", weights_path.display());
    Ok(())
}

pub fn train_household(
    cfg: &RunConfig,
    out: &Path,
    force: bool,
    kind: ModelKind,
    id: &str,
    training_days: usize,
) -> Result<(), CliError> {
    let global = kind == ModelKind::Finetuned;
    cfg.validate(Needs { cohort: true, global_weights: global, prices: false })?;
    if kind == ModelKind::Persistence {
        return Err(CliError::msg(ErrorKind::Config, "persistence has no weights to train"));
    }
    if global {
        cfg.check_finetune_budget()?;
    }
    let stem = weights_stem(kind, id, training_days);
    let paths = [out.join(format!("{stem}.hmw")), out.join(format!("{stem}.history.csv")), out.join(format!("{stem}.json"))];
    let (_, cohort) = read_cohort(cohort_dir(cfg))?;
    let series = household(&cohort, id)?;
    let global_weights = if global { Some(load_global(cfg)?) } else { None };
    let model = global_weights.as_ref().map_or(&cfg.model, |g| &g.config);
    let spec = cfg.split.spec(training_days);
    let split = split_dataset(series, &spec)?;
    let windows = split_windows(series, &spec, model, cfg.evaluation.window_stride)?;
    claim_outputs(out, &paths, force)?;

    let cell = format!("{id}/{training_days}");
    let (weights, history) = match &global_weights {
        Some(g) => {
            let fcfg = cfg.finetune_section().with_seed(derive_seed(cfg.seed, &format!("finetune/{cell}")));
            finetune(g, &windows.train, &windows.val, &fcfg, &cfg.pretrain.with_seed(0))?
        }
        None => {
            let scratch = init_model(model, derive_seed(cfg.seed, &format!("local-init/{cell}")))?;
            let lcfg = cfg.local_section().with_seed(derive_seed(cfg.seed, &format!("local/{cell}")));
            train(&scratch, &windows.train, &windows.val, &lcfg)?
        }
    };
    print_history(kind.as_str(), &history);
    let mae = test_mae(&weights, &windows)?;
    let info = WeightsInfo {
        household: id.to_string(),
        model_kind: kind,
        training_days,
        train_start: format_timestamp(split.train.start()),
        validation_start: format_timestamp(split.validation.start()),
        test_start: format_timestamp(split.test.start()),
        test_days: spec.test_days(),
        scaler: windows.scaler,
        test_mae_kw: mae,
        epochs_run: history.epochs.len(),
        best_epoch: history.best_epoch,
    };
    save_weights(&weights, &paths[0])?;
    write_history_csv(&history, &paths[1])?;
    let json = serde_json::to_string_pretty(&info).map_err(|e| CliError::new(ErrorKind::Io, e))?;
    write_file(&paths[2], json + "\n")?;
    println!("{kind} {id} ({training_days} days): test MAE {mae:.4} kW, wrote {}", paths[0].display());
    Ok(())
}

/// Forecast source for `simulate`.
#[derive(Debug, Clone, PartialEq)]
pub enum SimSource {
    Weights(PathBuf),
    Oracle,
    Persistence,
    NoBattery,
}

impl SimSource {
    fn label(&self) -> String {
        match self {
            SimSource::Weights(p) => p.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned()),
            SimSource::Oracle => "oracle".into(),
            SimSource::Persistence => "persistence".into(),
            SimSource::NoBattery => "no-battery".into(),
        }
    }
}

fn read_info(weights: &Path) -> Result<WeightsInfo, CliError> {
    let path = weights.with_extension("json");
    let text = fs::read_to_string(&path).map_err(|e| {
        CliError::new(ErrorKind::Data, e).context(format!("reading {} (written alongside the weights)", path.display()))
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::new(ErrorKind::Data, e).context(format!("{}", path.display())))
}

fn configured_tariff(cfg: &RunConfig) -> Result<Option<Tariff>, CliError> {
    match &cfg.simulation.prices_csv {
        Some(p) => {
            let con = read_csv(p, Unit::EurPerKwh)?;
            Ok(Some(Tariff::from_consumption(con, DEFAULT_INJECTION_RATIO)?))
        }
        None => Ok(None),
    }
}

fn control_setup(cfg: &RunConfig) -> Result<ControlSetup, CliError> {
    Ok(ControlSetup {
        config: cfg.simulation.config(),
        pv_peak_kw: cfg.simulation.pv_peak_kw,
        tariff: configured_tariff(cfg)?,
    })
}

/// The battery left idle, as a step log.
fn idle_result(actual: &QuarterSeries, pv: &QuarterSeries, tariff: &Tariff, e_init: f64) -> SimulationResult {
    let records: Vec<StepRecord> = (0..actual.len())
        .map(|t| {
            let d = actual.values()[t];
            let grid = d + pv.values()[t];
            StepRecord {
                timestamp: actual.timestamp(t),
                forecast_demand_kw: d,
                actual_demand_kw: d,
                pv_kw: pv.values()[t],
                u_kw: 0.0,
                grid_kw: grid,
                energy_kwh: e_init,
                step_cost_eur: step_cost(tariff.lambda_con.values()[t], tariff.lambda_inj.values()[t], grid, DT_HOURS),
            }
        })
        .collect();
    let total_cost = records.iter().map(|r| r.step_cost_eur).sum();
    SimulationResult { records, initial_energy: e_init, total_cost }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn simulate(cfg: &RunConfig, out: &Path, force: bool, id: &str, source: &SimSource) -> Result<(), CliError> {
    cfg.validate(Needs { cohort: true, global_weights: false, prices: true })?;
    if let SimSource::Weights(p) = source {
        if !p.exists() {
            return Err(CliError::msg(ErrorKind::Data, format!("weights {} do not exist", p.display())));
        }
    }
    let label = source.label();
    let log_path = out.join(format!("sim-{id}-{label}.csv"));
    let summary_path = out.join(format!("sim-{id}-{label}-summary.csv"));
    let (_, cohort) = read_cohort(cohort_dir(cfg))?;
    let series = household(&cohort, id)?;
    let model = match source {
        SimSource::Weights(p) => {
            let info = read_info(p)?;
            if info.household != id {
                return Err(CliError::msg(
                    ErrorKind::Config,
                    format!("{} was trained for household {}, not {id}", p.display(), info.household),
                ));
            }
            Some((load_weights(p)?, info))
        }
        _ => None,
    };
    let training_days = model.as_ref().map_or(cfg.split.training_days, |(_, info)| info.training_days);
    let spec = cfg.split.spec(training_days);
    let split = split_dataset(series, &spec)?;
    let from = (split.train_first_day + spec.training_days + spec.validation_days) * STEPS_PER_DAY;
    let sim = cfg.simulation.config();
    let steps = sim.days * STEPS_PER_DAY;
    let setup = control_setup(cfg)?;
    let (pv, tariff) = control_inputs(&setup, series, id, from, steps, cfg.seed)?;
    let actual = series.slice(from..from + steps)?;
    claim_outputs(out, &[log_path.clone(), summary_path.clone()], force)?;

    let idle = no_battery_cost(&actual, &pv, &tariff)?;
    let best = perfect_foresight(series, &pv, &tariff, &sim)?.total_cost;
    let result = match (source, &model) {
        (SimSource::NoBattery, _) => idle_result(&actual, &pv, &tariff, sim.battery.e_init),
        (SimSource::Oracle, _) => simulate_mpc(series, &pv, &tariff, &OracleForecaster, &sim)?,
        (SimSource::Persistence, _) => simulate_mpc(series, &pv, &tariff, &PersistenceForecaster, &sim)?,
        (SimSource::Weights(_), Some((weights, info))) => {
            let f = ModelForecaster { weights, scaler: info.scaler, quantile: sim.point_quantile };
            simulate_mpc(series, &pv, &tariff, &f as &dyn DemandForecaster, &sim)?
        }
        (SimSource::Weights(_), None) => unreachable!("weights are loaded above"),
    };
    let cost = if *source == SimSource::NoBattery { idle } else { result.total_cost };
    write_log_csv(&log_path, &result)?;
    let savings = (idle > 0.0).then(|| 100.0 * (idle - cost) / idle);
    let summary = format!(
        "household,forecaster,days,records,cost_eur,no_battery_eur,perfect_foresight_eur,savings_pct\n{id},{label},{},{},{cost},{idle},{best},{}\n",
        sim.days,
        result.records.len(),
        fmt_opt(savings)
    );
    write_file(&summary_path, summary)?;
    println!(
        "{id} {label}: {} steps, cost {cost:.4} EUR, no battery {idle:.4} EUR, perfect foresight {best:.4} EUR",
        result.records.len()
    );
    Ok(())
}

fn chart(report: &CohortReport, title: &str, y_label: &str, value: impl Fn(&hemscast_core::simulator::CohortSummary) -> Option<(f64, f64)>) -> Chart {
    let summaries = report.summaries();
    let series = ModelKind::ALL
        .iter()
        .filter_map(|&kind| {
            let points: Vec<Point> = summaries
                .iter()
                .filter(|s| s.model_kind == kind)
                .filter_map(|s| value(s).map(|(mean, std)| Point { x: s.training_days as f64, mean, std }))
                .collect();
            (!points.is_empty()).then(|| Series { label: kind.to_string(), points })
        })
        .collect();
    Chart { title: title.into(), x_label: "training days".into(), y_label: y_label.into(), series }
}

fn summary_csv(report: &CohortReport) -> String {
    let mut out = String::from("model_kind,training_days,n,mae_mean_kw,mae_std_kw,cost_mean_eur,cost_std_eur,savings_mean_pct,savings_std_pct\n");
    for s in report.summaries() {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            s.model_kind,
            s.training_days,
            s.mae_kw.n,
            s.mae_kw.mean,
            s.mae_kw.std,
            fmt_opt(s.cost_eur.map(|c| c.mean)),
            fmt_opt(s.cost_eur.map(|c| c.std)),
            fmt_opt(s.savings_pct.map(|c| c.mean)),
            fmt_opt(s.savings_pct.map(|c| c.std)),
        ));
    }
    out
}

fn failures_csv(report: &CohortReport) -> String {
    let mut out = String::from("household,training_days,error\n");
    for f in &report.failures {
        out.push_str(&format!("{},{},\"{}\"\n", f.household, f.training_days, f.error.replace('"', "\"\"")));
    }
    out
}

pub fn report(cfg: &RunConfig, out: &Path, force: bool) -> Result<(), CliError> {
    cfg.validate(Needs { cohort: true, global_weights: true, prices: cfg.evaluation.control })?;
    cfg.check_finetune_budget()?;
    let files: Vec<PathBuf> =
        [REPORT_FILE, SUMMARY_FILE, FAILURES_FILE, MAE_CHART_FILE, COST_CHART_FILE].iter().map(|f| out.join(f)).collect();
    let (manifest, cohort) = read_cohort(cohort_dir(cfg))?;
    let heldout: BTreeMap<String, QuarterSeries> = manifest
        .ids(HouseholdRole::Heldout)
        .into_iter()
        .map(|id| household(&cohort, &id).map(|s| (id, s.clone())))
        .collect::<Result<_, _>>()?;
    if heldout.is_empty() {
        return Err(CliError::msg(ErrorKind::Data, "nothing to report: the cohort has no held-out households"));
    }
    let global = load_global(cfg)?;
    let protocol = CohortProtocol {
        sizes: cfg.evaluation.sizes.clone(),
        split: cfg.split.spec(cfg.split.training_days),
        pretrain: cfg.pretrain.with_seed(0),
        finetune: cfg.finetune_section().with_seed(0),
        local: cfg.local_section().with_seed(0),
        window_stride: cfg.evaluation.window_stride,
        control: if cfg.evaluation.control { Some(control_setup(cfg)?) } else { None },
        seed: cfg.seed,
    };
    claim_outputs(out, &files, force)?;
    println!("evaluating {} households x {} training sizes", heldout.len(), protocol.sizes.len());
    let report = evaluate_cohort(&heldout, &global, &protocol)?;
    for f in &report.failures {
        eprintln!("warning: {} with {} training days failed: {}", f.household, f.training_days, f.error);
    }
    write_file(&files[2], failures_csv(&report))?;
    if report.rows.is_empty() {
        return Err(CliError::msg(
            ErrorKind::Data,
            format!("nothing to report: all {} evaluation cells failed (see {})", report.failures.len(), files[2].display()),
        ));
    }
    write_report_csv(&files[0], &report)?;
    write_file(&files[1], summary_csv(&report))?;
    let mae = chart(&report, "Test MAE by training size", "MAE (kW)", |s| Some((s.mae_kw.mean, s.mae_kw.std)));
    write_file(&files[3], mae.render())?;
    if cfg.evaluation.control {
        let cost = chart(&report, "Realized cost by training size", "cost (EUR)", |s| s.cost_eur.map(|c| (c.mean, c.std)));
        write_file(&files[4], cost.render())?;
    } else if files[4].exists() {
        fs::remove_file(&files[4]).map_err(|e| io_err(&files[4], e))?;
    }
    for s in report.summaries() {
        println!(
            "{:<12} {:>3} days  MAE {:.4} +- {:.4} kW{}",
            s.model_kind,
            s.training_days,
            s.mae_kw.mean,
            s.mae_kw.std,
            s.cost_eur.map(|c| format!("  cost {:.3} +- {:.3} EUR", c.mean, c.std)).unwrap_or_default()
        );
    }
    println!("wrote {} rows to {}", report.rows.len(), files[0].display());
    Ok(())
}
