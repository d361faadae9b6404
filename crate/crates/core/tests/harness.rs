use std::fs;

use gainlab::harness::{
    aggregate_curves, curve_rows, emit_outputs, read_curves_csv, run_cells, run_figure_suite, select_lr, stats,
    train, Arm, ExperimentConfig, SuiteResults,
};
use gainlab::learning::Rule;
use gainlab::tasks::{TaskConfig, TaskKind};

fn tiny(task: TaskKind) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset("smoke").unwrap();
    cfg.task = TaskConfig::defaults(task);
    cfg.workers = 1;
    cfg
}

const EPROP: Arm = Arm::plain(Rule::Eprop);

#[test]
fn one_iteration_at_zero_lr_keeps_initialization() {
    let mut cfg = tiny(TaskKind::Romo);
    cfg.iters = 1;
    for rule in [Rule::Bptt, Rule::Eprop] {
        let out = train(&cfg, Arm::plain(rule), 1.0, 0.0, 3).unwrap();
        assert_eq!(out.curve.len(), 1);
        assert_eq!(out.params, out.initial);
    }
}

#[test]
fn identical_runs_are_bit_identical() {
    let cfg = tiny(TaskKind::TwoAf);
    let a = train(&cfg, EPROP, 1.0, 1e-3, 9).unwrap();
    let b = train(&cfg, EPROP, 1.0, 1e-3, 9).unwrap();
    let bits = |c: &[f64]| c.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.curve), bits(&b.curve));
    assert_eq!(a.params, b.params);
}

#[test]
fn zero_flossing_iterations_match_plain_eprop() {
    let mut cfg = tiny(TaskKind::Dms);
    cfg.floss.as_mut().unwrap().pretrain_iters = 0;
    let plain = train(&cfg, EPROP, 1.5, 1e-3, 4).unwrap();
    let floss = train(&cfg, Arm { rule: Rule::Eprop, floss: true }, 1.5, 1e-3, 4).unwrap();
    assert_eq!(
        plain.curve.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        floss.curve.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    assert_eq!(plain.params, floss.params);
}

#[test]
fn flossing_changes_the_starting_point() {
    let cfg = tiny(TaskKind::Romo);
    let out = train(&cfg, Arm { rule: Rule::Eprop, floss: true }, 1.5, 1e-3, 4).unwrap();
    assert_eq!(out.floss_history.len(), 3);
    assert_ne!(out.pretrained.unwrap(), out.initial);
}

#[test]
fn select_lr_contracts() {
    let mut cfg = tiny(TaskKind::Romo);
    cfg.lrs = vec![3e-4];
    assert_eq!(select_lr(&cfg, EPROP, 1.0).unwrap().lr, Some(3e-4));

    cfg.lrs = vec![1e-4, 3e-4, 1e-3, 3e-3];
    let sel = select_lr(&cfg, EPROP, 1.0).unwrap();
    assert!(cfg.lrs.contains(&sel.lr.unwrap()));
    assert_eq!(sel.scores.len(), 4);

    // The score is independent of lr when lr = 0, so every entry ties.
    cfg.lrs = vec![0.0, 0.0];
    assert_eq!(select_lr(&cfg, EPROP, 1.0).unwrap().lr, Some(0.0));
}

#[test]
fn curves_csv_has_one_row_per_iteration_and_cell() {
    let mut cfg = tiny(TaskKind::Romo);
    cfg.rules = vec![Rule::Eprop];
    cfg.floss = None;
    cfg.gains = vec![0.5, 1.0];
    cfg.seeds = vec![1, 2];
    cfg.iters = 100;
    let results = run_figure_suite(&cfg).unwrap();
    assert!(!results.is_partial(), "{:?}", results.failures);
    let dir = tempfile::tempdir().unwrap();
    emit_outputs(&results, dir.path()).unwrap();
    let rows = read_curves_csv(fs::File::open(dir.path().join("curves.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 400);

    // Round trip and recomputation from the per-seed rows.
    let aggs = aggregate_curves(&rows);
    assert_eq!(aggs, aggregate_curves(&curve_rows(&results)));
    let mut rd = csv::Reader::from_path(dir.path().join("aggregates.csv")).unwrap();
    let written: Vec<gainlab::harness::AggregateRow> = rd.deserialize().map(Result::unwrap).collect();
    assert_eq!(written.len(), 200);
    for a in &written {
        let losses: Vec<f64> = rows
            .iter()
            .filter(|r| r.gain == a.gain && r.iteration == a.iteration && r.rule == a.rule)
            .map(|r| r.loss)
            .collect();
        assert_eq!(losses.len(), 2);
        assert!((a.mean - stats::mean(&losses)).abs() <= 1e-12);
        assert!((a.std - stats::std_dev(&losses)).abs() <= 1e-12);
    }
}

#[test]
fn smoke_config_writes_consistent_files() {
    let mut cfg = tiny(TaskKind::Romo);
    cfg.gains = vec![1.0];
    cfg.seeds = vec![1];
    cfg.iters = 10;
    let results = run_figure_suite(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_outputs(&results, dir.path()).unwrap();
    for f in ["curves.csv", "lyapunov.csv", "floss.csv", "summary.csv", "config.json", "manifest.json", "lyapunov.svg"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    // A single seed has no spread to aggregate.
    assert!(!dir.path().join("aggregates.csv").exists());
    let lines = |f: &str| fs::read_to_string(dir.path().join(f)).unwrap().lines().count();
    let arms = results.config.arms().len();
    assert_eq!(lines("curves.csv"), 1 + arms * 10);
    assert_eq!(lines("summary.csv"), 1 + arms);
    // before + after for every arm, plus the post-flossing phase.
    assert_eq!(lines("lyapunov.csv"), 1 + 2 * arms + 1);
    assert_eq!(lines("floss.csv"), 1 + 3);
    let config: ExperimentConfig =
        serde_json::from_str(&fs::read_to_string(dir.path().join("config.json")).unwrap()).unwrap();
    assert_eq!(config, cfg);
}

#[test]
fn empty_results_give_header_only_files() {
    let mut cfg = tiny(TaskKind::Romo);
    cfg.seeds = vec![1, 2];
    let dir = tempfile::tempdir().unwrap();
    emit_outputs(&SuiteResults::empty(cfg), dir.path()).unwrap();
    for f in ["curves.csv", "lyapunov.csv", "floss.csv", "summary.csv", "lr_selection.csv", "aggregates.csv"] {
        let text = fs::read_to_string(dir.path().join(f)).unwrap();
        assert_eq!(text.lines().count(), 1, "{f}: {text:?}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["cells"], 0);
    assert_eq!(manifest["partial"], false);
}

#[test]
fn unwritable_directory_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let cfg = tiny(TaskKind::Romo);
    assert!(emit_outputs(&SuiteResults::empty(cfg), &blocker.join("out")).is_err());
}

#[test]
fn exploding_runs_are_recorded_not_fatal() {
    let mut cfg = tiny(TaskKind::Romo);
    cfg.rules = vec![Rule::Bptt];
    cfg.floss = None;
    cfg.gains = vec![1.0];
    cfg.seeds = vec![1];
    cfg.iters = 20;
    // A huge clip threshold and learning rate push the weights to overflow.
    cfg.clip_norm = f64::MAX;
    let results = run_cells(&cfg, &[(Arm::plain(Rule::Bptt), 1.0, 1e300, 1), (Arm::plain(Rule::Bptt), 1.0, 1e-3, 1)]).unwrap();
    assert!(results.cells[0].failed());
    assert_eq!(results.cells[0].curve.len(), 20);
    assert!(results.cells[0].curve.last().unwrap().is_nan());
    assert!(!results.cells[1].failed());
    assert_eq!(results.failures.len(), 1);
    let dir = tempfile::tempdir().unwrap();
    emit_outputs(&results, dir.path()).unwrap();
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["partial"], true);
    assert_eq!(manifest["failed_cells"], 1);
}

#[test]
fn smoke_suite_covers_every_combination() {
    let start = std::time::Instant::now();
    for task in TaskKind::ALL {
        let cfg = tiny(task);
        let results = run_figure_suite(&cfg).unwrap();
        assert!(!results.is_partial(), "{task}: {:?}", results.failures);
        let arms: Vec<Arm> = results.cells.iter().map(|c| c.arm).collect();
        for arm in [Arm::plain(Rule::Bptt), EPROP, Arm { rule: Rule::Eprop, floss: true }] {
            assert!(arms.contains(&arm), "{task}: {arm} missing");
        }
        assert!(results.cells.iter().all(|c| c.lyap_before.is_some() && c.lyap_after.is_some()));
    }
    assert!(start.elapsed().as_secs() <= 60);
}

#[test]
fn eprop_training_reduces_loss() {
    let mut cfg = ExperimentConfig::desk(TaskKind::Romo);
    cfg.iters = 2000;
    let improved = (1..=5u64)
        .filter(|&seed| {
            let out = train(&cfg, EPROP, 1.0, 1e-3, seed).unwrap();
            out.curve[cfg.iters - 1] < out.curve[0]
        })
        .count();
    assert!(improved >= 3, "{improved}/5 seeds improved");
}
