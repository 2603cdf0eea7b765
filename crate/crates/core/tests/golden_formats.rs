//! Every on-disk format against a checked-in file. Regenerate with
//! `UPDATE_GOLDEN=1 cargo test --test golden_formats` after an intended
//! format change.

use std::path::PathBuf;

use nalgebra::dvector;

use cbf_learn::cbf::{HandcraftedCbf, LearnedCbf};
use cbf_learn::ddn::init_network;
use cbf_learn::learning::{Dataset, EpochStats, LossTerms, SafeSample, SampleSource, UnsafeSample};
use cbf_learn::persistence::{
    contour_to_csv, dataset_to_csv, load_dataset, load_trajectory, parse_weights, read_metrics, trajectory_to_csv,
    weights_to_string, MetricsWriter,
};
use cbf_learn::sim::{evaluate_contour, simulate_filtered, GridSpec};
use cbf_learn::task::{ExperimentConfig, SystemId, Task};

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name)
}

fn check(name: &str, actual: &str) {
    let path = golden(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, expected, "{name} drifted from its golden file");
}

#[test]
fn weights_file() {
    let net = init_network(1, &[2, 3, 1]).unwrap();
    let text = weights_to_string(&net);
    check("weights.txt", &text);
    let back = parse_weights(&text, &golden("weights.txt")).unwrap();
    assert_eq!(back, net);
}

#[test]
fn trajectory_csv() {
    let task = Task::from_system(SystemId::Integrator2d).unwrap();
    let cbf = LearnedCbf::hand_only(task.hand);
    let t = simulate_filtered(&task, &cbf, task.training_alpha(), &task.initial_state(-1.0), 4).unwrap();
    check("trajectory.csv", &trajectory_to_csv(&t));
    assert_eq!(load_trajectory(&golden("trajectory.csv")).unwrap().rows, t.rows);
}

#[test]
fn contour_csv() {
    let cbf = LearnedCbf::hand_only(HandcraftedCbf::IntegratorVelocity { cap: 2.0 });
    let g = evaluate_contour(&cbf, &["x", "xdot"], &GridSpec::integrator_default(3, 2)).unwrap();
    check("contour.csv", &contour_to_csv(&g));
}

#[test]
fn dataset_csv() {
    let mut d = Dataset::new(10);
    d.push_safe(SafeSample {
        x: dvector![-1.5, 0.25],
        u: dvector![0.1],
        source: SampleSource::Real,
    });
    d.push_unsafe(UnsafeSample {
        x: dvector![0.0, 3.5],
        source: SampleSource::CbfQpRollout,
    });
    d.push_unsafe(UnsafeSample {
        x: dvector![-2.0, 3.125],
        source: SampleSource::PerfRollout,
    });
    let text = dataset_to_csv(&d, &["x", "xdot"]);
    check("dataset.csv", &text);
    let back = load_dataset(&golden("dataset.csv"), 10).unwrap();
    assert_eq!(dataset_to_csv(&back, &["x", "xdot"]), text);
}

#[test]
fn metrics_ndjson() {
    let rec = EpochStats {
        epoch: 3,
        x_init: vec![-12.5, 0.0],
        loss: LossTerms {
            safe: 0.25,
            unsafe_: 0.0,
            gradient: 0.125,
            regularizer: 1.5,
            total: 1.875,
        },
        minibatches: 8,
        n_safe: 2000,
        n_unsafe: 40,
        new_unsafe: 12,
        violations: 0,
        max_constraint: -0.015625,
        mpc_steps: 2,
        cbf_qp_rollouts: 50,
        perf_rollouts: 1,
        mpc_mean_solve_s: 0.0005,
        wall_time_s: 1.25,
    };
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.ndjson");
    let mut w = MetricsWriter::create(&p).unwrap();
    w.write(&rec).unwrap();
    drop(w);
    check("metrics.ndjson", &std::fs::read_to_string(&p).unwrap());
    assert_eq!(
        read_metrics::<EpochStats>(&golden("metrics.ndjson")).unwrap(),
        vec![rec]
    );
}

#[test]
fn config_toml() {
    for sys in [SystemId::Integrator2d, SystemId::BallOnBeam] {
        let cfg = ExperimentConfig::defaults(sys);
        let text = cfg.to_toml_string().unwrap();
        check(&format!("config-{sys}.toml"), &text);
        assert_eq!(
            ExperimentConfig::load(&golden(&format!("config-{sys}.toml"))).unwrap(),
            cfg
        );
    }
}
