//! Exact output formats of every CSV the crate writes.

use constrained_flow::harness::{summarize, write_results_csv, write_summary_csv, ResultRow};
use constrained_flow::sampler::{write_samples_csv, write_trajectories_csv, Trajectory};
use constrained_flow::trainer::TrainHistory;
use constrained_flow::Constraint;
use ndarray::array;

fn row(method: &str, seed: u64, rate: f64) -> ResultRow {
    ResultRow {
        case_study: "cs1".into(),
        method: method.into(),
        seed,
        viol_rate_pct: rate,
        avg_viol: 0.25,
        mmd_e3: 3.5,
        wall_time_s: 0.0,
    }
}

fn written(f: impl FnOnce(&std::path::Path)) -> String {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.csv");
    f(&path);
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn results_csv() {
    let text = written(|p| write_results_csv(p, &[row("fm", 0, 12.5), row("lgvf", 1, 0.0)]).unwrap());
    assert_eq!(
        text,
        "case_study,method,seed,viol_rate_pct,avg_viol,mmd_e3,wall_time_s\n\
         cs1,fm,0,12.5,0.25,3.5,0.0\n\
         cs1,lgvf,1,0.0,0.25,3.5,0.0\n"
    );
    let empty = written(|p| write_results_csv(p, &[]).unwrap());
    assert_eq!(
        empty,
        "case_study,method,seed,viol_rate_pct,avg_viol,mmd_e3,wall_time_s\n"
    );
}

#[test]
fn summary_csv() {
    let rows = [row("fm", 0, 1.0), row("fm", 1, 3.0)];
    let text = written(|p| write_summary_csv(p, &summarize(&rows)).unwrap());
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("case_study,method,n,viol_rate_mean,viol_rate_std,avg_viol_mean,avg_viol_std,mmd_e3_mean,mmd_e3_std")
    );
    assert_eq!(lines.next(), Some("cs1,fm,2,2.0,1.4142135623730951,0.25,0.0,3.5,0.0"));
    assert_eq!(lines.next(), None);
}

#[test]
fn samples_csv() {
    let c = Constraint::half_space(vec![1.0, 0.0], 0.0).unwrap();
    let xs = array![[1.0, 2.0], [-0.5, 0.0]];
    let text = written(|p| write_samples_csv(p, xs.view(), &c).unwrap());
    assert_eq!(text, "sample_id,x_0,x_1,violation\n0,1,2,0\n1,-0.5,0,0.5\n");
}

#[test]
fn trajectories_csv() {
    let traj = Trajectory {
        times: vec![0.0, 0.5, 1.0],
        states: array![[0.0, 0.0], [0.5, 1.0], [1.0, 2.0]],
    };
    let text = written(|p| write_trajectories_csv(p, &[traj.clone(), traj]).unwrap());
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 7);
    assert_eq!(lines[0], "sample_id,k,t,x_0,x_1");
    assert_eq!(lines[1], "0,0,0,0,0");
    assert_eq!(lines[6], "1,2,1,1,2");
}

#[test]
fn history_csv() {
    let h = TrainHistory {
        fm: vec![2.0, 1.5],
        logic: vec![0.0, 0.125],
    };
    let text = written(|p| h.write_csv(p).unwrap());
    assert_eq!(text, "iter,loss_fm,loss_logic\n0,2,0\n1,1.5,0.125\n");
}
