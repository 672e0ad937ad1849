use flocking::config::{SimConfig, SweepSpec};
use flocking::sweep::{read_cells, run_sweep, SweepResult};

fn base(n: usize) -> SimConfig {
    let mut c = SimConfig::minimal(n, 2, 2.0, 1.0);
    c.seed = 99;
    c.t_max = 2000;
    c
}

#[test]
fn persisted_sweep_reloads_identically() {
    let spec = SweepSpec { alphas: vec![1.0, 2.5], v_primes: vec![0.1, 100.0], trials: 3 };
    let res = run_sweep(&base(80), &spec).unwrap();
    assert_eq!(res.cells.len(), 4);
    assert!(res.meta.failures.is_empty());

    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("sweep");
    res.persist(&stem).unwrap();
    assert_eq!(SweepResult::load(&stem).unwrap(), res);

    let csv = std::fs::read_to_string(stem.with_extension("csv")).unwrap();
    assert!(csv.starts_with("alpha_index,v_index,alpha,v_prime,trials,flock_count,frequency,mean_t_flock,failed\n"));
    assert_eq!(read_cells(csv.as_bytes()).unwrap(), res.cells);
}

#[test]
fn cells_do_not_depend_on_grid_extent() {
    let small = run_sweep(&base(60), &SweepSpec { alphas: vec![2.0], v_primes: vec![0.5], trials: 4 }).unwrap();
    let large =
        run_sweep(&base(60), &SweepSpec { alphas: vec![2.0, 3.0], v_primes: vec![0.5, 50.0], trials: 4 }).unwrap();
    assert_eq!(small.cells[0], large.cells[0]);
}

#[test]
fn svg_plot_written() {
    let res = run_sweep(&base(40), &SweepSpec { alphas: vec![2.0], v_primes: vec![1.0, 10.0], trials: 2 }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("plot.svg");
    res.emit_plot(&path).unwrap();
    let svg = std::fs::read_to_string(path).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
}
