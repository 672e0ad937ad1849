use std::f64::consts::PI;

use flocking::conditions::{adversarial_velocities, check_necessary, nearest_origin, AdversarialMode};
use flocking::config::{halfsplit_speed, SimConfig};
use flocking::dynamics::{max_weighted_degree, simulate, simulate_with_trajectory, SimOptions, StopReason};
use flocking::geometry::{radius_for_alpha, sample_positions};
use flocking::matrix::dist2;
use flocking::rng::derive_seed;
use flocking::{Kernel, RowMatrix, SwarmState};

fn reference_kernel(n: usize, alpha: f64) -> Kernel {
    Kernel::triangular(1.0 / (alpha * PI * (n as f64).ln()), radius_for_alpha(n, 2, alpha)).unwrap()
}

fn lone_separation(x: &RowMatrix, lone: usize) -> f64 {
    (0..x.nrows()).filter(|&j| j != lone).map(|j| dist2(x.row(lone), x.row(j)).sqrt()).fold(f64::INFINITY, f64::min)
}

/// Degree of `lone` after one step, from the step-1 positions.
fn degree_after_one_step(x1: &RowMatrix, lone: usize, k: &Kernel) -> f64 {
    (0..x1.nrows()).filter(|&j| j != lone).map(|j| k.eval(dist2(x1.row(lone), x1.row(j)).sqrt())).sum()
}

#[test]
fn vanishing_scale_separation_grows_until_radius() {
    let n = 600;
    let k = reference_kernel(n, 2.0);
    let r = k.radius();
    let nec = check_necessary(&k, n, 2).unwrap();
    let (kbar, v0) = (nec.kbar.unwrap(), nec.scale_vanishing.unwrap());
    let eps = 0.1;
    let mut qualifying = 0;
    for s in 0..20u64 {
        let x = sample_positions(n, 2, derive_seed(7, &[s])).points;
        let lone = nearest_origin(&x);
        let v = adversarial_velocities(&x, AdversarialMode::NearestOrigin, v0);
        let opts = SimOptions { t_max: 400, certificate_interval: 0, record_trajectory: true, ..Default::default() };
        let (rep, traj) = simulate_with_trajectory(SwarmState::new(x, v).unwrap(), &k, &opts).unwrap();
        if degree_after_one_step(&traj.x[1], lone, &k) > (1.0 - eps) * kbar {
            continue;
        }
        qualifying += 1;
        assert!(!rep.flocked, "seed {s}");
        let seps: Vec<f64> = traj.x.iter().map(|x| lone_separation(x, lone)).collect();
        let cross = seps.iter().position(|&d| d > r).unwrap_or_else(|| panic!("seed {s}: never beyond r"));
        for t in 1..=cross {
            assert!(seps[t] >= seps[t - 1], "seed {s}, t {t}: {} < {}", seps[t], seps[t - 1]);
        }
    }
    assert!(qualifying >= 10, "only {qualifying} of 20 instances meet the degree precondition");
}

#[test]
fn absurd_halfsplit_speed_never_flocks() {
    let n = 300;
    let r = radius_for_alpha(n, 2, 2.0);
    // speed 10 r n, far beyond any interaction distance after one step
    let v_prime = 10.0 * r * n as f64 / halfsplit_speed(1.0, n);
    let cfg = SimConfig::minimal(n, 2, 2.0, v_prime);
    for k in 0..10 {
        let inst = cfg.instance(cfg.trial_seed(k)).unwrap();
        let rep = simulate(inst.state, &inst.kernel, &inst.options).unwrap();
        assert!(!rep.flocked);
        assert_eq!(rep.stop, StopReason::Separated);
    }
}

#[test]
fn small_speed_flocks_in_connected_regime() {
    let mut cfg = SimConfig::minimal(300, 2, 3.0, 0.05);
    cfg.seed = 11;
    let mut flocked = 0;
    for k in 0..5 {
        let inst = cfg.instance(cfg.trial_seed(k)).unwrap();
        flocked += simulate(inst.state, &inst.kernel, &inst.options).unwrap().flocked as usize;
    }
    assert!(flocked >= 4, "{flocked}/5");
}

#[test]
fn shifted_kernel_degree_bounds_unshifted() {
    let n = 400;
    let k = reference_kernel(n, 2.0);
    let x = sample_positions(n, 2, 3).points;
    let base = max_weighted_degree(&x, &k);
    let mut prev = base;
    for delta in [0.1, 0.3, 0.6] {
        let d = max_weighted_degree(&x, &k.shifted(delta).unwrap());
        assert!(d >= prev, "δ = {delta}");
        prev = d;
    }
}

#[test]
fn trajectory_replays_deterministically() {
    let cfg = SimConfig::minimal(150, 2, 2.0, 1.0);
    let run = || {
        let inst = cfg.instance(cfg.trial_seed(0)).unwrap();
        let opts = SimOptions { t_max: 200, record_trajectory: true, ..inst.options };
        simulate_with_trajectory(inst.state, &inst.kernel, &opts).unwrap()
    };
    let (a, ta) = run();
    let (b, tb) = run();
    assert_eq!(a, b);
    assert_eq!(ta.x.last().unwrap().as_slice(), tb.x.last().unwrap().as_slice());
}
