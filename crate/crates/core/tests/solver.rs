//! End-to-end behaviour of the splitting solver and the gradient baseline.

use snapmatch::baseline::{solve_gd, BaselineOptions};
use snapmatch::dynamics::{total_cost, TimeGrid};
use snapmatch::osa::{
    disparity_prox, dr_iterate, quadratic_prox, solve, ConsensusState, DouglasRachford, NewtonOptions, SolverOptions,
    SplitPoint, Termination,
};
use snapmatch::strain::strain_intensity;
use snapmatch::surface::SurfaceGrid;
use snapmatch::synth::{generate, sphere_mesh, BaseShape, Deformation, DeformationKind, SyntheticSpec};
use snapmatch::{ProblemSettings, SnapshotProblem};

fn unstopped(max_iterations: usize) -> SolverOptions {
    SolverOptions {
        max_iterations,
        stop_factor: 0.0,
        gap_tol: 0.0,
        stag_tol: 0.0,
        record_timing: false,
        ..Default::default()
    }
}

fn spec(n: usize, l: usize, kind: DeformationKind, magnitude: f64) -> SyntheticSpec {
    SyntheticSpec {
        base_shape: BaseShape::Sphere,
        n_points: n,
        m_points: n,
        n_snapshots: l,
        deformation: Deformation { kind, magnitude },
        noise: 0.0,
        seed: 7,
    }
}

fn matched_problem(n: usize, l: usize) -> SnapshotProblem {
    let (p, _) = generate(&spec(n, l, DeformationKind::Translation, 0.0)).unwrap();
    p
}

#[test]
fn already_matched_targets_stop_immediately() {
    let p = matched_problem(20, 2);
    let r = solve(&p, &SolverOptions::default()).unwrap();
    assert!(r.history.len() <= 2, "{} iterations", r.history.len());
    assert_eq!(r.termination, Termination::HausdorffVsMesh);
    assert!(r.controls.norm() <= 1e-12, "controls {:e}", r.controls.norm());
    assert!(r.history.last().unwrap().disp <= 1e-12);
}

#[test]
fn zero_iterations_returns_the_start() {
    let (p, _) = generate(&spec(20, 2, DeformationKind::SmoothBump, 0.3)).unwrap();
    let r = solve(&p, &SolverOptions { max_iterations: 0, ..Default::default() }).unwrap();
    assert!(r.history.is_empty());
    assert_eq!(r.termination, Termination::MaxIterations);
    assert_eq!(r.controls.norm(), 0.0);
    for x in &r.trajectory.states {
        assert_eq!(x.points(), p.initial.points());
    }
}

#[test]
fn consensus_fixed_point_is_kept() {
    let p = matched_problem(12, 2);
    let rest = SplitPoint::at_rest(&p.initial, 2);
    let state = ConsensusState {
        z: rest.clone(),
        z_tilde: rest.clone(),
        u: SplitPoint::zeros(2, 12),
        iteration: 4,
    };
    let next = dr_iterate(&state, &p, &SolverOptions::default()).unwrap();
    assert_eq!(next.iteration, 5);
    assert!(next.z.sub(&rest).norm() <= 1e-10);
    assert!(next.z_tilde.sub(&rest).norm() <= 1e-10);
    assert!(next.u.norm() <= 1e-10);
}

#[test]
fn prox_fixed_points() {
    let p = matched_problem(12, 2);
    let rest = SplitPoint::at_rest(&p.initial, 2);
    let gram = DouglasRachford::new(&p, SolverOptions::default()).unwrap().gram().clone();
    let transports = vec![gram; 2];
    let kin = quadratic_prox(&rest, &transports, &p).unwrap();
    assert!(kin.sub(&rest).norm() <= 1e-12);
    let disp = disparity_prox(&rest, &transports, &p, &NewtonOptions::default()).unwrap();
    assert!(disp.sub(&rest).norm() <= 1e-12);
}

#[test]
fn first_iteration_is_the_kinetic_prox_of_the_start() {
    let (p, _) = generate(&spec(16, 2, DeformationKind::SmoothBump, 0.4)).unwrap();
    let options = SolverOptions::default();
    let start = ConsensusState::initial(&p);
    let solver = DouglasRachford::new(&p, options.clone()).unwrap();
    let expected = quadratic_prox(&start.z_tilde, &solver.transports(&start.z_tilde), &p).unwrap();
    let next = dr_iterate(&start, &p, &options).unwrap();
    assert!(next.z.sub(&expected).norm() <= 1e-12 * expected.norm().max(1.0));
}

#[test]
fn translation_gap_shrinks_tenfold() {
    let probe = matched_problem(30, 1);
    let shift = 0.5 * probe.kernels.sigma_v;
    let (p, _) = generate(&spec(30, 1, DeformationKind::Translation, shift)).unwrap();
    let r = solve(&p, &unstopped(50)).unwrap();
    let first = r.history[0].consensus_gap;
    let last = r.history[49].consensus_gap;
    assert!(last * 10.0 <= first, "gap {first:e} -> {last:e}");
}

#[test]
fn kinetic_factorization_happens_once() {
    let (p, _) = generate(&spec(20, 3, DeformationKind::SmoothBump, 0.3)).unwrap();
    for frozen_u in [false, true] {
        let r = solve(&p, &SolverOptions { frozen_u, ..unstopped(5) }).unwrap();
        assert_eq!(r.gram_factorizations, 1, "frozen_u = {frozen_u}");
    }
}

#[test]
fn solves_are_reproducible() {
    let (p, _) = generate(&spec(20, 2, DeformationKind::SmoothBump, 0.4)).unwrap();
    let a = solve(&p, &unstopped(8)).unwrap();
    let b = solve(&p, &unstopped(8)).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.controls, b.controls);
}

#[test]
fn gd_halves_a_translation_cost() {
    let (p, _) = generate(&spec(30, 1, DeformationKind::Translation, 0.3)).unwrap();
    let start = total_cost(&snapmatch::dynamics::ControlSequence::zeros(1, 30), &p).unwrap().total;
    let r = solve_gd(&p, &BaselineOptions::default()).unwrap();
    let end = r.history.last().unwrap().cost;
    assert!(end <= 0.5 * start, "{start} -> {end}");
}

#[test]
fn gd_cost_never_increases() {
    let (p, _) = generate(&spec(24, 2, DeformationKind::SmoothBump, 0.5)).unwrap();
    for bb in [false, true] {
        let r = solve_gd(&p, &BaselineOptions { barzilai_borwein: bb, ..Default::default() }).unwrap();
        for w in r.history.windows(2) {
            assert!(w[1].cost <= w[0].cost, "bb = {bb}: {} -> {}", w[0].cost, w[1].cost);
        }
    }
}

#[test]
fn gd_stops_on_a_flat_start() {
    let p = matched_problem(12, 2);
    let r = solve_gd(&p, &BaselineOptions::default()).unwrap();
    assert!(r.history.is_empty());
    assert_eq!(r.termination, Termination::GradientTolerance);
}

#[test]
fn gd_rejects_bad_options() {
    let p = matched_problem(12, 1);
    let e = solve_gd(&p, &BaselineOptions { armijo_c: 1.5, ..Default::default() }).unwrap_err();
    assert!(e.to_string().contains("armijo_c"), "{e}");
}

/// Uniform scaling about the centre of a closed triangulated sphere: the
/// recovered motion should stretch the surface by about `|c − 1|`.
#[test]
fn recovered_scaling_has_the_right_strain() {
    let reference = sphere_mesh(8, 12, 1.0).unwrap();
    for c in [1.05, 1.1] {
        let target = SurfaceGrid::new(reference.points().iter().map(|p| p * c).collect()).unwrap();
        let p = ProblemSettings::default()
            .build(reference.clone(), vec![target], TimeGrid::uniform(1, 1.0).unwrap())
            .unwrap();
        let r = solve(&p, &SolverOptions::default()).unwrap();
        let field = strain_intensity(&reference, r.trajectory.last()).unwrap();
        let mut si = field.defined_values();
        si.sort_by(f64::total_cmp);
        let median = si[si.len() / 2];
        let expected = c - 1.0;
        assert!((median - expected).abs() <= 0.2 * expected, "c = {c}: median SI {median}");
    }
}
