use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn lp(c: &[f64], rows: usize, a: &[f64], b: &[f64]) -> LpStandardForm {
    LpStandardForm::new(c.to_vec(), DMatrix::from_row_slice(rows, c.len(), a), b.to_vec()).unwrap()
}

/// min x s.t. x >= 1, as x - s = 1
fn at_least_one() -> LpStandardForm {
    lp(&[1.0, 0.0], 1, &[1.0, -1.0], &[1.0])
}

/// min λ s.t. |0.5 - w| <= λ over (w, λ, s1, s2)
fn one_atom_one_moment() -> LpStandardForm {
    lp(
        &[0.0, 1.0, 0.0, 0.0],
        2,
        &[1.0, 1.0, -1.0, 0.0, 1.0, -1.0, 0.0, 1.0],
        &[0.5, 0.5],
    )
}

/// Random instance that is primal feasible (b = A x0, x0 >= 0) and dual
/// feasible (c = A'y0 + s0, s0 >= 0), hence has a finite optimum.
pub(crate) fn random_feasible(rng: &mut ChaCha8Rng) -> LpStandardForm {
    let m = rng.gen_range(1..=25);
    let n = rng.gen_range(m + 1..=40);
    let a = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
    let x0 = DVector::from_fn(n, |_, _| {
        if rng.gen_bool(0.5) {
            rng.gen_range(0.0..2.0)
        } else {
            0.0
        }
    });
    let y0 = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
    let s0 = DVector::from_fn(n, |_, _| {
        if rng.gen_bool(0.5) {
            rng.gen_range(0.0..1.0)
        } else {
            0.0
        }
    });
    let b = &a * x0;
    let c = a.transpose() * y0 + s0;
    LpStandardForm::new(c.iter().copied().collect(), a, b.iter().copied().collect()).unwrap()
}

#[test]
fn trivial_examples() {
    let s = solve_ipm(&at_least_one(), IpmOptions::default()).unwrap();
    assert!(s.is_optimal());
    assert!((s.primal[0] - 1.0).abs() < 1e-7 && (s.objective - 1.0).abs() < 1e-7);
    let r = solve_simplex_reference(&at_least_one());
    assert_eq!(r.objective, 1.0);

    let s = solve_ipm(&one_atom_one_moment(), IpmOptions::default()).unwrap();
    assert!(s.is_optimal());
    assert!(s.objective.abs() < 1e-7 && (s.primal[0] - 0.5).abs() < 1e-7);
    let r = solve_simplex_reference(&one_atom_one_moment());
    assert!(r.is_optimal() && r.objective.abs() < 1e-12 && (r.primal[0] - 0.5).abs() < 1e-12);
}

#[test]
fn ipm_matches_simplex_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for k in 0..50 {
        let p = random_feasible(&mut rng);
        let ipm = solve_ipm(&p, IpmOptions::default()).unwrap();
        let spx = solve_simplex_reference(&p);
        assert!(ipm.is_optimal(), "instance {k}: {:?}", ipm.status);
        assert!(spx.is_optimal(), "instance {k}: {:?}", spx.status);
        assert!(
            (ipm.objective - spx.objective).abs() <= 1e-7,
            "instance {k}: {} vs {}",
            ipm.objective,
            spx.objective
        );
        assert!(ipm.residuals.max() <= 1e-8, "instance {k}: {:?}", ipm.residuals);
        assert!(spx.residuals.max() <= 1e-8, "instance {k}: {:?}", spx.residuals);
    }
}

#[test]
fn weak_duality_holds_along_the_path() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let p = random_feasible(&mut rng);
        let s = solve_ipm(
            &p,
            IpmOptions {
                trace: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(!s.trace.is_empty());
        for it in &s.trace {
            let scale = 1.0 + it.primal_objective.abs().max(it.dual_objective.abs());
            assert!(it.complementarity >= 0.0);
            assert!(
                it.primal_objective - it.dual_objective >= -it.infeasibility_slack - 1e-12 * scale,
                "{it:?}"
            );
        }
    }
}

#[test]
fn redundant_rows_are_cleaned() {
    // x1 + x2 = 1 twice, min -x1
    let p = lp(&[-1.0, 0.0], 2, &[1.0, 1.0, 1.0, 1.0], &[1.0, 1.0]);
    let s = solve_simplex_reference(&p);
    assert!(s.is_optimal());
    assert!((s.objective + 1.0).abs() < 1e-12);
    let i = solve_ipm(&p, IpmOptions::default()).unwrap();
    assert!(i.is_optimal() && (i.objective + 1.0).abs() < 1e-7);
    assert!(i.residuals.max() <= 1e-8);
}

#[test]
fn infeasible_instances() {
    // x - s1 = 1, x + s2 = 0
    let p = lp(&[1.0, 0.0, 0.0], 2, &[1.0, -1.0, 0.0, 1.0, 0.0, 1.0], &[1.0, 0.0]);
    assert_eq!(solve_simplex_reference(&p).status, LpStatus::Infeasible);
    assert_eq!(
        solve_ipm(&p, IpmOptions::default()).unwrap().status,
        LpStatus::Infeasible
    );
    // contradictory duplicate rows
    let p = lp(&[1.0, 1.0], 2, &[1.0, 1.0, 1.0, 1.0], &[1.0, 2.0]);
    assert_eq!(solve_simplex_reference(&p).status, LpStatus::Infeasible);
    assert_eq!(
        solve_ipm(&p, IpmOptions::default()).unwrap().status,
        LpStatus::Infeasible
    );
}

#[test]
fn unbounded_instance() {
    // min -x1 s.t. x1 - x2 = 0
    let p = lp(&[-1.0, 0.0], 1, &[1.0, -1.0], &[0.0]);
    assert_eq!(solve_simplex_reference(&p).status, LpStatus::Unbounded);
    assert_eq!(
        solve_ipm(&p, IpmOptions::default()).unwrap().status,
        LpStatus::Unbounded
    );
}

#[test]
fn free_variables() {
    // min |z - 3| style: min t s.t. z - t + s1 = 3, z + t - s2 = 3, z free
    let c = vec![0.0, 1.0, 0.0, 0.0];
    let a = DMatrix::from_row_slice(2, 4, &[1.0, -1.0, 1.0, 0.0, 1.0, 1.0, 0.0, -1.0]);
    let p = LpStandardForm::with_free(c, a, vec![3.0, 3.0], vec![true, false, false, false]).unwrap();
    let s = solve_ipm(&p, IpmOptions::default()).unwrap();
    assert!(s.is_optimal());
    assert!((s.primal[0] - 3.0).abs() < 1e-6 && s.objective.abs() < 1e-7);
    let r = solve_simplex_reference(&p);
    assert!((r.primal[0] - 3.0).abs() < 1e-12);
}

#[test]
fn iteration_limit_is_reported() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = random_feasible(&mut rng);
    let s = solve_ipm(
        &p,
        IpmOptions {
            max_iter: 1,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(s.status, LpStatus::IterationLimit);
    assert!(solve_ipm(
        &p,
        IpmOptions {
            tol: 0.0,
            ..Default::default()
        }
    )
    .is_err());
}

#[test]
fn deterministic_and_policy_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = random_feasible(&mut rng);
    let a = solve_ipm(
        &p,
        IpmOptions {
            exec: crate::exec::Execution::Sequential,
            ..Default::default()
        },
    )
    .unwrap();
    let b = solve_ipm(
        &p,
        IpmOptions {
            exec: crate::exec::Execution::Parallel,
            ..Default::default()
        },
    )
    .unwrap();
    let c = solve_ipm(&p, IpmOptions::default()).unwrap();
    assert_eq!(a, b);
    assert_eq!(b, c);
}
