use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::grid::Face;

fn unit(shape: Vec<usize>) -> Grid {
    Grid::unit_box(shape).unwrap()
}

fn random_u(grid: &Grid, m: usize, rng: &mut ChaCha8Rng) -> ScalarGridFunction {
    let vals = (0..m * grid.cells()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    ScalarGridFunction::new(grid.clone(), m, vals).unwrap()
}

fn random_variation(p: &Problem, rng: &mut ChaCha8Rng) -> ScalarGridFunction {
    let mut v = random_u(p.grid(), p.components(), rng).into_values();
    p.project(&mut v);
    p.wrap(&v)
}

fn dirichlet_quadratic(shape: Vec<usize>, m: usize) -> Problem {
    let n = shape.len();
    let data = AffineData::new(
        (0..m).map(|i| (0..n).map(|j| 0.5 + i as f64 - 0.3 * j as f64).collect()).collect(),
        vec![0.1; m],
    );
    Problem::new(unit(shape), Integrand::dirichlet(m, n, 2).unwrap(), BoundaryCondition::dirichlet(data), Loads::none()).unwrap()
}

#[test]
fn energy_examples() {
    let g = unit(vec![8, 8]);
    let w = Integrand::dirichlet(1, 2, 2).unwrap();
    let affine = ScalarGridFunction::from_fn(g.clone(), 1, |x, o| o[0] = 3.0 * x[0] - 4.0 * x[1] + 1.0).unwrap();
    assert!((energy(&w, &affine) - 12.5).abs() < 1e-12);
    let c = ScalarGridFunction::from_fn(g.clone(), 1, |_, o| o[0] = 7.0).unwrap();
    assert_eq!(energy(&w, &c), 0.0);

    // Direct summation oracle for the double well.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let u = random_u(&g, 2, &mut rng);
    let dw = Integrand::double_well(2, 2, 2).unwrap();
    let h = g.spacing();
    let mut direct = 0.0;
    for i in 0..8 {
        for j in 0..8 {
            let val = |a: usize, b: usize, k: usize| u.values()[(a * 8 + b) * 2 + k];
            let mut s = 0.0;
            for k in 0..2 {
                let dx = if i < 7 { val(i + 1, j, k) - val(i, j, k) } else { val(i, j, k) - val(i - 1, j, k) };
                let dy = if j < 7 { val(i, j + 1, k) - val(i, j, k) } else { val(i, j, k) - val(i, j - 1, k) };
                s += (dx * dx + dy * dy) / (h * h);
            }
            direct += (s - 1.0) * (s - 1.0) * h * h;
        }
    }
    let e = energy(&dw, &u);
    assert!((e - direct).abs() < 1e-12 * direct.abs());
}

#[test]
fn first_variation_matches_t_derivative() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g = unit(vec![6, 6]);
    for w in [
        Integrand::double_well(2, 2, 2).unwrap(),
        Integrand::p_growth(2, 2, 3.0, 2).unwrap(),
    ] {
        let p = Problem::new(g.clone(), w, BoundaryCondition::dirichlet(AffineData::scaled_identity(2, 0.7)), Loads::none()).unwrap();
        let u = random_u(&g, 2, &mut rng);
        let v = random_variation(&p, &mut rng);
        let exact = p.first_variation(&u, &v).unwrap();
        let err = |dt: f64| {
            let ep = p.energy(&u.axpy(dt, &v).unwrap()).unwrap();
            let em = p.energy(&u.axpy(-dt, &v).unwrap()).unwrap();
            ((ep - em) / (2.0 * dt) - exact).abs()
        };
        let order = (err(1e-2) / err(5e-3)).log2();
        assert!(order >= 1.8, "order {order}");
        assert_eq!(p.first_variation(&u, &ScalarGridFunction::zeros(g.clone(), 2)).unwrap(), 0.0);
    }
    let bad = p_with_fixed();
    let mut w = ScalarGridFunction::zeros(bad.grid().clone(), 1);
    w.values_mut()[0] = 1.0;
    assert!(matches!(
        bad.first_variation(&ScalarGridFunction::zeros(bad.grid().clone(), 1), &w),
        Err(Error::Precondition(_))
    ));
}

fn p_with_fixed() -> Problem {
    Problem::new(
        unit(vec![4, 4]),
        Integrand::dirichlet(1, 2, 2).unwrap(),
        BoundaryCondition::mixed(vec![Face { axis: 0, high: false }], AffineData::new(vec![vec![0.0, 0.0]], vec![])),
        Loads::none(),
    )
    .unwrap()
}

#[test]
fn quadratic_first_variation_is_gradient_pairing() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = dirichlet_quadratic(vec![5, 4], 1);
    let u = random_u(p.grid(), 1, &mut rng);
    let w = random_variation(&p, &mut rng);
    let (gu, gw) = (gradient(&u), gradient(&w));
    let direct: f64 = gu.values().iter().zip(gw.values()).map(|(a, b)| a * b).sum::<f64>() * p.grid().cell_volume();
    assert!((p.first_variation(&u, &w).unwrap() - direct).abs() < 1e-12 * (1.0 + direct.abs()));
}

#[test]
fn residual_matches_energy_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let g = unit(vec![5, 5]);
    let loads = Loads {
        body: Some(random_u(&g, 2, &mut rng)),
        surface: vec![(Face { axis: 1, high: true }, vec![0.3, -0.2])],
    };
    let p = Problem::new(
        g.clone(),
        Integrand::double_well(2, 2, 2).unwrap(),
        BoundaryCondition::mixed(vec![Face { axis: 0, high: false }, Face { axis: 0, high: true }], AffineData::scaled_identity(2, 1.2)),
        loads,
    )
    .unwrap();
    let u = random_u(&g, 2, &mut rng);
    let r = p.el_residual(&u).unwrap();
    let vol = g.cell_volume();
    let dt = 1e-6;
    for dof in 0..u.values().len() {
        let cell = dof / 2;
        let mut e = vec![0.0; u.values().len()];
        e[dof] = 1.0;
        let fd = if p.is_fixed(cell) {
            0.0
        } else {
            let ev = p.wrap(&e);
            (p.energy(&u.axpy(dt, &ev).unwrap()).unwrap() - p.energy(&u.axpy(-dt, &ev).unwrap()).unwrap()) / (2.0 * dt)
        };
        let got = r.field.values()[dof] * vol;
        assert!((got - fd).abs() < 1e-8 * (1.0 + fd.abs()), "dof {dof}: {got} vs {fd}");
    }
}

#[test]
fn quadratic_dirichlet_solve() {
    let p = dirichlet_quadratic(vec![12, 10], 2);
    let eq = solve_el(&p, &p.affine_interpolant(), &SolveOptions { tol: 1e-12, ..Default::default() }).unwrap();
    assert_eq!(eq.status, SolveStatus::Converged);
    assert!(eq.el_residual_norm < 1e-10);
    assert!((eq.coercivity_4a - 1.0).abs() < 1e-8);
    // A strictly convex energy has no other critical point.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w = random_variation(&p, &mut rng);
    assert!(p.el_residual(&eq.u_e.axpy(1.0, &w).unwrap()).unwrap().norm > 1e-3);
    // The one-sided stencil at the last cell keeps u_e close to, not equal
    // to, the affine interpolant.
    let dev = eq.u_e.axpy(-1.0, &p.affine_interpolant()).unwrap();
    let max = dev.values().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    assert!(max < 0.2, "{max}");
}

#[test]
fn neumann_zero_solution() {
    let g = unit(vec![8, 8]);
    let p = Problem::new(g.clone(), Integrand::dirichlet(1, 2, 2).unwrap(), BoundaryCondition::neumann(), Loads::none()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let init = random_u(&g, 1, &mut rng);
    let eq = solve_el(&p, &init, &SolveOptions::default()).unwrap();
    assert!(eq.el_residual_norm < 1e-10);
    assert!(eq.u_e.values().iter().all(|v| v.abs() < 1e-9));
    assert!(eq.u_e.mean()[0].abs() < 1e-14);
}

#[test]
fn init_must_match_dirichlet_data() {
    let p = dirichlet_quadratic(vec![4, 4], 1);
    let zero = ScalarGridFunction::zeros(p.grid().clone(), 1);
    assert!(matches!(solve_el(&p, &zero, &SolveOptions::default()), Err(Error::Precondition(_))));
}

#[test]
fn lambda_for_diagonal_operator() {
    let g = unit(vec![7, 6]);
    let a = vec![
        2.0, 0.0, 0.0, 0.0, //
        0.0, 2.0, 0.0, 0.0, //
        0.0, 0.0, 0.5, 0.0, //
        0.0, 0.0, 0.0, 0.5,
    ];
    let p = Problem::new(
        g.clone(),
        Integrand::quadratic(2, 2, a, 2).unwrap(),
        BoundaryCondition::dirichlet(AffineData::scaled_identity(2, 0.0)),
        Loads::none(),
    )
    .unwrap();
    let est = lambda_min(&p, &ScalarGridFunction::zeros(g, 2), &LambdaOptions::default()).unwrap();
    assert!((est.lambda - 0.5).abs() < 1e-8, "{est:?}");
    assert!(est.history.windows(2).all(|w| w[1] <= w[0]));
}

/// Dense `S` by central differences of the residual and dense `L`, both on the
/// free degrees of freedom; returns the smallest generalized eigenvalue and the
/// matrices.
fn dense_oracle(p: &Problem, u: &ScalarGridFunction) -> (f64, DMatrix<f64>, Vec<usize>) {
    let m = p.components();
    let free: Vec<usize> = (0..u.values().len()).filter(|&d| !p.is_fixed(d / m)).collect();
    let k = free.len();
    let dt = 1e-5;
    let mut s = DMatrix::zeros(k, k);
    let mut l = DMatrix::zeros(k, k);
    for (col, &d) in free.iter().enumerate() {
        let mut e = vec![0.0; u.values().len()];
        e[d] = 1.0;
        let ev = p.wrap(&e);
        let rp = p.el_residual(&u.axpy(dt, &ev).unwrap()).unwrap().field.into_values();
        let rm = p.el_residual(&u.axpy(-dt, &ev).unwrap()).unwrap().field.into_values();
        let le = gradient_adjoint(&gradient(&ev)).into_values();
        for (row, &r) in free.iter().enumerate() {
            s[(row, col)] = (rp[r] - rm[r]) / (2.0 * dt);
            l[(row, col)] = le[r];
        }
    }
    let s = (&s + s.transpose()) * 0.5;
    let chol = l.clone().cholesky().unwrap();
    let linv = chol.l().try_inverse().unwrap();
    let reduced = &linv * &s * linv.transpose();
    let eig = SymmetricEigen::new((&reduced + reduced.transpose()) * 0.5);
    (eig.eigenvalues.min(), s, free)
}

#[test]
fn second_variation_against_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let g = unit(vec![5, 5]);
    let p = Problem::new(
        g.clone(),
        Integrand::double_well(2, 2, 2).unwrap(),
        BoundaryCondition::dirichlet(AffineData::scaled_identity(2, 1.5)),
        Loads::none(),
    )
    .unwrap();
    let eq = solve_el(&p, &p.affine_interpolant(), &SolveOptions::default()).unwrap();
    let (lmin, s, free) = dense_oracle(&p, &eq.u_e);
    assert!((eq.coercivity_4a - lmin).abs() < 1e-8 * lmin.abs().max(1.0), "{} vs {lmin}", eq.coercivity_4a);
    let vol = g.cell_volume();
    for _ in 0..5 {
        let z1 = random_variation(&p, &mut rng);
        let z2 = random_variation(&p, &mut rng);
        let a: Vec<f64> = free.iter().map(|&d| z1.values()[d]).collect();
        let b: Vec<f64> = free.iter().map(|&d| z2.values()[d]).collect();
        let dense = (DMatrix::from_row_slice(1, a.len(), &a) * &s * DMatrix::from_column_slice(b.len(), 1, &b))[(0, 0)] * vol;
        let got = p.second_variation(&eq.u_e, &z1, &z2).unwrap();
        let swapped = p.second_variation(&eq.u_e, &z2, &z1).unwrap();
        assert!((got - dense).abs() < 1e-8 * (1.0 + dense.abs()), "{got} vs {dense}");
        assert!((got - swapped).abs() <= 1e-12 * (1.0 + got.abs()));
    }
}

#[test]
fn quadratic_stress_margins_are_quarter() {
    let p = dirichlet_quadratic(vec![10, 10], 1);
    let eq = solve_el(&p, &p.affine_interpolant(), &SolveOptions { tol: 1e-13, ..Default::default() }).unwrap();
    let opts = StressOptions { n_samples: 16, seed: 3, ..Default::default() };
    let rep = minimizer_stress_test(&p, &eq, 1.0, &opts).unwrap();
    assert_eq!(rep.failures, 0);
    assert_eq!(rep.samples.len(), 16);
    for s in &rep.samples {
        assert!(s.grad_bmo < 1.0);
        assert!((s.energy_gap - 0.5 * s.grad_l2_sq).abs() < 1e-12 * s.energy_gap);
        assert!((s.margin - 0.25 * s.grad_l2_sq).abs() < 1e-12 * s.energy_gap);
    }
    let qv = remark_q_variant(&rep, 3.0, rep.j).unwrap();
    assert_eq!(qv.rows.len(), 16);
    assert!(remark_q_variant(&rep, 2.0, rep.j).is_err());
}

#[test]
fn neumann_variations_are_mean_zero() {
    let g = unit(vec![8, 8]);
    let p = Problem::new(g.clone(), Integrand::dirichlet(2, 2, 2).unwrap(), BoundaryCondition::neumann(), Loads::none()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for gen in ALL_GENERATORS {
        let w = generate(&p, gen, &mut rng).unwrap();
        assert!(w.mean().iter().all(|m| m.abs() < 1e-14), "{gen}");
    }
    let d = dirichlet_quadratic(vec![8, 8], 2);
    for gen in ALL_GENERATORS {
        let w = generate(&d, gen, &mut rng).unwrap();
        d.check_variation(&w).unwrap();
    }
}

#[test]
fn smaller_coercivity_never_shrinks_certified_delta() {
    // 1D double well with boundary slope 0.8: convex at u_e but not globally.
    let g = unit(vec![24]);
    let p = Problem::new(
        g,
        Integrand::double_well(1, 1, 2).unwrap(),
        BoundaryCondition::dirichlet(AffineData::new(vec![vec![0.8]], vec![0.0])),
        Loads::none(),
    )
    .unwrap();
    let eq = solve_el(&p, &p.affine_interpolant(), &SolveOptions::default()).unwrap();
    assert!(eq.coercivity_4a > 0.0);
    let opts = StressOptions { n_samples: 40, seed: 1, ..Default::default() };
    let (full, _) = certify_delta(&p, &eq, 2.0, 8, &opts).unwrap();
    let (half, _) = certify_delta(&p, &eq.with_coercivity(eq.coercivity_4a / 2.0), 2.0, 8, &opts).unwrap();
    assert!(half.certified_delta >= full.certified_delta);
    assert!(full.trials[0].failures > 0, "{full:?}");
}

