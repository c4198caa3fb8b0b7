//! Randomized property tests for the structural invariants: scale bands,
//! estimator linearity, projection laws, schedule parameter ranges, oracle
//! determinism, and the deterministic per-step descent surrogate.

use proptest::prelude::*;

use sema_opt::minimize::{
    asa_run, make_schedule_constant, make_schedule_stagewise, Schedule,
};
use sema_opt::problems::make_quadratic;
use sema_opt::rng::Stream;
use sema_opt::scalers::{effective_bounds, scaler_update, step_scale, ScalerKind, ScalerState};
use sema_opt::sema::{
    neumann_inverse_sample, project_ball, project_box, project_spectral, sema_step,
    NeumannConfig, SemaState,
};
use sema_opt::vecmat::{norm, Mat};

fn kinds() -> Vec<ScalerKind> {
    vec![
        ScalerKind::Shb,
        ScalerKind::Adam { beta2: 0.95, bias_correction: false },
        ScalerKind::AmsGrad { beta2: 0.95 },
        ScalerKind::AdaFom,
        ScalerKind::AdamPlus,
        ScalerKind::AdaBound { beta2: 0.95, c_l: 0.5, c_u: 1.5 },
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Bounded sample streams keep every step scale inside the declared
    /// band for every scaler kind.
    #[test]
    fn step_scales_stay_in_band(seed in 0u64..1_000, g_bound in 0.5f64..5.0, g0 in 0.1f64..2.0) {
        let dim = 3;
        for kind in kinds() {
            // The norm-based scaler's band is stated w.r.t. ‖v‖; the
            // per-coordinate draws below keep ‖v‖ ≤ √dim·G.
            let vb = (dim as f64).sqrt() * g_bound;
            let b = match kind {
                ScalerKind::AdamPlus => vb,
                _ => g_bound,
            };
            let (c_l, c_u) = effective_bounds(&kind, b, g0).unwrap();
            let mut st = ScalerState::new(&kind, dim, g0).unwrap();
            st.adamplus_bound = Some(vb);
            let mut stream = Stream::new(seed, 100);
            let mut v = vec![0.0; dim];
            for _ in 0..300 {
                let g: Vec<f64> =
                    (0..dim).map(|_| stream.uniform_range(-g_bound, g_bound)).collect();
                for (vi, &gi) in v.iter_mut().zip(&g) {
                    *vi = 0.9 * *vi + 0.1 * gi;
                }
                scaler_update(&mut st, &kind, &g, &v).unwrap();
                for &s in &step_scale(&st).unwrap() {
                    prop_assert!(s >= c_l - 1e-12 && s <= c_u + 1e-12,
                        "{} scale {s} outside [{c_l}, {c_u}]", kind.tag());
                }
            }
        }
    }

    /// The clipped scaler keeps its band even for unbounded (Gaussian)
    /// sample streams — no gradient bound enters its guarantee.
    #[test]
    fn clipped_scaler_band_without_bounded_gradients(seed in 0u64..1_000, scale in 0.5f64..50.0) {
        let kind = ScalerKind::AdaBound { beta2: 0.9, c_l: 0.4, c_u: 2.0 };
        let (c_l, c_u) = effective_bounds(&kind, 0.0, 0.0).unwrap();
        let mut st = ScalerState::new(&kind, 2, 0.0).unwrap();
        let mut stream = Stream::new(seed, 101);
        for _ in 0..200 {
            let g = [scale * stream.normal(), scale * stream.normal()];
            scaler_update(&mut st, &kind, &g, &[0.0; 2]).unwrap();
            for &s in &step_scale(&st).unwrap() {
                prop_assert!(s >= c_l - 1e-12 && s <= c_u + 1e-12);
            }
        }
    }

    /// The moving-average update is affine in (state, sample) at fixed γ.
    #[test]
    fn estimator_update_is_affine(
        a in proptest::collection::vec(-5.0f64..5.0, 3),
        b in proptest::collection::vec(-5.0f64..5.0, 3),
        ga in proptest::collection::vec(-5.0f64..5.0, 3),
        gb in proptest::collection::vec(-5.0f64..5.0, 3),
        gamma in 0.01f64..1.0,
        alpha in -2.0f64..2.0,
    ) {
        let beta = 1.0 - alpha;
        let mix =
            |u: &[f64], w: &[f64]| -> Vec<f64> {
                u.iter().zip(w).map(|(x, y)| alpha * x + beta * y).collect()
            };
        let mut sa = SemaState::new(a.clone(), gamma).unwrap();
        let mut sb = SemaState::new(b.clone(), gamma).unwrap();
        let mut sm = SemaState::new(mix(&a, &b), gamma).unwrap();
        sema_step(&mut sa, &ga);
        sema_step(&mut sb, &gb);
        sema_step(&mut sm, &mix(&ga, &gb));
        for (m, e) in sm.v.iter().zip(mix(&sa.v, &sb.v)) {
            prop_assert!((m - e).abs() <= 1e-9);
        }
    }

    /// Ball/box projections land inside their sets and leave interior
    /// points unchanged; the spectral projection is idempotent and
    /// nonexpansive in Frobenius norm.
    #[test]
    fn projections_obey_their_laws(
        v in proptest::collection::vec(-10.0f64..10.0, 4),
        r in 0.1f64..5.0,
        entries in proptest::collection::vec(-3.0f64..3.0, 9),
        ceil in 0.5f64..4.0,
    ) {
        let pb = project_ball(&v, r);
        prop_assert!(norm(&pb) <= r + 1e-12);
        if norm(&v) <= r {
            prop_assert_eq!(&pb, &v);
        }
        let px = project_box(&v, -r, r);
        prop_assert!(px.iter().all(|x| (-r..=r).contains(x)));

        // Symmetrize so the eigen-based projection applies.
        let mut m = Mat { rows: 3, cols: 3, data: entries };
        let mt = m.transpose();
        for (a, &b) in m.data.iter_mut().zip(&mt.data) {
            *a = 0.5 * (*a + b);
        }
        let p = project_spectral(&m, Some(0.0), Some(ceil)).unwrap();
        prop_assert!(p.spectral_norm() <= ceil + 1e-9);
        let pp = project_spectral(&p, Some(0.0), Some(ceil)).unwrap();
        let idem: f64 =
            p.data.iter().zip(&pp.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        prop_assert!(idem <= 1e-9, "projection not idempotent: {idem}");
        let fro = |x: &Mat| x.data.iter().map(|e| e * e).sum::<f64>().sqrt();
        let diff: f64 =
            m.data.iter().zip(&p.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        prop_assert!(diff <= fro(&m) + 1e-9); // nonexpansive toward 0 cap
    }

    /// Every truncated-product inverse draw obeys the norm cap k/C.
    #[test]
    fn inverse_draws_respect_norm_cap(
        seed in 0u64..1_000,
        lo in 0.2f64..1.0,
        hi in 1.0f64..3.0,
        k in 1usize..12,
    ) {
        let cfg = NeumannConfig { k_t: k, lambda: lo, c_gyy: hi + 1e-9 };
        let mut stream = Stream::new(seed, 102);
        let mut oracle = |s: &mut Stream| {
            Mat::from_diag(&[s.uniform_range(lo, hi), s.uniform_range(lo, hi)])
        };
        for _ in 0..20 {
            let h = neumann_inverse_sample(&mut oracle, &cfg, &mut stream).unwrap();
            prop_assert!(h.spectral_norm() <= k as f64 / cfg.c_gyy + 1e-9);
        }
    }

    /// Theorem-driven schedules emit parameters in their legal ranges at
    /// every step, and stagewise targets halve exactly.
    #[test]
    fn schedule_parameters_stay_legal(
        eps in 0.05f64..1.0,
        sigma in 0.1f64..3.0,
        cond in 1.0f64..20.0,
        seed in 0u64..100,
    ) {
        let q = make_quadratic(4, cond, seed);
        let problem = q.min_problem(sigma);
        let meta = problem.schedule_meta(&mut Stream::new(seed, 103)).unwrap();
        let schedule = make_schedule_constant(eps, &meta, (1.0, 1.0)).unwrap();
        for t in [0usize, 1, 7, schedule.total_steps() - 1] {
            let (g, e) = schedule.params_at(t);
            prop_assert!(g > 0.0 && g <= 1.0 && e > 0.0);
        }
        let stagewise =
            make_schedule_stagewise(1.0, eps * 1e-3, &meta, (1.0, 1.0)).unwrap();
        if let Schedule::Stagewise { stages, .. } = &stagewise {
            for w in stages.windows(2) {
                prop_assert!((w[1].eps - w[0].eps / 2.0).abs() <= 1e-12);
                prop_assert!(w[0].gamma > 0.0 && w[0].gamma <= 1.0 && w[0].eta > 0.0);
            }
        }
    }

    /// Samplers replay bit-identically from an equal (seed, stream, point).
    #[test]
    fn oracle_draws_are_deterministic(
        seed in 0u64..10_000,
        x in proptest::collection::vec(-3.0f64..3.0, 4),
        sigma in 0.0f64..2.0,
    ) {
        let q = make_quadratic(4, 5.0, 3);
        let problem = q.min_problem(sigma);
        let a = problem.oracle.draw(&x, &mut Stream::new(seed, 104));
        let b = problem.oracle.draw(&x, &mut Stream::new(seed, 104));
        prop_assert_eq!(a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Deterministic descent surrogate: on noiseless runs with the unit
    /// scaler and η·L ≤ 1/2, every recorded step satisfies
    /// `F(x_{t+1}) ≤ F(x_t) + (η/2)Δ_t − (η/2)‖∇F(x_t)‖² − (η/4)‖v_{t+1}‖²`.
    #[test]
    fn noiseless_descent_surrogate_holds(
        cond in 1.0f64..20.0,
        seed in 0u64..100,
        eta_frac in 0.05f64..0.5,
        gamma in 0.05f64..1.0,
    ) {
        let q = make_quadratic(4, cond, seed);
        let problem = q.min_problem(0.0);
        let eta = eta_frac / problem.l_smooth;
        let schedule = Schedule::constant(gamma, eta, 200);
        let r = asa_run(&problem, &ScalerKind::Shb, 0.0, &schedule, &mut Stream::new(seed, 105))
            .unwrap();
        let pts = &r.trajectory.points;
        for w in pts.windows(2) {
            let (now, next) = (&w[0], &w[1]);
            let rhs = now.objective + 0.5 * eta * now.delta
                - 0.5 * eta * now.grad_norm_sq
                - 0.25 * eta * now.v_norm_sq;
            prop_assert!(next.objective <= rhs + 1e-12,
                "descent surrogate violated at t={}: {} > {}", now.t, next.objective, rhs);
        }
    }
}
