use super::*;
use crate::dynamics::make_system;
use crate::geometry::Aabb;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn st(v: &[f64]) -> State {
    State::new(v)
}

fn straight_problem<'a>(sys: &'a SystemModel, horizon: usize) -> OptProblem<'a> {
    let start = st(&[0.0, 0.0, 0.0]);
    let goal = st(&[1.0, 0.0, 0.0]);
    let (xs, us) = resample(sys, &[start, goal], &[Control::zeros(2)], horizon);
    OptProblem {
        system: sys,
        environment: None,
        horizon,
        start,
        goal,
        guess_states: xs,
        guess_controls: us,
        settings: OptSettings::default(),
    }
}

#[test]
fn feasible_guess_is_returned_unchanged() {
    let sys = make_system("unicycle1", "v0").unwrap();
    let us = vec![Control::new(&[0.3, 0.2]); 12];
    let xs = sys.rollout(&st(&[0.5, -0.2, 0.1]), &us);
    let problem = OptProblem {
        system: &sys,
        environment: None,
        horizon: 12,
        start: xs[0],
        goal: xs[12],
        guess_states: xs.clone(),
        guess_controls: us.clone(),
        settings: OptSettings::default(),
    };
    let r = optimize_fixed_t(&problem);
    assert!(r.converged);
    assert_eq!(r.states, xs);
    assert_eq!(r.controls, us);
}

#[test]
fn one_meter_at_twenty_steps_converges() {
    let sys = make_system("unicycle1", "v0").unwrap();
    let r = optimize_fixed_t(&straight_problem(&sys, 20));
    assert!(r.converged, "{:?}", r.residuals);
    assert!(r.controls.iter().all(|u| u[0].abs() <= 0.5));
    assert!(r.residuals.ok);
}

#[test]
fn one_meter_at_ten_steps_is_infeasible() {
    let sys = make_system("unicycle1", "v0").unwrap();
    let r = optimize_fixed_t(&straight_problem(&sys, 10));
    assert!(!r.converged);
    assert!(!r.residuals.ok);
}

#[test]
fn candidate_horizons_round_and_dedup() {
    assert_eq!(candidate_horizons(20), vec![16, 20, 24]);
    assert_eq!(candidate_horizons(2), vec![2]);
    assert_eq!(candidate_horizons(3), vec![2, 3, 4]);
    assert_eq!(candidate_horizons(0), vec![1]);
}

#[test]
fn time_search_prefers_the_shortest_converged_horizon() {
    let sys = make_system("unicycle1", "v0").unwrap();
    let start = st(&[0.0, 0.0, 0.0]);
    let goal = st(&[1.0, 0.0, 0.0]);
    for (t_d, expected) in [(20, 20), (30, 24)] {
        let (xs, us) = resample(&sys, &[start, goal], &[Control::zeros(2)], t_d);
        let r = optimize_with_time_search(&sys, None, &start, &goal, &xs, &us, &OptSettings::default(), None);
        let best = r.best().expect("converged");
        assert_eq!(best.horizon(), expected);
    }
}

#[test]
fn time_search_skips_horizons_above_the_cost_bound() {
    let sys = make_system("unicycle1", "v0").unwrap();
    let start = st(&[0.0, 0.0, 0.0]);
    let goal = st(&[1.0, 0.0, 0.0]);
    let (xs, us) = resample(&sys, &[start, goal], &[Control::zeros(2)], 20);
    let r = optimize_with_time_search(&sys, None, &start, &goal, &xs, &us, &OptSettings::default(), Some(2.0));
    // 20 and 24 steps cost at least 2.0 s; 16 is too fast.
    assert!(r.best.is_none());
    assert_eq!(r.attempts.len(), 1);
    assert_eq!(r.attempts[0].horizon(), 16);
}

#[test]
fn bvp_identical_endpoints_uses_minimum_horizon() {
    let sys = make_system("unicycle1", "v0").unwrap();
    let x = st(&[0.3, 0.4, 1.0]);
    let b = solve_bvp(&sys, &x, &x, 100, &OptSettings::default()).unwrap();
    assert_eq!(b.horizon, MIN_BVP_HORIZON);
    assert!(b.controls.iter().all(|u| u[0].abs() < 1e-6 && u[1].abs() < 1e-6));
}

#[test]
fn bvp_straight_meter_is_near_kinematic_bound() {
    let sys = make_system("unicycle1", "v0").unwrap();
    let b = solve_bvp(&sys, &st(&[0.0, 0.0, 0.0]), &st(&[1.0, 0.0, 0.0]), 100, &OptSettings::default()).unwrap();
    assert!((18..=22).contains(&b.horizon), "horizon {}", b.horizon);
    assert!(b.horizon >= 20, "faster than v_max allows: {}", b.horizon);
}

#[test]
fn bvp_beyond_reach_fails() {
    let sys = make_system("unicycle1", "v0").unwrap();
    assert!(solve_bvp(&sys, &st(&[0.0, 0.0, 0.0]), &st(&[10.0, 0.0, 0.0]), 40, &OptSettings::default()).is_none());
}

#[test]
fn bvp_is_translation_equivariant() {
    let settings = OptSettings::default();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for (name, variant) in [("unicycle1", "v0"), ("unicycle2", "v0"), ("car_with_trailer", "v0")] {
        let sys = make_system(name, variant).unwrap();
        for _ in 0..3 {
            let mut a = State::zeros(sys.d_x);
            let mut b = State::zeros(sys.d_x);
            a[2] = rng.gen_range(-1.0..1.0);
            b[0] = rng.gen_range(-0.5..0.5);
            b[1] = rng.gen_range(-0.5..0.5);
            b[2] = rng.gen_range(-1.0..1.0);
            if sys.d_x == 4 {
                a[3] = a[2];
                b[3] = b[2];
            }
            let t = [rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0)];
            let base = solve_bvp(&sys, &a, &b, 80, &settings);
            let moved = solve_bvp(&sys, &a.translated(t), &b.translated(t), 80, &settings);
            match (base, moved) {
                (None, None) => {}
                (Some(p), Some(q)) => {
                    assert_eq!(p.horizon, q.horizon);
                    for (x, y) in p.states.iter().zip(&q.states) {
                        let back = y.translated([-t[0], -t[1]]);
                        assert!(max_abs_diff(&sys, x, &back) <= 1e-6, "{name}: {x:?} vs {back:?}");
                    }
                }
                _ => panic!("{name}: translation changed solvability"),
            }
        }
    }
}

#[test]
fn converged_results_pass_the_report_and_violation_decreases() {
    let settings = OptSettings::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (name, variant) in [("unicycle1", "v0"), ("unicycle1", "v2"), ("unicycle2", "v0"), ("car_with_trailer", "v0")] {
        let sys = make_system(name, variant).unwrap();
        for _ in 0..4 {
            let a = State::zeros(sys.d_x);
            let mut b = State::zeros(sys.d_x);
            b[0] = rng.gen_range(0.3..1.0);
            b[1] = rng.gen_range(-0.4..0.4);
            b[2] = rng.gen_range(-0.5..0.5);
            if sys.d_x == 4 {
                b[3] = b[2];
            }
            for horizon in [25, 40] {
                let (xs, us) = resample(&sys, &[a, b], &[Control::zeros(2)], horizon);
                let p = OptProblem {
                    system: &sys,
                    environment: None,
                    horizon,
                    start: a,
                    goal: b,
                    guess_states: xs,
                    guess_controls: us,
                    settings,
                };
                let r = optimize_fixed_t(&p);
                if r.converged {
                    let again = feasibility_report(&sys, None, &r.states, &r.controls, &a, &b, &settings.tolerances);
                    assert!(again.ok);
                }
                for w in r.violation_history.windows(2) {
                    assert!(w[1] <= w[0] + 1e-12, "{name}: violation grew {:?}", r.violation_history);
                }
            }
        }
    }
}

#[test]
fn repairs_a_guess_grazing_an_obstacle() {
    let sys = make_system("unicycle1", "v0").unwrap();
    // the straight guess overlaps the obstacle by 7.5 cm
    let env = Environment::new([-1.0, -1.5], [3.0, 1.5], vec![Aabb::from_center([1.0, 0.2], [0.15, 0.15])]).unwrap();
    let shape = RobotShape::default_for(&sys);
    let start = st(&[0.0, 0.0, 0.0]);
    let goal = st(&[2.0, 0.0, 0.0]);
    let (xs, us) = resample(&sys, &[start, goal], &[Control::zeros(2)], 50);
    let p = OptProblem {
        system: &sys,
        environment: Some((&env, &shape)),
        horizon: 50,
        start,
        goal,
        guess_states: xs,
        guess_controls: us,
        settings: OptSettings::default(),
    };
    let r = optimize_fixed_t(&p);
    assert!(r.converged, "{:?}", r.residuals);
    assert!(r.states.iter().all(|x| state_valid(&env, &shape, &sys, x)));
}

#[test]
fn report_flags_each_kind_of_violation() {
    let sys = make_system("unicycle1", "v0").unwrap();
    let env = Environment::new([-1.0, -1.0], [3.0, 1.0], vec![Aabb::from_center([2.0, 0.0], [0.1, 0.1])]).unwrap();
    let shape = RobotShape::default_for(&sys);
    let us = vec![Control::new(&[0.5, 0.0]); 10];
    let xs = sys.rollout(&st(&[0.0, 0.0, 0.0]), &us);
    let tol = Tolerances::default();
    let good = feasibility_report(&sys, Some((&env, &shape)), &xs, &us, &xs[0], &xs[10], &tol);
    assert!(good.ok, "{good:?}");

    let mut bad_u = us.clone();
    bad_u[3][0] = 0.6;
    let r = feasibility_report(&sys, Some((&env, &shape)), &xs, &bad_u, &xs[0], &xs[10], &tol);
    assert!(!r.ok && (r.bound_violation - 0.1).abs() < 1e-12);

    let mut jump = xs.clone();
    jump[5][1] += 0.3;
    let r = feasibility_report(&sys, Some((&env, &shape)), &jump, &us, &xs[0], &xs[10], &tol);
    assert!(!r.ok && (r.dynamics_inf_norm - 0.3).abs() < 1e-9);

    let r = feasibility_report(&sys, Some((&env, &shape)), &xs, &us, &xs[0], &st(&[0.5, 0.1, 0.0]), &tol);
    assert!(!r.ok && (r.goal_gap - 0.1).abs() < 1e-12);

    let far: Vec<Control> = vec![Control::new(&[0.5, 0.0]); 40];
    let fx = sys.rollout(&st(&[0.0, 0.0, 0.0]), &far);
    let r = feasibility_report(&sys, Some((&env, &shape)), &fx, &far, &fx[0], &fx[40], &tol);
    assert!(!r.ok && r.collision_violation > 0.0 && !r.invalid_states.is_empty());
}

#[test]
fn collision_constraint_gradients_match_finite_differences() {
    let h = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for (name, variant) in [("unicycle1", "v0"), ("car_with_trailer", "v0")] {
        let sys = make_system(name, variant).unwrap();
        let shape = RobotShape::default_for(&sys);
        let env = Environment::new([-2.0, -2.0], [2.0, 2.0], vec![Aabb::from_center([0.3, 0.2], [0.2, 0.3])]).unwrap();
        let st = OptSettings::default();
        let geom = |x: &[f64], out: &mut Vec<transcription::StateConstraint>| {
            transcription::geometry_constraints(&env, &shape, x, st.bound_margin, st.collision_margin, out)
        };
        let mut checked = 0;
        while checked < 1000 {
            let x: Vec<f64> = (0..sys.d_x).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut base = Vec::new();
            geom(&x, &mut base);
            let mut rows = Vec::new();
            for j in 0..sys.d_x {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[j] += h;
                xm[j] -= h;
                let (mut p, mut m) = (Vec::new(), Vec::new());
                geom(&xp, &mut p);
                geom(&xm, &mut m);
                rows.push((p, m));
            }
            // the separation is only piecewise smooth; skip points near an axis switch
            let smooth = rows.iter().enumerate().all(|(j, (p, m))| {
                base.iter().enumerate().all(|(r, c)| {
                    let fd = (p[r].value - m[r].value) / (2.0 * h);
                    let one_sided = (p[r].value - c.value) / h;
                    (fd - one_sided).abs() < 1e-4 || c.grad[j].is_nan()
                })
            });
            if !smooth {
                continue;
            }
            for (j, (p, m)) in rows.iter().enumerate() {
                for (r, c) in base.iter().enumerate() {
                    let fd = (p[r].value - m[r].value) / (2.0 * h);
                    assert!((fd - c.grad[j]).abs() <= 1e-5 * c.grad[j].abs().max(1.0), "{name} c{r} d{j}");
                }
            }
            checked += 1;
        }
    }
}
