use lrw_core::lrw::coord_probs;
use lrw_core::models::{make_gaussian_flow, make_ou, sample_ou_params, OuParams};
use lrw_core::sde::PathOutcome;
use lrw_core::{
    flow_to_sde, lamperti_transform, make_lrw_stepper, rule_of_thumb_dx, simulate_path, DxSchedule, EmStepper,
    LatticeState, NoiseSchedule, RngStream, SdeSpec, StepConfig, Stepper, TimeDiffusion, TwoPointStepper,
};
use nalgebra::{DMatrix, DVector};

fn ou_1d() -> SdeSpec {
    make_ou(&OuParams {
        a: DMatrix::from_element(1, 1, 1.0),
        b: DVector::from_element(1, 0.0),
        temperature: 0.5,
    })
    .unwrap()
    .spec
}

/// Mean and standard error of `xs`.
fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

fn var_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let (m, _) = mean_se(xs);
    let sq: Vec<f64> = xs.iter().map(|x| (x - m).powi(2)).collect();
    let (v, se) = mean_se(&sq);
    (v * n / (n - 1.0), se)
}

#[test]
fn simulate_path_is_deterministic() {
    let model = make_ou(&sample_ou_params(3, 0.5, &mut RngStream::new(4)).unwrap()).unwrap();
    let cfg = StepConfig::new(0.01, 500).unwrap();
    let run = |stepper: &mut dyn Stepper| {
        let mut seen = Vec::new();
        simulate_path(&model.spec, stepper, &[0.0; 3], &cfg, &mut RngStream::new(77), |_, _, x| {
            seen.extend_from_slice(x)
        })
        .unwrap();
        seen
    };
    let dx = rule_of_thumb_dx(0.01, &[1.0; 3]);
    for _ in 0..2 {
        let a = run(&mut make_lrw_stepper(DxSchedule::Constant(dx.clone())).unwrap());
        let b = run(&mut make_lrw_stepper(DxSchedule::Constant(dx.clone())).unwrap());
        assert_eq!(a, b);
        assert_eq!(run(&mut EmStepper::default()), run(&mut EmStepper::default()));
        assert_eq!(run(&mut TwoPointStepper::default()), run(&mut TwoPointStepper::default()));
    }
}

#[test]
fn replica_streams_are_pairwise_distinct() {
    let seqs: Vec<Vec<u64>> = (0..32)
        .map(|r| {
            let mut rng = RngStream::for_replica(123, r);
            (0..100).map(|_| rng.next_u64()).collect()
        })
        .collect();
    for i in 0..seqs.len() {
        for j in i + 1..seqs.len() {
            assert!(seqs[i].iter().zip(&seqs[j]).all(|(a, b)| a != b), "replicas {i} and {j} share a draw");
        }
    }
}

#[test]
fn normal_draw_counts_per_scheme() {
    let d = 4;
    let model = make_ou(&sample_ou_params(d, 0.5, &mut RngStream::new(1)).unwrap()).unwrap();
    let steps = 1000;
    let cfg = StepConfig::new(0.01, steps).unwrap();
    let count = |stepper: &mut dyn Stepper| {
        let mut rng = RngStream::new(9);
        simulate_path(&model.spec, stepper, &vec![0.0; d], &cfg, &mut rng, |_, _, _| {}).unwrap();
        (rng.normal_draws(), rng.uniform_draws())
    };
    let mut lrw = make_lrw_stepper(DxSchedule::Constant(rule_of_thumb_dx(0.01, &vec![1.0; d]))).unwrap();
    assert!(lrw.gaussian_free());
    assert_eq!(count(&mut lrw), (0, (d * steps) as u64));
    let mut two = TwoPointStepper::default();
    assert!(two.gaussian_free());
    assert_eq!(count(&mut two), (0, (d * steps) as u64));
    let mut em = EmStepper::default();
    assert!(!em.gaussian_free());
    assert_eq!(count(&mut em).0, (d * steps) as u64);
}

#[test]
fn clipping_fraction_shrinks_with_dt() {
    let t_end = 2.0;
    let fractions: Vec<f64> = [0.1, 0.05, 0.025]
        .iter()
        .map(|&dt: &f64| {
            let n = (t_end / dt).round() as usize;
            let (mut clipped, mut total) = (0u64, 0u64);
            for seed in 0..10 {
                let p = sample_ou_params(3, 0.5, &mut RngStream::for_replica(5, 2 * seed)).unwrap();
                let model = make_ou(&p).unwrap();
                let mut stepper = make_lrw_stepper(DxSchedule::Constant(rule_of_thumb_dx(dt, &[1.0; 3]))).unwrap();
                let cfg = StepConfig::new(dt, n).unwrap();
                let mut rng = RngStream::for_replica(5, 2 * seed + 1);
                simulate_path(&model.spec, &mut stepper, &[6.0, -6.0, 6.0], &cfg, &mut rng, |_, _, _| {}).unwrap();
                clipped += stepper.clipped_steps();
                total += stepper.coord_steps();
            }
            clipped as f64 / total as f64
        })
        .collect();
    assert!(fractions[0] > 0.0, "{fractions:?}");
    assert!(fractions.windows(2).all(|w| w[1] <= w[0]), "{fractions:?}");
}

#[test]
fn em_and_two_point_share_first_moment() {
    let spec = SdeSpec::new(1, |x, _, o| o[0] = 2.0 - x[0], |_, _, o| o[0] = 0.7).unwrap();
    let (x0, dt) = (0.5, 0.05);
    let n = 200_000;
    for (name, mut stepper) in [
        ("em", Box::new(EmStepper::default()) as Box<dyn Stepper>),
        ("two_point", Box::new(TwoPointStepper::default())),
    ] {
        let mut rng = RngStream::new(31);
        let incs: Vec<f64> = (0..n)
            .map(|_| {
                let mut x = [x0];
                stepper.step(&spec, &mut x, 0.0, dt, &mut rng);
                x[0] - x0
            })
            .collect();
        let (m, se) = mean_se(&incs);
        assert!((m - dt * 1.5).abs() < 5.0 * se, "{name}: {m} vs {}", dt * 1.5);
    }
}

/// Exact `E[x'^2 | x]` by enumerating the increment outcomes.
fn enumerate_second_moment(x: f64, dt: f64, dx: f64) -> f64 {
    let p = coord_probs(-x, 1.0, dt, dx);
    p.p_plus * (x + dx).powi(2) + p.p_minus * (x - dx).powi(2) + p.p_zero() * x * x
}

#[test]
fn lrw_ou_second_moment_fixed_point() {
    for dt in [0.2f64, 0.05, 0.01] {
        let dx = dt.sqrt();
        // The conditional second moment is affine in x² with slope 1 - 2dt and intercept dt.
        for k in 0..20 {
            let x = (k as f64 - 10.0) * 0.09 / dx;
            let exact = enumerate_second_moment(x, dt, dx);
            let affine = (1.0 - 2.0 * dt) * x * x + dt;
            assert!((exact - affine).abs() <= 1e-12 * affine.max(1.0), "dt {dt} x {x}: {exact} vs {affine}");
        }
        let slope = 1.0 - 2.0 * dt;
        assert!((dt / (1.0 - slope) - 0.5).abs() < 1e-12);

        // Power iteration over the reachable lattice {k·dx : |k·dx| ≤ 1/dx}.
        let half = (1.0 / dt).floor() as i64;
        let size = (2 * half + 1) as usize;
        let mut mass = vec![0.0; size];
        mass[half as usize] = 1.0;
        let mut m2 = 0.0;
        for _ in 0..20_000 {
            let mut next = vec![0.0; size];
            for (i, &w) in mass.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let x = (i as i64 - half) as f64 * dx;
                let p = coord_probs(-x, 1.0, dt, dx);
                next[i] += w * p.p_zero();
                if p.p_plus > 0.0 {
                    next[i + 1] += w * p.p_plus;
                }
                if p.p_minus > 0.0 {
                    next[i - 1] += w * p.p_minus;
                }
            }
            mass = next;
            let new_m2: f64 = mass.iter().enumerate().map(|(i, w)| w * ((i as i64 - half) as f64 * dx).powi(2)).sum();
            let done = (new_m2 - m2).abs() < 1e-15;
            m2 = new_m2;
            if done {
                break;
            }
        }
        assert!((m2 - 0.5).abs() < 1e-10, "dt {dt}: stationary second moment {m2}");
    }
}

#[test]
fn lattice_closure_in_real_space() {
    let spec = ou_1d();
    let dx = 0.1;
    let mut stepper = make_lrw_stepper(DxSchedule::Constant(vec![dx])).unwrap();
    let cfg = StepConfig::new(0.01, 5000).unwrap();
    let x0 = 0.3;
    let mut worst: f64 = 0.0;
    simulate_path(&spec, &mut stepper, &[x0], &cfg, &mut RngStream::new(2), |_, _, x| {
        let k = (x[0] - x0) / dx;
        worst = worst.max((k - k.round()).abs());
    })
    .unwrap();
    assert!(worst < 1e-9, "{worst}");

    let mut ls = LatticeState::new(vec![x0], vec![dx]).unwrap();
    let mut scratch = lrw_core::lrw::LrwScratch::new(1);
    let mut rng = RngStream::new(2);
    for k in 0..5000 {
        ls.step(&spec, cfg.time_at(k), 0.01, &mut rng, &mut scratch);
        assert_eq!(ls.x()[0], x0 + dx * ls.z[0] as f64);
    }
}

fn lamperti_case() -> (SdeSpec, lrw_core::Lamperti) {
    let spec = SdeSpec::new(1, |x, _, o| o[0] = -x[0], |_, t, o| o[0] = (-t).exp()).unwrap();
    let td = TimeDiffusion::diagonal(|t: f64| vec![(-t).exp()], |t: f64| vec![-(-t).exp()]);
    let lt = lamperti_transform(&spec, td, 1.0, &[0.0, 0.5, 1.0]).unwrap();
    (spec, lt)
}

#[test]
fn lamperti_diffusion_is_constant_kappa() {
    let spec = SdeSpec::new(2, |x, _, o| o.copy_from_slice(&[-x[0], x[1].sin()]), |_, _, o| o.fill(1.0)).unwrap();
    let td = TimeDiffusion::diagonal(|t: f64| vec![1.0 + t, (0.5 * t).exp()], |t: f64| vec![1.0, 0.5 * (0.5 * t).exp()]);
    let lt = lamperti_transform(&spec, td, 2.5, &[0.0, 1.0]).unwrap();
    for k in 0..=20 {
        let t = k as f64 * 0.1;
        assert_eq!(lt.spec.diffusion(&[0.3, -1.2], t), vec![2.5, 2.5]);
    }
}

#[test]
fn lamperti_terminal_moments_match_direct_simulation() {
    let (spec, lt) = lamperti_case();
    let (dt, n, reps) = (1.0 / 250.0, 250, 20_000u64);
    let cfg = StepConfig::new(dt, n).unwrap();
    let mut direct = Vec::new();
    let mut mapped = Vec::new();
    for r in 0..reps {
        let mut rng = RngStream::for_replica(17, 2 * r);
        let out = simulate_path(&spec, &mut EmStepper::default(), &[1.0], &cfg, &mut rng, |_, _, _| {}).unwrap();
        direct.push(out.state()[0]);
        let z0 = lt.to_z(&[1.0], 0.0);
        let mut rng = RngStream::for_replica(17, 2 * r + 1);
        let out = simulate_path(&lt.spec, &mut EmStepper::default(), &z0, &cfg, &mut rng, |_, _, _| {}).unwrap();
        mapped.push(lt.to_x(out.state(), 1.0)[0]);
    }
    let ((m1, s1), (m2, s2)) = (mean_se(&direct), mean_se(&mapped));
    assert!((m1 - m2).abs() < 5.0 * s1.hypot(s2), "mean {m1} vs {m2}");
    let ((v1, s1), (v2, s2)) = (var_se(&direct), var_se(&mapped));
    assert!((v1 - v2).abs() < 5.0 * s1.hypot(s2), "variance {v1} vs {v2}");
    assert!((v2 - (-2.0f64).exp()).abs() < 5.0 * s2);
}

fn flow_terminal(ns: &NoiseSchedule, lrw: bool, reps: u64, seed: u64) -> Vec<f64> {
    let spec = flow_to_sde(1, make_gaussian_flow(1.0, ns).unwrap(), ns, 0.0, 1.0).unwrap();
    let dt = 1.0 / 400.0;
    let cfg = StepConfig::new(dt, 400).unwrap();
    let v0 = 1.0 + ns.sigma_at(0.0).powi(2);
    (0..reps)
        .map(|r| {
            let mut rng = RngStream::for_replica(seed, r);
            let x0 = [v0.sqrt() * rng.standard_normal()];
            let out = if lrw {
                let alpha = ns.alpha.clone();
                let mut stepper = make_lrw_stepper(DxSchedule::time_varying(move |t, dx: &mut [f64]| {
                    dx.fill((dt * 2.0 * alpha(t)).sqrt())
                }))
                .unwrap();
                simulate_path(&spec, &mut stepper, &x0, &cfg, &mut rng, |_, _, _| {})
            } else {
                simulate_path(&spec, &mut EmStepper::default(), &x0, &cfg, &mut rng, |_, _, _| {})
            };
            match out.unwrap() {
                PathOutcome::Completed(x) => x[0],
                PathOutcome::Diverged { .. } => panic!("flow diverged"),
            }
        })
        .collect()
}

#[test]
fn flow_conversion_preserves_marginal_variance() {
    let target = 1.0 + 0.1f64.powi(2);
    let ode = NoiseSchedule::linear(0.1, 2.0);
    let sde = NoiseSchedule::linear(0.1, 2.0).with_proportional_alpha(0.3);
    for (name, ns, lrw) in [("ode", &ode, false), ("em", &sde, false), ("lrw", &sde, true)] {
        let xs = flow_terminal(ns, lrw, 20_000, 8);
        let (m, mse) = mean_se(&xs);
        let (v, vse) = var_se(&xs);
        assert!(m.abs() < 5.0 * mse, "{name}: mean {m}");
        assert!((v - target).abs() < 5.0 * vse, "{name}: variance {v} vs {target} (se {vse})");
    }
}
