use super::*;
use crate::quadrature::sphere_product;
use nalgebra::{Rotation3, Unit};
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

fn setting(deg: f64) -> DetectorSetting {
    DetectorSetting::coplanar_degrees(deg)
}

/// Uniform directions by normalising Gaussian triples, a different
/// construction from `sample_lambda`.
fn gaussian_directions(n: usize, seed: u64) -> Vec<Vector3<f64>> {
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let v = Vector3::new(
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            );
            v.normalize()
        })
        .collect()
}

fn mean_and_stderr(xs: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut n, mut s, mut ss) = (0.0, 0.0, 0.0);
    for x in xs {
        n += 1.0;
        s += x;
        ss += x * x;
    }
    let mean = s / n;
    (mean, ((ss / n - mean * mean) / (n - 1.0)).sqrt())
}

fn within(got: &CorrelationEstimate, expected: f64, sigmas: f64) -> bool {
    (got.value - expected).abs() <= sigmas * got.stderr
}

#[test]
fn lambda_is_uniform() {
    let mut rng = stream_rng(11, 0);
    let a = Vector3::new(0.48, -0.6, 0.64);
    let mut mean = Vector3::zeros();
    let mut second = Vec::with_capacity(1_000_000);
    for _ in 0..1_000_000 {
        let l = sample_lambda(&mut rng);
        assert!((l.vector().norm() - 1.0).abs() < 1e-12);
        mean += l.vector();
        second.push(a.dot(l.vector()).powi(2));
    }
    mean /= 1e6;
    for c in mean.iter() {
        assert!(c.abs() < 4e-3, "{mean}");
    }
    // oracle for E[(a·λ)²]: quadrature of (a·λ)² over the sphere, divided by 4π
    let frame = SphereFrame::spanning(&a, &Vector3::x());
    let expected = sphere_product(&frame, 6, 16, |l| a.dot(l).powi(2)) / (4.0 * PI);
    let (m, se) = mean_and_stderr(second.into_iter());
    assert!((m - expected).abs() < 4.0 * se, "{m} vs {expected}");
    assert!((expected - 1.0 / 3.0).abs() < 1e-14);
}

#[test]
fn settings_are_normalised() {
    let s = DetectorSetting::new(Vector3::new(3.0, 0.0, 4.0)).unwrap();
    assert!((s.direction().norm() - 1.0).abs() < 1e-15);
    assert_eq!(DetectorSetting::new(Vector3::zeros()), Err(BellError::ZeroVector));
    assert_eq!(HiddenVector::new(Vector3::new(f64::NAN, 0.0, 1.0)), Err(BellError::ZeroVector));
    assert!((setting(37.0).angle_to(&setting(100.0)) - 63f64.to_radians()).abs() < 1e-14);
    assert_eq!(setting(0.0).angle_to(&setting(180.0)), PI);
}

#[test]
fn mu_branches() {
    assert_eq!([MuBranch::Zero, MuBranch::Plus, MuBranch::Minus].map(MuBranch::value), [0, 1, -1]);
    assert_eq!(MuBranch::Zero.outcome(-0.2), -1.0);
    assert_eq!(MuBranch::Zero.outcome(0.7), 1.0);
    assert_eq!(MuBranch::Minus.outcome(0.7), -1.0);
    assert_eq!(MuBranch::Plus.outcome(-0.7), 1.0);
}

#[test]
fn tags_round_trip() {
    for m in ModelTag::ALL {
        assert_eq!(m.to_string().parse::<ModelTag>().unwrap(), m);
    }
    assert!("image".parse::<ModelTag>().is_err());
    assert_eq!("quantum".parse::<Convention>().unwrap(), Convention::Quantum);
    assert_eq!("mc".parse::<QuadratureMethod>().unwrap(), QuadratureMethod::Mc);
}

#[test]
fn quantum_examples() {
    assert_eq!(quantum_correlation(&setting(20.0), &setting(20.0)), -1.0);
    assert!(quantum_correlation(&setting(0.0), &setting(90.0)).abs() < 1e-16);
    assert!((quantum_correlation(&setting(10.0), &setting(70.0)) + 0.5).abs() < 1e-15);
}

/// ∫ sign(a·λ)·(−sign(b·λ)) dΩ / 4π by a fine midpoint grid in (cos ϑ, φ)
/// about the z axis.
fn bell_sign_grid_oracle(theta: f64) -> f64 {
    let a = Vector3::z();
    let b = Vector3::new(theta.sin(), 0.0, theta.cos());
    let (nu, nphi) = (800, 1600);
    let mut total = 0.0;
    for i in 0..nu {
        let u = -1.0 + (i as f64 + 0.5) * 2.0 / nu as f64;
        let r = (1.0 - u * u).sqrt();
        for j in 0..nphi {
            let phi = (j as f64 + 0.5) * 2.0 * PI / nphi as f64;
            let l = Vector3::new(r * phi.cos(), r * phi.sin(), u);
            total += a.dot(&l).signum() * -b.dot(&l).signum();
        }
    }
    total / (nu * nphi) as f64
}

#[test]
fn bell_sign_examples() {
    let zero = bell_sign_correlation(&setting(30.0), &setting(30.0), 10_000, 1, 0).unwrap();
    assert_eq!((zero.value, zero.stderr, zero.n), (-1.0, 0.0, 10_000));
    let anti = bell_sign_correlation(&setting(0.0), &setting(180.0), 10_000, 1, 0).unwrap();
    assert_eq!(anti.value, 1.0);

    let grid = bell_sign_grid_oracle(PI / 2.0);
    assert!(grid.abs() < 1e-3, "{grid}");
    let right = bell_sign_correlation(&setting(0.0), &setting(90.0), 1_000_000, 2, 0).unwrap();
    assert!(within(&right, grid, 4.0), "{right:?}");
    assert_eq!(right.model, ModelTag::BellSign);

    for deg in [30.0, 120.0] {
        let grid = bell_sign_grid_oracle(f64::to_radians(deg));
        assert!((grid - (-1.0 + 2.0 * deg / 180.0)).abs() < 2e-3, "{deg}: {grid}");
        let est = bell_sign_correlation(&setting(0.0), &setting(deg), 200_000, 3, 0).unwrap();
        assert!((est.value - grid).abs() < 4.0 * est.stderr + 2e-3, "{est:?} vs {grid}");
    }
    assert_eq!(bell_sign_correlation(&setting(0.0), &setting(1.0), 0, 0, 0), Err(BellError::NoSamples));
}

#[test]
fn overlap_examples() {
    let four_thirds_pi = 4.0 * PI / 3.0;
    assert!((overlap_integral(0.0).unwrap() - four_thirds_pi).abs() < 1e-12);
    assert!((overlap_integral(PI).unwrap() - four_thirds_pi).abs() < 1e-12);
    assert!(matches!(overlap_integral(-0.1), Err(BellError::AngleOutOfRange(_))));
    assert!(matches!(overlap_integral(3.2), Err(BellError::AngleOutOfRange(_))));
}

#[test]
fn overlap_right_angle_matches_monte_carlo_oracle() {
    // Pinned value of I(π/2), recorded from the Gaussian-direction oracle
    // below and equal to 8/3.
    const PINNED: f64 = 2.666_666_666_666_667;
    let (a, b) = (Vector3::z(), Vector3::x());
    let (mean, se) =
        mean_and_stderr(gaussian_directions(10_000_000, 99).iter().map(|l| 4.0 * PI * a.dot(l).abs() * b.dot(l).abs()));
    let quad = overlap_integral(PI / 2.0).unwrap();
    assert!((quad - mean).abs() < 4.0 * se, "{quad} vs {mean} ± {se}");
    assert!((quad - PINNED).abs() < 1e-8, "{quad}");
}

#[test]
fn overlap_matches_closed_form() {
    for k in 0..=36 {
        let theta = PI * k as f64 / 36.0;
        let quad = overlap_integral(theta).unwrap();
        assert!((quad - overlap_closed_form(theta)).abs() < 1e-8, "θ = {theta}: {quad}");
    }
}

#[test]
fn c2_vanishes_for_parallel_settings() {
    let c = solve_c2(0.0).unwrap();
    assert_eq!(c.c2, 0.0);
    assert!((c.c1 - (3.0 / (4.0 * PI)).sqrt()).abs() < 1e-15);
    assert_eq!(solve_c2(PI).unwrap().c2, 0.0);
}

#[test]
fn c2_normalises_the_joint_density() {
    for theta in [PI / 6.0, PI / 2.0, 2.0] {
        let c = solve_c2(theta).unwrap();
        assert!(c.c2 > 0.0 && c.residual < 1e-8);
        // substitute back into the full density integral; the |a·λ| term
        // converges only algebraically in u, hence the many nodes
        let a = Vector3::z();
        let b = Vector3::new(theta.sin(), 0.0, theta.cos());
        let frame = SphereFrame::spanning(&a, &b);
        let total = sphere_product(&frame, 3000, 24, |l| {
            let (pa, pb) = (a.dot(l).abs(), b.dot(l).abs());
            4.0 * c.c2 * c.c2 + 4.0 * c.c1 * c.c2 * pa + c.c1 * c.c1 * pa * pb
        });
        assert!((total - 1.0).abs() < 1e-8, "θ = {theta}: {total}");
    }
}

#[test]
fn overlap_never_exceeds_normalisation() {
    for k in 0..=180 {
        let theta = f64::to_radians(k as f64);
        let c = solve_c2(theta).unwrap();
        assert!(c.c1 * c.c1 * c.overlap <= 1.0 + 1e-12, "{k}°");
        assert!(c.c2 >= 0.0 && c.residual < 1e-8, "{k}°: {c:?}");
    }
}

#[test]
fn image_analytic_examples() {
    let q = |deg: f64| {
        image_correlation_analytic(&setting(0.0), &setting(deg), QuadratureMethod::Quadrature, Convention::Image, 1, 0, 0)
            .unwrap()
    };
    assert!((q(0.0).value - 1.0).abs() < 1e-12);
    assert!((q(60.0).value - 0.5).abs() < 1e-12);
    assert!(q(90.0).value.abs() < 1e-6);
    assert_eq!((q(60.0).stderr, q(60.0).n), (0.0, 0));
    for k in 0..=12 {
        let deg = 15.0 * k as f64;
        assert!((q(deg).value - deg.to_radians().cos()).abs() < 1e-6);
    }
    let flipped = image_correlation_analytic(
        &setting(0.0),
        &setting(60.0),
        QuadratureMethod::Quadrature,
        Convention::Quantum,
        1,
        0,
        0,
    )
    .unwrap();
    assert!((flipped.value + 0.5).abs() < 1e-12);
}

#[test]
fn image_analytic_monte_carlo_agrees_with_quadrature() {
    for deg in [0.0, 45.0, 120.0] {
        let mc = image_correlation_analytic(&setting(10.0), &setting(10.0 + deg), QuadratureMethod::Mc, Convention::Image, 400_000, 5, 0)
            .unwrap();
        assert_eq!(mc.n, 400_000);
        assert!(within(&mc, f64::to_radians(deg).cos(), 4.0), "{deg}: {mc:?}");
    }
}

#[test]
fn image_event_examples() {
    let (zero, diag) = image_correlation_event(&setting(25.0), &setting(25.0), Convention::Image, 50_000, 8, 0).unwrap();
    assert_eq!(zero.value, 1.0);
    assert_eq!(diag.mu_zero_fraction, 1.0);
    assert_eq!(diag.constants.c2, 0.0);

    for (deg, expected) in [(60.0, 0.5), (90.0, 0.0)] {
        let (est, diag) = image_correlation_event(&setting(0.0), &setting(deg), Convention::Image, 1_000_000, 9, 0).unwrap();
        assert_eq!(est.n, 1_000_000);
        assert!(within(&est, expected, 4.0), "{deg}: {est:?}");
        assert!(diag.acceptance_rate > 0.2 && diag.acceptance_rate < 0.5, "{diag:?}");
    }
}

#[test]
fn mu_branches_cancel() {
    for deg in [45.0, 90.0, 135.0] {
        let (_, diag) = image_correlation_event(&setting(0.0), &setting(deg), Convention::Image, 400_000, 12, 0).unwrap();
        assert!(diag.mu_zero_fraction < 1.0);
        assert!(diag.spectator_mean.abs() <= 4.0 * diag.spectator_stderr, "{deg}: {diag:?}");
    }
}

#[test]
fn event_agrees_with_analytic() {
    for k in 0..=6 {
        let deg = 30.0 * k as f64;
        let (a, b) = (setting(0.0), setting(deg));
        let analytic =
            image_correlation_analytic(&a, &b, QuadratureMethod::Quadrature, Convention::Quantum, 1, 0, 0).unwrap();
        let (event, _) = image_correlation_event(&a, &b, Convention::Quantum, 200_000, 13, k).unwrap();
        assert!((event.value - analytic.value).abs() <= 4.0 * event.stderr + 1e-12, "{deg}: {event:?} vs {analytic:?}");
        // magnitudes match the singlet
        assert!((analytic.value.abs() - quantum_correlation(&a, &b).abs()).abs() < 1e-6);
    }
}

fn estimators(samples: u64) -> Vec<Estimator> {
    ModelTag::ALL.into_iter().map(|m| Estimator::new(m, samples, 21)).collect()
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Rotation3<f64> {
    let axis = Unit::new_normalize(*sample_lambda(rng).vector());
    Rotation3::from_axis_angle(&axis, rng.random_range(0.0..2.0 * PI))
}

#[test]
fn correlations_are_rotation_invariant_and_symmetric() {
    let mut rng = stream_rng(77, 0);
    let a = DetectorSetting::new(Vector3::new(0.2, 0.5, -0.8)).unwrap();
    let b = DetectorSetting::new(Vector3::new(-0.6, 0.1, 0.3)).unwrap();
    for est in estimators(20_000) {
        let base = est.correlate(&a, &b, 0).unwrap();
        let swapped = est.correlate(&b, &a, 1).unwrap();
        let tol = |x: &CorrelationEstimate, y: &CorrelationEstimate| {
            if x.n == 0 {
                1e-10
            } else {
                4.0 * x.stderr.hypot(y.stderr)
            }
        };
        assert!((base.value - swapped.value).abs() <= tol(&base, &swapped), "{est:?}");
        for r in 0..50 {
            let rot = random_rotation(&mut rng);
            let ra = DetectorSetting::new(rot * a.direction()).unwrap();
            let rb = DetectorSetting::new(rot * b.direction()).unwrap();
            let turned = est.correlate(&ra, &rb, 2 + r).unwrap();
            assert!((turned.value - base.value).abs() <= tol(&base, &turned), "{est:?} rotation {r}");
        }
    }
}

#[test]
fn bell_sign_never_violates_bell64() {
    let est = Estimator::new(ModelTag::BellSign, 20_000, 31);
    let a = setting(0.0);
    for i in 0..10 {
        for j in 0..10 {
            let (b, b_prime) = (setting(20.0 * i as f64), setting(20.0 * j as f64));
            let report = bell64(&est, &a, &b, &b_prime).unwrap();
            let r = report.bell64.unwrap();
            assert!(r.lhs <= r.rhs + 4.0 * r.stderr, "{i},{j}: {r:?}");
        }
    }
}

#[test]
fn image_model_violates_bell64_like_quantum() {
    let (a, b, b_prime) = (setting(0.0), setting(45.0), setting(90.0));
    let quantum = bell64(&Estimator::new(ModelTag::Quantum, 1, 0), &a, &b, &b_prime).unwrap().bell64.unwrap();
    let image = bell64(&Estimator::new(ModelTag::ImageAnalytic, 1, 0), &a, &b, &b_prime).unwrap().bell64.unwrap();
    assert!(image.violated && quantum.violated);
    assert!((image.lhs - quantum.lhs).abs() < 1e-6 && (image.rhs - quantum.rhs).abs() < 1e-6);
}

#[test]
fn bell64_examples() {
    let (a, b, b_prime) = (setting(0.0), setting(45.0), setting(90.0));
    let q = bell64(&Estimator::new(ModelTag::Quantum, 1, 0), &a, &b, &b_prime).unwrap();
    let r = q.bell64.unwrap();
    assert!((r.lhs - 0.5f64.sqrt()).abs() < 1e-12);
    assert!((r.rhs - (1.0 - 0.5f64.sqrt())).abs() < 1e-12);
    assert!(r.violated);
    assert_eq!(q.settings.len(), 3);

    let s = bell64(&Estimator::new(ModelTag::BellSign, 1_000_000, 4), &a, &b, &b_prime).unwrap().bell64.unwrap();
    assert!((s.lhs - 0.5).abs() < 4.0 * s.stderr && (s.rhs - 0.5).abs() < 4.0 * s.stderr, "{s:?}");
    assert!(!s.violated);

    let same = bell64(&Estimator::new(ModelTag::Quantum, 1, 0), &a, &b, &b).unwrap().bell64.unwrap();
    assert_eq!(same.lhs, 0.0);
    assert!(same.rhs.abs() < 1e-15 && !same.violated);
}

#[test]
fn chsh_examples() {
    let settings = [0.0, 90.0, 45.0, 135.0].map(setting);
    let run = |est: Estimator| chsh(&est, &settings[0], &settings[1], &settings[2], &settings[3]).unwrap().chsh.unwrap();

    let q = run(Estimator::new(ModelTag::Quantum, 1, 0));
    assert!((q.s + 2.0 * 2f64.sqrt()).abs() < 1e-12 && q.violated);

    let s = run(Estimator::new(ModelTag::BellSign, 1_000_000, 5));
    assert!((s.s.abs() - 2.0).abs() < 4.0 * s.stderr, "{s:?}");
    assert!(!s.violated);

    for convention in [Convention::Image, Convention::Quantum] {
        let i = run(Estimator::new(ModelTag::ImageAnalytic, 1, 0).with_convention(convention));
        assert!((i.s.abs() - 2.0 * 2f64.sqrt()).abs() < 1e-5 && i.violated, "{i:?}");
    }
}

#[test]
fn sampling_does_not_depend_on_thread_count() {
    let run = |threads| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
            let sign = bell_sign_correlation(&setting(0.0), &setting(70.0), 300_000, 3, 2).unwrap();
            let (event, _) = image_correlation_event(&setting(0.0), &setting(70.0), Convention::Image, 300_000, 3, 2).unwrap();
            (sign.value.to_bits(), sign.stderr.to_bits(), event.value.to_bits())
        })
    };
    let one = run(1);
    assert_eq!(one, run(2));
    assert_eq!(one, run(8));
}
