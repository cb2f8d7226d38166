mod common;

use approx::assert_relative_eq;
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use robust_spd::annealer::initial_design;
use robust_spd::criterion::evaluate;
use robust_spd::oracle::{
    ellipsoid_max, mse_determinant, naive_loss, sampling_lower_bound, sampling_lower_bound_with, MseParts,
};
use robust_spd::presets;
use robust_spd::{Error, Factor, FactorLayout, Problem, RequirementSet, Role, SplitPlotDesign, VarianceSpec};

use common::{random_instance, rel};

fn cube_problem(alpha: f64, d: f64) -> Problem {
    let layout = FactorLayout::new(vec![
        Factor::new("A", 2, Role::WholePlot),
        Factor::new("B", 2, Role::Subplot),
        Factor::new("C", 2, Role::Subplot),
    ])
    .unwrap();
    let req = RequirementSet::parse(&["x1", "x2", "x3"], &layout).unwrap();
    Problem::new(layout, req, VarianceSpec::with_ratio(d).unwrap(), alpha).unwrap()
}

/// Random nonsingular 8-run design over the 2^3 factorial: the full
/// factorial split into random plots.
fn random_cube_design(pr: &Problem, rng: &mut ChaCha8Rng, sizes: &[usize]) -> SplitPlotDesign {
    loop {
        let d = initial_design(pr.layout(), sizes, rng).unwrap();
        if evaluate(pr, &d).is_ok() {
            return d;
        }
    }
}

#[test]
fn naive_matches_closed_form_on_random_designs() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for i in 0..100 {
        let var = VarianceSpec::with_ratio([0.0, 0.25, 1.0, 4.0][i % 4]).unwrap();
        let inst = random_instance(&mut rng, var, [0.0, 0.5, 1.0, 2.0][(i / 4) % 4], 12);
        let fast = evaluate(&inst.problem, &inst.design).unwrap();
        let naive = naive_loss(&inst.problem, &inst.design).unwrap();
        assert!(rel(naive.loss(), fast.loss()) <= 1e-9, "instance {i}");
    }
}

#[test]
fn naive_reproduces_reference_value() {
    let ex = presets::example1();
    let pr = ex.problem(VarianceSpec::default(), 1.0).unwrap();
    let d = presets::reference_design(&ex, presets::EXAMPLE1_B).unwrap();
    assert!((naive_loss(&pr, &d).unwrap().loss_root - 0.2176).abs() < 5e-4);
    let (value, _) = ellipsoid_max(&pr, &presets::reference_design(&ex, presets::EXAMPLE1_A).unwrap()).unwrap();
    assert!((value.powf(1.0 / 8.0) - 0.2188).abs() < 5e-4);
}

#[test]
fn ellipsoid_maximum_on_eight_run_designs() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let mut n = 0;
    for d in [0.0, 1.0] {
        for alpha in [0.5, 1.0, 2.0] {
            let pr = cube_problem(alpha, d);
            for sizes in [[4, 4].as_slice(), &[2, 2, 2, 2], &[3, 1, 3, 1]] {
                for _ in 0..3 {
                    let des = random_cube_design(&pr, &mut rng, sizes);
                    let closed = evaluate(&pr, &des).unwrap().loss();
                    let (emax, _) = ellipsoid_max(&pr, &des).unwrap();
                    assert!(rel(emax, closed) <= 1e-8);
                    n += 1;
                }
            }
        }
    }
    assert!(n >= 50);
}

#[test]
fn mse_bounds_and_attainment() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pr = cube_problem(1.0, 1.0);
    let des = random_cube_design(&pr, &mut rng, &[3, 1, 3, 1]);
    let closed = evaluate(&pr, &des).unwrap();
    let parts = MseParts::new(&pr, &des).unwrap();
    let q = parts.ellipsoid.v2.len();
    assert_eq!(q, 4);

    let unbiased = mse_determinant(&pr, &des, &DVector::zeros(q)).unwrap();
    assert_relative_eq!(unbiased * closed.pi(), 1.0, max_relative = 1e-12);

    for _ in 0..200 {
        let u = DVector::from_fn(q, |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0));
        let beta2 = parts.ellipsoid.boundary_point(&u);
        assert!(parts.ellipsoid.contains(&beta2));
        assert!(parts.mse_determinant(&beta2) <= closed.loss() * (1.0 + 1e-9));
    }

    let (value, arg) = ellipsoid_max(&pr, &des).unwrap();
    assert_relative_eq!(mse_determinant(&pr, &des, &arg).unwrap(), value, max_relative = 1e-8);
    assert_relative_eq!(value, closed.loss(), max_relative = 1e-8);
}

#[test]
fn sampling_bound_behaviour() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pr = cube_problem(1.0, 1.0);
    let des = random_cube_design(&pr, &mut rng, &[4, 4]);
    let closed = evaluate(&pr, &des).unwrap().loss();
    let (_, arg) = ellipsoid_max(&pr, &des).unwrap();

    // a single sample pointing at the maximizer; V2 = N I so the direction is the argmax itself
    let forced = sampling_lower_bound_with(&pr, &des, &[arg]).unwrap();
    assert_relative_eq!(forced, closed, max_relative = 1e-8);

    let lb = sampling_lower_bound(&pr, &des, 100_000, &mut rng).unwrap();
    assert!(lb <= closed * (1.0 + 1e-12));
    assert!(lb >= 0.98 * closed, "{lb} vs {closed}");

    let pr0 = cube_problem(0.0, 1.0);
    let pi = evaluate(&pr0, &des).unwrap().pi();
    let lb0 = sampling_lower_bound(&pr0, &des, 10, &mut rng).unwrap();
    assert_relative_eq!(lb0 * pi, 1.0, max_relative = 1e-12);
    let (v0, arg0) = ellipsoid_max(&pr0, &des).unwrap();
    assert_relative_eq!(v0 * pi, 1.0, max_relative = 1e-12);
    assert!(arg0.iter().all(|&b| b == 0.0));
}

#[test]
fn dense_guard() {
    let factors: Vec<Factor> = (1..=10)
        .map(|i| Factor::new(format!("F{i}"), 2, if i <= 2 { Role::WholePlot } else { Role::Subplot }))
        .collect();
    let layout = FactorLayout::new(factors).unwrap();
    let req = RequirementSet::parse(&["x1", "x3"], &layout).unwrap();
    let pr = Problem::new(layout, req, VarianceSpec::default(), 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let des = initial_design(pr.layout(), &[256, 256, 8], &mut rng).unwrap();
    assert!(matches!(
        naive_loss(&pr, &des),
        Err(Error::Capacity { what: "n", limit: 512, actual: 520 })
    ));
    assert!(matches!(ellipsoid_max(&pr, &des), Err(Error::Capacity { .. })));
    assert!(evaluate(&pr, &des).is_ok());
}
