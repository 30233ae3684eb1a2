use dataprice_core::influence::{
    exact_influence, exact_influence_by_refit, first_order_influence, influence_records,
    refit_without, second_order_influence,
};
use dataprice_core::regression::{fit, risk, AgentId, DataPoint, Dataset, RiskExpansion};
use dataprice_core::Error;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn random_data(n: usize, dim: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut data = Dataset::new(dim);
    for i in 0..n {
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let noise: f64 = StandardNormal.sample(&mut rng);
        let y = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + 0.3 + noise;
        data.push(DataPoint::new(x, y).with_agent(AgentId(i as u64), i))
            .unwrap();
    }
    data
}

/// Least squares by SVD of the augmented design, independent of the Cholesky path.
fn svd_solution(data: &Dataset) -> DVector<f64> {
    let p = data.dim() + 1;
    let mut x = DMatrix::zeros(data.len(), p);
    for (i, z) in data.iter().enumerate() {
        for j in 0..data.dim() {
            x[(i, j)] = z.x[j];
        }
        x[(i, p - 1)] = 1.0;
    }
    let y = DVector::from_iterator(data.len(), data.iter().map(|z| z.y));
    x.svd(true, true).solve(&y, 1e-14).unwrap()
}

#[test]
fn fit_matches_svd_least_squares() {
    for (dim, seed) in [(1, 1), (3, 2), (10, 3)] {
        let data = random_data(60, dim, seed);
        let model = fit(&data, 0.0).unwrap();
        let oracle = svd_solution(&data);
        assert!((model.theta() - &oracle).amax() < 1e-10, "d={dim}");
    }
}

#[test]
fn fitted_gradient_vanishes() {
    let data = random_data(40, 4, 9);
    let model = fit(&data, 0.0).unwrap();
    let expansion = RiskExpansion::new(&data, model.params()).unwrap();
    assert!(expansion.gradient().amax() < 1e-12);
}

#[test]
fn five_point_removal_matches_brute_force() {
    let rows = [
        (vec![-1.0], 0.2),
        (vec![-0.4], 1.1),
        (vec![0.1], 0.7),
        (vec![0.6], 2.3),
        (vec![1.3], 1.9),
    ];
    let train = Dataset::from_xy(1, &rows).unwrap();
    let test =
        Dataset::from_xy(1, &[(vec![0.0], 1.0), (vec![0.9], 2.0), (vec![-0.7], 0.1)]).unwrap();
    let model = fit(&train, 0.0).unwrap();
    let base = risk(&test, model.params()).unwrap();
    for j in 0..rows.len() {
        // refit from scratch on the four remaining points
        let rest: Vec<_> = rows
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != j)
            .map(|(_, r)| r.clone())
            .collect();
        let sub = fit(&Dataset::from_xy(1, &rest).unwrap(), 0.0).unwrap();
        let brute = risk(&test, sub.params()).unwrap() - base;
        let fast = exact_influence(&train, j, &test).unwrap();
        assert!((fast - brute).abs() < 1e-10, "point {j}: {fast} vs {brute}");
        assert!((exact_influence_by_refit(&train, j, &test).unwrap() - brute).abs() < 1e-12);
    }
}

#[test]
fn removal_and_addition_shifts_match_refits() {
    let data = random_data(30, 3, 4);
    let model = fit(&data, 0.0).unwrap();
    for j in [0, 7, 29] {
        let shift = model.removal_shift(data.get(j).unwrap()).unwrap();
        let refit = refit_without(&data, j, 0.0).unwrap();
        assert!((model.theta() + shift - refit.theta()).amax() < 1e-10);
    }
    let extra = DataPoint::new(vec![0.5, -0.2, 0.9], 4.0).with_agent(AgentId(30), 30);
    let mut grown = data.clone();
    grown.push(extra.clone()).unwrap();
    let shift = model.addition_shift(&extra).unwrap();
    let refit = fit(&grown, 0.0).unwrap();
    assert!((model.theta() + shift - refit.theta()).amax() < 1e-10);
}

#[test]
fn risk_expansion_is_exact_for_any_shift() {
    let test = random_data(25, 2, 5);
    let model = fit(&random_data(40, 2, 6), 0.0).unwrap();
    let expansion = RiskExpansion::new(&test, model.params()).unwrap();
    let shift = DVector::from_vec(vec![0.3, -1.2, 0.7]);
    let direct = risk(&test, &model.params().shifted(&shift)).unwrap() - expansion.risk();
    assert!((expansion.change(&shift) - direct).abs() < 1e-12);
}

#[test]
fn second_order_beats_first_order_on_most_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut wins = 0;
    let instances = 500;
    for i in 0..instances {
        let dim = 1 + (i % 4);
        let train = random_data(40, dim, 1000 + i as u64);
        let test = random_data(20, dim, 5000 + i as u64);
        let j = rng.random_range(0..train.len());
        let model = fit(&train, 0.0).unwrap();
        let z = train.get(j).unwrap();
        let exact = exact_influence(&train, j, &test).unwrap();
        let first = first_order_influence(&model, z, &test).unwrap();
        let second = second_order_influence(&model, z, &test).unwrap();
        if (second - exact).abs() < (first - exact).abs() {
            wins += 1;
        }
    }
    assert!(
        wins * 10 >= instances * 9,
        "second order won {wins}/{instances}"
    );
}

#[test]
fn influence_magnitude_scales_as_one_over_n() {
    let mean_abs = |n: usize| {
        let mut total = 0.0;
        let mut count = 0.0;
        for s in 0..20 {
            let train = random_data(n, 2, 300 + s);
            let test = random_data(500, 2, 900 + s);
            for r in influence_records(&train, &test, 0.0).unwrap() {
                total += r.exact.abs();
                count += 1.0;
            }
        }
        total / count
    };
    let ratio = mean_abs(100) / mean_abs(400);
    assert!((2.8..5.7).contains(&ratio), "ratio {ratio}");
}

#[test]
fn second_order_error_is_smaller_on_average() {
    let train = random_data(200, 3, 41);
    let test = random_data(100, 3, 42);
    let recs = influence_records(&train, &test, 0.0).unwrap();
    let err = |f: fn(&dataprice_core::influence::InfluenceRecord) -> f64| {
        recs.iter().map(|r| (f(r) - r.exact).abs()).sum::<f64>()
    };
    assert!(err(|r| r.second_order) * 10.0 < err(|r| r.first_order));
}

#[test]
fn leave_one_out_needs_d_plus_two_points() {
    let train = random_data(3, 2, 1);
    let test = random_data(5, 2, 2);
    assert!(matches!(
        influence_records(&train, &test, 0.0),
        Err(Error::InsufficientData {
            needed: 4,
            found: 3
        })
    ));
}

#[test]
fn collinear_design_is_reported() {
    let rows: Vec<_> = (0..10)
        .map(|i| (vec![i as f64, 2.0 * i as f64], i as f64))
        .collect();
    let data = Dataset::from_xy(2, &rows).unwrap();
    assert!(matches!(fit(&data, 0.0), Err(Error::SingularDesign)));
    assert!(fit(&data, 1e-3).is_ok());
}
