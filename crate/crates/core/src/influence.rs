//! Influence of a training point on a test set: exact leave-one-out, and the
//! first- and second-order up-weighting approximations.
//!
//! Sign convention: influence is `R(T, θ̂_{/j}) − R(T, θ̂)`, so a positive value
//! means the point helped. Approximations against a test set are the mean of
//! the per-test-point expressions, matching the definition of `R(T, ·)`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::regression::{
    fit, loss_gradient, point_hessian, DataPoint, Dataset, FittedModel, GramAccumulator,
    Parameters, RiskExpansion,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ApproximationOrder {
    First,
    Second,
}

impl std::fmt::Display for ApproximationOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ApproximationOrder::First => write!(f, "first"),
            ApproximationOrder::Second => write!(f, "second"),
        }
    }
}

/// Influence of one training point computed three ways.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfluenceRecord {
    pub point_id: usize,
    pub exact: f64,
    pub first_order: f64,
    pub second_order: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproximationErrorReport {
    pub l1: f64,
    pub relative_l1: f64,
    pub l2: f64,
    pub n_train: usize,
    pub n_test: usize,
}

fn check_loo_size(train: &Dataset) -> Result<()> {
    let needed = train.dim() + 2;
    if train.len() < needed {
        return Err(Error::InsufficientData {
            needed,
            found: train.len(),
        });
    }
    Ok(())
}

fn check_test(model: &FittedModel, test: &Dataset) -> Result<()> {
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if test.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: test.dim(),
        });
    }
    Ok(())
}

/// Exact influence of a training point under an already fitted model, using
/// the rank-one downdate of the Gram inverse.
pub fn removal_influence(model: &FittedModel, z: &DataPoint, test: &RiskExpansion) -> Result<f64> {
    let shift = model.removal_shift(z)?;
    Ok(test.change(&shift))
}

/// `R(T, θ̂_{/j}) − R(T, θ̂)`, leave-one-out by Sherman–Morrison downdate.
pub fn exact_influence(train: &Dataset, j: usize, test: &Dataset) -> Result<f64> {
    check_loo_size(train)?;
    let z = train.get(j)?;
    let model = fit(train, 0.0)?;
    check_test(&model, test)?;
    let expansion = RiskExpansion::new(test, model.params())?;
    removal_influence(&model, z, &expansion)
}

/// Same quantity as [`exact_influence`] but refitting from scratch without `z_j`.
pub fn exact_influence_by_refit(train: &Dataset, j: usize, test: &Dataset) -> Result<f64> {
    check_loo_size(train)?;
    train.get(j)?;
    let full = fit(train, 0.0)?;
    check_test(&full, test)?;
    let loo = refit_without(train, j, 0.0)?;
    let expansion = RiskExpansion::new(test, full.params())?;
    Ok(expansion.change(&(loo.theta() - full.theta())))
}

/// Fits on every point of `train` except `j`, without copying the dataset.
pub fn refit_without(train: &Dataset, j: usize, ridge: f64) -> Result<FittedModel> {
    let mut acc = GramAccumulator::new(train.dim());
    acc.extend(
        train
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != j)
            .map(|(_, z)| z),
    )?;
    acc.fit(ridge)
}

/// `(1/n)·∇L(z_test)ᵀ H⁻¹ ∇L(z_j)`, averaged over the test set.
pub fn first_order_influence(model: &FittedModel, z_j: &DataPoint, test: &Dataset) -> Result<f64> {
    check_test(model, test)?;
    let n = model.n_train() as f64;
    let direction = model.hessian_solve(&loss_gradient(z_j, model.params())?) / n;
    let mut total = 0.0;
    for t in test {
        total += loss_gradient(t, model.params())?.dot(&direction);
    }
    Ok(total / test.len() as f64)
}

/// Up-weighting parameter shift with its second-order correction:
/// `∂θ_j = (1/n)H⁻¹∇L + (1/n²)H⁻¹H_jH⁻¹∇L`.
pub fn second_order_param_shift(model: &FittedModel, z_j: &DataPoint) -> Result<DVector<f64>> {
    let (first, second) = shift_terms(model, z_j)?;
    Ok(first + second)
}

/// The two terms of [`second_order_param_shift`] separately.
pub fn shift_terms(model: &FittedModel, z_j: &DataPoint) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = model.n_train() as f64;
    let h_inv_grad = model.hessian_solve(&loss_gradient(z_j, model.params())?);
    let curvature = point_hessian(z_j) * &h_inv_grad;
    let second = model.hessian_solve(&curvature) / (n * n);
    Ok((h_inv_grad / n, second))
}

/// `(∇L(z_test) + ½H_{z_test}·Δ)·Δ` averaged over the test set.
///
/// Each test point's gradient and Hessian are formed explicitly.
pub fn taylor_test_change(
    params: &Parameters,
    shift: &DVector<f64>,
    test: &Dataset,
) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for t in test {
        let grad = loss_gradient(t, params)?;
        let hess = point_hessian(t);
        total += (grad + hess * shift * 0.5).dot(shift);
    }
    Ok(total / test.len() as f64)
}

/// Second-order influence: the test-loss expansion evaluated at `∂θ_j`.
pub fn second_order_influence(model: &FittedModel, z_j: &DataPoint, test: &Dataset) -> Result<f64> {
    check_test(model, test)?;
    let shift = second_order_param_shift(model, z_j)?;
    taylor_test_change(model.params(), &shift, test)
}

/// All three influences for every training point.
pub fn influence_records(
    train: &Dataset,
    test: &Dataset,
    ridge: f64,
) -> Result<Vec<InfluenceRecord>> {
    check_loo_size(train)?;
    let model = fit(train, ridge)?;
    check_test(&model, test)?;
    let expansion = RiskExpansion::new(test, model.params())?;
    train
        .iter()
        .enumerate()
        .map(|(i, z)| {
            Ok(InfluenceRecord {
                point_id: i,
                exact: removal_influence(&model, z, &expansion)?,
                first_order: first_order_influence(&model, z, test)?,
                second_order: second_order_influence(&model, z, test)?,
            })
        })
        .collect()
}

/// L1, relative L1 (ratio of means) and L2 (mean square) between two influence vectors.
pub fn error_report(exact: &[f64], approx: &[f64], n_test: usize) -> ApproximationErrorReport {
    assert_eq!(
        exact.len(),
        approx.len(),
        "influence vectors differ in length"
    );
    let n = exact.len().max(1) as f64;
    let mut abs_err = 0.0;
    let mut sq_err = 0.0;
    let mut abs_exact = 0.0;
    for (e, a) in exact.iter().zip(approx) {
        let d = a - e;
        abs_err += d.abs();
        sq_err += d * d;
        abs_exact += e.abs();
    }
    let l1 = abs_err / n;
    let mean_exact = abs_exact / n;
    ApproximationErrorReport {
        l1,
        relative_l1: if mean_exact > 0.0 {
            l1 / mean_exact
        } else {
            0.0
        },
        l2: sq_err / n,
        n_train: exact.len(),
        n_test,
    }
}

pub fn approximation_errors(
    train: &Dataset,
    test: &Dataset,
    order: ApproximationOrder,
    ridge: f64,
) -> Result<ApproximationErrorReport> {
    let records = influence_records(train, test, ridge)?;
    Ok(report_for(&records, order, test.len()))
}

/// Error report for one approximation order from precomputed records.
pub fn report_for(
    records: &[InfluenceRecord],
    order: ApproximationOrder,
    n_test: usize,
) -> ApproximationErrorReport {
    let exact: Vec<f64> = records.iter().map(|r| r.exact).collect();
    let approx: Vec<f64> = records
        .iter()
        .map(|r| match order {
            ApproximationOrder::First => r.first_order,
            ApproximationOrder::Second => r.second_order,
        })
        .collect();
    error_report(&exact, &approx, n_test)
}
