//! Linear regression with an intercept, trained by closed-form normal equations.
//!
//! Everything lives in the augmented parameter space `θ̃ = [w; b]` of dimension
//! `d + 1`, where a point's augmented features are `x̃ = [x; 1]`. The per-point
//! loss is the squared residual `(y − w·x − b)²` with no ½ factor, so
//!
//! * `∇L(z, θ) = −2·(y − θ̃·x̃)·x̃`
//! * `H_z = 2·x̃x̃ᵀ` (constant in θ)
//! * the empirical-risk Hessian is `(2/n)·X̃ᵀX̃`.
//!
//! [`GramAccumulator`] keeps the sufficient statistics `X̃ᵀX̃` and `X̃ᵀy` so that
//! models can be refitted as points arrive without revisiting old data.

use std::collections::HashSet;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Condition number of the Gram matrix above which [`fit_auto`] adds a ridge.
pub const AUTO_RIDGE_CONDITION: f64 = 1e12;
/// Ridge used by [`fit_auto`] for ill-conditioned designs.
pub const AUTO_RIDGE: f64 = 1e-8;

/// Opaque identifier of the agent that contributed a point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct AgentId(pub u64);

impl std::fmt::Display for AgentId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One reported sample `z = (x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPoint {
    pub x: Vec<f64>,
    pub y: f64,
    pub agent_id: AgentId,
    pub arrival_index: usize,
}

impl DataPoint {
    pub fn new(x: Vec<f64>, y: f64) -> Self {
        DataPoint {
            x,
            y,
            agent_id: AgentId::default(),
            arrival_index: 0,
        }
    }

    pub fn with_agent(mut self, agent_id: AgentId, arrival_index: usize) -> Self {
        self.agent_id = agent_id;
        self.arrival_index = arrival_index;
        self
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// Features with a trailing 1 for the intercept.
    pub fn augmented(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.x.len() + 1,
            self.x.iter().copied().chain(std::iter::once(1.0)),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.y.is_finite() && self.x.iter().all(|v| v.is_finite())
    }
}

/// Ordered collection of points sharing a feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: Vec<DataPoint>,
    dim: usize,
    arrivals: HashSet<usize>,
}

impl Dataset {
    pub fn new(dim: usize) -> Self {
        Dataset {
            points: Vec::new(),
            dim,
            arrivals: HashSet::new(),
        }
    }

    /// Validates dimensions, finiteness and arrival-index uniqueness.
    pub fn from_points(dim: usize, points: Vec<DataPoint>) -> Result<Self> {
        let mut data = Dataset::new(dim);
        data.points.reserve(points.len());
        for p in points {
            data.push(p)?;
        }
        Ok(data)
    }

    /// Builds a dataset from `(x, y)` pairs; arrival indices follow slice order.
    pub fn from_xy(dim: usize, rows: &[(Vec<f64>, f64)]) -> Result<Self> {
        let points = rows
            .iter()
            .enumerate()
            .map(|(i, (x, y))| DataPoint::new(x.clone(), *y).with_agent(AgentId(i as u64), i))
            .collect();
        Dataset::from_points(dim, points)
    }

    pub fn push(&mut self, point: DataPoint) -> Result<()> {
        if point.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: point.dim(),
            });
        }
        if !point.is_finite() {
            return Err(Error::NonFinite("data point"));
        }
        if !self.arrivals.insert(point.arrival_index) {
            return Err(Error::DuplicateArrival(point.arrival_index));
        }
        self.points.push(point);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[DataPoint] {
        &self.points
    }

    pub fn iter(&self) -> std::slice::Iter<'_, DataPoint> {
        self.points.iter()
    }

    pub fn get(&self, index: usize) -> Result<&DataPoint> {
        self.points.get(index).ok_or(Error::IndexOutOfRange {
            index,
            len: self.points.len(),
        })
    }

    /// Copy of the dataset with point `index` removed (`Z_{/j}`).
    pub fn without(&self, index: usize) -> Result<Dataset> {
        self.get(index)?;
        let points = self
            .points
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != index)
            .map(|(_, p)| p.clone())
            .collect();
        Dataset::from_points(self.dim, points)
    }

    /// `n × (d+1)` augmented design matrix.
    pub fn design_matrix(&self) -> DMatrix<f64> {
        let cols = self.dim + 1;
        DMatrix::from_fn(self.points.len(), cols, |i, j| {
            if j < self.dim {
                self.points[i].x[j]
            } else {
                1.0
            }
        })
    }

    pub fn targets(&self) -> DVector<f64> {
        DVector::from_iterator(self.points.len(), self.points.iter().map(|p| p.y))
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a DataPoint;
    type IntoIter = std::slice::Iter<'a, DataPoint>;

    fn into_iter(self) -> Self::IntoIter {
        self.points.iter()
    }
}

/// Linear model parameters `θ = (w, b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl Parameters {
    pub fn zeros(dim: usize) -> Self {
        Parameters {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn augmented(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.weights.len() + 1,
            self.weights
                .iter()
                .copied()
                .chain(std::iter::once(self.bias)),
        )
    }

    pub fn from_augmented(theta: &DVector<f64>) -> Self {
        let d = theta.len() - 1;
        Parameters {
            weights: theta.rows(0, d).iter().copied().collect(),
            bias: theta[d],
        }
    }

    /// `θ + shift` for a shift in augmented space.
    pub fn shifted(&self, shift: &DVector<f64>) -> Self {
        Parameters::from_augmented(&(self.augmented() + shift))
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    /// `y − ŷ` for a point.
    pub fn residual(&self, z: &DataPoint) -> f64 {
        z.y - self.predict(&z.x)
    }
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

/// Squared residual of `z` under `params`.
pub fn loss(z: &DataPoint, params: &Parameters) -> Result<f64> {
    check_dim(params.dim(), z.dim())?;
    let r = params.residual(z);
    Ok(r * r)
}

/// Empirical risk `R(Z, θ) = (1/n) Σ L(z_i, θ)`.
pub fn risk(data: &Dataset, params: &Parameters) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_dim(params.dim(), data.dim())?;
    let total: f64 = data.iter().map(|z| params.residual(z).powi(2)).sum();
    Ok(total / data.len() as f64)
}

/// Gradient of the squared-residual loss in augmented space: `−2·r·x̃`.
pub fn loss_gradient(z: &DataPoint, params: &Parameters) -> Result<DVector<f64>> {
    check_dim(params.dim(), z.dim())?;
    let r = params.residual(z);
    Ok(z.augmented() * (-2.0 * r))
}

/// Hessian of the loss on a single point: `2·x̃x̃ᵀ`.
pub fn point_hessian(z: &DataPoint) -> DMatrix<f64> {
    let xa = z.augmented();
    &xa * xa.transpose() * 2.0
}

/// Mean of the point Hessians, `(2/n)·X̃ᵀX̃`.
pub fn empirical_hessian(data: &Dataset) -> Result<DMatrix<f64>> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut acc = GramAccumulator::new(data.dim());
    acc.extend(data.points())?;
    Ok(acc.gram() * (2.0 / data.len() as f64))
}

/// Running sums `X̃ᵀX̃` and `X̃ᵀy` over the points seen so far.
#[derive(Debug, Clone)]
pub struct GramAccumulator {
    dim: usize,
    gram: DMatrix<f64>,
    moment: DVector<f64>,
    count: usize,
}

impl GramAccumulator {
    pub fn new(dim: usize) -> Self {
        GramAccumulator {
            dim,
            gram: DMatrix::zeros(dim + 1, dim + 1),
            moment: DVector::zeros(dim + 1),
            count: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn push(&mut self, z: &DataPoint) -> Result<()> {
        check_dim(self.dim, z.dim())?;
        let xa = z.augmented();
        self.gram.ger(1.0, &xa, &xa, 1.0);
        self.moment.axpy(z.y, &xa, 1.0);
        self.count += 1;
        Ok(())
    }

    pub fn extend<'a, I>(&mut self, points: I) -> Result<()>
    where
        I: IntoIterator<Item = &'a DataPoint>,
    {
        for z in points {
            self.push(z)?;
        }
        Ok(())
    }

    /// Solves the normal equations for the accumulated points.
    pub fn fit(&self, ridge: f64) -> Result<FittedModel> {
        FittedModel::from_normal_equations(&self.gram, &self.moment, self.count, ridge)
    }
}

/// A trained model together with the factorizations influence computations need.
#[derive(Debug, Clone)]
pub struct FittedModel {
    params: Parameters,
    theta: DVector<f64>,
    hessian: Cholesky<f64, Dyn>,
    gram_inverse: DMatrix<f64>,
    n_train: usize,
    ridge: f64,
}

impl FittedModel {
    fn from_normal_equations(
        gram: &DMatrix<f64>,
        moment: &DVector<f64>,
        n: usize,
        ridge: f64,
    ) -> Result<Self> {
        if !(ridge >= 0.0 && ridge.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "ridge must be >= 0, got {ridge}"
            )));
        }
        let p = gram.nrows();
        if n < p {
            return Err(Error::InsufficientData {
                needed: p,
                found: n,
            });
        }
        let mut a = gram.clone();
        for i in 0..p - 1 {
            a[(i, i)] += ridge;
        }
        let chol = Cholesky::new(a.clone()).ok_or(Error::SingularDesign)?;
        // Rounding can let an exactly collinear design through with a tiny pivot.
        let max_diag = (0..p).map(|i| a[(i, i)]).fold(0.0_f64, f64::max);
        let min_pivot = chol
            .l_dirty()
            .diagonal()
            .iter()
            .fold(f64::INFINITY, |m, v| m.min(v * v));
        if !(min_pivot > f64::EPSILON * p as f64 * max_diag) {
            return Err(Error::SingularDesign);
        }
        let mut theta = chol.solve(moment);
        // one step of iterative refinement
        let residual = moment - &a * &theta;
        theta += chol.solve(&residual);
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularDesign);
        }
        let gram_inverse = chol.inverse();
        let hessian = Cholesky::new(a * (2.0 / n as f64)).ok_or(Error::SingularDesign)?;
        Ok(FittedModel {
            params: Parameters::from_augmented(&theta),
            theta,
            hessian,
            gram_inverse,
            n_train: n,
            ridge,
        })
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    /// Inverse of the (ridge-augmented) Gram matrix `A = X̃ᵀX̃ + λI_w`.
    pub fn gram_inverse(&self) -> &DMatrix<f64> {
        &self.gram_inverse
    }

    /// Cholesky factor of the empirical-risk Hessian `(2/n)·A`.
    pub fn hessian_factor(&self) -> &Cholesky<f64, Dyn> {
        &self.hessian
    }

    pub fn hessian(&self) -> DMatrix<f64> {
        let l = self.hessian.l();
        &l * l.transpose()
    }

    /// `H⁻¹ v`.
    pub fn hessian_solve(&self, v: &DVector<f64>) -> DVector<f64> {
        self.hessian.solve(v)
    }

    /// Leverage `h = x̃ᵀA⁻¹x̃`.
    pub fn leverage(&self, z: &DataPoint) -> Result<f64> {
        check_dim(self.dim(), z.dim())?;
        let xa = z.augmented();
        Ok(xa.dot(&(&self.gram_inverse * &xa)))
    }

    /// Exact `θ̂_{/z} − θ̂` for a training point, via a Sherman–Morrison downdate.
    pub fn removal_shift(&self, z: &DataPoint) -> Result<DVector<f64>> {
        check_dim(self.dim(), z.dim())?;
        let xa = z.augmented();
        let ax = &self.gram_inverse * &xa;
        let h = xa.dot(&ax);
        let denom = 1.0 - h;
        if !(denom > 1e-12) {
            return Err(Error::SingularDesign);
        }
        let e = z.y - xa.dot(&self.theta);
        Ok(ax * (-e / denom))
    }

    /// Exact `θ̂_{∪z} − θ̂` for a new point, via a Sherman–Morrison update.
    pub fn addition_shift(&self, z: &DataPoint) -> Result<DVector<f64>> {
        check_dim(self.dim(), z.dim())?;
        let xa = z.augmented();
        let ax = &self.gram_inverse * &xa;
        let h = xa.dot(&ax);
        let e = z.y - xa.dot(&self.theta);
        Ok(ax * (e / (1.0 + h)))
    }
}

/// Fits `θ̂ = argmin R(Z, θ) + (ridge/n)·‖w‖²` by normal equations.
pub fn fit(data: &Dataset, ridge: f64) -> Result<FittedModel> {
    let needed = data.dim() + 1;
    if data.len() < needed {
        return Err(Error::InsufficientData {
            needed,
            found: data.len(),
        });
    }
    let mut acc = GramAccumulator::new(data.dim());
    acc.extend(data.points())?;
    acc.fit(ridge)
}

/// Spectral condition number of the augmented Gram matrix.
pub fn gram_condition(data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut acc = GramAccumulator::new(data.dim());
    acc.extend(data.points())?;
    let eig = acc.gram().clone().symmetric_eigenvalues();
    let max = eig.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    Ok(if min > 0.0 { max / min } else { f64::INFINITY })
}

/// Fits with no ridge unless the design is ill-conditioned, then with [`AUTO_RIDGE`].
pub fn fit_auto(data: &Dataset) -> Result<FittedModel> {
    let ridge = if gram_condition(data)? > AUTO_RIDGE_CONDITION {
        AUTO_RIDGE
    } else {
        0.0
    };
    fit(data, ridge)
}

/// Exact quadratic expansion of the empirical risk of a dataset around `θ`.
///
/// For squared loss `R(θ + Δ) − R(θ) = gᵀΔ + ΔᵀSΔ` holds exactly, with `g` the
/// mean loss gradient and `S` the mean of `x̃x̃ᵀ`. Evaluating the change this way
/// avoids cancellation between two nearly equal risks.
#[derive(Debug, Clone)]
pub struct RiskExpansion {
    risk: f64,
    gradient: DVector<f64>,
    second_moment: DMatrix<f64>,
}

impl RiskExpansion {
    pub fn new(data: &Dataset, params: &Parameters) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        check_dim(params.dim(), data.dim())?;
        let p = data.dim() + 1;
        let n = data.len() as f64;
        let mut gradient = DVector::zeros(p);
        let mut second_moment = DMatrix::zeros(p, p);
        let mut total = 0.0;
        for z in data {
            let xa = z.augmented();
            let r = params.residual(z);
            total += r * r;
            gradient.axpy(-2.0 * r, &xa, 1.0);
            second_moment.ger(1.0, &xa, &xa, 1.0);
        }
        Ok(RiskExpansion {
            risk: total / n,
            gradient: gradient / n,
            second_moment: second_moment / n,
        })
    }

    pub fn risk(&self) -> f64 {
        self.risk
    }

    pub fn gradient(&self) -> &DVector<f64> {
        &self.gradient
    }

    /// `R(θ + Δ) − R(θ)`.
    pub fn change(&self, shift: &DVector<f64>) -> f64 {
        self.gradient.dot(shift) + shift.dot(&(&self.second_moment * shift))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line() -> Dataset {
        Dataset::from_xy(1, &[(vec![1.0], 3.0), (vec![2.0], 5.0), (vec![3.0], 7.0)]).unwrap()
    }

    #[test]
    fn fits_exact_line() {
        let model = fit(&line(), 0.0).unwrap();
        assert!((model.params().weights[0] - 2.0).abs() < 1e-12);
        assert!((model.params().bias - 1.0).abs() < 1e-12);
        assert!(risk(&line(), model.params()).unwrap() < 1e-24);
    }

    #[test]
    fn constant_target() {
        let rows: Vec<_> = (0..5).map(|i| (vec![i as f64 * 0.7 - 1.0], 4.0)).collect();
        let data = Dataset::from_xy(1, &rows).unwrap();
        let model = fit(&data, 0.0).unwrap();
        assert!(model.params().weights[0].abs() < 1e-12);
        assert!((model.params().bias - 4.0).abs() < 1e-12);
    }

    #[test]
    fn loss_examples() {
        let p = Parameters {
            weights: vec![1.0],
            bias: 0.0,
        };
        assert_eq!(loss(&DataPoint::new(vec![0.0], 2.0), &p).unwrap(), 4.0);
        let model = fit(&line(), 0.0).unwrap();
        assert!(loss(&DataPoint::new(vec![5.0], 11.0), model.params()).unwrap() < 1e-20);
    }

    #[test]
    fn risk_is_mean_loss() {
        let p = Parameters {
            weights: vec![0.0],
            bias: 0.0,
        };
        let data = Dataset::from_xy(1, &[(vec![0.0], 2f64.sqrt()), (vec![1.0], 2.0)]).unwrap();
        assert!((risk(&data, &p).unwrap() - 3.0).abs() < 1e-12);
        assert!(matches!(
            risk(&Dataset::new(1), &p),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn gradient_examples() {
        let zero = Parameters::zeros(1);
        let g = loss_gradient(&DataPoint::new(vec![1.0], 0.0), &zero).unwrap();
        assert_eq!(g.as_slice(), &[0.0, 0.0]);
        let mismatch = loss_gradient(&DataPoint::new(vec![1.0, 2.0], 0.0), &zero);
        assert!(matches!(mismatch, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn point_hessian_examples() {
        let h0 = point_hessian(&DataPoint::new(vec![0.0], 1.0));
        assert_eq!(h0, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 2.0]));
        let h1 = point_hessian(&DataPoint::new(vec![1.0], -3.0));
        assert_eq!(h1, DMatrix::from_element(2, 2, 2.0));
    }

    #[test]
    fn empirical_hessian_single_and_duplicate() {
        let z = DataPoint::new(vec![0.3, -1.2], 0.5);
        let one = Dataset::from_points(2, vec![z.clone()]).unwrap();
        assert!((empirical_hessian(&one).unwrap() - point_hessian(&z)).norm() < 1e-15);
        let two =
            Dataset::from_points(2, vec![z.clone(), z.clone().with_agent(AgentId(1), 1)]).unwrap();
        assert!((empirical_hessian(&two).unwrap() - point_hessian(&z)).norm() < 1e-15);
    }

    #[test]
    fn collinear_design_needs_ridge() {
        let rows: Vec<_> = (0..6)
            .map(|i| {
                let v = i as f64;
                (vec![v, 2.0 * v], v + 1.0)
            })
            .collect();
        let data = Dataset::from_xy(2, &rows).unwrap();
        assert!(matches!(fit(&data, 0.0), Err(Error::SingularDesign)));
        assert!(fit(&data, 1e-8).is_ok());
        assert!(fit_auto(&data).is_ok());
    }

    #[test]
    fn too_few_points() {
        let data = Dataset::from_xy(2, &[(vec![1.0, 2.0], 1.0), (vec![0.0, 1.0], 0.0)]).unwrap();
        assert!(matches!(
            fit(&data, 0.0),
            Err(Error::InsufficientData {
                needed: 3,
                found: 2
            })
        ));
    }

    #[test]
    fn dataset_rejects_bad_points() {
        let mut data = Dataset::new(1);
        assert!(data.push(DataPoint::new(vec![f64::NAN], 1.0)).is_err());
        assert!(data.push(DataPoint::new(vec![1.0, 2.0], 1.0)).is_err());
        data.push(DataPoint::new(vec![1.0], 1.0)).unwrap();
        assert!(matches!(
            data.push(DataPoint::new(vec![2.0], 1.0)),
            Err(Error::DuplicateArrival(0))
        ));
    }

    #[test]
    fn removal_shift_matches_refit() {
        let rows: Vec<_> = (0..8)
            .map(|i| {
                let v = (i as f64 * 1.37).sin();
                (vec![v], 0.5 * v - 0.2 + (i as f64 * 2.1).cos())
            })
            .collect();
        let data = Dataset::from_xy(1, &rows).unwrap();
        let model = fit(&data, 0.0).unwrap();
        for j in 0..data.len() {
            let shift = model.removal_shift(data.get(j).unwrap()).unwrap();
            let refit = fit(&data.without(j).unwrap(), 0.0).unwrap();
            let direct = refit.theta() - model.theta();
            assert!((shift - direct).norm() < 1e-12);
        }
    }

    #[test]
    fn risk_expansion_is_exact() {
        let data = line();
        let p = Parameters {
            weights: vec![0.4],
            bias: -0.3,
        };
        let exp = RiskExpansion::new(&data, &p).unwrap();
        let shift = DVector::from_vec(vec![0.25, -1.5]);
        let direct = risk(&data, &p.shifted(&shift)).unwrap() - risk(&data, &p).unwrap();
        assert!((exp.change(&shift) - direct).abs() < 1e-12);
    }
}
