//! Synthetic worlds and agent populations feeding the batch mechanism.
//!
//! Truthful agents report `y = w·x + b + N(0, σ²)`. Heuristic agents report
//! the same x-marginal with `y` uniform on a fixed interval, independent of
//! `x`. The best linear fit to the heuristic distribution is then the constant
//! interval midpoint, which gives `R₁₁`, `R₂₂` and `r` in closed form.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::data_io::{Cell, ResultTable};
use crate::error::{Error, Result};
use crate::mechanism::{
    initialize_model, run_mechanism_with, Interval, MechanismConfig, PaymentLedger, TestReference,
};
use crate::regression::{AgentId, DataPoint, Dataset, GramAccumulator, Parameters, RiskExpansion};
use crate::stats::{mean, quadratic_fit, quadratic_peak, std_dev};
use crate::theory::MixtureParams;

/// Derives an independent seed for trial `i` of a run seeded with `seed`.
pub fn trial_seed(seed: u64, i: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ (i.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldModel {
    pub true_params: Parameters,
    pub noise_std: f64,
    pub x_bounds: Interval,
    pub heuristic_y_bounds: Interval,
}

impl WorldModel {
    /// A one-dimensional world with the default bounds `x ∈ [−1, 1]`, heuristic `y ∈ [−3, 3]`.
    pub fn linear(slope: f64, bias: f64) -> Self {
        WorldModel {
            true_params: Parameters {
                weights: vec![slope],
                bias,
            },
            noise_std: 1.0,
            x_bounds: Interval { lo: -1.0, hi: 1.0 },
            heuristic_y_bounds: Interval { lo: -3.0, hi: 3.0 },
        }
    }

    pub fn from_angle(angle: f64, bias: f64) -> Self {
        WorldModel::linear(angle.tan(), bias)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "noise std must be > 0, got {}",
                self.noise_std
            )));
        }
        self.x_bounds.validate()?;
        self.heuristic_y_bounds.validate()
    }

    pub fn dim(&self) -> usize {
        self.true_params.dim()
    }

    /// `R₂₂`: risk of the true model on truthful reports.
    pub fn truthful_inherent_risk(&self) -> f64 {
        self.noise_std * self.noise_std
    }

    /// `R₁₁`: variance of the uniform heuristic targets.
    pub fn heuristic_inherent_risk(&self) -> f64 {
        self.heuristic_y_bounds.width().powi(2) / 12.0
    }

    /// `r = E[(M₂(x) − M₁(x))²]` with `M₁` the constant heuristic midpoint.
    pub fn model_gap(&self) -> f64 {
        let var_x = self.x_bounds.width().powi(2) / 12.0;
        let mu_x = self.x_bounds.midpoint();
        let w = &self.true_params.weights;
        let offset = mu_x * w.iter().sum::<f64>() + self.true_params.bias
            - self.heuristic_y_bounds.midpoint();
        var_x * w.iter().map(|v| v * v).sum::<f64>() + offset * offset
    }

    /// Mixture theory inputs for `q` initialization points and `n` reports with truthful fraction `p`.
    pub fn mixture_params(&self, q: usize, n: usize, p: f64) -> MixtureParams {
        MixtureParams {
            q: q as f64,
            n: n as f64,
            b: 1.0,
            r: self.model_gap(),
            r11: self.heuristic_inherent_risk(),
            r22: self.truthful_inherent_risk(),
            p,
        }
    }

    fn sample_x<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.dim()).map(|_| self.x_bounds.sample(rng)).collect()
    }
}

/// Angle uniform in `[−π/2, π/2]`, slope `tan(angle)`, bias `N(0, 1)`, unit noise.
pub fn generate_world(seed: u64) -> WorldModel {
    generate_world_dim(1, seed)
}

/// As [`generate_world`] with one independent angle per feature.
pub fn generate_world_dim(dim: usize, seed: u64) -> WorldModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half_pi = std::f64::consts::FRAC_PI_2;
    let weights = (0..dim)
        .map(|_| rng.random_range(-half_pi..half_pi).tan())
        .collect::<Vec<_>>();
    let bias: f64 = StandardNormal.sample(&mut rng);
    let mut world = WorldModel::linear(0.0, bias);
    world.true_params.weights = weights;
    world
}

pub fn truthful_report<R: Rng + ?Sized>(world: &WorldModel, rng: &mut R) -> DataPoint {
    let x = world.sample_x(rng);
    let noise: f64 = StandardNormal.sample(rng);
    let y = world.true_params.predict(&x) + world.noise_std * noise;
    DataPoint::new(x, y)
}

pub fn heuristic_report<R: Rng + ?Sized>(world: &WorldModel, rng: &mut R) -> DataPoint {
    let x = world.sample_x(rng);
    let y = world.heuristic_y_bounds.sample(rng);
    DataPoint::new(x, y)
}

/// A truthful observation with extra Gaussian error `δ ~ N(0, delta_std²)` on `y`.
pub fn perturbed_report<R: Rng + ?Sized>(
    world: &WorldModel,
    delta_std: f64,
    rng: &mut R,
) -> DataPoint {
    let mut z = truthful_report(world, rng);
    let delta: f64 = StandardNormal.sample(rng);
    z.y += delta_std * delta;
    z
}

/// `n` truthful reports as a dataset with sequential agent ids.
pub fn truthful_dataset(world: &WorldModel, n: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Dataset::new(world.dim());
    for i in 0..n {
        data.push(truthful_report(world, &mut rng).with_agent(AgentId(i as u64), i))?;
    }
    Ok(data)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    Truthful,
    Heuristic,
    Perturbed { delta_std: f64 },
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Truthful => "truthful",
            Strategy::Heuristic => "heuristic",
            Strategy::Perturbed { .. } => "perturbed",
        }
    }

    pub fn report<R: Rng + ?Sized>(&self, world: &WorldModel, rng: &mut R) -> DataPoint {
        match *self {
            Strategy::Truthful => truthful_report(world, rng),
            Strategy::Heuristic => heuristic_report(world, rng),
            Strategy::Perturbed { delta_std } => perturbed_report(world, delta_std, rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentProfile {
    pub agent_id: AgentId,
    pub strategy: Strategy,
    pub effort: f64,
    pub opt_in: bool,
}

impl AgentProfile {
    /// Heuristic agents pay no effort; everyone else pays `effort_cost`.
    pub fn new(agent_id: AgentId, strategy: Strategy, effort_cost: f64) -> Self {
        let effort = match strategy {
            Strategy::Heuristic => 0.0,
            _ => effort_cost,
        };
        AgentProfile {
            agent_id,
            strategy,
            effort,
            opt_in: true,
        }
    }
}

/// `round(p·n)` truthful agents followed by heuristic ones, ids `0..n`.
pub fn population(n_agents: usize, p_truthful: f64, effort_cost: f64) -> Result<Vec<AgentProfile>> {
    if !(0.0..=1.0).contains(&p_truthful) {
        return Err(Error::InvalidConfig(format!(
            "truthful fraction must lie in [0, 1], got {p_truthful}"
        )));
    }
    let n_truthful = (p_truthful * n_agents as f64).round() as usize;
    Ok((0..n_agents)
        .map(|i| {
            let s = if i < n_truthful {
                Strategy::Truthful
            } else {
                Strategy::Heuristic
            };
            AgentProfile::new(AgentId(i as u64), s, effort_cost)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestMode {
    /// A fresh truthful test set of the given size.
    Independent { size: usize },
    /// The collected reports serve as the test set.
    FromReports,
}

#[derive(Debug, Clone)]
pub struct SimulationResult {
    /// Agents that took part, in id order.
    pub profiles: Vec<AgentProfile>,
    pub ledger: PaymentLedger,
}

impl SimulationResult {
    pub fn payment_of(&self, id: AgentId) -> Option<f64> {
        self.ledger
            .entries
            .iter()
            .find(|e| e.agent_id == id)
            .map(|e| e.payment)
    }

    fn payments_by_id(&self) -> Vec<f64> {
        let mut out = vec![f64::NAN; self.profiles.len()];
        let index: std::collections::HashMap<AgentId, usize> = self
            .profiles
            .iter()
            .enumerate()
            .map(|(i, p)| (p.agent_id, i))
            .collect();
        for e in &self.ledger.entries {
            out[index[&e.agent_id]] = e.payment;
        }
        out
    }

    /// Mean payment over agents using a strategy with this name.
    pub fn mean_payment(&self, strategy: &str) -> Option<f64> {
        let pay = self.payments_by_id();
        let v: Vec<f64> = self
            .profiles
            .iter()
            .zip(&pay)
            .filter(|(p, _)| p.strategy.name() == strategy)
            .map(|(_, &x)| x)
            .collect();
        (!v.is_empty()).then(|| mean(&v))
    }

    pub fn total_payout(&self) -> f64 {
        self.ledger.totals.sum_payments
    }

    pub fn to_table(&self) -> ResultTable {
        let pay = self.payments_by_id();
        let mut t = ResultTable::new(&["agent_id", "strategy", "effort", "payment", "net"]);
        for (p, &x) in self.profiles.iter().zip(&pay) {
            t.push_row(vec![
                Cell::Int(p.agent_id.0 as i64),
                Cell::Text(p.strategy.name().into()),
                Cell::Float(p.effort),
                Cell::Float(x),
                Cell::Float(x - p.effort),
            ]);
        }
        t
    }
}

/// Runs the mechanism on the opted-in agents of `profiles`.
///
/// The trial seed drives the arrival order, the reports, the test set and the
/// initialization points; `config.init_seed` is ignored.
pub fn simulate_agents(
    profiles: &[AgentProfile],
    world: &WorldModel,
    config: &MechanismConfig,
    test_mode: TestMode,
    seed: u64,
) -> Result<SimulationResult> {
    world.validate()?;
    let mut active: Vec<AgentProfile> = profiles.iter().filter(|p| p.opt_in).cloned().collect();
    if active.is_empty() {
        return Err(Error::EmptyStream);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..active.len()).collect();
    order.shuffle(&mut rng);
    let stream: Vec<DataPoint> = order
        .iter()
        .enumerate()
        .map(|(arrival, &i)| {
            let p = &active[i];
            p.strategy
                .report(world, &mut rng)
                .with_agent(p.agent_id, arrival)
        })
        .collect();

    let test = match test_mode {
        TestMode::Independent { size } => {
            if size == 0 {
                return Err(Error::EmptyDataset);
            }
            let mut t = Dataset::new(world.dim());
            for i in 0..size {
                t.push(truthful_report(world, &mut rng).with_agent(AgentId(i as u64), i))?;
            }
            Some(t)
        }
        TestMode::FromReports => None,
    };
    let init = initialize_model(
        config.init_count,
        world.dim(),
        config.init_x_bounds,
        config.init_y_bounds,
        rng.random(),
    )?;
    let reference = match &test {
        Some(t) => TestReference::Fixed(t),
        None => TestReference::ReportPool,
    };
    let ledger = run_mechanism_with(&init, &stream, reference, config)?;
    active.sort_by_key(|p| p.agent_id);
    Ok(SimulationResult {
        profiles: active,
        ledger,
    })
}

/// Population of `n_agents` with truthful fraction `p_truthful`, arriving in random order.
pub fn simulate_population(
    n_agents: usize,
    p_truthful: f64,
    world: &WorldModel,
    config: &MechanismConfig,
    test_mode: TestMode,
    seed: u64,
) -> Result<SimulationResult> {
    let profiles = population(n_agents, p_truthful, config.effort_cost)?;
    simulate_agents(&profiles, world, config, test_mode, seed)
}

#[derive(Debug, Clone)]
pub struct OptOutOutcome {
    pub first: SimulationResult,
    pub second: SimulationResult,
    pub left: Vec<AgentId>,
}

impl OptOutOutcome {
    /// First-round payments to the agents that did not leave.
    pub fn payout_to_stayers_before(&self) -> f64 {
        self.first
            .ledger
            .entries
            .iter()
            .filter(|e| !self.left.contains(&e.agent_id))
            .map(|e| e.payment)
            .sum()
    }
}

/// One round, then every strategy whose mean net payment is negative opts out
/// and the remaining agents play a second round under the same seed.
pub fn opt_out_round(
    profiles: &[AgentProfile],
    world: &WorldModel,
    config: &MechanismConfig,
    test_mode: TestMode,
    seed: u64,
) -> Result<OptOutOutcome> {
    let first = simulate_agents(profiles, world, config, test_mode, seed)?;
    let mut next = profiles.to_vec();
    let mut left = Vec::new();
    for p in next.iter_mut().filter(|p| p.opt_in) {
        let expected = first.mean_payment(p.strategy.name()).unwrap_or(0.0);
        if expected - p.effort < 0.0 {
            p.opt_in = false;
            left.push(p.agent_id);
        }
    }
    let second = if left.is_empty() {
        first.clone()
    } else {
        simulate_agents(&next, world, config, test_mode, seed)?
    };
    Ok(OptOutOutcome {
        first,
        second,
        left,
    })
}

#[derive(Debug, Clone)]
pub struct ThresholdSweep {
    /// `(p, mean truthful − heuristic payment, standard error)` per grid point.
    pub rows: Vec<(f64, f64, f64)>,
    /// Interpolated p where the mean difference first turns positive.
    pub flip: Option<f64>,
}

impl ThresholdSweep {
    pub fn to_table(&self) -> ResultTable {
        let mut t = ResultTable::new(&["p", "mean_difference", "std_error"]);
        for &(p, d, s) in &self.rows {
            t.push_row(vec![Cell::Float(p), Cell::Float(d), Cell::Float(s)]);
        }
        t
    }
}

/// Mean truthful-minus-heuristic payment across `trials` seeds for each `p`.
/// Grid points without both strategies present are skipped.
pub fn threshold_sweep(
    n_agents: usize,
    p_grid: &[f64],
    world: &WorldModel,
    config: &MechanismConfig,
    test_mode: TestMode,
    trials: usize,
    seed: u64,
) -> Result<ThresholdSweep> {
    if trials == 0 {
        return Err(Error::InvalidConfig("need at least one trial".into()));
    }
    let mut rows = Vec::new();
    for (gi, &p) in p_grid.iter().enumerate() {
        let diffs = (0..trials)
            .into_par_iter()
            .map(|t| {
                let s = trial_seed(seed, (gi * trials + t) as u64);
                let res = simulate_population(n_agents, p, world, config, test_mode, s)?;
                Ok(
                    match (res.mean_payment("truthful"), res.mean_payment("heuristic")) {
                        (Some(a), Some(b)) => Some(a - b),
                        _ => None,
                    },
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let diffs: Vec<f64> = diffs.into_iter().flatten().collect();
        if diffs.is_empty() {
            continue;
        }
        let se = if diffs.len() > 1 {
            std_dev(&diffs) / (diffs.len() as f64).sqrt()
        } else {
            f64::NAN
        };
        rows.push((p, mean(&diffs), se));
    }
    let flip = rows.windows(2).find_map(|w| {
        let ((p0, d0, _), (p1, d1, _)) = (w[0], w[1]);
        (d0 <= 0.0 && d1 > 0.0).then(|| p0 + (p1 - p0) * (-d0) / (d1 - d0))
    });
    Ok(ThresholdSweep { rows, flip })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestResponseConfig {
    pub n_others: usize,
    pub deviation_grid: Vec<f64>,
    pub trials: usize,
    pub test_size: usize,
}

impl Default for BestResponseConfig {
    fn default() -> Self {
        BestResponseConfig {
            n_others: 100,
            deviation_grid: (-8..=8).map(|i| i as f64 * 0.25).collect(),
            trials: 1000,
            test_size: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestResponse {
    pub deviations: Vec<f64>,
    pub mean_influence: Vec<f64>,
    pub std_error: Vec<f64>,
    /// Grid deviation with the largest mean influence.
    pub argmax: f64,
    /// Vertex of the quadratic fitted to the mean influence curve.
    pub fitted_peak: Option<f64>,
}

impl BestResponse {
    pub fn influence_at(&self, c: f64) -> Option<f64> {
        self.deviations
            .iter()
            .position(|&d| (d - c).abs() < 1e-12)
            .map(|i| self.mean_influence[i])
    }

    pub fn to_table(&self) -> ResultTable {
        let mut t = ResultTable::new(&["deviation", "mean_influence", "std_error"]);
        for i in 0..self.deviations.len() {
            t.push_row(vec![
                Cell::Float(self.deviations[i]),
                Cell::Float(self.mean_influence[i]),
                Cell::Float(self.std_error[i]),
            ]);
        }
        t
    }
}

/// Expected influence of one agent who observes a truthful point and reports
/// `y_observed + c`, for every `c` in the grid.
///
/// Each trial draws the agent's observation, `n_others` truthful reports and a
/// truthful test set; all deviations share those draws. Influence is the exact
/// test-risk drop from adding the report to the model fitted on the others.
pub fn best_response_check(
    world: &WorldModel,
    config: &BestResponseConfig,
    seed: u64,
) -> Result<BestResponse> {
    world.validate()?;
    let d = world.dim();
    if config.n_others < d + 1 {
        return Err(Error::Underdetermined(format!(
            "{} other reports cannot determine a {}-parameter model",
            config.n_others,
            d + 1
        )));
    }
    if config.deviation_grid.is_empty() || config.trials == 0 || config.test_size == 0 {
        return Err(Error::InvalidConfig(
            "best response needs a deviation grid, trials and a test set".into(),
        ));
    }
    let k = config.deviation_grid.len();
    let per_trial = (0..config.trials)
        .into_par_iter()
        .map(|t| -> Result<Vec<f64>> {
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(seed, t as u64));
            let observed = truthful_report(world, &mut rng);
            let mut acc = GramAccumulator::new(d);
            for _ in 0..config.n_others {
                acc.push(&truthful_report(world, &mut rng))?;
            }
            let model = acc.fit(0.0)?;
            let mut test = Dataset::new(d);
            for i in 0..config.test_size {
                test.push(truthful_report(world, &mut rng).with_agent(AgentId(i as u64), i))?;
            }
            let expansion = RiskExpansion::new(&test, model.params())?;
            config
                .deviation_grid
                .iter()
                .map(|&c| {
                    let mut z = observed.clone();
                    z.y += c;
                    Ok(-expansion.change(&model.addition_shift(&z)?))
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut mean_influence = vec![0.0; k];
    let mut std_error = vec![0.0; k];
    for j in 0..k {
        let col: Vec<f64> = per_trial.iter().map(|r| r[j]).collect();
        mean_influence[j] = mean(&col);
        std_error[j] = if col.len() > 1 {
            std_dev(&col) / (col.len() as f64).sqrt()
        } else {
            f64::NAN
        };
    }
    let best = (0..k)
        .max_by(|&a, &b| mean_influence[a].total_cmp(&mean_influence[b]))
        .expect("non-empty grid");
    let fitted_peak =
        quadratic_fit(&config.deviation_grid, &mean_influence).and_then(quadratic_peak);
    Ok(BestResponse {
        deviations: config.deviation_grid.clone(),
        mean_influence,
        std_error,
        argmax: config.deviation_grid[best],
        fitted_peak,
    })
}
