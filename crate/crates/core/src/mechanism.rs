//! Sequential batch payment mechanism.
//!
//! Reports arrive in order and are processed in batches of `b`. The model is
//! seeded with `Q` points drawn uniformly inside fixed bounds (a knowledge-less
//! prior), and those points stay in the training set for the whole run. Each
//! batch triggers one refit, after which every point of the batch is scored:
//!
//! * **M-Inclusive** scores against the model that already contains the batch,
//!   as if the point were removed.
//! * **M-Exclusive** scores against the previous model, as if the point were
//!   added on its own.
//!
//! With `b = 1` and exact scoring both modes coincide and the scores telescope
//! to `R(T, θ̂_init) − R(T, θ̂_final)`.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data_io::{Cell, ResultTable};
use crate::error::{Error, Result};
use crate::influence::shift_terms;
use crate::regression::{
    loss_gradient, risk, AgentId, DataPoint, Dataset, FittedModel, GramAccumulator, Parameters,
    RiskExpansion,
};
use crate::theory::MixtureParams;

/// Closed real interval `[lo, hi]` with `lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        let iv = Interval { lo, hi };
        iv.validate()?;
        Ok(iv)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "degenerate interval [{}, {}]",
                self.lo, self.hi
            )))
        }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        rng.random_range(self.lo..self.hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Inclusive,
    Exclusive,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::Inclusive => write!(f, "inclusive"),
            Mode::Exclusive => write!(f, "exclusive"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Normalization {
    None,
    /// Divide raw scores by the closed-form `D_inc(b)` or `D_exc(b)`.
    ClosedForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InfluenceMethod {
    Exact,
    FirstOrder,
    SecondOrder,
}

impl std::fmt::Display for InfluenceMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InfluenceMethod::Exact => write!(f, "exact"),
            InfluenceMethod::FirstOrder => write!(f, "first"),
            InfluenceMethod::SecondOrder => write!(f, "second"),
        }
    }
}

/// What the mechanism measures risk on.
#[derive(Debug, Clone, Copy)]
pub enum TestReference<'a> {
    /// A test set held by the Center.
    Fixed(&'a Dataset),
    /// The reports collected so far. A scored point leaves (or joins) the
    /// pool together with the training set.
    ReportPool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MechanismConfig {
    pub batch_size: usize,
    pub mode: Mode,
    pub method: InfluenceMethod,
    pub init_count: usize,
    pub init_x_bounds: Interval,
    pub init_y_bounds: Interval,
    pub init_seed: u64,
    pub effort_cost: f64,
    pub payment_scale: f64,
    pub normalization: Normalization,
    pub ridge: f64,
}

impl Default for MechanismConfig {
    fn default() -> Self {
        MechanismConfig {
            batch_size: 1,
            mode: Mode::Inclusive,
            method: InfluenceMethod::Exact,
            init_count: 500,
            init_x_bounds: Interval { lo: -1.0, hi: 1.0 },
            init_y_bounds: Interval { lo: -3.0, hi: 3.0 },
            init_seed: 0,
            effort_cost: 0.0,
            payment_scale: 1.0,
            normalization: Normalization::None,
            ridge: 0.0,
        }
    }
}

impl MechanismConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be >= 1".into()));
        }
        self.init_x_bounds.validate()?;
        self.init_y_bounds.validate()?;
        if !(self.payment_scale > 0.0 && self.payment_scale.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "payment scale must be > 0, got {}",
                self.payment_scale
            )));
        }
        if !(self.effort_cost >= 0.0) {
            return Err(Error::InvalidConfig("effort cost must be >= 0".into()));
        }
        if !(self.ridge >= 0.0) {
            return Err(Error::InvalidConfig("ridge must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LedgerEntry {
    pub agent_id: AgentId,
    /// 1-based batch number.
    pub batch_index: usize,
    pub raw_influence: f64,
    pub corrected_score: f64,
    pub payment: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LedgerTotals {
    pub sum_raw: f64,
    pub sum_corrected: f64,
    pub sum_payments: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PaymentLedger {
    pub entries: Vec<LedgerEntry>,
    pub totals: LedgerTotals,
    /// Risk after each batch.
    pub risk_trace: Vec<f64>,
    /// Risk of the model fitted on the initialization points alone.
    pub initial_risk: f64,
    pub final_risk: f64,
}

impl PaymentLedger {
    pub fn batches(&self) -> usize {
        self.risk_trace.len()
    }

    /// Mean raw influence per batch, in batch order.
    pub fn batch_means(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.batches()];
        let mut counts = vec![0usize; self.batches()];
        for e in &self.entries {
            sums[e.batch_index - 1] += e.raw_influence;
            counts[e.batch_index - 1] += 1;
        }
        sums.iter()
            .zip(&counts)
            .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
            .collect()
    }

    /// Ledger rows: `agent_id, batch_index, raw_influence, corrected_score, payment`.
    pub fn to_table(&self) -> ResultTable {
        let mut table = ResultTable::new(&[
            "agent_id",
            "batch_index",
            "raw_influence",
            "corrected_score",
            "payment",
        ]);
        for e in &self.entries {
            table.push_row(vec![
                Cell::Int(e.agent_id.0 as i64),
                Cell::Int(e.batch_index as i64),
                Cell::Float(e.raw_influence),
                Cell::Float(e.corrected_score),
                Cell::Float(e.payment),
            ]);
        }
        table
    }

    /// Key-value run summary with the configuration echoed.
    pub fn summary(&self, config: &MechanismConfig) -> ResultTable {
        let mut t = ResultTable::new(&["key", "value"]);
        let mut kv = |k: &str, v: Cell| t.push_row(vec![Cell::Text(k.into()), v]);
        kv("initial_risk", Cell::Float(self.initial_risk));
        kv("final_risk", Cell::Float(self.final_risk));
        kv("sum_raw", Cell::Float(self.totals.sum_raw));
        kv("sum_corrected", Cell::Float(self.totals.sum_corrected));
        kv("sum_payments", Cell::Float(self.totals.sum_payments));
        kv("entries", Cell::Int(self.entries.len() as i64));
        kv("batches", Cell::Int(self.batches() as i64));
        kv("batch_size", Cell::Int(config.batch_size as i64));
        kv("mode", Cell::Text(config.mode.to_string()));
        kv("method", Cell::Text(config.method.to_string()));
        kv("init_count", Cell::Int(config.init_count as i64));
        kv("init_x_lo", Cell::Float(config.init_x_bounds.lo));
        kv("init_x_hi", Cell::Float(config.init_x_bounds.hi));
        kv("init_y_lo", Cell::Float(config.init_y_bounds.lo));
        kv("init_y_hi", Cell::Float(config.init_y_bounds.hi));
        kv("init_seed", Cell::Int(config.init_seed as i64));
        kv("effort_cost", Cell::Float(config.effort_cost));
        kv("payment_scale", Cell::Float(config.payment_scale));
        kv(
            "normalization",
            Cell::Text(match config.normalization {
                Normalization::None => "none".into(),
                Normalization::ClosedForm => "closed-form-d".into(),
            }),
        );
        kv("ridge", Cell::Float(config.ridge));
        t
    }
}

/// `q` points with features uniform in `x_bounds^dim` and targets uniform in `y_bounds`.
pub fn initialize_model(
    q: usize,
    dim: usize,
    x_bounds: Interval,
    y_bounds: Interval,
    seed: u64,
) -> Result<Dataset> {
    if q < dim + 1 {
        return Err(Error::InsufficientInitialization {
            needed: dim + 1,
            found: q,
        });
    }
    x_bounds.validate()?;
    y_bounds.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Dataset::new(dim);
    for i in 0..q {
        let x = (0..dim).map(|_| x_bounds.sample(&mut rng)).collect();
        let y = y_bounds.sample(&mut rng);
        data.push(DataPoint::new(x, y).with_agent(AgentId(u64::MAX), i))?;
    }
    Ok(data)
}

/// Runs the mechanism against a fixed test set, drawing the initialization
/// points from the configured bounds.
pub fn run_mechanism(
    stream: &[DataPoint],
    test: &Dataset,
    config: &MechanismConfig,
) -> Result<PaymentLedger> {
    let dim = stream.first().ok_or(Error::EmptyStream)?.dim();
    let init = initialize_model(
        config.init_count,
        dim,
        config.init_x_bounds,
        config.init_y_bounds,
        config.init_seed,
    )?;
    run_mechanism_with(&init, stream, TestReference::Fixed(test), config)
}

/// Scores one point against the current reference.
struct Scorer<'a> {
    model: &'a FittedModel,
    method: InfluenceMethod,
    reference: Reference,
}

enum Reference {
    Fixed(RiskExpansion),
    Pool {
        expansion: RiskExpansion,
        size: usize,
    },
}

impl<'a> Scorer<'a> {
    fn new(
        model: &'a FittedModel,
        method: InfluenceMethod,
        test: TestReference<'_>,
        pool: &Dataset,
    ) -> Result<Self> {
        let reference = match test {
            TestReference::Fixed(t) => Reference::Fixed(RiskExpansion::new(t, model.params())?),
            TestReference::ReportPool => Reference::Pool {
                expansion: RiskExpansion::new(pool, model.params())?,
                size: pool.len(),
            },
        };
        Ok(Scorer {
            model,
            method,
            reference,
        })
    }

    /// Parameter shift for removing (`sign = -1`) or adding (`sign = +1`) `z`.
    /// Approximations expand in the up-weight `sign/n`: the first-order term
    /// flips with the sign, the second-order term does not.
    fn shift(&self, z: &DataPoint, adding: bool) -> Result<DVector<f64>> {
        match self.method {
            InfluenceMethod::Exact => {
                if adding {
                    self.model.addition_shift(z)
                } else {
                    self.model.removal_shift(z)
                }
            }
            InfluenceMethod::FirstOrder | InfluenceMethod::SecondOrder => {
                let (first, second) = shift_terms(self.model, z)?;
                let first = if adding { -first } else { first };
                Ok(match self.method {
                    InfluenceMethod::SecondOrder => first + second,
                    _ => first,
                })
            }
        }
    }

    /// Risk change of the reference under `shift`; linear only for first order.
    fn change(&self, expansion: &RiskExpansion, shift: &DVector<f64>) -> f64 {
        match self.method {
            InfluenceMethod::FirstOrder => expansion.gradient().dot(shift),
            _ => expansion.change(shift),
        }
    }

    /// Loss of `z` itself after the shift.
    fn own_loss(&self, z: &DataPoint, shift: &DVector<f64>) -> Result<f64> {
        let params: &Parameters = self.model.params();
        let e = params.residual(z);
        match self.method {
            InfluenceMethod::FirstOrder => Ok(e * e + loss_gradient(z, params)?.dot(shift)),
            _ => {
                let moved = e - z.augmented().dot(shift);
                Ok(moved * moved)
            }
        }
    }

    /// `R(ref_without_z, θ̂_{/z}) − R(ref, θ̂)`.
    fn removal(&self, z: &DataPoint) -> Result<f64> {
        let shift = self.shift(z, false)?;
        match &self.reference {
            Reference::Fixed(exp) => Ok(self.change(exp, &shift)),
            Reference::Pool { expansion, size } => {
                if *size < 2 {
                    return Err(Error::InsufficientData {
                        needed: 2,
                        found: *size,
                    });
                }
                let n = *size as f64;
                let c = self.change(expansion, &shift);
                let own = self.own_loss(z, &shift)?;
                Ok((expansion.risk() + n * c - own) / (n - 1.0))
            }
        }
    }

    /// `R(ref, θ̂) − R(ref_with_z, θ̂_{∪z})`.
    fn addition(&self, z: &DataPoint) -> Result<f64> {
        let shift = self.shift(z, true)?;
        match &self.reference {
            Reference::Fixed(exp) => Ok(-self.change(exp, &shift)),
            Reference::Pool { expansion, size } => {
                let n = *size as f64;
                let c = self.change(expansion, &shift);
                let own = self.own_loss(z, &shift)?;
                Ok((expansion.risk() - n * c - own) / (n + 1.0))
            }
        }
    }
}

fn reference_risk(test: TestReference<'_>, pool: &Dataset, params: &Parameters) -> Result<f64> {
    match test {
        TestReference::Fixed(t) => risk(t, params),
        TestReference::ReportPool => risk(pool, params),
    }
}

/// Runs the mechanism from an explicit initialization set.
pub fn run_mechanism_with(
    init: &Dataset,
    stream: &[DataPoint],
    test: TestReference<'_>,
    config: &MechanismConfig,
) -> Result<PaymentLedger> {
    config.validate()?;
    if stream.is_empty() {
        return Err(Error::EmptyStream);
    }
    let dim = init.dim();
    if let TestReference::Fixed(t) = test {
        if t.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if t.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: t.dim(),
            });
        }
    }
    if init.len() < dim + 1 {
        return Err(Error::InsufficientInitialization {
            needed: dim + 1,
            found: init.len(),
        });
    }
    if matches!(test, TestReference::ReportPool) && config.mode == Mode::Exclusive {
        return Err(Error::InvalidConfig(
            "M-Exclusive cannot score against the report pool: the first batch has an empty pool"
                .into(),
        ));
    }

    let mut acc = GramAccumulator::new(dim);
    acc.extend(init.points())?;
    let mut model = acc.fit(config.ridge)?;

    let all_reports = match test {
        TestReference::ReportPool => Dataset::from_points(dim, stream.to_vec())?,
        TestReference::Fixed(_) => Dataset::new(dim),
    };
    let initial_risk = reference_risk(test, &all_reports, model.params())?;

    let mut pool = Dataset::new(dim);
    let mut entries = Vec::with_capacity(stream.len());
    let mut risk_trace = Vec::new();
    let n_stream = stream.len() as f64;

    for (k, batch) in stream.chunks(config.batch_size).enumerate() {
        let raw: Vec<f64> = match config.mode {
            Mode::Inclusive => {
                acc.extend(batch)?;
                model = acc.fit(config.ridge)?;
                if matches!(test, TestReference::ReportPool) {
                    for z in batch {
                        pool.push(z.clone())?;
                    }
                }
                let scorer = Scorer::new(&model, config.method, test, &pool)?;
                batch
                    .iter()
                    .map(|z| scorer.removal(z))
                    .collect::<Result<_>>()?
            }
            Mode::Exclusive => {
                let scores = {
                    let scorer = Scorer::new(&model, config.method, test, &pool)?;
                    batch
                        .iter()
                        .map(|z| scorer.addition(z))
                        .collect::<Result<Vec<_>>>()?
                };
                acc.extend(batch)?;
                model = acc.fit(config.ridge)?;
                scores
            }
        };

        let correction = match config.normalization {
            Normalization::None => 1.0,
            Normalization::ClosedForm => {
                let params = MixtureParams::batch(init.len() as f64, n_stream, batch.len() as f64);
                match config.mode {
                    Mode::Inclusive => params.d_inclusive()?,
                    Mode::Exclusive => params.d_exclusive()?,
                }
            }
        };

        for (z, r) in batch.iter().zip(raw) {
            let corrected = r / correction;
            entries.push(LedgerEntry {
                agent_id: z.agent_id,
                batch_index: k + 1,
                raw_influence: r,
                corrected_score: corrected,
                payment: config.payment_scale * corrected,
            });
        }
        risk_trace.push(reference_risk(test, &pool, model.params())?);
    }

    let final_risk = reference_risk(test, &all_reports, model.params())?;
    let totals = entries.iter().fold(LedgerTotals::default(), |mut t, e| {
        t.sum_raw += e.raw_influence;
        t.sum_corrected += e.corrected_score;
        t.sum_payments += e.payment;
        t
    });
    Ok(PaymentLedger {
        entries,
        totals,
        risk_trace,
        initial_risk,
        final_risk,
    })
}
