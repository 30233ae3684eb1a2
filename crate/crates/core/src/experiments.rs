//! Experiment drivers behind the command line: approximation error tables,
//! batch correction ratios, influence over time and timing comparisons.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::agents::{generate_world_dim, trial_seed, truthful_dataset, WorldModel};
use crate::data_io::{Cell, ResultTable};
use crate::error::{Error, Result};
use crate::influence::{
    influence_records, refit_without, report_for, second_order_influence, ApproximationErrorReport,
    ApproximationOrder,
};
use crate::mechanism::{
    initialize_model, run_mechanism_with, InfluenceMethod, Interval, MechanismConfig, Mode,
    Normalization, PaymentLedger, TestReference,
};
use crate::regression::{fit, risk, DataPoint, Dataset};
use crate::stats::{mann_kendall, mean, MannKendall};
use crate::theory::MixtureParams;

/// Where training and test points come from.
#[derive(Debug, Clone)]
pub enum DataSource {
    /// Fresh random linear world per trial.
    Generated { dim: usize },
    /// A loaded table, reshuffled per trial.
    Table { name: String, data: Dataset },
}

impl DataSource {
    pub fn name(&self) -> String {
        match self {
            DataSource::Generated { dim: 1 } => "linear-generated".into(),
            DataSource::Generated { dim } => format!("linear-generated-d{dim}"),
            DataSource::Table { name, .. } => name.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DataSource::Generated { dim } => *dim,
            DataSource::Table { data, .. } => data.dim(),
        }
    }

    /// Disjoint samples of `sizes[i]` points each, drawn under `seed`.
    pub fn draw(&self, sizes: &[usize], seed: u64) -> Result<Vec<Dataset>> {
        let total: usize = sizes.iter().sum();
        let points: Vec<DataPoint> = match self {
            DataSource::Generated { dim } => {
                let world = generate_world_dim(*dim, seed);
                truthful_dataset(&world, total, trial_seed(seed, 0))?
                    .points()
                    .to_vec()
            }
            DataSource::Table { data, .. } => {
                if data.len() < total {
                    return Err(Error::InsufficientData {
                        needed: total,
                        found: data.len(),
                    });
                }
                let mut idx: Vec<usize> = (0..data.len()).collect();
                idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
                idx[..total]
                    .iter()
                    .map(|&i| data.points()[i].clone())
                    .collect()
            }
        };
        let mut out = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for &s in sizes {
            let mut d = Dataset::new(self.dim());
            for (i, p) in points[start..start + s].iter().enumerate() {
                let mut p = p.clone();
                p.arrival_index = i;
                d.push(p)?;
            }
            out.push(d);
            start += s;
        }
        Ok(out)
    }

    /// Bounds for the knowledge-less initialization points.
    pub fn init_bounds(&self) -> (Interval, Interval) {
        match self {
            DataSource::Generated { .. } => {
                let w = WorldModel::linear(0.0, 0.0);
                (w.x_bounds, w.heuristic_y_bounds)
            }
            DataSource::Table { data, .. } => {
                let (mut xl, mut xh, mut yl, mut yh) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
                for p in data {
                    for &v in &p.x {
                        xl = xl.min(v);
                        xh = xh.max(v);
                    }
                    yl = yl.min(p.y);
                    yh = yh.max(p.y);
                }
                let widen = |lo: f64, hi: f64| {
                    if hi > lo {
                        Interval { lo, hi }
                    } else {
                        Interval {
                            lo: lo - 1.0,
                            hi: lo + 1.0,
                        }
                    }
                };
                (widen(xl, xh), widen(yl, yh))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ApproxErrorSummary {
    pub dataset: String,
    pub first: ApproximationErrorReport,
    pub second: ApproximationErrorReport,
    /// Per-trial `(first, second)` reports.
    pub trials: Vec<(ApproximationErrorReport, ApproximationErrorReport)>,
}

fn average_reports(reports: &[ApproximationErrorReport]) -> ApproximationErrorReport {
    let k = reports.len() as f64;
    ApproximationErrorReport {
        l1: reports.iter().map(|r| r.l1).sum::<f64>() / k,
        relative_l1: reports.iter().map(|r| r.relative_l1).sum::<f64>() / k,
        l2: reports.iter().map(|r| r.l2).sum::<f64>() / k,
        n_train: reports[0].n_train,
        n_test: reports[0].n_test,
    }
}

/// Error of both approximation orders against the exact influence, averaged over trials.
pub fn approx_error_experiment(
    source: &DataSource,
    n_train: usize,
    n_test: usize,
    trials: usize,
    ridge: f64,
    seed: u64,
) -> Result<ApproxErrorSummary> {
    if trials == 0 {
        return Err(Error::InvalidConfig("need at least one trial".into()));
    }
    if n_train < source.dim() + 2 {
        return Err(Error::InsufficientData {
            needed: source.dim() + 2,
            found: n_train,
        });
    }
    let per_trial = (0..trials)
        .into_par_iter()
        .map(|t| {
            let sets = source.draw(&[n_train, n_test], trial_seed(seed, t as u64))?;
            let records = influence_records(&sets[0], &sets[1], ridge)?;
            Ok((
                report_for(&records, ApproximationOrder::First, n_test),
                report_for(&records, ApproximationOrder::Second, n_test),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let first: Vec<_> = per_trial.iter().map(|r| r.0).collect();
    let second: Vec<_> = per_trial.iter().map(|r| r.1).collect();
    Ok(ApproxErrorSummary {
        dataset: source.name(),
        first: average_reports(&first),
        second: average_reports(&second),
        trials: per_trial,
    })
}

impl ApproxErrorSummary {
    pub fn to_table(&self) -> ResultTable {
        let mut t = ResultTable::new(&[
            "dataset",
            "order",
            "l1",
            "relative_l1",
            "l2",
            "n_train",
            "n_test",
        ]);
        for (order, r) in [("first", &self.first), ("second", &self.second)] {
            t.push_row(vec![
                Cell::Text(self.dataset.clone()),
                Cell::Text(order.into()),
                Cell::Float(r.l1),
                Cell::Float(r.relative_l1),
                Cell::Float(r.l2),
                Cell::Int(r.n_train as i64),
                Cell::Int(r.n_test as i64),
            ]);
        }
        t
    }
}

/// One mechanism run's inputs.
#[derive(Debug, Clone)]
pub struct MechanismTrial {
    pub init: Dataset,
    pub stream: Vec<DataPoint>,
    pub test: Dataset,
}

impl MechanismTrial {
    pub fn draw(source: &DataSource, q: usize, n: usize, n_test: usize, seed: u64) -> Result<Self> {
        let sets = source.draw(&[n, n_test], seed)?;
        let (xb, yb) = source.init_bounds();
        let init = initialize_model(q, source.dim(), xb, yb, trial_seed(seed, u64::MAX))?;
        Ok(MechanismTrial {
            init,
            stream: sets[0].points().to_vec(),
            test: sets[1].clone(),
        })
    }

    pub fn run(&self, config: &MechanismConfig) -> Result<PaymentLedger> {
        run_mechanism_with(
            &self.init,
            &self.stream,
            TestReference::Fixed(&self.test),
            config,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchRatioRow {
    pub batch_size: usize,
    pub empirical_inclusive: f64,
    pub empirical_exclusive: f64,
    pub theory_inclusive: f64,
    pub theory_exclusive: f64,
}

/// `Σ influences / ΔR` for both modes per batch size, pooled over trials as a
/// ratio of sums, next to the closed-form `D_inc`, `D_exc`.
pub fn batch_ratio_experiment(
    source: &DataSource,
    q: usize,
    n: usize,
    n_test: usize,
    batch_sizes: &[usize],
    trials: usize,
    seed: u64,
) -> Result<Vec<BatchRatioRow>> {
    if trials == 0 {
        return Err(Error::InvalidConfig("need at least one trial".into()));
    }
    let setups = (0..trials)
        .map(|t| MechanismTrial::draw(source, q, n, n_test, trial_seed(seed, t as u64)))
        .collect::<Result<Vec<_>>>()?;
    batch_sizes
        .iter()
        .map(|&b| {
            let sums = setups
                .par_iter()
                .map(|s| {
                    let mut cfg = MechanismConfig {
                        batch_size: b,
                        method: InfluenceMethod::Exact,
                        normalization: Normalization::None,
                        ..MechanismConfig::default()
                    };
                    let inc = s.run(&cfg)?;
                    cfg.mode = Mode::Exclusive;
                    let exc = s.run(&cfg)?;
                    Ok((
                        inc.totals.sum_raw,
                        exc.totals.sum_raw,
                        inc.initial_risk - inc.final_risk,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            let (si, se, dr) = sums
                .iter()
                .fold((0.0, 0.0, 0.0), |a, s| (a.0 + s.0, a.1 + s.1, a.2 + s.2));
            let theory = MixtureParams::batch(q as f64, n as f64, b as f64);
            Ok(BatchRatioRow {
                batch_size: b,
                empirical_inclusive: si / dr,
                empirical_exclusive: se / dr,
                theory_inclusive: theory.d_inclusive()?,
                theory_exclusive: theory.d_exclusive()?,
            })
        })
        .collect()
}

pub fn batch_ratio_table(rows: &[BatchRatioRow]) -> ResultTable {
    let mut t = ResultTable::new(&[
        "batch_size",
        "empirical_inclusive",
        "empirical_exclusive",
        "theory_inclusive",
        "theory_exclusive",
    ]);
    for r in rows {
        t.push_row(vec![
            Cell::Int(r.batch_size as i64),
            Cell::Float(r.empirical_inclusive),
            Cell::Float(r.empirical_exclusive),
            Cell::Float(r.theory_inclusive),
            Cell::Float(r.theory_exclusive),
        ]);
    }
    t
}

#[derive(Debug, Clone)]
pub struct InfluenceTrace {
    /// Mean raw influence per batch, averaged over trials.
    pub batch_means: Vec<f64>,
    /// Per-trial batch means.
    pub per_trial: Vec<Vec<f64>>,
    pub trend: MannKendall,
}

impl InfluenceTrace {
    /// Trials whose first batch out-earns the last.
    pub fn first_beats_last(&self) -> usize {
        self.per_trial
            .iter()
            .filter(|m| m.first() > m.last())
            .count()
    }

    pub fn to_table(&self) -> ResultTable {
        let mut t = ResultTable::new(&["batch_index", "mean_influence"]);
        for (k, m) in self.batch_means.iter().enumerate() {
            t.push_row(vec![Cell::Int(k as i64 + 1), Cell::Float(*m)]);
        }
        t
    }
}

/// Mean influence per batch for `batches` batches of `b` points (M-Inclusive, exact).
pub fn influence_time_experiment(
    source: &DataSource,
    q: usize,
    batches: usize,
    b: usize,
    n_test: usize,
    trials: usize,
    seed: u64,
) -> Result<InfluenceTrace> {
    if trials == 0 || batches == 0 {
        return Err(Error::InvalidConfig(
            "need at least one trial and one batch".into(),
        ));
    }
    let config = MechanismConfig {
        batch_size: b,
        ..MechanismConfig::default()
    };
    let per_trial = (0..trials)
        .into_par_iter()
        .map(|t| {
            let setup =
                MechanismTrial::draw(source, q, batches * b, n_test, trial_seed(seed, t as u64))?;
            Ok(setup.run(&config)?.batch_means())
        })
        .collect::<Result<Vec<_>>>()?;
    let batch_means: Vec<f64> = (0..batches)
        .map(|k| mean(&per_trial.iter().map(|m| m[k]).collect::<Vec<_>>()))
        .collect();
    let trend = mann_kendall(&batch_means);
    Ok(InfluenceTrace {
        batch_means,
        per_trial,
        trend,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingRow {
    pub n_train: usize,
    pub dim: usize,
    /// Seconds to score every training point by refitting without it.
    pub exact_seconds: f64,
    /// Seconds to score every training point with the second-order approximation.
    pub approx_seconds: f64,
}

/// Wall-clock cost of exact (full refit per point) and approximate influence
/// for every combination of training size and dimension.
///
/// Each path scores `eval_points` training points and the time is scaled to
/// the whole training set; the median over `repeats` is reported. Runs on the
/// calling thread only.
pub fn timing_comparison(
    train_sizes: &[usize],
    dims: &[usize],
    n_test: usize,
    eval_points: usize,
    repeats: usize,
    seed: u64,
) -> Result<Vec<TimingRow>> {
    let repeats = repeats.max(1);
    let mut rows = Vec::new();
    for &n_train in train_sizes {
        for &d in dims {
            if n_train < d + 2 {
                return Err(Error::InsufficientData {
                    needed: d + 2,
                    found: n_train,
                });
            }
            let sets = DataSource::Generated { dim: d }.draw(&[n_train, n_test], seed)?;
            let (train, test) = (&sets[0], &sets[1]);
            let k = eval_points.clamp(1, n_train);
            let scale = n_train as f64 / k as f64;

            let mut exact = Vec::new();
            let mut approx = Vec::new();
            for _ in 0..repeats {
                let start = Instant::now();
                let full = fit(train, 0.0)?;
                let base = risk(test, full.params())?;
                let mut sink = 0.0;
                for j in 0..k {
                    let loo = refit_without(train, j, 0.0)?;
                    sink += risk(test, loo.params())? - base;
                }
                exact.push(start.elapsed().as_secs_f64() * scale);
                std::hint::black_box(sink);

                let start = Instant::now();
                let model = fit(train, 0.0)?;
                let mut sink = 0.0;
                for z in &train.points()[..k] {
                    sink += second_order_influence(&model, z, test)?;
                }
                approx.push(start.elapsed().as_secs_f64() * scale);
                std::hint::black_box(sink);
            }
            rows.push(TimingRow {
                n_train,
                dim: d,
                exact_seconds: median(&mut exact),
                approx_seconds: median(&mut approx),
            });
        }
    }
    Ok(rows)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Smallest dimension from which the approximate path stays faster, among
/// rows sharing the training size `n_train`.
pub fn crossover_dimension(rows: &[TimingRow], n_train: usize) -> Option<usize> {
    let mut rows: Vec<TimingRow> = rows
        .iter()
        .filter(|r| r.n_train == n_train)
        .copied()
        .collect();
    rows.sort_by_key(|r| r.dim);
    let last_slower = rows
        .iter()
        .rposition(|r| r.approx_seconds >= r.exact_seconds);
    match last_slower {
        None => rows.first().map(|r| r.dim),
        Some(i) => rows.get(i + 1).map(|r| r.dim),
    }
}

/// Long format: `method, n_train, dim, seconds`.
pub fn timing_table(rows: &[TimingRow]) -> ResultTable {
    let mut t = ResultTable::new(&["method", "n_train", "dim", "seconds"]);
    for r in rows {
        for (method, secs) in [
            ("exact", r.exact_seconds),
            ("approximate", r.approx_seconds),
        ] {
            t.push_row(vec![
                Cell::Text(method.into()),
                Cell::Int(r.n_train as i64),
                Cell::Int(r.dim as i64),
                Cell::Float(secs),
            ]);
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_are_disjoint_and_reproducible() {
        let data = Dataset::from_xy(
            1,
            &(0..10)
                .map(|i| (vec![i as f64], i as f64))
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let src = DataSource::Table {
            name: "t".into(),
            data,
        };
        let a = src.draw(&[4, 3], 9).unwrap();
        let b = src.draw(&[4, 3], 9).unwrap();
        assert_eq!(a[0].points(), b[0].points());
        let mut ys: Vec<f64> = a.iter().flat_map(|d| d.iter().map(|p| p.y)).collect();
        ys.sort_by(f64::total_cmp);
        ys.dedup();
        assert_eq!(ys.len(), 7);
        assert!(src.draw(&[8, 3], 9).is_err());
    }

    #[test]
    fn crossover_rules() {
        let row = |dim, e, a| TimingRow {
            n_train: 10,
            dim,
            exact_seconds: e,
            approx_seconds: a,
        };
        assert_eq!(
            crossover_dimension(&[row(1, 1.0, 2.0), row(5, 2.0, 1.0)], 10),
            Some(5)
        );
        assert_eq!(
            crossover_dimension(&[row(1, 1.0, 2.0), row(5, 1.0, 3.0)], 10),
            None
        );
        assert_eq!(crossover_dimension(&[row(1, 2.0, 1.0)], 10), Some(1));
    }

    #[test]
    fn small_approx_error_run() {
        let s =
            approx_error_experiment(&DataSource::Generated { dim: 1 }, 50, 20, 2, 0.0, 3).unwrap();
        assert!(s.second.relative_l1 < s.first.relative_l1);
        assert_eq!(s.to_table().rows.len(), 2);
        assert!(
            approx_error_experiment(&DataSource::Generated { dim: 3 }, 4, 20, 1, 0.0, 3).is_err()
        );
    }
}
