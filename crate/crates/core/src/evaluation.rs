//! Error metrics over ensembles of filter runs: MSE in dB, mean squared
//! Mahalanobis distance, per-time calibration curves, and report writers.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kalman::{run_kalman_filter, FilterRun, MeasurementNoisePolicy};
use crate::numerics::{cholesky, Matrix, Real};
use crate::rkn::{rollout, RknModel};
use crate::statespace::{fmt_f64, Dataset, Trajectory};

/// Estimation errors `eₜ⁽ⁱ⁾ = xₜ⁽ⁱ⁾ − x̂ₜ⁽ⁱ⁾` with the matching covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorEnsemble<T> {
    errors: Vec<Vec<Vec<T>>>,
    covariances: Vec<Vec<Matrix<T>>>,
}

impl<T: Real> ErrorEnsemble<T> {
    pub fn new(errors: Vec<Vec<Vec<T>>>, covariances: Vec<Vec<Matrix<T>>>) -> Result<Self> {
        let horizon = errors.first().map_or(0, Vec::len);
        let m = errors.first().and_then(|s| s.first()).map_or(0, Vec::len);
        if errors.is_empty() || horizon == 0 || m == 0 {
            return Err(Error::EmptyEnsemble(
                "no series, time steps or state components".into(),
            ));
        }
        if covariances.len() != errors.len() {
            return Err(Error::InvalidParameter(
                "errors and covariances cover different series counts".into(),
            ));
        }
        for (i, (e, p)) in errors.iter().zip(&covariances).enumerate() {
            if e.len() != horizon || p.len() != horizon {
                return Err(Error::InvalidParameter(format!(
                    "series {i} has a different horizon"
                )));
            }
            if e.iter().any(|v| v.len() != m) || p.iter().any(|c| c.shape() != (m, m)) {
                return Err(Error::InvalidParameter(format!(
                    "series {i} has inconsistent state dimension"
                )));
            }
        }
        Ok(Self {
            errors,
            covariances,
        })
    }

    /// Pairs ground-truth state sequences with the runs that estimated them.
    pub fn from_runs(states: &[&[Vec<T>]], runs: &[FilterRun<T>]) -> Result<Self> {
        if states.len() != runs.len() {
            return Err(Error::InvalidParameter(format!(
                "{} truth sequences for {} runs",
                states.len(),
                runs.len()
            )));
        }
        let errors = states
            .iter()
            .zip(runs)
            .map(|(xs, run)| {
                if xs.len() != run.len() {
                    return Err(Error::InvalidParameter(
                        "truth and run lengths differ".into(),
                    ));
                }
                Ok(xs
                    .iter()
                    .zip(&run.x_hat)
                    .map(|(x, xh)| x.iter().zip(xh).map(|(&a, &b)| a - b).collect())
                    .collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(errors, runs.iter().map(|r| r.p.clone()).collect())
    }

    pub fn n_series(&self) -> usize {
        self.errors.len()
    }

    pub fn horizon(&self) -> usize {
        self.errors[0].len()
    }

    pub fn state_dim(&self) -> usize {
        self.errors[0][0].len()
    }

    pub fn errors(&self) -> &[Vec<Vec<T>>] {
        &self.errors
    }

    pub fn covariances(&self) -> &[Vec<Matrix<T>>] {
        &self.covariances
    }
}

fn count<T: Real>(n: usize) -> T {
    T::from_usize(n).expect("count fits the scalar type")
}

/// `(1/T) Σₜ (1/N) Σᵢ eᵀe`, in linear units.
pub fn mse<T: Real>(ens: &ErrorEnsemble<T>) -> T {
    component_mse(ens).into_iter().fold(T::zero(), |a, b| a + b)
}

/// Per-component mean squared error.
pub fn component_mse<T: Real>(ens: &ErrorEnsemble<T>) -> Vec<T> {
    let m = ens.state_dim();
    let mut acc = vec![T::zero(); m];
    for series in &ens.errors {
        for e in series {
            for (a, &v) in acc.iter_mut().zip(e) {
                *a += v * v;
            }
        }
    }
    let denom = count::<T>(ens.n_series() * ens.horizon());
    acc.into_iter().map(|a| a / denom).collect()
}

/// `10 log₁₀` with exact zero mapped to `−∞`.
pub fn to_db<T: Real>(linear: T) -> T {
    if linear == T::zero() {
        T::neg_infinity()
    } else {
        count::<T>(10) * linear.log10()
    }
}

pub fn mse_db<T: Real>(ens: &ErrorEnsemble<T>) -> T {
    to_db(mse(ens))
}

fn mahalanobis<T: Real>(e: &[T], p: &Matrix<T>, i: usize, t: usize) -> Result<T> {
    let l = cholesky(p).map_err(|err| {
        Error::numeric_at(format!("covariance of series {i} at t = {}", t + 1), err)
    })?;
    let mut v = e.to_vec();
    l.forward_substitute(&mut v);
    Ok(v.iter().fold(T::zero(), |a, &x| a + x * x))
}

/// Batch mean of `eᵀ P⁻¹ e` at every time step.
pub fn per_time_mahalanobis<T: Real>(ens: &ErrorEnsemble<T>) -> Result<Vec<T>> {
    let mut acc = vec![T::zero(); ens.horizon()];
    for (i, (es, ps)) in ens.errors.iter().zip(&ens.covariances).enumerate() {
        for (t, (e, p)) in es.iter().zip(ps).enumerate() {
            acc[t] += mahalanobis(e, p, i, t)?;
        }
    }
    let n = count::<T>(ens.n_series());
    Ok(acc.into_iter().map(|a| a / n).collect())
}

/// Mean squared Mahalanobis distance over series and time.
pub fn msmd<T: Real>(ens: &ErrorEnsemble<T>) -> Result<T> {
    let per_time = per_time_mahalanobis(ens)?;
    Ok(per_time.iter().fold(T::zero(), |a, &b| a + b) / count::<T>(per_time.len()))
}

/// Per-time, per-component standard deviations: empirical is the RMS error
/// over the batch, estimated is the root of the batch-mean variance.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyCurves<T> {
    pub empirical_std: Vec<Vec<T>>,
    pub estimated_std: Vec<Vec<T>>,
}

pub fn per_time_consistency<T: Real>(ens: &ErrorEnsemble<T>) -> Result<ConsistencyCurves<T>> {
    if ens.n_series() < 2 {
        return Err(Error::EmptyEnsemble(
            "consistency curves need at least two series".into(),
        ));
    }
    let (horizon, m) = (ens.horizon(), ens.state_dim());
    let mut emp = vec![vec![T::zero(); m]; horizon];
    let mut est = vec![vec![T::zero(); m]; horizon];
    for (es, ps) in ens.errors.iter().zip(&ens.covariances) {
        for t in 0..horizon {
            for j in 0..m {
                emp[t][j] += es[t][j] * es[t][j];
                est[t][j] += ps[t][(j, j)];
            }
        }
    }
    let n = count::<T>(ens.n_series());
    let finish = |rows: Vec<Vec<T>>| {
        rows.into_iter()
            .map(|r| r.into_iter().map(|v| (v / n).sqrt()).collect())
            .collect()
    };
    Ok(ConsistencyCurves {
        empirical_std: finish(emp),
        estimated_std: finish(est),
    })
}

/// Estimators compared in reports.
#[derive(Debug, Clone, Copy)]
pub enum Estimator<'a> {
    /// Kalman filter told the true per-step measurement variance.
    Okf,
    /// Kalman filter using the mixture's average variance at every step.
    Sokf,
    Rkn(&'a RknModel),
}

impl Estimator<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Okf => "okf",
            Estimator::Sokf => "sokf",
            Estimator::Rkn(_) => "rkn",
        }
    }
}

/// Sequences per untaped RKN rollout when evaluating.
const EVAL_CHUNK: usize = 250;

/// Runs an estimator over a list of series. Output order matches input.
pub fn run_estimator(
    est: Estimator<'_>,
    dataset: &Dataset,
    series: &[Trajectory],
) -> Result<Vec<FilterRun<f64>>> {
    match est {
        Estimator::Okf | Estimator::Sokf => {
            let policy = match est {
                Estimator::Okf => MeasurementNoisePolicy::oracle(&dataset.noise),
                _ => MeasurementNoisePolicy::expected_variance(&dataset.noise),
            };
            series
                .par_iter()
                .map(|traj| {
                    run_kalman_filter(
                        &dataset.model,
                        traj.observations(),
                        policy,
                        &dataset.init_mean,
                        &dataset.init_cov,
                    )
                })
                .collect()
        }
        Estimator::Rkn(rkn) => {
            let dynamics = dataset.model.known_dynamics();
            let mut runs = Vec::with_capacity(series.len());
            for chunk in series.chunks(EVAL_CHUNK) {
                let zs: Vec<&[Vec<f64>]> =
                    chunk.iter().map(|t| t.measurements.as_slice()).collect();
                let r = rollout(
                    rkn,
                    &dynamics,
                    &zs,
                    &dataset.init_mean,
                    &dataset.init_cov,
                    false,
                )?;
                runs.extend((0..chunk.len()).map(|b| r.run(b)));
            }
            Ok(runs)
        }
    }
}

pub fn ensemble_for(series: &[Trajectory], runs: &[FilterRun<f64>]) -> Result<ErrorEnsemble<f64>> {
    let states: Vec<&[Vec<f64>]> = series.iter().map(|t| t.states.as_slice()).collect();
    ErrorEnsemble::from_runs(&states, runs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub method: String,
    pub nu_db: f64,
    pub master_seed: u64,
    pub mse_db: f64,
    pub msmd: f64,
    pub component_mse: Vec<f64>,
    pub consistency: ConsistencyCurves<f64>,
    pub per_time_mahalanobis: Vec<f64>,
    /// Gains of the first series.
    pub gain_trace: Vec<Matrix<f64>>,
}

impl EvaluationReport {
    pub fn row(&self) -> ReportRow {
        ReportRow {
            method: self.method.clone(),
            nu_db: self.nu_db,
            mse_db: self.mse_db,
            msmd: self.msmd,
            component_mse: self.component_mse.clone(),
        }
    }
}

pub fn evaluate(
    method: &str,
    nu_db: f64,
    master_seed: u64,
    series: &[Trajectory],
    runs: &[FilterRun<f64>],
) -> Result<EvaluationReport> {
    let ens = ensemble_for(series, runs)?;
    let per_time = per_time_mahalanobis(&ens)?;
    Ok(EvaluationReport {
        method: method.to_string(),
        nu_db,
        master_seed,
        mse_db: mse_db(&ens),
        msmd: per_time.iter().sum::<f64>() / per_time.len() as f64,
        component_mse: component_mse(&ens),
        consistency: per_time_consistency(&ens)?,
        per_time_mahalanobis: per_time,
        gain_trace: runs.first().map(|r| r.gain.clone()).unwrap_or_default(),
    })
}

/// Evaluates each estimator on the dataset's test split.
pub fn compare_methods(
    dataset: &Dataset,
    nu_db: f64,
    methods: &[Estimator<'_>],
) -> Result<Vec<EvaluationReport>> {
    methods
        .iter()
        .map(|&est| {
            let runs = run_estimator(est, dataset, &dataset.test)?;
            evaluate(est.name(), nu_db, dataset.master_seed, &dataset.test, &runs)
        })
        .collect()
}

/// One line of a Table-I-style report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub nu_db: f64,
    pub mse_db: f64,
    pub msmd: f64,
    pub component_mse: Vec<f64>,
}

pub const REPORT_HEADER: &str = "method,nu_db,mse_db,msmd,mse_pos,mse_vel";
pub const CONSISTENCY_HEADER: &str = "t,emp_std_pos,est_std_pos,emp_std_vel,est_std_vel";
pub const GAIN_TRACE_HEADER: &str = "t,K0,K1";
/// Default number of leading steps in gain-trace exports.
pub const GAIN_TRACE_ZOOM: usize = 60;

fn io_err(msg: &str) -> std::io::Error {
    std::io::Error::new(std::io::ErrorKind::InvalidInput, msg.to_string())
}

pub fn write_report_csv<W: Write>(rows: &[ReportRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{REPORT_HEADER}")?;
    for r in rows {
        if r.component_mse.len() != 2 {
            return Err(io_err("report rows need exactly two state components"));
        }
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.method,
            fmt_f64(r.nu_db),
            fmt_f64(r.mse_db),
            fmt_f64(r.msmd),
            fmt_f64(r.component_mse[0]),
            fmt_f64(r.component_mse[1])
        )?;
    }
    Ok(())
}

pub fn write_consistency_csv<W: Write>(
    curves: &ConsistencyCurves<f64>,
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "{CONSISTENCY_HEADER}")?;
    for (t, (emp, est)) in curves
        .empirical_std
        .iter()
        .zip(&curves.estimated_std)
        .enumerate()
    {
        if emp.len() != 2 {
            return Err(io_err(
                "consistency export needs exactly two state components",
            ));
        }
        writeln!(
            out,
            "{},{},{},{},{}",
            t + 1,
            fmt_f64(emp[0]),
            fmt_f64(est[0]),
            fmt_f64(emp[1]),
            fmt_f64(est[1])
        )?;
    }
    Ok(())
}

/// Writes the first `limit` gains of a run.
pub fn write_gain_trace_csv<W: Write>(
    gains: &[Matrix<f64>],
    limit: usize,
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "{GAIN_TRACE_HEADER}")?;
    for (t, k) in gains.iter().take(limit).enumerate() {
        if k.shape() != (2, 1) {
            return Err(io_err("gain trace export needs a 2×1 gain"));
        }
        writeln!(
            out,
            "{},{},{}",
            t + 1,
            fmt_f64(k[(0, 0)]),
            fmt_f64(k[(1, 0)])
        )?;
    }
    Ok(())
}

/// A named polyline for [`svg_line_plot`].
#[derive(Debug, Clone, PartialEq)]
pub struct PlotSeries {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];

/// A standalone SVG line chart. Non-finite points are skipped.
pub fn svg_line_plot(title: &str, x_label: &str, y_label: &str, series: &[PlotSeries]) -> String {
    let (w, h) = (720.0, 440.0);
    let (left, right, top, bottom) = (70.0, 170.0, 40.0, 50.0);
    let finite = series
        .iter()
        .flat_map(|s| &s.points)
        .filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for &(x, y) in finite {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pw = w - left - right;
    let ph = h - top - bottom;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{}</text>"#,
        left + pw / 2.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r##"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##
    );
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let _ = writeln!(
            svg,
            r##"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="11" fill="#333">{}</text>"##,
            sx(fx),
            top + ph + 16.0,
            tick(fx)
        );
        let _ = writeln!(
            svg,
            r##"<text x="{:.1}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="11" fill="#333">{}</text>"##,
            left - 6.0,
            sy(fy) + 4.0,
            tick(fy)
        );
        let _ = writeln!(
            svg,
            r##"<line x1="{left}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="#ddd"/>"##,
            left + pw,
            sy(fy),
            sy(fy)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
        left + pw / 2.0,
        h - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 16 {})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let dash = if s.dashed {
            r#" stroke-dasharray="6,4""#
        } else {
            ""
        };
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.6"{dash} points="{}"/>"#,
            pts.join(" ")
        );
        let ly = top + 14.0 + 18.0 * i as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" x2="{}" y1="{ly}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/>"#,
            lx + 24.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12">{}</text>"#,
            lx + 30.0,
            ly + 4.0,
            escape(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn constant(n: usize, t: usize, e: Vec<f64>, p: Matrix<f64>) -> ErrorEnsemble<f64> {
        ErrorEnsemble::new(vec![vec![e; t]; n], vec![vec![p; t]; n]).unwrap()
    }

    #[test]
    fn mse_examples() {
        let a = 0.05f64.sqrt();
        let ens = constant(3, 4, vec![a, a], Matrix::identity(2));
        assert!((mse_db(&ens) + 10.0).abs() < 1e-12);
        let zero = constant(2, 3, vec![0.0, 0.0], Matrix::identity(2));
        assert_eq!(mse_db(&zero), f64::NEG_INFINITY);
        assert_eq!(fmt_f64(mse_db(&zero)), "-inf");
    }

    #[test]
    fn msmd_examples() {
        assert_eq!(
            msmd(&constant(2, 5, vec![1.0, 1.0], Matrix::identity(2))).unwrap(),
            2.0
        );
        assert_eq!(
            msmd(&constant(2, 5, vec![0.0, 0.0], Matrix::identity(2))).unwrap(),
            0.0
        );
        let diag = constant(1, 1, vec![2.0, 1.0], Matrix::from_diag(&[4.0, 0.25]));
        assert!((msmd(&diag).unwrap() - 5.0).abs() < 1e-14);
    }

    #[test]
    fn msmd_reports_location_of_bad_covariance() {
        let mut covs = vec![vec![Matrix::identity(2); 3]; 2];
        covs[1][2] = Matrix::zeros(2, 2);
        let ens = ErrorEnsemble::new(vec![vec![vec![0.1, 0.1]; 3]; 2], covs).unwrap();
        let err = msmd(&ens).unwrap_err().to_string();
        assert!(err.contains("series 1") && err.contains("t = 3"), "{err}");
    }

    #[test]
    fn empty_ensembles_are_rejected() {
        assert!(matches!(
            ErrorEnsemble::<f64>::new(vec![], vec![]),
            Err(Error::EmptyEnsemble(_))
        ));
        let single = constant(1, 2, vec![0.1, 0.2], Matrix::identity(2));
        assert!(matches!(
            per_time_consistency(&single),
            Err(Error::EmptyEnsemble(_))
        ));
    }

    #[test]
    fn mse_is_order_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let errors: Vec<Vec<Vec<f64>>> = (0..5)
            .map(|_| {
                (0..4)
                    .map(|_| (0..2).map(|_| StandardNormal.sample(&mut rng)).collect())
                    .collect()
            })
            .collect();
        let covs = vec![vec![Matrix::identity(2); 4]; 5];
        let a = ErrorEnsemble::new(errors.clone(), covs.clone()).unwrap();
        let mut rev = errors;
        rev.reverse();
        let b = ErrorEnsemble::new(rev, covs).unwrap();
        assert!((mse(&a) - mse(&b)).abs() < 1e-15);
    }

    #[test]
    fn curves_coincide_when_covariance_matches_batch_statistics() {
        let errors = vec![
            vec![vec![1.0, -2.0]],
            vec![vec![-1.0, 2.0]],
            vec![vec![1.0, 2.0]],
            vec![vec![-1.0, -2.0]],
        ];
        let covs = vec![vec![Matrix::from_diag(&[1.0, 4.0])]; 4];
        let c = per_time_consistency(&ErrorEnsemble::new(errors, covs).unwrap()).unwrap();
        assert_eq!(c.empirical_std, c.estimated_std);
    }

    #[test]
    fn synthetic_gaussian_errors_pass_the_chi_squared_band() {
        let (n, horizon, m) = (1000, 150, 2);
        let p = Matrix::from_rows(&[[2.0, 0.6], [0.6, 0.5]]);
        let l = cholesky(&p).unwrap().to_matrix();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let errors: Vec<Vec<Vec<f64>>> = (0..n)
            .map(|_| {
                (0..horizon)
                    .map(|_| {
                        let w: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
                        l.mul_vec(&w)
                    })
                    .collect()
            })
            .collect();
        let ens = ErrorEnsemble::new(errors, vec![vec![p; horizon]; n]).unwrap();
        let per_time = per_time_mahalanobis(&ens).unwrap();
        let half_width = 4.0 * (2.0 * m as f64 / n as f64).sqrt();
        let inside = per_time
            .iter()
            .filter(|&&d| (d - m as f64).abs() <= half_width)
            .count();
        assert!(inside as f64 >= 0.99 * horizon as f64, "{inside}/{horizon}");
    }

    #[test]
    fn f32_metrics() {
        let ens = ErrorEnsemble::<f32>::new(
            vec![vec![vec![1.0, 1.0]]; 2],
            vec![vec![Matrix::identity(2)]; 2],
        )
        .unwrap();
        assert_eq!(msmd(&ens).unwrap(), 2.0f32);
        assert!((mse_db(&ens) - 10.0 * 2.0f32.log10()).abs() < 1e-6);
    }

    #[test]
    fn csv_layouts() {
        let row = ReportRow {
            method: "okf".into(),
            nu_db: 40.0,
            mse_db: f64::NEG_INFINITY,
            msmd: 2.0,
            component_mse: vec![0.5, 0.25],
        };
        let mut buf = Vec::new();
        write_report_csv(&[row], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], REPORT_HEADER);
        assert!(lines[1].starts_with("okf,4.0000000000000000e1,-inf,2.0"));

        let gains: Vec<Matrix<f64>> = (0..80).map(|i| Matrix::column(&[i as f64, 0.0])).collect();
        let mut buf = Vec::new();
        write_gain_trace_csv(&gains, GAIN_TRACE_ZOOM, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap().lines().count(),
            GAIN_TRACE_ZOOM + 1
        );
    }

    #[test]
    fn svg_contains_each_series() {
        let s = vec![
            PlotSeries {
                name: "a<b".into(),
                points: vec![(1.0, 2.0), (2.0, f64::NAN), (3.0, 1.0)],
                dashed: false,
            },
            PlotSeries {
                name: "c".into(),
                points: vec![(1.0, 0.0)],
                dashed: true,
            },
        ];
        let svg = svg_line_plot("t", "x", "y", &s);
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("a&lt;b"));
        assert!(!svg.contains("NaN"));
    }
}
