//! Trial-log analysis: displacement extraction, impulse statistics,
//! box-whisker summaries, and a random-intercept linear mixed-effects fit
//! with profiled REML.

use crate::gait::{Direction, WarningModality};
use crate::session::{TrialOutcome, TrialRecord};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("trajectory does not cover [onset - 1 s, onset + window]")]
    InsufficientCoverage,
    #[error("no observations for group {0}")]
    EmptyGroup(String),
    #[error("modality {0} has zero observations")]
    SingularDesign(String),
}

/// One displacement observation (one per completed trial).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DisplacementObservation {
    pub participant: String,
    pub direction: Direction,
    pub modality: WarningModality,
    pub max_displacement_mm: f64,
}

/// Pre-onset window used for the displacement baseline (s).
pub const BASELINE_WINDOW_S: f64 = 1.0;
/// Default post-onset window for the displacement maximum (s).
pub const DISPLACEMENT_WINDOW_S: f64 = 2.0;

/// Maximum planar deviation (mm) of a waist trace from its pre-onset mean.
///
/// `trajectory` is `(t, x, y)` samples; it must cover
/// `[onset - 1 s, onset + window]`.
pub fn extract_displacement(
    trajectory: &[(f64, f64, f64)],
    onset_s: f64,
    window_s: f64,
) -> Result<f64, AnalysisError> {
    let covered = trajectory
        .first()
        .zip(trajectory.last())
        .is_some_and(|(a, b)| {
            a.0 <= onset_s - BASELINE_WINDOW_S + 1e-6 && b.0 >= onset_s + window_s - 1e-6
        });
    if !covered {
        return Err(AnalysisError::InsufficientCoverage);
    }
    let base: Vec<(f64, f64)> = trajectory
        .iter()
        .filter(|(t, _, _)| *t >= onset_s - BASELINE_WINDOW_S && *t < onset_s)
        .map(|&(_, x, y)| (x, y))
        .collect();
    if base.is_empty() {
        return Err(AnalysisError::InsufficientCoverage);
    }
    let bx = base.iter().map(|p| p.0).sum::<f64>() / base.len() as f64;
    let by = base.iter().map(|p| p.1).sum::<f64>() / base.len() as f64;
    Ok(trajectory
        .iter()
        .filter(|(t, _, _)| *t >= onset_s && *t <= onset_s + window_s)
        .map(|&(_, x, y)| ((x - bx).powi(2) + (y - by).powi(2)).sqrt() * 1000.0)
        .fold(0.0, f64::max))
}

/// Mean / std of net impulse for one direction group.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ImpulseStats {
    pub n: usize,
    pub mean_ns: f64,
    pub std_ns: f64,
}

impl ImpulseStats {
    pub fn whisker_lo(&self) -> f64 {
        self.mean_ns - 2.0 * self.std_ns
    }
    pub fn whisker_hi(&self) -> f64 {
        self.mean_ns + 2.0 * self.std_ns
    }
}

/// Per-direction impulse summary over completed trials. Directions with
/// fewer than two records are absent; [`ImpulseSummary::stats`] reports
/// them as [`AnalysisError::EmptyGroup`].
#[derive(Clone, Debug, Default)]
pub struct ImpulseSummary {
    pub per_direction: BTreeMap<Direction, ImpulseStats>,
}

impl ImpulseSummary {
    pub fn stats(&self, direction: Direction) -> Result<&ImpulseStats, AnalysisError> {
        self.per_direction
            .get(&direction)
            .ok_or_else(|| AnalysisError::EmptyGroup(direction.label().into()))
    }
}

pub fn impulse_summary(records: &[TrialRecord]) -> ImpulseSummary {
    let mut grouped: BTreeMap<Direction, Vec<f64>> = BTreeMap::new();
    for r in records {
        if r.outcome == TrialOutcome::Completed {
            if let Some(j) = r.net_impulse_ns {
                grouped.entry(r.spec.direction).or_default().push(j);
            }
        }
    }
    let mut out = ImpulseSummary::default();
    for (dir, v) in grouped {
        if v.len() < 2 {
            continue;
        }
        let n = v.len();
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        out.per_direction.insert(
            dir,
            ImpulseStats {
                n,
                mean_ns: mean,
                std_ns: var.sqrt(),
            },
        );
    }
    out
}

/// Fixed-effect estimate for one warning modality, relative to no-warning.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FixedEffect {
    pub modality: WarningModality,
    pub estimate_mm: f64,
    pub std_error_mm: f64,
    pub p_value: f64,
}

/// Random-intercept LME fit for one direction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LmeFit {
    pub direction: Direction,
    /// No-warning displacement (mm).
    pub intercept_mm: f64,
    pub intercept_se_mm: f64,
    /// Offsets for audio, visual, audio-visual (reference: no warning).
    pub effects: Vec<FixedEffect>,
    pub random_intercept_var_mm2: f64,
    pub residual_var_mm2: f64,
    pub n_observations: usize,
    pub n_participants: usize,
    pub warnings: Vec<String>,
}

/// Significance threshold used when classifying effects.
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

const MODALITY_ORDER: [WarningModality; 3] = [
    WarningModality::Audio,
    WarningModality::Visual,
    WarningModality::AudioVisual,
];

/// Fit `displacement = intercept + modality + (1 | participant) + noise`
/// for one direction by profiled REML over the variance ratio
/// `lambda = var_participant / var_residual` (grid bracket plus
/// golden-section to 1e-6 relative), GLS fixed effects at the optimum, and
/// large-sample normal p-values.
pub fn fit_lme(
    observations: &[DisplacementObservation],
    direction: Direction,
) -> Result<LmeFit, AnalysisError> {
    let obs: Vec<&DisplacementObservation> = observations
        .iter()
        .filter(|o| o.direction == direction)
        .collect();
    if obs.is_empty() {
        return Err(AnalysisError::EmptyGroup(direction.label().into()));
    }
    for m in WarningModality::ALL {
        if !obs.iter().any(|o| o.modality == m) {
            return Err(AnalysisError::SingularDesign(m.label().into()));
        }
    }

    let mut participants: Vec<&str> = obs.iter().map(|o| o.participant.as_str()).collect();
    participants.sort_unstable();
    participants.dedup();
    let n_participants = participants.len();
    let mut warnings = Vec::new();

    let n = obs.len();
    let p = 4;
    let y = DVector::from_iterator(n, obs.iter().map(|o| o.max_displacement_mm));
    let mut x = DMatrix::zeros(n, p);
    for (i, o) in obs.iter().enumerate() {
        x[(i, 0)] = 1.0;
        if let Some(j) = MODALITY_ORDER.iter().position(|&m| m == o.modality) {
            x[(i, 1 + j)] = 1.0;
        }
    }
    let groups: Vec<usize> = obs
        .iter()
        .map(|o| {
            participants
                .binary_search(&o.participant.as_str())
                .expect("participant present")
        })
        .collect();

    // Profile the REML criterion over lambda.
    let single = n_participants < 2;
    if single {
        warnings.push(
            "single participant: random-intercept variance is not identifiable, pinned at 0"
                .into(),
        );
    }
    let lambda_hat = if single {
        0.0
    } else {
        profile_lambda(&y, &x, &groups, n_participants)
    };

    let sol = gls_at(&y, &x, &groups, lambda_hat);
    let sigma2 = sol.q / (n - p) as f64;
    let se: Vec<f64> = (0..p)
        .map(|j| (sigma2 * sol.xtvx_inv[(j, j)]).max(0.0).sqrt())
        .collect();

    let effects = MODALITY_ORDER
        .iter()
        .enumerate()
        .map(|(j, &m)| {
            let est = sol.beta[1 + j];
            let s = se[1 + j];
            let z = if s > 0.0 { est / s } else { f64::INFINITY };
            FixedEffect {
                modality: m,
                estimate_mm: est,
                std_error_mm: s,
                p_value: two_sided_normal_p(z),
            }
        })
        .collect();

    Ok(LmeFit {
        direction,
        intercept_mm: sol.beta[0],
        intercept_se_mm: se[0],
        effects,
        random_intercept_var_mm2: lambda_hat * sigma2,
        residual_var_mm2: sigma2,
        n_observations: n,
        n_participants,
        warnings,
    })
}

struct GlsSolution {
    beta: DVector<f64>,
    /// Residual quadratic form `r' V0^-1 r`.
    q: f64,
    xtvx_inv: DMatrix<f64>,
    log_det_v0: f64,
    log_det_xtvx: f64,
}

/// GLS solve at a fixed variance ratio: `V0 = I + lambda Z Z'`.
fn gls_at(y: &DVector<f64>, x: &DMatrix<f64>, groups: &[usize], lambda: f64) -> GlsSolution {
    let n = y.len();
    let p = x.ncols();
    let mut v0 = DMatrix::identity(n, n);
    if lambda > 0.0 {
        for i in 0..n {
            for j in 0..n {
                if groups[i] == groups[j] {
                    v0[(i, j)] += lambda;
                }
            }
        }
    }
    let chol = v0.cholesky().expect("V0 = I + lambda ZZ' is SPD");
    let log_det_v0 = 2.0 * chol.l_dirty().diagonal().map(|d: f64| d.ln()).sum();
    let v_inv_x = chol.solve(x);
    let v_inv_y = chol.solve(y);
    let xtvx = x.transpose() * &v_inv_x;
    let xtvy = x.transpose() * &v_inv_y;
    let xtvx_chol = xtvx.clone().cholesky().expect("X'V0^-1X is SPD");
    let log_det_xtvx = 2.0 * xtvx_chol.l_dirty().diagonal().map(|d: f64| d.ln()).sum();
    let beta: DVector<f64> = xtvx_chol.solve(&xtvy).column(0).into_owned();
    let r = y - x * &beta;
    let q = r.dot(&chol.solve(&r));
    let xtvx_inv = xtvx_chol.inverse();
    let _ = p;
    GlsSolution {
        beta,
        q,
        xtvx_inv,
        log_det_v0,
        log_det_xtvx,
    }
}

/// Restricted log-likelihood (up to an additive constant) at `lambda`.
fn reml_criterion(y: &DVector<f64>, x: &DMatrix<f64>, groups: &[usize], lambda: f64) -> f64 {
    let n = y.len() as f64;
    let p = x.ncols() as f64;
    let sol = gls_at(y, x, groups, lambda);
    -0.5 * (sol.log_det_v0 + sol.log_det_xtvx + (n - p) * sol.q.ln())
}

/// Maximise the REML criterion over `lambda >= 0`: coarse log-grid bracket,
/// then golden-section to 1e-6 relative width.
fn profile_lambda(y: &DVector<f64>, x: &DMatrix<f64>, groups: &[usize], _n_groups: usize) -> f64 {
    let mut candidates = vec![0.0];
    let mut l = 1e-6;
    while l <= 1e6 {
        candidates.push(l);
        l *= 10.0_f64.powf(0.25);
    }
    let scores: Vec<f64> = candidates
        .iter()
        .map(|&c| reml_criterion(y, x, groups, c))
        .collect();
    let best = scores
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("non-empty grid");
    if best == 0 {
        return 0.0;
    }
    let lo = candidates[best - 1];
    let hi = candidates[(best + 1).min(candidates.len() - 1)].max(candidates[best] * 1.5);

    const PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - PHI * (b - a);
    let mut x2 = a + PHI * (b - a);
    let mut f1 = reml_criterion(y, x, groups, x1);
    let mut f2 = reml_criterion(y, x, groups, x2);
    while (b - a) > 1e-6 * b.max(1e-9) {
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - PHI * (b - a);
            f1 = reml_criterion(y, x, groups, x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + PHI * (b - a);
            f2 = reml_criterion(y, x, groups, x2);
        }
    }
    let refined = 0.5 * (a + b);
    // Keep the boundary solution when the grid preferred lambda ~ 0.
    if reml_criterion(y, x, groups, refined) >= reml_criterion(y, x, groups, 0.0) {
        refined
    } else {
        0.0
    }
}

/// Two-sided p-value from a standard-normal z statistic.
pub fn two_sided_normal_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

/// Complementary error function (Numerical-Recipes rational approximation,
/// absolute error < 1.2e-7 — ample for reporting p-values).
fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let ans = t * (-z * z - 1.26551223
        + t * (1.00002368
            + t * (0.37409196
                + t * (0.09678418
                    + t * (-0.18628806
                        + t * (0.27886807
                            + t * (-1.13520398
                                + t * (1.48851587
                                    + t * (-0.82215223 + t * 0.17087277)))))))))
    .exp();
    if x >= 0.0 {
        ans
    } else {
        2.0 - ans
    }
}

/// Five-number summary with linear-interpolation quartiles.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FiveNumber {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

fn quantile_linear(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn five_number(values: &[f64]) -> Result<FiveNumber, AnalysisError> {
    if values.is_empty() {
        return Err(AnalysisError::EmptyGroup("empty value set".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(FiveNumber {
        min: sorted[0],
        q1: quantile_linear(&sorted, 0.25),
        median: quantile_linear(&sorted, 0.5),
        q3: quantile_linear(&sorted, 0.75),
        max: sorted[sorted.len() - 1],
    })
}

/// Five-number summaries per (direction, modality) group, in stable order.
pub fn summarize_boxplot(
    observations: &[DisplacementObservation],
) -> Result<Vec<(Direction, WarningModality, FiveNumber)>, AnalysisError> {
    if observations.is_empty() {
        return Err(AnalysisError::EmptyGroup("no observations".into()));
    }
    let mut grouped: BTreeMap<(Direction, WarningModality), Vec<f64>> = BTreeMap::new();
    for o in observations {
        grouped
            .entry((o.direction, o.modality))
            .or_default()
            .push(o.max_displacement_mm);
    }
    grouped
        .into_iter()
        .map(|((d, m), v)| five_number(&v).map(|f| (d, m, f)))
        .collect()
}

/// `lme_<direction>.csv` layout: rows for the intercept and the three
/// modality offsets with estimates and p-values.
pub fn lme_csv(fit: &LmeFit) -> String {
    let mut out = String::from("term,estimate_mm,p_value\n");
    let _ = writeln!(out, "intercept_nw,{:.4},", fit.intercept_mm);
    for e in &fit.effects {
        let _ = writeln!(
            out,
            "{},{:.4},{:.6}",
            e.modality.label(),
            e.estimate_mm,
            e.p_value
        );
    }
    let _ = writeln!(
        out,
        "random_intercept_var_mm2,{:.4},",
        fit.random_intercept_var_mm2
    );
    let _ = writeln!(out, "residual_var_mm2,{:.4},", fit.residual_var_mm2);
    out
}

pub fn impulses_csv(summary: &ImpulseSummary, desired_ns: f64) -> String {
    let mut out = String::from("direction,n,mean_ns,std_ns,lo_2std,hi_2std,desired_ns\n");
    for (d, s) in &summary.per_direction {
        let _ = writeln!(
            out,
            "{},{},{:.4},{:.4},{:.4},{:.4},{:.4}",
            d.label(),
            s.n,
            s.mean_ns,
            s.std_ns,
            s.whisker_lo(),
            s.whisker_hi(),
            desired_ns
        );
    }
    out
}

pub fn boxplot_csv(rows: &[(Direction, WarningModality, FiveNumber)]) -> String {
    let mut out = String::from("direction,modality,min,q1,median,q3,max\n");
    for (d, m, f) in rows {
        let _ = writeln!(
            out,
            "{},{},{:.4},{:.4},{:.4},{:.4},{:.4}",
            d.label(),
            m.label(),
            f.min,
            f.q1,
            f.median,
            f.q3,
            f.max
        );
    }
    out
}

/// Observations from completed trial records.
pub fn observations_from_records(records: &[TrialRecord]) -> Vec<DisplacementObservation> {
    records
        .iter()
        .filter(|r| r.outcome == TrialOutcome::Completed)
        .filter_map(|r| {
            r.max_displacement_mm.map(|d| DisplacementObservation {
                participant: r.participant_id.clone(),
                direction: r.spec.direction,
                modality: r.spec.modality,
                max_displacement_mm: d,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn normal<R: Rng>(rng: &mut R) -> f64 {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    #[test]
    fn displacement_constructed_excursion() {
        // Flat for 1 s, then a bump peaking at 150 mm.
        let mut traj = Vec::new();
        for i in 0..600 {
            let t = i as f64 * 0.005;
            let dx = if t >= 1.0 {
                0.15 * ((t - 1.0) * 2.0).min(1.0)
            } else {
                0.0
            };
            traj.push((t, dx, 0.0));
        }
        let d = extract_displacement(&traj, 1.0, 1.5).unwrap();
        assert!((d - 150.0).abs() < 1e-9, "{d}");
    }

    #[test]
    fn displacement_flat_is_zero() {
        let traj: Vec<(f64, f64, f64)> = (0..800).map(|i| (i as f64 * 0.005, 0.3, -0.1)).collect();
        // Baseline-mean rounding leaves only 1e-14-scale residue.
        assert!(extract_displacement(&traj, 1.5, 2.0).unwrap() < 1e-9);
    }

    #[test]
    fn displacement_requires_coverage() {
        let traj: Vec<(f64, f64, f64)> = (0..100).map(|i| (i as f64 * 0.005, 0.0, 0.0)).collect();
        assert_eq!(
            extract_displacement(&traj, 1.0, 2.0).unwrap_err(),
            AnalysisError::InsufficientCoverage
        );
    }

    #[test]
    fn boxplot_singleton_and_known_set() {
        let f = five_number(&[7.0]).unwrap();
        assert_eq!((f.min, f.q1, f.median, f.q3, f.max), (7.0, 7.0, 7.0, 7.0, 7.0));
        let f = five_number(&[5.0, 3.0, 1.0, 2.0, 4.0]).unwrap();
        assert_eq!((f.min, f.q1, f.median, f.q3, f.max), (1.0, 2.0, 3.0, 4.0, 5.0));
    }

    #[test]
    fn boxplot_monotone_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let vals: Vec<f64> = (0..rng.gen_range(1..40))
                .map(|_| rng.gen_range(-100.0..400.0))
                .collect();
            let f = five_number(&vals).unwrap();
            assert!(f.min <= f.q1 && f.q1 <= f.median && f.median <= f.q3 && f.q3 <= f.max);
        }
    }

    fn synth_observations(
        intercept: f64,
        audio: f64,
        visual: f64,
        av: f64,
        participant_sd: f64,
        residual_sd: f64,
        n_participants: usize,
        per_cell: usize,
        seed: u64,
    ) -> Vec<DisplacementObservation> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut obs = Vec::new();
        for pi in 0..n_participants {
            let b = participant_sd * normal(&mut rng);
            for (m, off) in [
                (WarningModality::None, 0.0),
                (WarningModality::Audio, audio),
                (WarningModality::Visual, visual),
                (WarningModality::AudioVisual, av),
            ] {
                for _ in 0..per_cell {
                    obs.push(DisplacementObservation {
                        participant: format!("P{pi:02}"),
                        direction: Direction::Right,
                        modality: m,
                        max_displacement_mm: intercept + off + b + residual_sd * normal(&mut rng),
                    });
                }
            }
        }
        obs
    }

    fn ols_oracle(obs: &[DisplacementObservation]) -> [f64; 4] {
        // Closed-form OLS for the dummy design: cell means.
        let mean = |m: WarningModality| {
            let v: Vec<f64> = obs
                .iter()
                .filter(|o| o.modality == m)
                .map(|o| o.max_displacement_mm)
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let nw = mean(WarningModality::None);
        [
            nw,
            mean(WarningModality::Audio) - nw,
            mean(WarningModality::Visual) - nw,
            mean(WarningModality::AudioVisual) - nw,
        ]
    }

    #[test]
    fn lme_equals_ols_when_no_participant_variance() {
        let obs = synth_observations(380.0, -30.0, -130.0, -110.0, 0.0, 40.0, 6, 3, 4);
        let fit = fit_lme(&obs, Direction::Right).unwrap();
        let ols = ols_oracle(&obs);
        // With zero true participant variance the REML profile collapses to
        // lambda ~ 0 and GLS reduces to OLS.
        assert!(
            fit.random_intercept_var_mm2 < 1.0,
            "variance {}",
            fit.random_intercept_var_mm2
        );
        assert!((fit.intercept_mm - ols[0]).abs() / ols[0].abs() < 1e-2);
        // Exact equality check at the lambda = 0 boundary:
        if fit.random_intercept_var_mm2 == 0.0 {
            for (e, o) in fit.effects.iter().zip(ols[1..].iter()) {
                assert!((e.estimate_mm - o).abs() <= 1e-6 * o.abs().max(1.0));
            }
        }
    }

    #[test]
    fn lme_monte_carlo_recovery() {
        let truth = [380.0, 0.0, -136.0, -60.0];
        let reps = 100;
        let mut sums = [0.0_f64; 4];
        for rep in 0..reps {
            let obs = synth_observations(
                truth[0], truth[1], truth[2], truth[3], 30.0, 40.0, 6, 3, 1000 + rep,
            );
            let fit = fit_lme(&obs, Direction::Right).unwrap();
            sums[0] += fit.intercept_mm;
            sums[1] += fit.effects[0].estimate_mm;
            sums[2] += fit.effects[1].estimate_mm;
            sums[3] += fit.effects[2].estimate_mm;
        }
        for (s, t) in sums.iter().zip(truth.iter()) {
            let mean = s / reps as f64;
            assert!(
                (mean - t).abs() <= 15.0,
                "recovered {mean:.1} vs truth {t:.1}"
            );
        }
    }

    #[test]
    fn lme_shift_equivariance() {
        let obs = synth_observations(350.0, -40.0, -120.0, -90.0, 25.0, 35.0, 6, 3, 7);
        let shifted: Vec<DisplacementObservation> = obs
            .iter()
            .map(|o| DisplacementObservation {
                max_displacement_mm: o.max_displacement_mm + 123.0,
                ..o.clone()
            })
            .collect();
        let a = fit_lme(&obs, Direction::Right).unwrap();
        let b = fit_lme(&shifted, Direction::Right).unwrap();
        assert!((b.intercept_mm - a.intercept_mm - 123.0).abs() < 1e-6);
        for (ea, eb) in a.effects.iter().zip(b.effects.iter()) {
            assert!((ea.estimate_mm - eb.estimate_mm).abs() < 1e-6);
            assert!((ea.p_value - eb.p_value).abs() < 1e-9);
        }
        assert!((a.residual_var_mm2 - b.residual_var_mm2).abs() < 1e-6);
        assert!((a.random_intercept_var_mm2 - b.random_intercept_var_mm2).abs() < 1e-5);
    }

    #[test]
    fn lme_participant_label_permutation_invariance() {
        let obs = synth_observations(350.0, -40.0, -120.0, -90.0, 25.0, 35.0, 5, 3, 9);
        let renamed: Vec<DisplacementObservation> = obs
            .iter()
            .map(|o| DisplacementObservation {
                participant: format!("Z{}", o.participant),
                ..o.clone()
            })
            .collect();
        let a = fit_lme(&obs, Direction::Right).unwrap();
        let b = fit_lme(&renamed, Direction::Right).unwrap();
        assert!((a.intercept_mm - b.intercept_mm).abs() < 1e-9);
        for (ea, eb) in a.effects.iter().zip(b.effects.iter()) {
            assert!((ea.estimate_mm - eb.estimate_mm).abs() < 1e-9);
        }
    }

    #[test]
    fn lme_missing_modality_is_singular() {
        let obs: Vec<DisplacementObservation> =
            synth_observations(350.0, -40.0, -120.0, -90.0, 25.0, 35.0, 4, 2, 3)
                .into_iter()
                .filter(|o| o.modality != WarningModality::Visual)
                .collect();
        assert_eq!(
            fit_lme(&obs, Direction::Right).unwrap_err(),
            AnalysisError::SingularDesign("visual".into())
        );
    }

    #[test]
    fn lme_single_participant_pins_variance() {
        let obs = synth_observations(350.0, -40.0, -120.0, -90.0, 25.0, 35.0, 1, 6, 5);
        let fit = fit_lme(&obs, Direction::Right).unwrap();
        assert_eq!(fit.random_intercept_var_mm2, 0.0);
        assert!(!fit.warnings.is_empty());
    }

    #[test]
    fn normal_p_value_sanity() {
        assert!((two_sided_normal_p(1.959964) - 0.05).abs() < 1e-4);
        assert!((two_sided_normal_p(0.0) - 1.0).abs() < 1e-9);
        assert!(two_sided_normal_p(6.0) < 1e-8);
    }
}
