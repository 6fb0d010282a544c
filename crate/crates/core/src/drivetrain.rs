//! One tether's motor/drum/tether plant under PID + feedforward force
//! control: time-domain simulation, frequency response, step metrics, and
//! damping identification.
//!
//! The plant is the lumped second-order model
//! `theta_out(s)/T_m(s) = N / (a2 s^2 + a1 s + a0)` with
//! `a2 = N^2 J_m + J_D`, `a1 = N^2 B_m + B_p r_D + B_D`, `a0 = K_T r_D^2`.
//! Tether force is `K_T * (r_D theta - x_end)` where `x_end` is the axial
//! motion of the harness attachment point.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Load-cell resolution in newtons (13.58 mN).
pub const LOAD_CELL_RESOLUTION: f64 = 0.01358;
/// Control-loop rate in Hz.
pub const CONTROL_RATE_HZ: f64 = 10_000.0;

#[derive(Debug, Error, PartialEq)]
pub enum DrivetrainError {
    #[error("simulated force exceeded 10x the command peak; check gains or step size")]
    UnstableSimulation,
    #[error("frequency grid does not bracket the -3 dB crossing")]
    GridTooCoarse,
    #[error("no step found in the commanded channel")]
    NoStepDetected,
    #[error("trace does not cover a command window")]
    WindowNotFound,
    #[error("malformed trace: {0}")]
    BadTrace(String),
}

/// Physical parameters of one tether drive.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantParams {
    pub gear_ratio: f64,
    #[serde(rename = "motor_inertia_kgm2")]
    pub motor_inertia: f64,
    #[serde(rename = "drum_inertia_kgm2")]
    pub drum_inertia: f64,
    #[serde(rename = "motor_damping_nms")]
    pub motor_damping: f64,
    #[serde(rename = "pulley_damping_nms")]
    pub pulley_damping: f64,
    #[serde(rename = "drum_damping_nms")]
    pub drum_damping: f64,
    #[serde(rename = "tether_stiffness_n_per_m")]
    pub tether_stiffness: f64,
    #[serde(rename = "drum_radius_m")]
    pub drum_radius: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        // Aggregate coefficients land at zeta = 0.827, wn = 42.45 rad/s,
        // i.e. a half-power crossing near 35.34 rad/s and 4/(zeta*wn) of
        // 114 ms. Only the aggregates are meaningful; the split between
        // the individual damping terms is not identifiable.
        PlantParams {
            gear_ratio: 20.0,
            motor_inertia: 2.5e-5,
            drum_inertia: 6.648e-3,
            motor_damping: 2.0e-3,
            pulley_damping: 2.0,
            drum_damping: 0.26836,
            tether_stiffness: 12_000.0,
            drum_radius: 0.05,
        }
    }
}

impl PlantParams {
    /// `a2 = N^2 J_m + J_D` (kg m^2).
    pub fn inertia_coeff(&self) -> f64 {
        self.gear_ratio * self.gear_ratio * self.motor_inertia + self.drum_inertia
    }

    /// `a1 = N^2 B_m + B_p r_D + B_D` (N m s/rad).
    pub fn damping_coeff(&self) -> f64 {
        self.gear_ratio * self.gear_ratio * self.motor_damping
            + self.pulley_damping * self.drum_radius
            + self.drum_damping
    }

    /// `a0 = K_T r_D^2` (N m/rad).
    pub fn stiffness_coeff(&self) -> f64 {
        self.tether_stiffness * self.drum_radius * self.drum_radius
    }

    /// Steady torque (N m) holding a given tether force.
    pub fn holding_torque(&self, force: f64) -> f64 {
        force * self.drum_radius / self.gear_ratio
    }
}

/// Second-order rational transfer function `N / (a2 s^2 + a1 s + a0)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransferFunction {
    pub numerator: f64,
    pub denominator: [f64; 3],
}

impl TransferFunction {
    pub fn dc_gain(&self) -> f64 {
        self.numerator / self.denominator[2]
    }

    /// Complex response at `omega` rad/s as (re, im).
    pub fn response(&self, omega: f64) -> (f64, f64) {
        let [a2, a1, a0] = self.denominator;
        let dr = a0 - a2 * omega * omega;
        let di = a1 * omega;
        let mag2 = dr * dr + di * di;
        (self.numerator * dr / mag2, -self.numerator * di / mag2)
    }

    pub fn magnitude(&self, omega: f64) -> f64 {
        let (re, im) = self.response(omega);
        re.hypot(im)
    }
}

/// Drum-position-per-torque transfer function of the plant.
pub fn transfer_function(params: &PlantParams) -> TransferFunction {
    TransferFunction {
        numerator: params.gear_ratio,
        denominator: [
            params.inertia_coeff(),
            params.damping_coeff(),
            params.stiffness_coeff(),
        ],
    }
}

/// Frequency response over a grid plus the half-power (-3 dB) crossing.
#[derive(Clone, Debug)]
pub struct BodeResponse {
    pub omega: Vec<f64>,
    pub magnitude_db: Vec<f64>,
    pub phase_deg: Vec<f64>,
    /// Crossing located by bisection to 1e-3 rad/s.
    pub f_minus3db_rad_s: f64,
}

/// Evaluate the Bode response on an increasing positive grid (rad/s).
pub fn bode(params: &PlantParams, freq_grid: &[f64]) -> Result<BodeResponse, DrivetrainError> {
    assert!(
        freq_grid.windows(2).all(|w| w[0] < w[1]) && freq_grid.first().is_some_and(|&f| f > 0.0),
        "frequency grid must be positive and increasing"
    );
    let tf = transfer_function(params);
    let dc = tf.dc_gain().abs();
    let target = dc / 2.0_f64.sqrt();

    let mut magnitude_db = Vec::with_capacity(freq_grid.len());
    let mut phase_deg = Vec::with_capacity(freq_grid.len());
    for &w in freq_grid {
        let (re, im) = tf.response(w);
        magnitude_db.push(20.0 * re.hypot(im).log10());
        phase_deg.push(im.atan2(re).to_degrees());
    }

    let mut bracket = None;
    for w in freq_grid.windows(2) {
        if tf.magnitude(w[0]) >= target && tf.magnitude(w[1]) < target {
            bracket = Some((w[0], w[1]));
            break;
        }
    }
    let (mut lo, mut hi) = bracket.ok_or(DrivetrainError::GridTooCoarse)?;
    while hi - lo > 1e-3 {
        let mid = 0.5 * (lo + hi);
        if tf.magnitude(mid) >= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(BodeResponse {
        omega: freq_grid.to_vec(),
        magnitude_db,
        phase_deg,
        f_minus3db_rad_s: 0.5 * (lo + hi),
    })
}

/// PID gains for one controller mode.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

/// Two-mode force controller configuration.
///
/// The nominal mode holds the baseline tension; the perturbation mode adds a
/// feedforward torque for the commanded force delta, shaped with a decaying
/// kick for a faster rise. The integrator runs only near the setpoint or
/// when the error has stalled, and torque release is slew-limited so the
/// tether never snaps slack.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerGains {
    pub nominal: PidGains,
    pub perturbation: PidGains,
    /// Feedforward gain on the commanded force delta (1.0 = exact holding torque).
    pub kff: f64,
    /// Initial overshoot of the feedforward kick, as a fraction of the delta.
    pub ff_boost: f64,
    /// Decay time constant of the feedforward kick (s).
    pub ff_boost_tau_s: f64,
    /// Integrate only when |error| is inside this band or the error has stalled (N).
    pub integral_band_n: f64,
    /// Error slope below which the integrator runs regardless of band (N/s).
    pub integral_stall_slope_n_per_s: f64,
    /// Maximum torque release rate (N m/s).
    pub torque_release_slew: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        ControllerGains {
            nominal: PidGains {
                kp: 5.0e-4,
                ki: 0.02,
                kd: 0.0,
            },
            perturbation: PidGains {
                kp: 5.0e-4,
                ki: 0.05,
                kd: 1.0e-5,
            },
            kff: 1.0,
            ff_boost: 0.4,
            ff_boost_tau_s: 0.018,
            integral_band_n: 15.0,
            integral_stall_slope_n_per_s: 50.0,
            torque_release_slew: 12.0,
        }
    }
}

/// A piecewise-constant force command: baseline plus rectangular pulses.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ForceProfile {
    pub baseline_n: f64,
    pub pulses: Vec<ForcePulse>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ForcePulse {
    pub start_s: f64,
    pub duration_s: f64,
    /// Commanded force above the baseline during the pulse (N).
    pub amplitude_n: f64,
}

impl ForceProfile {
    pub fn constant(level: f64) -> Self {
        ForceProfile {
            baseline_n: level,
            pulses: Vec::new(),
        }
    }

    pub fn single_pulse(baseline: f64, start: f64, duration: f64, amplitude: f64) -> Self {
        ForceProfile {
            baseline_n: baseline,
            pulses: vec![ForcePulse {
                start_s: start,
                duration_s: duration,
                amplitude_n: amplitude,
            }],
        }
    }

    /// Commanded force at time `t` and the start time of the active pulse.
    pub fn value(&self, t: f64) -> (f64, Option<f64>) {
        for p in &self.pulses {
            if t >= p.start_s && t < p.start_s + p.duration_s {
                return (self.baseline_n + p.amplitude_n, Some(p.start_s));
            }
        }
        (self.baseline_n, None)
    }

    pub fn span(&self) -> f64 {
        self.pulses
            .iter()
            .map(|p| p.start_s + p.duration_s)
            .fold(0.0, f64::max)
    }

    pub fn peak(&self) -> f64 {
        self.baseline_n
            + self
                .pulses
                .iter()
                .map(|p| p.amplitude_n)
                .fold(0.0, f64::max)
    }
}

/// What the far end of the tether is attached to.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub enum LoadModel {
    /// Rigid anchor: the endpoint never moves.
    Stationary,
    /// Harness on a running person: a small local yield impedance plus an
    /// axial bob at the stride rate.
    Runner(RunnerCoupling),
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunnerCoupling {
    pub yield_mass_kg: f64,
    pub yield_stiffness_n_per_m: f64,
    pub yield_damping_ns_per_m: f64,
    pub bob_amplitude_m: f64,
    pub bob_frequency_hz: f64,
}

impl Default for RunnerCoupling {
    fn default() -> Self {
        RunnerCoupling {
            yield_mass_kg: 15.0,
            yield_stiffness_n_per_m: 18_000.0,
            yield_damping_ns_per_m: 300.0,
            bob_amplitude_m: 0.001,
            bob_frequency_hz: 3.57,
        }
    }
}

/// Uniformly sampled commanded/measured force pair.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ForceTrace {
    pub sample_rate_hz: f64,
    pub commanded: Vec<f64>,
    pub measured: Vec<f64>,
}

impl ForceTrace {
    pub fn len(&self) -> usize {
        self.commanded.len()
    }

    pub fn is_empty(&self) -> bool {
        self.commanded.is_empty()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate_hz
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt()
    }

    /// CSV with header `t_s,commanded_N,measured_N`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_s,commanded_N,measured_N\n");
        for i in 0..self.len() {
            out.push_str(&format!(
                "{:.6},{:.6},{:.6}\n",
                self.time(i),
                self.commanded[i],
                self.measured[i]
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<ForceTrace, DrivetrainError> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| DrivetrainError::BadTrace("empty file".into()))?;
        if header.trim() != "t_s,commanded_N,measured_N" {
            return Err(DrivetrainError::BadTrace(format!(
                "unexpected header {header:?}"
            )));
        }
        let mut times = Vec::new();
        let mut commanded = Vec::new();
        let mut measured = Vec::new();
        for (n, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let mut next = || -> Result<f64, DrivetrainError> {
                fields
                    .next()
                    .ok_or_else(|| DrivetrainError::BadTrace(format!("row {n}: missing field")))?
                    .trim()
                    .parse()
                    .map_err(|e| DrivetrainError::BadTrace(format!("row {n}: {e}")))
            };
            times.push(next()?);
            commanded.push(next()?);
            measured.push(next()?);
        }
        if times.len() < 2 {
            return Err(DrivetrainError::BadTrace("need at least 2 samples".into()));
        }
        let dt = times[1] - times[0];
        if dt <= 0.0 {
            return Err(DrivetrainError::BadTrace("non-increasing time".into()));
        }
        Ok(ForceTrace {
            sample_rate_hz: 1.0 / dt,
            commanded,
            measured,
        })
    }
}

/// Simulation options for [`simulate_force`].
#[derive(Clone, Copy, Debug)]
pub struct SimOptions {
    /// Total simulated time (s); must cover the profile span.
    pub duration_s: f64,
    /// Control-loop rate (Hz).
    pub control_rate_hz: f64,
    /// Plant integration substeps per control tick.
    pub plant_substeps: u32,
    /// Std of zero-mean measurement noise (N); quantisation always applies.
    pub noise_std_n: f64,
    pub seed: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            duration_s: 1.2,
            control_rate_hz: CONTROL_RATE_HZ,
            plant_substeps: 1,
            noise_std_n: 0.0,
            seed: 0,
        }
    }
}

fn quantize(f: f64) -> f64 {
    (f / LOAD_CELL_RESOLUTION).round() * LOAD_CELL_RESOLUTION
}

/// Stateful single-tether force servo; step it at the control rate.
///
/// Used directly by the session loop; [`simulate_force`] wraps it for
/// standalone profiles.
#[derive(Clone, Debug)]
pub struct TetherServo {
    params: PlantParams,
    gains: ControllerGains,
    a2: f64,
    a1: f64,
    /// Drum angle (rad) and angular velocity.
    theta: f64,
    omega: f64,
    /// Velocity-form PID state (torque, N m).
    u: f64,
    e_prev: f64,
    y1: f64,
    y2: f64,
    torque_prev: f64,
    baseline: f64,
}

impl TetherServo {
    /// Start at steady state holding `baseline` newtons on a fixed endpoint.
    pub fn new(params: &PlantParams, gains: &ControllerGains, baseline: f64) -> Self {
        let theta = baseline / (params.tether_stiffness * params.drum_radius);
        let u = params.holding_torque(baseline);
        TetherServo {
            params: params.clone(),
            gains: *gains,
            a2: params.inertia_coeff(),
            a1: params.damping_coeff(),
            theta,
            omega: 0.0,
            u,
            e_prev: 0.0,
            y1: baseline,
            y2: baseline,
            torque_prev: u,
            baseline,
        }
    }

    /// Unquantised tether force for an endpoint displacement (m, toward the anchor).
    pub fn force(&self, x_end: f64) -> f64 {
        self.params.tether_stiffness * (self.params.drum_radius * self.theta - x_end)
    }

    /// Advance one control tick. `pulse_elapsed` is `Some(time since the
    /// active pulse began)` while a perturbation is commanded.
    ///
    /// Returns the quantised measured force fed back to the controller.
    pub fn step(
        &mut self,
        commanded: f64,
        pulse_elapsed: Option<f64>,
        x_end: f64,
        dt: f64,
        substeps: u32,
        noise: f64,
    ) -> f64 {
        let g = &self.gains;
        let y = quantize(self.force(x_end) + noise);
        let e = commanded - y;
        let pid = if pulse_elapsed.is_some() {
            g.perturbation
        } else {
            g.nominal
        };
        let stalled = (e - self.e_prev).abs() / dt <= g.integral_stall_slope_n_per_s;
        let integrate = e.abs() <= g.integral_band_n || stalled;
        self.u += pid.kp * (e - self.e_prev)
            + if integrate { pid.ki * dt * e } else { 0.0 }
            - pid.kd / dt * (y - 2.0 * self.y1 + self.y2);
        self.e_prev = e;
        self.y2 = self.y1;
        self.y1 = y;

        let ff = match pulse_elapsed {
            Some(elapsed) => {
                let delta = commanded - self.baseline;
                g.kff
                    * self.params.holding_torque(delta)
                    * (1.0 + g.ff_boost * (-elapsed / g.ff_boost_tau_s).exp())
            }
            None => 0.0,
        };
        let mut torque = self.u + ff;
        torque = torque.max(self.torque_prev - g.torque_release_slew * dt);
        self.torque_prev = torque;

        let dt_sub = dt / f64::from(substeps);
        for _ in 0..substeps {
            let spring = self.params.tether_stiffness
                * self.params.drum_radius
                * (self.params.drum_radius * self.theta - x_end);
            let acc = (self.params.gear_ratio * torque - self.a1 * self.omega - spring) / self.a2;
            self.omega += acc * dt_sub;
            self.theta += self.omega * dt_sub;
        }
        y
    }
}

/// Simulate the closed-loop force servo tracking a piecewise profile.
pub fn simulate_force(
    params: &PlantParams,
    gains: &ControllerGains,
    profile: &ForceProfile,
    load: LoadModel,
    opts: &SimOptions,
) -> Result<ForceTrace, DrivetrainError> {
    assert!(
        opts.duration_s >= profile.span(),
        "duration must cover the profile span"
    );
    assert!(
        profile.baseline_n >= 0.0 && profile.pulses.iter().all(|p| p.amplitude_n >= 0.0),
        "command profile must be non-negative"
    );
    let dt = 1.0 / opts.control_rate_hz;
    let n = (opts.duration_s / dt).round() as usize;
    let mut servo = TetherServo::new(params, gains, profile.baseline_n);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let blow_up = 10.0 * profile.peak().max(profile.baseline_n).max(1.0);

    // Endpoint yield state for the runner coupling.
    let (mut xe, mut ve) = (0.0_f64, 0.0_f64);

    let mut commanded = Vec::with_capacity(n);
    let mut measured = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 * dt;
        let (cmd, pulse_start) = profile.value(t);
        let x_end = match load {
            LoadModel::Stationary => 0.0,
            LoadModel::Runner(c) => {
                xe + c.bob_amplitude_m * (2.0 * std::f64::consts::PI * c.bob_frequency_hz * t).sin()
            }
        };
        let force_now = servo.force(x_end);
        let noise = if opts.noise_std_n > 0.0 {
            let z: f64 = sample_standard_normal(&mut rng);
            z * opts.noise_std_n
        } else {
            0.0
        };
        let y = servo.step(
            cmd,
            pulse_start.map(|s| t - s),
            x_end,
            dt,
            opts.plant_substeps,
            noise,
        );
        if y.abs() > blow_up {
            return Err(DrivetrainError::UnstableSimulation);
        }
        commanded.push(cmd);
        measured.push(y);

        if let LoadModel::Runner(c) = load {
            let excess = (force_now - profile.baseline_n).max(0.0);
            let ae = (excess - c.yield_stiffness_n_per_m * xe - c.yield_damping_ns_per_m * ve)
                / c.yield_mass_kg;
            ve += ae * dt;
            xe += ve * dt;
        }
    }
    Ok(ForceTrace {
        sample_rate_hz: opts.control_rate_hz,
        commanded,
        measured,
    })
}

/// Box-Muller sample; avoids pulling in a distributions crate for one call.
fn sample_standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Open-loop plant response to a torque trajectory; returns unquantised force.
pub fn simulate_open_loop(
    params: &PlantParams,
    torque: impl Fn(f64) -> f64,
    duration_s: f64,
    dt: f64,
) -> Vec<f64> {
    let a2 = params.inertia_coeff();
    let a1 = params.damping_coeff();
    let n = (duration_s / dt).round() as usize;
    let (mut theta, mut omega) = (0.0_f64, 0.0_f64);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 * dt;
        out.push(params.tether_stiffness * params.drum_radius * theta);
        let spring = params.stiffness_coeff() * theta;
        let acc = (params.gear_ratio * torque(t) - a1 * omega - spring) / a2;
        omega += acc * dt;
        theta += omega * dt;
    }
    out
}

/// Open-loop torque-step experiment used for damping identification: the
/// commanded channel records the equivalent force level, the measured
/// channel the quantised tether force from rest.
pub fn open_loop_step_trace(
    params: &PlantParams,
    force_level: f64,
    pre_s: f64,
    hold_s: f64,
    sample_rate_hz: f64,
) -> ForceTrace {
    let dt = 1.0 / sample_rate_hz;
    let n = ((pre_s + hold_s) / dt).round() as usize;
    let a2 = params.inertia_coeff();
    let a1 = params.damping_coeff();
    let (mut theta, mut omega) = (0.0_f64, 0.0_f64);
    let mut commanded = Vec::with_capacity(n);
    let mut measured = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 * dt;
        let cmd = if t >= pre_s { force_level } else { 0.0 };
        measured.push(quantize(
            params.tether_stiffness * params.drum_radius * theta,
        ));
        commanded.push(cmd);
        let spring = params.stiffness_coeff() * theta;
        let torque = params.holding_torque(cmd);
        let acc = (params.gear_ratio * torque - a1 * omega - spring) / a2;
        omega += acc * dt;
        theta += omega * dt;
    }
    ForceTrace {
        sample_rate_hz,
        commanded,
        measured,
    }
}

/// Step-response quality metrics.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct StepMetrics {
    pub percent_overshoot: f64,
    pub rise_time_10_90_ms: f64,
    pub ripple_pp_n: f64,
    pub steady_error_n: f64,
    pub net_impulse_ns: f64,
    pub settling_time_ms: f64,
}

/// Integral of `(measured - baseline) dt` over `[t0, t1)`, left-Riemann.
pub fn impulse_over(trace: &ForceTrace, baseline: f64, t0: f64, t1: f64) -> f64 {
    let dt = trace.dt();
    let i0 = (t0 / dt).round() as usize;
    let i1 = ((t1 / dt).round() as usize).min(trace.len());
    trace.measured[i0.min(trace.len())..i1]
        .iter()
        .map(|&f| (f - baseline) * dt)
        .sum()
}

/// Tail margin past the command window over which [`step_metrics`]
/// integrates the net impulse (s).
pub const IMPULSE_TAIL_S: f64 = 0.2;

/// Extract step metrics from a trace around its commanded pulse.
///
/// Overshoot and rise are measured against `command_peak`; the settling
/// band is +/-2% of `command_peak`; net impulse integrates measured force
/// above `baseline` from onset to pulse end plus [`IMPULSE_TAIL_S`].
/// A trace whose commanded channel never leaves the baseline yields
/// all-zero metrics.
pub fn step_metrics(
    trace: &ForceTrace,
    baseline: f64,
    command_peak: f64,
) -> Result<StepMetrics, DrivetrainError> {
    if trace.is_empty() {
        return Err(DrivetrainError::WindowNotFound);
    }
    let dt = trace.dt();
    let tol = 1e-9;
    let Some(i0) = trace.commanded.iter().position(|&c| c > baseline + tol) else {
        return Ok(StepMetrics::default());
    };
    let i1 = trace
        .commanded
        .iter()
        .rposition(|&c| c > baseline + tol)
        .expect("onset exists");
    let amp = command_peak - baseline;
    assert!(amp > 0.0, "command peak must exceed baseline");

    let hold = &trace.measured[i0..=i1];
    let max_meas = hold.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let percent_overshoot = (max_meas - command_peak) / amp * 100.0;

    let rise_from = trace.measured[i0..]
        .iter()
        .position(|&f| f >= baseline + 0.1 * amp);
    let rise_to = trace.measured[i0..]
        .iter()
        .position(|&f| f >= baseline + 0.9 * amp);
    let rise_time_10_90_ms = match (rise_from, rise_to) {
        (Some(a), Some(b)) if b >= a => (b - a) as f64 * dt * 1000.0,
        _ => 0.0,
    };

    // Settling: last time the hold-phase response sits outside +/-2% of the
    // commanded value, measured from onset.
    let band = 0.02 * command_peak;
    let settling_time_ms = hold
        .iter()
        .rposition(|&f| (f - command_peak).abs() > band)
        .map_or(0.0, |k| (k + 1) as f64 * dt * 1000.0);

    // Ripple and steady error over the back 40% of the hold phase.
    let hold_start = i0 + ((i1 - i0) as f64 * 0.6) as usize;
    let tailwin = &trace.measured[hold_start..=i1];
    let ripple_pp_n = if tailwin.is_empty() {
        0.0
    } else {
        tailwin.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - tailwin.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    let steady_error_n = if tailwin.is_empty() {
        0.0
    } else {
        (tailwin.iter().sum::<f64>() / tailwin.len() as f64 - command_peak).abs()
    };

    let net_impulse_ns = impulse_over(
        trace,
        baseline,
        i0 as f64 * dt,
        (i1 + 1) as f64 * dt + IMPULSE_TAIL_S,
    );

    Ok(StepMetrics {
        percent_overshoot,
        rise_time_10_90_ms,
        ripple_pp_n,
        steady_error_n,
        net_impulse_ns,
        settling_time_ms,
    })
}

/// Result of the lumped-damping fit.
#[derive(Clone, Copy, Debug)]
pub struct DampingFit {
    /// Fitted total damping coefficient `a1` (N m s/rad).
    pub damping_coeff: f64,
    pub rmse_n: f64,
    /// Set when a second local minimum sits within 5% RMSE of the best.
    pub non_convex_warning: bool,
}

/// Plant parameters that are known ahead of the damping fit.
#[derive(Clone, Copy, Debug)]
pub struct InertiaParams {
    pub gear_ratio: f64,
    pub motor_inertia: f64,
    pub drum_inertia: f64,
    pub tether_stiffness: f64,
    pub drum_radius: f64,
}

impl From<&PlantParams> for InertiaParams {
    fn from(p: &PlantParams) -> Self {
        InertiaParams {
            gear_ratio: p.gear_ratio,
            motor_inertia: p.motor_inertia,
            drum_inertia: p.drum_inertia,
            tether_stiffness: p.tether_stiffness,
            drum_radius: p.drum_radius,
        }
    }
}

impl InertiaParams {
    /// Plant with all damping lumped into the drum term so that
    /// `damping_coeff() == a1`.
    fn with_damping(&self, a1: f64) -> PlantParams {
        PlantParams {
            gear_ratio: self.gear_ratio,
            motor_inertia: self.motor_inertia,
            drum_inertia: self.drum_inertia,
            motor_damping: 0.0,
            pulley_damping: 0.0,
            drum_damping: a1,
            tether_stiffness: self.tether_stiffness,
            drum_radius: self.drum_radius,
        }
    }
}

/// Fit the lumped damping `a1` by minimising the RMSE between the recorded
/// step response and the open-loop torque-step model.
///
/// Coarse log-spaced scan brackets the minimum, then golden-section refines
/// to 1e-4 relative width.
pub fn fit_damping(
    recorded: &ForceTrace,
    known: &InertiaParams,
) -> Result<DampingFit, DrivetrainError> {
    if recorded.is_empty() {
        return Err(DrivetrainError::NoStepDetected);
    }
    assert!(
        known.gear_ratio > 0.0
            && known.motor_inertia > 0.0
            && known.drum_inertia > 0.0
            && known.tether_stiffness > 0.0
            && known.drum_radius > 0.0,
        "known plant fields must be positive"
    );
    let base = recorded.commanded[0];
    let onset = recorded
        .commanded
        .iter()
        .position(|&c| (c - base).abs() > 1e-9)
        .ok_or(DrivetrainError::NoStepDetected)?;
    let level = recorded.commanded[onset];
    let pre_s = onset as f64 * recorded.dt();
    let hold_s = (recorded.len() - onset) as f64 * recorded.dt();

    let rmse = |a1: f64| -> f64 {
        let model = open_loop_step_trace(
            &known.with_damping(a1),
            level,
            pre_s,
            hold_s,
            recorded.sample_rate_hz,
        );
        let n = model.len().min(recorded.len());
        let sum: f64 = (0..n)
            .map(|i| {
                let d = model.measured[i] - recorded.measured[i];
                d * d
            })
            .sum();
        (sum / n as f64).sqrt()
    };

    // Coarse scan around the critical-damping scale.
    let scale = 2.0
        * ((known.gear_ratio * known.gear_ratio * known.motor_inertia + known.drum_inertia)
            * known.tether_stiffness
            * known.drum_radius
            * known.drum_radius)
            .sqrt();
    let n_scan = 48;
    let (lo_f, hi_f) = (0.02_f64, 10.0_f64);
    let grid: Vec<f64> = (0..n_scan)
        .map(|i| scale * lo_f * (hi_f / lo_f).powf(i as f64 / (n_scan - 1) as f64))
        .collect();
    let errs: Vec<f64> = grid.iter().map(|&a| rmse(a)).collect();

    let best = errs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("non-empty scan");
    let mut local_minima = Vec::new();
    for i in 1..n_scan - 1 {
        if errs[i] <= errs[i - 1] && errs[i] <= errs[i + 1] {
            local_minima.push(i);
        }
    }
    let non_convex_warning = local_minima
        .iter()
        .filter(|&&i| errs[i] <= errs[best] * 1.05)
        .count()
        > 1;

    let mut lo = grid[best.saturating_sub(1)];
    let mut hi = grid[(best + 1).min(n_scan - 1)];
    if lo >= hi {
        hi = lo * 1.5;
    }
    const PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = hi - PHI * (hi - lo);
    let mut x2 = lo + PHI * (hi - lo);
    let (mut f1, mut f2) = (rmse(x1), rmse(x2));
    while (hi - lo) / hi > 1e-4 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - PHI * (hi - lo);
            f1 = rmse(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + PHI * (hi - lo);
            f2 = rmse(x2);
        }
    }
    let a1 = 0.5 * (lo + hi);
    Ok(DampingFit {
        damping_coeff: a1,
        rmse_n: rmse(a1),
        non_convex_warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn transfer_function_coefficients() {
        let p = PlantParams::default();
        let tf = transfer_function(&p);
        assert_relative_eq!(
            tf.denominator[0],
            p.gear_ratio * p.gear_ratio * p.motor_inertia + p.drum_inertia,
            epsilon = 1e-15
        );
        assert_relative_eq!(
            tf.denominator[1],
            p.gear_ratio * p.gear_ratio * p.motor_damping
                + p.pulley_damping * p.drum_radius
                + p.drum_damping,
            epsilon = 1e-15
        );
        assert_relative_eq!(
            tf.denominator[2],
            p.tether_stiffness * p.drum_radius * p.drum_radius,
            epsilon = 1e-15
        );
        // DC gain is N / (K_T r_D^2).
        assert_relative_eq!(
            tf.dc_gain(),
            p.gear_ratio / (p.tether_stiffness * p.drum_radius * p.drum_radius),
            epsilon = 1e-12
        );
    }

    #[test]
    fn undamped_plant_oscillates_at_sqrt_a0_over_a2() {
        let p = PlantParams {
            motor_damping: 0.0,
            pulley_damping: 0.0,
            drum_damping: 0.0,
            ..PlantParams::default()
        };
        let tf = transfer_function(&p);
        let wn = (tf.denominator[2] / tf.denominator[0]).sqrt();
        // Purely imaginary poles: the response magnitude diverges at wn.
        assert!(tf.magnitude(wn) > 1e6 * tf.dc_gain());
    }

    #[test]
    fn bode_dc_and_phase_asymptotes() {
        let p = PlantParams::default();
        let grid: Vec<f64> = (0..400).map(|i| 1e-3 * 1.05_f64.powi(i)).collect();
        let b = bode(&p, &grid).unwrap();
        let dc_db = 20.0 * transfer_function(&p).dc_gain().log10();
        assert!((b.magnitude_db[0] - dc_db).abs() < 0.01);
        assert!((b.phase_deg.last().unwrap() - -180.0).abs() < 2.0);
    }

    #[test]
    fn bode_crossing_matches_published_bandwidth() {
        let p = PlantParams::default();
        let grid: Vec<f64> = (1..2000).map(|i| i as f64 * 0.1).collect();
        let b = bode(&p, &grid).unwrap();
        assert!(
            (b.f_minus3db_rad_s - 35.343).abs() < 0.5,
            "-3 dB at {} rad/s",
            b.f_minus3db_rad_s
        );
    }

    #[test]
    fn bode_grid_too_coarse() {
        let p = PlantParams::default();
        assert_eq!(
            bode(&p, &[1.0, 2.0]).unwrap_err(),
            DrivetrainError::GridTooCoarse
        );
    }

    #[test]
    fn zero_command_stays_zero() {
        let trace = simulate_force(
            &PlantParams::default(),
            &ControllerGains::default(),
            &ForceProfile::constant(0.0),
            LoadModel::Stationary,
            &SimOptions {
                duration_s: 0.3,
                ..SimOptions::default()
            },
        )
        .unwrap();
        assert!(trace.measured.iter().all(|&f| f.abs() < 1e-9));
    }

    #[test]
    fn open_loop_is_linear_sample_exact() {
        let p = PlantParams::default();
        let base = simulate_open_loop(&p, |t| if t > 0.05 { 0.3 } else { 0.0 }, 0.5, 1e-4);
        let double = simulate_open_loop(&p, |t| if t > 0.05 { 0.6 } else { 0.0 }, 0.5, 1e-4);
        for (a, b) in base.iter().zip(double.iter()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn closed_loop_steady_error_vanishes() {
        // Constant command away from the initial state: the stall rule lets
        // the integrator pull the error to zero despite the windup band.
        let profile = ForceProfile::constant(80.0);
        let mut opts = SimOptions {
            duration_s: 3.0,
            ..SimOptions::default()
        };
        opts.seed = 7;
        let mut servo_profile = profile.clone();
        servo_profile.baseline_n = 80.0;
        // Start the servo at 30 N and command 80 N in nominal mode.
        let params = PlantParams::default();
        let gains = ControllerGains::default();
        let dt = 1.0 / opts.control_rate_hz;
        let mut servo = TetherServo::new(&params, &gains, 30.0);
        servo.baseline = 80.0;
        let mut last = 0.0;
        for _ in 0..(opts.duration_s / dt) as usize {
            last = servo.step(80.0, None, 0.0, dt, 1, 0.0);
        }
        assert!(
            (last - 80.0).abs() <= LOAD_CELL_RESOLUTION,
            "steady error {} N",
            (last - 80.0).abs()
        );
    }

    #[test]
    fn bode_matches_sinusoidal_steady_state() {
        let p = PlantParams::default();
        let tf = transfer_function(&p);
        for &w in &[5.0, 15.0, 30.0, 60.0, 120.0] {
            let dt = 1e-5;
            let dur = 8.0 * 2.0 * std::f64::consts::PI / w;
            let amp_in = 0.2;
            let force = simulate_open_loop(&p, |t| amp_in * (w * t).sin(), dur, dt);
            // Steady-state amplitude over the last two periods.
            let tail = (2.0 * 2.0 * std::f64::consts::PI / w / dt) as usize;
            let seg = &force[force.len() - tail..];
            let amp_out = 0.5
                * (seg.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                    - seg.iter().cloned().fold(f64::INFINITY, f64::min));
            // Force per torque = K_T r_D |H|.
            let expected = p.tether_stiffness * p.drum_radius * tf.magnitude(w) * amp_in;
            assert_relative_eq!(amp_out, expected, max_relative = 0.02);
        }
    }

    #[test]
    fn metrics_ideal_rectangular_pulse() {
        let rate = CONTROL_RATE_HZ;
        let n = (1.0 * rate) as usize;
        let dt = 1.0 / rate;
        let mut commanded = vec![30.0; n];
        let mut measured = vec![30.0; n];
        let i0 = (0.2 / dt) as usize;
        let i1 = (0.45 / dt) as usize;
        for i in i0..i1 {
            commanded[i] = 155.0;
            measured[i] = 155.0;
        }
        let trace = ForceTrace {
            sample_rate_hz: rate,
            commanded,
            measured,
        };
        let m = step_metrics(&trace, 30.0, 155.0).unwrap();
        assert_relative_eq!(m.net_impulse_ns, 31.25, epsilon = 1e-9);
        assert_relative_eq!(m.percent_overshoot, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn metrics_flat_trace_is_zero() {
        let trace = ForceTrace {
            sample_rate_hz: 1000.0,
            commanded: vec![30.0; 1000],
            measured: vec![30.0; 1000],
        };
        let m = step_metrics(&trace, 30.0, 155.0).unwrap();
        assert_eq!(m.percent_overshoot, 0.0);
        assert_eq!(m.net_impulse_ns, 0.0);
    }

    #[test]
    fn impulse_additivity() {
        let trace = simulate_force(
            &PlantParams::default(),
            &ControllerGains::default(),
            &ForceProfile::single_pulse(30.0, 0.2, 0.25, 125.0),
            LoadModel::Stationary,
            &SimOptions::default(),
        )
        .unwrap();
        let whole = impulse_over(&trace, 30.0, 0.0, 1.2);
        let parts = impulse_over(&trace, 30.0, 0.0, 0.37) + impulse_over(&trace, 30.0, 0.37, 1.2);
        assert_relative_eq!(whole, parts, epsilon = 1e-9);
    }

    #[test]
    fn integration_convergence_under_substepping() {
        let profile = ForceProfile::single_pulse(30.0, 0.2, 0.25, 125.0);
        let coarse = simulate_force(
            &PlantParams::default(),
            &ControllerGains::default(),
            &profile,
            LoadModel::Stationary,
            &SimOptions::default(),
        )
        .unwrap();
        let fine = simulate_force(
            &PlantParams::default(),
            &ControllerGains::default(),
            &profile,
            LoadModel::Stationary,
            &SimOptions {
                plant_substeps: 2,
                ..SimOptions::default()
            },
        )
        .unwrap();
        let mc = step_metrics(&coarse, 30.0, 155.0).unwrap();
        let mf = step_metrics(&fine, 30.0, 155.0).unwrap();
        assert_relative_eq!(
            mc.net_impulse_ns,
            mf.net_impulse_ns,
            max_relative = 0.005
        );
        assert_relative_eq!(
            mc.rise_time_10_90_ms,
            mf.rise_time_10_90_ms,
            max_relative = 0.005
        );
    }

    #[test]
    fn feedforward_speeds_up_rise() {
        // Same PID gains, feedforward on vs off; compare the time to reach
        // 90% of the step. The feedback-only loop may not get there at all
        // within the pulse.
        let profile = ForceProfile::single_pulse(30.0, 0.2, 1.0, 125.0);
        let with_ff = ControllerGains::default();
        let without_ff = ControllerGains {
            kff: 0.0,
            ff_boost: 0.0,
            ..ControllerGains::default()
        };
        let opts = SimOptions {
            duration_s: 1.5,
            ..SimOptions::default()
        };
        let time_to_90 = |gains: &ControllerGains| -> Option<usize> {
            let trace = simulate_force(
                &PlantParams::default(),
                gains,
                &profile,
                LoadModel::Stationary,
                &opts,
            )
            .unwrap();
            trace.measured.iter().position(|&f| f >= 30.0 + 0.9 * 125.0)
        };
        let on = time_to_90(&with_ff).expect("feedforward case reaches 90%");
        match time_to_90(&without_ff) {
            Some(off) => assert!(on < off, "ff {on} vs no-ff {off} samples"),
            None => {} // never reached: strictly slower
        }
    }

    #[test]
    fn fit_damping_round_trip_noiseless() {
        let p = PlantParams::default();
        let truth = p.damping_coeff();
        let trace = open_loop_step_trace(&p, 125.0, 0.1, 0.6, CONTROL_RATE_HZ);
        let fit = fit_damping(&trace, &InertiaParams::from(&p)).unwrap();
        assert_relative_eq!(fit.damping_coeff, truth, max_relative = 0.01);
    }

    #[test]
    fn fit_damping_round_trip_with_noise() {
        let p = PlantParams::default();
        let truth = p.damping_coeff();
        let mut trace = open_loop_step_trace(&p, 125.0, 0.1, 0.6, CONTROL_RATE_HZ);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for f in trace.measured.iter_mut() {
            *f *= 1.0 + 0.01 * sample_standard_normal(&mut rng);
        }
        let fit = fit_damping(&trace, &InertiaParams::from(&p)).unwrap();
        assert_relative_eq!(fit.damping_coeff, truth, max_relative = 0.05);
    }

    #[test]
    fn fit_damping_rejects_flat_trace() {
        let trace = ForceTrace {
            sample_rate_hz: 1000.0,
            commanded: vec![30.0; 100],
            measured: vec![30.0; 100],
        };
        assert_eq!(
            fit_damping(&trace, &InertiaParams::from(&PlantParams::default())).unwrap_err(),
            DrivetrainError::NoStepDetected
        );
        let empty = ForceTrace {
            sample_rate_hz: 1000.0,
            commanded: vec![],
            measured: vec![],
        };
        assert_eq!(
            fit_damping(&empty, &InertiaParams::from(&PlantParams::default())).unwrap_err(),
            DrivetrainError::NoStepDetected
        );
    }

    #[test]
    fn trace_csv_round_trip() {
        let trace = ForceTrace {
            sample_rate_hz: 100.0,
            commanded: vec![30.0, 155.0, 155.0],
            measured: vec![29.99, 60.5, 140.25],
        };
        let parsed = ForceTrace::from_csv(&trace.to_csv()).unwrap();
        assert_eq!(parsed.len(), 3);
        assert_relative_eq!(parsed.sample_rate_hz, 100.0, max_relative = 1e-6);
        assert_relative_eq!(parsed.measured[2], 140.25, epsilon = 1e-9);
    }
}
