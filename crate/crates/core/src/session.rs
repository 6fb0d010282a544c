//! Randomized perturbation sessions: trial planning, warning emission,
//! stance-synchronised force application through the tether servos, a
//! runner impedance surrogate, and trial logging.
//!
//! The master clock runs at 1 kHz with the three tether servos sub-stepped
//! at 10 kHz and marker frames consumed at 200 Hz.

use crate::drivetrain::{ControllerGains, ForceTrace, PlantParams, TetherServo};
use crate::gait::{
    plan_trigger, Direction, GaitGenConfig, StanceDetector, WarningModality, PREDICTION_WINDOW,
    WARNING_LEAD_S,
};
use crate::model::{
    allocate_tensions, tether_angles, ForceCommand, Geometry, TetherTensionSet, GRAVITY,
};
use crate::vec2::Vec2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use thiserror::Error;

/// Master simulation clock (Hz). Tether servos run 10x faster.
pub const MASTER_RATE_HZ: f64 = 1000.0;
const SERVO_STEPS_PER_TICK: usize = 10;
const GAIT_DECIMATION: usize = 5;
/// Bracing persists this long past the perturbation onset (s).
const BRACE_HOLD_S: f64 = 2.0;
/// Recorded window around each onset (s before, s after).
const RECORD_PRE_S: f64 = 1.0;
const RECORD_POST_S: f64 = 2.0;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("invalid session config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Gait(#[from] crate::gait::GaitError),
}

/// Study-level configuration for one participant session.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub participant_id: String,
    pub participant_mass_kg: f64,
    pub belt_speed_m_s: f64,
    /// Perturbation magnitude as a fraction of body weight.
    pub force_fraction: f64,
    pub pulse_duration_s: f64,
    pub interval_min_s: f64,
    pub interval_max_s: f64,
    pub trials_per_scenario: usize,
    /// Scenario order; must be a permutation of the four modalities.
    pub scenarios: Vec<WarningModality>,
    pub rng_seed: u64,
    pub warning_lead_s: f64,
    pub prediction_window: usize,
    pub gait_jitter_cov: f64,
    pub gait_cadence_hz: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            participant_id: "P01".into(),
            // 1000 N body weight: 30% gives the 300 N working point.
            participant_mass_kg: 1000.0 / GRAVITY,
            belt_speed_m_s: 3.0,
            force_fraction: 0.30,
            pulse_duration_s: 0.25,
            interval_min_s: 15.0,
            interval_max_s: 25.0,
            trials_per_scenario: 12,
            scenarios: vec![
                WarningModality::None,
                WarningModality::Audio,
                WarningModality::Visual,
                WarningModality::AudioVisual,
            ],
            rng_seed: 0,
            warning_lead_s: WARNING_LEAD_S,
            prediction_window: PREDICTION_WINDOW,
            gait_jitter_cov: 0.03,
            gait_cadence_hz: 3.57,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), SessionError> {
        if !(self.force_fraction > 0.0 && self.force_fraction <= 0.5) {
            return Err(SessionError::InvalidConfig(
                "force_fraction must be in (0, 0.5]".into(),
            ));
        }
        if self.interval_min_s >= self.interval_max_s {
            return Err(SessionError::InvalidConfig(
                "interval bounds must satisfy min < max".into(),
            ));
        }
        let mut seen = self.scenarios.clone();
        seen.sort();
        seen.dedup();
        if self.scenarios.len() != 4 || seen.len() != 4 {
            return Err(SessionError::InvalidConfig(
                "scenarios must be a permutation of the four warning modalities".into(),
            ));
        }
        if self.participant_mass_kg <= 0.0 || self.pulse_duration_s <= 0.0 {
            return Err(SessionError::InvalidConfig(
                "mass and pulse duration must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn commanded_magnitude_n(&self) -> f64 {
        self.force_fraction * self.participant_mass_kg * GRAVITY
    }
}

/// Station-keeping impedance surrogate for the runner plus the bracing
/// efficacy table that turns warnings into displacement reductions.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunnerParams {
    /// Undamped station-keeping frequency (rad/s).
    pub omega_n_rad_s: f64,
    pub damping_ratio: f64,
    /// Stiffness/damping multiplier when braced in the matching direction,
    /// per warning modality (visual cues give the crispest preparation).
    pub brace_gain_visual: f64,
    pub brace_gain_audio_visual: f64,
    pub brace_gain_audio: f64,
    /// Multiplier when braced against the wrong direction.
    pub brace_gain_mismatched: f64,
    /// Delay from warning emission to effective bracing (s).
    pub reaction_latency_s: f64,
    /// P(braced direction matches) per modality; audio splits by plane
    /// because front/back tones are harder to localise.
    pub match_prob_visual: f64,
    pub match_prob_audio_visual: f64,
    pub match_prob_audio_lateral: f64,
    pub match_prob_audio_sagittal: f64,
    /// Trial-to-trial lognormal scatter of the impedance.
    pub response_cov: f64,
    /// Between-participant lognormal scatter of the impedance.
    pub participant_cov: f64,
    /// Fraction of axial waist motion transmitted to the tether endpoint
    /// through the harness.
    pub harness_transmission: f64,
    /// Axial endpoint bob fed to each tether servo (m, at the stride rate).
    pub bob_amplitude_m: f64,
}

impl Default for RunnerParams {
    fn default() -> Self {
        RunnerParams {
            omega_n_rad_s: 1.30,
            damping_ratio: 0.5,
            brace_gain_visual: 2.6,
            brace_gain_audio_visual: 2.35,
            brace_gain_audio: 2.1,
            brace_gain_mismatched: 1.2,
            reaction_latency_s: 0.25,
            match_prob_visual: 0.98,
            match_prob_audio_visual: 0.90,
            match_prob_audio_lateral: 0.80,
            match_prob_audio_sagittal: 0.60,
            response_cov: 0.06,
            participant_cov: 0.10,
            harness_transmission: 0.03,
            bob_amplitude_m: 0.001,
        }
    }
}

impl RunnerParams {
    fn matched_gain(&self, modality: WarningModality) -> f64 {
        match modality {
            WarningModality::None => 1.0,
            WarningModality::Visual => self.brace_gain_visual,
            WarningModality::AudioVisual => self.brace_gain_audio_visual,
            WarningModality::Audio => self.brace_gain_audio,
        }
    }

    fn match_prob(&self, modality: WarningModality, direction: Direction) -> f64 {
        let sagittal = matches!(direction, Direction::Front | Direction::Back);
        match modality {
            WarningModality::None => 0.0,
            WarningModality::Visual => self.match_prob_visual,
            WarningModality::AudioVisual => self.match_prob_audio_visual,
            WarningModality::Audio => {
                if sagittal {
                    self.match_prob_audio_sagittal
                } else {
                    self.match_prob_audio_lateral
                }
            }
        }
    }
}

/// One planned trial.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub index: usize,
    pub modality: WarningModality,
    pub direction: Direction,
    pub interval_s: f64,
}

/// Planar state of the runner surrogate.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct RunnerState {
    pub position: Vec2,
    pub velocity: Vec2,
    pub braced: bool,
    pub braced_direction: Option<Direction>,
}

/// Semi-implicit impedance step: `m a = F - k (x - home) - c v` with the
/// home position at the origin.
pub fn runner_step(
    state: &RunnerState,
    external_force: Vec2,
    dt: f64,
    mass: f64,
    stiffness: f64,
    damping: f64,
) -> RunnerState {
    assert!(dt > 0.0 && dt <= 0.01, "dt must be in (0, 0.01] s");
    let acc =
        (external_force - state.position * stiffness - state.velocity * damping) * (1.0 / mass);
    let velocity = state.velocity + acc * dt;
    let position = state.position + velocity * dt;
    RunnerState {
        position,
        velocity,
        ..*state
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialOutcome {
    Completed,
    SkippedInfeasible,
    TruncatedEstop,
}

/// Everything recorded about one trial.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrialRecord {
    pub participant_id: String,
    pub spec: TrialSpec,
    pub outcome: TrialOutcome,
    pub skip_reason: Option<String>,
    pub warning_time_s: Option<f64>,
    pub predicted_stance_s: Option<f64>,
    pub onset_time_s: Option<f64>,
    pub achieved_lead_s: Option<f64>,
    pub commanded_tensions: Option<TetherTensionSet>,
    pub net_impulse_ns: Option<f64>,
    pub max_displacement_mm: Option<f64>,
    pub braced: bool,
    pub braced_direction: Option<Direction>,
    /// Per-tether (left, right, back) traces at 1 kHz around the onset.
    #[serde(skip)]
    pub tether_traces: Option<Box<[ForceTrace; 3]>>,
    /// Waist samples `(t, x, y)` at 200 Hz around the onset.
    #[serde(skip)]
    pub waist_trajectory: Vec<(f64, f64, f64)>,
}

/// Session result: one record per planned trial (fewer after an e-stop).
#[derive(Clone, Debug)]
pub struct SessionOutput {
    pub records: Vec<TrialRecord>,
    pub summary: SessionSummary,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SessionSummary {
    pub participant_id: String,
    pub rng_seed: u64,
    pub commanded_magnitude_n: f64,
    pub trials_planned: usize,
    pub trials_completed: usize,
    pub trials_skipped: usize,
    pub estopped: bool,
    pub mean_achieved_lead_s: Option<f64>,
    pub session_length_s: f64,
}

/// Build the randomized trial plan: one block per scenario in config order,
/// directions balanced within each block, intervals uniform in the bounds.
pub fn build_trial_plan(config: &SessionConfig) -> Result<Vec<TrialSpec>, SessionError> {
    config.validate()?;
    if config.trials_per_scenario % Direction::ALL.len() != 0 {
        return Err(SessionError::InvalidConfig(
            "trials_per_scenario must be a multiple of the four directions".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let per_direction = config.trials_per_scenario / Direction::ALL.len();
    let mut plan = Vec::with_capacity(config.scenarios.len() * config.trials_per_scenario);
    for &modality in &config.scenarios {
        let mut block: Vec<Direction> = Direction::ALL
            .iter()
            .flat_map(|&d| std::iter::repeat(d).take(per_direction))
            .collect();
        block.shuffle(&mut rng);
        for direction in block {
            plan.push(TrialSpec {
                index: plan.len(),
                modality,
                direction,
                interval_s: rng.gen_range(config.interval_min_s..=config.interval_max_s),
            });
        }
    }
    Ok(plan)
}

/// External stop signal checked once per master tick.
pub type EStopFlag = Arc<AtomicBool>;

/// Per-trial randomness, drawn up front in plan order so event timing can
/// never perturb the RNG stream.
struct TrialDraw {
    response_factor: f64,
    match_roll: f64,
    mismatch_pick: usize,
}

struct Recorder {
    start_t: f64,
    tether: [Vec<(f64, f64, f64)>; 3],
    waist: Vec<(f64, f64, f64)>,
    resultant: Vec<(f64, f64, f64)>,
}

enum Phase {
    WaitInterval { until: f64 },
    AwaitPlanning,
    Armed { arm_at: f64 },
    Recording { until: f64 },
    Done,
}

/// Run one full session. Deterministic for a fixed config; the optional
/// e-stop flag is honoured within one master tick.
pub fn run_session(
    config: &SessionConfig,
    geometry: &Geometry,
    plant: &PlantParams,
    gains: &ControllerGains,
    runner: &RunnerParams,
    estop: Option<EStopFlag>,
) -> Result<SessionOutput, SessionError> {
    let plan = build_trial_plan(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed.wrapping_add(0x5EED_0001));

    let participant_factor = lognormal(&mut rng, runner.participant_cov);
    let draws: Vec<TrialDraw> = plan
        .iter()
        .map(|_| TrialDraw {
            response_factor: lognormal(&mut rng, runner.response_cov),
            match_roll: rng.gen::<f64>(),
            mismatch_pick: rng.gen_range(0..3),
        })
        .collect();

    // Synthetic gait long enough for every interval plus margins.
    let total_s: f64 = 10.0
        + plan.iter().map(|t| t.interval_s).sum::<f64>()
        + plan.len() as f64 * (RECORD_POST_S + 2.0);
    let gait = crate::gait::generate_gait(&GaitGenConfig {
        cadence_hz: config.gait_cadence_hz,
        speed_m_s: config.belt_speed_m_s,
        duration_s: total_s,
        jitter_cov: config.gait_jitter_cov,
        seed: config.rng_seed.wrapping_add(0x6A17),
    })?;

    let nominal = geometry.nominal_tension;
    let mut servos = [
        TetherServo::new(plant, gains, nominal),
        TetherServo::new(plant, gains, nominal),
        TetherServo::new(plant, gains, nominal),
    ];
    let mut measured = [nominal; 3];

    let mass = config.participant_mass_kg;
    let base_k = mass * runner.omega_n_rad_s * runner.omega_n_rad_s * participant_factor;
    let base_c = 2.0 * runner.damping_ratio * runner.omega_n_rad_s * mass * participant_factor;

    let mut state = RunnerState::default();
    let mut detector = StanceDetector::new();
    let mut stance_times: Vec<f64> = Vec::new();

    let dt = 1.0 / MASTER_RATE_HZ;
    let servo_dt = dt / SERVO_STEPS_PER_TICK as f64;
    let mut records: Vec<TrialRecord> = Vec::new();
    let mut trial_idx = 0usize;
    let mut phase = Phase::WaitInterval {
        until: plan[0].interval_s,
    };
    let mut current: Option<TrialRecord> = None;
    let mut recorder: Option<Recorder> = None;
    let mut pulse_tensions = TetherTensionSet::uniform(nominal);
    let mut pulse_window = (f64::INFINITY, f64::NEG_INFINITY);
    let mut brace_from = f64::INFINITY;
    let mut brace_until = f64::NEG_INFINITY;
    let mut brace_gain = 1.0_f64;
    let mut trial_response = 1.0_f64;
    let mut estopped = false;

    // Rolling pre-onset history for the record windows.
    let keep = (RECORD_PRE_S / dt) as usize + 16;
    let keep_waist = keep / GAIT_DECIMATION + 8;
    let mut hist_tether: [VecDeque<(f64, f64, f64)>; 3] =
        [VecDeque::new(), VecDeque::new(), VecDeque::new()];
    let mut hist_waist: VecDeque<(f64, f64, f64)> = VecDeque::new();
    let mut hist_resultant: VecDeque<(f64, f64, f64)> = VecDeque::new();

    let n_ticks = (total_s * MASTER_RATE_HZ) as usize;
    let mut frame_cursor = 0usize;
    let mut end_time = total_s;

    for tick in 0..n_ticks {
        let t = tick as f64 * dt;
        if matches!(phase, Phase::Done) {
            end_time = t;
            break;
        }
        if estop.as_ref().is_some_and(|f| f.load(Ordering::Relaxed)) {
            // Zero perturbation commands, hold nominal, truncate.
            estopped = true;
            if let Some(mut rec) = current.take() {
                rec.outcome = TrialOutcome::TruncatedEstop;
                if let Some(r) = recorder.take() {
                    finalize_record(&mut rec, r, config);
                }
                records.push(rec);
            }
            end_time = t;
            break;
        }

        // 200 Hz marker frame and stance detection.
        let mut new_stance: Option<f64> = None;
        let on_gait_tick = tick % GAIT_DECIMATION == 0;
        if on_gait_tick && frame_cursor < gait.frames.len() {
            if let Some(ev) = detector.push(&gait.frames[frame_cursor]) {
                stance_times.push(ev.t_s);
                new_stance = Some(ev.t_s);
            }
            frame_cursor += 1;
        }

        // Trial phase machine.
        match &mut phase {
            Phase::WaitInterval { until } => {
                if t >= *until {
                    phase = Phase::AwaitPlanning;
                }
            }
            Phase::AwaitPlanning => {
                if new_stance.is_some() && stance_times.len() > config.prediction_window {
                    if let Ok(plan_t) = plan_trigger(
                        &stance_times,
                        config.prediction_window,
                        config.warning_lead_s,
                        t,
                    ) {
                        let spec = plan[trial_idx];
                        let draw = &draws[trial_idx];
                        let warned = spec.modality != WarningModality::None;
                        let p_match = runner.match_prob(spec.modality, spec.direction);
                        let matched = draw.match_roll < p_match;
                        let braced_dir = warned.then(|| {
                            if matched {
                                spec.direction
                            } else {
                                let others: Vec<Direction> = Direction::ALL
                                    .iter()
                                    .copied()
                                    .filter(|&d| d != spec.direction)
                                    .collect();
                                others[draw.mismatch_pick]
                            }
                        });
                        trial_response = draw.response_factor;
                        brace_gain = if !warned {
                            1.0
                        } else if matched {
                            runner.matched_gain(spec.modality)
                        } else {
                            runner.brace_gain_mismatched
                        };
                        brace_from = if warned {
                            plan_t.emit_at_s + runner.reaction_latency_s
                        } else {
                            f64::INFINITY
                        };
                        // Provisional hold; tightened at the actual onset.
                        brace_until = plan_t.predicted_stance_s + BRACE_HOLD_S + 1.0;
                        current = Some(TrialRecord {
                            participant_id: config.participant_id.clone(),
                            spec,
                            outcome: TrialOutcome::Completed,
                            skip_reason: None,
                            warning_time_s: warned.then_some(plan_t.emit_at_s),
                            predicted_stance_s: Some(plan_t.predicted_stance_s),
                            onset_time_s: None,
                            achieved_lead_s: None,
                            commanded_tensions: None,
                            net_impulse_ns: None,
                            max_displacement_mm: None,
                            braced: false,
                            braced_direction: braced_dir,
                            tether_traces: None,
                            waist_trajectory: Vec::new(),
                        });
                        phase = Phase::Armed {
                            arm_at: plan_t.arm_at_s,
                        };
                    }
                }
            }
            Phase::Armed { arm_at } => {
                if let Some(stance_t) = new_stance {
                    if stance_t >= *arm_at {
                        let rec = current.as_mut().expect("armed trial has a record");
                        let spec = rec.spec;
                        let cmd = ForceCommand {
                            magnitude: config.commanded_magnitude_n(),
                            beta_deg: spec.direction.beta_deg(),
                            duration: config.pulse_duration_s,
                        };
                        match allocate_tensions(&cmd, geometry, state.position) {
                            Ok(tensions) => {
                                rec.onset_time_s = Some(stance_t);
                                rec.achieved_lead_s = rec.warning_time_s.map(|w| stance_t - w);
                                rec.commanded_tensions = Some(tensions);
                                pulse_tensions = tensions;
                                pulse_window = (t, t + config.pulse_duration_s);
                                brace_until = stance_t + BRACE_HOLD_S;
                                recorder = Some(Recorder {
                                    start_t: stance_t,
                                    tether: [
                                        hist_tether[0].iter().copied().collect(),
                                        hist_tether[1].iter().copied().collect(),
                                        hist_tether[2].iter().copied().collect(),
                                    ],
                                    waist: hist_waist.iter().copied().collect(),
                                    resultant: hist_resultant.iter().copied().collect(),
                                });
                                phase = Phase::Recording {
                                    until: stance_t + RECORD_POST_S,
                                };
                            }
                            Err(e) => {
                                rec.outcome = TrialOutcome::SkippedInfeasible;
                                rec.skip_reason = Some(e.to_string());
                                brace_from = f64::INFINITY;
                                brace_until = f64::NEG_INFINITY;
                                records.push(current.take().expect("record exists"));
                                trial_idx += 1;
                                phase = match plan.get(trial_idx) {
                                    Some(next) => Phase::WaitInterval {
                                        until: t + next.interval_s,
                                    },
                                    None => Phase::Done,
                                };
                            }
                        }
                    }
                }
            }
            Phase::Recording { until } => {
                if t >= *until {
                    let mut rec = current.take().expect("recording trial has a record");
                    if let Some(r) = recorder.take() {
                        finalize_record(&mut rec, r, config);
                    }
                    let onset = rec.onset_time_s.expect("recorded trial has an onset");
                    records.push(rec);
                    trial_idx += 1;
                    brace_from = f64::INFINITY;
                    brace_until = f64::NEG_INFINITY;
                    phase = match plan.get(trial_idx) {
                        Some(next) => Phase::WaitInterval {
                            until: onset + next.interval_s,
                        },
                        None => Phase::Done,
                    };
                }
            }
            Phase::Done => {}
        }

        // Bracing window.
        state.braced = t >= brace_from && t <= brace_until;
        if state.braced {
            if let Some(rec) = current.as_mut() {
                state.braced_direction = rec.braced_direction;
                rec.braced = true;
            }
        } else {
            state.braced_direction = None;
        }

        // Tether commands for this tick.
        let in_pulse = t >= pulse_window.0 && t < pulse_window.1;
        let commands = if in_pulse {
            [
                pulse_tensions.left,
                pulse_tensions.right,
                pulse_tensions.back,
            ]
        } else {
            [nominal; 3]
        };

        // Geometry at the current runner position, clamped to the belt so a
        // large excursion cannot leave the angle computation undefined.
        let pos = Vec2::new(
            state.position.x.clamp(
                -geometry.treadmill_half_width + 0.01,
                geometry.treadmill_half_width - 0.01,
            ),
            state.position.y.clamp(
                -geometry.treadmill_half_length + 0.01,
                geometry.treadmill_half_length - 0.01,
            ),
        );
        let angles = tether_angles(geometry, pos).expect("clamped position is inside the belt");
        let units = [angles.unit_left, angles.unit_right, angles.unit_back];

        // Servo sub-stepping at 10 kHz.
        let bob =
            runner.bob_amplitude_m * (std::f64::consts::TAU * config.gait_cadence_hz * t).sin();
        let pulse_elapsed = in_pulse.then(|| t - pulse_window.0);
        for i in 0..3 {
            let x_end = state.position.dot(units[i]) * runner.harness_transmission + bob;
            let mut y = measured[i];
            for _ in 0..SERVO_STEPS_PER_TICK {
                y = servos[i].step(commands[i], pulse_elapsed, x_end, servo_dt, 1, 0.0);
            }
            measured[i] = y;
        }

        // Resultant of measured tether forces drives the runner surrogate.
        let resultant = units[0] * measured[0] + units[1] * measured[1] + units[2] * measured[2];
        let gain = trial_response * if state.braced { brace_gain } else { 1.0 };
        state = runner_step(&state, resultant, dt, mass, base_k * gain, base_c * gain);

        // Rolling histories and active recording.
        push_capped(&mut hist_resultant, (t, resultant.x, resultant.y), keep);
        for i in 0..3 {
            push_capped(&mut hist_tether[i], (t, commands[i], measured[i]), keep);
        }
        if on_gait_tick {
            push_capped(
                &mut hist_waist,
                (t, state.position.x, state.position.y),
                keep_waist,
            );
        }
        if let Some(r) = recorder.as_mut() {
            r.resultant.push((t, resultant.x, resultant.y));
            for i in 0..3 {
                r.tether[i].push((t, commands[i], measured[i]));
            }
            if on_gait_tick {
                r.waist.push((t, state.position.x, state.position.y));
            }
        }
    }

    let leads: Vec<f64> = records.iter().filter_map(|r| r.achieved_lead_s).collect();
    let summary = SessionSummary {
        participant_id: config.participant_id.clone(),
        rng_seed: config.rng_seed,
        commanded_magnitude_n: config.commanded_magnitude_n(),
        trials_planned: plan.len(),
        trials_completed: records
            .iter()
            .filter(|r| r.outcome == TrialOutcome::Completed)
            .count(),
        trials_skipped: records
            .iter()
            .filter(|r| r.outcome == TrialOutcome::SkippedInfeasible)
            .count(),
        estopped,
        mean_achieved_lead_s: if leads.is_empty() {
            None
        } else {
            Some(leads.iter().sum::<f64>() / leads.len() as f64)
        },
        session_length_s: end_time,
    };
    Ok(SessionOutput { records, summary })
}

fn lognormal<R: Rng>(rng: &mut R, cov: f64) -> f64 {
    if cov <= 0.0 {
        return 1.0;
    }
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
    (cov * z).exp()
}

fn push_capped<T>(v: &mut VecDeque<T>, item: T, cap: usize) {
    v.push_back(item);
    if v.len() > cap {
        v.pop_front();
    }
}

fn finalize_record(rec: &mut TrialRecord, r: Recorder, config: &SessionConfig) {
    let onset = r.start_t;
    let dt = 1.0 / MASTER_RATE_HZ;

    // Net impulse: magnitude of the resultant's vector excess over its
    // pre-onset mean, integrated over the pulse plus the standard tail.
    let pre: Vec<(f64, f64)> = r
        .resultant
        .iter()
        .filter(|(t, _, _)| *t >= onset - 0.5 && *t < onset)
        .map(|&(_, fx, fy)| (fx, fy))
        .collect();
    if !pre.is_empty() {
        let bx = pre.iter().map(|p| p.0).sum::<f64>() / pre.len() as f64;
        let by = pre.iter().map(|p| p.1).sum::<f64>() / pre.len() as f64;
        let impulse: f64 = r
            .resultant
            .iter()
            .filter(|(t, _, _)| {
                *t >= onset
                    && *t < onset + config.pulse_duration_s + crate::drivetrain::IMPULSE_TAIL_S
            })
            .map(|&(_, fx, fy)| ((fx - bx).powi(2) + (fy - by).powi(2)).sqrt() * dt)
            .sum();
        rec.net_impulse_ns = Some(impulse);
    }

    // Max planar deviation from the pre-onset baseline position.
    let base_pts: Vec<(f64, f64)> = r
        .waist
        .iter()
        .filter(|(t, _, _)| *t >= onset - RECORD_PRE_S && *t < onset)
        .map(|&(_, x, y)| (x, y))
        .collect();
    if !base_pts.is_empty() {
        let bx = base_pts.iter().map(|p| p.0).sum::<f64>() / base_pts.len() as f64;
        let by = base_pts.iter().map(|p| p.1).sum::<f64>() / base_pts.len() as f64;
        let max_mm = r
            .waist
            .iter()
            .filter(|(t, _, _)| *t >= onset && *t <= onset + RECORD_POST_S)
            .map(|&(_, x, y)| ((x - bx).powi(2) + (y - by).powi(2)).sqrt() * 1000.0)
            .fold(0.0, f64::max);
        rec.max_displacement_mm = Some(max_mm);
    }

    let to_trace = |samples: &[(f64, f64, f64)]| -> ForceTrace {
        ForceTrace {
            sample_rate_hz: MASTER_RATE_HZ,
            commanded: samples.iter().map(|s| s.1).collect(),
            measured: samples.iter().map(|s| s.2).collect(),
        }
    };
    rec.tether_traces = Some(Box::new([
        to_trace(&r.tether[0]),
        to_trace(&r.tether[1]),
        to_trace(&r.tether[2]),
    ]));
    rec.waist_trajectory = r.waist;
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn plan_counts_and_balance() {
        let config = SessionConfig::default();
        let plan = build_trial_plan(&config).unwrap();
        assert_eq!(plan.len(), 48);
        for modality in WarningModality::ALL {
            let block: Vec<&TrialSpec> = plan.iter().filter(|t| t.modality == modality).collect();
            assert_eq!(block.len(), 12);
            for direction in Direction::ALL {
                assert_eq!(
                    block.iter().filter(|t| t.direction == direction).count(),
                    3,
                    "direction balance within each block"
                );
            }
        }
        for t in &plan {
            assert!(t.interval_s >= 15.0 && t.interval_s <= 25.0);
        }
    }

    #[test]
    fn plan_is_seed_deterministic() {
        let config = SessionConfig::default();
        assert_eq!(
            build_trial_plan(&config).unwrap(),
            build_trial_plan(&config).unwrap()
        );
        let other = SessionConfig {
            rng_seed: 1,
            ..SessionConfig::default()
        };
        assert_ne!(
            build_trial_plan(&config).unwrap(),
            build_trial_plan(&other).unwrap()
        );
    }

    #[test]
    fn interval_distribution_is_uniform() {
        let config = SessionConfig {
            trials_per_scenario: 2500,
            ..SessionConfig::default()
        };
        let plan = build_trial_plan(&config).unwrap();
        let n = plan.len() as f64;
        let mean = plan.iter().map(|t| t.interval_s).sum::<f64>() / n;
        let min = plan
            .iter()
            .map(|t| t.interval_s)
            .fold(f64::INFINITY, f64::min);
        let max = plan
            .iter()
            .map(|t| t.interval_s)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(min >= 15.0 && max <= 25.0);
        assert!((mean - 20.0).abs() < 0.1, "mean interval {mean}");
    }

    #[test]
    fn scenario_order_must_be_permutation() {
        let config = SessionConfig {
            scenarios: vec![
                WarningModality::Audio,
                WarningModality::Audio,
                WarningModality::Visual,
                WarningModality::None,
            ],
            ..SessionConfig::default()
        };
        assert!(build_trial_plan(&config).is_err());
    }

    #[test]
    fn runner_equilibrium_at_home() {
        let state = RunnerState::default();
        let next = runner_step(&state, Vec2::ZERO, 0.001, 80.0, 130.0, 100.0);
        assert_eq!(next.position, Vec2::ZERO);
        assert_eq!(next.velocity, Vec2::ZERO);
    }

    #[test]
    fn braced_runner_displaces_less() {
        let mass = 80.0;
        let (k, c) = (130.0, 101.0);
        let sim = |gain: f64| -> f64 {
            let mut s = RunnerState::default();
            let mut peak = 0.0_f64;
            for i in 0..4000 {
                let t = i as f64 * 0.001;
                let f = if t < 0.25 {
                    Vec2::new(240.0, 0.0)
                } else {
                    Vec2::ZERO
                };
                s = runner_step(&s, f, 0.001, mass, k * gain, c * gain);
                peak = peak.max(s.position.norm());
            }
            peak
        };
        assert!(sim(2.6) < sim(1.0));
    }

    #[test]
    fn displacement_scales_linearly_with_impulse() {
        let mass = 80.0;
        let sim = |force: f64| -> f64 {
            let mut s = RunnerState::default();
            let mut peak = 0.0_f64;
            for i in 0..6000 {
                let t = i as f64 * 0.001;
                let f = if t < 0.25 {
                    Vec2::new(force, 0.0)
                } else {
                    Vec2::ZERO
                };
                s = runner_step(&s, f, 0.001, mass, 130.0, 101.0);
                peak = peak.max(s.position.norm());
            }
            peak
        };
        let ratio = sim(300.0) / sim(150.0);
        assert_relative_eq!(ratio, 2.0, max_relative = 0.02);
    }

    #[test]
    fn commanded_magnitude_scales_with_mass() {
        let config = SessionConfig {
            participant_mass_kg: 60.0,
            ..SessionConfig::default()
        };
        assert_relative_eq!(config.commanded_magnitude_n(), 176.58, epsilon = 0.01);
        let kilonewton = SessionConfig::default();
        assert_relative_eq!(kilonewton.commanded_magnitude_n(), 300.0, epsilon = 1e-9);
    }
}
