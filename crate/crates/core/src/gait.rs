//! Synthetic running marker streams, online right-foot stance detection,
//! stance prediction, and directional warning scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Marker-stream frame rate (Hz).
pub const MARKER_RATE_HZ: f64 = 200.0;
/// Minimum spacing between detected stance events (s).
pub const STANCE_DEBOUNCE_S: f64 = 0.15;
/// Default stride-averaging window for stance prediction.
pub const PREDICTION_WINDOW: usize = 5;
/// Default warning lead time (s).
pub const WARNING_LEAD_S: f64 = 0.5;
/// A detected stance at or after `predicted - margin` counts as the
/// targeted stance; an earlier prediction slips to the following stride.
pub const STANCE_MATCH_MARGIN_S: f64 = 0.016;
/// The stance-prediction event fires this long before the predicted stance
/// so tether forces can ramp in time.
pub const RAMP_LEAD_S: f64 = 0.04;

#[derive(Debug, Error, PartialEq)]
pub enum GaitError {
    #[error("cadence {0} Hz outside [1, 6] Hz")]
    InvalidCadence(f64),
    #[error("need at least two stance events to predict")]
    InsufficientHistory,
    #[error("malformed marker stream: {0}")]
    BadStream(String),
}

/// One motion-capture frame (positions in metres).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkerFrame {
    pub t_s: f64,
    pub toe: [f64; 3],
    pub heel: [f64; 3],
    pub ankle: [f64; 3],
    pub waist: [f64; 3],
}

impl MarkerFrame {
    /// Space-separated wire line (13 decimal fields, newline not included).
    pub fn to_line(&self) -> String {
        let f = |v: [f64; 3]| format!("{:.6} {:.6} {:.6}", v[0], v[1], v[2]);
        format!(
            "{:.6} {} {} {} {}",
            self.t_s,
            f(self.toe),
            f(self.heel),
            f(self.ankle),
            f(self.waist)
        )
    }

    pub fn from_line(line: &str) -> Result<Self, GaitError> {
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|s| {
                s.parse()
                    .map_err(|e| GaitError::BadStream(format!("bad number {s:?}: {e}")))
            })
            .collect::<Result<_, _>>()?;
        if vals.len() != 13 {
            return Err(GaitError::BadStream(format!(
                "expected 13 fields, got {}",
                vals.len()
            )));
        }
        let take3 = |i: usize| [vals[i], vals[i + 1], vals[i + 2]];
        Ok(MarkerFrame {
            t_s: vals[0],
            toe: take3(1),
            heel: take3(4),
            ankle: take3(7),
            waist: take3(10),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaitEventKind {
    Stance,
    HeelStrikePrediction,
    WarningEmitted,
    PerturbationTrigger,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GaitEvent {
    pub kind: GaitEventKind,
    pub t_s: f64,
    /// Running mean stride period, present once two stances have been seen.
    pub stride_period_estimate: Option<f64>,
}

/// Warning modality of one trial block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarningModality {
    None,
    Audio,
    Visual,
    AudioVisual,
}

impl WarningModality {
    pub const ALL: [WarningModality; 4] = [
        WarningModality::None,
        WarningModality::Audio,
        WarningModality::Visual,
        WarningModality::AudioVisual,
    ];

    pub fn label(self) -> &'static str {
        match self {
            WarningModality::None => "none",
            WarningModality::Audio => "audio",
            WarningModality::Visual => "visual",
            WarningModality::AudioVisual => "audio_visual",
        }
    }
}

/// Perturbation direction in the treadmill frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Right,
    Front,
    Left,
    Back,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::Right,
        Direction::Front,
        Direction::Left,
        Direction::Back,
    ];

    /// Force direction in degrees (0 right, 90 forward, 180 left, 270 back).
    pub fn beta_deg(self) -> f64 {
        match self {
            Direction::Right => 0.0,
            Direction::Front => 90.0,
            Direction::Left => 180.0,
            Direction::Back => 270.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Direction::Right => "right",
            Direction::Front => "front",
            Direction::Left => "left",
            Direction::Back => "back",
        }
    }

    /// LED cluster index on the display panel.
    pub fn led_cluster(self) -> u8 {
        match self {
            Direction::Right => 0,
            Direction::Front => 1,
            Direction::Left => 2,
            Direction::Back => 3,
        }
    }

    /// Buzzer tone as (frequency Hz, duration s). The back buzzer uses a
    /// distinct tone so front and back warnings can be told apart.
    pub fn tone(self) -> (f64, f64) {
        match self {
            Direction::Back => (2000.0, 0.06),
            _ => (1000.0, 0.03),
        }
    }
}

/// Concrete stimulus a warning emits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stimulus {
    pub tone: Option<(f64, f64)>,
    pub led_cluster: Option<u8>,
}

/// Warning configuration for one trial.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct WarningSpec {
    pub modality: WarningModality,
    pub direction: Direction,
    pub lead_time_s: f64,
}

impl WarningSpec {
    pub fn new(modality: WarningModality, direction: Direction) -> Self {
        WarningSpec {
            modality,
            direction,
            lead_time_s: WARNING_LEAD_S,
        }
    }

    /// Stimulus for this spec, or `None` for unwarned trials.
    pub fn stimulus(&self) -> Option<Stimulus> {
        match self.modality {
            WarningModality::None => None,
            WarningModality::Audio => Some(Stimulus {
                tone: Some(self.direction.tone()),
                led_cluster: None,
            }),
            WarningModality::Visual => Some(Stimulus {
                tone: None,
                led_cluster: Some(self.direction.led_cluster()),
            }),
            WarningModality::AudioVisual => Some(Stimulus {
                tone: Some(self.direction.tone()),
                led_cluster: Some(self.direction.led_cluster()),
            }),
        }
    }
}

/// Synthetic gait generation parameters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaitGenConfig {
    /// Right-foot stride rate (Hz).
    pub cadence_hz: f64,
    pub speed_m_s: f64,
    pub duration_s: f64,
    /// Coefficient of variation of the stride period.
    pub jitter_cov: f64,
    pub seed: u64,
}

impl Default for GaitGenConfig {
    fn default() -> Self {
        GaitGenConfig {
            cadence_hz: 3.57,
            speed_m_s: 3.0,
            duration_s: 60.0,
            jitter_cov: 0.03,
            seed: 0,
        }
    }
}

/// Generated stream plus the stance times it was built from.
#[derive(Clone, Debug)]
pub struct SyntheticGait {
    pub frames: Vec<MarkerFrame>,
    pub stance_truth: Vec<f64>,
}

// Within-stride phases of the waveform events. The ankle/heel crossing
// descends at ~0.741 and the toe upturn (= stance) sits at 0.80, so the
// two-condition pattern occurs exactly once per stride.
const STANCE_PHASE: f64 = 0.80;
const TAU: f64 = std::f64::consts::TAU;

fn marker_zs(phase: f64) -> (f64, f64, f64) {
    let ankle = 0.12 + 0.06 * (TAU * phase).sin();
    let heel = 0.12 + 0.09 * (TAU * phase + 0.9).sin();
    let toe = 0.06 + 0.025 * (1.0 - (TAU * phase - TAU * STANCE_PHASE).cos());
    (toe, heel, ankle)
}

/// Generate a seeded synthetic running stream at 200 Hz.
///
/// Stride periods are i.i.d. Gaussian around `1/cadence` with the given
/// coefficient of variation, clipped to [0.4, 1.6] of nominal. Ground-truth
/// stance instants are recorded analytically at generation time.
pub fn generate_gait(config: &GaitGenConfig) -> Result<SyntheticGait, GaitError> {
    if !(1.0..=6.0).contains(&config.cadence_hz) {
        return Err(GaitError::InvalidCadence(config.cadence_hz));
    }
    assert!(config.duration_s > 0.0, "duration must be positive");
    let nominal = 1.0 / config.cadence_hz;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    // Stride boundaries covering the whole duration.
    let mut periods = Vec::new();
    let mut starts = vec![0.0_f64];
    while *starts.last().unwrap() < config.duration_s {
        let z = standard_normal(&mut rng);
        let period = (nominal * (1.0 + config.jitter_cov * z)).clamp(0.4 * nominal, 1.6 * nominal);
        periods.push(period);
        starts.push(starts.last().unwrap() + period);
    }

    let stance_truth: Vec<f64> = starts
        .iter()
        .zip(periods.iter())
        .map(|(&s, &p)| s + STANCE_PHASE * p)
        .filter(|&t| t <= config.duration_s)
        .collect();

    let n_frames = (config.duration_s * MARKER_RATE_HZ).floor() as usize;
    let mut frames = Vec::with_capacity(n_frames);
    let mut stride = 0usize;
    for i in 0..n_frames {
        let t = i as f64 / MARKER_RATE_HZ;
        while stride + 1 < starts.len() && t >= starts[stride + 1] {
            stride += 1;
        }
        let phase = ((t - starts[stride]) / periods[stride.min(periods.len() - 1)]).fract();
        let (toe_z, heel_z, ankle_z) = marker_zs(phase);
        let sway = 0.005 * (TAU * phase).sin();
        let foot_y = 0.25 * (TAU * phase + 0.5).cos();
        frames.push(MarkerFrame {
            t_s: t,
            toe: [0.10 + sway, foot_y + 0.22, toe_z],
            heel: [0.09 + sway, foot_y - 0.05, heel_z],
            ankle: [0.095 + sway, foot_y, ankle_z],
            waist: [
                0.01 * (TAU * phase).sin(),
                0.015 * (2.0 * TAU * phase).sin(),
                1.0 + 0.02 * (2.0 * TAU * phase + 1.0).sin(),
            ],
        });
    }
    Ok(SyntheticGait {
        frames,
        stance_truth,
    })
}

fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
}

/// Online right-foot stance detector.
///
/// Causal two-stage state machine: arm on a downward ankle-minus-heel
/// zero crossing, fire on the first following frame whose toe-height
/// backward difference turns positive, debounce 150 ms.
#[derive(Clone, Debug, Default)]
pub struct StanceDetector {
    prev: Option<MarkerFrame>,
    armed: bool,
    last_stance: Option<f64>,
    intervals: Vec<f64>,
}

impl StanceDetector {
    pub fn new() -> Self {
        StanceDetector::default()
    }

    /// Mean of the most recent `PREDICTION_WINDOW` stance intervals.
    pub fn stride_period_estimate(&self) -> Option<f64> {
        if self.intervals.is_empty() {
            return None;
        }
        let n = self.intervals.len().min(PREDICTION_WINDOW);
        Some(self.intervals[self.intervals.len() - n..].iter().sum::<f64>() / n as f64)
    }

    /// Feed one frame; returns a stance event when one fires.
    pub fn push(&mut self, frame: &MarkerFrame) -> Option<GaitEvent> {
        let mut fired = None;
        if let Some(prev) = self.prev {
            let toe_rising = frame.toe[2] - prev.toe[2] > 0.0;
            if self.armed && toe_rising {
                let debounced = self
                    .last_stance
                    .is_none_or(|last| frame.t_s - last >= STANCE_DEBOUNCE_S);
                if debounced {
                    if let Some(last) = self.last_stance {
                        self.intervals.push(frame.t_s - last);
                    }
                    self.last_stance = Some(frame.t_s);
                    fired = Some(GaitEvent {
                        kind: GaitEventKind::Stance,
                        t_s: frame.t_s,
                        stride_period_estimate: self.stride_period_estimate(),
                    });
                }
                self.armed = false;
            }
            let diff_prev = prev.ankle[2] - prev.heel[2];
            let diff_now = frame.ankle[2] - frame.heel[2];
            if diff_prev > 0.0 && diff_now <= 0.0 {
                self.armed = true;
            }
        }
        self.prev = Some(*frame);
        fired
    }
}

/// Run the detector over an ordered frame sequence.
pub fn detect_stance(frames: &[MarkerFrame]) -> Vec<GaitEvent> {
    let mut det = StanceDetector::new();
    frames.iter().filter_map(|f| det.push(f)).collect()
}

/// Predict the next stance from detected stance events: last stance plus
/// the mean of the most recent `window` inter-stance intervals (clamped to
/// the available history).
pub fn predict_next_stance(history: &[GaitEvent], window: usize) -> Result<f64, GaitError> {
    let stances: Vec<f64> = history
        .iter()
        .filter(|e| e.kind == GaitEventKind::Stance)
        .map(|e| e.t_s)
        .collect();
    predict_from_stance_times(&stances, window)
}

/// Same as [`predict_next_stance`] over raw stance timestamps.
pub fn predict_from_stance_times(stances: &[f64], window: usize) -> Result<f64, GaitError> {
    if stances.len() < 2 {
        return Err(GaitError::InsufficientHistory);
    }
    let n = (stances.len() - 1).min(window.max(1));
    let mean: f64 = stances
        .windows(2)
        .rev()
        .take(n)
        .map(|w| w[1] - w[0])
        .sum::<f64>()
        / n as f64;
    Ok(stances[stances.len() - 1] + mean)
}

/// A scheduled warning emission.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduledWarning {
    pub emit_at_s: f64,
    /// The stance instant the warning points at.
    pub target_stance_s: f64,
    pub stimulus: Stimulus,
}

/// Schedule a warning `lead_time` before the predicted stance. When the
/// emission instant has already passed it slips to the following stride
/// (`prediction + stride_period`); a late warning is never emitted.
/// Unwarned trials yield no emission.
pub fn schedule_warning(
    prediction_s: f64,
    stride_period_s: f64,
    spec: &WarningSpec,
    now_s: f64,
) -> Option<ScheduledWarning> {
    assert!(prediction_s > now_s, "prediction must lie in the future");
    let stimulus = spec.stimulus()?;
    let mut target = prediction_s;
    let mut emit = target - spec.lead_time_s;
    while emit <= now_s {
        target += stride_period_s;
        emit = target - spec.lead_time_s;
    }
    Some(ScheduledWarning {
        emit_at_s: emit,
        target_stance_s: target,
        stimulus,
    })
}

/// Plans one warned-or-unwarned perturbation against the stance stream.
#[derive(Clone, Copy, Debug)]
pub struct TriggerPlan {
    /// Predicted stance the perturbation is aimed at.
    pub predicted_stance_s: f64,
    /// Warning emission instant (`predicted - lead`).
    pub emit_at_s: f64,
    /// Heel-strike-prediction / force-ramp arming instant.
    pub arm_at_s: f64,
}

/// Choose the earliest predicted stance whose warning can still be emitted
/// in the future, looking ahead whole strides as needed.
pub fn plan_trigger(
    stance_history: &[f64],
    window: usize,
    lead_s: f64,
    now_s: f64,
) -> Result<TriggerPlan, GaitError> {
    if stance_history.len() < 2 {
        return Err(GaitError::InsufficientHistory);
    }
    let last = stance_history[stance_history.len() - 1];
    let period = predict_from_stance_times(stance_history, window)? - last;
    let mut j = 1.0;
    while last + j * period - lead_s <= now_s + 0.01 {
        j += 1.0;
    }
    let predicted = last + j * period;
    Ok(TriggerPlan {
        predicted_stance_s: predicted,
        emit_at_s: predicted - lead_s,
        arm_at_s: predicted - STANCE_MATCH_MARGIN_S,
    })
}

/// Achieved lead times of a warn-every-stride pipeline over a detected
/// stance sequence: plan at each stance, fire at the first detected stance
/// at or after the arming instant.
pub fn achieved_warning_leads(detected_stances: &[f64], window: usize, lead_s: f64) -> Vec<f64> {
    let mut leads = Vec::new();
    for k in window..detected_stances.len().saturating_sub(4) {
        let history = &detected_stances[..=k];
        let Ok(plan) = plan_trigger(history, window, lead_s, detected_stances[k] + 1e-6) else {
            continue;
        };
        match detected_stances[k + 1..]
            .iter()
            .find(|&&s| s >= plan.arm_at_s)
        {
            Some(&trigger) => leads.push(trigger - plan.emit_at_s),
            None => break,
        }
    }
    leads
}

/// Serialise frames to the line-based wire format.
pub fn stream_to_string(frames: &[MarkerFrame]) -> String {
    let mut out = String::new();
    for f in frames {
        out.push_str(&f.to_line());
        out.push('\n');
    }
    out
}

/// Parse a line-based marker stream; timestamps must strictly increase.
pub fn stream_from_string(text: &str) -> Result<Vec<MarkerFrame>, GaitError> {
    let mut frames = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        frames.push(MarkerFrame::from_line(line)?);
    }
    for w in frames.windows(2) {
        if w[1].t_s <= w[0].t_s {
            return Err(GaitError::BadStream(format!(
                "timestamps must increase ({} then {})",
                w[0].t_s, w[1].t_s
            )));
        }
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stride_count_matches_cadence() {
        let gait = generate_gait(&GaitGenConfig {
            duration_s: 10.0,
            jitter_cov: 0.0,
            ..GaitGenConfig::default()
        })
        .unwrap();
        // One stance per stride at 3.57 Hz over 10 s.
        assert!(
            gait.stance_truth.len() == 35 || gait.stance_truth.len() == 36,
            "got {}",
            gait.stance_truth.len()
        );
    }

    #[test]
    fn zero_jitter_is_perfectly_periodic() {
        let gait = generate_gait(&GaitGenConfig {
            duration_s: 20.0,
            jitter_cov: 0.0,
            ..GaitGenConfig::default()
        })
        .unwrap();
        let nominal = 1.0 / 3.57;
        for w in gait.stance_truth.windows(2) {
            assert!((w[1] - w[0] - nominal).abs() < 1.0 / MARKER_RATE_HZ);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = GaitGenConfig {
            duration_s: 5.0,
            seed: 99,
            ..GaitGenConfig::default()
        };
        let a = generate_gait(&cfg).unwrap();
        let b = generate_gait(&cfg).unwrap();
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.stance_truth, b.stance_truth);
    }

    #[test]
    fn invalid_cadence_rejected() {
        let cfg = GaitGenConfig {
            cadence_hz: 0.5,
            ..GaitGenConfig::default()
        };
        assert_eq!(
            generate_gait(&cfg).unwrap_err(),
            GaitError::InvalidCadence(0.5)
        );
    }

    #[test]
    fn detector_matches_ground_truth() {
        let gait = generate_gait(&GaitGenConfig {
            duration_s: 60.0,
            jitter_cov: 0.03,
            seed: 3,
            ..GaitGenConfig::default()
        })
        .unwrap();
        let events = detect_stance(&gait.frames);
        // Compare against truth, ignoring truth instants too close to the
        // ends of the stream for the detector to see.
        let usable: Vec<f64> = gait
            .stance_truth
            .iter()
            .cloned()
            .filter(|&t| t > 0.1 && t < 59.9)
            .collect();
        assert_eq!(events.len(), usable.len(), "misses or extras");
        for (e, t) in events.iter().zip(usable.iter()) {
            assert!(
                (e.t_s - t).abs() <= 0.020,
                "timing error {} ms",
                (e.t_s - t).abs() * 1000.0
            );
        }
    }

    #[test]
    fn standing_still_yields_no_events() {
        let frames: Vec<MarkerFrame> = (0..2000)
            .map(|i| MarkerFrame {
                t_s: i as f64 / MARKER_RATE_HZ,
                toe: [0.1, 0.2, 0.06],
                heel: [0.09, -0.05, 0.12],
                ankle: [0.095, 0.0, 0.13],
                waist: [0.0, 0.0, 1.0],
            })
            .collect();
        assert!(detect_stance(&frames).is_empty());
    }

    #[test]
    fn single_stride_single_event() {
        let gait = generate_gait(&GaitGenConfig {
            duration_s: 1.0 / 3.57 + 0.1,
            jitter_cov: 0.0,
            ..GaitGenConfig::default()
        })
        .unwrap();
        assert_eq!(detect_stance(&gait.frames).len(), 1);
    }

    #[test]
    fn detector_is_causal_prefix_equivalent() {
        let gait = generate_gait(&GaitGenConfig {
            duration_s: 12.0,
            seed: 5,
            ..GaitGenConfig::default()
        })
        .unwrap();
        let full = detect_stance(&gait.frames);
        let half = detect_stance(&gait.frames[..gait.frames.len() / 2]);
        assert!(half.len() <= full.len());
        for (a, b) in half.iter().zip(full.iter()) {
            assert_eq!(a.t_s, b.t_s);
        }
    }

    #[test]
    fn debounce_enforced_on_pathological_input() {
        // Oscillate the markers fast enough that crossings and upturns
        // happen every few frames; events must still be 150 ms apart.
        let frames: Vec<MarkerFrame> = (0..4000)
            .map(|i| {
                let t = i as f64 / MARKER_RATE_HZ;
                let fast = (TAU * 9.0 * t).sin();
                MarkerFrame {
                    t_s: t,
                    toe: [0.1, 0.0, 0.06 + 0.02 * (TAU * 9.0 * t - 1.0).sin()],
                    heel: [0.09, 0.0, 0.12 + 0.03 * fast],
                    ankle: [0.095, 0.0, 0.12 - 0.03 * fast],
                    waist: [0.0, 0.0, 1.0],
                }
            })
            .collect();
        let events = detect_stance(&frames);
        assert!(!events.is_empty());
        for w in events.windows(2) {
            assert!(w[1].t_s - w[0].t_s >= STANCE_DEBOUNCE_S - 1e-9);
        }
    }

    #[test]
    fn prediction_exact_for_periodic_events() {
        let events: Vec<GaitEvent> = (0..10)
            .map(|i| GaitEvent {
                kind: GaitEventKind::Stance,
                t_s: 0.5 + i as f64 * 0.28,
                stride_period_estimate: None,
            })
            .collect();
        let p = predict_next_stance(&events, PREDICTION_WINDOW).unwrap();
        assert!((p - (0.5 + 10.0 * 0.28)).abs() < 1e-12);
    }

    #[test]
    fn prediction_window_clamps_to_history() {
        let stances = [1.0, 1.3, 1.5];
        // window of 10 uses both available intervals: mean 0.25.
        let p = predict_from_stance_times(&stances, 10).unwrap();
        assert!((p - 1.75).abs() < 1e-12);
        assert_eq!(
            predict_from_stance_times(&[1.0], 5).unwrap_err(),
            GaitError::InsufficientHistory
        );
    }

    #[test]
    fn schedule_warning_basic_and_reschedule() {
        let spec = WarningSpec::new(WarningModality::Audio, Direction::Right);
        let w = schedule_warning(10.0, 0.28, &spec, 9.0).unwrap();
        assert!((w.emit_at_s - 9.5).abs() < 1e-12);
        assert_eq!(w.stimulus.tone, Some((1000.0, 0.03)));
        assert_eq!(w.stimulus.led_cluster, None);

        // Inside the lead window: defer one stride.
        let w2 = schedule_warning(10.0, 0.56, &spec, 9.8).unwrap();
        assert!((w2.emit_at_s - (10.0 + 0.56 - 0.5)).abs() < 1e-12);
        assert!((w2.target_stance_s - 10.56).abs() < 1e-12);

        // A short stride keeps slipping until the emission is in the future.
        let w3 = schedule_warning(10.0, 0.28, &spec, 9.8).unwrap();
        assert!(w3.emit_at_s > 9.8);
        assert!((w3.emit_at_s - (10.0 + 2.0 * 0.28 - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn schedule_warning_none_modality() {
        let spec = WarningSpec::new(WarningModality::None, Direction::Back);
        assert!(schedule_warning(10.0, 0.28, &spec, 9.0).is_none());
    }

    #[test]
    fn back_tone_differs() {
        assert_eq!(Direction::Back.tone(), (2000.0, 0.06));
        assert_eq!(Direction::Front.tone(), (1000.0, 0.03));
    }

    #[test]
    fn wire_format_round_trip() {
        let gait = generate_gait(&GaitGenConfig {
            duration_s: 1.0,
            ..GaitGenConfig::default()
        })
        .unwrap();
        let text = stream_to_string(&gait.frames);
        let parsed = stream_from_string(&text).unwrap();
        assert_eq!(parsed.len(), gait.frames.len());
        for (a, b) in parsed.iter().zip(gait.frames.iter()) {
            assert!((a.toe[2] - b.toe[2]).abs() < 1e-6);
            assert!((a.t_s - b.t_s).abs() < 1e-6);
        }
    }

    #[test]
    fn wire_format_rejects_garbage() {
        assert!(stream_from_string("1.0 2.0 not_a_number\n").is_err());
        let out_of_order = "1.0 0 0 0 0 0 0 0 0 0 0 0 0\n0.5 0 0 0 0 0 0 0 0 0 0 0 0\n";
        assert!(stream_from_string(out_of_order).is_err());
    }
}
