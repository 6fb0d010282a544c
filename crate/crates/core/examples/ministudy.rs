//! Multi-participant study calibration: displacement orderings and impulses.

use std::collections::BTreeMap;
use tethersim_core::analysis::*;
use tethersim_core::drivetrain::{ControllerGains, PlantParams};
use tethersim_core::gait::{Direction, WarningModality};
use tethersim_core::model::{Geometry, GRAVITY};
use tethersim_core::session::*;

fn main() {
    let geometry = Geometry::default();
    let plant = PlantParams::default();
    let gains = ControllerGains::default();
    let runner = RunnerParams::default();

    // Six participants, full 48 trials, shortened intervals for speed.
    let mut all_obs = Vec::new();
    let mut all_records = Vec::new();
    for p in 0..6 {
        let cfg = SessionConfig {
            participant_id: format!("P{p:02}"),
            interval_min_s: 8.0,
            interval_max_s: 9.0,
            rng_seed: 100 + p,
            ..SessionConfig::default()
        };
        let out = run_session(&cfg, &geometry, &plant, &gains, &runner, None).unwrap();
        println!("P{p:02}: completed {}/{} mean_lead={:?}",
            out.summary.trials_completed, out.summary.trials_planned,
            out.summary.mean_achieved_lead_s.map(|v| (v*1000.0).round()));
        all_obs.extend(observations_from_records(&out.records));
        all_records.extend(out.records);
    }

    // Per-direction x modality mean displacement.
    let mut cells: BTreeMap<(Direction, WarningModality), Vec<f64>> = BTreeMap::new();
    for o in &all_obs {
        cells.entry((o.direction, o.modality)).or_default().push(o.max_displacement_mm);
    }
    for d in Direction::ALL {
        print!("{:>6}: ", d.label());
        for m in WarningModality::ALL {
            let v = &cells[&(d, m)];
            print!("{}={:.0} ", m.label(), v.iter().sum::<f64>() / v.len() as f64);
        }
        println!();
    }

    // LME per direction.
    for d in Direction::ALL {
        let fit = fit_lme(&all_obs, d).unwrap();
        println!("LME {:>6}: intercept={:.1} A={:+.1}(p={:.4}) V={:+.1}(p={:.4}) AV={:+.1}(p={:.4}) var_p={:.0} var_r={:.0}",
            d.label(), fit.intercept_mm,
            fit.effects[0].estimate_mm, fit.effects[0].p_value,
            fit.effects[1].estimate_mm, fit.effects[1].p_value,
            fit.effects[2].estimate_mm, fit.effects[2].p_value,
            fit.random_intercept_var_mm2, fit.residual_var_mm2);
    }

    // 125 N session for the impulse band (mass such that 30% BW = 125 N).
    let cfg = SessionConfig {
        participant_id: "IMP".into(),
        participant_mass_kg: 125.0 / (0.30 * GRAVITY),
        interval_min_s: 8.0,
        interval_max_s: 9.0,
        rng_seed: 7,
        ..SessionConfig::default()
    };
    let out = run_session(&cfg, &geometry, &plant, &gains, &runner, None).unwrap();
    let summary = impulse_summary(&out.records);
    for (d, s) in &summary.per_direction {
        println!("impulse {:>6}: mean={:.2} std={:.2} (desired 31.25, band [31.25, 34.6])",
            d.label(), s.mean_ns, s.std_ns);
    }
}
