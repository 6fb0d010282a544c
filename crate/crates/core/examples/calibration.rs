//! Prints the tuned operating points for inspection.

use tethersim_core::drivetrain::*;
use tethersim_core::gait::*;
use tethersim_core::model::Geometry;
use tethersim_core::session::*;
use tethersim_core::workspace::workspace_map;

fn main() {
    let plant = PlantParams::default();
    let gains = ControllerGains::default();

    // Bode
    let grid: Vec<f64> = (1..3000).map(|i| i as f64 * 0.05).collect();
    let b = bode(&plant, &grid).unwrap();
    println!("-3dB = {:.4} rad/s (target 35.343 +/- 0.5)", b.f_minus3db_rad_s);

    // Stationary step
    let profile = ForceProfile::single_pulse(30.0, 0.2, 0.25, 125.0);
    let st = simulate_force(&plant, &gains, &profile, LoadModel::Stationary, &SimOptions::default()).unwrap();
    let m = step_metrics(&st, 30.0, 155.0).unwrap();
    println!("ST: os={:.2}% rise={:.1}ms settle={:.1}ms imp={:.3} ({:+.1}%) ripple={:.2} err={:.2}",
        m.percent_overshoot, m.rise_time_10_90_ms, m.settling_time_ms,
        m.net_impulse_ns, (m.net_impulse_ns/31.25-1.0)*100.0, m.ripple_pp_n, m.steady_error_n);

    // Runner-coupled step
    let ru = simulate_force(&plant, &gains, &profile, LoadModel::Runner(RunnerCoupling::default()), &SimOptions::default()).unwrap();
    let mr = step_metrics(&ru, 30.0, 155.0).unwrap();
    println!("RU: os={:.2}% rise={:.1}ms imp={:.3} ({:+.1}%) ripple={:.2}",
        mr.percent_overshoot, mr.rise_time_10_90_ms, mr.net_impulse_ns,
        (mr.net_impulse_ns/31.25-1.0)*100.0, mr.ripple_pp_n);

    // Lead stats
    for (cov, dur, seed) in [(0.03, 60.0, 11u64), (0.07, 300.0, 12u64)] {
        let gait = generate_gait(&GaitGenConfig { duration_s: dur, jitter_cov: cov, seed, ..GaitGenConfig::default() }).unwrap();
        let stances: Vec<f64> = detect_stance(&gait.frames).iter().map(|e| e.t_s).collect();
        let leads = achieved_warning_leads(&stances, PREDICTION_WINDOW, WARNING_LEAD_S);
        let n = leads.len() as f64;
        let mean = leads.iter().sum::<f64>() / n;
        let var = leads.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n;
        println!("leads cov={cov}: n={} mean={:.1}ms std={:.1}ms", leads.len(), mean*1000.0, var.sqrt()*1000.0);
    }

    // Workspace areas
    let g = Geometry::default();
    for f in [100.0, 200.0, 300.0, 400.0] {
        let map = workspace_map(f, 0.05, 36, &g).unwrap();
        println!("area {f} N: {:.3}", map.area);
    }

    // Short session smoke: 1 trial per scenario, short intervals
    let cfg = SessionConfig {
        trials_per_scenario: 4,
        interval_min_s: 8.0,
        interval_max_s: 9.0,
        ..SessionConfig::default()
    };
    let out = run_session(&cfg, &g, &plant, &gains, &RunnerParams::default(), None).unwrap();
    println!("session: {} records, {} completed, mean lead {:?}",
        out.records.len(), out.summary.trials_completed, out.summary.mean_achieved_lead_s);
    for r in out.records.iter().take(6) {
        println!("  {:?} {:?}: onset={:?} lead={:?} imp={:?} disp={:?} braced={} tensions={:?}",
            r.spec.modality, r.spec.direction, r.onset_time_s.map(|v| (v*100.0).round()/100.0),
            r.achieved_lead_s.map(|v| (v*1000.0).round()),
            r.net_impulse_ns.map(|v| (v*100.0).round()/100.0),
            r.max_displacement_mm.map(|v| v.round()), r.braced, r.commanded_tensions.map(|t| [t.left.round(), t.right.round(), t.back.round()]));
    }
}
