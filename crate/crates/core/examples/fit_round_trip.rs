//! Re-fits synthetic curves from known parameters. A few parameters are left
//! free and the budgets are small so this runs in seconds; the full 16-parameter
//! problem uses `FitConfig::new(seed)` unchanged.

use std::f64::consts::PI;

use qstat::fit::{fit, forward, FitConfig, IntensityRange, OptimizerSettings, RandomSearchSettings, EvolutionSettings, AnnealingSettings};
use qstat::fock::FockConfig;
use qstat::model::{Combination, ModelParams};

fn main() -> qstat::Result<()> {
    let mut truth = ModelParams::table_s1(Combination::H12Given11);
    truth.squeeze_phase_s = PI;
    truth.squeeze_phase_h = PI;
    truth.phi_bs1 = 0.0;

    let mut cfg = FitConfig::new(7);
    cfg.fock = FockConfig::new(10, 24, 1e-4)?;
    cfg.intensity = IntensityRange { min: 0.2, max: 0.6, points: 5 };
    cfg.model.i0 = truth.i0;
    let names = cfg.phase_mode.free_names();
    for (name, v) in names.iter().zip(cfg.phase_mode.to_vector(&truth)) {
        let half = match *name {
            "r_h" | "alpha_s" | "theta_BS2" => 0.15,
            _ => 0.0,
        };
        cfg.bounds.insert(name.to_string(), [v - half, v + half]);
    }
    cfg.optimizer = OptimizerSettings {
        random_search: RandomSearchSettings { draws: 200, keep: 10 },
        evolution: EvolutionSettings { generations: 20, population_factor: 5, ..Default::default() },
        annealing: AnnealingSettings { steps: 300, local_evaluations: 200, ..Default::default() },
    };

    let data = forward(&truth, &cfg.intensity.grid()?, &cfg.detector, &cfg.fock)?.curves();
    let result = fit(&data, &cfg)?;
    for s in &result.stage_trace {
        println!("{:?}: {} evaluations, best loss {:.3e}", s.stage, s.evaluations, s.best_loss);
    }
    for (kind, l) in &result.per_observable_loss {
        println!("  {kind:<18} NRMSE {:.3}%", 100.0 * l);
    }
    for key in ["r_h", "alpha_s", "theta_BS2"] {
        println!("  {key:<10} fitted {:.4}  true {:.4}", result.params.get(key).unwrap(), truth.get(key).unwrap());
    }
    for w in &result.warnings {
        println!("warning: {w}");
    }
    Ok(())
}
