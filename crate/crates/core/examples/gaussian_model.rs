//! The generalized two-mode Gaussian model at a few pump intensities.

use qstat::fock::{FockConfig, HERALD, SIGNAL};
use qstat::model::{mean_photons, scale_params, Combination, ModelParams, StateBuilder};
use qstat::witness::log_negativity;

fn main() -> qstat::Result<()> {
    let params = ModelParams::table_s1(Combination::H12Given11);
    let cfg = FockConfig::default();
    let builder = StateBuilder::new(&params, &cfg)?;
    println!("{:>5} {:>9} {:>9} {:>8} {:>8} {:>8} {:>8}", "I", "<n_s>", "<n_h>", "r_s", "r_h", "alpha_s", "E_N");
    for intensity in [0.2, 0.4, 0.6, 0.8] {
        let s = scale_params(&params, intensity, &cfg)?;
        let rho = builder.state(intensity)?;
        println!(
            "{intensity:>5.2} {:>9.5} {:>9.5} {:>8.4} {:>8.4} {:>8.4} {:>8.5}",
            mean_photons(&rho, SIGNAL)?,
            mean_photons(&rho, HERALD)?,
            s.r[SIGNAL],
            s.r[HERALD],
            s.alpha[SIGNAL],
            log_negativity(&rho)?
        );
    }
    Ok(())
}
