//! Sampled click records fed back through the witness pipeline, with
//! count-statistics uncertainties.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qstat::detect::{click_distribution, heralded_g2_from_record, probabilities_from_record, sample_record, DetectorSetup, JointDistribution};
use qstat::fock::FockConfig;
use qstat::model::{Combination, ModelParams, StateBuilder};
use qstat::witness::{nc_witness, propagate_counts, qng_witness, rates_to_witness_input};

fn main() -> qstat::Result<()> {
    let params = ModelParams::table_s1(Combination::H12Given11);
    let builder = StateBuilder::new(&params, &FockConfig::default())?;
    let setup = DetectorSetup { n_pulses: 100_000_000, ..DetectorSetup::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    println!("{:>5} {:>18} {:>22} {:>22}", "I", "g2 (rate)", "W_NC", "dW");
    for intensity in [0.3, 0.5, 0.7, 0.8] {
        let dist = JointDistribution::from_ensemble(&builder.ensemble(intensity)?)?;
        let rec = sample_record(&click_distribution(&dist, &setup)?, setup.n_pulses, &mut rng)?;
        let g2 = propagate_counts(&rec, heralded_g2_from_record)?;
        let w = propagate_counts(&rec, |r| Ok(nc_witness(&rates_to_witness_input(r)?)))?;
        let dw = propagate_counts(&rec, |r| Ok(qng_witness(&probabilities_from_record(r)?).delta_w))?;
        println!(
            "{intensity:>5.2} {:>9.4} +- {:<6.4} {:>11.3e} +- {:<8.1e} {:>11.3e} +- {:<8.1e}",
            g2.value, g2.sigma, w.value, w.sigma, dw.value, dw.sigma
        );
    }
    Ok(())
}
