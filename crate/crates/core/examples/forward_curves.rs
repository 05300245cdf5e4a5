//! The five fitted observables for the three published harmonic combinations.

use qstat::detect::DetectorSetup;
use qstat::fit::{forward, IntensityRange, ObservableKind};
use qstat::fock::FockConfig;
use qstat::model::{Combination, ModelParams};

fn main() -> qstat::Result<()> {
    let grid = IntensityRange::default().grid()?;
    let cfg = FockConfig::default();
    for comb in [Combination::H11Given13, Combination::H11Given12, Combination::H12Given11] {
        let r = forward(&ModelParams::table_s1(comb), &grid, &DetectorSetup::default(), &cfg)?;
        println!("{comb:?}");
        print!("{:>6} {:>9}", "I", "<n_s>");
        for k in ObservableKind::ALL {
            print!(" {:>18}", k.name());
        }
        println!();
        for pt in &r.points {
            print!("{:>6.3} {:>9.5}", pt.intensity, pt.mean_signal);
            for k in ObservableKind::ALL {
                print!(" {:>18.5e}", pt.value(k));
            }
            println!();
        }
    }
    Ok(())
}
