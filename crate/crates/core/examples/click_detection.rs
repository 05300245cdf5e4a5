//! Click probabilities, count records and the photon-number estimators on a
//! two-mode squeezed vacuum. The record estimators assume rare multiphoton
//! events; with ideal detectors they are biased and can leave [0, 1].

use qstat::detect::{
    click_probabilities, herald_condition, heralded_g2_from_probs, heralded_g2_from_record, probabilities_from_record,
    DetectorSetup, G2Form, PhotonProbabilities,
};
use qstat::fock::two_mode_squeezed_vacuum;

fn main() -> qstat::Result<()> {
    let rho = two_mode_squeezed_vacuum(0.3, 20)?;
    for eta in [1.0, 0.3, 0.05] {
        let setup = DetectorSetup {
            eta_h: eta,
            eta_a: eta,
            eta_b: eta,
            ..DetectorSetup::default()
        };
        let clicks = click_probabilities(&rho, &setup)?;
        let rec = clicks.expected_record(setup.n_pulses);
        let exact = PhotonProbabilities::from_state(&herald_condition(&rho, &setup)?)?;
        println!("eta = {eta}");
        println!("  P(H) = {:.5}  P(H,A,B) = {:.3e}", clicks.inclusive(true, false, false), clicks.inclusive(true, true, true));
        println!("  record: R0 {:.0}  R1A {:.0}  R1B {:.0}  R2 {:.0}", rec.r0, rec.r1a, rec.r1b, rec.r2);
        let est = match probabilities_from_record(&rec) {
            Ok(p) => p,
            Err(e) => {
                println!("  estimator: {e}");
                continue;
            }
        };
        println!("  p0 {:.5} (heralded state before detection {:.5})", est.p0, exact.p0);
        println!(
            "  g2: rate {:.4}  form A {:.4}  form B {:.4}",
            heralded_g2_from_record(&rec)?,
            heralded_g2_from_probs(&est, G2Form::A)?,
            heralded_g2_from_probs(&est, G2Form::B)?
        );
    }
    Ok(())
}

