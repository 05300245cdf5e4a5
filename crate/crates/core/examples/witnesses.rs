//! Non-classicality and non-Gaussianity witnesses of a heralded photon source.

use qstat::detect::{probabilities_from_record, DetectorSetup, PhotonProbabilities};
use qstat::fit::{forward, IntensityRange, ObservableKind};
use qstat::fock::FockConfig;
use qstat::model::{Combination, ModelParams};
use qstat::witness::{gaussian_boundary, nc_witness, qng_depth, qng_witness, NcWitnessInput};

fn main() -> qstat::Result<()> {
    // an ideal single photon and a weak coherent pair
    println!("W_NC single photon  {:.3}", nc_witness(&NcWitnessInput::new(1.0, 0.0)?));
    let q = (-0.05f64).exp();
    println!("W_NC coherent       {:.1e}", nc_witness(&NcWitnessInput::new(2.0 * q * (1.0 - q), (1.0 - q).powi(2))?));

    // the Gaussian boundary W_G(a) and one point on it
    for a in [0.5, 1.0, 2.0] {
        let (w_g, r) = gaussian_boundary(a);
        println!("W_G({a}) = {w_g:.5} at r = {r:.4}");
    }
    let fock = PhotonProbabilities::new(0.2, 0.8, 0.5)?;
    let w = qng_witness(&fock);
    println!("p0 0.2, p1 0.8: dW = {:.4} at a = {:.3}, depth {:.2} dB", w.delta_w, w.a_opt, qng_depth(&fock)?.depth_db);

    // published H(12|11) source across the pump range
    let params = ModelParams::table_s1(Combination::H12Given11);
    let grid = IntensityRange { min: 0.2, max: 0.8, points: 7 }.grid()?;
    let r = forward(&params, &grid, &DetectorSetup::default(), &FockConfig::default())?;
    println!("{:>5} {:>10} {:>10} {:>10} {:>10}", "I", "W_NC sig", "W_NC cross", "dW", "QNGD dB");
    for pt in &r.points {
        let p = probabilities_from_record(&pt.record)?;
        println!(
            "{:>5.2} {:>10.3e} {:>10.3e} {:>10.3e} {:>10.3}",
            pt.intensity,
            pt.value(ObservableKind::NcWitnessSignal),
            pt.value(ObservableKind::NcWitnessCross),
            qng_witness(&p).delta_w,
            pt.value(ObservableKind::QngDepth)
        );
    }
    Ok(())
}
