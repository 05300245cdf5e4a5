//! Single- and two-mode operators on a truncated Fock space.

use qstat::fock::{apply_ket, beamsplitter, displacement, squeezer, DensityMatrix, FockConfig, StateVector, C64};
use qstat::model::mean_photons;

fn main() -> qstat::Result<()> {
    let cfg = FockConfig::new(20, 40, 1e-8)?;
    let vac = StateVector::vacuum(&[cfg.n_max]);

    let coherent = apply_ket(&displacement(C64::new(0.8, 0.0), 0, &cfg)?, &vac)?;
    let rho = DensityMatrix::from_pure(&coherent);
    println!("coherent |alpha|=0.8: <n> = {:.6} (expect 0.64)", mean_photons(&rho, 0)?);

    let squeezed = apply_ket(&squeezer(0.5, 0.0, 0, &cfg)?, &vac)?;
    let rho = DensityMatrix::from_pure(&squeezed);
    println!("squeezed r=0.5:     <n> = {:.6} (expect sinh^2 r = {:.6})", mean_photons(&rho, 0)?, 0.5f64.sinh().powi(2));

    // one photon in each mode through a balanced splitter: no |1,1> component
    let pair = StateVector::basis(&[cfg.n_max, cfg.n_max], &[1, 1])?;
    let out = apply_ket(&beamsplitter(std::f64::consts::FRAC_PI_4, 0.0, (0, 1), &cfg)?, &pair)?;
    let dist = DensityMatrix::from_pure(&out).photon_distribution();
    let idx = |s: usize, h: usize| s * (cfg.n_max + 1) + h;
    println!(
        "HOM: P(2,0) = {:.3}, P(1,1) = {:.1e}, P(0,2) = {:.3}",
        dist[idx(2, 0)],
        dist[idx(1, 1)],
        dist[idx(0, 2)]
    );

    // a state that does not fit the cutoff is refused rather than silently truncated
    let small = FockConfig::new(4, 40, 1e-8)?;
    match displacement(C64::new(2.0, 0.0), 0, &small).and_then(|d| apply_ket(&d, &StateVector::vacuum(&[4]))) {
        Ok(_) => println!("unexpected success"),
        Err(e) => println!("n_max = 4, |alpha| = 2: {e}"),
    }
    Ok(())
}
