//! The generalized two-mode Gaussian state model and its intensity scaling.
//!
//! A state at driving intensity `I` is built as
//!
//! ```text
//! ρ = D · BS2 · (S_s ⊗ S_h) · BS1 · (ρ_th,s ⊗ ρ_th,h) · BS1† · (S_s ⊗ S_h)† · BS2† · D†
//! ```
//!
//! with `D = D_s(α_s) ⊗ D_h(α_h)` and every per-mode quantity following a power
//! law in `I`: `n_th = s·I^β`, `r = s·I^β`, `|α| = s·I^(β/2)`. Displacements are
//! real and positive.
//!
//! # Parameter file
//!
//! [`ModelParams`] reads and writes a flat `key = value` file. Keys:
//!
//! | key            | meaning                          |
//! |----------------|----------------------------------|
//! | `I_0`          | intensity factor                 |
//! | `n_th_s`       | thermal scale (signal)           |
//! | `beta_n_th_s`  | thermal exponent (signal)        |
//! | `n_th_h`       | thermal scale (herald)           |
//! | `beta_n_th_h`  | thermal exponent (herald)        |
//! | `r_s`          | squeezing scale (signal)         |
//! | `beta_r_s`     | squeezing exponent (signal)      |
//! | `r_h`          | squeezing scale (herald)         |
//! | `beta_r_h`     | squeezing exponent (herald)      |
//! | `phi_s`        | squeezing phase (signal)         |
//! | `phi_h`        | squeezing phase (herald)         |
//! | `alpha_s`      | displacement scale (signal)      |
//! | `beta_alpha_s` | displacement exponent (signal)   |
//! | `alpha_h`      | displacement scale (herald)      |
//! | `beta_alpha_h` | displacement exponent (herald)   |
//! | `theta_BS1`    | beamsplitter 1 angle             |
//! | `phi_BS1`      | beamsplitter 1 phase             |
//! | `theta_BS2`    | beamsplitter 2 angle             |
//! | `phi_BS2`      | beamsplitter 2 phase             |
//! | `normalize_intensity` | optional; if `true` the laws use `I / I_0` |

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{
    beamsplitter, evolve_ket, displacement, squeezer, thermal_distribution, DensityMatrix,
    FockConfig, ModeOperator, StateVector, C64, HERALD, MAX_SQUEEZING, SIGNAL,
};

/// Thermal-mixture terms lighter than this are dropped before evolution.
const ENSEMBLE_WEIGHT_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    #[serde(rename = "I_0")]
    pub i0: f64,
    #[serde(rename = "n_th_s")]
    pub thermal_scale_s: f64,
    #[serde(rename = "beta_n_th_s")]
    pub thermal_exp_s: f64,
    #[serde(rename = "n_th_h")]
    pub thermal_scale_h: f64,
    #[serde(rename = "beta_n_th_h")]
    pub thermal_exp_h: f64,
    #[serde(rename = "r_s")]
    pub squeeze_scale_s: f64,
    #[serde(rename = "beta_r_s")]
    pub squeeze_exp_s: f64,
    #[serde(rename = "r_h")]
    pub squeeze_scale_h: f64,
    #[serde(rename = "beta_r_h")]
    pub squeeze_exp_h: f64,
    #[serde(rename = "phi_s")]
    pub squeeze_phase_s: f64,
    #[serde(rename = "phi_h")]
    pub squeeze_phase_h: f64,
    #[serde(rename = "alpha_s")]
    pub displace_scale_s: f64,
    #[serde(rename = "beta_alpha_s")]
    pub displace_exp_s: f64,
    #[serde(rename = "alpha_h")]
    pub displace_scale_h: f64,
    #[serde(rename = "beta_alpha_h")]
    pub displace_exp_h: f64,
    #[serde(rename = "theta_BS1")]
    pub theta_bs1: f64,
    #[serde(rename = "phi_BS1")]
    pub phi_bs1: f64,
    #[serde(rename = "theta_BS2")]
    pub theta_bs2: f64,
    #[serde(rename = "phi_BS2")]
    pub phi_bs2: f64,
    #[serde(default)]
    pub normalize_intensity: bool,
}

/// Harmonic combinations with published optimized parameters, `H(signal|herald)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Combination {
    H11Given13,
    H11Given12,
    H12Given11,
}

impl ModelParams {
    /// All scales zero: the model produces vacuum at every intensity.
    pub fn dark() -> Self {
        Self {
            i0: 1.0,
            thermal_scale_s: 0.0,
            thermal_exp_s: 0.0,
            thermal_scale_h: 0.0,
            thermal_exp_h: 0.0,
            squeeze_scale_s: 0.0,
            squeeze_exp_s: 0.0,
            squeeze_scale_h: 0.0,
            squeeze_exp_h: 0.0,
            squeeze_phase_s: PI,
            squeeze_phase_h: PI,
            displace_scale_s: 0.0,
            displace_exp_s: 0.0,
            displace_scale_h: 0.0,
            displace_exp_h: 0.0,
            theta_bs1: 0.0,
            phi_bs1: 0.0,
            theta_bs2: 0.0,
            phi_bs2: 0.0,
            normalize_intensity: false,
        }
    }

    /// Optimized parameters reported for a harmonic combination.
    #[allow(clippy::approx_constant)]
    pub fn table_s1(combination: Combination) -> Self {
        #[rustfmt::skip]
        let v: [f64; 19] = match combination {
            Combination::H11Given13 => [234.91, 3.2e-3, 0.52, 6.7e-3, 0.12, 0.095, 1.18, 0.573, 1.60,
                3.150, 3.142, 0.881, 2.52, 0.433, 1.57, 0.410, 0.021, 1.399, -1.29],
            Combination::H11Given12 => [230.00, 7.6e-5, 0.56, 1.0e-5, 0.60, 0.145, 1.29, 0.556, 1.79,
                3.142, 3.144, 0.711, 2.16, 0.384, 1.67, 0.486, 0.006, 1.673, -1.68],
            Combination::H12Given11 => [231.65, 1.0e-5, 0.52, 1.0e-5, 0.54, 0.071, 1.18, 0.571, 1.75,
                3.132, 3.132, 0.864, 2.21, 0.482, 1.64, 0.509, 0.021, 1.558, -1.48],
        };
        Self {
            i0: v[0],
            thermal_scale_s: v[1],
            thermal_exp_s: v[2],
            thermal_scale_h: v[3],
            thermal_exp_h: v[4],
            squeeze_scale_s: v[5],
            squeeze_exp_s: v[6],
            squeeze_scale_h: v[7],
            squeeze_exp_h: v[8],
            squeeze_phase_s: v[9],
            squeeze_phase_h: v[10],
            displace_scale_s: v[11],
            displace_exp_s: v[12],
            displace_scale_h: v[13],
            displace_exp_h: v[14],
            theta_bs1: v[15],
            phi_bs1: v[16],
            theta_bs2: v[17],
            phi_bs2: v[18],
            normalize_intensity: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let scales = [
            ("I_0", self.i0),
            ("n_th_s", self.thermal_scale_s),
            ("n_th_h", self.thermal_scale_h),
            ("r_s", self.squeeze_scale_s),
            ("r_h", self.squeeze_scale_h),
            ("alpha_s", self.displace_scale_s),
            ("alpha_h", self.displace_scale_h),
        ];
        for (name, v) in scales {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Parameter(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        if self.normalize_intensity && !(self.i0 > 0.0) {
            return Err(Error::Parameter("normalize_intensity requires I_0 > 0".into()));
        }
        let exponents = [
            self.thermal_exp_s,
            self.thermal_exp_h,
            self.squeeze_exp_s,
            self.squeeze_exp_h,
            self.displace_exp_s,
            self.displace_exp_h,
        ];
        if exponents.iter().any(|b| !b.is_finite()) {
            return Err(Error::Parameter("power-law exponents must be finite".into()));
        }
        let angles = [
            ("phi_s", self.squeeze_phase_s),
            ("phi_h", self.squeeze_phase_h),
            ("theta_BS1", self.theta_bs1),
            ("phi_BS1", self.phi_bs1),
            ("theta_BS2", self.theta_bs2),
            ("phi_BS2", self.phi_bs2),
        ];
        for (name, v) in angles {
            if !(v.abs() < 2.0 * PI) {
                return Err(Error::Parameter(format!("{name} = {v} outside (-2π, 2π)")));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let p: Self = toml::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    fn effective_intensity(&self, intensity: f64) -> f64 {
        if self.normalize_intensity {
            intensity / self.i0
        } else {
            intensity
        }
    }
}

/// Which phases are fitted.
///
/// `Fixed` pins both squeezing phases to π and `phi_BS1` to 0 and fits `I_0`
/// with the twelve power-law parameters and `theta_BS1`, `theta_BS2`,
/// `phi_BS2` (16 free parameters). `Free` instead fits `phi_BS1` and a single
/// squeezing phase shared by both modes, with `I_0` held at its given value
/// (17 free parameters).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseMode {
    #[default]
    Fixed,
    Free,
}

const POWER_LAW_KEYS: [&str; 12] = [
    "n_th_s",
    "beta_n_th_s",
    "n_th_h",
    "beta_n_th_h",
    "r_s",
    "beta_r_s",
    "r_h",
    "beta_r_h",
    "alpha_s",
    "beta_alpha_s",
    "alpha_h",
    "beta_alpha_h",
];

impl PhaseMode {
    /// Names of the free parameters, in parameter-vector order.
    pub fn free_names(self) -> Vec<&'static str> {
        let mut names = Vec::with_capacity(17);
        match self {
            PhaseMode::Fixed => {
                names.push("I_0");
                names.extend_from_slice(&POWER_LAW_KEYS);
                names.extend_from_slice(&["theta_BS1", "theta_BS2", "phi_BS2"]);
            }
            PhaseMode::Free => {
                names.extend_from_slice(&POWER_LAW_KEYS);
                names.extend_from_slice(&["phi_sq", "theta_BS1", "phi_BS1", "theta_BS2", "phi_BS2"]);
            }
        }
        names
    }

    pub fn dimension(self) -> usize {
        self.free_names().len()
    }

    /// Free-parameter vector of `p` (the shared squeezing phase is the signal phase).
    pub fn to_vector(self, p: &ModelParams) -> Vec<f64> {
        self.free_names()
            .iter()
            .map(|name| p.get(name).expect("free names are valid keys"))
            .collect()
    }

    /// `base` with the free parameters replaced by `x` and frozen phases applied.
    pub fn from_vector(self, base: &ModelParams, x: &[f64]) -> Result<ModelParams> {
        let names = self.free_names();
        if x.len() != names.len() {
            return Err(Error::Dimension(format!(
                "{} values for {} free parameters",
                x.len(),
                names.len()
            )));
        }
        let mut p = base.clone();
        if self == PhaseMode::Fixed {
            p.squeeze_phase_s = PI;
            p.squeeze_phase_h = PI;
            p.phi_bs1 = 0.0;
        }
        for (name, &v) in names.iter().zip(x) {
            p.set(name, v)?;
        }
        Ok(p)
    }
}

impl ModelParams {
    /// Value of a parameter by file key; `phi_sq` reads the signal squeezing phase.
    pub fn get(&self, key: &str) -> Option<f64> {
        Some(match key {
            "I_0" => self.i0,
            "n_th_s" => self.thermal_scale_s,
            "beta_n_th_s" => self.thermal_exp_s,
            "n_th_h" => self.thermal_scale_h,
            "beta_n_th_h" => self.thermal_exp_h,
            "r_s" => self.squeeze_scale_s,
            "beta_r_s" => self.squeeze_exp_s,
            "r_h" => self.squeeze_scale_h,
            "beta_r_h" => self.squeeze_exp_h,
            "phi_s" | "phi_sq" => self.squeeze_phase_s,
            "phi_h" => self.squeeze_phase_h,
            "alpha_s" => self.displace_scale_s,
            "beta_alpha_s" => self.displace_exp_s,
            "alpha_h" => self.displace_scale_h,
            "beta_alpha_h" => self.displace_exp_h,
            "theta_BS1" => self.theta_bs1,
            "phi_BS1" => self.phi_bs1,
            "theta_BS2" => self.theta_bs2,
            "phi_BS2" => self.phi_bs2,
            _ => return None,
        })
    }

    /// Sets a parameter by file key; `phi_sq` sets both squeezing phases.
    pub fn set(&mut self, key: &str, value: f64) -> Result<()> {
        let slot = match key {
            "I_0" => &mut self.i0,
            "n_th_s" => &mut self.thermal_scale_s,
            "beta_n_th_s" => &mut self.thermal_exp_s,
            "n_th_h" => &mut self.thermal_scale_h,
            "beta_n_th_h" => &mut self.thermal_exp_h,
            "r_s" => &mut self.squeeze_scale_s,
            "beta_r_s" => &mut self.squeeze_exp_s,
            "r_h" => &mut self.squeeze_scale_h,
            "beta_r_h" => &mut self.squeeze_exp_h,
            "phi_s" => &mut self.squeeze_phase_s,
            "phi_h" => &mut self.squeeze_phase_h,
            "phi_sq" => {
                self.squeeze_phase_s = value;
                &mut self.squeeze_phase_h
            }
            "alpha_s" => &mut self.displace_scale_s,
            "beta_alpha_s" => &mut self.displace_exp_s,
            "alpha_h" => &mut self.displace_scale_h,
            "beta_alpha_h" => &mut self.displace_exp_h,
            "theta_BS1" => &mut self.theta_bs1,
            "phi_BS1" => &mut self.phi_bs1,
            "theta_BS2" => &mut self.theta_bs2,
            "phi_BS2" => &mut self.phi_bs2,
            other => return Err(Error::Parameter(format!("unknown parameter key {other:?}"))),
        };
        *slot = value;
        Ok(())
    }
}

/// Per-mode state quantities at one intensity, indexed by mode (signal, herald).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledParams {
    pub n_th: [f64; 2],
    pub r: [f64; 2],
    pub alpha: [f64; 2],
}

/// Evaluates the power laws at intensity `intensity`.
pub fn scale_params(p: &ModelParams, intensity: f64, cfg: &FockConfig) -> Result<ScaledParams> {
    if !(intensity > 0.0) || !intensity.is_finite() {
        return Err(Error::Parameter(format!("intensity must be > 0, got {intensity}")));
    }
    let x = p.effective_intensity(intensity);
    let law = |s: f64, beta: f64| if s == 0.0 { 0.0 } else { s * x.powf(beta) };
    let scaled = ScaledParams {
        n_th: [
            law(p.thermal_scale_s, p.thermal_exp_s),
            law(p.thermal_scale_h, p.thermal_exp_h),
        ],
        r: [
            law(p.squeeze_scale_s, p.squeeze_exp_s),
            law(p.squeeze_scale_h, p.squeeze_exp_h),
        ],
        alpha: [
            law(p.displace_scale_s, p.displace_exp_s / 2.0),
            law(p.displace_scale_h, p.displace_exp_h / 2.0),
        ],
    };
    for r in scaled.r {
        if r > MAX_SQUEEZING || !r.is_finite() {
            return Err(Error::Overflow {
                quantity: "squeezing r",
                value: r,
                limit: MAX_SQUEEZING,
            });
        }
    }
    let alpha_limit = cfg.n_work as f64 / 4.0;
    for a in scaled.alpha {
        if a * a > alpha_limit || !a.is_finite() {
            return Err(Error::Overflow {
                quantity: "|alpha|^2",
                value: a * a,
                limit: alpha_limit,
            });
        }
    }
    if scaled.n_th.iter().any(|n| !n.is_finite()) {
        return Err(Error::Overflow {
            quantity: "thermal occupation",
            value: f64::INFINITY,
            limit: f64::MAX,
        });
    }
    Ok(scaled)
}

/// Strictly increasing, positive driving intensities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityGrid {
    values: Vec<f64>,
}

impl IntensityGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Parameter("intensities must be finite and > 0".into()));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Parameter("intensities must be strictly increasing".into()));
        }
        Ok(Self { values })
    }

    /// `points` evenly spaced intensities from `min` to `max` inclusive.
    pub fn linspace(min: f64, max: f64, points: usize) -> Result<Self> {
        if points == 1 {
            return Self::new(vec![min]);
        }
        let step = (max - min) / (points as f64 - 1.0);
        Self::new((0..points).map(|i| min + step * i as f64).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A two-mode model state held as a weighted ensemble of pure states.
///
/// The thermal input is diagonal, so the output is `Σ w_k U|k⟩⟨k|U†` with one
/// evolved number state per retained thermal term.
#[derive(Debug, Clone)]
pub struct StateEnsemble {
    cutoffs: Vec<usize>,
    members: Vec<(f64, StateVector)>,
}

impl StateEnsemble {
    pub fn members(&self) -> &[(f64, StateVector)] {
        &self.members
    }

    /// Joint photon-number distribution, flat-indexed (signal major).
    pub fn photon_distribution(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.members.first().map_or(0, |m| m.1.amplitudes().len())];
        for (w, psi) in &self.members {
            for (slot, a) in p.iter_mut().zip(psi.amplitudes().iter()) {
                *slot += w * a.norm_sqr();
            }
        }
        p
    }

    pub fn density_matrix(&self) -> Result<DensityMatrix> {
        DensityMatrix::from_ensemble(&self.cutoffs, self.members.iter().map(|(w, psi)| (*w, psi)))
    }

    pub fn cutoffs(&self) -> &[usize] {
        &self.cutoffs
    }
}

/// Builds model states for one parameter set, reusing the intensity-independent
/// beamsplitters across intensities.
#[derive(Debug, Clone)]
pub struct StateBuilder {
    params: ModelParams,
    cfg: FockConfig,
    bs1: ModeOperator,
    bs2: ModeOperator,
}

impl StateBuilder {
    pub fn new(params: &ModelParams, cfg: &FockConfig) -> Result<Self> {
        params.validate()?;
        cfg.validate()?;
        Ok(Self {
            params: params.clone(),
            cfg: *cfg,
            bs1: beamsplitter(params.theta_bs1, params.phi_bs1, (SIGNAL, HERALD), cfg)?,
            bs2: beamsplitter(params.theta_bs2, params.phi_bs2, (SIGNAL, HERALD), cfg)?,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn config(&self) -> &FockConfig {
        &self.cfg
    }

    pub fn ensemble(&self, intensity: f64) -> Result<StateEnsemble> {
        let cfg = &self.cfg;
        let s = scale_params(&self.params, intensity, cfg)?;
        let p = &self.params;
        let stages: [Option<ModeOperator>; 6] = [
            Some(self.bs1.clone()),
            nonzero(s.r[SIGNAL], || squeezer(s.r[SIGNAL], p.squeeze_phase_s, SIGNAL, cfg))?,
            nonzero(s.r[HERALD], || squeezer(s.r[HERALD], p.squeeze_phase_h, HERALD, cfg))?,
            Some(self.bs2.clone()),
            nonzero(s.alpha[SIGNAL], || displacement(C64::new(s.alpha[SIGNAL], 0.0), SIGNAL, cfg))?,
            nonzero(s.alpha[HERALD], || displacement(C64::new(s.alpha[HERALD], 0.0), HERALD, cfg))?,
        ];

        let ps = thermal_distribution(s.n_th[SIGNAL], cfg)?;
        let ph = thermal_distribution(s.n_th[HERALD], cfg)?;
        let cutoffs = vec![cfg.n_max, cfg.n_max];
        let mut terms = Vec::new();
        for (ns, &ws) in ps.iter().enumerate() {
            for (nh, &wh) in ph.iter().enumerate() {
                let w = ws * wh;
                if w >= ENSEMBLE_WEIGHT_FLOOR {
                    terms.push((w, [ns, nh]));
                }
            }
        }
        let kept: f64 = terms.iter().map(|t| t.0).sum();
        let mut members = Vec::with_capacity(terms.len());
        for (w, occ) in terms {
            let mut psi = StateVector::basis(&cutoffs, &occ)?;
            for op in stages.iter().flatten() {
                psi = evolve_ket(op, &psi)?;
            }
            members.push((w / kept, psi));
        }
        let lost = 1.0
            - members
                .iter()
                .map(|(w, psi)| w * psi.norm_sqr())
                .sum::<f64>();
        if lost > cfg.leak_tol {
            return Err(Error::Leakage {
                leak: lost,
                tol: cfg.leak_tol,
                context: "build_state",
            });
        }
        Ok(StateEnsemble { cutoffs, members })
    }

    pub fn state(&self, intensity: f64) -> Result<DensityMatrix> {
        self.ensemble(intensity)?.density_matrix()
    }
}

fn nonzero(
    value: f64,
    build: impl FnOnce() -> Result<ModeOperator>,
) -> Result<Option<ModeOperator>> {
    if value == 0.0 {
        Ok(None)
    } else {
        build().map(Some)
    }
}

/// The model density matrix at one intensity.
pub fn build_state(p: &ModelParams, intensity: f64, cfg: &FockConfig) -> Result<DensityMatrix> {
    StateBuilder::new(p, cfg)?.state(intensity)
}

/// `⟨a†a⟩` of `mode`.
pub fn mean_photons(rho: &DensityMatrix, mode: usize) -> Result<f64> {
    rho.mean_photons(mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{apply, max_abs, partial_trace, partial_transpose, thermal_state, trace_norm};

    fn small() -> FockConfig {
        FockConfig::new(12, 40, 1e-6).unwrap()
    }

    #[test]
    fn flat_power_law() {
        let mut p = ModelParams::dark();
        p.squeeze_scale_s = 1.0;
        for i in [0.1, 1.0, 7.0] {
            let s = scale_params(&p, i, &FockConfig::default()).unwrap();
            assert_eq!(s.r[SIGNAL], 1.0);
        }
    }

    #[test]
    fn table_values_at_unit_intensity() {
        let p = ModelParams::table_s1(Combination::H12Given11);
        let s = scale_params(&p, 1.0, &FockConfig::default()).unwrap();
        assert_eq!(s.r[HERALD], 0.571);
        assert_eq!(s.alpha[HERALD], 0.482);
        // exponent enters as I^(β/2)
        let s = scale_params(&p, 0.5, &FockConfig::default()).unwrap();
        assert!((s.alpha[HERALD] - 0.482 * 0.5f64.powf(0.82)).abs() < 1e-12);
    }

    #[test]
    fn intensity_normalization() {
        let mut p = ModelParams::table_s1(Combination::H12Given11);
        p.normalize_intensity = true;
        let s = scale_params(&p, p.i0, &FockConfig::default()).unwrap();
        assert!((s.r[HERALD] - 0.571).abs() < 1e-12);
    }

    #[test]
    fn scale_params_rejects_bad_input() {
        let p = ModelParams::table_s1(Combination::H12Given11);
        let cfg = FockConfig::default();
        assert!(scale_params(&p, 0.0, &cfg).is_err());
        assert!(matches!(scale_params(&p, 2.0, &cfg), Err(Error::Overflow { .. })));
    }

    #[test]
    fn scaling_is_monotone_for_positive_exponents() {
        let p = ModelParams::table_s1(Combination::H11Given13);
        let cfg = FockConfig::default();
        let grid = IntensityGrid::linspace(0.1, 1.0, 10).unwrap();
        let vals: Vec<ScaledParams> =
            grid.values().iter().map(|&i| scale_params(&p, i, &cfg).unwrap()).collect();
        for w in vals.windows(2) {
            for m in 0..2 {
                assert!(w[1].n_th[m] > w[0].n_th[m]);
                assert!(w[1].r[m] > w[0].r[m]);
                assert!(w[1].alpha[m] > w[0].alpha[m]);
            }
        }
    }

    #[test]
    fn grid_validation() {
        assert!(IntensityGrid::new(vec![0.1, 0.1]).is_err());
        assert!(IntensityGrid::new(vec![-1.0, 0.1]).is_err());
        let g = IntensityGrid::linspace(0.2, 1.0, 5).unwrap();
        assert_eq!(g.len(), 5);
        assert!((g.values()[4] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn params_file_roundtrip_and_keys() {
        let p = ModelParams::table_s1(Combination::H11Given12);
        let text = p.to_toml_string().unwrap();
        assert!(text.contains("theta_BS2 = "));
        assert!(text.contains("I_0 = 230.0"));
        assert_eq!(ModelParams::from_toml_str(&text).unwrap(), p);
        assert!(ModelParams::from_toml_str("bogus = 1").is_err());
        let bad = text.replace("theta_BS1 = 0.486", "theta_BS1 = 7.0");
        assert!(ModelParams::from_toml_str(&bad).is_err());
    }

    #[test]
    fn free_parameter_counts() {
        assert_eq!(PhaseMode::Fixed.dimension(), 16);
        assert_eq!(PhaseMode::Free.dimension(), 17);
        let p = ModelParams::table_s1(Combination::H12Given11);
        for mode in [PhaseMode::Fixed, PhaseMode::Free] {
            let x = mode.to_vector(&p);
            let q = mode.from_vector(&p, &x).unwrap();
            assert_eq!(mode.to_vector(&q), x);
        }
        let fixed = PhaseMode::Fixed.from_vector(&p, &PhaseMode::Fixed.to_vector(&p)).unwrap();
        assert_eq!(fixed.squeeze_phase_s, PI);
        assert_eq!(fixed.phi_bs1, 0.0);
    }

    #[test]
    fn dark_params_give_vacuum() {
        let rho = build_state(&ModelParams::dark(), 0.5, &small()).unwrap();
        assert_eq!(rho, DensityMatrix::vacuum(&[12, 12]));
    }

    #[test]
    fn split_thermal_gives_two_thermal_arms() {
        // oracle: partial trace of the output against thermal(n/2)
        let mut p = ModelParams::dark();
        p.thermal_scale_s = 0.2;
        p.theta_bs1 = PI / 4.0;
        let cfg = FockConfig::new(16, 40, 1e-6).unwrap();
        let rho = build_state(&p, 0.7, &cfg).unwrap();
        let expected = thermal_state(0.1, &cfg).unwrap();
        for m in 0..2 {
            let red = partial_trace(&rho, m).unwrap();
            assert!(max_abs(&(red.elements() - expected.elements())) < 1e-9);
        }
        assert!((mean_photons(&rho, 0).unwrap() - 0.1).abs() < 1e-9);
    }

    #[test]
    fn ensemble_matches_sequential_dense_application() {
        let p = ModelParams::table_s1(Combination::H11Given13);
        let cfg = FockConfig::new(14, 40, 1e-6).unwrap();
        let intensity = 0.6;
        let built = build_state(&p, intensity, &cfg).unwrap();

        let s = scale_params(&p, intensity, &cfg).unwrap();
        let rho_in = thermal_state(s.n_th[0], &cfg).unwrap().tensor(&thermal_state(s.n_th[1], &cfg).unwrap());
        let ops = [
            beamsplitter(p.theta_bs1, p.phi_bs1, (0, 1), &cfg).unwrap(),
            squeezer(s.r[0], p.squeeze_phase_s, 0, &cfg).unwrap(),
            squeezer(s.r[1], p.squeeze_phase_h, 1, &cfg).unwrap(),
            beamsplitter(p.theta_bs2, p.phi_bs2, (0, 1), &cfg).unwrap(),
            displacement(C64::new(s.alpha[0], 0.0), 0, &cfg).unwrap(),
            displacement(C64::new(s.alpha[1], 0.0), 1, &cfg).unwrap(),
        ];
        let mut rho = rho_in;
        for op in &ops {
            rho = apply(op, &rho).unwrap();
        }
        assert!(max_abs(&(rho.elements() - built.elements())) < 1e-10);

        // swapping squeeze and the second beamsplitter changes the state
        let mut swapped = thermal_state(s.n_th[0], &cfg).unwrap().tensor(&thermal_state(s.n_th[1], &cfg).unwrap());
        for idx in [0, 3, 1, 2, 4, 5] {
            swapped = apply(&ops[idx], &swapped).unwrap();
        }
        assert!(
            (swapped.mean_photons(0).unwrap() - built.mean_photons(0).unwrap()).abs() > 1e-3
        );
    }

    #[test]
    fn table_state_is_valid_and_entangled() {
        let p = ModelParams::table_s1(Combination::H12Given11);
        let cfg = FockConfig::default();
        let rho = build_state(&p, 1.0, &cfg).unwrap();
        rho.check(cfg.leak_tol).unwrap();
        assert!(rho.trace() >= 1.0 - 1e-6);
        let en = trace_norm(&partial_transpose(&rho, 1).unwrap()).log2();
        assert!(en > 0.0, "E_N = {en}");
    }

    #[test]
    fn unmixed_product_has_no_entanglement() {
        let mut p = ModelParams::table_s1(Combination::H11Given12);
        p.theta_bs1 = 0.0;
        p.theta_bs2 = 0.0;
        let cfg = small();
        let rho = build_state(&p, 0.5, &cfg).unwrap();
        let en = trace_norm(&partial_transpose(&rho, 1).unwrap()).log2();
        assert!(en.abs() < 1e-6);
    }
}
