//! Non-classicality and non-Gaussianity quantifiers.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::detect::{ClickRecord, PhotonProbabilities};
use crate::error::{Error, Result};
use crate::fock::{partial_transpose, trace_norm, DensityMatrix, HERALD};

/// Single- and coincidence-event probabilities of a two-detector measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NcWitnessInput {
    pub p_s: f64,
    pub p_c: f64,
}

impl NcWitnessInput {
    pub fn new(p_s: f64, p_c: f64) -> Result<Self> {
        if !(p_c >= 0.0 && p_s >= 0.0 && p_s + p_c <= 1.0 + 1e-12) {
            return Err(Error::InvalidState(format!(
                "single/coincidence probabilities ({p_s}, {p_c}) are not a valid pair"
            )));
        }
        Ok(Self { p_s, p_c })
    }
}

/// `W_NC = P_S − 2(√P_C − P_C)`; positive values exclude mixtures of coherent states.
pub fn nc_witness(input: &NcWitnessInput) -> f64 {
    input.p_s - 2.0 * (input.p_c.sqrt() - input.p_c)
}

/// Witness input of the signal pair A, B: `P_C = R_C/N_P`, `P_S = (R_SA + R_SB − 2R_C)/N_P`.
pub fn rates_to_witness_input(rec: &ClickRecord) -> Result<NcWitnessInput> {
    pair_input(rec.rs_a, rec.rs_b, rec.rc, rec.n_pulses)
}

/// Witness input between signal detector A and the herald detector.
pub fn cross_witness_input(rec: &ClickRecord) -> Result<NcWitnessInput> {
    pair_input(rec.rs_a, rec.r0, rec.r1a, rec.n_pulses)
}

fn pair_input(singles_1: f64, singles_2: f64, coincidences: f64, n_pulses: f64) -> Result<NcWitnessInput> {
    if !(n_pulses > 0.0) {
        return Err(Error::Division("witness input with zero pulses"));
    }
    let singles = singles_1 + singles_2 - 2.0 * coincidences;
    if singles < 0.0 {
        return Err(Error::NegativeSingles);
    }
    NcWitnessInput::new(singles / n_pulses, coincidences / n_pulses)
}

/// Vacuum and single-photon probabilities of the pure Gaussian family at squeezing `r`.
pub fn gaussian_family(r: f64) -> (f64, f64) {
    let d2 = ((4.0 * r).exp() - 1.0) / 4.0;
    let c = r.cosh();
    let e = (-d2 * (1.0 - r.tanh())).exp() / c;
    (e, d2 * e / (c * c))
}

const R_MAX: f64 = 2.0;
const R_STEP: f64 = 1e-3;
const R_TOL: f64 = 1e-8;
const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Maximum of `f` on `[lo, hi]` by golden-section search, assuming one peak.
fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        }
    }
    if f1 > f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// `W_G(a) = max_r [a p0(r) + p1(r)]` over `r ∈ [0, 2]`, with the maximizing `r`.
pub fn gaussian_boundary(a: f64) -> (f64, f64) {
    let w = |r: f64| {
        let (p0, p1) = gaussian_family(r);
        a * p0 + p1
    };
    let steps = (R_MAX / R_STEP).round() as usize;
    let (mut best_k, mut best) = (0, w(0.0));
    for k in 1..=steps {
        let v = w(k as f64 * R_STEP);
        if v > best {
            best = v;
            best_k = k;
        }
    }
    let lo = (best_k as f64 - 1.0).max(0.0) * R_STEP;
    let hi = ((best_k + 1) as f64 * R_STEP).min(R_MAX);
    let (r, v) = golden_max(w, lo, hi, R_TOL);
    // the grid point itself may sit on the interval edge
    let grid_r = best_k as f64 * R_STEP;
    if best > v {
        (best, grid_r)
    } else {
        (v, r)
    }
}

const A_MIN: f64 = -50.0;
const A_MAX: f64 = 50.0;
const A_STEP: f64 = 0.05;
const A_LIMIT: f64 = 1e4;

fn boundary_table() -> &'static [(f64, f64, f64)] {
    static TABLE: OnceLock<Vec<(f64, f64, f64)>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let n = ((A_MAX - A_MIN) / A_STEP).round() as usize;
        (0..=n)
            .map(|k| {
                let a = A_MIN + k as f64 * A_STEP;
                let (w, r) = gaussian_boundary(a);
                (a, w, r)
            })
            .collect()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QngWitnessResult {
    pub a_opt: f64,
    pub w: f64,
    pub w_g: f64,
    pub delta_w: f64,
    pub r_boundary: f64,
}

impl QngWitnessResult {
    /// The state lies outside the Gaussian hull.
    pub fn certifies(&self) -> bool {
        self.delta_w > 0.0
    }
}

/// Largest `ΔW(a) = a p0 + p1 − W_G(a)` over the free parameter `a`.
pub fn qng_witness(p: &PhotonProbabilities) -> QngWitnessResult {
    let gap = |a: f64| a * p.p0 + p.p1 - gaussian_boundary(a).0;
    let table = boundary_table();
    let (mut k_best, mut best) = (0, f64::NEG_INFINITY);
    for (k, &(a, w_g, _)) in table.iter().enumerate() {
        let v = a * p.p0 + p.p1 - w_g;
        if v > best {
            best = v;
            k_best = k;
        }
    }
    // ΔW is concave in a, so a bracket around the best grid point holds the maximum
    let (lo, hi) = if k_best == 0 {
        widen(&gap, A_MIN, -A_STEP)
    } else if k_best == table.len() - 1 {
        widen(&gap, A_MAX, A_STEP)
    } else {
        (table[k_best - 1].0, table[k_best + 1].0)
    };
    let (a, _) = golden_max(gap, lo, hi, 1e-9 * (1.0 + hi.abs().max(lo.abs())));
    let candidate = evaluate(p, a);
    let (a_grid, _, _) = table[k_best];
    let on_grid = evaluate(p, a_grid);
    if on_grid.delta_w > candidate.delta_w {
        on_grid
    } else {
        candidate
    }
}

fn evaluate(p: &PhotonProbabilities, a: f64) -> QngWitnessResult {
    let (w_g, r) = gaussian_boundary(a);
    let w = a * p.p0 + p.p1;
    QngWitnessResult {
        a_opt: a,
        w,
        w_g,
        delta_w: w - w_g,
        r_boundary: r,
    }
}

/// Doubles the step away from `edge` until the concave `f` turns down.
fn widen(f: &impl Fn(f64) -> f64, edge: f64, step: f64) -> (f64, f64) {
    let mut prev = edge - step;
    let mut x = edge;
    let mut fx = f(x);
    let mut width = step;
    loop {
        width *= 2.0;
        let next = x + width;
        if next.abs() > A_LIMIT {
            return ordered(prev, next.clamp(-A_LIMIT, A_LIMIT));
        }
        let fn_ = f(next);
        if fn_ < fx {
            return ordered(prev, next);
        }
        prev = x;
        x = next;
        fx = fn_;
    }
}

fn ordered(a: f64, b: f64) -> (f64, f64) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QngDepthResult {
    pub t_min: f64,
    /// `+∞` when no multiphoton events remain.
    pub depth_db: f64,
}

/// Non-Gaussian depth `−10 log10(T_min)` with `T_min = 3 p2+ / (2 p1³)`.
pub fn qng_depth(p: &PhotonProbabilities) -> Result<QngDepthResult> {
    if p.p1 <= 0.0 {
        return Err(Error::Division("non-Gaussian depth with p1 = 0"));
    }
    let t_min = 1.5 * p.p2plus.max(0.0) / p.p1.powi(3);
    Ok(QngDepthResult {
        t_min,
        depth_db: -10.0 * t_min.log10(),
    })
}

/// `log2 ‖ρ^{T_B}‖₁` of a two-mode state, relative to its trace.
pub fn log_negativity(rho: &DensityMatrix) -> Result<f64> {
    if rho.n_modes() != 2 {
        return Err(Error::Dimension("log-negativity needs a two-mode state".into()));
    }
    let en = (trace_norm(&partial_transpose(rho, HERALD)?) / rho.trace()).log2();
    if en < -1e-9 {
        return Err(Error::InvalidState(format!("trace norm below trace, E_N = {en:.3e}")));
    }
    Ok(en.max(0.0))
}

/// A value with its one-sigma uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Uncertain {
    pub value: f64,
    pub sigma: f64,
}

/// First-order propagation of independent Poisson count errors `σ_R = √R` through `f`.
///
/// The pulse count is taken as exact.
pub fn propagate_counts(rec: &ClickRecord, f: impl Fn(&ClickRecord) -> Result<f64>) -> Result<Uncertain> {
    let value = f(rec)?;
    let mut var = 0.0;
    for field in 0..7 {
        let count = get_count(rec, field);
        if count == 0.0 {
            continue;
        }
        let h = (1e-4 * count).max(1e-3);
        let shifted = |delta: f64| {
            let mut r = *rec;
            set_count(&mut r, field, count + delta);
            f(&r)
        };
        let derivative = match (shifted(h), shifted(-h)) {
            (Ok(up), Ok(down)) if count > h => (up - down) / (2.0 * h),
            (Ok(up), _) => (up - value) / h,
            (_, Ok(down)) => (value - down) / h,
            (Err(e), Err(_)) => return Err(e),
        };
        var += derivative * derivative * count;
    }
    Ok(Uncertain {
        value,
        sigma: var.sqrt(),
    })
}

fn get_count(rec: &ClickRecord, field: usize) -> f64 {
    [rec.r0, rec.r1a, rec.r1b, rec.r2, rec.rs_a, rec.rs_b, rec.rc][field]
}

fn set_count(rec: &mut ClickRecord, field: usize, value: f64) {
    let slot = match field {
        0 => &mut rec.r0,
        1 => &mut rec.r1a,
        2 => &mut rec.r1b,
        3 => &mut rec.r2,
        4 => &mut rec.rs_a,
        5 => &mut rec.rs_b,
        _ => &mut rec.rc,
    };
    *slot = value;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::{click_probabilities, herald_condition, probabilities_from_record, DetectorSetup};
    use crate::fock::{
        apply_ket, displacement, thermal_state, two_mode_squeezed_vacuum, CMatrix, FockConfig,
        ModeOperator, StateVector, C64,
    };
    use proptest::prelude::*;

    fn probs(p0: f64, p1: f64) -> PhotonProbabilities {
        PhotonProbabilities::new(p0, p1, 0.5).unwrap()
    }

    #[test]
    fn nc_witness_reference_values() {
        assert_eq!(nc_witness(&NcWitnessInput::new(1.0, 0.0).unwrap()), 1.0);
        for mu in [0.01, 0.2, 1.0, 3.0] {
            let q: f64 = (-mu / 2.0f64).exp();
            let input = NcWitnessInput::new(2.0 * q * (1.0 - q), (1.0 - q).powi(2)).unwrap();
            assert!(nc_witness(&input).abs() < 1e-15);
        }
    }

    #[test]
    fn thermal_light_violates_nothing() {
        let cfg = FockConfig::new(25, 40, 1e-6).unwrap();
        let rho = thermal_state(0.2, &cfg).unwrap();
        let rec = click_probabilities(&rho, &DetectorSetup::default()).unwrap().expected_record(1_000_000);
        assert!(nc_witness(&rates_to_witness_input(&rec).unwrap()) < 0.0);
    }

    #[test]
    fn rate_conversion() {
        let rec = ClickRecord {
            r0: 0.0,
            r1a: 0.0,
            r1b: 0.0,
            r2: 0.0,
            rs_a: 100.0,
            rs_b: 100.0,
            rc: 0.0,
            n_pulses: 1e6,
        };
        let i = rates_to_witness_input(&rec).unwrap();
        assert_eq!((i.p_s, i.p_c), (2e-4, 0.0));
        let all = ClickRecord { rc: 100.0, ..rec };
        assert_eq!(rates_to_witness_input(&all).unwrap().p_s, 0.0);
        let bad = ClickRecord { rc: 150.0, ..rec };
        assert!(matches!(rates_to_witness_input(&bad), Err(Error::NegativeSingles)));
    }

    #[test]
    fn boundary_reference_values() {
        let (w, r) = gaussian_boundary(0.0);
        // independent scan with step 1e-6 over r ∈ [0, 2]
        assert!((w - 0.477_889_412_4).abs() < 1e-9, "{w}");
        assert!((r - 0.549_306).abs() < 1e-5, "{r}");
        for a in [-3.0, 0.5, 2.0] {
            assert!(gaussian_boundary(a).0 >= a);
        }
        let (w, r) = gaussian_boundary(200.0);
        assert!(r < 1e-2);
        assert!((w - 200.0) / 200.0 < 1e-4);
    }

    #[test]
    fn single_photon_is_certified() {
        let res = qng_witness(&probs(0.0, 1.0));
        assert!(res.certifies());
        assert_eq!(res.delta_w, res.w - res.w_g);
    }

    #[test]
    fn reference_point_matches_grid_oracle() {
        // oracle: grid over r ∈ [0, 2] (step 1e-6) and a (step 1e-6 near the optimum)
        let res = qng_witness(&PhotonProbabilities::new(0.98, 0.0199, 0.5).unwrap());
        assert!((res.delta_w - (-9.474_219e-5)).abs() < 1e-10, "{res:?}");
        assert!((res.a_opt - 0.999_215).abs() < 1e-5);
    }

    #[test]
    fn gaussian_family_is_never_certified() {
        for k in 0..=40 {
            let (p0, p1) = gaussian_family(k as f64 * 0.05);
            let res = qng_witness(&probs(p0, p1));
            assert!(res.delta_w <= 1e-9, "r = {} gives {res:?}", k as f64 * 0.05);
        }
    }

    #[test]
    fn depth_values() {
        let p1: f64 = 0.1;
        let at_threshold = PhotonProbabilities::new(0.9 - 2.0 / 3.0 * p1.powi(3), p1, 0.5).unwrap();
        assert!(qng_depth(&at_threshold).unwrap().depth_db.abs() < 1e-9);
        let d = qng_depth(&PhotonProbabilities::new(1.0 - 0.1 - 1e-4, 0.1, 0.5).unwrap()).unwrap();
        assert!((d.t_min - 0.15).abs() < 1e-9);
        assert!((d.depth_db - 8.239_087).abs() < 1e-5);
        assert_eq!(qng_depth(&probs(0.5, 0.5)).unwrap().depth_db, f64::INFINITY);
        assert!(qng_depth(&probs(1.0, 0.0)).is_err());
    }

    #[test]
    fn log_negativity_of_separable_states() {
        assert_eq!(log_negativity(&DensityMatrix::vacuum(&[5, 5])).unwrap(), 0.0);
        let cfg = FockConfig::new(12, 30, 1e-6).unwrap();
        let rho = thermal_state(0.3, &cfg).unwrap().tensor(&thermal_state(0.1, &cfg).unwrap());
        assert!(log_negativity(&rho).unwrap() < 1e-9);
    }

    /// `Tr[ρ O]` for `O` a product of ladder operators `(mode, creation)`, rightmost first applied last.
    fn ladder_moment(rho: &DensityMatrix, ops: &[(usize, bool)]) -> C64 {
        let c = rho.cutoffs()[0];
        let d = c + 1;
        let mut acc = C64::new(0.0, 0.0);
        'basis: for m in 0..d * d {
            let mut occ = [m / d, m % d];
            let mut coeff = 1.0;
            for &(mode, creation) in ops.iter().rev() {
                let n = occ[mode];
                if creation {
                    if n == c {
                        continue 'basis;
                    }
                    coeff *= ((n + 1) as f64).sqrt();
                    occ[mode] = n + 1;
                } else {
                    if n == 0 {
                        continue 'basis;
                    }
                    coeff *= (n as f64).sqrt();
                    occ[mode] = n - 1;
                }
            }
            acc += rho.elements()[(m, occ[0] * d + occ[1])] * coeff;
        }
        acc
    }

    /// `E_N` of a Gaussian state from its covariance matrix (vacuum variance 1/2).
    fn covariance_log_negativity(rho: &DensityMatrix) -> f64 {
        // quadratures x = (a + a†)/√2, p = (a − a†)/(i√2) expanded in ladder terms
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let quad = |k: usize| -> Vec<(C64, (usize, bool))> {
            let mode = k / 2;
            if k.is_multiple_of(2) {
                vec![(C64::new(s, 0.0), (mode, false)), (C64::new(s, 0.0), (mode, true))]
            } else {
                vec![(C64::new(0.0, -s), (mode, false)), (C64::new(0.0, s), (mode, true))]
            }
        };
        let mean = |k: usize| -> f64 {
            quad(k).iter().map(|(w, op)| w * ladder_moment(rho, &[*op])).sum::<C64>().re
        };
        let second = |i: usize, j: usize| -> f64 {
            let mut acc = C64::new(0.0, 0.0);
            for (wi, oi) in quad(i) {
                for (wj, oj) in quad(j) {
                    acc += wi * wj * (ladder_moment(rho, &[oi, oj]) + ladder_moment(rho, &[oj, oi]));
                }
            }
            0.5 * acc.re
        };
        let mut v = nalgebra::Matrix4::<f64>::zeros();
        for i in 0..4 {
            for j in 0..4 {
                v[(i, j)] = second(i, j) - mean(i) * mean(j);
            }
        }
        let det2 = |r: usize, c: usize| v[(r, c)] * v[(r + 1, c + 1)] - v[(r, c + 1)] * v[(r + 1, c)];
        let delta = det2(0, 0) + det2(2, 2) - 2.0 * det2(0, 2);
        let nu2 = (delta - (delta * delta - 4.0 * v.determinant()).sqrt()) / 2.0;
        (-(2.0 * nu2.sqrt()).log2()).max(0.0)
    }

    #[test]
    fn tmsv_log_negativity_matches_covariance_oracle() {
        let r: f64 = 0.5;
        let en = log_negativity(&two_mode_squeezed_vacuum(r, 25).unwrap()).unwrap();
        assert!((en - 2.0 * r / std::f64::consts::LN_2).abs() < 2e-3, "{en}");
        let oracle = covariance_log_negativity(&two_mode_squeezed_vacuum(r, 25).unwrap());
        assert!((en - oracle).abs() < 2e-3);
    }

    #[test]
    fn model_state_log_negativity_matches_covariance_oracle() {
        use crate::model::{build_state, Combination, ModelParams};
        let p = ModelParams::table_s1(Combination::H12Given11);
        let rho = build_state(&p, 0.6, &FockConfig::default()).unwrap();
        let en = log_negativity(&rho).unwrap();
        let oracle = covariance_log_negativity(&rho);
        assert!(en > 0.0);
        assert!((en - oracle).abs() < 1e-4, "{en} vs {oracle}");
    }

    #[test]
    fn heralded_tmsv_depth_consistency() {
        // certified heralded states lie below the depth threshold
        for r in [0.05, 0.1, 0.15, 0.2, 0.3] {
            let rho = two_mode_squeezed_vacuum(r, 25).unwrap();
            let cond = herald_condition(&rho, &DetectorSetup { eta_h: 0.3, ..DetectorSetup::default() }).unwrap();
            let p = PhotonProbabilities::from_state(&cond).unwrap();
            if qng_witness(&p).certifies() {
                assert!(qng_depth(&p).unwrap().t_min < 1.0, "r = {r}");
            }
        }
    }

    #[test]
    fn poisson_propagation() {
        let rec = ClickRecord {
            r0: 0.0,
            r1a: 0.0,
            r1b: 0.0,
            r2: 0.0,
            rs_a: 400.0,
            rs_b: 100.0,
            rc: 0.0,
            n_pulses: 1e4,
        };
        // P_S = (R_SA + R_SB)/N_P has σ = √(R_SA + R_SB)/N_P
        let u = propagate_counts(&rec, |r| Ok(rates_to_witness_input(r)?.p_s)).unwrap();
        assert!((u.value - 0.05).abs() < 1e-15);
        assert!((u.sigma - 500f64.sqrt() / 1e4).abs() < 1e-9);
        let g2 = ClickRecord { r0: 1e6, r1a: 1e4, r1b: 1e4, r2: 10.0, ..rec };
        let u = propagate_counts(&g2, |r| probabilities_from_record(r).map(|p| p.p0)).unwrap();
        assert!(u.sigma > 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn coherent_click_manifold_saturates(q in 0.0001f64..0.9999) {
            let input = NcWitnessInput::new(2.0 * q * (1.0 - q), (1.0 - q).powi(2)).unwrap();
            prop_assert!(nc_witness(&input).abs() < 1e-12);
        }

        #[test]
        fn boundary_is_monotone_for_positive_a(a in 0.0f64..20.0, step in 0.0f64..2.0) {
            prop_assert!(gaussian_boundary(a + step).0 >= gaussian_boundary(a).0 - 1e-12);
        }

        #[test]
        fn log_negativity_ignores_local_unitaries(
            r in 0.05f64..0.4, x in -0.3f64..0.3, y in -0.3f64..0.3, phase in -3.0f64..3.0
        ) {
            let cfg = FockConfig::new(16, 40, 1e-6).unwrap();
            let base = two_mode_squeezed_vacuum(r, 16).unwrap();
            let d = displacement(C64::new(x, y), 0, &cfg).unwrap();
            let rot = ModeOperator::local(
                1,
                CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                    17,
                    (0..17).map(|n| C64::from_polar(1.0, phase * n as f64)),
                )),
                &cfg,
            ).unwrap();
            let moved = crate::fock::apply(&rot, &crate::fock::apply(&d, &base).unwrap()).unwrap();
            let e0 = log_negativity(&base).unwrap();
            let e1 = log_negativity(&moved).unwrap();
            prop_assert!((e0 - e1).abs() < 1e-6, "{} vs {}", e0, e1);
        }
    }

    #[test]
    fn coherent_signal_has_zero_witness_through_detection() {
        let cfg = FockConfig::new(20, 40, 1e-6).unwrap();
        let psi = apply_ket(&displacement(C64::new(0.5, 0.0), 0, &cfg).unwrap(), &StateVector::vacuum(&[20])).unwrap();
        let rec = click_probabilities(&DensityMatrix::from_pure(&psi), &DetectorSetup::default())
            .unwrap()
            .expected_record(10_000_000);
        assert!(nc_witness(&rates_to_witness_input(&rec).unwrap()).abs() < 1e-10);
    }
}
