//! On/off click detection of a signal–herald state.
//!
//! The herald mode goes to one detector `H`. The signal mode is split with
//! transmittance `t` onto detectors `A` (transmitted) and `B` (reflected).
//! Every photon is routed and detected independently, so all joint click
//! probabilities follow from the joint photon-number distribution by
//! inclusion–exclusion over no-click events.
//!
//! Coincidence counts in a [`ClickRecord`] are inclusive: `r1a` counts pulses
//! where `H` and `A` both clicked, whatever `B` did.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{DensityMatrix, HERALD, SIGNAL};
use crate::model::StateEnsemble;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSetup {
    pub eta_h: f64,
    pub eta_a: f64,
    pub eta_b: f64,
    /// Fraction of signal photons routed to detector A.
    pub t_split: f64,
    pub n_pulses: u64,
}

impl Default for DetectorSetup {
    fn default() -> Self {
        Self {
            eta_h: 1.0,
            eta_a: 1.0,
            eta_b: 1.0,
            t_split: 0.5,
            n_pulses: 10_000_000,
        }
    }
}

impl DetectorSetup {
    pub fn validate(&self) -> Result<()> {
        for (name, eta) in [("eta_h", self.eta_h), ("eta_a", self.eta_a), ("eta_b", self.eta_b)] {
            if !(0.0..=1.0).contains(&eta) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {eta}")));
            }
        }
        if !(self.t_split > 0.0 && self.t_split < 1.0) {
            return Err(Error::Config(format!("t_split must lie in (0, 1), got {}", self.t_split)));
        }
        if self.n_pulses == 0 {
            return Err(Error::Config("n_pulses must be >= 1".into()));
        }
        Ok(())
    }
}

/// Joint photon-number distribution `p(n_s, n_h)`, signal major.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDistribution {
    signal_cutoff: usize,
    herald_cutoff: usize,
    p: Vec<f64>,
}

impl JointDistribution {
    pub fn new(signal_cutoff: usize, herald_cutoff: usize, p: Vec<f64>) -> Result<Self> {
        if p.len() != (signal_cutoff + 1) * (herald_cutoff + 1) {
            return Err(Error::Dimension(format!(
                "{} probabilities for cutoffs ({signal_cutoff}, {herald_cutoff})",
                p.len()
            )));
        }
        if p.iter().any(|&x| x < -1e-9 || !x.is_finite()) {
            return Err(Error::InvalidState("negative photon-number probability".into()));
        }
        Ok(Self {
            signal_cutoff,
            herald_cutoff,
            p,
        })
    }

    /// From a one- or two-mode state; a one-mode state is taken as the signal
    /// with an empty herald.
    pub fn from_state(rho: &DensityMatrix) -> Result<Self> {
        let diag = rho.photon_distribution();
        match rho.cutoffs() {
            [s] => Self::new(*s, 0, diag),
            [s, h] => Self::new(*s, *h, diag),
            _ => Err(Error::Dimension("click detection needs one or two modes".into())),
        }
    }

    pub fn from_ensemble(ensemble: &StateEnsemble) -> Result<Self> {
        let c = ensemble.cutoffs();
        Self::new(c[SIGNAL], c[HERALD], ensemble.photon_distribution())
    }

    /// The same distribution with the two modes exchanged.
    pub fn swapped(&self) -> Self {
        let ds = self.signal_cutoff + 1;
        let dh = self.herald_cutoff + 1;
        let mut p = vec![0.0; self.p.len()];
        for ns in 0..ds {
            for nh in 0..dh {
                p[nh * ds + ns] = self.p[ns * dh + nh];
            }
        }
        Self {
            signal_cutoff: self.herald_cutoff,
            herald_cutoff: self.signal_cutoff,
            p,
        }
    }

    pub fn get(&self, ns: usize, nh: usize) -> f64 {
        self.p[ns * (self.herald_cutoff + 1) + nh]
    }

    pub fn total(&self) -> f64 {
        self.p.iter().sum()
    }

    /// `Σ p(n_s, n_h) f(n_s, n_h)`.
    pub fn moment(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        let dh = self.herald_cutoff + 1;
        self.p
            .iter()
            .enumerate()
            .map(|(i, &p)| p * f((i / dh) as f64, (i % dh) as f64))
            .sum()
    }

    pub fn mean(&self, mode: usize) -> f64 {
        self.moment(|s, h| if mode == SIGNAL { s } else { h })
    }

    /// Distribution after each photon of `mode` survives with probability `transmittance`.
    pub fn with_loss(&self, mode: usize, transmittance: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&transmittance) {
            return Err(Error::Parameter(format!("transmittance {transmittance} outside [0, 1]")));
        }
        let ds = self.signal_cutoff + 1;
        let dh = self.herald_cutoff + 1;
        let mut out = vec![0.0; self.p.len()];
        for ns in 0..ds {
            for nh in 0..dh {
                let w = self.get(ns, nh);
                if w == 0.0 {
                    continue;
                }
                let n = if mode == SIGNAL { ns } else { nh };
                for (k, b) in binomial_pmf(n, transmittance).into_iter().enumerate() {
                    let idx = if mode == SIGNAL { k * dh + nh } else { ns * dh + k };
                    out[idx] += w * b;
                }
            }
        }
        Self::new(self.signal_cutoff, self.herald_cutoff, out)
    }

    /// Probability that no detector in `set` clicks.
    fn no_click(&self, set: Detectors, setup: &DetectorSetup) -> f64 {
        let mut loss_s = 1.0;
        if set.a {
            loss_s -= setup.eta_a * setup.t_split;
        }
        if set.b {
            loss_s -= setup.eta_b * (1.0 - setup.t_split);
        }
        let loss_h = if set.h { 1.0 - setup.eta_h } else { 1.0 };
        let ps = powers(loss_s, self.signal_cutoff);
        let ph = powers(loss_h, self.herald_cutoff);
        let dh = self.herald_cutoff + 1;
        self.p
            .iter()
            .enumerate()
            .map(|(i, &p)| p * ps[i / dh] * ph[i % dh])
            .sum()
    }
}

fn powers(x: f64, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = 1.0;
    for _ in 0..=n {
        out.push(acc);
        acc *= x;
    }
    out
}

fn binomial_pmf(n: usize, p: f64) -> Vec<f64> {
    let mut row = vec![0.0; n + 1];
    row[0] = 1.0;
    for m in 1..=n {
        for k in (1..=m).rev() {
            row[k] = row[k] * (1.0 - p) + row[k - 1] * p;
        }
        row[0] *= 1.0 - p;
    }
    row
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Detectors {
    h: bool,
    a: bool,
    b: bool,
}

impl Detectors {
    fn from_bits(bits: usize) -> Self {
        Self {
            h: bits & 4 != 0,
            a: bits & 2 != 0,
            b: bits & 1 != 0,
        }
    }
}

/// Joint on/off distribution over detectors (H, A, B).
///
/// Outcome `k` has H clicking iff bit 2 is set, A iff bit 1, B iff bit 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClickProbabilities {
    pub outcomes: [f64; 8],
}

impl ClickProbabilities {
    pub fn exact(&self, herald: bool, a: bool, b: bool) -> f64 {
        self.outcomes[(herald as usize) << 2 | (a as usize) << 1 | b as usize]
    }

    /// Probability that every detector marked `true` clicks, the rest unconstrained.
    pub fn inclusive(&self, herald: bool, a: bool, b: bool) -> f64 {
        let want = (herald as usize) << 2 | (a as usize) << 1 | b as usize;
        self.outcomes
            .iter()
            .enumerate()
            .filter(|(k, _)| k & want == want)
            .map(|(_, p)| p)
            .sum()
    }

    /// Expected counts over `n_pulses` pulses.
    pub fn expected_record(&self, n_pulses: u64) -> ClickRecord {
        let n = n_pulses as f64;
        ClickRecord {
            r0: n * self.inclusive(true, false, false),
            r1a: n * self.inclusive(true, true, false),
            r1b: n * self.inclusive(true, false, true),
            r2: n * self.inclusive(true, true, true),
            rs_a: n * self.inclusive(false, true, false),
            rs_b: n * self.inclusive(false, false, true),
            rc: n * self.inclusive(false, true, true),
            n_pulses: n,
        }
    }
}

/// Joint click distribution of a distribution under `setup`.
pub fn click_distribution(dist: &JointDistribution, setup: &DetectorSetup) -> Result<ClickProbabilities> {
    setup.validate()?;
    let total = dist.total();
    if !(total > 0.0) {
        return Err(Error::InvalidState("empty photon-number distribution".into()));
    }
    let q: Vec<f64> = (0..8)
        .map(|bits| dist.no_click(Detectors::from_bits(bits), setup) / total)
        .collect();
    let mut outcomes = [0.0; 8];
    for (clicked, slot) in outcomes.iter_mut().enumerate() {
        // P(exactly `clicked`) = Σ_{T ⊆ clicked} (−1)^|T| Q(silent ∪ T)
        let silent = !clicked & 7;
        let mut acc = 0.0;
        let mut t = clicked;
        loop {
            let sign = if t.count_ones() % 2 == 0 { 1.0 } else { -1.0 };
            acc += sign * q[silent | t];
            if t == 0 {
                break;
            }
            t = (t - 1) & clicked;
        }
        *slot = acc.max(0.0);
    }
    let sum: f64 = outcomes.iter().sum();
    for p in &mut outcomes {
        *p /= sum;
    }
    Ok(ClickProbabilities { outcomes })
}

/// Joint click distribution of a one- or two-mode state.
pub fn click_probabilities(rho: &DensityMatrix, setup: &DetectorSetup) -> Result<ClickProbabilities> {
    click_distribution(&JointDistribution::from_state(rho)?, setup)
}

/// Accumulated click counts. Counts are real so they can hold expectations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClickRecord {
    pub r0: f64,
    pub r1a: f64,
    pub r1b: f64,
    pub r2: f64,
    pub rs_a: f64,
    pub rs_b: f64,
    pub rc: f64,
    pub n_pulses: f64,
}

impl ClickRecord {
    /// The signal-arm counts as if the herald clicked on every pulse.
    pub fn unheralded(&self) -> ClickRecord {
        ClickRecord {
            r0: self.n_pulses,
            r1a: self.rs_a,
            r1b: self.rs_b,
            r2: self.rc,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [self.r0, self.r1a, self.r1b, self.r2, self.rs_a, self.rs_b, self.rc];
        if fields.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidState("click counts must be finite and >= 0".into()));
        }
        if !(self.n_pulses >= 1.0) {
            return Err(Error::InvalidState("n_pulses must be >= 1".into()));
        }
        let slack = 1e-9 * self.n_pulses;
        if self.r2 > self.r1a.min(self.r1b) + slack
            || self.r1a + self.r1b - self.r2 > self.r0 + slack
            || self.rc > self.rs_a.min(self.rs_b) + slack
        {
            return Err(Error::InvalidState("inconsistent coincidence counts".into()));
        }
        Ok(())
    }
}

/// Expected click counts of a state.
pub fn simulate_record(rho: &DensityMatrix, setup: &DetectorSetup) -> Result<ClickRecord> {
    Ok(click_probabilities(rho, setup)?.expected_record(setup.n_pulses))
}

/// Click counts with the pulse outcomes drawn from `rng` (multinomial over the
/// eight joint outcomes).
pub fn sample_record<R: Rng + ?Sized>(
    clicks: &ClickProbabilities,
    n_pulses: u64,
    rng: &mut R,
) -> Result<ClickRecord> {
    let mut counts = [0u64; 8];
    let mut remaining = n_pulses;
    let mut mass = 1.0;
    for (k, slot) in counts.iter_mut().enumerate() {
        if remaining == 0 {
            break;
        }
        if k == 7 || mass <= 0.0 {
            *slot = remaining;
            break;
        }
        let p = (clicks.outcomes[k] / mass).clamp(0.0, 1.0);
        let draw = Binomial::new(remaining, p)
            .map_err(|e| Error::Parameter(format!("binomial sampling: {e}")))?
            .sample(rng);
        *slot = draw;
        remaining -= draw;
        mass -= clicks.outcomes[k];
    }
    let sum_where = |want: usize| -> f64 {
        counts
            .iter()
            .enumerate()
            .filter(|(k, _)| k & want == want)
            .map(|(_, &c)| c as f64)
            .sum()
    };
    Ok(ClickRecord {
        r0: sum_where(4),
        r1a: sum_where(6),
        r1b: sum_where(5),
        r2: sum_where(7),
        rs_a: sum_where(2),
        rs_b: sum_where(1),
        rc: sum_where(3),
        n_pulses: n_pulses as f64,
    })
}

/// Photon-number probabilities of the heralded signal in the `{0, 1, 2+}` truncation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhotonProbabilities {
    pub p0: f64,
    pub p1: f64,
    pub p2plus: f64,
    pub t_est: f64,
}

impl PhotonProbabilities {
    /// `p2plus` is set to `1 − p0 − p1`.
    pub fn new(p0: f64, p1: f64, t_est: f64) -> Result<Self> {
        let p = Self {
            p0,
            p1,
            p2plus: 1.0 - p0 - p1,
            t_est,
        };
        for (name, v) in [("p0", p.p0), ("p1", p.p1), ("p2plus", p.p2plus)] {
            if !(-1e-12..=1.0 + 1e-12).contains(&v) {
                return Err(Error::InvalidState(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(p)
    }

    /// Exact truncation of a one-mode state's photon distribution.
    pub fn from_state(rho: &DensityMatrix) -> Result<Self> {
        let dist = JointDistribution::from_state(rho)?;
        let total = dist.total();
        let p0 = dist.get(0, 0) / total;
        let p1 = if dist.signal_cutoff >= 1 { dist.get(1, 0) / total } else { 0.0 };
        Self::new(p0, p1, 0.5)
    }
}

/// Heralded photon probabilities estimated from click counts.
pub fn probabilities_from_record(rec: &ClickRecord) -> Result<PhotonProbabilities> {
    if !(rec.r0 > 0.0) {
        return Err(Error::ZeroHerald);
    }
    let singles = rec.r1a + rec.r1b;
    if !(singles > 0.0) {
        return Err(Error::DegenerateRecord("no heralded signal clicks, T undefined"));
    }
    let t = rec.r1a / singles;
    let p0 = 1.0 - (singles + rec.r2) / rec.r0;
    let mut p1 = singles / rec.r0;
    let mut correction = 0.0;
    if rec.r2 > 0.0 {
        if t <= 0.0 || t >= 1.0 {
            return Err(Error::Division("splitter correction with one-sided signal clicks"));
        }
        correction = (t * t + (1.0 - t) * (1.0 - t)) / (2.0 * t * (1.0 - t));
        p1 -= correction * rec.r2 / rec.r0;
    }
    let mut p = PhotonProbabilities::new(p0, p1, t)?;
    // 1 − p0 − p1 in closed form, exact zero without threefold events
    p.p2plus = (1.0 + correction) * rec.r2 / rec.r0;
    Ok(p)
}

/// Closed forms of the heralded g² in terms of photon probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum G2Form {
    /// `2 p2+ / p1²`
    A,
    /// `2 (1 − p0 − p1) / (2 (1 − p0) − p1)²`
    B,
}

pub fn heralded_g2_from_probs(p: &PhotonProbabilities, form: G2Form) -> Result<f64> {
    match form {
        G2Form::A => {
            if p.p1 == 0.0 {
                return Err(Error::Division("heralded g2 with p1 = 0"));
            }
            Ok((2.0 * p.p2plus / (p.p1 * p.p1)).max(0.0))
        }
        G2Form::B => {
            let d = 2.0 * (1.0 - p.p0) - p.p1;
            if d == 0.0 {
                return Err(Error::Division("heralded g2 with 2(1 - p0) = p1"));
            }
            Ok((2.0 * p.p2plus / (d * d)).max(0.0))
        }
    }
}

/// `R2 R0 / (R1A R1B)`.
pub fn heralded_g2_from_record(rec: &ClickRecord) -> Result<f64> {
    if !(rec.r1a > 0.0 && rec.r1b > 0.0) {
        return Err(Error::Division("heralded g2 with zero twofold coincidences"));
    }
    Ok(rec.r2 * rec.r0 / (rec.r1a * rec.r1b))
}

/// Normalized intensity correlation `⟨a_i† a_j† a_i a_j⟩ / (⟨n_i⟩⟨n_j⟩)`.
pub fn unheralded_g2(rho: &DensityMatrix, mode_i: usize, mode_j: usize) -> Result<f64> {
    if mode_i >= rho.n_modes() || mode_j >= rho.n_modes() {
        return Err(Error::Dimension(format!("modes ({mode_i}, {mode_j}) of a {}-mode state", rho.n_modes())));
    }
    let dist = JointDistribution::from_state(rho)?;
    let pick = |m: usize| move |s: f64, h: f64| if m == SIGNAL { s } else { h };
    let (ni, nj) = (pick(mode_i), pick(mode_j));
    let mi = dist.moment(ni);
    let mj = dist.moment(nj);
    if !(mi > 0.0 && mj > 0.0) {
        return Err(Error::Division("g2 of a dark mode"));
    }
    let numerator = if mode_i == mode_j {
        dist.moment(|s, h| ni(s, h) * (ni(s, h) - 1.0))
    } else {
        dist.moment(|s, h| ni(s, h) * nj(s, h))
    };
    Ok(numerator / (mi * mj))
}

/// Signal state conditioned on a herald click.
pub fn herald_condition(rho: &DensityMatrix, setup: &DetectorSetup) -> Result<DensityMatrix> {
    let &[cs, ch] = rho.cutoffs() else {
        return Err(Error::Dimension("herald conditioning needs a two-mode state".into()));
    };
    let dh = ch + 1;
    let ds = cs + 1;
    let weights: Vec<f64> = (0..dh).map(|n| 1.0 - (1.0 - setup.eta_h).powi(n as i32)).collect();
    let el = rho.elements();
    let mut out = crate::fock::CMatrix::zeros(ds, ds);
    for a in 0..ds {
        for b in 0..ds {
            let mut acc = crate::fock::C64::new(0.0, 0.0);
            for (n, w) in weights.iter().enumerate() {
                if *w != 0.0 {
                    acc += el[(a * dh + n, b * dh + n)] * *w;
                }
            }
            out[(a, b)] = acc;
        }
    }
    let prob: f64 = out.diagonal().iter().map(|z| z.re).sum();
    if !(prob > 1e-300) {
        return Err(Error::ZeroHerald);
    }
    out /= crate::fock::C64::new(prob, 0.0);
    DensityMatrix::new(vec![cs], out)
}

const CSV_HEADER: [&str; 9] = ["intensity", "R0", "R1A", "R1B", "R2", "RSA", "RSB", "RC", "NP"];

/// Writes one row per intensity point; counts are rounded to integers.
pub fn write_records<W: Write>(writer: W, rows: &[(f64, ClickRecord)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for (intensity, r) in rows {
        let counts = [r.r0, r.r1a, r.r1b, r.r2, r.rs_a, r.rs_b, r.rc, r.n_pulses];
        let mut row = vec![format!("{intensity}")];
        row.extend(counts.iter().map(|c| format!("{}", c.round() as u64)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(reader: R, origin: &Path) -> Result<Vec<(f64, ClickRecord)>> {
    let schema = |line: u64, message: String| Error::Schema {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(schema(1, format!("expected header {}", CSV_HEADER.join(","))));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != CSV_HEADER.len() {
            return Err(schema(line, format!("expected {} fields, got {}", CSV_HEADER.len(), rec.len())));
        }
        let intensity: f64 = rec[0]
            .parse()
            .map_err(|_| schema(line, format!("bad intensity {:?}", &rec[0])))?;
        let mut counts = [0.0; 8];
        for (slot, (name, field)) in counts.iter_mut().zip(CSV_HEADER[1..].iter().zip(rec.iter().skip(1))) {
            let v: u64 = field
                .parse()
                .map_err(|_| schema(line, format!("{name} must be a non-negative integer, got {field:?}")))?;
            *slot = v as f64;
        }
        let record = ClickRecord {
            r0: counts[0],
            r1a: counts[1],
            r1b: counts[2],
            r2: counts[3],
            rs_a: counts[4],
            rs_b: counts[5],
            rc: counts[6],
            n_pulses: counts[7],
        };
        record
            .validate()
            .map_err(|e| schema(line, e.to_string()))?;
        rows.push((intensity, record));
    }
    Ok(rows)
}

pub fn load_records(path: &Path) -> Result<Vec<(f64, ClickRecord)>> {
    read_records(std::fs::File::open(path)?, path)
}

pub fn save_records(path: &Path, rows: &[(f64, ClickRecord)]) -> Result<()> {
    write_records(std::fs::File::create(path)?, rows)
}
