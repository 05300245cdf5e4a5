//! Forward simulation of the five fitted observables and the multi-stage fit.
//!
//! Every observable is computed from expected click counts of the model state
//! at each intensity and plotted against the model's mean photon number:
//!
//! | kind                | value                                              | x            |
//! |---------------------|----------------------------------------------------|--------------|
//! | `heralded_g2`       | `R2 R0 / (R1A R1B)`                                | `⟨n_signal⟩` |
//! | `nc_witness_signal` | `W_NC` of the signal detectors A, B                | `⟨n_signal⟩` |
//! | `nc_witness_herald` | `W_NC` of the herald mode on a balanced split      | `⟨n_herald⟩` |
//! | `nc_witness_cross`  | `W_NC` of signal detector A against the herald     | `⟨n_signal⟩` |
//! | `qng_depth`         | non-Gaussian depth of the heralded signal, in dB   | `⟨n_signal⟩` |
//!
//! Undefined values (no clicks, zero denominators) are NaN.

mod optimize;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detect::{
    click_distribution, heralded_g2_from_probs, heralded_g2_from_record, probabilities_from_record,
    ClickRecord, DetectorSetup, G2Form, JointDistribution,
};
use crate::error::{Error, Result};
use crate::fock::{FockConfig, HERALD, SIGNAL};
use crate::model::{IntensityGrid, ModelParams, PhaseMode, StateBuilder};
use crate::witness::{
    cross_witness_input, log_negativity, nc_witness, qng_depth, qng_witness, rates_to_witness_input,
};

pub use optimize::{
    minimize, polish, AnnealingSettings, Bounds, EvolutionSettings, Objective, OptimizerSettings, Optimum,
    RandomSearchSettings, Stage, StageSummary, Strategy,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservableKind {
    HeraldedG2,
    NcWitnessSignal,
    NcWitnessHerald,
    NcWitnessCross,
    QngDepth,
}

impl ObservableKind {
    pub const ALL: [ObservableKind; 5] = [
        ObservableKind::HeraldedG2,
        ObservableKind::NcWitnessSignal,
        ObservableKind::NcWitnessHerald,
        ObservableKind::NcWitnessCross,
        ObservableKind::QngDepth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObservableKind::HeraldedG2 => "heralded_g2",
            ObservableKind::NcWitnessSignal => "nc_witness_signal",
            ObservableKind::NcWitnessHerald => "nc_witness_herald",
            ObservableKind::NcWitnessCross => "nc_witness_cross",
            ObservableKind::QngDepth => "qng_depth",
        }
    }

    fn index(self) -> usize {
        Self::ALL.iter().position(|&k| k == self).expect("listed")
    }
}

impl fmt::Display for ObservableKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObservableKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::MissingObservable(format!("unknown observable kind {s:?}")))
    }
}

/// One observable sampled at points `x` (mean photon number).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableCurve {
    pub kind: ObservableKind,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub sigma: Option<Vec<f64>>,
}

impl ObservableCurve {
    pub fn new(kind: ObservableKind, x: Vec<f64>, y: Vec<f64>, sigma: Option<Vec<f64>>) -> Result<Self> {
        if x.len() != y.len() || sigma.as_ref().is_some_and(|s| s.len() != x.len()) {
            return Err(Error::Dimension(format!("{kind}: x, y and sigma lengths differ")));
        }
        if sigma.as_ref().is_some_and(|s| s.iter().any(|&v| !(v > 0.0))) {
            return Err(Error::Parameter(format!("{kind}: sigma must be > 0")));
        }
        Ok(Self { kind, x, y, sigma })
    }

    /// Points with finite coordinates, sorted by `x`.
    fn finite_sorted(&self) -> Vec<(f64, f64)> {
        let mut pts: Vec<(f64, f64)> = self
            .x
            .iter()
            .zip(&self.y)
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(&x, &y)| (x, y))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        pts
    }
}

/// Quantities beyond the fitted observables, computed on request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateExtras {
    /// `ΔW` of the heralded signal.
    pub delta_w_heralded: f64,
    pub a_opt_heralded: f64,
    /// `ΔW` of the signal without heralding.
    pub delta_w_unheralded: f64,
    pub g2_form_a: f64,
    pub g2_form_b: f64,
    pub log_negativity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPoint {
    pub intensity: f64,
    pub mean_signal: f64,
    pub mean_herald: f64,
    /// Expected counts of the herald/signal setup.
    pub record: ClickRecord,
    /// Expected counts of the herald mode on a balanced split.
    pub herald_record: ClickRecord,
    values: [f64; 5],
    pub extras: Option<StateExtras>,
}

impl ForwardPoint {
    pub fn value(&self, kind: ObservableKind) -> f64 {
        self.values[kind.index()]
    }

    pub fn x(&self, kind: ObservableKind) -> f64 {
        if kind == ObservableKind::NcWitnessHerald {
            self.mean_herald
        } else {
            self.mean_signal
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardResult {
    pub points: Vec<ForwardPoint>,
}

impl ForwardResult {
    pub fn curve(&self, kind: ObservableKind) -> ObservableCurve {
        ObservableCurve {
            kind,
            x: self.points.iter().map(|p| p.x(kind)).collect(),
            y: self.points.iter().map(|p| p.value(kind)).collect(),
            sigma: None,
        }
    }

    pub fn curves(&self) -> Vec<ObservableCurve> {
        ObservableKind::ALL.iter().map(|&k| self.curve(k)).collect()
    }
}

/// All five observables of `params` over `grid` with expectation-value detection.
pub fn forward(
    params: &ModelParams,
    grid: &IntensityGrid,
    setup: &DetectorSetup,
    cfg: &FockConfig,
) -> Result<ForwardResult> {
    forward_with(params, grid, setup, cfg, false)
}

/// As [`forward`], optionally adding [`StateExtras`] to every point.
pub fn forward_with(
    params: &ModelParams,
    grid: &IntensityGrid,
    setup: &DetectorSetup,
    cfg: &FockConfig,
    extras: bool,
) -> Result<ForwardResult> {
    setup.validate()?;
    let builder = StateBuilder::new(params, cfg)?;
    let points = grid
        .values()
        .par_iter()
        .map(|&i| observe(&builder, i, setup, extras))
        .collect::<Result<Vec<_>>>()?;
    Ok(ForwardResult { points })
}

fn observe(builder: &StateBuilder, intensity: f64, setup: &DetectorSetup, extras: bool) -> Result<ForwardPoint> {
    let ensemble = builder.ensemble(intensity)?;
    let dist = JointDistribution::from_ensemble(&ensemble)?;
    let total = dist.total();
    let record = click_distribution(&dist, setup)?.expected_record(setup.n_pulses);
    let herald_setup = DetectorSetup {
        eta_a: setup.eta_h,
        eta_b: setup.eta_h,
        t_split: 0.5,
        ..*setup
    };
    let herald_record = click_distribution(&dist.swapped(), &herald_setup)?.expected_record(setup.n_pulses);

    let nan = f64::NAN;
    let heralded = probabilities_from_record(&record);
    let values = [
        heralded_g2_from_record(&record).unwrap_or(nan),
        rates_to_witness_input(&record).map_or(nan, |i| nc_witness(&i)),
        rates_to_witness_input(&herald_record).map_or(nan, |i| nc_witness(&i)),
        cross_witness_input(&record).map_or(nan, |i| nc_witness(&i)),
        heralded
            .as_ref()
            .ok()
            .and_then(|p| qng_depth(p).ok())
            .map_or(nan, |d| d.depth_db),
    ];
    let extras = if extras {
        let (dw, a) = heralded
            .as_ref()
            .map_or((nan, nan), |p| {
                let q = qng_witness(p);
                (q.delta_w, q.a_opt)
            });
        let unheralded = probabilities_from_record(&record.unheralded());
        Some(StateExtras {
            delta_w_heralded: dw,
            a_opt_heralded: a,
            delta_w_unheralded: unheralded.as_ref().map_or(nan, |p| qng_witness(p).delta_w),
            g2_form_a: heralded
                .as_ref()
                .ok()
                .and_then(|p| heralded_g2_from_probs(p, G2Form::A).ok())
                .unwrap_or(nan),
            g2_form_b: heralded
                .as_ref()
                .ok()
                .and_then(|p| heralded_g2_from_probs(p, G2Form::B).ok())
                .unwrap_or(nan),
            log_negativity: log_negativity(&ensemble.density_matrix()?)?,
        })
    } else {
        None
    };
    Ok(ForwardPoint {
        intensity,
        mean_signal: dist.mean(SIGNAL) / total,
        mean_herald: dist.mean(HERALD) / total,
        record,
        herald_record,
        values,
        extras,
    })
}

/// Relative importance of each observable in the loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Weights {
    pub heralded_g2: f64,
    pub nc_witness_signal: f64,
    pub nc_witness_herald: f64,
    pub nc_witness_cross: f64,
    pub qng_depth: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            heralded_g2: 1.0,
            nc_witness_signal: 1.0,
            nc_witness_herald: 1.0,
            nc_witness_cross: 1.0,
            qng_depth: 1.0,
        }
    }
}

impl Weights {
    pub fn get(&self, kind: ObservableKind) -> f64 {
        match kind {
            ObservableKind::HeraldedG2 => self.heralded_g2,
            ObservableKind::NcWitnessSignal => self.nc_witness_signal,
            ObservableKind::NcWitnessHerald => self.nc_witness_herald,
            ObservableKind::NcWitnessCross => self.nc_witness_cross,
            ObservableKind::QngDepth => self.qng_depth,
        }
    }

    pub fn set(&mut self, kind: ObservableKind, w: f64) {
        let slot = match kind {
            ObservableKind::HeraldedG2 => &mut self.heralded_g2,
            ObservableKind::NcWitnessSignal => &mut self.nc_witness_signal,
            ObservableKind::NcWitnessHerald => &mut self.nc_witness_herald,
            ObservableKind::NcWitnessCross => &mut self.nc_witness_cross,
            ObservableKind::QngDepth => &mut self.qng_depth,
        };
        *slot = w;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub weights: Weights,
    /// Weight of the first and last data point of each curve relative to the others.
    pub endpoint_weight_factor: f64,
    /// The model's y-range may exceed the data's by this factor before it is penalized.
    pub range_penalty_factor: f64,
    /// Loss assigned to parameters the model cannot represent.
    pub invalid_loss: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            weights: Weights::default(),
            endpoint_weight_factor: 3.0,
            range_penalty_factor: 2.0,
            invalid_loss: 1e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub per_observable: BTreeMap<ObservableKind, f64>,
}

/// Weighted range-normalized RMS error of `model` against `data`, per kind and in total.
pub fn loss(model: &[ObservableCurve], data: &[ObservableCurve], cfg: &LossConfig) -> Result<LossBreakdown> {
    Ok(loss_with_residuals(model, data, cfg)?.0)
}

/// [`loss`] together with the weighted residual vector whose squared norm is
/// `Σ weight · NRMSE²`; `None` when some model curve has no finite points.
pub fn loss_with_residuals(
    model: &[ObservableCurve],
    data: &[ObservableCurve],
    cfg: &LossConfig,
) -> Result<(LossBreakdown, Option<Vec<f64>>)> {
    let mut per_observable = BTreeMap::new();
    let mut total = 0.0;
    let mut residuals = Some(Vec::new());
    for d in data {
        let m = model
            .iter()
            .find(|m| m.kind == d.kind)
            .ok_or_else(|| Error::MissingObservable(format!("model has no {} curve", d.kind)))?;
        let weight = cfg.weights.get(d.kind);
        let (value, r) = curve_loss(m, d, cfg)?;
        per_observable.insert(d.kind, value);
        total += weight * value;
        residuals = match (residuals, r) {
            (Some(mut all), Some(r)) => {
                all.extend(r.into_iter().map(|v| v * weight.sqrt()));
                Some(all)
            }
            _ => None,
        };
    }
    Ok((LossBreakdown { total, per_observable }, residuals))
}

fn curve_loss(model: &ObservableCurve, data: &ObservableCurve, cfg: &LossConfig) -> Result<(f64, Option<Vec<f64>>)> {
    let pts = data.finite_sorted();
    if pts.is_empty() {
        return Err(Error::MissingObservable(format!("{} data has no finite points", data.kind)));
    }
    let reference = model.finite_sorted();
    if reference.is_empty() {
        return Ok((cfg.invalid_loss, None));
    }
    let (lo, hi) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    let range = if hi > lo { hi - lo } else { 1.0 };
    let predicted: Vec<f64> = pts.iter().map(|p| interpolate(&reference, p.0)).collect();
    let last = pts.len() - 1;
    let weights: Vec<f64> = (0..pts.len())
        .map(|k| if k == 0 || k == last { cfg.endpoint_weight_factor } else { 1.0 })
        .collect();
    let den: f64 = weights.iter().sum();
    let residuals: Vec<f64> = pts
        .iter()
        .zip(&predicted)
        .zip(&weights)
        .map(|((p, m), w)| (w / den).sqrt() * (m - p.1) / range)
        .collect();
    let nrmse = residuals.iter().map(|r| r * r).sum::<f64>().sqrt();
    let (mlo, mhi) = predicted
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let allowed = cfg.range_penalty_factor * range;
    let penalty = if mhi - mlo > allowed {
        ((mhi - mlo - allowed) / range).powi(2)
    } else {
        0.0
    };
    Ok((nrmse + penalty, Some(residuals)))
}

/// Piecewise-linear interpolation through sorted points, constant beyond the ends.
fn interpolate(pts: &[(f64, f64)], x: f64) -> f64 {
    let first = pts[0];
    let last = pts[pts.len() - 1];
    if x <= first.0 {
        return first.1;
    }
    if x >= last.0 {
        return last.1;
    }
    let k = pts.partition_point(|p| p.0 <= x);
    let (x0, y0) = pts[k - 1];
    let (x1, y1) = pts[k];
    if x1 == x0 {
        return y1;
    }
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntensityRange {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Default for IntensityRange {
    fn default() -> Self {
        Self {
            min: 0.2,
            max: 0.8,
            points: 12,
        }
    }
}

impl IntensityRange {
    pub fn grid(&self) -> Result<IntensityGrid> {
        if self.points == 0 || !(self.min > 0.0) || self.max < self.min {
            return Err(Error::Config(format!("bad intensity range {self:?}")));
        }
        IntensityGrid::linspace(self.min, self.max, self.points)
    }
}

/// Parameters held fixed during a fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    /// `I_0` used when it is not a free parameter.
    pub i0: f64,
    pub normalize_intensity: bool,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            i0: 231.65,
            normalize_intensity: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub seed: u64,
    #[serde(default)]
    pub phase_mode: PhaseMode,
    #[serde(default)]
    pub model: ModelSettings,
    #[serde(default)]
    pub fock: FockConfig,
    #[serde(default)]
    pub detector: DetectorSetup,
    #[serde(default)]
    pub intensity: IntensityRange,
    /// `[lo, hi]` per free parameter key; unspecified keys use [`default_bounds`].
    #[serde(default)]
    pub bounds: BTreeMap<String, [f64; 2]>,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub optimizer: OptimizerSettings,
}

impl FitConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            phase_mode: PhaseMode::default(),
            model: ModelSettings::default(),
            fock: FockConfig::default(),
            detector: DetectorSetup::default(),
            intensity: IntensityRange::default(),
            bounds: BTreeMap::new(),
            loss: LossConfig::default(),
            optimizer: OptimizerSettings::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.fock.validate()?;
        self.detector.validate()?;
        self.intensity.grid()?;
        self.optimizer.validate()?;
        let names = self.phase_mode.free_names();
        for key in self.bounds.keys() {
            if !names.contains(&key.as_str()) {
                return Err(Error::Config(format!(
                    "bound for {key:?}, which is not free in {:?} mode",
                    self.phase_mode
                )));
            }
        }
        self.resolved_bounds()?;
        for kind in ObservableKind::ALL {
            if !(self.loss.weights.get(kind) >= 0.0) {
                return Err(Error::Config(format!("weight of {kind} must be >= 0")));
            }
        }
        if !(self.loss.endpoint_weight_factor > 0.0 && self.loss.range_penalty_factor > 0.0) {
            return Err(Error::Config("loss factors must be > 0".into()));
        }
        Ok(())
    }

    /// Bounds in free-parameter order.
    pub fn resolved_bounds(&self) -> Result<Bounds> {
        let defaults = default_bounds(self.phase_mode);
        let (mut lo, mut hi) = (Vec::new(), Vec::new());
        for (name, default) in self.phase_mode.free_names().into_iter().zip(defaults) {
            let [l, h] = self.bounds.get(name).copied().unwrap_or(default);
            if !(l.is_finite() && h.is_finite() && l <= h) {
                return Err(Error::Config(format!("bounds of {name} must be finite and ordered")));
            }
            lo.push(l);
            hi.push(h);
        }
        Bounds::new(lo, hi)
    }

    fn base_params(&self) -> ModelParams {
        ModelParams {
            i0: self.model.i0,
            normalize_intensity: self.model.normalize_intensity,
            squeeze_phase_s: PI,
            squeeze_phase_h: PI,
            ..ModelParams::dark()
        }
    }
}

/// Search box covering the published parameter scales, in free-parameter order.
pub fn default_bounds(mode: PhaseMode) -> Vec<[f64; 2]> {
    mode.free_names()
        .into_iter()
        .map(|name| match name {
            "I_0" => [200.0, 260.0],
            "n_th_s" | "n_th_h" => [0.0, 0.01],
            "beta_n_th_s" | "beta_n_th_h" => [0.0, 1.0],
            "r_s" | "r_h" => [0.0, 0.6],
            "beta_r_s" | "beta_r_h" => [1.0, 2.0],
            "alpha_s" | "alpha_h" => [0.0, 1.0],
            "beta_alpha_s" | "beta_alpha_h" => [1.5, 2.6],
            "theta_BS1" | "theta_BS2" => [0.0, PI],
            "phi_BS1" | "phi_BS2" => [-PI, PI],
            "phi_sq" => [PI / 2.0, 3.0 * PI / 2.0],
            other => unreachable!("no default bound for {other}"),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: ModelParams,
    pub loss: f64,
    pub per_observable_loss: BTreeMap<ObservableKind, f64>,
    pub stage_trace: Vec<StageSummary>,
    pub evaluations: usize,
    pub warnings: Vec<String>,
}

impl FitResult {
    /// The annealing stage improved on differential evolution by less than `1e-6`.
    pub fn stalled(&self) -> bool {
        !self.warnings.is_empty()
    }

    pub fn summary_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Summary<'a> {
            loss: f64,
            per_observable_loss: &'a BTreeMap<ObservableKind, f64>,
            evaluations: usize,
            stage_trace: &'a [StageSummary],
            warnings: &'a [String],
        }
        Ok(serde_json::to_string_pretty(&Summary {
            loss: self.loss,
            per_observable_loss: &self.per_observable_loss,
            evaluations: self.evaluations,
            stage_trace: &self.stage_trace,
            warnings: &self.warnings,
        })?)
    }
}

/// Loss of a parameter set against `data`, including the forward simulation.
pub fn evaluate_params(params: &ModelParams, data: &[ObservableCurve], cfg: &FitConfig) -> Result<LossBreakdown> {
    let result = forward(params, &cfg.intensity.grid()?, &cfg.detector, &cfg.fock)?;
    loss(&result.curves(), data, &cfg.loss)
}

struct FitObjective<'a> {
    base: ModelParams,
    grid: IntensityGrid,
    data: &'a [ObservableCurve],
    cfg: &'a FitConfig,
}

impl FitObjective<'_> {
    fn evaluate(&self, x: &[f64]) -> Result<(LossBreakdown, Option<Vec<f64>>)> {
        let cfg = self.cfg;
        let params = cfg.phase_mode.from_vector(&self.base, x)?;
        let result = forward(&params, &self.grid, &cfg.detector, &cfg.fock)?;
        loss_with_residuals(&result.curves(), self.data, &cfg.loss)
    }
}

impl Objective for FitObjective<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        match self.evaluate(x) {
            Ok((b, _)) if b.total.is_finite() => b.total.min(self.cfg.loss.invalid_loss),
            _ => self.cfg.loss.invalid_loss,
        }
    }

    fn residuals(&self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        match self.evaluate(x) {
            Ok((b, Some(r))) if b.total.is_finite() && r.iter().all(|v| v.is_finite()) => Some((b.total, r)),
            _ => None,
        }
    }

    fn has_residuals(&self) -> bool {
        true
    }
}

/// Fits the model to `data` by random search, differential evolution and annealing.
pub fn fit(data: &[ObservableCurve], cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    let mut kinds: Vec<ObservableKind> = data.iter().map(|c| c.kind).collect();
    kinds.sort();
    kinds.dedup();
    if kinds.len() < 2 {
        return Err(Error::MissingObservable(format!(
            "a fit needs at least two observable kinds, got {}",
            kinds.len()
        )));
    }
    if kinds.len() != data.len() {
        return Err(Error::Config("each observable kind may appear only once".into()));
    }
    let bounds = cfg.resolved_bounds()?;
    let objective = FitObjective {
        base: cfg.base_params(),
        grid: cfg.intensity.grid()?,
        data,
        cfg,
    };
    let optimum = minimize(&objective, &bounds, &cfg.optimizer, cfg.seed);
    let params = cfg.phase_mode.from_vector(&objective.base, &optimum.x)?;
    let breakdown = match evaluate_params(&params, data, cfg) {
        Ok(b) => b,
        Err(e) if e.is_numerical() => LossBreakdown {
            total: cfg.loss.invalid_loss,
            per_observable: kinds.iter().map(|&k| (k, cfg.loss.invalid_loss)).collect(),
        },
        Err(e) => return Err(e),
    };
    let mut warnings = Vec::new();
    if let [.., evolution, annealing] = optimum.stages.as_slice() {
        if evolution.best_loss - annealing.best_loss < 1e-6 {
            warnings.push(format!(
                "annealing improved the loss by {:.3e} (< 1e-6) over differential evolution",
                evolution.best_loss - annealing.best_loss
            ));
        }
    }
    Ok(FitResult {
        params,
        loss: breakdown.total,
        per_observable_loss: breakdown.per_observable,
        stage_trace: optimum.stages,
        evaluations: optimum.evaluations,
        warnings,
    })
}

#[cfg(test)]
mod tests;
