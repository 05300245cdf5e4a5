//! Bounded global minimization: random search, differential evolution, then
//! generalized simulated annealing with a quasi-Newton local phase.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// A function to minimize. Least-squares problems can also expose residuals,
/// which the local phase then uses.
pub trait Objective: Sync {
    fn value(&self, x: &[f64]) -> f64;

    /// `(value, r)` where `|r|²` shares the minimizer of `value`; `None` if `x` is invalid.
    fn residuals(&self, _x: &[f64]) -> Option<(f64, Vec<f64>)> {
        None
    }

    fn has_residuals(&self) -> bool {
        false
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> Objective for F {
    fn value(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Bounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::Dimension("bounds need matching, non-empty lo/hi".into()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l.is_finite() && h.is_finite() && l <= h)) {
            return Err(Error::Config("bounds must be finite with lo <= hi".into()));
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    fn width(&self, j: usize) -> f64 {
        self.hi[j] - self.lo[j]
    }

    /// Indices of dimensions that can move.
    fn active(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&j| self.width(j) > 0.0).collect()
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..self.dim())
            .map(|j| if self.width(j) > 0.0 { rng.random_range(self.lo[j]..=self.hi[j]) } else { self.lo[j] })
            .collect()
    }

    fn clip(&self, x: &mut [f64]) {
        for (j, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lo[j], self.hi[j]);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomSearchSettings {
    pub draws: usize,
    /// Best draws handed to the evolution stage.
    pub keep: usize,
}

impl Default for RandomSearchSettings {
    fn default() -> Self {
        Self { draws: 2000, keep: 20 }
    }
}

/// Base vector of the differential mutation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// A random member other than the target.
    Rand1Bin,
    /// The current best member; converges faster, explores less.
    Best1Bin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionSettings {
    pub strategy: Strategy,
    pub generations: usize,
    /// Population size per free parameter.
    pub population_factor: usize,
    pub crossover: f64,
    /// Range the differential weight is drawn from each generation.
    pub mutation: [f64; 2],
}

impl Default for EvolutionSettings {
    fn default() -> Self {
        Self {
            strategy: Strategy::Rand1Bin,
            generations: 60,
            population_factor: 15,
            crossover: 0.7,
            mutation: [0.5, 1.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnealingSettings {
    /// Markov-chain steps; local searches are counted separately.
    pub steps: usize,
    pub initial_temp: f64,
    pub visit: f64,
    pub accept: f64,
    pub restart_temp_ratio: f64,
    /// Evaluations per local search.
    pub local_evaluations: usize,
}

impl Default for AnnealingSettings {
    fn default() -> Self {
        Self {
            steps: 5000,
            initial_temp: 5230.0,
            visit: 2.62,
            accept: -5.0,
            restart_temp_ratio: 2e-5,
            local_evaluations: 1500,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSettings {
    pub random_search: RandomSearchSettings,
    pub evolution: EvolutionSettings,
    pub annealing: AnnealingSettings,
}

impl OptimizerSettings {
    pub fn validate(&self) -> Result<()> {
        let rs = &self.random_search;
        if rs.draws == 0 || rs.keep == 0 || rs.keep > rs.draws {
            return Err(Error::Config("random search needs 0 < keep <= draws".into()));
        }
        let de = &self.evolution;
        if de.population_factor == 0 || !(0.0..=1.0).contains(&de.crossover) {
            return Err(Error::Config("evolution needs population_factor > 0 and crossover in [0, 1]".into()));
        }
        let [f0, f1] = de.mutation;
        if !(f0 > 0.0 && f0 <= f1 && f1 <= 2.0) {
            return Err(Error::Config("mutation range must satisfy 0 < lo <= hi <= 2".into()));
        }
        let an = &self.annealing;
        if !(an.visit > 1.0 && an.visit < 3.0) {
            return Err(Error::Config("annealing visit parameter must lie in (1, 3)".into()));
        }
        if !(an.accept < 1.0 && an.accept > -1e4) {
            return Err(Error::Config("annealing accept parameter must lie in (-1e4, 1)".into()));
        }
        if !(an.initial_temp > 0.0) || !(an.restart_temp_ratio > 0.0 && an.restart_temp_ratio < 1.0) {
            return Err(Error::Config("annealing temperatures must be positive, ratio in (0, 1)".into()));
        }
        if an.local_evaluations == 0 {
            return Err(Error::Config("local_evaluations must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    RandomSearch,
    DifferentialEvolution,
    Annealing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: Stage,
    pub evaluations: usize,
    /// Best loss at the end of the stage.
    pub best_loss: f64,
    /// Best loss after each draw batch, generation, or annealing iteration.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimum {
    pub x: Vec<f64>,
    pub loss: f64,
    pub evaluations: usize,
    pub stages: Vec<StageSummary>,
}

struct Best {
    x: Vec<f64>,
    f: f64,
}

impl Best {
    fn offer(&mut self, x: &[f64], f: f64) -> bool {
        if f < self.f {
            self.x.clear();
            self.x.extend_from_slice(x);
            self.f = f;
            true
        } else {
            false
        }
    }
}

fn stage_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn eval_all<F>(f: &F, xs: &[Vec<f64>]) -> Vec<f64>
where
    F: Objective + ?Sized,
{
    xs.par_iter().map(|x| sanitize(f.value(x))).collect()
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() { f64::INFINITY } else { v }
}

/// Minimizes `f` over `bounds`. The result is a deterministic function of `seed`.
pub fn minimize<F>(f: &F, bounds: &Bounds, settings: &OptimizerSettings, seed: u64) -> Optimum
where
    F: Objective + ?Sized,
{
    let (seeds, rs) = random_search(f, bounds, &settings.random_search, seed);
    let (best, de) = differential_evolution(f, bounds, &settings.evolution, seeds, seed);
    let (best, an) = annealing(f, bounds, &settings.annealing, best, seed);
    let stages = vec![rs, de, an];
    Optimum {
        x: best.x,
        loss: best.f,
        evaluations: stages.iter().map(|s| s.evaluations).sum(),
        stages,
    }
}

/// Local descent from `x0` only, with at most `max_evaluations` calls.
pub fn polish<F>(f: &F, bounds: &Bounds, x0: &[f64], max_evaluations: usize) -> (Vec<f64>, f64, usize)
where
    F: Objective + ?Sized,
{
    let mut x = x0.to_vec();
    bounds.clip(&mut x);
    let fx = sanitize(f.value(&x));
    let mut evaluations = 1;
    let (x, fx) = local_search(f, bounds, &bounds.active(), x, fx, max_evaluations.saturating_sub(1), &mut evaluations);
    (x, fx, evaluations)
}

fn random_search<F>(
    f: &F,
    bounds: &Bounds,
    cfg: &RandomSearchSettings,
    seed: u64,
) -> (Vec<(Vec<f64>, f64)>, StageSummary)
where
    F: Objective + ?Sized,
{
    let mut rng = stage_rng(seed, 1);
    let xs: Vec<Vec<f64>> = (0..cfg.draws).map(|_| bounds.sample(&mut rng)).collect();
    let fs = eval_all(f, &xs);
    let mut trace = Vec::new();
    let mut running = f64::INFINITY;
    for chunk in fs.chunks(100) {
        running = chunk.iter().copied().fold(running, f64::min);
        trace.push(running);
    }
    let mut ranked: Vec<(Vec<f64>, f64)> = xs.into_iter().zip(fs).collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1));
    ranked.truncate(cfg.keep);
    let summary = StageSummary {
        stage: Stage::RandomSearch,
        evaluations: cfg.draws,
        best_loss: ranked[0].1,
        trace,
    };
    (ranked, summary)
}

fn differential_evolution<F>(
    f: &F,
    bounds: &Bounds,
    cfg: &EvolutionSettings,
    seeds: Vec<(Vec<f64>, f64)>,
    seed: u64,
) -> (Best, StageSummary)
where
    F: Objective + ?Sized,
{
    let mut rng = stage_rng(seed, 2);
    let dim = bounds.dim();
    let active = bounds.active();
    let size = (cfg.population_factor * dim).max(4);

    let (mut pop, mut fit): (Vec<Vec<f64>>, Vec<f64>) = seeds.into_iter().take(size).unzip();
    let fill: Vec<Vec<f64>> = (pop.len()..size).map(|_| bounds.sample(&mut rng)).collect();
    let mut evaluations = fill.len();
    fit.extend(eval_all(f, &fill));
    pop.extend(fill);

    let mut best = Best { x: pop[0].clone(), f: f64::INFINITY };
    for (x, &v) in pop.iter().zip(&fit) {
        best.offer(x, v);
    }
    let mut trace = vec![best.f];

    for _ in 0..cfg.generations {
        if active.is_empty() {
            break;
        }
        let weight = rng.random_range(cfg.mutation[0]..=cfg.mutation[1]);
        let trials: Vec<Vec<f64>> = (0..size)
            .map(|i| {
                let [a, b, c] = distinct(&mut rng, size, i);
                let base = match cfg.strategy {
                    Strategy::Rand1Bin => &pop[a],
                    Strategy::Best1Bin => &best.x,
                };
                let forced = active[rng.random_range(0..active.len())];
                let mut trial = pop[i].clone();
                for &j in &active {
                    if j == forced || rng.random::<f64>() < cfg.crossover {
                        trial[j] = base[j] + weight * (pop[b][j] - pop[c][j]);
                    }
                }
                bounds.clip(&mut trial);
                trial
            })
            .collect();
        let scores = eval_all(f, &trials);
        evaluations += size;
        for (i, (trial, score)) in trials.into_iter().zip(scores).enumerate() {
            if score <= fit[i] {
                best.offer(&trial, score);
                pop[i] = trial;
                fit[i] = score;
            }
        }
        trace.push(best.f);
    }
    let summary = StageSummary {
        stage: Stage::DifferentialEvolution,
        evaluations,
        best_loss: best.f,
        trace,
    };
    (best, summary)
}

fn distinct<const N: usize>(rng: &mut ChaCha8Rng, n: usize, exclude: usize) -> [usize; N] {
    let mut out = [0usize; N];
    let mut k = 0;
    while k < N {
        let c = rng.random_range(0..n);
        if c != exclude && !out[..k].contains(&c) {
            out[k] = c;
            k += 1;
        }
    }
    out
}

/// Heavy-tailed visiting distribution of generalized simulated annealing.
struct Visiting {
    qv: f64,
    factor2: f64,
    factor3: f64,
    factor6: f64,
}

const TAIL_LIMIT: f64 = 1e8;
const MIN_VISIT_BOUND: f64 = 1e-10;

impl Visiting {
    fn new(qv: f64) -> Self {
        let factor2 = ((4.0 - qv) * (qv - 1.0).ln()).exp();
        let factor3 = ((2.0 - qv) * 2f64.ln() / (qv - 1.0)).exp();
        let factor5 = 1.0 / (qv - 1.0) - 0.5;
        let d1 = 2.0 - factor5;
        let factor6 = PI * (1.0 - factor5) / (PI * (1.0 - factor5)).sin() / ln_gamma(d1).exp();
        Self {
            qv,
            factor2,
            factor3,
            factor6,
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng, temperature: f64) -> f64 {
        let qv = self.qv;
        let factor1 = (temperature.ln() / (qv - 1.0)).exp();
        let factor4 = PI.sqrt() * factor1 * self.factor2 / (self.factor3 * (3.0 - qv));
        let sigma = (-(qv - 1.0) * (self.factor6 / factor4).ln() / (3.0 - qv)).exp();
        let x = sigma * rng.sample::<f64, _>(StandardNormal);
        let y: f64 = rng.sample(StandardNormal);
        let den = ((qv - 1.0) * y.abs().ln() / (3.0 - qv)).exp();
        let v = x / den;
        if v.is_finite() { v.clamp(-TAIL_LIMIT, TAIL_LIMIT) } else { TAIL_LIMIT.copysign(x) }
    }
}

fn wrap(bounds: &Bounds, j: usize, v: f64) -> f64 {
    let (lo, w) = (bounds.lo[j], bounds.width(j));
    let mut out = ((v - lo) % w + w) % w + lo;
    if (out - lo).abs() < MIN_VISIT_BOUND {
        out += MIN_VISIT_BOUND;
    }
    out.min(bounds.hi[j])
}

fn annealing<F>(f: &F, bounds: &Bounds, cfg: &AnnealingSettings, start: Best, seed: u64) -> (Best, StageSummary)
where
    F: Objective + ?Sized,
{
    let mut rng = stage_rng(seed, 3);
    let active = bounds.active();
    let mut evaluations = 0usize;
    let mut best = start;
    let mut trace = vec![best.f];
    if active.is_empty() || cfg.steps == 0 {
        let summary = StageSummary {
            stage: Stage::Annealing,
            evaluations,
            best_loss: best.f,
            trace,
        };
        return (best, summary);
    }

    let visiting = Visiting::new(cfg.visit);
    let t1 = ((cfg.visit - 1.0) * 2f64.ln()).exp() - 1.0;
    let restart_below = cfg.initial_temp * cfg.restart_temp_ratio;

    let (x0, f0) = (best.x.clone(), best.f);
    let (mut current, mut energy) = local_search(f, bounds, &active, x0, f0, cfg.local_evaluations, &mut evaluations);
    best.offer(&current, energy);

    let mut steps = 0usize;
    let mut iteration = 0usize;
    while steps < cfg.steps {
        let temperature =
            cfg.initial_temp * t1 / (((cfg.visit - 1.0) * ((iteration + 2) as f64).ln()).exp() - 1.0);
        if temperature < restart_below {
            current = bounds.sample(&mut rng);
            energy = sanitize(f.value(&current));
            steps += 1;
            evaluations += 1;
            best.offer(&current, energy);
            iteration = 0;
            continue;
        }
        let step_temp = temperature / (iteration + 1) as f64;
        let before = best.f;
        for k in 0..2 * active.len() {
            if steps >= cfg.steps {
                break;
            }
            let mut candidate = current.clone();
            if k < active.len() {
                for &j in &active {
                    candidate[j] = wrap(bounds, j, candidate[j] + visiting.draw(&mut rng, temperature));
                }
            } else {
                let j = active[k - active.len()];
                candidate[j] = wrap(bounds, j, candidate[j] + visiting.draw(&mut rng, temperature));
            }
            let e = sanitize(f.value(&candidate));
            steps += 1;
            evaluations += 1;
            let accept = if e < energy {
                true
            } else {
                let r: f64 = rng.random();
                let base = 1.0 - (1.0 - cfg.accept) * (e - energy) / step_temp;
                let p = if base <= 0.0 { 0.0 } else { (base.ln() / (1.0 - cfg.accept)).exp() };
                r <= p
            };
            if accept {
                current = candidate;
                energy = e;
                best.offer(&current, energy);
            }
        }
        if best.f < before {
            let (x, e) = local_search(f, bounds, &active, best.x.clone(), best.f, cfg.local_evaluations, &mut evaluations);
            best.offer(&x, e);
            current = x;
            energy = e;
        }
        trace.push(best.f);
        iteration += 1;
    }
    let summary = StageSummary {
        stage: Stage::Annealing,
        evaluations,
        best_loss: best.f,
        trace,
    };
    (best, summary)
}

fn local_search<F>(
    f: &F,
    bounds: &Bounds,
    active: &[usize],
    x: Vec<f64>,
    fx: f64,
    allowance: usize,
    counter: &mut usize,
) -> (Vec<f64>, f64)
where
    F: Objective + ?Sized,
{
    if f.has_residuals() {
        levenberg_marquardt(f, bounds, active, x, fx, allowance, counter)
    } else {
        quasi_newton(f, bounds, active, x, fx, allowance, counter)
    }
}

/// Coordinates of the active dimensions scaled to the unit box.
struct UnitBox<'a> {
    bounds: &'a Bounds,
    active: &'a [usize],
    base: Vec<f64>,
}

impl UnitBox<'_> {
    fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        self.active
            .iter()
            .map(|&j| (x[j] - self.bounds.lo[j]) / self.bounds.width(j))
            .collect()
    }

    fn to_x(&self, u: &[f64]) -> Vec<f64> {
        let mut out = self.base.clone();
        for (k, &j) in self.active.iter().enumerate() {
            out[j] = self.bounds.lo[j] + u[k].clamp(0.0, 1.0) * self.bounds.width(j);
        }
        out
    }
}

/// Projected Levenberg-Marquardt on the residual vector with forward-difference
/// Jacobians. Returns the visited point of lowest `value`.
fn levenberg_marquardt<F>(
    f: &F,
    bounds: &Bounds,
    active: &[usize],
    x: Vec<f64>,
    fx: f64,
    allowance: usize,
    counter: &mut usize,
) -> (Vec<f64>, f64)
where
    F: Objective + ?Sized,
{
    let n = active.len();
    let space = UnitBox { bounds, active, base: x.clone() };
    let mut used = 1usize;
    let Some((value, mut r)) = f.residuals(&x) else {
        *counter += used;
        return (x, fx);
    };
    let mut u = space.to_unit(&x);
    let (mut best_x, mut best_f) = if value < fx { (x.clone(), value) } else { (x, fx) };
    let mut ss: f64 = r.iter().map(|v| v * v).sum();
    let mut lambda = 1e-3;

    'outer: while used + n < allowance {
        let columns: Vec<Option<Vec<f64>>> = (0..n)
            .into_par_iter()
            .map(|k| {
                let h = if u[k] + JAC_STEP <= 1.0 { JAC_STEP } else { -JAC_STEP };
                let mut v = u.clone();
                v[k] += h;
                f.residuals(&space.to_x(&v))
                    .map(|(_, rk)| rk.iter().zip(&r).map(|(a, b)| (a - b) / h).collect())
            })
            .collect();
        used += n;
        let Some(jac) = columns.into_iter().collect::<Option<Vec<Vec<f64>>>>() else { break };
        let mut a = DMatrix::<f64>::zeros(n, n);
        let mut g = DVector::<f64>::zeros(n);
        for p in 0..n {
            g[p] = jac[p].iter().zip(&r).map(|(x, y)| x * y).sum();
            for q in p..n {
                let v: f64 = jac[p].iter().zip(&jac[q]).map(|(x, y)| x * y).sum();
                a[(p, q)] = v;
                a[(q, p)] = v;
            }
        }
        let free: Vec<usize> = (0..n)
            .filter(|&k| !((u[k] <= 0.0 && g[k] > 0.0) || (u[k] >= 1.0 && g[k] < 0.0)))
            .collect();
        if free.is_empty() || free.iter().map(|&k| g[k] * g[k]).sum::<f64>() < 1e-30 {
            break;
        }
        loop {
            if used >= allowance || lambda > 1e12 {
                break 'outer;
            }
            let m = free.len();
            let mut lhs = DMatrix::<f64>::from_fn(m, m, |p, q| a[(free[p], free[q])]);
            for p in 0..m {
                lhs[(p, p)] += lambda * (lhs[(p, p)] + 1e-12);
            }
            let rhs = DVector::<f64>::from_fn(m, |p, _| -g[free[p]]);
            let Some(step) = lhs.cholesky().map(|c| c.solve(&rhs)) else {
                lambda *= 4.0;
                continue;
            };
            let mut trial = u.clone();
            for (p, &k) in free.iter().enumerate() {
                trial[k] = (trial[k] + step[p]).clamp(0.0, 1.0);
            }
            used += 1;
            let xt = space.to_x(&trial);
            match f.residuals(&xt) {
                Some((vt, rt)) => {
                    let sst: f64 = rt.iter().map(|v| v * v).sum();
                    if vt < best_f {
                        best_f = vt;
                        best_x = xt;
                    }
                    if sst < ss {
                        let gain = ss - sst;
                        u = trial;
                        r = rt;
                        ss = sst;
                        lambda = (lambda / 3.0).max(1e-12);
                        if gain <= 1e-14 * ss.max(1e-300) {
                            break 'outer;
                        }
                        break;
                    }
                    lambda *= 4.0;
                }
                None => lambda *= 4.0,
            }
        }
    }
    *counter += used;
    (best_x, best_f)
}

const JAC_STEP: f64 = 1e-7;

/// Projected quasi-Newton descent with central-difference gradients, in
/// coordinates scaled to the unit box.
fn quasi_newton<F>(
    f: &F,
    bounds: &Bounds,
    active: &[usize],
    x: Vec<f64>,
    fx: f64,
    allowance: usize,
    counter: &mut usize,
) -> (Vec<f64>, f64)
where
    F: Objective + ?Sized,
{
    let n = active.len();
    let to_x = |u: &[f64]| -> Vec<f64> {
        let mut out = x.clone();
        for (k, &j) in active.iter().enumerate() {
            out[j] = bounds.lo[j] + u[k].clamp(0.0, 1.0) * bounds.width(j);
        }
        out
    };
    let mut u: Vec<f64> = active.iter().map(|&j| (x[j] - bounds.lo[j]) / bounds.width(j)).collect();
    let mut fu = fx;
    let mut used = 0usize;
    let budget = allowance;

    let gradient = |u: &[f64], used: &mut usize| -> Option<Vec<f64>> {
        if *used + 2 * n > budget {
            return None;
        }
        let points: Vec<Vec<f64>> = (0..n)
            .flat_map(|k| {
                [FD_STEP, -FD_STEP].map(|h| {
                    let mut v = u.to_vec();
                    v[k] = (v[k] + h).clamp(0.0, 1.0);
                    v
                })
            })
            .collect();
        let values = eval_all(f, &points.iter().map(|v| to_x(v)).collect::<Vec<_>>());
        *used += points.len();
        let g: Vec<f64> = (0..n)
            .map(|k| {
                let span = points[2 * k][k] - points[2 * k + 1][k];
                (values[2 * k] - values[2 * k + 1]) / span
            })
            .collect();
        g.iter().all(|v| v.is_finite()).then_some(g)
    };

    let Some(mut g) = gradient(&u, &mut used) else {
        *counter += used;
        return (x, fx);
    };
    let mut h = identity(n);
    while used < budget {
        // free variables: not pinned at a bound by the gradient
        let free: Vec<bool> = (0..n)
            .map(|k| !((u[k] <= 0.0 && g[k] > 0.0) || (u[k] >= 1.0 && g[k] < 0.0)))
            .collect();
        let pg: f64 = (0..n).filter(|&k| free[k]).map(|k| g[k] * g[k]).sum::<f64>().sqrt();
        if pg < 1e-10 {
            break;
        }
        let mut d: Vec<f64> = (0..n)
            .map(|a| if free[a] { -(0..n).filter(|&b| free[b]).map(|b| h[a][b] * g[b]).sum::<f64>() } else { 0.0 })
            .collect();
        let mut slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            h = identity(n);
            d = (0..n).map(|k| if free[k] { -g[k] } else { 0.0 }).collect();
            slope = -pg * pg;
        }
        // keep the first trial step inside a modest trust region
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut t = if norm > MAX_STEP { MAX_STEP / norm } else { 1.0 };
        let mut accepted = None;
        while used < budget && t > 1e-12 {
            let trial: Vec<f64> = u.iter().zip(&d).map(|(a, b)| (a + t * b).clamp(0.0, 1.0)).collect();
            let ft = sanitize(f.value(&to_x(&trial)));
            used += 1;
            if ft <= fu + 1e-4 * t * slope {
                accepted = Some((trial, ft));
                break;
            }
            t *= 0.3;
        }
        let Some((next, fnext)) = accepted else { break };
        let Some(gnext) = gradient(&next, &mut used) else {
            u = next;
            fu = fnext;
            break;
        };
        let s_vec: Vec<f64> = next.iter().zip(&u).map(|(a, b)| a - b).collect();
        let y_vec: Vec<f64> = gnext.iter().zip(&g).map(|(a, b)| a - b).collect();
        bfgs_update(&mut h, &s_vec, &y_vec);
        let gain = fu - fnext;
        u = next;
        fu = fnext;
        g = gnext;
        if gain <= 1e-14 * fu.abs().max(1e-300) {
            break;
        }
    }
    *counter += used;
    (to_x(&u), fu)
}

const FD_STEP: f64 = 1e-6;
const MAX_STEP: f64 = 0.2;

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

/// Inverse-Hessian BFGS update; skipped without positive curvature.
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64]) {
    let sy: f64 = s.iter().zip(y).map(|(a, b)| a * b).sum();
    if !(sy > 1e-16) {
        return;
    }
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i][j] * y[j]).sum()).collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    for i in 0..n {
        for j in 0..n {
            h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> OptimizerSettings {
        OptimizerSettings {
            random_search: RandomSearchSettings { draws: 200, keep: 10 },
            evolution: EvolutionSettings { generations: 40, population_factor: 10, ..Default::default() },
            annealing: AnnealingSettings { steps: 1500, local_evaluations: 300, ..Default::default() },
        }
    }

    fn rastrigin(x: &[f64]) -> f64 {
        10.0 * x.len() as f64 + x.iter().map(|v| v * v - 10.0 * (2.0 * PI * v).cos()).sum::<f64>()
    }

    #[test]
    fn finds_shifted_quadratic_minimum() {
        let target = [0.3, -1.2, 2.5];
        let f = |x: &[f64]| x.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let b = Bounds::new(vec![-5.0; 3], vec![5.0; 3]).unwrap();
        let opt = minimize(&f, &b, &quick(), 7);
        assert!(opt.loss < 1e-6, "loss {}", opt.loss);
        for (x, t) in opt.x.iter().zip(target) {
            assert!((x - t).abs() < 1e-3);
        }
    }

    #[test]
    fn escapes_local_minima() {
        let b = Bounds::new(vec![-5.12; 2], vec![5.12; 2]).unwrap();
        let opt = minimize(&rastrigin, &b, &quick(), 3);
        // the nearest local minimum sits at loss ≈ 1
        assert!(opt.loss < 1e-4, "loss {}", opt.loss);
    }

    #[test]
    fn deterministic_for_seed() {
        let b = Bounds::new(vec![-5.12; 3], vec![5.12; 3]).unwrap();
        let a = minimize(&rastrigin, &b, &quick(), 11);
        let c = minimize(&rastrigin, &b, &quick(), 11);
        assert_eq!(a, c);
    }

    #[test]
    fn stages_never_worsen_and_count_evaluations() {
        let b = Bounds::new(vec![-5.12; 3], vec![5.12; 3]).unwrap();
        let cfg = quick();
        let opt = minimize(&rastrigin, &b, &cfg, 5);
        let losses: Vec<f64> = opt.stages.iter().map(|s| s.best_loss).collect();
        assert!(losses.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(opt.stages[0].evaluations, 200);
        assert!(opt.stages[2].evaluations >= 1500);
        assert_eq!(opt.evaluations, opt.stages.iter().map(|s| s.evaluations).sum::<usize>());
        for s in &opt.stages {
            assert!(s.trace.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn pinned_dimensions_stay_fixed() {
        let f = |x: &[f64]| (x[0] - 1.0).powi(2) + x[1];
        let b = Bounds::new(vec![-2.0, 0.25], vec![2.0, 0.25]).unwrap();
        let opt = minimize(&f, &b, &quick(), 1);
        assert_eq!(opt.x[1], 0.25);
        assert!((opt.x[0] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn wrapping_stays_in_bounds() {
        let b = Bounds::new(vec![-1.0], vec![3.0]).unwrap();
        for v in [-1e8, -9.5, -1.0, 0.0, 2.999, 3.0, 7.2, 1e8] {
            let w = wrap(&b, 0, v);
            assert!((-1.0..=3.0).contains(&w), "{v} -> {w}");
        }
    }

    #[test]
    fn visiting_distribution_is_heavy_tailed() {
        let v = Visiting::new(2.62);
        let mut rng = stage_rng(0, 0);
        let mut draws: Vec<f64> = (0..20000).map(|_| v.draw(&mut rng, 0.1).abs()).collect();
        assert!(draws.iter().all(|d| d.is_finite()));
        draws.sort_by(|a, b| a.total_cmp(b));
        let median = draws[draws.len() / 2];
        // a Gaussian has no mass this far out
        let far = draws.iter().filter(|&&d| d > 100.0 * median).count();
        assert!(far > draws.len() / 20, "{far}");
        // hot chains visit the whole box
        let hot = v.draw(&mut rng, 5230.0).abs();
        assert!(hot > 1e3);
    }

    #[test]
    fn rejects_bad_settings() {
        let mut s = OptimizerSettings::default();
        s.annealing.visit = 3.5;
        assert!(s.validate().is_err());
        let mut s = OptimizerSettings::default();
        s.random_search.keep = 0;
        assert!(s.validate().is_err());
        assert!(Bounds::new(vec![1.0], vec![0.0]).is_err());
    }
}
