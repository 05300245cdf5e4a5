use super::{hermitize, CMatrix, CVector, FockConfig, C64, HERMITIAN_TOL, PSD_TOL};
use crate::error::{Error, Result};

/// A pure state on the truncated product basis.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    cutoffs: Vec<usize>,
    amplitudes: CVector,
}

impl StateVector {
    pub fn new(cutoffs: Vec<usize>, amplitudes: CVector) -> Result<Self> {
        let dim = flat_dim(&cutoffs);
        if amplitudes.len() != dim {
            return Err(Error::Dimension(format!(
                "{} amplitudes for a space of dimension {dim}",
                amplitudes.len()
            )));
        }
        Ok(Self {
            cutoffs,
            amplitudes,
        })
    }

    /// The product number state `|n_0, n_1, ...⟩`.
    pub fn basis(cutoffs: &[usize], occupations: &[usize]) -> Result<Self> {
        if cutoffs.len() != occupations.len() {
            return Err(Error::Dimension("one occupation per mode required".into()));
        }
        if occupations.iter().zip(cutoffs).any(|(n, c)| n > c) {
            return Err(Error::Dimension(format!(
                "occupation {occupations:?} beyond cutoffs {cutoffs:?}"
            )));
        }
        let mut amplitudes = CVector::zeros(flat_dim(cutoffs));
        amplitudes[flat_index(cutoffs, occupations)] = C64::new(1.0, 0.0);
        Ok(Self {
            cutoffs: cutoffs.to_vec(),
            amplitudes,
        })
    }

    pub fn vacuum(cutoffs: &[usize]) -> Self {
        Self::basis(cutoffs, &vec![0; cutoffs.len()]).expect("vacuum is always in range")
    }

    pub fn cutoffs(&self) -> &[usize] {
        &self.cutoffs
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    pub(crate) fn amplitudes_mut(&mut self) -> &mut CVector {
        &mut self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|z| z.norm_sqr()).sum()
    }
}

/// A (possibly reduced) mixed state on a truncated Fock basis.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    cutoffs: Vec<usize>,
    elements: CMatrix,
}

impl DensityMatrix {
    pub fn new(cutoffs: Vec<usize>, elements: CMatrix) -> Result<Self> {
        let dim = flat_dim(&cutoffs);
        if elements.nrows() != dim || elements.ncols() != dim {
            return Err(Error::Dimension(format!(
                "{}x{} matrix for a space of dimension {dim}",
                elements.nrows(),
                elements.ncols()
            )));
        }
        Ok(Self { cutoffs, elements })
    }

    pub fn vacuum(cutoffs: &[usize]) -> Self {
        Self::from_pure(&StateVector::vacuum(cutoffs))
    }

    pub fn from_pure(psi: &StateVector) -> Self {
        let a = psi.amplitudes();
        Self {
            cutoffs: psi.cutoffs().to_vec(),
            elements: a * a.adjoint(),
        }
    }

    /// Diagonal state with the given flat-index populations.
    pub fn from_diagonal(cutoffs: &[usize], populations: &[f64]) -> Result<Self> {
        let dim = flat_dim(cutoffs);
        if populations.len() != dim {
            return Err(Error::Dimension(format!(
                "{} populations for a space of dimension {dim}",
                populations.len()
            )));
        }
        let diag = CVector::from_iterator(dim, populations.iter().map(|&p| C64::new(p, 0.0)));
        Ok(Self {
            cutoffs: cutoffs.to_vec(),
            elements: CMatrix::from_diagonal(&diag),
        })
    }

    /// `Σ_k w_k |ψ_k⟩⟨ψ_k|`.
    pub fn from_ensemble<'a, I>(cutoffs: &[usize], members: I) -> Result<Self>
    where
        I: IntoIterator<Item = (f64, &'a StateVector)>,
    {
        let dim = flat_dim(cutoffs);
        let mut elements = CMatrix::zeros(dim, dim);
        for (w, psi) in members {
            if psi.cutoffs() != cutoffs {
                return Err(Error::Dimension("ensemble member on a different space".into()));
            }
            let a = psi.amplitudes();
            // rank-one update, lower triangle then mirrored
            for j in 0..dim {
                let aj = a[j].conj() * w;
                if aj == C64::new(0.0, 0.0) {
                    continue;
                }
                for i in j..dim {
                    elements[(i, j)] += a[i] * aj;
                }
            }
        }
        for j in 0..dim {
            elements[(j, j)].im = 0.0;
            for i in (j + 1)..dim {
                elements[(j, i)] = elements[(i, j)].conj();
            }
        }
        Ok(Self {
            cutoffs: cutoffs.to_vec(),
            elements,
        })
    }

    pub fn cutoffs(&self) -> &[usize] {
        &self.cutoffs
    }

    pub fn n_modes(&self) -> usize {
        self.cutoffs.len()
    }

    pub fn dim(&self) -> usize {
        self.elements.nrows()
    }

    pub fn elements(&self) -> &CMatrix {
        &self.elements
    }

    pub fn into_elements(self) -> CMatrix {
        self.elements
    }

    pub fn trace(&self) -> f64 {
        self.elements.diagonal().iter().map(|z| z.re).sum()
    }

    /// Largest absolute deviation from Hermiticity.
    pub fn hermiticity_error(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.elements[(i, j)] - self.elements[(j, i)].conj()).norm());
            }
        }
        worst
    }

    /// Eigenvalues of the Hermitian part, ascending. Not clamped.
    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eigenvalues(&self.elements)
    }

    /// Checks Hermiticity, unit trace within `leak_tol` and positivity.
    pub fn check(&self, leak_tol: f64) -> Result<()> {
        let herm = self.hermiticity_error();
        if herm > HERMITIAN_TOL {
            return Err(Error::InvalidState(format!("not Hermitian (deviation {herm:.2e})")));
        }
        let tr = self.trace();
        if (tr - 1.0).abs() > leak_tol {
            return Err(Error::InvalidState(format!("trace {tr:.12} differs from 1")));
        }
        let min = self.eigenvalues().first().copied().unwrap_or(0.0);
        if min < PSD_TOL {
            return Err(Error::InvalidState(format!("negative eigenvalue {min:.3e}")));
        }
        Ok(())
    }

    /// Joint photon-number distribution, flat-indexed like the basis.
    pub fn photon_distribution(&self) -> Vec<f64> {
        self.elements.diagonal().iter().map(|z| z.re).collect()
    }

    /// `Tr[ρ O]` for an operator on the full space.
    pub fn expectation(&self, op: &CMatrix) -> C64 {
        // Tr[ρ O] = Σ_ij ρ_ij O_ji
        self.elements
            .iter()
            .zip(op.transpose().iter())
            .map(|(r, o)| r * o)
            .sum()
    }

    /// Mean photon number in `mode`.
    pub fn mean_photons(&self, mode: usize) -> Result<f64> {
        self.mode_moment(mode, |n| n)
    }

    /// `Σ_n f(n) p_mode(n)` over the marginal photon distribution of `mode`.
    pub(crate) fn mode_moment(&self, mode: usize, f: impl Fn(f64) -> f64) -> Result<f64> {
        if mode >= self.n_modes() {
            return Err(Error::Dimension(format!("mode {mode} of a {}-mode state", self.n_modes())));
        }
        let diag = self.photon_distribution();
        let mut acc = 0.0;
        for (idx, p) in diag.iter().enumerate() {
            let occ = unflatten(&self.cutoffs, idx);
            acc += f(occ[mode] as f64) * p;
        }
        Ok(acc)
    }

    /// `self ⊗ other`.
    pub fn tensor(&self, other: &DensityMatrix) -> DensityMatrix {
        let mut cutoffs = self.cutoffs.clone();
        cutoffs.extend_from_slice(&other.cutoffs);
        DensityMatrix {
            cutoffs,
            elements: self.elements.kronecker(&other.elements),
        }
    }
}

/// Geometric photon-number distribution of a thermal state, renormalized over
/// `0..=n_max`.
pub fn thermal_distribution(n_th: f64, cfg: &FockConfig) -> Result<Vec<f64>> {
    if !(n_th >= 0.0) || !n_th.is_finite() {
        return Err(Error::Parameter(format!("thermal occupation must be >= 0, got {n_th}")));
    }
    let d = cfg.local_dim();
    if n_th == 0.0 {
        let mut p = vec![0.0; d];
        p[0] = 1.0;
        return Ok(p);
    }
    let ratio = n_th / (1.0 + n_th);
    let tail = ratio.powi(d as i32);
    if tail > cfg.leak_tol {
        return Err(Error::CutoffTooSmall {
            tail,
            tol: cfg.leak_tol,
        });
    }
    let mut p: Vec<f64> = (0..d)
        .map(|n| ratio.powi(n as i32) / (1.0 + n_th))
        .collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    Ok(p)
}

pub fn thermal_state(n_th: f64, cfg: &FockConfig) -> Result<DensityMatrix> {
    let p = thermal_distribution(n_th, cfg)?;
    DensityMatrix::from_diagonal(&[cfg.n_max], &p)
}

/// Reduced state of mode `keep` of a two-mode state.
pub fn partial_trace(rho: &DensityMatrix, keep: usize) -> Result<DensityMatrix> {
    let (c0, c1) = two_mode_cutoffs(rho)?;
    let (d0, d1) = (c0 + 1, c1 + 1);
    let m = rho.elements();
    let reduced = match keep {
        0 => CMatrix::from_fn(d0, d0, |i, j| (0..d1).map(|n| m[(i * d1 + n, j * d1 + n)]).sum()),
        1 => CMatrix::from_fn(d1, d1, |i, j| (0..d0).map(|n| m[(n * d1 + i, n * d1 + j)]).sum()),
        _ => return Err(Error::Dimension(format!("mode {keep} of a two-mode state"))),
    };
    let cutoff = if keep == 0 { c0 } else { c1 };
    let mut reduced = reduced;
    hermitize(&mut reduced);
    DensityMatrix::new(vec![cutoff], reduced)
}

/// Partial transpose of a two-mode state with respect to `mode`.
pub fn partial_transpose(rho: &DensityMatrix, mode: usize) -> Result<CMatrix> {
    let (_, c1) = two_mode_cutoffs(rho)?;
    let d1 = c1 + 1;
    let m = rho.elements();
    let n = rho.dim();
    let out = match mode {
        1 => CMatrix::from_fn(n, n, |row, col| {
            let (i0, i1) = (row / d1, row % d1);
            let (j0, j1) = (col / d1, col % d1);
            m[(i0 * d1 + j1, j0 * d1 + i1)]
        }),
        0 => CMatrix::from_fn(n, n, |row, col| {
            let (i0, i1) = (row / d1, row % d1);
            let (j0, j1) = (col / d1, col % d1);
            m[(j0 * d1 + i1, i0 * d1 + j1)]
        }),
        _ => return Err(Error::Dimension(format!("mode {mode} of a two-mode state"))),
    };
    Ok(out)
}

/// Sum of absolute eigenvalues of a Hermitian matrix.
pub fn trace_norm(m: &CMatrix) -> f64 {
    hermitian_eigenvalues(m).iter().map(|x| x.abs()).sum()
}

/// Two-mode squeezed vacuum `Σ_n (−tanh r)^n / cosh r |n, n⟩` truncated at `cutoff`.
pub fn two_mode_squeezed_vacuum(r: f64, cutoff: usize) -> Result<DensityMatrix> {
    if !(r >= 0.0) {
        return Err(Error::Parameter(format!("squeezing must be >= 0, got {r}")));
    }
    let cut = [cutoff, cutoff];
    let mut amps = CVector::zeros(flat_dim(&cut));
    for n in 0..=cutoff {
        amps[flat_index(&cut, &[n, n])] = C64::new((-r.tanh()).powi(n as i32) / r.cosh(), 0.0);
    }
    Ok(DensityMatrix::from_pure(&StateVector::new(cut.to_vec(), amps)?))
}

pub(crate) fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let mut h = m.clone();
    hermitize(&mut h);
    let mut ev: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub(crate) fn flat_dim(cutoffs: &[usize]) -> usize {
    cutoffs.iter().map(|c| c + 1).product()
}

pub(crate) fn flat_index(cutoffs: &[usize], occupations: &[usize]) -> usize {
    cutoffs
        .iter()
        .zip(occupations)
        .fold(0, |acc, (c, n)| acc * (c + 1) + n)
}

pub(crate) fn unflatten(cutoffs: &[usize], mut idx: usize) -> Vec<usize> {
    let mut occ = vec![0; cutoffs.len()];
    for (slot, c) in occ.iter_mut().zip(cutoffs).rev() {
        *slot = idx % (c + 1);
        idx /= c + 1;
    }
    occ
}

fn two_mode_cutoffs(rho: &DensityMatrix) -> Result<(usize, usize)> {
    match rho.cutoffs() {
        [c0, c1] => Ok((*c0, *c1)),
        other => Err(Error::Dimension(format!(
            "two-mode state required, got {} modes",
            other.len()
        ))),
    }
}
