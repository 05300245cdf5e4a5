//! Truncated Fock-space linear algebra for one- and two-mode bosonic states.
//!
//! Basis convention: a two-mode basis state `|n0⟩ ⊗ |n1⟩` sits at flat index
//! `n0 * (cutoff1 + 1) + n1`, i.e. mode 0 is the major (slow) index. Mode 0 is
//! the signal and mode 1 the herald wherever the detection model cares.

mod operator;
mod state;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use operator::{
    apply, apply_ket, beamsplitter, displacement, squeezer, ModeOperator, MAX_SQUEEZING,
};
pub(crate) use operator::evolve_ket;
pub use state::{
    partial_trace, partial_transpose, thermal_distribution, thermal_state, trace_norm,
    two_mode_squeezed_vacuum,
    DensityMatrix, StateVector,
};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Mode index of the signal harmonic in two-mode states.
pub const SIGNAL: usize = 0;
/// Mode index of the heralding harmonic in two-mode states.
pub const HERALD: usize = 1;

/// Hermiticity tolerance of a valid density matrix.
pub const HERMITIAN_TOL: f64 = 1e-10;
/// Smallest eigenvalue tolerated in a valid density matrix.
pub const PSD_TOL: f64 = -1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FockConfig {
    /// Photon-number cutoff per mode; the local dimension is `n_max + 1`.
    pub n_max: usize,
    /// Cutoff of the enlarged space single-mode unitaries are exponentiated on.
    pub n_work: usize,
    /// Largest acceptable trace leakage out of the truncated space.
    pub leak_tol: f64,
}

impl Default for FockConfig {
    fn default() -> Self {
        Self {
            n_max: 25,
            n_work: 40,
            leak_tol: 1e-6,
        }
    }
}

impl FockConfig {
    pub fn new(n_max: usize, n_work: usize, leak_tol: f64) -> Result<Self> {
        let cfg = Self {
            n_max,
            n_work,
            leak_tol,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_max < 2 {
            return Err(Error::Config(format!("n_max must be >= 2, got {}", self.n_max)));
        }
        if self.n_work < self.n_max {
            return Err(Error::Config(format!(
                "n_work ({}) must be >= n_max ({})",
                self.n_work, self.n_max
            )));
        }
        if !(self.leak_tol > 0.0) {
            return Err(Error::Config(format!("leak_tol must be > 0, got {}", self.leak_tol)));
        }
        Ok(())
    }

    /// Same working space and tolerance with a different cutoff.
    pub fn with_n_max(&self, n_max: usize) -> Self {
        Self {
            n_max,
            n_work: self.n_work.max(n_max),
            ..*self
        }
    }

    pub(crate) fn local_dim(&self) -> usize {
        self.n_max + 1
    }
}

/// Annihilation operator on a single mode with photon-number cutoff `cutoff`.
pub fn annihilation(cutoff: usize) -> CMatrix {
    let d = cutoff + 1;
    let mut a = CMatrix::zeros(d, d);
    for n in 1..d {
        a[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    a
}

/// Number operator on a single mode.
pub fn number(cutoff: usize) -> CMatrix {
    let d = cutoff + 1;
    CMatrix::from_diagonal(&CVector::from_iterator(
        d,
        (0..d).map(|n| C64::new(n as f64, 0.0)),
    ))
}

/// Kronecker product `a ⊗ b`, matching the flat-index convention of this module.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Largest element modulus.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub(crate) fn hermitize(m: &mut CMatrix) {
    let n = m.nrows();
    for i in 0..n {
        m[(i, i)].im = 0.0;
        for j in (i + 1)..n {
            let avg = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = avg;
            m[(j, i)] = avg.conj();
        }
    }
}
