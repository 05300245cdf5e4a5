use super::state::{flat_dim, DensityMatrix, StateVector};
use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{annihilation, hermitize, number, CMatrix, CVector, FockConfig, C64};
use crate::error::{Error, Result};

/// Largest squeezing magnitude the default working space represents faithfully.
pub const MAX_SQUEEZING: f64 = 1.5;

/// An operator acting on one or two modes of a truncated product space.
///
/// Single-mode operators are stored as a dense `(n_max+1)²` block. The
/// beamsplitter is stored per total-photon-number sector, which it conserves.
#[derive(Debug, Clone)]
pub struct ModeOperator {
    cutoff: usize,
    leak_tol: f64,
    kind: Kind,
}

#[derive(Debug, Clone)]
enum Kind {
    Local { mode: usize, matrix: CMatrix },
    Pair { modes: (usize, usize), sectors: Vec<Sector> },
}

/// One photon-number sector `n_i + n_j = N`, restricted to the truncated box.
#[derive(Debug, Clone)]
struct Sector {
    /// `(n_i, n_j)` pairs in sector order.
    states: Vec<(usize, usize)>,
    matrix: CMatrix,
}

impl ModeOperator {
    /// A dense single-mode operator acting on `mode`.
    pub fn local(mode: usize, matrix: CMatrix, cfg: &FockConfig) -> Result<Self> {
        let d = cfg.local_dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::Dimension(format!(
                "{}x{} single-mode matrix for cutoff {}",
                matrix.nrows(),
                matrix.ncols(),
                cfg.n_max
            )));
        }
        Ok(Self {
            cutoff: cfg.n_max,
            leak_tol: cfg.leak_tol,
            kind: Kind::Local { mode, matrix },
        })
    }

    pub fn identity(cfg: &FockConfig) -> Self {
        let d = cfg.local_dim();
        Self::local(0, CMatrix::identity(d, d), cfg).expect("identity has matching size")
    }

    pub fn annihilation(mode: usize, cfg: &FockConfig) -> Self {
        Self::local(mode, annihilation(cfg.n_max), cfg).expect("ladder has matching size")
    }

    pub fn creation(mode: usize, cfg: &FockConfig) -> Self {
        Self::local(mode, annihilation(cfg.n_max).adjoint(), cfg).expect("ladder has matching size")
    }

    pub fn number(mode: usize, cfg: &FockConfig) -> Self {
        Self::local(mode, number(cfg.n_max), cfg).expect("number has matching size")
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    /// The dense single-mode block, if this is a single-mode operator.
    pub fn local_matrix(&self) -> Option<&CMatrix> {
        match &self.kind {
            Kind::Local { matrix, .. } => Some(matrix),
            Kind::Pair { .. } => None,
        }
    }

    /// Dense matrix on an `n_modes`-mode space with uniform cutoff.
    pub fn to_dense(&self, n_modes: usize) -> Result<CMatrix> {
        let d = self.cutoff + 1;
        let dim = flat_dim(&vec![self.cutoff; n_modes]);
        let mut out = CMatrix::zeros(dim, dim);
        let mut col = CMatrix::zeros(dim, 1);
        for j in 0..dim {
            col.fill(C64::new(0.0, 0.0));
            col[(j, 0)] = C64::new(1.0, 0.0);
            let image = self.left_mul(&col, &vec![self.cutoff; n_modes])?;
            out.set_column(j, &image.column(0));
        }
        debug_assert_eq!(d.pow(n_modes as u32), dim);
        Ok(out)
    }

    fn check_modes(&self, cutoffs: &[usize]) -> Result<()> {
        if cutoffs.iter().any(|&c| c != self.cutoff) {
            return Err(Error::Dimension(format!(
                "operator cutoff {} applied to space with cutoffs {cutoffs:?}",
                self.cutoff
            )));
        }
        let highest = match &self.kind {
            Kind::Local { mode, .. } => *mode,
            Kind::Pair { modes, .. } => {
                if cutoffs.len() != 2 {
                    return Err(Error::Dimension("two-mode operator needs a two-mode space".into()));
                }
                modes.0.max(modes.1)
            }
        };
        if highest >= cutoffs.len() {
            return Err(Error::Dimension(format!(
                "operator on mode {highest} applied to a {}-mode space",
                cutoffs.len()
            )));
        }
        Ok(())
    }

    /// `O · M` where the rows of `M` are indexed by the product basis.
    fn left_mul(&self, m: &CMatrix, cutoffs: &[usize]) -> Result<CMatrix> {
        self.check_modes(cutoffs)?;
        let dim = m.nrows();
        let ncols = m.ncols();
        let d = self.cutoff + 1;
        let mut out = CMatrix::zeros(dim, ncols);
        match &self.kind {
            Kind::Local { mode, matrix } => {
                // stride of `mode` in the flat index, and size of the block it repeats over
                let inner: usize = cutoffs[mode + 1..].iter().map(|c| c + 1).product();
                let outer = dim / (d * inner);
                for c in 0..ncols {
                    let src = m.column(c);
                    let mut dst = out.column_mut(c);
                    for o in 0..outer {
                        let base = o * d * inner;
                        for row in 0..d {
                            for k in 0..d {
                                let u = matrix[(row, k)];
                                if u.re == 0.0 && u.im == 0.0 {
                                    continue;
                                }
                                let r0 = base + row * inner;
                                let k0 = base + k * inner;
                                for t in 0..inner {
                                    dst[r0 + t] += u * src[k0 + t];
                                }
                            }
                        }
                    }
                }
            }
            Kind::Pair { modes, sectors } => {
                let index = |ni: usize, nj: usize| -> usize {
                    if *modes == (0, 1) {
                        ni * d + nj
                    } else {
                        nj * d + ni
                    }
                };
                for sector in sectors {
                    let idx: Vec<usize> = sector.states.iter().map(|&(a, b)| index(a, b)).collect();
                    for c in 0..ncols {
                        for (r, &ri) in idx.iter().enumerate() {
                            let mut acc = C64::new(0.0, 0.0);
                            for (k, &ki) in idx.iter().enumerate() {
                                acc += sector.matrix[(r, k)] * m[(ki, c)];
                            }
                            out[(ri, c)] = acc;
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Displacement `D(α) = exp(α a† − α* a)` on `mode`.
pub fn displacement(alpha: C64, mode: usize, cfg: &FockConfig) -> Result<ModeOperator> {
    let limit = cfg.n_work as f64 / 4.0;
    if alpha.norm_sqr() > limit {
        return Err(Error::Overflow {
            quantity: "|alpha|^2",
            value: alpha.norm_sqr(),
            limit,
        });
    }
    // gauged generator is −i|α|S with S_{k,k+1} = √(k+1)
    let spec = spectrum(Generator::Displacement, cfg.n_work);
    let d = cfg.local_dim();
    let block = spec.exp_block(-alpha.norm(), 0, 0, d, alpha.arg() + FRAC_PI_2);
    projected(block, mode, cfg, "displacement")
}

/// Single-mode squeezer `S(ξ) = exp(½(ξ* a² − ξ a†²))` with `ξ = r e^{iφ}`.
pub fn squeezer(r: f64, phi: f64, mode: usize, cfg: &FockConfig) -> Result<ModeOperator> {
    if !(r >= 0.0) {
        return Err(Error::Parameter(format!("squeezing magnitude must be >= 0, got {r}")));
    }
    if r > MAX_SQUEEZING {
        return Err(Error::Overflow {
            quantity: "squeezing r",
            value: r,
            limit: MAX_SQUEEZING,
        });
    }
    // gauged generator is i r S with S_{k,k+2} = ½√((k+1)(k+2))
    let spec = spectrum(Generator::Squeezer, cfg.n_work);
    let d = cfg.local_dim();
    let block = spec.exp_block(r, 0, 0, d, phi / 2.0 + FRAC_PI_4);
    projected(block, mode, cfg, "squeezer")
}

fn projected(block: CMatrix, mode: usize, cfg: &FockConfig, context: &'static str) -> Result<ModeOperator> {
    let kept: f64 = block.column(0).iter().map(|z| z.norm_sqr()).sum();
    let leak = (1.0 - kept).abs();
    if leak > cfg.leak_tol {
        return Err(Error::Leakage {
            leak,
            tol: cfg.leak_tol,
            context,
        });
    }
    ModeOperator::local(mode, block, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Generator {
    Displacement,
    Squeezer,
    /// Beamsplitter on the sector of this many photons.
    Sector,
}

/// Eigenbasis of the real symmetric matrix a gauged generator is proportional to.
struct Spectrum {
    vectors: DMatrix<f64>,
    values: DVector<f64>,
}

impl Spectrum {
    fn new(s: DMatrix<f64>) -> Self {
        let eig = SymmetricEigen::new(s);
        Self {
            vectors: eig.eigenvectors,
            values: eig.eigenvalues,
        }
    }

    /// Block `[r0.., c0..]` of size `len` of `exp(i t S)`, with element `(m, n)`
    /// multiplied by `e^{i (m−n) phase}`.
    fn exp_block(&self, t: f64, r0: usize, c0: usize, len: usize, phase: f64) -> CMatrix {
        let dim = self.values.len();
        let weighted = CMatrix::from_fn(len, dim, |m, j| {
            C64::from_polar(self.vectors[(r0 + m, j)], t * self.values[j])
        });
        let right = self.vectors.rows(c0, len).transpose().map(|v| C64::new(v, 0.0));
        let mut out = weighted * right;
        for n in 0..len {
            for m in 0..len {
                out[(m, n)] *= C64::from_polar(1.0, (m as f64 - n as f64 + r0 as f64 - c0 as f64) * phase);
            }
        }
        out
    }
}

type SpectrumCache = Mutex<HashMap<(Generator, usize), Arc<Spectrum>>>;

fn spectrum(generator: Generator, size: usize) -> Arc<Spectrum> {
    static CACHE: OnceLock<SpectrumCache> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(s) = cache.lock().expect("spectrum cache").get(&(generator, size)) {
        return s.clone();
    }
    let s = match generator {
        Generator::Displacement => DMatrix::from_fn(size + 1, size + 1, |i, j| {
            if i.abs_diff(j) == 1 { (i.max(j) as f64).sqrt() } else { 0.0 }
        }),
        Generator::Squeezer => DMatrix::from_fn(size + 1, size + 1, |i, j| {
            if i.abs_diff(j) == 2 {
                let k = i.min(j) as f64;
                0.5 * ((k + 1.0) * (k + 2.0)).sqrt()
            } else {
                0.0
            }
        }),
        Generator::Sector => DMatrix::from_fn(size + 1, size + 1, |i, j| {
            if i.abs_diff(j) == 1 {
                let k = i.min(j);
                (((k + 1) * (size - k)) as f64).sqrt()
            } else {
                0.0
            }
        }),
    };
    let s = Arc::new(Spectrum::new(s));
    cache.lock().expect("spectrum cache").insert((generator, size), s.clone());
    s
}

/// Beamsplitter `exp[θ(e^{−iφ} a_i a_j† − e^{iφ} a_i† a_j)]` on modes `(i, j)`.
///
/// `|T| = cos θ`. Built exactly per photon-number sector and restricted to the
/// truncated box; sectors above the cutoff lose their out-of-box amplitude.
pub fn beamsplitter(
    theta: f64,
    phi: f64,
    modes: (usize, usize),
    cfg: &FockConfig,
) -> Result<ModeOperator> {
    if modes.0 == modes.1 || modes.0 > 1 || modes.1 > 1 {
        return Err(Error::Dimension(format!(
            "beamsplitter needs two distinct modes of a two-mode space, got {modes:?}"
        )));
    }
    let c = cfg.n_max;
    let mut sectors = Vec::with_capacity(2 * c + 1);
    for total in 0..=2 * c {
        // basis |k, N−k⟩, k photons in mode i; gauged generator is iθS
        let lo = total.saturating_sub(c);
        let hi = total.min(c);
        let states: Vec<(usize, usize)> = (lo..=hi).map(|k| (k, total - k)).collect();
        let matrix = spectrum(Generator::Sector, total).exp_block(theta, lo, lo, hi - lo + 1, phi + FRAC_PI_2);
        sectors.push(Sector { states, matrix });
    }
    Ok(ModeOperator {
        cutoff: c,
        leak_tol: cfg.leak_tol,
        kind: Kind::Pair { modes, sectors },
    })
}

/// `U ρ U†`, failing if more than `leak_tol` of the trace leaves the truncated space.
pub fn apply(op: &ModeOperator, rho: &DensityMatrix) -> Result<DensityMatrix> {
    let cutoffs = rho.cutoffs();
    let half = op.left_mul(rho.elements(), cutoffs)?;
    // ρ is Hermitian, so U (Uρ)† = U ρ U†
    let mut out = op.left_mul(&half.adjoint(), cutoffs)?;
    hermitize(&mut out);
    let out = DensityMatrix::new(cutoffs.to_vec(), out)?;
    let lost = rho.trace() - out.trace();
    if lost > op.leak_tol {
        return Err(Error::Leakage {
            leak: lost,
            tol: op.leak_tol,
            context: "apply",
        });
    }
    Ok(out)
}

/// `U |ψ⟩` with the same leakage contract as [`apply`].
pub fn apply_ket(op: &ModeOperator, psi: &StateVector) -> Result<StateVector> {
    let out = evolve_ket(op, psi)?;
    let lost = psi.norm_sqr() - out.norm_sqr();
    if lost > op.leak_tol {
        return Err(Error::Leakage {
            leak: lost,
            tol: op.leak_tol,
            context: "apply_ket",
        });
    }
    Ok(out)
}

/// `op |ψ⟩` without the norm check, for callers that account leakage themselves.
pub(crate) fn evolve_ket(op: &ModeOperator, psi: &StateVector) -> Result<StateVector> {
    let col = CMatrix::from_column_slice(psi.amplitudes().len(), 1, psi.amplitudes().as_slice());
    let image = op.left_mul(&col, psi.cutoffs())?;
    let mut out = psi.clone();
    *out.amplitudes_mut() = CVector::from_column_slice(image.as_slice());
    Ok(out)
}
