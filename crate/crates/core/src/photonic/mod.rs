//! Kernel matrices as photonic hardware: `M = U·Σ·V` with `U` and `V`
//! programmed as rotation meshes and `Σ` as per-waveguide gain, plus the
//! time-multiplexed interference unit that applies `M` to a patch stream.

mod svd;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::reck::{
    extract_phases, perturb_phases, reconstruct_leading_columns, reconstruct_leading_rows,
    PhaseNoiseModel, PhaseSchedule, RealOrthogonal,
};

pub use svd::{MAX_SWEEPS as SVD_MAX_SWEEPS, OFF_DIAGONAL_TOLERANCE as SVD_TOLERANCE};

/// Max-abs reconstruction residual (relative to `max(1, max|M|)`) required
/// from [`factor_kernel`].
pub const FACTOR_RESIDUAL_TOLERANCE: f64 = 1e-9;

/// Rows are vectorized kernels (`d` of them), columns index patch elements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Matrix", into = "Matrix")]
pub struct KernelMatrix(Matrix);

impl KernelMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        if m.rows() == 0 || m.cols() == 0 {
            return Err(Error::InvalidParameter("kernel matrix must be at least 1x1".into()));
        }
        if !m.all_finite() {
            return Err(Error::InvalidParameter("kernel matrix has non-finite entries".into()));
        }
        Ok(Self(m))
    }

    pub fn rows(&self) -> usize {
        self.0.rows()
    }

    pub fn cols(&self) -> usize {
        self.0.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }
}

impl TryFrom<Matrix> for KernelMatrix {
    type Error = Error;

    fn try_from(m: Matrix) -> Result<Self> {
        KernelMatrix::new(m)
    }
}

impl From<KernelMatrix> for Matrix {
    fn from(k: KernelMatrix) -> Self {
        k.0
    }
}

/// Full singular value factorization with both orthogonal factors encoded
/// as rotation meshes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FactorsDoc", into = "FactorsDoc")]
pub struct KernelFactors {
    rows: usize,
    cols: usize,
    u: RealOrthogonal,
    sigma: Vec<f64>,
    v: RealOrthogonal,
    u_schedule: PhaseSchedule,
    v_schedule: PhaseSchedule,
}

impl KernelFactors {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn u(&self) -> &RealOrthogonal {
        &self.u
    }

    /// Singular values, non-increasing, `min(rows, cols)` of them.
    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn v(&self) -> &RealOrthogonal {
        &self.v
    }

    pub fn u_schedule(&self) -> &PhaseSchedule {
        &self.u_schedule
    }

    pub fn v_schedule(&self) -> &PhaseSchedule {
        &self.v_schedule
    }

    /// `U·Σ·V` from the stored orthogonal factors.
    pub fn product(&self) -> Matrix {
        let r = self.sigma.len();
        let u = self.u.matrix();
        let v = self.v.matrix();
        let us = Matrix::from_fn(self.rows, r, |i, k| u[(i, k)] * self.sigma[k]);
        let v_top = Matrix::from_fn(r, self.cols, |k, j| v[(k, j)]);
        us.matmul(&v_top).expect("shapes agree by construction")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Serialize, Deserialize)]
struct FactorsDoc {
    version: u32,
    rows: usize,
    cols: usize,
    sigma: Vec<f64>,
    u_schedule: PhaseSchedule,
    v_schedule: PhaseSchedule,
}

impl From<KernelFactors> for FactorsDoc {
    fn from(f: KernelFactors) -> Self {
        FactorsDoc {
            version: 1,
            rows: f.rows,
            cols: f.cols,
            sigma: f.sigma,
            u_schedule: f.u_schedule,
            v_schedule: f.v_schedule,
        }
    }
}

impl TryFrom<FactorsDoc> for KernelFactors {
    type Error = Error;

    fn try_from(doc: FactorsDoc) -> Result<Self> {
        if doc.version != 1 {
            return Err(Error::UnsupportedVersion { expected: 1, found: doc.version });
        }
        if doc.u_schedule.n() != doc.rows || doc.v_schedule.n() != doc.cols {
            return Err(Error::InvalidSchedule("mesh sizes do not match matrix dimensions".into()));
        }
        if doc.sigma.len() != doc.rows.min(doc.cols) {
            return Err(Error::DimensionMismatch {
                expected: doc.rows.min(doc.cols),
                found: doc.sigma.len(),
            });
        }
        if doc.sigma.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::InvalidParameter("singular values must be finite and >= 0".into()));
        }
        if doc.sigma.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidParameter("singular values must be non-increasing".into()));
        }
        let u = crate::reck::reconstruct_orthogonal(&doc.u_schedule);
        let v = crate::reck::reconstruct_orthogonal(&doc.v_schedule);
        Ok(KernelFactors {
            rows: doc.rows,
            cols: doc.cols,
            u,
            sigma: doc.sigma,
            v,
            u_schedule: doc.u_schedule,
            v_schedule: doc.v_schedule,
        })
    }
}

/// Per-port nonlinearity applied to the interference unit outputs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    Relu,
    Sigmoid,
    Tanh,
    #[default]
    Identity,
}

impl Nonlinearity {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Relu => x.max(0.0),
            Nonlinearity::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Nonlinearity::Tanh => x.tanh(),
            Nonlinearity::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation `x`.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Nonlinearity::Sigmoid => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 - s)
            }
            Nonlinearity::Tanh => 1.0 - x.tanh().powi(2),
            Nonlinearity::Identity => 1.0,
        }
    }
}

impl std::str::FromStr for Nonlinearity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Nonlinearity::Relu),
            "sigmoid" => Ok(Nonlinearity::Sigmoid),
            "tanh" => Ok(Nonlinearity::Tanh),
            "identity" => Ok(Nonlinearity::Identity),
            other => Err(Error::InvalidParameter(format!("unknown nonlinearity '{other}'"))),
        }
    }
}

/// Time-ordered sequence of equal-length vectors; position is the timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchStream {
    width: usize,
    data: Vec<f64>,
}

impl PatchStream {
    pub fn new(width: usize) -> Self {
        Self { width, data: Vec::new() }
    }

    pub fn with_capacity(width: usize, len: usize) -> Self {
        Self { width, data: Vec::with_capacity(width * len) }
    }

    /// Wraps `len` contiguous vectors of length `width`.
    pub fn from_flat(width: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || !data.len().is_multiple_of(width) {
            return Err(Error::DimensionMismatch { expected: width, found: data.len() });
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidParameter("patch stream has non-finite entries".into()));
        }
        Ok(Self { width, data })
    }

    pub fn from_vectors(vectors: &[Vec<f64>]) -> Result<Self> {
        let width = vectors.first().map_or(0, Vec::len);
        let mut stream = Self::with_capacity(width, vectors.len());
        for v in vectors {
            stream.push(v)?;
        }
        Ok(stream)
    }

    pub fn push(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.width {
            return Err(Error::DimensionMismatch { expected: self.width, found: v.len() });
        }
        if !v.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidParameter("patch stream has non-finite entries".into()));
        }
        self.data.extend_from_slice(v);
        Ok(())
    }

    /// Length of every vector in the stream.
    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of timesteps.
    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.width).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, t: usize) -> &[f64] {
        &self.data[t * self.width..(t + 1) * self.width]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.data.chunks_exact(self.width.max(1))
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.data
    }

    pub fn to_vectors(&self) -> Vec<Vec<f64>> {
        self.iter().map(<[f64]>::to_vec).collect()
    }
}

/// Singular value factorization of `m` with both orthogonal factors
/// decomposed into rotation meshes.
pub fn factor_kernel(m: &KernelMatrix) -> Result<KernelFactors> {
    let (d, c) = (m.rows(), m.cols());
    let (u, sigma, v) = if d <= c {
        // Mᵀ = Q·Σ·Wᵀ  ⇒  M = W·Σᵀ·Qᵀ.
        let svd = svd::jacobi_svd_tall(&m.matrix().transpose())?;
        (svd.w, svd.sigma, svd.u_full.transpose())
    } else {
        let svd = svd::jacobi_svd_tall(m.matrix())?;
        (svd.u_full, svd.sigma, svd.w.transpose())
    };
    let u = RealOrthogonal::new(u)?;
    let v = RealOrthogonal::new(v)?;
    let u_schedule = extract_phases(&u);
    let v_schedule = extract_phases(&v);
    let factors = KernelFactors { rows: d, cols: c, u, sigma, v, u_schedule, v_schedule };

    let residual = factors.product().max_abs_diff(m.matrix());
    if residual > FACTOR_RESIDUAL_TOLERANCE * m.matrix().max_abs().max(1.0) {
        return Err(Error::ConvergenceFailure { sweeps: svd::MAX_SWEEPS, residual });
    }
    Ok(factors)
}

/// Perturbs the phases of both meshes and returns `M' = U'·Σ·V'`.
///
/// `U` and `V` draw from independent streams forked from `noise.seed`; `Σ`
/// is reused exactly.
pub fn realize_kernel(f: &KernelFactors, noise: &PhaseNoiseModel) -> KernelMatrix {
    let u_sched = perturb_phases(&f.u_schedule, &noise.fork(0));
    let v_sched = perturb_phases(&f.v_schedule, &noise.fork(1));
    let r = f.sigma.len();
    // Only the leading r columns of U' and rows of V' meet a nonzero gain.
    let u_cols = reconstruct_leading_columns(&u_sched, r);
    let v_rows = reconstruct_leading_rows(&v_sched, r);
    let us = Matrix::from_fn(f.rows, r, |i, k| u_cols[(i, k)] * f.sigma[k]);
    let m = us.matmul(&v_rows).expect("shapes agree by construction");
    KernelMatrix(m)
}

/// Streams every patch through the interference unit: output `t` is
/// `nl(M · stream[t])`.
pub fn apply_layer(m: &KernelMatrix, stream: &PatchStream, nl: Nonlinearity) -> Result<PatchStream> {
    if stream.width() != m.cols() {
        return Err(Error::DimensionMismatch { expected: m.cols(), found: stream.width() });
    }
    let d = m.rows();
    let mut data = Vec::with_capacity(stream.len() * d);
    for patch in stream.iter() {
        data.extend((0..d).map(|k| nl.apply(dot(m.0.row(k), patch))));
    }
    Ok(PatchStream { width: d, data })
}
