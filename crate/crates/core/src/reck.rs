//! Triangular planar-rotation meshes for real orthogonal matrices.
//!
//! An `n×n` orthogonal matrix is reduced to a diagonal of signs by
//! `n(n-1)/2` rotations between adjacent rows. Each rotation nulls one
//! above-diagonal element; columns are processed from the far right to the
//! left and, within a column, from the top row down to the diagonal. The
//! rotation angles are the programmable phases of the interferometer mesh.
//!
//! A rotation with angle `θ` acting on rows `(r, r + 1)` is
//! `[[cos θ, sin θ], [-sin θ, cos θ]]`. If `G_1 … G_L` are the rotations in
//! extraction order then `G_L ⋯ G_1 · U = D`, hence
//! `U = G_1ᵀ ⋯ G_Lᵀ · D`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, rotate_pair, Matrix};

/// Max-abs deviation of `UᵀU` from the identity accepted at construction.
pub const ORTHOGONALITY_TOLERANCE: f64 = 1e-9;

/// Below this magnitude the pair being rotated is treated as already null.
const DEGENERATE_PAIR: f64 = 1e-14;

pub const SCHEDULE_VERSION: u32 = 1;

/// Number of rotations in a full triangular mesh of dimension `n`.
pub fn rotation_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Square real matrix with `UᵀU = I` (checked on construction).
#[derive(Clone, Debug, PartialEq)]
pub struct RealOrthogonal(Matrix);

impl RealOrthogonal {
    pub fn new(m: Matrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch { expected: m.rows(), found: m.cols() });
        }
        if !m.all_finite() {
            return Err(Error::NotOrthogonal { max_deviation: f64::INFINITY });
        }
        let max_deviation = m.orthogonality_error();
        if max_deviation >= ORTHOGONALITY_TOLERANCE {
            return Err(Error::NotOrthogonal { max_deviation });
        }
        Ok(Self(m))
    }

    /// For matrices orthogonal by construction (products of rotations).
    pub(crate) fn new_unchecked(m: Matrix) -> Self {
        debug_assert!(m.is_square());
        Self(m)
    }

    pub fn identity(n: usize) -> Self {
        Self(Matrix::identity(n))
    }

    pub fn n(&self) -> usize {
        self.0.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

/// One mesh element: the rotation that nulls entry `(row, col)` by mixing
/// rows `row` and `row + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "(usize, usize, f64)", into = "(usize, usize, f64)")]
pub struct Rotation {
    pub row: usize,
    pub col: usize,
    pub theta: f64,
}

impl From<(usize, usize, f64)> for Rotation {
    fn from((row, col, theta): (usize, usize, f64)) -> Self {
        Self { row, col, theta }
    }
}

impl From<Rotation> for (usize, usize, f64) {
    fn from(r: Rotation) -> Self {
        (r.row, r.col, r.theta)
    }
}

/// `(row, col)` positions in the order the extractor nulls them.
pub fn nulling_order(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (1..n).rev().flat_map(|col| (0..col).map(move |row| (row, col)))
}

/// Rotation angles plus the residual diagonal sign vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleDoc", into = "ScheduleDoc")]
pub struct PhaseSchedule {
    n: usize,
    thetas: Vec<Rotation>,
    signs: Vec<i8>,
}

impl PhaseSchedule {
    pub fn new(n: usize, thetas: Vec<Rotation>, signs: Vec<i8>) -> Result<Self> {
        if thetas.len() != rotation_count(n) {
            return Err(Error::InvalidSchedule(format!(
                "expected {} rotations for n = {n}, found {}",
                rotation_count(n),
                thetas.len()
            )));
        }
        if signs.len() != n {
            return Err(Error::InvalidSchedule(format!(
                "expected {n} signs, found {}",
                signs.len()
            )));
        }
        if let Some(s) = signs.iter().find(|&&s| s != 1 && s != -1) {
            return Err(Error::InvalidSchedule(format!("sign {s} is not ±1")));
        }
        for (k, (rot, (row, col))) in thetas.iter().zip(nulling_order(n)).enumerate() {
            if (rot.row, rot.col) != (row, col) {
                return Err(Error::InvalidSchedule(format!(
                    "rotation {k} targets ({}, {}), expected ({row}, {col})",
                    rot.row, rot.col
                )));
            }
            if !rot.theta.is_finite() {
                return Err(Error::InvalidSchedule(format!("rotation {k} has non-finite angle")));
            }
        }
        Ok(Self { n, thetas, signs })
    }

    /// All-zero angles and `+1` signs: the identity mesh.
    pub fn identity(n: usize) -> Self {
        let thetas = nulling_order(n).map(|(row, col)| Rotation { row, col, theta: 0.0 }).collect();
        Self { n, thetas, signs: vec![1; n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn thetas(&self) -> &[Rotation] {
        &self.thetas
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Serialize, Deserialize)]
struct ScheduleDoc {
    version: u32,
    n: usize,
    thetas: Vec<Rotation>,
    signs: Vec<i8>,
}

impl TryFrom<ScheduleDoc> for PhaseSchedule {
    type Error = Error;

    fn try_from(doc: ScheduleDoc) -> Result<Self> {
        if doc.version != SCHEDULE_VERSION {
            return Err(Error::UnsupportedVersion { expected: SCHEDULE_VERSION, found: doc.version });
        }
        PhaseSchedule::new(doc.n, doc.thetas, doc.signs)
    }
}

impl From<PhaseSchedule> for ScheduleDoc {
    fn from(s: PhaseSchedule) -> Self {
        ScheduleDoc { version: SCHEDULE_VERSION, n: s.n, thetas: s.thetas, signs: s.signs }
    }
}

/// Gaussian phase-setting error: every angle receives independent
/// `N(0, sigma²)` noise drawn from a generator seeded with `seed`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseNoiseModel {
    pub sigma: f64,
    pub seed: u64,
}

impl PhaseNoiseModel {
    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::InvalidParameter(format!("sigma must be finite and >= 0, got {sigma}")));
        }
        Ok(Self { sigma, seed })
    }

    pub fn noiseless() -> Self {
        Self { sigma: 0.0, seed: 0 }
    }

    /// Same sigma, independent stream identified by `tag`.
    pub fn fork(&self, tag: u64) -> Self {
        Self { sigma: self.sigma, seed: derive_seed(self.seed, tag) }
    }
}

/// Deterministically mixes a master seed with a tag (splitmix64 finalizer).
pub fn derive_seed(master: u64, tag: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(master ^ mix(tag))
}

/// Runs the first `sweeps` column sweeps of the extractor on `work` in place
/// and returns the rotations applied so far.
pub(crate) fn null_columns(work: &mut Matrix, sweeps: usize) -> Vec<Rotation> {
    let n = work.rows();
    let mut rotations = Vec::with_capacity(rotation_count(n));
    for col in (1..n).rev().take(sweeps) {
        for row in 0..col {
            let a = work[(row, col)];
            let b = work[(row + 1, col)];
            let theta = if a.hypot(b) < DEGENERATE_PAIR { 0.0 } else { (-a).atan2(b) };
            if theta != 0.0 {
                let (c, s) = (theta.cos(), theta.sin());
                // Entries right of `col` in these rows are already null.
                let (upper, lower) = work.row_pair_mut(row, row + 1);
                rotate_pair(&mut upper[..=col], &mut lower[..=col], c, s);
            }
            rotations.push(Rotation { row, col, theta });
        }
    }
    rotations
}

/// Decomposes `u` into its mesh phases and diagonal signs.
pub fn extract_phases(u: &RealOrthogonal) -> PhaseSchedule {
    let n = u.n();
    let mut work = u.matrix().clone();
    let thetas = null_columns(&mut work, n.saturating_sub(1));
    let signs = (0..n).map(|i| if work[(i, i)] < 0.0 { -1 } else { 1 }).collect();
    PhaseSchedule { n, thetas, signs }
}

/// Rebuilds the orthogonal matrix programmed by `s`.
pub fn reconstruct_orthogonal(s: &PhaseSchedule) -> RealOrthogonal {
    RealOrthogonal::new_unchecked(reconstruct_leading_columns(s, s.n))
}

/// First `k` columns of the programmed matrix, `U·E_k`.
///
/// Applies the transposed rotations to `D·E_k` in reverse extraction order;
/// cost is `O(L·k)` for `L` rotations.
pub fn reconstruct_leading_columns(s: &PhaseSchedule, k: usize) -> Matrix {
    let n = s.n;
    let k = k.min(n);
    let mut m = Matrix::zeros(n, k);
    for i in 0..k {
        m[(i, i)] = f64::from(s.signs[i]);
    }
    for rot in s.thetas.iter().rev() {
        if rot.theta == 0.0 {
            continue;
        }
        let (c, sn) = (rot.theta.cos(), rot.theta.sin());
        // Before this rotation only the leading (col+1)×(col+1) block is mixed.
        let width = k.min(rot.col + 1);
        let (upper, lower) = m.row_pair_mut(rot.row, rot.row + 1);
        rotate_pair(&mut upper[..width], &mut lower[..width], c, -sn);
    }
    m
}

/// First `k` rows of the programmed matrix, `E_kᵀ·U`.
///
/// Propagates the row selector through the rotations in extraction order as
/// column operations, then applies the signs; cost is `O(L·k)`.
pub fn reconstruct_leading_rows(s: &PhaseSchedule, k: usize) -> Matrix {
    let n = s.n;
    let k = k.min(n);
    let mut m = Matrix::zeros(k, n);
    for i in 0..k {
        m[(i, i)] = 1.0;
    }
    for rot in &s.thetas {
        if rot.theta == 0.0 {
            continue;
        }
        let (c, sn) = (rot.theta.cos(), rot.theta.sin());
        let (p, q) = (rot.row, rot.row + 1);
        for i in 0..k {
            let row = m.row_mut(i);
            let (x, y) = (row[p], row[q]);
            row[p] = c * x + sn * y;
            row[q] = -sn * x + c * y;
        }
    }
    for i in 0..k {
        for (v, &sign) in m.row_mut(i).iter_mut().zip(&s.signs) {
            *v *= f64::from(sign);
        }
    }
    m
}

/// Adds independent Gaussian noise to every angle; signs are untouched.
pub fn perturb_phases(s: &PhaseSchedule, noise: &PhaseNoiseModel) -> PhaseSchedule {
    if noise.sigma == 0.0 {
        return s.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let normal = Normal::new(0.0, noise.sigma).expect("sigma validated non-negative");
    let thetas = s
        .thetas
        .iter()
        .map(|r| Rotation { theta: r.theta + normal.sample(&mut rng), ..*r })
        .collect();
    PhaseSchedule { n: s.n, thetas, signs: s.signs.clone() }
}

/// Haar-like random orthogonal matrix: a Gaussian matrix orthonormalized
/// column by column (modified Gram-Schmidt, two passes).
pub fn random_orthogonal(n: usize, seed: u64) -> RealOrthogonal {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    while cols.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        for _ in 0..2 {
            for c in &cols {
                let p = dot(c, &v);
                v.iter_mut().zip(c).for_each(|(x, y)| *x -= p * y);
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-6 {
            cols.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    RealOrthogonal::new_unchecked(Matrix::from_fn(n, n, |i, j| cols[j][i]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn max_off_diagonal(m: &Matrix) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                if i != j {
                    worst = worst.max(m[(i, j)].abs());
                }
            }
        }
        worst
    }

    #[test]
    fn identity_has_zero_phases() {
        let s = extract_phases(&RealOrthogonal::identity(3));
        assert_eq!(s.thetas().len(), 3);
        assert!(s.thetas().iter().all(|r| r.theta == 0.0));
        assert_eq!(s.signs(), &[1, 1, 1]);
    }

    #[test]
    fn single_rotation_angle() {
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let u = RealOrthogonal::new(Matrix::from_rows(&[vec![c, s], vec![-s, c]]).unwrap()).unwrap();
        let sched = extract_phases(&u);
        assert_eq!(sched.thetas().len(), 1);
        assert!((sched.thetas()[0].theta + 0.3).abs() < 1e-15);
        assert_eq!(sched.signs(), &[1, 1]);
    }

    #[test]
    fn reflection_lands_in_signs() {
        let u = RealOrthogonal::new(Matrix::from_rows(&[vec![-1.0, 0.0], vec![0.0, 1.0]]).unwrap())
            .unwrap();
        let s = extract_phases(&u);
        assert_eq!(s.signs(), &[-1, 1]);
        assert_eq!(reconstruct_orthogonal(&s).matrix(), u.matrix());
    }

    #[test]
    fn permutation_round_trip() {
        let p = Matrix::from_rows(&[
            vec![0.0, 0.0, 1.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
        ])
        .unwrap();
        let u = RealOrthogonal::new(p.clone()).unwrap();
        let s = extract_phases(&u);
        assert!(reconstruct_orthogonal(&s).matrix().max_abs_diff(&p) < 1e-12);
    }

    #[test]
    fn degenerate_pair_gets_zero_angle() {
        // Rows 0 and 1 of the last column are both zero.
        let p = Matrix::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![0.0, 1.0, 0.0],
        ])
        .unwrap();
        let s = extract_phases(&RealOrthogonal::new(p.clone()).unwrap());
        assert_eq!(s.thetas()[0], Rotation { row: 0, col: 2, theta: 0.0 });
        assert!(reconstruct_orthogonal(&s).matrix().max_abs_diff(&p) < 1e-12);
    }

    #[test]
    fn random_round_trip_8() {
        let u = random_orthogonal(8, 11);
        let s = extract_phases(&u);
        assert_eq!(s.thetas().len(), 28);
        let back = reconstruct_orthogonal(&s);
        assert!(back.matrix().max_abs_diff(u.matrix()) < 1e-9);
    }

    #[test]
    fn nulling_progresses_column_by_column() {
        let n = 7;
        let u = random_orthogonal(n, 5);
        for sweeps in 1..n {
            let mut work = u.matrix().clone();
            null_columns(&mut work, sweeps);
            for col in (n - sweeps)..n {
                for row in 0..col {
                    assert!(work[(row, col)].abs() < 1e-9, "sweep {sweeps} ({row},{col})");
                }
            }
        }
        let mut work = u.matrix().clone();
        null_columns(&mut work, n - 1);
        assert!(max_off_diagonal(&work) < 1e-9);
        for i in 0..n {
            assert!((work[(i, i)].abs() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_non_orthogonal() {
        let m = Matrix::from_rows(&[vec![1.0, 0.1], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(RealOrthogonal::new(m), Err(Error::NotOrthogonal { .. })));
        assert!(RealOrthogonal::new(Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn zero_angles_reconstruct_identity() {
        let s = PhaseSchedule::identity(5);
        assert_eq!(reconstruct_orthogonal(&s).matrix(), &Matrix::identity(5));
    }

    #[test]
    fn partial_reconstructions_match_full() {
        let u = random_orthogonal(9, 3);
        let s = extract_phases(&u);
        let full = reconstruct_orthogonal(&s).into_matrix();
        for k in [1, 4, 9] {
            let cols = reconstruct_leading_columns(&s, k);
            let rows = reconstruct_leading_rows(&s, k);
            for i in 0..9 {
                for j in 0..k {
                    assert!((cols[(i, j)] - full[(i, j)]).abs() < 1e-14);
                    assert!((rows[(j, i)] - full[(j, i)]).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn zero_sigma_is_identity_map() {
        let s = extract_phases(&random_orthogonal(6, 2));
        assert_eq!(perturb_phases(&s, &PhaseNoiseModel::new(0.0, 9).unwrap()), s);
    }

    #[test]
    fn perturbation_is_seeded() {
        let s = extract_phases(&random_orthogonal(6, 2));
        let noise = PhaseNoiseModel::new(0.01, 42).unwrap();
        let a = perturb_phases(&s, &noise);
        let b = perturb_phases(&s, &noise);
        assert_eq!(a, b);
        assert_eq!(a.signs(), s.signs());
        let c = perturb_phases(&s, &PhaseNoiseModel::new(0.01, 43).unwrap());
        assert_ne!(a, c);
    }

    #[test]
    fn half_normal_moment() {
        // E|X| = σ·√(2/π) for X ~ N(0, σ²).
        let sigma = 0.01;
        let s = PhaseSchedule::identity(160); // 12 720 angles
        let p = perturb_phases(&s, &PhaseNoiseModel::new(sigma, 7).unwrap());
        let mean_abs = p.thetas().iter().map(|r| r.theta.abs()).sum::<f64>() / p.thetas().len() as f64;
        let expected = sigma * (2.0 / std::f64::consts::PI).sqrt();
        assert!(((mean_abs - expected) / expected).abs() < 0.05, "{mean_abs} vs {expected}");
    }

    #[test]
    fn negative_sigma_rejected() {
        assert!(PhaseNoiseModel::new(-1e-3, 0).is_err());
        assert!(PhaseNoiseModel::new(f64::NAN, 0).is_err());
    }

    #[test]
    fn schedule_json_round_trip() {
        let s = extract_phases(&random_orthogonal(5, 8));
        let json = s.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["version"], 1);
        assert_eq!(v["thetas"][0][0], 0);
        assert_eq!(v["thetas"][0][1], 4);
        assert_eq!(PhaseSchedule::from_json(&json).unwrap(), s);
    }

    #[test]
    fn schedule_json_validates_order() {
        let bad = r#"{"version":1,"n":3,"thetas":[[1,2,0.0],[0,2,0.0],[0,1,0.0]],"signs":[1,1,1]}"#;
        assert!(PhaseSchedule::from_json(bad).is_err());
        let bad_sign = r#"{"version":1,"n":2,"thetas":[[0,1,0.5]],"signs":[1,0]}"#;
        assert!(PhaseSchedule::from_json(bad_sign).is_err());
        let bad_version = r#"{"version":7,"n":2,"thetas":[[0,1,0.5]],"signs":[1,1]}"#;
        assert!(PhaseSchedule::from_json(bad_version).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn round_trip_any_size(n in 2usize..24, seed in any::<u64>()) {
            let u = random_orthogonal(n, seed);
            let s = extract_phases(&u);
            prop_assert_eq!(s.thetas().len(), n * (n - 1) / 2);
            prop_assert!(reconstruct_orthogonal(&s).matrix().max_abs_diff(u.matrix()) < 1e-9);
        }

        #[test]
        fn arbitrary_angles_stay_orthogonal(n in 2usize..20, seed in any::<u64>(), sigma in 0.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let thetas = nulling_order(n)
                .map(|(row, col)| Rotation { row, col, theta: rng.random_range(-10.0..10.0) })
                .collect();
            let signs = (0..n).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
            let s = PhaseSchedule::new(n, thetas, signs).unwrap();
            prop_assert!(reconstruct_orthogonal(&s).matrix().orthogonality_error() < 1e-12);
            let p = perturb_phases(&s, &PhaseNoiseModel::new(sigma, seed).unwrap());
            prop_assert!(reconstruct_orthogonal(&p).matrix().orthogonality_error() < 1e-12);
        }
    }
}
