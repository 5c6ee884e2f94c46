//! Stationary solution of the Markov-modulated fluid queue `F'(x) D = F(x) M`.
//!
//! The deficit `S` of the storage unit grows at rate `d_s = load_s - C` while
//! the modulating chain sits in state `s` and is reflected at zero. Its joint
//! law `F_s(x) = P(S <= x, state = s)` is a sum of exponential modes
//!
//! ```text
//! F(x) = pi + sum_i alpha_i phi_i exp(z_i x),   z_i < 0,
//! ```
//!
//! where `z_i phi_i D = phi_i M` and the `alpha_i` enforce `F_s(0) = 0` for
//! every overload state (`d_s > 0`).
//!
//! # Methods
//!
//! The chains built in [`crate::source_model`] are reversible, so with
//! `phi = y Pi^{1/2}` the eigenproblem becomes `S y = z D y` for the
//! symmetric `S = Pi^{1/2} M Pi^{-1/2}`. Both solvers work in these `y`
//! coordinates, where the boundary system is scaled by `sqrt(pi)` row-wise
//! and stays well conditioned even when `pi` spans hundreds of orders of
//! magnitude.
//!
//! [`solve`] uses the product structure. `M - z diag(load)` is a Kronecker
//! sum of per-class birth-death blocks with spectra `j s_+(z) + (N - j) s_-(z)`,
//! where `s_±` are the eigenvalues of one source's 2x2 block. A mode is
//! labelled by an occupancy tuple `j` and solves
//!
//! ```text
//! sum_k [ j_k s_+^k(z) + (N_k - j_k) s_-^k(z) ] + z C = 0.
//! ```
//!
//! The left side over `z` is positive near `0-` and tends to `C - load_j`
//! at `-inf`, so every overload tuple has a negative root. Since the number
//! of decaying modes equals the number of overload states, each such tuple
//! has exactly one and no other tuple has any. Roots are bracketed and
//! bisected; the mode vector is the tensor product of per-class tridiagonal
//! eigenvectors found by inverse iteration.
//!
//! [`solve_dense`] shifts the null direction `e = sqrt(pi)` out by a rank-one
//! update, `K = -S + c (D e)(D e)^T`, and reduces `D y = -(1/z) K y` with
//! `K = L L^T` to the symmetric problem `L^{-1} D L^{-T} v = theta v`,
//! `theta = -1/z`. It needs no product structure but costs `O(n^3)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::source_model::{stationary_distribution, ConsumerClass, FluidModel};

/// Largest chain handled by [`solve_dense`].
pub const DENSE_STATE_CAP: usize = 3_000;
/// Largest number of overload states (boundary unknowns) handled by [`solve`].
pub const BOUNDARY_CAP: usize = 6_000;

const ZERO_DRIFT_TOL: f64 = 1e-12;
const ZERO_DRIFT_SHIFT: f64 = 1e-9;
const RESIDUAL_FAIL: f64 = 1e-6;
const MIN_RECIPROCAL_CONDITION: f64 = 1e-14;
/// Boundary systems up to this size are solved by SVD, larger ones by LU.
const SVD_LIMIT: usize = 400;

/// Per-state net drift `load_s - C` of the storage deficit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftTable {
    pub drifts: Vec<f64>,
    /// Grid power actually used (after the zero-drift perturbation).
    pub grid_power: f64,
    pub requested_grid_power: f64,
    pub perturbed: bool,
}

impl DriftTable {
    /// Builds the drift table, nudging `C` upward if some state load equals
    /// it, since the ODE is singular on zero-drift states.
    pub fn new(loads: &[f64], grid_power: f64) -> Self {
        let scale = grid_power.abs().max(1.0);
        let degenerate = loads
            .iter()
            .any(|l| (l - grid_power).abs() <= ZERO_DRIFT_TOL * scale);
        let used = if degenerate {
            let shifted = grid_power + ZERO_DRIFT_SHIFT * scale;
            log::warn!("grid power {grid_power} coincides with a state load; using {shifted}");
            shifted
        } else {
            grid_power
        };
        DriftTable {
            drifts: loads.iter().map(|l| l - used).collect(),
            grid_power: used,
            requested_grid_power: grid_power,
            perturbed: degenerate,
        }
    }

    pub fn overload_states(&self) -> impl Iterator<Item = usize> + '_ {
        self.drifts
            .iter()
            .enumerate()
            .filter(|(_, &d)| d > 0.0)
            .map(|(i, _)| i)
    }
}

/// Diagnostics gathered while solving.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverMetadata {
    /// Retained eigenvalues: zero first, then the decaying ones in
    /// decreasing order.
    pub eigenvalues: Vec<f64>,
    /// Eigen-equation residual per decaying mode, vectors scaled to unit max.
    pub residuals: Vec<f64>,
    /// Condition number of the boundary system: the exact 2-norm value for
    /// small systems, a 1-norm estimate for large ones.
    pub condition_number: f64,
    /// Largest imaginary part among retained eigenvalues.
    pub max_imaginary: f64,
    /// Largest `|F_s(0)|` over overload states after solving.
    pub boundary_residual: f64,
    pub overload_states: usize,
    pub grid_power: f64,
    pub perturbed: bool,
    pub generator_norm: f64,
}

impl SolverMetadata {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("metadata is plain data")
    }
}

#[derive(Debug, Clone)]
enum Modes {
    /// Column `i` holds `y_i = phi_i / sqrt(pi)` over all states.
    Dense(DMatrix<f64>),
    /// `factors[i][k]` is the class-`k` factor of `y_i`, indexed by `n_k`.
    Product(Vec<Vec<Vec<f64>>>),
}

/// Mode decomposition of the stationary deficit distribution.
#[derive(Debug, Clone)]
pub struct SpectralSolution {
    drift: DriftTable,
    stationary: Vec<f64>,
    sqrt_pi: Vec<f64>,
    states: Vec<Vec<usize>>,
    eigenvalues: Vec<f64>,
    modes: Modes,
    coefficients: Vec<f64>,
    weights: Vec<f64>,
    metadata: SolverMetadata,
}

struct Prepared {
    drift: DriftTable,
    stationary: Vec<f64>,
    sqrt_pi: Vec<f64>,
    overload: Vec<usize>,
    generator_norm: f64,
}

/// Modes found by one of the eigen-solvers, slowest first.
struct ModeSet {
    eigenvalues: Vec<f64>,
    modes: Modes,
    residuals: Vec<f64>,
}

fn prepare(model: &FluidModel, grid_power: f64) -> Result<Prepared> {
    if !grid_power.is_finite() {
        return Err(Error::ParameterDomain(format!(
            "grid power must be finite, got {grid_power}"
        )));
    }
    let mean = model.mean_load();
    if mean >= grid_power {
        return Err(Error::Stability {
            mean_demand: mean,
            grid_power,
        });
    }
    let drift = DriftTable::new(model.loads(), grid_power);
    let stationary = model.stationary().to_vec();
    let sqrt_pi = stationary.iter().map(|p| p.sqrt()).collect();
    let overload = drift.overload_states().collect();
    Ok(Prepared {
        drift,
        stationary,
        sqrt_pi,
        overload,
        generator_norm: model.generator_norm(),
    })
}

/// Solves the fluid model for constant grid power `grid_power` using the
/// product structure of the population.
pub fn solve(model: &FluidModel, grid_power: f64) -> Result<SpectralSolution> {
    let prep = prepare(model, grid_power)?;
    let m = prep.overload.len();
    if m > BOUNDARY_CAP {
        return Err(Error::Capacity {
            states: m,
            cap: BOUNDARY_CAP,
        });
    }
    if m == 0 {
        return Ok(trivial(model, prep));
    }
    let set = separable_modes(model, &prep)?;
    finish(model, prep, set)
}

/// Solves the fluid model through one dense symmetric eigenproblem over all
/// states.
pub fn solve_dense(model: &FluidModel, grid_power: f64) -> Result<SpectralSolution> {
    let n = model.len();
    if n > DENSE_STATE_CAP {
        return Err(Error::Capacity {
            states: n,
            cap: DENSE_STATE_CAP,
        });
    }
    let prep = prepare(model, grid_power)?;
    if prep.overload.is_empty() {
        return Ok(trivial(model, prep));
    }
    let set = dense_modes(model, &prep)?;
    finish(model, prep, set)
}

fn trivial(model: &FluidModel, prep: Prepared) -> SpectralSolution {
    let metadata = SolverMetadata {
        eigenvalues: vec![0.0],
        residuals: vec![],
        condition_number: 1.0,
        max_imaginary: 0.0,
        boundary_residual: 0.0,
        overload_states: 0,
        grid_power: prep.drift.grid_power,
        perturbed: prep.drift.perturbed,
        generator_norm: prep.generator_norm,
    };
    SpectralSolution {
        drift: prep.drift,
        stationary: prep.stationary,
        sqrt_pi: prep.sqrt_pi,
        states: model.states().to_vec(),
        eigenvalues: vec![],
        modes: Modes::Product(vec![]),
        coefficients: vec![],
        weights: vec![],
        metadata,
    }
}

fn finish(model: &FluidModel, prep: Prepared, set: ModeSet) -> Result<SpectralSolution> {
    let m = prep.overload.len();
    let worst = set.residuals.iter().copied().fold(0.0, f64::max);
    if worst > RESIDUAL_FAIL * prep.generator_norm.max(1.0) {
        return Err(Error::Numerical {
            stage: "eigenpair residual",
            residual: worst,
        });
    }

    let mut sol = SpectralSolution {
        states: model.states().to_vec(),
        eigenvalues: set.eigenvalues,
        modes: set.modes,
        coefficients: vec![],
        weights: vec![],
        metadata: SolverMetadata {
            eigenvalues: vec![],
            residuals: set.residuals,
            condition_number: f64::NAN,
            max_imaginary: 0.0,
            boundary_residual: f64::NAN,
            overload_states: m,
            grid_power: prep.drift.grid_power,
            perturbed: prep.drift.perturbed,
            generator_norm: prep.generator_norm,
        },
        drift: prep.drift,
        stationary: prep.stationary,
        sqrt_pi: prep.sqrt_pi,
    };

    let mut boundary = DMatrix::zeros(m, m);
    let mut rhs = DVector::zeros(m);
    for (r, &s) in prep.overload.iter().enumerate() {
        for i in 0..m {
            boundary[(r, i)] = sol.scaled(s, i);
        }
        rhs[r] = -sol.sqrt_pi[s];
    }
    let (alpha, condition_number) = solve_boundary(&boundary, &rhs)?;
    let boundary_residual = (&boundary * &alpha - &rhs)
        .iter()
        .zip(&prep.overload)
        .map(|(r, &s)| (r * sol.sqrt_pi[s]).abs())
        .fold(0.0, f64::max);

    sol.weights = mode_weights(model, &sol);
    sol.coefficients = alpha.iter().copied().collect();
    let mut listed = vec![0.0];
    listed.extend_from_slice(&sol.eigenvalues);
    sol.metadata.eigenvalues = listed;
    sol.metadata.condition_number = condition_number;
    sol.metadata.boundary_residual = boundary_residual;
    Ok(sol)
}

fn mode_weights(model: &FluidModel, sol: &SpectralSolution) -> Vec<f64> {
    match &sol.modes {
        Modes::Dense(y) => (0..y.ncols())
            .map(|i| y.column(i).iter().zip(&sol.sqrt_pi).map(|(a, e)| a * e).sum())
            .collect(),
        Modes::Product(factors) => {
            let pop = model.population();
            let roots: Vec<Vec<f64>> = pop
                .classes()
                .iter()
                .zip(pop.counts())
                .map(|(class, &n)| {
                    stationary_distribution(n, class)
                        .map(|p| p.into_iter().map(f64::sqrt).collect())
                        .unwrap_or_default()
                })
                .collect();
            factors
                .iter()
                .map(|mode| {
                    mode.iter()
                        .zip(&roots)
                        .map(|(w, r)| w.iter().zip(r).map(|(a, b)| a * b).sum::<f64>())
                        .product()
                })
                .collect()
        }
    }
}

/// Solves the boundary system, returning the solution and a condition number.
fn solve_boundary(a: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let m = a.nrows();
    if m <= SVD_LIMIT {
        let svd = a.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        let condition = smax / smin;
        if !(smin > MIN_RECIPROCAL_CONDITION * smax) {
            return Err(Error::Conditioning { condition });
        }
        let x = svd
            .solve(rhs, 0.0)
            .map_err(|_| Error::Conditioning { condition })?;
        return Ok((x, condition));
    }
    let lu = a.clone().lu();
    let x = lu.solve(rhs).ok_or(Error::Conditioning {
        condition: f64::INFINITY,
    })?;
    let (perm, lower, upper) = lu.unpack();
    // P A = L U, so A^T w = v is U^T L^T (P w) = v.
    let solve_t = |v: &DVector<f64>| -> Option<DVector<f64>> {
        let mut w = upper.tr_solve_upper_triangular(v)?;
        if !lower.tr_solve_lower_triangular_mut(&mut w) {
            return None;
        }
        perm.inv_permute_rows(&mut w);
        Some(w)
    };
    let solve_n = |v: &DVector<f64>| -> Option<DVector<f64>> {
        let mut w = v.clone();
        perm.permute_rows(&mut w);
        if !lower.solve_lower_triangular_mut(&mut w) {
            return None;
        }
        upper.solve_upper_triangular(&w)
    };
    let inv_norm = inverse_one_norm_estimate(m, solve_n, solve_t);
    let a_norm = (0..m)
        .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let condition = a_norm * inv_norm;
    if !(condition.is_finite() && condition * MIN_RECIPROCAL_CONDITION < 1.0) {
        return Err(Error::Conditioning { condition });
    }
    Ok((x, condition))
}

/// Hager's estimate of `|A^{-1}|_1` from solves with `A` and `A^T`.
fn inverse_one_norm_estimate<F, G>(m: usize, solve: F, solve_t: G) -> f64
where
    F: Fn(&DVector<f64>) -> Option<DVector<f64>>,
    G: Fn(&DVector<f64>) -> Option<DVector<f64>>,
{
    let mut x = DVector::from_element(m, 1.0 / m as f64);
    let mut estimate = 0.0;
    for _ in 0..5 {
        let Some(y) = solve(&x) else {
            return f64::INFINITY;
        };
        let norm = y.iter().map(|v| v.abs()).sum::<f64>();
        if norm <= estimate {
            break;
        }
        estimate = norm;
        let signs = y.map(|v| if v >= 0.0 { 1.0 } else { -1.0 });
        let Some(z) = solve_t(&signs) else {
            return f64::INFINITY;
        };
        let j = z.iamax();
        if z[j].abs() <= z.dot(&x) {
            break;
        }
        x = DVector::zeros(m);
        x[j] = 1.0;
    }
    estimate
}

// Separable solver

struct ClassBlock {
    class: ConsumerClass,
    count: usize,
}

impl ClassBlock {
    fn discriminant(&self, z: f64) -> (f64, f64) {
        let c = &self.class;
        let b = c.lambda + c.mu + z * c.peak_demand;
        let r = ((z * c.peak_demand + c.mu - c.lambda).powi(2) + 4.0 * c.lambda * c.mu).sqrt();
        (b, r)
    }

    /// Eigenvalues `(s_+, s_-)` of one source's block `[[-l, l], [m, -m - zR]]`.
    fn branches(&self, z: f64) -> (f64, f64) {
        let (b, r) = self.discriminant(z);
        let product = self.class.lambda * z * self.class.peak_demand;
        if b >= 0.0 {
            let lower = -0.5 * (b + r);
            (product / lower, lower)
        } else {
            let upper = 0.5 * (r - b);
            (upper, product / upper)
        }
    }

    /// `(s_+ / z, s_- / z)` for `z < 0`, free of cancellation near zero.
    fn branches_over_z(&self, z: f64) -> (f64, f64) {
        let (b, r) = self.discriminant(z);
        let lr = self.class.lambda * self.class.peak_demand;
        if b >= 0.0 {
            let lower = -0.5 * (b + r);
            (lr / lower, lower / z)
        } else {
            let upper = 0.5 * (r - b);
            (upper / z, lr / upper)
        }
    }

    /// Symmetrized class block `Pi^{1/2} (Q - z diag(n R)) Pi^{-1/2}` as
    /// (diagonal, off-diagonal).
    fn tridiagonal(&self, z: f64) -> (Vec<f64>, Vec<f64>) {
        let c = &self.class;
        let n = self.count;
        let diag = (0..=n)
            .map(|k| {
                let k = k as f64;
                -((n as f64 - k) * c.lambda + k * c.mu) - z * k * c.peak_demand
            })
            .collect();
        let off = (0..n)
            .map(|k| ((n - k) as f64 * c.lambda * (k + 1) as f64 * c.mu).sqrt())
            .collect();
        (diag, off)
    }

    fn eigenvalue(&self, j: usize, z: f64) -> f64 {
        let (up, down) = self.branches(z);
        j as f64 * up + (self.count - j) as f64 * down
    }
}

/// Characteristic function of tuple `j` divided by `z`.
fn scaled_characteristic(blocks: &[ClassBlock], tuple: &[usize], grid_power: f64, z: f64) -> f64 {
    let mut total = grid_power;
    for (block, &j) in blocks.iter().zip(tuple) {
        let (up, down) = block.branches_over_z(z);
        if j > 0 {
            total += j as f64 * up;
        }
        if block.count > j {
            total += (block.count - j) as f64 * down;
        }
    }
    total
}

fn tuple_root(blocks: &[ClassBlock], tuple: &[usize], grid_power: f64) -> Result<f64> {
    let f = |z: f64| scaled_characteristic(blocks, tuple, grid_power, z);
    let mut lo = -1.0;
    while f(lo) >= 0.0 {
        lo *= 2.0;
        if lo < -1e300 {
            return Err(Error::Numerical {
                stage: "eigenvalue bracket",
                residual: f(lo),
            });
        }
    }
    let mut hi = 0.5 * lo;
    while f(hi) < 0.0 {
        lo = hi;
        hi *= 0.5;
        if hi > -1e-300 {
            return Err(Error::Numerical {
                stage: "eigenvalue bracket",
                residual: f(hi),
            });
        }
    }
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(if f(lo).abs() < f(hi).abs() { lo } else { hi })
}

/// Solves `(T - shift I) x = rhs` in place for tridiagonal `T`, with partial
/// pivoting.
fn tridiagonal_solve(diag: &[f64], off: &[f64], shift: f64, rhs: &mut [f64]) {
    let n = diag.len();
    let tiny = f64::MIN_POSITIVE.sqrt();
    // After elimination row i of the upper factor spans columns i..=i+2.
    let mut u0: Vec<f64> = diag.iter().map(|d| d - shift).collect();
    let mut u1: Vec<f64> = off.to_vec();
    u1.push(0.0);
    let mut u2 = vec![0.0; n];
    let mut lower: Vec<f64> = off.to_vec();
    for i in 0..n.saturating_sub(1) {
        if lower[i].abs() > u0[i].abs() {
            let (a0, a1, a2) = (u0[i], u1[i], u2[i]);
            u0[i] = lower[i];
            u1[i] = u0[i + 1];
            u2[i] = u1[i + 1];
            lower[i] = a0;
            u0[i + 1] = a1;
            u1[i + 1] = a2;
            rhs.swap(i, i + 1);
        }
        if u0[i] == 0.0 {
            u0[i] = tiny;
        }
        let factor = lower[i] / u0[i];
        u0[i + 1] -= factor * u1[i];
        u1[i + 1] -= factor * u2[i];
        rhs[i + 1] -= factor * rhs[i];
    }
    if u0[n - 1] == 0.0 {
        u0[n - 1] = tiny;
    }
    for i in (0..n).rev() {
        let mut v = rhs[i];
        if i + 1 < n {
            v -= u1[i] * rhs[i + 1];
        }
        if i + 2 < n {
            v -= u2[i] * rhs[i + 2];
        }
        rhs[i] = v / u0[i];
    }
}

fn normalize_max(v: &mut [f64]) {
    let peak = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if peak > 0.0 {
        v.iter_mut().for_each(|x| *x /= peak);
    }
}

/// Class-block eigenvector for upper-branch count `j` at `z`, with its
/// max-norm residual.
fn block_vector(block: &ClassBlock, j: usize, z: f64) -> (Vec<f64>, f64) {
    let (diag, off) = block.tridiagonal(z);
    let (up, down) = block.branches(z);
    let n = block.count;
    let target = block.eigenvalue(j, z);
    // The block spectrum is equally spaced by `up - down`.
    let shift = target + 1e-10 * (up - down);
    let mut w: Vec<f64> = (0..=n).map(|k| 1.0 + 0.37 * (k as f64 * 0.618).sin()).collect();
    for _ in 0..3 {
        tridiagonal_solve(&diag, &off, shift, &mut w);
        normalize_max(&mut w);
    }
    let residual = (0..=n)
        .map(|k| {
            let mut r = (diag[k] - target) * w[k];
            if k > 0 {
                r += off[k - 1] * w[k - 1];
            }
            if k < n {
                r += off[k] * w[k + 1];
            }
            r.abs()
        })
        .fold(0.0, f64::max);
    (w, residual)
}

fn separable_modes(model: &FluidModel, prep: &Prepared) -> Result<ModeSet> {
    let pop = model.population();
    let blocks: Vec<ClassBlock> = pop
        .classes()
        .iter()
        .zip(pop.counts())
        .map(|(&class, &count)| ClassBlock { class, count })
        .collect();
    let c = prep.drift.grid_power;
    let mut found = Vec::with_capacity(prep.overload.len());
    for &s in &prep.overload {
        let tuple = &model.states()[s];
        let z = tuple_root(&blocks, tuple, c)?;
        let mut factors = Vec::with_capacity(blocks.len());
        let mut residual = 0.0;
        let mut characteristic = z * c;
        for (block, &j) in blocks.iter().zip(tuple) {
            let (w, r) = block_vector(block, j, z);
            residual += r;
            characteristic += block.eigenvalue(j, z);
            factors.push(w);
        }
        found.push((z, factors, residual + characteristic.abs()));
    }
    found.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut eigenvalues = Vec::with_capacity(found.len());
    let mut factors = Vec::with_capacity(found.len());
    let mut residuals = Vec::with_capacity(found.len());
    for (z, f, r) in found {
        eigenvalues.push(z);
        factors.push(f);
        residuals.push(r);
    }
    Ok(ModeSet {
        eigenvalues,
        modes: Modes::Product(factors),
        residuals,
    })
}

// Dense solver

fn dense_modes(model: &FluidModel, prep: &Prepared) -> Result<ModeSet> {
    let n = model.len();
    let m = prep.overload.len();
    let sym = symmetrized_generator(model)?;
    let d = &prep.drift.drifts;
    let sqrt_pi = &prep.sqrt_pi;

    let e_norm = sqrt_pi.iter().map(|v| v * v).sum::<f64>().sqrt();
    let de = DVector::from_iterator(n, sqrt_pi.iter().zip(d).map(|(e, d)| d * e / e_norm));
    let sym_norm = (0..n)
        .map(|i| sym.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let shift = sym_norm / de.norm_squared();
    let mut k = -sym;
    k.ger(shift, &de, &de, 1.0);

    let chol = k.cholesky().ok_or(Error::Numerical {
        stage: "cholesky of the deflated generator",
        residual: f64::NAN,
    })?;
    let inv_l = chol
        .l()
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or(Error::Numerical {
            stage: "triangular inverse",
            residual: f64::NAN,
        })?;

    let mut scaled = inv_l.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= d[j];
    }
    let mut h = &scaled * inv_l.transpose();
    let ht = h.transpose();
    h += ht;
    h *= 0.5;

    let eig = h.symmetric_eigen();
    let mut decaying: Vec<(f64, usize)> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, &t)| t > 0.0)
        .map(|(i, &t)| (-1.0 / t, i))
        .collect();
    if decaying.len() != m {
        return Err(Error::Numerical {
            stage: "mode count (decaying modes vs overload states)",
            residual: (decaying.len() as f64 - m as f64).abs(),
        });
    }
    decaying.sort_by(|a, b| b.0.total_cmp(&a.0));

    let eigenvalues: Vec<f64> = decaying.iter().map(|&(z, _)| z).collect();
    let mut selected = DMatrix::zeros(n, m);
    for (col, &(_, src)) in decaying.iter().enumerate() {
        selected.set_column(col, &eig.eigenvectors.column(src));
    }
    let mut vectors = inv_l.transpose() * selected;
    for mut col in vectors.column_iter_mut() {
        let peak = col.amax();
        if peak > 0.0 {
            col /= peak;
        }
    }
    let residuals = (0..m)
        .map(|i| eigen_residual(model, d, sqrt_pi, &vectors, i, eigenvalues[i]))
        .collect();
    Ok(ModeSet {
        eigenvalues,
        modes: Modes::Dense(vectors),
        residuals,
    })
}

/// Dense `Pi^{1/2} M Pi^{-1/2}`, built from `sqrt(M_ij M_ji)`.
fn symmetrized_generator(model: &FluidModel) -> Result<DMatrix<f64>> {
    let n = model.len();
    let pi = model.stationary();
    let mut s = DMatrix::zeros(n, n);
    for i in 0..n {
        s[(i, i)] = model.diagonal()[i];
        for &(j, r) in model.transitions(i) {
            let back = model.rate(j, i);
            let flow = pi[i] * r;
            let reverse = pi[j] * back;
            if back <= 0.0 || (flow - reverse).abs() > 1e-9 * flow.max(reverse) {
                return Err(Error::ParameterDomain(format!(
                    "chain is not reversible between states {i} and {j}"
                )));
            }
            s[(i, j)] = (r * back).sqrt();
        }
    }
    Ok(s)
}

fn eigen_residual(
    model: &FluidModel,
    drifts: &[f64],
    sqrt_pi: &[f64],
    vectors: &DMatrix<f64>,
    mode: usize,
    z: f64,
) -> f64 {
    let n = model.len();
    let mut phi: Vec<f64> = (0..n).map(|s| vectors[(s, mode)] * sqrt_pi[s]).collect();
    normalize_max(&mut phi);
    let mut acc: Vec<f64> = (0..n)
        .map(|j| phi[j] * model.diagonal()[j] - z * phi[j] * drifts[j])
        .collect();
    for (i, p) in phi.iter().enumerate() {
        for &(j, r) in model.transitions(i) {
            acc[j] += p * r;
        }
    }
    acc.iter().fold(0.0, |a, v| a.max(v.abs()))
}

impl SpectralSolution {
    pub fn drift(&self) -> &DriftTable {
        &self.drift
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    /// Strictly negative eigenvalues, slowest (closest to zero) first.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Boundary coefficients `alpha_i` matching [`Self::eigenvector`].
    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// `1^T phi_i` for each mode.
    pub fn mode_weights(&self) -> &[f64] {
        &self.weights
    }

    /// `y_i(s) = phi_i(s) / sqrt(pi_s)`.
    fn scaled(&self, state: usize, mode: usize) -> f64 {
        match &self.modes {
            Modes::Dense(y) => y[(state, mode)],
            Modes::Product(factors) => factors[mode]
                .iter()
                .zip(&self.states[state])
                .map(|(w, &n)| w[n])
                .product(),
        }
    }

    /// Left eigenvector `phi_i` over the states.
    pub fn eigenvector(&self, mode: usize) -> Vec<f64> {
        (0..self.stationary.len())
            .map(|s| self.scaled(s, mode) * self.sqrt_pi[s])
            .collect()
    }

    pub fn metadata(&self) -> &SolverMetadata {
        &self.metadata
    }

    pub fn mode_count(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Slowest decay rate, or `None` when no state overloads the grid.
    pub fn dominant_eigenvalue(&self) -> Option<f64> {
        self.eigenvalues.first().copied()
    }

    /// `P(S > level)`.
    pub fn survivor(&self, level: f64) -> Result<f64> {
        survivor_probability(self, level)
    }

    pub fn cdf(&self, level: f64) -> Result<Vec<f64>> {
        cdf(self, level)
    }

    fn raw_survivor(&self, level: f64) -> f64 {
        -self
            .coefficients
            .iter()
            .zip(&self.weights)
            .zip(&self.eigenvalues)
            .map(|((a, w), z)| a * w * (z * level).exp())
            .sum::<f64>()
    }
}

fn check_level(level: f64) -> Result<()> {
    if !(level >= 0.0) {
        return Err(Error::Domain {
            helper: "level",
            detail: format!("storage level must be nonnegative, got {level}"),
        });
    }
    Ok(())
}

/// `P(S > level) = -sum_i alpha_i (1^T phi_i) exp(z_i level)`, clamped to
/// `[0, 1]`.
pub fn survivor_probability(sol: &SpectralSolution, level: f64) -> Result<f64> {
    check_level(level)?;
    Ok(sol.raw_survivor(level).clamp(0.0, 1.0))
}

/// Per-state joint law `F_s(level) = P(S <= level, state = s)`.
pub fn cdf(sol: &SpectralSolution, level: f64) -> Result<Vec<f64>> {
    check_level(level)?;
    let decay: Vec<f64> = sol
        .coefficients
        .iter()
        .zip(&sol.eigenvalues)
        .map(|(a, z)| a * (z * level).exp())
        .collect();
    Ok((0..sol.stationary.len())
        .map(|s| {
            let modes: f64 = decay
                .iter()
                .enumerate()
                .map(|(i, c)| c * sol.scaled(s, i))
                .sum();
            let pi = sol.stationary[s];
            (pi + sol.sqrt_pi[s] * modes).clamp(0.0, pi)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source_model::{
        build_generator_multi, build_generator_single, ConsumerClass, Population,
    };

    fn single(n: usize, lambda: f64) -> FluidModel {
        build_generator_single(n, &ConsumerClass::normalized(lambda).unwrap()).unwrap()
    }

    #[test]
    fn single_user_modes() {
        let sol = solve(&single(1, 0.5), 0.5).unwrap();
        assert_eq!(sol.mode_count(), 1);
        assert!((sol.eigenvalues()[0] + 1.0).abs() < 1e-12);
        // alpha (1^T phi) is normalization free and equals the closed-form alpha_1
        let scaled_alpha = sol.coefficients()[0] * sol.mode_weights()[0];
        assert!((scaled_alpha + 2.0 / 3.0).abs() < 1e-12);
        let b = 1.7;
        let g = sol.survivor(b).unwrap();
        assert!((g - 2.0 / 3.0 * (-b).exp()).abs() < 1e-12);
        assert_eq!(sol.metadata().eigenvalues[0], 0.0);
    }

    #[test]
    fn single_user_cdf_matches_closed_form() {
        let (lambda, c) = (0.3, 0.5);
        let sol = solve(&single(1, lambda), c).unwrap();
        let chi = lambda;
        let z1 = chi / c - 1.0 / (1.0 - c);
        let a1 = -chi / (c * (1.0 + chi));
        let pi1 = lambda / (1.0 + lambda);
        for x in [0.0, 0.3, 1.0, 4.0] {
            let f = sol.cdf(x).unwrap();
            let e = (z1 * x).exp();
            assert!((f[0] - (1.0 - pi1 + a1 * (1.0 - c) * e)).abs() < 1e-12);
            assert!((f[1] - (pi1 + a1 * c * e)).abs() < 1e-12);
        }
    }

    #[test]
    fn survivor_at_zero_exceeds_overload_mass() {
        // No storage: the deficit is positive whenever it has not yet drained,
        // so P(S > 0) = pi_1 / C here, strictly above P(load > C) = pi_1.
        let sol = solve(&single(1, 0.3), 0.5).unwrap();
        let pi1 = 0.3 / 1.3;
        let g0 = sol.survivor(0.0).unwrap();
        assert!((g0 - pi1 / 0.5).abs() < 1e-12);
        assert!(g0 > pi1);
    }

    #[test]
    fn boundary_conditions_and_tail() {
        let sol = solve(&single(10, 0.3), 2.658).unwrap();
        let f0 = sol.cdf(0.0).unwrap();
        for s in sol.drift().overload_states() {
            assert!(f0[s].abs() < 1e-13, "F_{s}(0) = {}", f0[s]);
        }
        let far = sol.cdf(500.0).unwrap();
        for (f, p) in far.iter().zip(sol.stationary()) {
            assert!((f - p).abs() < 1e-15);
        }
        assert!(sol.survivor(500.0).unwrap() < 1e-30);
        for x in [0.0, 0.5, 2.0, 7.0] {
            let total: f64 = sol.cdf(x).unwrap().iter().sum();
            assert!((total + sol.survivor(x).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_drift_is_perturbed() {
        let sol = solve(&single(4, 0.3), 2.0).unwrap();
        assert!(sol.drift().perturbed);
        assert!(sol.drift().grid_power > 2.0);
        assert_eq!(sol.mode_count(), 2);
        let nearby = solve(&single(4, 0.3), 2.0 + 1e-6).unwrap();
        for x in [0.0, 1.0, 3.0] {
            let (a, b) = (sol.survivor(x).unwrap(), nearby.survivor(x).unwrap());
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn errors() {
        let model = single(3, 0.3);
        assert!(matches!(solve(&model, 0.5), Err(Error::Stability { .. })));
        let sol = solve(&model, 1.5).unwrap();
        assert!(matches!(sol.survivor(-1.0), Err(Error::Domain { .. })));
        assert!(sol.cdf(-0.1).is_err());
        let full = solve(&model, 3.5).unwrap();
        assert_eq!(full.mode_count(), 0);
        assert_eq!(full.survivor(0.0).unwrap(), 0.0);
    }

    #[test]
    fn metadata_serializes() {
        let sol = solve(&single(6, 0.4), 2.1).unwrap();
        let json = sol.metadata().to_json();
        let back: SolverMetadata = serde_json::from_str(&json).unwrap();
        assert_eq!(back, *sol.metadata());
        assert_eq!(back.eigenvalues.len(), sol.mode_count() + 1);
    }

    /// Eigenvalues of the lumped `N`-source chain from the product structure:
    /// a mode with `j` sources on the upper branch of the per-source 2x2
    /// problem solves `j s_+(z) + (N - j) s_-(z) = -z c`. Squaring yields a
    /// quadratic shared by `j` and `N - j`.
    fn product_form_eigenvalues(n: usize, lambda: f64, c: f64) -> Vec<f64> {
        let h = n as f64 / 2.0;
        let mut out = Vec::new();
        for j in 0..n.div_ceil(2) {
            let k2 = (j as f64 - h).powi(2);
            let a = k2 - (h - c).powi(2);
            let b = k2 * (2.0 * (1.0 + lambda) - 4.0 * lambda) - 2.0 * h * (1.0 + lambda) * (h - c);
            let q = (k2 - h * h) * (1.0 + lambda).powi(2);
            let disc = (b * b - 4.0 * a * q).sqrt();
            out.push((-b + disc) / (2.0 * a));
            out.push((-b - disc) / (2.0 * a));
        }
        if n % 2 == 0 {
            out.push(h * (1.0 + lambda) / (c - h));
        }
        let mut neg: Vec<f64> = out.into_iter().filter(|z| *z < -1e-12).collect();
        neg.sort_by(|a, b| b.total_cmp(a));
        neg
    }

    #[test]
    fn eigenvalues_match_product_form() {
        for &(n, lambda, c) in &[(10, 0.3, 2.658), (25, 0.5, 9.7), (60, 0.3, 15.948)] {
            let sol = solve(&single(n, lambda), c).unwrap();
            let want = product_form_eigenvalues(n, lambda, c);
            assert_eq!(want.len(), sol.mode_count());
            for (a, b) in sol.eigenvalues().iter().zip(&want) {
                assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn two_class_flux_balance() {
        // Summing the ODE over states gives sum_s d_s F_s(x) = sum_s d_s pi_s.
        let pop = Population::new(
            vec![
                ConsumerClass::new(0.5, 1.0, 0.5).unwrap(),
                ConsumerClass::new(0.7, 1.3, 1.0).unwrap(),
            ],
            vec![6, 4],
        )
        .unwrap();
        let model = build_generator_multi(&pop).unwrap();
        let sol = solve(&model, 3.1).unwrap();
        let d = &sol.drift().drifts;
        let mean_drift: f64 = d.iter().zip(sol.stationary()).map(|(a, b)| a * b).sum();
        for x in [0.0, 0.7, 3.0] {
            let f = sol.cdf(x).unwrap();
            let flux: f64 = d.iter().zip(&f).map(|(a, b)| a * b).sum();
            assert!((flux - mean_drift).abs() < 1e-12);
        }
        let norm = sol.metadata().generator_norm;
        assert!(sol.metadata().residuals.iter().all(|r| *r <= 1e-8 * norm));
    }

    #[test]
    fn large_population_is_well_conditioned() {
        // 351 states, pi spans ~220 orders of magnitude.
        let sol = solve(&single(350, 0.3), 0.2658 * 350.0).unwrap();
        assert_eq!(sol.mode_count(), 257);
        assert!(sol.metadata().condition_number < 1e3);
        // frozen from a 600-digit evaluation of the product-form solution
        let reference = [
            (0.0, 0.10859143226),
            (1.0, 0.0473277362978),
            (7.0, 0.00627260433367),
            (10.0, 0.00276840001183),
        ];
        for (x, want) in reference {
            let got = sol.survivor(x).unwrap();
            assert!((got - want).abs() <= 1e-9 * want.max(1e-3), "x={x}: {got} vs {want}");
        }
    }

    fn two_class(counts: [usize; 2]) -> FluidModel {
        let pop = Population::new(
            vec![
                ConsumerClass::new(0.5, 1.0, 0.5).unwrap(),
                ConsumerClass::new(0.7, 1.3, 1.0).unwrap(),
            ],
            counts.to_vec(),
        )
        .unwrap();
        build_generator_multi(&pop).unwrap()
    }

    #[test]
    fn separable_and_dense_agree() {
        let cases = [(single(40, 0.3), 13.0), (two_class([6, 4]), 3.1), (two_class([20, 12]), 9.3)];
        for (model, c) in &cases {
            let fast = solve(model, *c).unwrap();
            let dense = solve_dense(model, *c).unwrap();
            assert_eq!(fast.mode_count(), dense.mode_count());
            for (a, b) in fast.eigenvalues().iter().zip(dense.eigenvalues()) {
                assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0), "{a} vs {b}");
            }
            for x in [0.0, 0.5, 2.0, 6.0] {
                let (a, b) = (fast.survivor(x).unwrap(), dense.survivor(x).unwrap());
                assert!((a - b).abs() <= 1e-9 + 1e-7 * b, "x={x}: {a} vs {b}");
                let fa = fast.cdf(x).unwrap();
                let fb = dense.cdf(x).unwrap();
                for (p, q) in fa.iter().zip(&fb) {
                    assert!((p - q).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn separable_eigenvectors_solve_the_fluid_equation() {
        let model = two_class([8, 5]);
        let sol = solve(&model, 4.2).unwrap();
        let d = &sol.drift().drifts;
        for i in 0..sol.mode_count() {
            let mut phi = sol.eigenvector(i);
            let peak = phi.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            phi.iter_mut().for_each(|v| *v /= peak);
            let z = sol.eigenvalues()[i];
            let mut acc: Vec<f64> = (0..model.len())
                .map(|s| phi[s] * (model.diagonal()[s] - z * d[s]))
                .collect();
            for (s, p) in phi.iter().enumerate() {
                for &(t, r) in model.transitions(s) {
                    acc[t] += p * r;
                }
            }
            assert!(acc.iter().all(|v| v.abs() < 1e-9), "mode {i}");
        }
    }

    #[test]
    fn dense_solver_rejects_large_chains() {
        let model = single(DENSE_STATE_CAP, 0.3);
        assert!(matches!(
            solve_dense(&model, 0.5 * DENSE_STATE_CAP as f64),
            Err(Error::Capacity { .. })
        ));
    }
}
