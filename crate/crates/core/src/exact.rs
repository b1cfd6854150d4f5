//! Exact transition operators on small tori.
//!
//! Configurations are enumerated by `Σ_s θ[s] m^s` (site 0 least significant).
//! The shift convention is `(τ^z θ)^q = θ^{q+z}`, so the environment seen from
//! a walker at `x` is `τ^x θ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Geometry, Point, ORIGIN};
use crate::lattice::{dobrushin_constants, EnvDynamics, EnvKernel, EnvState};
use crate::walker::WalkModel;

pub const DEFAULT_STATE_CAP: usize = 4096;
/// Largest matrix for which the full spectrum is computed.
pub const SPECTRUM_CAP: usize = 1024;
pub const POWER_TOL: f64 = 1e-12;
pub const POWER_MAX_ITER: usize = 1_000_000;

pub fn state_count(symbols: usize, sites: usize) -> u128 {
    (symbols as u128).checked_pow(sites as u32).unwrap_or(u128::MAX)
}

fn checked_states(symbols: usize, geom: &Geometry, cap: usize) -> Result<usize> {
    let n = state_count(symbols, geom.num_sites());
    if n > cap as u128 {
        return Err(Error::StateCap { states: n, cap });
    }
    Ok(n as usize)
}

/// `perm[i]` is the index of `τ^z θ_i`.
pub fn shift_permutation(geom: &Geometry, symbols: usize, z: &Point) -> Vec<usize> {
    let table = geom.shift_table(z);
    let n = state_count(symbols, geom.num_sites()) as usize;
    let mut shifted = vec![0u8; geom.num_sites()];
    (0..n)
        .map(|i| {
            let s = EnvState::from_index(i, symbols, geom.num_sites());
            for (q, out) in shifted.iter_mut().enumerate() {
                *out = s.sites[table[q]];
            }
            EnvState::new(shifted.clone()).index(symbols)
        })
        .collect()
}

/// Row of the product kernel: `⊗_s law_s` in enumeration order.
fn product_row(laws: &[Vec<f64>], out: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    for law in laws {
        let len = out.len();
        let mut next = Vec::with_capacity(len * law.len());
        for p in law {
            next.extend(out.iter().map(|r| r * p));
        }
        *out = next;
    }
}

pub(crate) fn site_laws(dynamics: &EnvDynamics, state: &[u8]) -> Vec<Vec<f64>> {
    let geom = dynamics.geometry();
    let kernel = dynamics.kernel();
    let mut local = vec![0u8; kernel.offsets().len()];
    (0..geom.num_sites())
        .map(|s| {
            let x = geom.site_point(s);
            for (l, q) in local.iter_mut().zip(kernel.offsets()) {
                *l = state[geom.site_index(&crate::geometry::add(&x, q))];
            }
            kernel.site_law(&local)
        })
        .collect()
}

/// `K(θ, θ') = ∏_q K(τ^q θ, θ'^q)`.
pub fn build_env_operator(kernel: &EnvKernel, geom: &Geometry, cap: usize) -> Result<DMatrix<f64>> {
    let m = kernel.symbols();
    let n = checked_states(m, geom, cap)?;
    let dynamics = EnvDynamics::new(kernel, geom)?;
    let mut k = DMatrix::zeros(n, n);
    let mut row = Vec::with_capacity(n);
    for i in 0..n {
        let s = EnvState::from_index(i, m, geom.num_sites());
        product_row(&site_laws(&dynamics, &s.sites), &mut row);
        for (j, v) in row.iter().enumerate() {
            k[(i, j)] = *v;
        }
    }
    Ok(k)
}

/// Step laws `π(ω)` for every enumerated configuration, walker at the origin.
pub fn step_laws(model: &WalkModel, geom: &Geometry) -> Vec<Vec<f64>> {
    let m = model.symbols();
    let n = state_count(m, geom.num_sites()) as usize;
    (0..n)
        .map(|i| {
            let s = EnvState::from_index(i, m, geom.num_sites());
            model.probs_for_key(model.key_at(&s.sites, geom, &ORIGIN)).to_vec()
        })
        .collect()
}

/// `S(ω, ω'') = Σ_z π_z(ω) K(ω, τ^{−z} ω'')`, from a prebuilt `K`.
pub fn seen_from_env(env: &DMatrix<f64>, model: &WalkModel, geom: &Geometry) -> DMatrix<f64> {
    let m = model.symbols();
    let n = env.nrows();
    let perms: Vec<Vec<usize>> = model.steps().iter().map(|z| shift_permutation(geom, m, z)).collect();
    let laws = step_laws(model, geom);
    let mut s = DMatrix::zeros(n, n);
    for i in 0..n {
        for (zi, perm) in perms.iter().enumerate() {
            let p = laws[i][zi];
            if p == 0.0 {
                continue;
            }
            for j in 0..n {
                s[(i, perm[j])] += p * env[(i, j)];
            }
        }
    }
    s
}

pub fn build_seen_operator(kernel: &EnvKernel, model: &WalkModel, geom: &Geometry, cap: usize) -> Result<DMatrix<f64>> {
    check_walk(kernel, model, geom)?;
    let env = build_env_operator(kernel, geom, cap)?;
    Ok(seen_from_env(&env, model, geom))
}

fn check_walk(kernel: &EnvKernel, model: &WalkModel, geom: &Geometry) -> Result<()> {
    if model.dim() != geom.dim() || model.symbols() != kernel.symbols() {
        return Err(Error::Walk("walk does not match kernel or geometry".into()));
    }
    geom.check_radius(model.range())
}

pub fn max_row_sum_error(matrix: &DMatrix<f64>) -> f64 {
    matrix.row_iter().map(|r| (r.sum() - 1.0).abs()).fold(0.0, f64::max)
}

fn left_apply(mu: &[f64], matrix: &DMatrix<f64>, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (i, &w) in mu.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (o, k) in out.iter_mut().zip(matrix.row(i).iter()) {
            *o += w * k;
        }
    }
}

fn power_iterate(matrix: &DMatrix<f64>, mut mu: Vec<f64>, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let mut next = vec![0.0; mu.len()];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        left_apply(&mu, matrix, &mut next);
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= total);
        residual = mu.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut mu, &mut next);
        if residual <= tol {
            return Ok(mu);
        }
    }
    Err(Error::NoConvergence { iterations: max_iter, residual })
}

/// Eigenvalue moduli in decreasing order.
pub fn spectrum_moduli(matrix: &DMatrix<f64>) -> Result<Vec<f64>> {
    let schur = matrix
        .clone()
        .try_schur(1e-14, 100_000)
        .ok_or_else(|| Error::NoConvergence { iterations: 100_000, residual: f64::NAN })?;
    let mut moduli: Vec<f64> = schur.complex_eigenvalues().iter().map(|c| c.norm()).collect();
    moduli.sort_by(|a, b| b.total_cmp(a));
    Ok(moduli)
}

/// Left fixed vector of a row-stochastic matrix by power iteration. Uniqueness
/// is checked on the spectrum for small matrices and by agreement of two
/// starts otherwise.
pub fn stationary_distribution(matrix: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = matrix.nrows();
    if n == 0 || matrix.ncols() != n {
        return Err(Error::InvalidArgument("matrix must be square and nonempty".into()));
    }
    if max_row_sum_error(matrix) > 1e-10 || matrix.iter().any(|v| *v < -1e-15) {
        return Err(Error::InvalidArgument("matrix is not row-stochastic".into()));
    }
    let mu = power_iterate(matrix, vec![1.0 / n as f64; n], tol, max_iter)?;
    if n <= SPECTRUM_CAP {
        let moduli = spectrum_moduli(matrix)?;
        if moduli.len() > 1 && moduli[1] > 1.0 - 1e-9 {
            return Err(Error::NotUnique { modulus: moduli[1] });
        }
    } else {
        let mut point = vec![0.0; n];
        point[0] = 1.0;
        let other = power_iterate(matrix, point, tol, max_iter)?;
        let gap: f64 = mu.iter().zip(&other).map(|(a, b)| (a - b).abs()).sum();
        if gap > 1e-8 {
            return Err(Error::NotUnique { modulus: 1.0 });
        }
    }
    Ok(mu)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub ratio: Vec<f64>,
    pub min: f64,
    pub max: f64,
    /// `Σ μ_e · ratio`, one up to rounding.
    pub mean_under_reference: f64,
    pub passed: bool,
}

/// `dμ/dμ_e` entrywise.
pub fn density_ratio(mu: &[f64], mu_e: &[f64]) -> Result<DensityReport> {
    if mu.len() != mu_e.len() {
        return Err(Error::InvalidArgument("measures have different lengths".into()));
    }
    if let Some(i) = mu_e.iter().position(|v| *v <= 0.0) {
        return Err(Error::InvalidArgument(format!("reference measure vanishes at configuration {i}")));
    }
    let ratio: Vec<f64> = mu.iter().zip(mu_e).map(|(a, b)| a / b).collect();
    let min = ratio.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = ratio.iter().cloned().fold(0.0, f64::max);
    let mean = ratio.iter().zip(mu_e).map(|(r, b)| r * b).sum();
    Ok(DensityReport { ratio, min, max, mean_under_reference: mean, passed: min > 0.0 })
}

/// Everything the oracle knows about one small instance.
#[derive(Debug, Clone)]
pub struct ExactModel {
    pub geom: Geometry,
    pub kernel: EnvKernel,
    pub walk: WalkModel,
    pub env_matrix: DMatrix<f64>,
    pub seen_matrix: DMatrix<f64>,
    /// `perms[z][i]` indexes `τ^z θ_i`, one table per step in `walk.steps()`.
    pub perms: Vec<Vec<usize>>,
    pub step_laws: Vec<Vec<f64>>,
    pub mu_e: Vec<f64>,
    pub mu: Vec<f64>,
    /// Local drift `g(ω) = Σ_z z π_z(ω)`, `n × d`.
    pub g: DMatrix<f64>,
    /// Centred Poisson solution, `n × d`.
    pub h: DMatrix<f64>,
    pub v: Vec<f64>,
    pub sigma2: DMatrix<f64>,
    pub poisson_residual: f64,
}

impl ExactModel {
    pub fn build(kernel: &EnvKernel, walk: &WalkModel, geom: &Geometry, cap: usize) -> Result<Self> {
        check_walk(kernel, walk, geom)?;
        let env_matrix = build_env_operator(kernel, geom, cap)?;
        let seen_matrix = seen_from_env(&env_matrix, walk, geom);
        let mu_e = stationary_distribution(&env_matrix, POWER_TOL, POWER_MAX_ITER)?;
        let mu = stationary_distribution(&seen_matrix, POWER_TOL, POWER_MAX_ITER)?;
        let m = kernel.symbols();
        let perms = walk.steps().iter().map(|z| shift_permutation(geom, m, z)).collect();
        let laws = step_laws(walk, geom);
        let d = geom.dim();
        let n = env_matrix.nrows();
        let g = DMatrix::from_fn(n, d, |i, c| walk.steps().iter().zip(&laws[i]).map(|(z, p)| z[c] as f64 * p).sum());
        let mut model = ExactModel {
            geom: *geom,
            kernel: kernel.clone(),
            walk: walk.clone(),
            env_matrix,
            seen_matrix,
            perms,
            step_laws: laws,
            mu_e,
            mu,
            g,
            h: DMatrix::zeros(n, d),
            v: vec![0.0; d],
            sigma2: DMatrix::zeros(d, d),
            poisson_residual: 0.0,
        };
        let (v, h, residual) = model.solve_poisson()?;
        model.v = v;
        model.h = h;
        model.poisson_residual = residual;
        model.sigma2 = model.martingale_covariance();
        Ok(model)
    }

    pub fn n_states(&self) -> usize {
        self.env_matrix.nrows()
    }

    pub fn mu_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.mu)
    }

    /// Centred local drift `g − v`.
    pub fn centred_drift(&self) -> DMatrix<f64> {
        let mut g0 = self.g.clone();
        for (c, v) in self.v.iter().enumerate() {
            g0.column_mut(c).add_scalar_mut(-v);
        }
        g0
    }

    fn solve_poisson(&self) -> Result<(Vec<f64>, DMatrix<f64>, f64)> {
        let n = self.n_states();
        let mu = self.mu_vector();
        let v: Vec<f64> = (0..self.geom.dim()).map(|c| mu.dot(&self.g.column(c))).collect();
        let mut g0 = self.g.clone();
        for (c, vc) in v.iter().enumerate() {
            g0.column_mut(c).add_scalar_mut(-vc);
        }
        // (I − S + 1 μᵀ) h = g₀ has the centred Poisson solution as its unique root.
        let a = DMatrix::identity(n, n) - &self.seen_matrix + DVector::from_element(n, 1.0) * mu.transpose();
        let lu = a.lu();
        let h = lu.solve(&g0).ok_or_else(|| Error::Singular("I − S has no spectral gap on centred functions".into()))?;
        let resid = (&h - &self.seen_matrix * &h - &g0).abs().max();
        Ok((v, h, resid))
    }

    fn martingale_covariance(&self) -> DMatrix<f64> {
        let d = self.geom.dim();
        let n = self.n_states();
        let sh = &self.seen_matrix * &self.h;
        let mut sigma = DMatrix::zeros(d, d);
        let mut inc = vec![0.0; d];
        for w in 0..n {
            if self.mu[w] == 0.0 {
                continue;
            }
            for (zi, z) in self.walk.steps().iter().enumerate() {
                let pz = self.step_laws[w][zi];
                if pz == 0.0 {
                    continue;
                }
                for w1 in 0..n {
                    let k = self.env_matrix[(w, w1)];
                    if k == 0.0 {
                        continue;
                    }
                    let target = self.perms[zi][w1];
                    for c in 0..d {
                        inc[c] = z[c] as f64 - self.g[(w, c)] + self.h[(target, c)] - sh[(w, c)];
                    }
                    let weight = self.mu[w] * pz * k;
                    for a in 0..d {
                        for b in 0..d {
                            sigma[(a, b)] += weight * inc[a] * inc[b];
                        }
                    }
                }
            }
        }
        sigma
    }

    /// `max_i |μ(S f) − μ(f)|` over the supplied test functions.
    pub fn stationarity_error(&self, functions: &[DVector<f64>]) -> f64 {
        let mu = self.mu_vector();
        functions
            .iter()
            .map(|f| (mu.dot(&(&self.seen_matrix * f)) - mu.dot(f)).abs())
            .fold(0.0, f64::max)
    }

    /// Largest `|K(Pi, Pj) − K(i, j)|` over unit shifts along every axis.
    pub fn shift_commutation_error(&self) -> f64 {
        let m = self.kernel.symbols();
        let n = self.n_states();
        let mut worst: f64 = 0.0;
        for axis in 0..self.geom.dim() {
            let mut e = ORIGIN;
            e[axis] = 1;
            let p = shift_permutation(&self.geom, m, &e);
            for i in 0..n {
                for j in 0..n {
                    worst = worst.max((self.env_matrix[(p[i], p[j])] - self.env_matrix[(i, j)]).abs());
                }
            }
        }
        worst
    }
}

/// `(v, Σ²)` of a built model.
pub fn drift_and_sigma(exact: &ExactModel) -> (Vec<f64>, DMatrix<f64>) {
    (exact.v.clone(), exact.sigma2.clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingReport {
    pub env_moduli: Vec<f64>,
    pub seen_moduli: Vec<f64>,
    pub env_second: f64,
    pub seen_second: f64,
    pub eta0: f64,
    pub eta1: f64,
    pub env_within_eta0: bool,
    pub seen_within_eta1: bool,
}

/// Non-Perron eigenvalue moduli of `K` and `S` against `η₀` and `η₁`.
pub fn mixing_report(exact: &ExactModel) -> Result<MixingReport> {
    if exact.n_states() > SPECTRUM_CAP {
        return Err(Error::StateCap { states: exact.n_states() as u128, cap: SPECTRUM_CAP });
    }
    let env_moduli = spectrum_moduli(&exact.env_matrix)?;
    let seen_moduli = spectrum_moduli(&exact.seen_matrix)?;
    let dob = dobrushin_constants(&exact.kernel, Some(&exact.walk));
    let eta1 = dob.eta1.unwrap();
    let env_second = env_moduli.get(1).copied().unwrap_or(0.0);
    let seen_second = seen_moduli.get(1).copied().unwrap_or(0.0);
    Ok(MixingReport {
        env_within_eta0: env_second <= dob.eta0 + 1e-9,
        seen_within_eta1: seen_second <= eta1 + 1e-9,
        env_moduli,
        seen_moduli,
        env_second,
        seen_second,
        eta0: dob.eta0,
        eta1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::walker::WalkModel;

    fn geom(l: usize) -> Geometry {
        Geometry::new(1, l).unwrap()
    }

    fn uncoupled() -> EnvKernel {
        EnvKernel::new(1, vec![0.3, 0.7], vec![(ORIGIN, 0.0)], vec![vec![1.0, 0.0], vec![0.0, 1.0]], 9.0).unwrap()
    }

    #[test]
    fn uncoupled_env_matrix_is_rank_one_product() {
        let k = build_env_operator(&uncoupled(), &geom(3), DEFAULT_STATE_CAP).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let s = EnvState::from_index(j, 2, 3);
                let p: f64 = s.sites.iter().map(|&v| [0.3, 0.7][v as usize]).product();
                assert!((k[(i, j)] - p).abs() < 1e-15);
            }
        }
        let mu = stationary_distribution(&k, POWER_TOL, 10).unwrap();
        assert!((mu[7] - 0.343).abs() < 1e-12);
    }

    #[test]
    fn desk_rows_and_symmetry() {
        let model = ExactModel::build(&fixtures::desk_kernel(), &fixtures::desk_walk(), &geom(3), 4096).unwrap();
        assert!(max_row_sum_error(&model.env_matrix) < 1e-12);
        assert!(max_row_sum_error(&model.seen_matrix) < 1e-12);
        assert!(model.shift_commutation_error() < 1e-15);
        // global flip: index i ↔ 7 − i for two symbols on three sites.
        for i in 0..8 {
            assert!((model.mu_e[i] - model.mu_e[7 - i]).abs() < 1e-12);
        }
        assert!(model.poisson_residual < 1e-10);
    }

    #[test]
    fn cap_and_range_errors() {
        let big = geom(13);
        assert!(matches!(
            build_env_operator(&fixtures::desk_kernel(), &big, DEFAULT_STATE_CAP),
            Err(Error::StateCap { .. })
        ));
        let wide = WalkModel::unperturbed(1, 2, 2, vec![0.2; 5]).unwrap();
        assert!(build_seen_operator(&fixtures::desk_kernel(), &wide, &geom(4), 4096).is_err());
    }

    #[test]
    fn motionless_walk_sees_env_matrix() {
        let still = WalkModel::unperturbed(1, 2, 1, vec![0.0, 1.0, 0.0]).unwrap();
        let k = build_env_operator(&fixtures::desk_kernel(), &geom(3), 4096).unwrap();
        let s = build_seen_operator(&fixtures::desk_kernel(), &still, &geom(3), 4096).unwrap();
        assert_eq!(k, s);
    }

    #[test]
    fn unperturbed_seen_matrix_is_shifted_convolution() {
        let a = [0.2, 0.5, 0.3];
        let w = WalkModel::unperturbed(1, 2, 1, a.to_vec()).unwrap();
        let g = geom(4);
        let k = build_env_operator(&fixtures::desk_kernel(), &g, 4096).unwrap();
        let s = build_seen_operator(&fixtures::desk_kernel(), &w, &g, 4096).unwrap();
        let mut expected = DMatrix::zeros(16, 16);
        for (zi, z) in w.steps().iter().enumerate() {
            let perm = shift_permutation(&g, 2, z);
            let p = DMatrix::from_fn(16, 16, |i, j| if perm[i] == j { 1.0 } else { 0.0 });
            expected += a[zi] * &k * p;
        }
        assert!((s - expected).abs().max() < 1e-15);
    }

    #[test]
    fn doubly_stochastic_gives_uniform() {
        let m = DMatrix::from_row_slice(3, 3, &[0.5, 0.25, 0.25, 0.25, 0.5, 0.25, 0.25, 0.25, 0.5]);
        let mu = stationary_distribution(&m, 1e-14, 1000).unwrap();
        assert!(mu.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-12));
        let reducible = DMatrix::<f64>::identity(2, 2);
        assert!(matches!(stationary_distribution(&reducible, 1e-12, 100), Err(Error::NotUnique { .. })));
        let slow = DMatrix::from_row_slice(2, 2, &[0.999, 0.001, 0.002, 0.998]);
        assert!(matches!(stationary_distribution(&slow, 1e-15, 3), Err(Error::NoConvergence { .. })));
    }

    #[test]
    fn unperturbed_closed_forms() {
        let a = vec![0.2, 0.4, 0.4];
        let w = WalkModel::unperturbed(1, 2, 1, a).unwrap();
        let model = ExactModel::build(&fixtures::desk_kernel(), &w, &geom(3), 4096).unwrap();
        assert!((model.v[0] - 0.2).abs() < 1e-12);
        assert!(model.h.abs().max() < 1e-12);
        assert!((model.sigma2[(0, 0)] - (0.6 - 0.04)).abs() < 1e-12);
        let r = density_ratio(&model.mu, &model.mu_e).unwrap();
        assert!((r.min - 1.0).abs() < 1e-10 && (r.max - 1.0).abs() < 1e-10);
        assert!((r.mean_under_reference - 1.0).abs() < 1e-12);
    }

    #[test]
    fn desk_density_and_mixing() {
        let model = ExactModel::build(&fixtures::desk_kernel(), &fixtures::desk_walk(), &geom(3), 4096).unwrap();
        let r = density_ratio(&model.mu, &model.mu_e).unwrap();
        assert!(r.passed && r.min > 0.0);
        let mix = mixing_report(&model).unwrap();
        assert!(mix.seen_within_eta1 && mix.env_within_eta0, "{mix:?}");
        assert!((mix.eta1 - 0.51).abs() < 1e-12);
        assert!(density_ratio(&[0.5, 0.5], &[1.0, 0.0]).is_err());
    }
}
