//! Finite-volume lift of the environment dynamics to per-site components.
//!
//! Measures are row vectors over enumerated configurations, functions are
//! column vectors. With a product reference `m = ⊗ m_*` and the site order
//! `≺`, `J_q = m^q − m^{q₊}` where `m^q` integrates out the sites before `q`,
//! so `Σ_q J_q f = f − m(f)`. A signed measure lies in `M_q` when its marginal
//! on the sites other than `q` vanishes.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{self, state_count};
use crate::geometry::{self, Geometry};
use crate::lattice::{dobrushin_constants, EnvDynamics, EnvKernel, EnvState};
use crate::rng::StreamKey;

pub const DEFAULT_LIFT_CAP: usize = 256;

/// Row of `⊗_s factor_s` in enumeration order.
fn tensor_row(factors: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![1.0];
    for f in factors {
        let mut next = Vec::with_capacity(out.len() * f.len());
        for p in f {
            next.extend(out.iter().map(|r| r * p));
        }
        out = next;
    }
    out
}

#[derive(Debug, Clone)]
pub struct LiftBundle {
    pub geom: Geometry,
    pub symbols: usize,
    pub site_measure: Vec<f64>,
    /// `m = ⊗ m_*` as a row vector.
    pub reference: DVector<f64>,
    /// Sites in `≺` order, origin first.
    pub order: Vec<usize>,
    /// `rank[s]` is the position of site `s` in `order`.
    pub rank: Vec<usize>,
    /// Pinned symbol used for `ω_(p)`.
    pub pinned: u8,
    /// `J_q` per site (function action).
    pub j: Vec<DMatrix<f64>>,
    /// Conditional expectation integrating out site `q` alone.
    pub integrate_site: Vec<DMatrix<f64>>,
    /// `blocks[p][q]`: `K_p` on the diagonal, `K_{p,q}` elsewhere.
    pub blocks: Vec<Vec<DMatrix<f64>>>,
    pub alpha: Vec<DVector<f64>>,
    pub env_matrix: DMatrix<f64>,
    pub eta0: f64,
}

/// Component family `(c, (μ_q)_q)`; components are row vectors stored as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Lifted {
    pub c: f64,
    pub parts: Vec<DVector<f64>>,
}

impl Lifted {
    /// `max_q |μ_q|` (total variation); the scalar part is reported separately.
    pub fn component_norm(&self) -> f64 {
        self.parts.iter().map(|p| p.abs().sum()).fold(0.0, f64::max)
    }
}

/// Builds the lift with product reference `⊗ site_measure`.
pub fn lift_operators(kernel: &EnvKernel, geom: &Geometry, site_measure: &[f64], cap: usize) -> Result<LiftBundle> {
    let m = kernel.symbols();
    if site_measure.len() != m {
        return Err(Error::InvalidArgument("site measure has the wrong alphabet size".into()));
    }
    if site_measure.iter().any(|p| *p <= 0.0) || (site_measure.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument("site measure must be a strictly positive probability vector".into()));
    }
    let sites = geom.num_sites();
    let n = state_count(m, sites);
    if n > cap as u128 {
        return Err(Error::StateCap { states: n, cap });
    }
    let n = n as usize;
    let dynamics = EnvDynamics::new(kernel, geom)?;
    let env_matrix = exact::build_env_operator(kernel, geom, cap)?;
    let order = geom.site_order();
    let mut rank = vec![0; sites];
    for (r, &s) in order.iter().enumerate() {
        rank[s] = r;
    }
    let states: Vec<EnvState> = (0..n).map(|i| EnvState::from_index(i, m, sites)).collect();

    // Integrating out a set of sites T: E[θ, y] = ∏_{s∈T} m_*(y_s) · [y = θ off T].
    let integrate = |mask: &[bool]| -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |i, j| {
            let (a, b) = (&states[i].sites, &states[j].sites);
            let mut w = 1.0;
            for s in 0..sites {
                if mask[s] {
                    w *= site_measure[b[s] as usize];
                } else if a[s] != b[s] {
                    return 0.0;
                }
            }
            w
        })
    };
    let mut prefix = Vec::with_capacity(sites + 1);
    for r in 0..=sites {
        let mask: Vec<bool> = (0..sites).map(|s| rank[s] < r).collect();
        prefix.push(integrate(&mask));
    }
    let mut j = vec![DMatrix::zeros(n, n); sites];
    for (r, &q) in order.iter().enumerate() {
        j[q] = &prefix[r] - &prefix[r + 1];
    }
    let integrate_site = (0..sites)
        .map(|q| integrate(&(0..sites).map(|s| s == q).collect::<Vec<_>>()))
        .collect();

    let pinned = 0u8;
    let laws: Vec<Vec<Vec<f64>>> = states.iter().map(|s| exact::site_laws(&dynamics, &s.sites)).collect();
    let pinned_laws: Vec<Vec<Vec<Vec<f64>>>> = (0..sites)
        .map(|p| {
            states
                .iter()
                .map(|s| {
                    let mut w = s.sites.clone();
                    w[p] = pinned;
                    exact::site_laws(&dynamics, &w)
                })
                .collect()
        })
        .collect();
    let mut blocks = vec![vec![DMatrix::zeros(n, n); sites]; sites];
    for p in 0..sites {
        let pp = geom.site_point(p);
        let key = |q: usize| rank[geom.site_index(&geometry::sub(&geom.site_point(q), &pp))];
        for q in 0..sites {
            for i in 0..n {
                let a = &laws[i];
                let b = &pinned_laws[p][i];
                let factors: Vec<Vec<f64>> = (0..sites)
                    .map(|s| {
                        if s == p {
                            a[s].clone()
                        } else if q == p || key(s) < key(q) {
                            b[s].clone()
                        } else if s == q {
                            a[s].iter().zip(&b[s]).map(|(x, y)| x - y).collect()
                        } else {
                            a[s].clone()
                        }
                    })
                    .collect();
                for (jj, v) in tensor_row(&factors).into_iter().enumerate() {
                    blocks[p][q][(i, jj)] = v;
                }
            }
        }
    }
    let reference = DVector::from_iterator(n, states.iter().map(|s| s.sites.iter().map(|&v| site_measure[v as usize]).product()));
    let mk = env_matrix.tr_mul(&reference);
    let alpha = (0..sites).map(|q| j[q].tr_mul(&mk)).collect();
    let eta0 = dobrushin_constants(kernel, None).eta0;
    Ok(LiftBundle {
        geom: *geom,
        symbols: m,
        site_measure: site_measure.to_vec(),
        reference,
        order,
        rank,
        pinned,
        j,
        integrate_site,
        blocks,
        alpha,
        env_matrix,
        eta0,
    })
}

impl LiftBundle {
    pub fn n_states(&self) -> usize {
        self.reference.len()
    }

    pub fn n_sites(&self) -> usize {
        self.j.len()
    }

    /// `Ψμ = (μ(1), (μ̂ J_q)_q)` with `μ̂ = μ − μ(1) m`.
    pub fn psi(&self, mu: &DVector<f64>) -> Lifted {
        let c = mu.sum();
        let hat = mu - &self.reference * c;
        Lifted { c, parts: self.j.iter().map(|jq| jq.tr_mul(&hat)).collect() }
    }

    /// `Pr(c, x) = c m + Σ_q x_q`.
    pub fn pr(&self, lifted: &Lifted) -> DVector<f64> {
        let mut out = &self.reference * lifted.c;
        for p in &lifted.parts {
            out += p;
        }
        out
    }

    /// `(Aμ̄)_q = K_q' μ_q + Σ_{p≠q} K_{p,q}' μ_p`.
    pub fn apply_a(&self, parts: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let n = self.n_states();
        (0..self.n_sites())
            .map(|q| {
                let mut out = DVector::zeros(n);
                for (p, x) in parts.iter().enumerate() {
                    out += self.blocks[p][q].tr_mul(x);
                }
                out
            })
            .collect()
    }

    /// `K̄μ̄ = (c, c ᾱ + Aμ̄)`.
    pub fn apply_lifted(&self, lifted: &Lifted) -> Lifted {
        let mut parts = self.apply_a(&lifted.parts);
        for (p, a) in parts.iter_mut().zip(&self.alpha) {
            *p += a * lifted.c;
        }
        Lifted { c: lifted.c, parts }
    }

    /// Largest `|ν(f)|` over the sites-other-than-`q` marginal, per component.
    pub fn membership_error(&self, parts: &[DVector<f64>]) -> f64 {
        parts
            .iter()
            .enumerate()
            .map(|(q, x)| self.integrate_site[q].tr_mul(x).abs().max())
            .fold(0.0, f64::max)
    }

    /// Random member of `M_p`: `ρ(I − E_p)` with `ρ` uniform on `[−1, 1]^n`.
    pub fn random_component<R: Rng>(&self, p: usize, rng: &mut R) -> DVector<f64> {
        let n = self.n_states();
        let rho = DVector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        &rho - self.integrate_site[p].tr_mul(&rho)
    }

    /// `(1 − A)^{-1} ᾱ` by the Neumann series. `A` preserves the `M_q`
    /// subspaces but not their complement, where `1 − A` can be singular, so
    /// a dense solve over all stacked vectors is not used.
    pub fn fixed_point(&self, tol: f64, max_iter: usize) -> Result<Vec<DVector<f64>>> {
        let mut x = self.alpha.clone();
        for _ in 0..max_iter {
            let mut next = self.apply_a(&x);
            for (nq, a) in next.iter_mut().zip(&self.alpha) {
                *nq += a;
            }
            let change = next.iter().zip(&x).map(|(a, b)| (a - b).abs().sum()).fold(0.0, f64::max);
            x = next;
            if change <= tol {
                return Ok(x);
            }
        }
        Err(Error::NoConvergence { iterations: max_iter, residual: f64::NAN })
    }

    /// Half the largest row distance of each block between configurations
    /// that differ only at its source site, summed over sources per target.
    pub fn column_bounds(&self) -> Vec<f64> {
        let n = self.n_states();
        let s = self.n_sites();
        let m = self.symbols;
        let stride: Vec<usize> = (0..s).map(|p| m.pow(p as u32)).collect();
        let block_norm = |p: usize, q: usize| -> f64 {
            let b = &self.blocks[p][q];
            let mut worst: f64 = 0.0;
            for i in 0..n {
                let digit = (i / stride[p]) % m;
                if digit != 0 {
                    continue;
                }
                for a in 0..m {
                    for a2 in (a + 1)..m {
                        let (r1, r2) = (i + a * stride[p], i + a2 * stride[p]);
                        let d: f64 = (0..n).map(|c| (b[(r1, c)] - b[(r2, c)]).abs()).sum();
                        worst = worst.max(d / 2.0);
                    }
                }
            }
            worst
        };
        (0..s).map(|q| (0..s).map(|p| block_norm(p, q)).sum()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftReport {
    pub states: usize,
    pub sites: usize,
    pub eta0: f64,
    pub telescoping_error: f64,
    pub projection_error: f64,
    pub membership_error: f64,
    pub covering_error: f64,
    pub fixed_point_error: f64,
    pub probes: usize,
    pub max_probe_ratio: f64,
    pub column_bound: f64,
    pub probes_within_eta0: bool,
    pub column_bound_within_eta0: bool,
}

/// Runs every lift check with `trials` random functions/measures and `probes`
/// random component families.
pub fn verify_lift(bundle: &LiftBundle, mu_e: &[f64], trials: usize, probes: usize, key: StreamKey) -> LiftReport {
    let n = bundle.n_states();
    let s = bundle.n_sites();
    let mut rng = key.chacha();
    let mut telescoping: f64 = 0.0;
    let mut projection: f64 = 0.0;
    let mut membership: f64 = 0.0;
    let mut covering: f64 = 0.0;
    let jsum = bundle.j.iter().fold(DMatrix::zeros(n, n), |acc, jq| acc + jq);
    for _ in 0..trials {
        let f = DVector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let mf = bundle.reference.dot(&f);
        telescoping = telescoping.max((&jsum * &f - (&f - DVector::from_element(n, mf))).abs().max());
        let mu = DVector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let lifted = bundle.psi(&mu);
        projection = projection.max((bundle.pr(&lifted) - &mu).abs().max());
        membership = membership.max(bundle.membership_error(&lifted.parts));
        let stepped = bundle.apply_lifted(&lifted);
        membership = membership.max(bundle.membership_error(&stepped.parts));
        covering = covering.max((bundle.pr(&stepped) - bundle.env_matrix.tr_mul(&mu)).abs().max());
    }
    let mut max_ratio: f64 = 0.0;
    for _ in 0..probes {
        let mut parts: Vec<DVector<f64>> = (0..s).map(|p| bundle.random_component(p, &mut rng)).collect();
        let scale = parts.iter().map(|p| p.abs().sum()).fold(0.0, f64::max);
        for p in parts.iter_mut() {
            *p /= scale;
        }
        let image = Lifted { c: 0.0, parts: bundle.apply_a(&parts) };
        max_ratio = max_ratio.max(image.component_norm());
    }
    let fixed_point_error = match bundle.fixed_point(1e-15, 10_000) {
        Ok(x) => {
            let rebuilt = bundle.pr(&Lifted { c: 1.0, parts: x });
            rebuilt.iter().zip(mu_e).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        }
        Err(_) => f64::INFINITY,
    };
    let column_bound = bundle.column_bounds().into_iter().fold(0.0, f64::max);
    LiftReport {
        states: n,
        sites: s,
        eta0: bundle.eta0,
        telescoping_error: telescoping,
        projection_error: projection,
        membership_error: membership,
        covering_error: covering,
        fixed_point_error,
        probes,
        max_probe_ratio: max_ratio,
        column_bound,
        probes_within_eta0: max_ratio <= bundle.eta0 + 1e-12,
        column_bound_within_eta0: column_bound <= bundle.eta0 + 1e-12,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{stationary_distribution, POWER_MAX_ITER, POWER_TOL};
    use crate::fixtures;
    use crate::geometry::ORIGIN;

    #[test]
    fn uncoupled_lift_has_zero_coupling() {
        let k = EnvKernel::new(1, vec![0.4, 0.6], vec![(ORIGIN, 0.0)], vec![vec![1.0, 0.0], vec![0.0, 1.0]], 9.0).unwrap();
        let g = Geometry::new(1, 3).unwrap();
        let bundle = lift_operators(&k, &g, &[0.4, 0.6], DEFAULT_LIFT_CAP).unwrap();
        let mut rng = StreamKey::from_seed(1).chacha();
        for p in 0..3 {
            for q in 0..3 {
                if p != q {
                    assert!(bundle.blocks[p][q].abs().max() < 1e-15);
                }
            }
            let x = bundle.random_component(p, &mut rng);
            assert!(bundle.blocks[p][p].tr_mul(&x).abs().max() < 1e-15);
        }
    }

    #[test]
    fn desk_lift_identities() {
        let k = fixtures::desk_kernel();
        let g = Geometry::new(1, 3).unwrap();
        let bundle = lift_operators(&k, &g, k.base(), DEFAULT_LIFT_CAP).unwrap();
        assert_eq!(bundle.order[0], 0);
        let env = exact::build_env_operator(&k, &g, 64).unwrap();
        let mu_e = stationary_distribution(&env, POWER_TOL, POWER_MAX_ITER).unwrap();
        let r = verify_lift(&bundle, &mu_e, 50, 200, StreamKey::from_seed(4));
        assert!(r.telescoping_error < 1e-12 && r.projection_error < 1e-12, "{r:?}");
        assert!(r.membership_error < 1e-12 && r.covering_error < 1e-12, "{r:?}");
        assert!(r.fixed_point_error < 1e-8, "{r:?}");
        assert!(r.probes_within_eta0 && r.column_bound_within_eta0, "{r:?}");
    }

    #[test]
    fn lift_rejects_bad_reference_and_cap() {
        let k = fixtures::desk_kernel();
        let g = Geometry::new(1, 3).unwrap();
        assert!(lift_operators(&k, &g, &[1.0, 0.0], DEFAULT_LIFT_CAP).is_err());
        let big = Geometry::new(1, 9).unwrap();
        assert!(matches!(lift_operators(&k, &big, k.base(), DEFAULT_LIFT_CAP), Err(Error::StateCap { .. })));
    }
}
