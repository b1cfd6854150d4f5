//! Lattice points and the periodic torus `(Z/LZ)^d` carrying the environment.
//!
//! Walker positions live in `Z^d` and are never wrapped; only reads of the
//! environment are reduced modulo the side length.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported lattice dimension.
pub const MAX_DIM: usize = 3;

/// A point (or offset) of `Z^d`; coordinates beyond the dimension are zero.
pub type Point = [i64; MAX_DIM];

pub const ORIGIN: Point = [0; MAX_DIM];

/// Sup-norm of the first `dim` coordinates.
pub fn sup_norm(p: &Point, dim: usize) -> i64 {
    p[..dim].iter().map(|c| c.abs()).max().unwrap_or(0)
}

pub fn add(a: &Point, b: &Point) -> Point {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: &Point, b: &Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// All points with sup-norm at most `radius`, in lexicographic order.
pub fn ball(dim: usize, radius: i64) -> Vec<Point> {
    let mut out = vec![ORIGIN];
    for axis in 0..dim {
        let mut next = Vec::with_capacity(out.len() * (2 * radius as usize + 1));
        for p in &out {
            for c in -radius..=radius {
                let mut q = *p;
                q[axis] = c;
                next.push(q);
            }
        }
        out = next;
    }
    out
}

/// Torus of side `side` in dimension `dim`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    dim: usize,
    side: usize,
}

impl Geometry {
    pub fn new(dim: usize, side: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::Geometry(format!("dimension {dim} outside 1..={MAX_DIM}")));
        }
        if side < 3 {
            return Err(Error::Geometry(format!("side {side} must be at least 3")));
        }
        if (side as u128).pow(dim as u32) > u32::MAX as u128 {
            return Err(Error::Geometry("torus too large".into()));
        }
        Ok(Geometry { dim, side })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn num_sites(&self) -> usize {
        self.side.pow(self.dim as u32)
    }

    /// Site index of a point of `Z^d`, reduced modulo the side.
    #[inline]
    pub fn site_index(&self, p: &Point) -> usize {
        let l = self.side as i64;
        let mut idx = 0usize;
        for axis in (0..self.dim).rev() {
            idx = idx * self.side + p[axis].rem_euclid(l) as usize;
        }
        idx
    }

    /// Representative of a site with coordinates in `0..side`.
    pub fn site_point(&self, mut idx: usize) -> Point {
        let mut p = ORIGIN;
        for c in p.iter_mut().take(self.dim) {
            *c = (idx % self.side) as i64;
            idx /= self.side;
        }
        p
    }

    /// Representative of a site with coordinates in `(-side/2, side/2]`.
    pub fn centered_point(&self, idx: usize) -> Point {
        let l = self.side as i64;
        let mut p = self.site_point(idx);
        for c in p.iter_mut().take(self.dim) {
            if *c > l / 2 {
                *c -= l;
            }
        }
        p
    }

    /// Sup-norm distance on the torus.
    pub fn wrap_norm(&self, p: &Point) -> i64 {
        let l = self.side as i64;
        p[..self.dim]
            .iter()
            .map(|c| {
                let r = c.rem_euclid(l);
                r.min(l - r)
            })
            .max()
            .unwrap_or(0)
    }

    /// Table mapping site `q` to site `q + z`.
    pub fn shift_table(&self, z: &Point) -> Vec<usize> {
        (0..self.num_sites())
            .map(|i| self.site_index(&add(&self.site_point(i), z)))
            .collect()
    }

    /// Rejects offsets whose sup-norm radius would alias through the wrap.
    pub fn check_radius(&self, radius: i64) -> Result<()> {
        if 2 * radius >= self.side as i64 {
            return Err(Error::WrapAmbiguity { radius, side: self.side });
        }
        Ok(())
    }

    /// Total order on sites: wrap-norm shell first, then lexicographic in
    /// centered coordinates. The origin comes first.
    pub fn site_order(&self) -> Vec<usize> {
        let mut sites: Vec<usize> = (0..self.num_sites()).collect();
        sites.sort_by_key(|&i| {
            let c = self.centered_point(i);
            (sup_norm(&c, self.dim), c)
        });
        sites
    }
}
