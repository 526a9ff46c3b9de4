//! Uniform k- and t-meshes.
//!
//! k-nodes sit at fractional dual coordinates s_i = −½ + j_i/n_i, so an even n_i puts a node at k = 0
//! and the mesh is closed under k → −k (modulo a dual-lattice shift at the zone edge).
//! Node order is lexicographic in (t, k_1, …, k_d) with the last k axis fastest.

use crate::model::Lattice;

#[derive(Clone, Debug, PartialEq)]
pub struct KMesh {
    lattice: Lattice,
    n: Vec<usize>,
}

/// A neighbouring node together with the dual-lattice shift needed to reach the true point:
/// k(from) + step = k(node) + Σ shift_i γ*_i.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Neighbor {
    pub node: usize,
    pub shift: Vec<i32>,
}

impl KMesh {
    pub fn new(lattice: &Lattice, n: &[usize]) -> KMesh {
        assert_eq!(n.len(), lattice.dim(), "one mesh size per dimension");
        assert!(n.iter().all(|&x| x >= 1));
        KMesh { lattice: lattice.clone(), n: n.to_vec() }
    }

    pub fn uniform(lattice: &Lattice, n: usize) -> KMesh {
        KMesh::new(lattice, &vec![n; lattice.dim()])
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn dim(&self) -> usize {
        self.n.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.n
    }

    pub fn len(&self) -> usize {
        self.n.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn coords(&self, mut idx: usize) -> Vec<usize> {
        let mut j = vec![0; self.dim()];
        for axis in (0..self.dim()).rev() {
            j[axis] = idx % self.n[axis];
            idx /= self.n[axis];
        }
        j
    }

    pub fn index(&self, j: &[usize]) -> usize {
        j.iter().zip(&self.n).fold(0, |acc, (&x, &n)| acc * n + x)
    }

    pub fn fractional(&self, idx: usize) -> Vec<f64> {
        self.coords(idx).iter().zip(&self.n).map(|(&j, &n)| -0.5 + j as f64 / n as f64).collect()
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        self.lattice.from_fractional(&self.fractional(idx))
    }

    /// Quadrature weight |Y*|/N of each node.
    pub fn weight(&self) -> f64 {
        self.lattice.zone_volume() / self.len() as f64
    }

    /// Neighbour one step along `axis` in direction `dir` (±1), with wrap-around shift.
    pub fn neighbor(&self, idx: usize, axis: usize, dir: i32) -> Neighbor {
        let mut j = self.coords(idx);
        let n = self.n[axis] as i64;
        let moved = j[axis] as i64 + dir as i64;
        let wrapped = moved.rem_euclid(n);
        let mut shift = vec![0; self.dim()];
        shift[axis] = ((moved - wrapped) / n) as i32;
        j[axis] = wrapped as usize;
        Neighbor { node: self.index(&j), shift }
    }

    /// Node at −k together with its shift: −k(idx) = k(node) + Σ shift_i γ*_i.
    pub fn mirror(&self, idx: usize) -> Option<Neighbor> {
        if !self.is_symmetric() {
            return None;
        }
        let j = self.coords(idx);
        let mut m = vec![0; self.dim()];
        let mut shift = vec![0; self.dim()];
        for axis in 0..self.dim() {
            let n = self.n[axis];
            m[axis] = (n - j[axis]) % n;
            if j[axis] == 0 {
                shift[axis] = 1;
            }
        }
        Some(Neighbor { node: self.index(&m), shift })
    }

    pub fn is_symmetric(&self) -> bool {
        self.n.iter().all(|&n| n % 2 == 0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TMesh {
    n: usize,
    period: f64,
    periodic: bool,
}

impl TMesh {
    /// n nodes on [0, T] including both endpoints.
    pub fn open(n: usize, period: f64) -> TMesh {
        assert!(n >= 2);
        TMesh { n, period, periodic: false }
    }

    /// n nodes t_j = jT/n on the circle of length T.
    pub fn periodic(n: usize, period: f64) -> TMesh {
        assert!(n >= 1);
        TMesh { n, period, periodic: true }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    pub fn step(&self) -> f64 {
        if self.periodic {
            self.period / self.n as f64
        } else {
            self.period / (self.n - 1) as f64
        }
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.step()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.time(i)).collect()
    }

    /// Node times plus the closing time T on periodic meshes.
    pub fn closed_times(&self) -> Vec<f64> {
        let mut t = self.times();
        if self.periodic {
            t.push(self.period);
        }
        t
    }

    /// Trapezoid weights of the nodes for ∫_0^T dt.
    pub fn weights(&self) -> Vec<f64> {
        let h = self.step();
        let mut w = vec![h; self.n];
        if !self.periodic {
            w[0] *= 0.5;
            w[self.n - 1] *= 0.5;
        }
        w
    }

    /// Central-difference stencil (node, coefficient) for ∂_t at node i:
    /// periodic wrap, or one-sided second order at the ends of an open mesh.
    pub fn derivative_stencil(&self, i: usize) -> Vec<(usize, f64)> {
        let h = self.step();
        let n = self.n;
        if self.periodic {
            return vec![((i + 1) % n, 0.5 / h), ((i + n - 1) % n, -0.5 / h)];
        }
        if i == 0 {
            vec![(0, -1.5 / h), (1, 2.0 / h), (2, -0.5 / h)]
        } else if i == n - 1 {
            vec![(n - 1, 1.5 / h), (n - 2, -2.0 / h), (n - 3, 0.5 / h)]
        } else {
            vec![(i + 1, 0.5 / h), (i - 1, -0.5 / h)]
        }
    }
}

/// Product mesh; node = t_index · |k-mesh| + k_index.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub k: KMesh,
    pub t: TMesh,
}

impl Mesh {
    pub fn new(k: KMesh, t: TMesh) -> Mesh {
        Mesh { k, t }
    }

    pub fn len(&self) -> usize {
        self.k.len() * self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn node(&self, ti: usize, ki: usize) -> usize {
        ti * self.k.len() + ki
    }

    pub fn split(&self, node: usize) -> (usize, usize) {
        (node / self.k.len(), node % self.k.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn one_d_nodes() {
        let m = KMesh::uniform(&Lattice::cubic(1, 1.0), 4);
        let pts: Vec<f64> = (0..4).map(|i| m.point(i)[0]).collect();
        assert!((pts[0] + PI).abs() < 1e-14 && pts[2].abs() < 1e-14);
        assert_eq!(m.neighbor(3, 0, 1), Neighbor { node: 0, shift: vec![1] });
        assert_eq!(m.neighbor(0, 0, -1), Neighbor { node: 3, shift: vec![-1] });
        assert_eq!(m.mirror(1).unwrap(), Neighbor { node: 3, shift: vec![0] });
        assert_eq!(m.mirror(0).unwrap(), Neighbor { node: 0, shift: vec![1] });
    }

    #[test]
    fn mirror_points() {
        let l = Lattice::cubic(2, 1.0);
        let m = KMesh::new(&l, &[4, 6]);
        for idx in 0..m.len() {
            let nb = m.mirror(idx).unwrap();
            let k = m.point(idx);
            let km = m.point(nb.node);
            let s = l.dual_vector(&nb.shift);
            for j in 0..2 {
                assert!((-k[j] - (km[j] + s[j])).abs() < 1e-12);
            }
        }
        assert!(KMesh::uniform(&Lattice::cubic(1, 1.0), 5).mirror(0).is_none());
    }

    #[test]
    fn stencils_differentiate_quadratics() {
        let t = TMesh::open(9, 2.0);
        for i in 0..9 {
            let d: f64 = t.derivative_stencil(i).iter().map(|&(j, w)| w * t.time(j).powi(2)).sum();
            assert!((d - 2.0 * t.time(i)).abs() < 1e-12);
        }
        let w: f64 = t.weights().iter().sum();
        assert!((w - 2.0).abs() < 1e-14);
        let p = TMesh::periodic(8, 2.0);
        assert_eq!(p.closed_times().len(), 9);
        assert!((p.weights().iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }
}
