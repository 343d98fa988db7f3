//! Matrix form of the projective quasi-interpolation `I_H = π_H ∘ Π_H^dg`.
//!
//! `Π_H^dg` is the element-wise L² projection onto bilinear functions and
//! `π_H` averages the element values at every interior coarse vertex.

use crate::fem::{q1_mass_element, LOCAL_VERTICES};
use crate::grid::{GridHierarchy, Patch};
use crate::linalg::{norm_inf, Csr};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct InterpolationMatrix<T> {
    matrix: Csr<T>,
    /// `M_K^{-1} G_K`: 4 rows (coarse vertices of `K`) by `(r+1)^2` closed
    /// fine lattice nodes of `K`. Identical for every element of a uniform mesh.
    local_block: Vec<f64>,
    /// `card{G : z ∈ closure(G)}` per coarse DOF.
    counts: Vec<usize>,
}

/// Inverse of the coarse Q1 mass matrix on an element of size `hc`.
fn coarse_mass_inverse(hc: f64) -> [[f64; 4]; 4] {
    let c = |a: usize, b: usize| if a == b { 2.0 } else { -1.0 };
    std::array::from_fn(|a| {
        std::array::from_fn(|b| {
            let (ax, ay) = LOCAL_VERTICES[a];
            let (bx, by) = LOCAL_VERTICES[b];
            (2.0 / hc) * (2.0 / hc) * c(ax, bx) * c(ay, by)
        })
    })
}

/// `M_K^{-1} G_K` with `G_K[a, i] = ∫_K φ_a λ_i`.
fn local_projection_block(grid: &GridHierarchy) -> Vec<f64> {
    let r = grid.r();
    let w = r + 1;
    let h = grid.fine_h();
    let mref = q1_mass_element::<f64>();
    // coarse shape a sampled at closed fine node (kx, ky)
    let phi = |a: usize, kx: usize, ky: usize| {
        let (vx, vy) = LOCAL_VERTICES[a];
        let sx = if vx == 1 {
            kx as f64 / r as f64
        } else {
            1.0 - kx as f64 / r as f64
        };
        let sy = if vy == 1 {
            ky as f64 / r as f64
        } else {
            1.0 - ky as f64 / r as f64
        };
        sx * sy
    };
    let mut g = vec![0.0; 4 * w * w];
    for cy in 0..r {
        for cx in 0..r {
            let ids = LOCAL_VERTICES.map(|(dx, dy)| (cx + dx, cy + dy));
            for a in 0..4 {
                for (p, &(px, py)) in ids.iter().enumerate() {
                    for (q, &(qx, qy)) in ids.iter().enumerate() {
                        // φ_a is bilinear on the fine cell, so it equals its
                        // fine interpolant and the fine mass matrix is exact.
                        g[a * w * w + qy * w + qx] += phi(a, px, py) * h * h * mref[p][q];
                    }
                }
            }
        }
    }
    let minv = coarse_mass_inverse(grid.coarse_h());
    let mut d = vec![0.0; 4 * w * w];
    for a in 0..4 {
        for b in 0..4 {
            for k in 0..w * w {
                d[a * w * w + k] += minv[a][b] * g[b * w * w + k];
            }
        }
    }
    d
}

impl<T: Scalar> InterpolationMatrix<T> {
    pub fn assemble(grid: &GridHierarchy) -> Self {
        let (m, r) = (grid.m(), grid.r());
        let w = r + 1;
        let block = local_projection_block(grid);
        let counts: Vec<usize> = (0..grid.num_coarse_dofs())
            .map(|j| {
                let (cx, cy) = grid.coarse_dof_pos(j);
                let nx = [cx.checked_sub(1), (cx < m).then_some(cx)]
                    .iter()
                    .flatten()
                    .count();
                let ny = [cy.checked_sub(1), (cy < m).then_some(cy)]
                    .iter()
                    .flatten()
                    .count();
                nx * ny
            })
            .collect();
        let mut trip = Vec::new();
        for e in 0..grid.num_coarse_elements() {
            let (ex, ey) = grid.coarse_element_pos(e);
            for (a, &(vx, vy)) in LOCAL_VERTICES.iter().enumerate() {
                let Some(z) = grid.coarse_dof(ex + vx, ey + vy) else {
                    continue;
                };
                let inv = 1.0 / counts[z] as f64;
                for ky in 0..w {
                    for kx in 0..w {
                        let Some(i) = grid.fine_dof(ex * r + kx, ey * r + ky) else {
                            continue;
                        };
                        let v = block[a * w * w + ky * w + kx];
                        if v != 0.0 {
                            trip.push((z, i, T::lit(inv * v)));
                        }
                    }
                }
            }
        }
        let matrix = Csr::from_triplets(grid.num_coarse_dofs(), grid.num_fine_dofs(), trip);
        InterpolationMatrix {
            matrix,
            local_block: block,
            counts,
        }
    }

    /// `N_H x N_h` sparse matrix.
    pub fn matrix(&self) -> &Csr<T> {
        &self.matrix
    }

    pub fn local_block(&self) -> &[f64] {
        &self.local_block
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Coarse nodal values `I_H v`.
    pub fn apply(&self, v: &[T]) -> Vec<T> {
        self.matrix.mul_vec(v)
    }

    /// Rows of the patch's coarse DOFs and columns of its fine DOFs (`I_H^ℓ`).
    pub fn restrict(&self, patch: &Patch) -> Csr<T> {
        self.matrix.restrict(
            &patch.coarse_map(),
            patch.coarse_dofs.len(),
            &patch.fine_map(),
            patch.fine_dofs.len(),
        )
    }
}

/// `‖I_H v‖_∞ <= tol`, i.e. `v` lies in the discrete fine-scale space.
pub fn kernel_check<T: Scalar>(imat: &InterpolationMatrix<T>, v: &[T], tol: T) -> bool {
    norm_inf(&imat.apply(v)) <= tol
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{coarse_hat, prolongation};

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn projection_property_on_coarse_space() {
        for (m, r) in [(2, 2), (4, 2), (3, 5)] {
            let g = GridHierarchy::new(m, r).unwrap();
            let im = InterpolationMatrix::<f64>::assemble(&g);
            for j in 0..g.num_coarse_dofs() {
                let got = im.apply(&coarse_hat(&g, j));
                let mut e = vec![0.0; g.num_coarse_dofs()];
                e[j] = 1.0;
                assert!(max_abs_diff(&got, &e) < 1e-12);
            }
        }
    }

    #[test]
    fn zero_maps_to_zero_and_kernel_check() {
        let g = GridHierarchy::new(3, 3).unwrap();
        let im = InterpolationMatrix::<f64>::assemble(&g);
        let z = vec![0.0; g.num_fine_dofs()];
        assert!(im.apply(&z).iter().all(|&v| v == 0.0));
        assert!(kernel_check(&im, &z, 0.0));
        assert!(!kernel_check(&im, &coarse_hat(&g, 0), 0.5));
        assert_eq!(im.counts(), &[4, 4, 4, 4]);
    }

    #[test]
    fn idempotent_on_range() {
        let g = GridHierarchy::new(4, 3).unwrap();
        let im = InterpolationMatrix::<f64>::assemble(&g);
        let p = prolongation::<f64>(&g);
        let v: Vec<f64> = (0..g.num_fine_dofs())
            .map(|i| ((i * 37 % 17) as f64 - 8.0) / 9.0)
            .collect();
        let iv = im.apply(&v);
        let again = im.apply(&p.mul_vec(&iv));
        assert!(max_abs_diff(&iv, &again) < 1e-12);
    }

    /// Π_H^dg and π_H as separate dense matrices (Gauss quadrature for the
    /// moments and a dense 4x4 solve per element), then composed.
    #[test]
    fn matches_dense_composition_on_tiny_mesh() {
        let g = GridHierarchy::new(2, 2).unwrap();
        let n = g.n();
        let h = g.fine_h();
        let hc = g.coarse_h();
        let gq = [0.5 - 0.5 / 3f64.sqrt(), 0.5 + 0.5 / 3f64.sqrt()];
        let nf = g.num_fine_dofs();
        let ne = g.num_coarse_elements();
        // dg coefficients: 4 per element
        let mut pidg = vec![vec![0.0; nf]; 4 * ne];
        for e in 0..ne {
            let (ex, ey) = g.coarse_element_pos(e);
            let shape = |a: usize, x: f64, y: f64| {
                let (vx, vy) = LOCAL_VERTICES[a];
                let u = (x - ex as f64 * hc) / hc;
                let w = (y - ey as f64 * hc) / hc;
                (if vx == 1 { u } else { 1.0 - u }) * (if vy == 1 { w } else { 1.0 - w })
            };
            let mut mk = nalgebra::DMatrix::<f64>::zeros(4, 4);
            let mut gk = nalgebra::DMatrix::<f64>::zeros(4, nf);
            for fe in g.children(e) {
                let (fx, fy) = g.fine_element_pos(fe);
                for &qx in &gq {
                    for &qy in &gq {
                        let (x, y) = ((fx as f64 + qx) * h, (fy as f64 + qy) * h);
                        let wq = 0.25 * h * h;
                        for a in 0..4 {
                            for b in 0..4 {
                                mk[(a, b)] += wq * shape(a, x, y) * shape(b, x, y);
                            }
                            for &(dx, dy) in LOCAL_VERTICES.iter() {
                                if let Some(i) = g.fine_dof(fx + dx, fy + dy) {
                                    let lam = (if dx == 1 { qx } else { 1.0 - qx })
                                        * (if dy == 1 { qy } else { 1.0 - qy });
                                    gk[(a, i)] += wq * shape(a, x, y) * lam;
                                }
                            }
                        }
                    }
                }
            }
            let c = mk.lu().solve(&gk).unwrap();
            for a in 0..4 {
                for i in 0..nf {
                    pidg[4 * e + a][i] = c[(a, i)];
                }
            }
        }
        // averaging
        let mut ih = vec![vec![0.0; nf]; g.num_coarse_dofs()];
        for z in 0..g.num_coarse_dofs() {
            let (cx, cy) = g.coarse_dof_pos(z);
            let adj: Vec<(usize, usize)> = (0..ne)
                .flat_map(|e| {
                    let (ex, ey) = g.coarse_element_pos(e);
                    LOCAL_VERTICES
                        .iter()
                        .enumerate()
                        .filter(move |(_, &(vx, vy))| ex + vx == cx && ey + vy == cy)
                        .map(move |(a, _)| (e, a))
                })
                .collect();
            for &(e, a) in &adj {
                for i in 0..nf {
                    ih[z][i] += pidg[4 * e + a][i] / adj.len() as f64;
                }
            }
        }
        let im = InterpolationMatrix::<f64>::assemble(&g);
        for z in 0..g.num_coarse_dofs() {
            for i in 0..nf {
                assert!((im.matrix().get(z, i) - ih[z][i]).abs() < 1e-13);
            }
        }
        let centre = g.fine_dof(n / 2, n / 2).unwrap();
        let mut v = vec![0.0; nf];
        v[centre] = 1.0;
        assert!((im.apply(&v)[0] - ih[0][centre]).abs() < 1e-13);
    }
}
