//! Q1 finite elements on the fine mesh.
//!
//! The coefficient is constant per fine cell, so element integrals are the
//! analytic reference matrices scaled by the cell value (stiffness) or the
//! cell area (mass). Boundary nodes are eliminated through [`DofMap`].

use num_traits::{FromPrimitive, Num};

use crate::error::{LodError, Result};
use crate::grid::{GridHierarchy, Patch};
use crate::linalg::Csr;
use crate::scalar::Scalar;

/// Local vertex order of a cell: `(0,0), (1,0), (0,1), (1,1)`.
pub const LOCAL_VERTICES: [(usize, usize); 4] = [(0, 0), (1, 0), (0, 1), (1, 1)];

fn ratio<T: Num + FromPrimitive>(n: i64, d: i64) -> T {
    T::from_i64(n).expect("small integer") / T::from_i64(d).expect("small integer")
}

/// Reference Q1 stiffness matrix `∫ ∇φ_a · ∇φ_b` on a square (independent of its size in 2D).
pub fn q1_stiffness_element<T: Num + FromPrimitive + Clone>() -> [[T; 4]; 4] {
    std::array::from_fn(|a| {
        std::array::from_fn(|b| {
            let (ax, ay) = LOCAL_VERTICES[a];
            let (bx, by) = LOCAL_VERTICES[b];
            match (ax != bx) as u8 + (ay != by) as u8 {
                0 => ratio(2, 3),
                1 => ratio(-1, 6),
                _ => ratio(-1, 3),
            }
        })
    })
}

/// Reference Q1 mass matrix `∫ φ_a φ_b` on the unit square.
pub fn q1_mass_element<T: Num + FromPrimitive + Clone>() -> [[T; 4]; 4] {
    std::array::from_fn(|a| {
        std::array::from_fn(|b| {
            let (ax, ay) = LOCAL_VERTICES[a];
            let (bx, by) = LOCAL_VERTICES[b];
            match (ax != bx) as u8 + (ay != by) as u8 {
                0 => ratio(1, 9),
                1 => ratio(1, 18),
                _ => ratio(1, 36),
            }
        })
    })
}

/// Numbering of fine lattice nodes that carry unknowns.
#[derive(Clone, Debug, PartialEq)]
pub struct DofMap {
    map: Vec<Option<usize>>,
    len: usize,
}

impl DofMap {
    /// Interior nodes of the whole domain (global DOF numbering).
    pub fn interior(grid: &GridHierarchy) -> Self {
        let n = grid.n();
        let map = (0..(n + 1) * (n + 1))
            .map(|id| grid.fine_dof(id % (n + 1), id / (n + 1)))
            .collect();
        DofMap {
            map,
            len: grid.num_fine_dofs(),
        }
    }

    /// Every lattice node, boundary included.
    pub fn all_nodes(grid: &GridHierarchy) -> Self {
        let len = (grid.n() + 1) * (grid.n() + 1);
        DofMap {
            map: (0..len).map(Some).collect(),
            len,
        }
    }

    /// Nodes strictly inside a patch, in patch-local order.
    pub fn patch(patch: &Patch) -> Self {
        let grid = patch.grid();
        let n = grid.n();
        let mut map = vec![None; (n + 1) * (n + 1)];
        for (l, &g) in patch.fine_dofs.iter().enumerate() {
            let (ix, iy) = grid.fine_dof_pos(g);
            map[iy * (n + 1) + ix] = Some(l);
        }
        DofMap {
            map,
            len: patch.fine_dofs.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, lattice_node: usize) -> Option<usize> {
        self.map[lattice_node]
    }
}

/// Which fine cells contribute to an assembled operator.
#[derive(Clone, Copy, Debug)]
pub enum Support<'a> {
    All,
    /// Fine cells of the listed coarse elements.
    Coarse(&'a [usize]),
}

impl Support<'_> {
    fn fine_elements(&self, grid: &GridHierarchy) -> Vec<usize> {
        match self {
            Support::All => (0..grid.num_fine_elements()).collect(),
            Support::Coarse(list) => list.iter().flat_map(|&k| grid.children(k)).collect(),
        }
    }
}

fn cell_nodes(grid: &GridHierarchy, fine_element: usize) -> [usize; 4] {
    let n = grid.n();
    let (fx, fy) = grid.fine_element_pos(fine_element);
    LOCAL_VERTICES.map(|(dx, dy)| (fy + dy) * (n + 1) + fx + dx)
}

fn assemble_with<T: Scalar>(
    grid: &GridHierarchy,
    support: Support<'_>,
    dofs: &DofMap,
    element: &[[f64; 4]; 4],
    mut weight: impl FnMut(usize) -> Result<f64>,
) -> Result<Csr<T>> {
    let mut trip = Vec::new();
    for e in support.fine_elements(grid) {
        let w = weight(e)?;
        let nodes = cell_nodes(grid, e).map(|id| dofs.get(id));
        for a in 0..4 {
            let Some(ia) = nodes[a] else { continue };
            for b in 0..4 {
                let Some(ib) = nodes[b] else { continue };
                trip.push((ia, ib, T::lit(w * element[a][b])));
            }
        }
    }
    Ok(Csr::from_triplets(dofs.len(), dofs.len(), trip))
}

/// Stiffness matrix `v^T A w = Σ_cells a_cell ∫ ∇v·∇w` over the support.
///
/// `cell_values` holds one coefficient value per fine element (row-major).
pub fn assemble_stiffness<T: Scalar>(
    grid: &GridHierarchy,
    cell_values: &[f64],
    support: Support<'_>,
    dofs: &DofMap,
) -> Result<Csr<T>> {
    if cell_values.len() != grid.num_fine_elements() {
        return Err(LodError::Dimension(format!(
            "{} cell values for {} fine cells",
            cell_values.len(),
            grid.num_fine_elements()
        )));
    }
    let k = q1_stiffness_element::<f64>();
    assemble_with(grid, support, dofs, &k, |e| {
        let v = cell_values[e];
        if v > 0.0 {
            Ok(v)
        } else {
            Err(LodError::NonPositiveCoefficient { cell: e, value: v })
        }
    })
}

/// Mass matrix `∫ v w` over the support.
pub fn assemble_mass<T: Scalar>(
    grid: &GridHierarchy,
    support: Support<'_>,
    dofs: &DofMap,
) -> Result<Csr<T>> {
    let area = grid.fine_h() * grid.fine_h();
    let m = q1_mass_element::<f64>();
    assemble_with(grid, support, dofs, &m, |_| Ok(area))
}

/// Bilinear interpolation of coarse hats: column `j` is the fine nodal
/// vector of `Λ_j` (shape `N_h x N_H`).
pub fn prolongation<T: Scalar>(grid: &GridHierarchy) -> Csr<T> {
    let r = grid.r();
    let rf = r as f64;
    let mut trip = Vec::new();
    for j in 0..grid.num_coarse_dofs() {
        let (cx, cy) = grid.coarse_dof_pos(j);
        for iy in (cy - 1) * r + 1..(cy + 1) * r {
            for ix in (cx - 1) * r + 1..(cx + 1) * r {
                let wx = 1.0 - (ix.abs_diff(cx * r) as f64) / rf;
                let wy = 1.0 - (iy.abs_diff(cy * r) as f64) / rf;
                let i = grid
                    .fine_dof(ix, iy)
                    .expect("support interior to the domain");
                trip.push((i, j, T::lit(wx * wy)));
            }
        }
    }
    Csr::from_triplets(grid.num_fine_dofs(), grid.num_coarse_dofs(), trip)
}

/// Fine nodal vector of the hat function of coarse DOF `j`.
pub fn coarse_hat<T: Scalar>(grid: &GridHierarchy, j: usize) -> Vec<T> {
    let r = grid.r();
    let (cx, cy) = grid.coarse_dof_pos(j);
    let mut v = vec![T::zero(); grid.num_fine_dofs()];
    for iy in (cy - 1) * r + 1..(cy + 1) * r {
        for ix in (cx - 1) * r + 1..(cx + 1) * r {
            let wx = 1.0 - (ix.abs_diff(cx * r) as f64) / r as f64;
            let wy = 1.0 - (iy.abs_diff(cy * r) as f64) / r as f64;
            v[grid.fine_dof(ix, iy).unwrap()] = T::lit(wx * wy);
        }
    }
    v
}
