//! Coarse/fine tensor-product quadrilateral meshes on the unit square.
//!
//! Elements and lattice nodes are numbered row-major (x fastest). Only
//! interior nodes carry degrees of freedom; `*_dof` maps translate lattice
//! positions into the compact interior numbering.

use serde::{Deserialize, Serialize};

use crate::error::{LodError, Result};

/// Coarse mesh with `m x m` elements and its uniform refinement by `r`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridHierarchy {
    m: usize,
    r: usize,
}

impl GridHierarchy {
    pub fn new(m: usize, r: usize) -> Result<Self> {
        if m < 2 {
            return Err(LodError::InvalidMesh(format!(
                "need m >= 2 coarse elements per side, got {m}"
            )));
        }
        if r < 1 {
            return Err(LodError::InvalidMesh(
                "refinement factor must be at least 1".into(),
            ));
        }
        Ok(GridHierarchy { m, r })
    }

    /// Coarse elements per side.
    pub fn m(&self) -> usize {
        self.m
    }

    /// Fine elements per coarse element and side.
    pub fn r(&self) -> usize {
        self.r
    }

    /// Fine elements per side.
    pub fn n(&self) -> usize {
        self.m * self.r
    }

    pub fn coarse_h(&self) -> f64 {
        1.0 / self.m as f64
    }

    pub fn fine_h(&self) -> f64 {
        1.0 / self.n() as f64
    }

    pub fn num_coarse_elements(&self) -> usize {
        self.m * self.m
    }

    pub fn num_fine_elements(&self) -> usize {
        self.n() * self.n()
    }

    /// `N_H = (m - 1)^2`
    pub fn num_coarse_dofs(&self) -> usize {
        (self.m - 1) * (self.m - 1)
    }

    /// `N_h = (m r - 1)^2`
    pub fn num_fine_dofs(&self) -> usize {
        (self.n() - 1) * (self.n() - 1)
    }

    pub fn coarse_element(&self, ex: usize, ey: usize) -> usize {
        debug_assert!(ex < self.m && ey < self.m);
        ey * self.m + ex
    }

    pub fn coarse_element_pos(&self, e: usize) -> (usize, usize) {
        (e % self.m, e / self.m)
    }

    pub fn fine_element(&self, fx: usize, fy: usize) -> usize {
        fy * self.n() + fx
    }

    pub fn fine_element_pos(&self, e: usize) -> (usize, usize) {
        (e % self.n(), e / self.n())
    }

    /// Coarse element containing a fine element.
    pub fn parent(&self, fine_element: usize) -> usize {
        let (fx, fy) = self.fine_element_pos(fine_element);
        self.coarse_element(fx / self.r, fy / self.r)
    }

    /// Fine elements of a coarse element, row-major.
    pub fn children(&self, coarse_element: usize) -> Vec<usize> {
        let (ex, ey) = self.coarse_element_pos(coarse_element);
        let mut out = Vec::with_capacity(self.r * self.r);
        for fy in ey * self.r..(ey + 1) * self.r {
            for fx in ex * self.r..(ex + 1) * self.r {
                out.push(self.fine_element(fx, fy));
            }
        }
        out
    }

    /// Interior DOF index of coarse lattice node `(cx, cy)`.
    pub fn coarse_dof(&self, cx: usize, cy: usize) -> Option<usize> {
        let m = self.m;
        (cx >= 1 && cy >= 1 && cx < m && cy < m).then(|| (cy - 1) * (m - 1) + (cx - 1))
    }

    pub fn coarse_dof_pos(&self, j: usize) -> (usize, usize) {
        let w = self.m - 1;
        (j % w + 1, j / w + 1)
    }

    /// Interior DOF index of fine lattice node `(ix, iy)`.
    pub fn fine_dof(&self, ix: usize, iy: usize) -> Option<usize> {
        let n = self.n();
        (ix >= 1 && iy >= 1 && ix < n && iy < n).then(|| (iy - 1) * (n - 1) + (ix - 1))
    }

    pub fn fine_dof_pos(&self, j: usize) -> (usize, usize) {
        let w = self.n() - 1;
        (j % w + 1, j / w + 1)
    }

    /// Physical coordinates `z_j` of fine interior DOF `j`.
    pub fn fine_dof_coords(&self, j: usize) -> (f64, f64) {
        let (ix, iy) = self.fine_dof_pos(j);
        let h = self.fine_h();
        (ix as f64 * h, iy as f64 * h)
    }

    /// All fine DOF coordinates in DOF order.
    pub fn fine_coords(&self) -> Vec<(f64, f64)> {
        (0..self.num_fine_dofs())
            .map(|j| self.fine_dof_coords(j))
            .collect()
    }

    /// Coarse elements in the support of the hat function of coarse DOF `j`.
    pub fn dof_support(&self, j: usize) -> Vec<usize> {
        let (cx, cy) = self.coarse_dof_pos(j);
        let mut out = Vec::with_capacity(4);
        for ey in [cy - 1, cy] {
            for ex in [cx - 1, cx] {
                out.push(self.coarse_element(ex, ey));
            }
        }
        out
    }

    /// Interior coarse DOFs among the vertices of element `e`.
    pub fn element_dofs(&self, e: usize) -> Vec<usize> {
        let (ex, ey) = self.coarse_element_pos(e);
        let mut out = Vec::with_capacity(4);
        for cy in [ey, ey + 1] {
            for cx in [ex, ex + 1] {
                if let Some(j) = self.coarse_dof(cx, cy) {
                    out.push(j);
                }
            }
        }
        out
    }

    /// All `(element, dof)` pairs with `element ∩ supp(Λ_dof) ≠ ∅`, ordered by
    /// dof then element.
    pub fn correction_pairs(&self) -> Vec<(usize, usize)> {
        (0..self.num_coarse_dofs())
            .flat_map(|j| self.dof_support(j).into_iter().map(move |t| (t, j)))
            .collect()
    }

    /// Patch of order `ell` around coarse element `k`.
    pub fn patch(&self, k: usize, ell: usize) -> Result<Patch> {
        if ell < 1 {
            return Err(LodError::InvalidMesh(
                "patch order must be at least 1".into(),
            ));
        }
        if k >= self.num_coarse_elements() {
            return Err(LodError::InvalidMesh(format!(
                "coarse element {k} out of range"
            )));
        }
        let (ex, ey) = self.coarse_element_pos(k);
        // N(S) of an element block is the block grown by one layer (corner
        // contact counts), clipped to the domain.
        let (mut x0, mut x1, mut y0, mut y1) = (ex, ex + 1, ey, ey + 1);
        for _ in 0..ell {
            x0 = x0.saturating_sub(1);
            y0 = y0.saturating_sub(1);
            x1 = (x1 + 1).min(self.m);
            y1 = (y1 + 1).min(self.m);
        }
        Ok(Patch::from_box(*self, k, ell, PatchBox { x0, x1, y0, y1 }))
    }
}

/// Half-open block `[x0, x1) x [y0, y1)` of coarse elements.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PatchBox {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
}

impl PatchBox {
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn contains_element(&self, ex: usize, ey: usize) -> bool {
        (self.x0..self.x1).contains(&ex) && (self.y0..self.y1).contains(&ey)
    }
}

/// Element patch `N^ℓ(K)` together with its fine and coarse node sets.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    grid: GridHierarchy,
    pub center: usize,
    pub order: usize,
    pub block: PatchBox,
    /// Coarse elements, row-major.
    pub coarse_elements: Vec<usize>,
    /// Fine elements, row-major.
    pub fine_elements: Vec<usize>,
    /// Global fine DOFs strictly inside the patch, row-major (`N_h^ℓ`).
    pub fine_dofs: Vec<usize>,
    /// Global coarse DOFs in the closed patch (`N_H^ℓ`).
    pub coarse_dofs: Vec<usize>,
}

impl Patch {
    fn from_box(grid: GridHierarchy, center: usize, order: usize, block: PatchBox) -> Self {
        let r = grid.r();
        let mut coarse_elements = Vec::new();
        for ey in block.y0..block.y1 {
            for ex in block.x0..block.x1 {
                coarse_elements.push(grid.coarse_element(ex, ey));
            }
        }
        let mut fine_elements = Vec::new();
        for fy in block.y0 * r..block.y1 * r {
            for fx in block.x0 * r..block.x1 * r {
                fine_elements.push(grid.fine_element(fx, fy));
            }
        }
        let mut fine_dofs = Vec::new();
        for iy in block.y0 * r + 1..block.y1 * r {
            for ix in block.x0 * r + 1..block.x1 * r {
                fine_dofs.push(
                    grid.fine_dof(ix, iy)
                        .expect("open patch nodes are interior"),
                );
            }
        }
        let mut coarse_dofs = Vec::new();
        for cy in block.y0..=block.y1 {
            for cx in block.x0..=block.x1 {
                if let Some(j) = grid.coarse_dof(cx, cy) {
                    coarse_dofs.push(j);
                }
            }
        }
        Patch {
            grid,
            center,
            order,
            block,
            coarse_elements,
            fine_elements,
            fine_dofs,
            coarse_dofs,
        }
    }

    pub fn grid(&self) -> &GridHierarchy {
        &self.grid
    }

    /// Fine interior nodes per row of the patch lattice.
    pub fn fine_cols(&self) -> usize {
        self.block.width() * self.grid.r() - 1
    }

    pub fn fine_rows(&self) -> usize {
        self.block.height() * self.grid.r() - 1
    }

    /// Local index of global fine DOF `j`, if inside the patch.
    pub fn local_fine(&self, j: usize) -> Option<usize> {
        let (ix, iy) = self.grid.fine_dof_pos(j);
        let r = self.grid.r();
        let (ix0, iy0) = (self.block.x0 * r + 1, self.block.y0 * r + 1);
        if ix < ix0 || iy < iy0 || ix >= self.block.x1 * r || iy >= self.block.y1 * r {
            return None;
        }
        Some((iy - iy0) * self.fine_cols() + (ix - ix0))
    }

    /// Map from global fine DOFs to local patch indices.
    pub fn fine_map(&self) -> Vec<Option<usize>> {
        let mut map = vec![None; self.grid.num_fine_dofs()];
        for (l, &g) in self.fine_dofs.iter().enumerate() {
            map[g] = Some(l);
        }
        map
    }

    pub fn coarse_map(&self) -> Vec<Option<usize>> {
        let mut map = vec![None; self.grid.num_coarse_dofs()];
        for (l, &g) in self.coarse_dofs.iter().enumerate() {
            map[g] = Some(l);
        }
        map
    }

    /// Physical bounding rectangle `(x0, y0, a, b)`.
    pub fn rect(&self) -> (f64, f64, f64, f64) {
        let h = self.grid.coarse_h();
        (
            self.block.x0 as f64 * h,
            self.block.y0 as f64 * h,
            self.block.width() as f64 * h,
            self.block.height() as f64 * h,
        )
    }

    /// Which sides (left, right, bottom, top) lie on the domain boundary.
    pub fn boundary_sides(&self) -> [bool; 4] {
        let m = self.grid.m();
        [
            self.block.x0 == 0,
            self.block.x1 == m,
            self.block.y0 == 0,
            self.block.y1 == m,
        ]
    }
}
