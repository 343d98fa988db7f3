//! Exact localized correctors and the corrected LOD basis.
//!
//! Each corrector minimizes `½ cᵀ S c − bᵀ c` over patch vectors with
//! `C c = 0`, where `S` is the patch stiffness and `C` the patch block of
//! `I_H`. The saddle-point system is solved through the Schur complement
//! `C S⁻¹ Cᵀ`: `S` is factored once per patch (banded Cholesky) and the small
//! Schur matrix by pivoted Cholesky, which also covers the rank-deficient
//! constraint blocks that occur for `r = 1`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{LodError, Result};
use crate::fem::{assemble_stiffness, coarse_hat, DofMap, Support};
use crate::grid::{GridHierarchy, Patch, PatchBox};
use crate::linalg::{dot, norm2, BandedCholesky, Csr, PivotedCholesky};
use crate::qinterp::InterpolationMatrix;
use crate::scalar::Scalar;

/// Which stiffness enters the linear term of the corrector problem.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinearTermMode {
    /// `b = S_T Λ_j`, stiffness of the element `T` only.
    #[default]
    ElementRestricted,
    /// `b = S^ℓ Λ_j`, the full patch stiffness.
    PatchLiteral,
}

/// Factored saddle-point system of one patch for one coefficient.
#[derive(Clone, Debug)]
pub struct PatchSystem<T> {
    patch: Patch,
    stiffness: Csr<T>,
    constraint: Csr<T>,
    chol: BandedCholesky<T>,
    /// `S⁻¹ Cᵀ`, one column of length `N_h^ℓ` per constraint row.
    s_inv_ct: Vec<Vec<T>>,
    schur: PivotedCholesky<T>,
}

impl<T: Scalar> PatchSystem<T> {
    pub fn new(imat: &InterpolationMatrix<T>, cell_values: &[f64], patch: Patch) -> Result<Self> {
        let stiffness = patch_stiffness::<T>(cell_values, &patch)?;
        let constraint = imat.restrict(&patch);
        let chol = BandedCholesky::factor(&stiffness).map_err(|e| LodError::SingularKkt {
            element: patch.center,
            dof: usize::MAX,
            detail: format!(
                "patch stiffness of block {:?} ({} unknowns): {e}",
                patch.block,
                patch.fine_dofs.len()
            ),
        })?;
        let nc = constraint.nrows();
        let n = stiffness.nrows();
        let mut s_inv_ct = Vec::with_capacity(nc);
        for i in 0..nc {
            let mut col = vec![T::zero(); n];
            let (idx, val) = constraint.row(i);
            for (&k, &v) in idx.iter().zip(val) {
                col[k] = v;
            }
            chol.solve_in_place(&mut col);
            s_inv_ct.push(col);
        }
        let mut sigma = vec![T::zero(); nc * nc];
        for i in 0..nc {
            let (idx, val) = constraint.row(i);
            for (k, y) in s_inv_ct.iter().enumerate() {
                let mut s = T::zero();
                for (&c, &v) in idx.iter().zip(val) {
                    s += v * y[c];
                }
                sigma[i * nc + k] = s;
            }
        }
        for i in 0..nc {
            for k in 0..i {
                let avg = (sigma[i * nc + k] + sigma[k * nc + i]) * T::lit(0.5);
                sigma[i * nc + k] = avg;
                sigma[k * nc + i] = avg;
            }
        }
        let schur = PivotedCholesky::factor(nc, &sigma, T::epsilon().sqrt() * T::lit(1e-3));
        Ok(PatchSystem {
            patch,
            stiffness,
            constraint,
            chol,
            s_inv_ct,
            schur,
        })
    }

    pub fn patch(&self) -> &Patch {
        &self.patch
    }

    /// Patch stiffness `S^ℓ`.
    pub fn stiffness(&self) -> &Csr<T> {
        &self.stiffness
    }

    /// Patch block of the interpolation matrix.
    pub fn constraint(&self) -> &Csr<T> {
        &self.constraint
    }

    pub fn constraint_rank(&self) -> usize {
        self.schur.rank()
    }

    /// Solves `[S Cᵀ; C 0][c; λ] = [f; g]`.
    fn solve_general(&self, f: &[T], g: &[T]) -> (Vec<T>, Vec<T>) {
        let mut sf = f.to_vec();
        self.chol.solve_in_place(&mut sf);
        let mut rhs = self.constraint.mul_vec(&sf);
        for (r, &gi) in rhs.iter_mut().zip(g) {
            *r -= gi;
        }
        let lambda = self.schur.solve(&rhs);
        let mut c = sf;
        for (y, &l) in self.s_inv_ct.iter().zip(&lambda) {
            if l != T::zero() {
                for (ci, &yi) in c.iter_mut().zip(y) {
                    *ci -= l * yi;
                }
            }
        }
        (c, lambda)
    }

    /// Residuals `(f − S c − Cᵀ λ, g − C c)`.
    fn residual(&self, c: &[T], lambda: &[T], f: &[T], g: &[T]) -> (Vec<T>, Vec<T>) {
        let mut r1 = f.to_vec();
        let sc = self.stiffness.mul_vec(c);
        for (r, s) in r1.iter_mut().zip(sc) {
            *r -= s;
        }
        self.constraint
            .mul_vec_transpose_acc(-T::one(), lambda, &mut r1);
        let mut r2 = g.to_vec();
        for (r, s) in r2.iter_mut().zip(self.constraint.mul_vec(c)) {
            *r -= s;
        }
        (r1, r2)
    }

    /// Relative KKT residual `‖[b − S c − Cᵀλ; −C c]‖ / ‖b‖`.
    pub fn kkt_residual(&self, c: &[T], lambda: &[T], b: &[T]) -> T {
        let zero = vec![T::zero(); self.constraint.nrows()];
        let (r1, r2) = self.residual(c, lambda, b, &zero);
        let nb = norm2(b);
        let nr = (dot(&r1, &r1) + dot(&r2, &r2)).sqrt();
        if nb > T::zero() {
            nr / nb
        } else {
            nr
        }
    }

    /// Minimizer `c` and multiplier `λ` for the linear term `b`, with one
    /// step of iterative refinement.
    pub fn solve(&self, b: &[T]) -> (Vec<T>, Vec<T>) {
        let zero = vec![T::zero(); self.constraint.nrows()];
        let (mut c, mut lambda) = self.solve_general(b, &zero);
        let (r1, r2) = self.residual(&c, &lambda, b, &zero);
        let (dc, dl) = self.solve_general(&r1, &r2);
        for (x, d) in c.iter_mut().zip(dc) {
            *x += d;
        }
        for (x, d) in lambda.iter_mut().zip(dl) {
            *x += d;
        }
        (c, lambda)
    }
}

/// `Λ_j` restricted to the fine DOFs of the patch.
pub fn hat_on_patch<T: Scalar>(patch: &Patch, j: usize) -> Vec<T> {
    let full = coarse_hat::<T>(patch.grid(), j);
    patch.fine_dofs.iter().map(|&g| full[g]).collect()
}

/// Stiffness of element `t` alone, on the patch DOFs.
pub fn element_stiffness<T: Scalar>(
    cell_values: &[f64],
    patch: &Patch,
    t: usize,
) -> Result<Csr<T>> {
    assemble_stiffness(
        patch.grid(),
        cell_values,
        Support::Coarse(&[t]),
        &DofMap::patch(patch),
    )
}

/// Linear term `b` of the corrector problem for `(t, j)` and the attained
/// lower bound `−½ Λ_jᵀ S_lin Λ_j` of the energy.
pub fn linear_term<T: Scalar>(
    system: &PatchSystem<T>,
    cell_values: &[f64],
    t: usize,
    j: usize,
    mode: LinearTermMode,
) -> Result<(Vec<T>, T)> {
    linear_term_with(system.stiffness(), system.patch(), cell_values, t, j, mode)
}

/// [`linear_term`] for an already assembled patch stiffness.
pub fn linear_term_with<T: Scalar>(
    stiffness: &Csr<T>,
    patch: &Patch,
    cell_values: &[f64],
    t: usize,
    j: usize,
    mode: LinearTermMode,
) -> Result<(Vec<T>, T)> {
    let gamma = hat_on_patch::<T>(patch, j);
    let b = match mode {
        LinearTermMode::ElementRestricted => {
            element_stiffness::<T>(cell_values, patch, t)?.mul_vec(&gamma)
        }
        LinearTermMode::PatchLiteral => stiffness.mul_vec(&gamma),
    };
    let bound = -T::lit(0.5) * dot(&gamma, &b);
    Ok((b, bound))
}

/// Patch stiffness `S^ℓ` on the patch DOFs.
pub fn patch_stiffness<T: Scalar>(cell_values: &[f64], patch: &Patch) -> Result<Csr<T>> {
    assemble_stiffness(
        patch.grid(),
        cell_values,
        Support::Coarse(&patch.coarse_elements),
        &DofMap::patch(patch),
    )
}

/// Corrector of one `(T, j)` pair in patch-local numbering.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElementCorrector<T> {
    pub element: usize,
    pub dof: usize,
    pub block: PatchBox,
    /// Values at the patch's fine DOFs (row-major inside the block).
    pub values: Vec<T>,
}

impl<T: Scalar> ElementCorrector<T> {
    /// Scatters the values into a global fine vector.
    pub fn add_to(&self, grid: &GridHierarchy, alpha: T, out: &mut [T]) {
        let r = grid.r();
        let mut k = 0;
        for iy in self.block.y0 * r + 1..self.block.y1 * r {
            for ix in self.block.x0 * r + 1..self.block.x1 * r {
                let g = grid
                    .fine_dof(ix, iy)
                    .expect("open patch nodes are interior");
                out[g] += alpha * self.values[k];
                k += 1;
            }
        }
    }

    pub fn to_global(&self, grid: &GridHierarchy) -> Vec<T> {
        let mut v = vec![T::zero(); grid.num_fine_dofs()];
        self.add_to(grid, T::one(), &mut v);
        v
    }
}

/// Solves the corrector problem of a single `(t, j)` pair.
pub fn solve_corrector<T: Scalar>(
    grid: &GridHierarchy,
    imat: &InterpolationMatrix<T>,
    cell_values: &[f64],
    t: usize,
    j: usize,
    ell: usize,
    mode: LinearTermMode,
) -> Result<ElementCorrector<T>> {
    if !grid.dof_support(j).contains(&t) {
        return Err(LodError::Config(format!(
            "element {t} does not meet the support of dof {j}"
        )));
    }
    let patch = grid.patch(t, ell)?;
    let block = patch.block;
    let system = PatchSystem::new(imat, cell_values, patch)?;
    let values = solve_checked(&system, cell_values, t, j, mode)?;
    Ok(ElementCorrector {
        element: t,
        dof: j,
        block,
        values,
    })
}

fn solve_checked<T: Scalar>(
    system: &PatchSystem<T>,
    cell_values: &[f64],
    t: usize,
    j: usize,
    mode: LinearTermMode,
) -> Result<Vec<T>> {
    let (b, _) = linear_term(system, cell_values, t, j, mode)?;
    let (c, lambda) = system.solve(&b);
    let res = system.kkt_residual(&c, &lambda, &b).to_f64_lossy();
    let tol = (T::epsilon().to_f64_lossy() * 1e6).max(1e-10);
    if !res.is_finite() || res > tol {
        return Err(LodError::SingularKkt {
            element: t,
            dof: j,
            detail: format!(
                "relative residual {res:e} on block {:?} ({} fine, {} coarse, constraint rank {})",
                system.patch().block,
                system.patch().fine_dofs.len(),
                system.patch().coarse_dofs.len(),
                system.constraint_rank()
            ),
        });
    }
    Ok(c)
}

/// Correctors of every `(T, j)` pair, sharing one factorization per patch.
pub fn compute_correctors<T: Scalar>(
    grid: &GridHierarchy,
    imat: &InterpolationMatrix<T>,
    cell_values: &[f64],
    ell: usize,
    mode: LinearTermMode,
) -> Result<Vec<ElementCorrector<T>>> {
    let mut by_block: BTreeMap<PatchBox, Vec<(usize, usize)>> = BTreeMap::new();
    for (t, j) in grid.correction_pairs() {
        by_block
            .entry(grid.patch(t, ell)?.block)
            .or_default()
            .push((t, j));
    }
    let mut out = Vec::new();
    for pairs in by_block.values() {
        let patch = grid.patch(pairs[0].0, ell)?;
        let block = patch.block;
        let system = PatchSystem::new(imat, cell_values, patch)?;
        for &(t, j) in pairs {
            let values = solve_checked(&system, cell_values, t, j, mode)?;
            out.push(ElementCorrector {
                element: t,
                dof: j,
                block,
                values,
            });
        }
    }
    out.sort_by_key(|c| (c.dof, c.element));
    Ok(out)
}

/// Element correctors plus the corrected basis `Λ̃_j = Λ_j − Σ_T C_T Λ_j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectorSet<T> {
    pub m: usize,
    pub r: usize,
    pub ell: usize,
    pub records: Vec<ElementCorrector<T>>,
    #[serde(skip)]
    basis: Vec<Vec<T>>,
}

/// Assembles the corrected basis; every `(T, j)` pair must be present once.
pub fn corrected_basis<T: Scalar>(
    grid: &GridHierarchy,
    ell: usize,
    mut records: Vec<ElementCorrector<T>>,
) -> Result<CorrectorSet<T>> {
    records.sort_by_key(|c| (c.dof, c.element));
    let have: Vec<(usize, usize)> = records.iter().map(|c| (c.element, c.dof)).collect();
    let mut want = grid.correction_pairs();
    want.sort_by_key(|&(t, j)| (j, t));
    for &(t, j) in &want {
        if have
            .binary_search_by_key(&(j, t), |&(a, b)| (b, a))
            .is_err()
        {
            return Err(LodError::MissingCorrector { element: t, dof: j });
        }
    }
    if have.len() != want.len() {
        return Err(LodError::Config(format!(
            "{} corrector records for {} pairs",
            have.len(),
            want.len()
        )));
    }
    let mut basis: Vec<Vec<T>> = (0..grid.num_coarse_dofs())
        .map(|j| coarse_hat::<T>(grid, j))
        .collect();
    for rec in &records {
        let expect = grid.patch(rec.element, ell)?;
        if expect.block != rec.block || expect.fine_dofs.len() != rec.values.len() {
            return Err(LodError::Dimension(format!(
                "corrector ({}, {}) does not match its patch",
                rec.element, rec.dof
            )));
        }
        rec.add_to(grid, -T::one(), &mut basis[rec.dof]);
    }
    Ok(CorrectorSet {
        m: grid.m(),
        r: grid.r(),
        ell,
        records,
        basis,
    })
}

impl<T: Scalar> CorrectorSet<T> {
    pub fn grid(&self) -> GridHierarchy {
        GridHierarchy::new(self.m, self.r).expect("validated at construction")
    }

    /// Fine nodal vector of `Λ̃_j`.
    pub fn basis_vector(&self, j: usize) -> &[T] {
        &self.basis[j]
    }

    pub fn basis(&self) -> &[Vec<T>] {
        &self.basis
    }

    /// `N_h x N_H` matrix whose columns are the basis vectors.
    pub fn basis_matrix(&self) -> Csr<T> {
        let n = self.basis.first().map_or(0, Vec::len);
        let mut trip = Vec::new();
        for (j, col) in self.basis.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                if v != T::zero() {
                    trip.push((i, j, v));
                }
            }
        }
        Csr::from_triplets(n, self.basis.len(), trip)
    }

    pub fn record(&self, t: usize, j: usize) -> Option<&ElementCorrector<T>> {
        self.records.iter().find(|c| c.element == t && c.dof == j)
    }
}

impl<T: Scalar + Serialize + for<'de> Deserialize<'de>> CorrectorSet<T> {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("corrector sets serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: CorrectorSet<T> =
            serde_json::from_str(s).map_err(|e| LodError::Parse(e.to_string()))?;
        let grid = GridHierarchy::new(raw.m, raw.r)?;
        corrected_basis(&grid, raw.ell, raw.records)
    }
}

/// Reference LOD basis for a coefficient given per fine cell.
pub fn reference_basis<T: Scalar>(
    grid: &GridHierarchy,
    imat: &InterpolationMatrix<T>,
    cell_values: &[f64],
    ell: usize,
    mode: LinearTermMode,
) -> Result<CorrectorSet<T>> {
    corrected_basis(
        grid,
        ell,
        compute_correctors(grid, imat, cell_values, ell, mode)?,
    )
}

/// Energy distance `‖C_T^{ℓ_max} Λ_j − C_T^ℓ Λ_j‖_a` for `ℓ = 1..=ℓ_max`.
pub fn decay_profile<T: Scalar>(
    grid: &GridHierarchy,
    imat: &InterpolationMatrix<T>,
    cell_values: &[f64],
    t: usize,
    j: usize,
    ell_max: usize,
    mode: LinearTermMode,
) -> Result<Vec<(usize, T)>> {
    if ell_max < 1 || ell_max > grid.m() {
        return Err(LodError::Config(format!(
            "ell_max {ell_max} outside 1..={}",
            grid.m()
        )));
    }
    let s = assemble_stiffness::<T>(grid, cell_values, Support::All, &DofMap::interior(grid))?;
    let reference = solve_corrector(grid, imat, cell_values, t, j, ell_max, mode)?.to_global(grid);
    let mut out = Vec::with_capacity(ell_max);
    for ell in 1..=ell_max {
        let mut d = reference.clone();
        solve_corrector(grid, imat, cell_values, t, j, ell, mode)?.add_to(grid, -T::one(), &mut d);
        out.push((ell, s.bilinear(&d, &d).max(T::zero()).sqrt()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::gen_random_jumps;
    use crate::linalg::norm_inf;
    use nalgebra::{DMatrix, DVector};

    fn field(g: &GridHierarchy, seed: u64, n_eps: usize) -> Vec<f64> {
        let (_, f) = gen_random_jumps(seed, n_eps, 0.1, 1.0, 1)
            .unwrap()
            .remove(0);
        f.fine_values(g).unwrap()
    }

    /// Minimize the quadratic over an orthonormal basis of `ker C`.
    fn nullspace_qp(s: &Csr<f64>, c: &Csr<f64>, b: &[f64]) -> Vec<f64> {
        let n = s.nrows();
        let sd = DMatrix::from_row_slice(n, n, &s.to_dense());
        let cd = DMatrix::from_row_slice(c.nrows(), n, &c.to_dense());
        let eig = (cd.transpose() * &cd).symmetric_eigen();
        let tol = 1e-10 * eig.eigenvalues.amax().max(1.0);
        let cols: Vec<DVector<f64>> = (0..n)
            .filter(|&k| eig.eigenvalues[k].abs() <= tol)
            .map(|k| eig.eigenvectors.column(k).into_owned())
            .collect();
        assert_eq!(cols.len(), n - cd.rank(1e-10));
        let z = DMatrix::from_columns(&cols);
        let red = z.transpose() * &sd * &z;
        let rhs = z.transpose() * DVector::from_row_slice(b);
        let y = red.cholesky().unwrap().solve(&rhs);
        (z * y).iter().copied().collect()
    }

    #[test]
    fn agrees_with_dense_nullspace_qp() {
        let g = GridHierarchy::new(2, 2).unwrap();
        let im = InterpolationMatrix::<f64>::assemble(&g);
        let cells = field(&g, 5, 4);
        let patch = g.patch(0, 1).unwrap();
        let sys = PatchSystem::new(&im, &cells, patch).unwrap();
        let (b, _) = linear_term(&sys, &cells, 0, 0, LinearTermMode::ElementRestricted).unwrap();
        let (c, lambda) = sys.solve(&b);
        let oracle = nullspace_qp(sys.stiffness(), sys.constraint(), &b);
        let diff: Vec<f64> = c.iter().zip(&oracle).map(|(a, b)| a - b).collect();
        assert!(norm2(&diff) <= 1e-10 * norm2(&oracle));
        assert!(sys.kkt_residual(&c, &lambda, &b) < 1e-12);
        assert!(norm_inf(&sys.constraint().mul_vec(&c)) < 1e-12);
        assert!(norm2(&c) > 0.0);
    }

    #[test]
    fn r_one_gives_zero_correctors() {
        let g = GridHierarchy::new(4, 1).unwrap();
        let im = InterpolationMatrix::<f64>::assemble(&g);
        let cells = field(&g, 1, 4);
        let set = reference_basis(&g, &im, &cells, 1, LinearTermMode::ElementRestricted).unwrap();
        assert!(set
            .records
            .iter()
            .all(|c| c.values.iter().all(|v| v.abs() < 1e-14)));
        for j in 0..g.num_coarse_dofs() {
            let hat = coarse_hat::<f64>(&g, j);
            assert!(set
                .basis_vector(j)
                .iter()
                .zip(&hat)
                .all(|(a, b)| (a - b).abs() < 1e-14));
        }
    }

    #[test]
    fn corrected_basis_preserves_coarse_part() {
        let g = GridHierarchy::new(4, 3).unwrap();
        let im = InterpolationMatrix::<f64>::assemble(&g);
        let cells = field(&g, 2, 4);
        let set = reference_basis(&g, &im, &cells, 1, LinearTermMode::ElementRestricted).unwrap();
        for j in 0..g.num_coarse_dofs() {
            let ib = im.apply(set.basis_vector(j));
            for (k, v) in ib.iter().enumerate() {
                assert!((v - if k == j { 1.0 } else { 0.0 }).abs() < 1e-10);
            }
        }
        assert_eq!(set.records.len(), 9 * 4);
    }

    #[test]
    fn missing_pair_is_rejected() {
        let g = GridHierarchy::new(3, 2).unwrap();
        let im = InterpolationMatrix::<f64>::assemble(&g);
        let cells = vec![1.0; g.num_fine_elements()];
        let mut recs =
            compute_correctors(&g, &im, &cells, 1, LinearTermMode::ElementRestricted).unwrap();
        let gone = recs.remove(3);
        let err = corrected_basis(&g, 1, recs).unwrap_err();
        assert!(
            matches!(err, LodError::MissingCorrector { element, dof } if element == gone.element && dof == gone.dof)
        );
    }

    #[test]
    fn json_round_trip() {
        let g = GridHierarchy::new(3, 2).unwrap();
        let im = InterpolationMatrix::<f64>::assemble(&g);
        let cells = field(&g, 3, 3);
        let set = reference_basis(&g, &im, &cells, 1, LinearTermMode::ElementRestricted).unwrap();
        let back = CorrectorSet::<f64>::from_json(&set.to_json()).unwrap();
        assert_eq!(back, set);
        assert_eq!(back.basis(), set.basis());
    }

    #[test]
    fn wrong_element_is_rejected() {
        let g = GridHierarchy::new(4, 2).unwrap();
        let im = InterpolationMatrix::<f64>::assemble(&g);
        let cells = vec![1.0; g.num_fine_elements()];
        let far = g.coarse_element(3, 3);
        assert!(solve_corrector(
            &g,
            &im,
            &cells,
            far,
            0,
            1,
            LinearTermMode::ElementRestricted
        )
        .is_err());
    }

    #[test]
    fn decay_self_distance_is_zero() {
        let g = GridHierarchy::new(4, 2).unwrap();
        let im = InterpolationMatrix::<f64>::assemble(&g);
        let cells = field(&g, 9, 4);
        let t = g.dof_support(4)[0];
        let d = decay_profile(&g, &im, &cells, t, 4, 4, LinearTermMode::ElementRestricted).unwrap();
        assert_eq!(d.len(), 4);
        assert_eq!(d[3].1, 0.0);
    }
}
