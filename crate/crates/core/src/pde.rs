//! Elliptic and backward-Euler parabolic solves in a multiscale space.
//!
//! A space is either the fine FEM space itself or the span of the columns of
//! a basis matrix `B` (fine nodal vectors of corrected basis functions).
//! Reduced operators are the Galerkin projections `Bᵀ X B`.

use serde::{Deserialize, Serialize};

use crate::error::{LodError, Result};
use crate::linalg::{dot, BandedCholesky, Csr, DenseCholesky};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpaceKind {
    Lod,
    LodAnn,
    FemFine,
}

/// Discretization space of one time step.
#[derive(Clone, Debug)]
pub enum Space {
    /// Standard Q1 space on the fine mesh with stiffness `S_h`.
    Fine { stiffness: Csr<f64> },
    /// Span of the columns of `basis` (`N_h x N_H`).
    Reduced {
        basis: Csr<f64>,
        stiffness: Csr<f64>,
    },
}

/// Dense `Bᵀ X B` (row-major).
pub fn galerkin(basis: &Csr<f64>, x: &Csr<f64>) -> Vec<f64> {
    let nc = basis.ncols();
    let bt = basis.transpose();
    let cols: Vec<Vec<f64>> = (0..nc)
        .map(|j| {
            let mut v = vec![0.0; basis.nrows()];
            let (idx, val) = bt.row(j);
            for (&i, &b) in idx.iter().zip(val) {
                v[i] = b;
            }
            v
        })
        .collect();
    let mut out = vec![0.0; nc * nc];
    for j in 0..nc {
        let xb = x.mul_vec(&cols[j]);
        for i in 0..nc {
            let (idx, val) = bt.row(i);
            out[i * nc + j] = idx.iter().zip(val).map(|(&k, &b)| b * xb[k]).sum();
        }
    }
    for i in 0..nc {
        for j in 0..i {
            let avg = 0.5 * (out[i * nc + j] + out[j * nc + i]);
            out[i * nc + j] = avg;
            out[j * nc + i] = avg;
        }
    }
    out
}

fn mul_dense(n: usize, a: &[f64], x: &[f64]) -> Vec<f64> {
    (0..n).map(|i| dot(&a[i * n..(i + 1) * n], x)).collect()
}

/// Solution of `(BᵀS_hB) c = Bᵀ M_h f` and its fine representation `B c`.
pub fn solve_elliptic(
    basis: &Csr<f64>,
    s_h: &Csr<f64>,
    m_h: &Csr<f64>,
    f: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let nc = basis.ncols();
    let a = galerkin(basis, s_h);
    let mut rhs = vec![0.0; nc];
    basis.mul_vec_transpose_acc(1.0, &m_h.mul_vec(f), &mut rhs);
    let chol = DenseCholesky::factor(nc, &a)
        .map_err(|e| LodError::Config(format!("reduced stiffness is singular: {e}")))?;
    let c = chol.solve(&rhs);
    let res: Vec<f64> = mul_dense(nc, &a, &c)
        .iter()
        .zip(&rhs)
        .map(|(x, y)| x - y)
        .collect();
    let scale = dot(&rhs, &rhs).sqrt();
    if dot(&res, &res).sqrt() > 1e-10 * scale.max(f64::MIN_POSITIVE) {
        return Err(LodError::Config(
            "reduced elliptic solve did not converge".into(),
        ));
    }
    let u = basis.mul_vec(&c);
    Ok((c, u))
}

/// Fine FEM solution of `S_h u = M_h f`.
pub fn solve_fine(s_h: &Csr<f64>, m_h: &Csr<f64>, f: &[f64]) -> Result<Vec<f64>> {
    Ok(BandedCholesky::factor(s_h)?.solve(&m_h.mul_vec(f)))
}

/// Backward-Euler trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MsSolution {
    pub space: SpaceKind,
    pub times: Vec<f64>,
    /// Coordinates in the space of each step (fine values for `FemFine`).
    pub coeffs: Vec<Vec<f64>>,
    /// Fine nodal values `u^m = B(t_m) c^m`.
    pub fine: Vec<Vec<f64>>,
}

enum Factored {
    Fine(BandedCholesky<f64>),
    Reduced {
        basis: Csr<f64>,
        mass: Vec<f64>,
        system: DenseCholesky<f64>,
    },
}

fn factor_space(space: Space, m_h: &Csr<f64>, tau: f64) -> Result<Factored> {
    Ok(match space {
        Space::Fine { stiffness } => {
            Factored::Fine(BandedCholesky::factor(&m_h.add_scaled(tau, &stiffness))?)
        }
        Space::Reduced { basis, stiffness } => {
            let mass = galerkin(&basis, m_h);
            let a = galerkin(&basis, &stiffness);
            let sys: Vec<f64> = mass.iter().zip(&a).map(|(m, a)| m + tau * a).collect();
            let system = DenseCholesky::factor(basis.ncols(), &sys)?;
            Factored::Reduced {
                basis,
                mass,
                system,
            }
        }
    })
}

impl Factored {
    /// Solves `(M + τA) c = Bᵀ (M_h u_prev + τ M_h f)`.
    fn step(&self, m_h: &Csr<f64>, u_prev: &[f64], load: &[f64], tau: f64) -> (Vec<f64>, Vec<f64>) {
        let mut r = m_h.mul_vec(u_prev);
        r.iter_mut().zip(load).for_each(|(x, l)| *x += tau * l);
        match self {
            Factored::Fine(ch) => {
                let u = ch.solve(&r);
                (u.clone(), u)
            }
            Factored::Reduced { basis, system, .. } => {
                let mut rhs = vec![0.0; basis.ncols()];
                basis.mul_vec_transpose_acc(1.0, &r, &mut rhs);
                let c = system.solve(&rhs);
                let u = basis.mul_vec(&c);
                (c, u)
            }
        }
    }

    /// L² projection of a fine vector into the space.
    fn project(&self, m_h: &Csr<f64>, u: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        match self {
            Factored::Fine(_) => Ok((u.to_vec(), u.to_vec())),
            Factored::Reduced { basis, mass, .. } => {
                let mut rhs = vec![0.0; basis.ncols()];
                basis.mul_vec_transpose_acc(1.0, &m_h.mul_vec(u), &mut rhs);
                let c = DenseCholesky::factor(basis.ncols(), mass)?.solve(&rhs);
                let u = basis.mul_vec(&c);
                Ok((c, u))
            }
        }
    }
}

/// One backward-Euler step from the fine representation `u_prev`.
pub fn step_parabolic(
    space: Space,
    m_h: &Csr<f64>,
    u_prev: &[f64],
    tau: f64,
    f: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(tau > 0.0) {
        return Err(LodError::Config(format!(
            "time step {tau} must be positive"
        )));
    }
    Ok(factor_space(space, m_h, tau)?.step(m_h, u_prev, &m_h.mul_vec(f), tau))
}

/// `steps` backward-Euler steps of size `t_end / steps`.
///
/// `space(m, t_m)` returns the space of step `m` (`m = 0` is the initial
/// projection), or `None` if it is unchanged from the previous step. The
/// previous state always enters through its fine representation.
pub fn solve_parabolic(
    kind: SpaceKind,
    m_h: &Csr<f64>,
    u0: &[f64],
    f: &[f64],
    t_end: f64,
    steps: usize,
    mut space: impl FnMut(usize, f64) -> Result<Option<Space>>,
) -> Result<MsSolution> {
    if steps == 0 || !(t_end > 0.0) {
        return Err(LodError::Config(format!(
            "need a positive horizon and step count, got T = {t_end}, M = {steps}"
        )));
    }
    let tau = t_end / steps as f64;
    let load = m_h.mul_vec(f);
    let first =
        space(0, 0.0)?.ok_or_else(|| LodError::Config("no space for the initial step".into()))?;
    let mut current = factor_space(first, m_h, tau)?;
    let (c0, u) = current.project(m_h, u0)?;
    let mut sol = MsSolution {
        space: kind,
        times: vec![0.0],
        coeffs: vec![c0],
        fine: vec![u],
    };
    for m in 1..=steps {
        let t = m as f64 * tau;
        if let Some(s) = space(m, t)? {
            current = factor_space(s, m_h, tau)?;
        }
        let (c, u) = current.step(m_h, sol.fine.last().expect("initial state"), &load, tau);
        sol.times.push(t);
        sol.coeffs.push(c);
        sol.fine.push(u);
    }
    Ok(sol)
}

/// `sqrt(uᵀ X u)`.
pub fn norm_with(x: &Csr<f64>, u: &[f64]) -> f64 {
    x.bilinear(u, u).max(0.0).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Norm {
    L2,
    H1,
    Energy,
}

/// Matrices defining the error norms on the fine mesh.
#[derive(Clone, Debug)]
pub struct NormMatrices {
    pub mass: Csr<f64>,
    /// Stiffness with `a ≡ 1` (H¹ seminorm).
    pub laplace: Csr<f64>,
    /// Stiffness with the problem coefficient.
    pub energy: Csr<f64>,
}

impl NormMatrices {
    pub fn get(&self, norm: Norm) -> &Csr<f64> {
        match norm {
            Norm::L2 => &self.mass,
            Norm::H1 => &self.laplace,
            Norm::Energy => &self.energy,
        }
    }
}

/// Relative error `‖u1 − u2‖ / ‖u2‖`; returns the absolute error with
/// `true` when `‖u2‖ = 0`.
pub fn rel_error(u1: &[f64], u2: &[f64], x: &Csr<f64>) -> (f64, bool) {
    let d: Vec<f64> = u1.iter().zip(u2).map(|(a, b)| a - b).collect();
    let num = norm_with(x, &d);
    let den = norm_with(x, u2);
    if den > 0.0 {
        (num / den, false)
    } else {
        (num, true)
    }
}
