//! Deep Ritz correctors: bubble-localized networks trained on the discrete
//! corrector energy with a self-adaptive penalty on `I_H α`.
//!
//! Correction problems whose patch, element, coarse node and material layout
//! coincide up to a symmetry of the square and a translation form one
//! configuration class. A class is served by a single network whose inputs
//! are expressed in a canonical frame of that class.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::coeff::CoefficientField;
use crate::error::{LodError, Result};
use crate::grid::{GridHierarchy, Patch};
use crate::linalg::{dot, Csr};
use crate::lodref::{
    corrected_basis, linear_term_with, patch_stiffness, CorrectorSet, ElementCorrector,
    LinearTermMode, PatchSystem,
};
use crate::nnet::{Adam, Batch, Direction, LrSchedule, Mlp, NetworkState};
use crate::qinterp::InterpolationMatrix;
use crate::scalar::Scalar;
use crate::seed::{child_rng, child_seed, Stream};

/// `κ ξ₁(a − ξ₁) ξ₂(b − ξ₂)` with `κ = 16 / (a² b²)`, zero outside the patch.
pub fn bubble(rect: (f64, f64, f64, f64), x: (f64, f64)) -> f64 {
    let (x0, y0, a, b) = rect;
    let (s, t) = (x.0 - x0, x.1 - y0);
    if !(0.0..=a).contains(&s) || !(0.0..=b).contains(&t) {
        return 0.0;
    }
    16.0 / (a * a * b * b) * s * (a - s) * t * (b - t)
}

/// Symmetry of a rectangle: optional transpose followed by axis flips.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Transform {
    pub swap: bool,
    pub flip_x: bool,
    pub flip_y: bool,
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        swap: false,
        flip_x: false,
        flip_y: false,
    };

    pub fn all() -> [Transform; 8] {
        std::array::from_fn(|k| Transform {
            swap: k & 4 != 0,
            flip_x: k & 2 != 0,
            flip_y: k & 1 != 0,
        })
    }

    /// Extents of the image of a `w x h` rectangle.
    pub fn dims(&self, w: usize, h: usize) -> (usize, usize) {
        if self.swap {
            (h, w)
        } else {
            (w, h)
        }
    }

    /// Image of lattice point `(u, v)`, `0 <= u <= w`.
    pub fn point(&self, u: usize, v: usize, w: usize, h: usize) -> (usize, usize) {
        let (a, b) = if self.swap { (v, u) } else { (u, v) };
        let (aw, bh) = self.dims(w, h);
        (
            if self.flip_x { aw - a } else { a },
            if self.flip_y { bh - b } else { b },
        )
    }

    /// Image of cell `(cx, cy)`, `0 <= cx < w`.
    pub fn cell(&self, cx: usize, cy: usize, w: usize, h: usize) -> (usize, usize) {
        let (a, b) = if self.swap { (cy, cx) } else { (cx, cy) };
        let (aw, bh) = self.dims(w, h);
        (
            if self.flip_x { aw - 1 - a } else { a },
            if self.flip_y { bh - 1 - b } else { b },
        )
    }
}

/// One `(T, j)` pair of a class and its map into the canonical frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Member {
    pub element: usize,
    pub dof: usize,
    pub transform: Transform,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigClass {
    pub id: usize,
    pub signature: Vec<u32>,
    pub members: Vec<Member>,
}

fn eps_per_coarse(grid: &GridHierarchy, field: &CoefficientField) -> Option<usize> {
    (field.n_eps() % grid.m() == 0).then(|| field.n_eps() / grid.m())
}

/// Description of `(T, j)` in the frame given by `g`.
fn signature(
    grid: &GridHierarchy,
    patch: &Patch,
    j: usize,
    kinds: Option<(&[u8], usize, usize)>,
    g: Transform,
) -> Vec<u32> {
    let b = patch.block;
    let (w, h) = (b.width(), b.height());
    let (aw, bh) = g.dims(w, h);
    let (ex, ey) = grid.coarse_element_pos(patch.center);
    let (tx, ty) = g.cell(ex - b.x0, ey - b.y0, w, h);
    let (cx, cy) = grid.coarse_dof_pos(j);
    let (jx, jy) = g.point(cx - b.x0, cy - b.y0, w, h);
    let mut sig = vec![
        aw as u32, bh as u32, tx as u32, ty as u32, jx as u32, jy as u32,
    ];
    let mut mask = vec![0u32; (aw + 1) * (bh + 1)];
    for v in 0..=h {
        for u in 0..=w {
            if grid.coarse_dof(b.x0 + u, b.y0 + v).is_some() {
                let (a, c) = g.point(u, v, w, h);
                mask[c * (aw + 1) + a] = 1;
            }
        }
    }
    sig.extend(mask);
    if let Some((kinds, n_eps, k)) = kinds {
        let (cw, ch) = (w * k, h * k);
        let (caw, _) = g.dims(cw, ch);
        let mut ks = vec![0u32; cw * ch];
        for v in 0..ch {
            for u in 0..cw {
                let (a, c) = g.cell(u, v, cw, ch);
                ks[c * caw + a] = kinds[(b.y0 * k + v) * n_eps + b.x0 * k + u] as u32 + 1;
            }
        }
        sig.extend(ks);
    }
    sig
}

/// Groups all `(T, j)` pairs into configuration classes.
///
/// With `share = false` (or ε-cells that do not tile coarse elements) every
/// pair is its own class in the identity frame.
pub fn plan_classes(
    grid: &GridHierarchy,
    ell: usize,
    template: &CoefficientField,
    share: bool,
) -> Result<Vec<ConfigClass>> {
    template.check_compatible(grid)?;
    let k = eps_per_coarse(grid, template);
    let kinds = template.kinds();
    let kind_view = k.map(|k| (kinds.as_slice(), template.n_eps(), k));
    let mut classes: Vec<ConfigClass> = Vec::new();
    let mut index: BTreeMap<Vec<u32>, usize> = BTreeMap::new();
    for (t, j) in grid.correction_pairs() {
        let patch = grid.patch(t, ell)?;
        if !share || k.is_none() {
            let sig = signature(grid, &patch, j, kind_view, Transform::IDENTITY);
            let id = classes.len();
            classes.push(ConfigClass {
                id,
                signature: sig,
                members: vec![Member {
                    element: t,
                    dof: j,
                    transform: Transform::IDENTITY,
                }],
            });
            continue;
        }
        let (sig, g) = Transform::all()
            .into_iter()
            .map(|g| (signature(grid, &patch, j, kind_view, g), g))
            .min_by(|a, b| a.0.cmp(&b.0))
            .expect("eight transforms");
        let member = Member {
            element: t,
            dof: j,
            transform: g,
        };
        match index.get(&sig) {
            Some(&id) => classes[id].members.push(member),
            None => {
                let id = classes.len();
                index.insert(sig.clone(), id);
                classes.push(ConfigClass {
                    id,
                    signature: sig,
                    members: vec![member],
                });
            }
        }
    }
    Ok(classes)
}

/// Feature map of the network inputs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InputSpec {
    /// Patch coordinates mapped to `[-1, 1]` (physical offsets otherwise).
    pub normalize: bool,
    pub coord_scale: f64,
    /// Factor on the normalized coefficient values.
    pub param_scale: f64,
}

impl Default for InputSpec {
    fn default() -> Self {
        InputSpec {
            normalize: true,
            coord_scale: 1.0,
            param_scale: 1.0,
        }
    }
}

/// Network inputs of one member for one coefficient.
#[derive(Clone, Debug, PartialEq)]
pub struct MemberInputs {
    pub patch: Patch,
    /// Canonical node coordinates, two per patch DOF (member node order).
    pub coords: Vec<f64>,
    /// Normalized coefficient values in canonical ε-cell order.
    pub params: Vec<f64>,
    pub bubble: Vec<f64>,
}

pub fn member_inputs(
    grid: &GridHierarchy,
    ell: usize,
    member: &Member,
    field: &CoefficientField,
    spec: &InputSpec,
) -> Result<MemberInputs> {
    field.check_compatible(grid)?;
    let patch = grid.patch(member.element, ell)?;
    let b = patch.block;
    let r = grid.r();
    let h = grid.fine_h();
    let g = member.transform;
    let (wf, hf) = (b.width() * r, b.height() * r);
    let (aw, bh) = g.dims(wf, hf);
    let rect = patch.rect();
    let mut coords = Vec::with_capacity(2 * patch.fine_dofs.len());
    let mut bub = Vec::with_capacity(patch.fine_dofs.len());
    for &d in &patch.fine_dofs {
        let (ix, iy) = grid.fine_dof_pos(d);
        let (a, c) = g.point(ix - b.x0 * r, iy - b.y0 * r, wf, hf);
        let (u, v) = if spec.normalize {
            (
                2.0 * a as f64 / aw as f64 - 1.0,
                2.0 * c as f64 / bh as f64 - 1.0,
            )
        } else {
            (a as f64 * h, c as f64 * h)
        };
        coords.push(spec.coord_scale * u);
        coords.push(spec.coord_scale * v);
        bub.push(bubble(rect, grid.fine_dof_coords(d)));
    }
    let params = match eps_per_coarse(grid, field) {
        Some(k) => {
            let (cw, ch) = (b.width() * k, b.height() * k);
            let (caw, _) = g.dims(cw, ch);
            let mut p = vec![0.0; cw * ch];
            for v in 0..ch {
                for u in 0..cw {
                    let (a, c) = g.cell(u, v, cw, ch);
                    p[c * caw + a] =
                        spec.param_scale * field.normalize(field.cell(b.x0 * k + u, b.y0 * k + v));
                }
            }
            p
        }
        None => field
            .restrict(&patch, true)
            .values
            .into_iter()
            .map(|v| spec.param_scale * v)
            .collect(),
    };
    Ok(MemberInputs {
        patch,
        coords,
        params,
        bubble: bub,
    })
}

/// Training configuration of the neural correctors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub width: usize,
    /// Number of affine layers (hidden layers + output).
    pub depth: usize,
    pub epochs: usize,
    pub schedule: LrSchedule,
    /// Schedule of the μ ascent; the θ schedule when absent.
    pub mu_schedule: Option<LrSchedule>,
    pub seed: u64,
    pub mode: LinearTermMode,
    pub activation_scaling: bool,
    pub inputs: InputSpec,
    /// Factor applied to all stiffness matrices of the loss; `1 / max a`
    /// of the field bounds when absent.
    pub stiffness_scale: Option<f64>,
    pub share_classes: bool,
    /// Supervised epochs on reference correctors before the variational phase.
    pub pretrain_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            width: 64,
            depth: 4,
            epochs: 5000,
            schedule: LrSchedule::default(),
            mu_schedule: None,
            seed: 0,
            mode: LinearTermMode::ElementRestricted,
            activation_scaling: false,
            inputs: InputSpec::default(),
            stiffness_scale: None,
            share_classes: true,
            pretrain_epochs: 0,
        }
    }
}

impl TrainConfig {
    pub fn widths(&self, n_params: usize) -> Vec<usize> {
        let mut w = vec![2 + n_params];
        w.extend(std::iter::repeat_n(
            self.width,
            self.depth.saturating_sub(1),
        ));
        w.push(1);
        w
    }
}

/// One coefficient sample of a correction problem, in its member's numbering.
#[derive(Clone, Debug)]
pub struct Sample {
    pub member: Member,
    pub field_index: usize,
    /// Scaled patch stiffness `S^ℓ(p_k)`.
    pub stiffness: Csr<f64>,
    /// Scaled linear term.
    pub rhs: Vec<f64>,
    /// Scaled lower bound `−½ Λ_jᵀ S_lin Λ_j`.
    pub bound: f64,
    pub constraint: Csr<f64>,
    pub inputs: MemberInputs,
    /// Exact corrector, when attached.
    pub reference: Option<Vec<f64>>,
}

/// All samples of one configuration class.
#[derive(Clone, Debug)]
pub struct CorrectionProblem {
    pub class: ConfigClass,
    pub ell: usize,
    pub n_fine: usize,
    pub n_coarse: usize,
    pub n_params: usize,
    pub scale: f64,
    pub samples: Vec<Sample>,
}

impl CorrectionProblem {
    /// Sample `k` uses field `k` on member `k mod |members|`.
    pub fn build(
        grid: &GridHierarchy,
        imat: &InterpolationMatrix<f64>,
        ell: usize,
        class: &ConfigClass,
        fields: &[CoefficientField],
        config: &TrainConfig,
    ) -> Result<Self> {
        if fields.is_empty() {
            return Err(LodError::Config(
                "a correction problem needs at least one coefficient sample".into(),
            ));
        }
        let scale = config.stiffness_scale.unwrap_or(1.0 / fields[0].bounds().1);
        let mut samples = Vec::with_capacity(fields.len());
        for (k, field) in fields.iter().enumerate() {
            let member = class.members[k % class.members.len()];
            let inputs = member_inputs(grid, ell, &member, field, &config.inputs)?;
            let cells = field.fine_values(grid)?;
            let s = patch_stiffness::<f64>(&cells, &inputs.patch)?;
            let (b, bound) = linear_term_with(
                &s,
                &inputs.patch,
                &cells,
                member.element,
                member.dof,
                config.mode,
            )?;
            samples.push(Sample {
                member,
                field_index: k,
                stiffness: s.scaled(scale),
                rhs: b.iter().map(|v| v * scale).collect(),
                bound: bound * scale,
                constraint: imat.restrict(&inputs.patch),
                inputs,
                reference: None,
            });
        }
        let first = &samples[0];
        let (n_fine, n_coarse, n_params) = (
            first.rhs.len(),
            first.constraint.nrows(),
            first.inputs.params.len(),
        );
        if samples.iter().any(|s| {
            s.rhs.len() != n_fine
                || s.constraint.nrows() != n_coarse
                || s.inputs.params.len() != n_params
        }) {
            return Err(LodError::Dimension(format!(
                "members of class {} have different patch sizes",
                class.id
            )));
        }
        Ok(CorrectionProblem {
            class: class.clone(),
            ell,
            n_fine,
            n_coarse,
            n_params,
            scale,
            samples,
        })
    }

    pub fn num_samples(&self) -> usize {
        self.samples.len()
    }

    /// Solves every sample exactly and stores the correctors.
    pub fn attach_references(
        &mut self,
        imat: &InterpolationMatrix<f64>,
        fields: &[CoefficientField],
        mode: LinearTermMode,
    ) -> Result<()> {
        for s in &mut self.samples {
            let field = &fields[s.field_index];
            let cells = field.fine_values(s.inputs.patch.grid())?;
            let system = PatchSystem::new(imat, &cells, s.inputs.patch.clone())?;
            let (b, _) = linear_term_with(
                system.stiffness(),
                system.patch(),
                &cells,
                s.member.element,
                s.member.dof,
                mode,
            )?;
            s.reference = Some(system.solve(&b).0);
        }
        Ok(())
    }

    /// Energy loss at the attached references (the attainable minimum).
    pub fn reference_energy(&self) -> Option<f64> {
        let alphas: Option<Vec<Vec<f64>>> =
            self.samples.iter().map(|s| s.reference.clone()).collect();
        alphas.map(|a| energy_loss(self, &a))
    }

    /// Sum of the per-sample lower bounds.
    pub fn lower_bound(&self) -> f64 {
        self.samples.iter().map(|s| s.bound).sum()
    }

    pub fn batch<T: Scalar>(&self) -> Batch<T> {
        let rows = self.n_fine * self.samples.len();
        let mut x = Vec::with_capacity(2 * rows);
        let mut p = Vec::with_capacity(self.n_params * self.samples.len());
        for s in &self.samples {
            x.extend(s.inputs.coords.iter().map(|&v| T::lit(v)));
            p.extend(s.inputs.params.iter().map(|&v| T::lit(v)));
        }
        Batch {
            dx: 2,
            x,
            dp: self.n_params,
            p,
            groups: (0..=self.samples.len()).map(|k| k * self.n_fine).collect(),
        }
    }
}

/// `Σ_k ½ α_kᵀ S_k α_k − b_kᵀ α_k`.
pub fn energy_loss(problem: &CorrectionProblem, alphas: &[Vec<f64>]) -> f64 {
    problem
        .samples
        .iter()
        .zip(alphas)
        .map(|(s, a)| 0.5 * s.stiffness.bilinear(a, a) - dot(&s.rhs, a))
        .sum()
}

/// `(1/N) ‖μ ⊙ I α‖²` with `N = N_H^ℓ N_s`.
pub fn interp_loss(problem: &CorrectionProblem, alphas: &[Vec<f64>], mu: &[f64]) -> Result<f64> {
    let nc = problem.n_coarse;
    if mu.len() != nc * problem.samples.len() {
        return Err(LodError::Dimension(format!(
            "{} weights for {} constraints",
            mu.len(),
            nc * problem.samples.len()
        )));
    }
    if let Some((index, &value)) = mu.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        return Err(LodError::NonPositiveWeight { index, value });
    }
    let mut acc = 0.0;
    for (k, (s, a)) in problem.samples.iter().zip(alphas).enumerate() {
        for (i, v) in s.constraint.mul_vec(a).into_iter().enumerate() {
            let w = mu[k * nc + i] * v;
            acc += w * w;
        }
    }
    Ok(acc / mu.len() as f64)
}

/// `α = bubble ⊙ v_θ(z, p_k)` for sample `k`.
pub fn predict_alpha<T: Scalar>(
    net: &Mlp<T>,
    problem: &CorrectionProblem,
    k: usize,
) -> Result<Vec<f64>> {
    alpha_from_inputs(net, &problem.samples[k].inputs)
}

fn alpha_from_inputs<T: Scalar>(net: &Mlp<T>, inputs: &MemberInputs) -> Result<Vec<f64>> {
    let n = inputs.bubble.len();
    let batch = Batch {
        dx: 2,
        x: inputs.coords.iter().map(|&v| T::lit(v)).collect(),
        dp: inputs.params.len(),
        p: inputs.params.iter().map(|&v| T::lit(v)).collect(),
        groups: vec![0, n],
    };
    let out = net.forward_tape(&batch)?.out;
    Ok(out
        .iter()
        .zip(&inputs.bubble)
        .map(|(o, b)| b * o.to_f64_lossy())
        .collect())
}

/// Loss terms at one parameter state and the gradient with respect to the
/// raw network outputs.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub energy: f64,
    pub interp: f64,
    pub alphas: Vec<Vec<f64>>,
    /// `I_k α_k`, stacked.
    pub residual: Vec<f64>,
    pub d_out: Vec<f64>,
}

pub fn evaluate(problem: &CorrectionProblem, out: &[f64], mu: &[f64]) -> Evaluation {
    let (nf, nc) = (problem.n_fine, problem.n_coarse);
    let n_total = mu.len() as f64;
    let mut energy = 0.0;
    let mut interp = 0.0;
    let mut alphas = Vec::with_capacity(problem.samples.len());
    let mut residual = Vec::with_capacity(mu.len());
    let mut d_out = Vec::with_capacity(out.len());
    for (k, s) in problem.samples.iter().enumerate() {
        let alpha: Vec<f64> = out[k * nf..(k + 1) * nf]
            .iter()
            .zip(&s.inputs.bubble)
            .map(|(o, b)| o * b)
            .collect();
        let sa = s.stiffness.mul_vec(&alpha);
        energy += 0.5 * dot(&alpha, &sa) - dot(&s.rhs, &alpha);
        let ia = s.constraint.mul_vec(&alpha);
        let mut weighted = vec![0.0; nc];
        for i in 0..nc {
            let m = mu[k * nc + i];
            interp += (m * ia[i]).powi(2);
            weighted[i] = 2.0 / n_total * m * m * ia[i];
        }
        let mut g: Vec<f64> = sa.iter().zip(&s.rhs).map(|(a, b)| a - b).collect();
        s.constraint.mul_vec_transpose_acc(1.0, &weighted, &mut g);
        d_out.extend(g.iter().zip(&s.inputs.bubble).map(|(g, b)| g * b));
        residual.extend(ia);
        alphas.push(alpha);
    }
    Evaluation {
        energy,
        interp: interp / n_total,
        alphas,
        residual,
        d_out,
    }
}

/// Loss curve entry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub energy: f64,
    pub interp: f64,
}

/// Network, self-adaptive weights and their optimizer states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct TrainState<T> {
    pub class: ConfigClass,
    pub ell: usize,
    pub inputs: InputSpec,
    pub epoch: usize,
    pub network: crate::nnet::Checkpoint<T>,
    pub mu: Vec<f64>,
    pub mu_adam: Adam<f64>,
}

impl<T: Scalar> TrainState<T> {
    /// Glorot network and μ uniform on `(0, 1)`, both seeded by the class id.
    pub fn init(problem: &CorrectionProblem, config: &TrainConfig) -> Result<Self> {
        let id = problem.class.id as u64;
        let net = NetworkState::<T>::init(
            &config.widths(problem.n_params),
            child_seed(config.seed, Stream::NetworkInit, id),
            config.activation_scaling,
        )?;
        let mut rng = child_rng(config.seed, Stream::AdaptiveWeights, id);
        let n = problem.n_coarse * problem.num_samples();
        let mu = (0..n).map(|_| rng.random::<f64>().max(MU_FLOOR)).collect();
        Ok(TrainState {
            class: problem.class.clone(),
            ell: problem.ell,
            inputs: config.inputs,
            epoch: 0,
            network: net.checkpoint(),
            mu,
            mu_adam: Adam::new(n),
        })
    }

    pub fn network(&self) -> Result<NetworkState<T>> {
        NetworkState::from_checkpoint(self.network.clone())
    }

    pub fn mlp(&self) -> Result<Mlp<T>> {
        Ok(self.network()?.net)
    }
}

impl<T: Scalar + Serialize + for<'de> Deserialize<'de>> TrainState<T> {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("training states serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| LodError::Parse(e.to_string()))
    }
}

pub const MU_FLOOR: f64 = 1e-12;

fn max_abs(v: &[Vec<f64>]) -> f64 {
    v.iter().flatten().fold(0.0, |a, x| a.max(x.abs()))
}

fn check_epoch(problem: &CorrectionProblem, ev: &Evaluation, epoch: usize) -> Result<()> {
    if !ev.energy.is_finite() {
        return Err(LodError::NonFiniteLoss {
            epoch,
            term: "energy",
            max_alpha: max_abs(&ev.alphas),
        });
    }
    if !ev.interp.is_finite() {
        return Err(LodError::NonFiniteLoss {
            epoch,
            term: "interpolation",
            max_alpha: max_abs(&ev.alphas),
        });
    }
    let bound = problem.lower_bound();
    let quad: f64 = problem
        .samples
        .iter()
        .zip(&ev.alphas)
        .map(|(s, a)| 0.5 * s.stiffness.bilinear(a, a))
        .sum();
    // rounding of the two quadratic forms in double precision
    let slack = 1e-12 * (1.0 + bound.abs() + quad);
    if ev.energy < bound - slack {
        return Err(LodError::LowerBoundViolated {
            epoch,
            energy: ev.energy,
            bound,
        });
    }
    Ok(())
}

fn forward_out<T: Scalar>(
    net: &Mlp<T>,
    batch: &Batch<T>,
) -> Result<(crate::nnet::Tape<T>, Vec<f64>)> {
    let tape = net.forward_tape(batch)?;
    let out = tape.out.iter().map(|v| v.to_f64_lossy()).collect();
    Ok((tape, out))
}

/// Runs `epochs` epochs of the min–max training and returns the loss curve.
///
/// Each epoch takes one Adam descent step on θ at the current μ, then one
/// Adam ascent step on μ at the updated θ.
pub fn train<T: Scalar>(
    problem: &CorrectionProblem,
    state: &mut TrainState<T>,
    config: &TrainConfig,
    epochs: usize,
) -> Result<Vec<LossRecord>> {
    if state.mu.len() != problem.n_coarse * problem.num_samples() {
        return Err(LodError::Dimension(
            "training state does not match the correction problem".into(),
        ));
    }
    let mut net = state.network()?;
    let batch = problem.batch::<T>();
    let mu_schedule = config.mu_schedule.unwrap_or(config.schedule);
    let mut losses = Vec::with_capacity(epochs);
    let mut cached: Option<(crate::nnet::Tape<T>, Vec<f64>)> = None;
    for _ in 0..epochs {
        let epoch = state.epoch;
        let (tape, out) = match cached.take() {
            Some(c) => c,
            None => forward_out(&net.net, &batch)?,
        };
        let ev = evaluate(problem, &out, &state.mu);
        check_epoch(problem, &ev, epoch)?;
        losses.push(LossRecord {
            epoch,
            energy: ev.energy,
            interp: ev.interp,
        });
        let d_out: Vec<T> = ev.d_out.iter().map(|&v| T::lit(v)).collect();
        let grad = net.net.backward(&batch, &tape, &d_out);
        net.step(&grad, &config.schedule);

        let (tape, out) = forward_out(&net.net, &batch)?;
        let ev = evaluate(problem, &out, &state.mu);
        let n = state.mu.len() as f64;
        let g_mu: Vec<f64> = state
            .mu
            .iter()
            .zip(&ev.residual)
            .map(|(m, r)| 2.0 / n * m * r * r)
            .collect();
        state
            .mu_adam
            .step(&mut state.mu, &g_mu, &mu_schedule, Direction::Ascent);
        for (index, m) in state.mu.iter_mut().enumerate() {
            if !m.is_finite() {
                return Err(LodError::NonPositiveWeight { index, value: *m });
            }
            *m = m.max(MU_FLOOR);
        }
        cached = Some((tape, out));
        state.epoch += 1;
    }
    state.network = net.checkpoint();
    Ok(losses)
}

/// Supervised fit of `α` to the attached reference correctors with a fresh
/// optimizer; the optimizer state is reset afterwards.
pub fn pretrain<T: Scalar>(
    problem: &CorrectionProblem,
    state: &mut TrainState<T>,
    config: &TrainConfig,
    epochs: usize,
) -> Result<Vec<f64>> {
    let refs: Vec<&Vec<f64>> = problem
        .samples
        .iter()
        .map(|s| {
            s.reference
                .as_ref()
                .ok_or_else(|| LodError::Config("pretraining needs reference correctors".into()))
        })
        .collect::<Result<_>>()?;
    let mut net = state.network()?;
    let seed = net.seed;
    let batch = problem.batch::<T>();
    let nf = problem.n_fine;
    let total = (nf * problem.num_samples()) as f64;
    let mut curve = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let (tape, out) = forward_out(&net.net, &batch)?;
        let mut loss = 0.0;
        let mut d_out = Vec::with_capacity(out.len());
        for (k, s) in problem.samples.iter().enumerate() {
            for i in 0..nf {
                let b = s.inputs.bubble[i];
                let e = b * out[k * nf + i] - refs[k][i];
                loss += e * e / total;
                d_out.push(T::lit(2.0 * e * b / total));
            }
        }
        curve.push(loss);
        let grad = net.net.backward(&batch, &tape, &d_out);
        net.step(&grad, &config.schedule);
    }
    let n = net.net.num_params();
    state.network = NetworkState {
        net: net.net,
        adam: Adam::new(n),
        seed,
    }
    .checkpoint();
    Ok(curve)
}

/// Trained network of one class, ready for prediction.
#[derive(Clone, Debug)]
pub struct ClassNetwork<T> {
    pub class: ConfigClass,
    pub ell: usize,
    pub inputs: InputSpec,
    pub net: Mlp<T>,
}

impl<T: Scalar> ClassNetwork<T> {
    pub fn from_state(state: &TrainState<T>) -> Result<Self> {
        Ok(ClassNetwork {
            class: state.class.clone(),
            ell: state.ell,
            inputs: state.inputs,
            net: state.mlp()?,
        })
    }
}

/// Neural corrected basis `Λ̂_j = Λ_j − Σ_T v_θ^{T,j}` for one coefficient.
pub fn predict_basis<T: Scalar>(
    grid: &GridHierarchy,
    field: &CoefficientField,
    ell: usize,
    nets: &[ClassNetwork<T>],
) -> Result<CorrectorSet<f64>> {
    let mut by_pair: BTreeMap<(usize, usize), (&ClassNetwork<T>, Member)> = BTreeMap::new();
    for cn in nets {
        if cn.ell != ell {
            return Err(LodError::Config(format!(
                "network for class {} was trained with ell = {}, not {ell}",
                cn.class.id, cn.ell
            )));
        }
        for m in &cn.class.members {
            by_pair.insert((m.element, m.dof), (cn, *m));
        }
    }
    let missing: Vec<(usize, usize)> = grid
        .correction_pairs()
        .into_iter()
        .filter(|p| !by_pair.contains_key(p))
        .collect();
    if !missing.is_empty() {
        return Err(LodError::MissingNetwork(missing));
    }
    let mut records = Vec::with_capacity(by_pair.len());
    for ((t, j), (cn, member)) in by_pair {
        let inputs = member_inputs(grid, ell, &member, field, &cn.inputs)?;
        let values = alpha_from_inputs(&cn.net, &inputs)?;
        records.push(ElementCorrector {
            element: t,
            dof: j,
            block: inputs.patch.block,
            values,
        });
    }
    corrected_basis(grid, ell, records)
}
