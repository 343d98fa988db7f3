//! End-to-end pipelines: coefficient ensembles, reference and neural bases,
//! parabolic solves and their comparison.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::coeff::{
    gen_battery, gen_random_jumps_stream, BatteryGeometry, CoefficientField, ParamVector,
};
use crate::deepritz::{
    plan_classes, predict_basis, pretrain, train, ClassNetwork, ConfigClass, CorrectionProblem,
    InputSpec, LossRecord, TrainConfig, TrainState,
};
use crate::error::{LodError, Result};
use crate::fem::{assemble_mass, assemble_stiffness, DofMap, Support};
use crate::grid::GridHierarchy;
use crate::linalg::Csr;
use crate::lodref::{reference_basis, CorrectorSet, LinearTermMode};
use crate::nnet::LrSchedule;
use crate::pde::{rel_error, solve_parabolic, MsSolution, Norm, NormMatrices, Space, SpaceKind};
use crate::qinterp::InterpolationMatrix;
use crate::seed::Stream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoefficientKind {
    /// Independent uniform values per ε-cell.
    Random,
    /// Strip layout with random active-material conductivities.
    Battery,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoefficientInTime {
    /// One coefficient for the whole run.
    Constant,
    /// Step `m` uses test coefficient `(m - 1) mod n_test`.
    Sequence,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub m: usize,
    pub r: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientConfig {
    pub kind: CoefficientKind,
    pub n_eps: usize,
    pub lo: f64,
    pub hi: f64,
    pub n_train: usize,
    pub n_test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub width: usize,
    pub depth: usize,
    #[serde(default)]
    pub activation_scaling: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub lr0: f64,
    pub decay_rate: f64,
    pub decay_steps: f64,
    #[serde(default)]
    pub staircase: bool,
    /// Initial learning rate of the μ ascent (θ schedule when absent).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_lr0: Option<f64>,
    #[serde(default)]
    pub mode: LinearTermMode,
    #[serde(default = "yes")]
    pub normalize_inputs: bool,
    #[serde(default = "unit")]
    pub coord_scale: f64,
    #[serde(default = "unit")]
    pub param_scale: f64,
    #[serde(default = "yes")]
    pub share_classes: bool,
    #[serde(default)]
    pub pretrain_epochs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stiffness_scale: Option<f64>,
}

fn yes() -> bool {
    true
}

fn unit() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub t_end: f64,
    pub steps: usize,
    /// Constant source `f`.
    pub source: f64,
    pub coefficient_in_time: CoefficientInTime,
    /// Times at which solution snapshots are written.
    pub snapshots: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub ell: usize,
    pub output_dir: String,
    pub norm: Norm,
    pub mesh: MeshConfig,
    pub coefficients: CoefficientConfig,
    pub network: NetworkConfig,
    pub training: TrainingConfig,
    pub time: TimeConfig,
}

impl ExperimentConfig {
    /// Random jumps on `ε = 1/36`, `H = 1/6`, `h = 1/36`, width 128, depth 8,
    /// 30000 epochs.
    pub fn example1_full() -> Self {
        ExperimentConfig {
            name: "example1".into(),
            seed: 0,
            ell: 1,
            output_dir: "out/example1".into(),
            norm: Norm::L2,
            mesh: MeshConfig { m: 6, r: 6 },
            coefficients: CoefficientConfig {
                kind: CoefficientKind::Random,
                n_eps: 36,
                lo: 0.1,
                hi: 1.0,
                n_train: 40,
                n_test: 1,
            },
            network: NetworkConfig {
                width: 128,
                depth: 8,
                activation_scaling: false,
            },
            training: TrainingConfig {
                epochs: 30_000,
                lr0: 1e-3,
                decay_rate: 0.9,
                decay_steps: 1000.0,
                staircase: false,
                mu_lr0: Some(1e-2),
                mode: LinearTermMode::ElementRestricted,
                normalize_inputs: true,
                coord_scale: 6.0,
                // i.i.d. cell values: too few samples to learn the dependence
                param_scale: 0.0,
                share_classes: true,
                pretrain_epochs: 0,
                stiffness_scale: None,
            },
            time: TimeConfig {
                t_end: 1.0,
                steps: 25,
                source: 1.0,
                coefficient_in_time: CoefficientInTime::Constant,
                snapshots: vec![0.5, 1.0],
            },
        }
    }

    /// Reduced variant: width 64, depth 4, 5000 epochs, 10 training fields.
    pub fn example1_ci() -> Self {
        let mut c = Self::example1_full();
        c.name = "example1-ci".into();
        c.output_dir = "out/example1-ci".into();
        c.coefficients.n_train = 10;
        c.network = NetworkConfig {
            width: 64,
            depth: 4,
            activation_scaling: false,
        };
        c.training.epochs = 5000;
        c
    }

    /// Battery strips on `H = 1/6`, `h = 1/60` with 15 training and 25 test
    /// parametrizations.
    pub fn example2_full() -> Self {
        let geo = BatteryGeometry::default_stack();
        let (lo, hi) = geo.bounds();
        let mut c = Self::example1_full();
        c.name = "example2".into();
        c.output_dir = "out/example2".into();
        c.mesh = MeshConfig { m: 6, r: 10 };
        c.coefficients = CoefficientConfig {
            kind: CoefficientKind::Battery,
            n_eps: geo.n_eps,
            lo,
            hi,
            n_train: 15,
            n_test: 25,
        };
        c.training.lr0 = 1e-2;
        c.training.param_scale = 0.05;
        c
    }

    pub fn example2_ci() -> Self {
        let mut c = Self::example2_full();
        c.name = "example2-ci".into();
        c.output_dir = "out/example2-ci".into();
        c.network = NetworkConfig {
            width: 64,
            depth: 4,
            activation_scaling: false,
        };
        c.training.epochs = 5000;
        c
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "example1" => Some(Self::example1_full()),
            "example1-ci" => Some(Self::example1_ci()),
            "example2" => Some(Self::example2_full()),
            "example2-ci" => Some(Self::example2_ci()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let grid = GridHierarchy::new(self.mesh.m, self.mesh.r)?;
        if grid.n() % self.coefficients.n_eps != 0 {
            return Err(LodError::Config(format!(
                "n_eps = {} does not divide the fine resolution {}",
                self.coefficients.n_eps,
                grid.n()
            )));
        }
        if self.coefficients.kind == CoefficientKind::Battery
            && self.coefficients.n_eps != BatteryGeometry::default_stack().n_eps
        {
            return Err(LodError::Config(
                "the battery layout is defined on 30 strips per side".into(),
            ));
        }
        if self.ell < 1 {
            return Err(LodError::Config("ell must be at least 1".into()));
        }
        if self.network.depth < 1 || self.network.width < 1 {
            return Err(LodError::Config(
                "network width and depth must be positive".into(),
            ));
        }
        if self.time.steps == 0 || !(self.time.t_end > 0.0) {
            return Err(LodError::Config(
                "time horizon and step count must be positive".into(),
            ));
        }
        if !(self.coefficients.lo > 0.0 && self.coefficients.hi >= self.coefficients.lo) {
            return Err(LodError::Config(
                "coefficient bounds must satisfy 0 < lo <= hi".into(),
            ));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<GridHierarchy> {
        GridHierarchy::new(self.mesh.m, self.mesh.r)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.training;
        let schedule = LrSchedule {
            lr0: t.lr0,
            decay_rate: t.decay_rate,
            decay_steps: t.decay_steps,
            staircase: t.staircase,
        };
        TrainConfig {
            width: self.network.width,
            depth: self.network.depth,
            epochs: t.epochs,
            schedule,
            mu_schedule: t.mu_lr0.map(|lr0| LrSchedule { lr0, ..schedule }),
            seed: self.seed,
            mode: t.mode,
            activation_scaling: self.network.activation_scaling,
            inputs: InputSpec {
                normalize: t.normalize_inputs,
                coord_scale: t.coord_scale,
                param_scale: t.param_scale,
            },
            stiffness_scale: t.stiffness_scale,
            share_classes: t.share_classes,
            pretrain_epochs: t.pretrain_epochs,
        }
    }

    fn generate(
        &self,
        stream: Stream,
        count: usize,
    ) -> Result<Vec<(ParamVector, CoefficientField)>> {
        let c = &self.coefficients;
        match c.kind {
            CoefficientKind::Random => {
                gen_random_jumps_stream(self.seed, stream, 0, c.n_eps, c.lo, c.hi, count)
            }
            CoefficientKind::Battery => gen_battery(
                self.seed,
                stream,
                0,
                &BatteryGeometry::default_stack(),
                count,
            ),
        }
    }

    pub fn train_fields(&self) -> Result<Vec<(ParamVector, CoefficientField)>> {
        self.generate(Stream::TrainCoefficients, self.coefficients.n_train)
    }

    pub fn test_fields(&self) -> Result<Vec<(ParamVector, CoefficientField)>> {
        self.generate(Stream::TestCoefficients, self.coefficients.n_test)
    }
}

/// Mesh-level objects shared by every solve of an experiment.
#[derive(Clone, Debug)]
pub struct Setup {
    pub grid: GridHierarchy,
    pub imat: InterpolationMatrix<f64>,
    pub mass: Csr<f64>,
    pub laplace: Csr<f64>,
}

impl Setup {
    pub fn new(grid: GridHierarchy) -> Result<Self> {
        let dofs = DofMap::interior(&grid);
        let imat = InterpolationMatrix::assemble(&grid);
        let mass = assemble_mass(&grid, Support::All, &dofs)?;
        let laplace = assemble_stiffness(
            &grid,
            &vec![1.0; grid.num_fine_elements()],
            Support::All,
            &dofs,
        )?;
        Ok(Setup {
            grid,
            imat,
            mass,
            laplace,
        })
    }

    pub fn stiffness(&self, field: &CoefficientField) -> Result<Csr<f64>> {
        assemble_stiffness(
            &self.grid,
            &field.fine_values(&self.grid)?,
            Support::All,
            &DofMap::interior(&self.grid),
        )
    }

    pub fn norms(&self, field: &CoefficientField) -> Result<NormMatrices> {
        Ok(NormMatrices {
            mass: self.mass.clone(),
            laplace: self.laplace.clone(),
            energy: self.stiffness(field)?,
        })
    }

    pub fn reference_basis(
        &self,
        field: &CoefficientField,
        ell: usize,
        mode: LinearTermMode,
    ) -> Result<CorrectorSet<f64>> {
        reference_basis(
            &self.grid,
            &self.imat,
            &field.fine_values(&self.grid)?,
            ell,
            mode,
        )
    }
}

/// Outcome of training one configuration class.
#[derive(Clone, Debug)]
pub struct TrainedClass {
    pub state: TrainState<f32>,
    pub losses: Vec<LossRecord>,
    pub lower_bound: f64,
    /// Energy loss attained by the exact correctors of the training samples.
    pub reference_energy: Option<f64>,
    pub seconds: f64,
}

pub fn plan(
    cfg: &ExperimentConfig,
    setup: &Setup,
    fields: &[CoefficientField],
) -> Result<Vec<ConfigClass>> {
    let template = fields
        .first()
        .ok_or_else(|| LodError::Config("no training coefficients".into()))?;
    plan_classes(&setup.grid, cfg.ell, template, cfg.training.share_classes)
}

/// Trains (or continues) the network of one class.
pub fn train_class(
    cfg: &ExperimentConfig,
    setup: &Setup,
    class: &ConfigClass,
    fields: &[CoefficientField],
    resume: Option<TrainState<f32>>,
    with_reference: bool,
) -> Result<TrainedClass> {
    let tc = cfg.train_config();
    let clock = Instant::now();
    let mut problem =
        CorrectionProblem::build(&setup.grid, &setup.imat, cfg.ell, class, fields, &tc)?;
    if with_reference || tc.pretrain_epochs > 0 {
        problem.attach_references(&setup.imat, fields, tc.mode)?;
    }
    let mut state = match resume {
        Some(s) => s,
        None => {
            let mut s = TrainState::<f32>::init(&problem, &tc)?;
            if tc.pretrain_epochs > 0 {
                pretrain(&problem, &mut s, &tc, tc.pretrain_epochs)?;
            }
            s
        }
    };
    let remaining = tc.epochs.saturating_sub(state.epoch);
    let losses = train(&problem, &mut state, &tc, remaining)?;
    Ok(TrainedClass {
        state,
        losses,
        lower_bound: problem.lower_bound(),
        reference_energy: problem.reference_energy(),
        seconds: clock.elapsed().as_secs_f64(),
    })
}

/// Trains every class; `progress` sees each finished class.
pub fn train_all(
    cfg: &ExperimentConfig,
    setup: &Setup,
    fields: &[CoefficientField],
    mut progress: impl FnMut(usize, usize, &TrainedClass),
) -> Result<Vec<TrainedClass>> {
    let classes = plan(cfg, setup, fields)?;
    let total = classes.len();
    let mut out = Vec::with_capacity(total);
    for (k, class) in classes.iter().enumerate() {
        let tc = train_class(cfg, setup, class, fields, None, false)?;
        progress(k, total, &tc);
        out.push(tc);
    }
    Ok(out)
}

pub fn networks(trained: &[TrainState<f32>]) -> Result<Vec<ClassNetwork<f32>>> {
    trained.iter().map(ClassNetwork::from_state).collect()
}

/// Which basis a parabolic solve uses.
#[derive(Clone, Copy, Debug)]
pub enum Method<'a> {
    Lod,
    LodAnn(&'a [ClassNetwork<f32>]),
    Fem,
}

impl Method<'_> {
    pub fn kind(&self) -> SpaceKind {
        match self {
            Method::Lod => SpaceKind::Lod,
            Method::LodAnn(_) => SpaceKind::LodAnn,
            Method::Fem => SpaceKind::FemFine,
        }
    }
}

pub fn basis_for(
    cfg: &ExperimentConfig,
    setup: &Setup,
    method: Method<'_>,
    field: &CoefficientField,
) -> Result<Option<CorrectorSet<f64>>> {
    Ok(match method {
        Method::Lod => Some(setup.reference_basis(field, cfg.ell, cfg.training.mode)?),
        Method::LodAnn(nets) => Some(predict_basis(&setup.grid, field, cfg.ell, nets)?),
        Method::Fem => None,
    })
}

/// Backward-Euler run with `u_0 = 0` and constant source; `fields` holds the
/// coefficient per step (a single entry for time-independent runs).
pub fn run_parabolic(
    cfg: &ExperimentConfig,
    setup: &Setup,
    method: Method<'_>,
    fields: &[CoefficientField],
) -> Result<MsSolution> {
    if fields.is_empty() {
        return Err(LodError::Config(
            "no coefficient for the parabolic run".into(),
        ));
    }
    let n = setup.grid.num_fine_dofs();
    let u0 = vec![0.0; n];
    let f = vec![cfg.time.source; n];
    let varying = fields.len() > 1;
    solve_parabolic(
        method.kind(),
        &setup.mass,
        &u0,
        &f,
        cfg.time.t_end,
        cfg.time.steps,
        |m, _| {
            if m > 0 && !varying {
                return Ok(None);
            }
            // the initial projection uses the coefficient of the first step
            let field = &fields[m.saturating_sub(1) % fields.len()];
            let stiffness = setup.stiffness(field)?;
            Ok(Some(match basis_for(cfg, setup, method, field)? {
                Some(b) => Space::Reduced {
                    basis: b.basis_matrix(),
                    stiffness,
                },
                None => Space::Fine { stiffness },
            }))
        },
    )
}

/// Mean of `‖Λ̂_j − Λ̃_j‖_a / ‖Λ̃_j‖_a` over the coarse DOFs.
pub fn basis_error(
    predicted: &CorrectorSet<f64>,
    reference: &CorrectorSet<f64>,
    energy: &Csr<f64>,
) -> (f64, f64) {
    let errs: Vec<f64> = predicted
        .basis()
        .iter()
        .zip(reference.basis())
        .map(|(p, r)| rel_error(p, r, energy).0)
        .collect();
    let mean = errs.iter().sum::<f64>() / errs.len().max(1) as f64;
    (mean, errs.iter().copied().fold(0.0, f64::max))
}

/// LOD-ANN versus LOD on one test case.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub case: usize,
    pub l2: f64,
    pub h1: f64,
    pub energy: f64,
    pub basis_mean: f64,
    pub basis_max: f64,
}

impl Comparison {
    pub fn solution_error(&self, norm: Norm) -> f64 {
        match norm {
            Norm::L2 => self.l2,
            Norm::H1 => self.h1,
            Norm::Energy => self.energy,
        }
    }
}

/// Compares final-time solutions and bases for the test case `fields`
/// (one coefficient, or the per-step sequence).
pub fn compare_case(
    cfg: &ExperimentConfig,
    setup: &Setup,
    nets: &[ClassNetwork<f32>],
    case: usize,
    fields: &[CoefficientField],
) -> Result<(Comparison, MsSolution, MsSolution)> {
    let lod = run_parabolic(cfg, setup, Method::Lod, fields)?;
    let ann = run_parabolic(cfg, setup, Method::LodAnn(nets), fields)?;
    let last = fields.len() - 1;
    let norms = setup.norms(&fields[last])?;
    let (u_ann, u_lod) = (
        ann.fine.last().expect("final state"),
        lod.fine.last().expect("final state"),
    );
    let reference = setup.reference_basis(&fields[last], cfg.ell, cfg.training.mode)?;
    let predicted = predict_basis(&setup.grid, &fields[last], cfg.ell, nets)?;
    let (basis_mean, basis_max) = basis_error(&predicted, &reference, &norms.energy);
    let cmp = Comparison {
        case,
        l2: rel_error(u_ann, u_lod, norms.get(Norm::L2)).0,
        h1: rel_error(u_ann, u_lod, norms.get(Norm::H1)).0,
        energy: rel_error(u_ann, u_lod, norms.get(Norm::Energy)).0,
        basis_mean,
        basis_max,
    };
    Ok((cmp, lod, ann))
}

/// Test cases of an experiment: one per test field, or a single sequence.
pub fn test_cases(cfg: &ExperimentConfig, test: &[CoefficientField]) -> Vec<Vec<CoefficientField>> {
    match cfg.time.coefficient_in_time {
        CoefficientInTime::Constant => test.iter().map(|f| vec![f.clone()]).collect(),
        CoefficientInTime::Sequence => vec![(0..cfg.time.steps)
            .map(|m| test[m % test.len()].clone())
            .collect()],
    }
}
