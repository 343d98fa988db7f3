//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! The neural reproductions run their reduced variants by default; set
//! `LODNN_FULL=1` for the full configurations (hours on one core).

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use num_rational::Ratio;

use lodnn::coeff::{gen_random_jumps, CoefficientField};
use lodnn::deepritz::{
    bubble, evaluate, plan_classes, predict_alpha, train, ClassNetwork, CorrectionProblem,
    TrainState,
};
use lodnn::experiment::{self, compare_case, test_cases, train_class, ExperimentConfig, Setup};
use lodnn::fem::{
    assemble_mass, assemble_stiffness, prolongation, q1_mass_element, q1_stiffness_element, DofMap,
    Support,
};
use lodnn::lodref::{
    compute_correctors, decay_profile, linear_term, reference_basis, LinearTermMode, PatchSystem,
};
use lodnn::nnet::{Batch, Mlp};
use lodnn::pde::{norm_with, solve_elliptic, solve_fine, solve_parabolic, Space, SpaceKind};
use lodnn::qinterp::InterpolationMatrix;
use lodnn::GridHierarchy;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn full() -> bool {
    std::env::var("LODNN_FULL").is_ok_and(|v| v == "1")
}

fn fields(seed: u64, n_eps: usize, count: usize) -> Vec<CoefficientField> {
    gen_random_jumps(seed, n_eps, 0.1, 1.0, count)
        .unwrap()
        .into_iter()
        .map(|(_, f)| f)
        .collect()
}

fn element_matrices() -> Outcome {
    let s = q1_stiffness_element::<f64>();
    let m = q1_mass_element::<f64>();
    let (s_diag, s_edge, s_opp) = (2.0 / 3.0, -1.0 / 6.0, -1.0 / 3.0);
    let (m_diag, m_edge, m_opp) = (1.0 / 9.0, 1.0 / 18.0, 1.0 / 36.0);
    // local vertices (0,0), (1,0), (0,1), (1,1): 0-3 and 1-2 are diagonal
    let kind = |a: usize, b: usize| {
        if a == b {
            0
        } else if a + b == 3 {
            2
        } else {
            1
        }
    };
    let mut err: f64 = 0.0;
    for a in 0..4 {
        for b in 0..4 {
            let (es, em) = match kind(a, b) {
                0 => (s_diag, m_diag),
                1 => (s_edge, m_edge),
                _ => (s_opp, m_opp),
            };
            err = err.max((s[a][b] - es).abs()).max((m[a][b] - em).abs());
        }
    }
    let sr = q1_stiffness_element::<Ratio<i64>>();
    let mr = q1_mass_element::<Ratio<i64>>();
    let exact = sr[0][0] == Ratio::new(2, 3)
        && sr[0][3] == Ratio::new(-1, 3)
        && mr[0][1] == Ratio::new(1, 18)
        && mr[1][2] == Ratio::new(1, 36);
    let rows: Ratio<i64> = sr[0].iter().copied().sum();
    let mass: Ratio<i64> = mr.iter().flatten().copied().sum();
    let pass =
        err <= 1e-14 && exact && rows == Ratio::from_integer(0) && mass == Ratio::from_integer(1);
    outcome(
        pass,
        format!("max deviation {err:.1e}; exact rational pattern {exact}"),
    )
}

fn projection() -> Outcome {
    let mut worst: f64 = 0.0;
    for (m, r) in [(2, 2), (4, 2), (6, 6)] {
        let g = GridHierarchy::new(m, r).unwrap();
        let imat = InterpolationMatrix::<f64>::assemble(&g);
        let p = prolongation::<f64>(&g);
        let ip = imat.matrix().to_dense();
        let pd = p.to_dense();
        let (nc, nf) = (g.num_coarse_dofs(), g.num_fine_dofs());
        for i in 0..nc {
            for j in 0..nc {
                let v: f64 = (0..nf).map(|k| ip[i * nf + k] * pd[k * nc + j]).sum();
                worst = worst.max((v - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
    }
    outcome(worst <= 1e-12, format!("max |I_H P - Id| = {worst:.2e}"))
}

/// Dense `argmin ½cᵀSc − bᵀc` over the null space of `C`.
fn nullspace_qp(s: &DMatrix<f64>, c: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = s.ncols();
    let ctc = c.transpose() * c;
    let eig = ctc.symmetric_eigen();
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let cols: Vec<DVector<f64>> = (0..n)
        .filter(|&k| eig.eigenvalues[k] <= 1e-10 * top.max(1.0))
        .map(|k| eig.eigenvectors.column(k).into_owned())
        .collect();
    let z = DMatrix::from_columns(&cols);
    let reduced = z.transpose() * s * &z;
    let y = reduced
        .cholesky()
        .expect("reduced stiffness is SPD")
        .solve(&(z.transpose() * b));
    z * y
}

fn corrector_kkt() -> Outcome {
    let g = GridHierarchy::new(4, 4).unwrap();
    let imat = InterpolationMatrix::<f64>::assemble(&g);
    let (mut constraint, mut optimality, mut oracle): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let mut compared = 0usize;
    for field in fields(11, 16, 20) {
        let cells = field.fine_values(&g).unwrap();
        for (t, j) in g.correction_pairs() {
            let system = PatchSystem::new(&imat, &cells, g.patch(t, 1).unwrap()).unwrap();
            let (b, _) =
                linear_term(&system, &cells, t, j, LinearTermMode::ElementRestricted).unwrap();
            let (c, lambda) = system.solve(&b);
            let ic = system.constraint().mul_vec(&c);
            constraint = constraint.max(ic.iter().fold(0.0, |a, v| a.max(v.abs())));
            optimality = optimality.max(system.kkt_residual(&c, &lambda, &b));
            let n = c.len();
            if n <= 200 && (t + j) % 3 == 0 {
                let s = DMatrix::from_row_slice(n, n, &system.stiffness().to_dense());
                let nc = system.constraint().nrows();
                let cm = DMatrix::from_row_slice(nc, n, &system.constraint().to_dense());
                let x = nullspace_qp(&s, &cm, &DVector::from_column_slice(&b));
                let d = &x - DVector::from_column_slice(&c);
                oracle = oracle.max(d.norm() / x.norm().max(f64::MIN_POSITIVE));
                compared += 1;
            }
        }
    }
    let pass = constraint <= 1e-9 && optimality <= 1e-9 && oracle <= 1e-8 && compared > 0;
    outcome(pass, format!("|I_H c|_inf {constraint:.1e}, KKT residual {optimality:.1e}, oracle {oracle:.1e} over {compared} dense solves"))
}

fn trivial_cases() -> Outcome {
    let g1 = GridHierarchy::new(4, 1).unwrap();
    let imat1 = InterpolationMatrix::<f64>::assemble(&g1);
    let f1 = &fields(3, 4, 1)[0];
    let zero = compute_correctors(
        &g1,
        &imat1,
        &f1.fine_values(&g1).unwrap(),
        1,
        LinearTermMode::ElementRestricted,
    )
    .unwrap();
    let max_r1 = zero
        .iter()
        .flat_map(|c| c.values.iter())
        .fold(0.0f64, |a, v| a.max(v.abs()));
    let g = GridHierarchy::new(4, 3).unwrap();
    let imat = InterpolationMatrix::<f64>::assemble(&g);
    let f = &fields(4, 12, 1)[0];
    let a = compute_correctors(
        &g,
        &imat,
        &f.fine_values(&g).unwrap(),
        2,
        LinearTermMode::ElementRestricted,
    )
    .unwrap();
    let b = compute_correctors(
        &g,
        &imat,
        &f.scaled(2.0).fine_values(&g).unwrap(),
        2,
        LinearTermMode::ElementRestricted,
    )
    .unwrap();
    let scale_diff = a
        .iter()
        .zip(&b)
        .flat_map(|(x, y)| x.values.iter().zip(&y.values))
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    outcome(
        max_r1 <= 1e-12 && scale_diff <= 1e-12,
        format!("r=1 max |c| {max_r1:.1e}; a -> 2a max change {scale_diff:.1e}"),
    )
}

/// Least-squares slope and R² of `y` against `x`.
fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    (
        slope,
        if syy > 0.0 {
            sxy * sxy / (sxx * syy)
        } else {
            1.0
        },
    )
}

fn localization_decay() -> Outcome {
    let g = GridHierarchy::new(8, 4).unwrap();
    let imat = InterpolationMatrix::<f64>::assemble(&g);
    // patches of this element stay proper subdomains up to ell = 5
    let t = g.coarse_element(1, 1);
    let j = g.coarse_dof(2, 2).unwrap();
    let mut pass = true;
    let mut worst_ratio: f64 = 0.0;
    let mut worst_r2: f64 = 1.0;
    let mut worst_slope = f64::NEG_INFINITY;
    for field in fields(5, 32, 5) {
        let prof = decay_profile(
            &g,
            &imat,
            &field.fine_values(&g).unwrap(),
            t,
            j,
            8,
            LinearTermMode::ElementRestricted,
        )
        .unwrap();
        let d: Vec<f64> = prof.iter().map(|p| p.1).collect();
        let xs: Vec<f64> = (1..=5).map(|l| l as f64).collect();
        let ys: Vec<f64> = d[..5].iter().map(|v| v.ln()).collect();
        let (slope, r2) = linear_fit(&xs, &ys);
        let ratio = d[2] / d[0];
        pass &= ratio <= 0.5 && slope < 0.0 && r2 >= 0.8;
        worst_ratio = worst_ratio.max(ratio);
        worst_r2 = worst_r2.min(r2);
        worst_slope = worst_slope.max(slope);
    }
    outcome(
        pass,
        format!("max d(3)/d(1) {worst_ratio:.3}, max slope {worst_slope:.3}, min R² {worst_r2:.3}"),
    )
}

fn elliptic_convergence() -> Outcome {
    let n = 64;
    let field = &fields(6, 32, 1)[0];
    let mut errs = Vec::new();
    for m in [4, 8, 16] {
        let g = GridHierarchy::new(m, n / m).unwrap();
        let dofs = DofMap::interior(&g);
        let cells = field.fine_values(&g).unwrap();
        let s = assemble_stiffness::<f64>(&g, &cells, Support::All, &dofs).unwrap();
        let mass = assemble_mass::<f64>(&g, Support::All, &dofs).unwrap();
        let f = vec![1.0; g.num_fine_dofs()];
        let u_h = solve_fine(&s, &mass, &f).unwrap();
        let imat = InterpolationMatrix::<f64>::assemble(&g);
        let basis =
            reference_basis(&g, &imat, &cells, m, LinearTermMode::ElementRestricted).unwrap();
        let (_, u) = solve_elliptic(&basis.basis_matrix(), &s, &mass, &f).unwrap();
        let d: Vec<f64> = u.iter().zip(&u_h).map(|(a, b)| a - b).collect();
        errs.push(norm_with(&s, &d) / norm_with(&s, &u_h));
    }
    let rates: Vec<f64> = errs.windows(2).map(|w| w[0] / w[1]).collect();
    let pass = rates.iter().all(|&r| r >= 1.7);
    outcome(
        pass,
        format!(
            "energy errors {:.3e}, {:.3e}, {:.3e}; reduction factors {:.2}, {:.2}",
            errs[0], errs[1], errs[2], rates[0], rates[1]
        ),
    )
}

fn backward_euler_stability() -> Outcome {
    let g = GridHierarchy::new(4, 4).unwrap();
    let dofs = DofMap::interior(&g);
    let field = &fields(7, 16, 1)[0];
    let cells = field.fine_values(&g).unwrap();
    let s = assemble_stiffness::<f64>(&g, &cells, Support::All, &dofs).unwrap();
    let mass = assemble_mass::<f64>(&g, Support::All, &dofs).unwrap();
    let imat = InterpolationMatrix::<f64>::assemble(&g);
    let basis = reference_basis(&g, &imat, &cells, 1, LinearTermMode::ElementRestricted)
        .unwrap()
        .basis_matrix();
    let u0: Vec<f64> = g
        .fine_coords()
        .iter()
        .map(|&(x, y)| {
            (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin() + x * y * (1.0 - x)
        })
        .collect();
    let f = vec![0.0; u0.len()];
    let mut pass = true;
    let mut worst: f64 = f64::NEG_INFINITY;
    for steps in [5, 25, 100] {
        for lod in [true, false] {
            let space = || {
                if lod {
                    Space::Reduced {
                        basis: basis.clone(),
                        stiffness: s.clone(),
                    }
                } else {
                    Space::Fine {
                        stiffness: s.clone(),
                    }
                }
            };
            let kind = if lod {
                SpaceKind::Lod
            } else {
                SpaceKind::FemFine
            };
            let sol = solve_parabolic(kind, &mass, &u0, &f, 1.0, steps, |m, _| {
                Ok(if m == 0 { Some(space()) } else { None })
            })
            .unwrap();
            let norms: Vec<f64> = sol.fine.iter().map(|u| norm_with(&mass, u)).collect();
            for w in norms.windows(2) {
                let growth = w[1] - w[0];
                worst = worst.max(growth / w[0].max(f64::MIN_POSITIVE));
                pass &= growth <= 1e-14 * w[0];
            }
        }
    }
    outcome(
        pass,
        format!("max relative growth of the mass norm per step {worst:.2e}"),
    )
}

fn central_difference(f: &mut dyn FnMut(f64) -> f64, x: f64) -> f64 {
    let h = 1e-6 * (1.0 + x.abs());
    (f(x + h) - f(x - h)) / (2.0 * h)
}

fn gradient_checks() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    let mut rng_state = 12345u64;
    let mut next = || {
        rng_state = rng_state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (rng_state >> 33) as usize
    };
    let shapes: Vec<Vec<usize>> = vec![
        vec![5, 8, 1],
        vec![5, 32, 32, 1],
        vec![5, 128, 128, 128, 1],
        vec![5, 128, 128, 128, 128, 128, 128, 128, 1],
    ];
    for (si, widths) in shapes.iter().enumerate() {
        for scaling in [false, true] {
            let net = Mlp::<f64>::init_glorot(widths, 100 + si as u64, scaling).unwrap();
            let rows = 6;
            let x: Vec<f64> = (0..rows * 5)
                .map(|k| ((k * 37 % 17) as f64 / 8.0) - 1.0)
                .collect();
            let batch = Batch::dense(x.clone(), 5);
            let weights: Vec<f64> = (0..rows).map(|k| 0.3 + 0.1 * k as f64).collect();
            let loss = |n: &Mlp<f64>| -> f64 {
                n.forward_batch(&x)
                    .unwrap()
                    .iter()
                    .zip(&weights)
                    .map(|(o, w)| w * o * o)
                    .sum()
            };
            let tape = net.forward_tape(&batch).unwrap();
            let d_out: Vec<f64> = tape
                .out
                .iter()
                .zip(&weights)
                .map(|(o, w)| 2.0 * w * o)
                .collect();
            let grad = net.backward(&batch, &tape, &d_out);
            for _ in 0..40 {
                let k = next() % net.num_params();
                let mut probe = net.clone();
                let fd = central_difference(
                    &mut |v| {
                        probe.params_mut()[k] = v;
                        loss(&probe)
                    },
                    net.params()[k],
                );
                let err = (fd - grad[k]).abs() / (fd.abs().max(grad[k].abs()).max(1e-3));
                worst = worst.max(err);
                checked += 1;
            }
        }
    }
    // bubble-localized loss path through the full training objective
    let g = GridHierarchy::new(4, 3).unwrap();
    let imat = InterpolationMatrix::<f64>::assemble(&g);
    let fs = fields(8, 12, 2);
    let class = plan_classes(&g, 1, &fs[0], true).unwrap().remove(0);
    let cfg = ExperimentConfig::example1_ci().train_config();
    let problem = CorrectionProblem::build(&g, &imat, 1, &class, &fs, &cfg).unwrap();
    let state = TrainState::<f64>::init(&problem, &cfg).unwrap();
    let net = state.mlp().unwrap();
    let mu = state.mu.clone();
    let total = |n: &Mlp<f64>| -> f64 {
        let out = n.forward_batch(&problem_rows(&problem)).unwrap();
        let ev = evaluate(&problem, &out, &mu);
        ev.energy + ev.interp
    };
    let batch = problem.batch::<f64>();
    let tape = net.forward_tape(&batch).unwrap();
    let ev = evaluate(&problem, &tape.out, &mu);
    let grad = net.backward(&batch, &tape, &ev.d_out);
    for _ in 0..60 {
        let k = next() % net.num_params();
        let mut probe = net.clone();
        let fd = central_difference(
            &mut |v| {
                probe.params_mut()[k] = v;
                total(&probe)
            },
            net.params()[k],
        );
        let err = (fd - grad[k]).abs() / (fd.abs().max(grad[k].abs()).max(1e-3));
        worst = worst.max(err);
        checked += 1;
    }
    let bubble_ok = bubble((0.0, 0.0, 1.0, 1.0), (0.5, 0.5)) == 1.0
        && bubble((0.0, 0.0, 1.0, 1.0), (1.0, 0.3)) == 0.0;
    outcome(
        worst <= 1e-5 && bubble_ok,
        format!("max relative gradient error {worst:.2e} over {checked} sampled coordinates"),
    )
}

/// Dense input rows `[x, y, p]` of every sample, matching the factored batch.
fn problem_rows(problem: &CorrectionProblem) -> Vec<f64> {
    let mut rows = Vec::new();
    for s in &problem.samples {
        for i in 0..problem.n_fine {
            rows.extend_from_slice(&s.inputs.coords[2 * i..2 * i + 2]);
            rows.extend_from_slice(&s.inputs.params);
        }
    }
    rows
}

/// Bound checks collected from the training runs of criteria 10-12.
#[derive(Default)]
struct BoundLog {
    runs: usize,
    epochs: usize,
    violations: usize,
    min_gap: f64,
    errors: Vec<String>,
}

impl BoundLog {
    fn record(&mut self, bound: f64, energies: impl Iterator<Item = f64>) {
        self.runs += 1;
        for e in energies {
            self.epochs += 1;
            let gap = e - bound;
            if self.epochs == 1 || gap < self.min_gap {
                self.min_gap = gap;
            }
            if gap < 0.0 {
                self.violations += 1;
            }
        }
    }
}

fn single_sample(log: &mut BoundLog) -> Outcome {
    let g = GridHierarchy::new(6, 6).unwrap();
    let imat = InterpolationMatrix::<f64>::assemble(&g);
    let field = CoefficientField::constant(6, 1.0).unwrap();
    let t = g.coarse_element(2, 2);
    let j = g.coarse_dof(3, 3).unwrap();
    let classes = plan_classes(&g, 1, &field, false).unwrap();
    let class = classes
        .into_iter()
        .find(|c| c.members[0].element == t && c.members[0].dof == j)
        .unwrap();
    let mut cfg = ExperimentConfig::example2_ci().train_config();
    cfg.depth = 3;
    cfg.width = 64;
    cfg.epochs = 5000;
    let fs = [field];
    let mut problem = CorrectionProblem::build(&g, &imat, 1, &class, &fs, &cfg).unwrap();
    problem.attach_references(&imat, &fs, cfg.mode).unwrap();
    let mut state = TrainState::<f32>::init(&problem, &cfg).unwrap();
    let widths = state.mlp().unwrap().widths().to_vec();
    match train(&problem, &mut state, &cfg, cfg.epochs) {
        Ok(losses) => log.record(problem.lower_bound(), losses.iter().map(|l| l.energy)),
        Err(e) => {
            log.errors.push(format!("single sample: {e}"));
            return outcome(false, format!("training failed: {e}"));
        }
    }
    let alpha = predict_alpha(&state.mlp().unwrap(), &problem, 0).unwrap();
    let s = &problem.samples[0];
    let c = s.reference.as_ref().unwrap();
    let d: Vec<f64> = alpha.iter().zip(c).map(|(a, b)| a - b).collect();
    let err = (s.stiffness.bilinear(&d, &d) / s.stiffness.bilinear(c, c)).sqrt();
    outcome(
        err <= 0.10,
        format!("widths {widths:?}, relative energy-norm corrector error {err:.4}"),
    )
}

struct Reproduction {
    solution: f64,
    basis: f64,
    cases: usize,
    classes: usize,
    seconds: f64,
}

fn reproduce(cfg: &ExperimentConfig, log: &mut BoundLog) -> Result<Reproduction, String> {
    let clock = Instant::now();
    let setup = Setup::new(cfg.grid().map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let train: Vec<CoefficientField> = cfg
        .train_fields()
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|(_, f)| f)
        .collect();
    let test: Vec<CoefficientField> = cfg
        .test_fields()
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|(_, f)| f)
        .collect();
    let classes = experiment::plan(cfg, &setup, &train).map_err(|e| e.to_string())?;
    let mut states = Vec::with_capacity(classes.len());
    for class in &classes {
        let t = train_class(cfg, &setup, class, &train, None, false).map_err(|e| {
            log.errors
                .push(format!("{} class {}: {e}", cfg.name, class.id));
            format!("class {}: {e}", class.id)
        })?;
        log.record(t.lower_bound, t.losses.iter().map(|l| l.energy));
        eprintln!(
            "  {} class {} ({} members) trained in {:.1}s",
            cfg.name,
            class.id,
            class.members.len(),
            t.seconds
        );
        states.push(t.state);
    }
    let nets: Vec<ClassNetwork<f32>> = experiment::networks(&states).map_err(|e| e.to_string())?;
    let cases = test_cases(cfg, &test);
    let (mut sol, mut basis) = (0.0, 0.0);
    for (k, case) in cases.iter().enumerate() {
        let (cmp, _, _) = compare_case(cfg, &setup, &nets, k, case).map_err(|e| e.to_string())?;
        sol += cmp.solution_error(cfg.norm);
        basis += cmp.basis_mean;
    }
    let n = cases.len() as f64;
    Ok(Reproduction {
        solution: sol / n,
        basis: basis / n,
        cases: cases.len(),
        classes: classes.len(),
        seconds: clock.elapsed().as_secs_f64(),
    })
}

fn example1(log: &mut BoundLog) -> Outcome {
    let (cfg, tol) = if full() {
        (ExperimentConfig::example1_full(), 0.10)
    } else {
        (ExperimentConfig::example1_ci(), 0.20)
    };
    match reproduce(&cfg, log) {
        Ok(r) => outcome(
            r.solution <= tol,
            format!("{}: relative L2 error at T {:.4} (tolerance {tol}), basis error {:.4}, {} classes, {:.0}s", cfg.name, r.solution, r.basis, r.classes, r.seconds),
        ),
        Err(e) => outcome(false, format!("{}: {e}", cfg.name)),
    }
}

fn example2(log: &mut BoundLog) -> Outcome {
    let (cfg, tol_sol, tol_basis) = if full() {
        (ExperimentConfig::example2_full(), 0.10, 0.15)
    } else {
        (ExperimentConfig::example2_ci(), 0.20, 0.30)
    };
    match reproduce(&cfg, log) {
        Ok(r) => outcome(
            r.solution <= tol_sol && r.basis <= tol_basis,
            format!(
                "{}: mean relative solution error {:.4} (tolerance {tol_sol}), mean basis error {:.4} (tolerance {tol_basis}) over {} cases, {} classes, {:.0}s",
                cfg.name, r.solution, r.basis, r.cases, r.classes, r.seconds
            ),
        ),
        Err(e) => outcome(false, format!("{}: {e}", cfg.name)),
    }
}

/// `LODNN_CRITERIA=1,3,10` restricts the run to the listed criteria.
fn selected(id: usize) -> bool {
    match std::env::var("LODNN_CRITERIA") {
        Ok(list) => list.split(',').any(|s| s.trim().parse() == Ok(id)),
        Err(_) => true,
    }
}

fn main() {
    let clock = Instant::now();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let exact: [(usize, &str, fn() -> Outcome); 8] = [
        (1, "element matrices", element_matrices),
        (2, "quasi-interpolation projection", projection),
        (3, "corrector KKT", corrector_kkt),
        (4, "trivial corrector cases", trivial_cases),
        (5, "localization decay", localization_decay),
        (6, "LOD elliptic convergence", elliptic_convergence),
        (7, "backward Euler stability", backward_euler_stability),
        (8, "gradient checks", gradient_checks),
    ];
    for (id, name, run) in exact {
        if !selected(id) {
            continue;
        }
        let t = Instant::now();
        let o = run();
        eprintln!("criterion {id} done in {:.1}s", t.elapsed().as_secs_f64());
        results.push((id, name, o));
    }
    let mut log = BoundLog::default();
    let neural: [(usize, &str, fn(&mut BoundLog) -> Outcome); 3] = [
        (10, "single-sample sanity", single_sample),
        (11, "example 1 reproduction", example1),
        (12, "example 2 reproduction", example2),
    ];
    let mut later = Vec::new();
    for (id, name, run) in neural {
        if !selected(id) {
            continue;
        }
        let t = Instant::now();
        let o = run(&mut log);
        eprintln!("criterion {id} done in {:.1}s", t.elapsed().as_secs_f64());
        later.push((id, name, o));
    }
    if selected(9) {
        let bound_ok = log.violations == 0
            && log.errors.iter().all(|e| !e.contains("lower bound"))
            && log.runs > 0;
        results.push((
            9,
            "energy lower bound",
            outcome(
                bound_ok,
                format!(
                    "{} runs, {} epochs, {} violations, min gap {:.3e}",
                    log.runs, log.epochs, log.violations, log.min_gap
                ),
            ),
        ));
    }
    results.extend(later);
    let mut failed = 0;
    for (id, name, o) in &results {
        println!(
            "{} criterion {id:>2} ({name}): {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.0}s",
        results.len() - failed,
        clock.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
