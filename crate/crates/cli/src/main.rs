use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use lodnn::coeff::{CoefficientField, Ensemble, EnsembleHeader, FieldRecord, ParamVector};
use lodnn::deepritz::{plan_classes, ClassNetwork, ConfigClass, LossRecord, TrainState};
use lodnn::experiment::{self, basis_error, compare_case, run_parabolic, test_cases, train_class, CoefficientKind, Comparison, ExperimentConfig, Method, Setup, TrainedClass};
use lodnn::lodref::{decay_profile, CorrectorSet};
use lodnn::pde::{rel_error, MsSolution};
use lodnn::GridHierarchy;

#[derive(Parser, Debug)]
#[command(name = "lodnn", version, about = "LOD multiscale solver with exact and neural correctors")]
struct Cli {
    /// TOML experiment configuration.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Built-in configuration (example1, example1-ci, example2, example2-ci).
    #[arg(long)]
    preset: Option<String>,
    /// Override a configuration key, e.g. `--set training.epochs=100`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads for corrector solves and training.
    #[arg(long, short, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Which {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SolveMode {
    Lod,
    LodAnn,
    Fem,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the training and test coefficient ensembles.
    GenCoeffs,
    /// Compute exact correctors for the configured ensemble.
    Correctors {
        #[arg(long, value_enum, default_value = "test")]
        ensemble: Which,
        /// Coarse DOF whose corrected basis function is exported.
        #[arg(long, default_value_t = 0)]
        dof: usize,
    },
    /// Energy distance of localized correctors to the global one.
    Decay {
        #[arg(long, default_value_t = 0)]
        element: usize,
        #[arg(long, default_value_t = 0)]
        dof: usize,
        #[arg(long)]
        ell_max: Option<usize>,
        /// Number of test coefficients to use.
        #[arg(long, default_value_t = 1)]
        fields: usize,
    },
    /// Train the neural correctors of every configuration class.
    Train {
        /// Continue from existing checkpoints up to `training.epochs`.
        #[arg(long)]
        resume: bool,
        /// Train only the listed class ids.
        #[arg(long, value_delimiter = ',')]
        class: Vec<usize>,
    },
    /// Backward-Euler solve with f ≡ 1 and u₀ = 0.
    Solve {
        #[arg(long, value_enum)]
        method: SolveMode,
        /// Test case index; all cases when absent.
        #[arg(long)]
        case: Option<usize>,
    },
    /// LOD-ANN versus LOD on every test case.
    Compare {
        #[arg(long, default_value_t = 0)]
        dof: usize,
    },
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(cli.config.as_deref(), cli.preset.as_deref(), &cli.overrides)?;
    cfg.validate()?;
    let out = PathBuf::from(&cfg.output_dir);
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write(&out.join("config.resolved.toml"), &toml::to_string(&cfg)?)?;
    if cfg.mesh.r == 1 {
        eprintln!("warning: r = 1, the fine and coarse meshes coincide and all correctors vanish");
    }
    let jobs = cli.jobs.max(1);
    match cli.command {
        Command::GenCoeffs => gen_coeffs(&cfg, &out),
        Command::Correctors { ensemble, dof } => correctors(&cfg, &out, ensemble, dof, jobs),
        Command::Decay { element, dof, ell_max, fields } => decay(&cfg, &out, element, dof, ell_max, fields),
        Command::Train { resume, class } => train(&cfg, &out, resume, &class, jobs),
        Command::Solve { method, case } => solve(&cfg, &out, method, case),
        Command::Compare { dof } => compare(&cfg, &out, dof),
    }
}

fn resolve_config(path: Option<&Path>, preset: Option<&str>, overrides: &[String]) -> Result<ExperimentConfig> {
    let base = match (path, preset) {
        (Some(_), Some(_)) => bail!("use either --config or --preset"),
        (Some(p), None) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        (None, p) => {
            let name = p.unwrap_or("example1-ci");
            let c = ExperimentConfig::preset(name).ok_or_else(|| anyhow!("unknown preset {name:?}"))?;
            toml::to_string(&c)?
        }
    };
    let mut value: toml::Table = toml::from_str(&base).context("parsing configuration")?;
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    let cfg: ExperimentConfig = value.try_into().context("invalid configuration")?;
    Ok(cfg)
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| anyhow!("override {spec:?} is not KEY=VALUE"))?;
    let parsed = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, path) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for p in path {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| anyhow!("{key}: {p} is not a table"))?;
    }
    cur.insert(last.to_string(), parsed);
    Ok(())
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn fields_of(cfg: &ExperimentConfig, which: Which) -> Result<Vec<(ParamVector, CoefficientField)>> {
    Ok(match which {
        Which::Train => cfg.train_fields()?,
        Which::Test => cfg.test_fields()?,
    })
}

fn plain(fields: Vec<(ParamVector, CoefficientField)>) -> Vec<CoefficientField> {
    fields.into_iter().map(|(_, f)| f).collect()
}

fn coefficient_csv(field: &CoefficientField) -> String {
    let n = field.n_eps();
    let mut s = String::from("cell_x,cell_y,x,y,value\n");
    for cy in 0..n {
        for cx in 0..n {
            let (x, y) = ((cx as f64 + 0.5) / n as f64, (cy as f64 + 0.5) / n as f64);
            s += &format!("{cx},{cy},{x},{y},{:e}\n", field.cell(cx, cy));
        }
    }
    s
}

/// All fine nodes, boundary included; `values` are interior DOF values.
fn nodal_rows(grid: &GridHierarchy, values: &[f64], prefix: &str, s: &mut String) {
    let n = grid.n();
    let h = grid.fine_h();
    for iy in 0..=n {
        for ix in 0..=n {
            let v = grid.fine_dof(ix, iy).map_or(0.0, |d| values[d]);
            s.push_str(&format!("{prefix}{},{},{v:e}\n", ix as f64 * h, iy as f64 * h));
        }
    }
}

fn basis_csv(grid: &GridHierarchy, basis: &CorrectorSet<f64>, dof: usize) -> Result<String> {
    if dof >= grid.num_coarse_dofs() {
        bail!("coarse dof {dof} out of range (N_H = {})", grid.num_coarse_dofs());
    }
    let mut s = String::from("node_x,node_y,value\n");
    nodal_rows(grid, basis.basis_vector(dof), "", &mut s);
    Ok(s)
}

fn gen_coeffs(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let kind = match cfg.coefficients.kind {
        CoefficientKind::Random => "random",
        CoefficientKind::Battery => "battery",
    };
    for (which, name) in [(Which::Train, "train"), (Which::Test, "test")] {
        let fields = fields_of(cfg, which)?;
        let header = EnsembleHeader { m: cfg.mesh.m, r: cfg.mesh.r, n_eps: cfg.coefficients.n_eps, lo: cfg.coefficients.lo, hi: cfg.coefficients.hi, seed: cfg.seed, kind: kind.into() };
        for (k, (_, f)) in fields.iter().enumerate() {
            write(&out.join(format!("coefficients/{name}_{k}.csv")), &coefficient_csv(f))?;
        }
        let records = fields.into_iter().enumerate().map(|(index, (p, field))| FieldRecord { index, params: p.values, field }).collect();
        write(&out.join(format!("coefficients/{name}.json")), &Ensemble { header, fields: records }.to_json())?;
    }
    println!("wrote {} training and {} test coefficients to {}", cfg.coefficients.n_train, cfg.coefficients.n_test, out.join("coefficients").display());
    Ok(())
}

/// Maps `f` over `items` on `jobs` threads, preserving order.
fn pool<I: Sync, O: Send>(items: &[I], jobs: usize, f: impl Fn(&I) -> lodnn::Result<O> + Sync) -> lodnn::Result<Vec<O>> {
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(jobs);
    std::thread::scope(|s| {
        let handles: Vec<_> = items.chunks(chunk).map(|c| s.spawn(|| c.iter().map(&f).collect::<lodnn::Result<Vec<O>>>())).collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().expect("worker panicked")?);
        }
        Ok(out)
    })
}

fn correctors(cfg: &ExperimentConfig, out: &Path, which: Which, dof: usize, jobs: usize) -> Result<()> {
    let setup = Setup::new(cfg.grid()?)?;
    let fields = plain(fields_of(cfg, which)?);
    let name = if which == Which::Train { "train" } else { "test" };
    let sets = pool(&fields, jobs, |f| setup.reference_basis(f, cfg.ell, cfg.training.mode))?;
    for (k, set) in sets.iter().enumerate() {
        write(&out.join(format!("correctors/{name}_{k}.json")), &set.to_json())?;
        write(&out.join(format!("correctors/{name}_{k}_basis_{dof}.csv")), &basis_csv(&setup.grid, set, dof)?)?;
    }
    let records = sets.first().map_or(0, |s| s.records.len());
    println!("wrote {} corrector sets ({records} element correctors each) to {}", sets.len(), out.join("correctors").display());
    Ok(())
}

fn decay(cfg: &ExperimentConfig, out: &Path, element: usize, dof: usize, ell_max: Option<usize>, count: usize) -> Result<()> {
    let setup = Setup::new(cfg.grid()?)?;
    let ell_max = ell_max.unwrap_or(setup.grid.m());
    let fields = plain(cfg.test_fields()?);
    if count == 0 || count > fields.len() {
        bail!("--fields must be in 1..={}", fields.len());
    }
    let mut s = String::from("field,ell,distance\n");
    for (k, f) in fields.iter().take(count).enumerate() {
        let prof = decay_profile(&setup.grid, &setup.imat, &f.fine_values(&setup.grid)?, element, dof, ell_max, cfg.training.mode)?;
        for (ell, d) in prof {
            s += &format!("{k},{ell},{d:e}\n");
        }
    }
    let path = out.join("decay.csv");
    write(&path, &s)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn checkpoint_path(out: &Path, id: usize) -> PathBuf {
    out.join(format!("checkpoints/class_{id}.json"))
}

fn loss_path(out: &Path, id: usize) -> PathBuf {
    out.join(format!("loss/class_{id}.csv"))
}

fn load_state(path: &Path) -> Result<TrainState<f32>> {
    let s = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(TrainState::from_json(&s).with_context(|| format!("parsing {}", path.display()))?)
}

fn write_losses(path: &Path, records: &[LossRecord], append: bool) -> Result<()> {
    if !append || !path.exists() {
        write(path, "epoch,energy_loss,interp_loss\n")?;
    }
    let mut f = fs::OpenOptions::new().append(true).open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut s = String::new();
    for r in records {
        s += &format!("{},{:e},{:e}\n", r.epoch, r.energy, r.interp);
    }
    f.write_all(s.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

fn train(cfg: &ExperimentConfig, out: &Path, resume: bool, only: &[usize], jobs: usize) -> Result<()> {
    let setup = Setup::new(cfg.grid()?)?;
    let fields = plain(cfg.train_fields()?);
    let classes: Vec<ConfigClass> = experiment::plan(cfg, &setup, &fields)?.into_iter().filter(|c| only.is_empty() || only.contains(&c.id)).collect();
    if classes.is_empty() {
        bail!("no class matches {only:?}");
    }
    let mut starts = Vec::with_capacity(classes.len());
    for c in &classes {
        let path = checkpoint_path(out, c.id);
        starts.push(if resume && path.exists() { Some(load_state(&path)?) } else { None });
    }
    let work: Vec<(&ConfigClass, Option<TrainState<f32>>)> = classes.iter().zip(starts).collect();
    eprintln!("training {} classes for {} epochs", classes.len(), cfg.training.epochs);
    let trained: Vec<TrainedClass> = pool(&work, jobs, |(c, s)| {
        let t = train_class(cfg, &setup, c, &fields, s.clone(), false).map_err(|e| lodnn::LodError::Config(format!("class {}: {e}", c.id)))?;
        eprintln!("class {} ({} members): {} epochs in {:.1}s", c.id, c.members.len(), t.losses.len(), t.seconds);
        Ok(t)
    })?;
    let mut summary = String::from("class,members,epoch,energy_loss,interp_loss,lower_bound,seconds\n");
    for ((c, s), t) in work.iter().zip(&trained) {
        write(&checkpoint_path(out, c.id), &t.state.to_json())?;
        write_losses(&loss_path(out, c.id), &t.losses, s.is_some())?;
        let (e, i) = t.losses.last().map_or((f64::NAN, f64::NAN), |l| (l.energy, l.interp));
        summary += &format!("{},{},{},{e:e},{i:e},{:e},{:.3}\n", c.id, c.members.len(), t.state.epoch, t.lower_bound, t.seconds);
    }
    write(&out.join("train_summary.csv"), &summary)?;
    println!("wrote {} checkpoints to {}", trained.len(), out.join("checkpoints").display());
    Ok(())
}

fn load_networks(cfg: &ExperimentConfig, setup: &Setup, out: &Path) -> Result<Vec<ClassNetwork<f32>>> {
    let dir = out.join("checkpoints");
    let mut states = BTreeMap::new();
    if dir.is_dir() {
        for entry in fs::read_dir(&dir).with_context(|| format!("listing {}", dir.display()))? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") {
                let s = load_state(&path)?;
                states.insert(s.class.id, s);
            }
        }
    }
    let template = plain(cfg.train_fields()?);
    let want = plan_classes(&setup.grid, cfg.ell, &template[0], cfg.training.share_classes)?;
    let missing: Vec<(usize, usize)> = want
        .iter()
        .filter(|c| states.get(&c.id).is_none_or(|s| s.class != **c))
        .flat_map(|c| c.members.iter().map(|m| (m.element, m.dof)))
        .collect();
    if !missing.is_empty() {
        bail!("no trained network in {} for (element, dof) pairs {missing:?}; run `lodnn train` first", dir.display());
    }
    let states: Vec<TrainState<f32>> = states.into_values().collect();
    Ok(experiment::networks(&states)?)
}

fn solution_csv(grid: &GridHierarchy, sol: &MsSolution, snapshots: &[f64]) -> String {
    let mut s = String::from("t,node_x,node_y,value\n");
    let mut steps: Vec<usize> = snapshots
        .iter()
        .map(|&t| sol.times.iter().enumerate().min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs())).map_or(0, |(i, _)| i))
        .collect();
    steps.dedup();
    for k in steps {
        nodal_rows(grid, &sol.fine[k], &format!("{},", sol.times[k]), &mut s);
    }
    s
}

fn solve(cfg: &ExperimentConfig, out: &Path, mode: SolveMode, case: Option<usize>) -> Result<()> {
    let setup = Setup::new(cfg.grid()?)?;
    let cases = test_cases(cfg, &plain(cfg.test_fields()?));
    let selected: Vec<usize> = match case {
        Some(k) if k >= cases.len() => bail!("case {k} out of range ({} test cases)", cases.len()),
        Some(k) => vec![k],
        None => (0..cases.len()).collect(),
    };
    let nets = if mode == SolveMode::LodAnn { load_networks(cfg, &setup, out)? } else { Vec::new() };
    let (method, name) = match mode {
        SolveMode::Lod => (Method::Lod, "lod"),
        SolveMode::LodAnn => (Method::LodAnn(&nets), "lod-ann"),
        SolveMode::Fem => (Method::Fem, "fem"),
    };
    let mut summary = String::from("case,step,t,l2,h1,energy\n");
    let mut finals = Vec::new();
    for k in selected {
        let fields = &cases[k];
        let sol = run_parabolic(cfg, &setup, method, fields)?;
        let reference = if mode == SolveMode::Lod { sol.clone() } else { run_parabolic(cfg, &setup, Method::Lod, fields)? };
        for (step, (u, r)) in sol.fine.iter().zip(&reference.fine).enumerate() {
            let norms = setup.norms(&fields[step.saturating_sub(1) % fields.len()])?;
            let (l2, h1, en) = (rel_error(u, r, &norms.mass).0, rel_error(u, r, &norms.laplace).0, rel_error(u, r, &norms.energy).0);
            summary += &format!("{k},{step},{},{l2:e},{h1:e},{en:e}\n", sol.times[step]);
            if step + 1 == sol.fine.len() {
                finals.push(l2);
            }
        }
        write(&out.join(format!("solutions/{name}_case{k}.csv")), &solution_csv(&setup.grid, &sol, &cfg.time.snapshots))?;
    }
    write(&out.join(format!("solutions/{name}_errors.csv")), &summary)?;
    let mean = finals.iter().sum::<f64>() / finals.len() as f64;
    println!("{name}: {} case(s), mean relative L2 error vs lod at T = {}: {mean:.4}", finals.len(), cfg.time.t_end);
    Ok(())
}

fn compare(cfg: &ExperimentConfig, out: &Path, dof: usize) -> Result<()> {
    let setup = Setup::new(cfg.grid()?)?;
    let test = plain(cfg.test_fields()?);
    let nets = load_networks(cfg, &setup, out)?;
    let mut rows: Vec<Comparison> = Vec::new();
    for (k, fields) in test_cases(cfg, &test).iter().enumerate() {
        let (cmp, _, _) = compare_case(cfg, &setup, &nets, k, fields)?;
        rows.push(cmp);
    }
    let f0 = &test[0];
    let reference = setup.reference_basis(f0, cfg.ell, cfg.training.mode)?;
    let predicted = lodnn::deepritz::predict_basis(&setup.grid, f0, cfg.ell, &nets)?;
    write(&out.join(format!("compare/basis_{dof}_lod.csv")), &basis_csv(&setup.grid, &reference, dof)?)?;
    write(&out.join(format!("compare/basis_{dof}_lod-ann.csv")), &basis_csv(&setup.grid, &predicted, dof)?)?;
    let (b_mean, _) = basis_error(&predicted, &reference, &setup.stiffness(f0)?);
    let mut s = String::from("case,l2,h1,energy,basis_mean,basis_max\n");
    for r in &rows {
        s += &format!("{},{:e},{:e},{:e},{:e},{:e}\n", r.case, r.l2, r.h1, r.energy, r.basis_mean, r.basis_max);
    }
    let n = rows.len() as f64;
    let mean = |f: fn(&Comparison) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let (l2, h1, basis) = (mean(|r| r.l2), mean(|r| r.h1), mean(|r| r.basis_mean));
    s += &format!("mean,{l2:e},{h1:e},{:e},{basis:e},{:e}\n", mean(|r| r.energy), mean(|r| r.basis_max));
    write(&out.join("compare/errors.csv"), &s)?;
    println!("{} case(s): mean relative error L2 {l2:.4}, H1 {h1:.4}; mean basis error {basis:.4} (first case {b_mean:.4})", rows.len());
    Ok(())
}
