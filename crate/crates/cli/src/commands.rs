use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use invquad::chebyshev::chebyshev_points;
use invquad::design::{apportion, efficiency_with};
use invquad::optimize::{optimal_design, OptimalDesign, SolverConfig};
use invquad::simulate::{run_simulation, SimConfig};
use invquad::verify::{check_design, VerifyConfig};
use invquad::{Criterion, DEfficiency, Design, DesignSpace, Error, ModelSpec};

use crate::files::DesignFile;
use crate::preset::preset;
use crate::{Command, CriterionArgs, Layout, Setup};

pub fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Design {
            setup,
            criterion,
            out,
            json,
        } => design(&setup, &criterion, out.as_deref(), json),
        Command::Table {
            preset,
            out_dir,
            d_efficiency,
            layout,
        } => table(&preset, &out_dir, d_efficiency, layout),
        Command::Check { file, criterion } => check(&file, &criterion),
        Command::Efficiency {
            setup,
            designs,
            xe,
            d_efficiency,
        } => efficiency(&setup, &designs, xe, d_efficiency),
        Command::Simulate {
            setup,
            design,
            criterion,
            sigma,
            sigma_rel,
            n,
            replicates,
            seed,
            max_fit_iterations,
            estimates_csv,
        } => {
            let sim = SimArgs {
                sigma,
                sigma_rel,
                n,
                replicates,
                seed,
                max_fit_iterations,
            };
            simulate(&setup, design.as_deref(), &criterion, &sim, estimates_csv.as_deref())
        }
        Command::Round { file, n } => round(&file, n),
        Command::Chebpoints { setup } => chebpoints(&setup),
    }
}

fn solve(model: &ModelSpec, criterion: &Criterion, space: &DesignSpace) -> invquad::Result<OptimalDesign> {
    optimal_design(model, criterion, space, &SolverConfig::default())
}

fn design(setup: &Setup, args: &CriterionArgs, out: Option<&Path>, json: bool) -> anyhow::Result<()> {
    let r = setup.resolve()?;
    let criterion = args
        .resolve(r.preset.as_ref())?
        .ok_or_else(|| Error::Validation("--criterion is required".into()))?;
    let sol = solve(&r.model, &criterion, &r.space)?;
    let file = DesignFile::new(r.model, r.space, &sol.design, Some(criterion));
    if let Some(path) = out {
        file.save(path)?;
    }
    if json {
        println!("{}", serde_json::to_string_pretty(&file)?);
        return Ok(());
    }
    let [t0, t1, t2] = r.model.theta();
    println!("criterion    {criterion}");
    println!("model        {} θ = ({t0}, {t1}, {t2})", r.model.kind());
    println!("space        {}", r.space);
    println!("form         {:?}", sol.form);
    println!("{:>12}  {:>10}", "point", "weight");
    for (u, w) in sol.design.points().iter().zip(sol.design.weights()) {
        println!("{u:>12.6}  {w:>10.6}");
    }
    println!("value        {:.6e}", sol.value);
    let rep = &sol.report;
    println!(
        "equivalence  max {:.6e} at u = {:.6}, bound {:.6e}, violation {:.2e} ({})",
        rep.max_directional,
        rep.argmax_u,
        rep.bound,
        rep.violation,
        if rep.passed { "passed" } else { "FAILED" }
    );
    Ok(())
}

fn csv_string(header: &[String], rows: &[Vec<String>]) -> anyhow::Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(vec![]);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn efficiency_rows(
    designs: &[(String, Design)],
    criteria: &[Criterion],
    references: &[Design],
    model: &ModelSpec,
    convention: DEfficiency,
) -> anyhow::Result<Vec<Vec<String>>> {
    designs
        .iter()
        .map(|(name, d)| {
            let mut row = vec![name.clone()];
            for (c, reference) in criteria.iter().zip(references) {
                let e = efficiency_with(d, c, reference, model, convention)
                    .with_context(|| format!("efficiency of {name} under {c}"))?;
                row.push(format!("{e:.2}"));
            }
            Ok(row)
        })
        .collect()
}

fn criteria_header(criteria: &[Criterion]) -> Vec<String> {
    std::iter::once("design".to_string())
        .chain(criteria.iter().map(|c| c.name().to_string()))
        .collect()
}

fn table(name: &str, out_dir: &Path, convention: DEfficiency, layout: Layout) -> anyhow::Result<()> {
    let p = preset(name)?;
    let criteria = [
        Criterion::D,
        Criterion::E,
        Criterion::D1,
        Criterion::Extrapolation(p.extrapolation_point),
    ];
    let solutions = criteria
        .iter()
        .map(|c| solve(&p.model, c, &p.space).with_context(|| format!("optimal design for {c}")))
        .collect::<anyhow::Result<Vec<_>>>()?;

    let header51: Vec<String> = ["criterion", "u0", "u1", "u2", "w0", "w1", "w2"]
        .map(String::from)
        .to_vec();
    let rows51: Vec<Vec<String>> = criteria
        .iter()
        .zip(&solutions)
        .map(|(c, s)| {
            std::iter::once(c.name().to_string())
                .chain(s.design.points().iter().map(|u| format!("{u:.4}")))
                .chain(s.design.weights().iter().map(|w| format!("{w:.4}")))
                .collect()
        })
        .collect();

    let references: Vec<Design> = solutions.iter().map(|s| s.design.clone()).collect();
    let mut rows52 = efficiency_rows(&p.comparison_designs, &criteria, &references, &p.model, convention)?;
    let optimal: Vec<(String, Design)> = criteria
        .iter()
        .zip(&references)
        .map(|(c, d)| (format!("xi_{}", c.name()), d.clone()))
        .collect();
    let block = efficiency_rows(&optimal, &criteria, &references, &p.model, convention)?;
    match layout {
        Layout::ByDesign => rows52.extend(block),
        Layout::ByCriterion => rows52.extend((0..criteria.len()).map(|i| {
            std::iter::once(optimal[i].0.clone())
                .chain(block.iter().map(|row| row[i + 1].clone()))
                .collect()
        })),
    }

    let t51 = csv_string(&header51, &rows51)?;
    let t52 = csv_string(&criteria_header(&criteria), &rows52)?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    for (file, text) in [("table51.csv", &t51), ("table52.csv", &t52)] {
        let path = out_dir.join(file);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    let mut out = io::stdout().lock();
    writeln!(out, "# {} table51.csv\n{t51}\n# {} table52.csv\n{t52}", p.name, p.name)?;
    Ok(())
}

fn check(path: &Path, args: &CriterionArgs) -> anyhow::Result<()> {
    let file = DesignFile::load(path)?;
    let criterion = args
        .resolve(None)?
        .or(file.criterion)
        .ok_or_else(|| Error::Validation("no criterion: pass --criterion or add one to the design file".into()))?;
    let report = check_design(
        &file.design()?,
        &criterion,
        &file.model,
        &file.space,
        &VerifyConfig::default(),
    )?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

impl Setup {
    fn is_empty(&self) -> bool {
        self.preset.is_none() && self.model.is_none() && self.theta.is_none() && self.space.is_none()
    }
}

fn efficiency(setup: &Setup, paths: &[PathBuf], xe: Option<f64>, convention: DEfficiency) -> anyhow::Result<()> {
    let files = paths
        .iter()
        .map(|p| DesignFile::load(p))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let (model, space, preset) = match (setup.is_empty(), files.first()) {
        (true, Some(f)) => (f.model, f.space, None),
        _ => {
            let r = setup.resolve()?;
            (r.model, r.space, r.preset)
        }
    };
    let mut criteria = vec![Criterion::D, Criterion::E, Criterion::D1];
    if let Some(x) = xe.or(preset.as_ref().map(|p| p.extrapolation_point)) {
        criteria.push(Criterion::Extrapolation(x));
    }
    let solutions = criteria
        .iter()
        .map(|c| solve(&model, c, &space).with_context(|| format!("optimal design for {c}")))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let references: Vec<Design> = solutions.iter().map(|s| s.design.clone()).collect();

    let designs: Vec<(String, Design)> = if files.is_empty() {
        let mut d = preset.map(|p| p.comparison_designs).unwrap_or_default();
        d.extend(
            criteria
                .iter()
                .zip(&references)
                .map(|(c, r)| (format!("xi_{}", c.name()), r.clone())),
        );
        d
    } else {
        paths
            .iter()
            .zip(&files)
            .map(|(p, f)| Ok((file_stem(p), f.design()?)))
            .collect::<invquad::Result<_>>()?
    };
    let rows = efficiency_rows(&designs, &criteria, &references, &model, convention)?;
    print!("{}", csv_string(&criteria_header(&criteria), &rows)?);
    Ok(())
}

pub struct SimArgs {
    sigma: Option<f64>,
    sigma_rel: Option<f64>,
    n: usize,
    replicates: usize,
    seed: u64,
    max_fit_iterations: usize,
}

fn simulate(
    setup: &Setup,
    design_path: Option<&Path>,
    args: &CriterionArgs,
    sim: &SimArgs,
    estimates_csv: Option<&Path>,
) -> anyhow::Result<()> {
    let file = design_path.map(DesignFile::load).transpose()?;
    let (model, design) = match (&file, setup.is_empty()) {
        (Some(f), true) => (f.model, f.design()?),
        (Some(f), false) => (setup.resolve()?.model, f.design()?),
        (None, _) => {
            let r = setup.resolve()?;
            let criterion = args
                .resolve(r.preset.as_ref())?
                .ok_or_else(|| Error::Validation("give --design or --criterion".into()))?;
            (r.model, solve(&r.model, &criterion, &r.space)?.design)
        }
    };
    let sigma = match (sim.sigma, sim.sigma_rel) {
        (Some(s), _) => s,
        (None, Some(rel)) => rel * model.peak_value(),
        (None, None) => return Err(Error::Validation("give --sigma or --sigma-rel".into()).into()),
    };
    let config = SimConfig {
        max_fit_iterations: sim.max_fit_iterations,
        ..SimConfig::new(sigma, sim.n, sim.replicates, sim.seed)
    };
    let report = run_simulation(&design, &model, &config)?;
    if let Some(path) = estimates_csv {
        let header: Vec<String> = ["replicate", "theta0", "theta1", "theta2", "converged"]
            .map(String::from)
            .to_vec();
        let rows: Vec<Vec<String>> = report
            .estimates
            .iter()
            .enumerate()
            .map(|(i, e)| match e {
                Some(t) => vec![
                    i.to_string(),
                    t[0].to_string(),
                    t[1].to_string(),
                    t[2].to_string(),
                    "true".into(),
                ],
                None => vec![
                    i.to_string(),
                    String::new(),
                    String::new(),
                    String::new(),
                    "false".into(),
                ],
            })
            .collect();
        fs::write(path, csv_string(&header, &rows)?).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn round(path: &Path, n: usize) -> anyhow::Result<()> {
    let file = DesignFile::load(path)?;
    let design = file.design()?;
    let counts = apportion(&design, n)?;
    let header: Vec<String> = ["u", "weight", "count"].map(String::from).to_vec();
    let rows: Vec<Vec<String>> = design
        .points()
        .iter()
        .zip(design.weights())
        .zip(&counts)
        .map(|((u, w), c)| vec![format!("{u:.4}"), format!("{w:.4}"), c.to_string()])
        .collect();
    print!("{}", csv_string(&header, &rows)?);
    Ok(())
}

fn chebpoints(setup: &Setup) -> anyhow::Result<()> {
    let r = setup.resolve()?;
    let sol = chebyshev_points(&r.model, &r.space)?;
    println!("{}", serde_json::to_string_pretty(&sol)?);
    Ok(())
}
