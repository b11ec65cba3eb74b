use std::path::Path;

use anyhow::{bail, Context, Result};
use fsrfm::anneal::{brute_force_min, BRUTE_FORCE_MAX_BITS};
use fsrfm::objectives::bubble::integrate_with;
use fsrfm::{simulated_anneal, AnnealSchedule, QuboMatrix};

use crate::config::ExperimentConfig;
use crate::experiments::{bench_h2, build_objective, grid_mse, optimize, surface_run};
use crate::output::{bits_string, indices_string, RunDir, Table};

fn median(mut xs: Vec<f64>) -> f64 {
    xs.retain(|x| !x.is_nan());
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn start(config: &ExperimentConfig, out: &Path) -> Result<RunDir> {
    let mut dir = RunDir::create(out)?;
    dir.write("config.toml", &config.to_toml())?;
    Ok(dir)
}

/// Surrogate and true surfaces of a two-variable objective after selected steps.
pub fn surface(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let objective = build_objective(config)?;
    let space = objective.space().clone();
    if space.n_blocks() != 2 {
        bail!("surface needs a 2-variable objective, got {} blocks", space.n_blocks());
    }
    if let Some(&s) = config.surface.steps.iter().find(|&&s| s == 0 || s > config.fmqa.n_steps) {
        bail!("surface step {s} outside 1..={}", config.fmqa.n_steps);
    }
    let seed = config.seeds[0];
    let mut dir = start(config, out)?;
    let loop_cfg = fsrfm::LoopConfig {
        seed,
        ..config.fmqa.clone()
    };
    let (trial, snaps) = surface_run(objective.as_ref(), &loop_cfg, &config.surface.steps)?;
    let (c0, c1) = (space.blocks()[0].count, space.blocks()[1].count);

    let mut truth = Table::new(&["i", "j", "y1", "y2", "h"])?;
    for i in 0..c0 {
        for j in 0..c1 {
            let y = space.values(&[i, j])?;
            truth.row([i.to_string(), j.to_string(), y[0].to_string(), y[1].to_string(), objective.evaluate(&[i, j]).to_string()])?;
        }
    }
    dir.write_csv("true_grid.csv", truth)?;

    let mut summary = Table::new(&["step", "n_known", "mse", "best_so_far"])?;
    for snap in &snaps {
        let mut grid = Table::new(&["i", "j", "y1", "y2", "h_fm"])?;
        for i in 0..c0 {
            for j in 0..c1 {
                let y = space.values(&[i, j])?;
                let h = snap.params.predict_active(&space.active_bits(&[i, j])?);
                grid.row([i.to_string(), j.to_string(), y[0].to_string(), y[1].to_string(), h.to_string()])?;
            }
        }
        dir.write_csv(&format!("surface_step{:02}.csv", snap.step), grid)?;

        let mut points = Table::new(&["kind", "i", "j", "y1", "y2", "value"])?;
        for (kind, list) in [("known", &snap.known), ("new", &snap.new)] {
            for (p, v) in list.iter() {
                let y = space.values(p)?;
                points.row([kind.to_string(), p[0].to_string(), p[1].to_string(), y[0].to_string(), y[1].to_string(), v.to_string()])?;
            }
        }
        dir.write_csv(&format!("points_step{:02}.csv", snap.step), points)?;
        dir.write(
            &format!("params_step{:02}.json", snap.step),
            &serde_json::to_string_pretty(&snap.params)?,
        )?;
        let mse = grid_mse(objective.as_ref(), &snap.params)?;
        summary.row([
            snap.step.to_string(),
            snap.known.len().to_string(),
            mse.to_string(),
            trial.best_so_far[snap.step].to_string(),
        ])?;
        println!(
            "step {:>2}: mse {mse:.4}, best so far {}",
            snap.step, trial.best_so_far[snap.step]
        );
    }
    dir.write_csv("surface_summary.csv", summary)?;
    let manifest = dir.finish("surface", &[seed], &config.to_toml())?;
    println!("wrote {}", manifest.display());
    Ok(())
}

/// Generalization sweep over sample count, smoothing strength and rank.
pub fn bench_h2_cmd(config: &ExperimentConfig, out: &Path, standard_r2: bool) -> Result<()> {
    let objective = build_objective(config)?;
    let mut dir = start(config, out)?;
    let mut summary = Table::new(&["seed", "n_samples", "rank", "lambda_sr", "r2_centred", "r2_standard"])?;
    let mut all = Vec::new();
    for &seed in &config.seeds {
        for c in bench_h2(objective.as_ref(), &config.bench_h2, seed)? {
            let mut pairs = Table::new(&["h_true", "h_fm"])?;
            for (t, p) in c.truths.iter().zip(&c.predictions) {
                pairs.row([t, p])?;
            }
            dir.write_csv(
                &format!("h2_seed{}_n{}_k{}_lambda{}.csv", seed, c.n_samples, c.rank, c.lambda_sr),
                pairs,
            )?;
            summary.row([
                seed.to_string(),
                c.n_samples.to_string(),
                c.rank.to_string(),
                c.lambda_sr.to_string(),
                c.r2_centred.to_string(),
                c.r2_standard.to_string(),
            ])?;
            all.push(c);
        }
    }
    dir.write_csv("summary.csv", summary)?;

    let form = if standard_r2 { "standard" } else { "prediction-centred" };
    println!("median {form} R^2 over {} seed(s)", config.seeds.len());
    print!("{:>6} {:>4}", "N_s", "K");
    for l in &config.bench_h2.lambdas {
        print!(" {:>10}", format!("l={l}"));
    }
    println!();
    for &n in &config.bench_h2.n_samples {
        for &k in &config.bench_h2.ranks {
            print!("{n:>6} {k:>4}");
            for &l in &config.bench_h2.lambdas {
                let vals: Vec<f64> = all
                    .iter()
                    .filter(|c| c.n_samples == n && c.rank == k && c.lambda_sr == l)
                    .map(|c| if standard_r2 { c.r2_standard } else { c.r2_centred })
                    .collect();
                print!(" {:>10.4}", median(vals));
            }
            println!();
        }
    }
    let manifest = dir.finish("bench-h2", &config.seeds, &config.to_toml())?;
    println!("wrote {}", manifest.display());
    Ok(())
}

/// Multi-trial optimization with and without smoothing.
pub fn optimize_cmd(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let objective = build_objective(config)?;
    let mut dir = start(config, out)?;
    let runs = optimize(
        objective.as_ref(),
        &config.fmqa,
        &config.seeds,
        config.optimize.compare_naive,
        config.optimize.tolerance,
    )?;
    let mut failures = Table::new(&["variant", "seed", "error"])?;
    for run in &runs {
        let mut evals = Table::new(&["seed", "step", "rank", "point", "value"])?;
        let mut best = Table::new(&["seed", "step", "best_so_far"])?;
        for (seed, result) in &run.trials {
            match result {
                Ok(trial) => {
                    for record in &trial.records {
                        for (r, (p, v)) in record.points.iter().zip(&record.values).enumerate() {
                            evals.row([seed.to_string(), record.step.to_string(), r.to_string(), indices_string(p), v.to_string()])?;
                        }
                    }
                    for (s, b) in trial.best_so_far.iter().enumerate() {
                        best.row([seed.to_string(), s.to_string(), b.to_string()])?;
                    }
                }
                Err(e) => {
                    log::error!("{} trial with seed {seed} failed: {e}", run.variant);
                    failures.row([run.variant.to_string(), seed.to_string(), e.to_string()])?;
                }
            }
        }
        dir.write_csv(&format!("evaluations_{}.csv", run.variant), evals)?;
        dir.write_csv(&format!("best_so_far_{}.csv", run.variant), best)?;
    }
    dir.write_csv("failures.csv", failures)?;

    let mut header = vec!["step"];
    header.extend(runs.iter().map(|r| r.variant));
    let mut success = Table::new(&header)?;
    let n_steps = runs.iter().map(|r| r.success.len()).max().unwrap_or(0);
    for s in 0..n_steps {
        let mut row = vec![s.to_string()];
        row.extend(runs.iter().map(|r| r.success.get(s).copied().unwrap_or(0).to_string()));
        success.row(row)?;
    }
    dir.write_csv("success_counts.csv", success)?;
    for run in &runs {
        println!(
            "{:>5} (lambda_sr = {}): {} of {} trials, success counts {:?}",
            run.variant,
            run.lambda_sr,
            run.completed().len(),
            run.trials.len(),
            run.success
        );
    }
    let manifest = dir.finish("optimize", &config.seeds, &config.to_toml())?;
    println!("wrote {}", manifest.display());
    Ok(())
}

pub fn read_qubo(path: &Path) -> Result<QuboMatrix> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    QuboMatrix::from_text(&text).with_context(|| format!("in {}", path.display()))
}

/// Brute-force minimum of a QUBO file, as text.
pub fn oracle(path: &Path) -> Result<String> {
    let q = read_qubo(path)?;
    if q.n() > BRUTE_FORCE_MAX_BITS {
        bail!(
            "{} variables is too many for exhaustive search (limit {BRUTE_FORCE_MAX_BITS})",
            q.n()
        );
    }
    let (bits, energy) = brute_force_min(&q)?;
    Ok(format!("energy {energy}\nbits {}\n", bits_string(&bits)))
}

/// Annealing reads of a QUBO file as CSV.
pub fn anneal(path: &Path, schedule: &AnnealSchedule) -> Result<String> {
    let q = read_qubo(path)?;
    let set = simulated_anneal(&q, schedule)?;
    let mut table = Table::new(&["bits", "energy", "count"])?;
    for s in set.samples() {
        table.row([bits_string(&s.bits), s.energy.to_string(), s.count.to_string()])?;
    }
    table.finish()
}

/// Default schedule for a QUBO file, with optional overrides.
pub fn anneal_schedule(
    path: &Path,
    sweeps: Option<usize>,
    reads: usize,
    beta_start: Option<f64>,
    beta_end: Option<f64>,
    seed: u64,
) -> Result<AnnealSchedule> {
    let q = read_qubo(path)?;
    let mut s = AnnealSchedule::scaled_to(&q, reads, seed);
    if let Some(n) = sweeps {
        s.sweeps = n;
    }
    if let Some(b) = beta_start {
        s.beta_start = b;
    }
    if let Some(b) = beta_end {
        s.beta_end = b;
    }
    s.validate()?;
    Ok(s)
}

/// Radius trajectory of a single bubble.
pub fn simulate_bubble(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let b = &config.bubble;
    let traj = integrate_with(&b.params, &b.drive, b.t_end, b.n_out, &b.integrator)?;
    let mut dir = start(config, out)?;
    dir.write("trajectory.csv", &traj.to_csv())?;
    let r0 = b.params.r0;
    let excursion = traj
        .radii
        .iter()
        .map(|r| (r / r0 - 1.0).abs())
        .fold(0.0, f64::max);
    println!("{} samples, max |R/R0 - 1| = {excursion:.4}", traj.len());
    let manifest = dir.finish("simulate-bubble", &[], &config.to_toml())?;
    println!("wrote {}", manifest.display());
    Ok(())
}
