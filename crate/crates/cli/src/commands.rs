//! Subcommand bodies.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use armplace::io::{sig9, write_atomic};
use armplace::optimizer::{heatmap, optimize, LocalParams};
use armplace::scoring::{
    generate_dataset, time_checkers, train_proxies, ProxyTrainingConfig,
};
use armplace::svr::{rmse, ScoreMapParams};
use armplace::trajectory::format_table;
use armplace::{
    evaluate_setup, Arm, BasePose, Checker, CheckerKind, FastronSet, ObjectiveSpec, ScoreDataset,
    ScoreKind, ScoreMaps, SetupPose, Solution, Weights, WorldLayout,
};
use serde_json::json;

use crate::manifest::RunManifest;
use crate::{
    usage, Backend, BenchArgs, Cli, Command, EvaluateArgs, FitSvrArgs, HeatmapArgs, OptimizeArgs,
    SampleArgs, TrainFastronArgs, WeightArgs,
};

pub fn run(cli: &Cli) -> Result<()> {
    let layout = match &cli.config {
        Some(p) => WorldLayout::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => WorldLayout::default(),
    };
    let ctx = Ctx {
        layout,
        config: cli.config.as_deref(),
        seed: cli.seed,
    };
    match &cli.command {
        Command::Sample(a) => sample(&ctx, a),
        Command::TrainFastron(a) => train_fastron(&ctx, a),
        Command::FitSvr(a) => fit_svr(&ctx, a),
        Command::Optimize(a) => optimize_cmd(&ctx, a),
        Command::Evaluate(a) => evaluate(&ctx, a),
        Command::Bench(a) => bench(&ctx, a),
        Command::Heatmap(a) => heatmap_cmd(&ctx, a),
    }
}

struct Ctx<'a> {
    layout: WorldLayout,
    config: Option<&'a Path>,
    seed: u64,
}

impl Ctx<'_> {
    fn manifest(&self, command: &'static str, params: serde_json::Value) -> RunManifest {
        RunManifest::new(command, self.config, &self.layout, self.seed, params)
    }
}

fn load_proxies(dir: &Path) -> Result<FastronSet> {
    FastronSet::load_dir(dir).with_context(|| {
        format!(
            "loading proxy models from {} (run `armplace train-fastron --out {}` first)",
            dir.display(),
            dir.display()
        )
    })
}

fn load_maps(dir: &Path) -> Result<ScoreMaps> {
    ScoreMaps::load_dir(dir).with_context(|| {
        format!(
            "loading score maps from {} (run `armplace fit-svr --out {}` first)",
            dir.display(),
            dir.display()
        )
    })
}

fn weights(w: &WeightArgs) -> Result<Weights> {
    Weights::new(w.w_reach, w.w_self, w.w_env).map_err(|e| usage(e.to_string()))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn check_holdout(h: f64) -> Result<()> {
    if (0.0..1.0).contains(&h) {
        Ok(())
    } else {
        Err(usage(format!("--holdout must lie in [0, 1), got {h}")))
    }
}

fn sample(ctx: &Ctx, a: &SampleArgs) -> Result<()> {
    if a.setups == 0 || a.samples == 0 {
        return Err(usage("--setups and --samples must be at least 1"));
    }
    let checker = match a.checker {
        Backend::Geometric => Checker::Geometric,
        Backend::Fastron => {
            let dir = a
                .proxies
                .as_ref()
                .ok_or_else(|| usage("--checker fastron needs --proxies <DIR>"))?;
            Checker::from_kind(CheckerKind::Fastron, Some(load_proxies(dir)?))?
        }
    };
    let start = Instant::now();
    let data = generate_dataset(&ctx.layout, a.setups, &checker, a.samples, ctx.seed)?;
    data.write_csv(&a.out)
        .with_context(|| format!("writing {}", a.out.display()))?;
    let mut m = ctx
        .manifest(
            "sample",
            json!({ "setups": a.setups, "samples": a.samples, "checker": checker.kind() }),
        )
        .output(&a.out);
    if let Some(p) = &a.proxies {
        m = m.input(p);
    }
    m.write_for(&a.out)?;
    println!(
        "wrote {} rows to {} in {:.1} s",
        data.rows.len(),
        a.out.display(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn train_fastron(ctx: &Ctx, a: &TrainFastronArgs) -> Result<()> {
    check_holdout(a.holdout)?;
    if a.env_rows < 2 || a.self_rows < 2 {
        return Err(usage("--env-rows and --self-rows must be at least 2"));
    }
    let mut config = match &a.params {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<ProxyTrainingConfig>(&text)
                .with_context(|| format!("parsing {}", p.display()))?
        }
        None => ProxyTrainingConfig::default(),
    };
    config.env_rows = a.env_rows;
    config.self_rows = a.self_rows;
    config.holdout = a.holdout;
    let (models, reports) = train_proxies(&ctx.layout, &config, ctx.seed)?;
    create_dir(&a.out)?;
    models
        .save_dir(&a.out)
        .with_context(|| format!("writing models to {}", a.out.display()))?;
    let mut m = ctx.manifest("train-fastron", serde_json::to_value(config)?);
    for name in FastronSet::FILE_NAMES {
        m = m.output(&a.out.join(name));
    }
    m.write_for(&a.out)?;
    println!(
        "{:<6} {:>8} {:>8} {:>9} {:>9} {:>7} {:>7} {:>10}",
        "model", "rows", "supports", "converged", "accuracy", "tpr", "tnr", "query us"
    );
    for r in &reports {
        println!(
            "{:<6} {:>8} {:>8} {:>9} {:>9.4} {:>7.4} {:>7.4} {:>10.2}",
            r.name,
            r.train_rows,
            r.supports,
            r.converged,
            r.holdout.accuracy,
            r.holdout.tpr,
            r.holdout.tnr,
            r.holdout.mean_query_time * 1e6
        );
    }
    println!("models written to {}", a.out.display());
    Ok(())
}

fn fit_svr(ctx: &Ctx, a: &FitSvrArgs) -> Result<()> {
    check_holdout(a.holdout)?;
    let params = match &a.params {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            ScoreMapParams::from_json_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => ScoreMapParams::default(),
    };
    let data = ScoreDataset::read_csv(&a.data, ctx.seed)
        .with_context(|| format!("reading dataset {}", a.data.display()))?;
    let n = data.rows.len();
    let n_hold = ((n as f64) * a.holdout).round() as usize;
    if n_hold > 0 && n - n_hold >= 2 {
        let train: Vec<usize> = (0..n - n_hold).collect();
        let hold: Vec<usize> = (n - n_hold..n).collect();
        let (maps, _) = ScoreMaps::fit(&data, &train, &ctx.layout, &params)?;
        let inputs = ScoreMaps::inputs(&data, &ctx.layout)?;
        println!("holdout rmse over {n_hold} rows (fit on {}):", n - n_hold);
        for k in ScoreKind::ALL {
            let (x, y) = ScoreMaps::design(k, &inputs, &data, &hold);
            println!("  {:<10} {:.4}", k.name(), rmse(maps.get(k), &x, &y)?);
        }
    }
    let all: Vec<usize> = (0..n).collect();
    let (maps, stats) = ScoreMaps::fit(&data, &all, &ctx.layout, &params)?;
    create_dir(&a.out)?;
    maps.save_dir(&a.out)
        .with_context(|| format!("writing maps to {}", a.out.display()))?;
    let mut m = ctx
        .manifest("fit-svr", json!({ "holdout": a.holdout, "params": params }))
        .input(&a.data);
    for name in ScoreMaps::FILE_NAMES {
        m = m.output(&a.out.join(name));
    }
    m.write_for(&a.out)?;
    for (k, s) in ScoreKind::ALL.iter().zip(&stats) {
        println!(
            "  {:<10} supports {:>4}  iterations {:>7}  converged {}",
            k.name(),
            maps.get(*k).support_count(),
            s.iterations,
            s.converged
        );
    }
    println!("maps written to {} (fit on all {n} rows)", a.out.display());
    Ok(())
}

fn optimize_cmd(ctx: &Ctx, a: &OptimizeArgs) -> Result<()> {
    if a.starts == 0 {
        return Err(usage("--starts must be at least 1"));
    }
    let w = weights(&a.weights)?;
    let spec = ObjectiveSpec::new(load_maps(&a.maps)?, w)?;
    let sol = optimize(&spec, &ctx.layout, a.starts, ctx.seed, &LocalParams::default())?;
    sol.save(&a.out)
        .with_context(|| format!("writing {}", a.out.display()))?;
    ctx.manifest("optimize", json!({ "weights": w, "starts": a.starts }))
        .input(&a.maps)
        .output(&a.out)
        .write_for(&a.out)?;
    let s = &sol.setup;
    println!("f* = {:.4} (bound {:.1})", sol.f, w.upper_bound());
    println!(
        "arm1 x {:.4} y {:.4} th {:.4}  arm2 x {:.4} y {:.4} th {:.4}",
        s.arm1.x, s.arm1.y, s.arm1.theta, s.arm2.x, s.arm2.y, s.arm2.theta
    );
    let c = &sol.scores;
    println!(
        "predicted reach {:.3}/{:.3} env {:.3}/{:.3} self {:.3}",
        c.reach1, c.reach2, c.env1, c.env2, c.self_free
    );
    Ok(())
}

fn evaluate(ctx: &Ctx, a: &EvaluateArgs) -> Result<()> {
    if a.solution.is_empty() && a.setup.is_empty() {
        return Err(usage("give at least one --solution <FILE> or --setup <x1,y1,th1,x2,y2,th2>"));
    }
    let mut columns: Vec<(String, SetupPose)> = Vec::new();
    for p in &a.solution {
        let sol = Solution::load(p).with_context(|| format!("loading solution {}", p.display()))?;
        let label = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| p.display().to_string());
        columns.push((label, sol.setup));
    }
    for (i, v) in a.setup.iter().enumerate() {
        columns.push((format!("setup {}", i + 1), SetupPose::from_array(*v)));
    }
    let reports = columns
        .iter()
        .map(|(_, s)| evaluate_setup(s, &ctx.layout))
        .collect::<Result<Vec<_>, _>>()?;
    let table: Vec<(&str, _)> = columns
        .iter()
        .map(|(l, _)| l.as_str())
        .zip(reports.iter())
        .collect();
    print!("{}", format_table(&table));
    if let Some(out) = &a.out {
        let body: Vec<_> = columns
            .iter()
            .zip(&reports)
            .map(|((label, setup), r)| json!({ "label": label, "setup": setup, "report": r }))
            .collect();
        let mut text = serde_json::to_string_pretty(&body)?;
        text.push('\n');
        write_atomic(out, text.as_bytes()).with_context(|| format!("writing {}", out.display()))?;
        let mut m = ctx.manifest("evaluate", json!({ "columns": columns.len() }));
        for p in &a.solution {
            m = m.input(p);
        }
        m.output(out).write_for(out)?;
    }
    Ok(())
}

fn bench(ctx: &Ctx, a: &BenchArgs) -> Result<()> {
    if a.queries == 0 {
        return Err(usage("--queries must be at least 1"));
    }
    let models = load_proxies(&a.proxies)?;
    let t = time_checkers(&ctx.layout, &models, a.queries, ctx.seed)?;
    println!("{:<10} {:>14} {:>10}", "checker", "mean us/query", "ratio");
    println!("{:<10} {:>14.3} {:>10.3}", "geometric", t.geometric * 1e6, 1.0);
    println!("{:<10} {:>14.3} {:>10.3}", "fastron", t.proxy * 1e6, t.ratio());
    println!(
        "{} queries, proxy/geometric time ratio {:.3}, flag agreement {:.4}",
        t.queries,
        t.ratio(),
        t.agreement
    );
    Ok(())
}

fn heatmap_cmd(ctx: &Ctx, a: &HeatmapArgs) -> Result<()> {
    if a.res < 2 {
        return Err(usage("--res must be at least 2"));
    }
    let arm = Arm::from_number(a.arm).expect("clap restricts --arm to 1 or 2");
    let w = weights(&a.weights)?;
    let other = match a.other {
        Some([x, y, th]) => BasePose::new(x, y, th),
        None => ctx.layout.grid_center_pose(arm.other()),
    };
    if !ctx.layout.contains_pose(&other, arm.other()) {
        return Err(usage("--other must lie inside the other arm's grid"));
    }
    let spec = ObjectiveSpec::new(load_maps(&a.maps)?, w)?;
    let cells = heatmap(&spec, &ctx.layout, arm, a.res, &other)?;
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("heatmap_arm{}.csv", a.arm)));
    let mut wr = csv::Writer::from_writer(Vec::new());
    wr.write_record(["x", "y", "score"])?;
    for c in &cells {
        wr.write_record([sig9(c.x), sig9(c.y), sig9(c.score)])?;
    }
    let bytes = wr.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?;
    write_atomic(&out, &bytes).with_context(|| format!("writing {}", out.display()))?;
    ctx.manifest(
        "heatmap",
        json!({ "arm": a.arm, "res": a.res, "weights": w, "other": other }),
    )
    .input(&a.maps)
    .output(&out)
    .write_for(&out)?;
    let best = cells
        .iter()
        .fold(&cells[0], |b, c| if c.score > b.score { c } else { b });
    println!(
        "wrote {}x{} grid to {}; best {:.3} at x {:.3} y {:.3}",
        a.res,
        a.res,
        out.display(),
        best.score,
        best.x,
        best.y
    );
    Ok(())
}
