use std::fs;
use std::io::Write;
use std::path::Path;

use super::config::{load_stats, save_stats, RunConfig};
use super::{
    BenchArgs, Cli, CliError, Command, DataArgs, DistillArgs, EvalArgs, FitArgs, GradcheckArgs,
    PruneArgs, RenderArgs, RenderFlags, TrainArgs,
};
use crate::analysis::{
    bench_render, prune_dataset, render_dataset, train_eval_classifier, write_bench_csv,
    BenchOptions, BenchPoint, PruneStrategy,
};
use crate::data::{export_image, load_gsd, save_gsd, ChannelStats, LabeledImageDataset};
use crate::error::{GsddError, Result};
use crate::grad::{gradcheck_suite, GradCheck};
use crate::layout::{budget_points, BudgetSpec, DistilledSet};
use crate::optim::{distill_dm, fit_dataset, psnr, write_trace_csv};
use crate::raster::{render_batched, ImageBuffer};

/// Gradient-check failure threshold.
const GRADCHECK_TOLERANCE: f64 = 1e-3;

type CmdResult = std::result::Result<(), CliError>;

pub(super) fn run(cli: Cli) -> CmdResult {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?,
        None => RunConfig::default(),
    };
    let workers = cli
        .workers
        .or(cfg.workers)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        return Err(CliError::Usage("--workers must be at least 1".into()));
    }
    cfg.workers = Some(workers);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| GsddError::Config(e.to_string()))?;
    log::info!("using {workers} renderer workers");
    pool.install(|| match cli.command {
        Command::Fit(a) => fit(cfg, a),
        Command::Distill(a) => distill(cfg, a),
        Command::Render(a) => render(cfg, a),
        Command::Prune(a) => prune(cfg, a),
        Command::Eval(a) => eval(cfg, a),
        Command::Bench(a) => bench(cfg, a),
        Command::Gradcheck(a) => gradcheck(cfg, a),
    })
}

fn require_seed(cfg: &mut RunConfig, flag: Option<u64>) -> std::result::Result<u64, CliError> {
    let seed = flag.or(cfg.seed).ok_or_else(|| {
        CliError::Usage("a seed is required (--seed or `seed` in the config file)".into())
    })?;
    cfg.apply_seed(seed);
    Ok(seed)
}

fn apply_data(cfg: &mut RunConfig, a: &DataArgs) {
    let d = &mut cfg.data;
    if let Some(s) = a.data {
        d.source = s;
    }
    if !a.train_files.is_empty() {
        d.train_paths = a.train_files.clone();
    }
    if !a.test_files.is_empty() {
        d.test_paths = a.test_files.clone();
    }
    override_with(&mut d.toy_classes, a.toy_classes);
    override_with(&mut d.toy_size, a.toy_size);
    override_with(&mut d.toy_train_per_class, a.toy_train_per_class);
    override_with(&mut d.toy_test_per_class, a.toy_test_per_class);
}

fn apply_train(cfg: &mut RunConfig, a: &TrainArgs) {
    let t = &mut cfg.train;
    override_with(&mut t.steps, a.steps);
    override_with(&mut t.lr, a.lr);
    override_with(&mut t.lambda_boundary, a.lambda_boundary);
    override_with(&mut t.epsilon_clip, a.epsilon_clip);
    override_with(&mut t.bf16_forward, a.bf16);
}

fn apply_render(cfg: &mut RunConfig, a: &RenderFlags) {
    let r = &mut cfg.render;
    override_with(&mut r.prefilter, a.prefilter);
    override_with(&mut r.ssaa_factor, a.ssaa);
    override_with(&mut r.cutoff_sigma, a.cutoff);
    override_with(&mut r.tile_size, a.tile_size);
}

fn override_with<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn prepare_out(dir: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    let path = cfg.persist(dir)?;
    log::info!("resolved configuration written to {}", path.display());
    Ok(())
}

fn budget_for(cfg: &RunConfig, ds: &LabeledImageDataset) -> Result<(BudgetSpec, usize)> {
    let (w, h, ch) = ds
        .geometry()
        .ok_or_else(|| GsddError::Empty("dataset is empty".into()))?;
    if w != h {
        return Err(GsddError::Budget(format!(
            "budget needs square images, got {w}x{h}"
        )));
    }
    let spec = BudgetSpec::new(w, ch, cfg.budget.ipc, cfg.budget.gpc);
    Ok((spec, budget_points(&spec)?))
}

fn write_container(set: &DistilledSet, stats: &ChannelStats, path: &Path) -> Result<()> {
    save_gsd(set, path)?;
    save_stats(stats, path)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn fit(mut cfg: RunConfig, a: FitArgs) -> CmdResult {
    require_seed(&mut cfg, a.seed)?;
    apply_data(&mut cfg, &a.data);
    apply_train(&mut cfg, &a.train);
    apply_render(&mut cfg, &a.render);
    override_with(&mut cfg.budget.ipc, a.ipc);
    override_with(&mut cfg.budget.gpc, a.gpc);
    if a.gaussians.is_some() {
        cfg.budget.gaussians_per_image = a.gaussians;
    }
    prepare_out(&a.out, &cfg)?;

    let ds = cfg.load_train()?;
    let count = a.count.min(ds.len());
    if count == 0 {
        return Err(CliError::Usage("--count must be positive".into()));
    }
    let m = match cfg.budget.gaussians_per_image {
        Some(m) => m,
        None => budget_for(&cfg, &ds)?.1,
    };
    let (w, h, ch) = ds.geometry().expect("non-empty");
    let render_cfg = cfg.render.config(w, h, ch);
    let idx: Vec<usize> = (0..count).collect();
    let r = fit_dataset(&ds.subset(&idx), m, &cfg.train, &render_cfg)?;
    write_container(&r.set, &ds.stats, &a.out.join("fit.gsd"))?;
    write_trace_csv(&r.trace, a.out.join("trace.csv"))?;
    let mut w = csv::Writer::from_path(a.out.join("psnr.csv")).map_err(GsddError::from)?;
    w.write_record(["image", "label", "psnr_init", "psnr_final"])
        .map_err(GsddError::from)?;
    for i in 0..count {
        w.write_record([
            i.to_string(),
            ds.labels[i].to_string(),
            format!("{:.4}", r.psnr_init[i]),
            format!("{:.4}", r.psnr_final[i]),
        ])
        .map_err(GsddError::from)?;
    }
    w.flush()?;
    let mean = r.psnr_final.iter().sum::<f64>() / count as f64;
    println!("fitted {count} images with {m} Gaussians each, mean PSNR {mean:.2} dB");
    Ok(())
}

fn distill(mut cfg: RunConfig, a: DistillArgs) -> CmdResult {
    require_seed(&mut cfg, a.seed)?;
    apply_data(&mut cfg, &a.data);
    apply_train(&mut cfg, &a.train);
    apply_render(&mut cfg, &a.render);
    override_with(&mut cfg.budget.ipc, a.ipc);
    override_with(&mut cfg.budget.gpc, a.gpc);
    override_with(&mut cfg.train.init_steps, a.init_steps);
    override_with(&mut cfg.train.batch_real, a.batch_real);
    override_with(&mut cfg.train.batch_syn, a.batch_syn);
    prepare_out(&a.out, &cfg)?;

    let ds = cfg.load_train()?;
    let (budget, m) = budget_for(&cfg, &ds)?;
    let (w, h, ch) = ds.geometry().expect("non-empty");
    let r = distill_dm(&ds, &budget, &cfg.train, &cfg.render.config(w, h, ch))?;
    write_container(&r.set, &ds.stats, &a.out.join("distilled.gsd"))?;
    write_trace_csv(&r.trace, a.out.join("loss.csv"))?;
    println!(
        "distilled {} images ({} per class, {m} Gaussians each)",
        r.set.num_images, budget.gpc
    );
    Ok(())
}

/// Renders a container in the normalized space it was built in.
fn render_container(set: &DistilledSet, cfg: &RunConfig) -> Result<Vec<ImageBuffer>> {
    render_batched(set, &cfg.render.config(set.width, set.height, set.channels))
}

fn render(mut cfg: RunConfig, a: RenderArgs) -> CmdResult {
    apply_render(&mut cfg, &a.render);
    let set = load_gsd(&a.input)?;
    let stats = load_stats(&a.input, set.channels)?;
    prepare_out(&a.out, &cfg)?;
    let ext = if a.png { "png" } else { "ppm" };
    for (i, img) in render_container(&set, &cfg)?.iter().enumerate() {
        export_image(
            img,
            &stats,
            a.out.join(format!("img_{i:04}_c{}.{ext}", set.labels[i])),
        )?;
    }
    println!("rendered {} images to {}", set.num_images, a.out.display());
    Ok(())
}

fn denormalized(images: &[ImageBuffer], stats: &ChannelStats) -> Vec<ImageBuffer> {
    images
        .iter()
        .map(|img| {
            let mut img = img.clone();
            stats.denormalize(&mut img);
            img
        })
        .collect()
}

fn prune(mut cfg: RunConfig, a: PruneArgs) -> CmdResult {
    require_seed(&mut cfg, a.seed)?;
    apply_data(&mut cfg, &a.data);
    apply_render(&mut cfg, &a.render);
    override_with(&mut cfg.prune.mode, a.mode);
    override_with(&mut cfg.prune.ratio, a.ratio);
    prepare_out(&a.out, &cfg)?;

    let set = load_gsd(&a.input)?;
    let stats = load_stats(&a.input, set.channels)?;
    let strategy = PruneStrategy {
        mode: cfg.prune.mode,
        ratio: cfg.prune.ratio,
        seed: cfg.train.seed,
    };
    let pruned = prune_dataset(&set, &strategy)?;
    let before = denormalized(&render_container(&set, &cfg)?, &stats);
    let after = denormalized(&render_container(&pruned, &cfg)?, &stats);
    let mut total = 0.0;
    for (b, p) in before.iter().zip(&after) {
        total += psnr(p, b, 1.0)?;
    }
    let mean_psnr = total / set.num_images.max(1) as f64;
    let accuracy = if a.with_eval {
        let test = cfg.load_test(&stats)?;
        let train = render_dataset(
            &pruned,
            &cfg.render.config(set.width, set.height, set.channels),
            &stats,
        )?;
        Some(train_eval_classifier(&train, &test, &cfg.eval)?)
    } else {
        None
    };
    write_container(&pruned, &stats, &a.out.join("pruned.gsd"))?;
    let mut f = fs::File::create(a.out.join("prune.csv"))?;
    writeln!(f, "ratio,strategy,psnr,accuracy")?;
    writeln!(
        f,
        "{},{},{:.4},{}",
        strategy.ratio,
        strategy.mode.name(),
        mean_psnr,
        accuracy.map_or_else(String::new, |acc| format!("{acc:.4}"))
    )?;
    println!(
        "pruned {} -> {} Gaussians per image, PSNR vs unpruned {mean_psnr:.2} dB",
        set.gaussians_per_image, pruned.gaussians_per_image
    );
    Ok(())
}

fn eval(mut cfg: RunConfig, a: EvalArgs) -> CmdResult {
    require_seed(&mut cfg, a.seed)?;
    apply_data(&mut cfg, &a.data);
    apply_render(&mut cfg, &a.render);
    override_with(&mut cfg.eval.epochs, a.epochs);
    override_with(&mut cfg.eval.hidden_width, a.hidden);
    if let Some(out) = &a.out {
        prepare_out(out, &cfg)?;
    }
    let set = load_gsd(&a.input)?;
    let stats = load_stats(&a.input, set.channels)?;
    let train = render_dataset(
        &set,
        &cfg.render.config(set.width, set.height, set.channels),
        &stats,
    )?;
    let test = cfg.load_test(&stats)?;
    let acc = train_eval_classifier(&train, &test, &cfg.eval)?;
    if let Some(out) = &a.out {
        fs::write(out.join("eval.csv"), format!("accuracy\n{acc:.6}\n"))?;
    }
    println!("accuracy {acc:.4}");
    Ok(())
}

fn bench(mut cfg: RunConfig, a: BenchArgs) -> CmdResult {
    let seed = require_seed(&mut cfg, a.seed)?;
    let b = &mut cfg.bench;
    for (slot, flag) in [
        (&mut b.resolutions, &a.res),
        (&mut b.batches, &a.batch),
        (&mut b.gaussians, &a.gaussians),
    ] {
        if !flag.is_empty() {
            *slot = flag.clone();
        }
    }
    if !a.paths.is_empty() {
        b.paths = a.paths.clone();
    }
    override_with(&mut b.runs, a.runs);
    override_with(&mut b.warmups, a.warmups);
    override_with(&mut cfg.render.cutoff_sigma, a.cutoff);
    if let Some(out) = &a.out {
        prepare_out(out, &cfg)?;
    }
    let b = &cfg.bench;
    let mut grid = Vec::new();
    for &resolution in &b.resolutions {
        for &batch in &b.batches {
            for &m in &b.gaussians {
                for &path in &b.paths {
                    grid.push(BenchPoint {
                        resolution,
                        batch,
                        m,
                        path,
                    });
                }
            }
        }
    }
    let opts = BenchOptions {
        runs: b.runs,
        warmups: b.warmups,
        workers: cfg.workers.unwrap_or(1),
        cutoff_sigma: cfg.render.cutoff_sigma,
        seed,
    };
    let rows = bench_render(&grid, &opts)?;
    match &a.out {
        Some(out) => write_bench_csv(&rows, fs::File::create(out.join("bench.csv"))?)?,
        None => write_bench_csv(&rows, std::io::stdout().lock())?,
    }
    Ok(())
}

fn gradcheck(mut cfg: RunConfig, a: GradcheckArgs) -> CmdResult {
    let seed = require_seed(&mut cfg, a.seed)?;
    let report = gradcheck_suite(a.cases, seed, &GradCheck::default())?;
    println!(
        "max relative error {:.3e} over {} parameters ({} cases)",
        report.max_rel_error, report.checked, a.cases
    );
    if report.max_rel_error > GRADCHECK_TOLERANCE {
        return Err(CliError::Runtime(GsddError::Config(format!(
            "gradient check failed: {:.3e} > {GRADCHECK_TOLERANCE:e} at parameter {:?}",
            report.max_rel_error, report.worst_param
        ))));
    }
    Ok(())
}
