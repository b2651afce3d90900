use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use lcval_core::annotation::{read_records, AnnotationStore, GroundTruth};
use lcval_core::grid::write_grid;
use lcval_core::metrics::{evaluate, percent, render_report, AccuracyReport, WeightedOaSummary};
use lcval_core::reference::{fixture_files, run_reference_checks};
use lcval_core::retrieval::{retrieve_labels, RetrievalTable};
use lcval_core::sampling::{
    allocate_class_anchored, allocate_max_anchored, draw_points, read_samples, required_sample_size, write_samples,
    Allocation, SamplePoint, StratumCodes, StratumId,
};
use lcval_core::synth::SynthConfig;
use lcval_server::AppState;

mod config;

use config::{Design, ProjectConfig};

#[derive(Debug, Parser)]
#[command(name = "lcval", version, about = "Land-cover map validation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Required sample size, plus the stratified allocation when a config is given.
    Plan {
        #[arg(long, default_value_t = 1.96)]
        z: f64,
        #[arg(long = "P", visible_alias = "p", default_value_t = 0.5)]
        p: f64,
        #[arg(long)]
        h: Option<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Draw stratified sample points into samples.csv.
    Sample {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Read every product's label at each sample into retrieval.csv.
    Retrieve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        samples: Option<PathBuf>,
    },
    /// Run the annotation HTTP API.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
        #[arg(long)]
        samples: Option<PathBuf>,
        /// Annotation log, replayed at start and rewritten on every record.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Validate annotation record files and merge them into annotations.csv.
    ImportAnnotations {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Write ground_truth.csv from the annotation log.
    ExportGt {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long)]
        log: Option<PathBuf>,
        /// Export finalized samples only instead of failing on open ones.
        #[arg(long)]
        partial: bool,
    },
    /// Accuracy reports (text and JSON) for each product.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        ground_truth: Option<PathBuf>,
        #[arg(long)]
        retrieval: Option<PathBuf>,
        /// Restrict to these products; defaults to all in the retrieval table.
        #[arg(long)]
        product: Vec<String>,
        #[arg(long)]
        sampling_set: Option<String>,
    },
    /// Weighted-OA grid (products by sampling sets) from JSON reports.
    Summarize {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic truth grid and degraded products.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute the reference figures and report pass/fail for each.
    ReproducePaper {
        /// Also write the fixture inputs and outputs here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Plan { z, p, h, config } => plan(z, p, h, config.as_deref()),
        Command::Sample { config, seed } => sample(&ProjectConfig::load(&config)?, seed),
        Command::Retrieve { config, samples } => retrieve(&ProjectConfig::load(&config)?, samples),
        Command::Serve { config, port, bind, samples, log } => {
            serve(&ProjectConfig::load(&config)?, &bind, port, samples, log)
        }
        Command::ImportAnnotations { config, samples, files } => {
            import_annotations(&ProjectConfig::load(&config)?, samples, &files)
        }
        Command::ExportGt { config, samples, log, partial } => {
            export_gt(&ProjectConfig::load(&config)?, samples, log, partial)
        }
        Command::Evaluate { config, ground_truth, retrieval, product, sampling_set } => {
            evaluate_cmd(&ProjectConfig::load(&config)?, ground_truth, retrieval, &product, sampling_set)
        }
        Command::Summarize { reports, out } => summarize(&reports, out.as_deref()),
        Command::Synth { config, out } => synth(&config, &out),
        Command::ReproducePaper { out } => reproduce(out.as_deref()),
    }
}

fn plan(z: f64, p: f64, h: Option<f64>, config: Option<&Path>) -> Result<ExitCode> {
    let cfg = config.map(ProjectConfig::load).transpose()?;
    let h = h.or_else(|| cfg.as_ref().and_then(|c| c.sampling.as_ref()).map(|s| s.h)).unwrap_or(0.05);
    let size = required_sample_size(z, p, h)?;
    println!("n = {} (z = {z}, P = {p}, h = {h})", size.n);
    if let Some(cfg) = cfg.filter(|c| c.sampling.is_some()) {
        let alloc = allocation(&cfg, size.n)?;
        let path = cfg.output("allocation.csv")?;
        alloc.write_csv(File::create(&path)?)?;
        println!("{:<24}{:>10}{:>10}{:>10}", "stratum", "coverage", "raw", "selected");
        for e in &alloc.entries {
            println!(
                "{:<24}{:>9.2}%{:>10.2}{:>10}",
                e.stratum_id.as_str(),
                e.coverage * 100.0,
                e.raw_quota,
                e.selected
            );
        }
        println!("total {} -> {}", alloc.total, path.display());
    }
    Ok(ExitCode::SUCCESS)
}

/// Strata of the sampling product, without strata absent from the map.
fn strata(
    cfg: &ProjectConfig,
) -> Result<(lcval_core::retrieval::Product, StratumCodes, Vec<lcval_core::sampling::Stratum>)> {
    let s = cfg.sampling()?;
    let product = cfg.load_product(cfg.product_config(&s.product)?)?;
    let codes = StratumCodes::from_scheme(&product.scheme, s.stratify_by);
    let strata = codes.coverage(&product.grid).into_iter().filter(|s| s.coverage > 0.0).collect();
    Ok((product, codes, strata))
}

fn allocation(cfg: &ProjectConfig, planned_n: u64) -> Result<Allocation> {
    let s = cfg.sampling()?;
    let (_, _, strata) = strata(cfg)?;
    if strata.is_empty() {
        bail!("product {:?} has no cells in any stratum", s.product);
    }
    Ok(match s.design {
        Design::MaxAnchored => {
            let cov_max = strata.iter().map(|s| s.coverage).fold(0.0, f64::max);
            let n_max = s.n_max.unwrap_or_else(|| (planned_n as f64 * cov_max).round().max(s.n_min as f64) as u64);
            allocate_max_anchored(&strata, n_max, s.n_min)?
        }
        Design::ClassAnchored => {
            let anchor = s.anchor.as_deref().context("class-anchored design needs `anchor`")?;
            let anchor_n = s.anchor_n.context("class-anchored design needs `anchor_n`")?;
            allocate_class_anchored(&strata, &StratumId::new(anchor), anchor_n, s.n_min)?
        }
    })
}

fn sample(cfg: &ProjectConfig, seed: Option<u64>) -> Result<ExitCode> {
    let s = cfg.sampling()?;
    let size = required_sample_size(s.z, s.p, s.h)?;
    let alloc = allocation(cfg, size.n)?;
    let (product, codes, _) = strata(cfg)?;
    let points = draw_points(&product.grid, &alloc, &codes, seed.unwrap_or(s.seed), &product.name)?;
    let path = cfg.output("samples.csv")?;
    write_samples(&points, BufWriter::new(File::create(&path)?))?;
    println!("{} samples -> {}", points.len(), path.display());
    Ok(ExitCode::SUCCESS)
}

fn load_samples(cfg: &ProjectConfig, path: Option<PathBuf>) -> Result<Vec<SamplePoint>> {
    let path = path.unwrap_or_else(|| cfg.output_dir().join("samples.csv"));
    let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    read_samples(file).with_context(|| format!("reading {}", path.display()))
}

fn retrieve(cfg: &ProjectConfig, samples: Option<PathBuf>) -> Result<ExitCode> {
    let points = load_samples(cfg, samples)?;
    let products = cfg.load_products()?;
    let table = retrieve_labels(&points, &products, cfg.extent_policy)?;
    let path = cfg.output("retrieval.csv")?;
    table.write_csv(BufWriter::new(File::create(&path)?))?;
    println!("{} rows x {} products -> {}", table.rows.len(), table.products.len(), path.display());
    Ok(ExitCode::SUCCESS)
}

fn load_store(cfg: &ProjectConfig, points: &[SamplePoint], log: &Path) -> Result<AnnotationStore> {
    let ids = points.iter().map(|p| p.sample_id);
    let records = if log.exists() {
        read_records(File::open(log)?).with_context(|| format!("reading {}", log.display()))?
    } else {
        Vec::new()
    };
    AnnotationStore::from_log(ids, cfg.experts()?, records).with_context(|| format!("replaying {}", log.display()))
}

fn serve(
    cfg: &ProjectConfig,
    bind: &str,
    port: u16,
    samples: Option<PathBuf>,
    log: Option<PathBuf>,
) -> Result<ExitCode> {
    let points = load_samples(cfg, samples)?;
    let log = match log {
        Some(l) => l,
        None => cfg.output("annotations.csv")?,
    };
    let store = load_store(cfg, &points, &log)?;
    let products = cfg.load_products()?;
    let state = AppState::new(store, points, products)
        .with_log_path(&log)
        .with_patch_meters(cfg.patch_meters)
        .with_extent_policy(cfg.extent_policy);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind((bind, port)).await?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        lcval_server::serve(listener, Arc::new(state)).await?;
        anyhow::Ok(())
    })?;
    Ok(ExitCode::SUCCESS)
}

fn print_states(store: &AnnotationStore) {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for s in store.statuses(None) {
        *counts.entry(s.state.name().to_string()).or_default() += 1;
    }
    for (state, n) in counts {
        println!("{state}: {n}");
    }
}

fn import_annotations(cfg: &ProjectConfig, samples: Option<PathBuf>, files: &[PathBuf]) -> Result<ExitCode> {
    let points = load_samples(cfg, samples)?;
    let log = cfg.output("annotations.csv")?;
    let mut store = load_store(cfg, &points, &log)?;
    for f in files {
        let records = read_records(File::open(f).with_context(|| format!("opening {}", f.display()))?)
            .with_context(|| format!("reading {}", f.display()))?;
        for r in records {
            store.record_annotation(r).with_context(|| format!("importing {}", f.display()))?;
        }
    }
    store.write_log(BufWriter::new(File::create(&log)?))?;
    println!("{} records -> {}", store.log().len(), log.display());
    print_states(&store);
    Ok(ExitCode::SUCCESS)
}

fn export_gt(cfg: &ProjectConfig, samples: Option<PathBuf>, log: Option<PathBuf>, partial: bool) -> Result<ExitCode> {
    let points = load_samples(cfg, samples)?;
    let log = log.unwrap_or_else(|| cfg.output_dir().join("annotations.csv"));
    let store = load_store(cfg, &points, &log)?;
    let gt = store.export_ground_truth(partial)?;
    let path = cfg.output("ground_truth.csv")?;
    gt.write_csv(BufWriter::new(File::create(&path)?))?;
    println!("{} samples -> {}", gt.entries.len(), path.display());
    for (level, n) in gt.level_counts() {
        println!("level {}: {n}", level.number());
    }
    Ok(ExitCode::SUCCESS)
}

fn evaluate_cmd(
    cfg: &ProjectConfig,
    ground_truth: Option<PathBuf>,
    retrieval: Option<PathBuf>,
    products: &[String],
    sampling_set: Option<String>,
) -> Result<ExitCode> {
    let gt_path = ground_truth.unwrap_or_else(|| cfg.output_dir().join("ground_truth.csv"));
    let rt_path = retrieval.unwrap_or_else(|| cfg.output_dir().join("retrieval.csv"));
    let gt = GroundTruth::read_csv(File::open(&gt_path).with_context(|| format!("opening {}", gt_path.display()))?)?;
    let table =
        RetrievalTable::read_csv(File::open(&rt_path).with_context(|| format!("opening {}", rt_path.display()))?)?;
    let weighting = cfg.weighting()?;
    let set = sampling_set.unwrap_or_else(|| cfg.sampling_set_name());
    let names: Vec<String> = if products.is_empty() { table.products.clone() } else { products.to_vec() };
    for name in names {
        let report = evaluate(&gt, &table, &name, &weighting, &set)?;
        let stem = format!("report_{set}_{name}");
        std::fs::write(cfg.output(&format!("{stem}.txt"))?, render_report(&report))?;
        std::fs::write(cfg.output(&format!("{stem}.json"))?, report.to_json())?;
        println!(
            "{name}: Weighted OA {} (OA {})",
            percent(report.weighted_overall_accuracy),
            match report.pooled.overall_accuracy {
                Some(oa) => percent(oa),
                None => "-".into(),
            }
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn summarize(reports: &[PathBuf], out: Option<&Path>) -> Result<ExitCode> {
    let mut parsed = Vec::with_capacity(reports.len());
    for r in reports {
        let text = std::fs::read_to_string(r).with_context(|| format!("reading {}", r.display()))?;
        parsed.push(AccuracyReport::from_json(&text).with_context(|| format!("parsing {}", r.display()))?);
    }
    let summary = WeightedOaSummary::from_reports(&parsed);
    match out {
        Some(path) => summary.write_csv(File::create(path)?)?,
        None => summary.write_csv(std::io::stdout().lock())?,
    }
    Ok(ExitCode::SUCCESS)
}

fn synth(config: &Path, out: &Path) -> Result<ExitCode> {
    let text = std::fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let cfg = SynthConfig::from_toml(&text)?;
    let (truth, products) = cfg.generate()?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("truth.asc"), write_grid(&truth))?;
    for (name, grid) in &products {
        std::fs::write(out.join(format!("{name}.asc")), write_grid(grid))?;
    }
    println!("truth + {} products -> {}", products.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn reproduce(out: Option<&Path>) -> Result<ExitCode> {
    let checks = run_reference_checks();
    for c in &checks {
        println!("{c}");
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        for (name, contents) in fixture_files() {
            std::fs::write(dir.join(name), contents)?;
        }
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} of {} checks passed", checks.len() - failed, checks.len());
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
