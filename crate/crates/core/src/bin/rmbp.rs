use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rmbp::bench::{self, SweepConfig};
use rmbp::config::{PipelineConfig, PriorKind};
use rmbp::descriptors::{describe_cloud, load_descriptors, write_descriptors, DescriptorSet};
use rmbp::geometry::NeighborIndex;
use rmbp::io::{self, MatchRecord, TransformRecord};
use rmbp::matching::{mutual_best_match, ratio_test_match};
use rmbp::pipeline::rmbp_filter;
use rmbp::registration::ransac_register;
use rmbp::{Error, Result};

#[derive(Parser)]
#[command(name = "rmbp", version, about = "Point-match outlier rejection by belief propagation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Putative matches between two descriptor files.
    Match {
        desc_a: PathBuf,
        desc_b: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Use the ratio test with this ratio instead of mutual best match.
        #[arg(long)]
        ratio: Option<f64>,
    },
    /// Reject outlier matches.
    Filter {
        cloud_p: PathBuf,
        cloud_q: PathBuf,
        matches: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        dump_marginals: Option<PathBuf>,
        #[arg(long)]
        dump_graph: Option<PathBuf>,
        #[command(flatten)]
        params: Params,
    },
    /// Estimate the rigid transform taking P onto Q.
    Register {
        cloud_p: PathBuf,
        cloud_q: PathBuf,
        matches: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        params: Params,
    },
    /// Run the synthetic outlier-ratio sweep.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        /// CSV destination; the JSON mirror goes next to it.
        #[arg(short, long)]
        output: PathBuf,
        /// Overrides the scene seed of the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Record wall-clock runtimes (makes the report non-reproducible).
        #[arg(long)]
        timing: bool,
    },
    /// Compute local shape descriptors for every point.
    Describe {
        cloud: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        radius: f64,
    },
}

/// Pipeline parameters; flags override the config file.
#[derive(Args)]
struct Params {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    l: Option<usize>,
    #[arg(long)]
    lambda_safety: Option<f64>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    damping: Option<f64>,
    #[arg(long, value_parser = ["uniform", "distance"])]
    prior: Option<String>,
    #[arg(long)]
    prior_scale: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    ransac_threshold: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Params {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        macro_rules! set {
            ($($field:ident => $target:ident),*) => {
                $(if let Some(v) = self.$field.clone() { cfg.$target = v; })*
            };
        }
        set!(k => k, l => l, lambda_safety => lambda_safety, threshold => threshold,
             max_iters => lbp_max_iters, tol => lbp_tol, damping => damping,
             prior_scale => prior_scale, iterations => ransac_iterations,
             ransac_threshold => ransac_threshold, seed => seed);
        if let Some(p) = &self.prior {
            cfg.prior = if p == "distance" { PriorKind::Distance } else { PriorKind::Uniform };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load_desc(path: &Path) -> Result<DescriptorSet> {
    load_descriptors(io::open(path)?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Match { desc_a, desc_b, output, ratio } => {
            let (a, b) = (load_desc(&desc_a)?, load_desc(&desc_b)?);
            let matches = match ratio {
                Some(r) => ratio_test_match(&a, &b, r)?,
                None => mutual_best_match(&a, &b)?,
            };
            let records: Vec<MatchRecord> = matches.into_iter().map(MatchRecord::from).collect();
            io::write_matches_file(&output, &records)?;
            log::info!("{} matches", records.len());
        }
        Command::Filter {
            cloud_p,
            cloud_q,
            matches,
            output,
            dump_marginals,
            dump_graph,
            params,
        } => {
            let cfg = params.resolve()?;
            let (p, q) = (io::read_ply(&cloud_p)?, io::read_ply(&cloud_q)?);
            let records = io::read_matches_file(&matches)?;
            let corr: Vec<_> = records.iter().map(|r| r.correspondence).collect();
            let out = rmbp_filter(&p, &q, &corr, &cfg.filter_config())?;
            let kept: Vec<MatchRecord> = out
                .kept
                .iter()
                .map(|&i| MatchRecord {
                    inlier_prob: Some(out.marginals.inlier(i)),
                    ..records[i]
                })
                .collect();
            io::write_matches_file(&output, &kept)?;
            if let Some(path) = dump_marginals {
                io::write_atomic(&path, |w| Ok(w.write_all(out.marginals.dump().as_bytes())?))?;
            }
            if let Some(path) = dump_graph {
                io::write_atomic(&path, |w| Ok(w.write_all(out.graph.dump().as_bytes())?))?;
            }
            log::info!(
                "kept {} of {} matches ({} rounds, converged: {})",
                out.kept.len(),
                corr.len(),
                out.report.iterations,
                out.report.converged
            );
        }
        Command::Register {
            cloud_p,
            cloud_q,
            matches,
            output,
            params,
        } => {
            let cfg = params.resolve()?;
            let (p, q) = (io::read_ply(&cloud_p)?, io::read_ply(&cloud_q)?);
            let corr: Vec<_> = io::read_matches_file(&matches)?.iter().map(|r| r.correspondence).collect();
            let r = ransac_register(&corr, &p, &q, &cfg.ransac_config())?;
            if !r.found {
                log::warn!("no hypothesis gathered support; writing the identity");
            }
            io::write_transform(&output, &TransformRecord::new(&r.transform, r.consensus.len(), r.found))?;
        }
        Command::Bench {
            config,
            output,
            seed,
            timing,
        } => {
            let mut cfg = match config {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).map_err(|source| Error::FileIo { path, source })?;
                    SweepConfig::from_toml(&text)?
                }
                None => SweepConfig::default(),
            };
            if let Some(s) = seed {
                cfg.scene.seed = s;
            }
            cfg.timing |= timing;
            let result = bench::run_sweep(&cfg)?;
            bench::emit_report(&result, &output)?;
        }
        Command::Describe { cloud, output, radius } => {
            let c = io::read_ply(&cloud)?;
            let index = NeighborIndex::build(&c)?;
            let descs = describe_cloud(&c, &index, radius)?;
            let empty = descs.iter().filter(|d| d.empty_neighborhood).count();
            if empty > 0 {
                log::warn!("{empty} points have no neighbour within radius {radius}");
            }
            let rows = descs.into_iter().map(|d| d.descriptor.values().to_vec()).collect();
            let set = DescriptorSet::from_rows(rows)?;
            io::write_atomic(&output, |w| write_descriptors(w, &set))?;
        }
    }
    Ok(())
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("RMBP_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("RMBP_THREADS must be a count, got '{v}'")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match init_threads().and_then(|()| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
