mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hinge::encoder::{EncoderInputs, EncoderParams, SchemaView};
use hinge::evalbench::{emit_tables, linear_probe, synth_hin, ResultRow};
use hinge::hingraph::{load_graph, metapath_neighbors, split_labels, HeteroGraph, MetaPath};
use hinge::hypergraph::{adjacency_of, build_hypergraph};
use hinge::trainer::{parse_grid, sweep, train_logged};
use hinge::{Error, Result};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "hinge", version, about = "Self-supervised hypergraph embeddings for heterogeneous graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Shared {
    /// TOML run configuration with [train] and [synth] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Root seed; overrides both train.seed and synth.seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a planted synthetic graph as TSV files.
    Synth {
        #[command(flatten)]
        shared: Shared,
    },
    /// Train an encoder and write checkpoints and the training log.
    Train {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        dropout: Option<f64>,
    },
    /// Probe frozen embeddings at several label ratios.
    Eval {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Label ratios in percent, comma separated.
        #[arg(long, default_value = "20,40,60")]
        ratios: String,
        /// Number of split/probe seeds averaged per ratio.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
    /// Train over a learning-rate x dropout grid and rank the runs.
    Sweep {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        graph: PathBuf,
        /// `start:stop:step` or a comma-separated list.
        #[arg(long)]
        lr_grid: String,
        #[arg(long, default_value = "0.1:0.5:0.05")]
        dropout_grid: String,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or_default().to_string();
            eprintln!("ERROR\tusage\t{}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let detail = e.to_string().replace(['\t', '\n'], " ");
            eprintln!("ERROR\t{}\t{detail}", e.kind());
            ExitCode::FAILURE
        }
    }
}

fn prepare(shared: &Shared) -> Result<RunConfig> {
    let mut config = RunConfig::load(shared.config.as_deref())?;
    if let Some(seed) = shared.seed {
        config.train.seed = seed;
        config.synth.seed = seed;
    }
    std::fs::create_dir_all(&shared.out).map_err(|e| io_err(&shared.out, e))?;
    Ok(config)
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth { shared } => {
            let config = prepare(&shared)?;
            config.synth.validate()?;
            config.write_effective(&shared.out)?;
            synth_hin(&config.synth)?.write_tsv(&shared.out)
        }
        Command::Train {
            shared,
            graph,
            max_epochs,
            lr,
            dropout,
        } => {
            let mut config = prepare(&shared)?;
            if let Some(v) = max_epochs {
                config.train.max_epochs = v;
            }
            if let Some(v) = lr {
                config.train.learning_rate = v;
            }
            if let Some(v) = dropout {
                config.train.dropout = v;
            }
            config.train.validate()?;
            config.write_effective(&shared.out)?;
            let g = load_graph(&graph)?;
            cmd_train(&g, &config, &shared.out)
        }
        Command::Eval {
            shared,
            graph,
            checkpoint,
            ratios,
            seeds,
        } => {
            let config = prepare(&shared)?;
            config.train.validate()?;
            config.write_effective(&shared.out)?;
            let g = load_graph(&graph)?;
            let params = EncoderParams::load(&checkpoint)?;
            if shared.config.is_some() {
                check_dims(&params, &config)?;
            }
            let ratios = parse_ratios(&ratios)?;
            cmd_eval(&g, &params, &config, &ratios, seeds, &shared.out)
        }
        Command::Sweep {
            shared,
            graph,
            lr_grid,
            dropout_grid,
            threads,
        } => {
            let config = prepare(&shared)?;
            let lrs = parse_grid(&lr_grid)?;
            let dropouts = parse_grid(&dropout_grid)?;
            config.write_effective(&shared.out)?;
            let g = load_graph(&graph)?;
            let result = sweep(&g, &config.train, &lrs, &dropouts, threads)?;
            write_file(&shared.out.join("sweep.tsv"), &result.to_tsv())
        }
    }
}

fn cmd_train(g: &HeteroGraph, config: &RunConfig, out: &Path) -> Result<()> {
    let log_path = out.join("training_log.tsv");
    let mut log = std::fs::File::create(&log_path).map_err(|e| io_err(&log_path, e))?;
    let outcome = train_logged(g, &config.train, |report| {
        writeln!(log, "{}", report.to_tsv_line())
            .and_then(|()| log.flush())
            .map_err(|e| io_err(&log_path, e))
    })?;
    outcome.best_params.save(&out.join("best.ckpt"))?;
    outcome.final_params.save(&out.join("final.ckpt"))?;
    Ok(())
}

fn check_dims(params: &EncoderParams, config: &RunConfig) -> Result<()> {
    let ours = params.meta().dims;
    let want = config.train.dims();
    if (ours.hidden_dim, ours.embed_dim, ours.conv_depth) != (want.hidden_dim, want.embed_dim, want.conv_depth) {
        return Err(Error::Compatibility(format!(
            "checkpoint hidden x embed x depth is {}x{}x{}, config asks for {}x{}x{}",
            ours.hidden_dim, ours.embed_dim, ours.conv_depth, want.hidden_dim, want.embed_dim, want.conv_depth
        )));
    }
    Ok(())
}

fn parse_ratios(text: &str) -> Result<Vec<u32>> {
    text.split(',')
        .map(|p| {
            let p = p.trim().trim_end_matches('%');
            match p.parse::<u32>() {
                Ok(v) if (1..100).contains(&v) => Ok(v),
                _ => Err(Error::Config {
                    key: "ratios".into(),
                    detail: format!("{p:?} is not a percentage in 1..99"),
                }),
            }
        })
        .collect()
}

/// Embeddings of the graph under the checkpoint's own meta-paths.
fn embed(g: &HeteroGraph, params: &EncoderParams) -> Result<hinge::DenseMatrix> {
    params.check_compatible(&SchemaView::from_graph(g)?)?;
    let hoods = params
        .meta()
        .meta_paths
        .iter()
        .map(|name| metapath_neighbors(g, &MetaPath::new(name.split('-'))?))
        .collect::<Result<Vec<_>>>()?;
    let h = build_hypergraph(&hoods, params.meta().weighting)?;
    let inputs = EncoderInputs::new(g, adjacency_of(&h)?)?;
    Ok(inputs.forward(params)?.fused)
}

fn cmd_eval(g: &HeteroGraph, params: &EncoderParams, config: &RunConfig, ratios: &[u32], seeds: u64, out: &Path) -> Result<()> {
    if seeds == 0 {
        return Err(Error::Config {
            key: "seeds".into(),
            detail: "must be at least 1".into(),
        });
    }
    let labels = g
        .labels()
        .ok_or_else(|| Error::Protocol("evaluation needs labels".into()))?;
    let fused = embed(g, params)?;
    let models = [("ours", &fused), ("raw-features", g.features())];
    let base = config.train.seed;
    let mut per_seed = String::from("model\tsetting\tseed\tacc\n");
    let mut rows = Vec::new();
    for &ratio in ratios {
        let splits = (0..seeds)
            .map(|s| split_labels(g, f64::from(ratio) / 100.0, 0.0, base + s))
            .collect::<Result<Vec<_>>>()?;
        for (name, z) in models {
            let mut total = 0.0;
            for (s, split) in splits.iter().enumerate() {
                let seed = base + s as u64;
                let acc = linear_probe(z, labels, g.num_classes(), split, config.train.probe_epochs, seed)?;
                per_seed.push_str(&format!("{name}\t{ratio}%\t{seed}\t{acc}\n"));
                total += acc;
            }
            rows.push(ResultRow {
                model: name.to_string(),
                acc: total / seeds as f64,
                setting: ratio,
            });
        }
    }
    write_file(&out.join("eval_log.tsv"), &per_seed)?;
    emit_tables(rows, out)?;
    Ok(())
}
