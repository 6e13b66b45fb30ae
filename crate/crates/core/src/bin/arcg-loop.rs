use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use arcg_loop::features::{ExtractorConfig, DEFAULT_IDLE_TIMEOUT_US, DEFAULT_WINDOW};
use arcg_loop::forest::{deserialize_model, ModelKind, TrainParams};
use arcg_loop::harness::{self, RunConfig, SynthProfile};
use arcg_loop::model::ClassLabel;
use arcg_loop::pcap::read_pcap_file;

#[derive(Parser)]
#[command(name = "arcg-loop", version, about = "AR / CG / other traffic classification loop")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the closed loop described by an INI config and print the report.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Generate a synthetic capture and its ground-truth CSV.
    Synth {
        /// ar, cg, other or mixed
        #[arg(long)]
        profile: SynthProfile,
        #[arg(long)]
        flows: usize,
        /// Seconds of capture time.
        #[arg(long)]
        duration: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        labels: PathBuf,
    },
    /// Dump the feature windows of a capture as CSV (labeled if --labels).
    Extract {
        #[arg(long)]
        pcap: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_WINDOW)]
        window: usize,
    },
    /// Train a model from a labeled feature CSV into an envelope file.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// dt or rf
        #[arg(long)]
        kind: ModelKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        n_trees: Option<usize>,
        #[arg(long)]
        max_depth: Option<usize>,
    },
    /// Score an envelope on a labeled capture.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        pcap: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = DEFAULT_WINDOW)]
        window: usize,
    },
    /// Measure classify-and-route throughput over a pre-parsed capture.
    Bench {
        #[arg(long)]
        pcap: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Envelope to serve; a single-leaf placeholder otherwise.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_WINDOW)]
        window: usize,
    },
}

fn extractor(window: usize) -> Result<ExtractorConfig> {
    anyhow::ensure!(window >= 1, "--window must be >= 1");
    Ok(ExtractorConfig {
        window,
        idle_timeout_us: DEFAULT_IDLE_TIMEOUT_US,
    })
}

fn execute(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Run { config } => {
            let cfg = RunConfig::from_file(&config)?;
            let out = harness::run(&cfg)?;
            print!("{}", out.report.to_text());
        }
        Cmd::Synth {
            profile,
            flows,
            duration,
            seed,
            out,
            labels,
        } => {
            let (packets, flows) = harness::synth(profile, flows, duration, seed, &out, &labels)?;
            println!("wrote {packets} packets from {flows} flows to {}", out.display());
        }
        Cmd::Extract {
            pcap,
            labels,
            out,
            window,
        } => {
            let n = harness::extract(&pcap, labels.as_deref(), extractor(window)?, &out)?;
            println!("wrote {n} windows to {}", out.display());
        }
        Cmd::Train {
            data,
            kind,
            out,
            seed,
            n_trees,
            max_depth,
        } => {
            let d = TrainParams::for_kind(kind);
            let params = TrainParams {
                seed,
                n_trees: n_trees.unwrap_or(d.n_trees),
                max_depth: max_depth.unwrap_or(d.max_depth),
                ..d
            };
            let model = harness::train(&data, kind, &params, &out)?;
            let nodes: usize = match &model {
                arcg_loop::forest::Model::Tree(t) => t.nodes().len(),
                arcg_loop::forest::Model::Forest(f) => f.trees().iter().map(|t| t.nodes().len()).sum(),
            };
            println!("wrote {} model ({nodes} nodes) to {}", kind.as_str(), out.display());
        }
        Cmd::Eval {
            model,
            pcap,
            labels,
            window,
        } => {
            let r = harness::eval(&model, &pcap, &labels, extractor(window)?)?;
            println!("accuracy={:.6}", r.accuracy);
            println!("windows={} unscored={} model_version={}", r.windows, r.unscored, r.model_version);
            println!("confusion (rows truth, columns predicted: AR CG other)");
            for t in ClassLabel::ALL {
                let row = r.confusion.0[t.index()];
                println!("{:>6} {} {} {}", t.as_str(), row[0], row[1], row[2]);
            }
        }
        Cmd::Bench {
            pcap,
            workers,
            model,
            window,
        } => {
            let cap = read_pcap_file(&pcap).with_context(|| pcap.display().to_string())?;
            let model = match model {
                Some(p) => {
                    let bytes = std::fs::read(&p).with_context(|| p.display().to_string())?;
                    Some(deserialize_model(&bytes)?)
                }
                None => None,
            };
            let r = harness::bench(&cap.packets, model, workers, extractor(window)?)?;
            println!("packets={}", r.packets);
            println!("workers={}", r.workers);
            println!("windows={}", r.windows);
            println!("elapsed_s={:.6}", r.elapsed_s);
            println!("packets_per_s={:.0}", r.packets_per_s);
            println!("latency_mean_us={:.3}", r.latency_mean_us);
            println!("latency_p95_us={:.3}", r.latency_p95_us);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            eprintln!("{}", msg.lines().next().unwrap_or("invalid arguments"));
            return ExitCode::from(2);
        }
    };
    match execute(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
