use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::LazyLock;

use clap::{Parser, Subcommand, ValueEnum};

use stbam::dataio::Split;
use stbam_cli::config::ALL_KEYS;
use stbam_cli::{
    cmd_build_supergraph, cmd_diagnose, cmd_evaluate, cmd_generate_data, cmd_segment, cmd_spectrum, cmd_train,
    exit_code, RunConfig,
};

fn keys_help(sections: &[&str]) -> String {
    let mut out = String::from("Config keys read:\n");
    for (section, keys) in ALL_KEYS {
        if !sections.contains(section) {
            continue;
        }
        for k in *keys {
            if section.is_empty() {
                out.push_str(&format!("  {k}\n"));
            } else {
                out.push_str(&format!("  {section}.{k}\n"));
            }
        }
    }
    out
}

static GENERATE_KEYS: LazyLock<String> = LazyLock::new(|| keys_help(&["", "data", "output"]));
static GRAPH_KEYS: LazyLock<String> = LazyLock::new(|| keys_help(&["data", "graph", "output"]));
static MODEL_KEYS: LazyLock<String> =
    LazyLock::new(|| keys_help(&["", "data", "graph", "mending", "gnn", "loss", "train", "output"]));

#[derive(Parser)]
#[command(name = "stbam", version, about = "Superpixel supergraphs with learned temporal edges")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic grow/shrink dataset into data.dir.
    #[command(after_help = GENERATE_KEYS.as_str())]
    GenerateData {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write superpixel label maps, RAGs and node features of one sample.
    #[command(after_help = GRAPH_KEYS.as_str())]
    Segment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        sample: String,
    },
    /// Write the block adjacency and stacked features of one sample as CSV.
    #[command(after_help = GRAPH_KEYS.as_str())]
    BuildSupergraph {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        sample: String,
    },
    /// Train and write checkpoint.stbam and history.csv into output.dir.
    #[command(after_help = MODEL_KEYS.as_str())]
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Accuracy and F1 scores of a checkpoint on one split.
    #[command(after_help = MODEL_KEYS.as_str())]
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Sparsity, Dirichlet energy and spectral connectivity before and after mending.
    #[command(after_help = MODEL_KEYS.as_str())]
    Diagnose {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Sample ids whose Laplacian spectra are also written.
        #[arg(long, value_delimiter = ',')]
        spectra: Vec<String>,
        /// Keep zero-padded nodes in the spectral summaries.
        #[arg(long)]
        include_padded: bool,
    },
    /// Laplacian spectra of one sample before and after mending.
    #[command(after_help = MODEL_KEYS.as_str())]
    Spectrum {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        sample: String,
        #[arg(long)]
        include_padded: bool,
    },
}

fn run(cmd: Command) -> stbam::Result<String> {
    match cmd {
        Command::GenerateData { config } => cmd_generate_data(&RunConfig::load(&config)?),
        Command::Segment { config, sample } => cmd_segment(&RunConfig::load(&config)?, &sample),
        Command::BuildSupergraph { config, sample } => cmd_build_supergraph(&RunConfig::load(&config)?, &sample),
        Command::Train { config } => cmd_train(&RunConfig::load(&config)?),
        Command::Evaluate {
            config,
            checkpoint,
            split,
        } => cmd_evaluate(&RunConfig::load(&config)?, checkpoint.as_deref(), split.into()),
        Command::Diagnose {
            config,
            checkpoint,
            split,
            spectra,
            include_padded,
        } => cmd_diagnose(
            &RunConfig::load(&config)?,
            checkpoint.as_deref(),
            split.into(),
            &spectra,
            include_padded,
        ),
        Command::Spectrum {
            config,
            checkpoint,
            sample,
            include_padded,
        } => cmd_spectrum(&RunConfig::load(&config)?, checkpoint.as_deref(), &sample, include_padded),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
