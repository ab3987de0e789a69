//! `misdetect`: corpus generation, training, evaluation and the experiment
//! sweeps from one binary.

mod commands;

use std::fmt;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{value_parser, Arg, ArgAction, ArgMatches, Command};
use misdetect::config::TrainConfig;

/// Why a command failed. Printed as one `error[kind]: message` line.
#[derive(Debug)]
pub enum Failure {
    Lib(misdetect::Error),
    Usage(String),
    /// Gradient check exceeded its tolerance.
    Tolerance(String),
}

impl Failure {
    fn kind(&self) -> &'static str {
        match self {
            Failure::Lib(e) => e.kind(),
            Failure::Usage(_) => "usage",
            Failure::Tolerance(_) => "tolerance",
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            Failure::Tolerance(_) => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Lib(e) => write!(f, "{e}"),
            Failure::Usage(m) | Failure::Tolerance(m) => f.write_str(m),
        }
    }
}

impl From<misdetect::Error> for Failure {
    fn from(e: misdetect::Error) -> Self {
        Failure::Lib(e)
    }
}

fn config_args() -> Vec<Arg> {
    TrainConfig::KEYS
        .iter()
        .map(|(key, doc)| {
            Arg::new(*key)
                .long(key.replace('_', "-"))
                .value_name("VALUE")
                .help(doc.trim())
                .help_heading("Config overrides")
        })
        .collect()
}

fn training(cmd: Command) -> Command {
    cmd.arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .help("key = value config file; flags override its values"),
    )
    .args(config_args())
}

fn out_dir() -> Arg {
    Arg::new("out")
        .long("out")
        .value_name("DIR")
        .required(true)
        .help("output directory (created if missing)")
}

fn corpus_source(default_spec: &'static str) -> [Arg; 2] {
    [
        Arg::new("data")
            .long("data")
            .value_name("FILE")
            .help("corpus in line-delimited record format"),
        Arg::new("spec")
            .long("spec")
            .value_name("NAME")
            .default_value(default_spec)
            .conflicts_with("data")
            .help("built-in corpus used when --data is absent: health, politics or ablation"),
    ]
}

fn cli() -> Command {
    Command::new("misdetect")
        .about("Misleading-content detection with contrastive learning and stance reasoning")
        .version(concat!(
            env!("CARGO_PKG_VERSION"),
            " (",
            env!("MISDETECT_GIT_DESCRIBE"),
            ")"
        ))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("verbose")
                .short('v')
                .long("verbose")
                .action(ArgAction::Count)
                .global(true)
                .help("log progress to stderr (-vv for more)"),
        )
        .subcommand(
            Command::new("gen")
                .about("Generate a synthetic corpus")
                .arg(
                    Arg::new("spec")
                        .long("spec")
                        .value_name("NAME")
                        .default_value("health")
                        .help("health, politics or ablation"),
                )
                .arg(
                    Arg::new("n")
                        .long("n")
                        .value_name("N")
                        .value_parser(value_parser!(usize))
                        .help("number of records"),
                )
                .arg(
                    Arg::new("seed")
                        .long("seed")
                        .value_name("SEED")
                        .value_parser(value_parser!(u64)),
                )
                .arg(
                    Arg::new("cue-strength")
                        .long("cue-strength")
                        .value_name("P")
                        .value_parser(value_parser!(f64)),
                )
                .arg(
                    Arg::new("noise-rate")
                        .long("noise-rate")
                        .value_name("P")
                        .value_parser(value_parser!(f64)),
                )
                .arg(
                    Arg::new("stance-fraction")
                        .long("stance-fraction")
                        .value_name("P")
                        .value_parser(value_parser!(f64)),
                )
                .arg(
                    Arg::new("out")
                        .long("out")
                        .value_name("FILE")
                        .required(true)
                        .help("corpus file to write"),
                )
                .arg(
                    Arg::new("synonyms-out")
                        .long("synonyms-out")
                        .value_name("FILE")
                        .help("also write the built-in synonym table"),
                ),
        )
        .subcommand(training(
            Command::new("augment")
                .about("Write two augmented views of every record")
                .arg(Arg::new("data").long("data").value_name("FILE").required(true))
                .arg(
                    Arg::new("out")
                        .long("out")
                        .value_name("FILE")
                        .required(true)
                        .help("views file to write"),
                ),
        ))
        .subcommand(training(
            Command::new("train")
                .about("Train one model and write its checkpoint and run report")
                .arg(Arg::new("data").long("data").value_name("FILE").required(true))
                .arg(out_dir()),
        ))
        .subcommand(
            Command::new("eval")
                .about("Score a checkpoint on a corpus")
                .arg(
                    Arg::new("checkpoint")
                        .long("checkpoint")
                        .value_name("FILE")
                        .required(true),
                )
                .arg(Arg::new("data").long("data").value_name("FILE").required(true))
                .arg(out_dir()),
        )
        .subcommand(training(
            Command::new("ablate")
                .about("Train every ablation variant over several seeds and report deltas")
                .args(corpus_source("ablation"))
                .arg(
                    Arg::new("runs")
                        .long("runs")
                        .value_name("N")
                        .default_value("3")
                        .value_parser(value_parser!(usize)),
                )
                .arg(out_dir()),
        ))
        .subcommand(training(
            Command::new("augcompare")
                .about("Train once per augmentation strategy")
                .args(corpus_source("health"))
                .arg(out_dir()),
        ))
        .subcommand(training(
            Command::new("crossdomain")
                .about("Train per domain and score every model on every domain's test split")
                .arg(
                    Arg::new("domains")
                        .long("domains")
                        .value_name("LIST")
                        .default_value("health,politics")
                        .help("built-in corpora, comma-separated"),
                )
                .arg(
                    Arg::new("data")
                        .long("data")
                        .value_name("FILE")
                        .action(ArgAction::Append)
                        .conflicts_with("domains")
                        .help("one corpus file per domain (repeatable)"),
                )
                .arg(out_dir()),
        ))
        .subcommand(
            Command::new("gradcheck")
                .about("Compare analytic and finite-difference gradients on a tiny model")
                .arg(
                    Arg::new("width")
                        .long("width")
                        .default_value("8")
                        .value_parser(value_parser!(usize)),
                )
                .arg(
                    Arg::new("seq-len")
                        .long("seq-len")
                        .default_value("12")
                        .value_parser(value_parser!(usize)),
                )
                .arg(
                    Arg::new("batch")
                        .long("batch")
                        .default_value("4")
                        .value_parser(value_parser!(usize)),
                )
                .arg(
                    Arg::new("vocab-size")
                        .long("vocab-size")
                        .default_value("20")
                        .value_parser(value_parser!(usize)),
                )
                .arg(
                    Arg::new("tau")
                        .long("tau")
                        .default_value("0.07")
                        .value_parser(value_parser!(f64)),
                )
                .arg(
                    Arg::new("lambda")
                        .long("lambda")
                        .default_value("0.0001")
                        .value_parser(value_parser!(f64)),
                )
                .arg(Arg::new("gate").long("gate").default_value("elementwise"))
                .arg(Arg::new("infonce").long("infonce").default_value("standard"))
                .arg(
                    Arg::new("seed")
                        .long("seed")
                        .default_value("7")
                        .value_parser(value_parser!(u64)),
                )
                .arg(
                    Arg::new("step")
                        .long("step")
                        .default_value("0.0001")
                        .value_parser(value_parser!(f64)),
                )
                .arg(
                    Arg::new("tolerance")
                        .long("tolerance")
                        .default_value("0.0001")
                        .value_parser(value_parser!(f64)),
                )
                .arg(
                    Arg::new("out")
                        .long("out")
                        .value_name("DIR")
                        .help("also write the report and a manifest here"),
                ),
        )
}

fn init_logging(m: &ArgMatches) {
    let level = match m.get_count("verbose") {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
}

fn dispatch(m: &ArgMatches, argv: &[String]) -> Result<(), Failure> {
    let (name, sub) = m.subcommand().expect("subcommand required");
    let ctx = commands::Context::new(name, argv);
    match name {
        "gen" => commands::gen(&ctx, sub),
        "augment" => commands::augment(&ctx, sub),
        "train" => commands::train(&ctx, sub),
        "eval" => commands::eval(&ctx, sub),
        "ablate" => commands::ablate(&ctx, sub),
        "augcompare" => commands::augcompare(&ctx, sub),
        "crossdomain" => commands::crossdomain(&ctx, sub),
        "gradcheck" => commands::gradcheck(&ctx, sub),
        other => unreachable!("unhandled subcommand {other}"),
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let matches = match cli().try_get_matches_from(&argv) {
        Ok(m) => m,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            let _ = e.print();
            return ExitCode::from(1);
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("error[usage]: {}", first.trim_start_matches("error: "));
            return ExitCode::from(1);
        }
    };
    init_logging(&matches);
    match dispatch(&matches, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let msg = f.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", f.kind());
            ExitCode::from(f.exit_code())
        }
    }
}
