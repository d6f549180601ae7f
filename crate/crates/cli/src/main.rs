//! `layerloom`: convert, check, lay out and count model definitions, or
//! run the collaboration server.
//!
//! Exit status is 0 on success, 1 when the model or operation fails and 2
//! on bad usage.

use std::fs;
use std::io::{self, Read, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use layerloom_core::frontends::{convert, import, ConvertError, ExportOptions, FrontendError};
use layerloom_core::ir::{
    total_parameters, validate, CountError, Diagnostic, Framework, IrModel, Severity, ShapeMap, TensorShape,
};
use layerloom_core::layout::{layout_model, layout_to_svg, LayoutConfig};
use layerloom_core::zoo;
use layerloom_service::ServiceConfig;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "layerloom", version, about = "Neural-network model definitions: convert, validate, lay out, share")]
struct Cli {
    /// Report results and errors as JSON.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a model between Caffe prototxt and Keras JSON.
    Convert(ConvertArgs),
    /// Import a model and report its diagnostics.
    Validate(InputArgs),
    /// Place and route a model; write SVG or layout JSON.
    Layout(LayoutArgs),
    /// Print the total number of trainable parameters.
    Params(ParamsArgs),
    /// Run the HTTP and WebSocket server.
    Serve(ServeArgs),
    /// Bundled example models.
    Zoo {
        #[command(subcommand)]
        action: ZooAction,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Caffe,
    Keras,
    /// The intermediate representation's own JSON document.
    Ir,
}

impl Format {
    fn framework(self) -> Option<Framework> {
        match self {
            Format::Caffe => Some(Framework::Caffe),
            Format::Keras => Some(Framework::Keras),
            Format::Ir => None,
        }
    }
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long, value_enum)]
    from: Framework,
    #[arg(long, value_enum)]
    to: Framework,
    /// Input file, or `-` for stdin.
    #[arg(long = "in", default_value = "-")]
    input: String,
    /// Output file, or `-` for stdout.
    #[arg(long, default_value = "-")]
    out: String,
    /// Allow layers that need third-party Keras implementations (LRN).
    #[arg(long)]
    enable_custom_layers: bool,
}

#[derive(Args)]
struct InputArgs {
    /// Input file, or `-` for stdin.
    #[arg(long = "in", default_value = "-")]
    input: String,
    /// Input format; guessed from the file name and contents when omitted.
    #[arg(long, value_enum)]
    from: Option<Format>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LayoutFormat {
    Svg,
    Json,
}

#[derive(Args)]
struct LayoutArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_enum, default_value = "svg")]
    format: LayoutFormat,
    #[arg(long, default_value = "-")]
    out: String,
}

#[derive(Args)]
struct ParamsArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Shape received by the input layers, channels first without the
    /// batch dimension: `3,224,224`, or `ID=3,224,224` for one layer.
    #[arg(long = "input-shape")]
    input_shapes: Vec<String>,
}

#[derive(Args)]
struct ServeArgs {
    /// Address to listen on [env: LAYERLOOM_BIND].
    #[arg(long)]
    bind: Option<String>,
    /// Export worker threads [env: LAYERLOOM_WORKERS].
    #[arg(long)]
    workers: Option<usize>,
    /// Directory for persistent storage; in-memory when unset [env: LAYERLOOM_STORE].
    #[arg(long)]
    store: Option<PathBuf>,
    /// Largest accepted model source in bytes [env: LAYERLOOM_FETCH_LIMIT].
    #[arg(long)]
    fetch_limit: Option<u64>,
}

#[derive(Subcommand)]
enum ZooAction {
    /// List bundled models.
    List,
    /// Write a bundled model's source.
    Fetch {
        name: String,
        #[arg(long, default_value = "-")]
        out: String,
    },
}

/// A failure reported to the user, with its exit status.
struct Failure {
    exit: u8,
    body: Value,
}

impl Failure {
    fn domain(code: &str, message: impl Into<String>) -> Self {
        Failure { exit: 1, body: json!({ "code": code, "message": message.into() }) }
    }

    fn usage(message: impl Into<String>) -> Self {
        Failure { exit: 2, body: json!({ "code": "Usage", "message": message.into() }) }
    }

    fn io(path: &str, e: io::Error) -> Self {
        Self::domain("Io", format!("{path}: {e}"))
    }

    fn with(mut self, key: &str, value: Value) -> Self {
        self.body[key] = value;
        self
    }
}

impl From<&FrontendError> for Failure {
    fn from(e: &FrontendError) -> Self {
        let mut f = Failure::domain(e.code(), e.to_string());
        if let Some(span) = e.span() {
            f = f.with("span", json!(span));
        }
        if let Some(layer) = e.layer_id() {
            f = f.with("layer_id", json!(layer));
        }
        f
    }
}

impl From<ConvertError> for Failure {
    fn from(e: ConvertError) -> Self {
        Failure::from(&e.error).with("phase", json!(e.phase.to_string())).with("message", json!(e.to_string()))
    }
}

impl From<CountError> for Failure {
    fn from(e: CountError) -> Self {
        Failure::domain(e.code(), e.to_string())
    }
}

fn read_input(path: &str) -> Result<String, Failure> {
    if path == "-" {
        let mut text = String::new();
        io::stdin().read_to_string(&mut text).map_err(|e| Failure::io("stdin", e))?;
        Ok(text)
    } else {
        fs::read_to_string(path).map_err(|e| Failure::io(path, e))
    }
}

fn write_output(path: &str, text: &str) -> Result<(), Failure> {
    if path == "-" {
        io::stdout().write_all(text.as_bytes()).map_err(|e| Failure::io("stdout", e))
    } else {
        fs::write(path, text).map_err(|e| Failure::io(path, e))
    }
}

fn guess_format(path: &str, text: &str) -> Format {
    let lower = path.to_ascii_lowercase();
    if lower.ends_with(".prototxt") || lower.ends_with(".pbtxt") {
        return Format::Caffe;
    }
    match serde_json::from_str::<Value>(text) {
        Ok(v) if v.get("format_version").is_some() => Format::Ir,
        Ok(_) => Format::Keras,
        Err(_) => Format::Caffe,
    }
}

/// Reads and imports a model, returning it with importer warnings.
fn load(args: &InputArgs) -> Result<(IrModel, Vec<Diagnostic>), Failure> {
    let text = read_input(&args.input)?;
    let format = args.from.unwrap_or_else(|| guess_format(&args.input, &text));
    match format.framework() {
        Some(framework) => {
            let imported = import(&text, framework).map_err(|e| Failure::from(&e))?;
            Ok((imported.model, imported.warnings))
        }
        None => {
            let model = IrModel::from_json(&text).map_err(|e| Failure::domain("MalformedDocument", e.to_string()))?;
            Ok((model, Vec::new()))
        }
    }
}

fn parse_dims(text: &str) -> Result<TensorShape, Failure> {
    let dims: Result<Vec<usize>, _> = text.split(',').map(|d| d.trim().parse::<usize>()).collect();
    match dims {
        Ok(d) if !d.is_empty() && d.len() <= 4 && d.iter().all(|&x| x > 0) => Ok(TensorShape(d)),
        _ => Err(Failure::usage(format!("bad --input-shape '{text}': expected positive integers like 3,224,224"))),
    }
}

/// `--input-shape` values, checked before the model is read.
fn parse_input_shapes(specs: &[String]) -> Result<Vec<(Option<String>, TensorShape)>, Failure> {
    specs
        .iter()
        .map(|spec| match spec.split_once('=') {
            Some((id, dims)) => Ok((Some(id.to_string()), parse_dims(dims)?)),
            None => Ok((None, parse_dims(spec)?)),
        })
        .collect()
}

/// Unnamed shapes apply to every layer without parents.
fn input_overrides(model: &IrModel, specs: Vec<(Option<String>, TensorShape)>) -> Result<ShapeMap, Failure> {
    let mut shapes = ShapeMap::new();
    for (id, dims) in specs {
        match id {
            Some(id) if !model.contains(&id) => {
                return Err(Failure::usage(format!("--input-shape names unknown layer '{id}'")));
            }
            Some(id) => {
                shapes.insert(id, dims);
            }
            None => {
                for layer in model.layers().filter(|l| model.parents(&l.id).is_empty()) {
                    shapes.insert(layer.id.clone(), dims.clone());
                }
            }
        }
    }
    Ok(shapes)
}

fn diagnostic_line(d: &Diagnostic) -> String {
    let severity = match d.severity {
        Severity::Error => "error",
        Severity::Warning => "warning",
    };
    let code = serde_json::to_value(d.code).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
    match &d.layer_id {
        Some(layer) => format!("{severity}: {code} [{layer}]: {}", d.message),
        None => format!("{severity}: {code}: {}", d.message),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Convert(args) => {
            let text = read_input(&args.input)?;
            let options =
                if args.enable_custom_layers { ExportOptions::with_custom_layers() } else { ExportOptions::default() };
            let converted = convert(&text, args.from, args.to, &options)?;
            for w in &converted.warnings {
                if !cli.json {
                    eprintln!("{}", diagnostic_line(w));
                }
            }
            write_output(&args.out, &converted.text)
        }
        Command::Validate(args) => {
            let (model, mut diagnostics) = load(&args)?;
            diagnostics.extend(validate(&model));
            let errors = diagnostics.iter().filter(|d| d.severity == Severity::Error).count();
            if cli.json {
                let report = json!({ "ok": errors == 0, "layers": model.len(), "diagnostics": diagnostics });
                println!("{report}");
            } else {
                for d in &diagnostics {
                    println!("{}", diagnostic_line(d));
                }
                println!("{} layers, {} errors, {} warnings", model.len(), errors, diagnostics.len() - errors);
            }
            if errors > 0 {
                return Err(Failure { exit: 1, body: Value::Null });
            }
            Ok(())
        }
        Command::Layout(args) => {
            let (model, _) = load(&args.input)?;
            let config = LayoutConfig::default();
            let layout = layout_model(&model, &config);
            let text = match args.format {
                LayoutFormat::Svg => layout_to_svg(&model, &layout.positions, &layout.paths, &config),
                LayoutFormat::Json => layout.to_json() + "\n",
            };
            write_output(&args.out, &text)
        }
        Command::Params(args) => {
            let specs = parse_input_shapes(&args.input_shapes)?;
            let (model, _) = load(&args.input)?;
            let overrides = input_overrides(&model, specs)?;
            let total = total_parameters(&model, &overrides)?;
            if cli.json {
                println!("{}", json!({ "parameters": total }));
            } else {
                println!("{total}");
            }
            Ok(())
        }
        Command::Serve(args) => {
            let mut config = ServiceConfig::from_env().map_err(|e| Failure::usage(e.to_string()))?;
            if let Some(bind) = args.bind {
                config.bind = bind.parse().map_err(|_| Failure::usage(format!("bad --bind address '{bind}'")))?;
            }
            if let Some(n) = args.workers {
                config.workers = n.max(1);
            }
            if let Some(path) = args.store {
                config.store_path = Some(path);
            }
            if let Some(limit) = args.fetch_limit {
                config.fetch_limit = limit;
            }
            tracing_subscriber::fmt()
                .with_env_filter(
                    tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
                )
                .with_writer(io::stderr)
                .init();
            let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::domain("Io", e.to_string()))?;
            runtime.block_on(layerloom_service::serve(config)).map_err(|e| Failure::domain("Io", e.to_string()))
        }
        Command::Zoo { action: ZooAction::List } => {
            if cli.json {
                let list: Vec<Value> = zoo::entries()
                    .iter()
                    .map(|e| json!({ "name": e.name, "framework": e.framework, "file": e.file_name, "description": e.description }))
                    .collect();
                println!("{}", Value::Array(list));
            } else {
                for e in zoo::entries() {
                    println!("{:<14} {:<6} {}", e.name, e.framework.as_str(), e.description);
                }
            }
            Ok(())
        }
        Command::Zoo { action: ZooAction::Fetch { name, out } } => {
            let entry = zoo::get(&name)
                .ok_or_else(|| Failure::domain("NotFound", format!("no bundled model named '{name}'")))?;
            write_output(&out, entry.text)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json = cli.json;
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            if !failure.body.is_null() {
                if json {
                    eprintln!("{}", json!({ "ok": false, "error": failure.body }));
                } else {
                    eprintln!("error: {}", failure.body["message"].as_str().unwrap_or("failed"));
                }
            }
            ExitCode::from(failure.exit)
        }
    }
}
