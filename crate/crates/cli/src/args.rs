use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub const DEFAULT_SERVER: &str = "http://127.0.0.1:7878";
pub const DEFAULT_LISTEN: &str = "127.0.0.1:7878";
pub const DEFAULT_JOURNAL: &str = "flowgraft.journal";

#[derive(Debug, Parser)]
#[command(name = "flowgraft", version, about = "BPMN orchestration engine and operator tool")]
pub struct Cli {
    /// Engine base URL for client commands.
    #[arg(long, global = true, env = "FLOWGRAFT_SERVER", default_value = DEFAULT_SERVER)]
    pub server: String,

    /// Print machine-readable JSON instead of tables.
    #[arg(long, global = true)]
    pub json: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the engine and its HTTP API in this process.
    Serve(ServeArgs),
    /// Deploy a BPMN document as a new workflow version.
    Deploy {
        file: PathBuf,
        #[arg(long)]
        version: String,
    },
    /// Inspect or retire deployed workflows.
    #[command(subcommand)]
    Workflows(WorkflowsCmd),
    /// Register or list services.
    #[command(subcommand)]
    Services(ServicesCmd),
    /// Register local functions.
    #[command(subcommand)]
    Functions(FunctionsCmd),
    /// Start an instance of a deployed workflow.
    Run(RunArgs),
    /// Inspect or cancel instances.
    #[command(subcommand)]
    Instances(InstancesCmd),
    /// Parse and check a BPMN file without contacting an engine.
    Validate { file: PathBuf },
    /// Breaker and liveness views.
    #[command(subcommand)]
    Monitor(MonitorCmd),
    /// Run a simulated service fleet on loopback until interrupted.
    Sim(SimArgs),
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "FLOWGRAFT_LISTEN", default_value = DEFAULT_LISTEN)]
    pub listen: String,
    #[arg(long, env = "FLOWGRAFT_JOURNAL", default_value = DEFAULT_JOURNAL)]
    pub journal: PathBuf,
    /// JSON array of invocation policies; an entry named `default` replaces the built-in one.
    #[arg(long)]
    pub policies: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum WorkflowsCmd {
    List,
    Show {
        id: String,
        version: String,
        /// Print only the raw BPMN document.
        #[arg(long)]
        document: bool,
    },
    Retire { id: String, version: String },
}

#[derive(Debug, Subcommand)]
pub enum ServicesCmd {
    Register {
        #[arg(long)]
        id: String,
        #[arg(long)]
        version: String,
        #[arg(long, required_unless_present = "function", conflicts_with = "function")]
        url: Option<String>,
        /// Bind the service to a registered local function instead of a URL.
        #[arg(long)]
        function: Option<String>,
    },
    List,
}

#[derive(Debug, Subcommand)]
pub enum FunctionsCmd {
    Register {
        function_ref: String,
        /// JSON file holding the function spec.
        #[arg(long)]
        spec: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    pub definition_id: String,
    /// Initial variables as a JSON object.
    #[arg(long, default_value = "{}")]
    pub vars: String,
    #[arg(long)]
    pub version: Option<String>,
    /// Poll until the instance finishes, printing each change.
    #[arg(long)]
    pub watch: bool,
    #[arg(long, default_value_t = 100)]
    pub interval_ms: u64,
}

#[derive(Debug, Subcommand)]
pub enum InstancesCmd {
    List,
    Show { id: String },
    Events { id: String },
    Cancel { id: String },
}

#[derive(Debug, Subcommand)]
pub enum MonitorCmd {
    Circuits,
    Health,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    #[arg(long)]
    pub fleet: PathBuf,
    /// Also register every fleet service with the engine at --server.
    #[arg(long)]
    pub register: bool,
}
