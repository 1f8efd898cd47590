use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use lify_agent::{run_agent, AgentConfig};
use lify_cli::stack::dev_certificates;
use lify_cli::{
    fleet_configs, replay_fleet, run_fleet, run_scenario, seed_demo, AnomalySpec, CliError, FleetOptions, LifyConfig,
    Profile, ScenarioOptions, ScenarioScript, SeedOptions, ServeOptions, Services, Stack, EXIT_OK, EXIT_RUNTIME,
    EXIT_USAGE,
};
use lify_mqtt::{tls, Broker, BrokerConfig};
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(name = "lify", version, about = "Vital-signs monitoring: services, device simulation and test scenarios")]
struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, short = 'c', global = true, env = "LIFY_CONFIG")]
    config: Option<PathBuf>,
    /// Log filter, e.g. `info` or `lify_gateway=debug`.
    #[arg(long, global = true, env = "LIFY_LOG", default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the services, all of them by default.
    Serve(ServeArgs),
    /// Run a fleet of simulated devices.
    Simulate(SimulateArgs),
    /// Load demo accounts and patients into a running server.
    Seed(SeedArgs),
    /// Run a scripted end-to-end scenario and report its expectations.
    Scenario(ScenarioArgs),
    /// Run only the embedded MQTT broker.
    Broker(BrokerArgs),
    /// Create a development CA and server certificate.
    Certs(CertsArgs),
    /// Run one simulated device from the `[agent]` section.
    Agent(AgentArgs),
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Comma-separated subset of gateway, alerts, notifier, api.
    #[arg(long, value_name = "LIST")]
    only: Option<String>,
    /// Start the embedded TLS broker and point the gateway at it.
    #[arg(long)]
    embedded_broker: bool,
    #[arg(long)]
    data_root: Option<PathBuf>,
    #[arg(long, value_enum)]
    profile: Option<Profile>,
    /// API listen address.
    #[arg(long)]
    listen: Option<SocketAddr>,
    #[arg(long, requires = "tls_key")]
    tls_cert: Option<PathBuf>,
    #[arg(long, requires = "tls_cert")]
    tls_key: Option<PathBuf>,
    #[arg(long)]
    dashboard_dir: Option<PathBuf>,
    #[arg(long)]
    broker_url: Option<String>,
    /// CA that signed the broker's certificate.
    #[arg(long)]
    ca: Option<PathBuf>,
    /// Embedded broker listen address.
    #[arg(long)]
    broker_listen: Option<SocketAddr>,
    /// Offer the event bus to services in other processes.
    #[arg(long)]
    bus_listen: Option<SocketAddr>,
    /// Event bus of a gateway in another process.
    #[arg(long)]
    remote_bus: Option<SocketAddr>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 1)]
    devices: usize,
    /// Defaults to the `[agent]` period.
    #[arg(long, value_parser = humantime::parse_duration)]
    period: Option<Duration>,
    #[arg(long, default_value = "60s", value_parser = humantime::parse_duration)]
    duration: Duration,
    /// Seed of the first device; defaults to the `[agent]` seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Timestamp of the first cycle in ms since the epoch; now by default.
    #[arg(long)]
    start_ts: Option<i64>,
    /// `[DEVICE:]METRIC=TARGET@START[+DURATION]`, repeatable.
    #[arg(long = "anomaly", value_name = "SPEC")]
    anomalies: Vec<AnomalySpec>,
    #[arg(long)]
    broker_url: Option<String>,
    #[arg(long)]
    ca: Option<PathBuf>,
    /// Time allowed after the last cycle to deliver buffered envelopes.
    #[arg(long, default_value = "10s", value_parser = humantime::parse_duration)]
    drain: Duration,
    /// Print the envelopes as JSON lines instead of publishing them.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Debug, Args)]
struct SeedArgs {
    #[arg(long, default_value = "http://127.0.0.1:8080")]
    api: String,
    /// CA for an HTTPS API with a private certificate.
    #[arg(long)]
    ca: Option<PathBuf>,
    #[arg(long, default_value = lify_cli::seed::DEMO_ADMIN_EMAIL)]
    admin_email: String,
    /// Password of an existing admin; a new admin gets a generated one.
    #[arg(long, env = "LIFY_ADMIN_PASSWORD", hide_env_values = true)]
    admin_password: Option<String>,
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    file: PathBuf,
    #[arg(long)]
    data_root: Option<PathBuf>,
    #[arg(long, default_value = "0s", value_parser = humantime::parse_duration)]
    drain: Duration,
}

#[derive(Debug, Args)]
struct BrokerArgs {
    #[arg(long)]
    listen: Option<SocketAddr>,
    #[arg(long, requires = "tls_key")]
    tls_cert: Option<PathBuf>,
    #[arg(long, requires = "tls_cert")]
    tls_key: Option<PathBuf>,
    /// Where to keep the generated development certificates.
    #[arg(long, default_value = "certs")]
    certs_dir: PathBuf,
    /// Serve plaintext MQTT.
    #[arg(long)]
    plaintext: bool,
}

#[derive(Debug, Args)]
struct CertsArgs {
    #[arg(default_value = "certs")]
    dir: PathBuf,
    /// Extra DNS name or IP for the server certificate, repeatable.
    #[arg(long = "san")]
    names: Vec<String>,
}

#[derive(Debug, Args)]
struct AgentArgs {
    #[arg(long)]
    device_id: Option<String>,
    #[arg(long)]
    patient_id: Option<String>,
    #[arg(long)]
    broker_url: Option<String>,
    #[arg(long)]
    ca: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = humantime::parse_duration)]
    period: Option<Duration>,
    #[arg(long)]
    cycles: Option<u64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { EXIT_OK as u8 });
        }
    };
    let filter = EnvFilter::try_new(&cli.log).unwrap_or_else(|_| EnvFilter::new("info"));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();

    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("lify: cannot start runtime: {e}");
            return ExitCode::from(EXIT_RUNTIME as u8);
        }
    };
    match runtime.block_on(run(cli)) {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            eprintln!("lify: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

async fn run(cli: Cli) -> Result<(), CliError> {
    let config = LifyConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Serve(args) => serve(config, args).await,
        Command::Simulate(args) => simulate(config, args).await,
        Command::Seed(args) => seed(args).await,
        Command::Scenario(args) => scenario(args).await,
        Command::Broker(args) => broker(config, args).await,
        Command::Certs(args) => certs(args),
        Command::Agent(args) => agent(config, args).await,
    }
}

fn print_json(value: &impl serde::Serialize) -> Result<(), CliError> {
    let line = serde_json::to_string(value).map_err(CliError::runtime)?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{line}").and_then(|_| out.flush()).map_err(CliError::runtime)
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::usage(format!("{what} {} does not exist", path.display())))
    }
}

async fn serve(mut config: LifyConfig, args: ServeArgs) -> Result<(), CliError> {
    let services = match &args.only {
        Some(list) => Services::parse_list(list)?,
        None => Services::ALL,
    };
    if let Some(root) = args.data_root {
        config.data_root = Some(root);
    }
    if let Some(p) = args.profile {
        config.profile = p;
    }
    if let Some(l) = args.listen {
        config.api.listen = l;
    }
    if args.tls_cert.is_some() {
        config.api.tls_cert = args.tls_cert;
        config.api.tls_key = args.tls_key;
    }
    if args.dashboard_dir.is_some() {
        config.api.dashboard_dir = args.dashboard_dir;
    }
    if let Some(url) = args.broker_url {
        config.gateway.broker_url = url;
    }
    if args.ca.is_some() {
        config.gateway.ca_path = args.ca;
    }
    if let Some(l) = args.broker_listen {
        config.broker.listen = l;
    }
    for path in [&config.api.tls_cert, &config.api.tls_key].into_iter().flatten() {
        require_file(path, "API TLS file")?;
    }
    if services.gateway && !args.embedded_broker {
        if let Some(ca) = &config.gateway.ca_path {
            require_file(ca, "CA file")?;
        }
    }
    let mut opts = ServeOptions::new(config, services);
    opts.embedded_broker = args.embedded_broker;
    opts.remote_bus = args.remote_bus;
    opts.bus_listen = args.bus_listen;
    let stack = Stack::start(opts).await?;
    print_json(&stack.ready)?;
    stack.run_until_interrupted().await
}

async fn simulate(config: LifyConfig, args: SimulateArgs) -> Result<(), CliError> {
    let mut base = config.agent;
    if let Some(url) = args.broker_url {
        base.broker_url = url;
    }
    if args.ca.is_some() {
        base.ca_path = args.ca;
    }
    if let Some(ca) = &base.ca_path {
        if !args.dry_run {
            require_file(ca, "CA file")?;
        }
    }
    let opts = FleetOptions {
        base: base.clone(),
        devices: args.devices,
        period: args.period.unwrap_or(Duration::from_millis(base.period_ms)),
        duration: args.duration,
        seed: args.seed.unwrap_or(base.seed),
        start_ts_ms: args.start_ts,
        anomalies: args.anomalies,
    };
    let configs = fleet_configs(&opts)?;
    if args.dry_run {
        let mut out = std::io::stdout().lock();
        for env in replay_fleet(&configs)? {
            out.write_all(&env.to_json()).and_then(|_| out.write_all(b"\n")).map_err(CliError::runtime)?;
        }
        return Ok(());
    }
    let ids: Vec<String> = configs.iter().map(|c| c.device_id.clone()).collect();
    let stats = run_fleet(configs, args.drain).await?;
    for (id, s) in ids.iter().zip(&stats) {
        print_json(&serde_json::json!({ "device_id": id, "stats": s }))?;
    }
    let undelivered: u64 = stats.iter().map(|s| s.generated.saturating_sub(s.published + s.oversized)).sum();
    if undelivered > 0 {
        return Err(CliError::runtime(format!("{undelivered} envelopes were not delivered")));
    }
    Ok(())
}

async fn seed(args: SeedArgs) -> Result<(), CliError> {
    let report = seed_demo(&SeedOptions {
        api_url: args.api,
        ca_path: args.ca,
        admin_email: args.admin_email,
        admin_password: args.admin_password,
    })
    .await?;
    print_json(&report)
}

async fn scenario(args: ScenarioArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.file)
        .map_err(|e| CliError::usage(format!("cannot read scenario {}: {e}", args.file.display())))?;
    let script = ScenarioScript::from_json(&text)?;
    let report = run_scenario(script, ScenarioOptions { data_root: args.data_root, drain: args.drain }).await?;
    print_json(&report)?;
    if report.passed() {
        Ok(())
    } else {
        let failed = report.expectations.iter().filter(|e| !e.passed).count();
        Err(CliError::runtime(format!("{failed} expectation(s) failed")))
    }
}

async fn broker(config: LifyConfig, args: BrokerArgs) -> Result<(), CliError> {
    let listen = args.listen.unwrap_or(config.broker.listen);
    let plaintext = args.plaintext || config.broker.plaintext;
    let tls = if plaintext {
        None
    } else {
        let (cert, key) = match (args.tls_cert.or(config.broker.tls_cert), args.tls_key.or(config.broker.tls_key)) {
            (Some(c), Some(k)) => (c, k),
            (None, None) => {
                let certs = dev_certificates(&args.certs_dir)?;
                (certs.server_cert, certs.server_key)
            }
            _ => return Err(CliError::usage("broker TLS certificate and key must be given together")),
        };
        require_file(&cert, "certificate")?;
        require_file(&key, "key")?;
        Some(tls::server_config(&cert, &key).map_err(CliError::usage)?)
    };
    let handle = Broker::start(BrokerConfig::new(listen, tls))
        .await
        .map_err(|e| CliError::runtime(format!("cannot listen on {listen}: {e}")))?;
    print_json(&serde_json::json!({ "broker": handle.local_addr(), "tls": !plaintext }))?;
    let _ = tokio::signal::ctrl_c().await;
    handle.shutdown().await;
    Ok(())
}

fn certs(args: CertsArgs) -> Result<(), CliError> {
    let certs = lify_mqtt::tls::DevCertificates::generate(&args.dir, &args.names)
        .map_err(|e| CliError::runtime(format!("cannot create certificates in {}: {e}", args.dir.display())))?;
    print_json(&serde_json::json!({
        "ca_cert": certs.ca_cert,
        "server_cert": certs.server_cert,
        "server_key": certs.server_key,
    }))
}

async fn agent(config: LifyConfig, args: AgentArgs) -> Result<(), CliError> {
    let mut cfg: AgentConfig = config.agent;
    cfg.apply_env();
    if let Some(v) = args.device_id {
        cfg.device_id = v;
    }
    if let Some(v) = args.patient_id {
        cfg.patient_id = v;
    }
    if let Some(v) = args.broker_url {
        cfg.broker_url = v;
    }
    if args.ca.is_some() {
        cfg.ca_path = args.ca;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(p) = args.period {
        cfg.period_ms = p.as_millis() as u64;
    }
    if args.cycles.is_some() {
        cfg.cycles = args.cycles;
    }
    if let Some(ca) = &cfg.ca_path {
        require_file(ca, "CA file")?;
    }
    let stats = run_agent(cfg).await?;
    print_json(&stats)
}
