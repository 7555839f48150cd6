use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use agentloop_core::agent::{run_session, AgentConfig, AgentInput, Pace, RunSummary};
use agentloop_core::analytics::{compute_stats, load_log, render_report, write_fixture, ReportFormat};
use agentloop_core::control::serve_control;
use agentloop_core::gateway::{self, Gateway, GatewayConfig};
use agentloop_core::media::{read_frame_dir, read_wav, write_png, write_wav, MediaMode, RawAudio, RgbRaster};
use agentloop_core::memory::{MemoryStore, RetrievalQuery};
use agentloop_core::model_sim::{load_script, render_tones, ModelServer, ModelServerConfig, TurnPolicy};
use agentloop_core::protocol::{replay_capture, CaptureLog, SessionConfig, OUTPUT_AUDIO_RATE};
use agentloop_core::router::{RouterConfig, TOKEN_ENV};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use tokio::sync::mpsc;

#[derive(Parser)]
#[command(name = "agentloop", version, about = "Always-on see-and-act loop: live session, tools, gateway, analytics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a live session against a model endpoint, routing tool calls to a gateway.
    Session(SessionArgs),
    /// Start a model, a gateway and a session in one process.
    Demo(DemoArgs),
    /// Re-drive a recorded capture log through the session state machine.
    Replay {
        capture: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Serve the scripted mock model over WebSocket.
    ServeModel(ModelArgs),
    /// Serve the skill gateway over HTTP.
    ServeGateway(GatewayArgs),
    /// Summarize an interaction log directory.
    Stats {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value = "table")]
        format: String,
    },
    /// Generate bundled fixtures.
    #[command(subcommand)]
    Fixtures(FixturesCommand),
    /// Inspect or fill a memory store.
    #[command(subcommand)]
    Memory(MemoryCommand),
}

#[derive(Args, Clone)]
struct MediaArgs {
    /// PCM16 WAV to stream as microphone input.
    #[arg(long)]
    audio: Option<PathBuf>,
    /// Directory of images to stream as camera frames.
    #[arg(long)]
    frames: Option<PathBuf>,
    #[arg(long)]
    audio_only: bool,
    /// Source frame rate of the --frames directory.
    #[arg(long, default_value_t = 24)]
    fps: u32,
    #[arg(long, default_value_t = 1000)]
    frame_interval_ms: u64,
    /// Typed user turn, sent after the media. Repeatable.
    #[arg(long)]
    text: Vec<String>,
    /// Feed media at capture speed instead of as fast as possible.
    #[arg(long)]
    realtime: bool,
    #[arg(long, default_value_t = 3000)]
    idle_timeout_ms: u64,
    #[arg(long, default_value = "local")]
    participant: String,
}

#[derive(Args, Clone)]
struct OutputArgs {
    /// Write the client-side frame log here.
    #[arg(long)]
    capture_out: Option<PathBuf>,
    /// Append interaction and session records to this directory.
    #[arg(long)]
    log_dir: Option<PathBuf>,
    /// Write the assistant audio that was played to this WAV.
    #[arg(long)]
    playback_out: Option<PathBuf>,
    /// Serve the control channel on this port.
    #[arg(long, num_args = 0..=1, default_missing_value = "18790")]
    control_port: Option<u16>,
}

#[derive(Args)]
struct SessionArgs {
    #[arg(long, env = "AGENTLOOP_ENDPOINT")]
    endpoint: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "http://127.0.0.1:18789")]
    gateway: String,
    #[arg(long, env = TOKEN_ENV, default_value = "")]
    token: String,
    #[arg(long, default_value_t = 120_000)]
    tool_timeout_ms: u64,
    #[command(flatten)]
    media: MediaArgs,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct DemoArgs {
    #[arg(long, default_value = "fixtures/gateway")]
    fixtures: PathBuf,
    /// Gateway state directory. A temporary one is used when omitted.
    #[arg(long)]
    state_dir: Option<PathBuf>,
    #[arg(long)]
    policy: Option<PathBuf>,
    #[command(flatten)]
    media: MediaArgs,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, default_value_t = 18788)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long)]
    script: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GatewayArgs {
    #[arg(long, default_value_t = gateway::DEFAULT_PORT)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long)]
    state_dir: PathBuf,
    #[arg(long)]
    fixtures: Option<PathBuf>,
    #[arg(long)]
    allow_net: bool,
    #[arg(long, env = TOKEN_ENV)]
    token: String,
}

#[derive(Subcommand)]
enum FixturesCommand {
    /// Write the synthetic deployment log used by `stats`.
    Generate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Render text as a tone-coded utterance WAV the mock model can hear.
    Tones {
        text: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 48_000)]
        rate: u32,
        #[arg(long, default_value_t = 2)]
        channels: u16,
        /// Silence before and after the utterance.
        #[arg(long, default_value_t = 300)]
        pad_ms: u32,
    },
    /// Write a solid-color PNG frame.
    Frame {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 320)]
        width: u32,
        #[arg(long, default_value_t = 240)]
        height: u32,
    },
    /// Write the built-in turn policy as JSON.
    Policy {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum MemoryCommand {
    /// Append entries from a JSONL file of {text, importance?, tags?, source?}.
    Import {
        file: PathBuf,
        #[arg(long, default_value = "memory.jsonl")]
        store: PathBuf,
    },
    /// Print the top-k entries for a query.
    Query {
        text: String,
        #[arg(long, default_value = "memory.jsonl")]
        store: PathBuf,
        #[arg(short, long, default_value_t = 5)]
        k: usize,
    },
}

fn load_inputs(media: &MediaArgs) -> Result<AgentInput> {
    let audio = media.audio.as_deref().map(read_wav).transpose().context("reading --audio")?;
    let frames = match &media.frames {
        Some(dir) => read_frame_dir(dir, media.fps).context("reading --frames")?,
        None => Vec::new(),
    };
    Ok(AgentInput { audio, frames, texts: media.text.clone(), ..Default::default() })
}

fn agent_config(session: SessionConfig, router: RouterConfig, media: &MediaArgs, out: &OutputArgs) -> AgentConfig {
    let mut cfg = AgentConfig::new(session, router);
    cfg.pipeline.frame_interval_ms = media.frame_interval_ms;
    cfg.pipeline.source_fps = media.fps;
    cfg.mode = if media.audio_only { MediaMode::AudioOnly } else { MediaMode::AudioAndVideo };
    cfg.pace = if media.realtime { Pace::Realtime } else { Pace::Fast };
    cfg.idle_timeout_ms = media.idle_timeout_ms;
    cfg.participant = media.participant.clone();
    cfg.log_dir = out.log_dir.clone();
    cfg
}

async fn run_with_outputs(cfg: AgentConfig, mut input: AgentInput, out: &OutputArgs) -> Result<RunSummary> {
    let control = match out.control_port {
        Some(port) => {
            let (etx, erx) = mpsc::unbounded_channel();
            let (ctx, crx) = mpsc::unbounded_channel();
            let server = serve_control(&format!("127.0.0.1:{port}"), erx, ctx).await.context("control channel")?;
            eprintln!("control channel on {}", server.url());
            input.events = Some(etx);
            input.commands = Some(crx);
            Some(server)
        }
        None => None,
    };
    let summary = run_session(cfg, input).await?;
    if let Some(s) = control {
        s.shutdown();
    }
    if let Some(path) = &out.capture_out {
        summary.capture.save(path).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &out.playback_out {
        let audio = RawAudio::mono(summary.playback.clone(), OUTPUT_AUDIO_RATE)?;
        write_wav(path, &audio)?;
    }
    for ev in &summary.timeline {
        println!("{:>7} ms  {:<14} {}", ev.at_ms, ev.event, ev.detail);
    }
    println!(
        "{} interactions, {} tool results, {} frames out / {} in",
        summary.interactions.len(),
        summary.tool_results.len(),
        summary.stats.messages_out,
        summary.stats.messages_in
    );
    Ok(summary)
}

async fn session(args: SessionArgs) -> Result<()> {
    let mut session = match &args.config {
        Some(p) => SessionConfig::load(p).map_err(anyhow::Error::msg)?,
        None => SessionConfig::default(),
    };
    if let Some(e) = args.endpoint {
        session.endpoint = e;
    }
    let router = RouterConfig {
        gateway_url: args.gateway,
        bearer_token: args.token,
        timeout_ms: args.tool_timeout_ms,
        ..RouterConfig::default()
    };
    let cfg = agent_config(session, router, &args.media, &args.out);
    run_with_outputs(cfg, load_inputs(&args.media)?, &args.out).await?;
    Ok(())
}

fn load_policy(path: Option<&Path>) -> Result<TurnPolicy> {
    Ok(match path {
        Some(p) => TurnPolicy::load(p).map_err(anyhow::Error::msg)?,
        None => TurnPolicy::default(),
    })
}

async fn demo(args: DemoArgs) -> Result<()> {
    let state_dir = match &args.state_dir {
        Some(d) => d.clone(),
        None => tempfile_dir()?,
    };
    let token = format!("demo-{}", std::process::id());
    let gw = Gateway::open(GatewayConfig {
        state_dir: state_dir.clone(),
        fixtures_dir: Some(args.fixtures.clone()),
        token: token.clone(),
        allow_net: false,
    })?;
    let gateway = gateway::serve("127.0.0.1:0", gw).await?;
    let model_cfg = ModelServerConfig { policy: Arc::new(load_policy(args.policy.as_deref())?), ..Default::default() };
    let model = ModelServer::bind("127.0.0.1:0", model_cfg).await?;
    let session = SessionConfig { endpoint: model.url(), ..SessionConfig::default() };
    let router = RouterConfig { gateway_url: gateway.url(), bearer_token: token, ..RouterConfig::default() };
    let cfg = agent_config(session, router, &args.media, &args.out);
    run_with_outputs(cfg, load_inputs(&args.media)?, &args.out).await?;
    println!("gateway state in {}", state_dir.display());
    model.shutdown();
    gateway.shutdown();
    Ok(())
}

fn tempfile_dir() -> Result<PathBuf> {
    let dir = std::env::temp_dir().join(format!("agentloop-demo-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn replay(capture: &Path, config: Option<&Path>) -> Result<bool> {
    let log = CaptureLog::load(capture).map_err(anyhow::Error::msg)?;
    let cfg = match config {
        Some(p) => SessionConfig::load(p).map_err(anyhow::Error::msg)?,
        None => SessionConfig::default(),
    };
    let report = replay_capture(&log, &cfg);
    println!(
        "{}: {} lines, final phase {:?}, {} surfaced errors",
        capture.display(),
        report.lines,
        report.final_phase,
        report.surfaced
    );
    for v in &report.violations {
        println!("  violation: {v}");
    }
    Ok(report.ok())
}

async fn serve_model(args: ModelArgs) -> Result<()> {
    let script = match &args.script {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            load_script(&text).map_err(anyhow::Error::msg)?
        }
        None => Vec::new(),
    };
    let cfg = ModelServerConfig { policy: Arc::new(load_policy(args.policy.as_deref())?), script, seed: args.seed };
    let server = ModelServer::bind(&format!("{}:{}", args.host, args.port), cfg).await?;
    eprintln!("model listening on {}", server.url());
    tokio::select! {
        _ = server.run() => {}
        _ = tokio::signal::ctrl_c() => {}
    }
    Ok(())
}

async fn serve_gateway(args: GatewayArgs) -> Result<()> {
    if args.token.is_empty() {
        bail!("a bearer token is required (--token or {TOKEN_ENV})");
    }
    let gw = Gateway::open(GatewayConfig {
        state_dir: args.state_dir,
        fixtures_dir: args.fixtures,
        token: args.token,
        allow_net: args.allow_net,
    })?;
    let server = gateway::serve(&format!("{}:{}", args.host, args.port), gw).await?;
    eprintln!("gateway listening on {}", server.url());
    tokio::select! {
        _ = server.run() => {}
        _ = tokio::signal::ctrl_c() => {}
    }
    Ok(())
}

fn stats(log: &Path, format: &str) -> Result<()> {
    let format: ReportFormat = format.parse()?;
    let loaded = load_log(log)?;
    let report = compute_stats(&loaded.interactions, &loaded.sessions, loaded.malformed);
    println!("{}", render_report(&report, format).trim_end());
    Ok(())
}

fn fixtures(cmd: FixturesCommand) -> Result<()> {
    match cmd {
        FixturesCommand::Generate { out } => {
            let log = write_fixture(&out)?;
            println!(
                "wrote {} interactions and {} sessions to {}",
                log.interactions.len(),
                log.sessions.len(),
                out.display()
            );
        }
        FixturesCommand::Tones { text, out, rate, channels, pad_ms } => {
            let pad = vec![0i16; (rate as u64 * pad_ms as u64 / 1000) as usize];
            let mono: Vec<i16> = pad.iter().chain(render_tones(&text, rate).iter()).chain(pad.iter()).copied().collect();
            let samples: Vec<i16> = mono.iter().flat_map(|&s| std::iter::repeat_n(s, channels as usize)).collect();
            write_wav(&out, &RawAudio::new(samples, rate, channels)?)?;
            println!("wrote {} ({:.2} s)", out.display(), mono.len() as f64 / rate as f64);
        }
        FixturesCommand::Frame { out, width, height } => {
            write_png(&out, &RgbRaster::solid(width, height, [200, 180, 40]))?;
            println!("wrote {}", out.display());
        }
        FixturesCommand::Policy { out } => {
            let text = serde_json::to_string_pretty(&TurnPolicy::default().specs())?;
            std::fs::write(&out, text + "\n")?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn memory(cmd: MemoryCommand) -> Result<()> {
    match cmd {
        MemoryCommand::Import { file, store } => {
            let mut s = MemoryStore::open(&store)?;
            let n = s.import(&file)?;
            println!("imported {n} entries into {} ({} total)", store.display(), s.len());
        }
        MemoryCommand::Query { text, store, k } => {
            let s = MemoryStore::open(&store)?;
            let query = RetrievalQuery::new(text, agentloop_core::epoch_ms(), k);
            for hit in s.retrieve(&query)? {
                println!("{:.4}  #{}  {}", hit.score, hit.entry.id, hit.entry.text);
            }
        }
    }
    Ok(())
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Session(a) => session(a).await,
        Command::Demo(a) => demo(a).await,
        Command::Replay { capture, config } => match replay(&capture, config.as_deref()) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::FAILURE,
            Err(e) => Err(e),
        },
        Command::ServeModel(a) => serve_model(a).await,
        Command::ServeGateway(a) => serve_gateway(a).await,
        Command::Stats { log, format } => stats(&log, &format),
        Command::Fixtures(c) => fixtures(c),
        Command::Memory(c) => memory(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
