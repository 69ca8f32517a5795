use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::{info, warn};
use tungstenite::{Message, WebSocket};

use livesketch_core::engine::StateSnapshot;
use livesketch_core::headless::{run_headless, HeadlessError};
use livesketch_core::scene::load_scene;
use livesketch_core::session::{Envelope, Event, Session};
use livesketch_core::synth::{generate_scene, SceneKind, SynthParams};

/// Sketch over recorded scenes: generate synthetic scenes, replay command
/// scripts headlessly, or serve the session protocol over a websocket.
#[derive(Parser)]
#[command(name = "livesketch", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Replay a command script against a recorded scene and export CSVs
    /// (variables.csv, plots/<graph>.csv, strobes/<entity>.csv).
    Run {
        /// Scene directory (contains scene.json).
        #[arg(long)]
        scene: PathBuf,
        /// JSONL command script; each line is a protocol command plus "atFrame".
        #[arg(long)]
        script: PathBuf,
        /// Output directory for the CSV exports.
        #[arg(long)]
        export: PathBuf,
    },
    /// Render a synthetic scene with truth.csv and a demo script.jsonl.
    Gen {
        /// pendulum, projectile, cycloid, slider or rotating-point.
        #[arg(long)]
        kind: SceneKind,
        /// Output scene directory.
        #[arg(long)]
        out: PathBuf,
        /// Frames per second, (0, 1000].
        #[arg(long)]
        fps: Option<f64>,
        /// Length in seconds, (0, 600].
        #[arg(long)]
        duration: Option<f64>,
        /// Image width in pixels, 32..=4096.
        #[arg(long)]
        width: Option<u32>,
        /// Image height in pixels, 32..=4096.
        #[arg(long)]
        height: Option<u32>,
        /// Pendulum amplitude in degrees, (0, 80].
        #[arg(long)]
        theta0: Option<f64>,
        /// Pendulum / slider / rotation period in seconds.
        #[arg(long)]
        period: Option<f64>,
        /// Cycloid wheel or rotating-point radius in meters.
        #[arg(long)]
        radius: Option<f64>,
        /// Cycloid rolling distance in meters, (0, 1.2].
        #[arg(long)]
        distance: Option<f64>,
        /// Rotating-point start phase in degrees.
        #[arg(long)]
        phase: Option<f64>,
        /// Camera sway amplitude in meters, [0, 0.1].
        #[arg(long)]
        sway: Option<f64>,
        /// Per-channel pixel noise amplitude.
        #[arg(long)]
        noise: Option<u8>,
        /// Noise seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Serve the session protocol over a websocket (UTF-8 text frames, one
    /// JSON message per frame). The first client to say hello controls the
    /// session; later clients observe.
    Serve {
        /// Scene directory (contains scene.json).
        #[arg(long)]
        scene: PathBuf,
        /// Address to listen on, e.g. 127.0.0.1:8765 (port 0 picks a free one).
        #[arg(long)]
        listen: String,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Run { scene, script, export } => run(scene, script, export),
        Cmd::Gen { kind, out, fps, duration, width, height, theta0, period, radius, distance, phase, sway, noise, seed } => {
            let mut p = SynthParams::for_kind(kind);
            p.fps = fps.unwrap_or(p.fps);
            p.duration = duration.unwrap_or(p.duration);
            p.width = width.unwrap_or(p.width);
            p.height = height.unwrap_or(p.height);
            p.theta0 = theta0.unwrap_or(p.theta0);
            p.period = period.unwrap_or(p.period);
            p.radius = radius.unwrap_or(p.radius);
            p.distance = distance.unwrap_or(p.distance);
            p.phase = phase.unwrap_or(p.phase);
            p.sway = sway.unwrap_or(p.sway);
            p.noise = noise.unwrap_or(p.noise);
            p.seed = seed.unwrap_or(p.seed);
            gen(kind, &p, out)
        }
        Cmd::Serve { scene, listen } => serve(scene, &listen),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(scene: PathBuf, script: PathBuf, export: PathBuf) -> Result<()> {
    match run_headless(&scene, &script, &export) {
        Ok(out) => {
            let engine = out.session.engine();
            println!("{} frames, {} variable samples", out.session.frame_count(), engine.log().len());
            for (id, f) in engine.faults() {
                eprintln!("warning: {id} ended faulted: {}: {}", f.code, f.message);
            }
            for p in &out.written {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
        Err(HeadlessError::CommandFaults(list)) => {
            for f in &list {
                eprintln!("fault: {f}");
            }
            bail!("{} script command(s) were rejected", list.len())
        }
        Err(e) => Err(e.into()),
    }
}

fn gen(kind: SceneKind, params: &SynthParams, out: PathBuf) -> Result<()> {
    let summary = generate_scene(kind, params, &out).map_err(|e| anyhow::anyhow!("{}: {e}", e.code()))?;
    println!("wrote {} frames of {} to {}", summary.frames, summary.kind, summary.root.display());
    Ok(())
}

/// Shared server state: the one session plus every connected client's outbox.
struct Hub {
    session: Session,
    clients: Vec<(usize, Sender<String>)>,
    writer: Option<usize>,
}

impl Hub {
    fn broadcast(&mut self, events: &[Event]) {
        for e in events {
            let text = serde_json::to_string(e).expect("events serialize");
            self.clients.retain(|(_, tx)| tx.send(text.clone()).is_ok());
        }
    }
}

fn serve(scene_path: PathBuf, listen: &str) -> Result<()> {
    let scene = load_scene(&scene_path).with_context(|| format!("loading {}", scene_path.display()))?;
    let fps = scene.fps();
    let mut session = Session::recorded(scene)?;
    session.tick()?;
    let hub = Arc::new(Mutex::new(Hub { session, clients: Vec::new(), writer: None }));

    let listener = TcpListener::bind(listen).with_context(|| format!("binding {listen}"))?;
    println!("listening on {}", listener.local_addr()?);

    let player = Arc::clone(&hub);
    thread::spawn(move || loop {
        thread::sleep(Duration::from_secs_f64(1.0 / fps));
        let mut hub = player.lock().expect("hub lock");
        if hub.session.is_playing() {
            match hub.session.play_step() {
                Ok((_, events)) => hub.broadcast(&events),
                Err(e) => warn!("playback stopped: {e}"),
            }
        }
    });

    for (id, stream) in listener.incoming().enumerate() {
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                warn!("accept failed: {e}");
                continue;
            }
        };
        let hub = Arc::clone(&hub);
        thread::spawn(move || {
            if let Err(e) = client(id, stream, &hub) {
                info!("client {id} closed: {e}");
            }
            let mut h = hub.lock().expect("hub lock");
            h.clients.retain(|(c, _)| *c != id);
            if h.writer == Some(id) {
                h.writer = None;
            }
        });
    }
    Ok(())
}

fn client(id: usize, stream: TcpStream, hub: &Mutex<Hub>) -> Result<()> {
    let mut ws = tungstenite::accept(stream).context("websocket handshake")?;
    ws.get_ref().set_read_timeout(Some(Duration::from_millis(20)))?;
    info!("client {id} connected");
    let (tx, rx) = mpsc::channel();
    {
        let mut h = hub.lock().expect("hub lock");
        // bring the newcomer up to date with one full-state diff
        let full = StateSnapshot::default().diff(h.session.engine().emitted());
        let text = serde_json::to_string(&Event::State { diff: full })?;
        tx.send(text).expect("receiver alive");
        h.clients.push((id, tx.clone()));
    }
    loop {
        flush(&mut ws, &rx)?;
        match ws.read() {
            Ok(Message::Text(text)) => {
                let reply = handle_text(id, &text, hub);
                if let Some(direct) = reply {
                    ws.send(Message::text(direct))?;
                }
            }
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
            Err(e) => return Err(e.into()),
        }
    }
}

fn flush(ws: &mut WebSocket<TcpStream>, rx: &Receiver<String>) -> Result<()> {
    while let Ok(text) = rx.try_recv() {
        ws.send(Message::text(text))?;
    }
    Ok(())
}

/// Apply one incoming message. Events go to every client; a malformed
/// message or a command from an observer is answered only to its sender.
fn handle_text(id: usize, text: &str, hub: &Mutex<Hub>) -> Option<String> {
    let fault = |code: &str, message: String| {
        let e = Event::Fault { code: code.into(), message, subject_id: None };
        Some(serde_json::to_string(&e).expect("events serialize"))
    };
    let env: Envelope = match serde_json::from_str(text) {
        Ok(env) => env,
        Err(e) => return fault("MalformedMessage", e.to_string()),
    };
    let mut h = hub.lock().expect("hub lock");
    let is_hello = matches!(env.command, livesketch_core::session::Command::Hello { .. });
    match h.writer {
        Some(w) if w != id => return fault("ReadOnly", "another client controls this session".into()),
        None if is_hello => h.writer = Some(id),
        None => return fault("NotEstablished", "send hello first".into()),
        Some(_) => {}
    }
    let events = h.session.handle(env);
    h.broadcast(&events);
    None
}
