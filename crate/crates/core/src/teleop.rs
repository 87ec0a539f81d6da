//! Websocket bridge between the simulator and a teleop console.
//!
//! One thread owns the simulator and paces it against the wall clock. Each
//! connected client gets its own thread that forwards inbound commands to the
//! simulator over a channel and writes the broadcast stream back out.
//!
//! Every websocket text frame carries one or more newline-separated JSON
//! messages. Outbound messages are [`OutboundMessage`] values tagged by
//! `type`: a `hello` on connect, then `telemetry` at the telemetry cadence,
//! `event` for each logged event, `rejected` when a guard refuses a command,
//! and `error` for input that could not be decoded. Inbound lines are either
//! a JSON [`OperatorCommand`] tagged by `cmd`, for example
//! `{"cmd":"pumps","on":true}`, or the same command in mission-script text
//! form, `pumps on`.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender, TryRecvError};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use tungstenite::{Message, WebSocket};

use crate::command::OperatorCommand;
use crate::model::{ParamSet, SimState};
use crate::sim::{mission_start, SimConfig, SimError, Simulator};
use crate::telemetry::{OutboundMessage, SCHEMA_VERSION};

pub const DEFAULT_PORT: u16 = 8765;
pub const PORT_ENV: &str = "PERCHSIM_PORT";

const CLIENT_POLL: Duration = Duration::from_millis(2);
const PACE_SLEEP: Duration = Duration::from_millis(1);
/// Most ticks simulated between two looks at the inbox.
const MAX_BATCH: usize = 200;

#[derive(Clone, Debug)]
pub struct TeleopConfig {
    pub host: String,
    /// 0 picks a free port.
    pub port: u16,
    /// Simulated seconds per wall-clock second.
    pub rate: f64,
    pub seed: u64,
    /// File receiving a copy of every outbound line.
    pub capture: Option<PathBuf>,
}

impl Default for TeleopConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: DEFAULT_PORT,
            rate: 1.0,
            seed: 0,
            capture: None,
        }
    }
}

/// Decode one inbound line: JSON first, then the script text form.
pub fn parse_inbound(line: &str) -> Result<OperatorCommand, String> {
    let line = line.trim();
    let cmd: OperatorCommand = if line.starts_with('{') {
        serde_json::from_str(line).map_err(|e| format!("malformed command `{line}`: {e}"))?
    } else {
        line.parse().map_err(|e| format!("malformed command `{line}`: {e}"))?
    };
    cmd.validate().map_err(|e| format!("invalid command `{line}`: {e}"))?;
    Ok(cmd)
}

/// A simulator plus the bookkeeping that turns its progress into outbound
/// messages. The service drives one of these; tests can drive it directly.
pub struct Session {
    pub sim: Simulator,
    events_sent: usize,
    tick: u64,
    telemetry_every: u64,
}

impl Session {
    pub fn new(params: &ParamSet, seed: u64, initial: SimState) -> Result<Self, SimError> {
        let config = SimConfig {
            seed,
            record_telemetry: false,
            ..SimConfig::default()
        };
        let sim = Simulator::new(params, config, initial)?;
        let telemetry_every = ((sim.config.telemetry_period / sim.config.dt).round() as u64).max(1);
        Ok(Self {
            sim,
            events_sent: 0,
            tick: 0,
            telemetry_every,
        })
    }

    pub fn hello(&self) -> OutboundMessage {
        OutboundMessage::Hello {
            schema_version: SCHEMA_VERSION,
            rate_hz: 1.0 / self.sim.config.telemetry_period,
        }
    }

    pub fn apply(&mut self, cmd: &OperatorCommand) -> Vec<OutboundMessage> {
        let mut out = Vec::new();
        if let Err(r) = self.sim.command(cmd) {
            out.push(OutboundMessage::Rejected {
                time: self.sim.time(),
                command: r.command.clone(),
                mode: r.mode,
                reason: r.reason.clone(),
            });
        }
        out.extend(self.new_events());
        out
    }

    pub fn step(&mut self) -> Result<Vec<OutboundMessage>, SimError> {
        self.sim.step()?;
        self.tick += 1;
        let mut out = self.new_events();
        if self.tick.is_multiple_of(self.telemetry_every) {
            out.push(OutboundMessage::Telemetry(self.sim.telemetry_record()));
        }
        Ok(out)
    }

    fn new_events(&mut self) -> Vec<OutboundMessage> {
        let new = self.sim.events[self.events_sent..].iter().cloned().map(OutboundMessage::Event).collect();
        self.events_sent = self.sim.events.len();
        new
    }
}

enum Inbound {
    Command(OperatorCommand),
    Join(Sender<String>),
}

/// Handle on a running service.
pub struct TeleopServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    sim_thread: JoinHandle<()>,
    accept_thread: JoinHandle<()>,
}

impl TeleopServer {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(self) {
        self.stop.store(true, Ordering::SeqCst);
        self.join();
    }

    /// Block until the service stops.
    pub fn join(self) {
        let _ = self.sim_thread.join();
        let _ = self.accept_thread.join();
    }
}

/// Bind the port and start the simulator from the default mission start.
pub fn serve(params: &ParamSet, cfg: TeleopConfig) -> io::Result<TeleopServer> {
    let session = Session::new(params, cfg.seed, mission_start(params)).map_err(io::Error::other)?;
    let listener = TcpListener::bind((cfg.host.as_str(), cfg.port))?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let capture = match &cfg.capture {
        Some(path) => {
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir)?;
            }
            Some(BufWriter::new(File::create(path)?))
        }
        None => None,
    };
    let stop = Arc::new(AtomicBool::new(false));
    let (tx, rx) = mpsc::channel();
    let hello = session.hello().to_json_line();

    let sim_stop = stop.clone();
    let rate = cfg.rate;
    let sim_thread = thread::spawn(move || run_sim(session, rx, rate, capture, sim_stop));
    let accept_stop = stop.clone();
    let accept_thread = thread::spawn(move || accept_loop(listener, tx, hello, accept_stop));
    Ok(TeleopServer {
        addr,
        stop,
        sim_thread,
        accept_thread,
    })
}

fn run_sim(mut session: Session, inbox: Receiver<Inbound>, rate: f64, mut capture: Option<BufWriter<File>>, stop: Arc<AtomicBool>) {
    let mut clients: Vec<Sender<String>> = Vec::new();
    let start = Instant::now();
    let t0 = session.sim.time();
    let mut broadcast = |clients: &mut Vec<Sender<String>>, msgs: Vec<OutboundMessage>| {
        for m in msgs {
            let line = m.to_json_line();
            if let Some(w) = capture.as_mut() {
                let _ = writeln!(w, "{line}");
            }
            clients.retain(|c| c.send(line.clone()).is_ok());
        }
    };
    while !stop.load(Ordering::SeqCst) {
        loop {
            match inbox.try_recv() {
                Ok(Inbound::Join(c)) => clients.push(c),
                Ok(Inbound::Command(cmd)) => {
                    let msgs = session.apply(&cmd);
                    broadcast(&mut clients, msgs);
                }
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => return,
            }
        }
        let target = t0 + rate * start.elapsed().as_secs_f64();
        let mut n = 0;
        while session.sim.time() < target && n < MAX_BATCH {
            match session.step() {
                Ok(msgs) => broadcast(&mut clients, msgs),
                Err(e) => {
                    broadcast(&mut clients, vec![OutboundMessage::Error { message: e.to_string() }]);
                    stop.store(true, Ordering::SeqCst);
                    break;
                }
            }
            n += 1;
        }
        if n < MAX_BATCH {
            thread::sleep(PACE_SLEEP);
        }
    }
    broadcast(&mut clients, Vec::new());
    if let Some(mut w) = capture {
        let _ = w.flush();
    }
}

fn accept_loop(listener: TcpListener, inbox: Sender<Inbound>, hello: String, stop: Arc<AtomicBool>) {
    let mut handlers = Vec::new();
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let inbox = inbox.clone();
                let hello = hello.clone();
                let stop = stop.clone();
                handlers.push(thread::spawn(move || {
                    let _ = handle_client(stream, inbox, hello, stop);
                }));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(10)),
            Err(_) => break,
        }
    }
    drop(inbox);
    for h in handlers {
        let _ = h.join();
    }
}

fn is_timeout(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if matches!(io.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut))
}

fn handle_client(stream: TcpStream, inbox: Sender<Inbound>, hello: String, stop: Arc<AtomicBool>) -> Result<(), tungstenite::Error> {
    stream.set_nonblocking(false)?;
    let mut ws: WebSocket<TcpStream> = tungstenite::accept(stream).map_err(|e| match e {
        tungstenite::HandshakeError::Failure(e) => e,
        tungstenite::HandshakeError::Interrupted(_) => tungstenite::Error::ConnectionClosed,
    })?;
    ws.get_mut().set_read_timeout(Some(CLIENT_POLL))?;
    ws.send(Message::text(hello))?;
    let (tx, rx) = mpsc::channel();
    if inbox.send(Inbound::Join(tx)).is_err() {
        return Ok(());
    }
    while !stop.load(Ordering::SeqCst) {
        match ws.read() {
            Ok(Message::Text(text)) => {
                for line in text.as_str().lines().filter(|l| !l.trim().is_empty()) {
                    match parse_inbound(line) {
                        Ok(cmd) => {
                            if inbox.send(Inbound::Command(cmd)).is_err() {
                                return Ok(());
                            }
                        }
                        Err(message) => {
                            ws.send(Message::text(OutboundMessage::Error { message }.to_json_line()))?;
                        }
                    }
                }
            }
            Ok(Message::Close(_)) => break,
            Ok(_) => {}
            Err(e) if is_timeout(&e) => {}
            Err(e) => return Err(e),
        }
        let mut wrote = false;
        loop {
            match rx.try_recv() {
                Ok(line) => {
                    ws.write(Message::text(line))?;
                    wrote = true;
                }
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => {
                    let _ = ws.close(None);
                    let _ = ws.flush();
                    return Ok(());
                }
            }
        }
        if wrote {
            ws.flush()?;
        }
    }
    let _ = ws.close(None);
    let _ = ws.flush();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::command::OperationMode;

    #[test]
    fn inbound_accepts_json_and_text() {
        let a = parse_inbound(r#"{"cmd":"pumps","on":true}"#).unwrap();
        let b = parse_inbound("pumps on").unwrap();
        assert_eq!(a, b);
        assert_eq!(
            parse_inbound(r#"{"cmd":"set_mode","mode":"perching"}"#).unwrap(),
            OperatorCommand::SetMode { mode: OperationMode::Perching }
        );
        assert!(parse_inbound("{\"cmd\":\"pumps\"}").is_err());
        assert!(parse_inbound("warp 9").is_err());
        assert!(parse_inbound(r#"{"cmd":"rotation_throttle","value":4.0}"#).is_err());
    }

    #[test]
    fn session_emits_telemetry_at_cadence() {
        let p = ParamSet::default();
        let mut s = Session::new(&p, 0, mission_start(&p)).unwrap();
        let mut telemetry = 0;
        for _ in 0..100 {
            telemetry += s
                .step()
                .unwrap()
                .iter()
                .filter(|m| matches!(m, OutboundMessage::Telemetry(_)))
                .count();
        }
        assert_eq!(telemetry, 5);
        let msgs = s.apply(&OperatorCommand::ToolPower { on: true });
        assert!(matches!(msgs[0], OutboundMessage::Rejected { .. }));
    }
}
