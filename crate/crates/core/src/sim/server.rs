//! Live WebSocket stream of simulation frames.
//!
//! Every client receives the frames published after it joined; the first
//! frame it sees carries every known cell in `grid_delta` so a reloaded
//! viewer starts from a complete map. Text messages of the form
//! `{"set_goal":{"x":..,"y":..}}` or `{"toggle_region":{"x0":..,..}}` are
//! queued as [`Command`]s.

use std::collections::HashMap;
use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender, TryRecvError};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use tungstenite::{Error as WsError, Message, WebSocket};

use super::{Command, Frame, RunLog, SimError, Simulation};
use crate::world::{CellChange, CellState};

#[derive(Default)]
struct Shared {
    clients: Vec<Sender<Arc<str>>>,
    latest: Option<Frame>,
    cells: HashMap<(isize, isize), CellState>,
}

impl Shared {
    fn snapshot(&self) -> Option<Arc<str>> {
        let mut frame = self.latest.clone()?;
        let mut cells: Vec<CellChange> = self
            .cells
            .iter()
            .map(|(&(ix, iy), &state)| CellChange { ix, iy, state })
            .collect();
        cells.sort_by_key(|c| (c.iy, c.ix));
        frame.grid_delta = cells;
        serde_json::to_string(&frame).ok().map(Arc::from)
    }
}

pub struct StreamServer {
    addr: SocketAddr,
    shared: Arc<Mutex<Shared>>,
    commands: Receiver<Command>,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl StreamServer {
    /// Listens on `127.0.0.1:port`; port 0 picks a free one.
    pub fn bind(port: u16) -> Result<Self, SimError> {
        let listener = TcpListener::bind(("127.0.0.1", port)).map_err(|e| SimError::Io(e.to_string()))?;
        let addr = listener.local_addr().map_err(|e| SimError::Io(e.to_string()))?;
        let shared = Arc::new(Mutex::new(Shared::default()));
        let stop = Arc::new(AtomicBool::new(false));
        let (tx, rx) = mpsc::channel();
        let accept = {
            let shared = shared.clone();
            let stop = stop.clone();
            std::thread::spawn(move || accept_loop(listener, shared, tx, stop))
        };
        Ok(Self {
            addr,
            shared,
            commands: rx,
            stop,
            accept: Some(accept),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn client_count(&self) -> usize {
        self.shared.lock().unwrap().clients.len()
    }

    /// Sends `frame` to every connected client.
    pub fn broadcast(&self, frame: &Frame) {
        let Ok(text) = serde_json::to_string(frame) else { return };
        let text: Arc<str> = Arc::from(text);
        let mut shared = self.shared.lock().unwrap();
        for c in &frame.grid_delta {
            shared.cells.insert((c.ix, c.iy), c.state);
        }
        shared.latest = Some(frame.clone());
        shared.clients.retain(|tx| tx.send(text.clone()).is_ok());
    }

    /// Commands received since the last call, in arrival order.
    pub fn poll_commands(&self) -> Vec<Command> {
        let mut out = Vec::new();
        loop {
            match self.commands.try_recv() {
                Ok(c) => out.push(c),
                Err(TryRecvError::Empty | TryRecvError::Disconnected) => return out,
            }
        }
    }
}

impl Drop for StreamServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        self.shared.lock().unwrap().clients.clear();
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Mutex<Shared>>, commands: Sender<Command>, stop: Arc<AtomicBool>) {
    for stream in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            return;
        }
        let Ok(stream) = stream else { continue };
        let shared = shared.clone();
        let commands = commands.clone();
        std::thread::spawn(move || {
            let _ = stream.set_read_timeout(Some(Duration::from_millis(5)));
            let Ok(ws) = tungstenite::accept(stream) else { return };
            let (tx, rx) = mpsc::channel();
            {
                let mut s = shared.lock().unwrap();
                if let Some(first) = s.snapshot() {
                    let _ = tx.send(first);
                }
                s.clients.push(tx);
            }
            client_loop(ws, rx, commands);
        });
    }
}

fn client_loop(mut ws: WebSocket<TcpStream>, frames: Receiver<Arc<str>>, commands: Sender<Command>) {
    loop {
        loop {
            match frames.try_recv() {
                Ok(text) => {
                    if ws.send(Message::text(text.to_string())).is_err() {
                        return;
                    }
                }
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => {
                    let _ = ws.close(None);
                    let _ = ws.flush();
                    return;
                }
            }
        }
        match ws.read() {
            Ok(Message::Text(text)) => {
                if let Some(c) = parse_command(&text) {
                    if commands.send(c).is_err() {
                        return;
                    }
                }
            }
            Ok(Message::Close(_)) => return,
            Ok(_) => {}
            Err(WsError::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(_) => return,
        }
    }
}

/// Parses a viewer command; anything else is ignored.
pub fn parse_command(text: &str) -> Option<Command> {
    serde_json::from_str(text).ok()
}

/// Runs `sim` to its end, publishing a frame every frame period and
/// injecting received commands. With `realtime` the loop is paced to
/// simulated time.
pub fn run_served(mut sim: Simulation<'_>, server: &StreamServer, realtime: bool) -> Result<RunLog, SimError> {
    let every = sim.frame_every();
    let period = Duration::from_secs_f64(sim.dt() * every as f64);
    let mut next = Instant::now();
    while !sim.finished() {
        for c in server.poll_commands() {
            sim.inject(c);
        }
        sim.step()?;
        if sim.epoch % every == 0 {
            server.broadcast(&sim.frame());
            if realtime {
                next += period;
                let now = Instant::now();
                if next > now {
                    std::thread::sleep(next - now);
                } else {
                    next = now;
                }
            }
        }
    }
    Ok(sim.log)
}
