use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, VecDeque};
use std::io::BufReader;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::node::{Node, NodeId, Outgoing};
use super::wire::{read_frame, write_frame};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    #[default]
    Bus,
    Tcp,
}

impl TransportKind {
    pub fn build(self) -> Box<dyn Transport> {
        match self {
            TransportKind::Bus => Box::new(InProcessBus),
            TransportKind::Tcp => Box::new(TcpLoopback::default()),
        }
    }
}

impl std::str::FromStr for TransportKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bus" => Ok(Self::Bus),
            "tcp" => Ok(Self::Tcp),
            other => Err(Error::InvalidConfig(format!("unknown transport {other:?}"))),
        }
    }
}

/// Moves frames between nodes until every node reports done.
pub trait Transport {
    fn name(&self) -> &'static str;

    /// Runs the nodes to completion and hands them back.
    fn execute(&self, nodes: Vec<Node>, epoch: Instant) -> Result<Vec<Node>>;
}

/// Single-threaded FIFO queue. Frames are still encoded and decoded so
/// both transports exercise the same bytes.
#[derive(Clone, Copy, Debug, Default)]
pub struct InProcessBus;

impl Transport for InProcessBus {
    fn name(&self) -> &'static str {
        "bus"
    }

    fn execute(&self, mut nodes: Vec<Node>, epoch: Instant) -> Result<Vec<Node>> {
        let index: BTreeMap<NodeId, usize> = nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
        let mut queue: VecDeque<Outgoing> = VecDeque::new();
        for node in nodes.iter_mut() {
            node.set_epoch(epoch);
            queue.extend(node.start()?);
        }
        while let Some(out) = queue.pop_front() {
            let &i = index
                .get(&out.to)
                .ok_or_else(|| Error::TransportFailure(format!("no node {}", out.to)))?;
            let body = out
                .frame
                .get(4..)
                .ok_or_else(|| Error::TransportFailure("frame without length prefix".into()))?;
            queue.extend(nodes[i].handle(body)?);
        }
        if let Some(stuck) = nodes.iter().find(|n| !n.is_done()) {
            return Err(Error::TransportFailure(format!("node {} stalled with an empty queue", stuck.id)));
        }
        Ok(nodes)
    }
}

/// One thread and one loopback listener per node; one TCP connection per
/// ordered sender/receiver pair, which gives per-sender FIFO delivery.
#[derive(Clone, Copy, Debug)]
pub struct TcpLoopback {
    pub timeout: Duration,
}

impl Default for TcpLoopback {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(120),
        }
    }
}

const POLL: Duration = Duration::from_millis(20);

impl Transport for TcpLoopback {
    fn name(&self) -> &'static str {
        "tcp"
    }

    fn execute(&self, nodes: Vec<Node>, epoch: Instant) -> Result<Vec<Node>> {
        let tf = |e: std::io::Error| Error::TransportFailure(e.to_string());
        let mut listeners = Vec::with_capacity(nodes.len());
        let mut addrs = BTreeMap::new();
        for node in &nodes {
            let l = TcpListener::bind("127.0.0.1:0").map_err(tf)?;
            l.set_nonblocking(true).map_err(tf)?;
            addrs.insert(node.id, l.local_addr().map_err(tf)?);
            listeners.push(l);
        }
        let addrs = Arc::new(addrs);
        let abort = Arc::new(AtomicBool::new(false));
        let deadline = Instant::now() + self.timeout;

        let handles: Vec<_> = nodes
            .into_iter()
            .zip(listeners)
            .map(|(mut node, listener)| {
                let addrs = Arc::clone(&addrs);
                let abort = Arc::clone(&abort);
                thread::spawn(move || {
                    node.set_epoch(epoch);
                    let r = run_tcp_node(&mut node, listener, &addrs, &abort, deadline);
                    if r.is_err() {
                        abort.store(true, Ordering::SeqCst);
                    }
                    r.map(|_| node)
                })
            })
            .collect();

        let mut done = Vec::new();
        let mut first_err: Option<Error> = None;
        for h in handles {
            match h.join() {
                Ok(Ok(node)) => done.push(node),
                Ok(Err(e)) => {
                    // A peer's abort is a consequence; keep the root cause.
                    let is_echo = matches!(&e, Error::TransportFailure(m) if m == ABORTED);
                    if first_err.is_none() || (!is_echo && matches!(&first_err, Some(Error::TransportFailure(m)) if m == ABORTED)) {
                        first_err = Some(e);
                    }
                }
                Err(_) => {
                    first_err.get_or_insert(Error::TransportFailure("node thread panicked".into()));
                }
            }
        }
        match first_err {
            Some(e) => Err(e),
            None => Ok(done),
        }
    }
}

const ABORTED: &str = "aborted by a failing peer";

fn run_tcp_node(
    node: &mut Node,
    listener: TcpListener,
    addrs: &BTreeMap<NodeId, SocketAddr>,
    abort: &AtomicBool,
    deadline: Instant,
) -> Result<()> {
    let (tx, rx) = mpsc::channel::<Result<Vec<u8>>>();
    let stop = Arc::new(AtomicBool::new(false));
    let acceptor = {
        let stop = Arc::clone(&stop);
        thread::spawn(move || accept_loop(listener, tx, &stop))
    };
    let result = drive(node, &rx, addrs, abort, deadline);
    stop.store(true, Ordering::SeqCst);
    let _ = acceptor.join();
    result
}

fn accept_loop(listener: TcpListener, tx: mpsc::Sender<Result<Vec<u8>>>, stop: &AtomicBool) {
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let tx = tx.clone();
                thread::spawn(move || read_loop(stream, tx));
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(1)),
            Err(e) => {
                let _ = tx.send(Err(Error::TransportFailure(e.to_string())));
                return;
            }
        }
    }
}

fn read_loop(stream: TcpStream, tx: mpsc::Sender<Result<Vec<u8>>>) {
    if stream.set_nonblocking(false).is_err() {
        return;
    }
    let mut reader = BufReader::new(stream);
    loop {
        match read_frame(&mut reader) {
            Ok(Some(body)) => {
                if tx.send(Ok(body)).is_err() {
                    return;
                }
            }
            Ok(None) => return,
            Err(e) => {
                let _ = tx.send(Err(e));
                return;
            }
        }
    }
}

fn drive(
    node: &mut Node,
    rx: &mpsc::Receiver<Result<Vec<u8>>>,
    addrs: &BTreeMap<NodeId, SocketAddr>,
    abort: &AtomicBool,
    deadline: Instant,
) -> Result<()> {
    let mut peers: BTreeMap<NodeId, TcpStream> = BTreeMap::new();
    let mut deliver = |out: Vec<Outgoing>| -> Result<()> {
        for o in out {
            let stream = match peers.entry(o.to) {
                Entry::Occupied(e) => e.into_mut(),
                Entry::Vacant(v) => {
                    let addr = addrs
                        .get(&o.to)
                        .ok_or_else(|| Error::TransportFailure(format!("no node {}", o.to)))?;
                    let s = TcpStream::connect(addr).map_err(|e| Error::TransportFailure(format!("connect {addr}: {e}")))?;
                    s.set_nodelay(true).map_err(|e| Error::TransportFailure(e.to_string()))?;
                    v.insert(s)
                }
            };
            write_frame(stream, &o.frame)?;
        }
        Ok(())
    };
    deliver(node.start()?)?;
    while !node.is_done() {
        if abort.load(Ordering::SeqCst) {
            return Err(Error::TransportFailure(ABORTED.into()));
        }
        if Instant::now() > deadline {
            return Err(Error::TransportFailure(format!("node {} timed out", node.id)));
        }
        match rx.recv_timeout(POLL) {
            Ok(frame) => deliver(node.handle(&frame?)?)?,
            Err(mpsc::RecvTimeoutError::Timeout) => {}
            Err(mpsc::RecvTimeoutError::Disconnected) => {
                return Err(Error::TransportFailure(format!("node {} lost its listener", node.id)))
            }
        }
    }
    Ok(())
}
