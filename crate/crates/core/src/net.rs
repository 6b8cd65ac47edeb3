//! Thread-based TCP plumbing shared by the memory node and the coordinator.

use std::collections::HashMap;
use std::io::{self, BufReader};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crate::protocol::{read_frame, write_message, FrameError, Message};

/// Write half of a connection; frames are written atomically.
#[derive(Clone)]
pub struct Replier(Arc<Mutex<TcpStream>>);

impl Replier {
    pub fn send(&self, msg: &Message) -> io::Result<()> {
        let mut s = self.0.lock().unwrap_or_else(|e| e.into_inner());
        write_message(&mut *s, msg)
    }
}

/// Receives every well-formed frame of a service.
pub trait Handler: Send + Sync + 'static {
    fn handle(&self, msg: Message, reply: Replier);
}

type Job = Box<dyn FnOnce() + Send>;

/// Fixed set of worker threads draining a shared job queue.
pub struct WorkerPool {
    tx: Mutex<Option<Sender<Job>>>,
    workers: Mutex<Vec<JoinHandle<()>>>,
}

impl WorkerPool {
    pub fn new(threads: usize, name: &str) -> Self {
        let (tx, rx) = mpsc::channel::<Job>();
        let rx = Arc::new(Mutex::new(rx));
        let workers = (0..threads.max(1))
            .map(|i| {
                let rx = Arc::clone(&rx);
                thread::Builder::new()
                    .name(format!("{name}-{i}"))
                    .spawn(move || loop {
                        let job = rx.lock().unwrap_or_else(|e| e.into_inner()).recv();
                        match job {
                            Ok(job) => job(),
                            Err(_) => break,
                        }
                    })
                    .expect("spawn worker")
            })
            .collect();
        Self { tx: Mutex::new(Some(tx)), workers: Mutex::new(workers) }
    }

    pub fn execute(&self, job: impl FnOnce() + Send + 'static) {
        if let Some(tx) = self.tx.lock().unwrap_or_else(|e| e.into_inner()).as_ref() {
            let _ = tx.send(Box::new(job));
        }
    }
}

impl Drop for WorkerPool {
    fn drop(&mut self) {
        self.tx.lock().unwrap_or_else(|e| e.into_inner()).take();
        for w in self.workers.lock().unwrap_or_else(|e| e.into_inner()).drain(..) {
            if w.thread().id() != thread::current().id() {
                let _ = w.join();
            }
        }
    }
}

pub fn default_workers() -> usize {
    thread::available_parallelism().map(|n| n.get()).unwrap_or(1).max(8)
}

/// A running service. Dropping the handle does not stop it; call [`ServerHandle::shutdown`].
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    conns: Arc<Mutex<Vec<TcpStream>>>,
    accept: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the accept loop exits.
    pub fn wait(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_secs(1));
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        for c in self.conns.lock().unwrap_or_else(|e| e.into_inner()).drain(..) {
            let _ = c.shutdown(Shutdown::Both);
        }
    }
}

pub fn spawn_server<H: Handler>(addr: impl ToSocketAddrs, handler: Arc<H>) -> io::Result<ServerHandle> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let conns = Arc::new(Mutex::new(Vec::new()));
    let accept = {
        let stop = Arc::clone(&stop);
        let conns = Arc::clone(&conns);
        thread::Builder::new().name(format!("accept-{local}")).spawn(move || {
            for stream in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let _ = stream.set_nodelay(true);
                if let Ok(c) = stream.try_clone() {
                    let mut cs = conns.lock().unwrap_or_else(|e| e.into_inner());
                    cs.retain(|s: &TcpStream| s.peer_addr().is_ok());
                    cs.push(c);
                }
                let handler = Arc::clone(&handler);
                let _ = thread::Builder::new()
                    .name("conn".into())
                    .spawn(move || serve_connection(stream, handler));
            }
        })?
    };
    Ok(ServerHandle { addr: local, stop, conns, accept: Some(accept) })
}

fn serve_connection<H: Handler>(stream: TcpStream, handler: Arc<H>) {
    let Ok(write_half) = stream.try_clone() else { return };
    let replier = Replier(Arc::new(Mutex::new(write_half)));
    let mut reader = BufReader::new(stream);
    loop {
        match read_frame(&mut reader) {
            Ok(Some(body)) => match Message::decode(&body) {
                Ok(msg) => handler.handle(msg, replier.clone()),
                Err(e) => {
                    if replier.send(&Message::Error(e.into_message())).is_err() {
                        break;
                    }
                }
            },
            Ok(None) => {
                // The peer half-closed; let in-flight handlers reply first.
                while Arc::strong_count(&replier.0) > 1 {
                    thread::sleep(Duration::from_millis(1));
                }
                break;
            }
            Err(FrameError::Io(_)) | Err(FrameError::Oversized(_)) => break,
        }
    }
    let _ = reader.get_ref().shutdown(Shutdown::Both);
}

#[derive(Debug)]
pub enum RequestError {
    Timeout,
    Disconnected,
    DuplicateId(u64),
    Io(io::Error),
}

impl std::fmt::Display for RequestError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RequestError::Timeout => write!(f, "timed out"),
            RequestError::Disconnected => write!(f, "connection closed"),
            RequestError::DuplicateId(id) => write!(f, "query id {id} already in flight"),
            RequestError::Io(e) => write!(f, "{e}"),
        }
    }
}

type Pending = Arc<Mutex<HashMap<u64, Sender<Message>>>>;

/// One connection carrying many in-flight requests, matched by query id.
pub struct MuxClient {
    addr: String,
    writer: Mutex<TcpStream>,
    pending: Pending,
    closed: Arc<AtomicBool>,
}

impl MuxClient {
    pub fn connect(addr: &str, timeout: Duration) -> io::Result<Self> {
        let sock = addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, format!("cannot resolve {addr}")))?;
        let stream = TcpStream::connect_timeout(&sock, timeout)?;
        stream.set_nodelay(true)?;
        let pending: Pending = Arc::default();
        let closed = Arc::new(AtomicBool::new(false));
        let read_half = stream.try_clone()?;
        {
            let pending = Arc::clone(&pending);
            let closed = Arc::clone(&closed);
            thread::Builder::new().name(format!("mux-{addr}")).spawn(move || {
                let mut r = BufReader::new(read_half);
                while let Ok(Some(body)) = read_frame(&mut r) {
                    let Ok(msg) = Message::decode(&body) else { continue };
                    let tx = pending.lock().unwrap_or_else(|e| e.into_inner()).remove(&msg.query_id());
                    if let Some(tx) = tx {
                        let _ = tx.send(msg);
                    }
                }
                closed.store(true, Ordering::SeqCst);
                pending.lock().unwrap_or_else(|e| e.into_inner()).clear();
            })?;
        }
        Ok(Self { addr: addr.to_string(), writer: Mutex::new(stream), pending, closed })
    }

    pub fn addr(&self) -> &str {
        &self.addr
    }

    /// Sends `msg` and returns a receiver for the reply carrying the same query id.
    pub fn submit(&self, msg: &Message) -> Result<Receiver<Message>, RequestError> {
        if self.closed.load(Ordering::SeqCst) {
            return Err(RequestError::Disconnected);
        }
        let id = msg.query_id();
        let (tx, rx) = mpsc::channel();
        {
            let mut p = self.pending.lock().unwrap_or_else(|e| e.into_inner());
            if p.contains_key(&id) {
                return Err(RequestError::DuplicateId(id));
            }
            p.insert(id, tx);
        }
        let sent = {
            let mut w = self.writer.lock().unwrap_or_else(|e| e.into_inner());
            write_message(&mut *w, msg)
        };
        if let Err(e) = sent {
            self.pending.lock().unwrap_or_else(|e| e.into_inner()).remove(&id);
            return Err(RequestError::Io(e));
        }
        Ok(rx)
    }

    pub fn wait(&self, query_id: u64, rx: &Receiver<Message>, timeout: Duration) -> Result<Message, RequestError> {
        match rx.recv_timeout(timeout) {
            Ok(m) => Ok(m),
            Err(RecvTimeoutError::Timeout) => {
                self.pending.lock().unwrap_or_else(|e| e.into_inner()).remove(&query_id);
                Err(RequestError::Timeout)
            }
            Err(RecvTimeoutError::Disconnected) => Err(RequestError::Disconnected),
        }
    }

    pub fn request(&self, msg: &Message, timeout: Duration) -> Result<Message, RequestError> {
        let rx = self.submit(msg)?;
        self.wait(msg.query_id(), &rx, timeout)
    }
}

impl Drop for MuxClient {
    fn drop(&mut self) {
        let _ = self.writer.get_mut().map(|s| s.shutdown(Shutdown::Both));
    }
}
