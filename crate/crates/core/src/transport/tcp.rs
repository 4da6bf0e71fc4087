//! LF-delimited line protocol over TCP, one server thread per connection.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use super::{codec, Channel, ErrorCode, Request, Response, TransportError};
use crate::server::{ModelViolation, Server};
use crate::trace::ConnId;

const POLL_INTERVAL: Duration = Duration::from_millis(10);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ServeOutcome {
    /// The stop condition fired.
    Stopped,
    /// The server's debug model flagged a violation; serving was abandoned.
    ModelViolation(ModelViolation),
}

pub struct TcpServer {
    listener: TcpListener,
    server: Arc<Server>,
}

impl TcpServer {
    pub fn bind(addr: impl ToSocketAddrs, server: Arc<Server>) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        Ok(TcpServer { listener, server })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accepts connections until `stop` returns true or the debug model
    /// reports a violation.
    pub fn serve_until(self, stop: impl Fn() -> bool) -> io::Result<ServeOutcome> {
        loop {
            if let Some(v) = self.server.model_violation() {
                return Ok(ServeOutcome::ModelViolation(v));
            }
            if stop() {
                return Ok(ServeOutcome::Stopped);
            }
            match self.listener.accept() {
                Ok((stream, _)) => {
                    stream.set_nonblocking(false)?;
                    let server = Arc::clone(&self.server);
                    thread::spawn(move || {
                        let _ = serve_connection(&server, stream);
                    });
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(POLL_INTERVAL),
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e),
            }
        }
    }

    /// Serves on a background thread until the handle is stopped.
    pub fn spawn(self) -> io::Result<TcpServerHandle> {
        let addr = self.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let join = thread::spawn(move || self.serve_until(|| flag.load(Ordering::SeqCst)));
        Ok(TcpServerHandle { addr, stop, join: Some(join) })
    }
}

pub struct TcpServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    join: Option<JoinHandle<io::Result<ServeOutcome>>>,
}

impl TcpServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stop(mut self) -> io::Result<ServeOutcome> {
        self.stop.store(true, Ordering::SeqCst);
        self.join
            .take()
            .expect("joined once")
            .join()
            .unwrap_or_else(|_| Err(io::Error::other("accept loop panicked")))
    }
}

impl Drop for TcpServerHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(j) = self.join.take() {
            let _ = j.join();
        }
    }
}

fn serve_connection(server: &Server, stream: TcpStream) -> io::Result<()> {
    let conn = server.register_conn();
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Ok(());
        }
        let response = match codec::decode_request(&line) {
            Ok(req) => server.handle(conn, &req),
            Err(e) => Response::Error { code: ErrorCode::Decode, message: e.to_string() },
        };
        writer.write_all(codec::encode_response(&response).as_bytes())?;
    }
}

#[derive(Debug)]
pub struct TcpChannel {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    conn: ConnId,
    open: bool,
}

impl TcpChannel {
    /// Connects, retrying until the server accepts. With `max_attempts` set,
    /// gives up after that many refused attempts.
    pub fn connect(addr: impl ToSocketAddrs + Clone, max_attempts: Option<u32>) -> io::Result<Self> {
        let mut attempts = 0u32;
        loop {
            match TcpStream::connect(addr.clone()) {
                Ok(stream) => return TcpChannel::from_stream(stream),
                Err(e) => {
                    attempts += 1;
                    if max_attempts.is_some_and(|cap| attempts >= cap) {
                        return Err(io::Error::new(
                            io::ErrorKind::TimedOut,
                            format!("no server after {attempts} attempts: {e}"),
                        ));
                    }
                    thread::sleep(POLL_INTERVAL);
                }
            }
        }
    }

    fn from_stream(stream: TcpStream) -> io::Result<Self> {
        stream.set_nodelay(true)?;
        let conn = stream.local_addr()?.port() as ConnId;
        Ok(TcpChannel { writer: stream.try_clone()?, reader: BufReader::new(stream), conn, open: true })
    }
}

impl Channel for TcpChannel {
    fn call(&mut self, request: &Request) -> Result<Response, TransportError> {
        if !self.open {
            return Err(TransportError::Closed);
        }
        self.writer.write_all(codec::encode_request(request).as_bytes())?;
        let mut line = String::new();
        if self.reader.read_line(&mut line)? == 0 {
            self.open = false;
            return Err(TransportError::Closed);
        }
        Ok(codec::decode_response(&line)?)
    }

    /// The local port; the server numbers connections independently.
    fn conn_id(&self) -> ConnId {
        self.conn
    }

    fn close(&mut self) {
        if self.open {
            let _ = self.writer.shutdown(std::net::Shutdown::Both);
            self.open = false;
        }
    }
}

impl Drop for TcpChannel {
    fn drop(&mut self) {
        self.close();
    }
}
