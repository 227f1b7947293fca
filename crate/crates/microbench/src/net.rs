//! Single-stream TCP throughput with a minimal line handshake.
//!
//! Client sends `EB1 <send|receive> <duration_s>\n`; the server answers
//! `OK\n` or `ERR <reason>\n`, then raw bytes flow one way. The client owns
//! the clock and closes the connection after `duration_s`.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream, ToSocketAddrs};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use envbench_core::stats::{mean, trim_warmup};
use envbench_core::{Polarity, Sample, Unit};
use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::error::{MicrobenchError, Result};

pub const PROTOCOL_TAG: &str = "EB1";
const CHUNK: usize = 128 * 1024;
const MAX_HANDSHAKE: u64 = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Client to server.
    Send,
    /// Server to client.
    Receive,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Send => "send",
            Direction::Receive => "receive",
        }
    }
}

impl FromStr for Direction {
    type Err = MicrobenchError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "send" => Ok(Direction::Send),
            "receive" => Ok(Direction::Receive),
            _ => Err(MicrobenchError::Spec(format!("unknown direction '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Handshake {
    pub direction: Direction,
    pub duration_s: f64,
}

impl Handshake {
    pub fn line(&self) -> String {
        format!("{PROTOCOL_TAG} {} {}\n", self.direction.as_str(), self.duration_s)
    }

    pub fn parse(line: &str) -> std::result::Result<Self, String> {
        let mut parts = line.split_whitespace();
        if parts.next() != Some(PROTOCOL_TAG) {
            return Err("bad protocol tag".into());
        }
        let direction = parts.next().ok_or("missing direction")?.parse::<Direction>().map_err(|e| e.to_string())?;
        let duration_s: f64 = parts.next().ok_or("missing duration")?.parse().map_err(|_| "bad duration")?;
        if parts.next().is_some() {
            return Err("trailing fields".into());
        }
        if !(duration_s.is_finite() && duration_s > 0.0) {
            return Err("duration must be positive".into());
        }
        Ok(Handshake { direction, duration_s })
    }
}

fn pattern() -> Vec<u8> {
    (0..CHUNK).map(|i| (i % 251) as u8).collect()
}

fn serve_conn(stream: TcpStream) -> io::Result<()> {
    let peer = stream.peer_addr().ok();
    stream.set_read_timeout(Some(Duration::from_secs(10)))?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut line = String::new();
    (&mut reader).take(MAX_HANDSHAKE).read_line(&mut line)?;
    let mut out = stream;
    let hs = match Handshake::parse(&line) {
        Ok(hs) => hs,
        Err(reason) => {
            debug!("rejecting {peer:?}: {reason}");
            out.write_all(format!("ERR {reason}\n").as_bytes())?;
            return out.shutdown(Shutdown::Both);
        }
    };
    out.write_all(b"OK\n")?;
    match hs.direction {
        Direction::Send => {
            out.set_read_timeout(None)?;
            let mut buf = vec![0u8; CHUNK];
            while reader.read(&mut buf)? > 0 {}
        }
        Direction::Receive => {
            let data = pattern();
            // the client closes first; a generous ceiling stops runaway sessions
            let ceiling = Instant::now() + Duration::from_secs_f64(hs.duration_s + 30.0);
            while Instant::now() < ceiling {
                if out.write_all(&data).is_err() {
                    break;
                }
            }
        }
    }
    let _ = out.shutdown(Shutdown::Both);
    Ok(())
}

/// Accept loop; returns once `stop` is set.
pub fn serve(listener: TcpListener, stop: Arc<AtomicBool>) -> Result<()> {
    let addr = listener.local_addr().map(|a| a.to_string()).unwrap_or_default();
    listener.set_nonblocking(true).map_err(|source| MicrobenchError::BindFailure { addr: addr.clone(), source })?;
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, _)) => {
                let _ = stream.set_nonblocking(false);
                std::thread::spawn(move || {
                    if let Err(e) = serve_conn(stream) {
                        debug!("session ended: {e}");
                    }
                });
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(20)),
            Err(e) => warn!("accept on {addr} failed: {e}"),
        }
    }
    Ok(())
}

pub fn bind(addr: &str) -> Result<TcpListener> {
    TcpListener::bind(addr).map_err(|source| MicrobenchError::BindFailure { addr: addr.into(), source })
}

/// Binds and serves until the process is signalled.
pub fn net_serve(addr: &str) -> Result<()> {
    serve(bind(addr)?, Arc::new(AtomicBool::new(false)))
}

/// A server on a background thread, stopped on drop.
pub struct ServerHandle {
    addr: std::net::SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<Result<()>>>,
}

impl ServerHandle {
    pub fn start(addr: &str) -> Result<Self> {
        let listener = bind(addr)?;
        let local = listener.local_addr().map_err(|source| MicrobenchError::BindFailure { addr: addr.into(), source })?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let thread = std::thread::spawn(move || serve(listener, flag));
        Ok(ServerHandle { addr: local, stop, thread: Some(thread) })
    }

    pub fn addr(&self) -> std::net::SocketAddr {
        self.addr
    }

    pub fn stop(mut self) -> Result<()> {
        self.shutdown()
    }

    fn shutdown(&mut self) -> Result<()> {
        self.stop.store(true, Ordering::Relaxed);
        match self.thread.take() {
            Some(t) => t.join().unwrap_or(Ok(())),
            None => Ok(()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        let _ = self.shutdown();
    }
}

/// Mean Mbit/s over the seconds whose end lies in `(trim_s, duration]`.
/// `bytes_per_second[i]` holds the bytes moved during second `i + 1`.
pub fn throughput_from_series(bytes_per_second: &[u64], trim_s: f64) -> Result<f64> {
    let series: Vec<(f64, f64)> =
        bytes_per_second.iter().enumerate().map(|(i, &b)| ((i + 1) as f64, b as f64 * 8.0 / 1e6)).collect();
    let kept: Vec<f64> = trim_warmup(&series, trim_s).into_iter().map(|(_, v)| v).collect();
    mean(&kept).map_err(|_| MicrobenchError::Spec(format!("no seconds remain after trimming {trim_s} s")))
}

pub fn net_throughput(target: &str, direction: Direction, duration_s: f64, trim_s: f64) -> Result<Sample> {
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(MicrobenchError::Spec("duration must be positive".into()));
    }
    if !(trim_s >= 0.0 && trim_s < duration_s) {
        return Err(MicrobenchError::Spec(format!("trim {trim_s} s must lie in [0, {duration_s})")));
    }
    let addr = target
        .to_socket_addrs()
        .map_err(|source| MicrobenchError::ConnectFailure { addr: target.into(), source })?
        .next()
        .ok_or_else(|| MicrobenchError::ConnectFailure {
            addr: target.into(),
            source: io::Error::new(io::ErrorKind::NotFound, "address resolved to nothing"),
        })?;
    let stream = TcpStream::connect_timeout(&addr, Duration::from_secs(10))
        .map_err(|source| MicrobenchError::ConnectFailure { addr: target.into(), source })?;
    let aborted = |e: io::Error| MicrobenchError::SessionAborted(e.to_string());
    let _ = stream.set_nodelay(true);
    let mut out = stream.try_clone().map_err(aborted)?;
    out.write_all(Handshake { direction, duration_s }.line().as_bytes()).map_err(aborted)?;
    let mut reader = BufReader::new(stream);
    let mut reply = String::new();
    (&mut reader).take(MAX_HANDSHAKE).read_line(&mut reply).map_err(aborted)?;
    if reply.trim_end() != "OK" {
        return Err(MicrobenchError::SessionAborted(format!("server replied '{}'", reply.trim_end())));
    }

    let buckets_len = duration_s.ceil() as usize;
    let mut buckets = vec![0u64; buckets_len];
    let mut buf = pattern();
    let t0 = Instant::now();
    let end = Duration::from_secs_f64(duration_s);
    loop {
        let now = t0.elapsed();
        if now >= end {
            break;
        }
        let n = match direction {
            Direction::Send => out.write(&buf).map_err(aborted)?,
            Direction::Receive => {
                reader.get_ref().set_read_timeout(Some((end - now).max(Duration::from_millis(1)))).map_err(aborted)?;
                match reader.read(&mut buf) {
                    Ok(0) => return Err(MicrobenchError::SessionAborted("server closed early".into())),
                    Ok(n) => n,
                    Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => 0,
                    Err(e) => return Err(aborted(e)),
                }
            }
        };
        let slot = (t0.elapsed().as_secs_f64().floor() as usize).min(buckets_len - 1);
        buckets[slot] += n as u64;
    }
    let elapsed = t0.elapsed().as_secs_f64();
    let _ = out.shutdown(Shutdown::Both);

    let value = throughput_from_series(&buckets, trim_s)?;
    let total: u64 = buckets.iter().sum();
    let series: Vec<f64> = buckets.iter().map(|&b| b as f64 * 8.0 / 1e6).collect();
    Ok(Sample::new(format!("net.{}", direction.as_str()), value, Unit::MegabitsPerS, Polarity::HigherBetter, elapsed)
        .with_bytes(total)
        .with_meta("duration_s", duration_s)
        .with_meta("trim_s", trim_s)
        .with_meta("series_mbit_per_s", series))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn handshake_round_trip() {
        let hs = Handshake { direction: Direction::Receive, duration_s: 180.0 };
        assert_eq!(hs.line(), "EB1 receive 180\n");
        assert_eq!(Handshake::parse(&hs.line()).unwrap(), hs);
        for bad in ["", "EB2 send 1", "EB1 sideways 1", "EB1 send -1", "EB1 send 1 x", "EB1 send"] {
            assert!(Handshake::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn trim_uses_only_later_seconds() {
        let series: Vec<u64> = (1..=10).map(|i| i * 1_000_000).collect();
        let v = throughput_from_series(&series, 2.0).unwrap();
        let expect = (3..=10).map(|i| i as f64 * 8.0).sum::<f64>() / 8.0;
        assert_eq!(v, expect);
        assert!(throughput_from_series(&series, 10.0).is_err());
    }

    #[test]
    fn trim_must_be_below_duration() {
        assert!(matches!(net_throughput("127.0.0.1:9", Direction::Send, 5.0, 5.0), Err(MicrobenchError::Spec(_))));
    }
}
