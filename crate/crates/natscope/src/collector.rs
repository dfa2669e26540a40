//! NetFlow v9 UDP listener feeding decoded records into a bounded channel.

use std::io;
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, SyncSender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use natscope_core::flowdata::FlowRecord;
use natscope_core::netflow::TemplateCache;

/// How often a blocked receive wakes up to check the stop flag.
pub const POLL_INTERVAL: Duration = Duration::from_millis(100);
pub const DEFAULT_CHANNEL_CAPACITY: usize = 4096;
const MAX_DATAGRAM: usize = 65_535;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CollectorStats {
    pub datagrams: u64,
    pub records: u64,
    pub malformed: u64,
}

pub struct Collector {
    socket: UdpSocket,
    cache: TemplateCache,
    stats: CollectorStats,
}

impl Collector {
    pub fn bind(addr: impl ToSocketAddrs) -> io::Result<Self> {
        let socket = UdpSocket::bind(addr)?;
        socket.set_read_timeout(Some(POLL_INTERVAL))?;
        Ok(Self { socket, cache: TemplateCache::new(), stats: CollectorStats::default() })
    }

    pub fn with_cache(mut self, cache: TemplateCache) -> Self {
        self.cache = cache;
        self
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.socket.local_addr()
    }

    pub fn stats(&self) -> CollectorStats {
        self.stats
    }

    /// Receives until `stop` is set or the receiving end hangs up. Sending
    /// blocks while the channel is full.
    pub fn run(&mut self, sink: &SyncSender<FlowRecord>, stop: &AtomicBool) -> io::Result<CollectorStats> {
        let mut buf = vec![0u8; MAX_DATAGRAM];
        while !stop.load(Ordering::Relaxed) {
            let n = match self.socket.recv_from(&mut buf) {
                Ok((n, _)) => n,
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => continue,
                Err(e) => return Err(e),
            };
            self.stats.datagrams += 1;
            match self.cache.decode(&buf[..n]) {
                Ok(records) => {
                    for r in records {
                        self.stats.records += 1;
                        if sink.send(r).is_err() {
                            return Ok(self.stats);
                        }
                    }
                }
                Err(e) => {
                    self.stats.malformed += 1;
                    log::warn!("dropping malformed datagram: {e}");
                }
            }
        }
        Ok(self.stats)
    }
}

/// A collector running on its own thread.
pub struct CollectorHandle {
    stop: Arc<AtomicBool>,
    thread: JoinHandle<io::Result<CollectorStats>>,
    local_addr: SocketAddr,
}

impl CollectorHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn stop_flag(&self) -> Arc<AtomicBool> {
        Arc::clone(&self.stop)
    }

    /// Signals the listener and waits for it; returns within about one
    /// poll interval unless the sink is full.
    pub fn stop(self) -> io::Result<CollectorStats> {
        self.stop.store(true, Ordering::Relaxed);
        self.join()
    }

    pub fn join(self) -> io::Result<CollectorStats> {
        self.thread
            .join()
            .unwrap_or_else(|_| Err(io::Error::other("collector thread panicked")))
    }
}

pub fn spawn(mut collector: Collector, capacity: usize) -> io::Result<(CollectorHandle, Receiver<FlowRecord>)> {
    let (tx, rx) = mpsc::sync_channel(capacity);
    let stop = Arc::new(AtomicBool::new(false));
    let local_addr = collector.local_addr()?;
    let flag = Arc::clone(&stop);
    let thread = thread::Builder::new()
        .name("netflow-collector".into())
        .spawn(move || collector.run(&tx, &flag))?;
    Ok((CollectorHandle { stop, thread, local_addr }, rx))
}
