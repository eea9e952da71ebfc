//! Live ICMP echo probing over IPv4.
//!
//! A raw socket is preferred; when the process lacks `CAP_NET_RAW` the Linux
//! unprivileged "ping socket" (`SOCK_DGRAM` + `IPPROTO_ICMP`) is tried before
//! giving up with [`ProbeError::PermissionDenied`].

use std::io::{ErrorKind, Read};
use std::net::{Ipv4Addr, SocketAddrV4};
use std::sync::atomic::{AtomicU16, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use socket2::{Domain, Protocol, SockAddr, Socket, Type};

use super::{aggregate_replies, DelaySample, InCloudReading, ProbeBackend, PINGS_PER_MEASUREMENT, PING_PAYLOAD_BYTES};
use crate::catalog::Landmark;
use crate::error::ProbeError;

const ICMP_ECHO_REQUEST: u8 = 8;
const ICMP_ECHO_REPLY: u8 = 0;
const ICMP_HEADER_LEN: usize = 8;

#[derive(Debug, Clone)]
pub struct IcmpConfig {
    pub pings: u32,
    pub payload_bytes: usize,
    pub timeout: Duration,
    /// Pause between echo requests of the same measurement.
    pub interval: Duration,
}

impl Default for IcmpConfig {
    fn default() -> Self {
        IcmpConfig {
            pings: PINGS_PER_MEASUREMENT,
            payload_bytes: PING_PAYLOAD_BYTES,
            timeout: Duration::from_secs(2),
            interval: Duration::from_millis(0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SocketKind {
    Raw,
    Datagram,
}

pub struct IcmpBackend {
    config: IcmpConfig,
    open_lock: Mutex<()>,
    next_ident: AtomicU16,
    epoch: Instant,
}

impl IcmpBackend {
    pub fn new(config: IcmpConfig) -> Self {
        IcmpBackend {
            config,
            open_lock: Mutex::new(()),
            next_ident: AtomicU16::new(std::process::id() as u16),
            epoch: Instant::now(),
        }
    }

    /// Opens a socket once to surface privilege problems before an audit starts.
    pub fn check_privileges(&self) -> Result<(), ProbeError> {
        self.open().map(|_| ())
    }

    fn open(&self) -> Result<(Socket, SocketKind), ProbeError> {
        let _guard = self.open_lock.lock().expect("socket lock poisoned");
        let raw_err = match Socket::new(Domain::IPV4, Type::RAW, Some(Protocol::ICMPV4)) {
            Ok(s) => return Ok((s, SocketKind::Raw)),
            Err(e) => e,
        };
        match Socket::new(Domain::IPV4, Type::DGRAM, Some(Protocol::ICMPV4)) {
            Ok(s) => Ok((s, SocketKind::Datagram)),
            Err(e) if is_permission(&raw_err) || is_permission(&e) => {
                Err(ProbeError::PermissionDenied(format!("raw: {raw_err}; datagram: {e}")))
            }
            Err(e) => Err(ProbeError::Io(e.to_string())),
        }
    }

    /// Sends `config.pings` echo requests and returns each reply's RTT in ms.
    pub fn ping(&self, addr: Ipv4Addr) -> Result<Vec<f64>, ProbeError> {
        let (socket, kind) = self.open()?;
        let ident = self.next_ident.fetch_add(1, Ordering::Relaxed);
        let dest = SockAddr::from(SocketAddrV4::new(addr, 0));
        let mut rtts = Vec::new();
        for seq in 0..self.config.pings as u16 {
            if seq > 0 && !self.config.interval.is_zero() {
                std::thread::sleep(self.config.interval);
            }
            let packet = echo_request(ident, seq, self.config.payload_bytes);
            let sent = Instant::now();
            socket.send_to(&packet, &dest).map_err(|e| ProbeError::Io(e.to_string()))?;
            if let Some(rtt) = self.await_reply(&socket, kind, addr, ident, seq, sent)? {
                rtts.push(rtt);
            }
        }
        Ok(rtts)
    }

    fn await_reply(
        &self,
        socket: &Socket,
        kind: SocketKind,
        addr: Ipv4Addr,
        ident: u16,
        seq: u16,
        sent: Instant,
    ) -> Result<Option<f64>, ProbeError> {
        let deadline = sent + self.config.timeout;
        let mut buf = [0u8; 1500];
        loop {
            let now = Instant::now();
            if now >= deadline {
                return Ok(None);
            }
            socket
                .set_read_timeout(Some(deadline - now))
                .map_err(|e| ProbeError::Io(e.to_string()))?;
            let n = match (&*socket).read(&mut buf) {
                Ok(n) => n,
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => return Ok(None),
                Err(e) if e.kind() == ErrorKind::Interrupted => continue,
                Err(e) => return Err(ProbeError::Io(e.to_string())),
            };
            let matched = match kind {
                SocketKind::Raw => parse_raw_reply(&buf[..n])
                    .filter(|r| r.source == addr && r.ident == ident && r.seq == seq)
                    .is_some(),
                // The kernel rewrites the identifier and demultiplexes for us.
                SocketKind::Datagram => parse_icmp_reply(&buf[..n]).filter(|r| r.seq == seq).is_some(),
            };
            if matched {
                return Ok(Some(sent.elapsed().as_secs_f64() * 1e3));
            }
        }
    }
}

impl Default for IcmpBackend {
    fn default() -> Self {
        Self::new(IcmpConfig::default())
    }
}

impl ProbeBackend for IcmpBackend {
    fn name(&self) -> &'static str {
        "icmp"
    }

    fn measure(&self, target: &Landmark, _query_index: u64) -> Result<DelaySample, ProbeError> {
        let addr = target.address.ok_or_else(|| ProbeError::NoAddress(target.id.clone()))?;
        let timestamp_ms = self.epoch.elapsed().as_secs_f64() * 1e3;
        let replies = self.ping(addr)?;
        let rtt_ms = aggregate_replies(&replies).ok_or_else(|| ProbeError::Timeout {
            target: target.id.clone(),
            attempts: self.config.pings,
        })?;
        Ok(DelaySample {
            landmark_id: target.id.clone(),
            rtt_ms,
            attempts: self.config.pings,
            timestamp_ms,
        })
    }

    fn measure_in_cloud(&self, proxy: Option<Ipv4Addr>, _query_index: u64) -> Result<InCloudReading, ProbeError> {
        let loopback = self.ping(Ipv4Addr::LOCALHOST)?;
        let loopback_rtt_ms = aggregate_replies(&loopback).ok_or_else(|| ProbeError::Timeout {
            target: "loopback".into(),
            attempts: self.config.pings,
        })?;
        let (proxy_rtt_ms, proxy_error) = match proxy {
            None => (None, None),
            Some(addr) => match self.ping(addr).map(|r| aggregate_replies(&r)) {
                Ok(Some(v)) => (Some(v), None),
                Ok(None) => (None, Some(format!("proxy {addr} did not answer"))),
                Err(e) => (None, Some(format!("proxy {addr}: {e}"))),
            },
        };
        if let Some(w) = &proxy_error {
            log::warn!("{w}");
        }
        Ok(InCloudReading {
            loopback_rtt_ms,
            proxy_rtt_ms,
            proxy_error,
        })
    }
}

fn is_permission(e: &std::io::Error) -> bool {
    e.kind() == ErrorKind::PermissionDenied || matches!(e.raw_os_error(), Some(1) | Some(13))
}

/// Internet checksum (RFC 1071).
pub fn checksum(data: &[u8]) -> u16 {
    let mut sum: u32 = 0;
    for chunk in data.chunks(2) {
        let word = match *chunk {
            [hi, lo] => u16::from_be_bytes([hi, lo]),
            [hi] => u16::from_be_bytes([hi, 0]),
            _ => unreachable!(),
        };
        sum += u32::from(word);
    }
    while sum >> 16 != 0 {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

/// Echo request with a deterministic payload pattern.
pub fn echo_request(ident: u16, seq: u16, payload_bytes: usize) -> Vec<u8> {
    let mut packet = vec![0u8; ICMP_HEADER_LEN + payload_bytes];
    packet[0] = ICMP_ECHO_REQUEST;
    packet[4..6].copy_from_slice(&ident.to_be_bytes());
    packet[6..8].copy_from_slice(&seq.to_be_bytes());
    for (i, b) in packet[ICMP_HEADER_LEN..].iter_mut().enumerate() {
        *b = (i % 256) as u8;
    }
    let sum = checksum(&packet);
    packet[2..4].copy_from_slice(&sum.to_be_bytes());
    packet
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EchoReply {
    pub source: Ipv4Addr,
    pub ident: u16,
    pub seq: u16,
}

/// Parses an ICMP echo reply without IP header.
pub fn parse_icmp_reply(icmp: &[u8]) -> Option<EchoReply> {
    if icmp.len() < ICMP_HEADER_LEN || icmp[0] != ICMP_ECHO_REPLY || icmp[1] != 0 {
        return None;
    }
    Some(EchoReply {
        source: Ipv4Addr::UNSPECIFIED,
        ident: u16::from_be_bytes([icmp[4], icmp[5]]),
        seq: u16::from_be_bytes([icmp[6], icmp[7]]),
    })
}

/// Parses an IPv4 datagram carrying an ICMP echo reply, as read from a raw socket.
pub fn parse_raw_reply(datagram: &[u8]) -> Option<EchoReply> {
    if datagram.len() < 20 || datagram[0] >> 4 != 4 || datagram[9] != 1 {
        return None;
    }
    let header_len = usize::from(datagram[0] & 0x0f) * 4;
    let source = Ipv4Addr::new(datagram[12], datagram[13], datagram[14], datagram[15]);
    let reply = parse_icmp_reply(datagram.get(header_len..)?)?;
    Some(EchoReply { source, ..reply })
}
