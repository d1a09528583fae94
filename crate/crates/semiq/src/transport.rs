use semiq_core::cotp::{AccessError, Oracle, OracleAccess, OracleAnswer, OracleQuery};
use std::collections::{HashMap, VecDeque};
use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

pub const MAX_FRAME: usize = 16 << 20;
pub const SESSION_BYTES: usize = 16;
const HEADER: usize = 4 + SESSION_BYTES;

pub type SessionId = [u8; SESSION_BYTES];

#[derive(Debug, thiserror::Error)]
pub enum FrameError {
    #[error("frame of {0} bytes exceeds the 16 MiB limit")]
    Oversized(usize),
    #[error("connection closed mid-frame")]
    Truncated,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub session: SessionId,
    pub payload: Vec<u8>,
}

/// Session ids only route frames; they never influence results.
pub fn session_id(n: u64) -> SessionId {
    let mut s = [0u8; SESSION_BYTES];
    s[8..].copy_from_slice(&n.to_be_bytes());
    s
}

/// Wire form: 4-byte big-endian payload length, session id, payload.
pub fn frame(session: &SessionId, payload: &[u8]) -> Result<Vec<u8>, FrameError> {
    if payload.len() > MAX_FRAME {
        return Err(FrameError::Oversized(payload.len()));
    }
    let mut out = Vec::with_capacity(HEADER + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(session);
    out.extend_from_slice(payload);
    Ok(out)
}

/// Parses one frame from the front of `bytes`; `None` until it is complete.
pub fn unframe(bytes: &[u8]) -> Result<Option<(Frame, usize)>, FrameError> {
    if bytes.len() < HEADER {
        return Ok(None);
    }
    let len = u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize;
    if len > MAX_FRAME {
        return Err(FrameError::Oversized(len));
    }
    if bytes.len() < HEADER + len {
        return Ok(None);
    }
    let session = bytes[4..HEADER].try_into().unwrap();
    let payload = bytes[HEADER..HEADER + len].to_vec();
    Ok(Some((Frame { session, payload }, HEADER + len)))
}

pub fn write_frame<W: Write>(w: &mut W, session: &SessionId, payload: &[u8]) -> Result<(), FrameError> {
    w.write_all(&frame(session, payload)?)?;
    w.flush()?;
    Ok(())
}

/// Reads one frame; `None` on a clean end of stream between frames.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Frame>, FrameError> {
    let mut header = [0u8; HEADER];
    let mut got = 0;
    while got < HEADER {
        match r.read(&mut header[got..])? {
            0 if got == 0 => return Ok(None),
            0 => return Err(FrameError::Truncated),
            k => got += k,
        }
    }
    let len = u32::from_be_bytes(header[..4].try_into().unwrap()) as usize;
    if len > MAX_FRAME {
        return Err(FrameError::Oversized(len));
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => FrameError::Truncated,
        _ => FrameError::Io(e),
    })?;
    Ok(Some(Frame {
        session: header[4..].try_into().unwrap(),
        payload,
    }))
}

/// Splits an interleaved byte stream into per-session payload queues.
#[derive(Debug, Default)]
pub struct Demux {
    buf: Vec<u8>,
    queues: HashMap<SessionId, VecDeque<Vec<u8>>>,
}

impl Demux {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn feed(&mut self, bytes: &[u8]) -> Result<(), FrameError> {
        self.buf.extend_from_slice(bytes);
        let mut at = 0;
        while let Some((f, used)) = unframe(&self.buf[at..])? {
            self.queues.entry(f.session).or_default().push_back(f.payload);
            at += used;
        }
        self.buf.drain(..at);
        Ok(())
    }

    pub fn pop(&mut self, session: &SessionId) -> Option<Vec<u8>> {
        self.queues.get_mut(session)?.pop_front()
    }

    pub fn pending(&self) -> usize {
        self.queues.values().map(VecDeque::len).sum()
    }
}

/// Serves one oracle over TCP. Every frame is a query, answered on the same
/// session; the oracle is stateless, so connections need no coordination.
pub struct OracleServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl OracleServer {
    pub fn bind<A: ToSocketAddrs>(oracle: Arc<Oracle>, addr: A) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let accept = std::thread::spawn(move || {
            for conn in listener.incoming() {
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(conn) = conn else { continue };
                let oracle = oracle.clone();
                std::thread::spawn(move || serve(&oracle, conn));
            }
        });
        Ok(Self {
            addr,
            stop,
            accept: Some(accept),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }
}

impl Drop for OracleServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the accept loop so it sees the flag
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

fn serve(oracle: &Oracle, mut conn: TcpStream) {
    let _ = conn.set_nodelay(true);
    while let Ok(Some(f)) = read_frame(&mut conn) {
        let answer = oracle.answer_bytes(&f.payload);
        if write_frame(&mut conn, &f.session, &answer).is_err() {
            break;
        }
    }
}

struct Link {
    stream: TcpStream,
    demux: Demux,
}

/// One TCP connection shared by any number of sessions.
pub struct SocketConnection {
    link: Mutex<Link>,
}

impl SocketConnection {
    pub fn connect<A: ToSocketAddrs>(addr: A) -> io::Result<Arc<Self>> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Arc::new(Self {
            link: Mutex::new(Link {
                stream,
                demux: Demux::new(),
            }),
        }))
    }

    /// Sends one request and waits for the reply on the same session,
    /// parking replies for other sessions in the demultiplexer.
    pub fn call(&self, session: &SessionId, payload: &[u8]) -> Result<Vec<u8>, FrameError> {
        let mut link = self.link.lock().unwrap_or_else(|p| p.into_inner());
        write_frame(&mut link.stream, session, payload)?;
        let mut chunk = vec![0u8; 64 * 1024];
        loop {
            if let Some(reply) = link.demux.pop(session) {
                return Ok(reply);
            }
            let k = link.stream.read(&mut chunk)?;
            if k == 0 {
                return Err(FrameError::Truncated);
            }
            link.demux.feed(&chunk[..k])?;
        }
    }
}

/// Remote oracle access under one session id.
pub struct SocketOracle {
    conn: Arc<SocketConnection>,
    session: SessionId,
}

impl SocketOracle {
    pub fn new(conn: Arc<SocketConnection>, session: SessionId) -> Self {
        Self { conn, session }
    }

    pub fn session(&self) -> &SessionId {
        &self.session
    }
}

impl OracleAccess for SocketOracle {
    fn query(&self, q: &OracleQuery) -> Result<OracleAnswer, AccessError> {
        let reply = self
            .conn
            .call(&self.session, &q.encode())
            .map_err(|e| AccessError::Unreachable(e.to_string()))?;
        OracleAnswer::decode(&reply).map_err(|_| AccessError::MalformedAnswer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_layout() {
        let f = frame(&session_id(7), b"abc").unwrap();
        assert_eq!(&f[..4], &[0, 0, 0, 3]);
        assert_eq!(f[4 + 15], 7);
        assert_eq!(&f[HEADER..], b"abc");
        let (back, used) = unframe(&f).unwrap().unwrap();
        assert_eq!(used, f.len());
        assert_eq!(back.payload, b"abc");
        assert!(unframe(&f[..f.len() - 1]).unwrap().is_none());
    }

    #[test]
    fn oversized_rejected() {
        let big = vec![0u8; MAX_FRAME + 1];
        assert!(matches!(frame(&session_id(0), &big), Err(FrameError::Oversized(_))));
        let mut header = ((MAX_FRAME + 1) as u32).to_be_bytes().to_vec();
        header.extend_from_slice(&session_id(0));
        assert!(matches!(unframe(&header), Err(FrameError::Oversized(_))));
        assert!(matches!(read_frame(&mut header.as_slice()), Err(FrameError::Oversized(_))));
        assert!(frame(&session_id(0), &big[..MAX_FRAME]).is_ok());
    }

    #[test]
    fn interleaved_sessions_demultiplex() {
        let (a, b) = (session_id(1), session_id(2));
        let mut stream = Vec::new();
        for i in 0..5u8 {
            stream.extend(frame(&a, &[i]).unwrap());
            stream.extend(frame(&b, &[100 + i, i]).unwrap());
        }
        let mut d = Demux::new();
        // feed in awkward pieces so frames straddle chunk boundaries
        for piece in stream.chunks(7) {
            d.feed(piece).unwrap();
        }
        assert_eq!(d.pending(), 10);
        for i in 0..5u8 {
            assert_eq!(d.pop(&b), Some(vec![100 + i, i]));
        }
        for i in 0..5u8 {
            assert_eq!(d.pop(&a), Some(vec![i]));
        }
        assert_eq!(d.pop(&a), None);
    }

    #[test]
    fn stream_io_round_trip() {
        let mut buf = Vec::new();
        write_frame(&mut buf, &session_id(3), b"hello").unwrap();
        write_frame(&mut buf, &session_id(4), b"").unwrap();
        let mut r = buf.as_slice();
        assert_eq!(read_frame(&mut r).unwrap().unwrap().payload, b"hello");
        let empty = read_frame(&mut r).unwrap().unwrap();
        assert_eq!((empty.session, empty.payload.len()), (session_id(4), 0));
        assert!(read_frame(&mut r).unwrap().is_none());
        assert!(matches!(read_frame(&mut &buf[..10]), Err(FrameError::Truncated)));
    }
}
