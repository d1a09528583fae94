use crate::config::{ExperimentConfig, Transport};
use crate::transport::{session_id, OracleServer, SocketConnection, SocketOracle};
use semiq_core::cotp::{AccessError, GlobalSetup, Oracle, OracleAccess, OracleAnswer, OracleQuery};
use semiq_core::crypt::MasterPublicKey;
use std::io;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

pub type Session = Box<dyn OracleAccess + Send + Sync>;

struct Local(Arc<Oracle>);

impl OracleAccess for Local {
    fn query(&self, q: &OracleQuery) -> Result<OracleAnswer, AccessError> {
        Ok(self.0.answer(q))
    }
}

struct Remote {
    // dropped after the connection so the server outlives its client
    conn: Arc<SocketConnection>,
    _server: OracleServer,
}

/// The global oracle of one experiment, reachable in process or over a
/// loopback socket. Both routes answer identically.
pub struct Testbed {
    mpk: MasterPublicKey,
    oracle: Arc<Oracle>,
    remote: Option<Remote>,
    sessions: AtomicU64,
}

impl Testbed {
    pub fn new(cfg: &ExperimentConfig) -> io::Result<Self> {
        let setup = GlobalSetup::generate(&mut cfg.setup_rng());
        let mpk = setup.mpk();
        let oracle = Arc::new(setup.oracle);
        let remote = match cfg.transport {
            Transport::Inproc => None,
            Transport::Socket => {
                let server = OracleServer::bind(oracle.clone(), "127.0.0.1:0")?;
                let conn = SocketConnection::connect(server.addr())?;
                Some(Remote { conn, _server: server })
            }
        };
        Ok(Self {
            mpk,
            oracle,
            remote,
            sessions: AtomicU64::new(0),
        })
    }

    pub fn mpk(&self) -> MasterPublicKey {
        self.mpk
    }

    pub fn transport(&self) -> Transport {
        match self.remote {
            None => Transport::Inproc,
            Some(_) => Transport::Socket,
        }
    }

    /// A fresh line to the oracle for one party.
    pub fn session(&self) -> Session {
        match &self.remote {
            None => Box::new(Local(self.oracle.clone())),
            Some(r) => {
                let id = self.sessions.fetch_add(1, Ordering::Relaxed);
                Box::new(SocketOracle::new(r.conn.clone(), session_id(id)))
            }
        }
    }
}
