//! Framed transport for the server over any byte stream, plus a loopback
//! TCP listener. Each request is handled under the server lock, so
//! concurrent clients are serialized.

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use crate::codec::{read_frame, write_frame};

use super::Server;

/// Answers request frames on `stream` until the peer closes it.
pub fn serve_connection<S: Read + Write>(server: &Mutex<Server>, mut stream: S) -> io::Result<()> {
    while let Some(frame) = read_frame(&mut stream)? {
        let reply = server
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .handle_frame(&frame);
        write_frame(&mut stream, &reply)?;
    }
    Ok(())
}

pub struct TcpEndpoint {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
}

impl TcpEndpoint {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the blocking accept
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }
}

impl Drop for TcpEndpoint {
    fn drop(&mut self) {
        if self.acceptor.is_some() {
            self.stop_now();
        }
    }
}

/// Listens on an ephemeral loopback port, one thread per connection.
pub fn spawn_tcp(server: Arc<Mutex<Server>>) -> io::Result<TcpEndpoint> {
    let listener = TcpListener::bind(("127.0.0.1", 0))?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&stop);
    let acceptor = thread::spawn(move || {
        for conn in listener.incoming() {
            if flag.load(Ordering::SeqCst) {
                break;
            }
            let Ok(conn) = conn else { continue };
            let server = Arc::clone(&server);
            thread::spawn(move || {
                let _ = serve_connection(&server, conn);
            });
        }
    });
    Ok(TcpEndpoint {
        addr,
        stop,
        acceptor: Some(acceptor),
    })
}
