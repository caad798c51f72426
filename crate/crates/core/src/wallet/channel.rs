//! Client-side transports to the server.

use std::io::{Read, Write};

use thiserror::Error;

use crate::codec::{read_frame, write_frame};
use crate::server::Server;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChannelError {
    #[error("no network connection")]
    Offline,
    #[error("message lost in transit")]
    Lost,
    #[error("transport error: {0}")]
    Transport(String),
}

/// Request/response link to the server. Carries encoded frames only.
pub trait ServerChannel {
    fn is_connected(&self) -> bool {
        true
    }

    fn exchange(&mut self, request: &[u8]) -> Result<Vec<u8>, ChannelError>;
}

/// Direct in-process link.
pub struct LocalChannel<'a> {
    server: &'a mut Server,
    online: bool,
}

impl<'a> LocalChannel<'a> {
    pub fn new(server: &'a mut Server) -> Self {
        Self {
            server,
            online: true,
        }
    }

    pub fn set_online(&mut self, online: bool) {
        self.online = online;
    }
}

impl ServerChannel for LocalChannel<'_> {
    fn is_connected(&self) -> bool {
        self.online
    }

    fn exchange(&mut self, request: &[u8]) -> Result<Vec<u8>, ChannelError> {
        if !self.online {
            return Err(ChannelError::Offline);
        }
        Ok(self.server.handle_frame(request))
    }
}

/// Length-prefixed frames over a byte stream, e.g. a `TcpStream`.
pub struct StreamChannel<S> {
    stream: S,
}

impl<S: Read + Write> StreamChannel<S> {
    pub fn new(stream: S) -> Self {
        Self { stream }
    }

    pub fn into_inner(self) -> S {
        self.stream
    }
}

impl<S: Read + Write> ServerChannel for StreamChannel<S> {
    fn exchange(&mut self, request: &[u8]) -> Result<Vec<u8>, ChannelError> {
        let io = |e: std::io::Error| ChannelError::Transport(e.to_string());
        write_frame(&mut self.stream, request).map_err(io)?;
        read_frame(&mut self.stream)
            .map_err(io)?
            .ok_or(ChannelError::Lost)
    }
}
