//! Frame transports: in-process channels and TCP sockets move the same
//! encoded bytes, so switching transports cannot change results.

use super::{CosimError, Result};
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc;

pub trait FrameTransport: Send {
    fn send(&mut self, frame: &[u8]) -> Result<()>;
    fn recv(&mut self) -> Result<Vec<u8>>;
}

/// Paired in-process endpoints.
pub struct ChannelTransport {
    tx: mpsc::Sender<Vec<u8>>,
    rx: mpsc::Receiver<Vec<u8>>,
}

/// Two connected in-process endpoints.
pub fn channel_pair() -> (ChannelTransport, ChannelTransport) {
    let (atx, brx) = mpsc::channel();
    let (btx, arx) = mpsc::channel();
    (
        ChannelTransport { tx: atx, rx: arx },
        ChannelTransport { tx: btx, rx: brx },
    )
}

impl FrameTransport for ChannelTransport {
    fn send(&mut self, frame: &[u8]) -> Result<()> {
        self.tx
            .send(frame.to_vec())
            .map_err(|_| CosimError::Transport("peer endpoint closed".into()))
    }

    fn recv(&mut self) -> Result<Vec<u8>> {
        self.rx
            .recv()
            .map_err(|_| CosimError::Transport("peer endpoint closed".into()))
    }
}

pub struct SocketTransport {
    stream: TcpStream,
}

impl SocketTransport {
    /// Listens on 127.0.0.1:port and accepts one peer.
    pub fn listen(port: u16) -> Result<SocketTransport> {
        let listener = TcpListener::bind(("127.0.0.1", port))
            .map_err(|e| CosimError::Transport(format!("bind 127.0.0.1:{port}: {e}")))?;
        let (stream, _) = listener
            .accept()
            .map_err(|e| CosimError::Transport(format!("accept: {e}")))?;
        stream.set_nodelay(true).ok();
        Ok(SocketTransport { stream })
    }

    /// Connects to 127.0.0.1:port, retrying briefly while the listener
    /// comes up.
    pub fn connect(port: u16) -> Result<SocketTransport> {
        let deadline = std::time::Instant::now() + std::time::Duration::from_secs(5);
        loop {
            match TcpStream::connect(("127.0.0.1", port)) {
                Ok(stream) => {
                    stream.set_nodelay(true).ok();
                    return Ok(SocketTransport { stream });
                }
                Err(e) => {
                    if std::time::Instant::now() >= deadline {
                        return Err(CosimError::Transport(format!(
                            "connect 127.0.0.1:{port}: {e}"
                        )));
                    }
                    std::thread::sleep(std::time::Duration::from_millis(10));
                }
            }
        }
    }
}

impl FrameTransport for SocketTransport {
    fn send(&mut self, frame: &[u8]) -> Result<()> {
        self.stream
            .write_all(frame)
            .map_err(|e| CosimError::Transport(format!("send: {e}")))
    }

    fn recv(&mut self) -> Result<Vec<u8>> {
        let mut len_bytes = [0u8; 4];
        self.stream
            .read_exact(&mut len_bytes)
            .map_err(|e| CosimError::Transport(format!("recv length: {e}")))?;
        let len = u32::from_le_bytes(len_bytes) as usize;
        let mut frame = vec![0u8; 4 + len];
        frame[..4].copy_from_slice(&len_bytes);
        self.stream
            .read_exact(&mut frame[4..])
            .map_err(|e| CosimError::Transport(format!("recv body: {e}")))?;
        Ok(frame)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_pair_moves_frames_both_ways() {
        let (mut a, mut b) = channel_pair();
        a.send(&[1, 2, 3]).unwrap();
        b.send(&[4, 5]).unwrap();
        assert_eq!(b.recv().unwrap(), vec![1, 2, 3]);
        assert_eq!(a.recv().unwrap(), vec![4, 5]);
    }

    #[test]
    fn socket_frames_round_trip() {
        let port = 47113;
        let server = std::thread::spawn(move || {
            let mut t = SocketTransport::listen(port).unwrap();
            let got = t.recv().unwrap();
            t.send(&got).unwrap();
        });
        let mut client = SocketTransport::connect(port).unwrap();
        // A well-formed frame: length prefix + body.
        let frame = super::super::CosimMessage {
            window_index: 5,
            t_start: 1.0,
            dt: 0.1,
            payload: super::super::Payload::Spikes(vec![(3, 1.05)]),
        }
        .encode();
        client.send(&frame).unwrap();
        assert_eq!(client.recv().unwrap(), frame);
        server.join().unwrap();
    }
}
