//! Binary message framing shared by every transport.
//!
//! Frame layout, all little-endian:
//!   u32  length of everything after this field
//!   u8   kind: 0 = rates, 1 = spikes, 2 = end
//!   u64  window_index
//!   f64  t_start (ms)
//!   f64  dt (ms)
//!   payload:
//!     rates:  u32 n_proxies, u32 n_steps, then n_proxies*n_steps f64
//!             row-major (proxy-major)
//!     spikes: u32 count, then per spike u32 train id + f64 time (ms)
//!     end:    empty

use super::{CosimError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    /// [proxy][step], flattened proxy-major.
    Rates {
        n_proxies: u32,
        n_steps: u32,
        values: Vec<f64>,
    },
    /// (train id, absolute time ms), sorted by time.
    Spikes(Vec<(u32, f64)>),
    End,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CosimMessage {
    pub window_index: u64,
    pub t_start: f64,
    pub dt: f64,
    pub payload: Payload,
}

impl CosimMessage {
    pub fn encode(&self) -> Vec<u8> {
        let mut body = Vec::new();
        let kind: u8 = match &self.payload {
            Payload::Rates { .. } => 0,
            Payload::Spikes(_) => 1,
            Payload::End => 2,
        };
        body.push(kind);
        body.extend_from_slice(&self.window_index.to_le_bytes());
        body.extend_from_slice(&self.t_start.to_le_bytes());
        body.extend_from_slice(&self.dt.to_le_bytes());
        match &self.payload {
            Payload::Rates {
                n_proxies,
                n_steps,
                values,
            } => {
                body.extend_from_slice(&n_proxies.to_le_bytes());
                body.extend_from_slice(&n_steps.to_le_bytes());
                for v in values {
                    body.extend_from_slice(&v.to_le_bytes());
                }
            }
            Payload::Spikes(spikes) => {
                body.extend_from_slice(&(spikes.len() as u32).to_le_bytes());
                for (train, t) in spikes {
                    body.extend_from_slice(&train.to_le_bytes());
                    body.extend_from_slice(&t.to_le_bytes());
                }
            }
            Payload::End => {}
        }
        let mut frame = Vec::with_capacity(4 + body.len());
        frame.extend_from_slice(&(body.len() as u32).to_le_bytes());
        frame.extend_from_slice(&body);
        frame
    }

    pub fn decode(frame: &[u8]) -> Result<CosimMessage> {
        let mut r = Cursor { buf: frame, pos: 0 };
        let len = r.u32()? as usize;
        if frame.len() != len + 4 {
            return Err(CosimError::Frame(format!(
                "frame length field {len} does not match {} payload bytes",
                frame.len() - 4
            )));
        }
        let kind = r.u8()?;
        let window_index = r.u64()?;
        let t_start = r.f64()?;
        let dt = r.f64()?;
        let payload = match kind {
            0 => {
                let n_proxies = r.u32()?;
                let n_steps = r.u32()?;
                let count = (n_proxies as usize) * (n_steps as usize);
                let mut values = Vec::with_capacity(count);
                for _ in 0..count {
                    values.push(r.f64()?);
                }
                Payload::Rates {
                    n_proxies,
                    n_steps,
                    values,
                }
            }
            1 => {
                let count = r.u32()?;
                let mut spikes = Vec::with_capacity(count as usize);
                for _ in 0..count {
                    let train = r.u32()?;
                    let t = r.f64()?;
                    spikes.push((train, t));
                }
                Payload::Spikes(spikes)
            }
            2 => Payload::End,
            other => return Err(CosimError::Frame(format!("unknown message kind {other}"))),
        };
        if r.pos != frame.len() {
            return Err(CosimError::Frame(format!(
                "{} trailing bytes after payload",
                frame.len() - r.pos
            )));
        }
        Ok(CosimMessage {
            window_index,
            t_start,
            dt,
            payload,
        })
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(CosimError::Frame("truncated frame".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
