//! Length-prefixed little-endian wire protocol.
//!
//! Every frame is `u32 frame_len` followed by `frame_len` bytes, the first of
//! which is the message type. `frame_len` does not count itself.

use std::io::{self, Read, Write};

use crate::kselect::Neighbor;

pub const MSG_QUERY: u8 = 1;
pub const MSG_RESULT: u8 = 2;
pub const MSG_CLIENT_QUERY: u8 = 3;
pub const MSG_CLIENT_RESPONSE: u8 = 4;
pub const MSG_ERROR: u8 = 255;

/// Frames above this size close the connection.
pub const MAX_FRAME_LEN: u32 = 64 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum ErrorCode {
    MalformedFrame = 1,
    UnknownMessageType = 2,
    UnknownList = 3,
    DimensionMismatch = 4,
    InvalidArgument = 5,
    NodeUnavailable = 6,
    Internal = 7,
    Corruption = 8,
}

impl ErrorCode {
    pub fn from_u32(v: u32) -> Option<Self> {
        use ErrorCode::*;
        Some(match v {
            1 => MalformedFrame,
            2 => UnknownMessageType,
            3 => UnknownList,
            4 => DimensionMismatch,
            5 => InvalidArgument,
            6 => NodeUnavailable,
            7 => Internal,
            8 => Corruption,
            _ => return None,
        })
    }
}

/// Coordinator to memory node.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryMessage {
    pub query_id: u64,
    pub k: u32,
    pub query: Vec<f32>,
    pub list_ids: Vec<u32>,
}

/// Memory node to coordinator.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultMessage {
    pub query_id: u64,
    pub entries: Vec<Neighbor>,
}

/// Client to coordinator.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientQuery {
    pub query_id: u64,
    pub k: u32,
    pub payload_requested: bool,
    pub query: Vec<f32>,
    pub list_ids: Vec<u32>,
}

/// Coordinator to client.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientResponse {
    pub query_id: u64,
    pub entries: Vec<Neighbor>,
    pub payloads: Option<Vec<Vec<u8>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMessage {
    pub query_id: u64,
    pub code: u32,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Query(QueryMessage),
    Result(ResultMessage),
    ClientQuery(ClientQuery),
    ClientResponse(ClientResponse),
    Error(ErrorMessage),
}

/// A frame body that could not be decoded.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeError {
    /// Query id if the body was long enough to carry one, else 0.
    pub query_id: u64,
    pub code: ErrorCode,
    pub detail: String,
}

impl DecodeError {
    pub fn into_message(self) -> ErrorMessage {
        ErrorMessage { query_id: self.query_id, code: self.code as u32, detail: self.detail }
    }
}

impl Message {
    pub fn query_id(&self) -> u64 {
        match self {
            Message::Query(m) => m.query_id,
            Message::Result(m) => m.query_id,
            Message::ClientQuery(m) => m.query_id,
            Message::ClientResponse(m) => m.query_id,
            Message::Error(m) => m.query_id,
        }
    }

    /// Full frame including the length prefix.
    pub fn encode(&self) -> Vec<u8> {
        let mut b = vec![0u8; 4];
        match self {
            Message::Query(m) => {
                b.push(MSG_QUERY);
                put_u64(&mut b, m.query_id);
                put_u32(&mut b, m.k);
                put_u32(&mut b, m.list_ids.len() as u32);
                put_u32(&mut b, m.query.len() as u32);
                put_f32s(&mut b, &m.query);
                m.list_ids.iter().for_each(|&l| put_u32(&mut b, l));
            }
            Message::Result(m) => {
                b.push(MSG_RESULT);
                put_u64(&mut b, m.query_id);
                put_entries(&mut b, &m.entries);
            }
            Message::ClientQuery(m) => {
                b.push(MSG_CLIENT_QUERY);
                put_u64(&mut b, m.query_id);
                put_u32(&mut b, m.k);
                put_u32(&mut b, m.list_ids.len() as u32);
                b.push(m.payload_requested as u8);
                put_u32(&mut b, m.query.len() as u32);
                put_f32s(&mut b, &m.query);
                m.list_ids.iter().for_each(|&l| put_u32(&mut b, l));
            }
            Message::ClientResponse(m) => {
                b.push(MSG_CLIENT_RESPONSE);
                put_u64(&mut b, m.query_id);
                put_entries(&mut b, &m.entries);
                match &m.payloads {
                    None => b.push(0),
                    Some(ps) => {
                        b.push(1);
                        for p in ps {
                            put_u32(&mut b, p.len() as u32);
                            b.extend_from_slice(p);
                        }
                    }
                }
            }
            Message::Error(m) => {
                b.push(MSG_ERROR);
                put_u64(&mut b, m.query_id);
                put_u32(&mut b, m.code);
                put_u32(&mut b, m.detail.len() as u32);
                b.extend_from_slice(m.detail.as_bytes());
            }
        }
        let len = (b.len() - 4) as u32;
        b[..4].copy_from_slice(&len.to_le_bytes());
        b
    }

    /// Decodes a frame body (everything after the length prefix).
    pub fn decode(body: &[u8]) -> Result<Message, DecodeError> {
        let mut c = Cursor { buf: body, pos: 0 };
        let malformed = |query_id: u64, what: &str| DecodeError {
            query_id,
            code: ErrorCode::MalformedFrame,
            detail: what.to_string(),
        };
        let ty = c.u8().ok_or_else(|| malformed(0, "empty frame"))?;
        if ![MSG_QUERY, MSG_RESULT, MSG_CLIENT_QUERY, MSG_CLIENT_RESPONSE, MSG_ERROR].contains(&ty) {
            return Err(DecodeError {
                query_id: c.u64().unwrap_or(0),
                code: ErrorCode::UnknownMessageType,
                detail: format!("unknown message type {ty}"),
            });
        }
        let query_id = c.u64().ok_or_else(|| malformed(0, "frame too short for query id"))?;
        let msg = match ty {
            MSG_QUERY => {
                let (k, nprobe, dim) = (c.u32(), c.u32(), c.u32());
                let (Some(k), Some(nprobe), Some(dim)) = (k, nprobe, dim) else {
                    return Err(malformed(query_id, "truncated query header"));
                };
                let query = c.f32s(dim as usize).ok_or_else(|| malformed(query_id, "truncated query vector"))?;
                let list_ids = c.u32s(nprobe as usize).ok_or_else(|| malformed(query_id, "truncated list ids"))?;
                Message::Query(QueryMessage { query_id, k, query, list_ids })
            }
            MSG_RESULT => {
                let entries = c.entries().ok_or_else(|| malformed(query_id, "truncated result entries"))?;
                Message::Result(ResultMessage { query_id, entries })
            }
            MSG_CLIENT_QUERY => {
                let (k, nprobe, flag, dim) = (c.u32(), c.u32(), c.u8(), c.u32());
                let (Some(k), Some(nprobe), Some(flag), Some(dim)) = (k, nprobe, flag, dim) else {
                    return Err(malformed(query_id, "truncated client query header"));
                };
                if flag > 1 {
                    return Err(malformed(query_id, "payload flag must be 0 or 1"));
                }
                let query = c.f32s(dim as usize).ok_or_else(|| malformed(query_id, "truncated query vector"))?;
                let list_ids = c.u32s(nprobe as usize).ok_or_else(|| malformed(query_id, "truncated list ids"))?;
                Message::ClientQuery(ClientQuery { query_id, k, payload_requested: flag == 1, query, list_ids })
            }
            MSG_CLIENT_RESPONSE => {
                let entries = c.entries().ok_or_else(|| malformed(query_id, "truncated response entries"))?;
                let payloads = match c.u8() {
                    Some(0) => None,
                    Some(1) => {
                        let mut ps = Vec::with_capacity(entries.len());
                        for _ in 0..entries.len() {
                            let p = c.u32().and_then(|n| c.bytes(n as usize));
                            ps.push(p.ok_or_else(|| malformed(query_id, "truncated payload"))?.to_vec());
                        }
                        Some(ps)
                    }
                    _ => return Err(malformed(query_id, "bad payload flag")),
                };
                Message::ClientResponse(ClientResponse { query_id, entries, payloads })
            }
            MSG_ERROR => {
                let (code, n) = (c.u32(), c.u32());
                let (Some(code), Some(n)) = (code, n) else {
                    return Err(malformed(query_id, "truncated error header"));
                };
                let detail = c.bytes(n as usize).ok_or_else(|| malformed(query_id, "truncated error detail"))?;
                Message::Error(ErrorMessage { query_id, code, detail: String::from_utf8_lossy(detail).into_owned() })
            }
            other => {
                return Err(DecodeError {
                    query_id,
                    code: ErrorCode::UnknownMessageType,
                    detail: format!("unknown message type {other}"),
                })
            }
        };
        if c.pos != body.len() {
            return Err(malformed(query_id, "trailing bytes after message"));
        }
        Ok(msg)
    }
}

fn put_u32(b: &mut Vec<u8>, v: u32) {
    b.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(b: &mut Vec<u8>, v: u64) {
    b.extend_from_slice(&v.to_le_bytes());
}

fn put_f32s(b: &mut Vec<u8>, vs: &[f32]) {
    for v in vs {
        b.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_entries(b: &mut Vec<u8>, entries: &[Neighbor]) {
    put_u32(b, entries.len() as u32);
    for e in entries {
        put_u64(b, e.id);
        b.extend_from_slice(&e.distance.to_le_bytes());
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn bytes(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u8(&mut self) -> Option<u8> {
        self.bytes(1).map(|b| b[0])
    }

    fn u32(&mut self) -> Option<u32> {
        self.bytes(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.bytes(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Option<Vec<f32>> {
        let raw = self.bytes(n.checked_mul(4)?)?;
        Some(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn u32s(&mut self, n: usize) -> Option<Vec<u32>> {
        let raw = self.bytes(n.checked_mul(4)?)?;
        Some(raw.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn entries(&mut self) -> Option<Vec<Neighbor>> {
        let n = self.u32()? as usize;
        let raw = self.bytes(n.checked_mul(12)?)?;
        Some(
            raw.chunks_exact(12)
                .map(|c| {
                    Neighbor::new(
                        u64::from_le_bytes(c[..8].try_into().unwrap()),
                        f32::from_le_bytes(c[8..].try_into().unwrap()),
                    )
                })
                .collect(),
        )
    }
}

#[derive(Debug)]
pub enum FrameError {
    /// Declared length above [`MAX_FRAME_LEN`]; the stream is no longer in sync.
    Oversized(u32),
    Io(io::Error),
}

impl From<io::Error> for FrameError {
    fn from(e: io::Error) -> Self {
        FrameError::Io(e)
    }
}

/// Reads one frame body. `Ok(None)` on a clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Vec<u8>>, FrameError> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(FrameError::Io(io::ErrorKind::UnexpectedEof.into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_le_bytes(len);
    if len > MAX_FRAME_LEN {
        return Err(FrameError::Oversized(len));
    }
    let mut body = vec![0u8; len as usize];
    r.read_exact(&mut body)?;
    Ok(Some(body))
}

pub fn write_message<W: Write>(w: &mut W, msg: &Message) -> io::Result<()> {
    w.write_all(&msg.encode())?;
    w.flush()
}
