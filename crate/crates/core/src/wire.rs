//! Binary wire format shared by devices, channels and the server.
//!
//! Every message is `kind (1) | version (1) | fields...`. Integers are
//! big-endian fixed width; byte strings and lists carry a `u32` length
//! prefix. Decoding rejects unknown kinds, short bodies and trailing bytes.

use num_bigint::BigUint;
use thiserror::Error;

use crate::crypto::{AuthToken, EntryKey, PetToken};
use crate::risk::RiskScore;

pub const WIRE_VERSION: u8 = 1;

/// Bounds allocation when decoding untrusted lengths.
const MAX_FIELD_LEN: usize = 1 << 20;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("truncated message")]
    Truncated,
    #[error("{0} trailing bytes after message body")]
    TrailingBytes(usize),
    #[error("unknown message kind {0:#04x}")]
    UnknownKind(u8),
    #[error("unsupported wire version {0}")]
    BadVersion(u8),
    #[error("invalid field: {0}")]
    BadField(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UserId(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum MessageKind {
    Register = 0x01,
    RegisterOk = 0x02,
    Upload = 0x03,
    UploadAck = 0x04,
    EsrReq = 0x05,
    EsrRep = 0x06,
    TestResult = 0x07,
    StatelessEsr = 0x08,
    StatelessRep = 0x09,
    Error = 0x0F,
}

impl TryFrom<u8> for MessageKind {
    type Error = WireError;

    fn try_from(v: u8) -> Result<Self, WireError> {
        Ok(match v {
            0x01 => MessageKind::Register,
            0x02 => MessageKind::RegisterOk,
            0x03 => MessageKind::Upload,
            0x04 => MessageKind::UploadAck,
            0x05 => MessageKind::EsrReq,
            0x06 => MessageKind::EsrRep,
            0x07 => MessageKind::TestResult,
            0x08 => MessageKind::StatelessEsr,
            0x09 => MessageKind::StatelessRep,
            0x0F => MessageKind::Error,
            other => return Err(WireError::UnknownKind(other)),
        })
    }
}

/// One-byte exposure-status reply.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum EsrStatus {
    NotAtRisk = 0x00,
    AtRisk = 0x01,
    RateLimited = 0x02,
    AuthFailure = 0x03,
}

impl TryFrom<u8> for EsrStatus {
    type Error = WireError;

    fn try_from(v: u8) -> Result<Self, WireError> {
        Ok(match v {
            0x00 => EsrStatus::NotAtRisk,
            0x01 => EsrStatus::AtRisk,
            0x02 => EsrStatus::RateLimited,
            0x03 => EsrStatus::AuthFailure,
            _ => return Err(WireError::BadField("ESR status")),
        })
    }
}

/// Outcome code for uploads, test reports, stateless queries and errors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum AckStatus {
    Ok = 0x00,
    InvalidToken = 0x01,
    TokenReused = 0x02,
    UnknownId = 0x03,
    AuthFailure = 0x04,
    Malformed = 0x05,
}

impl TryFrom<u8> for AckStatus {
    type Error = WireError;

    fn try_from(v: u8) -> Result<Self, WireError> {
        Ok(match v {
            0x00 => AckStatus::Ok,
            0x01 => AckStatus::InvalidToken,
            0x02 => AckStatus::TokenReused,
            0x03 => AckStatus::UnknownId,
            0x04 => AckStatus::AuthFailure,
            0x05 => AckStatus::Malformed,
            _ => return Err(WireError::BadField("ack status")),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EsrRequest {
    pub id: UserId,
    pub ek: EntryKey,
    pub tokens: Vec<PetToken>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UploadMessage {
    pub pet: PetToken,
    pub day: u32,
    pub duration_sec: u32,
    pub token: AuthToken,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StatelessRequest {
    /// Day the authorization token is valid for.
    pub day: u32,
    pub token: AuthToken,
    pub tokens: Vec<PetToken>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    Register {
        token: AuthToken,
    },
    RegisterOk {
        id: UserId,
        ek: EntryKey,
    },
    Upload(UploadMessage),
    UploadAck {
        status: AckStatus,
    },
    EsrReq(EsrRequest),
    EsrRep {
        status: EsrStatus,
    },
    TestResult {
        id: UserId,
        ek: EntryKey,
        positive: bool,
        token: AuthToken,
    },
    StatelessEsr(StatelessRequest),
    StatelessRep {
        status: AckStatus,
        score: RiskScore,
    },
    Error {
        status: AckStatus,
    },
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::Register { .. } => MessageKind::Register,
            Message::RegisterOk { .. } => MessageKind::RegisterOk,
            Message::Upload(_) => MessageKind::Upload,
            Message::UploadAck { .. } => MessageKind::UploadAck,
            Message::EsrReq(_) => MessageKind::EsrReq,
            Message::EsrRep { .. } => MessageKind::EsrRep,
            Message::TestResult { .. } => MessageKind::TestResult,
            Message::StatelessEsr(_) => MessageKind::StatelessEsr,
            Message::StatelessRep { .. } => MessageKind::StatelessRep,
            Message::Error { .. } => MessageKind::Error,
        }
    }
}

#[derive(Default)]
pub(crate) struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }
    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }
    pub fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }
    pub fn bool(&mut self, v: bool) {
        self.u8(v as u8);
    }
    pub fn bytes(&mut self, v: &[u8]) {
        self.u32(v.len() as u32);
        self.buf.extend_from_slice(v);
    }
    pub fn raw(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }
    pub fn len(&mut self, n: usize) {
        self.u32(n as u32);
    }
    pub fn auth(&mut self, t: &AuthToken) {
        self.bytes(&t.seed);
        self.bytes(&t.sigma.to_bytes_be());
    }
    pub fn pets(&mut self, pets: &[PetToken]) {
        self.len(pets.len());
        for p in pets {
            self.bytes(p.as_bytes());
        }
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }
    pub fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let end = self.pos.checked_add(n).ok_or(WireError::Truncated)?;
        let out = self.buf.get(self.pos..end).ok_or(WireError::Truncated)?;
        self.pos = end;
        Ok(out)
    }
    pub fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }
    pub fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }
    pub fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_bits(self.u64()?))
    }
    pub fn bool(&mut self) -> Result<bool, WireError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(WireError::BadField("boolean")),
        }
    }
    pub fn len(&mut self) -> Result<usize, WireError> {
        let n = self.u32()? as usize;
        if n > MAX_FIELD_LEN {
            return Err(WireError::BadField("length prefix too large"));
        }
        Ok(n)
    }
    pub fn bytes(&mut self) -> Result<&'a [u8], WireError> {
        let n = self.len()?;
        self.take(n)
    }
    pub fn array32(&mut self, what: &'static str) -> Result<[u8; 32], WireError> {
        self.bytes()?.try_into().map_err(|_| WireError::BadField(what))
    }
    pub fn auth(&mut self) -> Result<AuthToken, WireError> {
        let seed = self.array32("token seed")?;
        let sigma = BigUint::from_bytes_be(self.bytes()?);
        Ok(AuthToken { seed, sigma })
    }
    pub fn pets(&mut self) -> Result<Vec<PetToken>, WireError> {
        let n = self.len()?;
        (0..n).map(|_| self.array32("PET").map(PetToken)).collect()
    }
    pub fn ek(&mut self) -> Result<EntryKey, WireError> {
        EntryKey::try_from_slice(self.bytes()?).map_err(|_| WireError::BadField("entry key"))
    }
    pub fn finish(self) -> Result<(), WireError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(WireError::TrailingBytes(n)),
        }
    }
}

pub fn encode(msg: &Message) -> Vec<u8> {
    let mut w = Writer::default();
    w.u8(msg.kind() as u8);
    w.u8(WIRE_VERSION);
    match msg {
        Message::Register { token } => w.auth(token),
        Message::RegisterOk { id, ek } => {
            w.u64(id.0);
            w.bytes(ek.as_bytes());
        }
        Message::Upload(u) => {
            w.bytes(u.pet.as_bytes());
            w.u32(u.day);
            w.u32(u.duration_sec);
            w.auth(&u.token);
        }
        Message::UploadAck { status } | Message::Error { status } => w.u8(*status as u8),
        Message::EsrReq(r) => {
            w.u64(r.id.0);
            w.bytes(r.ek.as_bytes());
            w.pets(&r.tokens);
        }
        Message::EsrRep { status } => w.u8(*status as u8),
        Message::TestResult {
            id,
            ek,
            positive,
            token,
        } => {
            w.u64(id.0);
            w.bytes(ek.as_bytes());
            w.bool(*positive);
            w.auth(token);
        }
        Message::StatelessEsr(r) => {
            w.u32(r.day);
            w.auth(&r.token);
            w.pets(&r.tokens);
        }
        Message::StatelessRep { status, score } => {
            w.u8(*status as u8);
            w.f64(score.0);
        }
    }
    w.buf
}

pub fn decode(bytes: &[u8]) -> Result<Message, WireError> {
    let mut r = Reader::new(bytes);
    let kind = MessageKind::try_from(r.u8()?)?;
    let version = r.u8()?;
    if version != WIRE_VERSION {
        return Err(WireError::BadVersion(version));
    }
    let msg = match kind {
        MessageKind::Register => Message::Register { token: r.auth()? },
        MessageKind::RegisterOk => Message::RegisterOk {
            id: UserId(r.u64()?),
            ek: r.ek()?,
        },
        MessageKind::Upload => Message::Upload(UploadMessage {
            pet: PetToken(r.array32("PET")?),
            day: r.u32()?,
            duration_sec: r.u32()?,
            token: r.auth()?,
        }),
        MessageKind::UploadAck => Message::UploadAck {
            status: AckStatus::try_from(r.u8()?)?,
        },
        MessageKind::Error => Message::Error {
            status: AckStatus::try_from(r.u8()?)?,
        },
        MessageKind::EsrReq => Message::EsrReq(EsrRequest {
            id: UserId(r.u64()?),
            ek: r.ek()?,
            tokens: r.pets()?,
        }),
        MessageKind::EsrRep => Message::EsrRep {
            status: EsrStatus::try_from(r.u8()?)?,
        },
        MessageKind::TestResult => Message::TestResult {
            id: UserId(r.u64()?),
            ek: r.ek()?,
            positive: r.bool()?,
            token: r.auth()?,
        },
        MessageKind::StatelessEsr => Message::StatelessEsr(StatelessRequest {
            day: r.u32()?,
            token: r.auth()?,
            tokens: r.pets()?,
        }),
        MessageKind::StatelessRep => Message::StatelessRep {
            status: AckStatus::try_from(r.u8()?)?,
            score: RiskScore(r.f64()?),
        },
    };
    r.finish()?;
    Ok(msg)
}
