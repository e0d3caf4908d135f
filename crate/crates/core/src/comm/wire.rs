//! Framing for the tcp transport.
//!
//! ```text
//! magic "MPLT" (0x4D504C54) | version u8 = 1 | tag u32 LE | source u32 LE |
//! element type u8 (0 = f64, 1 = f32, 2 = u8) | element count u64 LE | payload LE
//! ```

use std::io::{self, Read};

use thiserror::Error;

pub const MAGIC: u32 = 0x4D50_4C54;
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 22;
/// Upper bound on a single payload, guards allocation on corrupt headers.
pub const MAX_PAYLOAD_BYTES: u64 = 1 << 36;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum ElemType {
    F64 = 0,
    F32 = 1,
    U8 = 2,
}

impl ElemType {
    pub fn width(self) -> usize {
        match self {
            ElemType::F64 => 8,
            ElemType::F32 => 4,
            ElemType::U8 => 1,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ElemType::F64),
            1 => Some(ElemType::F32),
            2 => Some(ElemType::U8),
            _ => None,
        }
    }
}

/// A typed array carried by one message.
#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    F64(Vec<f64>),
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl Payload {
    pub fn elem_type(&self) -> ElemType {
        match self {
            Payload::F64(_) => ElemType::F64,
            Payload::F32(_) => ElemType::F32,
            Payload::U8(_) => ElemType::U8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Payload::F64(v) => v.len(),
            Payload::F32(v) => v.len(),
            Payload::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn byte_len(&self) -> usize {
        self.len() * self.elem_type().width()
    }
}

/// Element types that can travel in a [`Payload`].
pub trait WireElement: Copy + Send + Sync + 'static {
    const ELEM: ElemType;

    fn wrap(values: Vec<Self>) -> Payload;
    /// Returns the payload back on a type mismatch.
    fn unwrap(payload: Payload) -> Result<Vec<Self>, Payload>;
}

macro_rules! wire_element {
    ($t:ty, $variant:ident) => {
        impl WireElement for $t {
            const ELEM: ElemType = ElemType::$variant;

            fn wrap(values: Vec<Self>) -> Payload {
                Payload::$variant(values)
            }

            fn unwrap(payload: Payload) -> Result<Vec<Self>, Payload> {
                match payload {
                    Payload::$variant(v) => Ok(v),
                    other => Err(other),
                }
            }
        }
    };
}

wire_element!(f64, F64);
wire_element!(f32, F32);
wire_element!(u8, U8);

#[derive(Debug, Error)]
pub enum WireError {
    #[error("bad frame magic {0:#010x}")]
    BadMagic(u32),
    #[error("unsupported frame version {0}")]
    BadVersion(u8),
    #[error("unknown element type {0}")]
    BadElemType(u8),
    #[error("payload of {0} bytes exceeds the frame limit")]
    Oversized(u64),
    #[error("truncated frame")]
    Truncated,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub tag: u32,
    pub source: u32,
    pub payload: Payload,
}

impl Frame {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.byte_len());
        out.extend_from_slice(&MAGIC.to_be_bytes());
        out.push(VERSION);
        out.extend_from_slice(&self.tag.to_le_bytes());
        out.extend_from_slice(&self.source.to_le_bytes());
        out.push(self.payload.elem_type() as u8);
        out.extend_from_slice(&(self.payload.len() as u64).to_le_bytes());
        match &self.payload {
            Payload::F64(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::F32(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::U8(v) => out.extend_from_slice(v),
        }
        out
    }

    /// Reads one frame. Returns `Ok(None)` on a clean end of stream before
    /// the first header byte.
    pub fn read_from(reader: &mut impl Read) -> Result<Option<Frame>, WireError> {
        let mut header = [0u8; HEADER_LEN];
        let mut filled = 0;
        while filled < HEADER_LEN {
            match reader.read(&mut header[filled..]) {
                Ok(0) if filled == 0 => return Ok(None),
                Ok(0) => return Err(WireError::Truncated),
                Ok(n) => filled += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        let (elem, count, tag, source) = parse_header(&header)?;
        let bytes = count
            .checked_mul(elem.width() as u64)
            .filter(|&b| b <= MAX_PAYLOAD_BYTES)
            .ok_or(WireError::Oversized(count))?;
        let mut body = vec![0u8; bytes as usize];
        reader.read_exact(&mut body).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => WireError::Truncated,
            _ => WireError::Io(e),
        })?;
        Ok(Some(Frame {
            tag,
            source,
            payload: decode_payload(elem, &body),
        }))
    }

    /// Decodes one frame from the front of `bytes`, returning it and the
    /// number of bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(Frame, usize), WireError> {
        if bytes.len() < HEADER_LEN {
            return Err(WireError::Truncated);
        }
        let (elem, count, tag, source) = parse_header(&bytes[..HEADER_LEN])?;
        let body_len = count
            .checked_mul(elem.width() as u64)
            .filter(|&b| b <= MAX_PAYLOAD_BYTES)
            .ok_or(WireError::Oversized(count))? as usize;
        let end = HEADER_LEN + body_len;
        if bytes.len() < end {
            return Err(WireError::Truncated);
        }
        let frame = Frame {
            tag,
            source,
            payload: decode_payload(elem, &bytes[HEADER_LEN..end]),
        };
        Ok((frame, end))
    }
}

fn parse_header(h: &[u8]) -> Result<(ElemType, u64, u32, u32), WireError> {
    let magic = u32::from_be_bytes(h[0..4].try_into().unwrap());
    if magic != MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    if h[4] != VERSION {
        return Err(WireError::BadVersion(h[4]));
    }
    let tag = u32::from_le_bytes(h[5..9].try_into().unwrap());
    let source = u32::from_le_bytes(h[9..13].try_into().unwrap());
    let elem = ElemType::from_code(h[13]).ok_or(WireError::BadElemType(h[13]))?;
    let count = u64::from_le_bytes(h[14..22].try_into().unwrap());
    Ok((elem, count, tag, source))
}

fn decode_payload(elem: ElemType, body: &[u8]) -> Payload {
    match elem {
        ElemType::F64 => Payload::F64(
            body.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        ElemType::F32 => Payload::F32(
            body.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        ElemType::U8 => Payload::U8(body.to_vec()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_bit_exact() {
        let f = Frame {
            tag: 7,
            source: 3,
            payload: Payload::F64(vec![1.0]),
        };
        let bytes = f.encode();
        assert_eq!(&bytes[0..4], b"MPLT");
        assert_eq!(bytes[4], 1);
        assert_eq!(&bytes[5..9], &[7, 0, 0, 0]);
        assert_eq!(&bytes[9..13], &[3, 0, 0, 0]);
        assert_eq!(bytes[13], 0);
        assert_eq!(&bytes[14..22], &[1, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&bytes[22..], &1.0f64.to_le_bytes());
    }

    #[test]
    fn rejects_corrupt_headers() {
        let mut bytes = Frame {
            tag: 1,
            source: 0,
            payload: Payload::U8(vec![9]),
        }
        .encode();
        bytes[13] = 9;
        assert!(matches!(
            Frame::decode(&bytes),
            Err(WireError::BadElemType(9))
        ));
        bytes[0] = 0;
        assert!(matches!(Frame::decode(&bytes), Err(WireError::BadMagic(_))));
        assert!(matches!(
            Frame::decode(&bytes[..10]),
            Err(WireError::Truncated)
        ));
    }

    #[test]
    fn stream_reader_handles_eof() {
        let empty: &[u8] = &[];
        assert!(Frame::read_from(&mut &*empty).unwrap().is_none());
        let bytes = Frame {
            tag: 1,
            source: 0,
            payload: Payload::F32(vec![1.0, 2.0]),
        }
        .encode();
        let cut = &bytes[..bytes.len() - 1];
        assert!(matches!(
            Frame::read_from(&mut &*cut),
            Err(WireError::Truncated)
        ));
    }

    fn payload_strategy() -> impl Strategy<Value = Payload> {
        prop_oneof![
            proptest::collection::vec(any::<f64>(), 0..64).prop_map(Payload::F64),
            proptest::collection::vec(any::<f32>(), 0..64).prop_map(Payload::F32),
            proptest::collection::vec(any::<u8>(), 0..64).prop_map(Payload::U8),
        ]
    }

    fn bit_equal(a: &Payload, b: &Payload) -> bool {
        match (a, b) {
            (Payload::F64(x), Payload::F64(y)) => {
                x.len() == y.len() && x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits())
            }
            (Payload::F32(x), Payload::F32(y)) => {
                x.len() == y.len() && x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits())
            }
            (Payload::U8(x), Payload::U8(y)) => x == y,
            _ => false,
        }
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(tag in any::<u32>(), source in any::<u32>(), payload in payload_strategy()) {
            let frame = Frame { tag, source, payload };
            let bytes = frame.encode();
            prop_assert_eq!(bytes.len(), HEADER_LEN + frame.payload.byte_len());
            let (back, used) = Frame::decode(&bytes).unwrap();
            prop_assert_eq!(used, bytes.len());
            prop_assert_eq!(back.tag, tag);
            prop_assert_eq!(back.source, source);
            prop_assert!(bit_equal(&back.payload, &frame.payload));
            let streamed = Frame::read_from(&mut &bytes[..]).unwrap().unwrap();
            prop_assert!(bit_equal(&streamed.payload, &frame.payload));
        }
    }
}
