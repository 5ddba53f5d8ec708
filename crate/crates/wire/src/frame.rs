use std::io::{ErrorKind, Read, Write};

use fedembed::codec::{verify_crc, Reader, Writer};
use fedembed::FormatError;

use crate::{Result, WireError};

/// Largest frame accepted by default (64 MiB).
pub const DEFAULT_MAX_FRAME: usize = 64 << 20;

/// Bytes of a frame that are not payload: length, type, epoch, client, CRC.
pub const FRAME_OVERHEAD: usize = 4 + 1 + 4 + 2 + 4;

const HEADER_AFTER_LEN: usize = 1 + 4 + 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MessageType {
    Hello = 1,
    Config = 2,
    GlobalParams = 3,
    Update = 4,
    EpochDone = 5,
    Shutdown = 6,
    Error = 7,
}

impl TryFrom<u8> for MessageType {
    type Error = WireError;

    fn try_from(v: u8) -> Result<Self> {
        Ok(match v {
            1 => MessageType::Hello,
            2 => MessageType::Config,
            3 => MessageType::GlobalParams,
            4 => MessageType::Update,
            5 => MessageType::EpochDone,
            6 => MessageType::Shutdown,
            7 => MessageType::Error,
            other => return Err(WireError::UnknownType(other)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub kind: MessageType,
    pub epoch: u32,
    pub client: u16,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn encode(&self) -> Vec<u8> {
        let len = HEADER_AFTER_LEN + self.payload.len() + 4;
        let mut w = Writer::new();
        w.u32(len as u32)
            .u8(self.kind as u8)
            .u32(self.epoch)
            .u16(self.client)
            .bytes(&self.payload);
        w.finish_with_crc()
    }

    /// Decodes one complete frame (length prefix included).
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let len = r.u32()? as usize;
        if len < HEADER_AFTER_LEN + 4 {
            return Err(FormatError::MalformedHeader(format!("frame length {len} is below the minimum")).into());
        }
        r.require(len)?;
        if r.remaining() != len {
            return Err(FormatError::MalformedHeader(format!(
                "{} trailing bytes after frame",
                r.remaining() - len
            ))
            .into());
        }
        verify_crc(bytes)?;
        let kind = MessageType::try_from(r.u8()?)?;
        let epoch = r.u32()?;
        let client = r.u16()?;
        let payload = r.take(len - HEADER_AFTER_LEN - 4)?.to_vec();
        Ok(Self {
            kind,
            epoch,
            client,
            payload,
        })
    }
}

/// Reads one frame. A clean end of stream before the first byte is reported
/// as [`WireError::Disconnected`].
pub fn read_frame<R: Read>(reader: &mut R, max_frame: usize, peer: &str) -> Result<Frame> {
    let mut len_buf = [0u8; 4];
    match reader.read_exact(&mut len_buf) {
        Ok(()) => {}
        Err(e) if e.kind() == ErrorKind::UnexpectedEof => {
            return Err(WireError::Disconnected { peer: peer.to_string() })
        }
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_le_bytes(len_buf) as usize;
    if len + 4 > max_frame {
        return Err(WireError::Oversize { len: len + 4, max: max_frame });
    }
    let mut buf = vec![0u8; 4 + len];
    buf[..4].copy_from_slice(&len_buf);
    reader.read_exact(&mut buf[4..]).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => WireError::Format(FormatError::Truncated {
            expected: len,
            found: 0,
        }),
        _ => e.into(),
    })?;
    Frame::decode(&buf)
}

pub fn write_frame<W: Write>(writer: &mut W, frame: &Frame) -> Result<()> {
    writer.write_all(&frame.encode())?;
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame() -> Frame {
        Frame {
            kind: MessageType::Update,
            epoch: 7,
            client: 3,
            payload: vec![1, 2, 3, 4, 5],
        }
    }

    #[test]
    fn layout() {
        let b = frame().encode();
        assert_eq!(b.len(), FRAME_OVERHEAD + 5);
        assert_eq!(u32::from_le_bytes(b[..4].try_into().unwrap()) as usize, b.len() - 4);
        assert_eq!(b[4], MessageType::Update as u8);
        assert_eq!(u32::from_le_bytes(b[5..9].try_into().unwrap()), 7);
        assert_eq!(u16::from_le_bytes(b[9..11].try_into().unwrap()), 3);
        assert_eq!(&b[11..16], &[1, 2, 3, 4, 5]);
        let crc = u32::from_le_bytes(b[16..].try_into().unwrap());
        assert_eq!(crc, crc32fast::hash(&b[..16]));
        assert_eq!(Frame::decode(&b).unwrap(), frame());
    }

    #[test]
    fn every_single_bit_flip_is_rejected() {
        let b = frame().encode();
        for i in 0..b.len() {
            for bit in 0..8 {
                let mut c = b.clone();
                c[i] ^= 1 << bit;
                assert!(Frame::decode(&c).is_err(), "byte {i} bit {bit}");
            }
        }
    }

    #[test]
    fn oversize_is_rejected_before_reading_payload() {
        let mut b = frame().encode();
        b[..4].copy_from_slice(&u32::MAX.to_le_bytes());
        let err = read_frame(&mut &b[..], 1024, "test").unwrap_err();
        assert!(matches!(err, WireError::Oversize { .. }));
    }

    #[test]
    fn truncated_stream() {
        let b = frame().encode();
        let err = read_frame(&mut &b[..b.len() - 2], DEFAULT_MAX_FRAME, "test").unwrap_err();
        assert!(matches!(err, WireError::Format(FormatError::Truncated { .. })));
        let err = read_frame(&mut &b[..0], DEFAULT_MAX_FRAME, "test").unwrap_err();
        assert!(matches!(err, WireError::Disconnected { .. }));
    }
}
