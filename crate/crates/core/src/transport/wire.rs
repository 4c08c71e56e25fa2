//! Little-endian framing for the three transfer messages. Each frame starts
//! with a one-byte type tag.
//!
//! | type | layout after the tag |
//! |------|----------------------|
//! | 1 REQUEST | session u64, video u32, request u64, path u32, count u16, count x seq u64 |
//! | 2 DATA    | session u64, seq u64, len u16, len payload bytes |
//! | 3 REJECT  | session u64, request u64, count u16, count x seq u64 |

use bytes::{Buf, BufMut, Bytes, BytesMut};

use crate::error::{Error, Result};

const REQUEST: u8 = 1;
const DATA: u8 = 2;
const REJECT: u8 = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Frame {
    Request { session_id: u64, video_id: u32, request_id: u64, path_id: u32, seqs: Vec<u64> },
    Data { session_id: u64, seq: u64, payload: Bytes },
    Reject { session_id: u64, request_id: u64, seqs: Vec<u64> },
}

fn put_seqs(buf: &mut BytesMut, seqs: &[u64]) -> Result<()> {
    let count = u16::try_from(seqs.len()).map_err(|_| Error::Wire(format!("{} seqs in one frame", seqs.len())))?;
    buf.put_u16_le(count);
    for &s in seqs {
        buf.put_u64_le(s);
    }
    Ok(())
}

impl Frame {
    pub fn encode(&self) -> Result<Bytes> {
        let mut buf = BytesMut::new();
        match self {
            Frame::Request { session_id, video_id, request_id, path_id, seqs } => {
                buf.put_u8(REQUEST);
                buf.put_u64_le(*session_id);
                buf.put_u32_le(*video_id);
                buf.put_u64_le(*request_id);
                buf.put_u32_le(*path_id);
                put_seqs(&mut buf, seqs)?;
            }
            Frame::Data { session_id, seq, payload } => {
                let len = u16::try_from(payload.len()).map_err(|_| Error::Wire(format!("payload of {} bytes", payload.len())))?;
                buf.put_u8(DATA);
                buf.put_u64_le(*session_id);
                buf.put_u64_le(*seq);
                buf.put_u16_le(len);
                buf.put_slice(payload);
            }
            Frame::Reject { session_id, request_id, seqs } => {
                buf.put_u8(REJECT);
                buf.put_u64_le(*session_id);
                buf.put_u64_le(*request_id);
                put_seqs(&mut buf, seqs)?;
            }
        }
        Ok(buf.freeze())
    }

    pub fn decode(mut buf: Bytes) -> Result<Frame> {
        fn need(buf: &Bytes, n: usize) -> Result<()> {
            if buf.remaining() < n {
                return Err(Error::Wire(format!("truncated frame: need {n} more bytes, have {}", buf.remaining())));
            }
            Ok(())
        }
        fn seqs(buf: &mut Bytes) -> Result<Vec<u64>> {
            need(buf, 2)?;
            let n = buf.get_u16_le() as usize;
            need(buf, 8 * n)?;
            Ok((0..n).map(|_| buf.get_u64_le()).collect())
        }
        need(&buf, 1)?;
        let frame = match buf.get_u8() {
            REQUEST => {
                need(&buf, 24)?;
                let session_id = buf.get_u64_le();
                let video_id = buf.get_u32_le();
                let request_id = buf.get_u64_le();
                let path_id = buf.get_u32_le();
                Frame::Request { session_id, video_id, request_id, path_id, seqs: seqs(&mut buf)? }
            }
            DATA => {
                need(&buf, 18)?;
                let session_id = buf.get_u64_le();
                let seq = buf.get_u64_le();
                let len = buf.get_u16_le() as usize;
                need(&buf, len)?;
                Frame::Data { session_id, seq, payload: buf.split_to(len) }
            }
            REJECT => {
                need(&buf, 16)?;
                let session_id = buf.get_u64_le();
                let request_id = buf.get_u64_le();
                Frame::Reject { session_id, request_id, seqs: seqs(&mut buf)? }
            }
            t => return Err(Error::Wire(format!("unknown frame type {t}"))),
        };
        if buf.has_remaining() {
            return Err(Error::Wire(format!("{} trailing bytes", buf.remaining())));
        }
        Ok(frame)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_round_trip() {
        let frames = [
            Frame::Request { session_id: 7, video_id: 3, request_id: 99, path_id: 2, seqs: vec![1, 5, 900] },
            Frame::Data { session_id: 7, seq: 5, payload: Bytes::from_static(b"hello") },
            Frame::Reject { session_id: 7, request_id: 99, seqs: vec![900] },
        ];
        for f in frames {
            let enc = f.encode().unwrap();
            assert_eq!(Frame::decode(enc).unwrap(), f);
        }
    }

    #[test]
    fn truncation_and_garbage_are_errors() {
        let enc = Frame::Reject { session_id: 1, request_id: 2, seqs: vec![3, 4] }.encode().unwrap();
        for cut in 0..enc.len() {
            assert!(Frame::decode(enc.slice(..cut)).is_err());
        }
        assert!(Frame::decode(Bytes::from_static(&[9])).is_err());
        let mut long = BytesMut::from(&enc[..]);
        long.put_u8(0);
        assert!(Frame::decode(long.freeze()).is_err());
    }
}
