//! Frame layout (little-endian):
//!
//! ```text
//! magic 0xB7 | type u8 | seq u16 | length u16 | payload[length] | crc u16
//! ```
//!
//! The CRC is CRC-16/CCITT-FALSE over `type ..= payload`.

use crate::sensors::ImuSample;
use crate::geometry::{UnitQuat, Vec3, GRAVITY};
use crate::stimulus::{StimCommand, Target};
use crc::{Crc, CRC_16_IBM_3740};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: u8 = 0xB7;
pub const HEADER_LEN: usize = 6;
pub const CRC_LEN: usize = 2;
pub const MAX_PAYLOAD: usize = 256;

const CRC16: Crc<u16> = Crc::<u16>::new(&CRC_16_IBM_3740);

pub fn crc16(bytes: &[u8]) -> u16 {
    CRC16.checksum(bytes)
}

pub mod type_code {
    pub const STIM_REQUEST: u8 = 0x01;
    pub const STIM_ACK: u8 = 0x02;
    pub const IMU_TELEMETRY: u8 = 0x03;
    pub const STIM_MARKER: u8 = 0x04;
    pub const HEARTBEAT: u8 = 0x05;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StimRequest {
    /// [`Target::code`].
    pub target: u8,
    pub freq_hz: u16,
    pub duration_ms: u16,
    pub amplitude_mv: u16,
    pub pulse_width_us: u16,
}

impl StimRequest {
    pub fn from_command(cmd: &StimCommand) -> Result<Self, EncodeError> {
        let field = |name: &'static str, v: f64| -> Result<u16, EncodeError> {
            let r = v.round();
            if (v - r).abs() > 1e-9 || !(0.0..=u16::MAX as f64).contains(&r) {
                return Err(EncodeError::OutOfRange(name));
            }
            Ok(r as u16)
        };
        Ok(Self {
            target: cmd.target.code(),
            freq_hz: field("freq_hz", cmd.frequency_hz)?,
            duration_ms: field("duration_ms", cmd.duration_ms)?,
            amplitude_mv: field("amplitude_mv", cmd.amplitude_mv)?,
            pulse_width_us: field("pulse_width_us", cmd.pulse_width_ms * 1000.0)?,
        })
    }

    pub fn to_command(&self) -> Result<StimCommand, DecodeErrorKind> {
        Ok(StimCommand {
            target: Target::from_code(self.target).map_err(|_| DecodeErrorKind::InvalidField)?,
            frequency_hz: f64::from(self.freq_hz),
            duration_ms: f64::from(self.duration_ms),
            amplitude_mv: f64::from(self.amplitude_mv),
            pulse_width_ms: f64::from(self.pulse_width_us) / 1000.0,
        })
    }
}

/// `accel` in mg, `gyro` in 0.1 deg/s, `quat` (w, x, y, z) in Q15.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImuTelemetry {
    pub t_us: u64,
    pub accel: [i16; 3],
    pub gyro: [i16; 3],
    pub quat: [i16; 4],
}

const MG: f64 = GRAVITY / 1000.0;
const Q15: f64 = 32767.0;

fn quantize(v: f64, scale: f64) -> i16 {
    (v / scale).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

impl ImuTelemetry {
    /// Fixed-point form of a sample. Values beyond the i16 range saturate.
    pub fn from_sample(s: &ImuSample) -> Self {
        let q = s.orientation;
        Self {
            t_us: (s.t_ms * 1000.0).round().max(0.0) as u64,
            accel: s.accel.to_array().map(|v| quantize(v, MG)),
            gyro: s.gyro.to_array().map(|v| quantize(v, 0.1)),
            quat: [q.w, q.x, q.y, q.z].map(|v| (v * Q15).round().clamp(-Q15, Q15) as i16),
        }
    }

    pub fn to_sample(&self) -> ImuSample {
        let a = self.accel.map(|v| f64::from(v) * MG);
        let g = self.gyro.map(|v| f64::from(v) * 0.1);
        let [w, x, y, z] = self.quat.map(|v| f64::from(v) / Q15);
        ImuSample {
            t_ms: self.t_us as f64 / 1000.0,
            accel: Vec3::from_array(a),
            gyro: Vec3::from_array(g),
            orientation: UnitQuat::new_normalize(w, x, y, z).unwrap_or(UnitQuat::IDENTITY),
        }
    }
}

/// `on` is 0 when a train ends and `1 + target code` when one starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StimMarker {
    pub t_us: u64,
    pub on: u8,
}

impl StimMarker {
    pub fn start(t_us: u64, target: Target) -> Self {
        Self { t_us, on: 1 + target.code() }
    }

    pub fn stop(t_us: u64) -> Self {
        Self { t_us, on: 0 }
    }

    pub fn target(&self) -> Option<Target> {
        self.on.checked_sub(1).and_then(|c| Target::from_code(c).ok())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Message {
    StimRequest(StimRequest),
    StimAck { seq: u16, start_timestamp_us: u64 },
    ImuTelemetry(ImuTelemetry),
    StimMarker(StimMarker),
    Heartbeat { t_us: u64 },
}

impl Message {
    pub fn type_code(&self) -> u8 {
        match self {
            Message::StimRequest(_) => type_code::STIM_REQUEST,
            Message::StimAck { .. } => type_code::STIM_ACK,
            Message::ImuTelemetry(_) => type_code::IMU_TELEMETRY,
            Message::StimMarker(_) => type_code::STIM_MARKER,
            Message::Heartbeat { .. } => type_code::HEARTBEAT,
        }
    }

    /// Payload length fixed by the message type.
    pub fn payload_len(type_code: u8) -> Option<usize> {
        match type_code {
            type_code::STIM_REQUEST => Some(9),
            type_code::STIM_ACK => Some(10),
            type_code::IMU_TELEMETRY => Some(28),
            type_code::STIM_MARKER => Some(9),
            type_code::HEARTBEAT => Some(8),
            _ => None,
        }
    }

    fn validate(&self) -> Result<(), EncodeError> {
        match self {
            Message::StimRequest(r) if Target::from_code(r.target).is_err() => Err(EncodeError::OutOfRange("target")),
            Message::StimMarker(m) if m.on > 3 => Err(EncodeError::OutOfRange("on")),
            _ => Ok(()),
        }
    }

    fn write_payload(&self, out: &mut Vec<u8>) {
        match self {
            Message::StimRequest(r) => {
                out.push(r.target);
                for v in [r.freq_hz, r.duration_ms, r.amplitude_mv, r.pulse_width_us] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            Message::StimAck { seq, start_timestamp_us } => {
                out.extend_from_slice(&seq.to_le_bytes());
                out.extend_from_slice(&start_timestamp_us.to_le_bytes());
            }
            Message::ImuTelemetry(m) => {
                out.extend_from_slice(&m.t_us.to_le_bytes());
                for v in m.accel.iter().chain(&m.gyro).chain(&m.quat) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            Message::StimMarker(m) => {
                out.extend_from_slice(&m.t_us.to_le_bytes());
                out.push(m.on);
            }
            Message::Heartbeat { t_us } => out.extend_from_slice(&t_us.to_le_bytes()),
        }
    }

    fn read_payload(code: u8, p: &[u8]) -> Result<Message, DecodeErrorKind> {
        let u16_at = |i: usize| u16::from_le_bytes([p[i], p[i + 1]]);
        let i16_at = |i: usize| i16::from_le_bytes([p[i], p[i + 1]]);
        let u64_at = |i: usize| u64::from_le_bytes(p[i..i + 8].try_into().expect("length checked"));
        Ok(match code {
            type_code::STIM_REQUEST => {
                if Target::from_code(p[0]).is_err() {
                    return Err(DecodeErrorKind::InvalidField);
                }
                Message::StimRequest(StimRequest {
                    target: p[0],
                    freq_hz: u16_at(1),
                    duration_ms: u16_at(3),
                    amplitude_mv: u16_at(5),
                    pulse_width_us: u16_at(7),
                })
            }
            type_code::STIM_ACK => Message::StimAck { seq: u16_at(0), start_timestamp_us: u64_at(2) },
            type_code::IMU_TELEMETRY => Message::ImuTelemetry(ImuTelemetry {
                t_us: u64_at(0),
                accel: std::array::from_fn(|k| i16_at(8 + 2 * k)),
                gyro: std::array::from_fn(|k| i16_at(14 + 2 * k)),
                quat: std::array::from_fn(|k| i16_at(20 + 2 * k)),
            }),
            type_code::STIM_MARKER => {
                if p[8] > 3 {
                    return Err(DecodeErrorKind::InvalidField);
                }
                Message::StimMarker(StimMarker { t_us: u64_at(0), on: p[8] })
            }
            type_code::HEARTBEAT => Message::Heartbeat { t_us: u64_at(0) },
            _ => return Err(DecodeErrorKind::UnknownType),
        })
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum EncodeError {
    #[error("field {0} out of range")]
    OutOfRange(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DecodeErrorKind {
    /// Bytes before a magic byte were skipped.
    BadMagic,
    BadCrc,
    /// Length above the maximum or inconsistent with the type.
    BadLength,
    UnknownType,
    /// Well-formed frame carrying an invalid field value.
    InvalidField,
    /// The buffer ends inside a frame.
    Incomplete,
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[error("{kind:?} at byte {offset}")]
pub struct DecodeError {
    pub kind: DecodeErrorKind,
    /// Stream offset of the first byte concerned.
    pub offset: u64,
}

/// Encoded frame bytes.
pub fn encode(msg: &Message, seq: u16) -> Result<Vec<u8>, EncodeError> {
    msg.validate()?;
    let mut payload = Vec::with_capacity(28);
    msg.write_payload(&mut payload);
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + CRC_LEN);
    out.push(MAGIC);
    out.push(msg.type_code());
    out.extend_from_slice(&seq.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u16).to_le_bytes());
    out.extend_from_slice(&payload);
    let crc = crc16(&out[1..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// A decoded frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decoded {
    pub seq: u16,
    pub message: Message,
    /// Stream offset of the magic byte.
    pub offset: u64,
    pub len: usize,
}

enum Parse {
    Frame(Decoded),
    /// Error and the number of bytes to drop.
    Error(DecodeErrorKind, usize),
    NeedMore,
}

fn parse_at(buf: &[u8], offset: u64) -> Parse {
    if buf.is_empty() {
        return Parse::NeedMore;
    }
    if buf[0] != MAGIC {
        let skip = buf.iter().position(|&b| b == MAGIC).unwrap_or(buf.len());
        return Parse::Error(DecodeErrorKind::BadMagic, skip);
    }
    if buf.len() < HEADER_LEN {
        return Parse::NeedMore;
    }
    let code = buf[1];
    let seq = u16::from_le_bytes([buf[2], buf[3]]);
    let len = u16::from_le_bytes([buf[4], buf[5]]) as usize;
    if len > MAX_PAYLOAD || Message::payload_len(code).is_some_and(|n| n != len) {
        return Parse::Error(DecodeErrorKind::BadLength, 1);
    }
    let total = HEADER_LEN + len + CRC_LEN;
    if buf.len() < total {
        return Parse::NeedMore;
    }
    let crc = u16::from_le_bytes([buf[total - 2], buf[total - 1]]);
    if crc16(&buf[1..total - 2]) != crc {
        return Parse::Error(DecodeErrorKind::BadCrc, 1);
    }
    if Message::payload_len(code).is_none() {
        return Parse::Error(DecodeErrorKind::UnknownType, total);
    }
    match Message::read_payload(code, &buf[HEADER_LEN..HEADER_LEN + len]) {
        Ok(message) => Parse::Frame(Decoded { seq, message, offset, len: total }),
        Err(kind) => Parse::Error(kind, total),
    }
}

/// Decodes exactly one frame at the start of `bytes`.
pub fn decode(bytes: &[u8]) -> Result<Decoded, DecodeError> {
    match parse_at(bytes, 0) {
        Parse::Frame(d) => Ok(d),
        Parse::Error(kind, _) => Err(DecodeError { kind, offset: 0 }),
        Parse::NeedMore => Err(DecodeError { kind: DecodeErrorKind::Incomplete, offset: 0 }),
    }
}

/// Incremental decoder. Feed arbitrary chunks and drain frames and errors.
/// After a bad frame it resynchronizes on the next magic byte.
#[derive(Debug, Default, Clone)]
pub struct StreamDecoder {
    buf: Vec<u8>,
    /// Stream offset of `buf[0]`.
    base: u64,
}

impl StreamDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Next frame or error, or `None` when more bytes are needed.
    pub fn next_event(&mut self) -> Option<Result<Decoded, DecodeError>> {
        let (event, consumed) = match parse_at(&self.buf, self.base) {
            Parse::NeedMore => return None,
            Parse::Frame(d) => (Ok(d), d.len),
            Parse::Error(kind, n) => (Err(DecodeError { kind, offset: self.base }), n),
        };
        self.buf.drain(..consumed);
        self.base += consumed as u64;
        Some(event)
    }

    /// Everything decodable from the bytes pushed so far.
    pub fn drain(&mut self) -> Vec<Result<Decoded, DecodeError>> {
        std::iter::from_fn(|| self.next_event()).collect()
    }

    /// Bytes held waiting for the rest of a frame.
    pub fn pending(&self) -> usize {
        self.buf.len()
    }

    /// Ends the stream. A held partial frame becomes an `Incomplete` error
    /// and decoding resumes at the next magic byte inside it, so whole frames
    /// hidden behind a corrupted length are still returned.
    pub fn finish(&mut self) -> Vec<Result<Decoded, DecodeError>> {
        let mut out = self.drain();
        while !self.buf.is_empty() {
            out.push(Err(DecodeError { kind: DecodeErrorKind::Incomplete, offset: self.base }));
            let skip = self.buf[1..].iter().position(|&b| b == MAGIC).map_or(self.buf.len(), |i| i + 1);
            self.buf.drain(..skip);
            self.base += skip as u64;
            out.extend(self.drain());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Table-driven CRC-16/CCITT-FALSE, independent of the crate.
    fn crc_oracle(bytes: &[u8]) -> u16 {
        let table: Vec<u16> = (0..256u16)
            .map(|i| {
                let mut c = i << 8;
                for _ in 0..8 {
                    c = if c & 0x8000 != 0 { (c << 1) ^ 0x1021 } else { c << 1 };
                }
                c
            })
            .collect();
        bytes.iter().fold(0xFFFF, |crc, &b| (crc << 8) ^ table[((crc >> 8) as u8 ^ b) as usize])
    }

    #[test]
    fn crc_check_value() {
        assert_eq!(crc16(b"123456789"), 0x29B1);
        assert_eq!(crc_oracle(b"123456789"), 0x29B1);
    }

    #[test]
    fn golden_stim_request() {
        let msg = Message::StimRequest(StimRequest { target: Target::Both.code(), freq_hz: 80, duration_ms: 500, amplitude_mv: 3000, pulse_width_us: 3000 });
        let bytes = encode(&msg, 1).unwrap();
        let body = [0x01, 0x01, 0x00, 0x09, 0x00, 0x02, 0x50, 0x00, 0xF4, 0x01, 0xB8, 0x0B, 0xB8, 0x0B];
        let crc = crc_oracle(&body);
        let mut expected = vec![MAGIC];
        expected.extend_from_slice(&body);
        expected.extend_from_slice(&crc.to_le_bytes());
        assert_eq!(bytes, expected);
        // pinned
        assert_eq!(bytes, [0xB7, 0x01, 0x01, 0x00, 0x09, 0x00, 0x02, 0x50, 0x00, 0xF4, 0x01, 0xB8, 0x0B, 0xB8, 0x0B, 0xCC, 0x7F]);
    }

    #[test]
    fn heartbeat_is_the_shortest_frame() {
        let bytes = encode(&Message::Heartbeat { t_us: 0 }, 0).unwrap();
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 8);
        assert_eq!(bytes.len(), 16);
        for code in 1..=5u8 {
            assert!(Message::payload_len(code).unwrap() >= 8);
        }
    }

    #[test]
    fn corruption_is_categorized() {
        let good = encode(&Message::Heartbeat { t_us: 42 }, 3).unwrap();
        let mut flipped = good.clone();
        flipped[8] ^= 0x10;
        assert_eq!(decode(&flipped).unwrap_err().kind, DecodeErrorKind::BadCrc);
        assert_eq!(decode(&good[..10]).unwrap_err().kind, DecodeErrorKind::Incomplete);
        assert_eq!(decode(&[0x00, 0xB7]).unwrap_err().kind, DecodeErrorKind::BadMagic);

        let mut unknown = good.clone();
        unknown[1] = 0x09;
        let crc = crc16(&unknown[1..14]);
        unknown[14..].copy_from_slice(&crc.to_le_bytes());
        assert_eq!(decode(&unknown).unwrap_err().kind, DecodeErrorKind::UnknownType);

        let mut long = vec![MAGIC, 0x05, 0, 0, 0x01, 0x02];
        long.extend([0; 20]);
        assert_eq!(decode(&long).unwrap_err().kind, DecodeErrorKind::BadLength);

        let mut marker = encode(&Message::StimMarker(StimMarker::start(5, Target::Left)), 0).unwrap();
        marker[14] = 9;
        let crc = crc16(&marker[1..15]);
        marker[15..].copy_from_slice(&crc.to_le_bytes());
        assert_eq!(decode(&marker).unwrap_err().kind, DecodeErrorKind::InvalidField);
        assert!(encode(&Message::StimMarker(StimMarker { t_us: 0, on: 4 }), 0).is_err());
    }

    #[test]
    fn decoder_resynchronizes() {
        let a = encode(&Message::Heartbeat { t_us: 1 }, 1).unwrap();
        let b = encode(&Message::Heartbeat { t_us: 2 }, 2).unwrap();
        let mut stream = vec![0x11, 0x22];
        stream.extend(&a);
        let mut bad = b.clone();
        bad[9] ^= 0xFF;
        stream.extend(&bad);
        stream.extend(&b);
        let mut d = StreamDecoder::new();
        d.push(&stream);
        let events = d.drain();
        let frames: Vec<_> = events.iter().filter_map(|e| e.as_ref().ok()).map(|f| f.seq).collect();
        assert_eq!(frames, vec![1, 2]);
        let errs: Vec<_> = events.iter().filter_map(|e| e.as_ref().err()).collect();
        assert_eq!(errs[0].kind, DecodeErrorKind::BadMagic);
        assert_eq!(errs[0].offset, 0);
        assert!(errs.iter().any(|e| e.kind == DecodeErrorKind::BadCrc && e.offset == 2 + a.len() as u64));
        assert_eq!(d.pending(), 0);
    }

    #[test]
    fn imu_fixed_point() {
        let s = ImuSample {
            t_ms: 1230.0,
            accel: Vec3::new(0.0, 0.0, -GRAVITY),
            gyro: Vec3::new(12.34, -0.05, 500.0),
            orientation: UnitQuat::IDENTITY,
        };
        let m = ImuTelemetry::from_sample(&s);
        assert_eq!(m.t_us, 1_230_000);
        assert_eq!(m.accel, [0, 0, -1000]);
        assert_eq!(m.gyro, [123, -1, 5000]);
        assert_eq!(m.quat, [32767, 0, 0, 0]);
        let back = m.to_sample();
        assert!((back.accel.z + GRAVITY).abs() < 1e-12);
        let huge = ImuSample { accel: Vec3::new(1e6, -1e6, 0.0), ..s };
        assert_eq!(ImuTelemetry::from_sample(&huge).accel[..2], [i16::MAX, i16::MIN]);
    }

    #[test]
    fn command_conversion() {
        let cmd = StimCommand::standard(Target::Left, 63.0);
        let r = StimRequest::from_command(&cmd).unwrap();
        assert_eq!(r.pulse_width_us, 3000);
        assert_eq!(r.to_command().unwrap(), cmd);
        let mut odd = cmd;
        odd.frequency_hz = 70000.0;
        assert_eq!(StimRequest::from_command(&odd), Err(EncodeError::OutOfRange("freq_hz")));
        odd.frequency_hz = 62.5;
        assert!(StimRequest::from_command(&odd).is_err());
    }

    pub(crate) fn random_message(rng: &mut ChaCha8Rng) -> Message {
        match rng.random_range(0..5) {
            0 => Message::StimRequest(StimRequest {
                target: rng.random_range(0..3),
                freq_hz: rng.random(),
                duration_ms: rng.random(),
                amplitude_mv: rng.random(),
                pulse_width_us: rng.random(),
            }),
            1 => Message::StimAck { seq: rng.random(), start_timestamp_us: rng.random() },
            2 => Message::ImuTelemetry(ImuTelemetry { t_us: rng.random(), accel: rng.random(), gyro: rng.random(), quat: rng.random() }),
            3 => Message::StimMarker(StimMarker { t_us: rng.random(), on: rng.random_range(0..4) }),
            _ => Message::Heartbeat { t_us: rng.random() },
        }
    }

    #[test]
    fn round_trip_ten_thousand() {
        let mut rng = ChaCha8Rng::seed_from_u64(10_000);
        for _ in 0..10_000 {
            let m = random_message(&mut rng);
            let seq: u16 = rng.random();
            let d = decode(&encode(&m, seq).unwrap()).unwrap();
            assert_eq!((d.message, d.seq), (m, seq));
        }
    }

    proptest! {
        #[test]
        fn any_split_decodes_identically(seed in any::<u64>(), cuts in proptest::collection::vec(any::<usize>(), 0..12)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let msgs: Vec<Message> = (0..20).map(|_| random_message(&mut rng)).collect();
            let stream: Vec<u8> = msgs.iter().enumerate().flat_map(|(i, m)| encode(m, i as u16).unwrap()).collect();
            let mut points: Vec<usize> = cuts.iter().map(|c| c % (stream.len() + 1)).collect();
            points.sort_unstable();
            let mut d = StreamDecoder::new();
            let mut got = Vec::new();
            let mut last = 0;
            for p in points.into_iter().chain([stream.len()]) {
                d.push(&stream[last..p]);
                last = p;
                got.extend(d.drain().into_iter().map(|e| e.unwrap().message));
            }
            prop_assert_eq!(got, msgs);
        }

        #[test]
        fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..600)) {
            let _ = decode(&bytes);
            let mut d = StreamDecoder::new();
            d.push(&bytes);
            let _ = d.drain();
            let _ = d.finish();
        }
    }
}
