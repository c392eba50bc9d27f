//! Recording file format.
//!
//! ```text
//! header (32 bytes)
//!  0   4  magic "PIEG"
//!  4   1  format version (1)
//!  5   1  channel count
//!  6   1  gain
//!  7   1  pad (0)
//!  8   4  sample rate, SPS, u32 LE
//! 12   4  reference voltage, microvolts, u32 LE
//! 16   8  session id, u64 LE
//! 24   8  reserved (0)
//! record (44 bytes)
//!  0   8  t_ns, u64 LE
//!  8   4  status, u32 LE
//! 12  32  8 x channel code, i32 LE (sign-extended 24-bit)
//! ```
//!
//! Raw codes are stored rather than volts, so a file can be reinterpreted
//! with a different gain or reference without loss.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use crate::frame::{DeviceConfig, RawFrame, CHANNELS, SUPPORTED_GAINS, SUPPORTED_RATES};

use super::SessionError;

pub const MAGIC: [u8; 4] = *b"PIEG";
pub const FORMAT_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 32;
pub const RECORD_LEN: usize = 44;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RecordingHeader {
    pub channel_count: u8,
    pub gain: u8,
    pub sample_rate_sps: u32,
    pub vref_microvolts: u32,
    pub session_id: u64,
}

impl RecordingHeader {
    pub fn for_device(device: &DeviceConfig, session_id: u64) -> Self {
        Self {
            channel_count: device.channel_count as u8,
            gain: device.gain,
            sample_rate_sps: device.sample_rate_sps,
            vref_microvolts: (device.vref_volts * 1e6).round() as u32,
            session_id,
        }
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[0..4].copy_from_slice(&MAGIC);
        b[4] = FORMAT_VERSION;
        b[5] = self.channel_count;
        b[6] = self.gain;
        b[8..12].copy_from_slice(&self.sample_rate_sps.to_le_bytes());
        b[12..16].copy_from_slice(&self.vref_microvolts.to_le_bytes());
        b[16..24].copy_from_slice(&self.session_id.to_le_bytes());
        b
    }

    pub fn parse(b: &[u8]) -> Result<Self, SessionError> {
        if b.len() < HEADER_LEN {
            return Err(SessionError::Format(format!(
                "header is {} bytes, need {HEADER_LEN}",
                b.len()
            )));
        }
        if b[0..4] != MAGIC {
            return Err(SessionError::Format(format!("bad magic {:02x?}", &b[0..4])));
        }
        if b[4] != FORMAT_VERSION {
            return Err(SessionError::Format(format!("unsupported format version {}", b[4])));
        }
        let h = Self {
            channel_count: b[5],
            gain: b[6],
            sample_rate_sps: u32::from_le_bytes(b[8..12].try_into().unwrap()),
            vref_microvolts: u32::from_le_bytes(b[12..16].try_into().unwrap()),
            session_id: u64::from_le_bytes(b[16..24].try_into().unwrap()),
        };
        if usize::from(h.channel_count) != CHANNELS {
            return Err(SessionError::Format(format!("channel count {}", h.channel_count)));
        }
        if !SUPPORTED_RATES.contains(&h.sample_rate_sps) {
            return Err(SessionError::Format(format!("sample rate {} SPS", h.sample_rate_sps)));
        }
        if !SUPPORTED_GAINS.contains(&h.gain) {
            return Err(SessionError::Format(format!("gain {}", h.gain)));
        }
        if h.vref_microvolts == 0 {
            return Err(SessionError::Format("zero reference voltage".into()));
        }
        Ok(h)
    }

    pub fn device_config(&self) -> DeviceConfig {
        DeviceConfig {
            sample_rate_sps: self.sample_rate_sps,
            gain: self.gain,
            vref_volts: f64::from(self.vref_microvolts) / 1e6,
            ..DeviceConfig::default()
        }
    }
}

pub fn encode_record(t_ns: u64, frame: &RawFrame) -> [u8; RECORD_LEN] {
    let mut b = [0u8; RECORD_LEN];
    b[0..8].copy_from_slice(&t_ns.to_le_bytes());
    b[8..12].copy_from_slice(&frame.status.to_le_bytes());
    for (k, code) in frame.channel_raw.iter().enumerate() {
        b[12 + 4 * k..16 + 4 * k].copy_from_slice(&code.to_le_bytes());
    }
    b
}

pub fn decode_record(b: &[u8; RECORD_LEN]) -> Result<(u64, RawFrame), SessionError> {
    let t_ns = u64::from_le_bytes(b[0..8].try_into().unwrap());
    let status = u32::from_le_bytes(b[8..12].try_into().unwrap());
    let mut frame = RawFrame {
        status,
        channel_raw: [0; CHANNELS],
    };
    for (k, code) in frame.channel_raw.iter_mut().enumerate() {
        *code = i32::from_le_bytes(b[12 + 4 * k..16 + 4 * k].try_into().unwrap());
    }
    frame
        .validate()
        .map_err(|e| SessionError::Format(format!("record at t={t_ns} ns: {e}")))?;
    Ok((t_ns, frame))
}

/// Appends frames to a recording. The header is written on creation.
pub struct Recorder<W: Write> {
    out: BufWriter<W>,
    header: RecordingHeader,
    frames: u64,
}

impl Recorder<File> {
    pub fn create(path: impl AsRef<Path>, header: RecordingHeader) -> Result<Self, SessionError> {
        Self::new(File::create(path)?, header)
    }
}

impl<W: Write> Recorder<W> {
    pub fn new(inner: W, header: RecordingHeader) -> Result<Self, SessionError> {
        let mut out = BufWriter::new(inner);
        out.write_all(&header.to_bytes())?;
        Ok(Self { out, header, frames: 0 })
    }

    pub fn header(&self) -> &RecordingHeader {
        &self.header
    }

    pub fn write_frame(&mut self, t_ns: u64, frame: &RawFrame) -> Result<(), SessionError> {
        frame.validate().map_err(|e| SessionError::Format(e.to_string()))?;
        self.out.write_all(&encode_record(t_ns, frame))?;
        self.frames += 1;
        Ok(())
    }

    pub fn frames_written(&self) -> u64 {
        self.frames
    }

    /// Flushes and returns the number of frames written.
    pub fn finish(mut self) -> Result<u64, SessionError> {
        self.out.flush()?;
        Ok(self.frames)
    }
}

/// Writes a whole recording in one go.
pub fn record<'a>(
    frames: impl IntoIterator<Item = (u64, &'a RawFrame)>,
    device: &DeviceConfig,
    session_id: u64,
    path: impl AsRef<Path>,
) -> Result<u64, SessionError> {
    let mut r = Recorder::create(path, RecordingHeader::for_device(device, session_id))?;
    for (t, f) in frames {
        r.write_frame(t, f)?;
    }
    r.finish()
}

/// Reads frames back in file order. A trailing partial record ends the
/// stream and sets [`ReplayReader::truncated`].
pub struct ReplayReader<R: Read> {
    input: R,
    header: RecordingHeader,
    truncated: bool,
    done: bool,
    records: u64,
}

impl ReplayReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, SessionError> {
        let path = path.as_ref();
        let f = File::open(path)
            .map_err(|e| SessionError::Source(format!("{}: {e}", path.display())))?;
        Self::new(BufReader::with_capacity(1 << 16, f))
    }
}

impl<R: Read> ReplayReader<R> {
    pub fn new(mut input: R) -> Result<Self, SessionError> {
        let mut head = [0u8; HEADER_LEN];
        let n = read_full(&mut input, &mut head)?;
        let header = RecordingHeader::parse(&head[..n])?;
        Ok(Self {
            input,
            header,
            truncated: false,
            done: false,
            records: 0,
        })
    }

    pub fn header(&self) -> &RecordingHeader {
        &self.header
    }

    pub fn truncated(&self) -> bool {
        self.truncated
    }

    pub fn records_read(&self) -> u64 {
        self.records
    }
}

fn read_full(r: &mut impl Read, buf: &mut [u8]) -> io::Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match r.read(&mut buf[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(n)
}

impl<R: Read> Iterator for ReplayReader<R> {
    type Item = Result<(u64, RawFrame), SessionError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let mut rec = [0u8; RECORD_LEN];
        match read_full(&mut self.input, &mut rec) {
            Ok(0) => {
                self.done = true;
                None
            }
            Ok(n) if n < RECORD_LEN => {
                self.done = true;
                self.truncated = true;
                log::warn!(
                    "recording truncated: {n} trailing bytes after record {}",
                    self.records
                );
                None
            }
            Ok(_) => {
                self.records += 1;
                let r = decode_record(&rec);
                if r.is_err() {
                    self.done = true;
                }
                Some(r)
            }
            Err(e) => {
                self.done = true;
                Some(Err(e.into()))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn header() -> RecordingHeader {
        RecordingHeader::for_device(&DeviceConfig::default(), 0xDEAD_BEEF)
    }

    fn frames(n: usize) -> Vec<(u64, RawFrame)> {
        (0..n)
            .map(|i| {
                let mut f = RawFrame { status: 0xC0_0000, ..Default::default() };
                for (k, c) in f.channel_raw.iter_mut().enumerate() {
                    *c = (i as i32 * 1000 + k as i32) * if k % 2 == 0 { 1 } else { -1 };
                }
                (i as u64 * 4_000_000, f)
            })
            .collect()
    }

    #[test]
    fn header_layout() {
        let b = header().to_bytes();
        assert_eq!(&b[0..4], b"PIEG");
        assert_eq!(b[4], 1);
        assert_eq!(b[5], 8);
        assert_eq!(b[6], 24);
        assert_eq!(b[7], 0);
        assert_eq!(&b[8..12], &250u32.to_le_bytes());
        assert_eq!(&b[12..16], &4_500_000u32.to_le_bytes());
        assert_eq!(&b[16..24], &0xDEAD_BEEFu64.to_le_bytes());
        assert_eq!(&b[24..32], &[0; 8]);
        assert_eq!(RecordingHeader::parse(&b).unwrap(), header());
        assert_eq!(header().device_config().vref_volts, 4.5);
    }

    #[test]
    fn record_layout() {
        let mut f = RawFrame::default();
        f.channel_raw[0] = -1;
        f.channel_raw[7] = 0x7F_FFFF;
        let b = encode_record(0x0102, &f);
        assert_eq!(&b[0..8], &[2, 1, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&b[12..16], &[0xFF; 4]);
        assert_eq!(&b[40..44], &[0xFF, 0xFF, 0x7F, 0]);
        assert_eq!(decode_record(&b).unwrap(), (0x0102, f));
    }

    #[test]
    fn empty_recording() {
        let mut buf = Vec::new();
        Recorder::new(&mut buf, header()).unwrap().finish().unwrap();
        assert_eq!(buf.len(), 32);
        let mut r = ReplayReader::new(Cursor::new(buf)).unwrap();
        assert!(r.next().is_none());
        assert!(!r.truncated());
    }

    #[test]
    fn size_and_round_trip() {
        let fr = frames(100);
        let mut buf = Vec::new();
        let mut rec = Recorder::new(&mut buf, header()).unwrap();
        for (t, f) in &fr {
            rec.write_frame(*t, f).unwrap();
        }
        assert_eq!(rec.finish().unwrap(), 100);
        assert_eq!(buf.len(), 32 + 44 * 100);
        let back: Vec<_> = ReplayReader::new(Cursor::new(&buf)).unwrap().map(Result::unwrap).collect();
        assert_eq!(back, fr);

        // re-record is byte-identical
        let r = ReplayReader::new(Cursor::new(&buf)).unwrap();
        let mut again = Vec::new();
        let mut rec = Recorder::new(&mut again, *r.header()).unwrap();
        for item in r {
            let (t, f) = item.unwrap();
            rec.write_frame(t, &f).unwrap();
        }
        rec.finish().unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn truncated_prefix_recovers() {
        let fr = frames(10);
        let mut buf = Vec::new();
        let mut rec = Recorder::new(&mut buf, header()).unwrap();
        for (t, f) in &fr {
            rec.write_frame(*t, f).unwrap();
        }
        rec.finish().unwrap();
        for cut in [32 + 44 * 3 + 17, 32 + 44 * 9 + 43] {
            let mut r = ReplayReader::new(Cursor::new(&buf[..cut])).unwrap();
            let got: Vec<_> = r.by_ref().map(Result::unwrap).collect();
            assert_eq!(got, fr[..(cut - 32) / 44]);
            assert!(r.truncated());
        }
    }

    #[test]
    fn bad_headers() {
        let mut b = header().to_bytes();
        b[0] = b'X';
        assert!(matches!(ReplayReader::new(Cursor::new(b.to_vec())), Err(SessionError::Format(_))));
        let mut b = header().to_bytes();
        b[4] = 2;
        assert!(matches!(RecordingHeader::parse(&b), Err(SessionError::Format(_))));
        let mut b = header().to_bytes();
        b[6] = 3;
        assert!(RecordingHeader::parse(&b).is_err());
        let mut b = header().to_bytes();
        b[8..12].copy_from_slice(&300u32.to_le_bytes());
        assert!(RecordingHeader::parse(&b).is_err());
        assert!(RecordingHeader::parse(&b[..10]).is_err());
        let e = ReplayReader::new(Cursor::new(Vec::new())).err().unwrap();
        assert_eq!(e.exit_code(), 3);
    }

    #[test]
    fn corrupt_code_is_format_error() {
        let mut buf = header().to_bytes().to_vec();
        let mut rec = encode_record(0, &RawFrame::default());
        rec[12..16].copy_from_slice(&(1i32 << 23).to_le_bytes());
        buf.extend_from_slice(&rec);
        let mut r = ReplayReader::new(Cursor::new(buf)).unwrap();
        assert!(matches!(r.next(), Some(Err(SessionError::Format(_)))));
        assert!(r.next().is_none());
    }

    /// Accepts `limit` bytes, then fails like a full disk.
    struct FullDisk {
        written: Vec<u8>,
        limit: usize,
    }

    impl Write for FullDisk {
        fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
            let room = self.limit - self.written.len();
            if room == 0 {
                return Err(io::Error::new(ErrorKind::StorageFull, "disk full"));
            }
            let n = room.min(buf.len());
            self.written.extend_from_slice(&buf[..n]);
            Ok(n)
        }

        fn flush(&mut self) -> io::Result<()> {
            Ok(())
        }
    }

    #[test]
    fn disk_full_leaves_valid_prefix() {
        let mut disk = FullDisk { written: Vec::new(), limit: 32 + 44 * 50 + 20 };
        let mut rec = Recorder::new(&mut disk, header()).unwrap();
        let mut failed = false;
        for (t, f) in frames(1000) {
            if rec.write_frame(t, &f).is_err() {
                failed = true;
                break;
            }
        }
        failed |= rec.finish().is_err();
        assert!(failed);
        let got: Vec<_> = ReplayReader::new(Cursor::new(&disk.written)).unwrap().map(Result::unwrap).collect();
        assert_eq!(got, frames(50));
    }
}
