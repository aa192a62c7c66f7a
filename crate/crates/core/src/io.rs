//! Little-endian binary formats and CSV/plot writers.
//!
//! | file   | header                                               | body                               |
//! |--------|------------------------------------------------------|------------------------------------|
//! | events | `QRNGEVT1`, tick (fs, u64), count (u64)              | u64 tick timestamps                |
//! | labels | `QRNGLBL1`, count (u64)                              | u8 label codes                     |
//! | tags   | `QRNGTAG1`, frame time (fs, u64), pixels (u32)       | per frame, per pixel: u16 count, then (u32 coarse, u8 fine) |
//! | bits   | `QRNGBIT1`, sample period (fs, u64), bit count (u64) | LSB-first packed bytes             |

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::analysis::RateCurve;
use crate::bits::BitBuf;
use crate::conditioning::InterarrivalHistogram;
use crate::error::{Error, Result};
use crate::source::{EventLabel, PhotonEventStream, Tag, TagFrame};

pub const EVENTS_MAGIC: &[u8; 8] = b"QRNGEVT1";
pub const LABELS_MAGIC: &[u8; 8] = b"QRNGLBL1";
pub const TAGS_MAGIC: &[u8; 8] = b"QRNGTAG1";
pub const BITS_MAGIC: &[u8; 8] = b"QRNGBIT1";

const FS_PER_S: f64 = 1e15;

/// Seconds to whole femtoseconds.
pub fn to_fs(seconds: f64) -> u64 {
    (seconds * FS_PER_S).round() as u64
}

pub fn from_fs(fs: u64) -> f64 {
    fs as f64 / FS_PER_S
}

fn read_array<const N: usize>(r: &mut impl Read, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::TooShort(format!("file ends inside the {what}")),
        _ => Error::Io(e),
    })?;
    Ok(buf)
}

fn read_u64(r: &mut impl Read, what: &str) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r, what)?))
}

fn expect_magic(r: &mut impl Read, magic: &[u8; 8]) -> Result<()> {
    let got: [u8; 8] = read_array(r, "header")?;
    if &got != magic {
        return Err(Error::Format(format!(
            "expected magic {:?}, found {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(&got)
        )));
    }
    Ok(())
}

pub fn write_events(w: &mut impl Write, stream: &PhotonEventStream) -> Result<()> {
    w.write_all(EVENTS_MAGIC)?;
    w.write_all(&to_fs(stream.tick).to_le_bytes())?;
    w.write_all(&(stream.events.len() as u64).to_le_bytes())?;
    for &t in &stream.events {
        w.write_all(&t.to_le_bytes())?;
    }
    Ok(())
}

/// Event timestamps and the tick length (seconds) from an events file.
pub fn read_events(r: &mut impl Read) -> Result<(Vec<u64>, f64)> {
    expect_magic(r, EVENTS_MAGIC)?;
    let tick = from_fs(read_u64(r, "header")?);
    let count = read_u64(r, "header")?;
    let mut events = Vec::with_capacity(count.min(1 << 28) as usize);
    for _ in 0..count {
        events.push(read_u64(r, "event list")?);
    }
    Ok((events, tick))
}

pub fn write_labels(w: &mut impl Write, labels: &[EventLabel]) -> Result<()> {
    w.write_all(LABELS_MAGIC)?;
    w.write_all(&(labels.len() as u64).to_le_bytes())?;
    let codes: Vec<u8> = labels.iter().map(|l| l.code()).collect();
    w.write_all(&codes)?;
    Ok(())
}

pub fn read_labels(r: &mut impl Read) -> Result<Vec<EventLabel>> {
    expect_magic(r, LABELS_MAGIC)?;
    let count = read_u64(r, "header")? as usize;
    let mut codes = Vec::new();
    r.take(count as u64).read_to_end(&mut codes)?;
    if codes.len() != count {
        return Err(Error::TooShort(format!("{} of {count} labels present", codes.len())));
    }
    codes
        .into_iter()
        .map(|c| EventLabel::from_code(c).ok_or_else(|| Error::Format(format!("unknown label code {c}"))))
        .collect()
}

pub fn write_events_file(path: &Path, stream: &PhotonEventStream) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_events(&mut w, stream)?;
    w.flush()?;
    Ok(())
}

pub fn read_events_file(path: &Path) -> Result<(Vec<u64>, f64)> {
    read_events(&mut BufReader::new(File::open(path)?))
}

/// Streams tag frames to a writer.
pub struct TagWriter<W: Write> {
    inner: W,
    n_pixels: usize,
}

impl<W: Write> TagWriter<W> {
    pub fn new(mut inner: W, frame_time: f64, n_pixels: usize) -> Result<Self> {
        inner.write_all(TAGS_MAGIC)?;
        inner.write_all(&to_fs(frame_time).to_le_bytes())?;
        inner.write_all(&(n_pixels as u32).to_le_bytes())?;
        Ok(Self { inner, n_pixels })
    }

    pub fn write_frame(&mut self, frame: &TagFrame) -> Result<()> {
        if frame.pixels.len() != self.n_pixels {
            return Err(Error::Malformed(format!(
                "frame has {} pixels, file declares {}",
                frame.pixels.len(),
                self.n_pixels
            )));
        }
        for tags in &frame.pixels {
            let n = u16::try_from(tags.len())
                .map_err(|_| Error::Format(format!("{} tags exceed the u16 count field", tags.len())))?;
            self.inner.write_all(&n.to_le_bytes())?;
            for t in tags {
                self.inner.write_all(&t.coarse.to_le_bytes())?;
                self.inner.write_all(&[t.fine])?;
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Reads tag frames one at a time. The saturation flags are not stored in
/// the format, so frames come back with none set.
pub struct TagReader<R: Read> {
    inner: R,
    pub frame_time: f64,
    pub n_pixels: usize,
    next_index: u64,
}

impl<R: Read> TagReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        expect_magic(&mut inner, TAGS_MAGIC)?;
        let frame_time = from_fs(read_u64(&mut inner, "header")?);
        let n_pixels = u32::from_le_bytes(read_array(&mut inner, "header")?) as usize;
        Ok(Self {
            inner,
            frame_time,
            n_pixels,
            next_index: 0,
        })
    }

    /// The next frame, or `None` at a clean end of file.
    pub fn next_frame(&mut self) -> Result<Option<TagFrame>> {
        let mut pixels = Vec::with_capacity(self.n_pixels);
        for p in 0..self.n_pixels {
            let mut count = [0u8; 2];
            if p == 0 {
                let got = read_fully(&mut self.inner, &mut count)?;
                if got == 0 {
                    return Ok(None);
                }
                if got < 2 {
                    return Err(Error::TooShort("tag file ends inside a frame".into()));
                }
            } else {
                count = read_array(&mut self.inner, "tag frame")?;
            }
            let n = u16::from_le_bytes(count) as usize;
            let mut raw = vec![0u8; 5 * n];
            self.inner.read_exact(&mut raw).map_err(|e| match e.kind() {
                io::ErrorKind::UnexpectedEof => Error::TooShort("tag file ends inside a frame".into()),
                _ => Error::Io(e),
            })?;
            pixels.push(
                raw.chunks_exact(5)
                    .map(|c| Tag {
                        coarse: u32::from_le_bytes([c[0], c[1], c[2], c[3]]),
                        fine: c[4],
                    })
                    .collect(),
            );
        }
        let frame = TagFrame {
            frame_index: self.next_index,
            pixels,
            saturated: Vec::new(),
        };
        self.next_index += 1;
        Ok(Some(frame))
    }
}

impl<R: Read> Iterator for TagReader<R> {
    type Item = Result<TagFrame>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_frame().transpose()
    }
}

fn read_fully(r: &mut impl Read, buf: &mut [u8]) -> Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(got)
}

pub fn open_tags(path: &Path) -> Result<TagReader<BufReader<File>>> {
    TagReader::new(BufReader::new(File::open(path)?))
}

/// Writes a packed bit stream; `sample_period` is 0 for extracted bits.
pub fn write_bits(w: &mut impl Write, bits: &BitBuf, sample_period: f64) -> Result<()> {
    w.write_all(BITS_MAGIC)?;
    w.write_all(&to_fs(sample_period).to_le_bytes())?;
    w.write_all(&(bits.len() as u64).to_le_bytes())?;
    w.write_all(&bits.to_bytes())?;
    Ok(())
}

/// A packed bit stream and its sample period in seconds.
pub fn read_bits(r: &mut impl Read) -> Result<(BitBuf, f64)> {
    expect_magic(r, BITS_MAGIC)?;
    let period = from_fs(read_u64(r, "header")?);
    let n = read_u64(r, "header")? as usize;
    let mut bytes = Vec::with_capacity(n.div_ceil(8));
    r.take(n.div_ceil(8) as u64).read_to_end(&mut bytes)?;
    if bytes.len() < n.div_ceil(8) {
        return Err(Error::TooShort(format!(
            "header announces {n} bits, payload holds {}",
            bytes.len() * 8
        )));
    }
    Ok((BitBuf::from_bytes(&bytes, n)?, period))
}

pub fn write_bits_file(path: &Path, bits: &BitBuf, sample_period: f64) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_bits(&mut w, bits, sample_period)?;
    w.flush()?;
    Ok(())
}

pub fn read_bits_file(path: &Path) -> Result<(BitBuf, f64)> {
    read_bits(&mut BufReader::new(File::open(path)?))
}

/// `gap,count,expected` rows up to `max_gap`.
pub fn write_histogram_csv(w: &mut impl Write, hist: &InterarrivalHistogram, max_gap: usize) -> Result<()> {
    writeln!(w, "gap,count,expected")?;
    for (g, c, e) in hist.rows(max_gap) {
        if e.is_nan() {
            writeln!(w, "{g},{c},")?;
        } else {
            writeln!(w, "{g},{c},{e:.6}")?;
        }
    }
    Ok(())
}

pub fn write_rate_curve_csv(w: &mut impl Write, curve: &RateCurve) -> Result<()> {
    write!(w, "frequency_hz,p_empty,p_one,entropy_bits,rate_bps")?;
    if curve.loss.is_some() {
        write!(w, ",effective_rate_bps_approx")?;
    }
    writeln!(w)?;
    for p in &curve.points {
        write!(w, "{},{},{},{},{}", p.frequency, p.p_empty, p.p_one, p.entropy, p.rate)?;
        if let Some(e) = p.effective_rate {
            write!(w, ",{e}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// A gnuplot script plotting a rate-curve CSV written next to it.
pub fn rate_curve_gnuplot(csv_name: &str, curve: &RateCurve) -> String {
    let mut s = format!(
        "set datafile separator ','\n\
         set logscale x\n\
         set xlabel 'sampling frequency (Hz)'\n\
         set ylabel 'rate (bit/s)'\n\
         set y2label 'H(X) (bits)'\n\
         set y2tics\n\
         set key left top\n\
         set title 'photon rate {:.0} counts/s'\n\
         plot '{csv_name}' using 1:5 with lines title 'i.i.d. rate', \\\n     \
         '{csv_name}' using 1:4 axes x1y2 with lines title 'H(X)'",
        curve.photon_rate
    );
    if curve.loss.is_some() {
        s.push_str(&format!(
            ", \\\n     '{csv_name}' using 1:6 with lines dashtype 2 title 'after conditioning (approx.)'"
        ));
    }
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn events_round_trip() {
        let s = PhotonEventStream::new(vec![1, 5, 99], 1e-9, 100).unwrap();
        let mut buf = Vec::new();
        write_events(&mut buf, &s).unwrap();
        assert_eq!(&buf[..8], EVENTS_MAGIC);
        assert_eq!(u64::from_le_bytes(buf[8..16].try_into().unwrap()), 1_000_000);
        let (events, tick) = read_events(&mut buf.as_slice()).unwrap();
        assert_eq!(events, s.events);
        assert_eq!(tick, 1e-9);
    }

    #[test]
    fn labels_round_trip() {
        let l = vec![EventLabel::True, EventLabel::Afterpulse, EventLabel::Crosstalk];
        let mut buf = Vec::new();
        write_labels(&mut buf, &l).unwrap();
        assert_eq!(read_labels(&mut buf.as_slice()).unwrap(), l);
    }

    #[test]
    fn tags_round_trip() {
        let frames = vec![
            TagFrame {
                frame_index: 0,
                pixels: vec![vec![Tag { coarse: 3, fine: 17 }], vec![]],
                saturated: vec![],
            },
            TagFrame {
                frame_index: 1,
                pixels: vec![
                    vec![],
                    vec![
                        Tag {
                            coarse: 127_999,
                            fine: 139,
                        },
                        Tag {
                            coarse: 128_000,
                            fine: 6,
                        },
                    ],
                ],
                saturated: vec![],
            },
        ];
        let mut w = TagWriter::new(Vec::new(), 320e-6, 2).unwrap();
        for f in &frames {
            w.write_frame(f).unwrap();
        }
        let buf = w.finish().unwrap();
        assert_eq!(buf.len(), 8 + 8 + 4 + (2 + 5) + 2 + 2 + (2 + 10));
        let r = TagReader::new(buf.as_slice()).unwrap();
        assert_eq!(r.frame_time, 320e-6);
        let back: Vec<TagFrame> = r.collect::<Result<_>>().unwrap();
        assert_eq!(back, frames);
    }

    #[test]
    fn truncated_tags_are_reported() {
        let mut w = TagWriter::new(Vec::new(), 1e-6, 2).unwrap();
        w.write_frame(&TagFrame {
            frame_index: 0,
            pixels: vec![vec![Tag { coarse: 1, fine: 1 }], vec![]],
            saturated: vec![],
        })
        .unwrap();
        let buf = w.finish().unwrap();
        let cut = &buf[..buf.len() - 1];
        let mut r = TagReader::new(cut).unwrap();
        assert!(matches!(r.next_frame(), Err(Error::TooShort(_))));
    }

    #[test]
    fn bits_round_trip_and_short_file() {
        let b: BitBuf = "1011_0000_1".parse().unwrap();
        let mut buf = Vec::new();
        write_bits(&mut buf, &b, 1e-8).unwrap();
        assert_eq!(buf.len(), 24 + 2);
        let (back, period) = read_bits(&mut buf.as_slice()).unwrap();
        assert_eq!(back, b);
        assert_eq!(period, 1e-8);
        assert!(matches!(read_bits(&mut [0x51u8].as_slice()), Err(Error::TooShort(_))));
        assert!(matches!(
            read_bits(&mut &b"QRNGXXXX0000000000000000"[..]),
            Err(Error::Format(_))
        ));
        assert!(matches!(read_bits(&mut &buf[..25]), Err(Error::TooShort(_))));
    }

    #[test]
    fn femtosecond_rounding() {
        assert_eq!(to_fs(2.5e-9 / 140.0), 17_857);
        assert_eq!(to_fs(320e-6), 320_000_000_000);
    }
}
