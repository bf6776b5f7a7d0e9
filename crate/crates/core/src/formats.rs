//! Little-endian binary containers: `DCBK` codebooks, `DVID` videos,
//! `DTOK` token grids and `DACT` action tracks.

use crate::error::{Error, Result};
use crate::prompt::ActionTrack;
use crate::tokenizer::{Codebook, TokenGrid, Video};
use std::fs;
use std::path::Path;

pub const FORMAT_VERSION: u32 = 1;

struct Reader<'a> {
    what: &'static str,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(what: &'static str, buf: &'a [u8], magic: &[u8; 4]) -> Result<Self> {
        if buf.len() < 8 || &buf[..4] != magic {
            return Err(Error::Format { what, reason: "bad magic".into() });
        }
        let mut r = Reader { what, buf, pos: 4 };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion { what, found: version, expected: FORMAT_VERSION });
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format { what: self.what, reason: "truncated".into() });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn dim(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format { what: self.what, reason: "trailing bytes".into() });
        }
        Ok(())
    }
}

fn header(magic: &[u8; 4], fields: &[u32]) -> Vec<u8> {
    let mut out = magic.to_vec();
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for f in fields {
        out.extend_from_slice(&f.to_le_bytes());
    }
    out
}

fn dim32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::invalid(format!("{what} {v} does not fit in u32")))
}

pub fn codebook_to_bytes(cb: &Codebook) -> Result<Vec<u8>> {
    let mut out = header(b"DCBK", &[dim32(cb.vocab, "vocab")?, dim32(cb.patch_size, "patch size")?]);
    for v in &cb.vectors {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn codebook_from_bytes(buf: &[u8]) -> Result<Codebook> {
    let mut r = Reader::new("codebook", buf, b"DCBK")?;
    let vocab = r.dim()?;
    let f = r.dim()?;
    let n = vocab
        .checked_mul(3 * f * f)
        .ok_or_else(|| Error::Format { what: "codebook", reason: "size overflow".into() })?;
    let raw = r.take(n * 4)?;
    let vectors = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    r.finish()?;
    Codebook::new(vocab, f, vectors)
}

pub fn video_to_bytes(v: &Video) -> Result<Vec<u8>> {
    let mut out = header(
        b"DVID",
        &[dim32(v.frames, "frames")?, dim32(v.height, "height")?, dim32(v.width, "width")?],
    );
    out.extend_from_slice(&v.pixels);
    Ok(out)
}

pub fn video_from_bytes(buf: &[u8]) -> Result<Video> {
    let mut r = Reader::new("video", buf, b"DVID")?;
    let (n, h, w) = (r.dim()?, r.dim()?, r.dim()?);
    let pixels = r.take(n * h * w * 3)?.to_vec();
    r.finish()?;
    Video::new(n, h, w, pixels)
}

pub fn tokens_to_bytes(t: &TokenGrid) -> Result<Vec<u8>> {
    if t.vocab > u16::MAX as usize {
        return Err(Error::invalid("vocabulary does not fit u16 tokens"));
    }
    let mut out = header(
        b"DTOK",
        &[dim32(t.frames, "frames")?, dim32(t.th, "rows")?, dim32(t.tw, "cols")?, dim32(t.vocab, "vocab")?],
    );
    for &tok in &t.tokens {
        out.extend_from_slice(&(tok as u16).to_le_bytes());
    }
    Ok(out)
}

pub fn tokens_from_bytes(buf: &[u8]) -> Result<TokenGrid> {
    let mut r = Reader::new("token", buf, b"DTOK")?;
    let (n, h, w, vocab) = (r.dim()?, r.dim()?, r.dim()?, r.dim()?);
    let raw = r.take(n * h * w * 2)?;
    let tokens = raw.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]]) as u32).collect();
    r.finish()?;
    TokenGrid::new(n, h, w, vocab, tokens)
}

/// `DACT` is a 16-byte header (magic, version, frame count, reserved zero)
/// followed by `(yaw_rate, speed)` f32 pairs.
pub fn actions_to_bytes(a: &ActionTrack) -> Result<Vec<u8>> {
    let mut out = header(b"DACT", &[dim32(a.len(), "frames")?, 0]);
    for &(yaw, speed) in &a.steps {
        out.extend_from_slice(&yaw.to_le_bytes());
        out.extend_from_slice(&speed.to_le_bytes());
    }
    Ok(out)
}

pub fn actions_from_bytes(buf: &[u8]) -> Result<ActionTrack> {
    let mut r = Reader::new("action", buf, b"DACT")?;
    let n = r.dim()?;
    let _reserved = r.u32()?;
    let raw = r.take(n * 8)?;
    let steps = raw
        .chunks_exact(8)
        .map(|c| {
            (
                f32::from_le_bytes(c[..4].try_into().unwrap()),
                f32::from_le_bytes(c[4..].try_into().unwrap()),
            )
        })
        .collect();
    r.finish()?;
    Ok(ActionTrack { steps })
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_codebook(path: &Path) -> Result<Codebook> {
    codebook_from_bytes(&read_file(path)?)
}

pub fn write_codebook(path: &Path, cb: &Codebook) -> Result<()> {
    write_file(path, &codebook_to_bytes(cb)?)
}

pub fn read_video(path: &Path) -> Result<Video> {
    video_from_bytes(&read_file(path)?)
}

pub fn write_video(path: &Path, v: &Video) -> Result<()> {
    write_file(path, &video_to_bytes(v)?)
}

pub fn read_tokens(path: &Path) -> Result<TokenGrid> {
    tokens_from_bytes(&read_file(path)?)
}

pub fn write_tokens(path: &Path, t: &TokenGrid) -> Result<()> {
    write_file(path, &tokens_to_bytes(t)?)
}

pub fn read_actions(path: &Path) -> Result<ActionTrack> {
    actions_from_bytes(&read_file(path)?)
}

pub fn write_actions(path: &Path, a: &ActionTrack) -> Result<()> {
    write_file(path, &actions_to_bytes(a)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn video_header_layout() {
        let v = Video::filled(2, 8, 4, [1, 2, 3]);
        let b = video_to_bytes(&v).unwrap();
        assert_eq!(&b[..4], b"DVID");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 8);
        assert_eq!(u32::from_le_bytes(b[16..20].try_into().unwrap()), 4);
        assert_eq!(b.len(), 20 + 2 * 8 * 4 * 3);
        assert_eq!(&b[20..23], &[1, 2, 3]);
    }

    #[test]
    fn token_file_stores_u16_after_vocab() {
        let t = TokenGrid::new(1, 1, 2, 300, vec![299, 300]).unwrap();
        let b = tokens_to_bytes(&t).unwrap();
        assert_eq!(&b[..4], b"DTOK");
        assert_eq!(u32::from_le_bytes(b[20..24].try_into().unwrap()), 300);
        assert_eq!(&b[24..], &[43, 1, 44, 1]);
        assert_eq!(tokens_from_bytes(&b).unwrap(), t);
    }

    #[test]
    fn action_header_is_sixteen_bytes() {
        let a = ActionTrack { steps: vec![(0.5, 1.0), (-0.25, 2.0)] };
        let b = actions_to_bytes(&a).unwrap();
        assert_eq!(&b[..4], b"DACT");
        assert_eq!(b.len(), 16 + 16);
        assert_eq!(actions_from_bytes(&b).unwrap(), a);
    }

    #[test]
    fn wrong_magic_and_truncation_are_errors() {
        let v = Video::filled(1, 2, 2, [0, 0, 0]);
        let mut b = video_to_bytes(&v).unwrap();
        assert!(tokens_from_bytes(&b).is_err());
        b.pop();
        assert!(video_from_bytes(&b).is_err());
        let mut b = video_to_bytes(&v).unwrap();
        b[4] = 9;
        assert!(matches!(video_from_bytes(&b), Err(Error::UnsupportedVersion { found: 9, .. })));
    }

    proptest! {
        #[test]
        fn codebook_round_trip(bytes in proptest::collection::vec(any::<u8>(), 2 * 12)) {
            let cb = Codebook::new(2, 2, bytes.iter().map(|&b| b as f32 / 255.0).collect()).unwrap();
            let back = codebook_from_bytes(&codebook_to_bytes(&cb).unwrap()).unwrap();
            prop_assert_eq!(cb, back);
        }
    }
}
