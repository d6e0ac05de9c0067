use std::fs;
use std::path::Path;

use super::VideoClip;
use crate::error::{io_err, shape_err, Result};
use crate::tensor::{DType, Tensor};

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Writes `[3, H, W]` in `[0, 1]` as binary PPM; values are clamped and
/// rounded half-up to 8 bits.
pub fn write_ppm(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    if t.rank() != 3 || t.shape()[0] != 3 {
        return Err(shape_err!("PPM needs [3, H, W], got {:?}", t.shape()));
    }
    let (h, w) = (t.shape()[1], t.shape()[2]);
    let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
    let d = t.data();
    for i in 0..h * w {
        for c in 0..3 {
            bytes.push(quantize(d[c * h * w + i]));
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn token(&mut self) -> Result<&str> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(io_err!("truncated PPM header"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| io_err!("malformed PPM header"))
    }

    fn number(&mut self) -> Result<usize> {
        let tok = self.token()?;
        tok.parse()
            .map_err(|_| io_err!("malformed PPM header field '{tok}'"))
    }
}

/// Reads a binary 8-bit PPM into `[3, H, W]` f32 values `code / 255`.
pub fn read_ppm(path: impl AsRef<Path>) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    let mut hd = Header {
        bytes: &bytes,
        pos: 0,
    };
    if hd.token()? != "P6" {
        return Err(io_err!("not a binary PPM (P6)"));
    }
    let (w, h, max) = (hd.number()?, hd.number()?, hd.number()?);
    if max != 255 {
        return Err(io_err!("unsupported PPM maxval {max}"));
    }
    // exactly one whitespace byte separates the header from the raster
    let body = &bytes[(hd.pos + 1).min(bytes.len())..];
    if body.len() != 3 * h * w {
        return Err(io_err!(
            "PPM raster has {} bytes, expected {}",
            body.len(),
            3 * h * w
        ));
    }
    let mut data = vec![0.0; 3 * h * w];
    for i in 0..h * w {
        for c in 0..3 {
            data[c * h * w + i] = body[3 * i + c] as f64 / 255.0;
        }
    }
    Tensor::new(&[3, h, w], data, DType::F32)
}

pub fn rct_to_bytes(t: &Tensor) -> Result<Vec<u8>> {
    let rank =
        u8::try_from(t.rank()).map_err(|_| shape_err!("rank {} too large for RCT", t.rank()))?;
    let width = match t.dtype() {
        DType::F32 => 4,
        DType::F64 => 8,
    };
    let mut out = Vec::with_capacity(6 + 4 * t.rank() + width * t.numel());
    out.extend_from_slice(b"RCT1");
    out.push(t.dtype().code());
    out.push(rank);
    for &e in t.shape() {
        let e = u32::try_from(e).map_err(|_| shape_err!("extent {e} too large for RCT"))?;
        out.extend_from_slice(&e.to_le_bytes());
    }
    match t.dtype() {
        DType::F32 => t
            .data()
            .iter()
            .for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        DType::F64 => t
            .data()
            .iter()
            .for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
    }
    Ok(out)
}

pub fn rct_from_bytes(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 6 || &bytes[..4] != b"RCT1" {
        return Err(io_err!("bad RCT magic"));
    }
    let dtype =
        DType::from_code(bytes[4]).ok_or_else(|| io_err!("bad RCT dtype code {}", bytes[4]))?;
    let rank = bytes[5] as usize;
    let mut pos = 6;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let b = bytes
            .get(pos..pos + 4)
            .ok_or_else(|| io_err!("truncated RCT header"))?;
        shape.push(u32::from_le_bytes(b.try_into().unwrap()) as usize);
        pos += 4;
    }
    let n: usize = shape.iter().product();
    let width = match dtype {
        DType::F32 => 4,
        DType::F64 => 8,
    };
    let body = &bytes[pos..];
    if body.len() != n * width {
        return Err(io_err!(
            "RCT body has {} bytes, expected {}",
            body.len(),
            n * width
        ));
    }
    let data = match dtype {
        DType::F32 => body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        DType::F64 => body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    Tensor::new(&shape, data, dtype)
}

pub fn write_rct(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, rct_to_bytes(t)?)?;
    Ok(())
}

pub fn read_rct(path: impl AsRef<Path>) -> Result<Tensor> {
    rct_from_bytes(&fs::read(path)?)
}

/// Contents of a `clip.meta` file.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClipMeta {
    pub t: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub frame_rate: f64,
}

impl ClipMeta {
    pub fn render(&self) -> String {
        format!(
            "T={}\nc={}\nH={}\nW={}\nframe_rate={}\n",
            self.t, self.c, self.h, self.w, self.frame_rate
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = ClipMeta {
            t: 0,
            c: 0,
            h: 0,
            w: 0,
            frame_rate: 0.0,
        };
        let mut seen = 0;
        for line in text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
        {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| io_err!("clip.meta line without '=': {line}"))?;
            let (k, v) = (k.trim(), v.trim());
            let num = || {
                v.parse::<usize>()
                    .map_err(|_| io_err!("clip.meta: bad value for {k}: {v}"))
            };
            match k {
                "T" => m.t = num()?,
                "c" => m.c = num()?,
                "H" => m.h = num()?,
                "W" => m.w = num()?,
                "frame_rate" => {
                    m.frame_rate = v
                        .parse()
                        .map_err(|_| io_err!("clip.meta: bad frame_rate {v}"))?
                }
                _ => continue,
            }
            seen += 1;
        }
        if seen < 5 {
            return Err(io_err!("clip.meta is missing keys"));
        }
        Ok(m)
    }
}

pub fn frame_name(t: usize) -> String {
    format!("frame_{t:05}.ppm")
}

/// Writes `frame_%05d.ppm` files and `clip.meta` into `dir`.
pub fn write_clip(clip: &VideoClip, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    if clip.channels() != 3 {
        return Err(shape_err!(
            "clip directories hold 3-channel frames, got {}",
            clip.channels()
        ));
    }
    fs::create_dir_all(dir)?;
    for t in 0..clip.len() {
        write_ppm(&clip.frame(t)?, dir.join(frame_name(t)))?;
    }
    let (h, w) = clip.size();
    let meta = ClipMeta {
        t: clip.len(),
        c: 3,
        h,
        w,
        frame_rate: clip.frame_rate,
    };
    fs::write(dir.join("clip.meta"), meta.render())?;
    Ok(())
}

pub fn read_clip(dir: impl AsRef<Path>) -> Result<VideoClip> {
    let dir = dir.as_ref();
    let meta_path = dir.join("clip.meta");
    let text =
        fs::read_to_string(&meta_path).map_err(|e| io_err!("{}: {e}", meta_path.display()))?;
    let meta = ClipMeta::parse(&text)?;
    let mut frames = Vec::with_capacity(meta.t);
    for t in 0..meta.t {
        let f = read_ppm(dir.join(frame_name(t)))?;
        if f.shape() != [meta.c, meta.h, meta.w] {
            return Err(io_err!(
                "frame {t} has shape {:?}, clip.meta says {:?}",
                f.shape(),
                [meta.c, meta.h, meta.w]
            ));
        }
        frames.push(f);
    }
    if frames.is_empty() {
        return Err(io_err!("clip has no frames"));
    }
    VideoClip::from_frames(&frames, meta.frame_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn ppm_known_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ppm");
        // 2x2 image; channel planes
        let t = Tensor::from_f64(
            &[3, 2, 2],
            vec![
                0.0, 1.0, 0.5, 0.2, 1.0, 0.0, 0.25, 0.75, 0.1, 0.9, 0.999, 0.002,
            ],
        )
        .unwrap();
        write_ppm(&t, &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        let body = &bytes[b"P6\n2 2\n255\n".len()..];
        // 0.5*255 = 127.5 rounds up; 0.25*255 = 63.75; 0.002*255 = 0.51
        assert_eq!(body, &[0, 255, 26, 255, 0, 230, 128, 64, 255, 51, 191, 1]);
        let back = read_ppm(&p).unwrap();
        let codes: Vec<u8> = back
            .data()
            .iter()
            .map(|v| (v * 255.0).round() as u8)
            .collect();
        assert_eq!(
            codes,
            vec![0, 255, 128, 51, 255, 0, 64, 191, 26, 230, 255, 1]
        );
    }

    #[test]
    fn ppm_round_trip_and_zeros() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.ppm");
        let t = Tensor::uniform(&[3, 5, 7], 0.0, 1.0, &mut RngStream::new(1), DType::F32);
        write_ppm(&t, &p).unwrap();
        assert!(read_ppm(&p).unwrap().max_abs_diff(&t).unwrap() <= 1.0 / 255.0 + 1e-7);
        write_ppm(&Tensor::zeros(&[3, 2, 3], DType::F32), &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert!(bytes[b"P6\n3 2\n255\n".len()..].iter().all(|&b| b == 0));
        fs::write(&p, b"P5\n1 1\n255\n\0").unwrap();
        assert!(matches!(read_ppm(&p), Err(crate::Error::Io(_))));
    }

    #[test]
    fn rct_round_trips() {
        let mut rng = RngStream::new(2);
        for dtype in [DType::F32, DType::F64] {
            let t = Tensor::randn(&[2, 3, 4], 1.0, &mut rng, dtype);
            let bytes = rct_to_bytes(&t).unwrap();
            let back = rct_from_bytes(&bytes).unwrap();
            assert_eq!(rct_to_bytes(&back).unwrap(), bytes);
            assert!(back
                .data()
                .iter()
                .zip(t.data())
                .all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        let s = Tensor::scalar(3.5, DType::F64);
        let bytes = rct_to_bytes(&s).unwrap();
        assert_eq!(bytes.len(), 6 + 8);
        assert_eq!(rct_from_bytes(&bytes).unwrap(), s);
        assert!(matches!(
            rct_from_bytes(&bytes[..10]),
            Err(crate::Error::Io(_))
        ));
        assert!(matches!(
            rct_from_bytes(b"RCT9\x01\x00"),
            Err(crate::Error::Io(_))
        ));
        let mut bad = bytes.clone();
        bad[4] = 7;
        assert!(matches!(rct_from_bytes(&bad), Err(crate::Error::Io(_))));
    }

    #[test]
    fn rct_header_layout() {
        let t = Tensor::zeros(&[2, 1], DType::F32);
        let b = rct_to_bytes(&t).unwrap();
        assert_eq!(
            &b[..14],
            &[b'R', b'C', b'T', b'1', 1, 2, 2, 0, 0, 0, 1, 0, 0, 0]
        );
        assert_eq!(b.len(), 14 + 8);
    }

    #[test]
    fn clip_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let frames = Tensor::uniform(&[3, 3, 4, 6], 0.0, 1.0, &mut RngStream::new(3), DType::F32);
        let clip = VideoClip::new(frames, 30.0).unwrap();
        write_clip(&clip, dir.path()).unwrap();
        assert!(dir.path().join("frame_00002.ppm").exists());
        let back = read_clip(dir.path()).unwrap();
        assert_eq!(back.frames.shape(), clip.frames.shape());
        assert_eq!(back.frame_rate, 30.0);
        assert!(back.frames.max_abs_diff(&clip.frames).unwrap() <= 1.0 / 255.0 + 1e-7);
        assert!(read_clip(dir.path().join("missing")).is_err());
    }
}
