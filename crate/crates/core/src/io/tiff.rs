//! Baseline TIFF container codec.
//!
//! The reader accepts classic (32-bit offset) TIFF in either byte order, stripped or
//! tiled, chunky or planar, uncompressed or deflate, with optional horizontal
//! differencing on integer data. Multi-page files whose full-resolution pages share
//! dimensions and sample type are read as consecutive bands.
//!
//! The writer always emits little-endian, stripped, band-interleaved-by-plane
//! (`PlanarConfiguration = 2`) files.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use flate2::read::ZlibDecoder;
use flate2::write::ZlibEncoder;

use crate::error::{Error, Result};
use crate::raster::{BandBuffer, GeoMeta, MetaValue, MultiBandRaster, SampleEncoding};

mod tag {
    pub const NEW_SUBFILE_TYPE: u16 = 254;
    pub const IMAGE_WIDTH: u16 = 256;
    pub const IMAGE_LENGTH: u16 = 257;
    pub const BITS_PER_SAMPLE: u16 = 258;
    pub const COMPRESSION: u16 = 259;
    pub const PHOTOMETRIC: u16 = 262;
    pub const IMAGE_DESCRIPTION: u16 = 270;
    pub const STRIP_OFFSETS: u16 = 273;
    pub const SAMPLES_PER_PIXEL: u16 = 277;
    pub const ROWS_PER_STRIP: u16 = 278;
    pub const STRIP_BYTE_COUNTS: u16 = 279;
    pub const PLANAR_CONFIGURATION: u16 = 284;
    pub const DATE_TIME: u16 = 306;
    pub const PREDICTOR: u16 = 317;
    pub const TILE_WIDTH: u16 = 322;
    pub const TILE_LENGTH: u16 = 323;
    pub const TILE_OFFSETS: u16 = 324;
    pub const TILE_BYTE_COUNTS: u16 = 325;
    pub const EXTRA_SAMPLES: u16 = 338;
    pub const SAMPLE_FORMAT: u16 = 339;
    pub const MODEL_PIXEL_SCALE: u16 = 33550;
    pub const MODEL_TIEPOINT: u16 = 33922;
    pub const MODEL_TRANSFORMATION: u16 = 34264;
    pub const GEO_KEY_DIRECTORY: u16 = 34735;
    pub const GEO_DOUBLE_PARAMS: u16 = 34736;
    pub const GEO_ASCII_PARAMS: u16 = 34737;
    pub const GDAL_METADATA: u16 = 42112;
    pub const GDAL_NODATA: u16 = 42113;
}

const TYPE_ASCII: u16 = 2;
const TYPE_SHORT: u16 = 3;
const TYPE_LONG: u16 = 4;
const TYPE_DOUBLE: u16 = 12;

#[derive(Clone, Copy)]
enum TagKind {
    Ascii,
    Short,
    Double,
}

/// Metadata keys that map onto dedicated TIFF tags.
const META_TAGS: [(&str, u16, TagKind); 8] = [
    ("ImageDescription", tag::IMAGE_DESCRIPTION, TagKind::Ascii),
    ("DateTime", tag::DATE_TIME, TagKind::Ascii),
    ("ModelPixelScale", tag::MODEL_PIXEL_SCALE, TagKind::Double),
    ("ModelTiepoint", tag::MODEL_TIEPOINT, TagKind::Double),
    ("ModelTransformation", tag::MODEL_TRANSFORMATION, TagKind::Double),
    ("GeoKeyDirectory", tag::GEO_KEY_DIRECTORY, TagKind::Short),
    ("GeoDoubleParams", tag::GEO_DOUBLE_PARAMS, TagKind::Double),
    ("GeoAsciiParams", tag::GEO_ASCII_PARAMS, TagKind::Ascii),
];

#[derive(Clone, Debug)]
enum TagValue {
    Unsigned(Vec<u64>),
    Signed(Vec<i64>),
    Float(Vec<f64>),
    Ascii(String),
}

impl TagValue {
    fn as_unsigned(&self) -> Option<&[u64]> {
        match self {
            TagValue::Unsigned(v) => Some(v),
            _ => None,
        }
    }

    fn as_f64s(&self) -> Option<Vec<f64>> {
        match self {
            TagValue::Unsigned(v) => Some(v.iter().map(|&x| x as f64).collect()),
            TagValue::Signed(v) => Some(v.iter().map(|&x| x as f64).collect()),
            TagValue::Float(v) => Some(v.clone()),
            TagValue::Ascii(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum SampleKind {
    U8,
    I8,
    U16,
    I16,
    F32,
}

impl SampleKind {
    fn from_tags(format: u64, bits: u64) -> Result<Self> {
        match (format, bits) {
            (1, 8) => Ok(SampleKind::U8),
            (2, 8) => Ok(SampleKind::I8),
            (1, 16) => Ok(SampleKind::U16),
            (2, 16) => Ok(SampleKind::I16),
            (3, 32) => Ok(SampleKind::F32),
            (f, b) => Err(Error::Unsupported(format!(
                "sample format {f} with {b} bits per sample"
            ))),
        }
    }

    fn size(self) -> usize {
        match self {
            SampleKind::U8 | SampleKind::I8 => 1,
            SampleKind::U16 | SampleKind::I16 => 2,
            SampleKind::F32 => 4,
        }
    }

    fn encoding(self) -> SampleEncoding {
        match self {
            SampleKind::F32 => SampleEncoding::Float32Reflectance,
            _ => SampleEncoding::Int16Dn,
        }
    }
}

struct Cursor<'a> {
    data: &'a [u8],
    big_endian: bool,
}

impl<'a> Cursor<'a> {
    fn slice(&self, offset: usize, len: usize) -> Result<&'a [u8]> {
        offset
            .checked_add(len)
            .and_then(|end| self.data.get(offset..end))
            .ok_or_else(|| Error::Format(format!("read of {len} bytes at {offset} past end of file")))
    }

    fn u16(&self, offset: usize) -> Result<u16> {
        let b = self.slice(offset, 2)?;
        Ok(if self.big_endian {
            BigEndian::read_u16(b)
        } else {
            LittleEndian::read_u16(b)
        })
    }

    fn u32(&self, offset: usize) -> Result<u32> {
        let b = self.slice(offset, 4)?;
        Ok(if self.big_endian {
            BigEndian::read_u32(b)
        } else {
            LittleEndian::read_u32(b)
        })
    }

    fn read_entry(&self, entry: usize) -> Result<(u16, Option<TagValue>)> {
        let code = self.u16(entry)?;
        let ty = self.u16(entry + 2)?;
        let count = self.u32(entry + 4)? as usize;
        let elem = match ty {
            1 | 2 | 6 | 7 => 1,
            3 | 8 => 2,
            4 | 9 | 11 => 4,
            5 | 10 | 12 => 8,
            // Unknown field types are skipped as the baseline requires.
            _ => return Ok((code, None)),
        };
        let total = count
            .checked_mul(elem)
            .ok_or_else(|| Error::Format(format!("tag {code} count overflow")))?;
        let start = if total <= 4 {
            entry + 8
        } else {
            self.u32(entry + 8)? as usize
        };
        let raw = self.slice(start, total)?;
        let be = self.big_endian;
        let rd16 = |b: &[u8]| if be { BigEndian::read_u16(b) } else { LittleEndian::read_u16(b) };
        let rd32 = |b: &[u8]| if be { BigEndian::read_u32(b) } else { LittleEndian::read_u32(b) };
        let rd64 = |b: &[u8]| if be { BigEndian::read_u64(b) } else { LittleEndian::read_u64(b) };
        let value = match ty {
            1 | 7 => TagValue::Unsigned(raw.iter().map(|&b| u64::from(b)).collect()),
            2 => {
                let text = raw.split(|&b| b == 0).next().unwrap_or_default();
                TagValue::Ascii(String::from_utf8_lossy(text).into_owned())
            }
            3 => TagValue::Unsigned(raw.chunks_exact(2).map(|b| u64::from(rd16(b))).collect()),
            4 => TagValue::Unsigned(raw.chunks_exact(4).map(|b| u64::from(rd32(b))).collect()),
            5 => TagValue::Float(
                raw.chunks_exact(8)
                    .map(|b| f64::from(rd32(&b[..4])) / f64::from(rd32(&b[4..])))
                    .collect(),
            ),
            6 => TagValue::Signed(raw.iter().map(|&b| i64::from(b as i8)).collect()),
            8 => TagValue::Signed(raw.chunks_exact(2).map(|b| i64::from(rd16(b) as i16)).collect()),
            9 => TagValue::Signed(raw.chunks_exact(4).map(|b| i64::from(rd32(b) as i32)).collect()),
            10 => TagValue::Float(
                raw.chunks_exact(8)
                    .map(|b| f64::from(rd32(&b[..4]) as i32) / f64::from(rd32(&b[4..]) as i32))
                    .collect(),
            ),
            11 => TagValue::Float(
                raw.chunks_exact(4)
                    .map(|b| f64::from(f32::from_bits(rd32(b))))
                    .collect(),
            ),
            12 => TagValue::Float(raw.chunks_exact(8).map(|b| f64::from_bits(rd64(b))).collect()),
            _ => unreachable!(),
        };
        Ok((code, Some(value)))
    }
}

type Ifd = BTreeMap<u16, TagValue>;

fn required_scalar(ifd: &Ifd, code: u16, name: &str) -> Result<u64> {
    ifd.get(&code)
        .and_then(TagValue::as_unsigned)
        .and_then(|v| v.first().copied())
        .ok_or_else(|| Error::Format(format!("missing or invalid {name} tag")))
}

fn optional_scalar(ifd: &Ifd, code: u16, default: u64) -> Result<u64> {
    match ifd.get(&code) {
        None => Ok(default),
        Some(v) => v
            .as_unsigned()
            .and_then(|v| v.first().copied())
            .ok_or_else(|| Error::Format(format!("tag {code} is not an unsigned scalar"))),
    }
}

/// Per-sample tag (BitsPerSample, SampleFormat): must hold one value for every sample.
fn per_sample(ifd: &Ifd, code: u16, spp: usize, default: u64) -> Result<Vec<u64>> {
    match ifd.get(&code) {
        None => Ok(vec![default; spp]),
        Some(v) => {
            let v = v
                .as_unsigned()
                .ok_or_else(|| Error::Format(format!("tag {code} is not unsigned")))?;
            match v.len() {
                1 => Ok(vec![v[0]; spp]),
                n if n >= spp => Ok(v[..spp].to_vec()),
                n => Err(Error::Format(format!(
                    "tag {code} has {n} values for {spp} samples"
                ))),
            }
        }
    }
}

struct Page {
    width: usize,
    height: usize,
    kind: SampleKind,
    bands: Vec<BandBuffer>,
}

/// Decoded file content before it is turned into a [`MultiBandRaster`].
pub(crate) struct DecodedTiff {
    pub width: usize,
    pub height: usize,
    pub bands: Vec<BandBuffer>,
    pub band_names: Option<Vec<String>>,
    pub nodata: Option<f64>,
    pub geo_meta: GeoMeta,
}

pub(crate) fn decode(data: &[u8]) -> Result<DecodedTiff> {
    if data.len() < 8 {
        return Err(Error::Format("file shorter than a tiff header".into()));
    }
    let big_endian = match &data[..2] {
        b"II" => false,
        b"MM" => true,
        _ => return Err(Error::Format("bad byte-order mark".into())),
    };
    let cur = Cursor { data, big_endian };
    match cur.u16(2)? {
        42 => {}
        43 => return Err(Error::Unsupported("BigTIFF".into())),
        m => return Err(Error::Format(format!("bad magic number {m}"))),
    }

    let mut ifds = Vec::new();
    let mut next = cur.u32(4)? as usize;
    let mut seen = std::collections::HashSet::new();
    while next != 0 {
        if !seen.insert(next) {
            return Err(Error::Format("IFD chain loops".into()));
        }
        let count = cur.u16(next)? as usize;
        let mut ifd = Ifd::new();
        for i in 0..count {
            let (code, value) = cur.read_entry(next + 2 + 12 * i)?;
            if let Some(value) = value {
                ifd.insert(code, value);
            }
        }
        ifds.push(ifd);
        next = cur.u32(next + 2 + 12 * count)? as usize;
    }
    if ifds.is_empty() {
        return Err(Error::Format("no image file directory".into()));
    }

    let mut pages = Vec::new();
    for ifd in &ifds {
        // Skip reduced-resolution overviews and masks.
        if optional_scalar(ifd, tag::NEW_SUBFILE_TYPE, 0)? & 0b101 != 0 {
            continue;
        }
        pages.push(decode_page(&cur, ifd)?);
    }
    let first = &pages[0];
    let (width, height, kind) = (first.width, first.height, first.kind);
    let mut bands = Vec::new();
    for (i, page) in pages.into_iter().enumerate() {
        if page.width != width || page.height != height {
            return Err(Error::DimensionMismatch(format!(
                "page {i} is {}x{}, page 0 is {width}x{height}",
                page.width, page.height
            )));
        }
        if page.kind.encoding() != kind.encoding() {
            return Err(Error::Unsupported(format!(
                "mixed sample types across bands ({:?} and {:?})",
                kind, page.kind
            )));
        }
        bands.extend(page.bands);
    }

    let main = &ifds[0];
    let mut geo_meta = GeoMeta::new();
    for (key, code, _) in META_TAGS {
        match main.get(&code) {
            Some(TagValue::Ascii(s)) => {
                geo_meta.insert(key.to_string(), MetaValue::Text(s.clone()));
            }
            Some(v) => {
                if let Some(nums) = v.as_f64s() {
                    geo_meta.insert(key.to_string(), MetaValue::Numbers(nums));
                }
            }
            None => {}
        }
    }
    let mut band_names = None;
    if let Some(TagValue::Ascii(xml)) = main.get(&tag::GDAL_METADATA) {
        let items = parse_gdal_metadata(xml);
        let mut names = vec![None; bands.len()];
        for item in items {
            match (item.sample, item.role.as_deref()) {
                (Some(s), Some("description")) if s < names.len() => names[s] = Some(item.text),
                (Some(_), _) => {}
                (None, _) => {
                    let value = if item.numeric {
                        let nums = if item.text.is_empty() {
                            Ok(Vec::new())
                        } else {
                            item.text
                                .split(',')
                                .map(|t| t.trim().parse::<f64>())
                                .collect::<std::result::Result<Vec<_>, _>>()
                        };
                        nums.map(MetaValue::Numbers)
                            .unwrap_or(MetaValue::Text(item.text))
                    } else {
                        MetaValue::Text(item.text)
                    };
                    geo_meta.insert(item.name, value);
                }
            }
        }
        if names.iter().all(Option::is_some) {
            band_names = Some(names.into_iter().map(Option::unwrap).collect());
        }
    }
    let nodata = match main.get(&tag::GDAL_NODATA) {
        Some(TagValue::Ascii(s)) => Some(parse_nodata(s)?),
        _ => None,
    };

    Ok(DecodedTiff {
        width,
        height,
        bands,
        band_names,
        nodata,
        geo_meta,
    })
}

fn parse_nodata(text: &str) -> Result<f64> {
    let t = text.trim();
    t.parse::<f64>()
        .or_else(|_| match t.to_ascii_lowercase().as_str() {
            "nan" | "-nan" => Ok(f64::NAN),
            _ => Err(()),
        })
        .map_err(|_| Error::Format(format!("unparseable nodata tag `{t}`")))
}

fn decode_page(cur: &Cursor<'_>, ifd: &Ifd) -> Result<Page> {
    let width = required_scalar(ifd, tag::IMAGE_WIDTH, "ImageWidth")? as usize;
    let height = required_scalar(ifd, tag::IMAGE_LENGTH, "ImageLength")? as usize;
    if width == 0 || height == 0 {
        return Err(Error::Format("zero image dimension".into()));
    }
    let spp = optional_scalar(ifd, tag::SAMPLES_PER_PIXEL, 1)? as usize;
    if spp == 0 {
        return Err(Error::Format("zero samples per pixel".into()));
    }
    let bits = per_sample(ifd, tag::BITS_PER_SAMPLE, spp, 1)?;
    let formats = per_sample(ifd, tag::SAMPLE_FORMAT, spp, 1)?;
    if bits.iter().any(|&b| b != bits[0]) || formats.iter().any(|&f| f != formats[0]) {
        return Err(Error::Unsupported(format!(
            "mixed sample types across bands (bits {bits:?}, formats {formats:?})"
        )));
    }
    let kind = SampleKind::from_tags(formats[0], bits[0])?;
    let compression = optional_scalar(ifd, tag::COMPRESSION, 1)?;
    if !matches!(compression, 1 | 8 | 32946) {
        return Err(Error::Unsupported(format!("compression scheme {compression}")));
    }
    let predictor = optional_scalar(ifd, tag::PREDICTOR, 1)?;
    match predictor {
        1 => {}
        2 if kind != SampleKind::F32 => {}
        p => return Err(Error::Unsupported(format!("predictor {p} for {kind:?} samples"))),
    }
    let planar = match optional_scalar(ifd, tag::PLANAR_CONFIGURATION, 1)? {
        1 => false,
        2 => true,
        p => return Err(Error::Format(format!("planar configuration {p}"))),
    };

    let (chunk_w, chunk_h, offsets, counts) = if ifd.contains_key(&tag::TILE_WIDTH) {
        (
            required_scalar(ifd, tag::TILE_WIDTH, "TileWidth")? as usize,
            required_scalar(ifd, tag::TILE_LENGTH, "TileLength")? as usize,
            ifd.get(&tag::TILE_OFFSETS),
            ifd.get(&tag::TILE_BYTE_COUNTS),
        )
    } else {
        let rps = optional_scalar(ifd, tag::ROWS_PER_STRIP, u64::from(u32::MAX))?;
        (
            width,
            (rps as usize).min(height),
            ifd.get(&tag::STRIP_OFFSETS),
            ifd.get(&tag::STRIP_BYTE_COUNTS),
        )
    };
    if chunk_w == 0 || chunk_h == 0 {
        return Err(Error::Format("zero chunk dimension".into()));
    }
    let offsets = offsets
        .and_then(TagValue::as_unsigned)
        .ok_or_else(|| Error::Format("missing chunk offsets".into()))?;
    let counts = counts
        .and_then(TagValue::as_unsigned)
        .ok_or_else(|| Error::Format("missing chunk byte counts".into()))?;
    let across = width.div_ceil(chunk_w);
    let down = height.div_ceil(chunk_h);
    let planes = if planar { spp } else { 1 };
    let expected = across * down * planes;
    if offsets.len() < expected || counts.len() < expected {
        return Err(Error::Format(format!(
            "expected {expected} chunks, found {} offsets and {} byte counts",
            offsets.len(),
            counts.len()
        )));
    }

    let samples_per_chunk_px = if planar { 1 } else { spp };
    let row_bytes = chunk_w * samples_per_chunk_px * kind.size();
    let chunk_bytes = row_bytes * chunk_h;
    let mut bands: Vec<BandBuffer> = (0..spp)
        .map(|_| match kind.encoding() {
            SampleEncoding::Int16Dn => BandBuffer::Int16(vec![0; width * height]),
            SampleEncoding::Float32Reflectance => BandBuffer::Float32(vec![0.0; width * height]),
        })
        .collect();

    for plane in 0..planes {
        for cy in 0..down {
            for cx in 0..across {
                let idx = plane * across * down + cy * across + cx;
                let raw = cur.slice(offsets[idx] as usize, counts[idx] as usize)?;
                let mut buf = if compression == 1 {
                    raw.to_vec()
                } else {
                    let mut out = Vec::with_capacity(chunk_bytes);
                    ZlibDecoder::new(raw)
                        .read_to_end(&mut out)
                        .map_err(|e| Error::Format(format!("deflate stream: {e}")))?;
                    out
                };
                let x0 = cx * chunk_w;
                let y0 = cy * chunk_h;
                let valid_w = chunk_w.min(width - x0);
                let valid_h = chunk_h.min(height - y0);
                // Short final strips are legal; tiles are always full size.
                let rows_present = (buf.len() / row_bytes).min(chunk_h);
                if rows_present < valid_h {
                    return Err(Error::Format(format!(
                        "chunk {idx} holds {} bytes, need {}",
                        buf.len(),
                        valid_h * row_bytes
                    )));
                }
                if predictor == 2 {
                    undo_horizontal_differencing(
                        &mut buf[..rows_present * row_bytes],
                        row_bytes,
                        samples_per_chunk_px,
                        kind,
                        cur.big_endian,
                    );
                }
                for row in 0..valid_h {
                    let line = &buf[row * row_bytes..(row + 1) * row_bytes];
                    let dst_start = (y0 + row) * width + x0;
                    for s in 0..samples_per_chunk_px {
                        let band = if planar { plane } else { s };
                        store_samples(
                            &mut bands[band],
                            dst_start,
                            line,
                            s,
                            samples_per_chunk_px,
                            valid_w,
                            kind,
                            cur.big_endian,
                        )?;
                    }
                }
            }
        }
    }
    Ok(Page {
        width,
        height,
        kind,
        bands,
    })
}

#[allow(clippy::too_many_arguments)]
fn store_samples(
    band: &mut BandBuffer,
    dst_start: usize,
    line: &[u8],
    sample: usize,
    stride: usize,
    count: usize,
    kind: SampleKind,
    big_endian: bool,
) -> Result<()> {
    let size = kind.size();
    let at = |i: usize| &line[(i * stride + sample) * size..(i * stride + sample + 1) * size];
    let rd16 = |b: &[u8]| if big_endian { BigEndian::read_u16(b) } else { LittleEndian::read_u16(b) };
    let rd32 = |b: &[u8]| if big_endian { BigEndian::read_u32(b) } else { LittleEndian::read_u32(b) };
    match band {
        BandBuffer::Int16(dst) => {
            let dst = &mut dst[dst_start..dst_start + count];
            for (i, d) in dst.iter_mut().enumerate() {
                let b = at(i);
                *d = match kind {
                    SampleKind::U8 => i16::from(b[0]),
                    SampleKind::I8 => i16::from(b[0] as i8),
                    SampleKind::I16 => rd16(b) as i16,
                    SampleKind::U16 => {
                        let v = rd16(b);
                        i16::try_from(v).map_err(|_| Error::OutOfRange {
                            encoding: "int16-DN",
                            value: f64::from(v),
                        })?
                    }
                    SampleKind::F32 => unreachable!(),
                };
            }
        }
        BandBuffer::Float32(dst) => {
            let dst = &mut dst[dst_start..dst_start + count];
            for (i, d) in dst.iter_mut().enumerate() {
                *d = f32::from_bits(rd32(at(i)));
            }
        }
    }
    Ok(())
}

fn undo_horizontal_differencing(
    buf: &mut [u8],
    row_bytes: usize,
    spp: usize,
    kind: SampleKind,
    big_endian: bool,
) {
    for row in buf.chunks_exact_mut(row_bytes) {
        match kind.size() {
            1 => {
                for i in spp..row.len() {
                    row[i] = row[i].wrapping_add(row[i - spp]);
                }
            }
            2 => {
                let n = row.len() / 2;
                for i in spp..n {
                    let (prev, cur) = if big_endian {
                        (BigEndian::read_u16(&row[(i - spp) * 2..]), BigEndian::read_u16(&row[i * 2..]))
                    } else {
                        (
                            LittleEndian::read_u16(&row[(i - spp) * 2..]),
                            LittleEndian::read_u16(&row[i * 2..]),
                        )
                    };
                    let v = cur.wrapping_add(prev);
                    if big_endian {
                        BigEndian::write_u16(&mut row[i * 2..], v);
                    } else {
                        LittleEndian::write_u16(&mut row[i * 2..], v);
                    }
                }
            }
            _ => {}
        }
    }
}

struct GdalItem {
    name: String,
    sample: Option<usize>,
    role: Option<String>,
    numeric: bool,
    text: String,
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            c => out.push(c),
        }
    }
    out
}

fn xml_unescape(s: &str) -> String {
    s.replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&quot;", "\"")
        .replace("&apos;", "'")
        .replace("&amp;", "&")
}

fn parse_attrs(head: &str) -> BTreeMap<String, String> {
    let mut attrs = BTreeMap::new();
    let mut rest = head;
    while let Some(eq) = rest.find('=') {
        let name = rest[..eq].trim().to_string();
        let after = &rest[eq + 1..];
        let Some(open) = after.find('"') else { break };
        let Some(close) = after[open + 1..].find('"') else { break };
        attrs.insert(name, xml_unescape(&after[open + 1..open + 1 + close]));
        rest = &after[open + close + 2..];
    }
    attrs
}

fn parse_gdal_metadata(xml: &str) -> Vec<GdalItem> {
    let mut items = Vec::new();
    let mut rest = xml;
    while let Some(start) = rest.find("<Item") {
        rest = &rest[start + 5..];
        let Some(head_end) = rest.find('>') else { break };
        let head = &rest[..head_end];
        if head.ends_with('/') {
            rest = &rest[head_end + 1..];
            continue;
        }
        let body = &rest[head_end + 1..];
        let Some(close) = body.find("</Item>") else { break };
        let attrs = parse_attrs(head);
        if let Some(name) = attrs.get("name") {
            items.push(GdalItem {
                name: name.clone(),
                sample: attrs.get("sample").and_then(|s| s.parse().ok()),
                role: attrs.get("role").cloned(),
                numeric: attrs.get("type").map(String::as_str) == Some("numbers"),
                text: xml_unescape(&body[..close]),
            });
        }
        rest = &body[close + 7..];
    }
    items
}

/// Deflate (zlib) or no compression on write.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Compression {
    #[default]
    None,
    Deflate,
}

enum OutValue {
    Short(Vec<u16>),
    Long(Vec<u32>),
    Double(Vec<f64>),
    Ascii(String),
}

impl OutValue {
    fn type_and_count(&self) -> (u16, usize) {
        match self {
            OutValue::Short(v) => (TYPE_SHORT, v.len()),
            OutValue::Long(v) => (TYPE_LONG, v.len()),
            OutValue::Double(v) => (TYPE_DOUBLE, v.len()),
            OutValue::Ascii(s) => (TYPE_ASCII, s.len() + 1),
        }
    }

    fn bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            OutValue::Short(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            OutValue::Long(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            OutValue::Double(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            OutValue::Ascii(s) => {
                out.extend_from_slice(s.as_bytes());
                out.push(0);
            }
        }
        out
    }
}

const TARGET_STRIP_BYTES: usize = 64 * 1024;

/// Encodes `raster` (already converted to `encoding`) as a little-endian planar stripped TIFF.
pub(crate) fn encode(
    raster: &MultiBandRaster,
    encoding: SampleEncoding,
    compression: Compression,
) -> Result<Vec<u8>> {
    debug_assert_eq!(raster.encoding(), encoding);
    let width = raster.width();
    let height = raster.height();
    let spp = raster.band_count();
    let sample_size = match encoding {
        SampleEncoding::Int16Dn => 2,
        SampleEncoding::Float32Reflectance => 4,
    };
    let row_bytes = width * sample_size;
    let rows_per_strip = (TARGET_STRIP_BYTES / row_bytes).clamp(1, height);
    let strips_per_plane = height.div_ceil(rows_per_strip);

    let mut file = vec![b'I', b'I', 42, 0, 0, 0, 0, 0];
    let mut strip_offsets = Vec::with_capacity(strips_per_plane * spp);
    let mut strip_counts = Vec::with_capacity(strips_per_plane * spp);
    let mut plain = Vec::with_capacity(rows_per_strip * row_bytes);
    for band in raster.bands() {
        for s in 0..strips_per_plane {
            let r0 = s * rows_per_strip;
            let r1 = (r0 + rows_per_strip).min(height);
            plain.clear();
            match band {
                BandBuffer::Int16(v) => v[r0 * width..r1 * width]
                    .iter()
                    .for_each(|x| plain.extend_from_slice(&x.to_le_bytes())),
                BandBuffer::Float32(v) => v[r0 * width..r1 * width]
                    .iter()
                    .for_each(|x| plain.extend_from_slice(&x.to_le_bytes())),
            }
            let payload = match compression {
                Compression::None => std::borrow::Cow::Borrowed(&plain[..]),
                Compression::Deflate => {
                    let mut enc = ZlibEncoder::new(Vec::new(), flate2::Compression::default());
                    enc.write_all(&plain).expect("in-memory write");
                    std::borrow::Cow::Owned(enc.finish().expect("in-memory write"))
                }
            };
            strip_offsets.push(offset_u32(file.len())?);
            strip_counts.push(offset_u32(payload.len())?);
            file.extend_from_slice(&payload);
        }
    }

    let mut entries: BTreeMap<u16, OutValue> = BTreeMap::new();
    entries.insert(tag::IMAGE_WIDTH, OutValue::Long(vec![offset_u32(width)?]));
    entries.insert(tag::IMAGE_LENGTH, OutValue::Long(vec![offset_u32(height)?]));
    entries.insert(
        tag::BITS_PER_SAMPLE,
        OutValue::Short(vec![(sample_size * 8) as u16; spp]),
    );
    entries.insert(
        tag::COMPRESSION,
        OutValue::Short(vec![match compression {
            Compression::None => 1,
            Compression::Deflate => 8,
        }]),
    );
    entries.insert(tag::PHOTOMETRIC, OutValue::Short(vec![1]));
    entries.insert(tag::STRIP_OFFSETS, OutValue::Long(strip_offsets));
    entries.insert(tag::SAMPLES_PER_PIXEL, OutValue::Short(vec![spp as u16]));
    entries.insert(tag::ROWS_PER_STRIP, OutValue::Long(vec![rows_per_strip as u32]));
    entries.insert(tag::STRIP_BYTE_COUNTS, OutValue::Long(strip_counts));
    entries.insert(tag::PLANAR_CONFIGURATION, OutValue::Short(vec![2]));
    if spp > 1 {
        entries.insert(tag::EXTRA_SAMPLES, OutValue::Short(vec![0; spp - 1]));
    }
    entries.insert(
        tag::SAMPLE_FORMAT,
        OutValue::Short(vec![
            match encoding {
                SampleEncoding::Int16Dn => 2,
                SampleEncoding::Float32Reflectance => 3,
            };
            spp
        ]),
    );

    let mut xml_items = Vec::new();
    for (key, value) in raster.geo_meta() {
        let dedicated = META_TAGS.iter().find(|(k, _, _)| k == key);
        match (dedicated, value) {
            (Some((_, code, TagKind::Ascii)), MetaValue::Text(s)) if !s.contains('\0') => {
                entries.insert(*code, OutValue::Ascii(s.clone()));
            }
            (Some((_, code, TagKind::Double)), MetaValue::Numbers(v)) if !v.is_empty() => {
                entries.insert(*code, OutValue::Double(v.clone()));
            }
            (Some((_, code, TagKind::Short)), MetaValue::Numbers(v))
                if !v.is_empty()
                    && v.iter().all(|x| x.fract() == 0.0 && *x >= 0.0 && *x <= 65535.0) =>
            {
                entries.insert(*code, OutValue::Short(v.iter().map(|&x| x as u16).collect()));
            }
            (_, MetaValue::Text(s)) => xml_items.push(format!(
                "  <Item name=\"{}\">{}</Item>",
                xml_escape(key),
                xml_escape(s)
            )),
            (_, MetaValue::Numbers(v)) => xml_items.push(format!(
                "  <Item name=\"{}\" type=\"numbers\">{}</Item>",
                xml_escape(key),
                v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
            )),
        }
    }
    for (i, name) in raster.band_names().iter().enumerate() {
        xml_items.push(format!(
            "  <Item name=\"DESCRIPTION\" sample=\"{i}\" role=\"description\">{}</Item>",
            xml_escape(name)
        ));
    }
    entries.insert(
        tag::GDAL_METADATA,
        OutValue::Ascii(format!("<GDALMetadata>\n{}\n</GDALMetadata>", xml_items.join("\n"))),
    );
    if let Some(nd) = raster.nodata() {
        let text = if nd.is_nan() {
            "nan".to_string()
        } else if encoding == SampleEncoding::Int16Dn {
            format!("{}", nd as i64)
        } else {
            format!("{nd:?}")
        };
        entries.insert(tag::GDAL_NODATA, OutValue::Ascii(text));
    }

    // Out-of-line values, word aligned, then the IFD itself.
    let mut inline = BTreeMap::new();
    for (code, value) in &entries {
        let bytes = value.bytes();
        if bytes.len() <= 4 {
            let mut field = [0u8; 4];
            field[..bytes.len()].copy_from_slice(&bytes);
            inline.insert(*code, field);
        } else {
            if file.len() % 2 == 1 {
                file.push(0);
            }
            let at = offset_u32(file.len())?;
            file.extend_from_slice(&bytes);
            inline.insert(*code, at.to_le_bytes());
        }
    }
    if file.len() % 2 == 1 {
        file.push(0);
    }
    let ifd_offset = offset_u32(file.len())?;
    file.extend_from_slice(&(entries.len() as u16).to_le_bytes());
    for (code, value) in &entries {
        let (ty, count) = value.type_and_count();
        file.extend_from_slice(&code.to_le_bytes());
        file.extend_from_slice(&ty.to_le_bytes());
        file.extend_from_slice(&(count as u32).to_le_bytes());
        file.extend_from_slice(&inline[code]);
    }
    file.extend_from_slice(&0u32.to_le_bytes());
    file[4..8].copy_from_slice(&ifd_offset.to_le_bytes());
    Ok(file)
}

fn offset_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Unsupported("file larger than 4 GiB (BigTIFF)".into()))
}
