//! 8-bit PNG load/save for [`ImageBuffer`].

use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor};
use std::path::Path;

use png::{BitDepth, ColorType, Decoder, Encoder};

use crate::error::{Error, Result};
use crate::magnifier::ImageBuffer;

fn decode_err(e: png::DecodingError) -> Error {
    match e {
        png::DecodingError::IoError(io) => Error::Io(io),
        other => Error::format(format!("PNG decode failed: {other}")),
    }
}

fn encode_err(e: png::EncodingError) -> Error {
    match e {
        png::EncodingError::IoError(io) => Error::Io(io),
        other => Error::format(format!("PNG encode failed: {other}")),
    }
}

/// Decodes an 8-bit grayscale or RGB PNG, mapping bytes to `v / 255`.
pub fn decode_png(bytes: &[u8]) -> Result<ImageBuffer> {
    decode_from(Decoder::new(Cursor::new(bytes)))
}

pub fn read_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let file = File::open(path)?;
    decode_from(Decoder::new(BufReader::new(file)))
}

fn decode_from<R: std::io::BufRead + std::io::Seek>(decoder: Decoder<R>) -> Result<ImageBuffer> {
    let mut reader = decoder.read_info().map_err(decode_err)?;
    let (color, depth) = {
        let info = reader.info();
        (info.color_type, info.bit_depth)
    };
    if depth != BitDepth::Eight {
        return Err(Error::UnsupportedFormat(format!(
            "PNG bit depth {depth:?} (only 8-bit is read)"
        )));
    }
    let channels = match color {
        ColorType::Grayscale => 1,
        ColorType::Rgb => 3,
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "PNG colour type {other:?} (only grayscale and RGB are read)"
            )))
        }
    };
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format("PNG output buffer size overflows"))?;
    let mut buf = vec![0u8; size];
    let frame = reader.next_frame(&mut buf).map_err(decode_err)?;
    let (w, h) = (frame.width as usize, frame.height as usize);
    let row = w * channels;
    let mut data = Vec::with_capacity(h * row);
    for y in 0..h {
        let line = &buf[y * frame.line_size..y * frame.line_size + row];
        data.extend(line.iter().map(|b| f64::from(*b) / 255.0));
    }
    ImageBuffer::new(h, w, channels, data)
}

/// Nearest 8-bit level of `v`, halves rounding up.
#[inline]
pub fn quantize(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Encodes the image as a non-interlaced 8-bit PNG.
pub fn encode_png(image: &ImageBuffer) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    encode_into(image, &mut out)?;
    Ok(out)
}

pub fn write_image(path: impl AsRef<Path>, image: &ImageBuffer) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    encode_into(image, &mut w)?;
    use std::io::Write;
    w.flush()?;
    Ok(())
}

fn encode_into<W: std::io::Write>(image: &ImageBuffer, sink: W) -> Result<()> {
    let mut enc = Encoder::new(sink, image.width() as u32, image.height() as u32);
    enc.set_color(if image.channels() == 1 {
        ColorType::Grayscale
    } else {
        ColorType::Rgb
    });
    enc.set_depth(BitDepth::Eight);
    let mut writer = enc.write_header().map_err(encode_err)?;
    let bytes: Vec<u8> = image.data().iter().map(|v| quantize(*v)).collect();
    writer.write_image_data(&bytes).map_err(encode_err)?;
    writer.finish().map_err(encode_err)
}
