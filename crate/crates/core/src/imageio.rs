//! PNG encoding for `[3, H, W]` image tensors.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use hfedit_tensor::Tensor;

use crate::error::{invalid, io_err, Error, Result};

fn check_chw(img: &Tensor) -> Result<(usize, usize)> {
    match img.shape() {
        [3, h, w] => Ok((*h, *w)),
        s => Err(invalid("image", format!("expected [3, H, W], got {s:?}"))),
    }
}

/// Interleaved 8-bit RGB from a planar tensor whose values span `[lo, hi]`.
pub fn to_rgb8(img: &Tensor, lo: f32, hi: f32) -> Result<Vec<u8>> {
    let (h, w) = check_chw(img)?;
    let data = img.to_vec();
    let plane = h * w;
    let mut out = vec![0u8; 3 * plane];
    for p in 0..plane {
        for c in 0..3 {
            let v = (data[c * plane + p] - lo) / (hi - lo);
            let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
            out[3 * p + c] = (v * 255.0).round() as u8;
        }
    }
    Ok(out)
}

/// Planar tensor in `[lo, hi]` from interleaved 8-bit RGB.
pub fn from_rgb8(rgb: &[u8], h: usize, w: usize, lo: f32, hi: f32) -> Result<Tensor> {
    if rgb.len() != 3 * h * w {
        return Err(invalid("image", format!("{} bytes for {h}x{w} RGB", rgb.len())));
    }
    let plane = h * w;
    let mut data = vec![0f32; 3 * plane];
    for p in 0..plane {
        for c in 0..3 {
            data[c * plane + p] = lo + (hi - lo) * rgb[3 * p + c] as f32 / 255.0;
        }
    }
    Ok(Tensor::from_vec(data, &[3, h, w])?)
}

fn write_rgb8(path: &Path, rgb: &[u8], h: usize, w: usize) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let fmt = |e: png::EncodingError| Error::Format {
        path: path.to_path_buf(),
        detail: e.to_string(),
    };
    enc.write_header()
        .map_err(fmt)?
        .write_image_data(rgb)
        .map_err(fmt)
}

/// Writes an image with values in `[-1, 1]`.
pub fn save_png(path: impl AsRef<Path>, img: &Tensor) -> Result<()> {
    let (h, w) = check_chw(img)?;
    write_rgb8(path.as_ref(), &to_rgb8(img, -1.0, 1.0)?, h, w)
}

/// Writes an image with values in `[0, 1]`.
pub fn save_png_unit(path: impl AsRef<Path>, img: &Tensor) -> Result<()> {
    let (h, w) = check_chw(img)?;
    write_rgb8(path.as_ref(), &to_rgb8(img, 0.0, 1.0)?, h, w)
}

/// Reads an 8-bit RGB, RGBA or grey PNG into `[-1, 1]`.
pub fn load_png(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let fmt = |detail: String| Error::Format {
        path: path.to_path_buf(),
        detail,
    };
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = png::Decoder::new(BufReader::new(file))
        .read_info()
        .map_err(|e| fmt(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| fmt(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(fmt(format!("unsupported bit depth {:?}", info.bit_depth)));
    }
    let (h, w) = (info.height as usize, info.width as usize);
    let px = &buf[..info.buffer_size()];
    let rgb: Vec<u8> = match info.color_type {
        png::ColorType::Rgb => px.to_vec(),
        png::ColorType::Rgba => px.chunks(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => px.iter().flat_map(|&g| [g, g, g]).collect(),
        png::ColorType::GrayscaleAlpha => px.chunks(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
        other => return Err(fmt(format!("unsupported colour type {other:?}"))),
    };
    from_rgb8(&rgb, h, w, -1.0, 1.0)
}

/// Tiles equally sized `[3, H, W]` images row-major into `cols` columns
/// separated by `gap` pixels of `fill`.
pub fn tile(images: &[Tensor], cols: usize, gap: usize, fill: f32) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| invalid("image grid", "no images"))?;
    let (h, w) = check_chw(first)?;
    let cols = cols.max(1).min(images.len());
    let rows = images.len().div_ceil(cols);
    let (gh, gw) = (rows * h + (rows - 1) * gap, cols * w + (cols - 1) * gap);
    let mut out = vec![fill; 3 * gh * gw];
    for (k, img) in images.iter().enumerate() {
        if check_chw(img)? != (h, w) {
            return Err(invalid("image grid", "images differ in size"));
        }
        let data = img.to_vec();
        let (oy, ox) = ((k / cols) * (h + gap), (k % cols) * (w + gap));
        for c in 0..3 {
            for y in 0..h {
                let src = &data[(c * h + y) * w..(c * h + y + 1) * w];
                let dst = (c * gh + oy + y) * gw + ox;
                out[dst..dst + w].copy_from_slice(src);
            }
        }
    }
    Ok(Tensor::from_vec(out, &[3, gh, gw])?)
}
