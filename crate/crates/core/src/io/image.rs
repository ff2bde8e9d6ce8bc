//! Raster and label-map files.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::{DynamicImage, GenericImageView};

use crate::error::{Error, Result};
use crate::model::{Label, LabelField, Raster};

/// Reads an 8- or 16-bit PNG/PPM. Gray and RGB load as 1 and 3 channels
/// with every pixel valid; an alpha channel becomes the mask (alpha > 0).
pub fn read_raster(path: &Path) -> Result<Raster> {
    let img = image::open(path)?;
    Ok(raster_from_image(&img))
}

pub fn raster_from_image(img: &DynamicImage) -> Raster {
    let (w, h) = img.dimensions();
    let (w, h) = (w as usize, h as usize);
    let has_alpha = img.color().has_alpha();
    let gray = img.color().channel_count() <= 2;
    let (data, mask): (Vec<f32>, Vec<bool>) = if gray {
        let la = img.to_luma_alpha8();
        (
            la.pixels().map(|p| p.0[0] as f32).collect(),
            la.pixels().map(|p| !has_alpha || p.0[1] > 0).collect(),
        )
    } else {
        let rgba = img.to_rgba8();
        (
            rgba.pixels().flat_map(|p| p.0[..3].iter().map(|&v| v as f32).collect::<Vec<_>>()).collect(),
            rgba.pixels().map(|p| !has_alpha || p.0[3] > 0).collect(),
        )
    };
    let ch = if gray { 1 } else { 3 };
    Raster::new(w, h, ch, data, mask).expect("decoded image has consistent size")
}

/// 8-bit samples, rounded and clamped.
fn to_u8(data: &[f32]) -> Vec<u8> {
    data.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect()
}

/// Writes an 8-bit gray or RGB PNG. Empty pixels are written black.
pub fn write_png(r: &Raster, path: &Path) -> Result<()> {
    let ch = r.channels();
    let mut bytes = to_u8(r.data());
    for (i, &m) in r.mask().iter().enumerate() {
        if !m {
            bytes[i * ch..(i + 1) * ch].fill(0);
        }
    }
    let color = match ch {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => return Err(Error::InvalidRaster(format!("cannot write {c}-channel image"))),
    };
    let mut enc = png::Encoder::new(BufWriter::new(File::create(path)?), r.width() as u32, r.height() as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(|e| Error::Format(e.to_string()))?;
    w.write_image_data(&bytes).map_err(|e| Error::Format(e.to_string()))?;
    w.finish().map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}

/// Palette entry of a label code: 0 (occluded) is magenta, sources get
/// well-separated hues.
pub fn palette_color(code: u16) -> [u8; 3] {
    if code == 0 {
        return [255, 0, 255];
    }
    const BASE: [[u8; 3]; 8] = [
        [230, 25, 75],
        [60, 180, 75],
        [0, 130, 200],
        [255, 225, 25],
        [245, 130, 48],
        [70, 240, 240],
        [128, 128, 0],
        [0, 0, 128],
    ];
    let k = (code - 1) as usize;
    let [r, g, b] = BASE[k % BASE.len()];
    let shade = (k / BASE.len()) as u8;
    [r.wrapping_sub(shade * 17), g.wrapping_add(shade * 29), b.wrapping_sub(shade * 13)]
}

/// Writes a label field as an indexed PNG whose palette index is the label
/// code (0 occluded, `i + 1` for source `i`).
pub fn write_label_map(field: &LabelField, path: &Path) -> Result<()> {
    let max = field.labels().iter().map(|l| l.code()).max().unwrap_or(0);
    if max > 255 {
        return Err(Error::Format(format!("{max} labels do not fit an 8-bit palette")));
    }
    let palette: Vec<u8> = (0..=max).flat_map(palette_color).collect();
    let bytes: Vec<u8> = field.labels().iter().map(|l| l.code() as u8).collect();
    let mut enc = png::Encoder::new(
        BufWriter::new(File::create(path)?),
        field.width() as u32,
        field.height() as u32,
    );
    enc.set_color(png::ColorType::Indexed);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_palette(palette);
    let mut w = enc.write_header().map_err(|e| Error::Format(e.to_string()))?;
    w.write_image_data(&bytes).map_err(|e| Error::Format(e.to_string()))?;
    w.finish().map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}

/// Reads back a label map written by [`write_label_map`].
pub fn read_label_map(path: &Path) -> Result<LabelField> {
    let mut dec = png::Decoder::new(std::io::BufReader::new(File::open(path)?));
    dec.set_transformations(png::Transformations::IDENTITY);
    let mut reader = dec.read_info().map_err(|e| Error::Format(e.to_string()))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Indexed || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format("label map must be an 8-bit indexed PNG".into()));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut buf = vec![0u8; reader.output_buffer_size().ok_or_else(|| Error::Format("label map too large".into()))?];
    let frame = reader.next_frame(&mut buf).map_err(|e| Error::Format(e.to_string()))?;
    let bytes = &buf[..frame.buffer_size()];
    let labels = (0..w * h).map(|i| Label::from_code(bytes[i] as u16)).collect();
    LabelField::new(w, h, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_keeps_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let r = Raster::from_fn(5, 4, 3, |x, y, c| (x * 40 + y * 10 + c) as f32).unwrap();
        write_png(&r, &p).unwrap();
        assert_eq!(read_raster(&p).unwrap(), r);
    }

    #[test]
    fn label_map_uses_code_as_index_and_magenta_for_occlusion() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels.png");
        let mut f = LabelField::uniform(3, 2, Label::Source(0));
        f.set(1, 0, Label::Occluded);
        f.set(2, 1, Label::Source(2));
        write_label_map(&f, &p).unwrap();
        assert_eq!(read_label_map(&p).unwrap(), f);
        let rgb = image::open(&p).unwrap().to_rgb8();
        assert_eq!(rgb.get_pixel(1, 0).0, [255, 0, 255]);
    }

    #[test]
    fn ppm_is_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.pgm");
        std::fs::write(&p, b"P2\n2 1\n255\n7 200\n").unwrap();
        let r = read_raster(&p).unwrap();
        assert_eq!((r.channels(), r.data()), (1, &[7.0f32, 200.0][..]));
    }
}
