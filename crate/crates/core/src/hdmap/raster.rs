use serde::{Deserialize, Serialize};

use super::{HdmapError, Result};

pub type Rgb = [u8; 3];

/// Colours for every element type. Background is always black.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Palette {
    pub lane_line: Rgb,
    pub road_boundary: Rgb,
    pub crosswalk: Rgb,
    pub vehicle: Rgb,
    pub pedestrian: Rgb,
    pub cyclist: Rgb,
    pub cone: Rgb,
}

impl Default for Palette {
    fn default() -> Self {
        Palette {
            lane_line: [255, 255, 255],
            road_boundary: [255, 0, 0],
            crosswalk: [0, 0, 255],
            vehicle: [0, 255, 0],
            pedestrian: [255, 255, 0],
            cyclist: [0, 255, 255],
            cone: [255, 128, 0],
        }
    }
}

impl Palette {
    pub fn colors(&self) -> [Rgb; 8] {
        [
            [0, 0, 0],
            self.lane_line,
            self.road_boundary,
            self.crosswalk,
            self.vehicle,
            self.pedestrian,
            self.cyclist,
            self.cone,
        ]
    }
}

/// 8-bit RGB raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl Frame {
    pub fn black(width: u32, height: u32) -> Self {
        Frame { width, height, data: vec![0; width as usize * height as usize * 3] }
    }

    pub fn pixel(&self, x: u32, y: u32) -> Rgb {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    fn put(&mut self, x: i64, y: i64, c: Rgb) {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return;
        }
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&c);
    }

    pub fn is_black(&self) -> bool {
        self.data.iter().all(|&b| b == 0)
    }

    /// Draw a 2 px wide line between two pixel positions; parts outside the image are clipped.
    pub fn draw_line(&mut self, a: (f64, f64), b: (f64, f64), c: Rgb) {
        let Some((a, b)) = clip_to_rect(a, b, self.width as f64, self.height as f64) else { return };
        let (mut x0, mut y0) = (a.0.floor() as i64, a.1.floor() as i64);
        let (x1, y1) = (b.0.floor() as i64, b.1.floor() as i64);
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let sx = if x0 < x1 { 1 } else { -1 };
        let sy = if y0 < y1 { 1 } else { -1 };
        let steep = -dy > dx;
        let mut err = dx + dy;
        loop {
            self.put(x0, y0, c);
            if steep {
                self.put(x0 + 1, y0, c);
            } else {
                self.put(x0, y0 + 1, c);
            }
            if x0 == x1 && y0 == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x0 += sx;
            }
            if e2 <= dx {
                err += dx;
                y0 += sy;
            }
        }
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width, self.height);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            enc.set_compression(png::Compression::Fast);
            let mut w = enc.write_header().map_err(|e| HdmapError::Io(e.to_string()))?;
            w.write_image_data(&self.data).map_err(|e| HdmapError::Io(e.to_string()))?;
        }
        Ok(out)
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Frame> {
        let dec = png::Decoder::new(bytes);
        let mut reader = dec.read_info().map_err(|e| HdmapError::Io(e.to_string()))?;
        let mut buf = vec![0; reader.output_buffer_size()];
        let info = reader.next_frame(&mut buf).map_err(|e| HdmapError::Io(e.to_string()))?;
        if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
            return Err(HdmapError::Io("expected 8-bit RGB".into()));
        }
        buf.truncate(info.buffer_size());
        Ok(Frame { width: info.width, height: info.height, data: buf })
    }
}

/// Liang-Barsky clip to a one-pixel-padded image rectangle. Keeps coordinates small enough
/// for integer rasterization when a projected endpoint lands far off screen.
fn clip_to_rect(a: (f64, f64), b: (f64, f64), w: f64, h: f64) -> Option<((f64, f64), (f64, f64))> {
    if ![a.0, a.1, b.0, b.1].iter().all(|v| v.is_finite()) {
        return None;
    }
    let (xmin, ymin, xmax, ymax) = (-1.0, -1.0, w, h);
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, q) in [(-dx, a.0 - xmin), (dx, xmax - a.0), (-dy, a.1 - ymin), (dy, ymax - a.1)] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
            if t0 > t1 {
                return None;
            }
        }
    }
    Some(((a.0 + t0 * dx, a.1 + t0 * dy), (a.0 + t1 * dx, a.1 + t1 * dy)))
}
