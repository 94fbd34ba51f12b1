use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

use super::{device_polyline, FluoroGeometry};
use crate::error::{Error, Result};
use crate::physics::RodState;
use crate::vessel::VesselTree;

pub const BACKGROUND: u8 = 128;
pub const DEVICE: u8 = 32;
/// Largest frame accepted, in pixels.
const MAX_PIXELS: u64 = 1 << 26;

/// 8-bit grayscale image, row-major from the top-left pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayFrame {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl GrayFrame {
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[(y * self.width + x) as usize]
    }

    /// Binary PGM (P5).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::format(pos, "truncated PGM header"));
            }
            fields.push((start, std::str::from_utf8(&bytes[start..pos]).unwrap_or("")));
        }
        if fields[0].1 != "P5" {
            return Err(Error::format(0, "not a binary PGM"));
        }
        let num = |(off, s): (usize, &str)| s.parse::<u32>().map_err(|_| Error::format(off, "bad PGM number"));
        let (width, height, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
        if maxval != 255 {
            return Err(Error::format(fields[3].0, "only 8-bit PGM is supported"));
        }
        pos += 1;
        let n = width as usize * height as usize;
        if bytes.len() < pos + n {
            return Err(Error::format(bytes.len(), "truncated PGM pixel data"));
        }
        Ok(GrayFrame {
            width,
            height,
            pixels: bytes[pos..pos + n].to_vec(),
        })
    }

    pub fn save_png(&self, path: &std::path::Path) -> Result<()> {
        let img = image::GrayImage::from_raw(self.width, self.height, self.pixels.clone())
            .ok_or_else(|| Error::Internal("frame buffer size mismatch".into()))?;
        img.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Io(std::io::Error::other(e)))
    }
}

/// Synthesises a fluoroscopy frame: mid-gray background with seeded Gaussian
/// noise and every device drawn as a dark band `outer_diameter` wide. Device
/// polylines run from the tip back to the tree's insertion point.
pub fn render_fluoro(
    states: &[RodState],
    tree: &VesselTree,
    geometry: &FluoroGeometry,
    noise_sigma: f64,
    rng_seed: u64,
) -> Result<GrayFrame> {
    geometry.validate()?;
    let (w, h) = geometry.image_size;
    if w as u64 * h as u64 > MAX_PIXELS {
        return Err(Error::invalid(format!("frame {w}x{h} exceeds the size limit")));
    }
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return Err(Error::invalid("noise sigma must be finite and non-negative"));
    }
    let mut mask = vec![false; (w * h) as usize];
    for s in states {
        let half = (s.device.outer_diameter / geometry.pixel_spacing).max(1.0) / 2.0;
        let pts = device_polyline(s, &tree.insertion.position)
            .iter()
            .map(|p| geometry.project_point(p).map(|uv| geometry.to_pixel(uv)))
            .collect::<Result<Vec<_>>>()?;
        for seg in pts.windows(2) {
            draw_band(&mut mask, w, h, seg[0], seg[1], half);
        }
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(rng_seed);
    let normal = Normal::new(0.0, noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let pixels = mask
        .iter()
        .map(|&m| {
            let base = if m { DEVICE } else { BACKGROUND } as f64;
            let noise = if noise_sigma > 0.0 { normal.sample(&mut rng) } else { 0.0 };
            (base + noise).round().clamp(0.0, 255.0) as u8
        })
        .collect();
    Ok(GrayFrame {
        width: w,
        height: h,
        pixels,
    })
}

/// Marks pixels whose centre projects inside segment `a`–`b` within `half` px.
fn draw_band(mask: &mut [bool], w: u32, h: u32, a: [f64; 2], b: [f64; 2], half: f64) {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let x0 = (a[0].min(b[0]) - half).floor().max(0.0) as i64;
    let x1 = (a[0].max(b[0]) + half).ceil().min(w as f64 - 1.0) as i64;
    let y0 = (a[1].min(b[1]) - half).floor().max(0.0) as i64;
    let y1 = (a[1].max(b[1]) + half).ceil().min(h as f64 - 1.0) as i64;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let (ex, ey) = (px - a[0], py - a[1]);
            let d = if len2 > 0.0 {
                let t = (ex * dx + ey * dy) / len2;
                if !(0.0..=1.0).contains(&t) {
                    continue;
                }
                (ex * dy - ey * dx).abs() / len2.sqrt()
            } else {
                ex.hypot(ey)
            };
            if d <= half {
                mask[(y as u32 * w + x as u32) as usize] = true;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec3;
    use crate::imaging::FluoroGeometry;

    fn geometry() -> FluoroGeometry {
        FluoroGeometry {
            rao_lao_angle: 0.0,
            image_size: (128, 160),
            ..Default::default()
        }
    }

    fn tube() -> VesselTree {
        crate::vessel::y_phantom()
    }

    #[test]
    fn blank_frame_is_uniform() {
        let f = render_fluoro(&[], &tube(), &geometry(), 0.0, 1).unwrap();
        assert!(f.pixels.iter().all(|&p| p == BACKGROUND));
    }

    #[test]
    fn same_seed_same_frame() {
        let a = render_fluoro(&[], &tube(), &geometry(), 12.0, 9).unwrap();
        let b = render_fluoro(&[], &tube(), &geometry(), 12.0, 9).unwrap();
        assert_eq!(a, b);
        let c = render_fluoro(&[], &tube(), &geometry(), 12.0, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn straight_device_run_length() {
        let len = 30.0;
        let nodes: Vec<Vec3> = (0..16).map(|i| Vec3::new(0.0, 0.0, len - 2.0 * i as f64)).collect();
        let s = RodState {
            device: crate::device::straight(450.0),
            inserted_length: len,
            base_twist: 0.0,
            nodes,
        };
        let g = geometry();
        let f = render_fluoro(&[s], &tube(), &g, 0.0, 1).unwrap();
        let col = (g.to_pixel([0.0, 0.0])[0]) as u32;
        let run = (0..f.height).filter(|&y| f.get(col, y) == DEVICE).count() as f64;
        assert!((run - len / g.pixel_spacing).abs() <= 2.0, "{run}");
    }

    #[test]
    fn pgm_round_trip() {
        let f = render_fluoro(&[], &tube(), &geometry(), 5.0, 3).unwrap();
        let bytes = f.to_pgm();
        assert!(bytes.starts_with(b"P5\n128 160\n255\n"));
        assert_eq!(GrayFrame::from_pgm(&bytes).unwrap(), f);
        assert!(GrayFrame::from_pgm(&bytes[..100]).is_err());
    }
}
