//! Binary containers for clouds ("A3PC") and rendered view bundles ("A3VB").
//!
//! A3PC: magic, version u32, P_n u64, P_n×3 float32, label flag u8, then P_n u8 labels if the flag is 1.
//!
//! A3VB: magic, version u32, V u32, H u32, W u32, P_n u64, rgb flag u8; then per view:
//! angle float32, render plane H·W float32, three RGB planes (if flagged), mask H·W u8,
//! pixel→point H·W i64 with −1 for empty pixels. Little-endian throughout.

use std::path::Path;

use super::{PointCloud, View, ViewBundle};
use crate::binio::{read_file, Reader, Writer};
use crate::error::Result;

const CLOUD_MAGIC: &[u8; 4] = b"A3PC";
const VIEWS_MAGIC: &[u8; 4] = b"A3VB";
const VERSION: u32 = 1;

impl PointCloud {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(CLOUD_MAGIC);
        w.u32(VERSION);
        w.u64(self.len() as u64);
        for p in self.points() {
            w.f32s(p);
        }
        match self.labels() {
            Some(labels) => {
                w.u8(1);
                w.bytes(labels);
            }
            None => w.u8(0),
        }
        w.into_inner()
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = Reader::new("A3PC", data);
        r.magic(CLOUD_MAGIC)?;
        r.version(VERSION)?;
        let n = r.usize_from_u64("point count")?;
        let coords = r.f32s(n.checked_mul(3).ok_or_else(|| r.err("point count overflow"))?)?;
        let points = coords.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let labels = match r.u8()? {
            0 => None,
            1 => Some(r.take(n)?.to_vec()),
            f => return Err(r.err(format!("label flag must be 0 or 1, got {f}"))),
        };
        r.finish()?;
        PointCloud::new(points, labels)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = Writer::new();
        w.bytes(&self.to_bytes());
        w.write_to(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

impl ViewBundle {
    pub fn to_bytes(&self) -> Vec<u8> {
        let rgb = self.has_rgb();
        let mut w = Writer::new();
        w.bytes(VIEWS_MAGIC);
        w.u32(VERSION);
        w.u32(self.view_count() as u32);
        w.u32(self.height as u32);
        w.u32(self.width as u32);
        w.u64(self.point_count as u64);
        w.u8(u8::from(rgb));
        for v in &self.views {
            w.f32(v.angle as f32);
            w.f32s(&v.render);
            if rgb {
                w.f32s(v.rgb.as_ref().unwrap());
            }
            w.bytes(&v.mask());
            for p in &v.pixel_to_point {
                w.i64(p.map_or(-1, i64::from));
            }
        }
        w.into_inner()
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = Reader::new("A3VB", data);
        r.magic(VIEWS_MAGIC)?;
        r.version(VERSION)?;
        let v = r.u32()? as usize;
        let h = r.u32()? as usize;
        let w = r.u32()? as usize;
        let points = r.usize_from_u64("point count")?;
        let rgb = match r.u8()? {
            0 => false,
            1 => true,
            f => return Err(r.err(format!("rgb flag must be 0 or 1, got {f}"))),
        };
        let hw = h.checked_mul(w).ok_or_else(|| r.err("image size overflow"))?;
        let mut views = Vec::with_capacity(v.min(64));
        for i in 0..v {
            let angle = f64::from(r.f32s(1)?[0]);
            let render = r.f32s(hw)?;
            let rgb_planes = if rgb { Some(r.f32s(3 * hw)?) } else { None };
            let mask = r.take(hw)?.to_vec();
            let mut pixel_to_point = Vec::with_capacity(hw);
            let mut point_to_pixel = vec![None; points];
            for (px, &m) in mask.iter().enumerate() {
                let idx = r.i64()?;
                let owner = match idx {
                    -1 => None,
                    k if k >= 0 && (k as u64) < points as u64 => Some(k as u32),
                    k => return Err(r.err(format!("view {i}: pixel {px} indexes point {k} of {points}"))),
                };
                if u8::from(owner.is_some()) != m {
                    return Err(r.err(format!("view {i}: mask disagrees with correspondence at pixel {px}")));
                }
                if let Some(k) = owner {
                    if point_to_pixel[k as usize].replace(px as u32).is_some() {
                        return Err(r.err(format!("view {i}: point {k} owns more than one pixel")));
                    }
                }
                pixel_to_point.push(owner);
            }
            views.push(View { angle, render, rgb: rgb_planes, pixel_to_point, point_to_pixel });
        }
        r.finish()?;
        Ok(ViewBundle { height: h, width: w, point_count: points, views })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = Writer::new();
        w.bytes(&self.to_bytes());
        w.write_to(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

#[cfg(test)]
mod tests {
    use crate::geometry::{make_views_with_colors, PointCloud, ViewBundle, ViewSpec};

    fn cloud() -> PointCloud {
        let pts: Vec<[f32; 3]> = (0..300)
            .map(|i| {
                let t = i as f32 * 0.21;
                let u = i as f32 * 0.047;
                [t.cos() * u.sin(), t.sin() * u.sin(), u.cos()]
            })
            .collect();
        let labels = (0..300).map(|i| u8::from(i % 17 == 0)).collect();
        PointCloud::new(pts, Some(labels)).unwrap()
    }

    #[test]
    fn cloud_round_trip_and_truncation() {
        let c = cloud();
        let bytes = c.to_bytes();
        assert_eq!(PointCloud::from_bytes(&bytes).unwrap(), c);
        assert!(PointCloud::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let unlabeled = PointCloud::new(c.points().to_vec(), None).unwrap();
        assert_eq!(PointCloud::from_bytes(&unlabeled.to_bytes()).unwrap(), unlabeled);
    }

    #[test]
    fn bundle_round_trip() {
        let c = cloud();
        let colors = vec![[0.2f32, 0.5, 0.9]; c.len()];
        let spec = ViewSpec { angles: vec![0.0, 1.0], height: 14, width: 14, scale: 0.9 };
        let b = make_views_with_colors(&c, &spec, Some(&colors)).unwrap();
        let back = ViewBundle::from_bytes(&b.to_bytes()).unwrap();
        assert_eq!(back.views[0].pixel_to_point, b.views[0].pixel_to_point);
        assert_eq!(back.views[1].point_to_pixel, b.views[1].point_to_pixel);
        assert_eq!(back.views[1].rgb, b.views[1].rgb);
        assert_eq!(back.to_bytes(), b.to_bytes());
    }
}
