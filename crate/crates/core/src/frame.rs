//! Grayscale frame buffer shared by the filters and the synthetic renderer.

use crate::geometry::FrameDims;

/// Row-major grayscale intensities, nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayFrame {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayFrame {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height] }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height, "data length must be width*height");
        Self { width, height, data }
    }

    /// Luma conversion of interleaved 8-bit RGB, channels scaled to `[0, 1]`.
    ///
    /// Uses the Rec. 601 weights 0.299 R + 0.587 G + 0.114 B.
    pub fn from_rgb8(width: usize, height: usize, rgb: &[u8]) -> Self {
        assert_eq!(rgb.len(), width * height * 3);
        let data = rgb
            .chunks_exact(3)
            .map(|px| {
                (0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64) / 255.0
            })
            .collect();
        Self { width, height, data }
    }

    pub fn from_luma8(width: usize, height: usize, luma: &[u8]) -> Self {
        assert_eq!(luma.len(), width * height);
        let data = luma.iter().map(|&v| v as f64 / 255.0).collect();
        Self { width, height, data }
    }

    /// Quantize to 8-bit luma, clamping to `[0, 1]` first.
    pub fn to_luma8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> FrameDims {
        FrameDims::new(self.width as u32, self.height as u32).expect("frame dims are nonzero")
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    #[inline]
    pub fn add(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] += v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}
