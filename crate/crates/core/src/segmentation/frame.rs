use crate::error::{Error, Result};

/// RGB image with channel values in [0, 1], interleaved row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl Frame {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::contract(format!(
                "frame must be at least 2x2, got {width}x{height}"
            )));
        }
        if values.len() != width * height * 3 {
            return Err(Error::contract(format!(
                "{width}x{height} RGB frame needs {} values, got {}",
                width * height * 3,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::contract(format!("channel value {bad} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Result<Self> {
        let values = (0..width * height).flat_map(|_| rgb).collect();
        Self::new(width, height, values)
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> [f64; 3]) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                values.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let o = (y * self.width + x) * 3;
        [self.values[o], self.values[o + 1], self.values[o + 2]]
    }

    /// Channel value with coordinates clamped to the frame (replicate border).
    #[inline]
    pub fn clamped(&self, x: isize, y: isize, c: usize) -> f64 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.values[(yc * self.width + xc) * 3 + c]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}
