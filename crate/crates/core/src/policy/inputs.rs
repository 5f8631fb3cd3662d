use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ego-centric semantic raster, `height × width × channels`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Observation {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels, data: vec![0.0; height * width * channels] }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Argument(format!(
                "observation buffer has {} values, expected {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let i = (row * self.width + col) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [f32] {
        let i = (row * self.width + col) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    /// Sets a one-hot pixel; `None` clears it.
    pub fn paint(&mut self, row: usize, col: usize, channel: Option<usize>) {
        let px = self.pixel_mut(row, col);
        px.iter_mut().for_each(|v| *v = 0.0);
        if let Some(c) = channel {
            px[c] = 1.0;
        }
    }

    /// Channel with the largest value at a pixel, if any is nonzero.
    pub fn argmax(&self, row: usize, col: usize) -> Option<usize> {
        let px = self.pixel(row, col);
        let (i, &v) = px.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
        (v > 0.0).then_some(i)
    }

    /// Value range and per-pixel channel-sum invariants.
    pub fn is_well_formed(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
            && self.data.chunks(self.channels.max(1)).all(|px| px.iter().sum::<f32>() <= 1.0 + 1e-6)
    }
}

/// Normalized axis-aligned box `(x1, y1)`–`(x2, y2)` with its area.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub area: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = Self { x1, y1, x2, y2, area: (x2 - x1) * (y2 - y1) };
        b.validate()?;
        Ok(b)
    }

    pub fn values(&self) -> [f64; 5] {
        [self.x1, self.y1, self.x2, self.y2, self.area]
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = self.values().iter().all(|v| (0.0..=1.0).contains(v));
        if !in_unit {
            return Err(Error::Argument(format!("box coordinates must be normalized to [0,1]: {self:?}")));
        }
        if self.x1 > self.x2 || self.y1 > self.y2 {
            return Err(Error::Argument(format!("box corners out of order: {self:?}")));
        }
        if (self.area - (self.x2 - self.x1) * (self.y2 - self.y1)).abs() > 1e-6 {
            return Err(Error::Argument(format!("box area inconsistent with corners: {self:?}")));
        }
        Ok(())
    }
}

/// Per-step detector output for the box goal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Detection {
    Box(BBox),
    NoDetection,
}

impl Detection {
    pub fn bbox(&self) -> Option<&BBox> {
        match self {
            Detection::Box(b) => Some(b),
            Detection::NoDetection => None,
        }
    }
}

/// What the agent is asked to find at one step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum GoalSpec {
    Category(usize),
    BBox(Detection),
    CategoryAndBBox(usize, Detection),
}

impl GoalSpec {
    pub fn category(&self) -> Option<usize> {
        match *self {
            GoalSpec::Category(c) | GoalSpec::CategoryAndBBox(c, _) => Some(c),
            GoalSpec::BBox(_) => None,
        }
    }

    pub fn detection(&self) -> Option<&Detection> {
        match self {
            GoalSpec::BBox(d) | GoalSpec::CategoryAndBBox(_, d) => Some(d),
            GoalSpec::Category(_) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bbox_validation() {
        assert!(BBox::new(0.0, 0.0, 1.0, 1.0).is_ok());
        assert!(BBox::new(0.5, 0.0, 0.4, 1.0).is_err());
        assert!(BBox::new(0.0, 0.0, 1.2, 1.0).is_err());
        let bad = BBox { x1: 0.0, y1: 0.0, x2: 0.5, y2: 0.5, area: 0.3 };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn paint_is_one_hot() {
        let mut obs = Observation::zeros(2, 2, 3);
        obs.paint(1, 1, Some(2));
        obs.paint(1, 1, Some(1));
        assert_eq!(obs.pixel(1, 1), &[0.0, 1.0, 0.0]);
        assert_eq!(obs.argmax(1, 1), Some(1));
        assert_eq!(obs.argmax(0, 0), None);
        assert!(obs.is_well_formed());
    }
}
