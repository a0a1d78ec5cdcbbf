//! Metrics and decision-boundary rasters.

use std::path::Path;

use crate::autodiff::Tensor;
use crate::data::{DomainDataset, Task};
use crate::error::{Error, Result};
use crate::netgraph::{NetSchema, ParamVector};

/// Misclassification rate in percent (prediction `>= 0.5` is class 1) or
/// mean absolute error.
pub fn evaluate(
    schema: &NetSchema,
    prefix: &[f64],
    omega: &ParamVector,
    dataset: &DomainDataset,
    task: Task,
) -> Result<f64> {
    let pred = schema.predict(prefix, omega, &dataset.features)?;
    metric(pred.data(), &dataset.labels, task)
}

/// Same as [`evaluate`] for raw predictions.
pub fn metric(pred: &[f64], labels: &[f64], task: Task) -> Result<f64> {
    if pred.len() != labels.len() {
        return Err(Error::LengthMismatch {
            what: "predictions",
            expected: labels.len(),
            actual: pred.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::InvalidDataset("cannot evaluate an empty dataset".into()));
    }
    let n = labels.len() as f64;
    Ok(match task {
        Task::Classification => {
            let wrong = pred
                .iter()
                .zip(labels)
                .filter(|(&p, &y)| (if p >= 0.5 { 1.0 } else { 0.0 }) != y)
                .count();
            100.0 * wrong as f64 / n
        }
        Task::Regression => pred.iter().zip(labels).map(|(p, y)| (p - y).abs()).sum::<f64>() / n,
    })
}

pub const GRAY: [u8; 3] = [128, 128, 128];
pub const CLASS0_FIELD: [u8; 3] = [31, 119, 180];
pub const CLASS1_FIELD: [u8; 3] = [214, 39, 40];
pub const CLASS0_MARKER: [u8; 3] = [255, 255, 255];
pub const CLASS1_MARKER: [u8; 3] = [0, 0, 0];

/// Field colour: gray at 0.5, blending toward the class colour at 0 and 1.
pub fn probability_color(p: f64) -> [u8; 3] {
    let (target, t) = if p >= 0.5 {
        (CLASS1_FIELD, (p - 0.5) * 2.0)
    } else {
        (CLASS0_FIELD, (0.5 - p) * 2.0)
    };
    let t = t.clamp(0.0, 1.0);
    let mut c = [0u8; 3];
    for k in 0..3 {
        c[k] = (f64::from(GRAY[k]) * (1.0 - t) + f64::from(target[k]) * t).round() as u8;
    }
    c
}

/// Model output sampled on a regular grid; row 0 is the top (largest y).
#[derive(Clone, Debug)]
pub struct BoundaryRaster {
    pub width: usize,
    pub height: usize,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub probs: Vec<f64>,
    pub rgb: Vec<u8>,
}

impl BoundaryRaster {
    /// Pixel containing `(x, y)`, clamped to the raster.
    pub fn pixel_of(&self, x: f64, y: f64) -> (usize, usize) {
        let fx = (x - self.x_range.0) / (self.x_range.1 - self.x_range.0);
        let fy = (self.y_range.1 - y) / (self.y_range.1 - self.y_range.0);
        let col = ((fx * self.width as f64).floor().max(0.0) as usize).min(self.width - 1);
        let row = ((fy * self.height as f64).floor().max(0.0) as usize).min(self.height - 1);
        (col, row)
    }

    pub fn prob_at(&self, x: f64, y: f64) -> f64 {
        let (c, r) = self.pixel_of(x, y);
        self.probs[r * self.width + c]
    }

    pub fn header(&self) -> String {
        format!("P6\n{} {}\n255\n", self.width, self.height)
    }

    /// Binary PPM (P6).
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = self.header().into_bytes();
        out.extend_from_slice(&self.rgb);
        out
    }
}

/// Renders the model output over the data's bounding box (padded by 10% of
/// its extent on every side) at `resolution × resolution` pixels, overlays
/// the data points as 3×3 markers and writes a PPM to `out_path`.
pub fn render_boundary(
    schema: &NetSchema,
    prefix: &[f64],
    omega: &ParamVector,
    dataset: &DomainDataset,
    resolution: usize,
    out_path: &Path,
) -> Result<BoundaryRaster> {
    let raster = rasterize(schema, prefix, omega, dataset, resolution)?;
    crate::io::write_file(out_path, &raster.to_ppm())?;
    Ok(raster)
}

/// [`render_boundary`] without writing a file.
pub fn rasterize(
    schema: &NetSchema,
    prefix: &[f64],
    omega: &ParamVector,
    dataset: &DomainDataset,
    resolution: usize,
) -> Result<BoundaryRaster> {
    if dataset.dim() != 2 || schema.input_dim != 2 {
        return Err(Error::InvalidDataset(format!(
            "decision boundaries need 2-D features, got {}",
            dataset.dim()
        )));
    }
    if resolution == 0 {
        return Err(Error::InvalidConfig("grid resolution must be at least 1".into()));
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for i in 0..dataset.len() {
        let p = dataset.row(i);
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    let pad = |lo: f64, hi: f64| {
        let ext = (hi - lo).max(1e-6);
        (lo - 0.1 * ext, hi + 0.1 * ext)
    };
    let x_range = pad(x0, x1);
    let y_range = pad(y0, y1);

    let (w, h) = (resolution, resolution);
    let mut grid = Vec::with_capacity(w * h * 2);
    for r in 0..h {
        let y = y_range.1 - (r as f64 + 0.5) / h as f64 * (y_range.1 - y_range.0);
        for c in 0..w {
            let x = x_range.0 + (c as f64 + 0.5) / w as f64 * (x_range.1 - x_range.0);
            grid.push(x);
            grid.push(y);
        }
    }
    let probs = schema
        .predict(prefix, omega, &Tensor::matrix(w * h, 2, grid)?)?
        .into_data();

    let mut rgb: Vec<u8> = probs.iter().flat_map(|&p| probability_color(p)).collect();
    let mut raster = BoundaryRaster {
        width: w,
        height: h,
        x_range,
        y_range,
        probs,
        rgb: Vec::new(),
    };
    for i in 0..dataset.len() {
        let p = dataset.row(i);
        let (c, r) = raster.pixel_of(p[0], p[1]);
        let color = if dataset.labels[i] >= 0.5 {
            CLASS1_MARKER
        } else {
            CLASS0_MARKER
        };
        for rr in r.saturating_sub(1)..=(r + 1).min(h - 1) {
            for cc in c.saturating_sub(1)..=(c + 1).min(w - 1) {
                let k = 3 * (rr * w + cc);
                rgb[k..k + 3].copy_from_slice(&color);
            }
        }
    }
    raster.rgb = rgb;
    Ok(raster)
}
