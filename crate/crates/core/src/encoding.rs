//! Training targets on the strided output grid.
//!
//! Each object contributes a Gaussian bump to its class channel of the
//! heatmap and, at its pole cell only, regression values for `ρ / d`, `θ1`
//! and `θ2`. The Gaussian width is `min(h, w) / 3` where `h`, `w` are the
//! side lengths of the oriented rectangle, converted to grid cells.

use thiserror::Error;

use crate::geometry::{Point2, PolarBox};
use crate::grid::{Grid, Mask, Plane};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncodingError {
    #[error("invalid grid configuration: {0}")]
    InvalidGrid(String),
    #[error("pole ({x}, {y}) lies outside the {width}x{height} image")]
    OutOfBounds {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },
    #[error("boxes {first} and {second} share pole cell ({cell_x}, {cell_y})")]
    CellCollision {
        first: usize,
        second: usize,
        cell_x: usize,
        cell_y: usize,
    },
    #[error("class id {class_id} out of range for {num_classes} classes")]
    BadClass { class_id: usize, num_classes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridConfig {
    pub width: usize,
    pub height: usize,
    pub stride: usize,
    pub num_classes: usize,
}

impl GridConfig {
    pub const DEFAULT_STRIDE: usize = 4;

    pub fn new(
        width: usize,
        height: usize,
        stride: usize,
        num_classes: usize,
    ) -> Result<Self, EncodingError> {
        if stride == 0 {
            return Err(EncodingError::InvalidGrid(
                "stride must be at least 1".into(),
            ));
        }
        if num_classes == 0 {
            return Err(EncodingError::InvalidGrid("need at least one class".into()));
        }
        if width == 0
            || height == 0
            || !width.is_multiple_of(stride)
            || !height.is_multiple_of(stride)
        {
            return Err(EncodingError::InvalidGrid(format!(
                "image {width}x{height} is not a positive multiple of stride {stride}"
            )));
        }
        Ok(Self {
            width,
            height,
            stride,
            num_classes,
        })
    }

    pub fn grid_width(&self) -> usize {
        self.width / self.stride
    }

    pub fn grid_height(&self) -> usize {
        self.height / self.stride
    }
}

/// Per-class confidence planes, all of one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub channels: Vec<Plane>,
}

impl Heatmap {
    pub fn zeros(num_classes: usize, width: usize, height: usize) -> Self {
        Self {
            channels: vec![Plane::new(width, height); num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.channels.len()
    }

    pub fn width(&self) -> usize {
        self.channels.first().map_or(0, |c| c.width())
    }

    pub fn height(&self) -> usize {
        self.channels.first().map_or(0, |c| c.height())
    }

    pub fn same_shape(&self, other: &Heatmap) -> bool {
        self.channels.len() == other.channels.len()
            && self
                .channels
                .iter()
                .zip(&other.channels)
                .all(|(a, b)| a.same_shape(b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoleCell {
    pub class_id: usize,
    pub cell_x: usize,
    pub cell_y: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSample {
    pub heatmap_target: Heatmap,
    pub rho_plane: Plane,
    pub theta1_plane: Plane,
    pub theta2_plane: Plane,
    pub pole_mask: Mask,
    pub pole_cells: Vec<PoleCell>,
}

pub fn pole_cell(pole: Point2, cfg: &GridConfig) -> Result<(usize, usize), EncodingError> {
    let out = || EncodingError::OutOfBounds {
        x: pole.x,
        y: pole.y,
        width: cfg.width,
        height: cfg.height,
    };
    if !pole.is_finite()
        || pole.x < 0.0
        || pole.y < 0.0
        || pole.x >= cfg.width as f64
        || pole.y >= cfg.height as f64
    {
        return Err(out());
    }
    let d = cfg.stride as f64;
    let cx = (pole.x / d).floor() as usize;
    let cy = (pole.y / d).floor() as usize;
    // guards against x / d rounding up to the grid width
    Ok((cx.min(cfg.grid_width() - 1), cy.min(cfg.grid_height() - 1)))
}

/// Gaussian standard deviation in grid cells for one box.
pub fn gaussian_sigma(pbox: &PolarBox, stride: usize) -> f64 {
    let (a, b) = pbox.side_lengths();
    a.min(b) / 3.0 / stride as f64
}

fn check_class(pbox: &PolarBox, cfg: &GridConfig) -> Result<(), EncodingError> {
    if pbox.class_id >= cfg.num_classes {
        return Err(EncodingError::BadClass {
            class_id: pbox.class_id,
            num_classes: cfg.num_classes,
        });
    }
    Ok(())
}

/// Max-merges a truncated Gaussian into `plane`, centred on `(cx, cy)`.
/// Values beyond `3σ` (below `e^-4.5`) are left untouched.
pub fn splat_gaussian(plane: &mut Plane, cx: usize, cy: usize, sigma: f64) {
    let two_var = 2.0 * sigma * sigma;
    let cutoff = (-4.5f64).exp();
    let reach = (3.0 * sigma).ceil() as isize;
    let (w, h) = (plane.width() as isize, plane.height() as isize);
    for dy in -reach..=reach {
        let y = cy as isize + dy;
        if y < 0 || y >= h {
            continue;
        }
        for dx in -reach..=reach {
            let x = cx as isize + dx;
            if x < 0 || x >= w {
                continue;
            }
            let r2 = (dx * dx + dy * dy) as f64;
            let v = if r2 == 0.0 {
                1.0
            } else {
                (-r2 / two_var).exp()
            };
            if v < cutoff {
                continue;
            }
            let (x, y) = (x as usize, y as usize);
            if v > plane.get(x, y) {
                plane.set(x, y, v);
            }
        }
    }
}

pub fn gaussian_heatmap(boxes: &[PolarBox], cfg: &GridConfig) -> Result<Heatmap, EncodingError> {
    let mut heatmap = Heatmap::zeros(cfg.num_classes, cfg.grid_width(), cfg.grid_height());
    for pbox in boxes {
        check_class(pbox, cfg)?;
        let (cx, cy) = pole_cell(pbox.pole, cfg)?;
        let sigma = gaussian_sigma(pbox, cfg.stride);
        splat_gaussian(&mut heatmap.channels[pbox.class_id], cx, cy, sigma);
    }
    Ok(heatmap)
}

/// Full target set: heatmap, regression planes (ρ in grid units) and pole mask.
pub fn encode_regression(
    boxes: &[PolarBox],
    cfg: &GridConfig,
) -> Result<EncodedSample, EncodingError> {
    let (gw, gh) = (cfg.grid_width(), cfg.grid_height());
    let heatmap_target = gaussian_heatmap(boxes, cfg)?;
    let mut rho_plane = Plane::new(gw, gh);
    let mut theta1_plane = Plane::new(gw, gh);
    let mut theta2_plane = Plane::new(gw, gh);
    let mut pole_mask = Mask::new(gw, gh);
    let mut owner: Grid<Option<usize>> = Grid::new(gw, gh);
    let mut pole_cells = Vec::with_capacity(boxes.len());

    for (i, pbox) in boxes.iter().enumerate() {
        let (cx, cy) = pole_cell(pbox.pole, cfg)?;
        if let Some(first) = owner.get(cx, cy) {
            return Err(EncodingError::CellCollision {
                first,
                second: i,
                cell_x: cx,
                cell_y: cy,
            });
        }
        owner.set(cx, cy, Some(i));
        pole_mask.set(cx, cy, true);
        rho_plane.set(cx, cy, pbox.rho / cfg.stride as f64);
        theta1_plane.set(cx, cy, pbox.theta1);
        theta2_plane.set(cx, cy, pbox.theta2);
        pole_cells.push(PoleCell {
            class_id: pbox.class_id,
            cell_x: cx,
            cell_y: cy,
        });
    }

    Ok(EncodedSample {
        heatmap_target,
        rho_plane,
        theta1_plane,
        theta2_plane,
        pole_mask,
        pole_cells,
    })
}
