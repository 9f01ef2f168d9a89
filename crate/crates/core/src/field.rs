//! Piecewise-constant permeability fields on the fine grid.
//!
//! Values are stored per fine cell, row-major with the bottom row first, the
//! same order as [`GridPair::fine_cell`].

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::GridPair;

#[derive(Debug, Clone, PartialEq)]
pub struct PermField {
    cells_per_side: usize,
    values: Vec<f64>,
    pub background: f64,
    pub contrast: f64,
    pub descriptor: String,
    pub seed: Option<u64>,
}

impl PermField {
    /// Builds a field from raw cell values, enforcing positivity.
    pub fn from_values(cells_per_side: usize, values: Vec<f64>, descriptor: &str) -> Result<Self> {
        if values.len() != cells_per_side * cells_per_side {
            return Err(Error::DimensionMismatch {
                context: "permeability values",
                expected: cells_per_side * cells_per_side,
                got: values.len(),
            });
        }
        if let Some((k, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(Error::InvalidField(format!(
                "cell {k} has non-positive or non-finite value {v}"
            )));
        }
        let background = values.iter().copied().fold(f64::INFINITY, f64::min);
        let contrast = values.iter().copied().fold(0.0, f64::max);
        Ok(PermField {
            cells_per_side,
            values,
            background,
            contrast,
            descriptor: descriptor.to_string(),
            seed: None,
        })
    }

    /// Constant field `κ ≡ value`.
    pub fn constant(g: &GridPair, value: f64) -> Result<Self> {
        let n = g.fine_cells_per_side();
        Self::from_values(n, vec![value; n * n], "constant")
    }

    pub fn cells_per_side(&self) -> usize {
        self.cells_per_side
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, cell: usize) -> f64 {
        self.values[cell]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Checks that the field has one value per fine cell of `g`.
    pub fn check_grid(&self, g: &GridPair) -> Result<()> {
        if self.cells_per_side != g.fine_cells_per_side() {
            return Err(Error::DimensionMismatch {
                context: "permeability field vs grid (cells per side)",
                expected: g.fine_cells_per_side(),
                got: self.cells_per_side,
            });
        }
        Ok(())
    }
}

fn check_contrast(contrast: f64) -> Result<()> {
    if !(contrast.is_finite() && contrast >= 1.0) {
        return Err(Error::InvalidField(format!(
            "contrast must be a finite value >= 1 (got {contrast})"
        )));
    }
    Ok(())
}

/// Raster painter that never writes into the top row of cells, so features
/// stay off the Dirichlet boundary.
struct Canvas {
    n: usize,
    values: Vec<f64>,
}

impl Canvas {
    fn new(n: usize) -> Self {
        Canvas {
            n,
            values: vec![1.0; n * n],
        }
    }

    /// Rows available for features.
    fn rows(&self) -> usize {
        self.n.saturating_sub(1)
    }

    fn fill(&mut self, x0: usize, y0: usize, w: usize, h: usize, value: f64) {
        let x1 = (x0 + w).min(self.n);
        let y1 = (y0 + h).min(self.rows());
        for cy in y0..y1 {
            for cx in x0..x1 {
                self.values[cy * self.n + cx] = value;
            }
        }
    }
}

fn rand_len(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    let lo = lo.max(1);
    let hi = hi.max(lo);
    rng.random_range(lo..=hi)
}

/// Places `count` axis-aligned strips; `min_len..=max_len` is the length
/// range in cells along the strip.
fn paint_strips(
    canvas: &mut Canvas,
    rng: &mut ChaCha8Rng,
    count: usize,
    min_len: usize,
    max_len: usize,
    max_width: usize,
    value: f64,
) {
    let n = canvas.n;
    let rows = canvas.rows();
    for _ in 0..count {
        let width = rand_len(rng, 1, max_width).min(rows);
        // vertical strips only when they can reach the requested length
        let vertical = rows >= min_len && rng.random_bool(1.0 / 3.0);
        if vertical {
            let len = rand_len(rng, min_len, max_len.min(rows));
            let x0 = rng.random_range(0..=n - width);
            let y0 = rng.random_range(0..=rows - len);
            canvas.fill(x0, y0, width, len, value);
        } else {
            let len = rand_len(rng, min_len, max_len.min(n));
            let x0 = rng.random_range(0..=n - len);
            let y0 = rng.random_range(0..=rows - width);
            canvas.fill(x0, y0, len, width, value);
        }
    }
}

/// Background 1 with small blocky inclusions and short channel segments set
/// to `contrast`.
pub fn generate_inclusions(
    g: &GridPair,
    seed: u64,
    contrast: f64,
    n_inclusions: usize,
    n_channels: usize,
) -> Result<PermField> {
    check_contrast(contrast)?;
    let n = g.fine_cells_per_side();
    let nf = g.nf();
    let mut canvas = Canvas::new(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if canvas.rows() > 0 {
        let lo = (nf / 8).max(1);
        let hi = (nf / 4).max(1);
        for _ in 0..n_inclusions {
            let w = rand_len(&mut rng, lo, hi).min(n);
            let h = rand_len(&mut rng, lo, hi).min(canvas.rows());
            let x0 = rng.random_range(0..=n - w);
            let y0 = rng.random_range(0..=canvas.rows() - h);
            canvas.fill(x0, y0, w, h, contrast);
        }
        paint_strips(&mut canvas, &mut rng, n_channels, nf / 2, nf, 1, contrast);
    }
    let mut field = PermField::from_values(n, canvas.values, "inclusions")?;
    field.background = 1.0;
    field.contrast = contrast;
    field.seed = Some(seed);
    Ok(field)
}

/// Background 1 with long horizontal/vertical channels set to `contrast`.
/// Each channel spans at least one coarse cell.
pub fn generate_channels(
    g: &GridPair,
    seed: u64,
    contrast: f64,
    n_channels: usize,
) -> Result<PermField> {
    check_contrast(contrast)?;
    let n = g.fine_cells_per_side();
    let nf = g.nf();
    let mut canvas = Canvas::new(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if canvas.rows() > 0 {
        let min_len = nf.max(n / 2);
        paint_strips(
            &mut canvas,
            &mut rng,
            n_channels,
            min_len,
            n,
            (nf / 8).max(1),
            contrast,
        );
    }
    let mut field = PermField::from_values(n, canvas.values, "channels")?;
    field.background = 1.0;
    field.contrast = contrast;
    field.seed = Some(seed);
    Ok(field)
}

/// Writes the field as CSV: one line per row of cells, bottom row first.
pub fn save_raster(field: &PermField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, raster_string(field)).map_err(|e| Error::io(path, e))
}

pub fn raster_string(field: &PermField) -> String {
    let n = field.cells_per_side;
    let mut out = String::with_capacity(n * n * 4);
    for row in field.values.chunks(n) {
        for (k, v) in row.iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            // shortest representation that round-trips
            write!(out, "{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn load_raster(path: impl AsRef<Path>, g: &GridPair) -> Result<PermField> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let n = g.fine_cells_per_side();
    let parse_err = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        msg,
    };
    let mut values = Vec::with_capacity(n * n);
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let before = values.len();
        for tok in line.split(',') {
            let v: f64 = tok
                .trim()
                .parse()
                .map_err(|_| parse_err(format!("line {}: bad number {tok:?}", lineno + 1)))?;
            values.push(v);
        }
        if values.len() - before != n {
            return Err(Error::DimensionMismatch {
                context: "raster row length",
                expected: n,
                got: values.len() - before,
            });
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::DimensionMismatch {
            context: "raster row count",
            expected: n,
            got: rows,
        });
    }
    let desc = format!("raster:{}", path.display());
    PermField::from_values(n, values, &desc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grids;

    #[test]
    fn inclusion_field_is_two_valued() {
        let g = build_grids(16, 16).unwrap();
        let f = generate_inclusions(&g, 7, 1e4, 64, 8).unwrap();
        assert_eq!(f.min(), 1.0);
        assert_eq!(f.max(), 1e4);
        assert!(f.values().iter().all(|&v| v == 1.0 || v == 1e4));
        // top row of cells (adjacent to the Dirichlet edge) is untouched
        let n = g.fine_cells_per_side();
        assert!(f.values()[(n - 1) * n..].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn empty_generators_give_unit_field() {
        let g = build_grids(4, 4).unwrap();
        let f = generate_inclusions(&g, 1, 1e4, 0, 0).unwrap();
        assert!(f.values().iter().all(|&v| v == 1.0));
        let f = generate_channels(&g, 1, 1e4, 0).unwrap();
        assert!(f.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn generation_is_deterministic() {
        let g = build_grids(8, 8).unwrap();
        let a = generate_inclusions(&g, 42, 1e2, 20, 4).unwrap();
        let b = generate_inclusions(&g, 42, 1e2, 20, 4).unwrap();
        assert_eq!(a, b);
        let c = generate_inclusions(&g, 43, 1e2, 20, 4).unwrap();
        assert_ne!(a.values(), c.values());
        let a = generate_channels(&g, 5, 1e4, 6).unwrap();
        let b = generate_channels(&g, 5, 1e4, 6).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_small_contrast() {
        let g = build_grids(2, 2).unwrap();
        assert!(generate_inclusions(&g, 0, 0.5, 1, 0).is_err());
        assert!(generate_channels(&g, 0, f64::NAN, 1).is_err());
    }

    #[test]
    fn channels_span_a_coarse_cell() {
        let g = build_grids(16, 16).unwrap();
        let n = g.fine_cells_per_side();
        let f = generate_channels(&g, 3, 1e4, 1).unwrap();
        let v = f.values();
        assert_eq!(f.max(), 1e4);
        let mut longest = 0;
        // horizontal runs
        for cy in 0..n {
            let mut run = 0;
            for cx in 0..n {
                run = if v[cy * n + cx] == 1e4 { run + 1 } else { 0 };
                longest = longest.max(run);
            }
        }
        // vertical runs
        for cx in 0..n {
            let mut run = 0;
            for cy in 0..n {
                run = if v[cy * n + cx] == 1e4 { run + 1 } else { 0 };
                longest = longest.max(run);
            }
        }
        assert!(longest >= g.nf(), "longest run {longest}");
    }

    #[test]
    fn raster_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = build_grids(4, 3).unwrap();
        let f = generate_inclusions(&g, 11, 1234.5678, 5, 2).unwrap();
        let p = dir.path().join("k.csv");
        save_raster(&f, &p).unwrap();
        let back = load_raster(&p, &g).unwrap();
        assert_eq!(back.values(), f.values());
        let p2 = dir.path().join("k2.csv");
        save_raster(&back, &p2).unwrap();
        assert_eq!(fs::read(&p).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn raster_rejects_bad_input() {
        let dir = tempfile::tempdir().unwrap();
        let g = build_grids(1, 2).unwrap();
        let p = dir.path().join("zero.csv");
        fs::write(&p, "1,1\n0,1\n").unwrap();
        assert!(matches!(load_raster(&p, &g), Err(Error::InvalidField(_))));
        fs::write(&p, "1,1,1\n1,1,1\n").unwrap();
        assert!(matches!(
            load_raster(&p, &g),
            Err(Error::DimensionMismatch { .. })
        ));
        fs::write(&p, "1,1\n").unwrap();
        assert!(matches!(
            load_raster(&p, &g),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn default_scale_raster_size() {
        let dir = tempfile::tempdir().unwrap();
        let g = build_grids(16, 16).unwrap();
        let f = generate_channels(&g, 9, 1e4, 4).unwrap();
        let p = dir.path().join("k.csv");
        save_raster(&f, &p).unwrap();
        let back = load_raster(&p, &g).unwrap();
        assert_eq!(back.values().len(), 65536);
    }
}
