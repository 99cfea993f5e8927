//! Region-of-interest grid, node placement, ground-truth scenes and the
//! network incidence matrix.
//!
//! Conventions used throughout the crate:
//!
//! * Pixel `n = j * nx + i` has its center at
//!   `origin + ((i + 1/2) d, (j + 1/2) d)` (x runs fastest).
//! * Link `m = i * n_rx + j` connects Tx `i` to Rx `j` (row-major over Tx,
//!   then Rx, all zero based).
//! * Nodes are numbered Tx first, then Rx, when a flat index is needed.

use std::fmt;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in the 2D plane, in meters.
pub type Point = [f64; 2];

pub(crate) fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: Point,
    pub pixel_size: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn new(origin: Point, pixel_size: f64, nx: usize, ny: usize) -> Result<Self> {
        let g = GridSpec {
            origin,
            pixel_size,
            nx,
            ny,
        };
        g.validate()?;
        Ok(g)
    }

    /// Square grid centered on the origin of the plane.
    pub fn centered(pixel_size: f64, n_side: usize) -> Result<Self> {
        let half = 0.5 * pixel_size * n_side as f64;
        GridSpec::new([-half, -half], pixel_size, n_side, n_side)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pixel_size > 0.0 && self.pixel_size.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "pixel size must be positive, got {}",
                self.pixel_size
            )));
        }
        if self.nx == 0 || self.ny == 0 {
            return Err(Error::InvalidGrid(format!(
                "pixel counts must be nonzero, got {}x{}",
                self.nx, self.ny
            )));
        }
        if !(self.origin[0].is_finite() && self.origin[1].is_finite()) {
            return Err(Error::InvalidGrid("origin must be finite".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn center(&self, n: usize) -> Point {
        let i = n % self.nx;
        let j = n / self.nx;
        [
            self.origin[0] + (i as f64 + 0.5) * self.pixel_size,
            self.origin[1] + (j as f64 + 0.5) * self.pixel_size,
        ]
    }

    /// Extent of the ROI along x and y.
    pub fn extent(&self) -> [f64; 2] {
        [
            self.nx as f64 * self.pixel_size,
            self.ny as f64 * self.pixel_size,
        ]
    }

    pub fn half_pixel(&self) -> f64 {
        0.5 * self.pixel_size
    }
}

/// Pixel centers in row-major order (x fastest).
pub fn build_grid(spec: &GridSpec) -> Result<Vec<Point>> {
    spec.validate()?;
    Ok((0..spec.len()).map(|n| spec.center(n)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeId {
    Tx(usize),
    Rx(usize),
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Tx(i) => write!(f, "Tx{i}"),
            NodeId::Rx(j) => write!(f, "Rx{j}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeLayout {
    pub tx: Vec<Point>,
    pub rx: Vec<Point>,
    /// LOS visibility per link, indexed by `m = i * n_rx + j`.
    pub visibility: Vec<bool>,
}

impl NodeLayout {
    /// Layout with every link visible.
    pub fn new(tx: Vec<Point>, rx: Vec<Point>) -> Result<Self> {
        let visibility = vec![true; tx.len() * rx.len()];
        Self::with_visibility(tx, rx, visibility)
    }

    pub fn with_visibility(tx: Vec<Point>, rx: Vec<Point>, visibility: Vec<bool>) -> Result<Self> {
        let layout = NodeLayout { tx, rx, visibility };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tx.is_empty() || self.rx.is_empty() {
            return Err(Error::InvalidLayout("need at least one Tx and one Rx".into()));
        }
        if self.visibility.len() != self.n_links() {
            return Err(Error::InvalidLayout(format!(
                "visibility has {} entries for {} links",
                self.visibility.len(),
                self.n_links()
            )));
        }
        if self
            .tx
            .iter()
            .chain(&self.rx)
            .any(|p| !(p[0].is_finite() && p[1].is_finite()))
        {
            return Err(Error::InvalidLayout("node positions must be finite".into()));
        }
        Ok(())
    }

    pub fn n_tx(&self) -> usize {
        self.tx.len()
    }

    pub fn n_rx(&self) -> usize {
        self.rx.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.tx.len() + self.rx.len()
    }

    pub fn n_links(&self) -> usize {
        self.tx.len() * self.rx.len()
    }

    /// `(tx index, rx index)` of link `m`.
    pub fn link(&self, m: usize) -> (usize, usize) {
        (m / self.n_rx(), m % self.n_rx())
    }

    pub fn link_index(&self, tx: usize, rx: usize) -> usize {
        tx * self.n_rx() + rx
    }

    pub fn link_endpoints(&self, m: usize) -> (Point, Point) {
        let (i, j) = self.link(m);
        (self.tx[i], self.rx[j])
    }

    pub fn node_index(&self, id: NodeId) -> Option<usize> {
        match id {
            NodeId::Tx(i) if i < self.n_tx() => Some(i),
            NodeId::Rx(j) if j < self.n_rx() => Some(self.n_tx() + j),
            _ => None,
        }
    }

    pub fn node_id(&self, index: usize) -> NodeId {
        if index < self.n_tx() {
            NodeId::Tx(index)
        } else {
            NodeId::Rx(index - self.n_tx())
        }
    }

    /// Links touching each node, counting every Tx-Rx pair.
    pub fn link_counts(&self) -> Vec<usize> {
        let mut c = vec![self.n_rx(); self.n_tx()];
        c.extend(std::iter::repeat_n(self.n_tx(), self.n_rx()));
        c
    }

    /// Node with the largest link count, ties going to the lowest index.
    pub fn default_reference(&self) -> NodeId {
        let counts = self.link_counts();
        let mut best = 0;
        for (k, &c) in counts.iter().enumerate() {
            if c > counts[best] {
                best = k;
            }
        }
        self.node_id(best)
    }
}

/// How nodes are scattered around the ROI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NodePlacement {
    /// Gap between the ROI boundary and the inner edge of the band, as a
    /// fraction of the ROI extent.
    pub margin: f64,
    /// Band width as a fraction of the ROI extent.
    pub band: f64,
}

impl Default for NodePlacement {
    fn default() -> Self {
        NodePlacement {
            margin: 0.1,
            band: 0.2,
        }
    }
}

/// Draws node positions uniformly over the rectangular band surrounding the
/// grid.
pub fn place_nodes(
    seed: u64,
    grid: &GridSpec,
    n_tx: usize,
    n_rx: usize,
    placement: NodePlacement,
) -> Result<NodeLayout> {
    grid.validate()?;
    if !(placement.margin >= 0.0 && placement.band > 0.0) {
        return Err(Error::InvalidLayout(format!(
            "placement margin must be >= 0 and band > 0, got {:?}",
            placement
        )));
    }
    let ext = grid.extent();
    let size = ext[0].max(ext[1]);
    let inner = placement.margin * size;
    let outer = inner + placement.band * size;
    let lo = [grid.origin[0] - outer, grid.origin[1] - outer];
    let hi = [
        grid.origin[0] + ext[0] + outer,
        grid.origin[1] + ext[1] + outer,
    ];
    let in_inner = |p: Point| {
        p[0] > grid.origin[0] - inner
            && p[0] < grid.origin[0] + ext[0] + inner
            && p[1] > grid.origin[1] - inner
            && p[1] < grid.origin[1] + ext[1] + inner
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |count: usize| -> Vec<Point> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let p = [
                rng.random_range(lo[0]..hi[0]),
                rng.random_range(lo[1]..hi[1]),
            ];
            if !in_inner(p) {
                out.push(p);
            }
        }
        out
    };
    let tx = draw(n_tx);
    let rx = draw(n_rx);
    NodeLayout::new(tx, rx)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    pub pixel: usize,
    /// Displacement from the pixel center.
    pub offset: Point,
    pub reflectivity: f64,
}

impl Scatterer {
    pub fn position(&self, grid: &GridSpec) -> Point {
        let c = grid.center(self.pixel);
        [c[0] + self.offset[0], c[1] + self.offset[1]]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scatterers: Vec<Scatterer>,
}

impl Scene {
    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        let half = grid.half_pixel();
        let mut seen = std::collections::HashSet::new();
        for s in &self.scatterers {
            if s.pixel >= grid.len() {
                return Err(Error::InvalidGrid(format!("pixel {} out of range", s.pixel)));
            }
            if !seen.insert(s.pixel) {
                return Err(Error::InvalidGrid(format!("pixel {} used twice", s.pixel)));
            }
            if !(s.reflectivity > 0.0 && s.reflectivity <= 1.0) {
                return Err(Error::OutOfRange(format!(
                    "reflectivity {} outside (0, 1]",
                    s.reflectivity
                )));
            }
            if s.offset[0].abs() > half || s.offset[1].abs() > half {
                return Err(Error::OutOfRange(format!(
                    "offset {:?} exceeds half a pixel",
                    s.offset
                )));
            }
        }
        Ok(())
    }

    /// True scatterer positions.
    pub fn positions(&self, grid: &GridSpec) -> Vec<Point> {
        self.scatterers.iter().map(|s| s.position(grid)).collect()
    }

    /// Dense reflectivity vector of length `N`.
    pub fn reflectivity_vector(&self, n_pixels: usize) -> Vec<f64> {
        let mut x = vec![0.0; n_pixels];
        for s in &self.scatterers {
            x[s.pixel] = s.reflectivity;
        }
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetLaw {
    /// Scatterers sit exactly on pixel centers.
    None,
    /// Offsets uniform over the pixel square.
    Uniform,
}

pub fn generate_scene(
    seed: u64,
    grid: &GridSpec,
    target_count: usize,
    law: OffsetLaw,
    reflectivity_range: (f64, f64),
) -> Result<Scene> {
    grid.validate()?;
    if target_count > grid.len() {
        return Err(Error::TooManyTargets {
            requested: target_count,
            available: grid.len(),
        });
    }
    let (rlo, rhi) = reflectivity_range;
    if !(rlo > 0.0 && rlo <= rhi && rhi <= 1.0) {
        return Err(Error::OutOfRange(format!(
            "reflectivity range ({rlo}, {rhi}) must lie in (0, 1]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = sample(&mut rng, grid.len(), target_count).into_vec();
    pixels.sort_unstable();
    let half = grid.half_pixel();
    let scatterers = pixels
        .into_iter()
        .map(|pixel| {
            let offset = match law {
                OffsetLaw::None => [0.0, 0.0],
                OffsetLaw::Uniform => [
                    rng.random_range(-half..half),
                    rng.random_range(-half..half),
                ],
            };
            // (lo, hi] rather than [lo, hi) so the upper end is reachable
            let u: f64 = rng.random();
            let reflectivity = rhi - u * (rhi - rlo);
            Scatterer {
                pixel,
                offset,
                reflectivity,
            }
        })
        .collect();
    Ok(Scene { scatterers })
}

/// Link-to-node incidence matrix with the reference node's column removed.
#[derive(Debug, Clone, PartialEq)]
pub struct IncidenceMatrix {
    pub matrix: DMatrix<f64>,
    pub reference: NodeId,
    /// Node owning each column.
    pub columns: Vec<NodeId>,
}

impl IncidenceMatrix {
    pub fn n_links(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_params(&self) -> usize {
        self.matrix.ncols()
    }

    /// Keeps only the rows flagged in `mask`.
    pub fn masked(&self, mask: &[bool]) -> DMatrix<f64> {
        let rows: Vec<usize> = (0..self.n_links()).filter(|&m| mask[m]).collect();
        self.matrix.select_rows(rows.iter())
    }

    /// Link phases `G * phi` for a reduced node-phase vector.
    pub fn apply(&self, node_phases: &[f64]) -> Vec<f64> {
        let v = nalgebra::DVector::from_column_slice(node_phases);
        (&self.matrix * v).iter().copied().collect()
    }

    /// Reduces a full node vector (Tx then Rx) to the column basis by
    /// subtracting the reference node's value.
    pub fn reduce(&self, layout: &NodeLayout, full: &[f64]) -> Vec<f64> {
        let r = full[layout.node_index(self.reference).expect("reference in layout")];
        self.columns
            .iter()
            .map(|&id| full[layout.node_index(id).expect("column in layout")] - r)
            .collect()
    }
}

pub fn build_incidence(layout: &NodeLayout, reference: Option<NodeId>) -> Result<IncidenceMatrix> {
    layout.validate()?;
    let reference = reference.unwrap_or_else(|| layout.default_reference());
    let ref_index = layout
        .node_index(reference)
        .ok_or(match reference {
            NodeId::Tx(i) | NodeId::Rx(i) => Error::UnknownNode(i),
        })?;
    let columns: Vec<NodeId> = (0..layout.n_nodes())
        .filter(|&k| k != ref_index)
        .map(|k| layout.node_id(k))
        .collect();
    let col_of = |k: usize| -> Option<usize> {
        match k.cmp(&ref_index) {
            std::cmp::Ordering::Less => Some(k),
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Greater => Some(k - 1),
        }
    };
    let mut matrix = DMatrix::zeros(layout.n_links(), columns.len());
    for m in 0..layout.n_links() {
        let (i, j) = layout.link(m);
        if let Some(c) = col_of(i) {
            matrix[(m, c)] = 1.0;
        }
        if let Some(c) = col_of(layout.n_tx() + j) {
            matrix[(m, c)] = -1.0;
        }
    }
    Ok(IncidenceMatrix {
        matrix,
        reference,
        columns,
    })
}

/// Grid, layout and scene bundled for the line-oriented scene file.
///
/// ```text
/// # ogsync scene v1
/// grid <origin_x> <origin_y> <pixel_size> <nx> <ny>
/// tx <x> <y>
/// rx <x> <y>
/// los <m> <0|1>
/// scatterer <pixel> <dx> <dy> <reflectivity>
/// ```
///
/// All lengths are meters; floats are written in shortest round-trip form.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFile {
    pub grid: GridSpec,
    pub layout: NodeLayout,
    pub scene: Scene,
}

impl SceneFile {
    pub fn to_text(&self) -> String {
        let mut s = String::from("# ogsync scene v1\n");
        let g = &self.grid;
        let _ = writeln!(
            s,
            "grid {} {} {} {} {}",
            g.origin[0], g.origin[1], g.pixel_size, g.nx, g.ny
        );
        for p in &self.layout.tx {
            let _ = writeln!(s, "tx {} {}", p[0], p[1]);
        }
        for p in &self.layout.rx {
            let _ = writeln!(s, "rx {} {}", p[0], p[1]);
        }
        for (m, &v) in self.layout.visibility.iter().enumerate() {
            let _ = writeln!(s, "los {} {}", m, u8::from(v));
        }
        for sc in &self.scene.scatterers {
            let _ = writeln!(
                s,
                "scatterer {} {} {} {}",
                sc.pixel, sc.offset[0], sc.offset[1], sc.reflectivity
            );
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut grid = None;
        let mut tx = Vec::new();
        let mut rx = Vec::new();
        let mut los: Vec<(usize, bool)> = Vec::new();
        let mut scatterers = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = ln + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let mut it = body.split_whitespace();
            let tag = it.next().unwrap_or_default();
            let fields: Vec<&str> = it.collect();
            let want = |n: usize| -> Result<()> {
                if fields.len() == n {
                    Ok(())
                } else {
                    Err(Error::Parse {
                        line,
                        msg: format!("`{tag}` expects {n} fields, got {}", fields.len()),
                    })
                }
            };
            let f = |k: usize| -> Result<f64> {
                fields[k].parse::<f64>().map_err(|e| Error::Parse {
                    line,
                    msg: format!("bad number `{}`: {e}", fields[k]),
                })
            };
            let u = |k: usize| -> Result<usize> {
                fields[k].parse::<usize>().map_err(|e| Error::Parse {
                    line,
                    msg: format!("bad integer `{}`: {e}", fields[k]),
                })
            };
            match tag {
                "grid" => {
                    want(5)?;
                    grid = Some(GridSpec {
                        origin: [f(0)?, f(1)?],
                        pixel_size: f(2)?,
                        nx: u(3)?,
                        ny: u(4)?,
                    });
                }
                "tx" => {
                    want(2)?;
                    tx.push([f(0)?, f(1)?]);
                }
                "rx" => {
                    want(2)?;
                    rx.push([f(0)?, f(1)?]);
                }
                "los" => {
                    want(2)?;
                    let v = match fields[1] {
                        "0" => false,
                        "1" => true,
                        other => {
                            return Err(Error::Parse {
                                line,
                                msg: format!("visibility must be 0 or 1, got `{other}`"),
                            })
                        }
                    };
                    los.push((u(0)?, v));
                }
                "scatterer" => {
                    want(4)?;
                    scatterers.push(Scatterer {
                        pixel: u(0)?,
                        offset: [f(1)?, f(2)?],
                        reflectivity: f(3)?,
                    });
                }
                other => {
                    return Err(Error::Parse {
                        line,
                        msg: format!("unknown record `{other}`"),
                    })
                }
            }
        }
        let grid = grid.ok_or(Error::Parse {
            line: 0,
            msg: "missing `grid` record".into(),
        })?;
        grid.validate()?;
        let mut visibility = vec![true; tx.len() * rx.len()];
        for (m, v) in los {
            *visibility.get_mut(m).ok_or(Error::Parse {
                line: 0,
                msg: format!("link {m} out of range"),
            })? = v;
        }
        let layout = NodeLayout::with_visibility(tx, rx, visibility)?;
        let scene = Scene { scatterers };
        scene.validate(&grid)?;
        Ok(SceneFile {
            grid,
            layout,
            scene,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Rank by Gaussian elimination with partial pivoting.
    fn rank_by_elimination(m: &DMatrix<f64>) -> usize {
        let mut a = m.clone();
        let (rows, cols) = a.shape();
        let mut rank = 0;
        for c in 0..cols {
            let piv = (rank..rows).max_by(|&x, &y| a[(x, c)].abs().total_cmp(&a[(y, c)].abs()));
            let Some(p) = piv else { break };
            if a[(p, c)].abs() < 1e-12 {
                continue;
            }
            a.swap_rows(p, rank);
            for r in 0..rows {
                if r != rank {
                    let factor = a[(r, c)] / a[(rank, c)];
                    for k in 0..cols {
                        a[(r, k)] -= factor * a[(rank, k)];
                    }
                }
            }
            rank += 1;
        }
        rank
    }

    #[test]
    fn grid_centers() {
        let g = GridSpec::new([0.0, 0.0], 0.2, 25, 25).unwrap();
        let c = build_grid(&g).unwrap();
        assert_eq!(c.len(), 625);
        assert!((c[0][0] - 0.1).abs() < 1e-12 && (c[0][1] - 0.1).abs() < 1e-12);

        let g = GridSpec::new([3.0, -1.0], 1.0, 1, 1).unwrap();
        assert_eq!(build_grid(&g).unwrap(), vec![[3.5, -0.5]]);

        let g = GridSpec::new([0.0, 0.0], 2.0, 2, 2).unwrap();
        assert_eq!(
            build_grid(&g).unwrap(),
            vec![[1.0, 1.0], [3.0, 1.0], [1.0, 3.0], [3.0, 3.0]]
        );
    }

    #[test]
    fn grid_rejects_bad_dims() {
        assert!(GridSpec::new([0.0, 0.0], 0.0, 2, 2).is_err());
        assert!(GridSpec::new([0.0, 0.0], -1.0, 2, 2).is_err());
        assert!(GridSpec::new([0.0, 0.0], 1.0, 0, 2).is_err());
    }

    #[test]
    fn scene_determinism_and_laws() {
        let g = GridSpec::centered(0.2, 10).unwrap();
        let a = generate_scene(7, &g, 3, OffsetLaw::Uniform, (0.5, 1.0)).unwrap();
        let b = generate_scene(7, &g, 3, OffsetLaw::Uniform, (0.5, 1.0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.scatterers.len(), 3);
        a.validate(&g).unwrap();

        let on = generate_scene(7, &g, 5, OffsetLaw::None, (0.5, 1.0)).unwrap();
        assert!(on.scatterers.iter().all(|s| s.offset == [0.0, 0.0]));

        assert!(matches!(
            generate_scene(1, &g, 101, OffsetLaw::None, (0.5, 1.0)),
            Err(Error::TooManyTargets { .. })
        ));
    }

    #[test]
    fn uniform_offsets_have_zero_mean() {
        let g = GridSpec::centered(0.2, 100).unwrap();
        let scene = generate_scene(3, &g, 10_000, OffsetLaw::Uniform, (0.1, 1.0)).unwrap();
        let n = scene.scatterers.len() as f64;
        for axis in 0..2 {
            let mean: f64 = scene.scatterers.iter().map(|s| s.offset[axis]).sum::<f64>() / n;
            assert!(mean.abs() < 0.01 * g.pixel_size, "axis {axis} mean {mean}");
        }
    }

    fn layout(n_tx: usize, n_rx: usize) -> NodeLayout {
        let tx = (0..n_tx).map(|i| [i as f64, -5.0]).collect();
        let rx = (0..n_rx).map(|j| [j as f64, 5.0]).collect();
        NodeLayout::new(tx, rx).unwrap()
    }

    #[test]
    fn incidence_rows() {
        let l = layout(3, 4);
        let g = build_incidence(&l, Some(NodeId::Tx(0))).unwrap();
        assert_eq!(g.matrix.shape(), (12, 6));
        // Tx1 (second Tx) to Rx2 (third Rx)
        let m = l.link_index(1, 2);
        let row: Vec<f64> = g.matrix.row(m).iter().copied().collect();
        let tx_col = g.columns.iter().position(|&c| c == NodeId::Tx(1)).unwrap();
        let rx_col = g.columns.iter().position(|&c| c == NodeId::Rx(2)).unwrap();
        for (c, v) in row.iter().enumerate() {
            let want = if c == tx_col {
                1.0
            } else if c == rx_col {
                -1.0
            } else {
                0.0
            };
            assert_eq!(*v, want);
        }
        for m in 0..l.n_links() {
            let (i, _) = l.link(m);
            let s: f64 = g.matrix.row(m).sum();
            let want = if i == 0 { -1.0 } else { 0.0 };
            assert_eq!(s, want);
        }
    }

    #[test]
    fn incidence_rank_two_by_two() {
        let l = layout(2, 2);
        let g = build_incidence(&l, Some(NodeId::Tx(0))).unwrap();
        assert_eq!(g.matrix.shape(), (4, 3));
        assert_eq!(rank_by_elimination(&g.matrix), 3);
    }

    #[test]
    fn reference_defaults_and_errors() {
        let l = layout(2, 3);
        // Tx nodes see three links each, Rx nodes two.
        assert_eq!(l.default_reference(), NodeId::Tx(0));
        let l = layout(3, 2);
        assert_eq!(l.default_reference(), NodeId::Rx(0));
        assert!(matches!(
            build_incidence(&l, Some(NodeId::Rx(7))),
            Err(Error::UnknownNode(7))
        ));
    }

    #[test]
    fn scene_file_round_trip() {
        let g = GridSpec::centered(0.2, 10).unwrap();
        let mut l = place_nodes(5, &g, 4, 3, NodePlacement::default()).unwrap();
        l.visibility[4] = false;
        let scene = generate_scene(5, &g, 4, OffsetLaw::Uniform, (0.5, 1.0)).unwrap();
        let file = SceneFile {
            grid: g,
            layout: l,
            scene,
        };
        let back = SceneFile::from_text(&file.to_text()).unwrap();
        assert_eq!(back, file);
    }

    #[test]
    fn scene_file_reports_line() {
        let err = SceneFile::from_text("grid 0 0 1 2 2\ntx 0 zero\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn placement_keeps_out_of_roi() {
        let g = GridSpec::centered(0.2, 10).unwrap();
        let l = place_nodes(1, &g, 50, 50, NodePlacement::default()).unwrap();
        for p in l.tx.iter().chain(&l.rx) {
            assert!(p[0].abs() > 1.2 || p[1].abs() > 1.2, "{p:?}");
            assert!(p[0].abs() <= 1.8 && p[1].abs() <= 1.8);
        }
    }

    fn connected_mask(n_tx: usize, n_rx: usize, mask: &[bool]) -> bool {
        let n = n_tx + n_rx;
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for m in 0..mask.len() {
                if !mask[m] {
                    continue;
                }
                let (i, j) = (m / n_rx, n_tx + m % n_rx);
                let v = if u == i {
                    j
                } else if u == j {
                    i
                } else {
                    continue;
                };
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.iter().all(|&s| s)
    }

    proptest! {
        #[test]
        fn connected_graphs_have_full_rank(
            n_tx in 1usize..5,
            n_rx in 1usize..5,
            bits in proptest::collection::vec(any::<bool>(), 16),
        ) {
            let l = layout(n_tx, n_rx);
            let mask: Vec<bool> = (0..l.n_links()).map(|m| bits[m]).collect();
            prop_assume!(connected_mask(n_tx, n_rx, &mask));
            let g = build_incidence(&l, None).unwrap();
            let gm = g.masked(&mask);
            let gtg = gm.transpose() * &gm;
            prop_assert_eq!(rank_by_elimination(&gtg), g.n_params());
            prop_assert!(gtg.try_inverse().is_some());
        }

        #[test]
        fn reduced_map_is_injective(
            phases in proptest::collection::vec(-3.0f64..3.0, 7),
            shift in -2.0f64..2.0,
        ) {
            let l = layout(3, 4);
            let g = build_incidence(&l, None).unwrap();
            let shifted: Vec<f64> = phases.iter().map(|p| p + shift).collect();
            // common shift on the full node vector is invisible on links
            let a = g.apply(&g.reduce(&l, &phases));
            let b = g.apply(&g.reduce(&l, &shifted));
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            // after deleting the reference column the map is injective
            let red = g.reduce(&l, &phases);
            let back = (g.matrix.transpose() * &g.matrix)
                .try_inverse()
                .unwrap() * g.matrix.transpose() * nalgebra::DVector::from_vec(a.clone());
            for (x, y) in red.iter().zip(back.iter()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn offsets_within_half_pixel(seed in 0u64..1000, count in 1usize..30) {
            let g = GridSpec::centered(0.3, 6).unwrap();
            let s = generate_scene(seed, &g, count, OffsetLaw::Uniform, (0.2, 1.0)).unwrap();
            for sc in &s.scatterers {
                prop_assert!(sc.offset[0].abs() <= 0.15 && sc.offset[1].abs() <= 0.15);
                prop_assert!(sc.reflectivity > 0.0 && sc.reflectivity <= 1.0);
            }
        }
    }
}
