//! Axis-aligned boxes and cell grids over them.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl AxisBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let b = AxisBox { lo, hi };
        b.validate()?;
        Ok(b)
    }

    /// `[0,1]ⁿ`.
    pub fn unit(n: usize) -> Self {
        AxisBox { lo: vec![0.0; n], hi: vec![1.0; n] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.is_empty() || self.lo.len() != self.hi.len() {
            return Err(Error::InvalidGrid(format!("box bounds have lengths {} and {}", self.lo.len(), self.hi.len())));
        }
        for (axis, (l, h)) in self.lo.iter().zip(&self.hi).enumerate() {
            if !(l.is_finite() && h.is_finite() && l < h) {
                return Err(Error::InvalidGrid(format!("degenerate box along axis {axis}: [{l}, {h}]")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.width(a)).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    pub fn contains_box(&self, other: &AxisBox) -> bool {
        let tol = 1e-12;
        other.dim() == self.dim()
            && (0..self.dim()).all(|a| {
                let scale = self.width(a).max(1.0);
                other.lo[a] >= self.lo[a] - tol * scale && other.hi[a] <= self.hi[a] + tol * scale
            })
    }
}

/// Cell predicate evaluated at cell centers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum Mask {
    /// `inner ≤ |x − center| ≤ outer`.
    Annulus { center: Vec<f64>, inner: f64, outer: f64 },
    /// `|x − center| ≤ radius`.
    Ball { center: Vec<f64>, radius: f64 },
    /// Keep cells whose center lies in the sub-box.
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

impl Mask {
    pub fn keeps(&self, x: &[f64]) -> bool {
        match self {
            Mask::Annulus { center, inner, outer } => {
                let r = crate::linalg::dist(x, center);
                r >= *inner && r <= *outer
            }
            Mask::Ball { center, radius } => crate::linalg::dist(x, center) <= *radius,
            Mask::Box { lo, hi } => x.iter().zip(lo.iter().zip(hi)).all(|(v, (l, h))| v >= l && v <= h),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridDomain {
    #[serde(rename = "box")]
    pub bbox: AxisBox,
    /// Cells per axis.
    pub resolution: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Mask>,
}

impl GridDomain {
    pub fn new(bbox: AxisBox, resolution: Vec<usize>, mask: Option<Mask>) -> Result<Self> {
        let g = GridDomain { bbox, resolution, mask };
        g.validate()?;
        Ok(g)
    }

    /// Uniform resolution along every axis, no mask.
    pub fn uniform(bbox: AxisBox, cells: usize) -> Result<Self> {
        let n = bbox.dim();
        Self::new(bbox, vec![cells; n], None)
    }

    pub fn validate(&self) -> Result<()> {
        self.bbox.validate()?;
        if self.resolution.len() != self.bbox.dim() {
            return Err(Error::InvalidGrid(format!(
                "resolution has {} axes, box has {}",
                self.resolution.len(),
                self.bbox.dim()
            )));
        }
        if let Some(axis) = self.resolution.iter().position(|&r| r < 4) {
            return Err(Error::InvalidGrid(format!(
                "resolution {} along axis {axis} is below the minimum of 4",
                self.resolution[axis]
            )));
        }
        match &self.mask {
            Some(Mask::Annulus { center, .. }) | Some(Mask::Ball { center, .. }) if center.len() != self.dim() => {
                return Err(Error::InvalidGrid("mask center dimension differs from the box".into()));
            }
            _ => {}
        }
        let kept = self.kept_cells();
        if kept.is_empty() {
            return Err(Error::InvalidGrid("mask removes every cell".into()));
        }
        if !self.is_connected(&kept) {
            return Err(Error::InvalidGrid("mask disconnects the grid".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.bbox.dim()
    }

    pub fn cell_count(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.bbox.width(axis) / self.resolution[axis] as f64
    }

    pub fn spacings(&self) -> Vec<f64> {
        (0..self.dim()).map(|a| self.spacing(a)).collect()
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).product()
    }

    /// Linear index with axis 0 varying fastest.
    pub fn linear(&self, idx: &[usize]) -> usize {
        let mut lin = 0;
        for a in (0..self.dim()).rev() {
            lin = lin * self.resolution[a] + idx[a];
        }
        lin
    }

    pub fn multi(&self, mut lin: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for (a, slot) in idx.iter_mut().enumerate() {
            *slot = lin % self.resolution[a];
            lin /= self.resolution[a];
        }
        idx
    }

    pub fn cell_center(&self, lin: usize) -> Vec<f64> {
        let idx = self.multi(lin);
        idx.iter().enumerate().map(|(a, &i)| self.bbox.lo[a] + (i as f64 + 0.5) * self.spacing(a)).collect()
    }

    pub fn is_kept(&self, lin: usize) -> bool {
        match &self.mask {
            None => true,
            Some(mask) => mask.keeps(&self.cell_center(lin)),
        }
    }

    pub fn kept_cells(&self) -> Vec<usize> {
        (0..self.cell_count()).filter(|&c| self.is_kept(c)).collect()
    }

    /// Face-adjacent neighbours inside the box.
    pub fn face_neighbors(&self, lin: usize) -> Vec<usize> {
        let idx = self.multi(lin);
        let mut out = Vec::with_capacity(2 * self.dim());
        for a in 0..self.dim() {
            if idx[a] > 0 {
                let mut j = idx.clone();
                j[a] -= 1;
                out.push(self.linear(&j));
            }
            if idx[a] + 1 < self.resolution[a] {
                let mut j = idx.clone();
                j[a] += 1;
                out.push(self.linear(&j));
            }
        }
        out
    }

    fn is_connected(&self, kept: &[usize]) -> bool {
        if self.mask.is_none() {
            return true;
        }
        let mut keep = vec![false; self.cell_count()];
        for &c in kept {
            keep[c] = true;
        }
        let mut seen = vec![false; self.cell_count()];
        let mut queue = VecDeque::from([kept[0]]);
        seen[kept[0]] = true;
        let mut count = 1;
        while let Some(c) = queue.pop_front() {
            for nb in self.face_neighbors(c) {
                if keep[nb] && !seen[nb] {
                    seen[nb] = true;
                    count += 1;
                    queue.push_back(nb);
                }
            }
        }
        count == kept.len()
    }

    /// The same grid with every axis resolution multiplied by `factor`.
    pub fn refined(&self, factor: usize) -> Self {
        GridDomain {
            bbox: self.bbox.clone(),
            resolution: self.resolution.iter().map(|r| r * factor).collect(),
            mask: self.mask.clone(),
        }
    }

    pub fn with_resolution(&self, cells: usize) -> Result<Self> {
        GridDomain::new(self.bbox.clone(), vec![cells; self.dim()], self.mask.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip_and_centers() {
        let g = GridDomain::new(AxisBox::new(vec![0.0, -1.0], vec![2.0, 1.0]).unwrap(), vec![4, 8], None).unwrap();
        for lin in 0..g.cell_count() {
            assert_eq!(g.linear(&g.multi(lin)), lin);
        }
        assert_eq!(g.cell_center(0), vec![0.25, -0.875]);
        assert_eq!(g.cell_center(g.linear(&[3, 7])), vec![1.75, 0.875]);
        assert!((g.cell_volume() - 0.125).abs() < 1e-15);
    }

    #[test]
    fn rejects_coarse_or_degenerate_grids() {
        assert!(GridDomain::uniform(AxisBox::unit(2), 3).is_err());
        assert!(AxisBox::new(vec![0.0], vec![0.0]).is_err());
        assert!(GridDomain::new(AxisBox::unit(2), vec![8], None).is_err());
    }

    #[test]
    fn annulus_mask_is_connected_and_split_mask_is_not() {
        let e = std::f64::consts::E;
        let b = AxisBox::new(vec![-e, -e], vec![e, e]).unwrap();
        let ann = Mask::Annulus { center: vec![0.0, 0.0], inner: 1.0, outer: e };
        let g = GridDomain::new(b.clone(), vec![32, 32], Some(ann)).unwrap();
        let kept = g.kept_cells().len();
        assert!(kept > 0 && kept < g.cell_count());

        // a thin annulus far narrower than a cell leaves isolated islands
        let thin = Mask::Annulus { center: vec![0.0, 0.0], inner: 1.0, outer: 1.001 };
        assert!(GridDomain::new(b, vec![32, 32], Some(thin)).is_err());
    }
}
