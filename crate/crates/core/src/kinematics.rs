//! Planar revolute chains and their points of interest.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::geometry::{Point, Pose2};

/// A body-fixed query point: `fraction` of the way along link `link`, with
/// distance threshold `clearance`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Poi {
    pub link: usize,
    pub fraction: f64,
    pub clearance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanarArm {
    link_lengths: Vec<f64>,
    base: Pose2,
    pois: Vec<Poi>,
}

impl PlanarArm {
    pub fn new(link_lengths: Vec<f64>, base: Pose2, pois: Vec<Poi>) -> Result<Self> {
        let arm = Self {
            link_lengths,
            base,
            pois,
        };
        arm.validate()?;
        Ok(arm)
    }

    /// One PoI at the midpoint and one at the end of every link, all with `clearance`.
    pub fn with_default_pois(link_lengths: Vec<f64>, base: Pose2, clearance: f64) -> Result<Self> {
        let pois = (0..link_lengths.len())
            .flat_map(|link| {
                [0.5, 1.0].map(|fraction| Poi {
                    link,
                    fraction,
                    clearance,
                })
            })
            .collect();
        Self::new(link_lengths, base, pois)
    }

    pub fn validate(&self) -> Result<()> {
        if self.link_lengths.is_empty() {
            return Err(Error::InvalidParameter("arm needs at least one link".into()));
        }
        if let Some(l) = self.link_lengths.iter().find(|&&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidParameter(format!("link length must be positive, got {l}")));
        }
        for poi in &self.pois {
            if poi.link >= self.link_lengths.len() {
                return Err(Error::Index {
                    index: poi.link,
                    len: self.link_lengths.len(),
                });
            }
            if !(0.0..=1.0).contains(&poi.fraction) || !(poi.clearance >= 0.0) {
                return Err(Error::InvalidParameter(format!("bad PoI {poi:?}")));
            }
        }
        Ok(())
    }

    pub fn n_joints(&self) -> usize {
        self.link_lengths.len()
    }

    pub fn link_lengths(&self) -> &[f64] {
        &self.link_lengths
    }

    pub fn base(&self) -> Pose2 {
        self.base
    }

    pub fn pois(&self) -> &[Poi] {
        &self.pois
    }

    pub fn reach(&self) -> f64 {
        self.link_lengths.iter().sum()
    }

    /// Joint positions (index `j` is the origin of link `j`) and absolute link angles.
    fn chain(&self, joints: &DVector<f64>) -> (Vec<Point>, Vec<f64>) {
        let mut origins = Vec::with_capacity(self.n_joints());
        let mut angles = Vec::with_capacity(self.n_joints());
        let mut p = self.base.translation();
        let mut angle = self.base.yaw;
        for (j, len) in self.link_lengths.iter().enumerate() {
            angle += joints[j];
            origins.push(p);
            angles.push(angle);
            p += Point::new(angle.cos(), angle.sin()) * *len;
        }
        (origins, angles)
    }

    fn check(&self, joints: &DVector<f64>, poi_index: usize) -> Result<Poi> {
        check_dim("joints", self.n_joints(), joints.len())?;
        self.pois.get(poi_index).copied().ok_or(Error::Index {
            index: poi_index,
            len: self.pois.len(),
        })
    }

    fn locate(&self, poi: Poi, origins: &[Point], angles: &[f64]) -> Point {
        let angle = angles[poi.link];
        origins[poi.link] + Point::new(angle.cos(), angle.sin()) * (poi.fraction * self.link_lengths[poi.link])
    }

    /// Workspace position of PoI `poi_index`.
    pub fn fk_poi(&self, joints: &DVector<f64>, poi_index: usize) -> Result<Point> {
        let poi = self.check(joints, poi_index)?;
        let (origins, angles) = self.chain(joints);
        Ok(self.locate(poi, &origins, &angles))
    }

    /// Tip of the last link.
    pub fn end_effector(&self, joints: &DVector<f64>) -> Result<Point> {
        check_dim("joints", self.n_joints(), joints.len())?;
        let (origins, angles) = self.chain(joints);
        let last = self.n_joints() - 1;
        Ok(self.locate(
            Poi {
                link: last,
                fraction: 1.0,
                clearance: 0.0,
            },
            &origins,
            &angles,
        ))
    }

    /// `2 x n_joints` positional Jacobian of PoI `poi_index`.
    ///
    /// Column `j` is `z x (p - o_j)` for joints up to the owning link, zero beyond it.
    pub fn fk_jacobian(&self, joints: &DVector<f64>, poi_index: usize) -> Result<DMatrix<f64>> {
        let poi = self.check(joints, poi_index)?;
        let (origins, angles) = self.chain(joints);
        let p = self.locate(poi, &origins, &angles);
        Ok(self.point_jacobian(&p, poi.link, &origins))
    }

    /// Jacobian of the tip of the last link.
    pub fn end_effector_jacobian(&self, joints: &DVector<f64>) -> Result<DMatrix<f64>> {
        let tip = self.end_effector(joints)?;
        let (origins, _) = self.chain(joints);
        Ok(self.point_jacobian(&tip, self.n_joints() - 1, &origins))
    }

    fn point_jacobian(&self, p: &Point, link: usize, origins: &[Point]) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(2, self.n_joints());
        for (j, o) in origins.iter().enumerate().take(link + 1) {
            let r = p - o;
            jac[(0, j)] = -r.y;
            jac[(1, j)] = r.x;
        }
        jac
    }
}
