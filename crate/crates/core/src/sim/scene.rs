//! Declarative scene: vertical textured billboards in a bounded room.

use std::collections::HashSet;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::texture::{ImageTexture, Texture};
use super::SimError;

fn default_true() -> bool {
    true
}

/// Vertical rectangle. `facing_deg` is the compass heading of its front
/// normal: a billboard at the origin with `facing_deg = 180` faces a viewer
/// standing to its south.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Billboard {
    pub id: String,
    pub center: [f64; 3],
    /// Width and height in meters.
    pub size: [f64; 2],
    #[serde(default)]
    pub facing_deg: f64,
    pub texture: Texture,
    #[serde(default = "default_true")]
    pub visible: bool,
}

impl Billboard {
    pub fn normal(&self) -> [f64; 3] {
        let a = self.facing_deg.to_radians();
        [a.sin(), a.cos(), 0.0]
    }

    /// Horizontal surface axis, pointing to the right of a viewer facing the front.
    pub fn across(&self) -> [f64; 3] {
        let a = self.facing_deg.to_radians();
        [-a.cos(), a.sin(), 0.0]
    }

    pub fn corners(&self) -> [[f64; 3]; 4] {
        let r = self.across();
        let (hw, hh) = (self.size[0] / 2.0, self.size[1] / 2.0);
        let c = self.center;
        let at = |sr: f64, su: f64| [c[0] + sr * hw * r[0], c[1] + sr * hw * r[1], c[2] + su * hh];
        [at(-1.0, 1.0), at(1.0, 1.0), at(1.0, -1.0), at(-1.0, -1.0)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    #[serde(default)]
    pub objects: Vec<Billboard>,
    /// `[[x_min, y_min, z_min], [x_max, y_max, z_max]]`.
    #[serde(default = "Scene::default_bounds")]
    pub bounds: [[f64; 3]; 2],
    #[serde(default)]
    pub background_seed: u64,
}

impl Default for Scene {
    fn default() -> Self {
        Self { objects: Vec::new(), bounds: Self::default_bounds(), background_seed: 0 }
    }
}

impl Scene {
    fn default_bounds() -> [[f64; 3]; 2] {
        [[-50.0, -50.0, 0.0], [50.0, 50.0, 20.0]]
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let mut seen = HashSet::new();
        for o in &self.objects {
            if !seen.insert(o.id.as_str()) {
                return Err(SimError::InvalidConfig(format!("duplicate object id `{}`", o.id)));
            }
            if !(o.size[0] > 0.0 && o.size[1] > 0.0) {
                return Err(SimError::InvalidConfig(format!("object `{}` has non-positive size", o.id)));
            }
            let [lo, hi] = self.bounds;
            if (0..3).any(|i| o.center[i] < lo[i] || o.center[i] > hi[i]) {
                return Err(SimError::InvalidConfig(format!("object `{}` lies outside the world bounds", o.id)));
            }
        }
        Ok(())
    }

    /// Decodes image textures, resolving relative paths against `base`.
    pub fn load_textures(&mut self, base: &Path) -> Result<(), SimError> {
        for o in &mut self.objects {
            if let Texture::Image { path, data } = &mut o.texture {
                let full = base.join(&*path);
                let img = ImageTexture::load(&full)
                    .map_err(|e| SimError::InvalidConfig(format!("texture {}: {e}", full.display())))?;
                *data = Some(Arc::new(img));
            }
        }
        Ok(())
    }

    pub fn object(&self, id: &str) -> Result<&Billboard, SimError> {
        self.objects.iter().find(|o| o.id == id).ok_or_else(|| SimError::UnknownObject(id.to_string()))
    }

    pub fn set_visible(&mut self, id: &str, visible: bool) -> Result<(), SimError> {
        let o = self.objects.iter_mut().find(|o| o.id == id).ok_or_else(|| SimError::UnknownObject(id.to_string()))?;
        o.visible = visible;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn board(id: &str, center: [f64; 3]) -> Billboard {
        Billboard { id: id.into(), center, size: [1.0, 1.0], facing_deg: 180.0, texture: Texture::Solid { value: 1.0 }, visible: true }
    }

    #[test]
    fn validation() {
        let mut scene = Scene { objects: vec![board("a", [0.0, 5.0, 1.0]), board("a", [1.0, 5.0, 1.0])], ..Default::default() };
        assert!(scene.validate().is_err());
        scene.objects[1].id = "b".into();
        assert!(scene.validate().is_ok());
        scene.objects[1].center = [0.0, 500.0, 1.0];
        assert!(scene.validate().is_err());
    }

    #[test]
    fn south_facing_geometry() {
        let b = board("a", [0.0, 5.0, 1.0]);
        let n = b.normal();
        assert!(n[1] < -0.999);
        // viewer at the south looks north: their right is east
        assert!(b.across()[0] > 0.999);
        let c = b.corners();
        assert!((c[0][0] + 0.5).abs() < 1e-12 && (c[0][2] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn unknown_id() {
        let scene = Scene::default();
        assert!(matches!(scene.object("x"), Err(SimError::UnknownObject(_))));
    }
}
