use std::path::Path;

use crate::error::{Error, Result};
use crate::io::read_mesh;

use super::TriMesh;

/// Checks that `m` is a closed genus-0 surface inside `[-1,1]^3`.
pub fn validate_template(m: &TriMesh) -> Result<()> {
    if !m.is_watertight() {
        return Err(Error::TemplateTopology("surface is not closed".into()));
    }
    if !m.is_manifold() {
        return Err(Error::TemplateTopology("surface has non-manifold vertices".into()));
    }
    if m.component_count() != 1 {
        return Err(Error::TemplateTopology(format!("{} components", m.component_count())));
    }
    let chi = m.euler_characteristic();
    if chi != 2 {
        return Err(Error::TemplateTopology(format!("Euler characteristic {chi}")));
    }
    for (i, p) in m.vertices().iter().enumerate() {
        if p.max_abs() > 1.0 {
            return Err(Error::TemplateOutOfRange { index: i, position: p.to_array() });
        }
    }
    Ok(())
}

pub fn load_template(path: impl AsRef<Path>) -> Result<TriMesh> {
    let m = read_mesh(path)?;
    validate_template(&m)?;
    Ok(m)
}
