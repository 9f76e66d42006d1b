use crate::error::{Error, Result};

/// Grid layout of a patch sequence: `temporal × rows × cols` blocks, with the
/// temporal index outermost. Audio sequences have `temporal == 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchGeometry {
    pub temporal: usize,
    pub rows: usize,
    pub cols: usize,
}

impl PatchGeometry {
    pub fn count(&self) -> usize {
        self.temporal * self.rows * self.cols
    }
}

/// Ordered flattened patches of one modality (`count × dim`, row-major).
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSequence {
    data: Vec<f32>,
    dim: usize,
    geometry: PatchGeometry,
}

impl PatchSequence {
    pub fn new(data: Vec<f32>, dim: usize, geometry: PatchGeometry) -> Result<Self> {
        if data.len() != geometry.count() * dim {
            return Err(Error::shape(
                "patch_sequence",
                format!("{} values for {} patches of dim {dim}", data.len(), geometry.count()),
            ));
        }
        Ok(Self { data, dim, geometry })
    }

    pub fn count(&self) -> usize {
        self.geometry.count()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn geometry(&self) -> PatchGeometry {
        self.geometry
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn patch(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }
}
