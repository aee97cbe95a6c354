//! The face-image parameter vector: rotation, shape, expression, reflectance, illumination.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of Euler angles in the rotation group.
pub const N_ROTATION: usize = 3;
/// Number of SH illumination scalars (9 bands x RGB).
pub const N_ILLUM: usize = 27;

/// Group sizes of a parameter vector. Flattening order is fixed:
/// rotation, shape, expression, reflectance, illumination.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamLayout {
    pub n_shape: usize,
    pub n_expr: usize,
    pub n_refl: usize,
}

/// One of the five independently sampled parameter groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Rotation,
    Shape,
    Expression,
    Reflectance,
    Illumination,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] = [
        ParamGroup::Rotation,
        ParamGroup::Shape,
        ParamGroup::Expression,
        ParamGroup::Reflectance,
        ParamGroup::Illumination,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Rotation => "rotation",
            ParamGroup::Shape => "shape",
            ParamGroup::Expression => "expression",
            ParamGroup::Reflectance => "reflectance",
            ParamGroup::Illumination => "illumination",
        }
    }
}

impl ParamLayout {
    pub fn new(n_shape: usize, n_expr: usize, n_refl: usize) -> Self {
        Self {
            n_shape,
            n_expr,
            n_refl,
        }
    }

    /// Total dimension m.
    pub fn len(&self) -> usize {
        N_ROTATION + self.n_shape + self.n_expr + self.n_refl + N_ILLUM
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn range(&self, group: ParamGroup) -> Range<usize> {
        let s0 = N_ROTATION;
        let e0 = s0 + self.n_shape;
        let r0 = e0 + self.n_expr;
        let i0 = r0 + self.n_refl;
        match group {
            ParamGroup::Rotation => 0..s0,
            ParamGroup::Shape => s0..e0,
            ParamGroup::Expression => e0..r0,
            ParamGroup::Reflectance => r0..i0,
            ParamGroup::Illumination => i0..i0 + N_ILLUM,
        }
    }
}

/// A flattened parameter vector of length `layout.len()`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterVector {
    layout: ParamLayout,
    values: Vec<f64>,
}

impl ParameterVector {
    pub fn zeros(layout: ParamLayout) -> Self {
        Self {
            layout,
            values: vec![0.0; layout.len()],
        }
    }

    pub fn from_values(layout: ParamLayout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::mismatch("parameter vector", layout.len(), values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector"));
        }
        Ok(Self { layout, values })
    }

    pub fn from_f32(layout: ParamLayout, values: &[f32]) -> Result<Self> {
        Self::from_values(layout, values.iter().map(|&v| v as f64).collect())
    }

    pub fn layout(&self) -> ParamLayout {
        self.layout
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.values.iter().map(|&v| v as f32).collect()
    }

    /// Rounds every value to the nearest f32. Anything rendered into a corpus goes
    /// through this so that the stored f32 parameters reproduce the image exactly.
    pub fn quantized(mut self) -> Self {
        for v in &mut self.values {
            *v = *v as f32 as f64;
        }
        self
    }

    pub fn group(&self, group: ParamGroup) -> &[f64] {
        &self.values[self.layout.range(group)]
    }

    pub fn group_mut(&mut self, group: ParamGroup) -> &mut [f64] {
        let r = self.layout.range(group);
        &mut self.values[r]
    }

    /// Euler angles (alpha, beta, gamma) in radians.
    pub fn rotation(&self) -> [f64; 3] {
        let r = self.group(ParamGroup::Rotation);
        [r[0], r[1], r[2]]
    }

    pub fn shape(&self) -> &[f64] {
        self.group(ParamGroup::Shape)
    }

    pub fn expression(&self) -> &[f64] {
        self.group(ParamGroup::Expression)
    }

    pub fn reflectance(&self) -> &[f64] {
        self.group(ParamGroup::Reflectance)
    }

    pub fn illumination(&self) -> &[f64] {
        self.group(ParamGroup::Illumination)
    }
}

/// Labeled JSON form of a parameter vector, one array per group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledParams {
    pub rotation: Vec<f64>,
    pub shape: Vec<f64>,
    pub expression: Vec<f64>,
    pub reflectance: Vec<f64>,
    pub illumination: Vec<f64>,
}

impl From<&ParameterVector> for LabeledParams {
    fn from(p: &ParameterVector) -> Self {
        Self {
            rotation: p.group(ParamGroup::Rotation).to_vec(),
            shape: p.shape().to_vec(),
            expression: p.expression().to_vec(),
            reflectance: p.reflectance().to_vec(),
            illumination: p.illumination().to_vec(),
        }
    }
}

impl LabeledParams {
    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(self.shape.len(), self.expression.len(), self.reflectance.len())
    }

    pub fn to_vector(&self) -> Result<ParameterVector> {
        if self.rotation.len() != N_ROTATION {
            return Err(Error::mismatch("rotation group", N_ROTATION, self.rotation.len()));
        }
        if self.illumination.len() != N_ILLUM {
            return Err(Error::mismatch("illumination group", N_ILLUM, self.illumination.len()));
        }
        let values = [
            &self.rotation[..],
            &self.shape,
            &self.expression,
            &self.reflectance,
            &self.illumination,
        ]
        .concat();
        ParameterVector::from_values(self.layout(), values)
    }
}
