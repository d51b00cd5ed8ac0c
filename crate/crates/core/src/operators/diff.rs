use serde::{Deserialize, Serialize};

use crate::grid::Volume;

/// Differencing direction. `Z` is the slice axis, `Y` rows, `X` columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Z,
    Y,
    X,
}

impl Axis {
    fn dim(self) -> usize {
        match self {
            Axis::Z => 0,
            Axis::Y => 1,
            Axis::X => 2,
        }
    }
}

/// Forward differences of a volume along one axis; one sample shorter than
/// the source along that axis.
#[derive(Clone, Debug, PartialEq)]
pub struct GradField {
    pub data: Vec<f64>,
    pub dims: [usize; 3],
    pub axis: Axis,
    pub spacing: [f64; 3],
}

impl GradField {
    pub fn source_dims(&self) -> [usize; 3] {
        let mut d = self.dims;
        d[self.axis.dim()] += 1;
        d
    }
}

fn field_dims(dims: [usize; 3], axis: Axis) -> [usize; 3] {
    let mut d = dims;
    d[axis.dim()] = d[axis.dim()].saturating_sub(1);
    d
}

/// `(outer, n_axis, inner)` decomposition of `dims` around `axis`.
fn strides(dims: [usize; 3], axis: Axis) -> (usize, usize, usize) {
    let a = axis.dim();
    let outer = dims[..a].iter().product();
    let inner = dims[a + 1..].iter().product();
    (outer, dims[a], inner)
}

fn diff_into(src: &[f64], dims: [usize; 3], axis: Axis, out: &mut [f64]) {
    let (outer, n, inner) = strides(dims, axis);
    if n < 2 {
        return;
    }
    for o in 0..outer {
        for i in 0..n - 1 {
            let s = (o * n + i) * inner;
            let f = (o * (n - 1) + i) * inner;
            let (a, b) = (&src[s..s + inner], &src[s + inner..s + 2 * inner]);
            for ((dst, x0), x1) in out[f..f + inner].iter_mut().zip(a).zip(b) {
                *dst = x0 - x1;
            }
        }
    }
}

fn diff_adjoint_add(field: &[f64], dims: [usize; 3], axis: Axis, out: &mut [f64]) {
    let (outer, n, inner) = strides(dims, axis);
    if n < 2 {
        return;
    }
    for o in 0..outer {
        for i in 0..n - 1 {
            let s = (o * n + i) * inner;
            let f = (o * (n - 1) + i) * inner;
            for q in 0..inner {
                let g = field[f + q];
                out[s + q] += g;
                out[s + inner + q] -= g;
            }
        }
    }
}

/// `(D v)_i = v_i − v_{i+1}` along `axis`. A length-1 axis yields an empty field.
pub fn diff_forward(v: &Volume, axis: Axis) -> GradField {
    let dims = field_dims(v.dims(), axis);
    let mut data = vec![0.0; dims.iter().product()];
    diff_into(v.data(), v.dims(), axis, &mut data);
    GradField {
        data,
        dims,
        axis,
        spacing: v.spacing(),
    }
}

/// Exact transpose of [`diff_forward`].
pub fn diff_adjoint(gf: &GradField) -> Volume {
    let src = gf.source_dims();
    let mut out = Volume::zeros(src, gf.spacing);
    diff_adjoint_add(&gf.data, src, gf.axis, out.data_mut());
    out
}

/// Stacked differences over several axes, concatenated in the order given.
/// `Gradient::new(dims, &[X, Y])` is the joint `D_xy`.
#[derive(Clone, Debug)]
pub struct Gradient {
    dims: [usize; 3],
    axes: Vec<Axis>,
    offsets: Vec<usize>,
    len: usize,
}

impl Gradient {
    pub fn new(dims: [usize; 3], axes: &[Axis]) -> Self {
        let mut offsets = Vec::with_capacity(axes.len());
        let mut len = 0;
        for &a in axes {
            offsets.push(len);
            len += field_dims(dims, a).iter().product::<usize>();
        }
        Gradient {
            dims,
            axes: axes.to_vec(),
            offsets,
            len,
        }
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    /// Length of the stacked field.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (k, &a) in self.axes.iter().enumerate() {
            let end = self.offsets.get(k + 1).copied().unwrap_or(self.len);
            diff_into(x, self.dims, a, &mut out[self.offsets[k]..end]);
        }
    }

    /// `out += Dᵀ g`.
    pub fn adjoint_add(&self, g: &[f64], out: &mut [f64]) {
        for (k, &a) in self.axes.iter().enumerate() {
            let end = self.offsets.get(k + 1).copied().unwrap_or(self.len);
            diff_adjoint_add(&g[self.offsets[k]..end], self.dims, a, out);
        }
    }

    pub fn l1(&self, x: &[f64]) -> f64 {
        let mut f = vec![0.0; self.len];
        self.apply(x, &mut f);
        f.iter().map(|v| v.abs()).sum()
    }
}
