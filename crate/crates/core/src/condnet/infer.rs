use super::layers::Tensor;
use super::network::Network;
use crate::conductor::{average_directions, denormalize, NormParams};
use crate::error::{Error, Result};
use crate::grid::{Axis, ScalarGrid, Slice2D};
use crate::par;

/// Anything that maps the input slices at one position to one normalized
/// conductor slice per output.
pub trait SliceModel: Sync {
    fn outputs(&self) -> usize;

    /// `inputs` share axis, index and size.
    fn predict_slice(&self, inputs: &[Slice2D<f32>]) -> Result<Vec<Slice2D<f32>>>;
}

impl SliceModel for Network {
    fn outputs(&self) -> usize {
        self.config().outputs
    }

    fn predict_slice(&self, inputs: &[Slice2D<f32>]) -> Result<Vec<Slice2D<f32>>> {
        let first = inputs.first().ok_or_else(|| Error::DimensionMismatch("no input slices".into()))?;
        let (p, q) = (first.p, first.q);
        let mut data = Vec::with_capacity(inputs.len() * p * q);
        for s in inputs {
            if (s.p, s.q) != (p, q) {
                return Err(Error::DimensionMismatch("input slices differ in size".into()));
            }
            data.extend(s.data.iter().map(|&v| v as f64));
        }
        let x = Tensor::from_vec(1, inputs.len(), q, p, data)?;
        let y = self.predict(&x)?;
        Ok((0..y.c)
            .map(|v| Slice2D {
                axis: first.axis,
                index: first.index,
                p,
                q,
                data: y.map(0, v).iter().map(|&z| z as f32).collect(),
            })
            .collect())
    }
}

/// Normalized conductor volumes, one per output, predicted slice by slice
/// along `axis`.
pub fn predict_direction(model: &dyn SliceModel, inputs: &[&ScalarGrid], axis: Axis) -> Result<Vec<ScalarGrid>> {
    let first = inputs.first().ok_or_else(|| Error::DimensionMismatch("no input volumes".into()))?;
    for g in inputs {
        first.ensure_dims(g, "predict_direction")?;
    }
    let extent = first.dims().extent(axis);
    let slices = par::map_range(extent, |k| -> Result<Vec<Slice2D<f32>>> {
        let ins = inputs.iter().map(|g| g.slice(axis, k)).collect::<Result<Vec<_>>>()?;
        let outs = model.predict_slice(&ins)?;
        if outs.len() != model.outputs() {
            return Err(Error::DimensionMismatch(format!(
                "model returned {} slices, declares {} outputs",
                outs.len(),
                model.outputs()
            )));
        }
        Ok(outs)
    });
    let mut volumes = (0..model.outputs())
        .map(|_| ScalarGrid::filled(first.dims(), first.voxel_mm(), 0.0))
        .collect::<Result<Vec<_>>>()?;
    for s in slices {
        for (vol, sl) in volumes.iter_mut().zip(s?) {
            vol.insert_slice(&sl)?;
        }
    }
    Ok(volumes)
}

/// Runs the axial, sagittal and coronal models, averages the three normalized
/// volumes and denormalizes output `v` with `norms[v]`.
pub fn infer_volume(models: [&dyn SliceModel; 3], inputs: &[&ScalarGrid], norms: &[NormParams]) -> Result<Vec<ScalarGrid>> {
    let outputs = models[0].outputs();
    if models.iter().any(|m| m.outputs() != outputs) {
        return Err(Error::DimensionMismatch("direction models differ in output count".into()));
    }
    if norms.len() != outputs {
        return Err(Error::Config(format!("{} normalizations for {outputs} outputs", norms.len())));
    }
    let per_axis = Axis::ALL
        .iter()
        .zip(models)
        .map(|(&axis, m)| predict_direction(m, inputs, axis))
        .collect::<Result<Vec<_>>>()?;
    (0..outputs)
        .map(|v| {
            let avg = average_directions(&per_axis[0][v], &per_axis[1][v], &per_axis[2][v])?;
            denormalize(&avg, &norms[v])
        })
        .collect()
}
