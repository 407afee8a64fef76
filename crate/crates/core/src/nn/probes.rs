//! Parameter-free layers wrapped as [`Module`]s so they can be driven by
//! [`gradcheck`](super::gradcheck()) and composed like any other layer.
//!
//! Binary operations take one tensor and split it along channels.

use super::activation::{relu_backward, relu_forward, sigmoid_backward, sigmoid_forward};
use super::ops::*;
use super::{Mode, Module, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default)]
pub struct Relu;

impl Module for Relu {
    type Cache = Tensor;

    fn forward(&self, x: &Tensor, _: Mode) -> Result<(Tensor, Tensor)> {
        Ok((relu_forward(x), x.clone()))
    }

    fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Result<Tensor> {
        relu_backward(x, dy)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Sigmoid;

impl Module for Sigmoid {
    type Cache = Tensor;

    fn forward(&self, x: &Tensor, _: Mode) -> Result<(Tensor, Tensor)> {
        let y = sigmoid_forward(x);
        Ok((y.clone(), y))
    }

    fn backward(&mut self, y: &Tensor, dy: &Tensor) -> Result<Tensor> {
        sigmoid_backward(y, dy)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MaxPool2x2;

impl Module for MaxPool2x2 {
    type Cache = (Vec<usize>, Vec<usize>);

    fn forward(&self, x: &Tensor, _: Mode) -> Result<(Tensor, Self::Cache)> {
        let (y, arg) = maxpool2x2_forward(x)?;
        Ok((y, (x.dims().to_vec(), arg)))
    }

    fn backward(&mut self, (dims, arg): &Self::Cache, dy: &Tensor) -> Result<Tensor> {
        maxpool2x2_backward(dims, arg, dy)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NearestUpsample2x;

impl Module for NearestUpsample2x {
    type Cache = ();

    fn forward(&self, x: &Tensor, _: Mode) -> Result<(Tensor, ())> {
        Ok((nearest_upsample2x_forward(x)?, ()))
    }

    fn backward(&mut self, _: &(), dy: &Tensor) -> Result<Tensor> {
        nearest_upsample2x_backward(dy)
    }
}

/// Splits channels into `[0, first)` and the rest, then concatenates them
/// back in swapped order.
#[derive(Debug, Clone, Copy)]
pub struct ConcatSplit {
    pub first: usize,
}

impl Module for ConcatSplit {
    type Cache = usize;

    fn forward(&self, x: &Tensor, _: Mode) -> Result<(Tensor, usize)> {
        let (a, b) = split_channels(x, self.first)?;
        Ok((concat_channels_forward(&b, &a)?, b.dims()[1]))
    }

    fn backward(&mut self, cb: &usize, dy: &Tensor) -> Result<Tensor> {
        let (db, da) = concat_channels_backward(*cb, dy)?;
        concat_channels_forward(&da, &db)
    }
}

/// Adds the two channel halves.
#[derive(Debug, Clone, Copy, Default)]
pub struct AddHalves;

impl Module for AddHalves {
    type Cache = ();

    fn forward(&self, x: &Tensor, _: Mode) -> Result<(Tensor, ())> {
        let c = x.dims4()?[1];
        if c % 2 != 0 {
            return Err(Error::Shape(format!("cannot halve {c} channels")));
        }
        let (a, b) = split_channels(x, c / 2)?;
        Ok((add_forward(&a, &b)?, ()))
    }

    fn backward(&mut self, _: &(), dy: &Tensor) -> Result<Tensor> {
        let (da, db) = add_backward(dy);
        concat_channels_forward(&da, &db)
    }
}

/// Multiplies channels `[first, C)` by channels `[0, first)` (broadcast when
/// `first` is 1).
#[derive(Debug, Clone, Copy)]
pub struct MulSplit {
    pub first: usize,
}

impl Module for MulSplit {
    type Cache = (Tensor, Tensor);

    fn forward(&self, x: &Tensor, _: Mode) -> Result<(Tensor, Self::Cache)> {
        let (a, b) = split_channels(x, self.first)?;
        Ok((mul_forward(&a, &b)?, (a, b)))
    }

    fn backward(&mut self, (a, b): &Self::Cache, dy: &Tensor) -> Result<Tensor> {
        let (da, db) = mul_backward(a, b, dy)?;
        concat_channels_forward(&da, &db)
    }
}

/// Splits an `N × C × H × W` tensor into channels `[0, first)` and `[first, C)`.
pub fn split_channels(x: &Tensor, first: usize) -> Result<(Tensor, Tensor)> {
    let c = x.dims4()?[1];
    if first == 0 || first >= c {
        return Err(Error::Shape(format!("cannot split {c} channels at {first}")));
    }
    concat_channels_backward(first, x)
}
