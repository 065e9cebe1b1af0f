//! Layers with named parameters.

use hfedit_tensor::{Activation, DType, Parameter, Tensor, INSTANCE_NORM_EPS};
use rand::Rng;

use crate::error::Result;

/// Conv weights are drawn from normal(0, INIT_STD); biases start at zero.
pub const INIT_STD: f32 = 0.02;

/// Slope of every leaky ReLU in the networks.
pub const LEAKY_SLOPE: f32 = 0.2;

/// Something holding named parameters, visited in a fixed order.
pub trait Module {
    fn visit(&self, f: &mut dyn FnMut(&Parameter));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter));

    fn parameters(&self) -> Vec<Parameter> {
        let mut out = Vec::new();
        self.visit(&mut |p| out.push(p.clone()));
        out
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| n += p.numel());
        n
    }

    fn zero_grad(&self) {
        self.visit(&mut |p| p.zero_grad());
    }

    /// Copy whose parameters are constants: usable in graphs, never
    /// accumulates gradient.
    fn frozen(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut m = self.clone();
        m.visit_mut(&mut |p| *p = p.frozen());
        m
    }

    /// Copy with trainable parameters of another element type.
    fn cast(&self, dtype: DType) -> Self
    where
        Self: Clone + Sized,
    {
        let mut m = self.clone();
        m.visit_mut(&mut |p| *p = p.cast(dtype));
        m
    }
}

fn normal_init<R: Rng + ?Sized>(name: String, shape: &[usize], rng: &mut R) -> Parameter {
    Parameter::new(name, Tensor::randn(shape, 0.0, INIT_STD, rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvKind {
    Forward,
    Transpose,
}

#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: Parameter,
    pub bias: Option<Parameter>,
    pub kind: ConvKind,
    pub stride: usize,
    pub padding: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        kind: ConvKind,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let shape = match kind {
            ConvKind::Forward => [c_out, c_in, kernel, kernel],
            ConvKind::Transpose => [c_in, c_out, kernel, kernel],
        };
        Conv {
            weight: normal_init(format!("{name}.weight"), &shape, rng),
            bias: bias.then(|| Parameter::new(format!("{name}.bias"), Tensor::zeros(&[c_out]))),
            kind,
            stride,
            padding,
        }
    }

    pub fn out_channels(&self) -> usize {
        match self.kind {
            ConvKind::Forward => self.weight.shape()[0],
            ConvKind::Transpose => self.weight.shape()[1],
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let w = self.weight.tensor();
        let b = self.bias.as_ref().map(Parameter::tensor);
        Ok(match self.kind {
            ConvKind::Forward => x.conv2d(w, b, self.stride, self.padding)?,
            ConvKind::Transpose => x.conv_transpose2d(w, b, self.stride, self.padding)?,
        })
    }
}

impl Module for Conv {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        f(&self.weight);
        if let Some(b) = &self.bias {
            f(b);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.weight);
        if let Some(b) = &mut self.bias {
            f(b);
        }
    }
}

#[derive(Debug, Clone)]
pub struct InstanceNorm {
    pub gamma: Parameter,
    pub beta: Parameter,
}

impl InstanceNorm {
    pub fn new(name: &str, channels: usize) -> Self {
        InstanceNorm {
            gamma: Parameter::new(format!("{name}.gamma"), Tensor::ones(&[channels])),
            beta: Parameter::new(format!("{name}.beta"), Tensor::zeros(&[channels])),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.instance_norm(self.gamma.tensor(), self.beta.tensor(), INSTANCE_NORM_EPS)?)
    }
}

impl Module for InstanceNorm {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        f(&self.gamma);
        f(&self.beta);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }
}

/// Convolution, optional instance norm, optional activation. A convolution
/// followed by a norm carries no bias (the norm would cancel it).
#[derive(Debug, Clone)]
pub struct Block {
    pub conv: Conv,
    pub norm: Option<InstanceNorm>,
    pub act: Option<Activation>,
}

impl Block {
    /// `spec` is `(kind, c_in, c_out, kernel, stride, padding)`.
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        spec: (ConvKind, usize, usize, usize, usize, usize),
        norm: bool,
        act: Option<Activation>,
        rng: &mut R,
    ) -> Self {
        let (kind, c_in, c_out, k, s, p) = spec;
        Block {
            conv: Conv::new(name, kind, c_in, c_out, k, s, p, !norm, rng),
            norm: norm.then(|| InstanceNorm::new(&format!("{name}.in"), c_out)),
            act,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = self.conv.forward(x)?;
        if let Some(n) = &self.norm {
            h = n.forward(&h)?;
        }
        if let Some(a) = self.act {
            h = a.apply(&h);
        }
        Ok(h)
    }
}

impl Module for Block {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.conv.visit(f);
        if let Some(n) = &self.norm {
            n.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.conv.visit_mut(f);
        if let Some(n) = &mut self.norm {
            n.visit_mut(f);
        }
    }
}

impl<M: Module> Module for Vec<M> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        for m in self {
            m.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        for m in self {
            m.visit_mut(f);
        }
    }
}
