//! Flattened model weights, the unit exchanged between server and clients.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Matrix { rows: usize, cols: usize },
    Vector(usize),
}

impl Shape {
    pub fn len(self) -> usize {
        match self {
            Shape::Matrix { rows, cols } => rows * cols,
            Shape::Vector(n) => n,
        }
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Matrix { rows, cols } => write!(f, "{rows}x{cols}"),
            Shape::Vector(n) => write!(f, "{n}"),
        }
    }
}

impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("bad shape `{s}`"));
        match s.split_once('x') {
            Some((r, c)) => Ok(Shape::Matrix {
                rows: r.parse().map_err(|_| bad())?,
                cols: c.parse().map_err(|_| bad())?,
            }),
            None => Ok(Shape::Vector(s.parse().map_err(|_| bad())?)),
        }
    }
}

/// Flat parameter values plus the ordered shapes they decompose into.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    shapes: Vec<Shape>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, shapes: Vec<Shape>) -> Result<Self> {
        let expected: usize = shapes.iter().map(|s| s.len()).sum();
        if expected != values.len() {
            return Err(Error::Dimension(format!(
                "{} values for shapes totalling {expected}",
                values.len()
            )));
        }
        Ok(Self { values, shapes })
    }

    pub fn zeros(shapes: Vec<Shape>) -> Self {
        let n = shapes.iter().map(|s| s.len()).sum();
        Self {
            values: vec![0.0; n],
            shapes,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            values: vec![0.0; self.values.len()],
            shapes: self.shapes.clone(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_shape(&self, other: &ParamVector) -> bool {
        self.shapes == other.shapes
    }

    pub fn check_shape(&self, other: &ParamVector) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "shapes {:?} and {:?} differ",
                self.shapes, other.shapes
            )))
        }
    }

    /// `self - other`, elementwise.
    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_shape(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self {
            values,
            shapes: self.shapes.clone(),
        })
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, scale: f64, other: &ParamVector) -> Result<()> {
        self.check_shape(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        Ok(())
    }

    /// `self += other`.
    pub fn add_assign(&mut self, other: &ParamVector) -> Result<()> {
        self.check_shape(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Text checkpoint: a `shapes` header line then one value per line.
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        let shapes: Vec<String> = self.shapes.iter().map(Shape::to_string).collect();
        writeln!(out, "shapes {}", shapes.join(","))?;
        for v in &self.values {
            writeln!(out, "{v}")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_text<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty checkpoint".into()))??;
        let spec = header
            .strip_prefix("shapes ")
            .ok_or_else(|| Error::Parse(format!("bad checkpoint header `{header}`")))?;
        let shapes = spec
            .split(',')
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<Shape>>>()?;
        let mut values = Vec::new();
        for line in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            values.push(
                line.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad checkpoint value `{line}`")))?,
            );
        }
        Self::new(values, shapes)
    }
}
