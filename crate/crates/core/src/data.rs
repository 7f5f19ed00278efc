//! Sample matrices, optional ground truth, and the soft weight vector the
//! filters iterate on.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Ground truth attached to a synthetic dataset.
#[derive(Debug, Clone)]
pub struct Truth {
    /// True location parameter.
    pub mu_star: DVector<f64>,
    /// `true` for rows that were replaced by the adversary.
    pub corrupted_mask: Vec<bool>,
}

impl Truth {
    pub fn corrupted_count(&self) -> usize {
        self.corrupted_mask.iter().filter(|&&b| b).count()
    }
}

/// An n x d sample matrix with optional ground truth for evaluation.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// Row i is sample y_i.
    pub samples: DMatrix<f64>,
    pub truth: Option<Truth>,
}

impl Dataset {
    pub fn new(samples: DMatrix<f64>) -> Self {
        Dataset { samples, truth: None }
    }

    pub fn with_truth(samples: DMatrix<f64>, truth: Truth) -> Self {
        Dataset { samples, truth: Some(truth) }
    }

    pub fn n(&self) -> usize {
        self.samples.nrows()
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.samples.row(i).transpose()
    }

    /// Plain-text serialization: header `n d has_truth`, n rows of d floats,
    /// then (if truth is present) a line with mu* and a 0/1 mask line.
    pub fn write_to<W: Write>(&self, out: &mut W) -> Result<()> {
        let has_truth = if self.truth.is_some() { 1 } else { 0 };
        writeln!(out, "{} {} {}", self.n(), self.dim(), has_truth)?;
        for i in 0..self.n() {
            let row: Vec<String> = (0..self.dim())
                .map(|j| format!("{:.17e}", self.samples[(i, j)]))
                .collect();
            writeln!(out, "{}", row.join(" "))?;
        }
        if let Some(t) = &self.truth {
            let mu: Vec<String> = t.mu_star.iter().map(|x| format!("{:.17e}", x)).collect();
            writeln!(out, "{}", mu.join(" "))?;
            let mask: Vec<&str> = t.corrupted_mask.iter().map(|&b| if b { "1" } else { "0" }).collect();
            writeln!(out, "{}", mask.join(" "))?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)
    }

    pub fn read_from<R: BufRead>(input: &mut R) -> Result<Self> {
        let mut header = String::new();
        input.read_line(&mut header)?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(Error::MalformedDataset("header must be `n d has_truth`".into()));
        }
        let n: usize = parts[0].parse().map_err(|_| Error::MalformedDataset("bad n".into()))?;
        let d: usize = parts[1].parse().map_err(|_| Error::MalformedDataset("bad d".into()))?;
        let has_truth: u8 = parts[2].parse().map_err(|_| Error::MalformedDataset("bad has_truth".into()))?;

        let mut samples = DMatrix::zeros(n, d);
        let mut line = String::new();
        for i in 0..n {
            line.clear();
            input.read_line(&mut line)?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::MalformedDataset(format!("bad float in row {i}")))?;
            if vals.len() != d {
                return Err(Error::MalformedDataset(format!("row {i} has {} entries, expected {d}", vals.len())));
            }
            for j in 0..d {
                samples[(i, j)] = vals[j];
            }
        }
        let truth = if has_truth == 1 {
            line.clear();
            input.read_line(&mut line)?;
            let mu: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::MalformedDataset("bad float in mu* line".into()))?;
            if mu.len() != d {
                return Err(Error::MalformedDataset("mu* line has wrong length".into()));
            }
            line.clear();
            input.read_line(&mut line)?;
            let mask: Vec<bool> = line
                .split_whitespace()
                .map(|s| match s {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    _ => Err(Error::MalformedDataset("mask entries must be 0/1".into())),
                })
                .collect::<Result<_>>()?;
            if mask.len() != n {
                return Err(Error::MalformedDataset("mask line has wrong length".into()));
            }
            Some(Truth { mu_star: DVector::from_vec(mu), corrupted_mask: mask })
        } else {
            None
        };
        Ok(Dataset { samples, truth })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut r = BufReader::new(file);
        Self::read_from(&mut r)
    }
}

/// Soft sample weights w in W_eps: 0 <= w_i <= 1/n and ||w - 1/n||_1 <= budget.
#[derive(Debug, Clone)]
pub struct WeightVector {
    w: Vec<f64>,
    budget: f64,
}

impl WeightVector {
    /// Uniform weights 1/n with the given l1 budget.
    pub fn uniform(n: usize, budget: f64) -> Self {
        WeightVector { w: vec![1.0 / n as f64; n], budget }
    }

    pub fn from_raw(w: Vec<f64>, budget: f64) -> Result<Self> {
        let n = w.len();
        if n == 0 {
            return Err(Error::EmptyInput("weight vector"));
        }
        let cap = 1.0 / n as f64;
        let mut l1 = 0.0;
        for &wi in &w {
            if !wi.is_finite() || wi < -1e-12 || wi > cap + 1e-12 {
                return Err(Error::InvalidParameter(format!("weight {wi} outside [0, 1/n]")));
            }
            l1 += (wi - cap).abs();
        }
        if l1 > budget + 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "l1 distance from uniform {l1} exceeds budget {budget}"
            )));
        }
        Ok(WeightVector { w, budget })
    }

    pub fn n(&self) -> usize {
        self.w.len()
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn get(&self, i: usize) -> f64 {
        self.w[i]
    }

    pub fn total(&self) -> f64 {
        self.w.iter().sum()
    }

    pub fn l1_from_uniform(&self) -> f64 {
        let cap = 1.0 / self.n() as f64;
        self.w.iter().map(|&wi| (wi - cap).abs()).sum()
    }

    /// Internal constructor for filter iterations; skips the budget check
    /// (filters prove feasibility separately and assert it in tests).
    pub(crate) fn from_parts_unchecked(w: Vec<f64>, budget: f64) -> Self {
        WeightVector { w, budget }
    }
}
