//! Covariate encoding: continuous columns pass through, categorical columns
//! become treatment dummies against their most frequent level.

use serde::{Deserialize, Serialize};

use crate::data::{modal_code, Column, CovariateValue, Covariates, SurvivalDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Term {
    Continuous {
        name: String,
    },
    Categorical {
        name: String,
        levels: Vec<String>,
        reference: usize,
    },
}

impl Term {
    pub fn name(&self) -> &str {
        match self {
            Term::Continuous { name } | Term::Categorical { name, .. } => name,
        }
    }

    fn width(&self) -> usize {
        match self {
            Term::Continuous { .. } => 1,
            Term::Categorical { levels, .. } => levels.len() - 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Encoding {
    pub terms: Vec<Term>,
}

impl Encoding {
    pub fn from_dataset<S: AsRef<str>>(data: &SurvivalDataset, names: &[S]) -> Result<Self> {
        let terms = names
            .iter()
            .map(|n| {
                let name = n.as_ref();
                match data.column(name) {
                    Some(Column::Continuous { .. }) => Ok(Term::Continuous {
                        name: name.to_string(),
                    }),
                    Some(Column::Categorical { levels, codes }) => Ok(Term::Categorical {
                        name: name.to_string(),
                        levels: levels.clone(),
                        reference: modal_code(codes, levels.len()),
                    }),
                    None => Err(Error::MissingColumn(name.to_string())),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Encoding { terms })
    }

    pub fn width(&self) -> usize {
        self.terms.iter().map(Term::width).sum()
    }

    /// Encoded column labels; dummies are labelled `name=level`.
    pub fn column_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.width());
        for term in &self.terms {
            match term {
                Term::Continuous { name } => out.push(name.clone()),
                Term::Categorical {
                    name,
                    levels,
                    reference,
                } => {
                    for (i, l) in levels.iter().enumerate() {
                        if i != *reference {
                            out.push(format!("{name}={l}"));
                        }
                    }
                }
            }
        }
        out
    }

    /// Encodes one covariate assignment. Every term must be present.
    pub fn encode(&self, covariates: &Covariates) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.width());
        for term in &self.terms {
            let value = covariates
                .get(term.name())
                .ok_or_else(|| Error::invalid(format!("no value for covariate '{}'", term.name())))?;
            match (term, value) {
                (Term::Continuous { .. }, CovariateValue::Continuous(v)) => out.push(*v),
                (Term::Continuous { name }, CovariateValue::Level(l)) => {
                    let v: f64 = l.parse().map_err(|_| {
                        Error::invalid(format!("covariate '{name}' needs a number, got '{l}'"))
                    })?;
                    out.push(v);
                }
                (
                    Term::Categorical {
                        name,
                        levels,
                        reference,
                    },
                    v,
                ) => {
                    let label = v.to_string();
                    let code = levels.iter().position(|l| *l == label).ok_or_else(|| {
                        Error::UnknownLevel {
                            column: name.clone(),
                            level: label.clone(),
                        }
                    })?;
                    out.extend((0..levels.len()).filter(|i| i != reference).map(|i| {
                        if i == code {
                            1.0
                        } else {
                            0.0
                        }
                    }));
                }
            }
        }
        Ok(out)
    }
}

/// Row-major encoded design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub encoding: Encoding,
    pub names: Vec<String>,
    pub n: usize,
    pub p: usize,
    pub x: Vec<f64>,
}

impl Design {
    pub fn from_dataset<S: AsRef<str>>(data: &SurvivalDataset, names: &[S]) -> Result<Self> {
        let encoding = Encoding::from_dataset(data, names)?;
        let n = data.n();
        let p = encoding.width();
        let mut x = Vec::with_capacity(n * p);
        for i in 0..n {
            x.extend(encoding.encode(&data.row_covariates_for(&encoding, i))?);
        }
        Ok(Design {
            names: encoding.column_names(),
            encoding,
            n,
            p,
            x,
        })
    }

    /// Design from plain continuous columns.
    pub fn from_columns<S: AsRef<str>>(names: &[S], columns: &[Vec<f64>]) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::invalid("one name per column is required"));
        }
        let n = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::invalid("design columns differ in length"));
        }
        let p = columns.len();
        let mut x = Vec::with_capacity(n * p);
        for i in 0..n {
            x.extend(columns.iter().map(|c| c[i]));
        }
        let terms = names
            .iter()
            .map(|s| Term::Continuous {
                name: s.as_ref().to_string(),
            })
            .collect();
        let encoding = Encoding { terms };
        Ok(Design {
            names: encoding.column_names(),
            encoding,
            n,
            p,
            x,
        })
    }

    /// Covariate-free design with `n` rows.
    pub fn empty(n: usize) -> Self {
        Design {
            encoding: Encoding::default(),
            names: Vec::new(),
            n,
            p: 0,
            x: Vec::new(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.x[i * self.p + j]).collect()
    }

    pub fn means(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.p];
        for i in 0..self.n {
            for (mj, v) in m.iter_mut().zip(self.row(i)) {
                *mj += v;
            }
        }
        m.iter_mut().for_each(|v| *v /= self.n as f64);
        m
    }

    pub fn std_devs(&self) -> Vec<f64> {
        let means = self.means();
        (0..self.p)
            .map(|j| {
                let ss: f64 = (0..self.n)
                    .map(|i| (self.x[i * self.p + j] - means[j]).powi(2))
                    .sum();
                (ss / self.n as f64).sqrt()
            })
            .collect()
    }

    /// Centered copy (column means subtracted) plus the means used.
    pub fn centered(&self) -> (Vec<f64>, Vec<f64>) {
        let means = self.means();
        let mut x = self.x.clone();
        for i in 0..self.n {
            for j in 0..self.p {
                x[i * self.p + j] -= means[j];
            }
        }
        (x, means)
    }

    pub fn subset(&self, rows: &[usize]) -> Design {
        let mut x = Vec::with_capacity(rows.len() * self.p);
        for &r in rows {
            x.extend_from_slice(self.row(r));
        }
        Design {
            encoding: self.encoding.clone(),
            names: self.names.clone(),
            n: rows.len(),
            p: self.p,
            x,
        }
    }

    /// Fails when the centered columns (equivalently, the columns together
    /// with an intercept) are linearly dependent, naming the columns involved.
    pub fn check_rank(&self) -> Result<()> {
        let (xc, _) = self.centered();
        let mut basis: Vec<Vec<f64>> = Vec::new();
        // r[k] holds the coefficients of accepted column k on the basis.
        let mut r: Vec<Vec<f64>> = Vec::new();
        let mut accepted: Vec<usize> = Vec::new();
        for j in 0..self.p {
            let col: Vec<f64> = (0..self.n).map(|i| xc[i * self.p + j]).collect();
            let raw_scale = (0..self.n)
                .map(|i| self.x[i * self.p + j].abs())
                .fold(0.0, f64::max)
                .max(1e-300);
            let norm = dot(&col, &col).sqrt();
            if norm <= 1e-10 * raw_scale * (self.n as f64).sqrt() {
                return Err(Error::RankDeficient {
                    columns: vec![self.names[j].clone()],
                });
            }
            let mut resid = col.clone();
            let mut coef = Vec::with_capacity(basis.len() + 1);
            for q in &basis {
                let c = dot(q, &resid);
                for (ri, qi) in resid.iter_mut().zip(q) {
                    *ri -= c * qi;
                }
                coef.push(c);
            }
            let rn = dot(&resid, &resid).sqrt();
            if rn <= 1e-8 * norm {
                // col = sum_k a_k accepted_k with R a = coef
                let m = basis.len();
                let mut a = vec![0.0; m];
                for k in (0..m).rev() {
                    let mut s = coef[k];
                    for l in k + 1..m {
                        s -= r[l][k] * a[l];
                    }
                    a[k] = s / r[k][k];
                }
                let mut columns: Vec<String> = accepted
                    .iter()
                    .zip(&a)
                    .filter(|(&k, &ak)| {
                        let ck: Vec<f64> = (0..self.n).map(|i| xc[i * self.p + k]).collect();
                        (ak * dot(&ck, &ck).sqrt()).abs() > 1e-6 * norm
                    })
                    .map(|(&k, _)| self.names[k].clone())
                    .collect();
                columns.push(self.names[j].clone());
                return Err(Error::RankDeficient { columns });
            }
            coef.push(rn);
            resid.iter_mut().for_each(|v| *v /= rn);
            basis.push(resid);
            r.push(coef);
            accepted.push(j);
        }
        Ok(())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl SurvivalDataset {
    pub(crate) fn row_covariates_for(&self, encoding: &Encoding, row: usize) -> Covariates {
        encoding
            .terms
            .iter()
            .filter_map(|t| {
                let v = self.column(t.name())?.value(row);
                Some((t.name().to_string(), v))
            })
            .collect()
    }
}
