use super::Polynomial;

/// Flat, allocation-free form of a polynomial for repeated evaluation with
/// gradients. Used on the solver hot path.
#[derive(Clone, Debug)]
pub struct CompiledPoly {
    nvars: usize,
    max_deg: usize,
    coefs: Vec<f64>,
    exps: Vec<u8>,
}

impl CompiledPoly {
    pub fn new(p: &Polynomial) -> Self {
        let nvars = p.roster().len();
        let mut coefs = Vec::with_capacity(p.num_terms());
        let mut exps = Vec::with_capacity(p.num_terms() * nvars);
        let mut max_deg = 0;
        for (idx, c) in p.terms() {
            coefs.push(c);
            for &k in idx.exponents() {
                max_deg = max_deg.max(k as usize);
                exps.push(u8::try_from(k).expect("exponent too large to compile"));
            }
        }
        CompiledPoly {
            nvars,
            max_deg,
            coefs,
            exps,
        }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    fn powers(&self, x: &[f64]) -> Vec<f64> {
        let stride = self.max_deg + 1;
        let mut pw = vec![1.0; self.nvars * stride];
        for (i, &xi) in x.iter().enumerate() {
            for k in 1..stride {
                pw[i * stride + k] = pw[i * stride + k - 1] * xi;
            }
        }
        pw
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.nvars);
        let stride = self.max_deg + 1;
        let pw = self.powers(x);
        self.coefs
            .iter()
            .enumerate()
            .map(|(t, &c)| {
                let e = &self.exps[t * self.nvars..(t + 1) * self.nvars];
                e.iter()
                    .enumerate()
                    .fold(c, |acc, (i, &k)| acc * pw[i * stride + k as usize])
            })
            .sum()
    }

    /// Value and gradient; `grad` must have length `nvars`.
    pub fn eval_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        assert_eq!(x.len(), self.nvars);
        assert_eq!(grad.len(), self.nvars);
        let stride = self.max_deg + 1;
        let pw = self.powers(x);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut value = 0.0;
        for (t, &c) in self.coefs.iter().enumerate() {
            let e = &self.exps[t * self.nvars..(t + 1) * self.nvars];
            value += e
                .iter()
                .enumerate()
                .fold(c, |acc, (i, &k)| acc * pw[i * stride + k as usize]);
            for (j, &kj) in e.iter().enumerate() {
                if kj == 0 {
                    continue;
                }
                let mut d = c * kj as f64;
                for (i, &k) in e.iter().enumerate() {
                    let k = if i == j { k - 1 } else { k };
                    d *= pw[i * stride + k as usize];
                }
                grad[j] += d;
            }
        }
        value
    }
}
